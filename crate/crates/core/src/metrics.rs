//! Distribution and safety metrics: attribute MMD, scenario collision rate,
//! and displacement errors.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::scenario::{Scenario, Snapshot, Vehicle};

/// Default IOU above which two boxes count as colliding.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MmdEstimator {
    /// V-statistic, including the diagonal kernel terms.
    #[default]
    Biased,
    /// U-statistic; may be slightly negative and needs two samples per side.
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdConfig {
    pub sigma: f64,
    pub estimator: MmdEstimator,
}

impl Default for MmdConfig {
    fn default() -> Self {
        MmdConfig {
            sigma: 1.0,
            estimator: MmdEstimator::Biased,
        }
    }
}

fn half_l1(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Squared maximum mean discrepancy between two samples with kernel
/// `exp(-d^2 / (2 sigma^2))`, `d` being half the L1 distance.
///
/// The biased estimate is clamped at zero: the half-L1 Gaussian kernel is not positive
/// definite in two or more dimensions, so rounding-level negatives can otherwise appear.
pub fn mmd2(x: &[Vec<f64>], y: &[Vec<f64>], cfg: &MmdConfig) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty("mmd2 needs non-empty samples".into()));
    }
    let dim = x[0].len();
    if x.iter().chain(y).any(|p| p.len() != dim) {
        return Err(Error::shape("mmd2", "samples differ in dimension"));
    }
    if !(cfg.sigma > 0.0) {
        return Err(Error::Value(format!("kernel bandwidth must be positive, got {}", cfg.sigma)));
    }
    let denom = 2.0 * cfg.sigma * cfg.sigma;
    let k = |a: &[f64], b: &[f64]| {
        let d = half_l1(a, b);
        (-d * d / denom).exp()
    };
    let unbiased = cfg.estimator == MmdEstimator::Unbiased;
    let within = |s: &[Vec<f64>]| -> Result<f64> {
        let n = s.len();
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if !(unbiased && i == j) {
                    sum += k(&s[i], &s[j]);
                }
            }
        }
        if unbiased {
            if n < 2 {
                return Err(Error::Empty("unbiased mmd2 needs at least two samples per side".into()));
            }
            Ok(sum / (n * (n - 1)) as f64)
        } else {
            Ok(sum / (n * n) as f64)
        }
    };
    let mut terms: Vec<f64> = x.iter().flat_map(|a| y.iter().map(|b| k(a, b))).collect();
    terms.sort_by(f64::total_cmp);
    let cross = terms.iter().sum::<f64>() / (x.len() * y.len()) as f64;
    let v = within(x)? + within(y)? - 2.0 * cross;
    Ok(if unbiased { v } else { v.max(0.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attribute {
    Pos,
    Heading,
    Speed,
    Size,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [Attribute::Pos, Attribute::Heading, Attribute::Speed, Attribute::Size];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Pos => "Pos",
            Attribute::Heading => "Heading",
            Attribute::Speed => "Speed",
            Attribute::Size => "Size",
        }
    }

    /// Normalized value of this attribute for one vehicle.
    pub fn extract(self, v: &Vehicle) -> Vec<f64> {
        match self {
            Attribute::Pos => vec![(v.pos.x / 60.0).clamp(-1.0, 1.0), (v.pos.y / 60.0).clamp(-1.0, 1.0)],
            Attribute::Heading => vec![v.heading / PI],
            Attribute::Speed => vec![(v.speed / 30.0).clamp(0.0, 1.0)],
            Attribute::Size => vec![v.length / 15.0, v.width / 4.0],
        }
    }
}

/// Average per-attribute MMD over aligned scenario pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MmdReport {
    pub pos: f64,
    pub heading: f64,
    pub speed: f64,
    pub size: f64,
    /// Pairs that contributed (pairs with an empty side are skipped).
    pub pairs: usize,
}

impl MmdReport {
    pub fn get(&self, a: Attribute) -> f64 {
        match a {
            Attribute::Pos => self.pos,
            Attribute::Heading => self.heading,
            Attribute::Speed => self.speed,
            Attribute::Size => self.size,
        }
    }

    fn get_mut(&mut self, a: Attribute) -> &mut f64 {
        match a {
            Attribute::Pos => &mut self.pos,
            Attribute::Heading => &mut self.heading,
            Attribute::Speed => &mut self.speed,
            Attribute::Size => &mut self.size,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("attribute,score\n");
        for a in Attribute::ALL {
            let _ = writeln!(s, "{},{:.6}", a.name(), self.get(a));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for a in Attribute::ALL {
            let _ = write!(head, "{:>10}", a.name());
            let _ = write!(row, "{:>10.4}", self.get(a));
        }
        format!("{head}\n{row}\n")
    }
}

/// Compares generated snapshots against real ones, pairing them by id.
pub fn scene_mmd_report(real: &[(String, Snapshot)], gen: &[(String, Snapshot)], cfg: &MmdConfig) -> Result<MmdReport> {
    if real.len() != gen.len() {
        return Err(Error::Align(format!("{} real vs {} generated scenarios", real.len(), gen.len())));
    }
    let mut report = MmdReport::default();
    for ((rid, r), (gid, g)) in real.iter().zip(gen) {
        if rid != gid {
            return Err(Error::Align(format!("`{rid}` paired with `{gid}`")));
        }
        if r.vehicles.is_empty() || g.vehicles.is_empty() {
            log::warn!("scenario `{rid}` skipped: one side has no vehicles");
            continue;
        }
        for a in Attribute::ALL {
            let xs: Vec<_> = r.vehicles.iter().map(|v| a.extract(v)).collect();
            let ys: Vec<_> = g.vehicles.iter().map(|v| a.extract(v)).collect();
            *report.get_mut(a) += mmd2(&xs, &ys, cfg)?;
        }
        report.pairs += 1;
    }
    if report.pairs == 0 {
        return Err(Error::Empty("no scenario pair with vehicles on both sides".into()));
    }
    let n = report.pairs as f64;
    for a in Attribute::ALL {
        *report.get_mut(a) /= n;
    }
    Ok(report)
}

/// Corners of an oriented box, counter-clockwise. `heading` points along the length.
pub fn box_corners(center: Vec2, heading: f64, length: f64, width: f64) -> [Vec2; 4] {
    let f = Vec2::from_angle(heading) * (length / 2.0);
    let l = Vec2::from_angle(heading + PI / 2.0) * (width / 2.0);
    [center + f + l, center - f + l, center - f - l, center + f - l]
}

pub fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>().abs()
}

fn ccw(poly: &[Vec2]) -> Vec<Vec2> {
    let n = poly.len();
    let signed: f64 = (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum();
    let mut p = poly.to_vec();
    if signed < 0.0 {
        p.reverse();
    }
    p
}

/// Intersection of two convex polygons.
pub fn convex_intersection(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let clip = ccw(clip);
    let mut out = ccw(subject);
    let m = clip.len();
    for i in 0..m {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % m]);
        let edge = b - a;
        let side = |p: Vec2| edge.cross(p - a);
        let input = std::mem::take(&mut out);
        let n = input.len();
        for j in 0..n {
            let cur = input[j];
            let prev = input[(j + n - 1) % n];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(prev.lerp(cur, sp / (sp - sc)));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(prev.lerp(cur, sp / (sp - sc)));
            }
        }
    }
    out
}

/// Intersection over union of two oriented boxes.
pub fn box_iou(a: &[Vec2; 4], b: &[Vec2; 4]) -> f64 {
    let inter = polygon_area(&convex_intersection(a, b));
    let union = polygon_area(a) + polygon_area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn vehicle_box(v: &Vehicle) -> [Vec2; 4] {
    box_corners(v.pos, v.heading, v.length, v.width)
}

/// Whether two vehicle boxes could touch, by bounding circles.
pub fn may_overlap(a: &Vehicle, b: &Vehicle) -> bool {
    let ra = 0.5 * a.length.hypot(a.width);
    let rb = 0.5 * b.length.hypot(b.width);
    a.pos.dist(b.pos) <= ra + rb
}

pub fn vehicle_iou(a: &Vehicle, b: &Vehicle) -> f64 {
    if !may_overlap(a, b) {
        return 0.0;
    }
    box_iou(&vehicle_box(a), &vehicle_box(b))
}

/// Fraction of vehicles whose box overlaps another's with IOU above `threshold` at any step.
pub fn scr(s: &Scenario, threshold: f64) -> f64 {
    if s.tracks.is_empty() {
        return 0.0;
    }
    let mut colliding = BTreeSet::new();
    for t in 0..s.horizon() {
        let snap = Snapshot::at_step(s, t);
        let vs = &snap.vehicles;
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                if vehicle_iou(&vs[i], &vs[j]) > threshold {
                    colliding.insert(vs[i].id.clone());
                    colliding.insert(vs[j].id.clone());
                }
            }
        }
    }
    colliding.len() as f64 / s.tracks.len() as f64
}

/// Average and final Euclidean distance between two equally long position sequences.
pub fn ade_fde(pred: &[Vec2], gt: &[Vec2]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Length(format!("{} predicted vs {} ground-truth steps", pred.len(), gt.len())));
    }
    let d: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.dist(*g)).collect();
    Ok((d.iter().sum::<f64>() / d.len() as f64, *d.last().unwrap()))
}

/// Mean ADE/FDE over tracks present in both scenarios, using the steps valid in both.
/// Returns `None` when no track has a common valid step.
pub fn scenario_ade_fde(pred: &Scenario, gt: &Scenario) -> Option<(f64, f64, usize)> {
    let mut sum = (0.0, 0.0);
    let mut n = 0;
    for g in &gt.tracks {
        let Some(p) = pred.track(&g.id) else { continue };
        let (pp, gg): (Vec<Vec2>, Vec<Vec2>) = p
            .states
            .iter()
            .zip(&g.states)
            .filter(|(a, b)| a.valid && b.valid)
            .map(|(a, b)| (a.pos(), b.pos()))
            .unzip();
        if let Ok((ade, fde)) = ade_fde(&pp, &gg) {
            sum.0 += ade;
            sum.1 += fde;
            n += 1;
        }
    }
    (n > 0).then(|| (sum.0 / n as f64, sum.1 / n as f64, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(id: &str, x: f64, y: f64) -> Vehicle {
        Vehicle {
            id: id.into(),
            pos: Vec2::new(x, y),
            heading: 0.0,
            speed: 5.0,
            length: 4.0,
            width: 2.0,
        }
    }

    #[test]
    fn singleton_mmd() {
        let x = vec![vec![0.2, 0.4]];
        let y = vec![vec![-0.1, 0.0]];
        let d: f64 = 0.5 * (0.3 + 0.4);
        let expected = 2.0 - 2.0 * (-d * d / 2.0).exp();
        assert!((mmd2(&x, &y, &MmdConfig::default()).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn mmd_empty_is_error() {
        assert!(matches!(mmd2(&[], &[vec![1.0]], &MmdConfig::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn half_overlap_iou() {
        let a = car("a", 0.0, 0.0);
        let b = car("b", 2.0, 0.0);
        assert!((vehicle_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_square_iou() {
        let a = box_corners(Vec2::new(0.0, 0.0), 0.0, 2.0, 2.0);
        let b = box_corners(Vec2::new(0.0, 0.0), PI / 4.0, 2.0, 2.0);
        // Octagon of area 8(sqrt 2 - 1).
        let inter = 8.0 * (2f64.sqrt() - 1.0);
        assert!((box_iou(&a, &b) - inter / (8.0 - inter)).abs() < 1e-12);
    }

    #[test]
    fn ade_fde_cases() {
        let gt: Vec<Vec2> = (0..5).map(|i| Vec2::new(i as f64, 0.0)).collect();
        let shifted: Vec<Vec2> = gt.iter().map(|p| *p + Vec2::new(1.0, 0.0)).collect();
        assert_eq!(ade_fde(&gt, &gt).unwrap(), (0.0, 0.0));
        assert_eq!(ade_fde(&shifted, &gt).unwrap(), (1.0, 1.0));
        let growing: Vec<Vec2> = gt.iter().enumerate().map(|(i, p)| *p + Vec2::new(0.0, i as f64 * 0.5)).collect();
        let (ade, fde) = ade_fde(&growing, &gt).unwrap();
        assert!((ade - 1.0).abs() < 1e-12 && (fde - 2.0).abs() < 1e-12);
        assert!(ade_fde(&gt[..3], &gt).is_err());
    }

    #[test]
    fn report_formats() {
        let r = MmdReport {
            pos: 0.1,
            heading: 0.2,
            speed: 0.3,
            size: 0.4,
            pairs: 1,
        };
        assert_eq!(r.to_csv(), "attribute,score\nPos,0.100000\nHeading,0.200000\nSpeed,0.300000\nSize,0.400000\n");
        assert!(r.to_table().starts_with("       Pos   Heading     Speed      Size"));
    }
}
