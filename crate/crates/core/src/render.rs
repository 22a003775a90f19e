//! Deterministic bird's-eye SVG rendering of scenarios.

use std::fmt::Write as _;

use crate::geom::Vec2;
use crate::metrics::box_corners;
use crate::scenario::{LaneType, Scenario, CROP_SIDE};
use crate::vectorize::Region;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RenderOptions {
    /// Step whose vehicle boxes are drawn.
    pub timestep: usize,
    pub show_trajectories: bool,
    /// Per-region weights drawn as colored lane patches.
    pub heatmap: Option<(Vec<Region>, Vec<f64>)>,
}

const CANVAS_PX: u32 = 800;
const REGION_HALF_WIDTH: f64 = 1.75;

fn pt(p: Vec2) -> String {
    format!("{:.3},{:.3}", p.x, p.y)
}

fn points(ps: impl IntoIterator<Item = Vec2>) -> String {
    ps.into_iter().map(pt).collect::<Vec<_>>().join(" ")
}

/// Blue-to-red ramp over `t` in `[0, 1]`.
fn heat_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs()) * 0.6).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn lane_style(t: LaneType) -> &'static str {
    match t {
        LaneType::Center => "stroke=\"#9aa0a6\" stroke-width=\"0.3\" stroke-dasharray=\"1.5 1\"",
        LaneType::BoundarySolid => "stroke=\"#3c4043\" stroke-width=\"0.25\"",
        LaneType::BoundaryBroken => "stroke=\"#3c4043\" stroke-width=\"0.25\" stroke-dasharray=\"2 2\"",
        LaneType::Edge => "stroke=\"#202124\" stroke-width=\"0.4\"",
    }
}

/// Renders one scenario. World y points up; the view box is the crop square around
/// the origin.
pub fn render_svg(s: &Scenario, opts: &RenderOptions) -> String {
    let half = CROP_SIDE / 2.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"{:.3} {:.3} {:.3} {:.3}\" width=\"{CANVAS_PX}\" height=\"{CANVAS_PX}\">",
        -half, -half, CROP_SIDE, CROP_SIDE
    );
    out.push_str("<g transform=\"scale(1,-1)\">\n");

    if let Some((regions, weights)) = &opts.heatmap {
        let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (r, w) in regions.iter().zip(weights) {
            let t = if hi > lo { (w - lo) / (hi - lo) } else { 0.5 };
            let f = r.frame();
            let len = r.chord();
            let quad = [
                Vec2::new(-REGION_HALF_WIDTH, 0.0),
                Vec2::new(REGION_HALF_WIDTH, 0.0),
                Vec2::new(REGION_HALF_WIDTH, len),
                Vec2::new(-REGION_HALF_WIDTH, len),
            ]
            .map(|q| f.point_to_world(q));
            let _ = writeln!(
                out,
                "<polygon class=\"region\" points=\"{}\" fill=\"{}\" fill-opacity=\"0.6\"/>",
                points(quad),
                heat_color(t)
            );
        }
    }

    for lane in &s.map.lanes {
        let _ = writeln!(
            out,
            "<polyline class=\"lane\" points=\"{}\" fill=\"none\" {}/>",
            points(lane.polyline.iter().copied()),
            lane_style(lane.lane_type)
        );
    }

    if opts.show_trajectories {
        for t in &s.tracks {
            let ps: Vec<Vec2> = t.states.iter().filter(|st| st.valid).map(|st| st.pos()).collect();
            if ps.len() >= 2 {
                let _ = writeln!(
                    out,
                    "<polyline class=\"trajectory\" points=\"{}\" fill=\"none\" stroke=\"#1a73e8\" stroke-width=\"0.2\" stroke-opacity=\"0.7\"/>",
                    points(ps)
                );
            }
        }
    }

    for t in &s.tracks {
        let Some(st) = t.states.get(opts.timestep).filter(|st| st.valid) else {
            continue;
        };
        let fill = if s.ego_id.as_deref() == Some(t.id.as_str()) { "#d93025" } else { "#188038" };
        let corners = box_corners(st.pos(), st.heading, st.length, st.width);
        let _ = writeln!(
            out,
            "<polygon class=\"vehicle\" points=\"{}\" fill=\"{fill}\" stroke=\"#202124\" stroke-width=\"0.1\"/>",
            points(corners)
        );
    }

    out.push_str("</g>\n</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Lane, LaneMap};
    use crate::vectorize::chunk_lanes;
    use std::sync::Arc;

    fn lane_only() -> Scenario {
        Scenario {
            dt: 0.1,
            ego_id: None,
            map: Arc::new(LaneMap {
                lanes: vec![Lane::new("l", LaneType::Center, vec![Vec2::new(-20.0, 0.0), Vec2::new(20.0, 0.0)])],
                traffic_lights: vec![],
            }),
            tracks: vec![],
        }
    }

    #[test]
    fn empty_tracks_give_only_lanes() {
        let svg = render_svg(&lane_only(), &RenderOptions::default());
        assert_eq!(svg.matches("<polyline class=\"lane\"").count(), 1);
        assert!(!svg.contains("vehicle") && !svg.contains("trajectory") && !svg.contains("region"));
        assert!(svg.contains("viewBox=\"-60.000 -60.000 120.000 120.000\""));
    }

    #[test]
    fn equal_weights_share_color() {
        let s = lane_only();
        let regions = chunk_lanes(&s.map, 5.0);
        let n = regions.len();
        let svg = render_svg(
            &s,
            &RenderOptions {
                heatmap: Some((regions, vec![0.25; n])),
                ..Default::default()
            },
        );
        let fills: std::collections::BTreeSet<&str> = svg
            .lines()
            .filter(|l| l.contains("class=\"region\""))
            .map(|l| l.split("fill=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect();
        assert_eq!(fills.len(), 1);
        assert_eq!(svg.matches("class=\"region\"").count(), n);
    }

    #[test]
    fn repeatable() {
        let s = lane_only();
        assert_eq!(render_svg(&s, &RenderOptions::default()), render_svg(&s, &RenderOptions::default()));
    }
}
