//! Lane chunking into fixed-length regions, region-local frames, and the
//! per-region feature rows consumed by the encoder.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use crate::geom::{cumulative_lengths, point_at_arc, point_segment_distance, wrap_angle, Vec2};
use crate::scenario::{LaneMap, LaneType, LightState, Snapshot, Vehicle};
use crate::tensor::{Real, Tensor};

/// Nominal region length along the lane, meters.
pub const SEGMENT_LENGTH: f64 = 5.0;
/// A trailing piece at least this long becomes its own region.
pub const MIN_REMNANT: f64 = 0.5;
/// Farthest a vehicle center may be from its region segment.
pub const MAX_LATERAL: f64 = 5.0;
/// Largest heading offset from the region direction.
pub const MAX_HEADING: f64 = FRAC_PI_2;
/// Columns of one feature row.
pub const FEATURE_WIDTH: usize = 19;

/// Column offsets inside a feature row.
pub mod col {
    pub const START: usize = 0;
    pub const END: usize = 2;
    pub const LANE_TYPE: usize = 4;
    pub const LIGHT: usize = 8;
    pub const OCCUPIED: usize = 12;
    pub const POS: usize = 13;
    pub const HEADING: usize = 15;
    pub const SPEED: usize = 16;
    pub const SIZE: usize = 17;
}

/// A world pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub pos: Vec2,
    pub heading: f64,
}

/// Frame with origin at a region start and +y along the region direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: Vec2,
    pub x_axis: Vec2,
    pub y_axis: Vec2,
}

impl LocalFrame {
    /// `None` when `start == end`.
    pub fn new(start: Vec2, end: Vec2) -> Option<Self> {
        let d = end - start;
        let n = d.norm();
        if !(n > 0.0) {
            return None;
        }
        let y_axis = d * (1.0 / n);
        Some(LocalFrame {
            origin: start,
            x_axis: y_axis.rot_cw(),
            y_axis,
        })
    }

    /// Frame of a vehicle: origin at its center, +y along its heading.
    pub fn from_pose(p: Pose) -> Self {
        let y_axis = Vec2::from_angle(p.heading);
        LocalFrame {
            origin: p.pos,
            x_axis: y_axis.rot_cw(),
            y_axis,
        }
    }

    /// World angle of the +y axis.
    pub fn direction(&self) -> f64 {
        self.y_axis.angle()
    }

    pub fn point_to_local(&self, p: Vec2) -> Vec2 {
        let d = p - self.origin;
        Vec2::new(d.dot(self.x_axis), d.dot(self.y_axis))
    }

    pub fn point_to_world(&self, q: Vec2) -> Vec2 {
        self.origin + self.x_axis * q.x + self.y_axis * q.y
    }

    /// Returns the local position and the heading offset wrapped into (-pi, pi].
    pub fn to_local(&self, pose: Pose) -> (Vec2, f64) {
        (self.point_to_local(pose.pos), wrap_angle(pose.heading - self.direction()))
    }

    pub fn to_world(&self, q: Vec2, h: f64) -> Pose {
        Pose {
            pos: self.point_to_world(q),
            heading: wrap_angle(h + self.direction()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub index: usize,
    pub start: Vec2,
    pub end: Vec2,
    pub lane_type: LaneType,
    pub light: LightState,
    pub lane_id: String,
    /// Arc-length span of the region along its source lane.
    pub arc_start: f64,
    pub arc_end: f64,
}

impl Region {
    pub fn frame(&self) -> LocalFrame {
        LocalFrame::new(self.start, self.end).expect("regions have positive length")
    }

    pub fn chord(&self) -> f64 {
        self.start.dist(self.end)
    }

    pub fn arc_length(&self) -> f64 {
        self.arc_end - self.arc_start
    }

    /// Whether a local position lies in the region's placement rectangle.
    pub fn contains_local(&self, q: Vec2) -> bool {
        q.x.abs() <= 2.5 && q.y >= -0.5 && q.y <= self.chord() + 0.5
    }
}

/// Splits every center lane into consecutive pieces of `seg_len` meters of arc length.
/// Regions are ordered by lane id and then by arc position. Light states start as
/// `Unknown`; see [`apply_lights`].
pub fn chunk_lanes(map: &LaneMap, seg_len: f64) -> Vec<Region> {
    assert!(seg_len > 0.0, "segment length must be positive");
    let mut lanes: Vec<_> = map.lanes.iter().filter(|l| l.lane_type == LaneType::Center).collect();
    lanes.sort_by(|a, b| a.id.cmp(&b.id));

    let mut regions = Vec::new();
    for lane in lanes {
        let cum = cumulative_lengths(&lane.polyline);
        let total = *cum.last().unwrap_or(&0.0);
        if total <= 1e-9 {
            continue;
        }
        let full = ((total + 1e-9) / seg_len).floor() as usize;
        let mut breaks: Vec<f64> = (0..=full).map(|k| (k as f64 * seg_len).min(total)).collect();
        let remnant = total - full as f64 * seg_len;
        if remnant > 1e-9 {
            if remnant >= MIN_REMNANT || full == 0 {
                breaks.push(total);
            } else {
                *breaks.last_mut().unwrap() = total;
            }
        } else {
            *breaks.last_mut().unwrap() = total;
        }
        for w in breaks.windows(2) {
            let start = point_at_arc(&lane.polyline, &cum, w[0]);
            let end = point_at_arc(&lane.polyline, &cum, w[1]);
            if start.dist(end) <= 1e-9 {
                continue;
            }
            regions.push(Region {
                index: regions.len(),
                start,
                end,
                lane_type: lane.lane_type,
                light: LightState::Unknown,
                lane_id: lane.id.clone(),
                arc_start: w[0],
                arc_end: w[1],
            });
        }
    }
    regions
}

/// Sets every region's light state from a per-lane light table.
pub fn apply_lights(regions: &mut [Region], lights: &BTreeMap<String, LightState>) {
    for r in regions {
        r.light = lights.get(&r.lane_id).copied().unwrap_or_default();
    }
}

/// Regions of a snapshot's map with its light states applied.
pub fn snapshot_regions(snap: &Snapshot) -> Vec<Region> {
    let mut regions = chunk_lanes(&snap.map, SEGMENT_LENGTH);
    apply_lights(&mut regions, &snap.lights);
    regions
}

/// Vehicle attributes expressed in a region frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalVehicle {
    pub q: Vec2,
    pub h: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorFeature {
    pub start: Vec2,
    pub end: Vec2,
    pub lane_type: LaneType,
    pub light: LightState,
    pub vehicle: Option<LocalVehicle>,
}

impl VectorFeature {
    pub fn empty(region: &Region) -> Self {
        VectorFeature {
            start: region.start,
            end: region.end,
            lane_type: region.lane_type,
            light: region.light,
            vehicle: None,
        }
    }

    pub fn row(&self) -> [f64; FEATURE_WIDTH] {
        let mut r = [0.0; FEATURE_WIDTH];
        r[col::START] = self.start.x;
        r[col::START + 1] = self.start.y;
        r[col::END] = self.end.x;
        r[col::END + 1] = self.end.y;
        r[col::LANE_TYPE + self.lane_type.index()] = 1.0;
        r[col::LIGHT + self.light.index()] = 1.0;
        if let Some(v) = &self.vehicle {
            r[col::OCCUPIED] = 1.0;
            r[col::POS] = v.q.x;
            r[col::POS + 1] = v.q.y;
            r[col::HEADING] = v.h;
            r[col::SPEED] = v.speed;
            r[col::SIZE] = v.length;
            r[col::SIZE + 1] = v.width;
        }
        r
    }
}

/// Where a vehicle would go: its best valid region and the distance to it.
pub fn best_region(v: &Vehicle, regions: &[Region]) -> Option<(usize, f64, LocalVehicle)> {
    let pose = Pose {
        pos: v.pos,
        heading: v.heading,
    };
    let mut best: Option<(usize, f64, LocalVehicle)> = None;
    for r in regions {
        let d = point_segment_distance(v.pos, r.start, r.end);
        if d > MAX_LATERAL || best.as_ref().is_some_and(|b| d >= b.1) {
            continue;
        }
        let (q, h) = r.frame().to_local(pose);
        if h.abs() > MAX_HEADING {
            continue;
        }
        best = Some((
            r.index,
            d,
            LocalVehicle {
                q,
                h,
                speed: v.speed,
                length: v.length,
                width: v.width,
            },
        ));
    }
    best
}

/// Whether a vehicle passes the distance and heading filters for some region.
pub fn passes_filters(v: &Vehicle, regions: &[Region]) -> bool {
    best_region(v, regions).is_some()
}

/// Outcome of assigning a snapshot's vehicles to regions.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// One feature per region, in region order.
    pub features: Vec<VectorFeature>,
    /// Index into the snapshot's vehicles for each occupied region.
    pub occupant: Vec<Option<usize>>,
    /// Vehicles left out, either by the filters or by losing a region to a nearer vehicle.
    pub dropped: Vec<usize>,
}

impl Assignment {
    pub fn region_of(&self, vehicle: usize) -> Option<usize> {
        self.occupant.iter().position(|&o| o == Some(vehicle))
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.occupant.iter().enumerate().filter_map(|(i, o)| o.map(|_| i))
    }
}

pub fn assign_vehicles(snap: &Snapshot, regions: &[Region]) -> Assignment {
    let mut features: Vec<VectorFeature> = regions.iter().map(VectorFeature::empty).collect();
    let mut occupant: Vec<Option<(usize, f64)>> = vec![None; regions.len()];
    let mut dropped = Vec::new();

    for (vi, v) in snap.vehicles.iter().enumerate() {
        let Some((ri, d, local)) = best_region(v, regions) else {
            dropped.push(vi);
            continue;
        };
        match occupant[ri] {
            Some((other, od)) if od <= d => {
                log::warn!("vehicle `{}` dropped: region {ri} already holds `{}`", v.id, snap.vehicles[other].id);
                dropped.push(vi);
            }
            prev => {
                if let Some((other, _)) = prev {
                    log::warn!("vehicle `{}` dropped: region {ri} taken by nearer `{}`", snap.vehicles[other].id, v.id);
                    dropped.push(other);
                }
                occupant[ri] = Some((vi, d));
                features[ri].vehicle = Some(local);
            }
        }
    }
    dropped.sort_unstable();
    Assignment {
        features,
        occupant: occupant.into_iter().map(|o| o.map(|(v, _)| v)).collect(),
        dropped,
    }
}

pub fn feature_rows(features: &[VectorFeature]) -> Vec<[f64; FEATURE_WIDTH]> {
    features.iter().map(VectorFeature::row).collect()
}

/// `I x 19` matrix of feature rows.
pub fn feature_matrix<T: Real>(features: &[VectorFeature]) -> Tensor<T> {
    let data = features
        .iter()
        .flat_map(|f| f.row())
        .map(T::of)
        .collect();
    Tensor::new(&[features.len(), FEATURE_WIDTH], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Lane;
    use std::sync::Arc;

    fn straight(id: &str, len: f64) -> Lane {
        Lane::new(id, LaneType::Center, vec![Vec2::new(0.0, 0.0), Vec2::new(len, 0.0)])
    }

    fn map(lanes: Vec<Lane>) -> LaneMap {
        LaneMap {
            lanes,
            traffic_lights: vec![],
        }
    }

    fn lengths(regions: &[Region]) -> Vec<f64> {
        regions.iter().map(|r| (r.chord() * 1e9).round() / 1e9).collect()
    }

    #[test]
    fn exact_division() {
        let r = chunk_lanes(&map(vec![straight("a", 20.0)]), 5.0);
        assert_eq!(lengths(&r), vec![5.0; 4]);
    }

    #[test]
    fn remnant_kept() {
        let r = chunk_lanes(&map(vec![straight("a", 12.0)]), 5.0);
        assert_eq!(lengths(&r), vec![5.0, 5.0, 2.0]);
        assert_eq!(r[0].end, r[1].start);
    }

    #[test]
    fn short_remnant_merges() {
        let r = chunk_lanes(&map(vec![straight("a", 10.3)]), 5.0);
        assert_eq!(lengths(&r), vec![5.0, 5.3]);
    }

    #[test]
    fn degenerate_lane() {
        let lane = Lane::new("a", LaneType::Center, vec![Vec2::new(1.0, 1.0); 2]);
        assert!(chunk_lanes(&map(vec![lane]), 5.0).is_empty());
    }

    #[test]
    fn non_center_lanes_skipped_and_sorted() {
        let mut edge = straight("0", 10.0);
        edge.lane_type = LaneType::Edge;
        let r = chunk_lanes(&map(vec![straight("b", 5.0), edge, straight("a", 5.0)]), 5.0);
        let ids: Vec<_> = r.iter().map(|r| r.lane_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(r[1].index, 1);
    }

    #[test]
    fn frame_axes() {
        let f = LocalFrame::new(Vec2::new(1.0, 1.0), Vec2::new(1.0, 6.0)).unwrap();
        let (q, h) = f.to_local(Pose {
            pos: Vec2::new(1.0, 1.0),
            heading: std::f64::consts::FRAC_PI_2,
        });
        assert_eq!((q, h), (Vec2::new(0.0, 0.0), 0.0));
        let (q, _) = f.to_local(Pose {
            pos: Vec2::new(1.0, 6.0),
            heading: 0.0,
        });
        assert!((q.x).abs() < 1e-12 && (q.y - 5.0).abs() < 1e-12);
        // x axis is y rotated clockwise: +y world heading → +x local points to world +x.
        assert!((f.x_axis.x - 1.0).abs() < 1e-12);
    }

    fn snapshot(vehicles: Vec<Vehicle>, lanes: Vec<Lane>) -> Snapshot {
        Snapshot {
            map: Arc::new(map(lanes)),
            vehicles,
            step: 0,
            dt: 0.1,
            lights: BTreeMap::new(),
        }
    }

    fn car(id: &str, x: f64, y: f64, heading: f64) -> Vehicle {
        Vehicle {
            id: id.into(),
            pos: Vec2::new(x, y),
            heading,
            speed: 10.0,
            length: 4.5,
            width: 2.0,
        }
    }

    #[test]
    fn filters() {
        let lanes = vec![straight("a", 20.0)];
        let snap = snapshot(
            vec![
                car("far", 7.0, 6.0, 0.0),
                car("wrong_way", 7.0, 0.0, std::f64::consts::PI),
                car("ok", 7.0, 1.0, 0.2),
            ],
            lanes,
        );
        let regions = snapshot_regions(&snap);
        let a = assign_vehicles(&snap, &regions);
        assert_eq!(a.dropped, vec![0, 1]);
        assert_eq!(a.region_of(2), Some(1));
        let v = a.features[1].vehicle.unwrap();
        assert!((v.q.x - -1.0).abs() < 1e-12 && (v.q.y - 2.0).abs() < 1e-12);
        assert!((v.h - 0.2).abs() < 1e-12);
    }

    #[test]
    fn nearer_vehicle_wins() {
        let snap = snapshot(
            vec![car("a", 2.0, 1.5, 0.0), car("b", 3.0, 0.2, 0.0)],
            vec![straight("l", 5.0)],
        );
        let regions = snapshot_regions(&snap);
        let a = assign_vehicles(&snap, &regions);
        assert_eq!(a.occupant, vec![Some(1)]);
        assert_eq!(a.dropped, vec![0]);
    }

    #[test]
    fn empty_snapshot_rows() {
        let snap = snapshot(vec![], vec![straight("l", 12.0)]);
        let regions = snapshot_regions(&snap);
        let a = assign_vehicles(&snap, &regions);
        let m = feature_matrix::<f64>(&a.features);
        assert_eq!(m.shape(), &[3, FEATURE_WIDTH]);
        for i in 0..3 {
            assert!(m.row_slice(i)[12..].iter().all(|&x| x == 0.0));
            assert_eq!(m.at(i, col::LANE_TYPE), 1.0);
            assert_eq!(m.at(i, col::LIGHT), 1.0);
        }
    }

    #[test]
    fn speed_column() {
        let snap = snapshot(vec![car("a", 2.0, 0.0, 0.0)], vec![straight("l", 5.0)]);
        let regions = snapshot_regions(&snap);
        let a = assign_vehicles(&snap, &regions);
        assert_eq!(feature_matrix::<f64>(&a.features).at(0, col::SPEED), 10.0);
    }
}
