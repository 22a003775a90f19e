use std::collections::HashSet;
use std::sync::Arc;

use super::{Lane, LaneMap, Scenario, TrackState};
use crate::geom::Vec2;

/// Side of the square crop around the ego vehicle, meters.
pub const CROP_SIDE: f64 = 120.0;
/// Scenarios with fewer valid agents (after cropping) are discarded.
pub const MIN_AGENTS: usize = 8;

/// Crops the scenario to an axis-aligned square of side `side` centered on the
/// ego's first valid position and re-centers coordinates on that point.
///
/// Returns `None` when fewer than `min_agents` tracks keep a valid state inside the square.
pub fn filter_and_crop(s: &Scenario, side: f64, min_agents: usize) -> Option<Scenario> {
    let ego = s.ego()?;
    let center = ego.states[ego.first_valid()?].pos();
    let half = side / 2.0;
    let inside = |p: Vec2| (p.x - center.x).abs() <= half && (p.y - center.y).abs() <= half;
    let shift = |p: Vec2| Vec2::new(p.x - center.x, p.y - center.y);

    let mut tracks = Vec::new();
    for track in &s.tracks {
        let states: Vec<TrackState> = track
            .states
            .iter()
            .map(|st| {
                if st.valid && inside(st.pos()) {
                    let p = shift(st.pos());
                    TrackState { x: p.x, y: p.y, ..*st }
                } else {
                    TrackState::invalid()
                }
            })
            .collect();
        if states.iter().any(|st| st.valid) {
            tracks.push(super::VehicleTrack {
                id: track.id.clone(),
                states,
            });
        }
    }
    if tracks.len() < min_agents {
        return None;
    }

    let map = crop_map(&s.map, inside, shift);
    Some(Scenario {
        dt: s.dt,
        ego_id: s.ego_id.clone(),
        map: Arc::new(map),
        tracks,
    })
}

/// Keeps the contiguous runs of lane points inside the crop. Runs shorter than two
/// points are dropped; a lane split into several runs yields pieces `id`, `id~1`, ...
fn crop_map(map: &LaneMap, inside: impl Fn(Vec2) -> bool, shift: impl Fn(Vec2) -> Vec2) -> LaneMap {
    let mut pieces: Vec<Vec<Lane>> = Vec::with_capacity(map.lanes.len());
    for lane in &map.lanes {
        let mut runs: Vec<Vec<Vec2>> = Vec::new();
        let mut current: Vec<Vec2> = Vec::new();
        for &p in &lane.polyline {
            if inside(p) {
                current.push(shift(p));
            } else if !current.is_empty() {
                runs.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            runs.push(current);
        }
        runs.retain(|r| r.len() >= 2);
        let n = runs.len();
        let lane_pieces = runs
            .into_iter()
            .enumerate()
            .map(|(k, polyline)| Lane {
                id: if k == 0 {
                    lane.id.clone()
                } else {
                    format!("{}~{k}", lane.id)
                },
                lane_type: lane.lane_type,
                polyline,
                successors: if k + 1 == n { lane.successors.clone() } else { Vec::new() },
                left: lane.left.clone(),
                right: lane.right.clone(),
            })
            .collect();
        pieces.push(lane_pieces);
    }

    let kept: HashSet<String> = pieces
        .iter()
        .filter_map(|p| p.first().map(|l| l.id.clone()))
        .collect();
    let mut lanes: Vec<Lane> = pieces.into_iter().flatten().collect();
    for lane in &mut lanes {
        lane.successors.retain(|id| kept.contains(id));
        if lane.left.as_ref().is_some_and(|id| !kept.contains(id)) {
            lane.left = None;
        }
        if lane.right.as_ref().is_some_and(|id| !kept.contains(id)) {
            lane.right = None;
        }
    }
    let traffic_lights = map
        .traffic_lights
        .iter()
        .filter(|tl| kept.contains(&tl.lane_id))
        .cloned()
        .collect();
    LaneMap {
        lanes,
        traffic_lights,
    }
}
