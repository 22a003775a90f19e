//! Scenario data model: HD map, vehicle tracks, and single-step snapshots.

mod crop;
mod io;
mod snapshot;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geom::Vec2;

pub use crop::{filter_and_crop, CROP_SIDE, MIN_AGENTS};
pub use io::{parse_scenario, parse_scenario_with_report, read_scenario, write_scenario, write_scenario_file, ParseReport};
pub use snapshot::{split_snapshots, Snapshot, Vehicle, SNAPSHOT_INTERVAL};

/// Default simulation step in seconds.
pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LaneType {
    Center,
    BoundarySolid,
    BoundaryBroken,
    Edge,
}

impl LaneType {
    pub const ALL: [LaneType; 4] = [
        LaneType::Center,
        LaneType::BoundarySolid,
        LaneType::BoundaryBroken,
        LaneType::Edge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LaneType::Center => "center",
            LaneType::BoundarySolid => "boundary-solid",
            LaneType::BoundaryBroken => "boundary-broken",
            LaneType::Edge => "edge",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for LaneType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LaneType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Value(format!("unknown lane type `{s}`")))
    }
}

impl fmt::Display for LaneType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LightState {
    #[default]
    Unknown,
    Green,
    Yellow,
    Red,
}

impl LightState {
    pub const ALL: [LightState; 4] = [
        LightState::Unknown,
        LightState::Green,
        LightState::Yellow,
        LightState::Red,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LightState::Unknown => "unknown",
            LightState::Green => "green",
            LightState::Yellow => "yellow",
            LightState::Red => "red",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for LightState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LightState::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Value(format!("unknown traffic light state `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub lane_type: LaneType,
    pub polyline: Vec<Vec2>,
    pub successors: Vec<String>,
    pub left: Option<String>,
    pub right: Option<String>,
}

impl Lane {
    pub fn new(id: impl Into<String>, lane_type: LaneType, polyline: Vec<Vec2>) -> Self {
        Lane {
            id: id.into(),
            lane_type,
            polyline,
            successors: Vec::new(),
            left: None,
            right: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficLight {
    pub lane_id: String,
    pub states: Vec<LightState>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaneMap {
    pub lanes: Vec<Lane>,
    pub traffic_lights: Vec<TrafficLight>,
}

impl LaneMap {
    pub fn lane(&self, id: &str) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id == id)
    }

    /// Light state of every controlled lane at `step`; steps past the end hold the last state.
    pub fn lights_at(&self, step: usize) -> BTreeMap<String, LightState> {
        self.traffic_lights
            .iter()
            .map(|tl| {
                let s = tl
                    .states
                    .get(step)
                    .or_else(|| tl.states.last())
                    .copied()
                    .unwrap_or_default();
                (tl.lane_id.clone(), s)
            })
            .collect()
    }

    /// Axis-aligned bounds of all lane points as (min, max).
    pub fn bounds(&self) -> Option<(Vec2, Vec2)> {
        bounds_of(self.lanes.iter().flat_map(|l| l.polyline.iter().copied()))
    }

    /// Returns a copy with every point mapped through `f`.
    pub fn map_points(&self, f: impl Fn(Vec2) -> Vec2) -> LaneMap {
        LaneMap {
            lanes: self
                .lanes
                .iter()
                .map(|l| Lane {
                    polyline: l.polyline.iter().map(|&p| f(p)).collect(),
                    ..l.clone()
                })
                .collect(),
            traffic_lights: self.traffic_lights.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for lane in &self.lanes {
            if !ids.insert(lane.id.as_str()) {
                return Err(Error::Value(format!("duplicate lane id `{}`", lane.id)));
            }
            if lane.polyline.len() < 2 {
                return Err(Error::Value(format!(
                    "lane `{}` has {} polyline points, need at least 2",
                    lane.id,
                    lane.polyline.len()
                )));
            }
            if lane.polyline.iter().any(|p| !p.is_finite()) {
                return Err(Error::Value(format!("lane `{}` has a non-finite point", lane.id)));
            }
        }
        for lane in &self.lanes {
            let refs = lane
                .successors
                .iter()
                .chain(lane.left.iter())
                .chain(lane.right.iter());
            for r in refs {
                if !ids.contains(r.as_str()) {
                    return Err(Error::Ref(format!("lane `{}` refers to unknown lane `{r}`", lane.id)));
                }
            }
        }
        for tl in &self.traffic_lights {
            if !ids.contains(tl.lane_id.as_str()) {
                return Err(Error::Ref(format!("traffic light on unknown lane `{}`", tl.lane_id)));
            }
        }
        Ok(())
    }
}

pub(crate) fn bounds_of(points: impl Iterator<Item = Vec2>) -> Option<(Vec2, Vec2)> {
    points.fold(None, |acc, p| match acc {
        None => Some((p, p)),
        Some((lo, hi)) => Some((
            Vec2::new(lo.x.min(p.x), lo.y.min(p.y)),
            Vec2::new(hi.x.max(p.x), hi.y.max(p.y)),
        )),
    })
}

/// One per-step record of a vehicle track.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub valid: bool,
}

impl TrackState {
    pub fn pos(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn invalid() -> Self {
        TrackState::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleTrack {
    pub id: String,
    pub states: Vec<TrackState>,
}

impl VehicleTrack {
    pub fn first_valid(&self) -> Option<usize> {
        self.states.iter().position(|s| s.valid)
    }

    pub fn last_valid(&self) -> Option<usize> {
        self.states.iter().rposition(|s| s.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.states.iter().filter(|s| s.valid).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub dt: f64,
    /// `None` only when the scenario has no tracks.
    pub ego_id: Option<String>,
    pub map: Arc<LaneMap>,
    pub tracks: Vec<VehicleTrack>,
}

impl Scenario {
    /// Number of steps T.
    pub fn horizon(&self) -> usize {
        if let Some(t) = self.tracks.first() {
            return t.states.len().max(1);
        }
        self.map
            .traffic_lights
            .iter()
            .map(|tl| tl.states.len())
            .max()
            .unwrap_or(1)
            .max(1)
    }

    pub fn track(&self, id: &str) -> Option<&VehicleTrack> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn ego(&self) -> Option<&VehicleTrack> {
        self.ego_id.as_deref().and_then(|id| self.track(id))
    }

    /// Bounding box of lane points and valid vehicle positions.
    pub fn bounds(&self) -> Option<(Vec2, Vec2)> {
        let lanes = self.map.lanes.iter().flat_map(|l| l.polyline.iter().copied());
        let states = self
            .tracks
            .iter()
            .flat_map(|t| t.states.iter().filter(|s| s.valid).map(|s| s.pos()));
        bounds_of(lanes.chain(states))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::Value(format!("dt must be positive and finite, got {}", self.dt)));
        }
        self.map.validate()?;
        let horizon = self.horizon();
        let mut ids = HashSet::new();
        for track in &self.tracks {
            if !ids.insert(track.id.as_str()) {
                return Err(Error::Value(format!("duplicate track id `{}`", track.id)));
            }
            if track.states.len() != horizon {
                return Err(Error::Value(format!(
                    "track `{}` has {} states, expected {horizon}",
                    track.id,
                    track.states.len()
                )));
            }
            let mut dims: Option<(f64, f64)> = None;
            for s in &track.states {
                let fields = [s.x, s.y, s.heading, s.speed, s.length, s.width];
                if fields.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Value(format!("track `{}` has a non-finite state", track.id)));
                }
                if !s.valid {
                    continue;
                }
                if s.speed < 0.0 {
                    return Err(Error::Value(format!("track `{}` has negative speed", track.id)));
                }
                if s.length <= 0.0 || s.width <= 0.0 {
                    return Err(Error::Value(format!(
                        "track `{}` has non-positive length or width",
                        track.id
                    )));
                }
                match dims {
                    None => dims = Some((s.length, s.width)),
                    Some((l, w)) => {
                        let tol = 1e-6 * l.max(w);
                        if (l - s.length).abs() > tol || (w - s.width).abs() > tol {
                            return Err(Error::Value(format!(
                                "track `{}` changes its bounding box across valid steps",
                                track.id
                            )));
                        }
                    }
                }
            }
        }
        for tl in &self.map.traffic_lights {
            if !self.tracks.is_empty() && tl.states.len() != horizon {
                return Err(Error::Value(format!(
                    "traffic light on `{}` has {} states, expected {horizon}",
                    tl.lane_id,
                    tl.states.len()
                )));
            }
        }
        match &self.ego_id {
            Some(ego) if !ids.contains(ego.as_str()) => {
                Err(Error::Ref(format!("ego_id `{ego}` is not a track")))
            }
            None if !self.tracks.is_empty() => Err(Error::Ref("ego_id is null but tracks exist".into())),
            _ => Ok(()),
        }
    }
}
