use std::collections::BTreeMap;
use std::sync::Arc;

use super::{LaneMap, LightState, Scenario, TrackState, TrafficLight, VehicleTrack};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::vectorize::{chunk_lanes, passes_filters, SEGMENT_LENGTH};

/// Spacing between extracted snapshots, seconds.
pub const SNAPSHOT_INTERVAL: f64 = 2.0;

/// A vehicle at a single instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: String,
    pub pos: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl Vehicle {
    pub fn from_state(id: impl Into<String>, s: &TrackState) -> Self {
        Vehicle {
            id: id.into(),
            pos: s.pos(),
            heading: s.heading,
            speed: s.speed,
            length: s.length,
            width: s.width,
        }
    }

    pub fn state(&self) -> TrackState {
        TrackState {
            x: self.pos.x,
            y: self.pos.y,
            heading: self.heading,
            speed: self.speed,
            length: self.length,
            width: self.width,
            valid: true,
        }
    }
}

/// The vehicles on a map at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub map: Arc<LaneMap>,
    pub vehicles: Vec<Vehicle>,
    /// Step index in the source scenario.
    pub step: usize,
    pub dt: f64,
    pub lights: BTreeMap<String, LightState>,
}

impl Snapshot {
    pub fn empty(map: Arc<LaneMap>, dt: f64) -> Self {
        let lights = map.lights_at(0);
        Snapshot {
            map,
            vehicles: Vec::new(),
            step: 0,
            dt,
            lights,
        }
    }

    /// Every valid vehicle of `s` at `step`, unfiltered.
    pub fn at_step(s: &Scenario, step: usize) -> Self {
        let vehicles = s
            .tracks
            .iter()
            .filter_map(|t| t.states.get(step).filter(|st| st.valid).map(|st| Vehicle::from_state(&t.id, st)))
            .collect();
        Snapshot {
            map: Arc::clone(&s.map),
            vehicles,
            step,
            dt: s.dt,
            lights: s.map.lights_at(step),
        }
    }

    pub fn vehicle(&self, id: &str) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    /// A single-step scenario holding these vehicles. The first vehicle is the ego.
    pub fn to_scenario(&self) -> Scenario {
        let map = LaneMap {
            lanes: self.map.lanes.clone(),
            traffic_lights: self
                .map
                .traffic_lights
                .iter()
                .map(|tl| TrafficLight {
                    lane_id: tl.lane_id.clone(),
                    states: vec![self.lights.get(&tl.lane_id).copied().unwrap_or_default()],
                })
                .collect(),
        };
        Scenario {
            dt: self.dt,
            ego_id: self.vehicles.first().map(|v| v.id.clone()),
            map: Arc::new(map),
            tracks: self
                .vehicles
                .iter()
                .map(|v| VehicleTrack {
                    id: v.id.clone(),
                    states: vec![v.state()],
                })
                .collect(),
        }
    }
}

/// Whole number of steps in `interval`, if it is a positive multiple of `dt`.
pub(crate) fn interval_steps(interval: f64, dt: f64) -> Result<usize> {
    let ratio = interval / dt;
    let k = ratio.round();
    if !(interval > 0.0) || !ratio.is_finite() || k < 1.0 || (ratio - k).abs() > 1e-6 * k.max(1.0) {
        return Err(Error::Interval { interval, dt });
    }
    Ok(k as usize)
}

/// Snapshots every `interval` seconds from t = 0. Each holds only the vehicles that are
/// valid at its step and pass the region filters.
pub fn split_snapshots(s: &Scenario, interval: f64) -> Result<Vec<Snapshot>> {
    let stride = interval_steps(interval, s.dt)?;
    let horizon = s.horizon();
    let count = (horizon / stride).max(1);
    let regions = chunk_lanes(&s.map, SEGMENT_LENGTH);
    Ok((0..count)
        .map(|k| {
            let mut snap = Snapshot::at_step(s, k * stride);
            snap.vehicles.retain(|v| passes_filters(v, &regions));
            snap
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Lane, LaneType};

    fn scenario(steps: usize, valid_until: usize) -> Scenario {
        let lane = Lane::new(
            "l",
            LaneType::Center,
            vec![Vec2::new(0.0, 0.0), Vec2::new(500.0, 0.0)],
        );
        let states = (0..steps)
            .map(|t| {
                if t < valid_until {
                    TrackState {
                        x: t as f64,
                        y: 0.0,
                        heading: 0.0,
                        speed: 10.0,
                        length: 4.0,
                        width: 2.0,
                        valid: true,
                    }
                } else {
                    TrackState::invalid()
                }
            })
            .collect();
        Scenario {
            dt: 0.1,
            ego_id: Some("a".into()),
            map: Arc::new(LaneMap {
                lanes: vec![lane],
                traffic_lights: vec![],
            }),
            tracks: vec![VehicleTrack { id: "a".into(), states }],
        }
    }

    #[test]
    fn twenty_seconds_ten_snapshots() {
        let snaps = split_snapshots(&scenario(200, 200), 2.0).unwrap();
        assert_eq!(snaps.len(), 10);
        assert_eq!(snaps[3].step, 60);
    }

    #[test]
    fn single_step() {
        let snaps = split_snapshots(&scenario(1, 1), 2.0).unwrap();
        assert_eq!(snaps.len(), 1);
        assert_eq!(snaps[0].step, 0);
    }

    #[test]
    fn validity_masking() {
        let snaps = split_snapshots(&scenario(200, 1), 2.0).unwrap();
        assert_eq!(snaps[0].vehicles.len(), 1);
        assert!(snaps[1..].iter().all(|s| s.vehicles.is_empty()));
    }

    #[test]
    fn bad_interval() {
        assert!(matches!(
            split_snapshots(&scenario(10, 10), 0.25),
            Err(Error::Interval { .. })
        ));
        assert!(split_snapshots(&scenario(10, 10), 0.0).is_err());
    }
}
