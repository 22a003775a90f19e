//! Reactive playback: vehicles follow fixed reference paths while an intelligent
//! driver model sets their speed from the nearest vehicle ahead.

use crate::geom::{cumulative_lengths, point_at_arc, project_on_segment, tangent_at_arc, Vec2};
use crate::scenario::{Scenario, TrackState, VehicleTrack};

pub const CORRIDOR_WIDTH: f64 = 3.5;
pub const LOOKAHEAD: f64 = 50.0;
/// Smallest gap reported to the car-following law.
pub const MIN_GAP: f64 = 0.1;
/// Lowest desired speed assigned from a reference trajectory.
pub const MIN_DESIRED_SPEED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmParams {
    /// Desired speed, m/s.
    pub v0: f64,
    /// Jam distance, m.
    pub s0: f64,
    /// Time headway, s.
    pub time_headway: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub delta: f64,
}

impl IdmParams {
    pub fn with_v0(v0: f64) -> Self {
        IdmParams { v0, ..Self::default() }
    }

    /// Desired speed from a reference speed profile: its 90th percentile, at least 5 m/s.
    pub fn from_speeds(speeds: &[f64]) -> Self {
        let mut s: Vec<f64> = speeds.iter().copied().filter(|x| x.is_finite()).collect();
        s.sort_by(f64::total_cmp);
        let p90 = if s.is_empty() {
            0.0
        } else {
            s[((s.len() - 1) as f64 * 0.9).round() as usize]
        };
        Self::with_v0(p90.max(MIN_DESIRED_SPEED))
    }
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            v0: 15.0,
            s0: 2.0,
            time_headway: 1.5,
            max_accel: 2.0,
            comfort_decel: 4.0,
            delta: 4.0,
        }
    }
}

/// Acceleration for speed `v`, optionally behind a leader at `(gap, lead_speed)`.
/// Clamped to `[-2b, a]`.
pub fn idm_accel(v: f64, p: &IdmParams, lead: Option<(f64, f64)>) -> f64 {
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let interaction = lead.map_or(0.0, |(gap, v_lead)| {
        let dv = v - v_lead;
        let s_star = p.s0 + v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
        let s_star = s_star.max(0.0);
        (s_star / gap.max(MIN_GAP)).powi(2)
    });
    (p.max_accel * (free - interaction)).clamp(-2.0 * p.comfort_decel, p.max_accel)
}

/// Position along a fixed polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFollower {
    path: Vec<Vec2>,
    cum: Vec<f64>,
    pub cursor: f64,
    pub speed: f64,
    /// Heading used when the path has no length.
    rest_heading: f64,
}

impl PathFollower {
    pub fn new(path: Vec<Vec2>, speed: f64, rest_heading: f64) -> Self {
        assert!(!path.is_empty(), "a path needs at least one point");
        let mut pts: Vec<Vec2> = Vec::with_capacity(path.len());
        for p in path {
            if pts.last().is_none_or(|q: &Vec2| q.dist(p) > 1e-9) {
                pts.push(p);
            }
        }
        let cum = cumulative_lengths(&pts);
        PathFollower {
            path: pts,
            cum,
            cursor: 0.0,
            speed: speed.max(0.0),
            rest_heading,
        }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn at_end(&self) -> bool {
        self.cursor >= self.length()
    }

    pub fn position(&self) -> Vec2 {
        point_at_arc(&self.path, &self.cum, self.cursor)
    }

    pub fn heading(&self) -> f64 {
        tangent_at_arc(&self.path, &self.cum, self.cursor).unwrap_or(self.rest_heading)
    }

    /// Arc position of the point nearest to `p` within `[from, to]`, with its lateral distance.
    fn project(&self, p: Vec2, from: f64, to: f64) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for k in 0..self.path.len().saturating_sub(1) {
            let (s0, s1) = (self.cum[k], self.cum[k + 1]);
            if s1 < from || s0 > to {
                continue;
            }
            let a = point_at_arc(&self.path, &self.cum, s0.max(from));
            let b = point_at_arc(&self.path, &self.cum, s1.min(to));
            let t = project_on_segment(p, a, b);
            let q = a.lerp(b, t);
            let s = s0.max(from) + t * a.dist(b);
            let lat = p.dist(q);
            if best.is_none_or(|(_, l)| lat < l) {
                best = Some((s, lat));
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: String,
    pub length: f64,
    pub width: f64,
    pub follower: PathFollower,
    pub idm: IdmParams,
}

impl Agent {
    pub fn state(&self) -> TrackState {
        let p = self.follower.position();
        TrackState {
            x: p.x,
            y: p.y,
            heading: self.follower.heading(),
            speed: self.follower.speed,
            length: self.length,
            width: self.width,
            valid: true,
        }
    }
}

/// Nearest other agent whose center lies inside the corridor along the agent's
/// remaining path. Returns `(gap, lead_speed)`, the gap being the arc distance minus
/// both half-lengths.
pub fn find_lead(agents: &[Agent], me: usize, corridor_width: f64, lookahead: f64) -> Option<(f64, f64)> {
    let a = &agents[me];
    let from = a.follower.cursor;
    let to = from + lookahead;
    agents
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != me)
        .filter_map(|(_, o)| {
            let (s, lat) = a.follower.project(o.follower.position(), from, to)?;
            let ahead = s - from;
            (lat <= corridor_width / 2.0 && ahead > 0.0).then(|| {
                let gap = (ahead - (a.length + o.length) / 2.0).max(MIN_GAP);
                (ahead, gap, o.follower.speed)
            })
        })
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, gap, v)| (gap, v))
}

/// Acceleration of every agent from the current state.
pub fn scene_accels(agents: &[Agent]) -> Vec<f64> {
    (0..agents.len())
        .map(|i| idm_accel(agents[i].follower.speed, &agents[i].idm, find_lead(agents, i, CORRIDOR_WIDTH, LOOKAHEAD)))
        .collect()
}

/// Applies one step of the given accelerations. An agent reaching the end of its path
/// stops there.
pub fn advance(agents: &[Agent], accels: &[f64], dt: f64) -> Vec<Agent> {
    agents
        .iter()
        .zip(accels)
        .map(|(a, &acc)| {
            let mut next = a.clone();
            if dt <= 0.0 {
                return next;
            }
            let f = &mut next.follower;
            if f.at_end() {
                f.speed = 0.0;
                return next;
            }
            f.speed = (f.speed + acc * dt).max(0.0);
            f.cursor = (f.cursor + f.speed * dt).min(f.length());
            if f.at_end() {
                f.speed = 0.0;
            }
            next
        })
        .collect()
}

/// Advances every agent by `dt`. Accelerations all come from the pre-step state.
pub fn step_scene(agents: &[Agent], dt: f64) -> Vec<Agent> {
    advance(agents, &scene_accels(agents), dt)
}

/// Replays a scenario with every track following its own logged path under IDM speed
/// control. Each vehicle enters at its first valid step with its logged speed.
pub fn simulate(s: &Scenario) -> Scenario {
    let horizon = s.horizon();
    let mut pending: Vec<(usize, Agent)> = s
        .tracks
        .iter()
        .filter_map(|t| {
            let first = t.first_valid()?;
            let valid: Vec<&TrackState> = t.states.iter().filter(|st| st.valid).collect();
            let path = valid.iter().map(|st| st.pos()).collect();
            let speeds: Vec<f64> = valid.iter().map(|st| st.speed).collect();
            let st0 = &t.states[first];
            Some((
                first,
                Agent {
                    id: t.id.clone(),
                    length: st0.length,
                    width: st0.width,
                    follower: PathFollower::new(path, st0.speed, st0.heading),
                    idm: IdmParams::from_speeds(&speeds),
                },
            ))
        })
        .collect();
    let mut tracks: Vec<VehicleTrack> = s
        .tracks
        .iter()
        .map(|t| VehicleTrack {
            id: t.id.clone(),
            states: vec![TrackState::invalid(); horizon],
        })
        .collect();
    let index = |id: &str| s.tracks.iter().position(|t| t.id == id).expect("known track");
    let mut active: Vec<Agent> = Vec::new();
    for step in 0..horizon {
        if step > 0 {
            active = step_scene(&active, s.dt);
        }
        let (now, later): (Vec<_>, Vec<_>) = pending.into_iter().partition(|(f, _)| *f == step);
        pending = later;
        active.extend(now.into_iter().map(|(_, a)| a));
        for a in &active {
            tracks[index(&a.id)].states[step] = a.state();
        }
    }
    Scenario {
        dt: s.dt,
        ego_id: s.ego_id.clone(),
        map: s.map.clone(),
        tracks,
    }
}
