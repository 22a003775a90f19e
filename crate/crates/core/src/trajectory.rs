//! Multi-modal trajectory decoding in the vehicle frame, segment-wise rollout,
//! track inpainting and the closest-mode training loss.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, wrap_angle, Vec2};
use crate::model::{TrajectoryModel, TrajectoryNet};
use crate::placement::draw_categorical;
use crate::scenario::{LaneMap, Scenario, Snapshot, TrackState, TrafficLight, Vehicle, VehicleTrack};
use crate::tensor::{Graph, ParamStore, Real, Tensor, Var};
use crate::vectorize::{
    apply_lights, assign_vehicles, best_region, chunk_lanes, col, feature_rows, LocalFrame, LocalVehicle, Pose,
    FEATURE_WIDTH, SEGMENT_LENGTH,
};

/// Meters per head output unit for waypoints.
pub const WAYPOINT_SCALE: f64 = 20.0;
/// Waypoint steps shorter than this keep the previous heading, in meters.
pub const MIN_HEADING_STEP: f64 = 0.05;
/// Steps of travelled path over which rollout speeds are measured.
pub const SPEED_WINDOW: usize = 10;

/// K candidate futures of one vehicle, in its own frame (origin at the vehicle, +y ahead).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryModes {
    pub waypoints: Vec<Vec<Vec2>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl TrajectoryModes {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }
}

/// Feature rows of a scene seen from one vehicle, and the region that vehicle occupies.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleView {
    pub rows: Vec<[f64; FEATURE_WIDTH]>,
    pub region: usize,
}

impl VehicleView {
    /// Rows of the scene reflected across the vehicle's heading axis.
    pub fn mirrored_rows(&self) -> Vec<[f64; FEATURE_WIDTH]> {
        self.rows
            .iter()
            .map(|r| {
                let mut m = *r;
                for c in [col::START, col::END, col::POS, col::HEADING] {
                    m[c] = -m[c];
                }
                m
            })
            .collect()
    }
}

fn to_vehicle_frame(frame: &LocalFrame, v: &Vehicle) -> Vehicle {
    Vehicle {
        pos: frame.point_to_local(v.pos),
        heading: wrap_angle(v.heading - frame.direction() + FRAC_PI_2),
        ..v.clone()
    }
}

/// Re-expresses `snap` in the frame of `vehicle_id` and vectorizes it. The vehicle is
/// always given a region, even when the usual filters or a nearer neighbor would drop it.
pub fn vehicle_view(snap: &Snapshot, vehicle_id: &str) -> Result<VehicleView> {
    let target = snap
        .vehicles
        .iter()
        .position(|v| v.id == vehicle_id)
        .ok_or_else(|| Error::MissingVehicle(vehicle_id.to_string()))?;
    let ego = &snap.vehicles[target];
    let frame = LocalFrame::from_pose(Pose {
        pos: ego.pos,
        heading: ego.heading,
    });
    let map: LaneMap = snap.map.map_points(|p| frame.point_to_local(p));
    let local = Snapshot {
        map: std::sync::Arc::new(map),
        vehicles: snap.vehicles.iter().map(|v| to_vehicle_frame(&frame, v)).collect(),
        step: snap.step,
        dt: snap.dt,
        lights: snap.lights.clone(),
    };
    let mut regions = chunk_lanes(&local.map, SEGMENT_LENGTH);
    if regions.is_empty() {
        return Err(Error::Empty("map has no lane regions to decode against".into()));
    }
    apply_lights(&mut regions, &local.lights);
    let mut assignment = assign_vehicles(&local, &regions);
    let me = &local.vehicles[target];
    let region = match assignment.region_of(target) {
        Some(r) => r,
        None => {
            let (r, local_vehicle) = match best_region(me, &regions) {
                Some((r, _, lv)) => (r, lv),
                None => {
                    let r = (0..regions.len())
                        .min_by(|&a, &b| {
                            let da = point_segment_distance(me.pos, regions[a].start, regions[a].end);
                            let db = point_segment_distance(me.pos, regions[b].start, regions[b].end);
                            da.total_cmp(&db)
                        })
                        .expect("non-empty");
                    let (q, h) = regions[r].frame().to_local(Pose {
                        pos: me.pos,
                        heading: me.heading,
                    });
                    let lv = LocalVehicle {
                        q,
                        h,
                        speed: me.speed,
                        length: me.length,
                        width: me.width,
                    };
                    (r, lv)
                }
            };
            assignment.features[r].vehicle = Some(local_vehicle);
            r
        }
    };
    Ok(VehicleView {
        rows: feature_rows(&assignment.features),
        region,
    })
}

fn rows_tensor<T: Real>(rows: &[[f64; FEATURE_WIDTH]]) -> Tensor<T> {
    Tensor::from_f64(&[rows.len(), FEATURE_WIDTH], &rows.concat())
}

fn single_pass<T: Real>(
    net: &TrajectoryNet,
    store: &ParamStore<T>,
    g: &mut Graph<T>,
    rows: &[[f64; FEATURE_WIDTH]],
    region: usize,
) -> Result<Var> {
    let m = g.input(rows_tensor(rows));
    let (v, c) = net.encoder.encode(g, store, m)?;
    let own = g.gather_rows(v, &[region])?;
    let x = g.concat_cols(&[own, c])?;
    let out = net.head.apply(g, store, x)?;
    if net.config.waypoint_stride == 1 {
        return Ok(out);
    }
    let expand = g.input(expansion_matrix(net.config.mixtures, net.config.future_steps, net.config.waypoint_stride));
    g.matmul(out, expand)
}

/// Linear map from the head's `K(2C+1)` control-point layout to the `K(2L+1)` waypoint
/// layout. Waypoint `i` (one-based step) interpolates between the control points that
/// bracket it; the vehicle's own position is the control point at step 0.
fn expansion_matrix<T: Real>(k: usize, l: usize, stride: usize) -> Tensor<T> {
    let c = l.div_ceil(stride);
    let (rows, cols) = (k * (2 * c + 1), k * (2 * l + 1));
    let mut m = vec![0.0; rows * cols];
    for i in 0..k {
        m[i * cols + i] = 1.0;
    }
    let time = |j: usize| (j * stride).min(l) as f64;
    for mode in 0..k {
        let (src, dst) = (k + mode * 2 * c, k + mode * 2 * l);
        for step in 1..=l {
            let j = step.div_ceil(stride);
            let (t0, t1) = (time(j - 1), time(j));
            let w = (step as f64 - t0) / (t1 - t0);
            for axis in 0..2 {
                let col = dst + 2 * (step - 1) + axis;
                m[(src + 2 * (j - 1) + axis) * cols + col] += w;
                if j > 1 {
                    m[(src + 2 * (j - 2) + axis) * cols + col] += 1.0 - w;
                }
            }
        }
    }
    Tensor::from_f64(&[rows, cols], &m)
}

/// Raw decoder output `1 x K(2L+1)`, averaged with the reflected scene's output so that
/// mirror-image scenes decode to mirror-image futures. Layout: K logits, then per mode
/// L interleaved (x, y) waypoints in head units.
pub fn decode_graph<T: Real>(
    net: &TrajectoryNet,
    store: &ParamStore<T>,
    g: &mut Graph<T>,
    view: &VehicleView,
) -> Result<Var> {
    let (k, l) = (net.config.mixtures, net.config.future_steps);
    let direct = single_pass(net, store, g, &view.rows, view.region)?;
    let reflected = single_pass(net, store, g, &view.mirrored_rows(), view.region)?;
    let mut flip = vec![1.0; k * (2 * l + 1)];
    for m in 0..k {
        for s in 0..l {
            flip[k + m * 2 * l + 2 * s] = -1.0;
        }
    }
    let flip = g.input(Tensor::from_f64(&[1, flip.len()], &flip));
    let reflected = g.mul(reflected, flip)?;
    let sum = g.add(direct, reflected)?;
    Ok(g.scale(sum, 0.5))
}

fn modes_from_raw(raw: &[f64], k: usize, l: usize) -> TrajectoryModes {
    let logits = raw[..k].to_vec();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let waypoints = (0..k)
        .map(|mode| {
            let base = k + mode * 2 * l;
            (0..l)
                .map(|i| Vec2::new(raw[base + 2 * i], raw[base + 2 * i + 1]) * WAYPOINT_SCALE)
                .collect()
        })
        .collect();
    TrajectoryModes {
        waypoints,
        logits,
        probs: e.into_iter().map(|x| x / s).collect(),
    }
}

/// Decodes K futures for one vehicle of a snapshot, in that vehicle's frame.
pub fn decode_modes(model: &TrajectoryModel, snap: &Snapshot, vehicle_id: &str) -> Result<TrajectoryModes> {
    let view = vehicle_view(snap, vehicle_id)?;
    let mut g = Graph::<f32>::new();
    let out = decode_graph(&model.net, &model.params, &mut g, &view)?;
    let cfg = &model.net.config;
    Ok(modes_from_raw(&g.value(out).to_f64_vec(), cfg.mixtures, cfg.future_steps))
}

pub fn sample_mode<R: Rng + ?Sized>(modes: &TrajectoryModes, rng: &mut R) -> usize {
    draw_categorical(&modes.probs, rng)
}

/// Closest-mode regression plus classification toward that mode. `target` holds the
/// L ground-truth waypoints in the vehicle frame. Errors are measured in meters.
pub fn trajectory_loss<T: Real>(g: &mut Graph<T>, raw: Var, k: usize, target: &[Vec2]) -> Result<Var> {
    let l = target.len();
    let width = g.value(raw).cols();
    if width != k * (2 * l + 1) {
        return Err(Error::shape(
            "trajectory_loss",
            format!("output width {width} does not fit {k} modes of {l} steps"),
        ));
    }
    let gt: Vec<f64> = target
        .iter()
        .flat_map(|p| [p.x / WAYPOINT_SCALE, p.y / WAYPOINT_SCALE])
        .collect();
    let values = g.value(raw).to_f64_vec();
    let best = (0..k)
        .map(|m| {
            let pred = &values[k + m * 2 * l..k + (m + 1) * 2 * l];
            pred.iter().zip(&gt).map(|(p, t)| (p - t) * (p - t)).sum::<f64>()
        })
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (m, e)| if e < acc.1 { (m, e) } else { acc })
        .0;
    let mode = g.slice_cols(raw, k + best * 2 * l, 2 * l)?;
    let mode = g.scale(mode, WAYPOINT_SCALE);
    let gt: Vec<f64> = gt.iter().map(|x| x * WAYPOINT_SCALE).collect();
    let gt = g.input(Tensor::from_f64(&[1, 2 * l], &gt));
    let mse = g.mse(mode, gt)?;
    let logits = g.slice_cols(raw, 0, k)?;
    let logp = g.log_softmax(logits);
    let chosen = g.slice_cols(logp, best, 1)?;
    let ce = g.scale(chosen, -1.0);
    let ce = g.sum(ce);
    g.add(mse, ce)
}

/// Rollout length and re-decoding interval, in steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub interval: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            horizon: 90,
            interval: 90,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self, future_steps: usize) -> Result<()> {
        if self.horizon == 0 || self.interval == 0 || self.interval > future_steps {
            return Err(Error::Config(format!(
                "rollout needs 1 <= interval ({}) <= decoded steps ({future_steps}) and horizon ({}) >= 1",
                self.interval, self.horizon
            )));
        }
        Ok(())
    }

    pub fn segments(&self) -> usize {
        self.horizon.div_ceil(self.interval)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random stream for one vehicle and segment.
pub fn segment_rng(seed: u64, vehicle_id: &str, segment: usize) -> ChaCha8Rng {
    let id_hash = vehicle_id
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    let s = splitmix(splitmix(seed) ^ id_hash);
    ChaCha8Rng::seed_from_u64(splitmix(s ^ segment as u64))
}

/// Turns the first `n` waypoints of a mode into consecutive states after `start`.
/// `history` holds the positions leading up to and including `start`; speeds are
/// measured over the last [`SPEED_WINDOW`] steps of the combined path.
fn extend_states(start: &Vehicle, history: &[Vec2], waypoints: &[Vec2], n: usize, dt: f64) -> Vec<TrackState> {
    let frame = LocalFrame::from_pose(Pose {
        pos: start.pos,
        heading: start.heading,
    });
    let mut path: Vec<Vec2> = history[history.len().saturating_sub(SPEED_WINDOW)..].to_vec();
    if path.last() != Some(&start.pos) {
        path.push(start.pos);
    }
    let mut heading = start.heading;
    waypoints[..n]
        .iter()
        .map(|w| {
            let p = frame.point_to_world(*w);
            let prev = *path.last().expect("path starts at the vehicle");
            let d = p - prev;
            let ahead = d.x * heading.cos() + d.y * heading.sin();
            if d.norm() >= MIN_HEADING_STEP && ahead > 0.0 {
                heading = d.angle();
            }
            path.push(p);
            let back = (path.len() - 1).min(SPEED_WINDOW);
            let speed = p.dist(path[path.len() - 1 - back]) / (back as f64 * dt);
            TrackState {
                x: p.x,
                y: p.y,
                heading,
                speed,
                length: start.length,
                width: start.width,
                valid: true,
            }
        })
        .collect()
}

/// A rolled-out scenario and the number of decoder calls it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub scenario: Scenario,
    pub decodes: usize,
}

/// Rolls every vehicle of `snap` forward `horizon` steps, re-decoding all vehicles from
/// the updated scene every `interval` steps. Light states stay at their snapshot values.
pub fn rollout(model: &TrajectoryModel, snap: &Snapshot, cfg: RolloutConfig, seed: u64) -> Result<Rollout> {
    cfg.validate(model.net.config.future_steps)?;
    let mut tracks: Vec<VehicleTrack> = snap
        .vehicles
        .iter()
        .map(|v| VehicleTrack {
            id: v.id.clone(),
            states: vec![v.state()],
        })
        .collect();
    let mut current = snap.clone();
    let mut decodes = 0;
    for segment in 0..cfg.segments() {
        let n = cfg.interval.min(cfg.horizon - segment * cfg.interval);
        let extensions: Vec<Vec<TrackState>> = current
            .vehicles
            .par_iter()
            .zip(tracks.par_iter())
            .map(|(v, track)| {
                let modes = decode_modes(model, &current, &v.id)?;
                let k = sample_mode(&modes, &mut segment_rng(seed, &v.id, segment));
                let history: Vec<Vec2> = track.states.iter().filter(|s| s.valid).map(|s| s.pos()).collect();
                Ok(extend_states(v, &history, &modes.waypoints[k], n, snap.dt))
            })
            .collect::<Result<_>>()?;
        decodes += extensions.len();
        for ((track, vehicle), ext) in tracks.iter_mut().zip(&mut current.vehicles).zip(extensions) {
            let last = *ext.last().expect("segments are non-empty");
            vehicle.pos = last.pos();
            vehicle.heading = last.heading;
            vehicle.speed = last.speed;
            track.states.extend(ext);
        }
    }
    let horizon = cfg.horizon + 1;
    let map = LaneMap {
        lanes: snap.map.lanes.clone(),
        traffic_lights: snap
            .map
            .traffic_lights
            .iter()
            .map(|tl| TrafficLight {
                lane_id: tl.lane_id.clone(),
                states: vec![snap.lights.get(&tl.lane_id).copied().unwrap_or_default(); horizon],
            })
            .collect(),
    };
    Ok(Rollout {
        scenario: Scenario {
            dt: snap.dt,
            ego_id: snap.vehicles.first().map(|v| v.id.clone()),
            map: std::sync::Arc::new(map),
            tracks,
        },
        decodes,
    })
}

/// Extends every track that stops before the final step, from its last valid state to
/// the end of the scenario, re-decoding every `interval` steps against the scene at that time.
pub fn inpaint(model: &TrajectoryModel, s: &Scenario, interval: usize, seed: u64) -> Result<Scenario> {
    RolloutConfig {
        horizon: 1,
        interval,
    }
    .validate(model.net.config.future_steps)?;
    let horizon = s.horizon();
    let mut out = s.clone();
    let mut pending: Vec<(usize, String)> = s
        .tracks
        .iter()
        .filter_map(|t| t.last_valid().filter(|&l| l + 1 < horizon).map(|l| (l, t.id.clone())))
        .collect();
    pending.sort();
    for (last, id) in pending {
        let ti = out.tracks.iter().position(|t| t.id == id).expect("track exists");
        let mut t = last;
        let mut segment = 0;
        while t + 1 < horizon {
            let snap = Snapshot::at_step(&out, t);
            let modes = decode_modes(model, &snap, &id)?;
            let k = sample_mode(&modes, &mut segment_rng(seed, &id, segment));
            let n = interval.min(horizon - 1 - t);
            let start = snap.vehicle(&id).expect("valid at t").clone();
            let history: Vec<Vec2> = out.tracks[ti].states[..=t].iter().filter(|s| s.valid).map(|s| s.pos()).collect();
            let ext = extend_states(&start, &history, &modes.waypoints[k], n, s.dt);
            out.tracks[ti].states[t + 1..t + 1 + n].copy_from_slice(&ext);
            t += n;
            segment += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closest_mode_loss() {
        let target = vec![Vec2::new(0.0, 2.0), Vec2::new(0.0, 4.0)];
        // K = 2, L = 2: logits, mode 0 far, mode 1 exact.
        let raw = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.1, 0.0, 0.2];
        let mut g = Graph::<f64>::new();
        let r = g.input(Tensor::from_f64(&[1, 10], &raw));
        let loss = trajectory_loss(&mut g, r, 2, &target).unwrap();
        assert!((g.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn control_points_interpolate() {
        // K = 1, L = 5, stride 2: control points at steps 2, 4, 5.
        let m: Tensor<f64> = expansion_matrix(1, 5, 2);
        let controls = [0.5, 2.0, 0.0, 4.0, 1.0, 6.0, -1.0];
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(&[1, 7], &controls));
        let e = g.input(m);
        let out = g.matmul(x, e).unwrap();
        let got = g.value(out).to_f64_vec();
        let want = [0.5, 1.0, 0.0, 2.0, 0.0, 3.0, 0.5, 4.0, 1.0, 6.0, -1.0];
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn rng_streams_differ() {
        let a: u64 = segment_rng(1, "a", 0).random();
        let b: u64 = segment_rng(1, "a", 1).random();
        let c: u64 = segment_rng(1, "b", 0).random();
        let a2: u64 = segment_rng(1, "a", 0).random();
        assert_eq!(a, a2);
        assert!(a != b && a != c && b != c);
    }

    #[test]
    fn extend_keeps_heading_when_still() {
        let v = Vehicle {
            id: "v".into(),
            pos: Vec2::new(3.0, 4.0),
            heading: 0.7,
            speed: 0.0,
            length: 4.0,
            width: 2.0,
        };
        let ext = extend_states(&v, &[], &[Vec2::new(0.0, 0.0); 3], 3, 0.1);
        assert!(ext.iter().all(|s| s.pos() == v.pos && s.heading == 0.7 && s.speed == 0.0));
        let ahead = extend_states(&v, &[v.pos], &[Vec2::new(0.0, 1.0)], 1, 0.1);
        assert!((ahead[0].heading - 0.7).abs() < 1e-12);
        assert!((ahead[0].speed - 10.0).abs() < 1e-9);
    }
}
