//! Training orchestration for both networks and the synthetic corpora used to check
//! that training recovers known distributions.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuation::{advance, idm_accel, scene_accels, Agent, IdmParams, PathFollower, LOOKAHEAD, MIN_GAP};
use crate::error::{Error, Result};
use crate::geom::{cumulative_lengths, point_at_arc, tangent_at_arc, Vec2};
use crate::model::{ModelConfig, PlacementModel, TrajectoryModel};
use crate::placement::{mask_regions, placement_loss, LENGTH_RANGE, WIDTH_RANGE};
use crate::scenario::{
    read_scenario, split_snapshots, write_scenario_file, Lane, LaneMap, LaneType, Scenario, Snapshot,
    TrackState, VehicleTrack, DEFAULT_DT, SNAPSHOT_INTERVAL,
};
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use crate::trajectory::{decode_graph, trajectory_loss, vehicle_view, VehicleView};
use crate::vectorize::{assign_vehicles, chunk_lanes, snapshot_regions, LocalFrame, Pose, VectorFeature, SEGMENT_LENGTH};

/// Which vehicles of a snapshot supply trajectory targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajAgents {
    #[default]
    Ego,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Anneal the learning rate to zero along a half cosine over all epochs.
    pub cosine_decay: bool,
    /// Snapshots (placement) or vehicle futures (trajectory) per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    /// Directories of scenario files.
    pub corpus: Vec<PathBuf>,
    /// Weights written after every epoch.
    pub checkpoint: Option<PathBuf>,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub snapshot_interval: f64,
    pub traj_agents: TrajAgents,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 3e-4,
            cosine_decay: false,
            batch_size: 32,
            seed: 0,
            corpus: Vec::new(),
            checkpoint: None,
            clip_norm: 5.0,
            snapshot_interval: SNAPSHOT_INTERVAL,
            traj_agents: TrajAgents::Ego,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.clip_norm >= 0.0) || !(self.snapshot_interval > 0.0) {
            return Err(Error::Config(
                "learning_rate and clip_norm must be non-negative and snapshot_interval positive".into(),
            ));
        }
        self.model.validate()
    }
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Placement,
    Trajectory,
}

/// One snapshot with its vectorized features.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementRecord {
    pub source: String,
    pub snapshot: Snapshot,
    pub features: Vec<VectorFeature>,
}

/// One vehicle of one snapshot and its ground-truth future in its own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub source: String,
    pub vehicle: String,
    pub snapshot: Snapshot,
    pub view: VehicleView,
    pub future: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Placement(Vec<PlacementRecord>),
    Trajectory(Vec<TrajectoryRecord>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Placement(r) => r.len(),
            Dataset::Trajectory(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetReport {
    pub files: usize,
    /// Files that could not be read, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
    /// Scenarios too short to supply one full future.
    pub too_short: usize,
    pub records: usize,
}

impl DatasetReport {
    pub fn summary(&self) -> String {
        format!(
            "{} files, {} records, {} unreadable, {} too short",
            self.files,
            self.records,
            self.skipped.len(),
            self.too_short
        )
    }
}

/// Snapshots of one scenario with their features. Snapshots without vehicles are kept:
/// they still teach the occupancy head nothing is there, but they cannot be masked,
/// so training skips them.
pub fn placement_records(s: &Scenario, source: &str, interval: f64) -> Result<Vec<PlacementRecord>> {
    Ok(split_snapshots(s, interval)?
        .into_iter()
        .map(|snapshot| {
            let regions = snapshot_regions(&snapshot);
            let features = assign_vehicles(&snapshot, &regions).features;
            PlacementRecord {
                source: source.to_string(),
                snapshot,
                features,
            }
        })
        .collect())
}

/// Future positions of `id` over the `steps` steps after `step`, in the frame of its
/// pose at `step`. `None` when any of those steps is invalid or out of range.
pub fn future_in_frame(s: &Scenario, id: &str, step: usize, steps: usize) -> Option<Vec<Vec2>> {
    let track = s.track(id)?;
    let now = track.states.get(step).filter(|st| st.valid)?;
    let frame = LocalFrame::from_pose(Pose {
        pos: now.pos(),
        heading: now.heading,
    });
    track
        .states
        .get(step + 1..=step + steps)?
        .iter()
        .map(|st| st.valid.then(|| frame.point_to_local(st.pos())))
        .collect()
}

/// Vehicle futures of one scenario. Returns `None` when the scenario is shorter than
/// one full future.
pub fn trajectory_records(
    s: &Scenario,
    source: &str,
    interval: f64,
    future_steps: usize,
    agents: TrajAgents,
) -> Result<Option<Vec<TrajectoryRecord>>> {
    if s.horizon() <= future_steps {
        return Ok(None);
    }
    let mut out = Vec::new();
    for snapshot in split_snapshots(s, interval)? {
        let ids: Vec<String> = match agents {
            TrajAgents::Ego => s.ego_id.iter().filter(|id| snapshot.vehicle(id).is_some()).cloned().collect(),
            TrajAgents::All => snapshot.vehicles.iter().map(|v| v.id.clone()).collect(),
        };
        for id in ids {
            let Some(future) = future_in_frame(s, &id, snapshot.step, future_steps) else {
                continue;
            };
            match vehicle_view(&snapshot, &id) {
                Ok(view) => out.push(TrajectoryRecord {
                    source: source.to_string(),
                    vehicle: id,
                    snapshot: snapshot.clone(),
                    view,
                    future,
                }),
                Err(e) => log::debug!("{source}: vehicle `{id}` at step {} skipped: {e}", snapshot.step),
            }
        }
    }
    Ok(Some(out))
}

/// Interchange files in a directory, sorted by name.
pub fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads every scenario in the corpus directories and turns them into training records.
pub fn build_dataset(
    dirs: &[PathBuf],
    mode: Mode,
    interval: f64,
    model: &ModelConfig,
    agents: TrajAgents,
) -> Result<(Dataset, DatasetReport)> {
    let mut report = DatasetReport::default();
    let mut placement = Vec::new();
    let mut trajectory = Vec::new();
    for dir in dirs {
        for path in corpus_files(dir)? {
            report.files += 1;
            let source = path.display().to_string();
            let s = match read_scenario(&path) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("skipping {source}: {e}");
                    report.skipped.push((path, e.to_string()));
                    continue;
                }
            };
            match mode {
                Mode::Placement => placement.extend(placement_records(&s, &source, interval)?),
                Mode::Trajectory => match trajectory_records(&s, &source, interval, model.future_steps, agents)? {
                    Some(r) => trajectory.extend(r),
                    None => report.too_short += 1,
                },
            }
        }
    }
    let data = match mode {
        Mode::Placement => Dataset::Placement(placement),
        Mode::Trajectory => Dataset::Trajectory(trajectory),
    };
    report.records = data.len();
    Ok((data, report))
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
}

pub fn loss_log_csv(log: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,split,loss\n");
    for e in log {
        s.push_str(&format!("{},{},{:.6}\n", e.epoch, e.split, e.loss));
    }
    s
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream for one example in one epoch.
pub fn example_rng(seed: u64, epoch: usize, example: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ epoch as u64) ^ example as u64))
}

fn add_into(acc: &mut [Option<Tensor<f32>>], grads: Vec<Option<Tensor<f32>>>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        let Some(g) = g else { continue };
        match a {
            Some(t) => t.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
            None => *a = Some(g),
        }
    }
}

/// Runs mini-batch Adam over `count` examples. Example gradients are computed in
/// parallel and summed in batch order, so results do not depend on thread scheduling.
pub fn fit<F>(
    params: &mut ParamStore<f32>,
    count: usize,
    cfg: &TrainConfig,
    loss_of: F,
    on_epoch: &mut dyn FnMut(&EpochLoss, &ParamStore<f32>) -> Result<()>,
) -> Result<Vec<EpochLoss>>
where
    F: Fn(&mut Graph<f32>, &ParamStore<f32>, usize, usize) -> Result<Option<Var>> + Sync,
{
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut log = Vec::with_capacity(cfg.epochs);
    let total_steps = cfg.epochs * count.div_ceil(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ mix(epoch as u64))));
        let mut total = 0.0;
        let mut used = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let store = &*params;
            let results: Vec<Option<(f64, Vec<Option<Tensor<f32>>>)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = Graph::new();
                    let Some(loss) = loss_of(&mut g, store, i, epoch)? else {
                        return Ok(None);
                    };
                    let value = g.value(loss).item() as f64;
                    if !value.is_finite() {
                        return Err(Error::Divergence { epoch, loss: value });
                    }
                    Ok(Some((value, g.backward(loss).param_grads(store))))
                })
                .collect::<Result<_>>()?;
            let mut acc: Vec<Option<Tensor<f32>>> = vec![None; params.len()];
            let mut n = 0usize;
            for (loss, grads) in results.into_iter().flatten() {
                total += loss;
                n += 1;
                add_into(&mut acc, grads);
            }
            if n == 0 {
                continue;
            }
            used += n;
            let inv = 1.0 / n as f32;
            let mut sq = 0.0f64;
            for t in acc.iter_mut().flatten() {
                for x in t.data_mut() {
                    *x *= inv;
                    sq += (*x as f64) * (*x as f64);
                }
            }
            let norm = sq.sqrt();
            if !norm.is_finite() {
                return Err(Error::Divergence { epoch, loss: norm });
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                let s = (cfg.clip_norm / norm) as f32;
                acc.iter_mut().flatten().for_each(|t| t.data_mut().iter_mut().for_each(|x| *x *= s));
            }
            if cfg.cosine_decay {
                let progress = adam.steps() as f64 / total_steps as f64;
                adam.cfg.lr = cfg.learning_rate * 0.5 * (1.0 + (PI * progress).cos());
            }
            adam.step(params, &acc);
        }
        if used == 0 {
            return Err(Error::Empty("no usable training example".into()));
        }
        let entry = EpochLoss {
            epoch,
            split: "train".into(),
            loss: total / used as f64,
        };
        log::info!("epoch {epoch}: loss {:.5}", entry.loss);
        on_epoch(&entry, params)?;
        log.push(entry);
    }
    Ok(log)
}

/// Trains a fresh placement network with masked reconstruction.
pub fn train_placement(
    cfg: &TrainConfig,
    records: &[PlacementRecord],
    on_epoch: &mut dyn FnMut(&EpochLoss, &PlacementModel) -> Result<()>,
) -> Result<(PlacementModel, Vec<EpochLoss>)> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Empty("placement dataset is empty".into()));
    }
    let mut model = PlacementModel::init(cfg.model.clone(), cfg.seed);
    let net = model.net.clone();
    let loss_of = |g: &mut Graph<f32>, store: &ParamStore<f32>, i: usize, epoch: usize| -> Result<Option<Var>> {
        let features = &records[i].features;
        if features.iter().all(|f| f.vehicle.is_none()) {
            return Ok(None);
        }
        let ex = mask_regions(features, &mut example_rng(cfg.seed, epoch, i))?;
        placement_loss(&net, store, g, &ex).map(Some)
    };
    let mut hook = |e: &EpochLoss, p: &ParamStore<f32>| {
        on_epoch(
            e,
            &PlacementModel {
                net: net.clone(),
                params: p.clone(),
            },
        )
    };
    let log = fit(&mut model.params, records.len(), cfg, loss_of, &mut hook)?;
    Ok((model, log))
}

/// Trains a fresh trajectory network on closest-mode regression.
pub fn train_trajectory(
    cfg: &TrainConfig,
    records: &[TrajectoryRecord],
    on_epoch: &mut dyn FnMut(&EpochLoss, &TrajectoryModel) -> Result<()>,
) -> Result<(TrajectoryModel, Vec<EpochLoss>)> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Empty("trajectory dataset is empty".into()));
    }
    let steps = cfg.model.future_steps;
    if let Some(r) = records.iter().find(|r| r.future.len() != steps) {
        return Err(Error::Config(format!(
            "record of `{}` has {} future steps, the model decodes {steps}",
            r.vehicle,
            r.future.len()
        )));
    }
    let mut model = TrajectoryModel::init(cfg.model.clone(), cfg.seed);
    let net = model.net.clone();
    let loss_of = |g: &mut Graph<f32>, store: &ParamStore<f32>, i: usize, _epoch: usize| -> Result<Option<Var>> {
        let r = &records[i];
        let raw = decode_graph(&net, store, g, &r.view)?;
        trajectory_loss(g, raw, net.config.mixtures, &r.future).map(Some)
    };
    let mut hook = |e: &EpochLoss, p: &ParamStore<f32>| {
        on_epoch(
            e,
            &TrajectoryModel {
                net: net.clone(),
                params: p.clone(),
            },
        )
    };
    let log = fit(&mut model.params, records.len(), cfg, loss_of, &mut hook)?;
    Ok((model, log))
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Single-step scenes with vehicles at a fixed spot of their region.
    #[default]
    Placement,
    /// Vehicles moving at constant speed and turn rate.
    ConstantVelocity,
    /// Two lanes merging into one, driven by the car-following model.
    Converging,
}

/// A `(mean, standard deviation)` pair.
pub type Gaussian = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub scenarios: usize,
    pub straight_lanes: usize,
    pub curved_lanes: usize,
    pub lane_spacing: f64,
    pub lane_length: f64,
    /// Rotate each scene's map by a random angle.
    pub rotate: bool,
    /// Chance that a free region receives a vehicle.
    pub occupancy: f64,
    /// Vehicle position in its region frame.
    pub local_position: [f64; 2],
    pub speed: Gaussian,
    pub length: Gaussian,
    pub width: Gaussian,
    /// Heading change per second for moving vehicles.
    pub turn_rate: f64,
    /// Time steps per scenario.
    pub steps: usize,
    pub dt: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: SyntheticKind::Placement,
            scenarios: 100,
            straight_lanes: 4,
            curved_lanes: 2,
            lane_spacing: 4.0,
            lane_length: 100.0,
            rotate: true,
            occupancy: 0.25,
            local_position: [0.0, 2.5],
            speed: [10.0, 1.5],
            length: [4.6, 0.3],
            width: [1.9, 0.1],
            turn_rate: 0.0,
            steps: 1,
            dt: DEFAULT_DT,
        }
    }
}

impl SyntheticSpec {
    /// Constant-velocity corpus with nine-second futures.
    pub fn constant_velocity() -> Self {
        SyntheticSpec {
            kind: SyntheticKind::ConstantVelocity,
            straight_lanes: 2,
            curved_lanes: 0,
            lane_length: 120.0,
            speed: [9.0, 1.2],
            steps: 91,
            ..Self::default()
        }
    }

    /// Merging-lanes corpus long enough for several snapshots with nine-second futures.
    pub fn converging() -> Self {
        SyntheticSpec {
            kind: SyntheticKind::Converging,
            rotate: false,
            speed: [10.0, 1.0],
            steps: 151,
            ..Self::default()
        }
    }

    /// Defaults for a corpus kind.
    pub fn preset(kind: SyntheticKind) -> Self {
        match kind {
            SyntheticKind::Placement => Self::default(),
            SyntheticKind::ConstantVelocity => Self::constant_velocity(),
            SyntheticKind::Converging => Self::converging(),
        }
    }

    /// Parses a settings file; keys it leaves out take the preset of its `kind`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config = |e: toml::de::Error| Error::Config(e.to_string());
        let given: toml::Table = toml::from_str(text).map_err(config)?;
        let kind: SyntheticKind = match given.get("kind") {
            Some(k) => k.clone().try_into().map_err(config)?,
            None => SyntheticKind::default(),
        };
        let mut merged = toml::Table::try_from(Self::preset(kind)).map_err(|e| Error::Config(e.to_string()))?;
        merged.extend(given);
        let spec: SyntheticSpec = merged.try_into().map_err(config)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let gaussians = [self.speed, self.length, self.width];
        if self.steps == 0
            || !(self.dt > 0.0)
            || !(self.lane_length > SEGMENT_LENGTH)
            || !(self.lane_spacing > 0.0)
            || !(0.0..=1.0).contains(&self.occupancy)
            || gaussians.iter().any(|g| !(g[1] >= 0.0) || !g[0].is_finite())
        {
            return Err(Error::Config("invalid synthetic corpus settings".into()));
        }
        if self.kind != SyntheticKind::Converging && self.straight_lanes + self.curved_lanes == 0 {
            return Err(Error::Config("synthetic maps need at least one lane".into()));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(g: Gaussian, rng: &mut R) -> f64 {
        Normal::new(g[0], g[1]).expect("validated").sample(rng)
    }

    fn draw_size<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        (
            Self::draw(self.length, rng).clamp(LENGTH_RANGE.0, LENGTH_RANGE.1),
            Self::draw(self.width, rng).clamp(WIDTH_RANGE.0, WIDTH_RANGE.1),
        )
    }
}

fn rotate(p: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

/// Parallel straight lanes centered on the origin with alternating directions, plus
/// concentric arcs to one side.
fn lane_map(spec: &SyntheticSpec, angle: f64) -> LaneMap {
    let half = spec.lane_length / 2.0;
    let mut lanes = Vec::new();
    let n = spec.straight_lanes;
    for i in 0..n {
        let y = (i as f64 - (n as f64 - 1.0) / 2.0) * spec.lane_spacing;
        let (a, b) = if i % 2 == 0 { (-half, half) } else { (half, -half) };
        lanes.push(Lane::new(
            format!("s{i}"),
            LaneType::Center,
            vec![Vec2::new(a, y), Vec2::new(b, y)],
        ));
    }
    let pivot = 150.0;
    let inner = pivot + (n as f64 / 2.0) * spec.lane_spacing + 20.0;
    for j in 0..spec.curved_lanes {
        let r = inner + j as f64 * spec.lane_spacing;
        let span = (half / r).asin();
        let pts = (0..=24)
            .map(|k| {
                let t = -span + 2.0 * span * k as f64 / 24.0;
                Vec2::new(r * t.sin(), r * t.cos() - pivot)
            })
            .collect();
        lanes.push(Lane::new(format!("c{j}"), LaneType::Center, pts));
    }
    LaneMap {
        lanes,
        traffic_lights: Vec::new(),
    }
    .map_points(|p| rotate(p, angle))
}

fn single_step_scenario(map: LaneMap, vehicles: Vec<(Pose, f64, f64, f64)>, dt: f64) -> Scenario {
    let tracks = vehicles
        .into_iter()
        .enumerate()
        .map(|(i, (pose, speed, length, width))| VehicleTrack {
            id: format!("v{i}"),
            states: vec![TrackState {
                x: pose.pos.x,
                y: pose.pos.y,
                heading: pose.heading,
                speed,
                length,
                width,
                valid: true,
            }],
        })
        .collect::<Vec<_>>();
    Scenario {
        dt,
        ego_id: tracks.first().map(|t: &VehicleTrack| t.id.clone()),
        map: Arc::new(map),
        tracks,
    }
}

fn placement_scene<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Scenario {
    let angle = if spec.rotate { rng.random_range(-PI..PI) } else { 0.0 };
    let map = lane_map(spec, angle);
    let q = Vec2::new(spec.local_position[0], spec.local_position[1]);
    let mut vehicles = Vec::new();
    let mut prev: Option<(String, bool)> = None;
    for region in chunk_lanes(&map, SEGMENT_LENGTH) {
        let same_lane_taken = prev.as_ref().is_some_and(|(lane, taken)| *lane == region.lane_id && *taken);
        let full = region.arc_length() >= SEGMENT_LENGTH - 1e-9;
        let take = full && !same_lane_taken && rng.random_bool(spec.occupancy);
        if take {
            let pose = region.frame().to_world(q, 0.0);
            let speed = SyntheticSpec::draw(spec.speed, rng).max(0.0);
            let (length, width) = spec.draw_size(rng);
            vehicles.push((pose, speed, length, width));
        }
        prev = Some((region.lane_id.clone(), take));
    }
    single_step_scenario(map, vehicles, spec.dt)
}

fn constant_velocity_scene<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Scenario {
    let angle = if spec.rotate { rng.random_range(-PI..PI) } else { 0.0 };
    let map = lane_map(spec, angle);
    let mut tracks = Vec::new();
    for lane in &map.lanes {
        let cum = cumulative_lengths(&lane.polyline);
        let mut s = rng.random_range(0.0..4.0);
        while s < 0.3 * cum.last().unwrap() {
            let pos = point_at_arc(&lane.polyline, &cum, s);
            let heading = tangent_at_arc(&lane.polyline, &cum, s).unwrap_or(0.0);
            let speed = SyntheticSpec::draw(spec.speed, rng).max(0.0);
            let (length, width) = spec.draw_size(rng);
            let states = (0..spec.steps)
                .scan((pos, heading), |(p, h), _| {
                    let st = TrackState {
                        x: p.x,
                        y: p.y,
                        heading: *h,
                        speed,
                        length,
                        width,
                        valid: true,
                    };
                    let mid = *h + 0.5 * spec.turn_rate * spec.dt;
                    *p = *p + Vec2::from_angle(mid) * (speed * spec.dt);
                    *h = crate::geom::wrap_angle(*h + spec.turn_rate * spec.dt);
                    Some(st)
                })
                .collect();
            tracks.push(VehicleTrack {
                id: format!("v{}", tracks.len()),
                states,
            });
            s += length + rng.random_range(8.0..16.0);
        }
    }
    Scenario {
        dt: spec.dt,
        ego_id: tracks.first().map(|t: &VehicleTrack| t.id.clone()),
        map: Arc::new(map),
        tracks,
    }
}

/// Main lane along x through the origin and a ramp joining it tangentially at the origin.
/// The main lane runs `before` meters upstream of the merge and `after` meters downstream.
pub fn converging_map(before: f64, after: f64) -> LaneMap {
    let main = Lane::new("a", LaneType::Center, vec![Vec2::new(-before, 0.0), Vec2::new(after, 0.0)]);
    let (p0, p1, p2) = (Vec2::new(-before, -20.0), Vec2::new(-before / 2.0, 0.0), Vec2::ZERO);
    let ramp_pts = (0..=24)
        .map(|k| {
            let t = k as f64 / 24.0;
            p0 * ((1.0 - t) * (1.0 - t)) + p1 * (2.0 * t * (1.0 - t)) + p2 * (t * t)
        })
        .collect();
    let mut ramp = Lane::new("b", LaneType::Center, ramp_pts);
    ramp.successors.push("a".into());
    LaneMap {
        lanes: vec![main, ramp],
        traffic_lights: Vec::new(),
    }
}

/// Car following plus zipper merging: before the merge point, every vehicle also follows
/// whichever vehicle is closest ahead of it in distance to the merge point.
fn merge_accels(agents: &[Agent], merge_arc: &[f64]) -> Vec<f64> {
    let own = scene_accels(agents);
    (0..agents.len())
        .map(|i| {
            let to_merge = |j: usize| merge_arc[j] - agents[j].follower.cursor;
            let di = to_merge(i);
            if di <= 0.0 {
                return own[i];
            }
            let lead = (0..agents.len())
                .filter(|&j| j != i)
                .filter(|&j| {
                    let dj = to_merge(j);
                    dj > -LOOKAHEAD && (dj < di || (dj == di && j < i))
                })
                .min_by(|&x, &y| to_merge(y).total_cmp(&to_merge(x)).then(x.cmp(&y)));
            match lead {
                Some(j) => {
                    let gap = (di - to_merge(j) - (agents[i].length + agents[j].length) / 2.0).max(MIN_GAP);
                    let a = &agents[i];
                    own[i].min(idm_accel(a.follower.speed, &a.idm, Some((gap, agents[j].follower.speed))))
                }
                None => own[i],
            }
        })
        .collect()
}

fn converging_scene<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Scenario {
    let before = spec.lane_length / 2.0;
    let after = before + spec.lane_length;
    let map = converging_map(before, after);
    let mut agents = Vec::new();
    let mut merge_arc = Vec::new();
    for lane in &map.lanes {
        let cum = cumulative_lengths(&lane.polyline);
        let total = *cum.last().unwrap();
        let (merge, upto) = if lane.id == "a" { (before, before - 10.0) } else { (total, total - 10.0) };
        let mut s = rng.random_range(0.0..6.0);
        while s < upto {
            let (length, width) = spec.draw_size(rng);
            let v0 = SyntheticSpec::draw(spec.speed, rng).max(2.0);
            let mut path: Vec<Vec2> = vec![point_at_arc(&lane.polyline, &cum, s)];
            path.extend(lane.polyline.iter().zip(&cum).filter(|(_, &c)| c > s).map(|(p, _)| *p));
            path.push(Vec2::new(after, 0.0));
            agents.push(Agent {
                id: format!("{}{}", lane.id, agents.len()),
                length,
                width,
                follower: PathFollower::new(path, v0, 0.0),
                idm: IdmParams::with_v0(v0),
            });
            merge_arc.push(merge - s);
            s += length + rng.random_range(10.0..30.0);
        }
    }
    let mut tracks: Vec<VehicleTrack> = agents
        .iter()
        .map(|a| VehicleTrack {
            id: a.id.clone(),
            states: Vec::with_capacity(spec.steps),
        })
        .collect();
    for step in 0..spec.steps {
        if step > 0 {
            agents = advance(&agents, &merge_accels(&agents, &merge_arc), spec.dt);
        }
        for (t, a) in tracks.iter_mut().zip(&agents) {
            let st = a.state();
            t.states.push(if a.follower.at_end() { TrackState::invalid() } else { st });
        }
    }
    Scenario {
        dt: spec.dt,
        ego_id: tracks.first().map(|t| t.id.clone()),
        map: Arc::new(map),
        tracks,
    }
}

/// Synthetic scenarios drawn deterministically from `seed`.
pub fn synthetic_scenarios(spec: &SyntheticSpec, seed: u64) -> Result<Vec<Scenario>> {
    spec.validate()?;
    Ok((0..spec.scenarios)
        .map(|i| {
            let mut rng = example_rng(seed, 0, i);
            match spec.kind {
                SyntheticKind::Placement => placement_scene(spec, &mut rng),
                SyntheticKind::ConstantVelocity => constant_velocity_scene(spec, &mut rng),
                SyntheticKind::Converging => converging_scene(spec, &mut rng),
            }
        })
        .collect())
}

/// Writes a synthetic corpus into `dir` as `synthetic-NNNNN.json`.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    synthetic_scenarios(spec, seed)?
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(format!("synthetic-{i:05}.json"));
            write_scenario_file(&path, s)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Vehicle;
    use crate::vectorize::best_region;

    #[test]
    fn placement_corpus_recovers_local_position() {
        let spec = SyntheticSpec {
            scenarios: 5,
            ..SyntheticSpec::default()
        };
        for s in synthetic_scenarios(&spec, 3).unwrap() {
            assert!(!s.tracks.is_empty());
            let regions = chunk_lanes(&s.map, SEGMENT_LENGTH);
            for t in &s.tracks {
                let v = Vehicle::from_state(&t.id, &t.states[0]);
                let (_, _, local) = best_region(&v, &regions).unwrap();
                assert!((local.q.x - 0.0).abs() < 1e-6 && (local.q.y - 2.5).abs() < 1e-6);
                assert!(local.h.abs() < 1e-6);
            }
            let snap = &split_snapshots(&s, SNAPSHOT_INTERVAL).unwrap()[0];
            assert_eq!(snap.vehicles.len(), s.tracks.len());
        }
    }

    #[test]
    fn constant_velocity_steps() {
        let spec = SyntheticSpec {
            scenarios: 2,
            speed: [10.0, 0.0],
            ..SyntheticSpec::constant_velocity()
        };
        for s in synthetic_scenarios(&spec, 1).unwrap() {
            for t in &s.tracks {
                for w in t.states.windows(2) {
                    assert!((w[0].pos().dist(w[1].pos()) - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn short_scenarios_are_excluded() {
        let spec = SyntheticSpec {
            scenarios: 1,
            steps: 50,
            ..SyntheticSpec::constant_velocity()
        };
        let s = &synthetic_scenarios(&spec, 0).unwrap()[0];
        assert!(trajectory_records(s, "x", 2.0, 90, TrajAgents::All).unwrap().is_none());
    }

    #[test]
    fn converging_corpus_is_valid() {
        let spec = SyntheticSpec {
            scenarios: 2,
            ..SyntheticSpec::converging()
        };
        for s in synthetic_scenarios(&spec, 5).unwrap() {
            s.validate().unwrap();
            assert!(s.tracks.len() >= 4);
        }
    }

    #[test]
    fn config_parses_toml() {
        let cfg = TrainConfig::from_toml(
            "epochs = 3\nbatch_size = 4\ntraj_agents = \"all\"\n[model]\nwidth = 8\nhead_hidden = [8]\nmixtures = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.traj_agents, TrajAgents::All);
        assert_eq!(cfg.model.width, 8);
        assert!(TrainConfig::from_toml("epoch = 3").is_err());
    }
}
