//! Vehicle placement: region occupancy logits, attribute mixtures, the masked
//! reconstruction loss and the autoregressive snapshot sampler.

pub mod gmm;

use std::collections::HashSet;
use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use gmm::{bivariate_loglik, univariate_loglik, GmmParams, LOG_SCALE_RANGE, RHO_LIMIT};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::metrics::vehicle_iou;
use crate::model::{PlacementModel, PlacementNet};
use crate::scenario::{LaneMap, Snapshot, Vehicle, DEFAULT_DT};
use crate::tensor::{Graph, ParamStore, Real, Tensor, Var};
use crate::vectorize::{
    assign_vehicles, best_region, feature_matrix, snapshot_regions, LocalVehicle, Region, VectorFeature,
};

/// Head-unit to meter/radian/m-s conversions for each attribute mixture.
pub const POS_SCALE: [f64; 2] = [5.0, 5.0];
pub const HEADING_SCALE: [f64; 2] = [1.0, 1.0];
pub const SPEED_SCALE: [f64; 2] = [10.0, 1.0];
pub const SIZE_SCALE: [f64; 2] = [5.0, 2.0];

/// Attribute redraws for one region before the region is given up.
pub const ATTRIBUTE_RETRIES: usize = 5;
pub const LENGTH_RANGE: (f64, f64) = (1.0, 15.0);
pub const WIDTH_RANGE: (f64, f64) = (0.5, 4.0);

/// A training example: some occupied regions have their vehicle hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedExample {
    /// Features with the masked vehicles removed.
    pub input: Vec<VectorFeature>,
    /// Ground-truth occupancy per region.
    pub occupancy: Vec<bool>,
    /// Hidden regions and their ground-truth vehicles, by ascending region index.
    pub masked: Vec<(usize, LocalVehicle)>,
}

/// Hides between one and all occupied regions, the count drawn uniformly.
pub fn mask_regions<R: Rng + ?Sized>(features: &[VectorFeature], rng: &mut R) -> Result<MaskedExample> {
    let occupied: Vec<usize> = features
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.vehicle.map(|_| i))
        .collect();
    if occupied.is_empty() {
        return Err(Error::Empty("no occupied region to mask".into()));
    }
    let count = rng.random_range(1..=occupied.len());
    let mut picks: Vec<usize> = sample_indices(rng, occupied.len(), count)
        .into_iter()
        .map(|k| occupied[k])
        .collect();
    picks.sort_unstable();
    let mut input = features.to_vec();
    let masked = picks
        .iter()
        .map(|&i| (i, input[i].vehicle.take().expect("occupied")))
        .collect();
    Ok(MaskedExample {
        input,
        occupancy: features.iter().map(|f| f.vehicle.is_some()).collect(),
        masked,
    })
}

fn target_rows<T: Real>(vs: &[LocalVehicle], f: impl Fn(&LocalVehicle) -> Vec<f64>) -> Tensor<T> {
    let rows: Vec<Vec<f64>> = vs.iter().map(f).collect();
    let cols = rows[0].len();
    Tensor::from_f64(&[rows.len(), cols], &rows.concat())
}

/// Log of the head-unit to physical-unit volume change summed over all attributes.
fn log_unit_volume() -> f64 {
    [POS_SCALE[0], POS_SCALE[1], HEADING_SCALE[0], SPEED_SCALE[0], SIZE_SCALE[0], SIZE_SCALE[1]]
        .iter()
        .map(|s| s.ln())
        .sum()
}

/// Mean occupancy cross-entropy over all regions plus the mean attribute negative
/// log-likelihood (in physical units) over the masked regions.
pub fn placement_loss<T: Real>(
    net: &PlacementNet,
    store: &ParamStore<T>,
    g: &mut Graph<T>,
    ex: &MaskedExample,
) -> Result<Var> {
    let m = g.input(feature_matrix(&ex.input));
    let (v, _) = net.encoder.encode(g, store, m)?;
    let logits = net.place.apply(g, store, v)?;
    let occupancy: Vec<f64> = ex.occupancy.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
    let bce = g.bce_with_logits(logits, Tensor::from_f64(&[occupancy.len(), 1], &occupancy))?;
    if ex.masked.is_empty() {
        return Ok(bce);
    }

    let idx: Vec<usize> = ex.masked.iter().map(|(i, _)| *i).collect();
    let truth: Vec<LocalVehicle> = ex.masked.iter().map(|(_, v)| *v).collect();
    let vm = g.gather_rows(v, &idx)?;

    let pos_t = g.input(target_rows(&truth, |v| vec![v.q.x / POS_SCALE[0], v.q.y / POS_SCALE[1]]));
    let head_t = g.input(target_rows(&truth, |v| vec![v.h / HEADING_SCALE[0]]));
    let speed_t = g.input(target_rows(&truth, |v| vec![v.speed / SPEED_SCALE[0]]));
    let size_t = g.input(target_rows(&truth, |v| vec![v.length / SIZE_SCALE[0], v.width / SIZE_SCALE[1]]));

    let pos_raw = net.pos.apply(g, store, vm)?;
    let head_raw = net.heading.apply(g, store, vm)?;
    let speed_raw = net.speed.apply(g, store, vm)?;
    let size_raw = net.size.apply(g, store, vm)?;

    let lp = bivariate_loglik(g, pos_raw, pos_t)?;
    let lh = univariate_loglik(g, head_raw, head_t)?;
    let ls = univariate_loglik(g, speed_raw, speed_t)?;
    let lz = bivariate_loglik(g, size_raw, size_t)?;
    let total = g.add(lp, lh)?;
    let total = g.add(total, ls)?;
    let total = g.add(total, lz)?;
    let mean_ll = g.mean(total);
    let nll = g.scale(mean_ll, -1.0);
    let nll = g.add_scalar(nll, log_unit_volume());
    g.add(bce, nll)
}

/// Attribute mixtures of one region, in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeGmms {
    pub pos: GmmParams,
    pub heading: GmmParams,
    pub speed: GmmParams,
    pub size: GmmParams,
}

impl AttributeGmms {
    /// Draws one local vehicle and applies the physical clamps.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LocalVehicle {
        let q = self.pos.sample(rng);
        let h = self.heading.sample(rng)[0];
        let speed = self.speed.sample(rng)[0].max(0.0);
        let [length, width] = self.size.sample(rng);
        LocalVehicle {
            q: Vec2::new(q[0], q[1]),
            h,
            speed,
            length: length.clamp(LENGTH_RANGE.0, LENGTH_RANGE.1),
            width: width.clamp(WIDTH_RANGE.0, WIDTH_RANGE.1),
        }
    }
}

/// Encoder outputs for the current scene, reused across draws within one insertion.
pub struct SceneEncoding {
    graph: Graph<f32>,
    regions: Var,
    /// Occupancy logit per region.
    pub logits: Vec<f64>,
}

pub fn encode_scene(model: &PlacementModel, features: &[VectorFeature]) -> Result<SceneEncoding> {
    let mut g = Graph::new();
    let m = g.input(feature_matrix(features));
    let (v, _) = model.net.encoder.encode(&mut g, &model.params, m)?;
    let l = model.net.place.apply(&mut g, &model.params, v)?;
    let logits = g.value(l).to_f64_vec();
    Ok(SceneEncoding {
        graph: g,
        regions: v,
        logits,
    })
}

impl SceneEncoding {
    pub fn attributes(&mut self, model: &PlacementModel, region: usize) -> Result<AttributeGmms> {
        let (net, store) = (&model.net, &model.params);
        let g = &mut self.graph;
        let row = g.gather_rows(self.regions, &[region])?;
        let mut head = |mlp: &crate::tensor::Mlp, dim: usize, scale: [f64; 2]| -> Result<GmmParams> {
            let out = mlp.apply(g, store, row)?;
            Ok(GmmParams::from_head(&g.value(out).to_f64_vec(), dim, scale))
        };
        Ok(AttributeGmms {
            pos: head(&net.pos, 2, POS_SCALE)?,
            heading: head(&net.heading, 1, HEADING_SCALE)?,
            speed: head(&net.speed, 1, SPEED_SCALE)?,
            size: head(&net.size, 2, SIZE_SCALE)?,
        })
    }
}

/// Softmax of `logits` restricted to `candidates`, in candidate order.
pub fn candidate_probs(logits: &[f64], candidates: &[usize]) -> Vec<f64> {
    let m = candidates.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = candidates.iter().map(|&i| (logits[i] - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Draws an index from a discrete distribution.
pub fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOptions {
    /// When false every first draw is accepted as is.
    pub reject: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions { reject: true }
    }
}

/// Mutable state of a scene under construction.
#[derive(Debug, Clone)]
pub struct PlacementScene {
    pub regions: Vec<Region>,
    pub features: Vec<VectorFeature>,
    pub occupied: Vec<bool>,
    /// Every vehicle in the scene, including ones that hold no region.
    pub vehicles: Vec<Vehicle>,
}

impl PlacementScene {
    pub fn from_snapshot(snap: &Snapshot) -> Self {
        let regions = snapshot_regions(snap);
        let a = assign_vehicles(snap, &regions);
        PlacementScene {
            occupied: a.occupant.iter().map(Option::is_some).collect(),
            features: a.features,
            regions,
            vehicles: snap.vehicles.clone(),
        }
    }

    pub fn candidates(&self) -> Vec<usize> {
        (0..self.regions.len()).filter(|&i| !self.occupied[i]).collect()
    }

    fn accepts(&self, v: &Vehicle, local: &LocalVehicle, region: &Region) -> Option<(usize, LocalVehicle)> {
        if !region.contains_local(local.q) || local.h.abs() > FRAC_PI_2 {
            return None;
        }
        let (best, _, best_local) = best_region(v, &self.regions)?;
        if self.occupied[best] || self.vehicles.iter().any(|o| vehicle_iou(o, v) > 0.0) {
            return None;
        }
        Some((best, best_local))
    }

    fn insert(&mut self, region: usize, local: LocalVehicle, v: Vehicle) {
        self.occupied[region] = true;
        self.features[region].vehicle = Some(local);
        self.vehicles.push(v);
    }
}

/// A vehicle accepted into the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Placed {
    /// Region holding the vehicle in the scene features.
    pub region: usize,
    /// Region it was drawn from.
    pub drawn: usize,
    pub vehicle: Vehicle,
}

/// Places one vehicle: draws a region from the candidates, then attributes from that
/// region's mixtures, redrawing attributes and finally dropping regions on rejection.
/// Regions that fail are removed from `candidates`.
pub fn sample_vehicle<R: Rng + ?Sized>(
    model: &PlacementModel,
    scene: &mut PlacementScene,
    candidates: &mut Vec<usize>,
    id: String,
    rng: &mut R,
    opts: SampleOptions,
) -> Result<Placed> {
    if candidates.is_empty() {
        return Err(Error::Exhausted);
    }
    let mut enc = encode_scene(model, &scene.features)?;
    loop {
        if candidates.is_empty() {
            return Err(Error::Exhausted);
        }
        let probs = candidate_probs(&enc.logits, candidates);
        let slot = draw_categorical(&probs, rng);
        let drawn = candidates[slot];
        let gmms = enc.attributes(model, drawn)?;
        let region = scene.regions[drawn].clone();
        for _ in 0..=ATTRIBUTE_RETRIES {
            let local = gmms.sample(rng);
            let pose = region.frame().to_world(local.q, local.h);
            let vehicle = Vehicle {
                id: id.clone(),
                pos: pose.pos,
                heading: pose.heading,
                speed: local.speed,
                length: local.length,
                width: local.width,
            };
            let accepted = if opts.reject {
                scene.accepts(&vehicle, &local, &region)
            } else {
                Some((drawn, local))
            };
            if let Some((slot_region, slot_local)) = accepted {
                candidates.retain(|&c| c != drawn && c != slot_region);
                scene.insert(slot_region, slot_local, vehicle.clone());
                return Ok(Placed {
                    region: slot_region,
                    drawn,
                    vehicle,
                });
            }
        }
        log::debug!("region {drawn} rejected after {} attribute draws", ATTRIBUTE_RETRIES + 1);
        candidates.remove(slot);
    }
}

/// Result of a generation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub snapshot: Snapshot,
    /// True when the map ran out of usable regions before reaching the target count.
    pub exhausted: bool,
}

fn fresh_id(taken: &HashSet<String>, next: &mut usize) -> String {
    loop {
        let id = format!("gen{next}");
        *next += 1;
        if !taken.contains(&id) {
            return id;
        }
    }
}

/// Autoregressively adds vehicles until the scene holds `target` of them.
/// With `existing`, its vehicles are kept and condition every draw.
pub fn generate_snapshot(
    model: &PlacementModel,
    map: Arc<LaneMap>,
    target: usize,
    seed: u64,
    existing: Option<&Snapshot>,
    opts: SampleOptions,
) -> Result<Generated> {
    let mut snapshot = match existing {
        Some(s) => s.clone(),
        None => Snapshot::empty(map, DEFAULT_DT),
    };
    if snapshot.vehicles.len() >= target {
        return Ok(Generated {
            snapshot,
            exhausted: false,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = PlacementScene::from_snapshot(&snapshot);
    let mut candidates = scene.candidates();
    let mut taken: HashSet<String> = snapshot.vehicles.iter().map(|v| v.id.clone()).collect();
    let mut next = 0;
    while snapshot.vehicles.len() < target {
        let id = fresh_id(&taken, &mut next);
        match sample_vehicle(model, &mut scene, &mut candidates, id, &mut rng, opts) {
            Ok(placed) => {
                taken.insert(placed.vehicle.id.clone());
                snapshot.vehicles.push(placed.vehicle);
            }
            Err(Error::Exhausted) => {
                log::warn!(
                    "placement exhausted the map with {} of {target} vehicles",
                    snapshot.vehicles.len()
                );
                return Ok(Generated {
                    snapshot,
                    exhausted: true,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Generated {
        snapshot,
        exhausted: false,
    })
}

/// Placement probability of every region given the current snapshot; occupied regions get 0.
pub fn placement_heatmap(model: &PlacementModel, snap: &Snapshot) -> Result<(Vec<Region>, Vec<f64>)> {
    let scene = PlacementScene::from_snapshot(snap);
    let mut heat = vec![0.0; scene.regions.len()];
    let candidates = scene.candidates();
    if !candidates.is_empty() {
        let enc = encode_scene(model, &scene.features)?;
        for (&i, p) in candidates.iter().zip(candidate_probs(&enc.logits, &candidates)) {
            heat[i] = p;
        }
    }
    Ok((scene.regions, heat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::LaneType;
    use crate::vectorize::col;

    fn feature(vehicle: bool) -> VectorFeature {
        VectorFeature {
            start: Vec2::new(0.0, 0.0),
            end: Vec2::new(0.0, 5.0),
            lane_type: LaneType::Center,
            light: Default::default(),
            vehicle: vehicle.then_some(LocalVehicle {
                q: Vec2::new(0.1, 2.0),
                h: 0.1,
                speed: 8.0,
                length: 4.5,
                width: 1.9,
            }),
        }
    }

    #[test]
    fn single_occupied_always_masked() {
        let feats = vec![feature(false), feature(true), feature(false)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let ex = mask_regions(&feats, &mut rng).unwrap();
            assert_eq!(ex.masked.len(), 1);
            assert_eq!(ex.masked[0].0, 1);
            let m = feature_matrix::<f64>(&ex.input);
            assert!(m.row_slice(1)[col::OCCUPIED..].iter().all(|&x| x == 0.0));
            assert_eq!(ex.occupancy, vec![false, true, false]);
        }
    }

    #[test]
    fn nothing_to_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(mask_regions(&[feature(false)], &mut rng), Err(Error::Empty(_))));
    }

    #[test]
    fn candidate_softmax() {
        let p = candidate_probs(&[10.0, -10.0, -10.0], &[0, 1, 2]);
        assert!(p[0] > 0.9999);
        let p = candidate_probs(&[1.0, 5.0, 1.0], &[0, 2]);
        assert_eq!(p, vec![0.5, 0.5]);
    }
}
