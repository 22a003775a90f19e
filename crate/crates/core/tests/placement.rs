use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trafficgen::model::{ModelConfig, PlacementModel};
use trafficgen::placement::{generate_snapshot, GmmParams, SampleOptions};
use trafficgen::scenario::Snapshot;
use trafficgen::training::{synthetic_scenarios, SyntheticSpec};
use trafficgen::vectorize::{assign_vehicles, passes_filters, snapshot_regions};

fn small_model(seed: u64) -> PlacementModel {
    PlacementModel::init(
        ModelConfig {
            width: 16,
            blocks: 2,
            head_hidden: vec![16],
            ..ModelConfig::desk()
        },
        seed,
    )
}

#[test]
fn generated_vehicles_survive_reassignment() {
    let maps = synthetic_scenarios(
        &SyntheticSpec {
            scenarios: 6,
            ..SyntheticSpec::default()
        },
        3,
    )
    .unwrap();
    for (i, s) in maps.iter().enumerate() {
        let model = small_model(i as u64);
        let out = generate_snapshot(&model, s.map.clone(), 12, 40 + i as u64, None, SampleOptions::default()).unwrap();
        let snap = &out.snapshot;
        assert!(out.exhausted || snap.vehicles.len() == 12);
        let regions = snapshot_regions(snap);
        assert!(snap.vehicles.iter().all(|v| passes_filters(v, &regions)));
        let a = assign_vehicles(snap, &regions);
        assert!(a.dropped.is_empty(), "scene {i}: {:?} dropped", a.dropped);
        assert_eq!(a.occupied().count(), snap.vehicles.len());
    }
}

#[test]
fn generation_extends_existing_vehicles_and_is_seeded() {
    let s = synthetic_scenarios(
        &SyntheticSpec {
            scenarios: 1,
            ..SyntheticSpec::default()
        },
        8,
    )
    .unwrap()
    .remove(0);
    let model = small_model(2);
    let start = Snapshot::at_step(&s, 0);
    let before = start.vehicles.len();
    let a = generate_snapshot(&model, s.map.clone(), before + 3, 5, Some(&start), SampleOptions::default()).unwrap();
    let b = generate_snapshot(&model, s.map.clone(), before + 3, 5, Some(&start), SampleOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.snapshot.vehicles[..before], start.vehicles[..]);
    let ids: std::collections::HashSet<_> = a.snapshot.vehicles.iter().map(|v| &v.id).collect();
    assert_eq!(ids.len(), a.snapshot.vehicles.len());
}

#[test]
fn empty_map_is_exhausted_at_once() {
    let model = small_model(0);
    let out = generate_snapshot(&model, Arc::new(Default::default()), 3, 0, None, SampleOptions::default()).unwrap();
    assert!(out.exhausted);
    assert!(out.snapshot.vehicles.is_empty());
}

fn entropy_check(gmm: &GmmParams) {
    let n = 100_000;
    let mut own = ChaCha8Rng::seed_from_u64(1);
    let mut independent = ChaCha8Rng::seed_from_u64(2);
    let nll = |rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|_| {
                let x = gmm.sample(rng);
                -gmm.logpdf(&x[..gmm.dim])
            })
            .sum::<f64>()
            / n as f64
    };
    let empirical = nll(&mut own);
    let reference = nll(&mut independent);
    assert!(
        (empirical - reference).abs() < 0.01 * reference.abs(),
        "{empirical} vs {reference}"
    );
}

#[test]
fn sample_likelihood_matches_entropy_estimate() {
    entropy_check(&GmmParams::univariate(vec![0.0, 1.0, -0.5], vec![-4.0, 0.0, 5.0], vec![0.8, 1.0, 0.5]));
    entropy_check(&GmmParams::bivariate(
        vec![0.3, -0.2],
        vec![[0.0, 0.0], [6.0, -3.0]],
        vec![[1.0, 0.7], [0.5, 1.2]],
        vec![0.6, -0.4],
    ));
}
