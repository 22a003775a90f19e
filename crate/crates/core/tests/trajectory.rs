use proptest::prelude::*;
use trafficgen::geom::Vec2;
use trafficgen::model::{ModelConfig, TrajectoryModel};
use trafficgen::scenario::{Scenario, Snapshot};
use trafficgen::tensor::{Graph, Tensor};
use trafficgen::training::{synthetic_scenarios, SyntheticSpec};
use trafficgen::trajectory::{inpaint, rollout, trajectory_loss, RolloutConfig};

fn small_model(future_steps: usize) -> TrajectoryModel {
    TrajectoryModel::init(
        ModelConfig {
            width: 16,
            blocks: 2,
            head_hidden: vec![16],
            mixtures: 2,
            future_steps,
            waypoint_stride: 5,
            ..ModelConfig::desk()
        },
        17,
    )
}

fn scene(seed: u64) -> Scenario {
    let spec = SyntheticSpec {
        scenarios: 1,
        ..SyntheticSpec::constant_velocity()
    };
    synthetic_scenarios(&spec, seed).unwrap().remove(0)
}

#[test]
fn rollout_length_matches_horizon() {
    let model = small_model(30);
    let snap = Snapshot::at_step(&scene(1), 0);
    for (horizon, interval) in [(30, 30), (30, 10), (30, 1), (60, 15), (90, 30), (45, 9)] {
        let r = rollout(&model, &snap, RolloutConfig { horizon, interval }, 5).unwrap();
        assert_eq!(r.scenario.horizon(), horizon + 1, "H {horizon}, l {interval}");
        assert_eq!(r.decodes, snap.vehicles.len() * horizon / interval);
        for t in &r.scenario.tracks {
            assert_eq!(t.states.len(), horizon + 1);
            assert!(t.states.iter().all(|s| s.valid && s.speed >= 0.0 && s.x.is_finite() && s.y.is_finite()));
        }
    }
}

#[test]
fn rollout_rejects_intervals_beyond_the_decoder() {
    let model = small_model(30);
    let snap = Snapshot::at_step(&scene(2), 0);
    assert!(rollout(&model, &snap, RolloutConfig { horizon: 60, interval: 31 }, 0).is_err());
    assert!(rollout(&model, &snap, RolloutConfig { horizon: 0, interval: 10 }, 0).is_err());
}

#[test]
fn rollout_is_seed_deterministic() {
    let model = small_model(30);
    let snap = Snapshot::at_step(&scene(3), 0);
    let cfg = RolloutConfig { horizon: 60, interval: 10 };
    assert_eq!(rollout(&model, &snap, cfg, 9).unwrap(), rollout(&model, &snap, cfg, 9).unwrap());
}

#[test]
fn inpainting_fills_only_missing_tails() {
    let model = small_model(30);
    let mut s = scene(4);
    s.tracks.truncate(3);
    for st in &mut s.tracks[1].states[50..] {
        st.valid = false;
    }
    let filled = inpaint(&model, &s, 10, 1).unwrap();
    assert_eq!(filled.tracks[0], s.tracks[0]);
    assert_eq!(filled.tracks[2], s.tracks[2]);
    assert_eq!(filled.tracks[1].states[..50], s.tracks[1].states[..50]);
    assert!(filled.tracks[1].states.iter().all(|st| st.valid));
}

fn mse_term(modes: &[Vec<f64>], target: &[Vec2]) -> f64 {
    let k = modes.len();
    let mut raw = vec![0.0; k];
    for m in modes {
        raw.extend(m);
    }
    let mut g: Graph<f64> = Graph::new();
    let x = g.input(Tensor::new(&[1, raw.len()], raw));
    let loss = trajectory_loss(&mut g, x, k, target).unwrap();
    g.value(loss).item() - (k as f64).ln()
}

proptest! {
    #[test]
    fn duplicating_a_mode_never_raises_the_regression_term(
        modes in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 8), 1..4),
        target in prop::collection::vec((-40.0f64..40.0, -40.0f64..40.0), 4),
        pick in 0usize..4,
    ) {
        let target: Vec<Vec2> = target.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        let before = mse_term(&modes, &target);
        let mut more = modes.clone();
        more.push(modes[pick % modes.len()].clone());
        let after = mse_term(&more, &target);
        prop_assert!(after <= before + 1e-9, "{} -> {}", before, after);
    }
}
