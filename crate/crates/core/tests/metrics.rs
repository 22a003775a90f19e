use std::sync::Arc;

use proptest::prelude::*;
use trafficgen::geom::Vec2;
use trafficgen::metrics::{ade_fde, box_corners, box_iou, mmd2, scene_mmd_report, scr, Attribute, MmdConfig, MmdEstimator};
use trafficgen::scenario::{LaneMap, Scenario, Snapshot, TrackState, Vehicle, VehicleTrack};

fn points(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), 1..12)
}

fn track(id: &str, xs: &[(f64, f64, f64)]) -> VehicleTrack {
    VehicleTrack {
        id: id.into(),
        states: xs
            .iter()
            .map(|&(x, y, heading)| TrackState {
                x,
                y,
                heading,
                speed: 1.0,
                length: 4.0,
                width: 2.0,
                valid: true,
            })
            .collect(),
    }
}

fn scene(tracks: Vec<VehicleTrack>) -> Scenario {
    Scenario {
        dt: 0.1,
        ego_id: None,
        map: Arc::new(LaneMap::default()),
        tracks,
    }
}

proptest! {
    #[test]
    fn mmd_is_a_symmetric_non_negative_discrepancy(x in points(3), y in points(3), sigma in 0.2f64..3.0) {
        let cfg = MmdConfig { sigma, estimator: MmdEstimator::Biased };
        let xy = mmd2(&x, &y, &cfg).unwrap();
        prop_assert!(xy >= 0.0);
        prop_assert_eq!(xy, mmd2(&y, &x, &cfg).unwrap());
        prop_assert!(mmd2(&x, &x, &cfg).unwrap() < 1e-12);
    }

    #[test]
    fn collision_rate_falls_as_threshold_rises(
        boxes in prop::collection::vec((-8.0f64..8.0, -8.0f64..8.0, -3.0f64..3.0), 2..7),
        thresholds in prop::collection::vec(0.0f64..1.0, 2..6),
    ) {
        let s = scene(boxes.iter().enumerate().map(|(i, &b)| track(&format!("v{i}"), &[b])).collect());
        let mut sorted = thresholds.clone();
        sorted.sort_by(f64::total_cmp);
        let rates: Vec<f64> = sorted.iter().map(|&t| scr(&s, t)).collect();
        prop_assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{:?} at {:?}", rates, sorted);
        prop_assert!(rates.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn displacement_errors_are_bounded_and_translation_free(
        path in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 1..30),
        shift in (-1e3f64..1e3, -1e3f64..1e3),
    ) {
        let pred: Vec<Vec2> = path.iter().map(|p| Vec2::new(p.0, p.1)).collect();
        let gt: Vec<Vec2> = path.iter().map(|p| Vec2::new(p.2, p.3)).collect();
        let (ade, fde) = ade_fde(&pred, &gt).unwrap();
        prop_assert!(fde <= pred.len() as f64 * ade + 1e-9);
        let d = Vec2::new(shift.0, shift.1);
        let moved = |v: &[Vec2]| v.iter().map(|&p| p + d).collect::<Vec<_>>();
        let (ade2, fde2) = ade_fde(&moved(&pred), &moved(&gt)).unwrap();
        prop_assert!((ade - ade2).abs() < 1e-9 && (fde - fde2).abs() < 1e-9);
    }
}

#[test]
fn crafted_overlaps() {
    let overlapping = scene(vec![
        track("a", &[(0.0, 0.0, 0.0)]),
        track("b", &[(1.0, 0.0, 0.0)]),
        track("c", &[(20.0, 0.0, 0.0)]),
        track("d", &[(40.0, 0.0, 0.0)]),
    ]);
    assert_eq!(scr(&overlapping, 0.1), 0.5);
    let apart = scene(vec![track("a", &[(0.0, 0.0, 0.0)]), track("b", &[(10.0, 0.0, 0.0)])]);
    assert_eq!(scr(&apart, 0.0), 0.0);

    let a = box_corners(Vec2::new(0.0, 0.0), 0.0, 4.0, 2.0);
    let b = box_corners(Vec2::new(2.0, 0.0), 0.0, 4.0, 2.0);
    assert!((box_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    assert!((box_iou(&a, &a) - 1.0).abs() < 1e-12);
}

#[test]
fn empty_samples_and_length_mismatch_are_errors() {
    let cfg = MmdConfig::default();
    assert!(mmd2(&[], &[vec![1.0]], &cfg).is_err());
    assert!(mmd2(&[vec![1.0]], &[vec![1.0, 2.0]], &cfg).is_err());
    assert!(ade_fde(&[Vec2::new(0.0, 0.0)], &[]).is_err());
}

#[test]
fn report_of_identical_corpora_is_zero() {
    let map = Arc::new(LaneMap::default());
    let snaps: Vec<(String, Snapshot)> = (0..3)
        .map(|i| {
            let mut s = Snapshot::empty(map.clone(), 0.1);
            s.vehicles.push(Vehicle {
                id: "v".into(),
                pos: Vec2::new(i as f64, 2.0),
                heading: 0.1 * i as f64,
                speed: 5.0 + i as f64,
                length: 4.5,
                width: 1.9,
            });
            (format!("s{i}"), s)
        })
        .collect();
    let report = scene_mmd_report(&snaps, &snaps, &MmdConfig::default()).unwrap();
    for a in Attribute::ALL {
        assert!(report.get(a) < 1e-12, "{}", a.name());
    }
    assert!(report.to_csv().lines().count() > Attribute::ALL.len());
}
