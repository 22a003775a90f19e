use std::sync::Arc;

use proptest::prelude::*;
use trafficgen::actuation::{idm_accel, simulate, step_scene, Agent, IdmParams, PathFollower};
use trafficgen::geom::Vec2;
use trafficgen::metrics::scr;
use trafficgen::scenario::{Lane, LaneMap, LaneType, Scenario, TrackState, VehicleTrack};

fn road() -> Vec<Vec2> {
    vec![Vec2::new(0.0, 0.0), Vec2::new(1500.0, 0.0), Vec2::new(1600.0, 80.0), Vec2::new(3000.0, 80.0)]
}

fn agent(id: usize, cursor: f64, speed: f64, v0: f64) -> Agent {
    let mut follower = PathFollower::new(road(), speed, 0.0);
    follower.cursor = cursor;
    Agent {
        id: format!("a{id}"),
        length: 4.6,
        width: 1.9,
        follower,
        idm: IdmParams::with_v0(v0),
    }
}

fn to_scenario(frames: &[Vec<Agent>], dt: f64) -> Scenario {
    let tracks = (0..frames[0].len())
        .map(|i| VehicleTrack {
            id: frames[0][i].id.clone(),
            states: frames.iter().map(|f| f[i].state()).collect(),
        })
        .collect();
    Scenario {
        dt,
        ego_id: None,
        map: Arc::new(LaneMap {
            lanes: vec![Lane::new("road", LaneType::Center, road())],
            traffic_lights: vec![],
        }),
        tracks,
    }
}

#[test]
fn platoon_behind_braking_leader_never_collides() {
    let dt = 0.1;
    let mut agents: Vec<Agent> = (0..6).map(|i| agent(i, 200.0 - 20.0 * i as f64, 13.0, 15.0)).collect();
    let mut frames = vec![agents.clone()];
    for step in 0..600 {
        if step == 150 {
            agents[0].idm.v0 = 1.0;
        }
        if step == 400 {
            agents[0].idm.v0 = 12.0;
        }
        agents = step_scene(&agents, dt);
        frames.push(agents.clone());
    }
    let s = to_scenario(&frames, dt);
    assert_eq!(scr(&s, 0.01), 0.0);
    assert_eq!(scr(&s, 0.0), 0.0);
}

#[test]
fn stepping_is_deterministic() {
    let agents: Vec<Agent> = (0..4).map(|i| agent(i, 100.0 - 12.0 * i as f64, 8.0 + i as f64, 14.0)).collect();
    let run = || (0..300).fold(agents.clone(), |a, _| step_scene(&a, 0.1));
    assert_eq!(run(), run());
}

#[test]
fn acceleration_falls_as_the_gap_closes() {
    let p = IdmParams::default();
    let gaps = [200.0, 80.0, 40.0, 20.0, 10.0, 5.0, 2.0];
    let accels: Vec<f64> = gaps.iter().map(|&g| idm_accel(10.0, &p, Some((g, 10.0)))).collect();
    assert!(accels.windows(2).all(|w| w[1] <= w[0]), "{accels:?}");
    assert!(idm_accel(10.0, &p, None) >= accels[0]);
    assert_eq!(idm_accel(0.0, &p, None), p.max_accel);
    assert!(idm_accel(p.v0, &p, None).abs() < 1e-12);
    assert_eq!(idm_accel(20.0, &p, Some((0.5, 0.0))), -2.0 * p.comfort_decel);
}

#[test]
fn path_end_stops_the_agent() {
    let mut a = agent(0, 2990.0, 15.0, 15.0);
    let mut agents = vec![a.clone()];
    for _ in 0..50 {
        agents = step_scene(&agents, 0.1);
    }
    a = agents.pop().unwrap();
    assert!(a.follower.at_end());
    assert_eq!(a.follower.speed, 0.0);
    assert_eq!(a.follower.position(), Vec2::new(3000.0, 80.0));
}

#[test]
fn simulate_keeps_track_layout() {
    let states: Vec<TrackState> = (0..50)
        .map(|t| TrackState {
            x: t as f64 * 1.2,
            y: 0.0,
            heading: 0.0,
            speed: 12.0,
            length: 4.5,
            width: 1.9,
            valid: t >= 5,
        })
        .collect();
    let s = Scenario {
        dt: 0.1,
        ego_id: Some("v".into()),
        map: Arc::new(LaneMap::default()),
        tracks: vec![VehicleTrack { id: "v".into(), states }],
    };
    let out = simulate(&s);
    assert_eq!(out.tracks[0].states.len(), 50);
    assert_eq!(out.tracks[0].first_valid(), Some(5));
    let first = out.tracks[0].states[5];
    assert_eq!((first.x, first.y, first.speed), (6.0, 0.0, 12.0));
    assert!(out.tracks[0].states[5..].iter().all(|st| st.valid && st.speed >= 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn speeds_stay_non_negative_and_cursors_advance(
        starts in prop::collection::vec((0.0f64..400.0, 0.0f64..25.0, 5.0f64..25.0), 1..8),
        dt in 0.05f64..0.5,
    ) {
        let mut agents: Vec<Agent> = starts.iter().enumerate().map(|(i, &(c, v, v0))| agent(i, c, v, v0)).collect();
        for _ in 0..200 {
            let next = step_scene(&agents, dt);
            for (a, b) in agents.iter().zip(&next) {
                prop_assert!(b.follower.speed >= 0.0);
                prop_assert!(b.follower.cursor >= a.follower.cursor);
            }
            agents = next;
        }
    }
}
