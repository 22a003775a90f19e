use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use trafficgen::scenario::{read_scenario, write_scenario_file};

fn tg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trafficgen"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synthetic(dir: &Path, kind: &str, n: usize, out: &str) {
    fs::write(dir.join(format!("{out}.toml")), format!("kind = \"{kind}\"\nscenarios = {n}\n")).unwrap();
    let r = tg(dir, &["make-synthetic", "--config", &format!("{out}.toml"), "--seed", "3", "--out", out]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
}

/// Checks that every tag is closed in order and that there is exactly one root element.
fn assert_well_formed(svg: &str) {
    let mut stack: Vec<String> = Vec::new();
    let mut roots = 0;
    let mut rest = svg;
    while let Some(open) = rest.find('<') {
        let close = rest[open..].find('>').expect("unterminated tag") + open;
        let tag = &rest[open + 1..close];
        rest = &rest[close + 1..];
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            assert_eq!(stack.pop().as_deref(), Some(name.trim()), "mismatched closing tag");
            continue;
        }
        let name = tag.split_whitespace().next().unwrap().trim_end_matches('/').to_string();
        if stack.is_empty() {
            roots += 1;
        }
        if !tag.ends_with('/') {
            stack.push(name);
        }
    }
    assert!(stack.is_empty(), "unclosed tags {stack:?}");
    assert_eq!(roots, 1);
    assert!(rest.trim().is_empty());
}

#[test]
fn usage_errors_exit_one_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["make-synthetic", "--seed", "1"][..],
        &["generate", "--map", "m.json", "--num", "3"],
        &["evaluate", "--real", "a", "--gen", "b", "--bogus"],
        &["no-such-command"],
        &[],
    ] {
        let r = tg(dir.path(), args);
        assert_eq!(code(&r), 1, "{args:?}");
        assert!(!r.stderr.is_empty());
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    assert_eq!(code(&tg(dir.path(), &["--help"])), 0);
    assert_eq!(code(&tg(dir.path(), &["generate", "--help"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let r = tg(d, &["generate", "--map", "missing.json", "--num", "2", "--out", "s.json"]);
    assert_eq!(code(&r), 2);
    assert!(!d.join("s.json").exists());

    fs::write(d.join("bad.json"), "{\"dt\": 0.1}").unwrap();
    assert_eq!(code(&tg(d, &["simulate", "--scenario", "bad.json", "--out", "o.json"])), 2);

    synthetic(d, "placement", 3, "a");
    synthetic(d, "placement", 2, "b");
    assert_eq!(code(&tg(d, &["evaluate", "--real", "a", "--gen", "b"])), 2);

    let r = tg(d, &["render", "--scenario", "a/synthetic-00000.json", "--heatmap", "--out", "x.svg"]);
    assert_eq!(code(&r), 1);
}

#[test]
fn evaluating_a_corpus_against_itself_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic(d, "placement", 4, "real");
    let r = tg(d, &["evaluate", "--real", "real", "--gen", "real", "--out", "mmd.csv"]);
    assert_eq!(code(&r), 0);
    let csv = fs::read_to_string(d.join("mmd.csv")).unwrap();
    let scores: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(scores.len(), 4);
    assert!(scores.iter().all(|&s| s.abs() < 1e-9), "{csv}");
    assert!(stdout(&r).contains("Speed"));
}

#[test]
fn speed_shift_shows_up_in_the_speed_score() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic(d, "placement", 6, "real");
    fs::create_dir(d.join("fast")).unwrap();
    for entry in fs::read_dir(d.join("real")).unwrap() {
        let path = entry.unwrap().path();
        let mut s = read_scenario(&path).unwrap();
        for t in &mut s.tracks {
            for st in &mut t.states {
                st.speed += 10.0;
            }
        }
        write_scenario_file(&d.join("fast").join(path.file_name().unwrap()), &s).unwrap();
    }
    assert_eq!(code(&tg(d, &["evaluate", "--real", "real", "--gen", "fast", "--out", "mmd.csv"])), 0);
    let csv = fs::read_to_string(d.join("mmd.csv")).unwrap();
    let score = |name: &str| -> f64 {
        csv.lines().find_map(|l| l.strip_prefix(&format!("{name},"))).unwrap().parse().unwrap()
    };
    let speed = score("Speed");
    for other in ["Pos", "Heading", "Size"] {
        assert!(speed > score(other), "{csv}");
    }
}

#[test]
fn trajectory_evaluation_and_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic(d, "constant-velocity", 2, "cv");
    let r = tg(d, &["evaluate-traj", "--real", "cv", "--gen", "cv", "--out", "traj.csv"]);
    assert_eq!(code(&r), 0);
    let csv = fs::read_to_string(d.join("traj.csv")).unwrap();
    assert!(csv.starts_with("metric,score\n"));
    for line in csv.lines().filter(|l| l.starts_with("ADE") || l.starts_with("FDE")) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 0.0, "{line}");
    }

    let run = |out: &str| {
        assert_eq!(code(&tg(d, &["simulate", "--scenario", "cv/synthetic-00000.json", "--out", out])), 0);
        fs::read(d.join(out)).unwrap()
    };
    assert_eq!(run("sim1.json"), run("sim2.json"));
    let sim = read_scenario(&d.join("sim1.json")).unwrap();
    let orig = read_scenario(&d.join("cv/synthetic-00000.json")).unwrap();
    assert_eq!(sim.tracks.len(), orig.tracks.len());
    assert_eq!(sim.horizon(), orig.horizon());
}

#[test]
fn render_is_deterministic_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic(d, "constant-velocity", 1, "cv");
    let render = |out: &str| {
        let r = tg(d, &["render", "--scenario", "cv/synthetic-00000.json", "--timestep", "30", "--out", out]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        fs::read_to_string(d.join(out)).unwrap()
    };
    let a = render("a.svg");
    assert_eq!(a, render("b.svg"));
    assert!(a.contains("<svg") && a.contains("viewBox"));
    assert_well_formed(&a);
}

#[test]
fn ingest_crops_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic(d, "placement", 3, "raw");
    let r = tg(d, &["ingest", "--scenario", "raw", "--out", "clean"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let kept: Vec<_> = fs::read_dir(d.join("clean")).unwrap().collect();
    assert!(!kept.is_empty());
    for entry in kept {
        let s = read_scenario(&entry.unwrap().path()).unwrap();
        let ego = s.ego().unwrap();
        let first = ego.states[ego.first_valid().unwrap()];
        assert_eq!((first.x, first.y), (0.0, 0.0));
        assert!(s.tracks.len() >= 8);
    }
}
