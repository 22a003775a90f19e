use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trafficgen::actuation::simulate;
use trafficgen::metrics::{scenario_ade_fde, scene_mmd_report, scr, MmdConfig, DEFAULT_IOU_THRESHOLD};
use trafficgen::model::Weights;
use trafficgen::placement::{generate_snapshot, placement_heatmap, SampleOptions};
use trafficgen::render::{render_svg, RenderOptions};
use trafficgen::scenario::{
    filter_and_crop, read_scenario, write_scenario_file, Scenario, Snapshot, TrackState, VehicleTrack, CROP_SIDE,
    MIN_AGENTS,
};
use trafficgen::training::{
    build_dataset, corpus_files, loss_log_csv, make_synthetic, train_placement, train_trajectory, Dataset, Mode,
    SyntheticSpec, TrainConfig,
};
use trafficgen::trajectory::{inpaint, rollout, RolloutConfig};
use trafficgen::{Error, Result};

/// Weights manifest used when `--weights` is not given.
const DEFAULT_WEIGHTS: &str = "model.weights";

#[derive(Parser)]
#[command(name = "trafficgen", version, about = "Learned traffic scenario generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter and crop a raw scenario file (or a directory of them).
    Ingest(IngestArgs),
    /// Write a synthetic corpus.
    MakeSynthetic(SyntheticArgs),
    /// Train the placement network.
    TrainPlacement(TrainArgs),
    /// Train the trajectory network.
    TrainTrajectory(TrainArgs),
    /// Place vehicles on an empty map and roll them out.
    Generate(GenerateArgs),
    /// Add vehicles to an existing scene.
    Augment(AugmentArgs),
    /// Extend tracks that end before the final step.
    Inpaint(InpaintArgs),
    /// Replay a scenario with car-following speed control.
    Simulate(SimulateArgs),
    /// Compare generated and real scenes by attribute MMD.
    Evaluate(EvaluateArgs),
    /// Compare generated and real trajectories by ADE/FDE and collision rate.
    EvaluateTraj(EvaluateTrajArgs),
    /// Draw a scenario as SVG.
    Render(RenderArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SyntheticArgs {
    /// Corpus description (TOML); defaults to the placement corpus.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of scenarios, overriding the config.
    #[arg(long)]
    num: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus directory, overriding the configured corpus.
    #[arg(long)]
    real: Option<PathBuf>,
    /// Existing weights whose other network is carried over.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario file whose map is used; its tracks are ignored.
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    num: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = DEFAULT_WEIGHTS)]
    weights: PathBuf,
    /// Rollout length in seconds; 0 writes the placed snapshot only.
    #[arg(long, default_value_t = 9.0)]
    horizon: f64,
    /// Seconds between re-decodes.
    #[arg(long, default_value_t = 1.0)]
    interval: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Vehicles to add.
    #[arg(long)]
    num: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = DEFAULT_WEIGHTS)]
    weights: PathBuf,
    /// Step of the scene that receives the new vehicles.
    #[arg(long, default_value_t = 0)]
    timestep: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InpaintArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = DEFAULT_WEIGHTS)]
    weights: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    interval: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of reference scenarios.
    #[arg(long)]
    real: PathBuf,
    /// Directory of generated scenarios with matching file names.
    #[arg(long)]
    gen: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Step compared in every pair.
    #[arg(long, default_value_t = 0)]
    timestep: usize,
    /// Also write the scores as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateTrajArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    gen: PathBuf,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    iou_threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    timestep: usize,
    /// Color lane regions by placement probability (needs --weights).
    #[arg(long)]
    heatmap: bool,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Failures that map to exit code 1 rather than 2.
struct Usage(String);

enum Failure {
    Usage(Usage),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn seconds_to_steps(what: &str, secs: f64, dt: f64) -> std::result::Result<usize, Usage> {
    let steps = (secs / dt).round();
    if !secs.is_finite() || secs < 0.0 || (steps * dt - secs).abs() > 1e-6 {
        return Err(Usage(format!("--{what} {secs} is not a whole number of {dt} s steps")));
    }
    Ok(steps as usize)
}

fn ingest(a: &IngestArgs) -> Outcome {
    if a.scenario.is_dir() {
        fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        let (mut kept, mut dropped) = (0, 0);
        for path in corpus_files(&a.scenario)? {
            let s = read_scenario(&path)?;
            match filter_and_crop(&s, CROP_SIDE, MIN_AGENTS) {
                Some(c) => {
                    write_scenario_file(&a.out.join(path.file_name().expect("file")), &c)?;
                    kept += 1;
                }
                None => dropped += 1,
            }
        }
        log::info!("ingested {kept} scenarios, dropped {dropped}");
        return Ok(());
    }
    let s = read_scenario(&a.scenario)?;
    let c = filter_and_crop(&s, CROP_SIDE, MIN_AGENTS)
        .ok_or_else(|| Error::Empty(format!("fewer than {MIN_AGENTS} agents remain after cropping")))?;
    write_scenario_file(&a.out, &c)?;
    Ok(())
}

fn synthetic(a: &SyntheticArgs) -> Outcome {
    let mut spec = match &a.config {
        Some(p) => SyntheticSpec::from_toml(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => SyntheticSpec::default(),
    };
    if let Some(n) = a.num {
        spec.scenarios = n;
    }
    let files = make_synthetic(&spec, a.seed, &a.out)?;
    log::info!("wrote {} scenarios to {}", files.len(), a.out.display());
    Ok(())
}

fn train(a: &TrainArgs, mode: Mode) -> Outcome {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let base = a.config.parent().unwrap_or(Path::new("."));
    cfg.corpus = match &a.real {
        Some(dir) => vec![dir.clone()],
        None => cfg.corpus.iter().map(|p| base.join(p)).collect(),
    };
    if cfg.corpus.is_empty() {
        return Err(Usage("no corpus: set `corpus` in the config or pass --real".into()).into());
    }
    let mut weights = match &a.weights {
        Some(p) => Weights::load(p)?,
        None => Weights::default(),
    };
    let checkpoint = cfg.checkpoint.as_ref().map(|p| base.join(p)).unwrap_or_else(|| a.out.clone());
    let (data, report) = build_dataset(&cfg.corpus, mode, cfg.snapshot_interval, &cfg.model, cfg.traj_agents)?;
    log::info!("dataset: {}", report.summary());
    for (p, why) in &report.skipped {
        log::warn!("skipped {}: {why}", p.display());
    }
    let log = match data {
        Dataset::Placement(records) => {
            let mut save = |_: &_, m: &trafficgen::model::PlacementModel| {
                let mut w = weights.clone();
                w.placement = Some(m.clone());
                w.save(&checkpoint)
            };
            let (model, log) = train_placement(&cfg, &records, &mut save)?;
            weights.placement = Some(model);
            log
        }
        Dataset::Trajectory(records) => {
            let mut save = |_: &_, m: &trafficgen::model::TrajectoryModel| {
                let mut w = weights.clone();
                w.trajectory = Some(m.clone());
                w.save(&checkpoint)
            };
            let (model, log) = train_trajectory(&cfg, &records, &mut save)?;
            weights.trajectory = Some(model);
            log
        }
    };
    weights.save(&a.out)?;
    let mut log_path = a.out.clone().into_os_string();
    log_path.push(".loss.csv");
    write_text(Path::new(&log_path), &loss_log_csv(&log))?;
    Ok(())
}

fn generate(a: &GenerateArgs) -> Outcome {
    if a.num == 0 {
        return Err(Usage("--num must be at least 1".into()).into());
    }
    let map_source = read_scenario(&a.map)?;
    let weights = Weights::load(&a.weights)?;
    let placement = weights.placement(&a.weights)?;
    let placed = generate_snapshot(placement, map_source.map.clone(), a.num, a.seed, None, SampleOptions::default())?;
    if placed.exhausted {
        log::warn!("only {} of {} vehicles fit on the map", placed.snapshot.vehicles.len(), a.num);
    }
    let horizon = seconds_to_steps("horizon", a.horizon, placed.snapshot.dt)?;
    let out = if horizon == 0 || placed.snapshot.vehicles.is_empty() {
        placed.snapshot.to_scenario()
    } else {
        let interval = seconds_to_steps("interval", a.interval, placed.snapshot.dt)?;
        let traj = weights.trajectory(&a.weights)?;
        rollout(traj, &placed.snapshot, RolloutConfig { horizon, interval }, a.seed)?.scenario
    };
    write_scenario_file(&a.out, &out)?;
    Ok(())
}

fn augment(a: &AugmentArgs) -> Outcome {
    let s = read_scenario(&a.scenario)?;
    let horizon = s.horizon();
    if a.timestep >= horizon {
        return Err(Usage(format!("--timestep {} is past the last step {}", a.timestep, horizon - 1)).into());
    }
    let weights = Weights::load(&a.weights)?;
    let placement = weights.placement(&a.weights)?;
    let snap = Snapshot::at_step(&s, a.timestep);
    let target = snap.vehicles.len() + a.num;
    let placed = generate_snapshot(placement, s.map.clone(), target, a.seed, Some(&snap), SampleOptions::default())?;
    if placed.exhausted {
        log::warn!("only {} of {} new vehicles fit", placed.snapshot.vehicles.len() - snap.vehicles.len(), a.num);
    }
    let mut out = s.clone();
    for v in placed.snapshot.vehicles.iter().filter(|v| s.track(&v.id).is_none()) {
        let mut states = vec![TrackState::invalid(); horizon];
        states[a.timestep] = v.state();
        out.tracks.push(VehicleTrack { id: v.id.clone(), states });
    }
    write_scenario_file(&a.out, &out)?;
    Ok(())
}

fn inpaint_cmd(a: &InpaintArgs) -> Outcome {
    let s = read_scenario(&a.scenario)?;
    let interval = seconds_to_steps("interval", a.interval, s.dt)?;
    let weights = Weights::load(&a.weights)?;
    let out = inpaint(weights.trajectory(&a.weights)?, &s, interval, a.seed)?;
    write_scenario_file(&a.out, &out)?;
    Ok(())
}

/// Scenario files of two directories paired by file name.
fn paired(real: &Path, gen: &Path) -> Result<Vec<(String, Scenario, Scenario)>> {
    let reals = corpus_files(real)?;
    let gens = corpus_files(gen)?;
    let names = |v: &[PathBuf]| -> Vec<String> {
        v.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect()
    };
    let (rn, gn) = (names(&reals), names(&gens));
    if rn != gn {
        return Err(Error::Align(format!(
            "{} holds {} files and {} holds {}, or their names differ",
            real.display(),
            rn.len(),
            gen.display(),
            gn.len()
        )));
    }
    reals
        .iter()
        .zip(&gens)
        .zip(rn)
        .map(|((r, g), name)| Ok((name, read_scenario(r)?, read_scenario(g)?)))
        .collect()
}

fn evaluate(a: &EvaluateArgs) -> Outcome {
    let pairs = paired(&a.real, &a.gen)?;
    let mut real = Vec::with_capacity(pairs.len());
    let mut gen = Vec::with_capacity(pairs.len());
    for (name, r, g) in pairs {
        if a.timestep >= r.horizon() || a.timestep >= g.horizon() {
            return Err(Error::Length(format!("`{name}` has no step {}", a.timestep)).into());
        }
        real.push((name.clone(), Snapshot::at_step(&r, a.timestep)));
        gen.push((name, Snapshot::at_step(&g, a.timestep)));
    }
    let cfg = MmdConfig {
        sigma: a.sigma,
        ..MmdConfig::default()
    };
    let report = scene_mmd_report(&real, &gen, &cfg)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        write_text(out, &report.to_csv())?;
    }
    Ok(())
}

fn evaluate_traj(a: &EvaluateTrajArgs) -> Outcome {
    let pairs = paired(&a.real, &a.gen)?;
    let (mut ade, mut fde, mut tracks) = (0.0, 0.0, 0usize);
    let mut collision = 0.0;
    for (name, r, g) in &pairs {
        match scenario_ade_fde(g, r) {
            Some((x, y, n)) => {
                ade += x * n as f64;
                fde += y * n as f64;
                tracks += n;
            }
            None => log::warn!("`{name}` shares no valid track with its reference"),
        }
        collision += scr(g, a.iou_threshold);
    }
    if tracks == 0 {
        return Err(Error::Empty("no comparable tracks".into()).into());
    }
    let (ade, fde, collision) = (ade / tracks as f64, fde / tracks as f64, collision / pairs.len() as f64);
    println!("{:>10}{:>10}{:>10}\n{ade:>10.4}{fde:>10.4}{collision:>10.4}", "ADE", "FDE", "SCR");
    if let Some(out) = &a.out {
        write_text(out, &format!("metric,score\nADE,{ade:.6}\nFDE,{fde:.6}\nSCR,{collision:.6}\n"))?;
    }
    Ok(())
}

fn render(a: &RenderArgs) -> Outcome {
    let s = read_scenario(&a.scenario)?;
    let heatmap = if a.heatmap {
        let path = a.weights.as_ref().ok_or_else(|| Usage("--heatmap needs --weights".into()))?;
        let weights = Weights::load(path)?;
        let snap = Snapshot::at_step(&s, a.timestep.min(s.horizon() - 1));
        Some(placement_heatmap(weights.placement(path)?, &snap)?)
    } else {
        None
    };
    let svg = render_svg(
        &s,
        &RenderOptions {
            timestep: a.timestep,
            show_trajectories: true,
            heatmap,
        },
    );
    write_text(&a.out, &svg)?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::MakeSynthetic(a) => synthetic(&a),
        Command::TrainPlacement(a) => train(&a, Mode::Placement),
        Command::TrainTrajectory(a) => train(&a, Mode::Trajectory),
        Command::Generate(a) => generate(&a),
        Command::Augment(a) => augment(&a),
        Command::Inpaint(a) => inpaint_cmd(&a),
        Command::Simulate(a) => {
            let s = read_scenario(&a.scenario)?;
            write_scenario_file(&a.out, &simulate(&s))?;
            Ok(())
        }
        Command::Evaluate(a) => evaluate(&a),
        Command::EvaluateTraj(a) => evaluate_traj(&a),
        Command::Render(a) => render(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TG_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(Usage(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
