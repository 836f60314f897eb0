//! The four subcommands as library functions. `main` only parses
//! arguments and maps errors to exit codes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use roomgraph_core::eval::{evaluate_run, EvalError, GroundTruth, RunOutputs, RunReport};
use roomgraph_core::geometry::PointCloud;
use roomgraph_core::pgo::g2o::G2oGraph;
use roomgraph_core::pipeline::{run_pipeline, Clock, PipelineError, PipelineInput, PipelineOutput};
use roomgraph_core::reconstruction::{OracleProvider, ReconstructionProvider};
use roomgraph_core::scene_graph::RoomId;
use roomgraph_core::simulator::{generate_sequence, generate_world, SimError};
use thiserror::Error;

use crate::config::{AppConfig, ConfigError};
use crate::dataset::{self, RunSummary};
use crate::io::{self, ply, scene, tum, world::load_world, IoError};
use crate::replay::{Recorder, ReplayProvider};
use crate::report;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for usage errors, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

/// Seconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

fn existing_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} directory {} does not exist",
            path.display()
        )))
    }
}

/// Loads the config file if given, then applies the process environment.
pub fn load_config(path: Option<&Path>) -> Result<AppConfig, CliError> {
    if let Some(p) = path {
        if !p.is_file() {
            return Err(CliError::Usage(format!("config file {} does not exist", p.display())));
        }
    }
    Ok(AppConfig::load(path, std::env::vars())?)
}

/// Generates a world and traversal and writes them as an input directory.
pub fn simulate(config: &AppConfig, seed: u64, out: &Path) -> Result<(), CliError> {
    let world = generate_world(&config.world, seed)?;
    let spec = roomgraph_core::simulator::SequenceSpec {
        rng_seed: seed,
        ..config.sequence.clone()
    };
    let seq = generate_sequence(&world, &spec)?;
    dataset::write_simulation(out, &world, &spec, &seq)?;
    io::write_json(&out.join(dataset::CONFIG_COPY), config)?;
    Ok(())
}

pub struct RunOptions<'a> {
    pub input: &'a Path,
    pub out: &'a Path,
    /// Also write every provider answer as a replay directory.
    pub record_replay: bool,
}

/// Runs the pipeline on an input directory. A `replay/` subdirectory takes
/// precedence; otherwise the simulated provider is rebuilt from
/// `world.json` and the ground-truth trajectory.
pub fn run(config: &AppConfig, opts: &RunOptions<'_>) -> Result<PipelineOutput, CliError> {
    existing_dir(opts.input, "input")?;
    let input = dataset::load_input(opts.input)?;
    let pipeline_config = config.pipeline();
    let frames = PipelineInput {
        frames: &input.frames,
        cues: &input.cues,
        tracklets: &input.tracklets,
    };
    let clock = WallClock::start();

    let replay_dir = opts.input.join(dataset::REPLAY_DIR);
    let world;
    let (provider, name): (Box<dyn ReconstructionProvider + '_>, &str) = if replay_dir.is_dir() {
        (Box::new(ReplayProvider::load(&replay_dir, &input.frames)?), "replay")
    } else {
        let world_path = opts.input.join(dataset::WORLD);
        if !world_path.is_file() {
            return Err(CliError::Runtime(format!(
                "{} has neither a replay directory nor {}",
                opts.input.display(),
                dataset::WORLD
            )));
        }
        if input.frames.iter().any(|f| f.gt_pose.is_none()) {
            return Err(CliError::Runtime(format!(
                "the simulated provider needs a ground-truth pose for every frame ({})",
                dataset::GT_TRAJECTORY
            )));
        }
        world = load_world(&world_path)?;
        let oracle = OracleProvider::new(&world, &input.frames, config.oracle.clone())
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .with_views(config.stages.objects);
        (Box::new(oracle), "oracle")
    };

    let output = if opts.record_replay {
        let recorder = Recorder::new(provider.as_ref(), &input.frames);
        let output = run_pipeline(frames, &recorder, &pipeline_config, &clock)?;
        recorder.write(&opts.out.join(dataset::REPLAY_DIR))?;
        output
    } else {
        run_pipeline(frames, provider.as_ref(), &pipeline_config, &clock)?
    };

    scene::save(opts.out, &output.graph)?;
    tum::write_trajectory(&opts.out.join(dataset::TRAJECTORY), &output.trajectory)?;
    io::write_json(&opts.out.join(dataset::RUN_SUMMARY), &RunSummary::new(name, &output))?;
    io::write_json(&opts.out.join(dataset::CONFIG_COPY), config)?;
    for e in &output.errors {
        eprintln!("warning: {e}");
    }
    Ok(output)
}

/// Evaluates a run directory against ground truth and writes
/// `report.json` into the run directory.
pub fn eval(config: &AppConfig, run_dir: &Path, gt_dir: &Path) -> Result<RunReport, CliError> {
    existing_dir(run_dir, "run")?;
    existing_dir(gt_dir, "ground-truth")?;
    let graph = scene::load(run_dir)?;
    let trajectory = tum::read_trajectory(&run_dir.join(dataset::TRAJECTORY))?;
    let summary: RunSummary = io::read_json(&run_dir.join(dataset::RUN_SUMMARY))?;
    let gt = dataset::load_ground_truth(gt_dir)?;
    let outputs = RunOutputs {
        graph: &graph,
        trajectory: &trajectory,
        invalid_rooms: &summary.invalid_rooms,
        stage_timings: &summary.stage_timings,
        loop_closures_accepted: summary.loop_closures_accepted,
    };
    let truth = GroundTruth {
        trajectory: gt.trajectory.as_ref(),
        cloud: gt.cloud.as_ref(),
    };
    let report = evaluate_run(&outputs, &truth, &config.eval);
    io::write_json(&run_dir.join(dataset::REPORT), &report)?;
    Ok(report)
}

pub fn render_report(report: &RunReport, csv: bool) -> String {
    if csv {
        report::csv(report)
    } else {
        report::table(report)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportFormat {
    /// World-frame cloud of every room, labelled by room id.
    Ply,
    /// Room pose graph as g2o text.
    G2o,
}

/// Writes an export of a run; returns the file written.
pub fn export(
    config: &AppConfig,
    run_dir: &Path,
    format: ExportFormat,
    out: Option<&Path>,
) -> Result<PathBuf, CliError> {
    existing_dir(run_dir, "run")?;
    let mut graph = scene::load(run_dir)?;
    let default_name = match format {
        ExportFormat::Ply => "map.ply",
        ExportFormat::G2o => "graph.g2o",
    };
    let path = out.map_or_else(
        || run_dir.join(dataset::EXPORT_DIR).join(default_name),
        Path::to_path_buf,
    );
    match format {
        ExportFormat::Ply => {
            let mut map = PointCloud::default();
            for (id, room) in graph.rooms() {
                map.extend(&room.point_cloud.transformed(&room.reference_pose).relabeled(id.0));
            }
            ply::write(&path, &map)?;
        }
        ExportFormat::G2o => {
            let first = graph.rooms().keys().next().copied();
            let fixed: Vec<RoomId> = config.pgo.anchor.or(first).into_iter().collect();
            let doc = G2oGraph::from_view(&graph.room_pose_graph(), config.pgo.factor_mode, &fixed);
            io::write_file(&path, doc.to_text())?;
        }
    }
    Ok(path)
}
