//! Command-line front end: render synthetic scenes, build face models, track
//! depth sequences, score pose files and manage identity stores.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use raytrack::face_model::{read_model, truncate, write_model, MultilinearModel};
use raytrack::identity::{merge_stores, read_store, write_store, IdentityStore};
use raytrack::io::{
    encode_csv, evaluate, load_biwi, read_pose_csv, run_pipeline, write_atomic, write_rendered, PipelineConfig,
    PipelineOutput, PoseRecord, SceneFile, SequenceManifest,
};
use raytrack::{Error, Result};

const EXIT_OTHER: u8 = 1;
const EXIT_LOCALIZATION: u8 = 3;
const EXIT_FAILED_FRAMES: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "raytrack", version, about = "Depth-only facial pose tracker")]
struct Cli {
    /// TOML file overriding tracker constants.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the swarm search and synthetic scenes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// MLFM1 face model; built from the configured corpus when absent.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene file to a numbered depth image sequence with ground truth.
    Render {
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a face model from the procedural corpus.
    BuildModel {
        #[arg(long)]
        out: PathBuf,
        /// Identity dimensions kept (default from the config).
        #[arg(long)]
        n_id: Option<usize>,
        /// Expression dimensions kept (default from the config).
        #[arg(long)]
        n_exp: Option<usize>,
    },
    /// Keep the leading identity and expression dimensions of a model file.
    TruncateModel {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_id: usize,
        #[arg(long)]
        n_exp: usize,
    },
    /// Print the dimensions of a model file.
    InspectModel { input: PathBuf },
    /// Track a sequence manifest or a Biwi sequence directory.
    Track(TrackArgs),
    /// Compare a pose CSV with ground truth.
    Eval {
        poses: PathBuf,
        truth: PathBuf,
        /// Write per-frame absolute errors as CSV.
        #[arg(long)]
        per_frame: Option<PathBuf>,
    },
    /// Inspect and combine identity stores.
    #[command(subcommand)]
    Store(StoreCommand),
}

#[derive(Args)]
struct TrackArgs {
    /// `sequence.toml` manifest, or a Biwi sequence directory.
    input: PathBuf,
    /// Output pose CSV.
    #[arg(long)]
    poses: PathBuf,
    /// Output identity store.
    #[arg(long)]
    store: PathBuf,
    /// Identity store to start from.
    #[arg(long)]
    store_in: Option<PathBuf>,
    /// Disable the swarm search fallback.
    #[arg(long)]
    no_pso: bool,
    /// Disable the temporal depth-flow term.
    #[arg(long)]
    no_temporal: bool,
    /// Disable online identity adaptation.
    #[arg(long)]
    no_adapt: bool,
}

#[derive(Subcommand)]
enum StoreCommand {
    /// Summarize each stored identity.
    List { store: PathBuf },
    /// Dump a store as JSON.
    Export {
        store: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Append the personalized models of `other` to `base`.
    Merge {
        base: PathBuf,
        other: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A command result: success, or tracking finished with failed frames.
enum Outcome {
    Done,
    FailedFrames(usize),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::LocalizationFailed(_) => EXIT_LOCALIZATION,
        Error::TrackingLost { .. } => EXIT_FAILED_FRAMES,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_OTHER,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::read(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn load_model(cli: &Cli, config: &PipelineConfig) -> Result<MultilinearModel> {
    match &cli.model {
        Some(path) => read_model(path),
        None => config.model.build(),
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn render(cli: &Cli, scene: &Path, out: &Path) -> Result<Outcome> {
    let config = load_config(cli)?;
    let mut scene = SceneFile::read(scene)?;
    if let Some(seed) = cli.seed {
        scene.seed = seed;
    }
    let model = load_model(cli, &config)?;
    let rendered = scene.render(&model)?;
    write_rendered(out, &rendered, scene.camera, scene.depth_scale)?;
    print_json(&json!({ "frames": rendered.frames.len(), "sequence": out.join("sequence.toml") }))?;
    Ok(Outcome::Done)
}

fn build_model(cli: &Cli, out: &Path, n_id: Option<usize>, n_exp: Option<usize>) -> Result<Outcome> {
    let mut config = load_config(cli)?;
    config.model.n_id = n_id.unwrap_or(config.model.n_id);
    config.model.n_exp = n_exp.unwrap_or(config.model.n_exp);
    let model = config.model.build()?;
    write_model(out, &model)?;
    inspect_model(&model)
}

fn inspect_model(model: &MultilinearModel) -> Result<Outcome> {
    print_json(&json!({
        "vertices": model.vertex_count(),
        "triangles": model.triangles.len(),
        "n_id": model.n_id(),
        "n_exp": model.n_exp(),
    }))?;
    Ok(Outcome::Done)
}

fn summary(out: &PipelineOutput, truth: Option<&[PoseRecord]>) -> Result<serde_json::Value> {
    let mut value = json!({
        "frames": out.records.len(),
        "failed_frames": out.failed_frames(),
        "stored_identities": out.store.len(),
        "present_identity": out.store.present_index,
        "clips": out.clips.len(),
    });
    if let Some(truth) = truth {
        let (metrics, _) = evaluate(&out.records, truth)?;
        value["metrics"] = json!(metrics);
    }
    Ok(value)
}

fn track(cli: &Cli, args: &TrackArgs) -> Result<Outcome> {
    let mut config = load_config(cli)?;
    config.track.use_pso &= !args.no_pso;
    config.track.use_temporal &= !args.no_temporal;
    config.identity.adapt &= !args.no_adapt;
    let model = load_model(cli, &config)?;
    let store = args.store_in.as_deref().map(read_store).transpose()?;
    let (out, truth) = if args.input.is_dir() {
        let seq = load_biwi(&args.input)?;
        let out = run_pipeline(seq.load_frames(), &model, seq.intrinsics, &config, store)?;
        // Biwi frame numbers start at an arbitrary index; align by position.
        let truth: Vec<PoseRecord> = seq
            .truth
            .iter()
            .enumerate()
            .map(|(i, r)| PoseRecord { frame: i, ..*r })
            .collect();
        (out, Some(truth))
    } else {
        let manifest = SequenceManifest::read(&args.input)?;
        let out = raytrack::io::run_manifest(&manifest, &model, &config, store)?;
        let truth = manifest.ground_truth_path().map(|p| read_pose_csv(&p)).transpose()?;
        (out, truth)
    };
    out.write(&args.poses, &args.store)?;
    print_json(&summary(&out, truth.as_deref())?)?;
    match out.failed_frames() {
        0 => Ok(Outcome::Done),
        n => Ok(Outcome::FailedFrames(n)),
    }
}

fn eval(poses: &Path, truth: &Path, per_frame: Option<&Path>) -> Result<Outcome> {
    let (metrics, frames) = evaluate(&read_pose_csv(poses)?, &read_pose_csv(truth)?)?;
    if let Some(path) = per_frame {
        write_atomic(path, &encode_csv(&frames)?)?;
    }
    print_json(&json!(metrics))?;
    Ok(Outcome::Done)
}

fn store_json(store: &IdentityStore) -> serde_json::Value {
    json!({
        "present_index": store.present_index,
        "generic": store.generic,
        "models": store.models,
    })
}

fn store_command(command: &StoreCommand) -> Result<Outcome> {
    match command {
        StoreCommand::List { store } => {
            let store = read_store(store)?;
            let models: Vec<_> = std::iter::once(&store.generic)
                .chain(&store.models)
                .enumerate()
                .map(|(i, m)| {
                    json!({
                        "index": i,
                        "present": i == store.present_index,
                        "beta": m.beta,
                        "nu": m.nu,
                        "alpha": m.alpha,
                        "converged": m.converged,
                    })
                })
                .collect();
            print_json(&json!({ "dimension": store.generic.dim(), "models": models }))?;
        }
        StoreCommand::Export { store, out } => {
            let value = store_json(&read_store(store)?);
            match out {
                Some(path) => {
                    let text = serde_json::to_vec_pretty(&value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                    write_atomic(path, &text)?;
                    print_json(&json!({ "stored_identities": value["models"].as_array().map_or(0, Vec::len), "out": path }))?;
                }
                None => print_json(&value)?,
            }
        }
        StoreCommand::Merge { base, other, out } => {
            let merged = merge_stores(&read_store(base)?, &read_store(other)?)?;
            write_store(out, &merged)?;
            print_json(&json!({ "stored_identities": merged.len() }))?;
        }
    }
    Ok(Outcome::Done)
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Render { scene, out } => render(cli, scene, out),
        Command::BuildModel { out, n_id, n_exp } => build_model(cli, out, *n_id, *n_exp),
        Command::TruncateModel { input, out, n_id, n_exp } => {
            let model = truncate(&read_model(input)?, *n_id, *n_exp)?;
            write_model(out, &model)?;
            inspect_model(&model)
        }
        Command::InspectModel { input } => inspect_model(&read_model(input)?),
        Command::Track(args) => track(cli, args),
        Command::Eval { poses, truth, per_frame } => eval(poses, truth, per_frame.as_deref()),
        Command::Store(command) => store_command(command),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::FailedFrames(n)) => {
            eprintln!("raytrack: {n} frame(s) failed to track");
            ExitCode::from(EXIT_FAILED_FRAMES)
        }
        Err(e) => {
            eprintln!("raytrack: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
