//! `pics` command-line entry point.
//!
//! Exit codes: 0 on success, 1 on bad input or configuration, 2 on internal
//! failures (non-finite training loss, stale caches, panics).

mod commands;
mod config;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pics::data::Channel;
use pics::losses::LossKind;
use pics::qpi::ShearAxis;
use pics::seg::ThresholdMethod;
use pics::PicsError;

use crate::commands::Outcome;
use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Internal(String),
}

impl From<PicsError> for CliError {
    fn from(e: PicsError) -> Self {
        match e {
            PicsError::NonFiniteLoss { .. } | PicsError::StaleCache(_) => CliError::Internal(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

fn version() -> &'static str {
    concat!(env!("CARGO_PKG_VERSION"), " (config schema 1)")
}

#[derive(Debug, Parser)]
#[command(name = "pics", version = version(), about = "Phase imaging with computational specificity")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where to write the run record (default: run_record.json beside the outputs).
    #[arg(long, global = true)]
    run_record: Option<PathBuf>,
    /// Seed for every random stage, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Phase image from four phase-shifted frames `<name>_0.tif` .. `<name>_3.tif`.
    Reconstruct(ReconstructCmd),
    /// Background removal, focus choice, registration and cropping.
    Preprocess(PreprocessCmd),
    /// Synthetic phase/stain fields with a manifest.
    Synth(SynthCmd),
    /// Train a phase-to-stain network.
    Train(TrainCmd),
    /// Predict stains (and RGB overlays) from phase images.
    Infer(InferCmd),
    /// Threshold stains into a class map.
    Segment(SegmentCmd),
    /// Confluence and dry-mass growth curves.
    Analyze(AnalyzeCmd),
}

fn parse_axis(s: &str) -> Result<ShearAxis, String> {
    match s.to_ascii_lowercase().as_str() {
        "x" => Ok(ShearAxis::X),
        "y" => Ok(ShearAxis::Y),
        other => Err(format!("shear axis '{other}' (x or y)")),
    }
}

fn parse_channel(s: &str) -> Result<Channel, String> {
    s.parse().map_err(|e: PicsError| e.to_string())
}

fn parse_method(s: &str) -> Result<ThresholdMethod, String> {
    s.parse().map_err(|e: PicsError| e.to_string())
}

#[derive(Debug, Args)]
struct ReconstructCmd {
    /// Directory holding the four frames.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_parser = parse_axis)]
    shear_axis: Option<ShearAxis>,
    #[arg(long)]
    shear_px: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PreprocessCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthCmd {
    /// Number of fields.
    #[arg(long)]
    n: usize,
    /// Side length in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Frames per field; more than one renders growing axons.
    #[arg(long, default_value_t = 1)]
    frames: usize,
    /// Fields are assigned round-robin to this many wells.
    #[arg(long, default_value_t = 1)]
    wells: usize,
    /// Also split the manifest, holding out this many test fields.
    #[arg(long)]
    hold_out: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = parse_channel)]
    channel: Channel,
    /// l1, l1+pearson or l1+gan.
    #[arg(long, value_parser = commands::parse_loss)]
    loss: Option<LossKind>,
    #[arg(long)]
    pearson_weight: Option<f64>,
    #[arg(long)]
    gan_weight: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    /// Halve the input this many times before the network.
    #[arg(long)]
    downsample: Option<u32>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    /// Per-epoch CSV (default: `<out>.history.csv`).
    #[arg(long)]
    history: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InferCmd {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    ckpt2: Option<PathBuf>,
    #[arg(long)]
    ckpt3: Option<PathBuf>,
    /// A phase TIFF or a directory of `<field>[_t<k>]_phase.tif` files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Also write MAP2/Tau(/DAPI) RGB overlays; needs tau and map2 models.
    #[arg(long)]
    overlay: bool,
    #[arg(long, default_value_t = 1.0)]
    frame_interval_h: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SegmentCmd {
    #[arg(long, conflicts_with = "stains")]
    tau: Option<PathBuf>,
    #[arg(long, conflicts_with = "stains")]
    map2: Option<PathBuf>,
    #[arg(long, conflicts_with = "stains")]
    dapi: Option<PathBuf>,
    /// Directory of `<stem>_{tau,map2,dapi}.tif` predictions.
    #[arg(long)]
    stains: Option<PathBuf>,
    /// `otsu` or a fixed threshold value.
    #[arg(long, value_parser = parse_method)]
    method: Option<ThresholdMethod>,
    /// Gaussian blur before thresholding, in pixels.
    #[arg(long)]
    sigma: Option<f64>,
    /// Output map (single) or directory (batch).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeCmd {
    /// Directory of phase frames with a manifest.json.
    #[arg(long)]
    seq: PathBuf,
    /// Directory of `<stem>_seg.tif` maps.
    #[arg(long)]
    segs: PathBuf,
    #[arg(long)]
    lambda_um: Option<f64>,
    /// Refractive increment in mL/g.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    pixel_area_um2: Option<f64>,
    #[arg(long)]
    window_h: Option<f64>,
    #[arg(long)]
    frame_interval_h: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Reconstruct(_) => "reconstruct",
            Command::Preprocess(_) => "preprocess",
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Infer(_) => "infer",
            Command::Segment(_) => "segment",
            Command::Analyze(_) => "analyze",
        }
    }

    /// Directory that receives the default run record.
    fn out_dir(&self) -> PathBuf {
        let (p, is_file) = match self {
            Command::Reconstruct(c) => (&c.out, true),
            Command::Preprocess(c) => (&c.out, false),
            Command::Synth(c) => (&c.out, false),
            Command::Train(c) => (&c.out, true),
            Command::Infer(c) => (&c.out, false),
            Command::Segment(c) => (&c.out, c.stains.is_none()),
            Command::Analyze(c) => (&c.out, false),
        };
        if is_file {
            p.parent().map(PathBuf::from).unwrap_or_default()
        } else {
            p.clone()
        }
    }
}

fn run(cmd: Command, cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    match cmd {
        Command::Reconstruct(c) => commands::reconstruct(
            commands::ReconstructArgs {
                frames: c.frames,
                eps: c.eps,
                shear_axis: c.shear_axis,
                shear_px: c.shear_px,
                out: c.out,
            },
            cfg,
        ),
        Command::Preprocess(c) => commands::preprocess(c.manifest, c.out, cfg),
        Command::Synth(c) => commands::synth(
            commands::SynthArgs {
                n: c.n,
                size: c.size,
                frames: c.frames,
                wells: c.wells,
                hold_out: c.hold_out,
                out: c.out,
            },
            cfg,
        ),
        Command::Train(c) => {
            let t = &mut cfg.train;
            if let Some(l) = c.loss {
                t.loss.kind = l;
            }
            if let Some(w) = c.pearson_weight {
                t.loss.pearson_weight = w;
            }
            if let Some(w) = c.gan_weight {
                t.loss.gan_weight = w;
            }
            t.epochs = c.epochs.unwrap_or(t.epochs);
            t.lr = c.lr.unwrap_or(t.lr);
            t.batch_size = c.batch_size.unwrap_or(t.batch_size);
            t.patch_size = c.patch_size.or(t.patch_size);
            t.input_downsample = c.downsample.unwrap_or(t.input_downsample);
            cfg.network.depth = c.depth.unwrap_or(cfg.network.depth);
            cfg.network.base_channels = c.base_channels.unwrap_or(cfg.network.base_channels);
            commands::train(
                commands::TrainArgs {
                    manifest: c.manifest,
                    channel: c.channel,
                    out: c.out,
                    history: c.history,
                },
                cfg,
            )
        }
        Command::Infer(c) => commands::infer(commands::InferArgs {
            ckpts: [Some(c.ckpt), c.ckpt2, c.ckpt3].into_iter().flatten().collect(),
            input: c.input,
            overlay: c.overlay,
            frame_interval_h: c.frame_interval_h,
            out: c.out,
        }),
        Command::Segment(c) => commands::segment(
            commands::SegmentArgs {
                tau: c.tau,
                map2: c.map2,
                dapi: c.dapi,
                stains: c.stains,
                method: c.method,
                sigma: c.sigma,
                out: c.out,
            },
            cfg,
        ),
        Command::Analyze(c) => commands::analyze(
            commands::AnalyzeArgs {
                seq: c.seq,
                segs: c.segs,
                lambda_um: c.lambda_um,
                gamma: c.gamma,
                pixel_area_um2: c.pixel_area_um2,
                window_h: c.window_h,
                frame_interval_h: c.frame_interval_h,
                out: c.out,
            },
            cfg,
        ),
    }
}

fn fail(stage: &str, err: &CliError) -> ExitCode {
    eprintln!("ERROR {stage}: {err}");
    ExitCode::from(err.code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                ErrorKind::InvalidSubcommand => {
                    let name = argv.iter().skip(1).find(|a| !a.starts_with('-')).cloned().unwrap_or_default();
                    fail("cli", &CliError::Validation(format!("unrecognized subcommand '{name}'")))
                }
                _ => {
                    let msg = e.to_string();
                    let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
                    fail("cli", &CliError::Validation(first.to_string()))
                }
            };
        }
    };
    let stage = cli.command.stage();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(stage, &CliError::Validation(format!("--threads {n}: {e}")));
        }
    }
    let mut cfg = match &cli.config {
        Some(p) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => return fail(stage, &e),
        },
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.propagate_seed();
    let record_path = cli.run_record.clone().unwrap_or_else(|| cli.command.out_dir().join("run_record.json"));
    let started = std::time::Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli.command, &mut cfg)))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(CliError::Internal(msg))
        });
    let outcome = match result {
        Ok(o) => o,
        Err(e) => return fail(stage, &e),
    };
    let rec = record::RunRecord::new(stage, &argv, &cfg, outcome, started.elapsed().as_secs_f64());
    if let Err(e) = rec.write(&record_path) {
        return fail(stage, &e);
    }
    log::info!("{stage} done in {:.1} s; run record {}", rec.wall_seconds, record_path.display());
    ExitCode::SUCCESS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CONFIG_SCHEMA_VERSION;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
        assert!(version().contains(&format!("schema {CONFIG_SCHEMA_VERSION}")));
    }
}
