//! `prostascan`: command-line front end.
//!
//! Exit codes: 0 success, 2 invalid configuration or arguments,
//! 10 + stage index when a stage fails (synth 10, ingest 11, segment 12,
//! eval 13, metrics 14, reconstruct 15, augment 16).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prostascan_core::config::{ConfigError, RunConfig};
use prostascan_core::eval::{render_table, IouSummary};
use prostascan_core::ingest::{simulate_capture, write_frames};
use prostascan_core::reconstruct::MeshFormat;
use prostascan_core::run::{
    run_augment, run_augment_imported, run_eval, run_ingest, run_metrics, run_pipeline, run_reconstruct, run_segment,
    run_synth, RunLayout, Stage, StageError,
};

#[derive(Parser)]
#[command(name = "prostascan", version, about = "Ultrasound phantom scan segmentation, scoring and reconstruction")]
struct Cli {
    /// Worker thread cap (0 = all cores).
    #[arg(long, global = true, env = "PROSTASCAN_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set segment.gauss_sigma=1.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self, required: bool) -> Result<(RunConfig, Option<PathBuf>), CliError> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p, &overrides)?,
            None if required => {
                return Err(CliError::Config(ConfigError::Invalid {
                    field: "--config".into(),
                    reason: "this command needs a config file with a [scan] section".into(),
                }))
            }
            // commands that never read the scan section
            None => RunConfig::parse(&RunConfig::with_pixel_size(1.0).to_toml(), &overrides)?,
        };
        Ok((cfg, self.config.clone()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic phantom: `<out>/stack` and ground truth `<out>/truth`.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write a simulated video capture of the stack to this directory.
        #[arg(long)]
        capture: Option<PathBuf>,
        /// Dark frames before the scan in the simulated capture.
        #[arg(long, default_value_t = 45)]
        lead_in: usize,
    },
    /// Detect the scan start in captured frames and write the cropped stack.
    Ingest {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory of frame PNGs, read in file-name order.
        #[arg(long)]
        frames: PathBuf,
        /// Output stack directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment an image stack into a label volume.
    Segment {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        stack: PathBuf,
        /// Output label directory.
        #[arg(long)]
        out: PathBuf,
        /// Per-slice convergence log (default: `<out>/segment_log.txt`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score predicted labels against reference labels.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Directory for `eval.kv` and `eval_table.txt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame resection scores.
    Metrics {
        #[arg(long)]
        labels: PathBuf,
        /// Key-value report file.
        #[arg(long)]
        out: PathBuf,
        /// Per-frame table (TSV).
        #[arg(long)]
        series: Option<PathBuf>,
        #[arg(long, default_value_t = prostascan_core::metrics::DEFAULT_HARMONICS)]
        harmonics: usize,
    },
    /// Meshes of every class and derived component.
    Reconstruct {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        labels: PathBuf,
        /// Mesh directory; the report goes to `<out>/reconstruct.kv`.
        #[arg(long)]
        out: PathBuf,
        /// stl, obj or ply (overrides `reconstruct.format`).
        #[arg(long)]
        format: Option<String>,
    },
    /// Resection-shape variants and their diversity report.
    Augment {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Label directory to derive the input grids from.
        #[arg(long, required_unless_present = "inputs", conflicts_with = "inputs")]
        labels: Option<PathBuf>,
        /// Directory holding filled.pvg, resection.pvg and central_region.pvg
        /// from an earlier run; use with --import.
        #[arg(long, requires = "import")]
        inputs: Option<PathBuf>,
        /// Externally generated resection grids (.pvg) to apply instead of generating.
        #[arg(long, num_args = 1..)]
        import: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of variants (overrides `augment.variant_count`).
        #[arg(long)]
        variants: Option<usize>,
    },
    /// Run selected stages end to end under one output root.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated stages: synth|ingest, segment, eval, metrics, reconstruct, augment.
        #[arg(long, default_value = "synth,segment,eval,metrics,reconstruct,augment")]
        stages: String,
        /// Output root.
        #[arg(long, short, env = "PROSTASCAN_OUTPUT_ROOT", default_value = "prostascan-out")]
        output: PathBuf,
    },
}

enum CliError {
    Config(ConfigError),
    Stage(Stage, StageError),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn at(stage: Stage) -> impl FnOnce(StageError) -> CliError {
    move |e| match e {
        StageError::Config(c) => CliError::Config(c),
        other => CliError::Stage(stage, other),
    }
}

fn mesh_format(cfg: &RunConfig, flag: Option<&str>) -> Result<MeshFormat, CliError> {
    match flag {
        Some(f) => MeshFormat::from_name(f).map_err(|e| {
            CliError::Config(ConfigError::Invalid {
                field: "--format".into(),
                reason: e.to_string(),
            })
        }),
        None => Ok(cfg.reconstruct.mesh_format()?),
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { cfg, out, capture, lead_in } => {
            let (cfg, _) = cfg.load(true)?;
            let layout = RunLayout::new(&out);
            run_synth(&cfg, &layout.stack(), &layout.truth()).map_err(at(Stage::Synth))?;
            if let Some(dir) = capture {
                let capture_cfg = cfg.ingest.capture_config(&cfg.scan)?;
                let profile = cfg.ingest.profile.unwrap_or(prostascan_core::ingest::MachineProfile::SonoscapeE1);
                let stack = prostascan_core::ingest::read_stack(layout.stack())
                    .map_err(|e| CliError::Stage(Stage::Synth, e.into()))?;
                let sim = simulate_capture(&stack, &capture_cfg, profile.frame_size(), lead_in, cfg.seed)
                    .and_then(|sim| write_frames(&dir, &sim.frames).map(|_| sim))
                    .map_err(|e| CliError::Stage(Stage::Synth, e.into()))?;
                println!("capture: {} frames, scan starts at frame {}", sim.frames.len(), sim.onset);
            }
            println!("wrote {} and {}", layout.stack().display(), layout.truth().display());
        }
        Command::Ingest { cfg, frames, out } => {
            let (cfg, _) = cfg.load(true)?;
            let start = run_ingest(&cfg, &frames, &out).map_err(at(Stage::Ingest))?;
            println!("scan starts at frame {start}; wrote {}", out.display());
        }
        Command::Segment { cfg, stack, out, log } => {
            let (cfg, _) = cfg.load(false)?;
            let log = log.unwrap_or_else(|| out.join("segment_log.txt"));
            let seg = run_segment(&cfg.segment, &stack, &out, &log).map_err(at(Stage::Segment))?;
            println!(
                "segmented {} slices ({} failed and filled from neighbours); log in {}",
                seg.statuses.len(),
                seg.failed_count(),
                log.display()
            );
        }
        Command::Eval { pred, reference, out } => {
            let report = run_eval(&pred, &reference, &out.join("eval.kv"), &out.join("eval_table.txt"))
                .map_err(at(Stage::Eval))?;
            let summary = IouSummary::from_parts(report.overall, &report.per_class).expect("all classes scored");
            print!("{}", render_table(&[("classical (this run)", &summary)]));
        }
        Command::Metrics { labels, out, series, harmonics } => {
            let report = run_metrics(&labels, harmonics, &out, series.as_deref()).map_err(at(Stage::Metrics))?;
            println!("frames {} scored {} skipped {}", report.frame_count, report.per_frame.len(), report.skipped);
            if let Some(a) = &report.aggregates {
                println!("circularity  {:.3} ± {:.3}", a.circularity.mean, a.circularity.std);
                println!("smoothness   {:.3} ± {:.3}", a.smoothness.mean, a.smoothness.std);
                println!(
                    "perforation  {:.3} mm² total, {:.2} sites/frame",
                    report.total_perforation_mm2(),
                    a.perforation_sites.mean
                );
            }
        }
        Command::Reconstruct { cfg, labels, out, format } => {
            let (mut cfg, _) = cfg.load(false)?;
            cfg.reconstruct.format = mesh_format(&cfg, format.as_deref())?.extension().to_string();
            run_reconstruct(&cfg, &labels, &out, &out.join("reconstruct.kv")).map_err(at(Stage::Reconstruct))?;
            println!("wrote meshes and reconstruct.kv to {}", out.display());
        }
        Command::Augment { cfg, labels, inputs, import, out, variants } => {
            let (mut cfg, _) = cfg.load(false)?;
            if let Some(n) = variants {
                cfg.augment.variant_count = n;
                cfg.augment.validate().map_err(|e| {
                    CliError::Config(ConfigError::Invalid {
                        field: "--variants".into(),
                        reason: e.to_string(),
                    })
                })?;
            }
            let format = cfg.reconstruct.mesh_format()?;
            let report = match (labels, inputs) {
                (Some(l), _) => run_augment(&cfg.augment, format, &l, &out),
                (None, Some(i)) => run_augment_imported(&cfg.augment, format, &i, &import, &out),
                (None, None) => unreachable!("clap requires one input"),
            }
            .map_err(at(Stage::Augment))?;
            let (lo, hi) = report
                .iou_vs_original
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            println!(
                "{} variants, IoU vs original {lo:.3}..{hi:.3}, max pairwise {:.3}, {}",
                report.iou_vs_original.len(),
                report.max_pairwise_iou,
                if report.passed() { "within bounds" } else { "OUT OF BOUNDS" }
            );
        }
        Command::Pipeline { cfg, stages, output } => {
            let stages = Stage::parse_list(&stages)?;
            let (cfg, path) = cfg.load(true)?;
            match run_pipeline(&cfg, path.as_deref(), &stages, &output) {
                Ok(m) => {
                    for r in &m.records {
                        println!("{:<12} {:>8.2} s", r.stage.name(), r.wall_seconds);
                    }
                    let total: f64 = m.records.iter().map(|r| r.wall_seconds).sum();
                    println!("{:<12} {:>8.2} s  ({})", "total", total, output.display());
                }
                Err(f) => return Err(CliError::Stage(f.stage, f.error)),
            }
        }
    }
    Ok(())
}

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Config(_) => 2,
        CliError::Stage(s, _) => 10 + s.index() as u8,
    }
}

fn report(e: &CliError) {
    match e {
        CliError::Config(c) => eprintln!("error: {c}"),
        CliError::Stage(s, err) => eprintln!("error: stage {} failed: {err}", s.name()),
    }
}

fn configure_threads(n: usize) {
    if n > 0 {
        // fails only if a pool already exists, which cannot happen this early
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads(cli.threads);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
