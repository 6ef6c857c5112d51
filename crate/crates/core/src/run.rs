//! Stage runners over on-disk artifacts and the end-to-end pipeline.
//!
//! Output layout under the run root:
//!
//! ```text
//! stack/                 image stack (synth or ingest)
//! truth/                 synthetic ground-truth labels (synth)
//! labels/                segmented labels
//! segment_log.txt        one line per slice
//! eval.kv, eval_table.txt
//! metrics.kv, metrics_series.tsv
//! meshes/<part>.<ext>, reconstruct.kv
//! augment/               input grids, variant grids and meshes, diversity.kv
//! run_manifest.json
//! FAILED                 present only after a failed run
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::augment::{
    apply_variant, diversity_report, generate_variants, prepare_inputs, AugmentConfig, AugmentError, AugmentInputs,
    AugmentedVariant, DiversityReport,
};
use crate::config::{ConfigError, RunConfig};
use crate::eval::{render_table, stack_iou_stats, stack_report_kv, EvalError, IouSummary, StackIouReport};
use crate::ingest::{assemble_stack, detect_scan_start, read_frames, read_labels, read_stack, write_labels, write_stack, IngestError};
use crate::metrics::{metrics_stack, MetricsError, MetricsReport};
use crate::model::{Class, ModelError, VoxelGrid};
use crate::phantom::{synth_phantom, PhantomError};
use crate::reconstruct::{
    derive_component_grids, export_mesh, laplacian_smooth, marching_cubes, mesh_stats, MeshFormat, ReconstructError,
};
use crate::segment::{segment_stack, SegmentConfig, SegmentError, StackSegmentation};

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    MissingInput(String),
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), StageError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| StageError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Ingest,
    Segment,
    Eval,
    Metrics,
    Reconstruct,
    Augment,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Segment,
        Stage::Eval,
        Stage::Metrics,
        Stage::Reconstruct,
        Stage::Augment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Segment => "segment",
            Stage::Eval => "eval",
            Stage::Metrics => "metrics",
            Stage::Reconstruct => "reconstruct",
            Stage::Augment => "augment",
        }
    }

    /// Position in execution order; failing stage `i` exits with `10 + i`.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("listed")
    }

    /// Comma-separated names, returned in execution order without duplicates.
    pub fn parse_list(list: &str) -> Result<Vec<Stage>, ConfigError> {
        let mut out = Vec::new();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let stage = Self::ALL.into_iter().find(|s| s.name() == name).ok_or_else(|| ConfigError::Invalid {
                field: "stages".into(),
                reason: format!(
                    "unknown stage {name:?} (expected {})",
                    Self::ALL.map(Stage::name).join(", ")
                ),
            })?;
            out.push(stage);
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(ConfigError::Invalid {
                field: "stages".into(),
                reason: "no stages selected".into(),
            });
        }
        if out.contains(&Stage::Synth) && out.contains(&Stage::Ingest) {
            return Err(ConfigError::Invalid {
                field: "stages".into(),
                reason: "synth and ingest both produce the stack; select one".into(),
            });
        }
        Ok(out)
    }
}

/// Artifact paths under a run root.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn stack(&self) -> PathBuf {
        self.root.join("stack")
    }
    pub fn truth(&self) -> PathBuf {
        self.root.join("truth")
    }
    pub fn labels(&self) -> PathBuf {
        self.root.join("labels")
    }
    pub fn segment_log(&self) -> PathBuf {
        self.root.join("segment_log.txt")
    }
    pub fn eval_kv(&self) -> PathBuf {
        self.root.join("eval.kv")
    }
    pub fn eval_table(&self) -> PathBuf {
        self.root.join("eval_table.txt")
    }
    pub fn metrics_kv(&self) -> PathBuf {
        self.root.join("metrics.kv")
    }
    pub fn metrics_series(&self) -> PathBuf {
        self.root.join("metrics_series.tsv")
    }
    pub fn meshes(&self) -> PathBuf {
        self.root.join("meshes")
    }
    pub fn reconstruct_kv(&self) -> PathBuf {
        self.root.join("reconstruct.kv")
    }
    pub fn augment(&self) -> PathBuf {
        self.root.join("augment")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }
    pub fn failed_marker(&self) -> PathBuf {
        self.root.join("FAILED")
    }
}

/// Renders a phantom and writes its image stack and ground-truth labels.
pub fn run_synth(cfg: &RunConfig, stack_dir: &Path, truth_dir: &Path) -> Result<(), StageError> {
    let manifest = cfg.scan.manifest()?;
    let (stack, truth) = synth_phantom(&cfg.synth.phantom_spec(cfg.seed), &manifest)?;
    write_stack(stack_dir, &stack)?;
    write_labels(truth_dir, &truth)?;
    Ok(())
}

/// Detects the scan start in a frame directory and writes the cropped stack.
/// Returns the detected start frame.
pub fn run_ingest(cfg: &RunConfig, frames_dir: &Path, stack_dir: &Path) -> Result<usize, StageError> {
    let capture = cfg.ingest.capture_config(&cfg.scan)?;
    let frames = read_frames(frames_dir)?;
    let start = detect_scan_start(&frames, &capture)?;
    let stack = assemble_stack(&frames, start, &capture)?;
    write_stack(stack_dir, &stack)?;
    Ok(start)
}

pub fn run_segment(
    cfg: &SegmentConfig,
    stack_dir: &Path,
    labels_dir: &Path,
    log_path: &Path,
) -> Result<StackSegmentation, StageError> {
    let stack = read_stack(stack_dir)?;
    let seg = segment_stack(&stack, cfg)?;
    write_labels(labels_dir, &seg.labels)?;
    write_file(log_path, seg.log_lines().join("\n") + "\n")?;
    Ok(seg)
}

pub fn run_eval(pred_dir: &Path, reference_dir: &Path, kv_path: &Path, table_path: &Path) -> Result<StackIouReport, StageError> {
    let (pred, reference) = (read_labels(pred_dir)?, read_labels(reference_dir)?);
    let report = stack_iou_stats(&pred, &reference, &Class::ALL)?;
    write_file(kv_path, stack_report_kv(&report))?;
    let summary = IouSummary::from_parts(report.overall, &report.per_class).expect("all classes scored");
    write_file(table_path, render_table(&[("classical (this run)", &summary)]))?;
    Ok(report)
}

pub fn run_metrics(
    labels_dir: &Path,
    harmonics: usize,
    kv_path: &Path,
    series_path: Option<&Path>,
) -> Result<MetricsReport, StageError> {
    let vol = read_labels(labels_dir)?;
    let report = metrics_stack(&vol, harmonics)?;
    write_file(kv_path, report.to_kv())?;
    if let Some(p) = series_path {
        write_file(p, report.series_tsv())?;
    }
    Ok(report)
}

fn stats_kv(out: &mut String, name: &str, grid: &VoxelGrid, mesh: Option<&crate::reconstruct::MeshStats>) {
    let _ = writeln!(out, "{name}.voxels={}", grid.count());
    let _ = writeln!(out, "{name}.voxel_volume_mm3={:.6}", grid.count() as f64 * grid.voxel_volume_mm3());
    match mesh {
        None => {
            let _ = writeln!(out, "{name}.mesh=none");
        }
        Some(s) => {
            let _ = writeln!(out, "{name}.mesh.volume_mm3={:.6}", s.volume_mm3);
            let _ = writeln!(out, "{name}.mesh.area_mm2={:.6}", s.area_mm2);
            let _ = writeln!(out, "{name}.mesh.watertight={}", s.watertight);
            let _ = writeln!(out, "{name}.mesh.euler_characteristic={}", s.euler_characteristic);
            let _ = writeln!(out, "{name}.mesh.shells={}", s.shell_count);
            let _ = writeln!(out, "{name}.mesh.vertices={}", s.vertex_count);
            let _ = writeln!(out, "{name}.mesh.triangles={}", s.triangle_count);
        }
    }
}

/// Part names and files written by [`run_reconstruct`].
pub const MESH_PARTS: [&str; 5] = ["filled", "resection", "central_region", "peripheral", "central"];

/// One mesh per component and class grid; empty parts are reported without a file.
pub fn run_reconstruct(cfg: &RunConfig, labels_dir: &Path, out_dir: &Path, report_path: &Path) -> Result<(), StageError> {
    let format = cfg.reconstruct.mesh_format()?;
    let vol = read_labels(labels_dir)?;
    let g = derive_component_grids(&vol);
    let parts: [(&str, &VoxelGrid); 5] = [
        ("filled", &g.filled),
        ("resection", &g.resection),
        ("central_region", &g.central_region),
        ("peripheral", g.class(Class::Peripheral).expect("derived")),
        ("central", g.class(Class::Central).expect("derived")),
    ];
    fs::create_dir_all(out_dir).map_err(|source| StageError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut report = String::new();
    let _ = writeln!(report, "format={}", format.extension());
    let _ = writeln!(report, "smoothing_iterations={}", cfg.reconstruct.smoothing_iterations);
    for (name, grid) in parts {
        if grid.is_empty() {
            stats_kv(&mut report, name, grid, None);
            continue;
        }
        let mut mesh = marching_cubes(grid, 0.5)?;
        if cfg.reconstruct.smoothing_iterations > 0 {
            mesh = laplacian_smooth(&mesh, cfg.reconstruct.smoothing_iterations, cfg.reconstruct.smoothing_lambda);
        }
        let stats = mesh_stats(&mesh)?;
        export_mesh(&mesh, format, &out_dir.join(format!("{name}.{}", format.extension())))?;
        stats_kv(&mut report, name, grid, Some(&stats));
    }
    write_file(report_path, report)
}

fn save_grid(grid: &VoxelGrid, path: &Path) -> Result<(), StageError> {
    grid.save(path).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_augment_outputs(
    inputs: &AugmentInputs,
    variants: &[AugmentedVariant],
    report: &DiversityReport,
    format: MeshFormat,
    out_dir: &Path,
) -> Result<(), StageError> {
    fs::create_dir_all(out_dir).map_err(|source| StageError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    save_grid(&inputs.filled, &out_dir.join("filled.pvg"))?;
    save_grid(&inputs.resection, &out_dir.join("resection.pvg"))?;
    save_grid(&inputs.central_region, &out_dir.join("central_region.pvg"))?;
    for v in variants {
        save_grid(&v.resection, &out_dir.join(format!("variant_{:03}_resection.pvg", v.index)))?;
        export_mesh(&v.applied.mesh, format, &out_dir.join(format!("variant_{:03}.{}", v.index, format.extension())))?;
    }
    write_file(&out_dir.join("diversity.kv"), report.to_kv())
}

/// Generates `cfg.variant_count` variants from a label volume's resection.
pub fn run_augment(
    cfg: &AugmentConfig,
    format: MeshFormat,
    labels_dir: &Path,
    out_dir: &Path,
) -> Result<DiversityReport, StageError> {
    let vol = read_labels(labels_dir)?;
    let inputs = prepare_inputs(&vol, cfg)?;
    let variants = generate_variants(&inputs, cfg)?;
    let report = diversity_report(&variants, &inputs.resection, cfg)?;
    write_augment_outputs(&inputs, &variants, &report, format, out_dir)?;
    Ok(report)
}

/// Applies externally generated resection volumes to stored inputs.
pub fn run_augment_imported(
    cfg: &AugmentConfig,
    format: MeshFormat,
    inputs_dir: &Path,
    imported: &[PathBuf],
    out_dir: &Path,
) -> Result<DiversityReport, StageError> {
    let load = |p: &Path| VoxelGrid::load(p).map_err(StageError::from);
    let inputs = AugmentInputs {
        filled: load(&inputs_dir.join("filled.pvg"))?,
        resection: load(&inputs_dir.join("resection.pvg"))?,
        central_region: load(&inputs_dir.join("central_region.pvg"))?,
    };
    let variants = imported
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let resection = load(p)?;
            let applied = apply_variant(&inputs.filled, &resection)?;
            Ok(AugmentedVariant {
                index,
                resection,
                applied,
            })
        })
        .collect::<Result<Vec<_>, StageError>>()?;
    let report = diversity_report(&variants, &inputs.resection, cfg)?;
    write_augment_outputs(&inputs, &variants, &report, format, out_dir)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub wall_seconds: f64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_path: Option<PathBuf>,
    pub config_sha256: String,
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub inputs: Vec<PathBuf>,
    pub threads: usize,
    pub records: Vec<StageRecord>,
    pub succeeded: bool,
    /// Resolved configuration (TOML).
    pub config: String,
}

#[derive(Debug, Error)]
#[error("stage {} failed: {error}", stage.name())]
pub struct PipelineFailure {
    pub stage: Stage,
    pub error: StageError,
    pub manifest: RunManifest,
}

impl PipelineFailure {
    pub fn exit_code(&self) -> i32 {
        10 + self.stage.index() as i32
    }
}

fn run_stage(stage: Stage, cfg: &RunConfig, layout: &RunLayout) -> Result<(), StageError> {
    let need = |p: PathBuf, what: &str| {
        if p.exists() {
            Ok(p)
        } else {
            Err(StageError::MissingInput(format!("{what} not found at {}", p.display())))
        }
    };
    match stage {
        Stage::Synth => run_synth(cfg, &layout.stack(), &layout.truth()),
        Stage::Ingest => {
            let frames = cfg
                .ingest
                .frames_dir
                .clone()
                .ok_or_else(|| StageError::MissingInput("ingest.frames_dir is not set".into()))?;
            run_ingest(cfg, &frames, &layout.stack()).map(|_| ())
        }
        Stage::Segment => run_segment(
            &cfg.segment,
            &need(layout.stack(), "image stack")?,
            &layout.labels(),
            &layout.segment_log(),
        )
        .map(|_| ()),
        Stage::Eval => {
            let reference = match &cfg.eval.reference_dir {
                Some(p) => need(p.clone(), "reference labels")?,
                None => need(layout.truth(), "reference labels (set eval.reference_dir)")?,
            };
            run_eval(&need(layout.labels(), "segmented labels")?, &reference, &layout.eval_kv(), &layout.eval_table())
                .map(|_| ())
        }
        Stage::Metrics => run_metrics(
            &need(layout.labels(), "segmented labels")?,
            cfg.metrics.harmonics,
            &layout.metrics_kv(),
            Some(&layout.metrics_series()),
        )
        .map(|_| ()),
        Stage::Reconstruct => run_reconstruct(cfg, &need(layout.labels(), "segmented labels")?, &layout.meshes(), &layout.reconstruct_kv()),
        Stage::Augment => run_augment(
            &cfg.augment,
            cfg.reconstruct.mesh_format()?,
            &need(layout.labels(), "segmented labels")?,
            &layout.augment(),
        )
        .map(|_| ()),
    }
}

/// Runs `stages` in execution order under `root`, writing the run manifest
/// either way and a `FAILED` marker (stage name and error) on failure.
/// Artifacts of completed stages are kept.
pub fn run_pipeline(
    cfg: &RunConfig,
    config_path: Option<&Path>,
    stages: &[Stage],
    root: &Path,
) -> Result<RunManifest, Box<PipelineFailure>> {
    let layout = RunLayout::new(root);
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_path: config_path.map(Path::to_path_buf),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        stages: stages.clone(),
        inputs: [cfg.ingest.frames_dir.clone(), cfg.eval.reference_dir.clone()]
            .into_iter()
            .flatten()
            .collect(),
        threads: rayon::current_num_threads(),
        records: Vec::new(),
        succeeded: false,
        config: cfg.to_toml(),
    };
    let write_manifest = |m: &RunManifest| {
        let _ = write_file(&layout.manifest(), serde_json::to_string_pretty(m).expect("serializes") + "\n");
    };
    let _ = fs::create_dir_all(root);
    let _ = fs::remove_file(layout.failed_marker());
    for &stage in &stages {
        let t = Instant::now();
        let result = run_stage(stage, cfg, &layout);
        let wall_seconds = t.elapsed().as_secs_f64();
        match result {
            Ok(()) => manifest.records.push(StageRecord {
                stage,
                wall_seconds,
                ok: true,
                error: None,
            }),
            Err(error) => {
                manifest.records.push(StageRecord {
                    stage,
                    wall_seconds,
                    ok: false,
                    error: Some(error.to_string()),
                });
                write_manifest(&manifest);
                let _ = write_file(&layout.failed_marker(), format!("stage={}\nerror={error}\n", stage.name()));
                return Err(Box::new(PipelineFailure { stage, error, manifest }));
            }
        }
    }
    manifest.succeeded = true;
    write_manifest(&manifest);
    Ok(manifest)
}
