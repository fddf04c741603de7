mod config;
mod fail;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use labelmerge::phantom::{generate_phantom, PhantomSpec};
use labelmerge::split::{load_influence_maps, save_influence_maps};
use labelmerge::{
    apply_merge, build_influence_maps, build_support_map, load_labels, min_distance_matrix, plan_from_matrices, report,
    save_labels, GridMeta, LabelVolume, MergeParams, MergePlan, RatioMatrix, SupportMap,
};
use rayon::prelude::*;
use serde::Serialize;

use config::PipelineConfig;
use fail::{AtPath, CliResult, Failure};

#[derive(Parser, Debug)]
#[command(
    name = "labelmerge",
    version,
    about = "Merge and split high-cardinality label volumes"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Pipeline config (JSON). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving all artefacts.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Background label ID.
    #[arg(long, global = true)]
    background: Option<u32>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pool training label volumes into a support map bundle.
    Support {
        /// Directory of training label volumes.
        #[arg(long)]
        training: Option<PathBuf>,
    },
    /// Build the merge plan and the pairwise matrices from a support bundle.
    Plan {
        #[arg(long)]
        support: Option<PathBuf>,
        /// Minimum distance (mm) two labels need to share a merged label.
        #[arg(long)]
        delta_d: Option<f64>,
        /// Volume ratio two labels must stay below to share a merged label.
        #[arg(long)]
        delta_v: Option<f64>,
        /// Label kept in a group of its own (repeatable).
        #[arg(long = "pin")]
        pins: Vec<u32>,
    },
    /// Rewrite label volumes to merged labels.
    Merge {
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Directory of label volumes (defaults to the training directory).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Compute one influence map per merged label.
    Influence {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        support: Option<PathBuf>,
    },
    /// Recover original labels from merged predictions.
    Split {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        influence: Option<PathBuf>,
        /// Directory of merged predictions (defaults to the predictions directory).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Evaluate {
        /// Predictions (defaults to the split output directory).
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Merged-label counts over a grid of thresholds.
    Sweep {
        #[arg(long)]
        support: Option<PathBuf>,
        /// Comma-separated distance thresholds in mm.
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 5.0, 10.0, 15.0, 20.0])]
        delta_d: Vec<f64>,
        /// Comma-separated volume ratio thresholds ("inf" allowed).
        #[arg(long, value_delimiter = ',', default_values_t = [1.5, 2.0, 3.5, 5.0, f64::INFINITY])]
        delta_v: Vec<f64>,
        #[arg(long = "pin")]
        pins: Vec<u32>,
    },
    /// Generate a synthetic training set.
    Phantom {
        /// Phantom spec (JSON); built-in defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("labelmerge: error: {f}");
            eprintln!("{}", f.json_line());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = cli.common.output_dir {
        cfg.output_dir = d;
    }
    if let Some(t) = cli.common.threads {
        cfg.threads = t;
    }
    if let Some(b) = cli.common.background {
        cfg.background = b;
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Failure {
                kind: "threads",
                message: e.to_string(),
                path: None,
                input: false,
            })?;
    }
    create_dir(&cfg.output_dir)?;

    match cli.command {
        Command::Support { training } => {
            if training.is_some() {
                cfg.training_dir = training;
            }
            cmd_support(&cfg)
        }
        Command::Plan {
            support,
            delta_d,
            delta_v,
            pins,
        } => {
            if let Some(d) = delta_d {
                cfg.delta_d_mm = d;
            }
            if let Some(v) = delta_v {
                cfg.delta_v = v;
            }
            if !pins.is_empty() {
                cfg.pins = pins;
            }
            cmd_plan(&cfg, support)
        }
        Command::Merge { plan, input } => cmd_merge(&cfg, plan, input),
        Command::Influence { plan, support } => cmd_influence(&cfg, plan, support),
        Command::Split { plan, influence, input } => cmd_split(&cfg, plan, influence, input),
        Command::Evaluate { pred, gt } => cmd_evaluate(&cfg, pred, gt),
        Command::Sweep {
            support,
            delta_d,
            delta_v,
            pins,
        } => {
            if !pins.is_empty() {
                cfg.pins = pins;
            }
            cmd_sweep(&cfg, support, &delta_d, &delta_v)
        }
        Command::Phantom { spec, seed } => {
            if seed.is_some() {
                cfg.seed = seed;
            }
            cmd_phantom(&cfg, spec)
        }
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure {
        kind: "io",
        message: format!("cannot create directory: {e}"),
        path: Some(dir.to_path_buf()),
        input: false,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure {
        kind: "io",
        message: format!("cannot write file: {e}"),
        path: Some(path.to_path_buf()),
        input: false,
    })
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(labelmerge::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// File name without a `.nii` or `.nii.gz` extension.
fn stem(path: &Path) -> String {
    let name = file_name(path);
    name.strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .unwrap_or(&name)
        .to_string()
}

/// NIfTI files directly inside `dir`, sorted by name.
fn list_volumes(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::input("io", format!("cannot read directory: {e}")).at(dir))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Failure::input("io", format!("cannot read directory: {e}")).at(dir))?
            .path();
        let name = file_name(&path);
        if path.is_file() && (name.ends_with(".nii") || name.ends_with(".nii.gz")) {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Failure::input("empty_input", "no .nii or .nii.gz files found").at(dir));
    }
    files.sort();
    Ok(files)
}

fn load_all(files: &[PathBuf]) -> CliResult<Vec<LabelVolume>> {
    files.par_iter().map(|p| load_labels(p).at(p)).collect()
}

/// Reject any volume whose grid differs from `reference`, naming the file.
fn check_grids(reference: &GridMeta, files: &[PathBuf], vols: &[LabelVolume]) -> CliResult<()> {
    for (path, v) in files.iter().zip(vols) {
        let name = path.display().to_string();
        reference.ensure_compatible(v.meta(), &name).at(path)?;
    }
    Ok(())
}

fn load_plan(cfg: &PipelineConfig, plan: Option<PathBuf>) -> CliResult<(PathBuf, MergePlan)> {
    let path = plan.unwrap_or_else(|| cfg.plan_path());
    let p = MergePlan::load(&path).at(&path)?;
    Ok((path, p))
}

fn load_support(cfg: &PipelineConfig, support: Option<PathBuf>) -> CliResult<SupportMap> {
    let dir = support.unwrap_or_else(|| cfg.support_dir());
    SupportMap::load(&dir).at(&dir)
}

fn foreground(s: &SupportMap, background: u32) -> Vec<u32> {
    s.label_table().into_iter().filter(|&l| l != background).collect()
}

fn cmd_support(cfg: &PipelineConfig) -> CliResult<()> {
    let dir = cfg.require(&cfg.training_dir, "training")?;
    let files = list_volumes(dir)?;
    let vols = load_all(&files)?;
    check_grids(vols[0].meta(), &files, &vols)?;
    let s = build_support_map(&vols)?;
    let out = cfg.support_dir();
    s.save(&out).at(&out)?;
    eprintln!(
        "labelmerge: support map over {} volumes, {} labels -> {}",
        s.n_train(),
        s.label_table().len(),
        out.display()
    );
    Ok(())
}

fn cmd_plan(cfg: &PipelineConfig, support: Option<PathBuf>) -> CliResult<()> {
    let s = load_support(cfg, support)?;
    let params = MergeParams {
        delta_d: cfg.delta_d_mm,
        delta_v: cfg.delta_v,
        pins: cfg.pins.clone(),
        background: cfg.background,
    };
    params.validate()?;
    let labels = foreground(&s, cfg.background);
    let d = min_distance_matrix(&s, &labels)?;
    let v = RatioMatrix::from_support(&s, &labels)?;
    let plan = plan_from_matrices(&d, &v, &params, s.training_hash())?;

    write_file(&cfg.output_dir.join("distance_matrix.csv"), d.to_csv())?;
    write_file(&cfg.output_dir.join("ratio_matrix.csv"), v.to_csv())?;
    let path = cfg.plan_path();
    plan.save(&path).at(&path)?;
    eprintln!(
        "labelmerge: {} original labels -> {} merged labels (delta_d {} mm, delta_v {})",
        labels.len(),
        plan.n_merged(),
        cfg.delta_d_mm,
        cfg.delta_v
    );
    Ok(())
}

fn cmd_merge(cfg: &PipelineConfig, plan: Option<PathBuf>, input: Option<PathBuf>) -> CliResult<()> {
    let (_, plan) = load_plan(cfg, plan)?;
    let input = input.or_else(|| cfg.training_dir.clone());
    let files = list_volumes(cfg.require(&input, "input")?)?;
    let out = cfg.output_dir.join("merged");
    create_dir(&out)?;
    files
        .par_iter()
        .map(|p| {
            let merged = apply_merge(&load_labels(p).at(p)?, &plan).at(p)?;
            let dest = out.join(format!("{}_merged.nii.gz", stem(p)));
            save_labels(&merged, &dest).at(&dest)
        })
        .collect::<CliResult<Vec<()>>>()?;
    eprintln!("labelmerge: merged {} volumes -> {}", files.len(), out.display());
    Ok(())
}

fn cmd_influence(cfg: &PipelineConfig, plan: Option<PathBuf>, support: Option<PathBuf>) -> CliResult<()> {
    let (_, plan) = load_plan(cfg, plan)?;
    let s = load_support(cfg, support)?;
    if s.training_hash() != plan.provenance.training_hash {
        return Err(labelmerge::Error::DigestMismatch {
            expected: plan.provenance.training_hash.clone(),
            found: s.training_hash().to_string(),
        }
        .into());
    }
    let maps = build_influence_maps(&plan, &s)?;
    let out = cfg.influence_dir();
    save_influence_maps(&out, &plan, &maps).at(&out)?;
    eprintln!("labelmerge: {} influence maps -> {}", maps.len(), out.display());
    Ok(())
}

fn cmd_split(
    cfg: &PipelineConfig,
    plan: Option<PathBuf>,
    influence: Option<PathBuf>,
    input: Option<PathBuf>,
) -> CliResult<()> {
    let (_, plan) = load_plan(cfg, plan)?;
    let dir = influence.unwrap_or_else(|| cfg.influence_dir());
    let maps = load_influence_maps(&dir, &plan).at(&dir)?;
    let input = input.or_else(|| cfg.predictions_dir.clone());
    let files = list_volumes(cfg.require(&input, "predictions")?)?;
    let out = cfg.output_dir.join("split");
    create_dir(&out)?;
    files
        .par_iter()
        .map(|p| {
            let labels = labelmerge::split(&load_labels(p).at(p)?, &plan, &maps).at(p)?;
            let name = stem(p);
            let base = name.strip_suffix("_merged").unwrap_or(&name);
            let dest = out.join(format!("{base}_split.nii.gz"));
            save_labels(&labels, &dest).at(&dest)
        })
        .collect::<CliResult<Vec<()>>>()?;
    eprintln!("labelmerge: split {} volumes -> {}", files.len(), out.display());
    Ok(())
}

/// Case name shared by a prediction and its reference.
fn case_name(path: &Path) -> String {
    let s = stem(path);
    for suffix in ["_split", "_merged"] {
        if let Some(base) = s.strip_suffix(suffix) {
            return base.to_string();
        }
    }
    s
}

#[derive(Serialize)]
struct CaseSummary {
    case: String,
    prediction: String,
    ground_truth: String,
    n_labels: usize,
    mean_dice: Option<f64>,
}

#[derive(Serialize)]
struct EvaluationSummary {
    version: u32,
    background: u32,
    dice_definition: &'static str,
    rel_vol_err_definition: &'static str,
    mean_dice_definition: &'static str,
    cases: Vec<CaseSummary>,
    mean_dice_over_cases: Option<f64>,
}

fn cmd_evaluate(cfg: &PipelineConfig, pred: Option<PathBuf>, gt: Option<PathBuf>) -> CliResult<()> {
    let pred_dir = pred.unwrap_or_else(|| cfg.output_dir.join("split"));
    let gt = gt.or_else(|| cfg.ground_truth_dir.clone());
    let gt_files = list_volumes(cfg.require(&gt, "ground truth")?)?;
    let pred_files = list_volumes(&pred_dir)?;

    let mut pairs = Vec::with_capacity(pred_files.len());
    for p in &pred_files {
        let case = case_name(p);
        let g = gt_files
            .iter()
            .find(|g| case_name(g) == case)
            .ok_or_else(|| Failure::input("unmatched_case", format!("no ground truth for case {case}")).at(p))?;
        pairs.push((case, p.clone(), g.clone()));
    }

    let out = cfg.output_dir.join("evaluation");
    create_dir(&out)?;
    let cases = pairs
        .par_iter()
        .map(|(case, p, g)| {
            let pv = load_labels(p).at(p)?;
            let gv = load_labels(g).at(g)?;
            let r = report(&pv, &gv, cfg.background).at(p)?;
            write_file(&out.join(format!("{case}_metrics.csv")), r.to_csv())?;
            Ok(CaseSummary {
                case: case.clone(),
                prediction: file_name(p),
                ground_truth: file_name(g),
                n_labels: r.rows.len(),
                mean_dice: r.mean_dice,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let defined: Vec<f64> = cases.iter().filter_map(|c| c.mean_dice).collect();
    let summary = EvaluationSummary {
        version: 1,
        background: cfg.background,
        dice_definition: "2 |pred AND gt| / (|pred| + |gt|); empty when both are empty",
        rel_vol_err_definition: "(pred_voxels - gt_voxels) / gt_voxels, signed; empty when gt_voxels = 0",
        mean_dice_definition: "average Dice over labels present in the ground truth, background excluded",
        mean_dice_over_cases: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        cases,
    };
    write_file(&out.join("summary.json"), to_json(&summary)?)?;
    match summary.mean_dice_over_cases {
        Some(m) => eprintln!("labelmerge: {} cases, mean dice {m:.4}", summary.cases.len()),
        None => eprintln!("labelmerge: {} cases, mean dice undefined", summary.cases.len()),
    }
    Ok(())
}

fn cmd_sweep(cfg: &PipelineConfig, support: Option<PathBuf>, delta_d: &[f64], delta_v: &[f64]) -> CliResult<()> {
    for &dd in delta_d {
        for &dv in delta_v {
            MergeParams {
                delta_d: dd,
                delta_v: dv,
                ..MergeParams::default()
            }
            .validate()?;
        }
    }
    let s = load_support(cfg, support)?;
    let labels = foreground(&s, cfg.background);
    let d = min_distance_matrix(&s, &labels)?;
    let v = RatioMatrix::from_support(&s, &labels)?;
    let rows = labelmerge::sweep(&d, &v, delta_d, delta_v, &cfg.pins, cfg.background)?;
    let path = cfg.output_dir.join("sweep.csv");
    write_file(&path, labelmerge::plan::sweep_csv(&rows))?;
    eprintln!("labelmerge: {} threshold pairs -> {}", rows.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct PhantomMetadata<'a> {
    version: u32,
    spec: &'a PhantomSpec,
    files: Vec<String>,
    truth: &'a labelmerge::phantom::PhantomTruth,
}

fn cmd_phantom(cfg: &PipelineConfig, spec: Option<PathBuf>) -> CliResult<()> {
    let mut spec = match &spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::input("spec", format!("cannot read phantom spec: {e}")).at(path))?;
            serde_json::from_str::<PhantomSpec>(&text)
                .map_err(|e| Failure::input("spec", format!("invalid phantom spec: {e}")).at(path))?
        }
        None => PhantomSpec::default(),
    };
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    let ph = generate_phantom(&spec)?;
    let out = cfg.output_dir.join("phantom");
    create_dir(&out)?;
    let files: Vec<String> = (0..ph.volumes.len())
        .map(|k| format!("subject_{k:03}.nii.gz"))
        .collect();
    ph.volumes
        .par_iter()
        .zip(&files)
        .map(|(v, f)| {
            let dest = out.join(f);
            save_labels(v, &dest).at(&dest)
        })
        .collect::<CliResult<Vec<()>>>()?;
    let meta = PhantomMetadata {
        version: 1,
        spec: &spec,
        files,
        truth: &ph.truth,
    };
    write_file(&out.join("metadata.json"), to_json(&meta)?)?;
    eprintln!(
        "labelmerge: {} phantom volumes with {} labels -> {}",
        ph.volumes.len(),
        ph.truth.labels.len(),
        out.display()
    );
    Ok(())
}
