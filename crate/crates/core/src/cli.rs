//! The `kinalign` command line: dataset generation, alignment, ablation
//! sweeps and re-evaluation of saved results.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image::Mask;
use crate::kinematics::JointConfig;
use crate::metrics::{self, EvalRecord};
use crate::optimizer::{align, align_with_checkpoints, joints_display, segment, KinematicState, OptimizeSpec};
use crate::plot::{self, Range};
use crate::scenegen::{frame_perturbation, generate_dataset, Dataset, DomainSpec, Frame, Manifest};

pub const ITER_CHECKPOINTS: [usize; 6] = [1, 10, 20, 30, 50, 100];
pub const ERROR_MAGNITUDES_DEG: [f64; 4] = [0.0, 1.0, 2.0, 3.0];
pub const THREADS_ENV: &str = "KINALIGN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "kinalign", version, about = "Kinematics correction and tool segmentation by differentiable rendering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence with ground truth and perturbed joints.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "regular")]
        domain: String,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long = "error-deg", default_value_t = 1.0)]
        error_deg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correct the measured joints of every frame and score the masks.
    Align {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Segment straight from the measured joints.
        #[arg(long = "no-optim")]
        no_optim: bool,
    },
    /// Dice/MAE as a function of iteration count or perturbation size.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        sweep: Sweep,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute metrics from saved masks and joints.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// `results.json` written by `align`.
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Iters,
    Error,
}

/// 2 for bad configuration or input, 3 for filesystem and image I/O, 1 for
/// anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::UnknownDomain(_) | Error::UnknownExtractor(_) | Error::Invalid(_) | Error::Json(_) | Error::EmptyList => 2,
        Error::Io { .. } | Error::PngDecode(_) | Error::PngEncode(_) => 3,
        _ => 1,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::Config {
            field: THREADS_ENV.into(),
            message: format!("expected a positive integer, got `{v}`"),
        })?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Invalid(e.to_string()))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen {
            config,
            domain,
            frames,
            error_deg,
            seed,
            out,
        } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            let path = cmd_gen(&cfg, frames, error_deg, &domain, seed, &out)?;
            println!("{}", path.display());
        }
        Command::Align {
            config,
            manifest,
            out,
            no_optim,
        } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            let outcome = cmd_align(&cfg, &manifest, &out, no_optim)?;
            print!("{}", outcome.table);
            for f in &outcome.failures {
                eprintln!("frame {} failed: {}", f.frame_id, f.error);
            }
        }
        Command::Ablate {
            config,
            manifest,
            sweep,
            out,
        } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            print!("{}", cmd_ablate(&cfg, &manifest, sweep, &out)?);
        }
        Command::Eval { manifest, results } => {
            print!("{}", cmd_eval(&manifest, &results)?.to_table());
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Appends a timestamped line to `run.log`. Timestamps live only here so
/// the JSON outputs stay reproducible.
fn log_line(dir: &Path, msg: &str) -> Result<()> {
    let path = dir.join("run.log");
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "[{secs}] {msg}").map_err(|e| Error::io(&path, e))
}

/// Writes a dataset and returns the manifest path.
pub fn cmd_gen(cfg: &RunConfig, n_frames: usize, error_deg: f64, domain: &str, seed: u64, out: &Path) -> Result<PathBuf> {
    let domain = DomainSpec::from_name(domain, seed).map_err(|e| Error::Config {
        field: "domain".into(),
        message: e.to_string(),
    })?;
    if n_frames == 0 {
        return Err(Error::Config {
            field: "frames".into(),
            message: "must be at least 1".into(),
        });
    }
    if !(error_deg.is_finite() && error_deg >= 0.0) {
        return Err(Error::Config {
            field: "error_deg".into(),
            message: "must be finite and non-negative".into(),
        });
    }
    create_dir(out)?;
    let chain = cfg.chain()?;
    let (path, _) = generate_dataset(&chain, &cfg.camera, &cfg.light, n_frames, error_deg, &domain, seed, out)?;
    cfg.write_effective(out)?;
    log_line(
        out,
        &format!("gen domain={} frames={n_frames} error_deg={error_deg} seed={seed}", domain.kind.name()),
    )?;
    Ok(path)
}

/// Per-frame output of `align`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_id: usize,
    pub domain: String,
    /// Empty for `--no-optim`.
    pub loss_trace: Vec<f64>,
    pub best_iteration: usize,
    pub best_loss: Option<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Degrees for revolute joints, mm for prismatic ones.
    pub joints_initial: Vec<f64>,
    pub joints_final: Vec<f64>,
    pub joints_gt: Vec<f64>,
    /// Final joints in chain units (rad, m).
    pub joints_final_raw: Vec<f64>,
    /// Exact mask of the final pose, relative to the results directory.
    pub mask: String,
    /// Thresholded soft silhouette at the best iterate, when optimized.
    pub soft_mask: Option<String>,
    pub record: EvalRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub frame_id: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignResults {
    pub no_optim: bool,
    pub frames: Vec<FrameResult>,
    pub failures: Vec<FrameFailure>,
}

#[derive(Clone, Debug)]
pub struct AlignOutcome {
    pub results_path: PathBuf,
    pub results: AlignResults,
    pub failures: Vec<FrameFailure>,
    pub table: String,
}

/// Loads a dataset, rejecting one without frames.
pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let ds = Dataset::load(manifest)?;
    if ds.frames.is_empty() {
        return Err(Error::Config {
            field: "manifest".into(),
            message: format!("{} lists no frames", manifest.display()),
        });
    }
    Ok(ds)
}

/// Alignment settings for a dataset: the config's descent settings, with the
/// renderer falling back to the one the data was generated with.
pub fn dataset_spec(cfg: &RunConfig, ds: &Dataset) -> OptimizeSpec {
    let mut spec = cfg.optimize_spec();
    spec.render.get_or_insert(ds.manifest.render);
    spec
}

pub fn measured_state(ds: &Dataset, joints: JointConfig) -> KinematicState {
    KinematicState {
        chain: ds.chain.clone(),
        joints,
        camera: ds.manifest.camera.clone(),
        light: ds.manifest.light,
    }
}

fn record_for(ds: &Dataset, frame: &Frame, initial: &JointConfig, final_q: &JointConfig, final_mask: &Mask, iterations: usize) -> Result<EvalRecord> {
    let kinds = ds.chain.kinds();
    let initial_mask = segment(&measured_state(ds, initial.clone()))?;
    let rec = EvalRecord {
        frame_id: frame.index,
        dice_initial: metrics::dice(&initial_mask, &frame.gt_mask)?,
        dice_final: metrics::dice(final_mask, &frame.gt_mask)?,
        mae_initial_deg: metrics::joint_mae(&kinds, initial, &frame.gt_joints)?,
        mae_final_deg: metrics::joint_mae(&kinds, final_q, &frame.gt_joints)?,
        prismatic_initial_mm: metrics::prismatic_mae_mm(&kinds, initial, &frame.gt_joints)?,
        prismatic_final_mm: metrics::prismatic_mae_mm(&kinds, final_q, &frame.gt_joints)?,
        iterations,
        domain: frame.domain.kind.name().into(),
    };
    rec.validate()?;
    Ok(rec)
}

fn align_frame(ds: &Dataset, spec: &OptimizeSpec, frame: &Frame, no_optim: bool, out: &Path) -> Result<FrameResult> {
    let measured = measured_state(ds, frame.measured_joints.clone());
    let stem = format!("{:06}", frame.index);
    let mask_rel = format!("masks/{stem}_mask.png");
    let (final_q, trace, best_iteration, best_loss, iterations_run, converged, soft_mask) = if no_optim {
        (frame.measured_joints.clone(), Vec::new(), 0, None, 0, false, None)
    } else {
        let r = align(&measured, &frame.observed_image, &ds.background, spec)?;
        let soft_rel = format!("masks/{stem}_soft.png");
        r.mask.save_png(out.join(&soft_rel))?;
        (
            r.best_state.joints,
            r.loss_trace,
            r.best_iteration,
            Some(r.best_loss),
            r.iterations_run,
            r.converged,
            Some(soft_rel),
        )
    };
    let mask = segment(&measured.with_joints(final_q.clone()))?;
    mask.save_png(out.join(&mask_rel))?;
    let record = record_for(ds, frame, &frame.measured_joints, &final_q, &mask, iterations_run)?;
    Ok(FrameResult {
        frame_id: frame.index,
        domain: frame.domain.kind.name().into(),
        loss_trace: trace,
        best_iteration,
        best_loss,
        iterations_run,
        converged,
        joints_initial: joints_display(&ds.chain, &frame.measured_joints),
        joints_final: joints_display(&ds.chain, &final_q),
        joints_gt: joints_display(&ds.chain, &frame.gt_joints),
        joints_final_raw: final_q.0,
        mask: mask_rel,
        soft_mask,
        record,
    })
}

/// Aligns every frame of a dataset in parallel. Frames that fail are
/// listed in the results; the command fails only when all of them do.
pub fn cmd_align(cfg: &RunConfig, manifest: &Path, out: &Path, no_optim: bool) -> Result<AlignOutcome> {
    let ds = load_dataset(manifest)?;
    let spec = dataset_spec(cfg, &ds);
    spec.validate()?;
    create_dir(&out.join("masks"))?;
    cfg.write_effective(out)?;
    log_line(out, &format!("align manifest={} frames={} no_optim={no_optim}", manifest.display(), ds.frames.len()))?;

    let outcomes: Vec<Result<FrameResult>> = ds.frames.par_iter().map(|f| align_frame(&ds, &spec, f, no_optim, out)).collect();
    let mut frames = Vec::new();
    let mut failures = Vec::new();
    for (f, r) in ds.frames.iter().zip(outcomes) {
        match r {
            Ok(fr) => frames.push(fr),
            // Output failures abort the run; per-frame numerical trouble does not.
            Err(e @ (Error::Io { .. } | Error::PngEncode(_))) => return Err(e),
            Err(e) => failures.push(FrameFailure {
                frame_id: f.index,
                error: e.to_string(),
            }),
        }
    }
    let results = AlignResults {
        no_optim,
        frames,
        failures: failures.clone(),
    };
    let results_path = out.join("results.json");
    write_json(&results_path, &results)?;
    if results.frames.is_empty() {
        log_line(out, "all frames failed")?;
        return Err(Error::AllFramesFailed(ds.frames.len()));
    }
    let records: Vec<EvalRecord> = results.frames.iter().map(|f| f.record.clone()).collect();
    metrics::write_csv(&records, &out.join("records.csv"))?;
    let summary = metrics::aggregate(&records)?;
    write_text(&out.join("summary.json"), &(summary.to_json()? + "\n"))?;
    let table = summary.to_table();
    write_text(&out.join("summary.txt"), &table)?;
    log_line(out, &format!("done: {} ok, {} failed", results.frames.len(), failures.len()))?;
    Ok(AlignOutcome {
        results_path,
        results,
        failures,
        table,
    })
}

/// Dice and MAE of one frame at one sweep setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub frame_id: usize,
    pub domain: String,
    /// Checkpoint (iterations) or perturbation magnitude (degrees).
    pub setting: f64,
    pub dice_initial: f64,
    pub dice: f64,
    pub mae_initial_deg: f64,
    pub mae_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResults {
    pub sweep: Sweep,
    pub settings: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub failures: Vec<FrameFailure>,
}

fn sweep_iters(ds: &Dataset, spec: &OptimizeSpec, frame: &Frame) -> Result<Vec<SweepPoint>> {
    let kinds = ds.chain.kinds();
    let measured = measured_state(ds, frame.measured_joints.clone());
    let (_, checkpoints) = align_with_checkpoints(&measured, &frame.observed_image, &ds.background, spec, &ITER_CHECKPOINTS)?;
    let dice_initial = metrics::dice(&segment(&measured)?, &frame.gt_mask)?;
    let mae_initial = metrics::joint_mae(&kinds, &frame.measured_joints, &frame.gt_joints)?;
    checkpoints
        .iter()
        .map(|(k, st)| {
            Ok(SweepPoint {
                frame_id: frame.index,
                domain: frame.domain.kind.name().into(),
                setting: *k as f64,
                dice_initial,
                dice: metrics::dice(&segment(st)?, &frame.gt_mask)?,
                mae_initial_deg: mae_initial,
                mae_deg: metrics::joint_mae(&kinds, &st.joints, &frame.gt_joints)?,
            })
        })
        .collect()
}

fn sweep_error(ds: &Dataset, spec: &OptimizeSpec, frame: &Frame) -> Result<Vec<SweepPoint>> {
    let kinds = ds.chain.kinds();
    ERROR_MAGNITUDES_DEG
        .iter()
        .map(|&mag| {
            let q = frame_perturbation(&ds.chain, &frame.gt_joints, mag, ds.manifest.seed, frame.index)?;
            let measured = measured_state(ds, q.clone());
            let r = align(&measured, &frame.observed_image, &ds.background, spec)?;
            Ok(SweepPoint {
                frame_id: frame.index,
                domain: frame.domain.kind.name().into(),
                setting: mag,
                dice_initial: metrics::dice(&segment(&measured)?, &frame.gt_mask)?,
                dice: metrics::dice(&segment(&r.best_state)?, &frame.gt_mask)?,
                mae_initial_deg: metrics::joint_mae(&kinds, &q, &frame.gt_joints)?,
                mae_deg: metrics::joint_mae(&kinds, &r.best_state.joints, &frame.gt_joints)?,
            })
        })
        .collect()
}

fn mean_pm(values: &[f64], scale: f64, digits: usize) -> String {
    match metrics::Stat::of(values) {
        Ok(s) => format!("{:.*} ± {:.*}", digits, s.mean * scale, digits, s.std * scale),
        Err(_) => "-".into(),
    }
}

/// One row per domain: Dice at each checkpoint, or Dice and MAE at each
/// perturbation magnitude.
pub fn ablation_table(res: &AblationResults) -> String {
    let mut domains: Vec<&str> = Vec::new();
    for p in &res.points {
        if !domains.contains(&p.domain.as_str()) {
            domains.push(&p.domain);
        }
    }
    let mut header = vec!["domain".to_string()];
    for s in &res.settings {
        match res.sweep {
            Sweep::Iters => header.push(format!("{s}")),
            Sweep::Error => {
                header.push(format!("{s}°/Dice"));
                header.push(format!("{s}°/MAE"));
            }
        }
    }
    let rows: Vec<Vec<String>> = domains
        .iter()
        .map(|d| {
            let mut row = vec![d.to_string()];
            for &s in &res.settings {
                let pts: Vec<&SweepPoint> = res.points.iter().filter(|p| p.domain == *d && p.setting == s).collect();
                let dice: Vec<f64> = pts.iter().map(|p| p.dice).collect();
                row.push(mean_pm(&dice, 100.0, 1));
                if res.sweep == Sweep::Error {
                    let mae: Vec<f64> = pts.iter().map(|p| p.mae_deg).collect();
                    row.push(mean_pm(&mae, 1.0, 2));
                }
            }
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    metrics::render_table(&header, &rows)
}

/// Runs a sweep and writes `ablation_<sweep>.json`, the table, and scatter
/// plots of initial Dice against final Dice and final MAE.
pub fn cmd_ablate(cfg: &RunConfig, manifest: &Path, sweep: Sweep, out: &Path) -> Result<String> {
    let ds = load_dataset(manifest)?;
    let mut spec = dataset_spec(cfg, &ds);
    let settings: Vec<f64> = match sweep {
        Sweep::Iters => {
            spec.max_iters = spec.max_iters.max(*ITER_CHECKPOINTS.last().unwrap_or(&1));
            ITER_CHECKPOINTS.iter().map(|&k| k as f64).collect()
        }
        Sweep::Error => ERROR_MAGNITUDES_DEG.to_vec(),
    };
    spec.validate()?;
    create_dir(out)?;
    cfg.write_effective(out)?;
    let name = match sweep {
        Sweep::Iters => "iters",
        Sweep::Error => "error",
    };
    log_line(out, &format!("ablate sweep={name} manifest={} frames={}", manifest.display(), ds.frames.len()))?;

    let outcomes: Vec<Result<Vec<SweepPoint>>> = ds
        .frames
        .par_iter()
        .map(|f| match sweep {
            Sweep::Iters => sweep_iters(&ds, &spec, f),
            Sweep::Error => sweep_error(&ds, &spec, f),
        })
        .collect();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (f, r) in ds.frames.iter().zip(outcomes) {
        match r {
            Ok(p) => points.extend(p),
            Err(e) => failures.push(FrameFailure {
                frame_id: f.index,
                error: e.to_string(),
            }),
        }
    }
    if points.is_empty() {
        return Err(Error::AllFramesFailed(ds.frames.len()));
    }
    let res = AblationResults {
        sweep,
        settings,
        points,
        failures,
    };
    write_json(&out.join(format!("ablation_{name}.json")), &res)?;
    let table = ablation_table(&res);
    write_text(&out.join(format!("ablation_{name}.txt")), &table)?;

    // Final-setting points for the iteration sweep, all of them otherwise.
    let last = *res.settings.last().unwrap_or(&0.0);
    let shown: Vec<&SweepPoint> = res.points.iter().filter(|p| sweep == Sweep::Error || p.setting == last).collect();
    let dice_pts: Vec<(f64, f64)> = shown.iter().map(|p| (p.dice_initial, p.dice)).collect();
    let mae_pts: Vec<(f64, f64)> = shown.iter().map(|p| (p.dice_initial, p.mae_deg)).collect();
    let xr = Range::covering(dice_pts.iter().map(|p| p.0));
    plot::save_scatter(&dice_pts, xr, Range::covering(dice_pts.iter().map(|p| p.1)), &out.join(format!("scatter_{name}_dice.png")))?;
    plot::save_scatter(&mae_pts, xr, Range::covering(mae_pts.iter().map(|p| p.1)), &out.join(format!("scatter_{name}_mae.png")))?;
    log_line(out, &format!("done: {} points, {} failed frames", res.points.len(), res.failures.len()))?;
    Ok(table)
}

/// Re-scores an `align` run from its saved masks and joints.
pub fn cmd_eval(manifest: &Path, results: &Path) -> Result<metrics::Summary> {
    let m = Manifest::load(manifest)?;
    let text = std::fs::read_to_string(results).map_err(|e| Error::io(results, e))?;
    let res: AlignResults = serde_json::from_str(&text)?;
    let dir = results.parent().unwrap_or_else(|| Path::new("."));
    let chain = crate::kinematics::DhChain::load(Manifest::resolve(manifest, &m.chain_file))?;
    let kinds = chain.kinds();
    let records = res
        .frames
        .iter()
        .map(|fr| {
            let rec = m.frames.iter().find(|r| r.index == fr.frame_id).ok_or_else(|| Error::Config {
                field: "results".into(),
                message: format!("frame {} is not in the manifest", fr.frame_id),
            })?;
            let gt_mask = Mask::load_png(Manifest::resolve(manifest, &rec.mask))?;
            let gt = JointConfig::new(rec.gt_joints.clone());
            let initial = JointConfig::new(rec.measured_joints.clone());
            let final_q = JointConfig::new(fr.joints_final_raw.clone());
            let mask = Mask::load_png(dir.join(&fr.mask))?;
            let state = KinematicState {
                chain: chain.clone(),
                joints: initial.clone(),
                camera: m.camera.clone(),
                light: m.light,
            };
            Ok(EvalRecord {
                frame_id: fr.frame_id,
                dice_initial: metrics::dice(&segment(&state)?, &gt_mask)?,
                dice_final: metrics::dice(&mask, &gt_mask)?,
                mae_initial_deg: metrics::joint_mae(&kinds, &initial, &gt)?,
                mae_final_deg: metrics::joint_mae(&kinds, &final_q, &gt)?,
                prismatic_initial_mm: metrics::prismatic_mae_mm(&kinds, &initial, &gt)?,
                prismatic_final_mm: metrics::prismatic_mae_mm(&kinds, &final_q, &gt)?,
                iterations: fr.iterations_run,
                domain: fr.domain.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(Error::Config {
            field: "results".into(),
            message: "no successful frames to evaluate".into(),
        });
    }
    metrics::aggregate(&records)
}
