//! Python bindings: dataset generation, alignment, metrics and the demo tool.

use std::path::{Path, PathBuf};

use kinalign::cli::{self, exit_code};
use kinalign::config::RunConfig;
use kinalign::demo;
use kinalign::error::Error;
use kinalign::image::Mask;
use kinalign::kinematics::{JointConfig, JointKind};
use kinalign::metrics;
use kinalign::optimizer::{evaluate_loss, segment, KinematicState};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match exit_code(&err) {
        2 => PyValueError::new_err(msg),
        3 => PyIOError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn config(path: Option<PathBuf>) -> PyResult<RunConfig> {
    RunConfig::load_or_default(path.as_deref()).map_err(to_py)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn mask_from(data: Vec<bool>, width: usize, height: usize) -> PyResult<Mask> {
    if data.len() != width * height {
        return Err(PyValueError::new_err(format!(
            "mask has {} entries, expected {width}×{height}",
            data.len()
        )));
    }
    Ok(Mask { width, height, data })
}

fn parse_kinds(kinds: &[String]) -> PyResult<Vec<JointKind>> {
    kinds
        .iter()
        .map(|k| match k.as_str() {
            "revolute" => Ok(JointKind::Revolute),
            "prismatic" => Ok(JointKind::Prismatic),
            other => Err(PyValueError::new_err(format!("unknown joint kind {other:?}"))),
        })
        .collect()
}

fn demo_state(joints: Option<Vec<f64>>) -> KinematicState {
    KinematicState {
        chain: demo::demo_chain(),
        joints: joints.map(JointConfig::new).unwrap_or_else(demo::demo_pose),
        camera: demo::demo_camera(),
        light: demo::demo_light(),
    }
}

/// Writes a synthetic dataset and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, frames=10, error_deg=1.0, domain="regular", seed=0, config_path=None))]
fn generate(
    py: Python<'_>,
    out_dir: PathBuf,
    frames: usize,
    error_deg: f64,
    domain: &str,
    seed: u64,
    config_path: Option<PathBuf>,
) -> PyResult<String> {
    let cfg = config(config_path)?;
    let domain = domain.to_owned();
    let manifest = py
        .detach(|| cli::cmd_gen(&cfg, frames, error_deg, &domain, seed, &out_dir))
        .map_err(to_py)?;
    Ok(manifest.display().to_string())
}

/// Aligns every frame of a dataset; returns the parsed results.json.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, no_optim=false, config_path=None))]
fn align<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    out_dir: PathBuf,
    no_optim: bool,
    config_path: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(config_path)?;
    let outcome = py
        .detach(|| cli::cmd_align(&cfg, &manifest, &out_dir, no_optim))
        .map_err(to_py)?;
    let text = std::fs::read_to_string(&outcome.results_path).map_err(|source| {
        to_py(Error::Io {
            path: outcome.results_path.clone(),
            source,
        })
    })?;
    json_to_py(py, &text)
}

/// Dice of two flat row-major boolean masks.
#[pyfunction]
fn dice(pred: Vec<bool>, gt: Vec<bool>, width: usize, height: usize) -> PyResult<f64> {
    let p = mask_from(pred, width, height)?;
    let g = mask_from(gt, width, height)?;
    metrics::dice(&p, &g).map_err(to_py)
}

/// Mean absolute error in degrees over the revolute joints.
#[pyfunction]
fn joint_mae_deg(a: Vec<f64>, b: Vec<f64>, kinds: Vec<String>) -> PyResult<f64> {
    let kinds = parse_kinds(&kinds)?;
    metrics::joint_mae(&kinds, &JointConfig::new(a), &JointConfig::new(b)).map_err(to_py)
}

/// Row-major 4×4 link frames of the bundled tool.
#[pyfunction]
#[pyo3(signature = (joints=None))]
fn demo_forward_kinematics(joints: Option<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let s = demo_state(joints);
    let frames = s.chain.forward_kinematics(&s.joints).map_err(to_py)?;
    Ok(frames.iter().map(|t| t.to_row_major().to_vec()).collect())
}

/// Hard mask of the bundled tool as (width, height, flat row-major bools).
#[pyfunction]
#[pyo3(signature = (joints=None))]
fn segment_demo(py: Python<'_>, joints: Option<Vec<f64>>) -> PyResult<(usize, usize, Vec<bool>)> {
    let s = demo_state(joints);
    let m = py.detach(|| segment(&s)).map_err(to_py)?;
    Ok((m.width, m.height, m.data))
}

/// Loss and joint gradient for one frame of a dataset.
#[pyfunction]
#[pyo3(signature = (manifest, frame_index, joints=None, config_path=None))]
fn frame_loss(
    py: Python<'_>,
    manifest: PathBuf,
    frame_index: usize,
    joints: Option<Vec<f64>>,
    config_path: Option<PathBuf>,
) -> PyResult<(f64, Vec<f64>)> {
    let cfg = config(config_path)?;
    py.detach(|| -> Result<(f64, Vec<f64>), Error> {
        let ds = cli::load_dataset(Path::new(&manifest))?;
        let frame = ds.frames.get(frame_index).ok_or_else(|| Error::Config {
            field: "frame_index".into(),
            message: format!("{frame_index} is out of range for {} frames", ds.frames.len()),
        })?;
        let q = joints.map(JointConfig::new).unwrap_or_else(|| frame.measured_joints.clone());
        let state = cli::measured_state(&ds, q);
        let spec = cli::dataset_spec(&cfg, &ds);
        evaluate_loss(&state, &frame.observed_image, &ds.background, &spec)
    })
    .map_err(to_py)
}

#[pymodule]
fn pykinalign(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(joint_mae_deg, m)?)?;
    m.add_function(wrap_pyfunction!(demo_forward_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(segment_demo, m)?)?;
    m.add_function(wrap_pyfunction!(frame_loss, m)?)?;
    Ok(())
}
