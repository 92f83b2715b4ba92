//! Loss evaluation by chaining the stage VJPs, and the descent loop that
//! aligns measured kinematics with an observed image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{compose_hybrid_vjp, compose_hybrid, extract_features, extract_features_vjp, FeatureExtractorSpec, FeatureMap, MeanBackground};
use crate::geom::{PinholeCamera, PointLight, Vec3};
use crate::image::{Image, Mask, Plane};
use crate::kinematics::{DhChain, JointConfig, JointKind};
use crate::losses::{acs_loss_with_grad, dilate_silhouette, smooth_l1_loss, AttentionMap, LossParams};
use crate::raster::{hard_rasterize, soft_shade, SoftRenderConfig};

/// Everything needed to render the tool: chain, joints, camera and light.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicState {
    pub chain: DhChain,
    pub joints: JointConfig,
    pub camera: PinholeCamera,
    pub light: PointLight,
}

impl KinematicState {
    pub fn validate(&self) -> Result<()> {
        self.chain.validate()?;
        self.camera.validate()?;
        if self.joints.len() != self.chain.dof() {
            return Err(Error::LengthMismatch {
                expected: self.chain.dof(),
                actual: self.joints.len(),
            });
        }
        Ok(())
    }

    pub fn with_joints(&self, joints: JointConfig) -> Self {
        Self {
            joints,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Joints,
    BaseFrame,
    CameraExtrinsics,
}

impl Target {
    /// Default descent step for this parameter block.
    pub fn default_step_size(self) -> f64 {
        match self {
            Target::Joints => 2e-3,
            Target::BaseFrame | Target::CameraExtrinsics => 1e-3,
        }
    }
}

/// How a gradient becomes a parameter update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Adam on scaled coordinates; `step_size` is the per-iteration step
    /// length in radians (translations via [`METERS_PER_RADIAN`]).
    Adam,
    /// `x ← x − step_size · ∇`.
    GradientDescent,
}

/// Translation treated as equivalent to one radian of rotation: 1 cm per
/// degree, the same pairing the perturbation model uses.
pub const METERS_PER_RADIAN: f64 = 0.01 * 180.0 / std::f64::consts::PI;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Acs,
    SmoothL1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSpec {
    pub target: Target,
    /// Descent step; `None` picks the target's default.
    pub step_size: Option<f64>,
    pub step_rule: StepRule,
    pub max_iters: usize,
    pub loss: LossKind,
    pub extractor: FeatureExtractorSpec,
    pub convergence_eps: f64,
    pub clamp_to_limits: bool,
    pub loss_params: LossParams,
    /// The attention map is re-derived from the current render for
    /// evaluations `0..=attention_refresh_iters` and then frozen, so later
    /// losses are comparable with each other.
    pub attention_refresh_iters: usize,
    /// Renderer settings; `None` derives them from the camera.
    pub render: Option<SoftRenderConfig>,
}

impl Default for OptimizeSpec {
    fn default() -> Self {
        Self {
            target: Target::Joints,
            step_size: None,
            step_rule: StepRule::Adam,
            max_iters: 100,
            loss: LossKind::Acs,
            extractor: FeatureExtractorSpec::Filterbank,
            convergence_eps: 1e-6,
            clamp_to_limits: true,
            loss_params: LossParams::default(),
            attention_refresh_iters: 30,
            render: None,
        }
    }
}

/// Consecutive small loss changes that count as convergence.
pub const PLATEAU_ITERS: usize = 3;

impl OptimizeSpec {
    pub fn step(&self) -> f64 {
        self.step_size.unwrap_or_else(|| self.target.default_step_size())
    }

    pub fn render_config(&self, cam: &PinholeCamera) -> SoftRenderConfig {
        self.render.unwrap_or_else(|| SoftRenderConfig::for_camera(cam))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        let step = self.step();
        if !(step > 0.0 && step.is_finite()) {
            return bad("step_size", format!("must be positive, got {step}"));
        }
        if self.max_iters < 1 {
            return bad("max_iters", "must be at least 1".into());
        }
        if !(self.convergence_eps >= 0.0) {
            return bad("convergence_eps", format!("must be non-negative, got {}", self.convergence_eps));
        }
        if let Some(r) = &self.render {
            r.validate().map_err(|e| Error::Config {
                field: "render".into(),
                message: e.to_string(),
            })?;
        }
        self.loss_params.validate()
    }

    /// Number of parameters in the optimized block.
    pub fn block_len(&self, state: &KinematicState) -> usize {
        match self.target {
            Target::Joints => state.chain.dof(),
            Target::BaseFrame | Target::CameraExtrinsics => 6,
        }
    }

    /// Per-parameter length of one scaled unit: 1 for angles,
    /// [`METERS_PER_RADIAN`] for translations.
    pub fn coordinate_scales(&self, state: &KinematicState) -> Vec<f64> {
        match self.target {
            Target::Joints => state
                .chain
                .kinds()
                .iter()
                .map(|k| match k {
                    JointKind::Revolute => 1.0,
                    JointKind::Prismatic => METERS_PER_RADIAN,
                })
                .collect(),
            Target::BaseFrame | Target::CameraExtrinsics => {
                vec![1.0, 1.0, 1.0, METERS_PER_RADIAN, METERS_PER_RADIAN, METERS_PER_RADIAN]
            }
        }
    }
}

/// One loss evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    /// Gradient on the target block, when requested.
    pub gradient: Option<Vec<f64>>,
    pub silhouette: Plane,
    /// Attention used by the ACS loss (full frame for smooth-L1).
    pub attention: AttentionMap,
}

/// Loss against one observed image, with its features cached.
#[derive(Clone, Debug)]
pub struct Objective {
    observed_features: FeatureMap,
    render_extractor: FeatureExtractorSpec,
    background: MeanBackground,
    spec: OptimizeSpec,
}

impl Objective {
    pub fn new(observed: &Image, background: &MeanBackground, spec: &OptimizeSpec) -> Result<Self> {
        spec.validate()?;
        if observed.dims() != background.image.dims() {
            return Err(Error::DimensionMismatch(format!(
                "observed {}x{} vs background {}x{}",
                observed.width, observed.height, background.image.width, background.image.height
            )));
        }
        Ok(Self {
            observed_features: extract_features(observed, &spec.extractor)?,
            render_extractor: spec.extractor.render_side()?,
            background: background.clone(),
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &OptimizeSpec {
        &self.spec
    }

    pub fn evaluate(&self, state: &KinematicState, want_gradient: bool) -> Result<Evaluation> {
        self.evaluate_with_attention(state, want_gradient, None)
    }

    /// Evaluates with `attention` held fixed instead of re-deriving it from
    /// the rendered silhouette. Since attention is detached from the
    /// gradient, this is the function whose derivative the gradient is.
    pub fn evaluate_with_attention(&self, state: &KinematicState, want_gradient: bool, attention: Option<&AttentionMap>) -> Result<Evaluation> {
        state.validate()?;
        let cam = &state.camera;
        if (cam.width, cam.height) != (self.observed_features.width, self.observed_features.height) {
            return Err(Error::DimensionMismatch(format!(
                "camera is {}x{}, observed image {}x{}",
                cam.width, cam.height, self.observed_features.width, self.observed_features.height
            )));
        }
        let cfg = self.spec.render_config(cam);
        let mesh = state.chain.pose_meshes(&state.joints)?;
        let rendered = soft_shade(&mesh, cam, &state.light, &cfg)?;
        let hybrid = compose_hybrid(&rendered, &self.background)?;
        let f_ren = extract_features(&hybrid, &self.render_extractor)?;

        let (loss, d_features, attention) = match self.spec.loss {
            LossKind::Acs => {
                let p = &self.spec.loss_params;
                let att = match attention {
                    Some(a) => a.clone(),
                    None => dilate_silhouette(&rendered.silhouette, p.threshold, p.dilation_radius),
                };
                let (l, g) = acs_loss_with_grad(&self.observed_features, &f_ren, &att)?;
                (l, g, att)
            }
            LossKind::SmoothL1 => {
                let (l, g) = smooth_l1_loss(&f_ren.data, &self.observed_features.data, self.spec.loss_params.beta)?;
                (l, FeatureMap { data: g, ..f_ren }, AttentionMap::full(cam.width, cam.height))
            }
        };
        if !want_gradient {
            return Ok(Evaluation {
                loss,
                gradient: None,
                silhouette: rendered.silhouette,
                attention,
            });
        }

        let d_hybrid = extract_features_vjp(&self.render_extractor, &d_features)?;
        let (d_image, d_sil) = compose_hybrid_vjp(&rendered.image, &rendered.silhouette, &self.background, &d_hybrid)?;
        let gradient = match self.spec.target {
            Target::Joints => {
                let g_world = rendered.vjp(Some(&d_image), Some(&d_sil))?;
                state.chain.vertex_jacobian_vjp(&state.joints, &g_world)?
            }
            Target::BaseFrame => {
                let g_world = rendered.vjp(Some(&d_image), Some(&d_sil))?;
                twist_gradient(&mesh.vertices, &g_world)
            }
            Target::CameraExtrinsics => {
                let g_cam = rendered.vjp_camera_frame(Some(&d_image), Some(&d_sil))?;
                let pts: Vec<Vec3> = mesh.vertices.iter().map(|v| cam.to_camera(v)).collect();
                twist_gradient(&pts, &g_cam)
            }
        };
        Ok(Evaluation {
            loss,
            gradient: Some(gradient),
            silhouette: rendered.silhouette,
            attention,
        })
    }
}

/// Gradient with respect to a left increment `Exp(δ)`, `δ = (ω, t)`, of
/// points `x` carrying cotangents `g`: `[Σ x × g ; Σ g]`.
fn twist_gradient(points: &[Vec3], cot: &[Vec3]) -> Vec<f64> {
    let mut rot = Vec3::zeros();
    let mut trans = Vec3::zeros();
    for (x, g) in points.iter().zip(cot) {
        rot += x.cross(g);
        trans += g;
    }
    vec![rot.x, rot.y, rot.z, trans.x, trans.y, trans.z]
}

/// Loss and target-block gradient for one state.
pub fn evaluate_loss(state: &KinematicState, observed: &Image, bg: &MeanBackground, spec: &OptimizeSpec) -> Result<(f64, Vec<f64>)> {
    let ev = Objective::new(observed, bg, spec)?.evaluate(state, true)?;
    Ok((ev.loss, ev.gradient.expect("gradient requested")))
}

/// Applies `params` (same layout as the gradient) to the target block.
pub fn apply_update(state: &KinematicState, target: Target, delta: &[f64], clamp: bool) -> Result<KinematicState> {
    let mut next = state.clone();
    match target {
        Target::Joints => {
            if delta.len() != state.joints.len() {
                return Err(Error::LengthMismatch {
                    expected: state.joints.len(),
                    actual: delta.len(),
                });
            }
            for (q, d) in next.joints.0.iter_mut().zip(delta) {
                *q += d;
            }
            if clamp {
                next.chain.clamp(&mut next.joints);
            }
        }
        Target::BaseFrame | Target::CameraExtrinsics => {
            let d: [f64; 6] = delta.try_into().map_err(|_| Error::LengthMismatch {
                expected: 6,
                actual: delta.len(),
            })?;
            if target == Target::BaseFrame {
                next.chain.base = state.chain.base.perturbed(&d);
            } else {
                next.camera.extrinsics = state.camera.extrinsics.perturbed(&d);
            }
        }
    }
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct AlignmentResult {
    pub best_state: KinematicState,
    /// Loss of the best iterate under the attention map in force at the
    /// end of the run.
    pub best_loss: f64,
    /// Index into `loss_trace` of the best iterate.
    pub best_iteration: usize,
    /// Initial loss followed by the loss after every step.
    pub loss_trace: Vec<f64>,
    /// Thresholded soft silhouette of the best iterate.
    pub mask: Mask,
    /// Gradient steps taken.
    pub iterations_run: usize,
    pub converged: bool,
}

/// Descends from `measured` and returns the lowest-loss iterate.
pub fn align(measured: &KinematicState, observed: &Image, bg: &MeanBackground, spec: &OptimizeSpec) -> Result<AlignmentResult> {
    align_with_checkpoints(measured, observed, bg, spec, &[]).map(|(r, _)| r)
}

/// Like [`align`], also returning the best state seen within the first `k`
/// steps for each `k` in `checkpoints`. Checkpoints past the stopping point
/// report the final best state.
pub fn align_with_checkpoints(
    measured: &KinematicState,
    observed: &Image,
    bg: &MeanBackground,
    spec: &OptimizeSpec,
    checkpoints: &[usize],
) -> Result<(AlignmentResult, Vec<(usize, KinematicState)>)> {
    let objective = Objective::new(observed, bg, spec)?;
    let step = spec.step();
    let scales = spec.coordinate_scales(measured);
    let mut state = measured.clone();
    let mut ev = objective.evaluate(&state, true)?;
    let mut trace = vec![ev.loss];
    if !ev.loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0, trace });
    }
    let mut frozen = None;
    if spec.attention_refresh_iters == 0 {
        frozen = Some(ev.attention.clone());
    }
    let mut best = (state.clone(), ev.loss, 0usize, ev.silhouette.clone());
    let mut snapshots = Vec::new();
    let record = |k: usize, best_state: &KinematicState, snapshots: &mut Vec<(usize, KinematicState)>| {
        for &c in checkpoints {
            if c == k {
                snapshots.push((c, best_state.clone()));
            }
        }
    };
    record(0, &best.0, &mut snapshots);

    let n = scales.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut steps = 0;
    let mut calm = 0;
    let mut converged = false;
    while steps < spec.max_iters {
        let grad = ev.gradient.take().expect("gradient requested");
        let delta: Vec<f64> = match spec.step_rule {
            StepRule::GradientDescent => grad.iter().map(|g| -step * g).collect(),
            StepRule::Adam => {
                let t = (steps + 1) as i32;
                (0..n)
                    .map(|i| {
                        let g = grad[i] * scales[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                        let mh = m[i] / (1.0 - ADAM_BETA1.powi(t));
                        let vh = v[i] / (1.0 - ADAM_BETA2.powi(t));
                        -step * scales[i] * mh / (vh.sqrt() + ADAM_EPS)
                    })
                    .collect()
            }
        };
        state = apply_update(&state, spec.target, &delta, spec.clamp_to_limits)?;
        steps += 1;
        ev = objective.evaluate_with_attention(&state, steps < spec.max_iters, frozen.as_ref())?;
        let prev = *trace.last().unwrap();
        trace.push(ev.loss);
        if !ev.loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: steps, trace });
        }
        if frozen.is_none() && steps >= spec.attention_refresh_iters {
            // Earlier losses used other attention maps; re-score the best
            // iterate under the one kept from now on.
            let att = ev.attention.clone();
            best.1 = objective.evaluate_with_attention(&best.0, false, Some(&att))?.loss;
            frozen = Some(att);
        }
        if ev.loss < best.1 {
            best = (state.clone(), ev.loss, steps, ev.silhouette.clone());
        }
        record(steps, &best.0, &mut snapshots);
        if (ev.loss - prev).abs() < spec.convergence_eps {
            calm += 1;
            if calm >= PLATEAU_ITERS {
                converged = true;
                break;
            }
        } else {
            calm = 0;
        }
    }
    for &c in checkpoints {
        if c > steps {
            snapshots.push((c, best.0.clone()));
        }
    }
    snapshots.sort_by_key(|(c, _)| *c);

    let (best_state, best_loss, best_iteration, best_sil) = best;
    Ok((
        AlignmentResult {
            mask: best_sil.threshold(spec.loss_params.threshold),
            best_state,
            best_loss,
            best_iteration,
            loss_trace: trace,
            iterations_run: steps,
            converged,
        },
        snapshots,
    ))
}

/// Exact mask of the posed tool, without any optimization.
pub fn segment(state: &KinematicState) -> Result<Mask> {
    state.validate()?;
    let mesh = state.chain.pose_meshes(&state.joints)?;
    match hard_rasterize(&mesh, &state.camera) {
        Err(Error::AllBehindCamera) => Ok(Mask::empty(state.camera.width, state.camera.height)),
        other => other,
    }
}

/// Per-joint values in display units: degrees for revolute, mm for prismatic.
pub fn joints_display(chain: &DhChain, q: &JointConfig) -> Vec<f64> {
    chain
        .kinds()
        .iter()
        .zip(q.values())
        .map(|(k, v)| match k {
            JointKind::Revolute => v.to_degrees(),
            JointKind::Prismatic => v * 1e3,
        })
        .collect()
}
