//! Loss assembly, Adam, and the two optimization loops: response
//! maximization through the renderer and Chamfer fitting between meshes.

mod adam;
mod fit;
mod gradcheck;
mod trace;

pub use adam::{AdamConfig, AdamState};
pub use fit::{fit_mesh_chamfer, FitConfig, FitRecord, MeshFit};
pub use gradcheck::{check_gradients, GradientCheck};
pub use trace::{read_trace_csv, write_trace_csv, TraceRecord, TRACE_HEADER};

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::deformation::{deform, deform_gradient_with_weights, deform_with_weights, FieldGradient, RbfField};
use crate::error::{Error, Result};
use crate::mesh::{build_topology, Mesh, Topology};
use crate::regularizers::{regularizers_with_grad, ReferenceGeometry, RegularizerValues, RegularizerWeights};
use crate::render::{
    normalize_image, normalize_image_with_grad, render, render_with_tape, write_image, Image, ImageFormat,
    NormalizationSpec, Scene, Window,
};
use crate::response::ResponseModel;

/// Settings for [`synthesize_mei`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationConfig {
    pub max_steps: usize,
    pub adam: AdamConfig,
    pub weights: RegularizerWeights,
    pub seed: u64,
    /// Initial kernel scale in world units. Defaults to `kernel_sigma_edges`
    /// times the base mesh's mean edge length.
    pub kernel_sigma: Option<f64>,
    pub kernel_sigma_edges: f64,
    /// Standard deviation of the seeded Gaussian noise added to the initial offsets.
    pub init_offset_std: f64,
    /// Snapshot every this many steps; 0 disables snapshots.
    pub snapshot_interval: usize,
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    pub normalization: NormalizationSpec,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            max_steps: 2000,
            adam: AdamConfig::default(),
            weights: RegularizerWeights::default(),
            seed: 0,
            kernel_sigma: None,
            kernel_sigma_edges: 1.5,
            init_offset_std: 0.0,
            snapshot_interval: 0,
            convergence_window: 100,
            convergence_threshold: 1e-4,
            normalization: NormalizationSpec::default(),
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be >= 1".into()));
        }
        self.adam.validate()?;
        self.weights.validate()?;
        self.normalization.validate()?;
        if let Some(s) = self.kernel_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("kernel_sigma {s} must be > 0")));
            }
        }
        if !(self.kernel_sigma_edges > 0.0 && self.kernel_sigma_edges.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel_sigma_edges {} must be > 0",
                self.kernel_sigma_edges
            )));
        }
        if !(self.init_offset_std >= 0.0 && self.init_offset_std.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "init_offset_std {} must be >= 0",
                self.init_offset_std
            )));
        }
        if self.convergence_window == 0 {
            return Err(Error::InvalidParameter("convergence_window must be >= 1".into()));
        }
        if !(self.convergence_threshold >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "convergence_threshold {} must be >= 0",
                self.convergence_threshold
            )));
        }
        Ok(())
    }
}

/// The starting field: kernels on every base vertex with a common scale and
/// optional seeded noise on the offsets.
pub fn initial_field(
    base: &Mesh,
    topo: &Topology,
    kernel_sigma: Option<f64>,
    kernel_sigma_edges: f64,
    init_offset_std: f64,
    seed: u64,
) -> Result<RbfField> {
    let sigma = match kernel_sigma {
        Some(s) => s,
        None => kernel_sigma_edges * base.mean_edge_length(topo),
    };
    let mut field = RbfField::identity(base, sigma)?;
    if init_offset_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, init_offset_std)
            .map_err(|e| Error::InvalidParameter(format!("init_offset_std: {e}")))?;
        for d in field.offsets_mut() {
            for axis in 0..3 {
                d[axis] = normal.sample(&mut rng);
            }
        }
    }
    Ok(field)
}

/// A rendered, normalized, and scored stimulus.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub render: Image,
    pub normalized: Image,
    pub response: f64,
}

fn check_norm(img: &Image, spec: &NormalizationSpec) -> Result<()> {
    let n = img.norm();
    if (n - spec.target_norm).abs() > 1e-9 * spec.target_norm.max(1.0) {
        return Err(Error::Degenerate(format!(
            "normalized image has norm {n}, expected {}",
            spec.target_norm
        )));
    }
    Ok(())
}

/// Render → normalize → respond. Every reported response, including the
/// synthesis result and every sweep cell, goes through this function.
pub fn evaluate_mesh(
    mesh: &Mesh,
    scene: &Scene,
    normalization: &NormalizationSpec,
    model: &dyn ResponseModel,
) -> Result<Evaluation> {
    let raw = render(mesh, scene)?;
    let normalized = normalize_image(&raw, normalization)?;
    check_norm(&normalized, normalization)?;
    let response = model.respond(&normalized)?;
    if !response.is_finite() {
        return Err(Error::NonFinite(format!("response {response}")));
    }
    Ok(Evaluation {
        render: raw,
        normalized,
        response,
    })
}

/// Everything about a synthesis problem that stays fixed across steps.
pub struct Problem<'a> {
    base: &'a Mesh,
    topology: Topology,
    reference: ReferenceGeometry,
    scene: Scene,
    normalization: NormalizationSpec,
    weights: RegularizerWeights,
    model: &'a dyn ResponseModel,
}

impl<'a> Problem<'a> {
    pub fn new(
        base: &'a Mesh,
        scene: &Scene,
        normalization: &NormalizationSpec,
        weights: &RegularizerWeights,
        model: &'a dyn ResponseModel,
    ) -> Result<Self> {
        scene.validate()?;
        normalization.validate()?;
        weights.validate()?;
        let topology = build_topology(base)?;
        let reference = ReferenceGeometry::new(base, &topology);
        Ok(Self {
            base,
            topology,
            reference,
            scene: scene.clone(),
            normalization: *normalization,
            weights: *weights,
            model,
        })
    }

    pub fn base(&self) -> &Mesh {
        self.base
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn normalization(&self) -> &NormalizationSpec {
        &self.normalization
    }

    pub fn model(&self) -> &dyn ResponseModel {
        self.model
    }

    fn record(&self, step: usize, field: &RbfField, response: f64, reg: RegularizerValues) -> Result<TraceRecord> {
        let total = -response + reg.weighted_sum(&self.weights);
        let rec = TraceRecord {
            step,
            response,
            laplacian: reg.laplacian,
            edge: reg.edge,
            area: reg.area,
            arap: reg.arap,
            total,
            offset_norm: field.offset_norm(),
            mean_sigma: field.mean_scale(),
        };
        rec.check_finite()?;
        Ok(rec)
    }

    /// Loss value and its decomposition.
    pub fn loss(&self, field: &RbfField, step: usize) -> Result<(f64, TraceRecord, Evaluation, Mesh)> {
        let mesh = deform(self.base, field)?;
        let eval = evaluate_mesh(&mesh, &self.scene, &self.normalization, self.model)?;
        let (reg, _) = regularizers_with_grad(&mesh, &self.topology, &self.reference, &self.weights)?;
        let rec = self.record(step, field, eval.response, reg)?;
        Ok((rec.total, rec, eval, mesh))
    }

    /// Loss value, decomposition, and gradient with respect to the field.
    pub fn loss_with_grad(&self, field: &RbfField, step: usize) -> Result<(f64, TraceRecord, FieldGradient)> {
        let (mesh, kw) = deform_with_weights(self.base, field)?;
        let (raw, tape) = render_with_tape(&mesh, &self.scene)?;
        let norm = normalize_image_with_grad(&raw, &self.normalization)?;
        check_norm(&norm.image, &self.normalization)?;
        let (response, g_resp) = self.model.respond_gradient(&norm.image)?;
        if !response.is_finite() {
            return Err(Error::NonFinite(format!("response {response}")));
        }
        let (reg, g_reg) = regularizers_with_grad(&mesh, &self.topology, &self.reference, &self.weights)?;
        let rec = self.record(step, field, response, reg)?;

        let g_raw = norm.backward(&g_resp.scaled(-1.0))?;
        let g_render = tape.backward(&g_raw)?;
        let adjoint: Vec<_> = g_render
            .vertices
            .iter()
            .zip(&g_reg)
            .map(|(a, b)| a + b)
            .collect();
        let grad = deform_gradient_with_weights(field, &kw, &adjoint)?;
        Ok((rec.total, rec, grad))
    }
}

/// `-f(I) + Σ λ·reg` for one field, with its trace decomposition.
pub fn total_loss(
    field: &RbfField,
    base: &Mesh,
    scene: &Scene,
    model: &dyn ResponseModel,
    weights: &RegularizerWeights,
    normalization: &NormalizationSpec,
) -> Result<(f64, TraceRecord)> {
    let problem = Problem::new(base, scene, normalization, weights, model)?;
    let (total, rec, _, _) = problem.loss(field, 0)?;
    Ok((total, rec))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    Converged,
}

/// Output of [`synthesize_mei`].
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub field: RbfField,
    pub mesh: Mesh,
    /// Raw render of the final mesh.
    pub render: Image,
    /// The normalized image the model scored.
    pub image: Image,
    pub response: f64,
    pub trace: Vec<TraceRecord>,
    /// Number of Adam updates applied.
    pub steps: usize,
    pub stop_reason: StopReason,
}

fn best_up_to(trace: &[TraceRecord], end: usize) -> f64 {
    trace[..=end].iter().fold(f64::NEG_INFINITY, |m, r| m.max(r.response))
}

fn converged(trace: &[TraceRecord], window: usize, threshold: f64) -> bool {
    let t = trace.len() - 1;
    if t < window {
        return false;
    }
    let now = best_up_to(trace, t);
    let then = best_up_to(trace, t - window);
    now - then < threshold * then.abs().max(1e-12)
}

fn write_snapshot(dir: &Path, stem: &str, field: &RbfField, render: &Image) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    field.save(dir.join(format!("{stem}.json")))?;
    write_image(render, dir.join(format!("{stem}.pgm")), ImageFormat::Pgm, Window::Fixed)
}

fn append_snapshot_row(dir: &Path, rec: &TraceRecord) -> Result<()> {
    use std::io::Write;
    let path = dir.join("snapshots.csv");
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(TRACE_HEADER);
        text.push('\n');
    }
    text.push_str(&rec.to_csv_row());
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
}

/// Maximizes the model response over the RBF field with Adam.
///
/// Each trace row describes the parameters *before* the update of that step.
/// When the run ends by exhausting `max_steps`, a final row describes the
/// parameters after the last update. The reported response is computed by
/// [`evaluate_mesh`] on the final field.
///
/// With `snapshot_dir`, every `snapshot_interval` steps the field and render
/// are written as `step_NNNNNN.{json,pgm}` plus a row of `snapshots.csv`; an
/// aborted run leaves `last_good.{json,pgm}` and `trace_partial.csv` there.
pub fn synthesize_mei(
    base: &Mesh,
    scene: &Scene,
    model: &dyn ResponseModel,
    cfg: &OptimizationConfig,
    snapshot_dir: Option<&Path>,
) -> Result<Synthesis> {
    cfg.validate()?;
    let problem = Problem::new(base, scene, &cfg.normalization, &cfg.weights, model)?;
    let mut field = initial_field(
        base,
        problem.topology(),
        cfg.kernel_sigma,
        cfg.kernel_sigma_edges,
        cfg.init_offset_std,
        cfg.seed,
    )?;
    let mut adam = AdamState::new(field.num_params(), cfg.adam)?;
    let mut params = field.to_params();
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut last_good = field.clone();
    let mut steps = 0;
    let mut stop_reason = StopReason::MaxSteps;

    let abort = |step: usize, err: Error, last_good: &RbfField, trace: &[TraceRecord]| -> Error {
        if let Some(dir) = snapshot_dir {
            let _ = fs::create_dir_all(dir);
            let mesh = deform(base, last_good);
            let img = mesh.and_then(|m| render(&m, scene));
            let _ = match img {
                Ok(img) => write_snapshot(dir, "last_good", last_good, &img),
                Err(_) => last_good.save(dir.join("last_good.json")),
            };
            let _ = write_trace_csv(&dir.join("trace_partial.csv"), trace);
        }
        Error::Aborted {
            step,
            source: Box::new(err),
            last_good: Box::new(last_good.clone()),
        }
    };

    for step in 0..cfg.max_steps {
        let (_, rec, grad) = match problem.loss_with_grad(&field, step) {
            Ok(v) => v,
            Err(e) => return Err(abort(step, e, &last_good, &trace)),
        };
        last_good = field.clone();
        trace.push(rec);
        if let Some(dir) = snapshot_dir {
            if cfg.snapshot_interval > 0 && step % cfg.snapshot_interval == 0 {
                let written = deform(base, &field)
                    .and_then(|m| render(&m, scene))
                    .and_then(|img| write_snapshot(dir, &format!("step_{step:06}"), &field, &img))
                    .and_then(|_| append_snapshot_row(dir, &rec));
                if let Err(e) = written {
                    return Err(abort(step, e, &last_good, &trace));
                }
            }
        }
        if converged(&trace, cfg.convergence_window, cfg.convergence_threshold) {
            stop_reason = StopReason::Converged;
            break;
        }
        if let Err(e) = adam.step(&mut params, &grad.to_params()) {
            return Err(abort(step, e, &last_good, &trace));
        }
        if let Err(e) = field.set_params(&params) {
            return Err(abort(step + 1, e, &last_good, &trace));
        }
        steps += 1;
    }

    let (_, rec, eval, mesh) = match problem.loss(&field, steps) {
        Ok(v) => v,
        Err(e) => return Err(abort(steps, e, &last_good, &trace)),
    };
    if stop_reason == StopReason::MaxSteps {
        trace.push(rec);
    }
    Ok(Synthesis {
        field,
        mesh,
        render: eval.render,
        image: eval.normalized,
        response: eval.response,
        trace,
        steps,
        stop_reason,
    })
}
