use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::initial_field;
use crate::chamfer::{chamfer_with_grad, sample_surface, NeighborSearch};
use crate::deformation::{deform, deform_gradient_with_weights, deform_with_weights, RbfField};
use crate::error::{Error, Result};
use crate::mesh::{build_topology, Mesh};
use crate::regularizers::{regularizers_with_grad, ReferenceGeometry, RegularizerWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_steps: usize,
    pub adam: AdamConfig,
    pub weights: RegularizerWeights,
    pub seed: u64,
    pub kernel_sigma: Option<f64>,
    pub kernel_sigma_edges: f64,
    /// Points drawn from each surface per step.
    pub samples: usize,
    /// Points drawn from each surface for the reported initial and final values.
    pub eval_samples: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_steps: 400,
            adam: AdamConfig::default(),
            weights: RegularizerWeights {
                laplacian: 0.1,
                ..RegularizerWeights::zero()
            },
            seed: 0,
            kernel_sigma: None,
            kernel_sigma_edges: 1.5,
            samples: 5000,
            eval_samples: 5000,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be >= 1".into()));
        }
        if self.samples == 0 || self.eval_samples == 0 {
            return Err(Error::InvalidParameter("sample counts must be >= 1".into()));
        }
        if let Some(s) = self.kernel_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("kernel_sigma {s} must be > 0")));
            }
        }
        self.adam.validate()?;
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub step: usize,
    /// Chamfer loss on this step's samples.
    pub chamfer: f64,
    /// Smallest `chamfer` seen so far.
    pub best_chamfer: f64,
    /// Weighted regularizer sum.
    pub regularizer: f64,
    pub total: f64,
}

pub const FIT_TRACE_HEADER: &str = "step,chamfer,best_chamfer,regularizer,total";

impl FitRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?}",
            self.step, self.chamfer, self.best_chamfer, self.regularizer, self.total
        )
    }
}

#[derive(Debug, Clone)]
pub struct MeshFit {
    pub field: RbfField,
    pub mesh: Mesh,
    pub trace: Vec<FitRecord>,
    /// Chamfer between the undeformed source and the target on the evaluation samples.
    pub initial_chamfer: f64,
    /// Same measurement for the fitted mesh.
    pub final_chamfer: f64,
}

impl MeshFit {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from(FIT_TRACE_HEADER);
        s.push('\n');
        for r in &self.trace {
            s.push_str(&r.to_csv_row());
            s.push('\n');
        }
        s
    }
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step as u64 + 1)
}

fn eval_chamfer(mesh: &Mesh, target: &Mesh, cfg: &FitConfig) -> Result<f64> {
    let a = sample_surface(mesh, cfg.eval_samples, cfg.seed ^ 0xA5A5)?;
    let b = sample_surface(target, cfg.eval_samples, cfg.seed ^ 0x5A5A)?;
    Ok(chamfer_with_grad(&a.points, &b.points, NeighborSearch::Grid)?.0)
}

/// Deforms `source` toward `target` by minimizing Chamfer loss plus the
/// weighted regularizers. Source samples are redrawn every step; target
/// samples are drawn once.
pub fn fit_mesh_chamfer(source: &Mesh, target: &Mesh, cfg: &FitConfig) -> Result<MeshFit> {
    cfg.validate()?;
    let topo = build_topology(source)?;
    let reference = ReferenceGeometry::new(source, &topo);
    let mut field = initial_field(source, &topo, cfg.kernel_sigma, cfg.kernel_sigma_edges, 0.0, cfg.seed)?;
    let target_pts = sample_surface(target, cfg.samples, cfg.seed)?.points;
    let initial_chamfer = eval_chamfer(source, target, cfg)?;

    let mut adam = AdamState::new(field.num_params(), cfg.adam)?;
    let mut params = field.to_params();
    let mut trace = Vec::with_capacity(cfg.max_steps);
    let mut best = f64::INFINITY;
    let mut last_good = field.clone();
    for step in 0..cfg.max_steps {
        let attempt = (|| -> Result<(FitRecord, Vec<f64>)> {
            let (mesh, kw) = deform_with_weights(source, &field)?;
            let samples = sample_surface(&mesh, cfg.samples, step_seed(cfg.seed, step))?;
            let (chamfer, g_pts) = chamfer_with_grad(&samples.points, &target_pts, NeighborSearch::Grid)?;
            let (reg, g_reg) = regularizers_with_grad(&mesh, &topo, &reference, &cfg.weights)?;
            let mut adjoint = samples.vertex_adjoint(&mesh, &g_pts);
            for (a, g) in adjoint.iter_mut().zip(&g_reg) {
                *a += g;
            }
            let regularizer = reg.weighted_sum(&cfg.weights);
            let total = chamfer + regularizer;
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("fit loss at step {step}")));
            }
            let grad = deform_gradient_with_weights(&field, &kw, &adjoint)?;
            let rec = FitRecord {
                step,
                chamfer,
                best_chamfer: best.min(chamfer),
                regularizer,
                total,
            };
            Ok((rec, grad.to_params()))
        })();
        let abort = |e: Error, last_good: &RbfField| Error::Aborted {
            step,
            source: Box::new(e),
            last_good: Box::new(last_good.clone()),
        };
        let (rec, grad) = attempt.map_err(|e| abort(e, &last_good))?;
        last_good = field.clone();
        adam.step(&mut params, &grad)
            .and_then(|_| field.set_params(&params))
            .map_err(|e| abort(e, &last_good))?;
        best = rec.best_chamfer;
        trace.push(rec);
    }
    let mesh = deform(source, &field)?;
    let final_chamfer = eval_chamfer(&mesh, target, cfg)?;
    Ok(MeshFit {
        field,
        mesh,
        trace,
        initial_chamfer,
        final_chamfer,
    })
}
