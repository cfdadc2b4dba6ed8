//! Gaussian radial-basis displacement field.
//!
//! Every base-mesh vertex doubles as a kernel center. A vertex `v` moves by
//! `Σ_k δ_k · exp(-‖v - c_k‖² / (2σ_k²))`; the weights are not normalized.
//! Scales are stored as `log σ_k` so any parameter update keeps `σ_k > 0`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct RbfField {
    centers: Vec<Vec3>,
    offsets: Vec<Vec3>,
    log_scales: Vec<f64>,
}

/// Adjoints of a scalar loss with respect to the field parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGradient {
    pub offsets: Vec<Vec3>,
    pub log_scales: Vec<f64>,
}

impl FieldGradient {
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.offsets.len() * 3 + self.log_scales.len());
        for d in &self.offsets {
            out.extend_from_slice(&[d.x, d.y, d.z]);
        }
        out.extend_from_slice(&self.log_scales);
        out
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldFile {
    format: String,
    centers: Vec<[f64; 3]>,
    offsets: Vec<[f64; 3]>,
    log_scales: Vec<f64>,
}

const FIELD_FORMAT: &str = "mei3d-rbf-field/1";

impl RbfField {
    pub fn new(centers: Vec<Vec3>, offsets: Vec<Vec3>, log_scales: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidParameter("field needs at least one kernel".into()));
        }
        if offsets.len() != centers.len() || log_scales.len() != centers.len() {
            return Err(Error::DimensionMismatch(format!(
                "centers {}, offsets {}, log_scales {}",
                centers.len(),
                offsets.len(),
                log_scales.len()
            )));
        }
        let field = Self {
            centers,
            offsets,
            log_scales,
        };
        field.check_finite()?;
        Ok(field)
    }

    /// Identity deformation with one kernel per base vertex, all of scale `sigma`.
    pub fn identity(base: &Mesh, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel scale {sigma}")));
        }
        let k = base.num_vertices();
        Self::new(base.vertices().to_vec(), vec![Vec3::zeros(); k], vec![sigma.ln(); k])
    }

    pub fn num_kernels(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[Vec3] {
        &self.centers
    }

    pub fn offsets(&self) -> &[Vec3] {
        &self.offsets
    }

    pub fn offsets_mut(&mut self) -> &mut [Vec3] {
        &mut self.offsets
    }

    pub fn log_scales(&self) -> &[f64] {
        &self.log_scales
    }

    pub fn scale(&self, k: usize) -> f64 {
        self.log_scales[k].exp()
    }

    pub fn mean_scale(&self) -> f64 {
        self.log_scales.iter().map(|s| s.exp()).sum::<f64>() / self.num_kernels() as f64
    }

    /// Euclidean norm of the stacked offsets.
    pub fn offset_norm(&self) -> f64 {
        self.offsets.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn num_params(&self) -> usize {
        self.num_kernels() * 4
    }

    /// Learnable parameters as a flat vector: offsets (xyz per kernel), then log scales.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for d in &self.offsets {
            out.extend_from_slice(&[d.x, d.y, d.z]);
        }
        out.extend_from_slice(&self.log_scales);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let k = self.num_kernels();
        if params.len() != 4 * k {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                4 * k,
                params.len()
            )));
        }
        for (d, chunk) in self.offsets.iter_mut().zip(params[..3 * k].chunks_exact(3)) {
            *d = Vec3::new(chunk[0], chunk[1], chunk[2]);
        }
        self.log_scales.copy_from_slice(&params[3 * k..]);
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(k) = self.centers.iter().position(|c| !c.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite(format!("kernel center {k}")));
        }
        if let Some(k) = self.offsets.iter().position(|c| !c.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite(format!("kernel offset {k}")));
        }
        if let Some(k) = self.log_scales.iter().position(|s| !s.is_finite() || !s.exp().is_finite() || s.exp() == 0.0) {
            return Err(Error::NonFinite(format!("kernel log-scale {k}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = FieldFile {
            format: FIELD_FORMAT.to_string(),
            centers: self.centers.iter().map(|v| [v.x, v.y, v.z]).collect(),
            offsets: self.offsets.iter().map(|v| [v.x, v.y, v.z]).collect(),
            log_scales: self.log_scales.clone(),
        };
        serde_json::to_string_pretty(&file).expect("field serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FieldFile =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if file.format != FIELD_FORMAT {
            return Err(Error::Serialization(format!(
                "unsupported field format {:?}",
                file.format
            )));
        }
        let v = |a: &[f64; 3]| Vec3::new(a[0], a[1], a[2]);
        Self::new(
            file.centers.iter().map(v).collect(),
            file.offsets.iter().map(v).collect(),
            file.log_scales,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Kernel weights `w[i][k]` for every (vertex, kernel) pair, plus the squared
/// distances they were computed from. Reused by the adjoint pass.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    num_kernels: usize,
    weights: Vec<f64>,
    sq_dists: Vec<f64>,
}

impl KernelWeights {
    pub fn compute(base: &Mesh, field: &RbfField) -> Self {
        let k = field.num_kernels();
        let inv_two_var: Vec<f64> = field
            .log_scales
            .iter()
            .map(|s| 0.5 * (-2.0 * s).exp())
            .collect();
        let mut weights = vec![0.0; base.num_vertices() * k];
        let mut sq_dists = vec![0.0; base.num_vertices() * k];
        weights
            .par_chunks_mut(k)
            .zip(sq_dists.par_chunks_mut(k))
            .zip(base.vertices().par_iter())
            .for_each(|((w_row, d_row), v)| {
                for (kk, c) in field.centers.iter().enumerate() {
                    let d2 = (v - c).norm_squared();
                    d_row[kk] = d2;
                    w_row[kk] = (-d2 * inv_two_var[kk]).exp();
                }
            });
        Self {
            num_kernels: k,
            weights,
            sq_dists,
        }
    }

    pub fn row(&self, vertex: usize) -> &[f64] {
        &self.weights[vertex * self.num_kernels..(vertex + 1) * self.num_kernels]
    }
}

/// Applies the field to the base mesh. Faces are unchanged.
pub fn deform(base: &Mesh, field: &RbfField) -> Result<Mesh> {
    Ok(deform_with_weights(base, field)?.0)
}

/// Like [`deform`] but also returns the kernel weights for a later adjoint pass.
pub fn deform_with_weights(base: &Mesh, field: &RbfField) -> Result<(Mesh, KernelWeights)> {
    field.check_finite()?;
    let weights = KernelWeights::compute(base, field);
    let displaced: Vec<Vec3> = base
        .vertices()
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let mut dv = Vec3::zeros();
            for (w, d) in weights.row(i).iter().zip(&field.offsets) {
                dv += d * *w;
            }
            v + dv
        })
        .collect();
    Ok((base.with_vertices(displaced)?, weights))
}

/// Vector-Jacobian product of [`deform`]: maps `∂L/∂v'_i` to `∂L/∂δ_k` and `∂L/∂log σ_k`.
pub fn deform_gradient(base: &Mesh, field: &RbfField, vertex_adjoint: &[Vec3]) -> Result<FieldGradient> {
    field.check_finite()?;
    let weights = KernelWeights::compute(base, field);
    deform_gradient_with_weights(field, &weights, vertex_adjoint)
}

pub fn deform_gradient_with_weights(
    field: &RbfField,
    weights: &KernelWeights,
    vertex_adjoint: &[Vec3],
) -> Result<FieldGradient> {
    let k = field.num_kernels();
    let nv = weights.weights.len() / k.max(1);
    if vertex_adjoint.len() != nv {
        return Err(Error::DimensionMismatch(format!(
            "vertex adjoint has {} entries, mesh has {nv} vertices",
            vertex_adjoint.len()
        )));
    }
    let mut g_off = vec![Vec3::zeros(); k];
    let mut g_log = vec![0.0; k];
    let inv_var: Vec<f64> = field.log_scales.iter().map(|s| (-2.0 * s).exp()).collect();
    for (i, a) in vertex_adjoint.iter().enumerate() {
        if a.x == 0.0 && a.y == 0.0 && a.z == 0.0 {
            continue;
        }
        let w_row = weights.row(i);
        let d_row = &weights.sq_dists[i * k..(i + 1) * k];
        for kk in 0..k {
            let w = w_row[kk];
            g_off[kk] += a * w;
            // d w / d log σ = w · ‖v - c‖² / σ²
            g_log[kk] += a.dot(&field.offsets[kk]) * w * d_row[kk] * inv_var[kk];
        }
    }
    Ok(FieldGradient {
        offsets: g_off,
        log_scales: g_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_sheet, make_sphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_vertex(v: Vec3) -> Mesh {
        // Faces are irrelevant to the deformation; use a tiny triangle with two
        // far-away helper vertices.
        Mesh::new(vec![v, v + Vec3::x() * 100.0, v + Vec3::y() * 100.0], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn center_weight_is_one() {
        let c = Vec3::new(0.3, -0.2, 0.1);
        let base = single_vertex(c);
        let field = RbfField::new(vec![c], vec![Vec3::new(0.0, 0.0, 0.5)], vec![0.1f64.ln()]).unwrap();
        // Kernel count must match only what deform reads; offsets act on all vertices.
        let out = deform(&base, &field).unwrap();
        assert_eq!(out.vertices()[0], c + Vec3::new(0.0, 0.0, 0.5));
    }

    #[test]
    fn zero_offsets_are_identity() {
        let base = make_sphere(1, 1.0).unwrap();
        let field = RbfField::identity(&base, 0.3).unwrap();
        assert_eq!(deform(&base, &field).unwrap(), base);
    }

    #[test]
    fn two_kernel_hand_evaluation() {
        let (s1, s2) = (0.4, 0.7);
        let v = Vec3::zeros();
        let c1 = Vec3::new(s1, 0.0, 0.0);
        let c2 = Vec3::new(0.0, 0.0, 2.0 * s2);
        let d1 = Vec3::new(1.0, 2.0, -1.0);
        let d2 = Vec3::new(-0.5, 0.25, 3.0);
        let base = Mesh::new(vec![v, c1, c2], vec![[0, 1, 2]]).unwrap();
        let field = RbfField::new(
            vec![c1, c2, Vec3::new(1e3, 0.0, 0.0)],
            vec![d1, d2, Vec3::zeros()],
            vec![s1.ln(), s2.ln(), 0.0],
        )
        .unwrap();
        let got = deform(&base, &field).unwrap().vertices()[0];
        let expected = d1 * (-0.5f64).exp() + d2 * (-2.0f64).exp();
        assert!((got - expected).norm() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let base = make_sphere(0, 1.0).unwrap();
        let field = RbfField::identity(&base, 0.3).unwrap();
        assert!(matches!(
            deform_gradient(&base, &field, &[Vec3::zeros(); 3]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(RbfField::new(vec![Vec3::zeros()], vec![], vec![0.0]).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let base = make_sphere(0, 1.0).unwrap();
        let mut field = RbfField::identity(&base, 0.3).unwrap();
        field.offsets_mut()[3].x = f64::NAN;
        assert!(matches!(deform(&base, &field), Err(Error::NonFinite(_))));
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let base = make_sheet(4, 4, 1.0).unwrap();
        let mut field = RbfField::identity(&base, 0.3).unwrap();
        field.offsets_mut()[2] = Vec3::new(0.1, 0.2, 0.3);
        let g = deform_gradient(&base, &field, &vec![Vec3::zeros(); 16]).unwrap();
        assert!(g.to_params().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_vertex_at_center_passes_adjoint_through() {
        let c = Vec3::new(0.1, 0.2, 0.3);
        let base = Mesh::new(vec![c, c + Vec3::x(), c + Vec3::y()], vec![[0, 1, 2]]).unwrap();
        let field = RbfField::new(
            vec![c, c + Vec3::x() * 1e3, c + Vec3::y() * 1e3],
            vec![Vec3::zeros(); 3],
            vec![0.0; 3],
        )
        .unwrap();
        let a = Vec3::new(0.7, -1.1, 2.0);
        let g = deform_gradient(&base, &field, &[a, Vec3::zeros(), Vec3::zeros()]).unwrap();
        assert_eq!(g.offsets[0], a);
    }

    #[test]
    fn large_scales_sum_offsets() {
        let base = make_sphere(1, 1.0).unwrap();
        let k = base.num_vertices();
        let d = Vec3::new(0.01, -0.02, 0.005);
        let field = RbfField::new(base.vertices().to_vec(), vec![d; k], vec![1e6f64.ln(); k]).unwrap();
        let out = deform(&base, &field).unwrap();
        for (a, b) in out.vertices().iter().zip(base.vertices()) {
            assert!(((a - b) - d * k as f64).norm() < 1e-6);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let base = make_sphere(1, 1.0).unwrap();
        let mut field = RbfField::identity(&base, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = field.to_params();
        for x in &mut p {
            *x += rng.random_range(-0.1..0.1);
        }
        field.set_params(&p).unwrap();
        let back = RbfField::from_json(&field.to_json()).unwrap();
        assert_eq!(back, field);
    }
}
