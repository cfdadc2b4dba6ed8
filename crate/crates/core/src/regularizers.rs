//! Geometric regularizers on a deformed mesh, each with its gradient with
//! respect to vertex positions.
//!
//! * Laplacian: mean squared offset of each vertex from its 1-ring centroid.
//! * Edge: population variance of edge lengths.
//! * Area: population variance of triangle areas.
//! * ARAP (direction-preserving): mean squared component of each edge vector
//!   orthogonal to that edge's original direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Topology};
use crate::Vec3;

/// Reference edges shorter than this have no usable direction.
pub const DEGENERATE_EDGE_LENGTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerWeights {
    #[serde(default)]
    pub laplacian: f64,
    #[serde(default)]
    pub edge: f64,
    #[serde(default)]
    pub area: f64,
    #[serde(default)]
    pub arap: f64,
}

impl RegularizerWeights {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn uniform(w: f64) -> Self {
        Self {
            laplacian: w,
            edge: w,
            area: w,
            arap: w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("laplacian", self.laplacian),
            ("edge", self.edge),
            ("area", self.area),
            ("arap", self.arap),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "regularizer weight {name} = {w} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// Original unit direction of every edge of the base mesh.
#[derive(Debug, Clone)]
pub struct ReferenceGeometry {
    directions: Vec<Option<Vec3>>,
    degenerate: usize,
}

impl ReferenceGeometry {
    pub fn new(base: &Mesh, topo: &Topology) -> Self {
        let v = base.vertices();
        let directions: Vec<Option<Vec3>> = topo
            .edges
            .iter()
            .map(|&(i, j)| {
                let e = v[i] - v[j];
                let len = e.norm();
                (len >= DEGENERATE_EDGE_LENGTH).then(|| e / len)
            })
            .collect();
        let degenerate = directions.iter().filter(|d| d.is_none()).count();
        Self {
            directions,
            degenerate,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.directions.len()
    }

    /// Edges excluded from the ARAP term because their original length was
    /// below [`DEGENERATE_EDGE_LENGTH`].
    pub fn degenerate_edges(&self) -> usize {
        self.degenerate
    }

    pub fn direction(&self, e: usize) -> Option<Vec3> {
        self.directions[e]
    }
}

/// Values of the four regularizers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegularizerValues {
    pub laplacian: f64,
    pub edge: f64,
    pub area: f64,
    pub arap: f64,
}

impl RegularizerValues {
    pub fn weighted_sum(&self, w: &RegularizerWeights) -> f64 {
        w.laplacian * self.laplacian + w.edge * self.edge + w.area * self.area + w.arap * self.arap
    }
}

fn check_vertices(mesh: &Mesh, topo: &Topology) -> Result<()> {
    if topo.neighbors.len() != mesh.num_vertices() {
        return Err(Error::DimensionMismatch(format!(
            "topology covers {} vertices, mesh has {}",
            topo.neighbors.len(),
            mesh.num_vertices()
        )));
    }
    Ok(())
}

pub fn laplacian_loss(mesh: &Mesh, topo: &Topology) -> Result<f64> {
    laplacian_impl(mesh, topo, None)
}

pub fn laplacian_loss_grad(mesh: &Mesh, topo: &Topology) -> Result<(f64, Vec<Vec3>)> {
    let mut g = vec![Vec3::zeros(); mesh.num_vertices()];
    let val = laplacian_impl(mesh, topo, Some(&mut g))?;
    Ok((val, g))
}

fn laplacian_impl(mesh: &Mesh, topo: &Topology, mut grad: Option<&mut [Vec3]>) -> Result<f64> {
    check_vertices(mesh, topo)?;
    let v = mesh.vertices();
    let n = v.len();
    if n == 0 {
        return Err(Error::Topology("laplacian of an empty mesh".into()));
    }
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for (i, nbrs) in topo.neighbors.iter().enumerate() {
        if nbrs.is_empty() {
            return Err(Error::Topology(format!("vertex {i} has no neighbors")));
        }
        let inv = 1.0 / nbrs.len() as f64;
        let mut mean = Vec3::zeros();
        for &j in nbrs {
            mean += v[j];
        }
        let r = v[i] - mean * inv;
        total += r.norm_squared();
        if let Some(g) = grad.as_deref_mut() {
            let gr = r * (2.0 * scale);
            g[i] += gr;
            for &j in nbrs {
                g[j] -= gr * inv;
            }
        }
    }
    Ok(total * scale)
}

pub fn edge_loss(mesh: &Mesh, topo: &Topology) -> f64 {
    edge_impl(mesh, topo, None)
}

pub fn edge_loss_grad(mesh: &Mesh, topo: &Topology) -> (f64, Vec<Vec3>) {
    let mut g = vec![Vec3::zeros(); mesh.num_vertices()];
    let val = edge_impl(mesh, topo, Some(&mut g));
    (val, g)
}

fn edge_impl(mesh: &Mesh, topo: &Topology, grad: Option<&mut [Vec3]>) -> f64 {
    let v = mesh.vertices();
    let m = topo.edges.len();
    if m == 0 {
        return 0.0;
    }
    let lengths: Vec<f64> = topo.edges.iter().map(|&(i, j)| (v[i] - v[j]).norm()).collect();
    let mean = lengths.iter().sum::<f64>() / m as f64;
    let val = lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / m as f64;
    if let Some(g) = grad {
        // The mean's own dependence cancels: Σ (l_e - mean) = 0.
        for (&(i, j), &l) in topo.edges.iter().zip(&lengths) {
            if l == 0.0 {
                continue;
            }
            let dir = (v[i] - v[j]) / l;
            let c = 2.0 * (l - mean) / m as f64;
            g[i] += dir * c;
            g[j] -= dir * c;
        }
    }
    val
}

pub fn area_loss(mesh: &Mesh) -> f64 {
    area_impl(mesh, None)
}

pub fn area_loss_grad(mesh: &Mesh) -> (f64, Vec<Vec3>) {
    let mut g = vec![Vec3::zeros(); mesh.num_vertices()];
    let val = area_impl(mesh, Some(&mut g));
    (val, g)
}

fn area_impl(mesh: &Mesh, grad: Option<&mut [Vec3]>) -> f64 {
    let v = mesh.vertices();
    let nf = mesh.num_faces();
    if nf == 0 {
        return 0.0;
    }
    let normals: Vec<Vec3> = mesh
        .faces()
        .iter()
        .map(|&[i, j, k]| (v[j] - v[i]).cross(&(v[k] - v[i])))
        .collect();
    let areas: Vec<f64> = normals.iter().map(|n| 0.5 * n.norm()).collect();
    let mean = areas.iter().sum::<f64>() / nf as f64;
    let val = areas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / nf as f64;
    if let Some(g) = grad {
        for ((&[i, j, k], n), &a) in mesh.faces().iter().zip(&normals).zip(&areas) {
            if a == 0.0 {
                continue;
            }
            let nhat = n / (2.0 * a);
            let c = 2.0 * (a - mean) / nf as f64;
            let e1 = v[j] - v[i];
            let e2 = v[k] - v[i];
            let gj = e2.cross(&nhat) * 0.5;
            let gk = nhat.cross(&e1) * 0.5;
            g[j] += gj * c;
            g[k] += gk * c;
            g[i] -= (gj + gk) * c;
        }
    }
    val
}

pub fn arap_loss(mesh: &Mesh, reference: &ReferenceGeometry, topo: &Topology) -> Result<f64> {
    arap_impl(mesh, reference, topo, None)
}

pub fn arap_loss_grad(mesh: &Mesh, reference: &ReferenceGeometry, topo: &Topology) -> Result<(f64, Vec<Vec3>)> {
    let mut g = vec![Vec3::zeros(); mesh.num_vertices()];
    let val = arap_impl(mesh, reference, topo, Some(&mut g))?;
    Ok((val, g))
}

fn arap_impl(
    mesh: &Mesh,
    reference: &ReferenceGeometry,
    topo: &Topology,
    mut grad: Option<&mut [Vec3]>,
) -> Result<f64> {
    if reference.num_edges() != topo.num_edges() {
        return Err(Error::DimensionMismatch(format!(
            "reference geometry has {} edges, topology has {}",
            reference.num_edges(),
            topo.num_edges()
        )));
    }
    let used = reference.num_edges() - reference.degenerate_edges();
    if used == 0 {
        return Ok(0.0);
    }
    let v = mesh.vertices();
    let scale = 1.0 / used as f64;
    let mut total = 0.0;
    for (e, &(i, j)) in topo.edges.iter().enumerate() {
        let Some(dir) = reference.direction(e) else {
            continue;
        };
        let ev = v[i] - v[j];
        let r = ev - dir * ev.dot(&dir);
        total += r.norm_squared();
        if let Some(g) = grad.as_deref_mut() {
            // r is the projection of ev onto the plane orthogonal to dir, so
            // d‖r‖²/d ev = 2r.
            let gr = r * (2.0 * scale);
            g[i] += gr;
            g[j] -= gr;
        }
    }
    Ok(total * scale)
}

/// All four regularizers and the weighted sum of their gradients.
pub fn regularizers_with_grad(
    mesh: &Mesh,
    topo: &Topology,
    reference: &ReferenceGeometry,
    weights: &RegularizerWeights,
) -> Result<(RegularizerValues, Vec<Vec3>)> {
    let n = mesh.num_vertices();
    let mut grad = vec![Vec3::zeros(); n];
    let mut acc = |w: f64, g: &[Vec3]| {
        if w != 0.0 {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b * w;
            }
        }
    };
    let (lap, g_lap) = laplacian_loss_grad(mesh, topo)?;
    acc(weights.laplacian, &g_lap);
    let (edge, g_edge) = edge_loss_grad(mesh, topo);
    acc(weights.edge, &g_edge);
    let (area, g_area) = area_loss_grad(mesh);
    acc(weights.area, &g_area);
    let (arap, g_arap) = arap_loss_grad(mesh, reference, topo)?;
    acc(weights.arap, &g_arap);
    Ok((
        RegularizerValues {
            laplacian: lap,
            edge,
            area,
            arap,
        },
        grad,
    ))
}
