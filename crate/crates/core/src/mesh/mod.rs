//! Triangle meshes, derived edge/neighbor topology, primitive generators and
//! Wavefront OBJ I/O.
//!
//! Indices are 0-based internally; the OBJ reader and writer convert to and
//! from the 1-based file convention.

mod obj;
mod primitives;

pub use obj::{load_obj, parse_obj, save_obj, write_obj};
pub use primitives::{make_ellipsoid, make_sheet, make_sphere, make_torus, MAX_SPHERE_SUBDIVISIONS, MAX_VERTICES};

use crate::error::{Error, Result};
use crate::Vec3;

pub type Face = [usize; 3];

/// Small closed test target shipped with the library (162 vertices).
pub fn bundled_bunny() -> Mesh {
    parse_obj(include_str!("../../assets/bunny_lowpoly.obj")).expect("bundled mesh parses")
}

/// Vertex positions plus triangular faces.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<Face>,
}

impl Mesh {
    /// Builds a mesh, rejecting out-of-range and repeated face indices.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<Face>) -> Result<Self> {
        let n = vertices.len();
        for (t, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {t} references vertex {bad} but mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!(
                    "face {t} has repeated indices {f:?}"
                )));
            }
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("vertex {i}")));
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same faces, new positions. Positions must match the vertex count.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// Axis-aligned bounding box as (min, max). `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    /// Length of the bounding-box diagonal.
    pub fn extent(&self) -> f64 {
        self.bounds().map_or(0.0, |(lo, hi)| (hi - lo).norm())
    }

    /// Area of face `t`.
    pub fn face_area(&self, t: usize) -> f64 {
        let [i, j, k] = self.faces[t];
        let v = &self.vertices;
        0.5 * (v[j] - v[i]).cross(&(v[k] - v[i])).norm()
    }

    pub fn mean_edge_length(&self, topo: &Topology) -> f64 {
        if topo.edges.is_empty() {
            return 0.0;
        }
        let total: f64 = topo
            .edges
            .iter()
            .map(|&(i, j)| (self.vertices[i] - self.vertices[j]).norm())
            .sum();
        total / topo.edges.len() as f64
    }
}

/// Undirected edge set and 1-ring neighborhoods derived from the faces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    /// Unique `(min, max)` index pairs, sorted lexicographically.
    pub edges: Vec<(usize, usize)>,
    /// Sorted 1-ring neighbor indices per vertex.
    pub neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of faces incident to each edge, in `edges` order.
    pub fn edge_face_counts(&self, mesh: &Mesh) -> Vec<usize> {
        let mut counts = vec![0usize; self.edges.len()];
        for f in mesh.faces() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let key = (a.min(b), a.max(b));
                if let Ok(pos) = self.edges.binary_search(&key) {
                    counts[pos] += 1;
                }
            }
        }
        counts
    }
}

/// Derives the edge set and neighbor lists. Non-manifold input is accepted.
pub fn build_topology(mesh: &Mesh) -> Result<Topology> {
    let n = mesh.num_vertices();
    let mut edges = Vec::with_capacity(mesh.num_faces() * 3);
    for (t, f) in mesh.faces().iter().enumerate() {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(Error::Topology(format!("degenerate face {t}: {f:?}")));
        }
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            edges.push((a.min(b), a.max(b)));
        }
    }
    edges.sort_unstable();
    edges.dedup();

    let mut neighbors = vec![Vec::new(); n];
    for &(i, j) in &edges {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    Ok(Topology { edges, neighbors })
}

/// V - E + F.
pub fn euler_characteristic(mesh: &Mesh, topo: &Topology) -> i64 {
    mesh.num_vertices() as i64 - topo.num_edges() as i64 + mesh.num_faces() as i64
}
