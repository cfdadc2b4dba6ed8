//! Symmetric Chamfer distance between point sets, area-weighted surface
//! sampling, and exact nearest-neighbor search (brute force or uniform grid).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::Vec3;

/// Surface samples that remember where they came from, so gradients with
/// respect to sample positions can be pushed back to the mesh vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub faces: Vec<usize>,
    pub barycentric: Vec<[f64; 3]>,
}

impl SurfaceSamples {
    /// Re-evaluates the samples on a mesh with the same faces but moved vertices.
    pub fn relocate(&self, mesh: &Mesh) -> Vec<Vec3> {
        let v = mesh.vertices();
        self.faces
            .iter()
            .zip(&self.barycentric)
            .map(|(&t, b)| {
                let [i, j, k] = mesh.faces()[t];
                v[i] * b[0] + v[j] * b[1] + v[k] * b[2]
            })
            .collect()
    }

    /// Scatters per-sample adjoints back onto vertices.
    pub fn vertex_adjoint(&self, mesh: &Mesh, point_adjoint: &[Vec3]) -> Vec<Vec3> {
        let mut g = vec![Vec3::zeros(); mesh.num_vertices()];
        for ((&t, b), a) in self.faces.iter().zip(&self.barycentric).zip(point_adjoint) {
            let [i, j, k] = mesh.faces()[t];
            g[i] += a * b[0];
            g[j] += a * b[1];
            g[k] += a * b[2];
        }
        g
    }
}

/// Draws `n` points uniformly by area: faces with probability proportional to
/// their area, then uniform barycentric coordinates within the face.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<SurfaceSamples> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.num_faces());
    let mut total = 0.0;
    for t in 0..mesh.num_faces() {
        total += mesh.face_area(t);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("mesh has zero total area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut faces = Vec::with_capacity(n);
    let mut bary = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * total;
        let t = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        // Square-root warp gives a uniform density over the triangle.
        let r1: f64 = rng.random::<f64>();
        let r2: f64 = rng.random::<f64>();
        let s = r1.sqrt();
        faces.push(t);
        bary.push([1.0 - s, s * (1.0 - r2), s * r2]);
    }
    let samples = SurfaceSamples {
        points: Vec::new(),
        faces,
        barycentric: bary,
    };
    let points = samples.relocate(mesh);
    Ok(SurfaceSamples { points, ..samples })
}

/// Exact nearest neighbor of every query among `targets`, as
/// `(index, squared distance)`.
pub fn nearest_brute_force(queries: &[Vec3], targets: &[Vec3]) -> Vec<(usize, f64)> {
    queries
        .iter()
        .map(|q| {
            let mut best = (0usize, f64::INFINITY);
            for (j, t) in targets.iter().enumerate() {
                let d = (q - t).norm_squared();
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

/// Uniform spatial hash grid over a fixed point set.
pub struct PointGrid<'a> {
    points: &'a [Vec3],
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let (lo, hi) = points.iter().fold(
            (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), p| (lo.inf(p), hi.sup(p)),
        );
        let span = (hi - lo).map(|x| x.max(1e-12));
        // Roughly two points per cell on average.
        let volume = span.x * span.y * span.z;
        let cell = (2.0 * volume / points.len().max(1) as f64).cbrt().max(span.max() / 256.0);
        let dims = [0, 1, 2].map(|a| ((span[a] / cell).floor() as usize + 1).min(1024));
        let ncell = dims[0] * dims[1] * dims[2];
        let key = |p: &Vec3| -> usize {
            let c = [0, 1, 2].map(|a| (((p[a] - lo[a]) / cell) as usize).min(dims[a] - 1));
            (c[2] * dims[1] + c[1]) * dims[0] + c[0]
        };
        let mut counts = vec![0usize; ncell + 1];
        for p in points {
            counts[key(p) + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0usize; points.len()];
        for (idx, p) in points.iter().enumerate() {
            let k = key(p);
            order[fill[k]] = idx;
            fill[k] += 1;
        }
        Self {
            points,
            origin: lo,
            cell,
            dims,
            starts: counts,
            order,
        }
    }

    /// Cell containing `q`, clamped onto the grid.
    fn cell_coord(&self, q: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|a| {
            let c = ((q[a] - self.origin[a]) / self.cell).floor();
            c.clamp(0.0, (self.dims[a] - 1) as f64) as i64
        })
    }

    /// Exact nearest point to `q`; ties resolve to the lowest index, matching
    /// [`nearest_brute_force`].
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let c = self.cell_coord(q);
        let dims = self.dims.map(|d| d as i64);
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = (0..3).map(|a| c[a].max(dims[a] - 1 - c[a])).max().unwrap_or(0);
        let mut ring = 0i64;
        loop {
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let (x, y, z) = (c[0] + dx, c[1] + dy, c[2] + dz);
                        if x < 0 || y < 0 || z < 0 || x >= dims[0] || y >= dims[1] || z >= dims[2] {
                            continue;
                        }
                        let k = ((z * dims[1] + y) * dims[0] + x) as usize;
                        for &idx in &self.order[self.starts[k]..self.starts[k + 1]] {
                            let d = (q - self.points[idx]).norm_squared();
                            if d < best.1 || (d == best.1 && idx < best.0) {
                                best = (idx, d);
                            }
                        }
                    }
                }
            }
            // Unvisited points lie outside the searched block of cells.
            let reach = self.lower_bound(q, c, ring);
            if best.1 < reach * reach || ring >= max_ring {
                return best;
            }
            ring += 1;
        }
    }

    /// Distance from `q` to the grid cells outside the block of radius
    /// `ring` around cell `c`; infinite once the block covers the grid.
    fn lower_bound(&self, q: &Vec3, c: [i64; 3], ring: i64) -> f64 {
        let mut m = f64::INFINITY;
        for a in 0..3 {
            if c[a] - ring > 0 {
                let lo = self.origin[a] + (c[a] - ring) as f64 * self.cell;
                m = m.min(q[a] - lo);
            }
            if c[a] + ring < self.dims[a] as i64 - 1 {
                let hi = self.origin[a] + (c[a] + ring + 1) as f64 * self.cell;
                m = m.min(hi - q[a]);
            }
        }
        m.max(0.0)
    }
}

pub fn nearest_grid(queries: &[Vec3], targets: &[Vec3]) -> Vec<(usize, f64)> {
    if targets.is_empty() {
        return vec![(0, f64::INFINITY); queries.len()];
    }
    let grid = PointGrid::new(targets);
    queries.iter().map(|q| grid.nearest(q)).collect()
}

/// Nearest-neighbor backend for the Chamfer distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborSearch {
    BruteForce,
    #[default]
    Grid,
}

impl NeighborSearch {
    pub fn query(self, queries: &[Vec3], targets: &[Vec3]) -> Vec<(usize, f64)> {
        match self {
            NeighborSearch::BruteForce => nearest_brute_force(queries, targets),
            NeighborSearch::Grid => nearest_grid(queries, targets),
        }
    }
}

/// `(1/|A|) Σ_a min_b ‖a-b‖² + (1/|B|) Σ_b min_a ‖b-a‖²`.
pub fn chamfer_loss(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    Ok(chamfer_with_grad(a, b, NeighborSearch::Grid)?.0)
}

/// Chamfer value and its gradient with respect to the points of `a`.
pub fn chamfer_with_grad(a: &[Vec3], b: &[Vec3], search: NeighborSearch) -> Result<(f64, Vec<Vec3>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("chamfer needs non-empty point sets".into()));
    }
    let ab = search.query(a, b);
    let ba = search.query(b, a);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut grad = vec![Vec3::zeros(); a.len()];
    let mut forward = 0.0;
    for (i, &(j, d)) in ab.iter().enumerate() {
        forward += d;
        grad[i] += (a[i] - b[j]) * (2.0 / na);
    }
    let mut backward = 0.0;
    for (j, &(i, d)) in ba.iter().enumerate() {
        backward += d;
        grad[i] += (a[i] - b[j]) * (2.0 / nb);
    }
    Ok((forward / na + backward / nb, grad))
}
