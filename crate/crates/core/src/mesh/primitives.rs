use std::collections::HashMap;

use super::{Face, Mesh};
use crate::error::{Error, Result};
use crate::Vec3;

/// Memory guard for generated primitives.
pub const MAX_VERTICES: usize = 2_000_000;

/// Subdivision level 7 already yields 163842 vertices.
pub const MAX_SPHERE_SUBDIVISIONS: u32 = 7;

/// Icosphere: a subdivided icosahedron projected onto the sphere of the
/// given radius, centered at the origin, faces wound counter-clockwise when
/// seen from outside.
pub fn make_sphere(subdivisions: u32, radius: f64) -> Result<Mesh> {
    if subdivisions > MAX_SPHERE_SUBDIVISIONS {
        return Err(Error::SizeLimit(format!(
            "sphere subdivisions {subdivisions} exceeds cap {MAX_SPHERE_SUBDIVISIONS}"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("sphere radius {radius}")));
    }

    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();

    let mut faces: Vec<Face> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }

    for v in &mut vertices {
        *v *= radius;
    }
    Mesh::new(vertices, faces)
}

/// Icosphere of unit radius scaled by `axes` along x, y and z.
pub fn make_ellipsoid(subdivisions: u32, axes: [f64; 3]) -> Result<Mesh> {
    if !axes.iter().all(|a| *a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(format!("ellipsoid axes {axes:?}")));
    }
    let s = make_sphere(subdivisions, 1.0)?;
    let v = s
        .vertices()
        .iter()
        .map(|p| Vec3::new(p.x * axes[0], p.y * axes[1], p.z * axes[2]))
        .collect();
    s.with_vertices(v)
}

/// Planar sheet in z = 0 centered at the origin, normals along +z.
///
/// Rows are offset by half a cell on alternate rows and spaced `h·√3/2`
/// apart, with `h = extent / (nx - 1)`. Every cell between two rows is split
/// along its short diagonal, so all triangles are equilateral with side `h`.
/// The result has `nx·ny` vertices and `2(nx-1)(ny-1)` faces.
pub fn make_sheet(nx: usize, ny: usize, extent: f64) -> Result<Mesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidParameter(format!(
            "sheet needs nx, ny >= 2 (got {nx}x{ny})"
        )));
    }
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(Error::InvalidParameter(format!("sheet extent {extent}")));
    }
    if nx.saturating_mul(ny) > MAX_VERTICES {
        return Err(Error::SizeLimit(format!("sheet {nx}x{ny} exceeds {MAX_VERTICES} vertices")));
    }

    let h = extent / (nx - 1) as f64;
    let row = h * 3f64.sqrt() / 2.0;
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let shift = if j % 2 == 1 { 0.5 } else { 0.0 };
        for i in 0..nx {
            vertices.push(Vec3::new((i as f64 + shift) * h, j as f64 * row, 0.0));
        }
    }
    let (lo, hi) = vertices.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), v| (lo.inf(v), hi.sup(v)),
    );
    let center = Vec3::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0, 0.0);
    for v in &mut vertices {
        *v -= center;
    }

    let idx = |i: usize, j: usize| j * nx + i;
    let mut faces = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            if j % 2 == 0 {
                faces.push([a, b, c]);
                faces.push([b, d, c]);
            } else {
                faces.push([a, d, c]);
                faces.push([a, b, d]);
            }
        }
    }
    Mesh::new(vertices, faces)
}

/// Torus around the z axis. Vertex `(i, j)` sits at major angle `2πi/n_major`
/// and minor angle `2πj/n_minor`; faces are wound outward.
pub fn make_torus(major_r: f64, minor_r: f64, n_major: usize, n_minor: usize) -> Result<Mesh> {
    if !(minor_r > 0.0 && major_r > minor_r && major_r.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "torus radii must satisfy major > minor > 0 (got {major_r}, {minor_r})"
        )));
    }
    if n_major < 3 || n_minor < 3 {
        return Err(Error::InvalidParameter(format!(
            "torus needs at least 3 segments per ring (got {n_major}, {n_minor})"
        )));
    }
    if n_major.saturating_mul(n_minor) > MAX_VERTICES {
        return Err(Error::SizeLimit(format!(
            "torus {n_major}x{n_minor} exceeds {MAX_VERTICES} vertices"
        )));
    }

    let tau = std::f64::consts::TAU;
    let mut vertices = Vec::with_capacity(n_major * n_minor);
    for i in 0..n_major {
        let theta = tau * i as f64 / n_major as f64;
        for j in 0..n_minor {
            let phi = tau * j as f64 / n_minor as f64;
            let ring = major_r + minor_r * phi.cos();
            vertices.push(Vec3::new(ring * theta.cos(), ring * theta.sin(), minor_r * phi.sin()));
        }
    }
    let idx = |i: usize, j: usize| (i % n_major) * n_minor + (j % n_minor);
    let mut faces = Vec::with_capacity(2 * n_major * n_minor);
    for i in 0..n_major {
        for j in 0..n_minor {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    Mesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_topology, euler_characteristic};

    #[test]
    fn icosahedron_counts() {
        let m = make_sphere(0, 1.0).unwrap();
        assert_eq!((m.num_vertices(), m.num_faces()), (12, 20));
        assert_eq!(build_topology(&m).unwrap().num_edges(), 30);
    }

    #[test]
    fn subdivision_counts() {
        // Each level: F' = 4F, V' = V + E, E' = 2E + 3F.
        let (mut v, mut e, mut f) = (12usize, 30usize, 20usize);
        for level in 0..=4u32 {
            let m = make_sphere(level, 2.5).unwrap();
            assert_eq!((m.num_vertices(), m.num_faces()), (v, f), "level {level}");
            let topo = build_topology(&m).unwrap();
            assert_eq!(topo.num_edges(), e);
            assert_eq!(euler_characteristic(&m, &topo), 2);
            let (nv, ne, nf) = (v + e, 2 * e + 3 * f, 4 * f);
            v = nv;
            e = ne;
            f = nf;
        }
        assert_eq!(make_sphere(1, 1.0).unwrap().num_vertices(), 42);
        assert_eq!(make_sphere(1, 1.0).unwrap().num_faces(), 80);
    }

    #[test]
    fn sphere_vertices_on_radius_and_outward() {
        let m = make_sphere(3, 1.7).unwrap();
        for v in m.vertices() {
            assert!((v.norm() - 1.7).abs() < 1e-9);
        }
        let vs = m.vertices();
        for &[i, j, k] in m.faces() {
            let n = (vs[j] - vs[i]).cross(&(vs[k] - vs[i]));
            let c = (vs[i] + vs[j] + vs[k]) / 3.0;
            assert!(n.dot(&c) > 0.0);
        }
        let topo = build_topology(&m).unwrap();
        assert!(topo.edge_face_counts(&m).iter().all(|&c| c == 2));
    }

    #[test]
    fn sphere_cap() {
        assert!(matches!(
            make_sphere(MAX_SPHERE_SUBDIVISIONS + 1, 1.0),
            Err(Error::SizeLimit(_))
        ));
        assert!(make_sphere(1, 0.0).is_err());
    }

    #[test]
    fn sheet_counts_and_planarity() {
        let m = make_sheet(2, 2, 1.0).unwrap();
        assert_eq!((m.num_vertices(), m.num_faces()), (4, 2));
        let m = make_sheet(3, 3, 1.0).unwrap();
        assert_eq!((m.num_vertices(), m.num_faces()), (9, 8));
        let m = make_sheet(7, 9, 2.0).unwrap();
        assert_eq!((m.num_vertices(), m.num_faces()), (63, 96));
        assert!(m.vertices().iter().all(|v| v.z == 0.0));
        let (lo, hi) = m.bounds().unwrap();
        assert!((lo.x + hi.x).abs() < 1e-12 && (lo.y + hi.y).abs() < 1e-12);
        assert!(make_sheet(1, 4, 1.0).is_err());
    }

    #[test]
    fn sheet_triangles_are_equilateral_and_face_up() {
        let m = make_sheet(6, 5, 1.0).unwrap();
        let h = 1.0 / 5.0;
        let vs = m.vertices();
        for &[i, j, k] in m.faces() {
            for (a, b) in [(i, j), (j, k), (k, i)] {
                assert!(((vs[a] - vs[b]).norm() - h).abs() < 1e-12);
            }
            let n = (vs[j] - vs[i]).cross(&(vs[k] - vs[i]));
            assert!(n.z > 0.0);
        }
        let topo = build_topology(&m).unwrap();
        let counts = topo.edge_face_counts(&m);
        assert!(counts.iter().all(|&c| c == 1 || c == 2));
        assert!(counts.iter().any(|&c| c == 1));
    }

    #[test]
    fn torus_counts_and_geometry() {
        let m = make_torus(1.0, 0.3, 3, 3).unwrap();
        assert_eq!((m.num_vertices(), m.num_faces()), (9, 18));
        let m = make_torus(2.0, 0.5, 12, 7).unwrap();
        for v in m.vertices() {
            let ring = (v.x * v.x + v.y * v.y).sqrt() - 2.0;
            assert!(((ring * ring + v.z * v.z).sqrt() - 0.5).abs() < 1e-9);
        }
        let topo = build_topology(&m).unwrap();
        assert_eq!(euler_characteristic(&m, &topo), 0);
        assert!(topo.edge_face_counts(&m).iter().all(|&c| c == 2));
        let vs = m.vertices();
        for &[i, j, k] in m.faces() {
            let n = (vs[j] - vs[i]).cross(&(vs[k] - vs[i]));
            let c = (vs[i] + vs[j] + vs[k]) / 3.0;
            let axis_pt = Vec3::new(c.x, c.y, 0.0).normalize() * 2.0;
            assert!(n.dot(&(c - axis_pt)) > 0.0);
        }
        assert!(make_torus(0.3, 1.0, 4, 4).is_err());
    }
}
