//! Per-(face, pixel) terms of the renderer, generic over [`Real`] so the same
//! code yields values (f64) and local partial derivatives (dual numbers).

use crate::dual::Real;

/// Pinhole camera at `(0, 0, height)` looking down -z, image up = +y.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Camera {
    pub height: f64,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    /// Projects to continuous pixel coordinates `(u, v)` with `v` pointing up.
    pub fn project<T: Real>(&self, p: [T; 3]) -> [T; 2] {
        let inv_depth = T::cst(1.0) / (T::cst(self.height) - p[2]);
        [
            p[0] * inv_depth * self.focal + self.cx,
            p[1] * inv_depth * self.focal + self.cy,
        ]
    }

    /// Unnormalized direction of the ray through continuous pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.focal, (v - self.cy) / self.focal, -1.0]
    }
}

/// Shading parameters that do not carry derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Shading {
    pub intensity: f64,
    pub ambient: f64,
}

/// Square pixel footprint centered at `(u, v)` with half side `half`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Footprint {
    pub u: f64,
    pub v: f64,
    pub half: f64,
}

#[derive(Clone, Copy)]
struct Poly<T> {
    pts: [[T; 2]; 8],
    n: usize,
}

fn cross2<T: Real>(a: [T; 2], b: [T; 2], p: [T; 2]) -> T {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Clips `poly` to the left side of the directed line `a -> b`.
fn clip_half_plane<T: Real>(poly: &Poly<T>, a: [T; 2], b: [T; 2]) -> Poly<T> {
    let zero = T::cst(0.0);
    let mut out = Poly {
        pts: [[zero, zero]; 8],
        n: 0,
    };
    for i in 0..poly.n {
        let p = poly.pts[i];
        let q = poly.pts[(i + 1) % poly.n];
        let sp = cross2(a, b, p);
        let sq = cross2(a, b, q);
        let p_in = sp.val() >= 0.0;
        let q_in = sq.val() >= 0.0;
        if p_in {
            out.pts[out.n] = p;
            out.n += 1;
        }
        if p_in != q_in {
            let t = sp / (sp - sq);
            out.pts[out.n] = [p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t];
            out.n += 1;
        }
    }
    out
}

fn poly_area<T: Real>(poly: &Poly<T>) -> T {
    let mut acc = T::cst(0.0);
    for i in 0..poly.n {
        let p = poly.pts[i];
        let q = poly.pts[(i + 1) % poly.n];
        acc = acc + p[0] * q[1] - q[0] * p[1];
    }
    acc * 0.5
}

/// Fraction of the footprint square covered by the counter-clockwise
/// triangle `tri` (screen coordinates, v up).
pub(crate) fn coverage<T: Real>(tri: [[T; 2]; 3], fp: Footprint) -> T {
    let (u0, u1, v0, v1) = (fp.u - fp.half, fp.u + fp.half, fp.v - fp.half, fp.v + fp.half);
    let c = |u: f64, v: f64| [T::cst(u), T::cst(v)];
    let zero = T::cst(0.0);
    let mut poly = Poly {
        pts: [[zero, zero]; 8],
        n: 4,
    };
    poly.pts[..4].copy_from_slice(&[c(u0, v0), c(u1, v0), c(u1, v1), c(u0, v1)]);
    for e in 0..3 {
        poly = clip_half_plane(&poly, tri[e], tri[(e + 1) % 3]);
        if poly.n < 3 {
            return zero;
        }
    }
    let side = 2.0 * fp.half;
    poly_area(&poly) * (1.0 / (side * side))
}

fn sub3<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Flat Lambertian shading of the plane of `tri` where the ray through the
/// footprint center meets it. Returns `(luminance, ray depth)`.
pub(crate) fn shade<T: Real>(
    tri: [[T; 3]; 3],
    light: [T; 3],
    cam: &Camera,
    sh: Shading,
    fp: Footprint,
) -> (T, f64) {
    let ray = cam.ray(fp.u, fp.v);
    let ray_t = [T::cst(ray[0]), T::cst(ray[1]), T::cst(ray[2])];
    let n = cross3(sub3(tri[1], tri[0]), sub3(tri[2], tri[0]));
    let n_dot_ray = dot3(n, ray_t);
    let eye = [T::cst(0.0), T::cst(0.0), T::cst(cam.height)];
    let ambient_only = (T::cst(sh.ambient).clamp01(), f64::INFINITY);
    if !(n_dot_ray.val() < 0.0) {
        // Edge-on or facing away: no well-defined intersection.
        return ambient_only;
    }
    let t = dot3(n, sub3(tri[0], eye)) / n_dot_ray;
    if !(t.val() > 0.0) || !t.val().is_finite() {
        return ambient_only;
    }
    let p = [eye[0] + ray_t[0] * t, eye[1] + ray_t[1] * t, eye[2] + ray_t[2] * t];
    let to_light = sub3(light, p);
    let dist2 = dot3(to_light, to_light);
    let n_len = dot3(n, n).sqrt();
    let cos_num = dot3(n, to_light) / n_len;
    let diffuse = if sh.intensity == 0.0 || !(cos_num.val() > 0.0) || !(dist2.val() > 0.0) {
        T::cst(0.0)
    } else {
        cos_num * sh.intensity / (dist2 * dist2.sqrt())
    };
    ((diffuse + sh.ambient).clamp01(), t.val())
}
