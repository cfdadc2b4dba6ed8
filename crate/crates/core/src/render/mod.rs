//! Differentiable single-channel renderer.
//!
//! The camera sits at `(0, 0, camera_height)` looking down the -z axis with
//! world +y pointing up in the image. Faces facing away from the camera are
//! culled. Each pixel integrates a square footprint of side `softness`
//! pixels: every visible face contributes its exact (analytically clipped)
//! coverage of the footprint, composited front to back by depth along the
//! pixel-center ray, and the uncovered remainder shows the background.
//! Faces are shaded flat with a Lambertian point light:
//! `clamp(ambient + intensity · max(0, n·l̂) / ‖light - p‖², 0, 1)`,
//! evaluated at the point `p` where the pixel-center ray meets the face plane.
//!
//! Pixel values are continuous in the vertex positions as long as the depth
//! order of overlapping faces does not change, which is what makes the
//! gradients usable for shape optimization.

mod image;
mod io;
mod normalize;
mod raster;

pub use self::image::Image;
pub use io::{image_to_gray8, write_image, write_pgm, ImageFormat, Window};
pub use normalize::{normalize_image, normalize_image_with_grad, NormalizationSpec, NormalizedImage};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{Dual, Real};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::Vec3;
use raster::{Camera, Footprint, Shading};

/// Vertices closer than this to the camera plane are rejected.
const NEAR_PLANE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scene {
    pub camera_height: f64,
    pub fov_degrees: f64,
    /// `[width, height]` in pixels.
    pub resolution: [usize; 2],
    pub light_position: Vec3,
    pub light_intensity: f64,
    pub ambient: f64,
    pub background: f64,
    /// Side length, in pixels, of the square footprint each pixel integrates.
    pub softness: f64,
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            camera_height: 2.7,
            fov_degrees: 60.0,
            resolution: [128, 128],
            light_position: Vec3::new(0.0, 0.3, 2.6),
            light_intensity: 1.5,
            ambient: 0.3,
            background: 0.5,
            softness: 1.5,
        }
    }
}

impl Scene {
    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.resolution = [width, height];
        self
    }

    pub fn width(&self) -> usize {
        self.resolution[0]
    }

    pub fn height(&self) -> usize {
        self.resolution[1]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let [w, h] = self.resolution;
        if w < 8 || h < 8 {
            return bad(format!("resolution {w}x{h} is below 8x8"));
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return bad(format!("fov {} must be in (0, 180)", self.fov_degrees));
        }
        if !(self.camera_height > 0.0 && self.camera_height.is_finite()) {
            return bad(format!("camera height {} must be > 0", self.camera_height));
        }
        if !self.light_position.iter().all(|x| x.is_finite()) {
            return bad("light position must be finite".into());
        }
        if !(self.light_intensity >= 0.0 && self.light_intensity.is_finite()) {
            return bad(format!("light intensity {} must be >= 0", self.light_intensity));
        }
        if !(0.0..=1.0).contains(&self.ambient) {
            return bad(format!("ambient {} must be in [0, 1]", self.ambient));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return bad(format!("background {} must be in [0, 1]", self.background));
        }
        if !(self.softness > 0.0 && self.softness.is_finite()) {
            return bad(format!("softness {} must be > 0", self.softness));
        }
        Ok(())
    }

    fn camera(&self) -> Camera {
        let w = self.width() as f64;
        let h = self.height() as f64;
        Camera {
            height: self.camera_height,
            focal: 0.5 * w / (0.5 * self.fov_degrees.to_radians()).tan(),
            cx: 0.5 * w,
            cy: 0.5 * h,
        }
    }

    fn shading(&self) -> Shading {
        Shading {
            intensity: self.light_intensity,
            ambient: self.ambient,
        }
    }

    fn footprint(&self, col: usize, row: usize) -> Footprint {
        Footprint {
            u: col as f64 + 0.5,
            v: self.height() as f64 - (row as f64 + 0.5),
            half: 0.5 * self.softness,
        }
    }
}

/// Partial derivatives of every pixel with respect to the vertices of the
/// faces that touched it and the light position.
#[derive(Debug, Clone)]
pub struct RenderTape {
    faces: Vec<[usize; 3]>,
    num_vertices: usize,
    width: usize,
    height: usize,
    /// Per pixel: range into `entries`.
    ranges: Vec<(u32, u32)>,
    entries: Vec<(u32, [f64; 9])>,
    light: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradient {
    pub vertices: Vec<Vec3>,
    pub light: Vec3,
}

impl RenderTape {
    /// Pulls an image-space adjoint back to vertex and light adjoints.
    pub fn backward(&self, adjoint: &Image) -> Result<RenderGradient> {
        if adjoint.width() != self.width || adjoint.height() != self.height {
            return Err(Error::DimensionMismatch(format!(
                "adjoint is {}x{}, render was {}x{}",
                adjoint.width(),
                adjoint.height(),
                self.width,
                self.height
            )));
        }
        let mut verts = vec![Vec3::zeros(); self.num_vertices];
        let mut light = Vec3::zeros();
        for (p, &a) in adjoint.data().iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let (start, len) = self.ranges[p];
            for (face, d) in &self.entries[start as usize..(start + len) as usize] {
                let f = self.faces[*face as usize];
                for (slot, &vi) in f.iter().enumerate() {
                    verts[vi] += Vec3::new(d[3 * slot], d[3 * slot + 1], d[3 * slot + 2]) * a;
                }
            }
            let l = self.light[p];
            light += Vec3::new(l[0], l[1], l[2]) * a;
        }
        Ok(RenderGradient {
            vertices: verts,
            light,
        })
    }
}

/// Renders the mesh under the scene.
pub fn render(mesh: &Mesh, scene: &Scene) -> Result<Image> {
    Ok(render_impl(mesh, scene, false)?.0)
}

/// Renders and records the local derivatives needed by [`RenderTape::backward`].
pub fn render_with_tape(mesh: &Mesh, scene: &Scene) -> Result<(Image, RenderTape)> {
    let (img, tape) = render_impl(mesh, scene, true)?;
    Ok((img, tape.expect("tape requested")))
}

struct PixelOut {
    value: f64,
    entries: Vec<(u32, [f64; 9])>,
    light: [f64; 3],
}

type Grad = Dual<12>;

fn render_impl(mesh: &Mesh, scene: &Scene, want_tape: bool) -> Result<(Image, Option<RenderTape>)> {
    scene.validate()?;
    let cam = scene.camera();
    let (w, h) = (scene.width(), scene.height());
    let verts = mesh.vertices();
    if let Some(i) = verts.iter().position(|v| !v.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFinite(format!("vertex {i}")));
    }
    if let Some(i) = verts.iter().position(|v| v.z >= scene.camera_height - NEAR_PLANE) {
        return Err(Error::Render(format!(
            "vertex {i} at z = {} is not in front of the camera at z = {}",
            verts[i].z, scene.camera_height
        )));
    }

    let uv: Vec<[f64; 2]> = verts.iter().map(|v| cam.project([v.x, v.y, v.z])).collect();
    let half = 0.5 * scene.softness;
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); w * h];
    for (t, f) in mesh.faces().iter().enumerate() {
        let [a, b, c] = f.map(|i| uv[i]);
        let area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if !(area2 > 0.0) {
            continue;
        }
        let umin = a[0].min(b[0]).min(c[0]);
        let umax = a[0].max(b[0]).max(c[0]);
        let vmin = a[1].min(b[1]).min(c[1]);
        let vmax = a[1].max(b[1]).max(c[1]);
        // Pixel (col, row) footprint spans u in col + 0.5 ± half and
        // v in (h - row - 0.5) ± half.
        let col_lo = (umin - 0.5 - half).floor().max(0.0);
        let col_hi = (umax - 0.5 + half).ceil().min(w as f64 - 1.0);
        let row_lo = (h as f64 - 0.5 - half - vmax).floor().max(0.0);
        let row_hi = (h as f64 - 0.5 + half - vmin).ceil().min(h as f64 - 1.0);
        if col_lo > col_hi || row_lo > row_hi {
            continue;
        }
        for row in row_lo as usize..=row_hi as usize {
            for col in col_lo as usize..=col_hi as usize {
                bins[row * w + col].push(t as u32);
            }
        }
    }

    let light = scene.light_position;
    let light_f = [light.x, light.y, light.z];
    let shading = scene.shading();
    let bg = scene.background;
    let faces = mesh.faces();

    let pixels: Vec<PixelOut> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (row, col) = (p / w, p % w);
            let fp = scene.footprint(col, row);
            let mut hits: Vec<(f64, u32, f64, f64)> = Vec::with_capacity(bins[p].len());
            for &t in &bins[p] {
                let f = faces[t as usize];
                let cov = raster::coverage(f.map(|i| uv[i]), fp);
                if cov > 0.0 {
                    let tri = f.map(|i| [verts[i].x, verts[i].y, verts[i].z]);
                    let (lum, depth) = raster::shade(tri, light_f, &cam, shading, fp);
                    hits.push((depth, t, cov, lum));
                }
            }
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            // Front-to-back: each face takes its coverage until the footprint is full.
            let mut remaining = 1.0;
            let mut value = bg;
            let mut used: Vec<(u32, f64, bool)> = Vec::new();
            for &(_, t, cov, lum) in &hits {
                if remaining <= 0.0 {
                    break;
                }
                let (a, clamped) = if cov < remaining { (cov, false) } else { (remaining, true) };
                value += a * (lum - bg);
                remaining -= a;
                used.push((t, a, clamped));
                if clamped {
                    break;
                }
            }

            let mut out = PixelOut {
                value,
                entries: Vec::new(),
                light: [0.0; 3],
            };
            if !want_tape || used.is_empty() {
                return out;
            }
            // With a clamped last face k, the pixel is Σ_{g<k} a_g (L_g - L_k) + L_k.
            let partner = match used.last() {
                Some(&(t, _, true)) => hits.iter().find(|x| x.1 == t).map_or(bg, |x| x.3),
                _ => bg,
            };
            for &(t, a, clamped) in &used {
                let f = faces[t as usize];
                let mut tri = [[Grad::cst(0.0); 3]; 3];
                for (slot, &vi) in f.iter().enumerate() {
                    for axis in 0..3 {
                        tri[slot][axis] = Grad::var(verts[vi][axis], 3 * slot + axis);
                    }
                }
                let light_d = [0, 1, 2].map(|axis| Grad::var(light_f[axis], 9 + axis));
                let (lum, _) = raster::shade(tri, light_d, &cam, shading, fp);
                let mut d = [0.0; 9];
                if clamped {
                    for i in 0..9 {
                        d[i] = a * lum.d[i];
                    }
                } else {
                    let uvd = tri.map(|p| cam.project(p));
                    let cov = raster::coverage(uvd, fp);
                    for i in 0..9 {
                        d[i] = cov.d[i] * (lum.v - partner) + cov.v * lum.d[i];
                    }
                }
                for axis in 0..3 {
                    out.light[axis] += a * lum.d[9 + axis];
                }
                out.entries.push((t, d));
            }
            out
        })
        .collect();

    let mut data = Vec::with_capacity(w * h);
    let tape = if want_tape {
        let mut ranges = Vec::with_capacity(w * h);
        let mut entries = Vec::new();
        let mut light_partials = Vec::with_capacity(w * h);
        for px in pixels {
            data.push(px.value);
            ranges.push((entries.len() as u32, px.entries.len() as u32));
            entries.extend(px.entries);
            light_partials.push(px.light);
        }
        Some(RenderTape {
            faces: faces.to_vec(),
            num_vertices: verts.len(),
            width: w,
            height: h,
            ranges,
            entries,
            light: light_partials,
        })
    } else {
        data.extend(pixels.iter().map(|p| p.value));
        None
    };
    Ok((Image::new(w, h, data)?, tape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_sheet, make_sphere};

    fn small_scene() -> Scene {
        Scene::default().with_resolution(32, 32)
    }

    #[test]
    fn empty_mesh_renders_background() {
        let m = Mesh::new(vec![], vec![]).unwrap();
        let img = render(&m, &small_scene()).unwrap();
        assert!(img.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn tiny_mesh_is_background() {
        let m = make_sphere(1, 1e-6).unwrap();
        let img = render(&m, &small_scene()).unwrap();
        assert!(img.data().iter().all(|&x| (x - 0.5).abs() < 1e-3));
    }

    #[test]
    fn mesh_behind_camera_rejected() {
        let m = make_sphere(0, 1.0).unwrap();
        let moved = m
            .with_vertices(m.vertices().iter().map(|v| v + Vec3::new(0.0, 0.0, 2.0)).collect())
            .unwrap();
        assert!(matches!(render(&moved, &small_scene()), Err(Error::Render(_))));
    }

    #[test]
    fn far_pixels_equal_background() {
        let m = make_sphere(2, 0.4).unwrap();
        let scene = small_scene();
        let img = render(&m, &scene).unwrap();
        // Sphere of radius 0.4 projects to well under a third of the frame.
        for row in 0..32 {
            for col in 0..32 {
                let (u, v) = (col as f64 + 0.5 - 16.0, 16.0 - (row as f64 + 0.5));
                if (u * u + v * v).sqrt() > 16.0 {
                    assert!((img.get(col, row) - scene.background).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn back_facing_light_gives_ambient() {
        let sheet = make_sheet(5, 6, 6.0).unwrap();
        let mut scene = small_scene();
        scene.light_position = Vec3::new(0.0, 0.0, -3.0);
        let img = render(&sheet, &scene).unwrap();
        assert!((img.get(16, 16) - scene.ambient).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let m = make_sphere(2, 1.0).unwrap();
        let a = render(&m, &small_scene()).unwrap();
        let b = render(&m, &small_scene()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scene_validation() {
        let mut s = Scene::default();
        s.resolution = [4, 64];
        assert!(s.validate().is_err());
        let mut s = Scene::default();
        s.fov_degrees = 180.0;
        assert!(s.validate().is_err());
        let mut s = Scene::default();
        s.softness = 0.0;
        assert!(s.validate().is_err());
    }
}
