//! Pose and light-direction tuning sweeps over a finished stimulus.
//!
//! Pose cells rotate the mesh rigidly about the origin: first by the
//! elevation angle about the world x-axis, then by the azimuth angle about
//! the world z-axis (extrinsic). Light cells place the point light on a half
//! dome `radius·(cos el·cos az, cos el·sin az, sin el)` whose base ring lies
//! in the z = 0 plane. Every cell is scored by [`evaluate_mesh`], the same
//! path that produced the synthesis result.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::optim::evaluate_mesh;
use crate::render::{render, write_image, ImageFormat, NormalizationSpec, Scene, Window};
use crate::response::ResponseModel;
use crate::Vec3;

fn degree_range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as i64;
    (0..=n.max(0)).map(|i| start + i as f64 * step).collect()
}

fn check_angles(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} list is empty")));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} value {v} is not finite")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseGridSpec {
    /// Degrees.
    pub azimuths: Vec<f64>,
    /// Degrees.
    pub elevations: Vec<f64>,
}

impl Default for PoseGridSpec {
    fn default() -> Self {
        Self {
            azimuths: degree_range(-90.0, 90.0, 15.0),
            elevations: degree_range(-90.0, 90.0, 15.0),
        }
    }
}

impl PoseGridSpec {
    pub fn validate(&self) -> Result<()> {
        check_angles("azimuth", &self.azimuths)?;
        check_angles("elevation", &self.elevations)?;
        if !self.azimuths.contains(&0.0) || !self.elevations.contains(&0.0) {
            return Err(Error::InvalidParameter("pose grid must include azimuth 0 and elevation 0".into()));
        }
        Ok(())
    }
}

/// Responses indexed `[elevation][azimuth]`; `None` marks poses that could
/// not be rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseGrid {
    pub azimuths: Vec<f64>,
    pub elevations: Vec<f64>,
    pub responses: Vec<Vec<Option<f64>>>,
}

impl PoseGrid {
    pub fn get(&self, azimuth: f64, elevation: f64) -> Option<f64> {
        let a = self.azimuths.iter().position(|&x| x == azimuth)?;
        let e = self.elevations.iter().position(|&x| x == elevation)?;
        self.responses[e][a]
    }
}

/// `Rz(azimuth) · Rx(elevation)`, angles in degrees.
pub fn pose_rotation(azimuth: f64, elevation: f64) -> Rotation3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), elevation.to_radians());
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), azimuth.to_radians());
    rz * rx
}

pub fn rotate_mesh(mesh: &Mesh, azimuth: f64, elevation: f64) -> Result<Mesh> {
    if azimuth == 0.0 && elevation == 0.0 {
        return Ok(mesh.clone());
    }
    let r = pose_rotation(azimuth, elevation);
    mesh.with_vertices(mesh.vertices().iter().map(|v| r * v).collect())
}

fn cell_is_invalid(e: &Error) -> bool {
    matches!(e, Error::Render(_) | Error::Degenerate(_))
}

pub fn sweep_pose(
    mesh: &Mesh,
    scene: &Scene,
    normalization: &NormalizationSpec,
    model: &dyn ResponseModel,
    spec: &PoseGridSpec,
) -> Result<PoseGrid> {
    spec.validate()?;
    let cells: Vec<(f64, f64)> = spec
        .elevations
        .iter()
        .flat_map(|&el| spec.azimuths.iter().map(move |&az| (az, el)))
        .collect();
    let values: Vec<Option<f64>> = cells
        .par_iter()
        .map(|&(az, el)| {
            let rotated = rotate_mesh(mesh, az, el)?;
            match evaluate_mesh(&rotated, scene, normalization, model) {
                Ok(ev) => Ok(Some(ev.response)),
                Err(e) if cell_is_invalid(&e) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let n = spec.azimuths.len();
    Ok(PoseGrid {
        azimuths: spec.azimuths.clone(),
        elevations: spec.elevations.clone(),
        responses: values.chunks(n).map(|r| r.to_vec()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomeSpec {
    /// Degrees in `[0, 360)`.
    pub azimuths: Vec<f64>,
    /// Degrees in `[0, 90]`.
    pub elevations: Vec<f64>,
    pub radius: f64,
    /// Renders written per tertile.
    pub exemplars: usize,
}

impl Default for DomeSpec {
    fn default() -> Self {
        Self {
            azimuths: degree_range(0.0, 345.0, 15.0),
            elevations: degree_range(0.0, 90.0, 15.0),
            radius: 2.6,
            exemplars: 3,
        }
    }
}

impl DomeSpec {
    pub fn validate(&self) -> Result<()> {
        check_angles("azimuth", &self.azimuths)?;
        check_angles("elevation", &self.elevations)?;
        if let Some(a) = self.azimuths.iter().find(|a| !(0.0..360.0).contains(*a)) {
            return Err(Error::InvalidParameter(format!("dome azimuth {a} outside [0, 360)")));
        }
        if let Some(e) = self.elevations.iter().find(|e| !(0.0..=90.0).contains(*e)) {
            return Err(Error::InvalidParameter(format!("dome elevation {e} outside [0, 90]")));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("dome radius {} must be > 0", self.radius)));
        }
        Ok(())
    }
}

/// Light position on the half dome; `z >= 0` for elevations in `[0, 90]`.
pub fn dome_position(radius: f64, azimuth: f64, elevation: f64) -> Vec3 {
    let (sa, ca) = azimuth.to_radians().sin_cos();
    let (se, ce) = elevation.to_radians().sin_cos();
    Vec3::new(radius * ce * ca, radius * ce * sa, radius * se)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tertile {
    High,
    Mid,
    Low,
}

impl Tertile {
    pub fn as_str(self) -> &'static str {
        match self {
            Tertile::High => "high",
            Tertile::Mid => "mid",
            Tertile::Low => "low",
        }
    }
}

/// Labels by descending response rank (ties by cell order). Group sizes
/// differ by at most one, larger groups first.
pub fn tertile_labels(values: &[f64]) -> Vec<Tertile> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let base = n / 3;
    let rem = n % 3;
    let high = base + usize::from(rem > 0);
    let mid = base + usize::from(rem > 1);
    let mut labels = vec![Tertile::Low; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = if rank < high {
            Tertile::High
        } else if rank < high + mid {
            Tertile::Mid
        } else {
            Tertile::Low
        };
    }
    labels
}

/// Responses and tertile labels indexed `[elevation][azimuth]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomeGrid {
    pub azimuths: Vec<f64>,
    pub elevations: Vec<f64>,
    pub radius: f64,
    pub responses: Vec<Vec<f64>>,
    pub tertiles: Vec<Vec<Tertile>>,
}

impl DomeGrid {
    /// Up to `k` cells per tertile, best-ranked first, as `(azimuth, elevation, response)`.
    pub fn exemplars(&self, k: usize) -> Vec<(Tertile, f64, f64, f64)> {
        let mut cells = Vec::new();
        for (e, row) in self.responses.iter().enumerate() {
            for (a, &r) in row.iter().enumerate() {
                cells.push((self.tertiles[e][a], self.azimuths[a], self.elevations[e], r));
            }
        }
        let mut out = Vec::new();
        for t in [Tertile::High, Tertile::Mid, Tertile::Low] {
            let mut group: Vec<_> = cells.iter().copied().filter(|c| c.0 == t).collect();
            group.sort_by(|x, y| y.3.total_cmp(&x.3));
            out.extend(group.into_iter().take(k));
        }
        out
    }
}

fn bounding_radius(mesh: &Mesh) -> f64 {
    mesh.vertices().iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// The dome radius must exceed the mesh's bounding radius about the origin.
pub fn sweep_light(
    mesh: &Mesh,
    scene: &Scene,
    normalization: &NormalizationSpec,
    model: &dyn ResponseModel,
    spec: &DomeSpec,
) -> Result<DomeGrid> {
    spec.validate()?;
    let r_mesh = bounding_radius(mesh);
    if !(spec.radius > r_mesh) {
        return Err(Error::InvalidParameter(format!(
            "dome radius {} does not exceed the mesh radius {r_mesh}",
            spec.radius
        )));
    }
    let cells: Vec<(f64, f64)> = spec
        .elevations
        .iter()
        .flat_map(|&el| spec.azimuths.iter().map(move |&az| (az, el)))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(az, el)| {
            let mut s = scene.clone();
            s.light_position = dome_position(spec.radius, az, el);
            Ok(evaluate_mesh(mesh, &s, normalization, model)?.response)
        })
        .collect::<Result<_>>()?;
    let labels = tertile_labels(&values);
    let n = spec.azimuths.len();
    Ok(DomeGrid {
        azimuths: spec.azimuths.clone(),
        elevations: spec.elevations.clone(),
        radius: spec.radius,
        responses: values.chunks(n).map(|r| r.to_vec()).collect(),
        tertiles: labels.chunks(n).map(|r| r.to_vec()).collect(),
    })
}

/// Writes `dir/<tertile>/<az>_<el>.pgm` renders for `k` exemplars per tertile.
pub fn write_dome_exemplars(mesh: &Mesh, scene: &Scene, grid: &DomeGrid, k: usize, dir: &Path) -> Result<()> {
    for (t, az, el, _) in grid.exemplars(k) {
        let sub = dir.join(t.as_str());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut s = scene.clone();
        s.light_position = dome_position(grid.radius, az, el);
        let img = render(mesh, &s)?;
        write_image(&img, sub.join(format!("{az}_{el}.pgm")), ImageFormat::Pgm, Window::Fixed)?;
    }
    Ok(())
}

/// A grid that can be written as a heatmap CSV.
pub enum Heatmap<'a> {
    Pose(&'a PoseGrid),
    Dome(&'a DomeGrid),
}

impl<'a> From<&'a PoseGrid> for Heatmap<'a> {
    fn from(g: &'a PoseGrid) -> Self {
        Heatmap::Pose(g)
    }
}

impl<'a> From<&'a DomeGrid> for Heatmap<'a> {
    fn from(g: &'a DomeGrid) -> Self {
        Heatmap::Dome(g)
    }
}

fn table<T>(azimuths: &[f64], elevations: &[f64], rows: &[Vec<T>], cell: impl Fn(&T) -> String) -> String {
    let mut s = String::from("elevation\\azimuth");
    for a in azimuths {
        let _ = write!(s, ",{a}");
    }
    s.push('\n');
    for (el, row) in elevations.iter().zip(rows) {
        let _ = write!(s, "{el}");
        for v in row {
            s.push(',');
            s.push_str(&cell(v));
        }
        s.push('\n');
    }
    s
}

impl Heatmap<'_> {
    /// Response table: a header row of azimuths, a header column of
    /// elevations, cells with nine decimals, `NA` for invalid cells.
    pub fn to_csv(&self) -> String {
        match self {
            Heatmap::Pose(g) => table(&g.azimuths, &g.elevations, &g.responses, |v| match v {
                Some(x) => format!("{x:.9}"),
                None => "NA".into(),
            }),
            Heatmap::Dome(g) => table(&g.azimuths, &g.elevations, &g.responses, |x| format!("{x:.9}")),
        }
    }
}

/// Writes the response table to `path`. For a dome grid the tertile labels
/// go to a sibling `<stem>_tertiles.csv` with the same layout.
pub fn export_heatmap<'a>(grid: impl Into<Heatmap<'a>>, path: &Path) -> Result<()> {
    let grid = grid.into();
    fs::write(path, grid.to_csv()).map_err(|e| Error::io(path, e))?;
    if let Heatmap::Dome(g) = grid {
        let labels = table(&g.azimuths, &g.elevations, &g.tertiles, |t| t.as_str().to_string());
        let p = tertiles_path(path);
        fs::write(&p, labels).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub fn tertiles_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dome");
    path.with_file_name(format!("{stem}_tertiles.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids() {
        let p = PoseGridSpec::default();
        assert_eq!(p.azimuths.len(), 13);
        assert_eq!(p.azimuths[0], -90.0);
        assert_eq!(p.azimuths[12], 90.0);
        let d = DomeSpec::default();
        assert_eq!(d.azimuths.len(), 24);
        assert_eq!(*d.azimuths.last().unwrap(), 345.0);
        assert_eq!(d.elevations, vec![0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0]);
    }

    #[test]
    fn rotation_convention() {
        // Elevation first about x: y -> z. Then azimuth about z.
        let r = pose_rotation(90.0, 90.0);
        let v = r * Vec3::y();
        assert!((v - Vec3::z()).norm() < 1e-12);
        let v = r * Vec3::x();
        assert!((v - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn tertile_sizes() {
        for n in 1..20 {
            let vals: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64).collect();
            let labels = tertile_labels(&vals);
            for t in [Tertile::High, Tertile::Mid, Tertile::Low] {
                let c = labels.iter().filter(|&&l| l == t).count();
                assert!((c as f64 - n as f64 / 3.0).abs() <= 1.0, "{n} {t:?} {c}");
            }
        }
        let labels = tertile_labels(&[0.1, 0.9, 0.5]);
        assert_eq!(labels, vec![Tertile::Low, Tertile::High, Tertile::Mid]);
    }

    #[test]
    fn dome_positions_on_sphere() {
        let d = DomeSpec::default();
        for &az in &d.azimuths {
            for &el in &d.elevations {
                let p = dome_position(d.radius, az, el);
                assert!((p.norm() - d.radius).abs() < 1e-9);
                assert!(p.z >= 0.0);
            }
        }
    }

    #[test]
    fn pose_csv_layout() {
        let g = PoseGrid {
            azimuths: vec![-15.0, 0.0, 15.0],
            elevations: vec![-15.0, 0.0, 15.0],
            responses: vec![
                vec![Some(0.1), None, Some(0.3)],
                vec![Some(0.5), Some(1.0), Some(0.25)],
                vec![None, None, Some(0.0)],
            ],
        };
        let csv = Heatmap::from(&g).to_csv();
        assert_eq!(
            csv,
            "elevation\\azimuth,-15,0,15\n\
             -15,0.100000000,NA,0.300000000\n\
             0,0.500000000,1.000000000,0.250000000\n\
             15,NA,NA,0.000000000\n"
        );
    }
}
