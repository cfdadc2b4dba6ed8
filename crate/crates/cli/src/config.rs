use std::path::{Path, PathBuf};
use std::time::Duration;

use mei3d::mesh::{bundled_bunny, load_obj, make_ellipsoid, make_sheet, make_sphere, make_torus, Mesh};
use mei3d::optim::{AdamConfig, FitConfig, OptimizationConfig};
use mei3d::regularizers::RegularizerWeights;
use mei3d::render::{NormalizationSpec, Scene};
use mei3d::response::{ComplexCell, ExternalModel, GaborFilter, MeanResponse, ResponseModel, SimpleCell};
use mei3d::sweeps::{DomeSpec, PoseGridSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a command needs, read from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub scene: Scene,
    pub normalization: NormalizationSpec,
    pub mesh: MeshSpec,
    pub model: Option<ModelSpec>,
    pub optimizer: OptimizerSection,
    pub regularizers: RegularizerWeights,
    pub fit: Option<FitSection>,
    pub pose: PoseGridSpec,
    pub dome: DomeSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            deterministic: false,
            threads: None,
            output_dir: None,
            scene: Scene::default(),
            normalization: NormalizationSpec::default(),
            mesh: MeshSpec::Sphere {
                subdivisions: 3,
                radius: 1.0,
            },
            model: None,
            optimizer: OptimizerSection::default(),
            regularizers: RegularizerWeights::uniform(0.1),
            fit: None,
            pose: PoseGridSpec::default(),
            dome: DomeSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSpec {
    Sheet {
        nx: usize,
        ny: usize,
        extent: f64,
    },
    Sphere {
        subdivisions: u32,
        radius: f64,
    },
    Ellipsoid {
        subdivisions: u32,
        axes: [f64; 3],
    },
    Torus {
        major_radius: f64,
        minor_radius: f64,
        n_major: usize,
        n_minor: usize,
    },
    Bunny,
    Obj {
        path: PathBuf,
    },
}

impl MeshSpec {
    pub fn build(&self) -> Result<Mesh, CliError> {
        let mesh = match self {
            MeshSpec::Sheet { nx, ny, extent } => make_sheet(*nx, *ny, *extent),
            MeshSpec::Sphere { subdivisions, radius } => make_sphere(*subdivisions, *radius),
            MeshSpec::Ellipsoid { subdivisions, axes } => make_ellipsoid(*subdivisions, *axes),
            MeshSpec::Torus {
                major_radius,
                minor_radius,
                n_major,
                n_minor,
            } => make_torus(*major_radius, *minor_radius, *n_major, *n_minor),
            MeshSpec::Bunny => Ok(bundled_bunny()),
            MeshSpec::Obj { path } => load_obj(path),
        };
        mesh.map_err(|e| CliError::Usage(format!("mesh: {e}")))
    }

    fn resolve(&mut self, dir: &Path) {
        if let MeshSpec::Obj { path } = self {
            *path = dir.join(&*path);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Simple {
        #[serde(default)]
        filter: GaborFilter,
    },
    Complex {
        #[serde(default)]
        filter: GaborFilter,
    },
    Mean,
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

fn default_timeout() -> f64 {
    30.0
}

impl ModelSpec {
    pub fn build(&self, scene: &Scene, norm: &NormalizationSpec) -> Result<Box<dyn ResponseModel>, CliError> {
        let (w, h) = (scene.width(), scene.height());
        let usage = |e: mei3d::Error| CliError::Usage(format!("model: {e}"));
        Ok(match self {
            ModelSpec::Simple { filter } => Box::new(SimpleCell::new(*filter, w, h, norm.target_norm).map_err(usage)?),
            ModelSpec::Complex { filter } => Box::new(ComplexCell::new(*filter, w, h, norm.target_norm).map_err(usage)?),
            ModelSpec::Mean => Box::new(MeanResponse),
            ModelSpec::External { command, timeout_secs } => {
                if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) {
                    return Err(CliError::Usage(format!("model.timeout_secs {timeout_secs} must be > 0")));
                }
                let model = ExternalModel::spawn(command, Duration::from_secs_f64(*timeout_secs))
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                Box::new(model)
            }
        })
    }

    fn resolve(&mut self, dir: &Path) {
        if let ModelSpec::External { command, .. } = self {
            if let Some(program) = command.first_mut() {
                if program.contains('/') && !Path::new(program.as_str()).is_absolute() {
                    *program = dir.join(&*program).to_string_lossy().into_owned();
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub kernel_sigma: Option<f64>,
    pub kernel_sigma_edges: f64,
    pub init_offset_std: f64,
    pub snapshot_interval: usize,
    pub convergence_window: usize,
    pub convergence_threshold: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizationConfig::default();
        Self {
            max_steps: d.max_steps,
            learning_rate: d.adam.learning_rate,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            epsilon: d.adam.epsilon,
            kernel_sigma: d.kernel_sigma,
            kernel_sigma_edges: d.kernel_sigma_edges,
            init_offset_std: d.init_offset_std,
            snapshot_interval: d.snapshot_interval,
            convergence_window: d.convergence_window,
            convergence_threshold: d.convergence_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub target: MeshSpec,
    #[serde(default = "default_fit_steps")]
    pub max_steps: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_samples")]
    pub eval_samples: usize,
    #[serde(default)]
    pub kernel_sigma: Option<f64>,
    #[serde(default = "default_sigma_edges")]
    pub kernel_sigma_edges: f64,
    #[serde(default = "default_fit_weights")]
    pub regularizers: RegularizerWeights,
}

fn default_fit_steps() -> usize {
    FitConfig::default().max_steps
}
fn default_lr() -> f64 {
    AdamConfig::default().learning_rate
}
fn default_samples() -> usize {
    FitConfig::default().samples
}
fn default_sigma_edges() -> f64 {
    FitConfig::default().kernel_sigma_edges
}
fn default_fit_weights() -> RegularizerWeights {
    FitConfig::default().weights
}

fn adam(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> AdamConfig {
    AdamConfig {
        learning_rate: lr,
        beta1,
        beta2,
        epsilon,
    }
}

fn field(name: &'static str) -> impl Fn(mei3d::Error) -> CliError {
    move |e| CliError::Usage(format!("{name}: {e}"))
}

impl RunConfig {
    /// Parses strictly and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let dir = std::path::absolute(dir).unwrap_or_else(|_| dir.to_path_buf());
        cfg.mesh.resolve(&dir);
        if let Some(m) = &mut cfg.model {
            m.resolve(&dir);
        }
        if let Some(f) = &mut cfg.fit {
            f.target.resolve(&dir);
        }
        if let Some(out) = &mut cfg.output_dir {
            *out = dir.join(&*out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scene.validate().map_err(field("scene"))?;
        self.normalization.validate().map_err(field("normalization"))?;
        self.regularizers.validate().map_err(field("regularizers"))?;
        self.optimization().validate().map_err(field("optimizer"))?;
        if let Some(fit) = &self.fit {
            fit.regularizers.validate().map_err(field("fit.regularizers"))?;
            self.fit_config().unwrap_or_default().validate().map_err(field("fit"))?;
        }
        self.pose.validate().map_err(field("pose"))?;
        self.dome.validate().map_err(field("dome"))?;
        if let Some(ModelSpec::Simple { filter } | ModelSpec::Complex { filter }) = &self.model {
            filter.validate().map_err(field("model.filter"))?;
        }
        if self.threads == Some(0) {
            return Err(CliError::Usage("threads must be >= 1".into()));
        }
        Ok(())
    }

    pub fn optimization(&self) -> OptimizationConfig {
        let o = &self.optimizer;
        OptimizationConfig {
            max_steps: o.max_steps,
            adam: adam(o.learning_rate, o.beta1, o.beta2, o.epsilon),
            weights: self.regularizers,
            seed: self.seed,
            kernel_sigma: o.kernel_sigma,
            kernel_sigma_edges: o.kernel_sigma_edges,
            init_offset_std: o.init_offset_std,
            snapshot_interval: o.snapshot_interval,
            convergence_window: o.convergence_window,
            convergence_threshold: o.convergence_threshold,
            normalization: self.normalization,
        }
    }

    pub fn fit_config(&self) -> Option<FitConfig> {
        let f = self.fit.as_ref()?;
        let o = &self.optimizer;
        Some(FitConfig {
            max_steps: f.max_steps,
            adam: adam(f.learning_rate, o.beta1, o.beta2, o.epsilon),
            weights: f.regularizers,
            seed: self.seed,
            kernel_sigma: f.kernel_sigma,
            kernel_sigma_edges: f.kernel_sigma_edges,
            samples: f.samples,
            eval_samples: f.eval_samples,
        })
    }

    pub fn build_model(&self) -> Result<Box<dyn ResponseModel>, CliError> {
        match &self.model {
            Some(m) => m.build(&self.scene, &self.normalization),
            None => Err(CliError::Usage("config has no [model] section".into())),
        }
    }
}
