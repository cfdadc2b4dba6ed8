use std::fs;
use std::path::{Path, PathBuf};

use mei3d::deformation::{deform, RbfField};
use mei3d::mesh::{save_obj, Mesh};
use mei3d::optim::{evaluate_mesh, fit_mesh_chamfer, synthesize_mei, write_trace_csv};
use mei3d::render::{render as render_mesh, write_image, ImageFormat, Window};
use mei3d::sweeps::{export_heatmap, sweep_light, sweep_pose, write_dome_exemplars};
use serde_json::json;

use crate::config::RunConfig;
use crate::{CliError, Common};

pub const OUTPUT_ROOT_ENV: &str = "MEI3D_OUTPUT_ROOT";

fn core_error(e: mei3d::Error) -> CliError {
    match e {
        mei3d::Error::InvalidParameter(_) | mei3d::Error::DimensionMismatch(_) => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

struct Run {
    config: RunConfig,
    config_path: PathBuf,
    out: PathBuf,
    threads: usize,
}

impl Run {
    fn prepare(common: &Common) -> Result<Self, CliError> {
        let mut config = RunConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        if common.threads == Some(0) {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        let threads = if common.deterministic || config.deterministic {
            1
        } else {
            common
                .threads
                .or(config.threads)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        };
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();

        let stem = common
            .config
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        let out = match (&common.out, &config.output_dir, std::env::var_os(OUTPUT_ROOT_ENV)) {
            (Some(out), _, _) => out.clone(),
            (None, Some(dir), _) => dir.clone(),
            (None, None, Some(root)) => PathBuf::from(root).join(&stem),
            (None, None, None) => PathBuf::from("mei3d-out").join(&stem),
        };
        fs::create_dir_all(&out).map_err(io_error(&out))?;
        Ok(Self {
            config,
            config_path: common.config.clone(),
            out,
            threads,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_manifest(&self, command: &str, extra: serde_json::Value) -> Result<(), CliError> {
        let mut manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_path": self.config_path,
            "seed": self.config.seed,
            "threads": self.threads,
            "config": &self.config,
        });
        if let (Some(m), serde_json::Value::Object(extra)) = (manifest.as_object_mut(), extra) {
            m.extend(extra);
        }
        let path = self.path("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(io_error(&path))?;
        let resolved = toml::to_string(&self.config).map_err(|e| CliError::Runtime(e.to_string()))?;
        let path = self.path("config.resolved.toml");
        fs::write(&path, resolved).map_err(io_error(&path))
    }

    /// Base mesh, deformed by `field` when given.
    fn stimulus(&self, field: Option<&Path>) -> Result<Mesh, CliError> {
        let base = self.config.mesh.build()?;
        let Some(path) = field else {
            return Ok(base);
        };
        if !path.is_file() {
            return Err(CliError::Usage(format!("field file {} does not exist", path.display())));
        }
        let field = RbfField::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if field.num_kernels() != base.num_vertices() {
            return Err(CliError::Usage(format!(
                "field {} has {} kernels but the mesh has {} vertices",
                path.display(),
                field.num_kernels(),
                base.num_vertices()
            )));
        }
        deform(&base, &field).map_err(core_error)
    }
}

pub fn synthesize(common: &Common) -> Result<(), CliError> {
    let run = Run::prepare(common)?;
    let cfg = &run.config;
    let base = cfg.mesh.build()?;
    let model = cfg.build_model()?;
    let snapshots = run.path("snapshots");
    let result = synthesize_mei(&base, &cfg.scene, model.as_ref(), &cfg.optimization(), Some(&snapshots));
    let syn = match result {
        Ok(s) => s,
        Err(e @ mei3d::Error::Aborted { .. }) => {
            return Err(CliError::Runtime(format!(
                "{e}; last good field and partial trace are in {}",
                snapshots.display()
            )))
        }
        Err(e) => return Err(core_error(e)),
    };
    syn.field.save(run.path("field.json")).map_err(core_error)?;
    save_obj(&syn.mesh, run.path("mesh.obj")).map_err(core_error)?;
    write_trace_csv(&run.path("trace.csv"), &syn.trace).map_err(core_error)?;
    write_image(&syn.image, run.path("image.pgm"), ImageFormat::Pgm, Window::MinMax).map_err(core_error)?;
    write_image(&syn.image, run.path("image.png"), ImageFormat::Png, Window::MinMax).map_err(core_error)?;
    write_image(&syn.render, run.path("render.pgm"), ImageFormat::Pgm, Window::Fixed).map_err(core_error)?;
    run.write_manifest(
        "synthesize",
        json!({
            "model": model.describe(),
            "final_response": syn.response,
            "steps": syn.steps,
            "stop_reason": syn.stop_reason,
        }),
    )?;
    println!("response {:?}", syn.response);
    println!("steps {} ({:?})", syn.steps, syn.stop_reason);
    println!("output {}", run.out.display());
    Ok(())
}

pub fn fit_mesh(common: &Common) -> Result<(), CliError> {
    let run = Run::prepare(common)?;
    let cfg = &run.config;
    let Some(fit_cfg) = cfg.fit_config() else {
        return Err(CliError::Usage("config has no [fit] section".into()));
    };
    let source = cfg.mesh.build()?;
    let target = cfg.fit.as_ref().map(|f| f.target.build()).transpose()?.expect("checked above");
    let fit = fit_mesh_chamfer(&source, &target, &fit_cfg).map_err(core_error)?;
    fit.field.save(run.path("field.json")).map_err(core_error)?;
    save_obj(&fit.mesh, run.path("mesh.obj")).map_err(core_error)?;
    let trace_path = run.path("chamfer_trace.csv");
    fs::write(&trace_path, fit.trace_csv()).map_err(io_error(&trace_path))?;
    let ratio = fit.final_chamfer / fit.initial_chamfer;
    run.write_manifest(
        "fit-mesh",
        json!({
            "initial_chamfer": fit.initial_chamfer,
            "final_chamfer": fit.final_chamfer,
            "ratio": ratio,
            "steps": fit.trace.len(),
        }),
    )?;
    println!("chamfer {:?} -> {:?} (ratio {ratio:.4})", fit.initial_chamfer, fit.final_chamfer);
    println!("output {}", run.out.display());
    Ok(())
}

pub fn sweep(common: &Common, pose: bool, field: Option<&Path>) -> Result<(), CliError> {
    let run = Run::prepare(common)?;
    let cfg = &run.config;
    let mesh = run.stimulus(field)?;
    let model = cfg.build_model()?;
    if pose {
        let grid = sweep_pose(&mesh, &cfg.scene, &cfg.normalization, model.as_ref(), &cfg.pose).map_err(core_error)?;
        let path = run.path("pose.csv");
        export_heatmap(&grid, &path).map_err(core_error)?;
        let identity = grid.get(0.0, 0.0);
        if let Some(r) = identity {
            println!("identity {r:?}");
        }
        run.write_manifest("sweep", json!({ "kind": "pose", "field": field, "model": model.describe(), "identity_response": identity }))?;
        println!("wrote {}", path.display());
    } else {
        let grid = sweep_light(&mesh, &cfg.scene, &cfg.normalization, model.as_ref(), &cfg.dome).map_err(core_error)?;
        let path = run.path("dome.csv");
        export_heatmap(&grid, &path).map_err(core_error)?;
        write_dome_exemplars(&mesh, &cfg.scene, &grid, cfg.dome.exemplars, &run.path("dome")).map_err(core_error)?;
        run.write_manifest("sweep", json!({ "kind": "light", "field": field, "model": model.describe() }))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn render(common: &Common, field: Option<&Path>) -> Result<(), CliError> {
    let run = Run::prepare(common)?;
    let cfg = &run.config;
    let mesh = run.stimulus(field)?;
    let path = run.path("render.pgm");
    match &cfg.model {
        Some(spec) => {
            let model = spec.build(&cfg.scene, &cfg.normalization)?;
            let ev = evaluate_mesh(&mesh, &cfg.scene, &cfg.normalization, model.as_ref()).map_err(core_error)?;
            write_image(&ev.render, &path, ImageFormat::Pgm, Window::Fixed).map_err(core_error)?;
            println!("response {:?}", ev.response);
            run.write_manifest("render", json!({ "field": field, "model": model.describe(), "response": ev.response }))?;
        }
        None => {
            let img = render_mesh(&mesh, &cfg.scene).map_err(core_error)?;
            write_image(&img, &path, ImageFormat::Pgm, Window::Fixed).map_err(core_error)?;
            run.write_manifest("render", json!({ "field": field }))?;
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}
