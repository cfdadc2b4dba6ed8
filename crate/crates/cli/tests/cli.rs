use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 4

[scene]
resolution = [32, 32]

[mesh]
kind = "sphere"
subdivisions = 1
radius = 1.0

[model]
kind = "simple"

[optimizer]
max_steps = 8
init_offset_std = 0.01

[regularizers]
laplacian = 0.1
"#;

fn mei3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mei3d"))
        .args(args)
        .env_remove("MEI3D_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn examples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples")
}

fn manifest_response(dir: &Path) -> f64 {
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["final_response"].as_f64().unwrap()
}

fn printed(out: &Output, key: &str) -> f64 {
    stdout(out)
        .lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().parse().unwrap()))
        .unwrap()
}

#[test]
fn negative_weight_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "neg.cfg", &TINY.replace("laplacian = 0.1", "laplacian = -0.5"));
    let out = mei3d(&["synthesize", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("laplacian"), "{}", stderr(&out));
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "typo.cfg", &TINY.replace("max_steps = 8", "max_step = 8"));
    let out = mei3d(&["synthesize", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("max_step"), "{}", stderr(&out));
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let out = mei3d(&["render", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_fit_target_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[mesh]\nkind = \"sphere\"\nsubdivisions = 1\nradius = 1.0\n\n[fit.target]\nkind = \"obj\"\npath = \"absent.obj\"\n";
    let cfg = write_config(dir.path(), "fit.cfg", text);
    let out = mei3d(&["fit-mesh", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("absent.obj"));
}

#[test]
fn obj_paths_resolve_against_the_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("cfgs");
    fs::create_dir_all(sub.join("meshes")).unwrap();
    fs::write(
        sub.join("meshes/tri.obj"),
        "v -1 -1 0\nv 1 -1 0\nv 0 1 0\nf 1 2 3\n",
    )
    .unwrap();
    let cfg = write_config(&sub, "tri.cfg", "[scene]\nresolution = [16, 16]\n\n[mesh]\nkind = \"obj\"\npath = \"meshes/tri.obj\"\n");
    let out = mei3d(&["render", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("o/render.pgm").is_file());
}

#[test]
fn sweep_flags_are_exclusive_and_required() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.cfg", TINY);
    assert_eq!(code(&mei3d(&["sweep", "--config", s(&cfg), "--pose", "--light"])), 2);
    assert_eq!(code(&mei3d(&["sweep", "--config", s(&cfg)])), 2);
}

#[test]
fn nonexistent_field_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.cfg", TINY);
    let out = mei3d(&["render", "--config", s(&cfg), "--field", "/nonexistent/field.json", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn runtime_abort_exits_one_and_keeps_last_good() {
    let dir = tempfile::tempdir().unwrap();
    // The camera sits inside the sphere, so the very first render fails.
    let text = TINY.replace("resolution = [32, 32]", "resolution = [32, 32]\ncamera_height = 0.5");
    let cfg = write_config(dir.path(), "t.cfg", &text);
    let out_dir = dir.path().join("o");
    let out = mei3d(&["synthesize", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("aborted at step 0"), "{}", stderr(&out));
    assert!(out_dir.join("snapshots/last_good.json").is_file());
}

#[test]
fn fresh_sphere_render_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = examples().join("render_sphere.cfg");
    let out = mei3d(&["render", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/sphere_default.pgm");
    assert!(fs::read(dir.path().join("render.pgm")).unwrap() == fs::read(golden).unwrap());
}

#[test]
fn saved_run_reloads_to_the_same_response() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.cfg", TINY);
    let run = dir.path().join("run");
    let out = mei3d(&["synthesize", "--config", s(&cfg), "--out", s(&run), "--threads", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["field.json", "mesh.obj", "image.pgm", "image.png", "render.pgm", "trace.csv", "manifest.json", "config.resolved.toml"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let expected = manifest_response(&run);
    assert_eq!(printed(&out, "response"), expected);
    let field = run.join("field.json");

    let r = mei3d(&["render", "--config", s(&cfg), "--field", s(&field), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!((printed(&r, "response") - expected).abs() <= 1e-12);

    let sw = mei3d(&["sweep", "--config", s(&cfg), "--pose", "--field", s(&field), "--out", s(&dir.path().join("p"))]);
    assert_eq!(code(&sw), 0, "{}", stderr(&sw));
    assert_eq!(printed(&sw, "identity").to_bits(), expected.to_bits());
    let csv = fs::read_to_string(dir.path().join("p/pose.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "0").unwrap();
    let row = csv.lines().find(|l| l.starts_with("0,")).unwrap();
    assert_eq!(row.split(',').nth(col).unwrap(), format!("{expected:.9}"));

    let resolved = run.join("config.resolved.toml");
    let again = mei3d(&["synthesize", "--config", s(&resolved), "--out", s(&dir.path().join("again")), "--threads", "1"]);
    assert_eq!(code(&again), 0, "{}", stderr(&again));
    assert_eq!(fs::read(run.join("trace.csv")).unwrap(), fs::read(dir.path().join("again/trace.csv")).unwrap());
}

#[test]
fn field_from_another_mesh_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.cfg", TINY);
    let run = dir.path().join("run");
    assert_eq!(code(&mei3d(&["synthesize", "--config", s(&cfg), "--out", s(&run)])), 0);
    let other = write_config(dir.path(), "other.cfg", &TINY.replace("subdivisions = 1", "subdivisions = 2"));
    let out = mei3d(&["sweep", "--config", s(&other), "--pose", "--field", s(&run.join("field.json")), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("vertices"), "{}", stderr(&out));
}

#[test]
fn reruns_with_one_thread_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.cfg", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&mei3d(&["synthesize", "--config", s(&cfg), "--out", s(&a), "--threads", "1"])), 0);
    assert_eq!(code(&mei3d(&["synthesize", "--config", s(&cfg), "--out", s(&b), "--deterministic"])), 0);
    for f in ["trace.csv", "image.pgm", "render.pgm", "field.json"] {
        assert!(fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.cfg", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&mei3d(&["synthesize", "--config", s(&cfg), "--out", s(&a), "--seed", "9"])), 0);
    assert_eq!(code(&mei3d(&["synthesize", "--config", s(&cfg), "--out", s(&b)])), 0);
    assert!(fs::read(a.join("trace.csv")).unwrap() != fs::read(b.join("trace.csv")).unwrap());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["seed"], 9);
}

#[test]
fn ambient_only_light_sweep_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("resolution = [32, 32]", "resolution = [32, 32]\nlight_intensity = 0.0")
        + "\n[dome]\nazimuths = [0.0, 120.0, 240.0]\nelevations = [0.0, 45.0, 90.0]\nexemplars = 1\n";
    let cfg = write_config(dir.path(), "amb.cfg", &text);
    let out = mei3d(&["sweep", "--config", s(&cfg), "--light", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("dome.csv")).unwrap();
    let cells: Vec<&str> = csv.lines().skip(1).flat_map(|l| l.split(',').skip(1)).collect();
    assert_eq!(cells.len(), 9);
    assert!(cells.iter().all(|c| *c == cells[0]), "{csv}");
    assert!(dir.path().join("dome_tertiles.csv").is_file());
    for t in ["high", "mid", "low"] {
        assert!(dir.path().join("dome").join(t).is_dir());
    }
}

#[test]
fn output_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "envrun.cfg", TINY);
    let root = dir.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_mei3d"))
        .args(["render", "--config", s(&cfg)])
        .env("MEI3D_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(root.join("envrun/render.pgm").is_file());
}

#[test]
fn config_output_dir_is_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.cfg", &format!("output_dir = \"results\"\n{TINY}"));
    let out = mei3d(&["render", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("results/render.pgm").is_file());
}

#[test]
fn fit_mesh_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = "seed = 1\n[mesh]\nkind = \"sphere\"\nsubdivisions = 2\nradius = 1.0\n\n[fit]\nmax_steps = 30\nsamples = 800\neval_samples = 800\n\n[fit.target]\nkind = \"ellipsoid\"\nsubdivisions = 2\naxes = [1.0, 1.0, 1.4]\n";
    let cfg = write_config(dir.path(), "f.cfg", text);
    let out = mei3d(&["fit-mesh", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let trace = fs::read_to_string(dir.path().join("chamfer_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 31);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(m["final_chamfer"].as_f64().unwrap() < m["initial_chamfer"].as_f64().unwrap());
    assert!(dir.path().join("mesh.obj").is_file());
}

#[test]
fn bundled_configs_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(examples()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("cfg") {
            continue;
        }
        let out = mei3d(&["render", "--config", s(&path), "--out", s(dir.path())]);
        assert_eq!(code(&out), 0, "{}: {}", path.display(), stderr(&out));
    }
}
