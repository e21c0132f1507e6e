use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn voldiff(dir: &Path, args: &[&str], config: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_voldiff"));
    cmd.current_dir(dir).env_remove("DIFFDVR_THREADS").args(args);
    if let Some(c) = config {
        fs::write(dir.join("cfg.json"), c).unwrap();
        cmd.args(["--config", "cfg.json"]);
    }
    cmd.output().unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn phantom_writes_volume_and_embeds_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = voldiff(
        dir.path(),
        &["phantom", "--out", "run", "--seed", "9"],
        Some(r#"{"kind": "blobs", "dims": [8, 8, 8], "name": "b"}"#),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    let v = voldiff::io::load_volume(&run.join("b.raw")).unwrap();
    assert_eq!(v.dims, [8, 8, 8]);
    let r = report(&run);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["seed"], 9);
    assert_eq!(r["config"]["kind"], "blobs");
    assert!(run.join("preview.ppm").exists());
    assert!(run.join("config.json").exists());
}

#[test]
fn schema_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = voldiff(dir.path(), &["phantom", "--out", "run"], Some(r#"{"kind": "sphere", "colour": 1}"#));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    let o = voldiff(dir.path(), &["tf-recon", "--out", "run"], Some(r#"{"precision": "single"}"#));
    assert_eq!(o.status.code(), Some(2));
    let o = voldiff(dir.path(), &["phantom", "--out", "run"], Some(r#"{"dims": [2, 8, 8]}"#));
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_voldiff"))
        .current_dir(dir.path())
        .env("DIFFDVR_THREADS", "lots")
        .args(["demo-1d", "--out", "run"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = voldiff(dir.path(), &["no-such-command"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_sidecar_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("v.raw"), [0u8; 32]).unwrap();
    let o = voldiff(
        dir.path(),
        &["render", "--out", "run"],
        Some(r#"{"volume": {"source": "file", "path": "v.raw"}}"#),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sidecar"));
}

#[test]
fn render_in_both_precisions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"volume": {"source": "phantom", "kind": "sphere", "resolution": 8},
                  "camera": {"width": 8, "height": 8}, "precision": "PREC"}"#;
    let mut images = Vec::new();
    for prec in ["double", "single"] {
        let out = format!("run_{prec}");
        let o = voldiff(dir.path(), &["render", "--out", &out], Some(&cfg.replace("PREC", prec)));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let img = voldiff::io::load_rgba(&dir.path().join(&out).join("render.rgba"), 8, 8).unwrap();
        images.push(img);
    }
    let max_diff = images[0]
        .data
        .iter()
        .zip(&images[1].data)
        .flat_map(|(a, b)| (0..4).map(move |c| (a[c] - b[c]).abs()))
        .fold(0.0f64, f64::max);
    assert!(max_diff < 1e-4, "{max_diff}");
}

#[test]
fn gradcheck_table_is_within_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = voldiff(dir.path(), &["--threads", "1", "gradcheck", "--out", "run"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    let r = report(&run);
    assert!(r["metrics"]["max_rel_error"].as_f64().unwrap() < 1e-3);
    let table = fs::read_to_string(run.join("gradcheck.csv")).unwrap();
    assert!(table.starts_with("target,index,forward,adjoint,finite_difference,rel_error\n"));
    for target in ["camera", "stepsize", "tf", "volume"] {
        assert!(table.lines().any(|l| l.starts_with(target)), "{target}");
    }
}

#[test]
fn viewpoint_report_has_every_trajectory_and_traces_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"volume": {"source": "phantom", "kind": "asymmetric", "resolution": 12},
                  "viewpoint": {"iterations": 2, "step": 0.05, "camera": {"width": 12, "height": 12}}}"#;
    let a = voldiff(dir.path(), &["viewpoint", "--out", "a"], Some(cfg));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = voldiff(dir.path(), &["--threads", "2", "viewpoint", "--out", "b"], Some(cfg));
    assert!(b.status.success());
    let r = report(&dir.path().join("a"));
    assert_eq!(r["final_params"]["trajectories"].as_array().unwrap().len(), 8);
    assert_eq!(r["task"], "viewpoint");
    let ta = fs::read(dir.path().join("a/trace.csv")).unwrap();
    let tb = fs::read(dir.path().join("b/trace.csv")).unwrap();
    assert_eq!(ta, tb);
    for f in ["before.ppm", "after.ppm", "gradcheck.csv", "config.json"] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
}

#[test]
fn demo_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["x", "y"] {
        let o = voldiff(dir.path(), &["demo-1d", "--out", out], None);
        assert!(o.status.success());
    }
    let a = fs::read(dir.path().join("x/trace.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("y/trace.csv")).unwrap());
    assert!(fs::read_to_string(dir.path().join("x/demo.csv")).unwrap().starts_with("d1,loss,gradient"));
}

#[test]
fn small_reconstructions_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let tf = r#"{"volume": {"source": "phantom", "kind": "shells", "resolution": 8}, "views": 2,
                 "camera": {"width": 8, "height": 8},
                 "tf_recon": {"resolution": 4, "epochs": 2, "step": 0.1}}"#;
    let o = voldiff(dir.path(), &["tf-recon", "--out", "tf"], Some(tf));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&dir.path().join("tf"))["trace"].as_array().unwrap().len(), 2);

    let dens = r#"{"volume": {"source": "phantom", "kind": "sphere", "resolution": 8}, "views": 2,
                   "camera": {"width": 8, "height": 8},
                   "absorption": {"multires": {"start_res": 4, "final_res": 8, "iters_per_level": 1, "final_iters": 2}}}"#;
    let o = voldiff(dir.path(), &["density-recon", "--out", "d"], Some(dens));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("d/reconstruction.raw").exists());
    assert!(dir.path().join("d/reconstruction.json").exists());

    let color = r#"{"volume": {"source": "phantom", "kind": "shells", "resolution": 8}, "views": 2,
                    "camera": {"width": 8, "height": 8},
                    "color": {"multires": {"start_res": 4, "final_res": 8, "iters_per_level": 1, "final_iters": 1}}}"#;
    let o = voldiff(dir.path(), &["color-recon", "--out", "c"], Some(color));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    // only the config file and the three output directories exist
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["c", "cfg.json", "d", "tf"]);
}
