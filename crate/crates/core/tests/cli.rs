use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcs::cli::checkpoint;

fn dcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcs")).args(args).env_remove("DCS_SEED").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A synthetic sparse dataset written by the binary itself.
fn sparse_files(dir: &Path) -> PathBuf {
    let data = dir.join("sparse.idx");
    ok(&dcs(&["synth", "sparse", "--n", "300", "--dim", "12", "--k", "2", "--seed", "4", "--out", s(&data)]));
    data
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let text = format!(
        "family = dcs\nmeasurement = learned_linear\nmeasurement_dim = 4\nsignal_dim = 12\nlatent_dim = 6\n\
         gen_hidden = 16\ngen_depth = 1\noutput_activation = identity\nbatch_size = 8\nlr = 0.001\n\
         data = idx\ndata_images = sparse.idx\nprobe_size = 20\nmetrics_interval = 10\n{extra}"
    );
    fs::write(&path, text).unwrap();
    path
}

fn metric_values(path: &Path) -> Vec<String> {
    // Drop the timing column, which is the only non-deterministic one.
    fs::read_to_string(path).unwrap().lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn zero_steps_writes_initial_checkpoint_and_header_only() {
    let dir = tempfile::tempdir().unwrap();
    sparse_files(dir.path());
    let cfg = write_config(dir.path(), "zero.cfg", "total_steps = 0\n");
    let stdout = ok(&dcs(&["train", s(&cfg)]));
    assert!(stdout.contains("for 0 steps"), "{stdout}");
    let metrics = fs::read_to_string(dir.path().join("zero.metrics.csv")).unwrap();
    assert_eq!(metrics, "step,loss_G,loss_F,recon_error,alpha,z_move,wall_ms\n");
    let st = checkpoint::load(&dir.path().join("zero.ckpt")).unwrap();
    assert_eq!(st.step, 0);
    assert!((st.alpha() - 0.01).abs() < 1e-12);
}

#[test]
fn invalid_config_fails_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "family = csgan\nscheme = joint\n").unwrap();
    let out = dcs(&["train", s(&path)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("scheme"), "{err}");

    fs::write(&path, "latent_dims = 3\n").unwrap();
    let err = String::from_utf8_lossy(&dcs(&["train", s(&path)]).stderr).to_string();
    assert!(err.contains("line 1") && err.contains("latent_dims"), "{err}");
}

#[test]
fn train_reconstruct_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = sparse_files(dir.path());
    let cfg = write_config(dir.path(), "run.cfg", "total_steps = 40\n");
    ok(&dcs(&["train", s(&cfg)]));

    let metrics = fs::read_to_string(dir.path().join("run.metrics.csv")).unwrap();
    let steps: Vec<u64> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, vec![10, 20, 30, 40]);
    assert!(metrics.lines().skip(1).all(|l| !l.split(',').nth(3).unwrap().is_empty()));

    let ckpt = dir.path().join("run.ckpt");
    let a = ok(&dcs(&["reconstruct", s(&ckpt), s(&data)]));
    let b = ok(&dcs(&["reconstruct", s(&ckpt), s(&data)]));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 301);
    assert!(a.starts_with("index,sq_error,x0,"));

    let out_file = dir.path().join("recon0.csv");
    ok(&dcs(&["reconstruct", s(&ckpt), s(&data), "--steps", "0", "-o", s(&out_file)]));
    let zero = fs::read_to_string(&out_file).unwrap();
    assert_eq!(zero.lines().count(), 301);
    assert_ne!(zero, a);

    let eval = ok(&dcs(&["eval", s(&ckpt), s(&data)]));
    let field = |k: &str| eval.lines().find_map(|l| l.strip_prefix(&format!("{k}="))).unwrap().parse::<f64>().unwrap();
    assert_eq!(field("count"), 300.0);
    let mean_from_csv = a.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum::<f64>() / 300.0;
    assert!((field("mean") - mean_from_csv).abs() < 1e-9 * mean_from_csv.max(1.0));
    assert!(field("std") >= 0.0);

    let latents = dir.path().join("latents.csv");
    ok(&dcs(&["export-latents", s(&ckpt), s(&data), s(&latents)]));
    let text = fs::read_to_string(&latents).unwrap();
    assert_eq!(text.lines().count(), 301);
    assert_eq!(text.lines().next().unwrap(), "label,z0,z1,z2,z3,z4,z5");
    let z: Vec<f64> = text.lines().nth(1).unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!((z.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn seed_override_changes_reconstruction_latents() {
    let dir = tempfile::tempdir().unwrap();
    let data = sparse_files(dir.path());
    let cfg = write_config(dir.path(), "run.cfg", "total_steps = 10\n");
    ok(&dcs(&["train", s(&cfg)]));
    let ckpt = dir.path().join("run.ckpt");
    let plain = ok(&dcs(&["reconstruct", s(&ckpt), s(&data)]));
    let run = |seed: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_dcs")).args(["reconstruct", s(&ckpt), s(&data)]).env("DCS_SEED", seed).output().unwrap();
        ok(&out)
    };
    assert_eq!(run("0"), plain);
    assert_ne!(run("9"), plain);
    let bad = Command::new(env!("CARGO_BIN_EXE_dcs")).args(["reconstruct", s(&ckpt), s(&data)]).env("DCS_SEED", "x").output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn resume_continues_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    sparse_files(dir.path());
    let whole = write_config(dir.path(), "whole.cfg", "total_steps = 40\n");
    ok(&dcs(&["train", s(&whole)]));

    let part = write_config(dir.path(), "part.cfg", "total_steps = 20\n");
    ok(&dcs(&["train", s(&part)]));
    let extended = write_config(dir.path(), "part.cfg", "total_steps = 40\n");
    ok(&dcs(&["train", s(&extended), "--resume", s(&dir.path().join("part.ckpt"))]));

    assert_eq!(metric_values(&dir.path().join("part.metrics.csv")), metric_values(&dir.path().join("whole.metrics.csv")));
    let a = checkpoint::load(&dir.path().join("part.ckpt")).unwrap();
    let b = checkpoint::load(&dir.path().join("whole.ckpt")).unwrap();
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.phi, b.phi);

    let changed = write_config(dir.path(), "part.cfg", "total_steps = 60\nlatent_dim = 7\n");
    let out = dcs(&["train", s(&changed), "--resume", s(&dir.path().join("part.ckpt"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("latent_dim"));
}

#[test]
fn perfect_generator_reconstructs_exactly() {
    // Data drawn from the untrained generator itself: with T=0 and the same
    // starting latents the reconstruction is exact.
    use dcs::data::{save_idx, Dataset};
    use dcs::nets::generate;
    use dcs::tensor::Tensor;

    let dir = tempfile::tempdir().unwrap();
    sparse_files(dir.path());
    let cfg = write_config(dir.path(), "toy.cfg", "total_steps = 0\n");
    ok(&dcs(&["train", s(&cfg)]));
    let ckpt = dir.path().join("toy.ckpt");
    let st = checkpoint::load(&ckpt).unwrap();

    let export = dir.path().join("z.csv");
    ok(&dcs(&["export-latents", s(&ckpt), s(&dir.path().join("sparse.idx")), s(&export), "--steps", "0"]));
    let rows: Vec<Vec<f64>> = fs::read_to_string(&export)
        .unwrap()
        .lines()
        .skip(1)
        .take(50)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let z0 = dcs::tensor::Matrix::from_rows(&rows);
    let x = generate(&st.theta.constants(), &st.model.gen, &Tensor::constant(z0)).unwrap();
    let toy = dir.path().join("toy.idx");
    save_idx(&Dataset::new("toy", x.value().clone(), None).unwrap(), &toy, None).unwrap();

    let eval = ok(&dcs(&["eval", s(&ckpt), s(&toy), "--steps", "0"]));
    assert!(eval.contains("count=50\nmean=0\nstd=0\n"), "{eval}");
}

#[test]
fn missing_files_are_reported_with_paths() {
    let out = dcs(&["eval", "/nonexistent/run.ckpt", "/nonexistent/data.idx"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/run.ckpt"));
}

#[test]
fn synth_clusters_writes_labels() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = (dir.path().join("c.idx"), dir.path().join("c.labels"));
    ok(&dcs(&["synth", "clusters", "--n", "40", "--dim", "2", "--k", "4", "--out", s(&x), "--labels-out", s(&y)]));
    let ds = dcs::data::load_idx(&x, Some(&y)).unwrap();
    assert_eq!(ds.len(), 40);
    assert!(ds.labels.unwrap().iter().all(|&l| l < 4));
}
