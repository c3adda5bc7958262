use std::path::Path;
use std::process::{Command, Output};

fn lifb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lifb")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 10] = [
    "--data", "gaussians", "--arch", "mlp:8", "--timesteps", "2", "--set", "synth_train=64", "--set", "synth_val=32",
];

fn train_small(out: &Path, epochs: &str) -> Output {
    let out = out.display().to_string();
    let mut args = vec!["train", "--epochs", epochs, "--out", &out];
    args.extend(SMALL);
    lifb(&args)
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(lifb(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lifb(&["train", "--epochs", "many"]).status.code(), Some(1));
    let help = lifb(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    for cmd in ["train", "eval", "ablate", "capacity", "simulate", "decouple", "verify", "raster"] {
        assert!(stdout(&help).contains(cmd), "help lists {cmd}");
    }
}

#[test]
fn bad_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "epochs = 1\nlearning_rate = 0.1\n").unwrap();
    let o = lifb(&["train", "--config", &cfg.display().to_string()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));

    let o = lifb(&["train", "--set", "tau=0.5", "--data", "gaussians", "--arch", "mlp"]);
    assert_eq!(o.status.code(), Some(2));
    let o = lifb(&["train", "--set", "no-equals-sign"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_decouple_verify_raster() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = train_small(&run, "2");
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["final.ckpt", "best.ckpt", "metrics.csv", "config.resolved"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ckpt = run.join("final.ckpt").display().to_string();

    let o = lifb(&["eval", "--checkpoint", &ckpt]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("val: accuracy"), "{}", stdout(&o));

    let dec = dir.path().join("dec.ckpt").display().to_string();
    assert!(lifb(&["decouple", "--checkpoint", &ckpt, "--out", &dec]).status.success());
    let o = lifb(&["verify", "--checkpoint", &ckpt, "--decoupled", &dec, "--inputs", "16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().last().unwrap() == "PASS", "{}", stdout(&o));

    let r = dir.path().join("raster").display().to_string();
    let o = lifb(&["raster", "--checkpoint", &ckpt, "--layers", "0", "--neurons", "5", "--out", &r]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(Path::new(&r).join("raster.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("layer,kind,neuron,channel,kappa,s0_t0,s0_t1"));
    let o = lifb(&["raster", "--checkpoint", &ckpt, "--layers", "9", "--out", &r]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_fails_against_a_different_network() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train_small(&dir.path().join("a"), "1").status.success());
    let other = dir.path().join("b");
    let mut args = vec!["train", "--epochs", "1", "--seed", "9", "--out"];
    let other_s = other.display().to_string();
    args.push(&other_s);
    args.extend(SMALL);
    assert!(lifb(&args).status.success());
    let a = dir.path().join("a/final.ckpt").display().to_string();
    let b = other.join("final.ckpt").display().to_string();
    let o = lifb(&["verify", "--checkpoint", &a, "--decoupled", &b, "--t-list", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL"), "{}", stdout(&o));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    assert!(train_small(&full, "3").status.success());
    let part = dir.path().join("part");
    assert!(train_small(&part, "1").status.success());
    let resumed = dir.path().join("resumed").display().to_string();
    let ckpt = part.join("final.ckpt").display().to_string();
    let o = lifb(&["train", "--resume", &ckpt, "--epochs", "3", "--out", &resumed]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read(full.join("metrics.csv")).unwrap();
    let b = std::fs::read(Path::new(&resumed).join("metrics.csv")).unwrap();
    assert_eq!(a, b);

    let o = lifb(&["train", "--resume", &ckpt, "--lr", "0.5", "--out", &resumed]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn capacity_and_simulate_outputs() {
    let o = lifb(&["capacity", "--tmax", "2", "--n", "2,3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().any(|l| l.starts_with("2,2,") && l.contains(",14,")), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = lifb(&["simulate", "--steps", "2000", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("trace.csv").exists() && dir.path().join("trace.svg").exists());
    assert_eq!(lifb(&["simulate", "--current", "-1e4"]).status.code(), Some(2));
}
