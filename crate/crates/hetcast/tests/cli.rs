use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hetcast::checkpoint::Checkpoint;
use hetcast::log::parse_log;
use hetcast_core::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "--set", "window=12",
    "--set", "kernel_sizes=3,5",
    "--set", "channels_per_branch=2",
    "--set", "hidden_size=6",
    "--set", "epochs=3",
    "--set", "loss=l2",
];

fn hetcast(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetcast"))
        .env("HETCAST_WORKDIR", workdir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_var(path: &Path, len: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    let mut x = vec![0.0f64; n];
    let mut text = String::new();
    for _ in 0..len {
        let prev = x.clone();
        for i in 0..n {
            x[i] = 0.7 * prev[i] + 0.25 * prev[(i + 1) % n] + 0.3 * rng.random_range(-1.0..1.0);
        }
        let row: Vec<String> = x.iter().map(|v| format!("{:.6}", v + 5.0)).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn args<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(tail).copied().collect()
}

/// prepare + relations + train in a fresh workdir.
fn trained(seed: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("var.csv");
    write_var(&data, 300, 1);
    train_in(dir, data, seed)
}

fn train_in(dir: TempDir, data: PathBuf, seed: &str) -> (TempDir, PathBuf) {
    let d = data.to_str().unwrap();
    ok(hetcast(dir.path(), &args(&["prepare", "--data", d], SMALL)));
    ok(hetcast(dir.path(), &["relations"]));
    ok(hetcast(dir.path(), &["train", "--seed", seed, "--no-timing"]));
    (dir, data)
}

#[test]
fn pipeline_round_trip_reproduces_best_validation_metric() {
    let (dir, _) = trained("7");
    let w = dir.path();
    for f in ["config.txt", "manifest.txt", "relations/sim.csv", "relations/cas.csv", "relations/dyn_base.csv", "relations/summary.txt", "checkpoints/h3.ckpt", "logs/h3.log"] {
        assert!(w.join(f).exists(), "{f} missing");
    }
    let log = fs::read_to_string(w.join("logs/h3.log")).unwrap();
    let records = parse_log(&log).unwrap();
    assert_eq!(records.len(), 3);
    let ckpt = Checkpoint::load(&w.join("checkpoints/h3.ckpt")).unwrap();
    let best = records.iter().map(|r| r.val.rse).fold(f64::INFINITY, f64::min);
    assert_eq!(ckpt.summary.val.rse, best);

    let report = ok(hetcast(w, &["eval", "--split", "valid"]));
    let rse: f64 = report
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("rse="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((rse - best).abs() < 1e-9, "eval {rse} vs logged {best}");
    let results = fs::read_to_string(w.join("results.csv")).unwrap();
    assert!(results.starts_with("dataset,model,split,horizon,rse,rae,corr\nvar,h3,valid,3,"));

    let base = ok(hetcast(w, &["eval", "--persistence"]));
    assert!(base.contains("model=persistence split=test horizon=3"));
}

#[test]
fn missing_data_file_exits_with_input_error() {
    let dir = TempDir::new().unwrap();
    let out = hetcast(dir.path(), &["prepare", "--data", "/nonexistent/file.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn header_flag_drops_one_row() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("h.csv");
    write_var(&data, 300, 2);
    let body = fs::read_to_string(&data).unwrap();
    fs::write(&data, format!("a,b,c,d\n{body}")).unwrap();
    let d = data.to_str().unwrap();
    let out = hetcast(dir.path(), &args(&["prepare", "--data", d], SMALL));
    assert_eq!(out.status.code(), Some(2), "header row is not numeric");
    let text = ok(hetcast(dir.path(), &args(&["prepare", "--data", d, "--header"], SMALL)));
    assert!(text.contains("len=300"), "{text}");
}

#[test]
fn relations_are_deterministic_and_warn_when_empty() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("var.csv");
    write_var(&data, 300, 3);
    let w = dir.path();
    ok(hetcast(w, &args(&["prepare", "--data", data.to_str().unwrap()], SMALL)));
    ok(hetcast(w, &["relations"]));
    let first: Vec<Vec<u8>> = ["sim.csv", "cas.csv", "dyn_base.csv", "summary.txt"]
        .iter()
        .map(|f| fs::read(w.join("relations").join(f)).unwrap())
        .collect();
    let sim = fs::read_to_string(w.join("relations/sim.csv")).unwrap();
    assert_eq!(sim.lines().count(), 4);
    assert!(sim.lines().all(|l| l.split(',').count() == 4));
    ok(hetcast(w, &["relations"]));
    for (f, bytes) in ["sim.csv", "cas.csv", "dyn_base.csv", "summary.txt"].iter().zip(&first) {
        assert_eq!(&fs::read(w.join("relations").join(f)).unwrap(), bytes, "{f} changed");
    }
    let out = hetcast(w, &["relations", "--threshold", "1.0"]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning: relation cas has no edges"), "{stderr}");
}

#[test]
fn seeded_training_is_byte_identical() {
    // The manifest records the data path, so both runs share one file.
    let shared = TempDir::new().unwrap();
    let data = shared.path().join("var.csv");
    write_var(&data, 300, 1);
    let (a, _) = train_in(TempDir::new().unwrap(), data.clone(), "11");
    let (b, _) = train_in(TempDir::new().unwrap(), data, "11");
    for f in ["checkpoints/h3.ckpt", "logs/h3.log"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let (dir, _) = trained("1");
    let path = dir.path().join("checkpoints/h3.ckpt");
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    let out = hetcast(dir.path(), &["eval"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
}

#[test]
fn checkpoint_from_another_manifest_is_rejected() {
    let (dir, data) = trained("1");
    let w = dir.path();
    let d = data.to_str().unwrap();
    ok(hetcast(w, &args(&["prepare", "--data", d, "--set", "split_ratios=0.5,0.25,0.25"], SMALL)));
    let out = hetcast(w, &["eval"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));
}

#[test]
fn training_config_errors_exit_two() {
    let (dir, _) = trained("1");
    let out = hetcast(dir.path(), &["train", "--set", "hidden_size=0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hetcast(dir.path(), &["train", "--set", "window=20"]);
    assert_eq!(out.status.code(), Some(2), "window differs from manifest");
}

#[test]
fn diverging_training_exits_three() {
    let (dir, _) = trained("1");
    let out = hetcast(dir.path(), &["train", "--set", "lr=1e300", "--set", "clip_norm=0", "--epochs", "2"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

fn window_file(path: &Path, rows: usize, value: impl Fn(usize, usize) -> f64) {
    let mut text = String::new();
    for t in 0..rows {
        let row: Vec<String> = (0..4).map(|i| value(t, i).to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn forecast(stdout: &str) -> Vec<f64> {
    stdout.trim().split(',').map(|v| v.parse().unwrap()).collect()
}

#[test]
fn predict_scales_forecasts_into_original_units() {
    let (dir, _) = trained("5");
    let w = dir.path();
    let ckpt_path = w.join("checkpoints/h3.ckpt");
    let mut ckpt = Checkpoint::load(&ckpt_path).unwrap();
    let win = w.join("window.csv");
    window_file(&win, 12, |t, i| 4.0 + (t as f64 * 0.3 + i as f64).sin());

    let original = forecast(&ok(hetcast(w, &["predict", "--checkpoint", ckpt_path.to_str().unwrap(), "--window", win.to_str().unwrap()])));
    let n = ckpt.scales.len();
    let normalized_window: Vec<f64> = {
        let mut v = vec![0.0; n * 12];
        for t in 0..12 {
            for i in 0..n {
                v[i * 12 + t] = (4.0 + (t as f64 * 0.3 + i as f64).sin()) / ckpt.scales[i];
            }
        }
        v
    };

    // Unit scales: the forecast is the normalized-space output.
    let scales = ckpt.scales.clone();
    ckpt.scales = vec![1.0; n];
    let unit_path = w.join("unit.ckpt");
    ckpt.save(&unit_path).unwrap();
    let scaled_win = w.join("window_norm.csv");
    window_file(&scaled_win, 12, |t, i| normalized_window[i * 12 + t]);
    let unit = forecast(&ok(hetcast(w, &["predict", "--checkpoint", unit_path.to_str().unwrap(), "--window", scaled_win.to_str().unwrap()])));
    for i in 0..n {
        assert!((original[i] - unit[i] * scales[i]).abs() < 1e-9 * scales[i].abs().max(1.0));
    }

    // Scale 4 on variable 2 with the window scaled to match.
    let mut four = vec![1.0; n];
    four[2] = 4.0;
    ckpt.scales = four;
    let four_path = w.join("four.ckpt");
    ckpt.save(&four_path).unwrap();
    let four_win = w.join("window_four.csv");
    window_file(&four_win, 12, |t, i| normalized_window[i * 12 + t] * if i == 2 { 4.0 } else { 1.0 });
    let out4 = forecast(&ok(hetcast(w, &["predict", "--checkpoint", four_path.to_str().unwrap(), "--window", four_win.to_str().unwrap()])));
    for i in 0..n {
        let factor = if i == 2 { 4.0 } else { 1.0 };
        assert!((out4[i] - unit[i] * factor).abs() < 1e-12);
    }

    // Zero window with all biases zeroed forecasts zeros.
    let ids: Vec<_> = ckpt.params.ids().collect();
    for id in ids {
        if ckpt.params.get(id).name.ends_with("bias") {
            let shape = ckpt.params.value(id).shape().to_vec();
            *ckpt.params.value_mut(id) = Tensor::zeros(&shape);
        }
    }
    let zero_path = w.join("zero.ckpt");
    ckpt.save(&zero_path).unwrap();
    let zero_win = w.join("zeros.csv");
    window_file(&zero_win, 12, |_, _| 0.0);
    let zeros = forecast(&ok(hetcast(w, &["predict", "--checkpoint", zero_path.to_str().unwrap(), "--window", zero_win.to_str().unwrap()])));
    assert!(zeros.iter().all(|&v| v == 0.0), "{zeros:?}");

    let short = w.join("short.csv");
    window_file(&short, 11, |_, _| 1.0);
    let out = hetcast(w, &["predict", "--checkpoint", ckpt_path.to_str().unwrap(), "--window", short.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn hand_set_persistence_checkpoint_scores_zero_on_periodic_data() {
    // Period-3 positive data: the value 3 steps ahead equals the last value.
    let dir = TempDir::new().unwrap();
    let w = dir.path();
    let data = w.join("periodic.csv");
    let pattern = [[1.0, 2.0, 3.0, 4.0], [2.5, 1.5, 0.5, 3.5], [4.0, 3.0, 2.0, 1.0]];
    let text: String = (0..300)
        .map(|t| {
            let row: Vec<String> = pattern[t % 3].iter().map(f64::to_string).collect();
            row.join(",") + "\n"
        })
        .collect();
    fs::write(&data, text).unwrap();
    ok(hetcast(w, &args(&["prepare", "--data", data.to_str().unwrap()], SMALL)));
    ok(hetcast(w, &["relations"]));
    ok(hetcast(w, &["train", "--epochs", "1", "--no-timing"]));

    let path = w.join("checkpoints/h3.ckpt");
    let mut ckpt = Checkpoint::load(&path).unwrap();
    let p = &mut ckpt.params;
    let ids: Vec<_> = p.ids().collect();
    for id in ids {
        let shape = p.value(id).shape().to_vec();
        *p.value_mut(id) = Tensor::zeros(&shape);
    }
    // Branch 0 (kernel 3) channel 0 copies the newest value into the last
    // of its 10 positions.
    let k = p.find("temporal.branch0.kernel").unwrap();
    p.value_mut(k).data_mut()[2] = 1.0;
    let w0 = p.find("gnn.layer0.self").unwrap();
    p.value_mut(w0).data_mut()[9 * 6] = 1.0;
    let w1 = p.find("gnn.layer1.self").unwrap();
    p.value_mut(w1).data_mut()[0] = 1.0;
    let r = p.find("readout.weight").unwrap();
    p.value_mut(r).data_mut()[0] = 1.0;
    ckpt.save(&path).unwrap();

    let report = ok(hetcast(w, &["eval"]));
    let rse: f64 = report.split_whitespace().find_map(|kv| kv.strip_prefix("rse=")).unwrap().parse().unwrap();
    assert!(rse < 1e-12, "{report}");
}
