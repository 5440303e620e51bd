//! End-to-end checks of the `splitveil` binary: each test runs the real
//! executable and asserts on its printed `key = value` lines.

use splitveil::data::model_file::read_model_file;
use splitveil::data::{
    filter_binary, load_mnist_train, split, write_idx_images, write_idx_labels,
    MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS,
};
use splitveil::labeling::{encode_signal, recover_output, SignalMode};
use splitveil::pipeline::{parse_config, PipelineConfig};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splitveil"))
}

/// Reaps a spawned server even when an assertion panics mid-test; a
/// leaked child would otherwise hold the harness's output pipe open.
struct ServeGuard(Child);

impl Drop for ServeGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn stdout_of(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).expect("stdout should be UTF-8")
}

/// Pulls the value of a `key = value` line out of captured stdout.
fn value_of<'a>(stdout: &'a str, key: &str) -> &'a str {
    let prefix = format!("{key} = ");
    stdout
        .lines()
        .find_map(|line| line.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no `{key} = ...` line in:\n{stdout}"))
}

/// Writes a linearly separable two-class image set in the MNIST layout:
/// class 0 lights the left half of an 8×8 frame, class 1 the right half.
fn write_toy_data(dir: &Path, n: usize) {
    let side = 8usize;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 2) as u8;
        let mut pixels = vec![0u8; side * side];
        for r in 0..side {
            for c in 0..side {
                let lit = if class == 0 { c < side / 2 } else { c >= side / 2 };
                pixels[r * side + c] = if lit {
                    180 + ((i * 7 + r + c) % 60) as u8
                } else {
                    ((i * 3 + r * c) % 50) as u8
                };
            }
        }
        images.push(pixels);
        labels.push(class);
    }
    write_idx_images(dir.join(MNIST_TRAIN_IMAGES), &images, side, side).unwrap();
    write_idx_labels(dir.join(MNIST_TRAIN_LABELS), &labels).unwrap();
}

#[test]
fn printed_template_parses_back_to_the_default_config() {
    let out = run(&["pipeline", "--print-template"]);
    let text = stdout_of(&out);
    let parsed = parse_config(&text).expect("template should parse");
    assert_eq!(parsed, PipelineConfig::default());
}

#[test]
fn counting_mode_prints_the_closed_forms() {
    let out = run(&[
        "analyze-leakage",
        "--kernel-h",
        "11",
        "--channels",
        "3",
        "--kernels",
        "96",
        "--stride",
        "4",
    ]);
    let text = stdout_of(&out);
    assert_eq!(value_of(&text, "equations"), "2400");
    assert_eq!(value_of(&text, "unknowns"), "2187");
    assert_eq!(value_of(&text, "secure"), "false");
    assert_eq!(value_of(&text, "max_safe_kernels"), "87");
}

#[test]
fn conv_costs_match_the_closed_form() {
    let out = run(&["report-costs", "--conv", "11,11,3,64,4", "--links", "186624"]);
    let text = stdout_of(&out);
    assert_eq!(value_of(&text, "param_count"), "23296");
    assert_eq!(value_of(&text, "storage_bytes"), "186368");
    assert_eq!(value_of(&text, "link_count"), "186624");
    let seconds: f64 = value_of(&text, "comm_seconds").parse().unwrap();
    assert!((seconds - 186_624.0 * 64.0 / f64::from(1u32 << 20)).abs() < 1e-9);
}

#[test]
fn report_costs_requires_exactly_one_source() {
    let out = run(&["report-costs"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--model") && err.contains("--conv"), "{err}");
}

#[test]
fn retrain_with_preserve_needs_a_base_model() {
    let out = run(&["retrain-secure", "--preserve", "2", "--out", "/dev/null"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--base"), "{err}");
}

#[test]
fn full_workflow_over_a_live_server() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_toy_data(dir, 1200);
    let data_dir = dir.to_str().unwrap();
    let path = |name: &str| dir.join(name).to_str().unwrap().to_owned();

    // Train, retrain with one preserved layer, split right after the concat.
    // The base stays deliberately undercooked: saturated frozen features
    // would drown the signal column out of the retraining gradient.
    let base = path("base.model");
    let out = run(&[
        "train-base",
        "--data-dir",
        data_dir,
        "--hidden",
        "12,8",
        "--epochs",
        "2",
        "--learning-rate",
        "0.01",
        "--out",
        &base,
    ]);
    let text = stdout_of(&out);
    assert_eq!(value_of(&text, "train_samples"), "960");
    assert_eq!(value_of(&text, "layers"), "3");

    let secure = path("secure.model");
    let out = run(&[
        "retrain-secure",
        "--data-dir",
        data_dir,
        "--preserve",
        "1",
        "--base",
        &base,
        "--epochs",
        "24",
        "--learning-rate",
        "0.02",
        "--out",
        &secure,
    ]);
    let text = stdout_of(&out);
    assert_eq!(value_of(&text, "concat_layer"), "2");

    let client = path("client.model");
    let server = path("server.model");
    let out = run(&[
        "partition",
        "--model",
        &secure,
        "--k",
        "2",
        "--client-out",
        &client,
        "--server-out",
        &server,
    ]);
    let text = stdout_of(&out);
    assert_eq!(value_of(&text, "partition_k"), "2");
    assert_eq!(value_of(&text, "client_out_dim"), "8");

    // The audit prints one verdict per probe and an overall gate line.
    let out = run(&[
        "analyze-leakage",
        "--client",
        &client,
        "--data-dir",
        data_dir,
        "--probes",
        "3",
    ]);
    let text = stdout_of(&out);
    assert_eq!(value_of(&text, "probes"), "3");
    let gate = value_of(&text, "gate");
    assert!(gate == "passed" || gate == "refused", "gate = {gate}");

    // Serving a client-role file must be rejected.
    let out = run(&["serve", "--model", &client, "--listen", "127.0.0.1:0"]);
    assert!(!out.status.success());

    // Host the server half and run remote inferences against it.
    let mut guard = ServeGuard(
        bin()
            .args(["serve", "--model", &server, "--listen", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap(),
    );
    let mut lines = BufReader::new(guard.0.stdout.take().unwrap()).lines();
    let addr = loop {
        let line = lines
            .next()
            .expect("server exited before announcing its endpoint")
            .unwrap();
        if let Some(addr) = line.strip_prefix("listening = ") {
            break addr.to_owned();
        }
    };

    // Splitting must not change the computation: every remote answer has
    // to match a local run of the full secure model with the same signal,
    // recovery included. This holds exactly, however well trained the
    // model is.
    let full = read_model_file(Path::new(&secure))
        .unwrap()
        .into_model()
        .unwrap();
    let all = load_mnist_train::<f64>(dir).unwrap();
    let (_, val) = split(filter_binary(&all, 0, 1).unwrap(), 0.8, 7).unwrap();
    for index in 0..8usize {
        for cs in [0u32, 1] {
            let encoded = encode_signal::<f64>(cs, SignalMode::Binary { cs_width: 1 }).unwrap();
            let fuzzed = full.predict(val.images[index].as_slice(), Some(&encoded)).unwrap();
            let local = recover_output(fuzzed, cs).unwrap();
            let out = run(&[
                "infer",
                "--model",
                &client,
                "--server",
                &addr,
                "--input",
                &index.to_string(),
                "--cs",
                &cs.to_string(),
                "--data-dir",
                data_dir,
            ]);
            let text = stdout_of(&out);
            assert_eq!(value_of(&text, "label"), local.to_string());
            assert_eq!(value_of(&text, "expected"), val.labels[index].to_string());
        }
    }

    // A raw pixel vector works too and reports no expectation.
    let zeros = vec!["0"; 64].join(",");
    let out = run(&[
        "infer", "--model", &client, "--server", &addr, "--input", &zeros, "--cs", "0",
        "--data-dir", data_dir,
    ]);
    let text = stdout_of(&out);
    assert!(text.contains("label = "));
    assert!(!text.contains("expected = "));

    drop(guard);

    // Accuracy and the signal probe both run from the shipped files.
    let out = run(&[
        "eval", "--model", &secure, "--data-dir", data_dir, "--trials", "20",
        "--sample-size", "20",
    ]);
    let text = stdout_of(&out);
    let aa: f64 = value_of(&text, "average_accuracy").parse().unwrap();
    assert!(aa > 0.95, "toy problem should be learnable, got {aa}");

    let out = run(&[
        "probe-cs", "--client", &client, "--data-dir", data_dir, "--samples", "200",
    ]);
    let text = stdout_of(&out);
    let probe: f64 = value_of(&text, "probe_accuracy").parse().unwrap();
    assert!((0.0..=1.0).contains(&probe), "probe accuracy {probe}");
}
