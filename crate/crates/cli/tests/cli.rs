//! Subcommands end to end, through the library and the binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rf_uda::dataset::{load_dataset, split_leave_one_out, MANIFEST_FILE};
use rf_uda::rfnet::{load_checkpoint, save_checkpoint};
use rf_uda::rng::fnv1a;
use rf_uda::{Error, ModelParams, Tensor};
use rf_uda_cli::config::parse_pairs;
use rf_uda_cli::{
    exit_code, load_data, run_ablation, run_eval, run_synth, run_train, RunConfig, ABLATION_CSV_FILE,
    ABLATION_CSV_HEADER, CHECKPOINT_FILE, CONFUSION_CSV_FILE, EPOCH_CSV_FILE, EVAL_CSV_FILE, RESOLVED_CONFIG_FILE,
};
use rf_uda::uda::EPOCH_CSV_HEADER;

const TINY: &str = "
synth = true
synth_seed = 4
synth_subjects = 1
synth_locations = 2
synth_frames = 8
held_value = o2
batch_size = 8
epochs = 2
tau0 = 0.2
conv_kernels = 4
dense1 = 16
dense2 = 8
gru_hidden = 8
head_width = 8
";

fn tiny(out: &Path, extra: &str) -> RunConfig {
    let text = format!("{TINY}\nout = {}\n", out.display());
    RunConfig::from_text(&text, &parse_pairs(extra).unwrap()).unwrap()
}

fn dir_checksum(dir: &Path) -> u64 {
    let mut names: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    let mut all = Vec::new();
    for p in names {
        all.extend(p.file_name().unwrap().to_string_lossy().bytes());
        all.extend(fs::read(&p).unwrap());
    }
    fnv1a(&all)
}

#[test]
fn zero_epochs_saves_the_initial_model() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny(tmp.path(), "epochs = 0");
    let outcome = run_train(&config, &mut std::io::sink()).unwrap();
    assert!(outcome.reports.is_empty());
    let csv = fs::read_to_string(tmp.path().join(EPOCH_CSV_FILE)).unwrap();
    assert_eq!(csv, format!("{EPOCH_CSV_HEADER}\n"));

    let saved = load_checkpoint(&tmp.path().join(CHECKPOINT_FILE)).unwrap();
    let init = ModelParams::init(*saved.arch(), 0).unwrap();
    for (a, b) in saved.tensors().iter().zip(init.tensors()) {
        let rounded: Vec<f64> = b.data().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(a.data(), rounded.as_slice());
    }
}

#[test]
fn train_writes_resolved_config_and_streams_progress() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny(tmp.path(), "");
    let mut progress = Vec::new();
    run_train(&config, &mut progress).unwrap();
    let csv = fs::read_to_string(tmp.path().join(EPOCH_CSV_FILE)).unwrap();
    assert_eq!(String::from_utf8(progress).unwrap(), csv);
    assert_eq!(csv.lines().count(), 3);
    let resolved = fs::read_to_string(tmp.path().join(RESOLVED_CONFIG_FILE)).unwrap();
    let again = RunConfig::from_text(&resolved, &[]).unwrap();
    assert_eq!(again.to_text(), resolved);
}

#[test]
fn zero_output_layer_predicts_class_zero_everywhere() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny(tmp.path(), "epochs = 0");
    run_train(&config, &mut std::io::sink()).unwrap();
    let ckpt = tmp.path().join(CHECKPOINT_FILE);
    let mut params = load_checkpoint(&ckpt).unwrap();
    for name in ["out_weight", "out_bias"] {
        let t = params.get_mut(name).unwrap();
        *t = Tensor::zeros(t.shape());
    }
    save_checkpoint(&params, &ckpt).unwrap();

    let report = run_eval(&config).unwrap();
    let data = load_data(&config).unwrap();
    let split = split_leave_one_out(&data, config.split_factor, "o2").unwrap();
    let labels = split.target_truth.labels();
    let class0 = labels.iter().filter(|l| **l == Some(0)).count() as f64 / labels.len() as f64;
    assert_eq!(report.accuracy, class0);
    assert_eq!(report.count, split.target.len());
    let total: usize = report.confusion.iter().flatten().sum();
    assert_eq!(total, split.target.len());
    assert!(report.confusion.iter().all(|row| row[1..].iter().all(|&v| v == 0)));

    let eval_csv = fs::read_to_string(tmp.path().join(EVAL_CSV_FILE)).unwrap();
    assert!(eval_csv.starts_with("class,count,correct,accuracy\n"));
    assert!(eval_csv.contains(&format!("all,{},", split.target.len())));
    let confusion = fs::read_to_string(tmp.path().join(CONFUSION_CSV_FILE)).unwrap();
    assert_eq!(confusion.lines().count(), 1 + data.class_count());
}

#[test]
fn eval_rejects_a_checkpoint_of_another_geometry() {
    let tmp = tempfile::tempdir().unwrap();
    run_train(&tiny(tmp.path(), "epochs = 0"), &mut std::io::sink()).unwrap();
    let other = tiny(tmp.path(), "synth_frames = 6");
    let err = run_eval(&other).unwrap_err();
    assert!(matches!(err, Error::Usage(_)), "{err}");
}

#[test]
fn threshold_sweep_gives_one_row_per_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny(tmp.path(), "epochs = 1\nthreshold_sweep = 0.5, 0.9, 0.95");
    let rows = run_ablation(&config, &mut std::io::sink()).unwrap();
    assert_eq!(rows.len(), 3);
    let taus: Vec<f64> = rows.iter().map(|r| r.variant.tau0).collect();
    assert_eq!(taus, vec![0.5, 0.9, 0.95]);
    let csv = fs::read_to_string(tmp.path().join(ABLATION_CSV_FILE)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], ABLATION_CSV_HEADER);
    assert_eq!(lines.len(), 4);
    assert_eq!(fs::read_dir(tmp.path().join("runs")).unwrap().count(), 3);
}

#[test]
fn ablation_needs_a_switch() {
    let tmp = tempfile::tempdir().unwrap();
    let err = run_ablation(&tiny(tmp.path(), ""), &mut std::io::sink()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(exit_code(&err), 2);
}

#[test]
fn synth_writes_a_reloadable_reproducible_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let data = run_synth(&tiny(&a, "")).unwrap();
    run_synth(&tiny(&b, "")).unwrap();
    // 6 classes x 1 sample x (2 environments x 1 subject x 2 locations x 4 orientations).
    let manifest = fs::read_to_string(a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.lines().count() - 1, 6 * 16);
    assert_eq!(load_dataset(&a, 6).unwrap(), data);
    fs::remove_file(a.join(RESOLVED_CONFIG_FILE)).unwrap();
    fs::remove_file(b.join(RESOLVED_CONFIG_FILE)).unwrap();
    assert_eq!(dir_checksum(&a), dir_checksum(&b));
}

#[test]
fn training_from_disk_leaves_the_dataset_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    run_synth(&tiny(&data_dir, "")).unwrap();
    let before = dir_checksum(&data_dir);
    let text = format!(
        "{}\ndata_dir = {}\nclasses = 6\nheld_value = o2\nout = {}\nepochs = 1\nbatch_size = 8\n",
        "conv_kernels = 4\ndense1 = 16\ndense2 = 8\ngru_hidden = 8\nhead_width = 8",
        data_dir.display(),
        tmp.path().join("run").display()
    );
    let config = RunConfig::from_text(&text, &[]).unwrap();
    run_train(&config, &mut std::io::sink()).unwrap();
    assert_eq!(dir_checksum(&data_dir), before);

    let same = config.with("out", data_dir.display()).unwrap();
    let err = run_train(&same, &mut std::io::sink()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(dir_checksum(&data_dir), before);
}

fn binary(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_rf-uda")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("tiny.conf");
    fs::write(&conf, TINY).unwrap();
    let conf = conf.to_str().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();

    assert_eq!(binary(&["synth", "--config", conf, "--out", out]).0, 0);
    assert!(Path::new(out).join(MANIFEST_FILE).is_file());

    let (code, err) = binary(&["train", "--config", conf, "--set", "epochs=zero"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.starts_with("error: "));
    assert_eq!(binary(&["train", "--config", conf, "--set", "no_such_key=1"]).0, 2);
    assert_eq!(binary(&["train", "--config", "/nonexistent/rf.conf"]).0, 2);

    let missing = format!("data_dir={}", tmp.path().join("nothing").display());
    let (code, err) = binary(&["train", "--config", conf, "--set", "synth=false", "--set", &missing, "--set", "classes=6"]);
    assert_eq!(code, 3, "{err}");

    let run = tmp.path().join("nan");
    let (code, err) = binary(&[
        "train",
        "--config",
        conf,
        "--set",
        "learning_rate=1e300",
        "--set",
        "epochs=3",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code, 4, "{err}");
}
