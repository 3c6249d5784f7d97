//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rf_uda::dataset::{load_dataset, split_leave_one_out, synth_generate, write_dataset};
use rf_uda::rfnet::{load_checkpoint, save_checkpoint};
use rf_uda::uda::EPOCH_CSV_HEADER;
use rf_uda::{
    evaluate, AugmentMode, Dataset, DomainSplit, EpochReport, Error, EvalReport, ModelParams, Result, TrainConfig,
    Trainer,
};

use crate::config::{DataSource, RunConfig, RESOLVED_CONFIG_FILE};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const EPOCH_CSV_FILE: &str = "epochs.csv";
pub const EVAL_CSV_FILE: &str = "eval.csv";
pub const CONFUSION_CSV_FILE: &str = "confusion.csv";
pub const ABLATION_CSV_FILE: &str = "ablation.csv";
pub const ABLATION_CSV_HEADER: &str = "variant,tau0,eta_c,held_value,seeds,mean_target_acc,target_acc_per_seed";

/// Process exit code for an error: 2 configuration, 3 data, 4 numerical.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Spec(_) => 2,
        Error::Numerical { .. } => 4,
        Error::Format { .. } | Error::Load(_) | Error::Io { .. } | Error::Dimension { .. } => 3,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Create the output directory and record the resolved configuration.
fn prepare_out(config: &RunConfig) -> Result<()> {
    if let DataSource::Dir { path, .. } = &config.data {
        if same_dir(path, &config.out) {
            return Err(Error::Config(format!(
                "output directory {} is the input dataset",
                config.out.display()
            )));
        }
    }
    create_dir(&config.out)?;
    write_file(&config.out.join(RESOLVED_CONFIG_FILE), &config.to_text())
}

/// Load or generate the configured dataset.
pub fn load_data(config: &RunConfig) -> Result<Dataset> {
    match &config.data {
        DataSource::Dir { path, classes } => load_dataset(path, *classes),
        DataSource::Synth { spec, seed } => synth_generate(spec, *seed),
    }
}

fn split(config: &RunConfig, data: &Dataset, held: &str) -> Result<DomainSplit> {
    split_leave_one_out(data, config.split_factor, held)
}

fn geometry(data: &Dataset) -> Result<(usize, usize)> {
    let g = data
        .geometry()
        .ok_or_else(|| Error::Load("dataset is empty".into()))?;
    Ok((g.grid, g.frames))
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub reports: Vec<EpochReport>,
    /// Target accuracy of the final model; `None` without target truth.
    pub final_eval: Option<EvalReport>,
}

/// Train on one split. `sink` receives the epoch CSV (header first, one row
/// per epoch as soon as it is available).
pub fn train_split(
    config: &RunConfig,
    train: TrainConfig,
    data_split: &DomainSplit,
    sink: &mut dyn Write,
) -> Result<TrainOutcome> {
    let (grid, frames) = geometry(&data_split.source)?;
    let arch = config.arch.arch(grid, frames, data_split.source.class_count());
    let params = ModelParams::init(arch, train.seed)?;
    let epochs = train.epochs;
    let mut trainer = Trainer::new(params, train)?;
    let csv_err = |e: std::io::Error| Error::Io {
        path: PathBuf::from("<epoch csv>"),
        source: e,
    };
    writeln!(sink, "{EPOCH_CSV_HEADER}").map_err(csv_err)?;
    let truth = (!data_split.target.is_empty()).then_some(&data_split.target_truth);
    let mut reports = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let report = trainer.train_epoch(&data_split.source, &data_split.target, truth, epoch)?;
        writeln!(sink, "{}", report.csv_row()).map_err(csv_err)?;
        sink.flush().map_err(csv_err)?;
        reports.push(report);
    }
    let params = trainer.into_params();
    let final_eval = match truth {
        Some(t) => Some(evaluate(&params, &data_split.target, t)?),
        None => None,
    };
    Ok(TrainOutcome {
        params,
        reports,
        final_eval,
    })
}

/// Writes every line to two sinks.
struct Tee<'a> {
    file: BufWriter<File>,
    echo: &'a mut dyn Write,
}

impl Write for Tee<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.file.write_all(buf)?;
        self.echo.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.file.flush()?;
        self.echo.flush()
    }
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// `train`: writes `model.ckpt`, `epochs.csv` and the resolved config into
/// the output directory; the epoch CSV is echoed to `progress`.
pub fn run_train(config: &RunConfig, progress: &mut dyn Write) -> Result<TrainOutcome> {
    let held = config.require_held_value()?.to_string();
    let data = load_data(config)?;
    let (grid, frames) = geometry(&data)?;
    let train = config.train_config(grid, frames)?;
    let data_split = split(config, &data, &held)?;
    prepare_out(config)?;
    let csv_path = config.out.join(EPOCH_CSV_FILE);
    let mut tee = Tee {
        file: create_file(&csv_path)?,
        echo: progress,
    };
    let outcome = train_split(config, train, &data_split, &mut tee)?;
    tee.flush().map_err(|e| Error::io(&csv_path, e))?;
    save_checkpoint(&outcome.params, &config.out.join(CHECKPOINT_FILE))?;
    Ok(outcome)
}

fn eval_csv(report: &EvalReport) -> String {
    let mut s = String::from("class,count,correct,accuracy\n");
    for (c, row) in report.confusion.iter().enumerate() {
        let n: usize = row.iter().sum();
        s += &format!("{c},{n},{},{}\n", row[c], report.per_class_accuracy[c]);
    }
    let correct: usize = (0..report.confusion.len()).map(|c| report.confusion[c][c]).sum();
    s += &format!("all,{},{correct},{}\n", report.count, report.accuracy);
    s
}

fn confusion_csv(report: &EvalReport) -> String {
    let classes = report.confusion.len();
    let mut s = String::from("truth");
    for c in 0..classes {
        s += &format!(",pred_{c}");
    }
    s.push('\n');
    for (c, row) in report.confusion.iter().enumerate() {
        s += &c.to_string();
        for v in row {
            s += &format!(",{v}");
        }
        s.push('\n');
    }
    s
}

/// `eval`: evaluates the checkpoint on the held-out target domain and writes
/// `eval.csv` and `confusion.csv`.
pub fn run_eval(config: &RunConfig) -> Result<EvalReport> {
    let held = config.require_held_value()?.to_string();
    let params = load_checkpoint(&config.checkpoint_path())?;
    let data = load_data(config)?;
    let (grid, frames) = geometry(&data)?;
    let arch = params.arch();
    if (arch.grid, arch.frames, arch.classes) != (grid, frames, data.class_count()) {
        return Err(Error::Usage(format!(
            "checkpoint expects {}x{}x{} frames and {} classes, dataset has {frames}x{grid}x{grid} and {}",
            arch.frames,
            arch.grid,
            arch.grid,
            arch.classes,
            data.class_count()
        )));
    }
    let data_split = split(config, &data, &held)?;
    let report = evaluate(&params, &data_split.target, &data_split.target_truth)?;
    prepare_out(config)?;
    write_file(&config.out.join(EVAL_CSV_FILE), &eval_csv(&report))?;
    write_file(&config.out.join(CONFUSION_CSV_FILE), &confusion_csv(&report))?;
    Ok(report)
}

/// One ablation setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    /// `full`, `disable_lc`, `disable_augment` or `source_only`.
    pub name: &'static str,
    pub tau0: f64,
    pub eta_c: f64,
}

impl Variant {
    fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut t = base.clone();
        t.tau0 = self.tau0;
        t.eta_c = self.eta_c;
        match self.name {
            "disable_lc" => t.eta_c = 0.0,
            "disable_augment" => t.augment.mode = AugmentMode::None,
            "source_only" => t.mu = 0,
            _ => {}
        }
        t
    }
}

/// Variants of an ablation: the component switches crossed with the
/// threshold and weight sweeps.
pub fn ablation_variants(config: &RunConfig) -> Vec<Variant> {
    let plan = &config.ablation;
    let mut names = vec!["full"];
    if plan.disable_lc {
        names.push("disable_lc");
    }
    if plan.disable_augment {
        names.push("disable_augment");
    }
    if plan.include_source_only {
        names.push("source_only");
    }
    let taus = if plan.threshold_sweep.is_empty() {
        vec![config.train.tau0]
    } else {
        plan.threshold_sweep.clone()
    };
    let etas = if plan.eta_sweep.is_empty() {
        vec![config.train.eta_c]
    } else {
        plan.eta_sweep.clone()
    };
    let mut out = Vec::new();
    for name in names {
        for &tau0 in &taus {
            for &eta_c in &etas {
                out.push(Variant { name, tau0, eta_c });
            }
        }
    }
    out
}

/// One row of the ablation report.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub held_value: String,
    pub seeds: Vec<u64>,
    /// Final target accuracy of each seed, in `seeds` order.
    pub accuracies: Vec<f64>,
}

impl AblationRow {
    pub fn mean_accuracy(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    pub fn csv_row(&self) -> String {
        let join = |v: Vec<String>| v.join(";");
        format!(
            "{},{},{},{},{},{},{}",
            self.variant.name,
            self.variant.tau0,
            self.variant.eta_c,
            self.held_value,
            join(self.seeds.iter().map(u64::to_string).collect()),
            self.mean_accuracy(),
            join(self.accuracies.iter().map(f64::to_string).collect())
        )
    }
}

/// `ablate`: trains every variant for every held value and seed, in order,
/// and writes `ablation.csv` plus one epoch CSV per run under `runs/`.
pub fn run_ablation(config: &RunConfig, progress: &mut dyn Write) -> Result<Vec<AblationRow>> {
    if !config.ablation.any_switch() {
        return Err(Error::Config(
            "ablate needs disable_lc, disable_augment, include_source_only, threshold_sweep or eta_sweep".into(),
        ));
    }
    if config.ablation.held_values.is_empty() {
        return Err(Error::Config("`held_value` or `held_values` is required".into()));
    }
    let data = load_data(config)?;
    let (grid, frames) = geometry(&data)?;
    let base = config.train_config(grid, frames)?;
    let splits = config
        .ablation
        .held_values
        .iter()
        .map(|h| split(config, &data, h))
        .collect::<Result<Vec<_>>>()?;
    prepare_out(config)?;
    let runs = config.out.join("runs");
    create_dir(&runs)?;
    let log_err = |e: std::io::Error| Error::Io {
        path: PathBuf::from("<progress>"),
        source: e,
    };
    let mut rows = Vec::new();
    for variant in ablation_variants(config) {
        for (held, data_split) in config.ablation.held_values.iter().zip(&splits) {
            let mut accuracies = Vec::new();
            for &seed in &config.ablation.seeds {
                let train = TrainConfig {
                    seed,
                    ..variant.apply(&base)
                };
                let name = format!(
                    "{}_tau{}_eta{}_{}_seed{}.csv",
                    variant.name, variant.tau0, variant.eta_c, held, seed
                );
                let path = runs.join(name);
                let mut file = create_file(&path)?;
                let outcome = train_split(config, train, data_split, &mut file)?;
                file.flush().map_err(|e| Error::io(&path, e))?;
                let acc = outcome.final_eval.map_or(f64::NAN, |e| e.accuracy);
                writeln!(
                    progress,
                    "variant={} tau0={} eta_c={} held={} seed={} target_acc={}",
                    variant.name, variant.tau0, variant.eta_c, held, seed, acc
                )
                .map_err(log_err)?;
                accuracies.push(acc);
            }
            rows.push(AblationRow {
                variant: variant.clone(),
                held_value: held.clone(),
                seeds: config.ablation.seeds.clone(),
                accuracies,
            });
        }
    }
    let mut csv = format!("{ABLATION_CSV_HEADER}\n");
    for row in &rows {
        csv += &row.csv_row();
        csv.push('\n');
    }
    write_file(&config.out.join(ABLATION_CSV_FILE), &csv)?;
    Ok(rows)
}

/// `synth`: writes the synthetic dataset (tensor files and manifest) and the
/// resolved config into the output directory.
pub fn run_synth(config: &RunConfig) -> Result<Dataset> {
    let DataSource::Synth { spec, seed } = &config.data else {
        return Err(Error::Config("synth needs `synth = true`".into()));
    };
    let data = synth_generate(spec, *seed)?;
    prepare_out(config)?;
    write_dataset(&data, &config.out)?;
    Ok(data)
}
