//! Command-line front end. The `seqloc` binary is a thin wrapper around [`run`].
//!
//! Exit codes: 0 on success, 1 when a computation fails, 2 for usage or input
//! errors. Every command writes `<command>.manifest.json` into its output
//! directory, including when it fails after the directory is known.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{parse_csv, parse_rssi_csv, Dataset, Role};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, render_report, ReportFormat};
use crate::pipeline::{fit, unix_now, Localize, Predictor, Variant};
use crate::preprocess::{
    apply_filter, calibrate_stability, estimate_all_ap_locations, fit_filter, recode_nondetect, save_ap_locations_csv,
    DropReason,
};
use crate::synth::{generate, raw_coded, SceneConfig};
use crate::tree::NodeKind;

#[derive(Debug, Parser)]
#[command(
    name = "seqloc",
    version,
    about = "WiFi fingerprint localization with a sequential classification tree"
)]
pub struct Cli {
    /// TOML or JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the feature filters and estimate AP locations.
    Preprocess(DataArgs),
    /// Fit a predictor and save it to the output directory.
    Train {
        /// tnn, tsnn or scnn
        #[arg(long, default_value = "scnn")]
        variant: Variant,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Score one or more saved predictors on a labeled file.
    Evaluate {
        #[arg(long = "predictor", required = true)]
        predictors: Vec<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
        /// text, csv or json
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Score only the validation rows withheld during training.
        #[arg(long)]
        holdout_only: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Predict locations for every row of an RSSI file.
    Predict {
        #[arg(long)]
        predictor: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write a synthetic training/validation pair.
    Synth {
        /// Scene description (TOML or JSON); defaults to a two-building scene.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        aps_per_building: usize,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Find the stability threshold that keeps a target number of features.
    CalibrateStability {
        #[arg(long, default_value_t = 320)]
        target: usize,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub m_folds: Option<usize>,
    #[arg(long)]
    pub stability_threshold: Option<f64>,
    #[arg(long)]
    pub weight_gamma: Option<f64>,
    #[arg(long)]
    pub min_accuracy: Option<f64>,
    #[arg(long)]
    pub min_subsample: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub metric_holdout: Option<f64>,
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        fn set_opt<T: Clone>(dst: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                dst.clone_from(v);
            }
        }
        set_opt(&mut cfg.paths.train_csv, &self.train);
        set_opt(&mut cfg.paths.validation_csv, &self.validation);
        set_opt(&mut cfg.paths.out_dir, &self.out_dir);
        set_opt(&mut cfg.seed, &self.seed);
        set(&mut cfg.preprocess.m_folds, &self.m_folds);
        set(&mut cfg.preprocess.stability_threshold_m, &self.stability_threshold);
        set(&mut cfg.preprocess.weight_gamma, &self.weight_gamma);
        set(&mut cfg.stopping.min_accuracy, &self.min_accuracy);
        set(&mut cfg.stopping.min_subsample, &self.min_subsample);
        set(&mut cfg.stopping.max_depth, &self.max_depth);
        set_opt(&mut cfg.net.epochs, &self.epochs);
        set_opt(&mut cfg.net.learning_rate, &self.learning_rate);
        set_opt(&mut cfg.net.batch_size, &self.batch_size);
        set_opt(&mut cfg.net.patience, &self.patience);
        set_opt(&mut cfg.metric_holdout, &self.metric_holdout);
    }
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: &'static str,
    status: &'static str,
    failure_stage: Option<&'static str>,
    error: Option<String>,
    seed: u64,
    config: RunConfig,
    config_hash: String,
    dataset_hashes: BTreeMap<String, String>,
    outputs: Vec<String>,
    crate_version: &'static str,
    created_unix: u64,
}

/// Bookkeeping shared by all commands.
struct Run {
    command: &'static str,
    config: RunConfig,
    out_dir: Option<PathBuf>,
    dataset_hashes: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Run {
    fn new(command: &'static str, config: RunConfig) -> Self {
        Self {
            command,
            config,
            out_dir: None,
            dataset_hashes: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    fn out_dir(&mut self, dir: Option<&PathBuf>) -> Result<PathBuf> {
        let dir = dir
            .cloned()
            .or_else(|| self.config.paths.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.out_dir = Some(dir.clone());
        Ok(dir)
    }

    fn load(&mut self, key: &str, path: Option<&PathBuf>, role: Role) -> Result<Dataset> {
        let path =
            path.ok_or_else(|| Error::InvalidArgument(format!("no {key} file given (flag or [paths] entry)")))?;
        let ds = parse_csv(path, role)?;
        self.dataset_hashes.insert(key.to_string(), ds.content_hash());
        Ok(ds)
    }

    fn write(&mut self, dir: &Path, name: &str, body: &str) -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        self.outputs.push(p.display().to_string());
        Ok(())
    }

    fn finish(self, outcome: &Result<()>) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        let m = RunManifest {
            command: self.command,
            status: if outcome.is_ok() { "ok" } else { "failed" },
            failure_stage: outcome.as_ref().err().and_then(Error::stage),
            error: outcome.as_ref().err().map(ToString::to_string),
            seed: self.config.seed(),
            config_hash: self.config.hash()?,
            config: self.config,
            dataset_hashes: self.dataset_hashes,
            outputs: self.outputs,
            crate_version: env!("CARGO_PKG_VERSION"),
            created_unix: unix_now(),
        };
        let p = dir.join(format!("{}.manifest.json", m.command));
        fs::write(&p, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&p, e))
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() {
        2
    } else {
        1
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code != 0 && !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--threads: {e}")))?;
    }
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    type Job = Box<dyn FnOnce(&mut Run) -> Result<()>>;
    let (name, run_fn): (&'static str, Job) = match cli.command {
        Command::Preprocess(data) => ("preprocess", Box::new(move |r| cmd_preprocess(r, &data))),
        Command::Train { variant, data } => ("train", Box::new(move |r| cmd_train(r, variant, &data))),
        Command::Evaluate {
            predictors,
            validation,
            format,
            holdout_only,
            out_dir,
        } => (
            "evaluate",
            Box::new(move |r| {
                cmd_evaluate(
                    r,
                    &predictors,
                    validation.as_ref(),
                    format,
                    holdout_only,
                    out_dir.as_ref(),
                )
            }),
        ),
        Command::Predict {
            predictor,
            input,
            out_dir,
        } => (
            "predict",
            Box::new(move |r| cmd_predict(r, &predictor, &input, out_dir.as_ref())),
        ),
        Command::Synth {
            scene,
            n,
            aps_per_building,
            noise_sigma,
            seed,
            out_dir,
        } => (
            "synth",
            Box::new(move |r| {
                cmd_synth(
                    r,
                    scene.as_ref(),
                    n,
                    aps_per_building,
                    noise_sigma,
                    seed,
                    out_dir.as_ref(),
                )
            }),
        ),
        Command::CalibrateStability { target, data } => (
            "calibrate-stability",
            Box::new(move |r| cmd_calibrate(r, target, &data)),
        ),
    };
    let mut run = Run::new(name, config);
    let outcome = run_fn(&mut run);
    run.finish(&outcome)?;
    outcome
}

fn cmd_preprocess(run: &mut Run, data: &DataArgs) -> Result<()> {
    data.apply(&mut run.config);
    let cfg = run.config.pipeline()?;
    let dir = run.out_dir(data.out_dir.as_ref())?;
    let paths = run.config.paths.clone();
    let train = run.load("train", paths.train_csv.as_ref(), Role::Train)?;
    let val = run.load("validation", paths.validation_csv.as_ref(), Role::Validation)?;
    let train = recode_nondetect(&train).map_err(|e| e.at_stage("recode"))?;
    let val = recode_nondetect(&val).map_err(|e| e.at_stage("recode"))?;
    let filter = fit_filter(&train, &val, &cfg.preprocess).map_err(|e| e.at_stage("filter"))?;
    run.write(&dir, "filter.json", &filter.to_json()?)?;

    let estimates: Vec<_> = estimate_all_ap_locations(&train, cfg.preprocess.weight().as_fn())?
        .into_iter()
        .flatten()
        .collect();
    let p = dir.join("ap_locations.csv");
    save_ap_locations_csv(&estimates, &p)?;
    run.outputs.push(p.display().to_string());

    let summary = format!(
        "kept {} of {} features\ndropped zero_variance: {}\ndropped unstable_location: {}\nlocated APs: {}\n",
        filter.kept.len(),
        filter.raw_r(),
        filter.count(DropReason::ZeroVariance),
        filter.count(DropReason::UnstableLocation),
        estimates.len()
    );
    print!("{summary}");
    run.write(&dir, "summary.txt", &summary)
}

fn cmd_train(run: &mut Run, variant: Variant, data: &DataArgs) -> Result<()> {
    data.apply(&mut run.config);
    let cfg = run.config.pipeline()?;
    let dir = run.out_dir(data.out_dir.as_ref())?;
    let paths = run.config.paths.clone();
    let train = run.load("train", paths.train_csv.as_ref(), Role::Train)?;
    let val = run.load("validation", paths.validation_csv.as_ref(), Role::Validation)?;
    let predictor = fit(variant, &train, &val, &cfg)?;
    for node in &predictor.tree.nodes {
        for c in &node.candidates {
            let tau = c.tau.map_or_else(|| "unscored".to_string(), |t| format!("{t:.4}"));
            println!(
                "node {} [{}] candidate '{}': tau = {tau}",
                node.id, node.region, c.descriptor
            );
        }
        if let NodeKind::Internal(i) = &node.kind {
            println!(
                "node {} chose '{}' (tau = {:.4})",
                node.id, i.split.descriptor, i.accuracy
            );
        }
    }
    print!("{}", predictor.tree.summary());
    for w in &predictor.tree.warnings {
        eprintln!("warning: {w}");
    }
    predictor.save(&dir)?;
    run.outputs.push(dir.display().to_string());
    println!(
        "saved {variant} predictor with {} leaves to {}",
        predictor.tree.leaf_count(),
        dir.display()
    );
    Ok(())
}

fn cmd_evaluate(
    run: &mut Run,
    predictor_dirs: &[PathBuf],
    validation: Option<&PathBuf>,
    format: ReportFormat,
    holdout_only: bool,
    out_dir: Option<&PathBuf>,
) -> Result<()> {
    let dir = run.out_dir(out_dir)?;
    let path = validation.cloned().or_else(|| run.config.paths.validation_csv.clone());
    let val = run.load("validation", path.as_ref(), Role::Validation)?;
    let mut reports = BTreeMap::new();
    for pdir in predictor_dirs {
        let p = Predictor::load(pdir)?;
        let subset = if holdout_only {
            let rows = &p.manifest.holdout_rows;
            if rows.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "{} was trained without a metric holdout",
                    pdir.display()
                )));
            }
            let mut i = 0usize;
            val.filter(|_| {
                let keep = rows.binary_search(&i).is_ok();
                i += 1;
                keep
            })
        } else {
            val.clone()
        };
        let report = evaluate(&p, &subset)?;
        if report.floor_clamps > 0 {
            eprintln!(
                "{}: {} floor predictions clamped to the leaf's floors",
                p.variant, report.floor_clamps
            );
        }
        if reports.insert(p.variant, report).is_some() {
            return Err(Error::InvalidArgument(format!("variant {} given twice", p.variant)));
        }
    }
    let doc = render_report(&reports, format)?;
    print!("{doc}");
    let ext = match format {
        ReportFormat::TextTable => "txt",
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    };
    run.write(&dir, &format!("report.{ext}"), &doc)?;
    run.write(&dir, "reports.json", &serde_json::to_string_pretty(&reports)?)
}

fn cmd_predict(run: &mut Run, predictor_dir: &Path, input: &Path, out_dir: Option<&PathBuf>) -> Result<()> {
    let dir = run.out_dir(out_dir)?;
    let p = Predictor::load(predictor_dir)?;
    let table = parse_rssi_csv(input)?;
    if table.columns.len() != p.raw_dim() {
        return Err(Error::Schema(format!(
            "input has {} WAP columns, predictor expects R = {}",
            table.columns.len(),
            p.raw_dim()
        )));
    }
    let rows: Vec<&[f64]> = table.rows.iter().map(Vec::as_slice).collect();
    let preds = p.localize_batch(&rows)?;
    let out = dir.join("predictions.csv");
    let file = fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
    p.write_predictions_csv(&preds, std::io::BufWriter::new(file))?;
    run.outputs.push(out.display().to_string());
    let low = preds.iter().filter(|x| x.low_confidence).count();
    println!(
        "wrote {} predictions ({low} low-confidence) to {}",
        preds.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    run: &mut Run,
    scene_path: Option<&PathBuf>,
    n: usize,
    aps_per_building: usize,
    noise_sigma: Option<f64>,
    seed: Option<u64>,
    out_dir: Option<&PathBuf>,
) -> Result<()> {
    let dir = run.out_dir(out_dir)?;
    let seed = seed.or(run.config.seed).unwrap_or(0);
    run.config.seed = Some(seed);
    let mut scene = match scene_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            if p.extension().and_then(|e| e.to_str()) == Some("json") {
                serde_json::from_str::<SceneConfig>(&text).map_err(|e| Error::InvalidArgument(format!("scene: {e}")))?
            } else {
                toml::from_str::<SceneConfig>(&text).map_err(|e| Error::InvalidArgument(format!("scene: {e}")))?
            }
        }
        None => SceneConfig::two_buildings(aps_per_building, seed),
    };
    scene.seed = seed;
    if let Some(s) = noise_sigma {
        scene.noise_sigma = s;
    }
    let (train, val) = generate(&scene, n)?;
    for (name, ds) in [("trainingData.csv", &train), ("validationData.csv", &val)] {
        let p = dir.join(name);
        raw_coded(ds).save_csv(&p)?;
        run.dataset_hashes.insert(name.to_string(), ds.content_hash());
        run.outputs.push(p.display().to_string());
    }
    run.write(&dir, "scene.json", &serde_json::to_string_pretty(&scene)?)?;
    println!(
        "wrote {} training and {} validation rows to {}",
        train.n(),
        val.n(),
        dir.display()
    );
    Ok(())
}

fn cmd_calibrate(run: &mut Run, target: usize, data: &DataArgs) -> Result<()> {
    data.apply(&mut run.config);
    let cfg = run.config.pipeline()?;
    let dir = run.out_dir(data.out_dir.as_ref())?;
    let paths = run.config.paths.clone();
    let train = recode_nondetect(&run.load("train", paths.train_csv.as_ref(), Role::Train)?)?;
    let val = recode_nondetect(&run.load("validation", paths.validation_csv.as_ref(), Role::Validation)?)?;
    let cal = calibrate_stability(&train, &val, &cfg.preprocess, target)?;
    println!("zero-variance filter keeps {}", cal.zero_variance_kept);
    for (t, k) in &cal.sweep {
        println!("  threshold {t:>6.1} m -> {k} kept");
    }
    match cal.threshold_m {
        Some(t) => {
            let check = fit_filter(
                &train,
                &val,
                &crate::preprocess::PreprocessConfig {
                    stability_threshold_m: t,
                    ..cfg.preprocess
                },
            )?;
            let kept = apply_filter(&train, &check)?.r();
            println!("threshold {t:.3} m keeps {kept} features (target {target})");
        }
        None => println!(
            "target {target} unreachable; nearest achievable count is {}",
            cal.achieved
        ),
    }
    run.write(&dir, "calibration.json", &serde_json::to_string_pretty(&cal)?)
}
