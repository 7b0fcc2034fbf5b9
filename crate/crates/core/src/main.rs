use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use adele::correct::TriggerMode;
use adele::consistency::{GateMode, ScaleSet};
use adele::earlycurve::{first_trigger_epoch, fit_curve, FitOptions, DEFAULT_MIN_POINTS, DEFAULT_R};
use adele::io::{self, Checkpoint, MetricsWriter, RunConfig, SweepRow};
use adele::metrics::ClassIoUSeries;
use adele::netcore::{Activation, InitScheme, LayerSpec};
use adele::synthgen::{generate_dataset, Split};
use adele::trainer::{evaluate_split, noise_sweep, Granularity, Mode, RunSummary, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "adele", version, about = "Segmentation under noisy pixel annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and report its annotation quality.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one arm and write metrics, checkpoint and summary.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Fit the training-IoU curve of a series and find its trigger epoch.
    FitCurve {
        /// CSV with `epoch,value` rows, or a metrics CSV together with --class.
        #[arg(long)]
        series: PathBuf,
        #[arg(long, default_value_t = DEFAULT_R)]
        r: f64,
        #[arg(long)]
        class: Option<u8>,
        #[arg(long, default_value_t = DEFAULT_MIN_POINTS)]
        min_points: usize,
    },
    /// Validation and test mIoU of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Baseline and ADELE runs over corruption levels.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Render SVG charts for a finished training run.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_named<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Args, Default)]
struct TrainOverrides {
    /// baseline, correction_only, consistency_only or adele
    #[arg(long, value_parser = parse_named::<Mode>)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    /// pixel or image
    #[arg(long, value_parser = parse_named::<GateMode>)]
    gate: Option<GateMode>,
    #[arg(long)]
    stop_grad_q: Option<bool>,
    /// epoch or iteration
    #[arg(long, value_parser = parse_named::<Granularity>)]
    granularity: Option<Granularity>,
    /// per_class or global
    #[arg(long, value_parser = parse_named::<TriggerMode>)]
    trigger_mode: Option<TriggerMode>,
    #[arg(long)]
    min_points: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Output channels of the hidden 3x3 ReLU layers, e.g. `24,24,24`.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// he_normal or zeros
    #[arg(long, value_parser = parse_named::<InitScheme>)]
    init: Option<InitScheme>,
}

impl TrainOverrides {
    fn apply(&self, t: &mut TrainConfig) -> Result<()> {
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set! {
            mode => t.mode,
            seed => t.seed,
            lambda => t.lambda,
            rho => t.rho,
            r => t.r,
            tau => t.tau,
            gate => t.gate,
            stop_grad_q => t.stop_grad_q,
            granularity => t.granularity,
            trigger_mode => t.trigger_mode,
            min_points => t.min_points,
            epochs => t.epochs,
            lr => t.optim.lr,
            momentum => t.optim.momentum,
            weight_decay => t.optim.weight_decay,
            batch_size => t.optim.batch_size,
            init => t.model.init,
        }
        if let Some(s) = &self.scales {
            t.scales = ScaleSet::new(s.clone()).map_err(|e| adele::Error::Config(vec![format!("--scales: {e}")]))?;
        }
        if let Some(h) = &self.hidden {
            t.model.hidden =
                h.iter().map(|&c| LayerSpec { kernel: 3, out_channels: c, activation: Activation::Relu }).collect();
        }
        Ok(())
    }
}

/// Summary file written next to the metrics of a training run.
#[derive(Serialize, Deserialize)]
struct SummaryFile {
    mode: Mode,
    seed: u64,
    class_names: Vec<String>,
    summary: RunSummary,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => io::load_run_config(p)?,
        None => RunConfig::default(),
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.synth.seed = s;
    }
    cfg.validate()?;
    let data = generate_dataset(&cfg.synth, &cfg.noise)?;
    io::save_dataset(&data, out)?;
    io::save_run_config(&cfg, out.with_extension("config.json"))?;
    let q = data.annotation_quality()?;
    println!("wrote {} examples to {}", data.len(), out.display());
    println!("annotation mIoU {:.4}", q.miou);
    Ok(())
}

fn train(config: Option<&Path>, data_path: &Path, out: &Path, ov: &TrainOverrides) -> Result<()> {
    let mut cfg = load_config(config)?;
    ov.apply(&mut cfg.train)?;
    cfg.validate()?;
    let data = io::load_dataset(data_path)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    io::save_run_config(&cfg, out.join("config.json"))?;
    let mut writer = MetricsWriter::create(out.join("metrics.csv"))?;
    let mut trainer = Trainer::new(cfg.train.clone(), &data)?;
    writer.append(trainer.rows())?;
    while !trainer.is_done() {
        let rows = trainer.run_epoch()?;
        writer.append(rows)?;
    }
    let record = trainer.finish()?;
    io::save_checkpoint(
        &Checkpoint { model: record.model.clone(), epoch: record.summary.epochs, config: Some(record.config.clone()) },
        out.join("checkpoint.segc"),
    )?;
    let s = &record.summary;
    write_json(
        &SummaryFile { mode: cfg.train.mode, seed: cfg.train.seed, class_names: record.class_names.clone(), summary: s.clone() },
        &out.join("summary.json"),
    )?;
    println!(
        "{}: best val {:.4} (epoch {}, test {:.4}) | last epoch val {:.4} test {:.4} | max test {:.4}",
        cfg.train.mode.name(),
        s.best_val_miou,
        s.best_val_epoch,
        s.best_val_test_miou,
        s.last_epoch_val_miou,
        s.last_epoch_test_miou,
        s.max_test_miou
    );
    eprintln!("finished in {:.1} s", record.wall_clock_secs);
    Ok(())
}

/// Reads `(epoch, value)` pairs from a two-column CSV or one class of a metrics CSV.
fn read_series(path: &Path, class: Option<u8>) -> Result<ClassIoUSeries> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.starts_with("epoch,class,") {
        let Some(c) = class else { bail!("{} is a metrics CSV; pass --class to pick a series", path.display()) };
        let rows = io::metrics_from_csv(&text)?;
        let mut s = ClassIoUSeries::new(c);
        for r in rows.iter().filter(|r| r.class == Some(c) && r.epoch >= 1) {
            s.push(r.epoch, r.train_iou)?;
        }
        return Ok(s);
    }
    let mut rd = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut s = ClassIoUSeries::new(class.unwrap_or(0));
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let (Some(t), Some(v)) = (rec.get(0), rec.get(1)) else { bail!("line {}: expected two columns", i + 1) };
        let Ok(t) = t.parse::<usize>() else {
            if i == 0 {
                continue;
            }
            bail!("line {}: bad epoch {t:?}", i + 1)
        };
        let v = if v.is_empty() { None } else { Some(v.parse::<f64>().with_context(|| format!("line {}", i + 1))?) };
        s.push(t, v)?;
    }
    Ok(s)
}

fn fit(series: &Path, r: f64, class: Option<u8>, min_points: usize) -> Result<()> {
    let s = read_series(series, class)?;
    let opts = FitOptions { min_points, ..Default::default() };
    let f = fit_curve(&s, &opts)?;
    println!(
        "a {:.6} b {:.6} c {:.6} sse {:.3e} converged {} points {}",
        f.a, f.b, f.c, f.sse, f.converged, f.points_used
    );
    match first_trigger_epoch(&s, r, &opts)? {
        Some((t, _)) => println!("trigger at epoch {t} (r = {r})"),
        None => println!("no trigger (r = {r})"),
    }
    Ok(())
}

fn eval(checkpoint: &Path, data_path: &Path) -> Result<()> {
    let ck = io::load_checkpoint(checkpoint)?;
    let data = io::load_dataset(data_path)?;
    let show = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "undefined".into());
    println!("val_miou {}", show(evaluate_split(&ck.model, &data, Split::Val)?));
    println!("test_miou {}", show(evaluate_split(&ck.model, &data, Split::Test)?));
    Ok(())
}

fn sweep(config: Option<&Path>, levels: &[usize], out: &Path, parallel: usize, ov: &TrainOverrides) -> Result<()> {
    let mut cfg = load_config(config)?;
    ov.apply(&mut cfg.train)?;
    cfg.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    io::save_run_config(&cfg, out.join("config.json"))?;
    let points = noise_sweep(&cfg.synth, &cfg.noise, &cfg.train, levels, parallel)?;
    for p in &points {
        for rec in [&p.baseline, &p.adele] {
            let dir = out.join(format!("level_{}", p.level)).join(rec.config.mode.name());
            std::fs::create_dir_all(&dir)?;
            io::write_metrics_csv(&rec.rows, dir.join("metrics.csv"))?;
            write_json(
                &SummaryFile {
                    mode: rec.config.mode,
                    seed: rec.config.seed,
                    class_names: rec.class_names.clone(),
                    summary: rec.summary.clone(),
                },
                &dir.join("summary.json"),
            )?;
        }
        println!(
            "level {}: annotation mIoU {:.4} baseline {:.4} adele {:.4} gap {:+.4}",
            p.level,
            p.annotation_miou,
            p.baseline.summary.last_epoch_test_miou,
            p.adele.summary.last_epoch_test_miou,
            p.gap()
        );
    }
    let rows: Vec<SweepRow> = points.iter().map(SweepRow::from).collect();
    io::write_sweep_report(&rows, out)?;
    Ok(())
}

fn report(run: &Path, out: &Path) -> Result<()> {
    if !run.is_dir() {
        bail!("run directory {} does not exist", run.display());
    }
    let rows = io::read_metrics_csv(run.join("metrics.csv"))?;
    let summary_path = run.join("summary.json");
    let names = match std::fs::read_to_string(&summary_path) {
        Ok(text) => serde_json::from_str::<SummaryFile>(&text)?.class_names,
        Err(_) => Vec::new(),
    };
    for p in io::write_report(&names, &rows, out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out, seed } => synth(config.as_deref(), &out, seed),
        Command::Train { config, data, out, overrides } => train(config.as_deref(), &data, &out, &overrides),
        Command::FitCurve { series, r, class, min_points } => fit(&series, r, class, min_points),
        Command::Eval { checkpoint, data } => eval(&checkpoint, &data),
        Command::Sweep { config, levels, out, parallel, overrides } => {
            sweep(config.as_deref(), &levels, &out, parallel, &overrides)
        }
        Command::Report { run: dir, out } => report(&dir, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(e.downcast_ref::<adele::Error>(), Some(adele::Error::Config(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
