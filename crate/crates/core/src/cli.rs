//! The `selfi` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 check failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataio::{
    apply_standardizer, fit_standardizer, read_checkpoint, read_dataset, write_checkpoint, write_dataset,
    EmbeddingDataset, RunConfig, StandardizerStats,
};
use crate::error::{Error, Result};
use crate::experiments::{ablate, evaluate, median, probe_grid, AblationRow, RhoStat};
use crate::grad::{grad_check, GradCheckReport};
use crate::model::{Dims, Mode, ModelConfig};
use crate::optim::{train, Checkpoint};
use crate::synthdata::{benchmark_spec, AuxSource, Split};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "selfi",
    version,
    about = "Identity-aware fusion for deepfake detection on embedding datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for grid and ablation cells.
    #[arg(long, env = "SELFI_THREADS", default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/val/test embedding files for every benchmark method.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write `model.sckpt` and `history.csv`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        val_data: PathBuf,
        /// Overrides the configured model mode.
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Score a dataset with a checkpoint and write `report.json`, `report.csv` and `scores.csv`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Standardizer statistics written by `train` when standardization is enabled.
        #[arg(long)]
        standardizer: Option<PathBuf>,
    },
    /// Identity-probe cross-method grid; writes `grid.csv` and `grid.json`.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Also write `grid.svg`.
        #[arg(long)]
        svg: bool,
    },
    /// Leave-one-method-out ablation over the fusion variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "identity")]
        aux_source: AuxSource,
        /// Number of consecutive seeds starting at the base seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Compare analytic and finite-difference gradients for every mode.
    Gradcheck {
        /// d_id,d_backbone,h_rel
        #[arg(long, default_value = "8,12,4", value_parser = parse_dims)]
        dims: Dims,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        /// Also write `gradcheck.csv` into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Dims::new(a, b, c).map_err(|e| e.to_string()),
        _ => Err("expected three comma-separated integers".into()),
    }
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Mode { .. } => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

/// Runs the tool on `args` (including the program name) and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("{}: {io}", p.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn dispatch(cmd: Command) -> Result<i32> {
    let started = Instant::now();
    let code = match cmd {
        Command::Synth { common } => cmd_synth(&common)?,
        Command::Train {
            common,
            train_data,
            val_data,
            mode,
        } => cmd_train(&common, &train_data, &val_data, mode)?,
        Command::Eval {
            common,
            checkpoint,
            data,
            standardizer,
        } => cmd_eval(&common, &checkpoint, &data, standardizer.as_deref())?,
        Command::Grid { common, svg } => cmd_grid(&common, svg)?,
        Command::Ablate {
            common,
            aux_source,
            seeds,
        } => cmd_ablate(&common, aux_source, seeds)?,
        Command::Gradcheck {
            dims,
            seeds,
            tolerance,
            out,
        } => cmd_gradcheck(dims, seeds, tolerance, out.as_deref())?,
    };
    eprintln!("wall-clock: {:.2}s", started.elapsed().as_secs_f64());
    Ok(code)
}

fn cmd_synth(common: &Common) -> Result<i32> {
    let cfg = load_config(common)?;
    let spec = benchmark_spec(&cfg.benchmark, cfg.seed)?;
    create_out(&common.out)?;
    for split in Split::ALL {
        let c = cfg.benchmark.counts(split);
        if c.n_real == 0 || c.n_fake == 0 {
            eprintln!(
                "warning: AUC-incompatible split {}: n_real={} n_fake={}",
                split.as_str(),
                c.n_real,
                c.n_fake
            );
        }
    }
    for (i, m) in spec.methods.iter().enumerate() {
        for split in Split::ALL {
            let ds = spec.method_split(i, split)?;
            let path = common.out.join(format!("{}_{}.semb", m.name, split.as_str()));
            write_dataset(&ds, &path)?;
            println!(
                "{} {}: {} real, {} fake -> {}",
                m.name,
                split.as_str(),
                ds.count_label(0),
                ds.count_label(1),
                path.display()
            );
        }
    }
    Ok(EXIT_OK)
}

fn history_csv(ck: &Checkpoint) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_auc\n");
    for r in &ck.history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.val_auc);
    }
    out
}

fn cmd_train(common: &Common, train_path: &Path, val_path: &Path, mode: Option<Mode>) -> Result<i32> {
    let mut cfg = load_config(common)?;
    if let Some(m) = mode {
        cfg.model.mode = m;
    }
    let mut train_ds = read_dataset(train_path)?;
    let mut val_ds = read_dataset(val_path)?;
    for ds in [&train_ds, &val_ds] {
        ds.check_dims(cfg.model.dims)?;
    }
    create_out(&common.out)?;
    if cfg.standardize {
        let stats = fit_standardizer(&train_ds)?;
        train_ds = apply_standardizer(&stats, &train_ds)?;
        val_ds = apply_standardizer(&stats, &val_ds)?;
        write_json(&common.out.join("standardizer.json"), &stats)?;
    }
    let tc = cfg.train_config(cfg.seed);
    let ck = train(&train_ds.samples, &val_ds.samples, &tc)?;
    write_checkpoint(&ck, common.out.join("model.sckpt"))?;
    fs::write(common.out.join("history.csv"), history_csv(&ck))?;
    println!(
        "mode {} epochs {} best epoch {} val AUC {:.4} config {}",
        tc.model.mode,
        ck.history.len(),
        ck.epoch_of_best,
        ck.best_val_auc,
        cfg.hash_hex()
    );
    Ok(EXIT_OK)
}

/// Metrics written by `eval`.
#[derive(Debug, Serialize)]
pub struct RunReport {
    /// SHA-256 of the checkpoint's training configuration.
    pub config_hash: String,
    pub mode: Mode,
    pub dims: Dims,
    pub seed: u64,
    pub samples: usize,
    pub frame_auc: f64,
    pub video_auc: Option<f64>,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_by_method_label: Option<Vec<RhoStat>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_by_label: Option<Vec<RhoStat>>,
}

fn pooled_by_label(stats: &[RhoStat]) -> Vec<RhoStat> {
    (0..=1u8)
        .filter_map(|label| {
            let (count, sum) = stats
                .iter()
                .filter(|s| s.label == label)
                .fold((0, 0.0), |(n, sum), s| (n + s.count, sum + s.mean_rho * s.count as f64));
            (count > 0).then(|| RhoStat {
                method: u8::MAX,
                label,
                count,
                mean_rho: sum / count as f64,
            })
        })
        .collect()
}

fn cmd_eval(common: &Common, ck_path: &Path, data_path: &Path, standardizer: Option<&Path>) -> Result<i32> {
    let ck = read_checkpoint(ck_path)?;
    let mut ds: EmbeddingDataset = read_dataset(data_path)?;
    let model: ModelConfig = ck.config.model;
    ds.check_dims(model.dims)?;
    if let Some(p) = standardizer {
        let stats: StandardizerStats = serde_json::from_str(&fs::read_to_string(p)?)?;
        ds = apply_standardizer(&stats, &ds)?;
    }
    let ev = evaluate(&ck.params, &model, &ds.samples)?;
    let report = RunReport {
        config_hash: sha256_hex(serde_json::to_string(&ck.config)?.as_bytes()),
        mode: model.mode,
        dims: model.dims,
        seed: ck.config.seed,
        samples: ds.len(),
        frame_auc: ev.frame_auc,
        video_auc: ev.video_auc,
        accuracy: ev.accuracy,
        rho_by_label: ev.rho_stats.as_deref().map(pooled_by_label),
        rho_by_method_label: ev.rho_stats.clone(),
    };
    create_out(&common.out)?;
    write_json(&common.out.join("report.json"), &report)?;

    let mut csv = String::from("metric,method,label,value\n");
    let _ = writeln!(csv, "frame_auc,,,{}", report.frame_auc);
    if let Some(v) = report.video_auc {
        let _ = writeln!(csv, "video_auc,,,{v}");
    }
    let _ = writeln!(csv, "accuracy,,,{}", report.accuracy);
    for s in report.rho_by_method_label.iter().flatten() {
        let _ = writeln!(csv, "mean_rho,{},{},{}", s.method, s.label, s.mean_rho);
    }
    for s in report.rho_by_label.iter().flatten() {
        let _ = writeln!(csv, "mean_rho,all,{},{}", s.label, s.mean_rho);
    }
    fs::write(common.out.join("report.csv"), csv)?;

    let mut scores = String::from(if ev.rho.is_some() {
        "index,label,method,group,score,rho\n"
    } else {
        "index,label,method,group,score\n"
    });
    for (i, (s, score)) in ds.samples.iter().zip(&ev.scores).enumerate() {
        let group = s.group.map(|g| g.to_string()).unwrap_or_default();
        let _ = write!(scores, "{i},{},{},{group},{score}", s.y, s.method);
        if let Some(r) = &ev.rho {
            let _ = write!(scores, ",{}", r[i]);
        }
        scores.push('\n');
    }
    fs::write(common.out.join("scores.csv"), scores)?;

    print!("frame AUC {:.4} accuracy {:.4}", report.frame_auc, report.accuracy);
    if let Some(v) = report.video_auc {
        print!(" video AUC {v:.4}");
    }
    println!();
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct GridReport<'a> {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    grid: &'a crate::metrics::GridResult,
}

fn cmd_grid(common: &Common, svg: bool) -> Result<i32> {
    let cfg = load_config(common)?;
    if cfg.benchmark.methods.len() < 2 {
        return Err(Error::Config("the grid needs at least two methods".into()));
    }
    let grid = probe_grid(&cfg, cfg.seed, common.threads)?;
    create_out(&common.out)?;
    fs::write(common.out.join("grid.csv"), grid.to_csv())?;
    write_json(
        &common.out.join("grid.json"),
        &GridReport {
            config_hash: cfg.hash_hex(),
            seed: cfg.seed,
            grid: &grid,
        },
    )?;
    if svg {
        fs::write(common.out.join("grid.svg"), grid.to_svg())?;
    }
    print!("{}", grid.to_csv());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ModeMedian {
    mode: Mode,
    median_mean_auc: f64,
}

#[derive(Serialize)]
struct AblationReport {
    config_hash: String,
    aux_source: AuxSource,
    seeds: Vec<u64>,
    rows: Vec<AblationRow>,
    medians: Vec<ModeMedian>,
}

fn cmd_ablate(common: &Common, aux: AuxSource, seeds: u64) -> Result<i32> {
    let cfg = load_config(common)?;
    if seeds == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()));
    }
    let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed.wrapping_add(i)).collect();
    let mut rows = Vec::new();
    for &s in &seed_list {
        rows.extend(ablate(&cfg, s, aux, &Mode::ABLATION, common.threads)?);
    }
    let medians: Vec<ModeMedian> = Mode::ABLATION
        .iter()
        .map(|&mode| ModeMedian {
            mode,
            median_mean_auc: median(
                &rows
                    .iter()
                    .filter(|r| r.mode == mode)
                    .map(|r| r.mean_auc)
                    .collect::<Vec<_>>(),
            ),
        })
        .collect();

    let names: Vec<&str> = rows[0].held_out.iter().map(|h| h.method.as_str()).collect();
    let mut csv = format!("seed,mode,aux_source,{},mean_auc\n", names.join(","));
    for r in &rows {
        let _ = write!(csv, "{},{},{}", r.seed, r.mode, r.aux_source.as_str());
        for h in &r.held_out {
            let _ = write!(csv, ",{}", h.auc);
        }
        let _ = writeln!(csv, ",{}", r.mean_auc);
    }
    create_out(&common.out)?;
    fs::write(common.out.join("ablation.csv"), &csv)?;
    write_json(
        &common.out.join("ablation.json"),
        &AblationReport {
            config_hash: cfg.hash_hex(),
            aux_source: aux,
            seeds: seed_list,
            rows,
            medians,
        },
    )?;
    print!("{csv}");
    Ok(EXIT_OK)
}

fn cmd_gradcheck(dims: Dims, seeds: u64, tolerance: f64, out: Option<&Path>) -> Result<i32> {
    let mut reports: Vec<GradCheckReport> = Vec::new();
    for mode in Mode::ALL {
        let cfg = ModelConfig::new(mode, dims);
        for seed in 0..seeds {
            reports.push(grad_check(&cfg, seed, tolerance)?);
        }
    }
    let mut table = String::from("mode,seed,max_rel_error,worst_tensor,worst_index,result\n");
    for r in &reports {
        let _ = writeln!(
            table,
            "{},{},{:e},{},{},{}",
            r.mode,
            r.seed,
            r.max_rel_error,
            r.worst_tensor,
            r.worst_index,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    print!("{table}");
    if let Some(dir) = out {
        create_out(dir)?;
        fs::write(dir.join("gradcheck.csv"), &table)?;
    }
    Ok(if reports.iter().all(|r| r.pass) {
        EXIT_OK
    } else {
        EXIT_CHECK
    })
}
