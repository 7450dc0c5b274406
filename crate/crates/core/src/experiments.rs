//! Experiment drivers shared by the command-line tool and the test suites:
//! the identity-probe cross grid, the leave-one-method-out ablation and the
//! relevance statistics of a trained fusion model.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataio::{apply_standardizer, fit_standardizer, EmbeddingDataset, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, cross_grid_with_threads, roc_auc, video_auc, GridResult, MethodSplits, ScoredSet};
use crate::model::{run, Mode, ModelConfig, Sample, SelfiParams};
use crate::optim::{train, Checkpoint, TrainConfig};
use crate::seeds::{derive_path, derive_seed};
use crate::synthdata::{aux_source_swap, benchmark_spec, AuxSource, BenchmarkSpec, Category, Split};

const ABLATION_STREAM: u64 = 0x61626c;
const FUSION_STREAM: u64 = 0x726866;
const AUX_STREAM: u64 = 0x617578;

fn pool_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Per-method train/val/test splits with the auxiliary features replaced
/// according to `aux`.
pub fn method_splits(spec: &BenchmarkSpec, aux: AuxSource) -> Result<Vec<MethodSplits>> {
    let mut out = Vec::with_capacity(spec.methods.len());
    for (i, m) in spec.methods.iter().enumerate() {
        let mut parts = Vec::with_capacity(3);
        for split in Split::ALL {
            let ds = spec.method_split(i, split)?;
            let seed = derive_path(spec.seed, &[AUX_STREAM, m.tag as u64, split as u64]);
            parts.push(aux_source_swap(&ds, aux, seed).samples);
        }
        let test = parts.pop().unwrap_or_default();
        let val = parts.pop().unwrap_or_default();
        let train = parts.pop().unwrap_or_default();
        out.push(MethodSplits {
            tag: m.tag,
            name: m.name.clone(),
            train,
            val,
            test,
        });
    }
    Ok(out)
}

/// Fits the standardizer on `train` and applies it to every set.
fn standardized(
    train: Vec<Sample>,
    rest: Vec<Vec<Sample>>,
    dims: crate::model::Dims,
) -> Result<(Vec<Sample>, Vec<Vec<Sample>>)> {
    let wrap = |s: Vec<Sample>| EmbeddingDataset {
        d_id: dims.d_id,
        d_backbone: dims.d_backbone,
        samples: s,
        provenance: String::new(),
    };
    let train = wrap(train);
    let stats = fit_standardizer(&train)?;
    let rest = rest
        .into_iter()
        .map(|s| apply_standardizer(&stats, &wrap(s)).map(|d| d.samples))
        .collect::<Result<_>>()?;
    Ok((apply_standardizer(&stats, &train)?.samples, rest))
}

fn standardize_splits(splits: Vec<MethodSplits>, dims: crate::model::Dims) -> Result<Vec<MethodSplits>> {
    splits
        .into_iter()
        .map(|m| {
            let (train, mut rest) = standardized(m.train, vec![m.val, m.test], dims)?;
            let test = rest.pop().unwrap_or_default();
            let val = rest.pop().unwrap_or_default();
            Ok(MethodSplits { train, val, test, ..m })
        })
        .collect()
}

/// Identity-probe cross-method grid on the benchmark generated from `seed`.
pub fn probe_grid(cfg: &RunConfig, seed: u64, threads: usize) -> Result<GridResult> {
    let spec = benchmark_spec(&cfg.benchmark, seed)?;
    let dims = spec.dims();
    let mut splits = method_splits(&spec, AuxSource::Identity)?;
    if cfg.standardize {
        splits = standardize_splits(splits, dims)?;
    }
    let model = ModelConfig {
        mode: Mode::IdentityProbe,
        dims,
        ..cfg.model
    };
    let tc = TrainConfig {
        optim: cfg.train,
        seed,
        model,
    };
    cross_grid_with_threads(&splits, &tc, threads)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeldOut {
    pub method: String,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub seed: u64,
    pub mode: Mode,
    pub aux_source: AuxSource,
    pub held_out: Vec<HeldOut>,
    /// Mean of the held-out AUCs.
    pub mean_auc: f64,
}

/// Training seed for the cell holding out method `tag`; shared by all modes.
pub fn ablation_cell_seed(seed: u64, tag: u8) -> u64 {
    derive_path(seed, &[ABLATION_STREAM, tag as u64])
}

fn union(parts: impl Iterator<Item = Vec<Sample>>) -> Vec<Sample> {
    parts.flatten().collect()
}

/// Leave-one-method-out training for every mode in `modes`: each cell trains
/// on the other methods' train splits (validating on their val splits) and
/// is scored on the held-out method's test split.
pub fn ablate(cfg: &RunConfig, seed: u64, aux: AuxSource, modes: &[Mode], threads: usize) -> Result<Vec<AblationRow>> {
    let spec = benchmark_spec(&cfg.benchmark, seed)?;
    let dims = spec.dims();
    if spec.methods.len() < 2 {
        return Err(Error::Config("the ablation needs at least two methods".into()));
    }
    let splits = method_splits(&spec, aux)?;

    let mut folds = Vec::with_capacity(splits.len());
    for held in &splits {
        let others = || splits.iter().filter(|m| m.tag != held.tag);
        let train_set = union(others().map(|m| m.train.clone()));
        let val_set = union(others().map(|m| m.val.clone()));
        let (train_set, val_test) = if cfg.standardize {
            let (t, mut rest) = standardized(train_set, vec![val_set, held.test.clone()], dims)?;
            let test = rest.pop().unwrap_or_default();
            (t, (rest.pop().unwrap_or_default(), test))
        } else {
            (train_set, (val_set, held.test.clone()))
        };
        folds.push((held.tag, held.name.clone(), train_set, val_test.0, val_test.1));
    }

    let cells: Vec<(Mode, usize)> = modes
        .iter()
        .flat_map(|&m| (0..folds.len()).map(move |f| (m, f)))
        .collect();
    let aucs = pool_map(&cells, threads, |&(mode, f)| {
        let (tag, _, train_set, val_set, test_set) = &folds[f];
        let tc = TrainConfig {
            optim: cfg.train,
            seed: ablation_cell_seed(seed, *tag),
            model: ModelConfig {
                mode,
                dims,
                ..cfg.model
            },
        };
        let ck = train(train_set, val_set, &tc)?;
        evaluate(&ck.params, &tc.model, test_set).map(|e| e.frame_auc)
    })?;

    Ok(modes
        .iter()
        .enumerate()
        .map(|(mi, &mode)| {
            let held_out: Vec<HeldOut> = folds
                .iter()
                .enumerate()
                .map(|(f, fold)| HeldOut {
                    method: fold.1.clone(),
                    auc: aucs[mi * folds.len() + f],
                })
                .collect();
            let mean_auc = held_out.iter().map(|h| h.auc).sum::<f64>() / held_out.len() as f64;
            AblationRow {
                seed,
                mode,
                aux_source: aux,
                held_out,
                mean_auc,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RhoStat {
    pub method: u8,
    pub label: u8,
    pub count: usize,
    pub mean_rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub frame_auc: f64,
    pub video_auc: Option<f64>,
    pub accuracy: f64,
    pub scores: Vec<f64>,
    /// Per-sample relevance, present for modes with a relevance predictor.
    pub rho: Option<Vec<f64>>,
    /// Mean relevance by method and label, sorted by (method, label).
    pub rho_stats: Option<Vec<RhoStat>>,
}

/// Scores `samples` and summarizes frame AUC, accuracy at 0.5, video AUC
/// (when every sample carries a group id) and relevance statistics.
pub fn evaluate(p: &SelfiParams, cfg: &ModelConfig, samples: &[Sample]) -> Result<Evaluation> {
    let mut scores = Vec::with_capacity(samples.len());
    let mut rho = Vec::with_capacity(samples.len());
    for s in samples {
        let t = run(p, s, cfg)?;
        scores.push(t.score());
        if let Some(r) = t.rho {
            rho.push(r);
        }
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.y).collect();
    let set = ScoredSet::new(scores.clone(), labels);
    let frame_auc = roc_auc(&set)?;
    let acc = accuracy(&set, 0.5)?;
    let video = match samples.iter().map(|s| s.group).collect::<Option<Vec<u32>>>() {
        Some(g) if !samples.is_empty() => Some(video_auc(&set.with_groups(g))?),
        _ => None,
    };
    let (rho, rho_stats) = if cfg.mode.has_relevance() {
        let stats = rho_stats(samples, &rho);
        (Some(rho), Some(stats))
    } else {
        (None, None)
    };
    Ok(Evaluation {
        frame_auc,
        video_auc: video,
        accuracy: acc,
        scores,
        rho,
        rho_stats,
    })
}

fn rho_stats(samples: &[Sample], rho: &[f64]) -> Vec<RhoStat> {
    let mut acc: std::collections::BTreeMap<(u8, u8), (usize, f64)> = Default::default();
    for (s, r) in samples.iter().zip(rho) {
        let e = acc.entry((s.method, s.y)).or_default();
        e.0 += 1;
        e.1 += r;
    }
    acc.into_iter()
        .map(|((method, label), (count, sum))| RhoStat {
            method,
            label,
            count,
            mean_rho: sum / count as f64,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FusionReport {
    pub seed: u64,
    pub test_auc: f64,
    pub rho_stats: Vec<RhoStat>,
    /// Mean relevance over fake test samples of transferable methods.
    pub transferable_fake_rho: f64,
    /// Mean relevance over fake test samples of ineffective methods.
    pub ineffective_fake_rho: f64,
}

/// Trains the full model on all methods and reports relevance statistics on
/// the pooled test split.
pub fn fusion_rho(cfg: &RunConfig, seed: u64) -> Result<(Checkpoint, FusionReport)> {
    let spec = benchmark_spec(&cfg.benchmark, seed)?;
    let dims = spec.dims();
    let splits = method_splits(&spec, AuxSource::Identity)?;
    let mut train_set = union(splits.iter().map(|m| m.train.clone()));
    let mut val_set = union(splits.iter().map(|m| m.val.clone()));
    let mut test_set = union(splits.iter().map(|m| m.test.clone()));
    if cfg.standardize {
        let (t, mut rest) = standardized(train_set, vec![val_set, test_set], dims)?;
        train_set = t;
        test_set = rest.pop().unwrap_or_default();
        val_set = rest.pop().unwrap_or_default();
    }
    let tc = TrainConfig {
        optim: cfg.train,
        seed: derive_seed(seed, FUSION_STREAM),
        model: ModelConfig {
            mode: Mode::FullSelfi,
            dims,
            ..cfg.model
        },
    };
    let ck = train(&train_set, &val_set, &tc)?;
    let eval = evaluate(&ck.params, &tc.model, &test_set)?;
    let rho = eval.rho.as_deref().unwrap_or_default();
    let mean_where = |cat: Category| {
        let (n, sum) = test_set
            .iter()
            .zip(rho)
            .filter(|(s, _)| s.y == 1 && spec.methods[s.method as usize].category == cat)
            .fold((0usize, 0.0), |(n, sum), (_, r)| (n + 1, sum + r));
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    };
    let report = FusionReport {
        seed,
        test_auc: eval.frame_auc,
        transferable_fake_rho: mean_where(Category::Transferable),
        ineffective_fake_rho: mean_where(Category::Ineffective),
        rho_stats: eval.rho_stats.clone().unwrap_or_default(),
    };
    Ok((ck, report))
}

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
