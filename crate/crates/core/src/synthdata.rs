//! Seeded synthetic embeddings with three kinds of identity behaviour.
//!
//! Real samples share one pipeline across methods: an identity is drawn from
//! a per-split pool of cluster centres, a video-level offset is added, and
//! each frame adds a small jitter. A fraction `id_degraded_fraction` of
//! videos, real and fake alike, carry an identity embedding corrupted by
//! noise of scale `id_degraded_noise`, as a face encoder would produce for
//! occluded or low-quality faces. A fake sample starts from the same real
//! draw and then
//!
//! * shifts `f_id` by `id_shift_strength` along the method's identity
//!   direction and adds isotropic noise of scale `id_noise`;
//! * shifts `f_vis` by `vis_artifact_strength` along the method's artifact
//!   direction and adds noise of scale `vis_noise`.
//!
//! The two *transferable* methods share (up to a small rotation) one
//! identity direction, the *method-specific* one uses an orthogonal
//! direction, and the *ineffective* one barely shifts identity but scrambles
//! it with heavy noise. Visual artifact directions mix a component shared by
//! all methods with a method-specific one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::model::{Dims, Sample};
use crate::seeds::derive_path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Transferable,
    MethodSpecific,
    Ineffective,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn id(self) -> u64 {
        self as u64
    }
}

/// Per-method generator knobs as they appear in the run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodKnobs {
    pub name: String,
    pub category: Category,
    pub id_shift_strength: f64,
    pub id_noise: f64,
    pub vis_artifact_strength: f64,
    pub vis_noise: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub n_real: usize,
    pub n_fake: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub d_id: usize,
    pub d_backbone: usize,
    pub h_rel: usize,
    /// Distinct identities per split.
    pub n_identities: usize,
    /// Frames per video.
    pub group_size: usize,
    pub id_center_scale: f64,
    pub id_video_scale: f64,
    pub vis_video_scale: f64,
    pub frame_jitter: f64,
    /// Fraction of videos, real and fake alike, whose identity embedding is
    /// unreliable (think blurred or occluded faces).
    pub id_degraded_fraction: f64,
    /// Scale of the extra video-level identity noise on those videos.
    pub id_degraded_noise: f64,
    /// Cosine between the two transferable identity directions.
    pub transferable_cosine: f64,
    /// Squared weight of the shared component in each visual artifact direction.
    pub vis_shared_fraction: f64,
    pub train: SplitCounts,
    pub val: SplitCounts,
    pub test: SplitCounts,
    pub methods: Vec<MethodKnobs>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        let knobs = |name: &str, category, id_shift, id_noise, vis, vis_noise| MethodKnobs {
            name: name.into(),
            category,
            id_shift_strength: id_shift,
            id_noise,
            vis_artifact_strength: vis,
            vis_noise,
        };
        BenchmarkConfig {
            d_id: 64,
            d_backbone: 64,
            h_rel: 32,
            n_identities: 16,
            group_size: 8,
            id_center_scale: 1.0,
            id_video_scale: 0.5,
            vis_video_scale: 1.0,
            frame_jitter: 0.1,
            id_degraded_fraction: 0.3,
            id_degraded_noise: 3.0,
            transferable_cosine: 0.95,
            vis_shared_fraction: 0.3,
            train: SplitCounts {
                n_real: 6000,
                n_fake: 6000,
            },
            val: SplitCounts {
                n_real: 500,
                n_fake: 500,
            },
            test: SplitCounts {
                n_real: 1000,
                n_fake: 1000,
            },
            methods: vec![
                knobs("DF", Category::Transferable, 4.0, 0.3, 1.0, 0.3),
                knobs("FS", Category::Transferable, 4.0, 0.3, 1.0, 0.3),
                knobs("F2F", Category::MethodSpecific, 4.0, 0.3, 1.0, 0.3),
                knobs("NT", Category::Ineffective, 0.3, 3.0, 1.0, 0.3),
            ],
        }
    }
}

impl BenchmarkConfig {
    pub fn dims(&self) -> Dims {
        Dims {
            d_id: self.d_id,
            d_backbone: self.d_backbone,
            h_rel: self.h_rel,
        }
    }

    pub fn counts(&self, split: Split) -> SplitCounts {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Dims::new(self.d_id, self.d_backbone, self.h_rel)?;
        if self.d_id < 3 {
            return Err(Error::Config(
                "d_id must be at least 3 to hold orthogonal directions".into(),
            ));
        }
        if self.n_identities == 0 || self.group_size == 0 {
            return Err(Error::Config("n_identities and group_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.transferable_cosine) || !(0.0..=1.0).contains(&self.vis_shared_fraction) {
            return Err(Error::Config(
                "transferable_cosine and vis_shared_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.id_degraded_fraction) {
            return Err(Error::Config("id_degraded_fraction must lie in [0, 1]".into()));
        }
        let scales = [
            self.id_center_scale,
            self.id_video_scale,
            self.vis_video_scale,
            self.frame_jitter,
            self.id_degraded_noise,
        ];
        if scales.iter().any(|&s| s.is_nan() || s < 0.0) {
            return Err(Error::Config("scales must be >= 0".into()));
        }
        if self.methods.is_empty() || self.methods.len() > 255 {
            return Err(Error::Config("between 1 and 255 methods required".into()));
        }
        for m in &self.methods {
            let v = [m.id_shift_strength, m.id_noise, m.vis_artifact_strength, m.vis_noise];
            if v.iter().any(|&s| s.is_nan() || s < 0.0) {
                return Err(Error::Config(format!(
                    "method {}: strengths and noises must be >= 0",
                    m.name
                )));
            }
        }
        let transferable = self
            .methods
            .iter()
            .filter(|m| m.category == Category::Transferable)
            .count();
        if transferable > 2 {
            return Err(Error::Config("at most two transferable methods".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub tag: u8,
    pub name: String,
    pub category: Category,
    pub id_shift_dir: Vector,
    pub id_shift_strength: f64,
    pub id_noise: f64,
    pub vis_artifact_dir: Vector,
    pub vis_artifact_strength: f64,
    pub vis_noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub config: BenchmarkConfig,
    pub methods: Vec<MethodSpec>,
    /// Identity direction the transferable methods are built around.
    pub shared_id_dir: Vector,
    pub seed: u64,
}

const DIRECTIONS: u64 = 0xd1;
const CENTERS: u64 = 0xce;
const SAMPLES: u64 = 0x5a;
const AUX: u64 = 0xa4;

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn normalize(mut v: Vec<f64>) -> Vector {
    let n = linalg::dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    Vector::new(v).expect("nonempty")
}

/// Random unit vector orthogonal to every vector in `basis` (assumed orthonormal).
fn orthogonal_unit(rng: &mut ChaCha8Rng, n: usize, basis: &[&Vector]) -> Vector {
    let mut v = gaussian(rng, n);
    for b in basis {
        let c = linalg::dot(&v, b.as_slice());
        for (x, bi) in v.iter_mut().zip(b.iter()) {
            *x -= c * bi;
        }
    }
    normalize(v)
}

fn blend(a: &Vector, wa: f64, b: &Vector, wb: f64) -> Vector {
    normalize(a.iter().zip(b.iter()).map(|(x, y)| wa * x + wb * y).collect())
}

pub fn benchmark_spec(config: &BenchmarkConfig, seed: u64) -> Result<BenchmarkSpec> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_path(seed, &[DIRECTIONS]));
    let (d_id, d_vis) = (config.d_id, config.d_backbone);
    let shared_id = normalize(gaussian(&mut rng, d_id));
    let rotate = orthogonal_unit(&mut rng, d_id, &[&shared_id]);
    let specific_base = orthogonal_unit(&mut rng, d_id, &[&shared_id, &rotate]);
    let shared_vis = normalize(gaussian(&mut rng, d_vis));

    let cos = config.transferable_cosine;
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    let vis_shared = config.vis_shared_fraction.sqrt();
    let vis_own = (1.0 - config.vis_shared_fraction).sqrt();

    let mut transferable_seen = 0;
    let mut specific_seen: Vec<Vector> = Vec::new();
    let mut methods = Vec::with_capacity(config.methods.len());
    for (tag, k) in config.methods.iter().enumerate() {
        let id_dir = match k.category {
            Category::Transferable => {
                transferable_seen += 1;
                if transferable_seen == 1 {
                    shared_id.clone()
                } else {
                    blend(&shared_id, cos, &rotate, sin)
                }
            }
            Category::MethodSpecific => {
                let d = if specific_seen.is_empty() {
                    specific_base.clone()
                } else {
                    let mut basis: Vec<&Vector> = vec![&shared_id, &rotate];
                    basis.extend(specific_seen.iter());
                    orthogonal_unit(&mut rng, d_id, &basis)
                };
                specific_seen.push(d.clone());
                d
            }
            Category::Ineffective => normalize(gaussian(&mut rng, d_id)),
        };
        let own = orthogonal_unit(&mut rng, d_vis, &[&shared_vis]);
        let vis_dir = blend(&shared_vis, vis_shared, &own, vis_own);
        methods.push(MethodSpec {
            tag: tag as u8,
            name: k.name.clone(),
            category: k.category,
            id_shift_dir: id_dir,
            id_shift_strength: k.id_shift_strength,
            id_noise: k.id_noise,
            vis_artifact_dir: vis_dir,
            vis_artifact_strength: k.vis_artifact_strength,
            vis_noise: k.vis_noise,
        });
    }
    Ok(BenchmarkSpec {
        config: config.clone(),
        methods,
        shared_id_dir: shared_id,
        seed,
    })
}

/// The four-method benchmark with the calibrated default knobs.
pub fn default_benchmark(seed: u64) -> BenchmarkSpec {
    benchmark_spec(&BenchmarkConfig::default(), seed).expect("default config is valid")
}

fn f32_round(v: Vec<f64>) -> Vector {
    Vector::new(v.into_iter().map(|x| x as f32 as f64).collect()).expect("nonempty")
}

impl BenchmarkSpec {
    pub fn dims(&self) -> Dims {
        self.config.dims()
    }

    pub fn method(&self, name: &str) -> Option<&MethodSpec> {
        self.methods.iter().find(|m| m.name == name)
    }

    fn identity_centers(&self, split: Split) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_path(self.seed, &[CENTERS, split.id()]));
        let s = self.config.id_center_scale;
        (0..self.config.n_identities)
            .map(|_| {
                gaussian(&mut rng, self.config.d_id)
                    .into_iter()
                    .map(|x| s * x)
                    .collect()
            })
            .collect()
    }

    /// Samples of one method: `n_real` real frames then `n_fake` fake frames,
    /// grouped into videos of `group_size` consecutive frames.
    pub fn sample_method(&self, method: usize, n_real: usize, n_fake: usize, split: Split) -> Result<Vec<Sample>> {
        let m = self
            .methods
            .get(method)
            .ok_or_else(|| Error::Config(format!("no method with index {method}")))?;
        let c = &self.config;
        let centers = self.identity_centers(split);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_path(self.seed, &[SAMPLES, m.tag as u64, split.id()]));
        let group_base = (m.tag as u32) << 24;
        let mut group = 0u32;
        let mut out = Vec::with_capacity(n_real + n_fake);

        for (y, n) in [(0u8, n_real), (1u8, n_fake)] {
            let mut left = n;
            while left > 0 {
                let frames = left.min(c.group_size);
                left -= frames;
                let who = rng.random_range(0..centers.len());
                let mut lat_id: Vec<f64> = centers[who]
                    .iter()
                    .zip(gaussian(&mut rng, c.d_id))
                    .map(|(ctr, z)| ctr + c.id_video_scale * z)
                    .collect();
                let mut lat_vis: Vec<f64> = gaussian(&mut rng, c.d_backbone)
                    .into_iter()
                    .map(|z| c.vis_video_scale * z)
                    .collect();
                let degraded = rng.random::<f64>() < c.id_degraded_fraction;
                let degrade = gaussian(&mut rng, c.d_id);
                if degraded {
                    for (x, z) in lat_id.iter_mut().zip(degrade) {
                        *x += c.id_degraded_noise * z;
                    }
                }
                if y == 1 {
                    let id_noise = gaussian(&mut rng, c.d_id);
                    for ((x, d), z) in lat_id.iter_mut().zip(m.id_shift_dir.iter()).zip(id_noise) {
                        *x += m.id_shift_strength * d + m.id_noise * z;
                    }
                    let vis_noise = gaussian(&mut rng, c.d_backbone);
                    for ((x, d), z) in lat_vis.iter_mut().zip(m.vis_artifact_dir.iter()).zip(vis_noise) {
                        *x += m.vis_artifact_strength * d + m.vis_noise * z;
                    }
                }
                for _ in 0..frames {
                    let f_id = lat_id
                        .iter()
                        .zip(gaussian(&mut rng, c.d_id))
                        .map(|(x, z)| x + c.frame_jitter * z)
                        .collect();
                    let f_vis = lat_vis
                        .iter()
                        .zip(gaussian(&mut rng, c.d_backbone))
                        .map(|(x, z)| x + c.frame_jitter * z)
                        .collect();
                    out.push(Sample {
                        f_id: f32_round(f_id),
                        f_vis: f32_round(f_vis),
                        y,
                        method: m.tag,
                        group: Some(group_base + group),
                    });
                }
                group += 1;
            }
        }
        Ok(out)
    }

    /// One method's split as a dataset with the configured counts.
    pub fn method_split(&self, method: usize, split: Split) -> Result<EmbeddingDataset> {
        let counts = self.config.counts(split);
        let samples = self.sample_method(method, counts.n_real, counts.n_fake, split)?;
        EmbeddingDataset::new(
            self.config.d_id,
            self.config.d_backbone,
            samples,
            format!(
                "synth seed={} method={} split={}",
                self.seed,
                self.methods[method].name,
                split.as_str()
            ),
        )
    }
}

/// Every method's samples for `split`, concatenated in method order.
pub fn sample_dataset(
    spec: &BenchmarkSpec,
    n_real_per_method: usize,
    n_fake_per_method: usize,
    split: Split,
) -> Result<EmbeddingDataset> {
    let mut samples = Vec::new();
    for m in 0..spec.methods.len() {
        samples.extend(spec.sample_method(m, n_real_per_method, n_fake_per_method, split)?);
    }
    EmbeddingDataset::new(
        spec.config.d_id,
        spec.config.d_backbone,
        samples,
        format!("synth seed={} split={}", spec.seed, split.as_str()),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxSource {
    Identity,
    Random,
    Shuffled,
}

impl AuxSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AuxSource::Identity => "identity",
            AuxSource::Random => "random",
            AuxSource::Shuffled => "shuffled",
        }
    }
}

impl std::str::FromStr for AuxSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(AuxSource::Identity),
            "random" => Ok(AuxSource::Random),
            "shuffled" => Ok(AuxSource::Shuffled),
            _ => Err(Error::Config(format!("unknown auxiliary source {s:?}"))),
        }
    }
}

/// Replaces the auxiliary (`f_id`) features.
///
/// `random` draws Gaussian vectors scaled to the pooled standard deviation of
/// the original `f_id` entries; `shuffled` permutes `f_id` rows across
/// samples, keeping the marginal distribution and destroying the pairing
/// with labels and visual features.
pub fn aux_source_swap(ds: &EmbeddingDataset, source: AuxSource, seed: u64) -> EmbeddingDataset {
    let mut out = ds.clone();
    if ds.is_empty() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_path(seed, &[AUX, source as u64]));
    match source {
        AuxSource::Identity => {}
        AuxSource::Random => {
            let n = (ds.len() * ds.d_id) as f64;
            let mean = ds.samples.iter().flat_map(|s| s.f_id.iter()).sum::<f64>() / n;
            let var = ds
                .samples
                .iter()
                .flat_map(|s| s.f_id.iter())
                .map(|x| (x - mean) * (x - mean))
                .sum::<f64>()
                / n;
            let scale = var.sqrt().max(f64::MIN_POSITIVE);
            for s in &mut out.samples {
                s.f_id = f32_round(gaussian(&mut rng, ds.d_id).into_iter().map(|z| scale * z).collect());
            }
            out.provenance = format!("{} [aux=random]", ds.provenance);
        }
        AuxSource::Shuffled => {
            let mut perm: Vec<usize> = (0..ds.len()).collect();
            perm.shuffle(&mut rng);
            for (s, &src) in out.samples.iter_mut().zip(&perm) {
                s.f_id = ds.samples[src].f_id.clone();
            }
            out.provenance = format!("{} [aux=shuffled]", ds.provenance);
        }
    }
    out
}
