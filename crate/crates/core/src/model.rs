//! Forward passes for the identity-fusion detector and its ablation variants.
//!
//! The full model projects a frozen identity embedding into the visual
//! feature space (`f_fi = W_fi · f_id`), scores the relevance of that
//! projection with a small gated MLP over `[f_vis ; f_fi]`, and classifies
//! the convex blend `ρ·f_fi + (1−ρ)·f_vis`. An auxiliary head on `f_fi`
//! supplies the forgery-aware guidance loss.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, affine, matvec, relu, sigmoid, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub d_id: usize,
    pub d_backbone: usize,
    pub h_rel: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            d_id: 512,
            d_backbone: 768,
            h_rel: 256,
        }
    }
}

impl Dims {
    pub fn new(d_id: usize, d_backbone: usize, h_rel: usize) -> Result<Self> {
        if d_id == 0 || d_backbone == 0 || h_rel == 0 {
            return Err(Error::Config(format!(
                "dims must be positive, got ({d_id}, {d_backbone}, {h_rel})"
            )));
        }
        Ok(Dims {
            d_id,
            d_backbone,
            h_rel,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    BaselineVisual,
    IdentityProbe,
    FaiaConcat,
    FaiaIafm,
    FullSelfi,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::BaselineVisual,
        Mode::IdentityProbe,
        Mode::FaiaConcat,
        Mode::FaiaIafm,
        Mode::FullSelfi,
    ];

    /// The four configurations compared by the module ablation.
    pub const ABLATION: [Mode; 4] = [Mode::BaselineVisual, Mode::FaiaConcat, Mode::FaiaIafm, Mode::FullSelfi];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::BaselineVisual => "baseline_visual",
            Mode::IdentityProbe => "identity_probe",
            Mode::FaiaConcat => "faia_concat",
            Mode::FaiaIafm => "faia_iafm",
            Mode::FullSelfi => "full_selfi",
        }
    }

    pub fn has_relevance(self) -> bool {
        matches!(self, Mode::FaiaIafm | Mode::FullSelfi)
    }

    /// Shapes of the trainable tensors, in checkpoint order.
    pub fn layout(self, dims: Dims) -> Vec<(TensorName, usize, usize)> {
        use TensorName::*;
        let Dims {
            d_id,
            d_backbone: d,
            h_rel: h,
        } = dims;
        match self {
            Mode::BaselineVisual => vec![(ClsW, 2, d), (ClsB, 2, 1)],
            Mode::IdentityProbe => vec![(ClsW, 2, d_id), (ClsB, 2, 1)],
            Mode::FaiaConcat => vec![(WFi, d, d_id), (ClsW, 2, 2 * d), (ClsB, 2, 1)],
            Mode::FaiaIafm | Mode::FullSelfi => vec![
                (WFi, d, d_id),
                (FagW, 2, d),
                (FagB, 2, 1),
                (RelW1, h, 2 * d),
                (RelB1, h, 1),
                (RelW2, 1, h),
                (RelB2, 1, 1),
                (ClsW, 2, d),
                (ClsB, 2, 1),
            ],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Mode,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
    pub dims: Dims,
}

fn one() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn new(mode: Mode, dims: Dims) -> Self {
        ModelConfig {
            mode,
            alpha: 1.0,
            beta: 1.0,
            dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Dims::new(self.dims.d_id, self.dims.d_backbone, self.dims.h_rel).map(|_| ())
    }

    /// The guidance weight actually applied. Only the full model trains the auxiliary head.
    pub fn effective_beta(&self) -> f64 {
        match self.mode {
            Mode::FullSelfi => self.beta,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TensorName {
    WFi,
    FagW,
    FagB,
    RelW1,
    RelB1,
    RelW2,
    RelB2,
    ClsW,
    ClsB,
}

impl TensorName {
    pub const ORDER: [TensorName; 9] = [
        TensorName::WFi,
        TensorName::FagW,
        TensorName::FagB,
        TensorName::RelW1,
        TensorName::RelB1,
        TensorName::RelW2,
        TensorName::RelB2,
        TensorName::ClsW,
        TensorName::ClsB,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TensorName::WFi => "w_fi",
            TensorName::FagW => "fag_w",
            TensorName::FagB => "fag_b",
            TensorName::RelW1 => "rel_w1",
            TensorName::RelB1 => "rel_b1",
            TensorName::RelW2 => "rel_w2",
            TensorName::RelB2 => "rel_b2",
            TensorName::ClsW => "cls_w",
            TensorName::ClsB => "cls_b",
        }
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            TensorName::FagB | TensorName::RelB1 | TensorName::RelB2 | TensorName::ClsB
        )
    }
}

impl fmt::Display for TensorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One tensor per trainable field. Absent fields are not part of the
/// configuration the set was built for. The same shape doubles as the
/// gradient container and as optimizer moment storage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    pub w_fi: Option<Matrix>,
    pub fag_w: Option<Matrix>,
    pub fag_b: Option<Vector>,
    pub rel_w1: Option<Matrix>,
    pub rel_b1: Option<Vector>,
    pub rel_w2: Option<Matrix>,
    pub rel_b2: Option<Vector>,
    pub cls_w: Option<Matrix>,
    pub cls_b: Option<Vector>,
}

pub type SelfiParams = ParamSet;
pub type Grads = ParamSet;

/// Read-only view of one tensor as `rows × cols` row-major data.
#[derive(Clone, Copy, Debug)]
pub struct TensorView<'a> {
    pub name: TensorName,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl ParamSet {
    /// Zero-filled set with the layout of `mode`.
    pub fn zeros(mode: Mode, dims: Dims) -> Self {
        let mut p = ParamSet::default();
        for (name, rows, cols) in mode.layout(dims) {
            p.insert(name, rows, cols, vec![0.0; rows * cols])
                .expect("layout shapes are consistent");
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_mut(|_, data| data.iter_mut().for_each(|v| *v = 0.0));
        out
    }

    /// Set a tensor from raw row-major data. Biases must have `cols == 1`.
    pub fn insert(&mut self, name: TensorName, rows: usize, cols: usize, data: Vec<f64>) -> Result<()> {
        if name.is_bias() {
            if cols != 1 || data.len() != rows {
                return Err(Error::shape(name.as_str(), format!("{rows}x{cols}"), "bias column"));
            }
            let v = Some(Vector::new(data)?);
            match name {
                TensorName::FagB => self.fag_b = v,
                TensorName::RelB1 => self.rel_b1 = v,
                TensorName::RelB2 => self.rel_b2 = v,
                TensorName::ClsB => self.cls_b = v,
                _ => unreachable!(),
            }
        } else {
            let m = Some(Matrix::new(rows, cols, data)?);
            match name {
                TensorName::WFi => self.w_fi = m,
                TensorName::FagW => self.fag_w = m,
                TensorName::RelW1 => self.rel_w1 = m,
                TensorName::RelW2 => self.rel_w2 = m,
                TensorName::ClsW => self.cls_w = m,
                _ => unreachable!(),
            }
        }
        Ok(())
    }

    pub fn tensor(&self, name: TensorName) -> Option<TensorView<'_>> {
        fn mat(name: TensorName, m: &Option<Matrix>) -> Option<TensorView<'_>> {
            m.as_ref().map(|m| TensorView {
                name,
                rows: m.rows(),
                cols: m.cols(),
                data: m.as_slice(),
            })
        }
        fn vecv(name: TensorName, v: &Option<Vector>) -> Option<TensorView<'_>> {
            v.as_ref().map(|v| TensorView {
                name,
                rows: v.len(),
                cols: 1,
                data: v.as_slice(),
            })
        }
        match name {
            TensorName::WFi => mat(name, &self.w_fi),
            TensorName::FagW => mat(name, &self.fag_w),
            TensorName::FagB => vecv(name, &self.fag_b),
            TensorName::RelW1 => mat(name, &self.rel_w1),
            TensorName::RelB1 => vecv(name, &self.rel_b1),
            TensorName::RelW2 => mat(name, &self.rel_w2),
            TensorName::RelB2 => vecv(name, &self.rel_b2),
            TensorName::ClsW => mat(name, &self.cls_w),
            TensorName::ClsB => vecv(name, &self.cls_b),
        }
    }

    /// Present tensors in checkpoint order.
    pub fn views(&self) -> Vec<TensorView<'_>> {
        TensorName::ORDER.iter().filter_map(|&n| self.tensor(n)).collect()
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(TensorName, &mut [f64])) {
        macro_rules! visit {
            ($field:ident, $name:expr) => {
                if let Some(t) = self.$field.as_mut() {
                    f($name, t.as_mut_slice());
                }
            };
        }
        visit!(w_fi, TensorName::WFi);
        visit!(fag_w, TensorName::FagW);
        visit!(fag_b, TensorName::FagB);
        visit!(rel_w1, TensorName::RelW1);
        visit!(rel_b1, TensorName::RelB1);
        visit!(rel_w2, TensorName::RelW2);
        visit!(rel_b2, TensorName::RelB2);
        visit!(cls_w, TensorName::ClsW);
        visit!(cls_b, TensorName::ClsB);
    }

    /// Visits matching tensors of `self` (mutable) and `other` in checkpoint order.
    pub fn zip_mut(&mut self, other: &ParamSet, mut f: impl FnMut(TensorName, &mut [f64], &[f64])) -> Result<()> {
        let mut err = None;
        self.for_each_mut(|name, data| {
            if err.is_some() {
                return;
            }
            match other.tensor(name) {
                Some(o) if o.data.len() == data.len() => f(name, data, o.data),
                _ => err = Some(Error::shape("zip", name.as_str(), "missing or differently shaped")),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.views().iter().map(|t| t.data.len()).sum()
    }

    pub fn shapes(&self) -> Vec<(TensorName, usize, usize)> {
        self.views().iter().map(|t| (t.name, t.rows, t.cols)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.views().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Copy with every scalar rounded to the nearest `f32`.
    pub fn rounded_to_f32(&self) -> ParamSet {
        let mut out = self.clone();
        out.for_each_mut(|_, data| data.iter_mut().for_each(|v| *v = *v as f32 as f64));
        out
    }

    /// Checks that the set has exactly the layout `mode` expects for `dims`.
    pub fn check_layout(&self, mode: Mode, dims: Dims) -> Result<()> {
        let expected = mode.layout(dims);
        let got = self.shapes();
        if got != expected {
            return Err(Error::DimMismatch(format!(
                "{mode} with dims {dims:?} expects {} but parameters have {}",
                describe(&expected),
                describe(&got)
            )));
        }
        Ok(())
    }

    fn req_mat(&self, name: TensorName) -> Result<&Matrix> {
        let m = match name {
            TensorName::WFi => &self.w_fi,
            TensorName::FagW => &self.fag_w,
            TensorName::RelW1 => &self.rel_w1,
            TensorName::RelW2 => &self.rel_w2,
            TensorName::ClsW => &self.cls_w,
            _ => &None,
        };
        m.as_ref()
            .ok_or_else(|| Error::shape("params", name.as_str(), "missing tensor"))
    }

    fn req_vec(&self, name: TensorName) -> Result<&Vector> {
        let v = match name {
            TensorName::FagB => &self.fag_b,
            TensorName::RelB1 => &self.rel_b1,
            TensorName::RelB2 => &self.rel_b2,
            TensorName::ClsB => &self.cls_b,
            _ => &None,
        };
        v.as_ref()
            .ok_or_else(|| Error::shape("params", name.as_str(), "missing tensor"))
    }
}

fn describe(shapes: &[(TensorName, usize, usize)]) -> String {
    shapes
        .iter()
        .map(|(n, r, c)| format!("{n}[{r}x{c}]"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub f_id: Vector,
    pub f_vis: Vector,
    /// 0 = real, 1 = fake.
    pub y: u8,
    pub method: u8,
    pub group: Option<u32>,
}

impl Sample {
    pub fn check(&self, dims: Dims) -> Result<()> {
        if self.y > 1 {
            return Err(Error::InvalidLabel(self.y));
        }
        if self.f_id.len() != dims.d_id || self.f_vis.len() != dims.d_backbone {
            return Err(Error::DimMismatch(format!(
                "sample has f_id[{}], f_vis[{}]; model expects f_id[{}], f_vis[{}]",
                self.f_id.len(),
                self.f_vis.len(),
                dims.d_id,
                dims.d_backbone
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases, all values `f32`-representable.
pub fn init_params_for(mode: Mode, dims: Dims, seed: u64) -> SelfiParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::default();
    for (name, rows, cols) in mode.layout(dims) {
        let data = if name.is_bias() {
            vec![0.0; rows]
        } else {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            (0..rows * cols)
                .map(|_| rng.random_range(-a..a) as f32 as f64)
                .collect()
        };
        p.insert(name, rows, cols, data).expect("layout shapes are consistent");
    }
    p
}

/// Parameters for the full model.
pub fn init_params(dims: Dims, seed: u64) -> SelfiParams {
    init_params_for(Mode::FullSelfi, dims, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceCache {
    pub hidden_pre: Vector,
    pub hidden_post: Vector,
    pub logit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub f_fi: Option<Vector>,
    pub rho: Option<f64>,
    pub f_fused: Option<Vector>,
    pub fag_logits: Option<Vector>,
    pub cls_logits: Vector,
    pub rel_hidden_pre: Option<Vector>,
    pub rel_hidden_post: Option<Vector>,
    pub rel_logit: Option<f64>,
    pub l_cls: f64,
    pub l_fag: Option<f64>,
    pub l_total: f64,
}

impl ForwardTrace {
    /// Fake-class probability.
    pub fn score(&self) -> f64 {
        linalg::softmax2(&self.cls_logits).map(|p| p[1]).unwrap_or(f64::NAN)
    }
}

pub fn faia_project(p: &SelfiParams, f_id: &Vector) -> Result<Vector> {
    matvec(p.req_mat(TensorName::WFi)?, f_id)
}

pub fn fag_logits(p: &SelfiParams, f_fi: &Vector) -> Result<Vector> {
    affine(p.req_mat(TensorName::FagW)?, p.req_vec(TensorName::FagB)?, f_fi)
}

/// `ρ = σ(W₂·relu(W₁·[f_vis ; f_fi] + b₁) + b₂)`
pub fn relevance(p: &SelfiParams, f_vis: &Vector, f_fi: &Vector) -> Result<(f64, RelevanceCache)> {
    if f_vis.len() != f_fi.len() {
        return Err(Error::shape(
            "relevance",
            format!("f_vis len {}", f_vis.len()),
            format!("f_fi len {}", f_fi.len()),
        ));
    }
    let joint = f_vis.concat(f_fi);
    let hidden_pre = affine(p.req_mat(TensorName::RelW1)?, p.req_vec(TensorName::RelB1)?, &joint)?;
    let hidden_post = relu(&hidden_pre);
    let logit = affine(
        p.req_mat(TensorName::RelW2)?,
        p.req_vec(TensorName::RelB2)?,
        &hidden_post,
    )?[0];
    Ok((
        sigmoid(logit),
        RelevanceCache {
            hidden_pre,
            hidden_post,
            logit,
        },
    ))
}

/// `ρ·f_fi + (1−ρ)·f_vis`
pub fn fuse(rho: f64, f_fi: &Vector, f_vis: &Vector) -> Result<Vector> {
    if f_fi.len() != f_vis.len() {
        return Err(Error::shape(
            "fuse",
            format!("f_fi len {}", f_fi.len()),
            format!("f_vis len {}", f_vis.len()),
        ));
    }
    let data = f_fi
        .iter()
        .zip(f_vis.iter())
        .map(|(a, b)| rho * a + (1.0 - rho) * b)
        .collect();
    Vector::new(data)
}

/// Forward pass of the full model (projection, guidance head, relevance gate, fusion, classifier).
pub fn forward(p: &SelfiParams, s: &Sample, cfg: &ModelConfig) -> Result<ForwardTrace> {
    if cfg.mode != Mode::FullSelfi {
        return Err(Error::Mode {
            mode: cfg.mode.to_string(),
            reason: "forward requires full_selfi; use forward_variant".into(),
        });
    }
    gated_forward(p, s, cfg)
}

fn gated_forward(p: &SelfiParams, s: &Sample, cfg: &ModelConfig) -> Result<ForwardTrace> {
    s.check(cfg.dims)?;
    let f_fi = faia_project(p, &s.f_id)?;
    let fag = fag_logits(p, &f_fi)?;
    let (rho, cache) = relevance(p, &s.f_vis, &f_fi)?;
    let f_fused = fuse(rho, &f_fi, &s.f_vis)?;
    let cls_logits = affine(p.req_mat(TensorName::ClsW)?, p.req_vec(TensorName::ClsB)?, &f_fused)?;
    let l_cls = linalg::cross_entropy(&cls_logits, s.y)?;
    let l_fag = linalg::cross_entropy(&fag, s.y)?;
    let l_total = cfg.alpha * l_cls + cfg.effective_beta() * l_fag;
    Ok(ForwardTrace {
        mode: cfg.mode,
        f_fi: Some(f_fi),
        rho: Some(rho),
        f_fused: Some(f_fused),
        fag_logits: Some(fag),
        cls_logits,
        rel_hidden_pre: Some(cache.hidden_pre),
        rel_hidden_post: Some(cache.hidden_post),
        rel_logit: Some(cache.logit),
        l_cls,
        l_fag: Some(l_fag),
        l_total,
    })
}

/// Forward pass for the ablation and probe configurations.
///
/// `faia_iafm` runs the full gated path with the guidance weight forced to
/// zero; the other variants classify a single feature (or a plain
/// concatenation) with one affine layer.
pub fn forward_variant(p: &SelfiParams, s: &Sample, cfg: &ModelConfig) -> Result<ForwardTrace> {
    s.check(cfg.dims)?;
    let (features, f_fi) = match cfg.mode {
        Mode::FullSelfi => {
            return Err(Error::Mode {
                mode: cfg.mode.to_string(),
                reason: "forward_variant covers the ablation variants; use forward".into(),
            })
        }
        Mode::FaiaIafm => return gated_forward(p, s, cfg),
        Mode::BaselineVisual => (s.f_vis.clone(), None),
        Mode::IdentityProbe => (s.f_id.clone(), None),
        Mode::FaiaConcat => {
            let f_fi = faia_project(p, &s.f_id)?;
            (s.f_vis.concat(&f_fi), Some(f_fi))
        }
    };
    let cls_logits = affine(p.req_mat(TensorName::ClsW)?, p.req_vec(TensorName::ClsB)?, &features)?;
    let l_cls = linalg::cross_entropy(&cls_logits, s.y)?;
    Ok(ForwardTrace {
        mode: cfg.mode,
        f_fi,
        rho: None,
        f_fused: None,
        fag_logits: None,
        cls_logits,
        rel_hidden_pre: None,
        rel_hidden_post: None,
        rel_logit: None,
        l_cls,
        l_fag: None,
        l_total: cfg.alpha * l_cls,
    })
}

/// Dispatches to [`forward`] or [`forward_variant`] by mode.
pub fn run(p: &SelfiParams, s: &Sample, cfg: &ModelConfig) -> Result<ForwardTrace> {
    match cfg.mode {
        Mode::FullSelfi => forward(p, s, cfg),
        _ => forward_variant(p, s, cfg),
    }
}

/// Fake-class probabilities for a batch of samples.
pub fn score_samples(p: &SelfiParams, samples: &[Sample], cfg: &ModelConfig) -> Result<Vec<f64>> {
    samples.iter().map(|s| run(p, s, cfg).map(|t| t.score())).collect()
}
