//! Hand-derived reverse-mode gradients and a central-difference oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{add_outer, matvec_t, softmax2, Matrix, Vector};
use crate::model::{self, init_params_for, ForwardTrace, Grads, Mode, ModelConfig, Sample, SelfiParams, TensorName};

/// `∂(α·CE)/∂logits = α·(softmax − onehot(y))`
fn ce_grad(logits: &Vector, y: u8, weight: f64) -> Result<Vector> {
    let p = softmax2(logits)?;
    let mut g = vec![weight * p[0], weight * p[1]];
    g[y as usize] -= weight;
    Vector::new(g)
}

/// Gradients of `ρ·f_fi + (1−ρ)·f_vis` given the upstream gradient on the fused vector.
/// Returns `(∂ρ, ∂f_fi, ∂f_vis)`.
pub fn fuse_backward(rho: f64, f_fi: &Vector, f_vis: &Vector, upstream: &Vector) -> Result<(f64, Vector, Vector)> {
    let diff = f_fi.sub(f_vis)?;
    let g_rho = diff.dot(upstream)?;
    Ok((g_rho, upstream.scaled(rho), upstream.scaled(1.0 - rho)))
}

fn missing(field: &str, mode: Mode) -> Error {
    Error::TraceMismatch(format!("trace lacks {field} required by {mode}"))
}

fn grad_mat(g: &mut Grads, name: TensorName) -> &mut Matrix {
    let slot = match name {
        TensorName::WFi => &mut g.w_fi,
        TensorName::FagW => &mut g.fag_w,
        TensorName::RelW1 => &mut g.rel_w1,
        TensorName::RelW2 => &mut g.rel_w2,
        TensorName::ClsW => &mut g.cls_w,
        _ => unreachable!("not a weight matrix"),
    };
    slot.as_mut().expect("gradient layout mirrors the mode layout")
}

fn add_bias(slot: &mut Option<Vector>, g: &Vector) {
    let b = slot.as_mut().expect("gradient layout mirrors the mode layout");
    for (bi, gi) in b.as_mut_slice().iter_mut().zip(g.iter()) {
        *bi += gi;
    }
}

/// `∂l_total/∂θ` for every parameter of `cfg.mode`.
pub fn backward(trace: &ForwardTrace, p: &SelfiParams, s: &Sample, cfg: &ModelConfig) -> Result<Grads> {
    let mut g = Grads::zeros(cfg.mode, cfg.dims);
    backward_into(trace, p, s, cfg, &mut g)?;
    Ok(g)
}

/// Adds the gradients of [`backward`] into `g`, which must already have the
/// layout of `cfg.mode`.
pub fn backward_into(
    trace: &ForwardTrace,
    p: &SelfiParams,
    s: &Sample,
    cfg: &ModelConfig,
    g: &mut Grads,
) -> Result<()> {
    if trace.mode != cfg.mode {
        return Err(Error::TraceMismatch(format!(
            "trace from {} used with {}",
            trace.mode, cfg.mode
        )));
    }
    p.check_layout(cfg.mode, cfg.dims)?;
    g.check_layout(cfg.mode, cfg.dims)?;
    let cls_w = p.cls_w.as_ref().expect("checked layout");
    let g_logits = ce_grad(&trace.cls_logits, s.y, cfg.alpha)?;

    match cfg.mode {
        Mode::BaselineVisual | Mode::IdentityProbe => {
            let x = if cfg.mode == Mode::BaselineVisual {
                &s.f_vis
            } else {
                &s.f_id
            };
            add_outer(grad_mat(g, TensorName::ClsW), 1.0, &g_logits, x)?;
            add_bias(&mut g.cls_b, &g_logits);
        }
        Mode::FaiaConcat => {
            let f_fi = trace.f_fi.as_ref().ok_or_else(|| missing("f_fi", cfg.mode))?;
            let joint = s.f_vis.concat(f_fi);
            add_outer(grad_mat(g, TensorName::ClsW), 1.0, &g_logits, &joint)?;
            add_bias(&mut g.cls_b, &g_logits);
            let g_joint = matvec_t(cls_w, &g_logits)?;
            let d = cfg.dims.d_backbone;
            let g_fi = Vector::new(g_joint.as_slice()[d..].to_vec())?;
            add_outer(grad_mat(g, TensorName::WFi), 1.0, &g_fi, &s.f_id)?;
        }
        Mode::FaiaIafm | Mode::FullSelfi => {
            let f_fi = trace.f_fi.as_ref().ok_or_else(|| missing("f_fi", cfg.mode))?;
            let f_fused = trace.f_fused.as_ref().ok_or_else(|| missing("f_fused", cfg.mode))?;
            let rho = trace.rho.ok_or_else(|| missing("rho", cfg.mode))?;
            let h_pre = trace
                .rel_hidden_pre
                .as_ref()
                .ok_or_else(|| missing("rel_hidden_pre", cfg.mode))?;
            let h_post = trace
                .rel_hidden_post
                .as_ref()
                .ok_or_else(|| missing("rel_hidden_post", cfg.mode))?;
            let fag = trace
                .fag_logits
                .as_ref()
                .ok_or_else(|| missing("fag_logits", cfg.mode))?;

            // classifier
            add_outer(grad_mat(g, TensorName::ClsW), 1.0, &g_logits, f_fused)?;
            add_bias(&mut g.cls_b, &g_logits);
            let g_fused = matvec_t(cls_w, &g_logits)?;

            // fusion gate
            let (g_rho, mut g_fi, _) = fuse_backward(rho, f_fi, &s.f_vis, &g_fused)?;

            // relevance predictor
            let g_logit = g_rho * rho * (1.0 - rho);
            let g_logit_v = Vector::new(vec![g_logit])?;
            add_outer(grad_mat(g, TensorName::RelW2), 1.0, &g_logit_v, h_post)?;
            add_bias(&mut g.rel_b2, &g_logit_v);
            let rel_w2 = p.rel_w2.as_ref().expect("checked layout");
            let g_post = matvec_t(rel_w2, &g_logit_v)?;
            let g_pre = Vector::new(
                g_post
                    .iter()
                    .zip(h_pre.iter())
                    .map(|(gp, &z)| if z > 0.0 { *gp } else { 0.0 })
                    .collect(),
            )?;
            let joint = s.f_vis.concat(f_fi);
            add_outer(grad_mat(g, TensorName::RelW1), 1.0, &g_pre, &joint)?;
            add_bias(&mut g.rel_b1, &g_pre);
            let rel_w1 = p.rel_w1.as_ref().expect("checked layout");
            let g_joint = matvec_t(rel_w1, &g_pre)?;
            let d = cfg.dims.d_backbone;
            for (gi, gj) in g_fi.as_mut_slice().iter_mut().zip(&g_joint.as_slice()[d..]) {
                *gi += gj;
            }

            // guidance head
            let beta = cfg.effective_beta();
            if beta != 0.0 {
                let g_fag = ce_grad(fag, s.y, beta)?;
                add_outer(grad_mat(g, TensorName::FagW), 1.0, &g_fag, f_fi)?;
                add_bias(&mut g.fag_b, &g_fag);
                let fag_w = p.fag_w.as_ref().expect("checked layout");
                let g_from_fag = matvec_t(fag_w, &g_fag)?;
                for (gi, gj) in g_fi.as_mut_slice().iter_mut().zip(g_from_fag.iter()) {
                    *gi += gj;
                }
            }

            add_outer(grad_mat(g, TensorName::WFi), 1.0, &g_fi, &s.f_id)?;
        }
    }
    Ok(())
}

/// Forward then backward; returns the trace alongside the gradients.
pub fn loss_and_grad(p: &SelfiParams, s: &Sample, cfg: &ModelConfig) -> Result<(ForwardTrace, Grads)> {
    let trace = model::run(p, s, cfg)?;
    let g = backward(&trace, p, s, cfg)?;
    Ok((trace, g))
}

/// Central differences `(L(θ+h) − L(θ−h)) / 2h`, one scalar at a time.
pub fn fd_gradient<F>(loss_at: F, p: &SelfiParams, h: f64) -> Grads
where
    F: Fn(&SelfiParams) -> f64,
{
    let mut out = p.zeros_like();
    let mut probe = p.clone();
    for view in p.views() {
        for idx in 0..view.data.len() {
            let orig = view.data[idx];
            set_scalar(&mut probe, view.name, idx, orig + h);
            let up = loss_at(&probe);
            set_scalar(&mut probe, view.name, idx, orig - h);
            let down = loss_at(&probe);
            set_scalar(&mut probe, view.name, idx, orig);
            set_scalar(&mut out, view.name, idx, (up - down) / (2.0 * h));
        }
    }
    out
}

fn set_scalar(p: &mut SelfiParams, name: TensorName, idx: usize, value: f64) {
    p.for_each_mut(|n, data| {
        if n == name {
            data[idx] = value;
        }
    });
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub mode: Mode,
    pub seed: u64,
    pub samples: usize,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub pass: bool,
}

pub const GRADCHECK_SAMPLES: usize = 3;
pub const FD_STEP: f64 = 1e-3;
const KINK_MARGIN: f64 = 5e-2;

/// Compares [`backward`] against [`fd_gradient`] on random parameters and
/// [`GRADCHECK_SAMPLES`] random samples.
///
/// The numeric side is the Richardson extrapolation of central differences
/// at steps `FD_STEP` and `FD_STEP / 2`, accurate to fourth order, so the
/// step can stay large enough that rounding does not swamp small entries.
///
/// Biases are randomized too so their gradients are exercised away from
/// zero. Samples that put a relevance pre-activation within `5e-2` of the
/// ReLU kink are redrawn.
pub fn grad_check(cfg: &ModelConfig, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    cfg.validate()?;
    let dims = cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164_6368_6b00);
    let mut p = init_params_for(cfg.mode, dims, seed);
    p.for_each_mut(|name, data| {
        if name.is_bias() {
            data.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
    });

    let mut report = GradCheckReport {
        mode: cfg.mode,
        seed,
        samples: GRADCHECK_SAMPLES,
        tolerance,
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        pass: true,
    };

    for k in 0..GRADCHECK_SAMPLES {
        let s = loop {
            let s = gaussian_sample(&mut rng, dims, (k % 2) as u8);
            let t = model::run(&p, &s, cfg)?;
            let near_kink = t
                .rel_hidden_pre
                .as_ref()
                .is_some_and(|h| h.iter().any(|z| z.abs() < KINK_MARGIN));
            if !near_kink {
                break s;
            }
        };
        let (_, analytic) = loss_and_grad(&p, &s, cfg)?;
        let loss = |q: &SelfiParams| model::run(q, &s, cfg).map(|t| t.l_total).unwrap_or(f64::NAN);
        let coarse = fd_gradient(loss, &p, FD_STEP);
        let mut numeric = fd_gradient(loss, &p, FD_STEP / 2.0);
        numeric.zip_mut(&coarse, |_, fine, coarse| {
            for (f, c) in fine.iter_mut().zip(coarse) {
                *f = (4.0 * *f - c) / 3.0;
            }
        })?;
        for (a, n) in analytic.views().iter().zip(numeric.views()) {
            for (i, (x, y)) in a.data.iter().zip(n.data).enumerate() {
                let err = (x - y).abs() / 1e-8f64.max(x.abs() + y.abs());
                if err > report.max_rel_error || err.is_nan() {
                    report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                    report.worst_tensor = a.name.to_string();
                    report.worst_index = i;
                }
            }
        }
    }
    report.pass = report.max_rel_error < tolerance;
    Ok(report)
}

fn gaussian_sample(rng: &mut ChaCha8Rng, dims: model::Dims, y: u8) -> Sample {
    let mut draw = |n: usize| -> Vector {
        Vector::new((0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()).expect("nonzero dims")
    };
    Sample {
        f_id: draw(dims.d_id),
        f_vis: draw(dims.d_backbone),
        y,
        method: 0,
        group: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Dims};

    fn dims() -> Dims {
        Dims::new(8, 12, 4).unwrap()
    }

    fn scalar_params(theta: f64) -> SelfiParams {
        let mut p = SelfiParams::default();
        p.insert(TensorName::ClsB, 1, 1, vec![theta]).unwrap();
        p
    }

    #[test]
    fn fd_of_constant_is_zero() {
        let p = init_params(dims(), 0);
        let g = fd_gradient(|_| 4.2, &p, 1e-6);
        assert!(g.views().iter().all(|t| t.data.iter().all(|v| v.abs() <= 1e-9)));
    }

    #[test]
    fn fd_of_quadratic() {
        let p = scalar_params(3.0);
        let h = 1e-3;
        let g = fd_gradient(|q| 0.5 * q.cls_b.as_ref().unwrap()[0].powi(2), &p, h);
        // central differences are exact for quadratics up to rounding
        assert!((g.cls_b.unwrap()[0] - 3.0).abs() <= 10.0 * h * h);
    }

    #[test]
    fn fd_agrees_on_a_cubic_at_second_order() {
        let p = scalar_params(2.0);
        for h in [1e-2, 1e-3] {
            let g = fd_gradient(|q| q.cls_b.as_ref().unwrap()[0].powi(3), &p, h);
            // error term is h²·f'''/6 = h²
            assert!((g.cls_b.unwrap()[0] - 12.0 - h * h).abs() <= 1e-9);
        }
    }

    fn sample(seed: u64, y: u8) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gaussian_sample(&mut rng, dims(), y)
    }

    #[test]
    fn zero_guidance_weight_detaches_head() {
        let mut cfg = ModelConfig::new(Mode::FullSelfi, dims());
        cfg.beta = 0.0;
        let p = init_params(dims(), 1);
        let (_, g) = loss_and_grad(&p, &sample(1, 1), &cfg).unwrap();
        assert!(g.fag_w.unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert!(g.fag_b.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_classification_weight_isolates_identity_branch() {
        let mut cfg = ModelConfig::new(Mode::FullSelfi, dims());
        cfg.alpha = 0.0;
        let p = init_params(dims(), 2);
        let (_, g) = loss_and_grad(&p, &sample(2, 0), &cfg).unwrap();
        for t in [
            TensorName::ClsW,
            TensorName::ClsB,
            TensorName::RelW1,
            TensorName::RelB1,
            TensorName::RelW2,
            TensorName::RelB2,
        ] {
            assert!(g.tensor(t).unwrap().data.iter().all(|&v| v == 0.0), "{t}");
        }
        assert!(g.w_fi.unwrap().as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn doubling_alpha_doubles_classifier_grad() {
        let p = init_params(dims(), 3);
        let s = sample(3, 1);
        let mut cfg = ModelConfig::new(Mode::FullSelfi, dims());
        let (_, g1) = loss_and_grad(&p, &s, &cfg).unwrap();
        cfg.alpha = 2.0;
        let (_, g2) = loss_and_grad(&p, &s, &cfg).unwrap();
        let (a, b) = (g1.cls_w.unwrap(), g2.cls_w.unwrap());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn fuse_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draw = |n: usize| Vector::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (f_fi, f_vis, up) = (draw(6), draw(6), draw(6));
        let rho = 0.3;
        let (g_rho, g_fi, g_vis) = fuse_backward(rho, &f_fi, &f_vis, &up).unwrap();
        let loss = |r: f64| model::fuse(r, &f_fi, &f_vis).unwrap().dot(&up).unwrap();
        let h = 1e-6;
        let fd = (loss(rho + h) - loss(rho - h)) / (2.0 * h);
        assert!((fd - g_rho).abs() <= 1e-8);
        assert!((g_rho - f_fi.sub(&f_vis).unwrap().dot(&up).unwrap()).abs() <= 1e-15);
        for i in 0..6 {
            assert!((g_fi[i] - rho * up[i]).abs() <= 1e-15);
            assert!((g_vis[i] - (1.0 - rho) * up[i]).abs() <= 1e-15);
        }
    }

    #[test]
    fn trace_mode_must_match() {
        let p = init_params(dims(), 0);
        let s = sample(0, 0);
        let full = ModelConfig::new(Mode::FullSelfi, dims());
        let t = model::forward(&p, &s, &full).unwrap();
        let iafm = ModelConfig::new(Mode::FaiaIafm, dims());
        assert!(matches!(backward(&t, &p, &s, &iafm), Err(Error::TraceMismatch(_))));
    }

    #[test]
    fn every_mode_passes_gradcheck() {
        for mode in Mode::ALL {
            let cfg = ModelConfig::new(mode, dims());
            let r = grad_check(&cfg, 0, 1e-5).unwrap();
            assert!(r.pass, "{mode}: {r:?}");
        }
        let probe = ModelConfig::new(Mode::IdentityProbe, dims());
        assert!(grad_check(&probe, 0, 1e-6).unwrap().pass);
    }

    #[test]
    fn zero_tolerance_fails() {
        let cfg = ModelConfig::new(Mode::FullSelfi, dims());
        let r = grad_check(&cfg, 0, 0.0).unwrap();
        assert!(!r.pass);
        assert!(!r.worst_tensor.is_empty());
    }

    #[test]
    fn small_step_descends() {
        let mut checked = 0;
        for seed in 0..20u64 {
            let mode = Mode::ALL[(seed % 5) as usize];
            let cfg = ModelConfig::new(mode, dims());
            let p = init_params_for(mode, dims(), seed);
            let s = sample(seed + 1000, (seed % 2) as u8);
            let (t, g) = loss_and_grad(&p, &s, &cfg).unwrap();
            let norm2: f64 = g.views().iter().flat_map(|v| v.data.iter()).map(|x| x * x).sum();
            if norm2.sqrt() < 1e-10 {
                continue;
            }
            let mut q = p.clone();
            q.zip_mut(&g, |_, w, gw| {
                for (wi, gi) in w.iter_mut().zip(gw) {
                    *wi -= 1e-4 * gi;
                }
            })
            .unwrap();
            let after = model::run(&q, &s, &cfg).unwrap().l_total;
            assert!(after < t.l_total, "seed {seed}: {after} !< {}", t.l_total);
            checked += 1;
        }
        assert!(checked > 0);
    }
}
