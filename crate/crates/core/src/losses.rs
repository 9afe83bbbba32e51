//! The OpenMatch-style loss family: supervised cross-entropy and one-vs-all
//! terms on labeled data, and the entropy-minimisation, open-set consistency
//! and FixMatch terms on unlabeled data. Every batch loss is the mean of a
//! per-instance value, which is what per-instance selection scores rely on.

use serde::{Deserialize, Serialize};

use crate::data::{AugSeeds, AugmentConfig};
use crate::error::{config, domain, Result};
use crate::nn::forward::{argmax, argmin, ova_vjp, softmax_vjp};
use crate::nn::{backward, forward, forward_trace, FlatGradient, ModelParams, Objective};

/// Probabilities are clamped to this floor before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

#[inline]
fn clog(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

#[inline]
fn dclog(p: f64) -> f64 {
    if p > LOG_FLOOR {
        1.0 / p
    } else {
        0.0
    }
}

/// Trade-off weights of the three unsupervised terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LossWeights {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0);
    pub const EM: Self = Self::new(1.0, 0.0, 0.0);
    pub const OC: Self = Self::new(0.0, 1.0, 0.0);
    pub const FM: Self = Self::new(0.0, 0.0, 1.0);

    pub const fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            lambda3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.lambda1 == 0.0 && self.lambda2 == 0.0 && self.lambda3 == 0.0
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1.0)
    }
}

/// How the pseudo-label is read off the weak-view class probabilities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    #[default]
    Argmax,
    /// Pseudo-label by the least likely class; kept for comparison only.
    Argmin,
}

/// Everything needed to evaluate the unified unsupervised loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnsupConfig {
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_rho_conf")]
    pub rho_conf: f64,
    #[serde(default)]
    pub label_rule: LabelRule,
    #[serde(default)]
    pub augment: AugmentConfig,
}

fn default_rho_conf() -> f64 {
    0.95
}

impl Default for UnsupConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            rho_conf: default_rho_conf(),
            label_rule: LabelRule::Argmax,
            augment: AugmentConfig::default(),
        }
    }
}

impl UnsupConfig {
    pub fn with_weights(mut self, weights: LossWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.augment.validate()?;
        if !(self.rho_conf > 0.0 && self.rho_conf < 1.0) {
            return Err(config(format!(
                "rho_conf must lie in (0, 1), got {}",
                self.rho_conf
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoLabelDecision {
    pub y_hat: usize,
    pub mask: bool,
    pub confidence: f64,
    pub ova_inlier_prob: f64,
}

/// A labeled example borrowed from a dataset.
pub type LabeledRef<'a> = (&'a [f64], usize);
/// An unlabeled example with the seeds of its augmented views.
pub type UnlabeledRef<'a> = (&'a [f64], AugSeeds);

fn decide(p: &[f64], q: &[[f64; 2]], rho_conf: f64, rule: LabelRule) -> PseudoLabelDecision {
    let y_hat = match rule {
        LabelRule::Argmax => argmax(p),
        LabelRule::Argmin => argmin(p),
    };
    let confidence = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ova_inlier_prob = q[y_hat][0];
    PseudoLabelDecision {
        y_hat,
        mask: ova_inlier_prob > 0.5 && confidence > rho_conf,
        confidence,
        ova_inlier_prob,
    }
}

/// Pseudo-label and confidence gate for an already weakly augmented view.
pub fn pseudo_label(
    params: &ModelParams,
    x_weak: &[f64],
    rho_conf: f64,
    rule: LabelRule,
) -> Result<PseudoLabelDecision> {
    let pred = forward(params, x_weak)?;
    Ok(decide(&pred.p, &pred.q, rho_conf, rule))
}

/// Supervised per-instance losses (CE, OVA) at `x` with label `y`, adding
/// `scale *` their gradient into `acc` when given.
fn supervised_instance(
    params: &ModelParams,
    x: &[f64],
    y: usize,
    use_ce: bool,
    use_ova: bool,
    acc: Option<(&mut FlatGradient, f64)>,
) -> Result<(f64, f64)> {
    let k = params.layout().k_classes();
    if y >= k {
        return Err(domain(format!("label {y} out of range for {k} classes")));
    }
    let trace = forward_trace(params, x)?;
    let p = &trace.prediction.p;
    let q = &trace.prediction.q;
    let ce = if use_ce { -clog(p[y]) } else { 0.0 };
    let (ova, k_star) = if use_ova {
        let mut k_star = usize::MAX;
        let mut min_log = f64::INFINITY;
        for (kk, qk) in q.iter().enumerate() {
            if kk != y && clog(qk[1]) < min_log {
                min_log = clog(qk[1]);
                k_star = kk;
            }
        }
        (-clog(q[y][0]) - min_log, k_star)
    } else {
        (0.0, usize::MAX)
    };
    if let Some((g, scale)) = acc {
        let d_class = if use_ce {
            let mut d_p = vec![0.0; k];
            d_p[y] = -scale * dclog(p[y]);
            softmax_vjp(p, &d_p)
        } else {
            Vec::new()
        };
        let d_ova = if use_ova {
            let mut d_q = vec![[0.0; 2]; k];
            d_q[y][0] = -scale * dclog(q[y][0]);
            d_q[k_star][1] = -scale * dclog(q[k_star][1]);
            ova_vjp(q, &d_q)
        } else {
            Vec::new()
        };
        backward(params, &trace, &d_class, &d_ova, g);
    }
    Ok((ce, ova))
}

fn supervised_batch(
    params: &ModelParams,
    batch: &[LabeledRef<'_>],
    use_ce: bool,
    use_ova: bool,
    mut acc: Option<&mut FlatGradient>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(domain("supervised loss over an empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for &(x, y) in batch {
        let (ce, ova) = supervised_instance(
            params,
            x,
            y,
            use_ce,
            use_ova,
            acc.as_deref_mut().map(|g| (g, scale)),
        )?;
        total += ce + ova;
    }
    Ok(total * scale)
}

/// Mean cross-entropy `H(y, p(x))` over the batch.
pub fn ce_loss(params: &ModelParams, batch: &[LabeledRef<'_>]) -> Result<f64> {
    supervised_batch(params, batch, true, false, None)
}

/// Mean of `-[log q^y_0(x) + min_{k != y} log q^k_1(x)]` over the batch.
pub fn ova_loss(params: &ModelParams, batch: &[LabeledRef<'_>]) -> Result<f64> {
    supervised_batch(params, batch, false, true, None)
}

/// `ce_loss + ova_loss`.
pub fn supervised_loss(params: &ModelParams, batch: &[LabeledRef<'_>]) -> Result<f64> {
    supervised_batch(params, batch, true, true, None)
}

/// Value and gradient of the supervised loss, with either term switchable.
pub fn supervised_value_and_grad(
    params: &ModelParams,
    batch: &[LabeledRef<'_>],
    use_ce: bool,
    use_ova: bool,
) -> Result<(f64, FlatGradient)> {
    let mut g = FlatGradient::for_params(params);
    let v = supervised_batch(params, batch, use_ce, use_ova, Some(&mut g))?;
    Ok((v, g))
}

/// Per-instance breakdown of the unified unsupervised loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnsupParts {
    pub em: f64,
    pub oc: f64,
    pub fm: f64,
    pub total: f64,
    pub decision: PseudoLabelDecision,
}

fn binary_entropy_grad(qk: &[f64; 2], scale: f64) -> [f64; 2] {
    let d = |p: f64| -scale * (clog(p) + p * dclog(p));
    [d(qk[0]), d(qk[1])]
}

fn binary_entropy(qk: &[f64; 2]) -> f64 {
    -(qk[0] * clog(qk[0]) + qk[1] * clog(qk[1]))
}

/// Unified unsupervised loss `l1*em + l2*oc + l3*fm` on one instance. The
/// pseudo-label and mask come from the first weak view and are treated as
/// constants. Gradients of `scale * total` are added into `acc` when given.
pub fn unsup_instance(
    params: &ModelParams,
    x: &[f64],
    cfg: &UnsupConfig,
    seeds: AugSeeds,
    acc: Option<(&mut FlatGradient, f64)>,
) -> Result<UnsupParts> {
    let w = cfg.weights;
    let views = cfg.augment.pair(x, seeds);
    let t0 = forward_trace(params, &views.a0)?;
    let t1 = forward_trace(params, &views.a1)?;
    let (q0, q1) = (&t0.prediction.q, &t1.prediction.q);

    let em: f64 = q0.iter().chain(q1.iter()).map(binary_entropy).sum();
    let oc: f64 = q0
        .iter()
        .zip(q1)
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum();
    let decision = decide(&t0.prediction.p, q0, cfg.rho_conf, cfg.label_rule);
    let strong = if decision.mask {
        Some(forward_trace(params, &views.strong)?)
    } else {
        None
    };
    let fm = match (&strong, decision.mask) {
        (Some(ts), true) => -clog(ts.prediction.p[decision.y_hat]),
        _ => 0.0,
    };
    let total = w.lambda1 * em + w.lambda2 * oc + w.lambda3 * fm;

    if let Some((g, scale)) = acc {
        let k = q0.len();
        let mut d_q0 = vec![[0.0; 2]; k];
        let mut d_q1 = vec![[0.0; 2]; k];
        if w.lambda1 != 0.0 {
            for kk in 0..k {
                d_q0[kk] = binary_entropy_grad(&q0[kk], scale * w.lambda1);
                d_q1[kk] = binary_entropy_grad(&q1[kk], scale * w.lambda1);
            }
        }
        if w.lambda2 != 0.0 {
            for kk in 0..k {
                for c in 0..2 {
                    let diff = 2.0 * scale * w.lambda2 * (q0[kk][c] - q1[kk][c]);
                    d_q0[kk][c] += diff;
                    d_q1[kk][c] -= diff;
                }
            }
        }
        if w.lambda1 != 0.0 || w.lambda2 != 0.0 {
            backward(params, &t0, &[], &ova_vjp(q0, &d_q0), g);
            backward(params, &t1, &[], &ova_vjp(q1, &d_q1), g);
        }
        if let (Some(ts), true) = (&strong, w.lambda3 != 0.0) {
            let p = &ts.prediction.p;
            let mut d_p = vec![0.0; p.len()];
            d_p[decision.y_hat] = -scale * w.lambda3 * dclog(p[decision.y_hat]);
            backward(params, ts, &softmax_vjp(p, &d_p), &[], g);
        }
    }
    Ok(UnsupParts {
        em,
        oc,
        fm,
        total,
        decision,
    })
}

/// `unsup_instance(..).total` without gradients.
pub fn unsup_loss_instance(
    params: &ModelParams,
    x: &[f64],
    cfg: &UnsupConfig,
    seeds: AugSeeds,
) -> Result<f64> {
    unsup_instance(params, x, cfg, seeds, None).map(|p| p.total)
}

fn unsup_batch(
    params: &ModelParams,
    batch: &[UnlabeledRef<'_>],
    cfg: &UnsupConfig,
    mut acc: Option<&mut FlatGradient>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(domain("unsupervised loss over an empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for &(x, seeds) in batch {
        total += unsup_instance(
            params,
            x,
            cfg,
            seeds,
            acc.as_deref_mut().map(|g| (g, scale)),
        )?
        .total;
    }
    Ok(total * scale)
}

/// Batch-level unified unsupervised loss (mean of per-instance values).
pub fn unsup_loss(
    params: &ModelParams,
    batch: &[UnlabeledRef<'_>],
    cfg: &UnsupConfig,
) -> Result<f64> {
    unsup_batch(params, batch, cfg, None)
}

pub fn unsup_value_and_grad(
    params: &ModelParams,
    batch: &[UnlabeledRef<'_>],
    cfg: &UnsupConfig,
) -> Result<(f64, FlatGradient)> {
    let mut g = FlatGradient::for_params(params);
    let v = unsup_batch(params, batch, cfg, Some(&mut g))?;
    Ok((v, g))
}

/// Mean summed binary entropy of every OVA pair over both weak views.
pub fn em_loss(
    params: &ModelParams,
    batch: &[UnlabeledRef<'_>],
    augment: &AugmentConfig,
) -> Result<f64> {
    let cfg = UnsupConfig {
        weights: LossWeights::EM,
        augment: *augment,
        ..UnsupConfig::default()
    };
    unsup_loss(params, batch, &cfg)
}

/// Mean of `sum_k |q^k(a0) - q^k(a1)|^2` over the batch.
pub fn oc_loss(
    params: &ModelParams,
    batch: &[UnlabeledRef<'_>],
    augment: &AugmentConfig,
) -> Result<f64> {
    let cfg = UnsupConfig {
        weights: LossWeights::OC,
        augment: *augment,
        ..UnsupConfig::default()
    };
    unsup_loss(params, batch, &cfg)
}

/// Mean of `mask * H(onehot(y_hat), p(strong view))`.
pub fn fm_loss(params: &ModelParams, batch: &[UnlabeledRef<'_>], cfg: &UnsupConfig) -> Result<f64> {
    unsup_loss(params, batch, &cfg.with_weights(LossWeights::FM))
}

/// Supervised loss on a fixed batch as an [`Objective`].
pub struct SupervisedObjective<'a> {
    pub batch: &'a [LabeledRef<'a>],
    pub use_ce: bool,
    pub use_ova: bool,
}

impl Objective for SupervisedObjective<'_> {
    fn value(&self, params: &ModelParams) -> Result<f64> {
        supervised_batch(params, self.batch, self.use_ce, self.use_ova, None)
    }

    fn value_and_grad(&self, params: &ModelParams) -> Result<(f64, FlatGradient)> {
        supervised_value_and_grad(params, self.batch, self.use_ce, self.use_ova)
    }
}

/// Unified unsupervised loss on a fixed batch with fixed augmentation seeds.
pub struct UnsupObjective<'a> {
    pub batch: &'a [UnlabeledRef<'a>],
    pub cfg: UnsupConfig,
}

impl Objective for UnsupObjective<'_> {
    fn value(&self, params: &ModelParams) -> Result<f64> {
        unsup_loss(params, self.batch, &self.cfg)
    }

    fn value_and_grad(&self, params: &ModelParams) -> Result<(f64, FlatGradient)> {
        unsup_value_and_grad(params, self.batch, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::init_mlp;

    const LN2: f64 = std::f64::consts::LN_2;

    /// A [3] -> K network whose heads depend only on biases.
    fn bias_only(k: usize, class_bias: &[f64], ova_bias: &[f64]) -> ModelParams {
        let mut p = ModelParams::zeros(&[3], k).unwrap().into_flat();
        let layout = crate::nn::Layout::new(&[3], k).unwrap();
        p[layout.class_head().bias_range()].copy_from_slice(class_bias);
        p[layout.ova_head().bias_range()].copy_from_slice(ova_bias);
        ModelParams::from_flat(&[3], k, 0, p).unwrap()
    }

    fn seeds(i: u64) -> AugSeeds {
        AugSeeds::derive(i, &[])
    }

    const X: [f64; 3] = [0.2, -0.4, 1.0];

    #[test]
    fn ce_of_uniform_is_ln_k() {
        let p = ModelParams::zeros(&[3], 10).unwrap();
        let v = ce_loss(&p, &[(&X, 3)]).unwrap();
        assert!((v - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_of_confident_correct_is_zero() {
        let p = bias_only(3, &[0.0, 800.0, 0.0], &[0.0; 6]);
        assert!(ce_loss(&p, &[(&X, 1)]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ce_is_mean_over_batch() {
        let p = init_mlp(&[3, 4], 3, 2).unwrap();
        let x2 = [1.0, 1.0, -1.0];
        let a = ce_loss(&p, &[(&X, 0)]).unwrap();
        let b = ce_loss(&p, &[(&x2, 2)]).unwrap();
        let both = ce_loss(&p, &[(&X, 0), (&x2, 2)]).unwrap();
        assert!((both - 0.5 * (a + b)).abs() < 1e-12);
    }

    #[test]
    fn empty_batches_are_domain_errors() {
        let p = ModelParams::zeros(&[3], 3).unwrap();
        assert!(matches!(ce_loss(&p, &[]), Err(crate::Error::Domain(_))));
        assert!(matches!(ova_loss(&p, &[]), Err(crate::Error::Domain(_))));
        assert!(matches!(
            unsup_loss(&p, &[], &UnsupConfig::default()),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn ova_closed_forms() {
        // q^y_0 = 1 and q^k_1 = 1 for k != y
        let big = 800.0;
        let p = bias_only(3, &[0.0; 3], &[0.0, -big, 0.0, big, 0.0, big]);
        // class 0: inlier saturated; classes 1, 2: outlier saturated
        assert!(ova_loss(&p, &[(&X, 0)]).unwrap().abs() < 1e-12);
        let half = ModelParams::zeros(&[3], 3).unwrap();
        assert!((ova_loss(&half, &[(&X, 1)]).unwrap() - 2.0 * LN2).abs() < 1e-12);
    }

    #[test]
    fn ova_min_with_two_classes_uses_the_other_class() {
        // q^1_1 = sigmoid(b3 - b2) fixed, only class 1 can be "k != y" when y = 0.
        let p = bias_only(2, &[0.0; 2], &[0.0, 0.0, 0.0, 1.5]);
        let q11 = 1.0 / (1.0 + (-1.5f64).exp());
        let expect = LN2 - q11.ln();
        assert!((ova_loss(&p, &[(&X, 0)]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn em_closed_forms() {
        let k = 4;
        let zero = ModelParams::zeros(&[3], k).unwrap();
        let aug = AugmentConfig::default();
        let v = em_loss(&zero, &[(&X, seeds(0))], &aug).unwrap();
        assert!((v - 2.0 * k as f64 * LN2).abs() < 1e-12);
        let det = bias_only(
            k,
            &[0.0; 4],
            &[900.0, 0.0, 0.0, 900.0, 900.0, 0.0, 0.0, 900.0],
        );
        assert!(em_loss(&det, &[(&X, seeds(0))], &aug).unwrap().abs() < 1e-9);
    }

    #[test]
    fn oc_closed_forms() {
        let no_jitter = AugmentConfig {
            weak_jitter: 0.0,
            strong_jitter: 0.0,
            mask_fraction: 0.0,
        };
        let p = init_mlp(&[3, 5], 3, 4).unwrap();
        assert_eq!(oc_loss(&p, &[(&X, seeds(1))], &no_jitter).unwrap(), 0.0);

        // One-input net whose OVA pairs flip with the sign of the input:
        // view a gives (1, 0), view b gives (0, 1) for every class.
        let k = 2;
        let layout = crate::nn::Layout::new(&[1], k).unwrap();
        let mut flat = vec![0.0; layout.len()];
        let wr = layout.ova_head().weight_range();
        for (i, w) in flat[wr].iter_mut().enumerate() {
            *w = if i % 2 == 0 { 1e3 } else { -1e3 };
        }
        let net = ModelParams::from_flat(&[1], k, 0, flat).unwrap();
        let qa = forward(&net, &[1.0]).unwrap().q;
        let qb = forward(&net, &[-1.0]).unwrap().q;
        let direct: f64 = qa
            .iter()
            .zip(&qb)
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum();
        assert!((direct - 2.0 * k as f64).abs() < 1e-12);
    }

    #[test]
    fn oc_is_symmetric_in_views() {
        let p = init_mlp(&[3, 5], 3, 4).unwrap();
        let aug = AugmentConfig::default();
        let s = seeds(7);
        let swapped = AugSeeds {
            weak0: s.weak1,
            weak1: s.weak0,
            strong: s.strong,
        };
        let a = oc_loss(&p, &[(&X, s)], &aug).unwrap();
        let b = oc_loss(&p, &[(&X, swapped)], &aug).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn pseudo_label_gates() {
        let rule = LabelRule::Argmax;
        let d = decide(&[0.99, 0.01], &[[0.9, 0.1], [0.5, 0.5]], 0.95, rule);
        assert!(d.mask && d.y_hat == 0);
        let d = decide(&[0.99, 0.01], &[[0.4, 0.6], [0.5, 0.5]], 0.95, rule);
        assert!(!d.mask);
        let uniform = ModelParams::zeros(&[3], 10).unwrap();
        let d = pseudo_label(&uniform, &X, 0.2, rule).unwrap();
        assert!((d.confidence - 0.1).abs() < 1e-15);
        assert!(!d.mask);
    }

    #[test]
    fn fm_closed_forms() {
        let zero = ModelParams::zeros(&[3], 10).unwrap();
        let cfg = UnsupConfig::default();
        assert_eq!(fm_loss(&zero, &[(&X, seeds(0))], &cfg).unwrap(), 0.0);

        // confident, inlier, predicted class 2 for every view
        let mut ova = vec![0.0; 6];
        ova[4] = 50.0;
        let p = bias_only(3, &[0.0, 0.0, 900.0], &ova);
        assert!(fm_loss(&p, &[(&X, seeds(0))], &cfg).unwrap().abs() < 1e-12);

        // weak view confident, strong view uniform: the strong view has its first coordinate masked
        let layout = crate::nn::Layout::new(&[1], 10).unwrap();
        let mut flat = vec![0.0; layout.len()];
        flat[layout.class_head().weight_range()][0] = 1e3;
        flat[layout.ova_head().weight_range()][0] = 1e3;
        let net = ModelParams::from_flat(&[1], 10, 0, flat).unwrap();
        let cfg = UnsupConfig {
            augment: AugmentConfig {
                weak_jitter: 0.0,
                strong_jitter: 0.0,
                mask_fraction: 1.0,
            },
            ..UnsupConfig::default()
        };
        let v = fm_loss(&net, &[(&[1.0], seeds(0))], &cfg).unwrap();
        assert!((v - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn supervised_is_sum_of_terms() {
        let p = init_mlp(&[3, 6], 4, 9).unwrap();
        let batch = [(&X[..], 1usize), (&[0.0, 1.0, 2.0][..], 3)];
        let s = supervised_loss(&p, &batch).unwrap();
        let sum = ce_loss(&p, &batch).unwrap() + ova_loss(&p, &batch).unwrap();
        assert!((s - sum).abs() < 1e-12);
        assert!(s.is_finite() && s >= 0.0);
    }

    #[test]
    fn unsup_instance_edge_cases() {
        let p = init_mlp(&[3, 6], 4, 9).unwrap();
        let zero = UnsupConfig::default().with_weights(LossWeights::ZERO);
        assert_eq!(unsup_loss_instance(&p, &X, &zero, seeds(3)).unwrap(), 0.0);

        let still = UnsupConfig {
            augment: AugmentConfig {
                weak_jitter: 0.0,
                strong_jitter: 0.0,
                mask_fraction: 0.0,
            },
            weights: LossWeights::new(0.7, 2.0, 3.0),
            ..UnsupConfig::default()
        };
        let parts = unsup_instance(&p, &X, &still, seeds(3), None).unwrap();
        assert!(!parts.decision.mask);
        assert!((parts.total - 0.7 * parts.em).abs() < 1e-15);
    }

    #[test]
    fn batch_unsup_is_mean_of_instances() {
        let p = init_mlp(&[3, 6], 4, 9).unwrap();
        let cfg = UnsupConfig::default();
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![i as f64 * 0.3, -0.2, 0.5 - i as f64 * 0.1])
            .collect();
        let batch: Vec<UnlabeledRef<'_>> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (&x[..], seeds(i as u64)))
            .collect();
        let mean: f64 = batch
            .iter()
            .map(|&(x, s)| unsup_loss_instance(&p, x, &cfg, s).unwrap())
            .sum::<f64>()
            / 5.0;
        assert!((unsup_loss(&p, &batch, &cfg).unwrap() - mean).abs() < 1e-9);
    }

    #[test]
    fn clamped_logs_stay_finite() {
        let p = bias_only(3, &[-1e4, 1e4, 0.0], &[1e4, -1e4, -1e4, 1e4, 0.0, 0.0]);
        let v = supervised_loss(&p, &[(&X, 0)]).unwrap();
        assert!(v.is_finite() && v > 0.0);
        assert!(v <= 3.0 * -LOG_FLOOR.ln());
        let (_, g) = supervised_value_and_grad(&p, &[(&X, 0)], true, true).unwrap();
        assert!(g.is_finite());
    }
}
