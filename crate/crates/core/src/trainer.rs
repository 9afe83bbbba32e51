//! The periodic-selection training loop.
//!
//! Every `e_s` epochs (starting at epoch 0, before any update) the unlabeled
//! subset `U_t` is recomputed with the configured mechanism; in between it is
//! carried over unchanged. Each iteration samples a labeled batch from `S`
//! and an unlabeled batch from `U_t` (uniformly, with replacement), takes the
//! gradient of `L_s + L_u` and applies one Nesterov SGD step. The learning
//! rate follows the cosine schedule per epoch.
//!
//! `selection = none` gives the vanilla objective on all of `U`; `gv` with
//! `e_s = 1` is full gradient-variance selection, `gv` with `e_s > 1` the
//! economical stale-selection variant, and `loss` the loss-based variant.

use std::io::Write;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AugSeeds, AugmentConfig, OpenSetData};
use crate::error::{config, domain, numeric, Result};
use crate::losses::{
    supervised_value_and_grad, unsup_value_and_grad, LabelRule, LabeledRef, LossWeights,
    UnlabeledRef, UnsupConfig,
};
use crate::metrics::{evaluate, EvalReport, OodScoreRule};
use crate::nn::{cosine_lr, init_mlp, sgd_step, ModelParams, Velocity};
use crate::rng::{derive_seed, rng_from};
use crate::selection::{
    scoring_seeds, select, GradScope, Mechanism, SelectionResult, ThresholdPolicy,
};

const INIT_TAG: u64 = 1;
const SAMPLE_TAG: u64 = 2;
const AUG_TAG: u64 = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    None,
    Gv,
    Loss,
}

impl SelectionMode {
    pub fn mechanism(self) -> Option<Mechanism> {
        match self {
            SelectionMode::None => None,
            SelectionMode::Gv => Some(Mechanism::GradientVariance),
            SelectionMode::Loss => Some(Mechanism::Loss),
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_l: usize,
    pub batch_u: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub selection: SelectionMode,
    pub threshold: ThresholdPolicy,
    pub e_s: usize,
    pub weights: LossWeights,
    pub rho_conf: f64,
    pub seed: u64,
    /// Hidden widths of the tanh trunk; input width comes from the data.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub label_rule: LabelRule,
    #[serde(default)]
    pub ood_rule: OodScoreRule,
    #[serde(default)]
    pub grad_scope: GradScope,
    /// Include the one-vs-all term in the supervised loss.
    #[serde(default = "default_true")]
    pub supervised_ova: bool,
    /// When set, the dataset must have exactly this input width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            iters_per_epoch: 32,
            batch_l: 64,
            batch_u: 128,
            lr0: 0.03,
            momentum: 0.9,
            selection: SelectionMode::None,
            threshold: ThresholdPolicy::Otsu,
            e_s: 1,
            weights: LossWeights::default(),
            rho_conf: 0.95,
            seed: 0,
            hidden: default_hidden(),
            augment: AugmentConfig::default(),
            label_rule: LabelRule::Argmax,
            ood_rule: OodScoreRule::PredictedOutlier,
            grad_scope: GradScope::Full,
            supervised_ova: true,
            input_dim: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_l == 0 || self.batch_u == 0 {
            return Err(config("batch sizes must be >= 1"));
        }
        if self.e_s == 0 {
            return Err(config("selection interval e_s must be >= 1"));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(config("lr0 must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config("momentum must lie in [0, 1)"));
        }
        if self.hidden.contains(&0) {
            return Err(config("hidden widths must be positive"));
        }
        if let ThresholdPolicy::Topk { k } = self.threshold {
            if k == 0 {
                return Err(config("top-k threshold needs k >= 1"));
            }
        }
        self.unsup_config().validate()
    }

    pub fn unsup_config(&self) -> UnsupConfig {
        UnsupConfig {
            weights: self.weights,
            rho_conf: self.rho_conf,
            label_rule: self.label_rule,
            augment: self.augment,
        }
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.hidden.iter().copied())
            .collect()
    }
}

/// One row of the per-epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_s: f64,
    pub loss_u: f64,
    pub selected_count: usize,
    pub id_acc: f64,
    pub auroc: Option<f64>,
    pub pseudo_acc: f64,
    pub sel_precision: f64,
    pub sel_recall: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
}

pub const METRICS_COLUMNS: [&str; 10] = [
    "epoch",
    "lr",
    "loss_s",
    "loss_u",
    "selected_count",
    "id_acc",
    "auroc",
    "pseudo_acc",
    "sel_precision",
    "sel_recall",
];

impl MetricsLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// One row per epoch; a missing AUROC is written as an empty field.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(METRICS_COLUMNS)?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.lr.to_string(),
                r.loss_s.to_string(),
                r.loss_u.to_string(),
                r.selected_count.to_string(),
                r.id_acc.to_string(),
                r.auroc.map(|a| a.to_string()).unwrap_or_default(),
                r.pseudo_acc.to_string(),
                r.sel_precision.to_string(),
                r.sel_recall.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub params: ModelParams,
    pub log: MetricsLog,
    /// One entry per selection epoch, in order.
    pub selections: Vec<SelectionResult>,
    pub final_report: Option<EvalReport>,
}

fn sample_indices<R: Rng>(rng: &mut R, pool: &[usize], n: usize) -> Vec<usize> {
    (0..n)
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect()
}

/// Runs the training loop on `data`.
pub fn train(cfg: &TrainConfig, data: &OpenSetData) -> Result<TrainRun> {
    cfg.validate()?;
    if let Some(d) = cfg.input_dim {
        if d != data.dim {
            return Err(config(format!(
                "config expects input_dim {d} but the dataset has {}",
                data.dim
            )));
        }
    }
    if data.labeled.is_empty() {
        return Err(domain("training needs a nonempty labeled set"));
    }
    let mechanism = cfg.selection.mechanism();
    if mechanism.is_some() && data.unlabeled.is_empty() {
        return Err(domain("selection is active but the unlabeled set is empty"));
    }
    let ucfg = cfg.unsup_config();
    let labeled: Vec<LabeledRef<'_>> = data.labeled.iter().map(|s| (&s.x[..], s.label)).collect();
    let all_u: Vec<usize> = (0..data.unlabeled.len()).collect();
    let all_l: Vec<usize> = (0..labeled.len()).collect();

    let mut params = init_mlp(
        &cfg.layer_sizes(data.dim),
        data.k_seen,
        derive_seed(cfg.seed, &[INIT_TAG]),
    )?;
    let mut velocity = Velocity::zeros(params.len());
    let mut rng = rng_from(derive_seed(cfg.seed, &[SAMPLE_TAG]));
    let mut u_t: Vec<usize> = all_u.clone();
    let mut selections = Vec::new();
    let mut log = MetricsLog::default();
    let mut final_report = None;

    for t in 0..cfg.epochs {
        if let Some(mech) = mechanism {
            if t % cfg.e_s == 0 {
                let refs: Vec<UnlabeledRef<'_>> = data
                    .unlabeled
                    .iter()
                    .map(|u| (&u.x[..], scoring_seeds(cfg.seed, t, u.idx)))
                    .collect();
                let result = select(
                    &params,
                    &refs,
                    &labeled,
                    &ucfg,
                    mech,
                    cfg.threshold,
                    t,
                    cfg.grad_scope,
                )?;
                u_t = result.selected.clone();
                selections.push(result);
            }
            if u_t.is_empty() {
                warn!("epoch {t}: selected subset is empty, skipping the unsupervised term");
            }
        }
        let lr = cosine_lr(t, cfg.epochs, cfg.lr0)?;
        let (mut sum_s, mut sum_u) = (0.0, 0.0);
        for it in 0..cfg.iters_per_epoch {
            let b_l = sample_indices(&mut rng, &all_l, cfg.batch_l);
            let b_u = if u_t.is_empty() {
                Vec::new()
            } else {
                sample_indices(&mut rng, &u_t, cfg.batch_u)
            };
            let batch_l: Vec<LabeledRef<'_>> = b_l.iter().map(|&i| labeled[i]).collect();
            let (ls, mut g) =
                supervised_value_and_grad(&params, &batch_l, true, cfg.supervised_ova)?;
            let mut lu = 0.0;
            if !b_u.is_empty() && !ucfg.weights.is_zero() {
                let batch_u: Vec<UnlabeledRef<'_>> = b_u
                    .iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let seeds =
                            AugSeeds::derive(cfg.seed, &[AUG_TAG, t as u64, it as u64, j as u64]);
                        (&data.unlabeled[i].x[..], seeds)
                    })
                    .collect();
                let (v, gu) = unsup_value_and_grad(&params, &batch_u, &ucfg)?;
                lu = v;
                g.axpy(1.0, &gu);
            }
            if !ls.is_finite() || !lu.is_finite() {
                return Err(numeric(format!(
                    "non-finite loss at epoch {t}, iteration {it}"
                )));
            }
            sum_s += ls;
            sum_u += lu;
            let (next, v) = sgd_step(&params, &g, lr, cfg.momentum, &velocity)?;
            params = next;
            velocity = v;
        }
        let mut selected_mask = vec![false; data.unlabeled.len()];
        for &i in &u_t {
            selected_mask[i] = true;
        }
        let report = evaluate(
            &params,
            data,
            &selected_mask,
            cfg.rho_conf,
            cfg.label_rule,
            cfg.ood_rule,
        )?;
        let iters = cfg.iters_per_epoch.max(1) as f64;
        log.records.push(EpochRecord {
            epoch: t,
            lr,
            loss_s: sum_s / iters,
            loss_u: sum_u / iters,
            selected_count: u_t.len(),
            id_acc: report.id_accuracy,
            auroc: report.auroc,
            pseudo_acc: report.pseudo_acc,
            sel_precision: report.selection_precision,
            sel_recall: report.selection_recall,
        });
        final_report = Some(report);
    }
    Ok(TrainRun {
        params,
        log,
        selections,
        final_report,
    })
}

/// Same loop trained with cross-entropy on labeled batches only.
pub fn baseline_labeled_only(cfg: &TrainConfig, data: &OpenSetData) -> Result<TrainRun> {
    let mut c = cfg.clone();
    c.weights = LossWeights::ZERO;
    c.supervised_ova = false;
    c.selection = SelectionMode::None;
    train(&c, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_openset_mixture, OpenSetConfig};

    fn small_data() -> OpenSetData {
        make_openset_mixture(&OpenSetConfig {
            dim: 6,
            k_seen: 3,
            k_unseen: 2,
            labels_per_class: 5,
            unlabeled_per_class: 12,
            val_per_class: 2,
            test_per_class: 10,
            cluster_separation: 3.0,
            cluster_stddev: 0.4,
            unfriendly_fraction: 0.1,
            unfriendly_noise_scale: 10.0,
            seed: 3,
        })
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 4,
            iters_per_epoch: 3,
            batch_l: 8,
            batch_u: 16,
            lr0: 0.05,
            hidden: vec![8],
            rho_conf: 0.6,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let data = small_data();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let run = train(&cfg, &data).unwrap();
        let init = init_mlp(
            &cfg.layer_sizes(data.dim),
            data.k_seen,
            derive_seed(cfg.seed, &[INIT_TAG]),
        )
        .unwrap();
        assert_eq!(run.params.as_flat(), init.as_flat());
        assert!(run.log.records.is_empty());
    }

    #[test]
    fn selection_none_uses_all_of_u() {
        let data = small_data();
        let run = train(&small_cfg(), &data).unwrap();
        assert_eq!(run.log.records.len(), 4);
        assert!(run.selections.is_empty());
        for (t, r) in run.log.records.iter().enumerate() {
            assert_eq!(r.epoch, t);
            assert_eq!(r.selected_count, data.unlabeled.len());
            assert!(r.loss_s.is_finite() && r.loss_u.is_finite());
        }
    }

    #[test]
    fn stale_selection_recomputes_on_schedule() {
        let data = small_data();
        let cfg = TrainConfig {
            epochs: 25,
            iters_per_epoch: 1,
            selection: SelectionMode::Gv,
            e_s: 10,
            ..small_cfg()
        };
        let run = train(&cfg, &data).unwrap();
        let epochs: Vec<usize> = run.selections.iter().map(|s| s.scores.epoch).collect();
        assert_eq!(epochs, vec![0, 10, 20]);
        for r in &run.log.records {
            let last = &run.selections[r.epoch / 10];
            assert_eq!(r.selected_count, last.selected.len());
        }
    }

    #[test]
    fn replay_is_byte_identical() {
        let data = small_data();
        let cfg = TrainConfig {
            selection: SelectionMode::Loss,
            ..small_cfg()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        train(&cfg, &data).unwrap().log.write_csv(&mut a).unwrap();
        train(&cfg, &data).unwrap().log.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let header = String::from_utf8(a).unwrap();
        assert!(header.starts_with("epoch,lr,loss_s,loss_u,selected_count,id_acc,auroc,pseudo_acc,sel_precision,sel_recall\n"));
    }

    #[test]
    fn baseline_matches_zero_weight_training() {
        let data = small_data();
        let cfg = small_cfg();
        let base = baseline_labeled_only(&cfg, &data).unwrap();
        let manual = train(
            &TrainConfig {
                weights: LossWeights::ZERO,
                supervised_ova: false,
                ..cfg.clone()
            },
            &data,
        )
        .unwrap();
        assert_eq!(base.params.as_flat(), manual.params.as_flat());
        assert_eq!(base.log, manual.log);
        assert!(base.log.records.iter().all(|r| r.loss_u == 0.0));
    }

    #[test]
    fn rejects_bad_configs() {
        let data = small_data();
        for cfg in [
            TrainConfig {
                e_s: 0,
                ..small_cfg()
            },
            TrainConfig {
                batch_l: 0,
                ..small_cfg()
            },
            TrainConfig {
                momentum: 1.0,
                ..small_cfg()
            },
            TrainConfig {
                input_dim: Some(7),
                ..small_cfg()
            },
        ] {
            assert!(matches!(train(&cfg, &data), Err(crate::Error::Config(_))));
        }
        let mut empty_u = data.clone();
        empty_u.unlabeled.clear();
        let cfg = TrainConfig {
            selection: SelectionMode::Gv,
            ..small_cfg()
        };
        assert!(matches!(
            train(&cfg, &empty_u),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        let mut v = serde_json::to_value(small_cfg()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<TrainConfig>(v).is_err());
    }
}
