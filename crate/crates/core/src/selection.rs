//! Selection of friendly unlabeled data.
//!
//! Each unlabeled instance gets a score: either the squared distance between
//! its unsupervised-loss gradient and the mean labeled gradient (GV-SM), or
//! its unified unsupervised loss (L-SM). A threshold `rho` is then chosen by
//! Top-k or Otsu, and the instances with `score < rho` form the selected set.
//!
//! Scores are a pure map over `U` against a fixed parameter snapshot, so they
//! are computed on the ambient rayon pool. Reductions run sequentially in
//! index order, which keeps results bit-identical for any thread count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AugSeeds, UnlabeledItem};
use crate::error::{config, domain, shape, Result};
use crate::losses::{
    supervised_value_and_grad, unsup_instance, LabeledRef, UnlabeledRef, UnsupConfig,
};
use crate::nn::{FlatGradient, ModelParams};
use crate::rng::derive_seed;

/// Threshold meaning "select everything".
pub const SELECT_ALL: f64 = f64::INFINITY;

const SCORE_TAG: u64 = 0x0005_C04E;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Squared gradient distance to the mean labeled gradient.
    #[serde(rename = "gv")]
    GradientVariance,
    /// Per-instance unified unsupervised loss.
    Loss,
}

impl Mechanism {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mechanism::GradientVariance => "gv",
            Mechanism::Loss => "loss",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdPolicy {
    /// Discard the `k` largest scores.
    Topk {
        k: usize,
    },
    Otsu,
}

/// Which parameters the per-instance gradients range over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradScope {
    #[default]
    Full,
    /// Both heads only; trunk entries are zeroed. Faster, approximate.
    HeadsOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub mechanism: Mechanism,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub rho_t: f64,
    /// Positions into `U` with `score < rho_t`, ascending.
    pub selected: Vec<usize>,
    /// Positions into `U` with `score >= rho_t`, ascending.
    pub discarded: Vec<usize>,
    pub scores: ScoreVector,
}

impl SelectionResult {
    pub fn selected_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.scores.scores.len()];
        for &i in &self.selected {
            mask[i] = true;
        }
        mask
    }
}

/// Augmentation seeds used when scoring instance `idx` at `epoch`.
pub fn scoring_seeds(run_seed: u64, epoch: usize, idx: usize) -> AugSeeds {
    AugSeeds::derive(
        derive_seed(run_seed, &[SCORE_TAG]),
        &[epoch as u64, idx as u64],
    )
}

fn restrict(mut g: FlatGradient, params: &ModelParams, scope: GradScope) -> FlatGradient {
    if scope == GradScope::HeadsOnly {
        let heads = params.layout().heads_range();
        let s = g.as_mut_slice();
        s[..heads.start].iter_mut().for_each(|v| *v = 0.0);
    }
    g
}

/// Mean over `S` of the per-instance supervised gradient.
pub fn mean_labeled_gradient(
    params: &ModelParams,
    labeled: &[LabeledRef<'_>],
) -> Result<FlatGradient> {
    if labeled.is_empty() {
        return Err(domain("mean labeled gradient needs a nonempty labeled set"));
    }
    let per: Vec<FlatGradient> = labeled
        .par_iter()
        .map(|&item| {
            supervised_value_and_grad(params, std::slice::from_ref(&item), true, true)
                .map(|(_, g)| g)
        })
        .collect::<Result<_>>()?;
    let mut acc = FlatGradient::for_params(params);
    for g in &per {
        acc.axpy(1.0, g);
    }
    acc.scale(1.0 / labeled.len() as f64);
    Ok(acc)
}

/// Gradient of the unified unsupervised loss at a single instance.
pub fn instance_unsup_gradient(
    params: &ModelParams,
    x: &[f64],
    cfg: &UnsupConfig,
    seeds: AugSeeds,
) -> Result<FlatGradient> {
    let mut g = FlatGradient::for_params(params);
    unsup_instance(params, x, cfg, seeds, Some((&mut g, 1.0)))?;
    Ok(g)
}

/// GV-SM scores `|g_x - g_bar|^2` for every unlabeled instance.
pub fn gv_scores(
    params: &ModelParams,
    unlabeled: &[UnlabeledRef<'_>],
    labeled: &[LabeledRef<'_>],
    cfg: &UnsupConfig,
    epoch: usize,
    scope: GradScope,
) -> Result<ScoreVector> {
    if unlabeled.is_empty() {
        return Err(domain(
            "gradient-variance scores need a nonempty unlabeled set",
        ));
    }
    let g_bar = restrict(mean_labeled_gradient(params, labeled)?, params, scope);
    let scores = unlabeled
        .par_iter()
        .map(|&(x, seeds)| {
            let g = restrict(
                instance_unsup_gradient(params, x, cfg, seeds)?,
                params,
                scope,
            );
            Ok(g.dist_sq(&g_bar))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScoreVector {
        scores,
        mechanism: Mechanism::GradientVariance,
        epoch,
    })
}

/// L-SM scores: the unified unsupervised loss of every unlabeled instance.
pub fn loss_scores(
    params: &ModelParams,
    unlabeled: &[UnlabeledRef<'_>],
    cfg: &UnsupConfig,
    epoch: usize,
) -> Result<ScoreVector> {
    if unlabeled.is_empty() {
        return Err(domain("loss scores need a nonempty unlabeled set"));
    }
    let scores = unlabeled
        .par_iter()
        .map(|&(x, seeds)| unsup_instance(params, x, cfg, seeds, None).map(|p| p.total))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScoreVector {
        scores,
        mechanism: Mechanism::Loss,
        epoch,
    })
}

/// The `k`-th largest score.
pub fn topk_threshold(scores: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > scores.len() {
        return Err(config(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            scores.len()
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[k - 1])
}

/// Relative slack under which two between-class variances count as tied.
pub const OTSU_TIE_RTOL: f64 = 1e-12;

/// Midpoint of two sorted distinct values that still separates them under `<`.
pub(crate) fn separating_midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo && mid <= hi {
        mid
    } else {
        hi
    }
}

/// Otsu threshold on continuous scores.
///
/// Candidate cuts sit between consecutive distinct sorted values; the cut
/// maximising `w_low * w_high * (mu_low - mu_high)^2` is returned as the
/// midpoint of the pair it straddles. Near-ties (within [`OTSU_TIE_RTOL`])
/// go to the lowest cut. If every score is equal the result is
/// [`SELECT_ALL`].
pub fn otsu_threshold(scores: &[f64]) -> Result<f64> {
    if scores.len() < 2 {
        return Err(config("Otsu threshold needs at least two scores"));
    }
    if let Some(v) = scores.iter().find(|v| !v.is_finite()) {
        return Err(domain(format!("non-finite score {v}")));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let total: f64 = s.iter().sum();
    let mut prefix = 0.0;
    let mut cuts: Vec<(usize, f64)> = Vec::new();
    for i in 1..s.len() {
        prefix += s[i - 1];
        if s[i - 1] < s[i] {
            let n_low = i as f64;
            let mu_low = prefix / n_low;
            let mu_high = (total - prefix) / (n - n_low);
            let var = (n_low / n) * ((n - n_low) / n) * (mu_low - mu_high).powi(2);
            cuts.push((i, var));
        }
    }
    let best = cuts.iter().map(|c| c.1).fold(0.0, f64::max);
    if cuts.is_empty() || best <= 0.0 {
        return Ok(SELECT_ALL);
    }
    let (i, _) = cuts
        .iter()
        .find(|c| c.1 >= best * (1.0 - OTSU_TIE_RTOL))
        .copied()
        .unwrap();
    Ok(separating_midpoint(s[i - 1], s[i]))
}

pub fn threshold(scores: &[f64], policy: ThresholdPolicy) -> Result<f64> {
    match policy {
        ThresholdPolicy::Topk { k } => topk_threshold(scores, k),
        ThresholdPolicy::Otsu => otsu_threshold(scores),
    }
}

/// Partitions `U` into `score < rho` (selected) and the rest.
pub fn apply_selection(
    n_unlabeled: usize,
    scores: ScoreVector,
    rho: f64,
) -> Result<SelectionResult> {
    if scores.scores.len() != n_unlabeled {
        return Err(shape(format!(
            "{} scores for {} unlabeled instances",
            scores.scores.len(),
            n_unlabeled
        )));
    }
    let (selected, discarded): (Vec<usize>, Vec<usize>) =
        (0..n_unlabeled).partition(|&i| scores.scores[i] < rho);
    Ok(SelectionResult {
        rho_t: rho,
        selected,
        discarded,
        scores,
    })
}

/// Gradient-variance membership in norm form: `|g - g_bar| < sqrt(rho)`.
pub fn gv_member_by_norm(distance: f64, rho: f64) -> bool {
    distance < rho.sqrt()
}

/// Scores `U`, picks the threshold and applies it.
#[allow(clippy::too_many_arguments)]
pub fn select(
    params: &ModelParams,
    unlabeled: &[UnlabeledRef<'_>],
    labeled: &[LabeledRef<'_>],
    cfg: &UnsupConfig,
    mechanism: Mechanism,
    policy: ThresholdPolicy,
    epoch: usize,
    scope: GradScope,
) -> Result<SelectionResult> {
    let scores = match mechanism {
        Mechanism::GradientVariance => gv_scores(params, unlabeled, labeled, cfg, epoch, scope)?,
        Mechanism::Loss => loss_scores(params, unlabeled, cfg, epoch)?,
    };
    let rho = threshold(&scores.scores, policy)?;
    apply_selection(unlabeled.len(), scores, rho)
}

/// Writes `epoch,idx,score,selected,hidden_truth,planted_unfriendly` rows.
pub fn write_selection_csv<W: Write>(
    result: &SelectionResult,
    unlabeled: &[UnlabeledItem],
    out: W,
) -> Result<()> {
    if unlabeled.len() != result.scores.scores.len() {
        return Err(shape("selection result does not match the unlabeled set"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "epoch",
        "idx",
        "score",
        "selected",
        "hidden_truth",
        "planted_unfriendly",
    ])?;
    let mask = result.selected_mask();
    for (i, u) in unlabeled.iter().enumerate() {
        w.write_record([
            result.scores.epoch.to_string(),
            u.idx.to_string(),
            result.scores.scores[i].to_string(),
            (mask[i] as u8).to_string(),
            u.hidden_truth.to_string(),
            (u.planted_unfriendly as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
