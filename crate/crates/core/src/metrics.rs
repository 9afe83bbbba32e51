//! Evaluation: ID accuracy, OOD AUROC, pseudo-label confusion over the
//! unlabeled set and selection quality against planted flags.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{OpenSetData, UnlabeledItem};
use crate::error::{domain, shape, Result};
use crate::losses::{pseudo_label, LabelRule};
use crate::nn::{forward, ModelParams, Prediction};
use crate::selection::SelectionResult;

/// Fraction of items whose argmax class equals the label.
pub fn top1_accuracy(params: &ModelParams, items: &[(&[f64], usize)]) -> Result<f64> {
    if items.is_empty() {
        return Err(domain("accuracy over an empty set"));
    }
    let mut correct = 0usize;
    for &(x, y) in items {
        if forward(params, x)?.argmax() == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / items.len() as f64)
}

/// How an OOD score is read from the detector head. Higher means more OOD.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodScoreRule {
    /// `q^{y_hat}_1` with `y_hat = argmax p`.
    #[default]
    PredictedOutlier,
    /// `1 - max_k q^k_0`.
    OneMinusMaxInlier,
}

pub fn ood_score_of(pred: &Prediction, rule: OodScoreRule) -> f64 {
    match rule {
        OodScoreRule::PredictedOutlier => pred.q[pred.argmax()][1],
        OodScoreRule::OneMinusMaxInlier => 1.0 - pred.q.iter().map(|q| q[0]).fold(0.0, f64::max),
    }
}

pub fn ood_score(params: &ModelParams, x: &[f64], rule: OodScoreRule) -> Result<f64> {
    Ok(ood_score_of(&forward(params, x)?, rule))
}

/// Mann-Whitney AUROC: `P(ood > id) + P(tie) / 2`, from midranks.
pub fn auroc(scores_id: &[f64], scores_ood: &[f64]) -> Result<f64> {
    if scores_id.is_empty() || scores_ood.is_empty() {
        return Err(domain("AUROC needs at least one ID and one OOD score"));
    }
    let mut all: Vec<(f64, bool)> = scores_id
        .iter()
        .map(|&s| (s, false))
        .chain(scores_ood.iter().map(|&s| (s, true)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(domain("NaN score passed to AUROC"));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_ood = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let mid = (i + j + 2) as f64 / 2.0;
        let n_ood = all[i..=j].iter().filter(|e| e.1).count();
        rank_sum_ood += mid * n_ood as f64;
        i = j + 1;
    }
    let n_ood = scores_ood.len() as f64;
    let n_id = scores_id.len() as f64;
    Ok((rank_sum_ood - n_ood * (n_ood + 1.0) / 2.0) / (n_ood * n_id))
}

/// Rows are hidden truth classes (seen then unseen), columns are the K
/// pseudo-labels plus a final "abstain" column for masked-out instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k_seen: usize,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Collapses every unseen class into one row: a `(K+1) x (K+1)` grid.
    pub fn merged(&self) -> Vec<Vec<usize>> {
        let k = self.k_seen;
        let mut out: Vec<Vec<usize>> = self.counts[..k].to_vec();
        let mut unseen = vec![0; k + 1];
        for row in &self.counts[k..] {
            for (u, c) in unseen.iter_mut().zip(row) {
                *u += c;
            }
        }
        out.push(unseen);
        out
    }

    pub fn write_csv<W: Write>(&self, out: W, merged: bool) -> Result<()> {
        let grid = if merged {
            self.merged()
        } else {
            self.counts.clone()
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["truth".to_string()];
        header.extend((0..self.k_seen).map(|k| format!("pred{k}")));
        header.push("abstain".into());
        w.write_record(&header)?;
        for (r, row) in grid.iter().enumerate() {
            let name = if r < self.k_seen {
                format!("seen{r}")
            } else if merged {
                "unseen".to_string()
            } else {
                format!("unseen{}", r - self.k_seen)
            };
            let mut rec = vec![name];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pseudo-label confusion over `U` on un-augmented inputs.
pub fn unlabeled_confusion(
    params: &ModelParams,
    unlabeled: &[UnlabeledItem],
    k_seen: usize,
    k_unseen: usize,
    rho_conf: f64,
    rule: LabelRule,
) -> Result<ConfusionMatrix> {
    let mut counts = vec![vec![0usize; k_seen + 1]; k_seen + k_unseen];
    for u in unlabeled {
        if u.hidden_truth >= k_seen + k_unseen {
            return Err(domain(format!(
                "hidden truth {} outside the class range",
                u.hidden_truth
            )));
        }
        let d = pseudo_label(params, &u.x, rho_conf, rule)?;
        let col = if d.mask { d.y_hat } else { k_seen };
        counts[u.hidden_truth][col] += 1;
    }
    Ok(ConfusionMatrix { k_seen, counts })
}

/// Accuracy of accepted pseudo-labels; unseen-class items always count as
/// wrong. Zero when nothing passes the gate.
pub fn pseudo_label_accuracy(confusion: &ConfusionMatrix) -> f64 {
    let k = confusion.k_seen;
    let accepted: usize = confusion
        .counts
        .iter()
        .map(|r| r[..k].iter().sum::<usize>())
        .sum();
    if accepted == 0 {
        return 0.0;
    }
    let correct: usize = (0..k).map(|c| confusion.counts[c][c]).sum();
    correct as f64 / accepted as f64
}

/// Precision and recall of clean (non-planted) items in the selected set.
/// An empty selection reports precision 1 and recall 0.
pub fn selection_quality(
    result: &SelectionResult,
    unlabeled: &[UnlabeledItem],
) -> Result<(f64, f64)> {
    if unlabeled.is_empty() {
        return Err(domain(
            "selection quality needs planted flags on a nonempty unlabeled set",
        ));
    }
    if unlabeled.len() != result.scores.scores.len() {
        return Err(shape("selection result does not match the unlabeled set"));
    }
    Ok(clean_precision_recall(&result.selected_mask(), unlabeled))
}

pub(crate) fn clean_precision_recall(selected: &[bool], unlabeled: &[UnlabeledItem]) -> (f64, f64) {
    let n_sel = selected.iter().filter(|&&s| s).count();
    let n_clean = unlabeled.iter().filter(|u| !u.planted_unfriendly).count();
    let hits = unlabeled
        .iter()
        .zip(selected)
        .filter(|(u, &s)| s && !u.planted_unfriendly)
        .count();
    let precision = if n_sel == 0 {
        1.0
    } else {
        hits as f64 / n_sel as f64
    };
    let recall = if n_clean == 0 {
        if n_sel == 0 {
            0.0
        } else {
            1.0
        }
    } else {
        hits as f64 / n_clean as f64
    };
    (precision, recall)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub id_accuracy: f64,
    /// `None` when the test set lacks either ID or OOD items.
    pub auroc: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub pseudo_acc: f64,
    pub selection_precision: f64,
    pub selection_recall: f64,
}

/// Full evaluation of `params` on `data`. `selected` marks `U_t` (all true
/// when no selection is active).
pub fn evaluate(
    params: &ModelParams,
    data: &OpenSetData,
    selected: &[bool],
    rho_conf: f64,
    rule: LabelRule,
    ood_rule: OodScoreRule,
) -> Result<EvalReport> {
    let mut id_items = Vec::new();
    let mut id_scores = Vec::new();
    let mut ood_scores = Vec::new();
    let mut correct = 0usize;
    for t in &data.test {
        let pred = forward(params, &t.x)?;
        let s = ood_score_of(&pred, ood_rule);
        if data.is_seen(t.truth) {
            id_items.push(t);
            id_scores.push(s);
            if pred.argmax() == t.truth {
                correct += 1;
            }
        } else {
            ood_scores.push(s);
        }
    }
    let id_accuracy = if id_items.is_empty() {
        0.0
    } else {
        correct as f64 / id_items.len() as f64
    };
    let auroc = if id_scores.is_empty() || ood_scores.is_empty() {
        None
    } else {
        Some(auroc(&id_scores, &ood_scores)?)
    };
    let confusion = unlabeled_confusion(
        params,
        &data.unlabeled,
        data.k_seen,
        data.k_unseen,
        rho_conf,
        rule,
    )?;
    let pseudo_acc = pseudo_label_accuracy(&confusion);
    let (selection_precision, selection_recall) = if data.unlabeled.is_empty() {
        (1.0, 0.0)
    } else {
        if selected.len() != data.unlabeled.len() {
            return Err(shape("selection mask does not match the unlabeled set"));
        }
        clean_precision_recall(selected, &data.unlabeled)
    };
    Ok(EvalReport {
        id_accuracy,
        auroc,
        confusion,
        pseudo_acc,
        selection_precision,
        selection_recall,
    })
}
