//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails unexpectedly.
//!
//! A criterion listed in [`KNOWN_FAILURES`] still prints FAIL with its
//! measured numbers; it just does not abort the workspace test run. Its
//! threshold is the same as for every other criterion.
//!
//! Every check recomputes its target from an independent oracle where one
//! exists (brute-force searches, closed-form bounds, a separate least-squares
//! fit) instead of trusting the flags reported by the library.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use openset_core::data::{
    make_openset_mixture, AugSeeds, AugmentConfig, OpenSetConfig, OpenSetData,
};
use openset_core::losses::{
    pseudo_label, LabelRule, LabeledRef, LossWeights, SupervisedObjective, UnlabeledRef,
    UnsupConfig, UnsupObjective,
};
use openset_core::metrics::{auroc, selection_quality};
use openset_core::nn::{finite_diff_grad, grad, init_mlp, max_relative_error, Objective};
use openset_core::rng::{derive_seed, gaussian_vec};
use openset_core::selection::{
    apply_selection, otsu_threshold, topk_threshold, Mechanism, ScoreVector, SELECT_ALL,
};
use openset_core::theory::report::{
    conformance_study, drift_study, lsm_study, proof_step_study, rate_study, stall_study,
};
use openset_core::theory::{OracleKind, OracleSpec, TheoryCase, TheoryConfig};
use openset_core::trainer::{baseline_labeled_only, train, SelectionMode, TrainConfig};

type Check = Result<String, String>;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load<T: serde::de::DeserializeOwned>(name: &str) -> T {
    let path = repo_root().join("configs").join(name);
    serde_json::from_str(&fs::read_to_string(&path).expect("config present"))
        .expect("config parses")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1 ------------------------------------------------------------------------

fn gradient_correctness() -> Check {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut worst: f64 = 0.0;
    let mut fm_active = 0;
    let nets = 25;
    for seed in 0..nets {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let dim = rng.random_range(2..6);
        let mut sizes = vec![dim];
        for _ in 0..rng.random_range(1..3) {
            sizes.push(rng.random_range(2..6));
        }
        let k = rng.random_range(2..5);
        let p0 = init_mlp(&sizes, k, seed).map_err(|e| e.to_string())?;
        let params = p0
            .with_flat(p0.as_flat().iter().map(|w| 2.5 * w).collect())
            .unwrap();
        let gauss = |rng: &mut ChaCha8Rng| gaussian_vec(rng, dim);
        let xs_l: Vec<(Vec<f64>, usize)> = (0..rng.random_range(1..5))
            .map(|_| (gauss(&mut rng), rng.random_range(0..k)))
            .collect();
        let xs_u: Vec<(Vec<f64>, AugSeeds)> = (0..rng.random_range(1..5))
            .map(|i| (gauss(&mut rng), AugSeeds::derive(seed, &[i])))
            .collect();
        let lb: Vec<LabeledRef<'_>> = xs_l.iter().map(|(x, y)| (&x[..], *y)).collect();
        let ub: Vec<UnlabeledRef<'_>> = xs_u.iter().map(|(x, s)| (&x[..], *s)).collect();
        let ucfg = |weights| UnsupConfig {
            weights,
            rho_conf: 0.3,
            label_rule: LabelRule::Argmax,
            augment: AugmentConfig {
                weak_jitter: 0.05,
                strong_jitter: 0.2,
                mask_fraction: 0.25,
            },
        };
        let objectives: Vec<(&str, Box<dyn Objective + '_>)> = vec![
            (
                "ce",
                Box::new(SupervisedObjective {
                    batch: &lb,
                    use_ce: true,
                    use_ova: false,
                }),
            ),
            (
                "ova",
                Box::new(SupervisedObjective {
                    batch: &lb,
                    use_ce: false,
                    use_ova: true,
                }),
            ),
            (
                "em",
                Box::new(UnsupObjective {
                    batch: &ub,
                    cfg: ucfg(LossWeights::EM),
                }),
            ),
            (
                "oc",
                Box::new(UnsupObjective {
                    batch: &ub,
                    cfg: ucfg(LossWeights::OC),
                }),
            ),
            (
                "fm",
                Box::new(UnsupObjective {
                    batch: &ub,
                    cfg: ucfg(LossWeights::FM),
                }),
            ),
            (
                "unified",
                Box::new(UnsupObjective {
                    batch: &ub,
                    cfg: ucfg(LossWeights::new(0.7, 0.4, 1.3)),
                }),
            ),
        ];
        for (name, obj) in &objectives {
            let a = grad(&params, obj.as_ref()).map_err(|e| format!("{name}: {e}"))?;
            let n =
                finite_diff_grad(&params, obj.as_ref(), H).map_err(|e| format!("{name}: {e}"))?;
            let err = max_relative_error(&a, &n, 1e-6);
            ensure(err < TOL, || {
                format!("{name} on net {seed}: relative error {err:.2e}")
            })?;
            worst = worst.max(err);
        }
        let aug = ucfg(LossWeights::FM).augment;
        for (x, s) in &xs_u {
            if pseudo_label(&params, &aug.weak(x, s.weak0), 0.3, LabelRule::Argmax)
                .unwrap()
                .mask
            {
                fm_active += 1;
            }
        }
    }
    ensure(fm_active > 0, || {
        "no instance exercised the masked consistency term".into()
    })?;
    Ok(format!(
        "{nets} nets x 6 losses, worst relative error {worst:.2e}"
    ))
}

// 2 ------------------------------------------------------------------------

/// Exhaustive cut search computed directly from each partition, with the
/// same lowest-cut rule for near ties.
fn otsu_brute(scores: &[f64]) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let n = scores.len() as f64;
    let mut cands: Vec<(f64, f64, f64)> = Vec::new();
    for w in s.windows(2) {
        let (lo, hi): (Vec<f64>, Vec<f64>) = scores.iter().partition(|&&v| v <= w[0]);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (wl, wh) = (lo.len() as f64 / n, hi.len() as f64 / n);
        let var = wl * wh * (mean(&lo) - mean(&hi)).powi(2);
        cands.push((var, w[0], w[1]));
    }
    let best = cands.iter().map(|c| c.0).fold(0.0, f64::max);
    if best <= 0.0 {
        return SELECT_ALL;
    }
    let &(_, lo, hi) = cands.iter().find(|c| c.0 >= best * (1.0 - 1e-12)).unwrap();
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo && mid <= hi {
        mid
    } else {
        hi
    }
}

fn otsu_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ties = 0;
    for case in 0..100 {
        let len: usize = if case < 2 {
            2 + case
        } else {
            rng.random_range(2..=500)
        };
        let scores: Vec<f64> = match case % 4 {
            // Continuous scores.
            0 => (0..len).map(|_| rng.random_range(0.0..10.0)).collect(),
            // Many duplicates.
            1 => (0..len).map(|_| rng.random_range(0..6) as f64).collect(),
            // Mirror-symmetric: cut i and cut n-i have equal variance.
            2 => {
                let half: Vec<f64> = (0..len / 2)
                    .map(|_| rng.random_range(0..20) as f64)
                    .collect();
                half.iter()
                    .copied()
                    .chain(half.iter().map(|v| 40.0 - v))
                    .collect()
            }
            // Heavy tailed, like squared gradient distances.
            _ => (0..len)
                .map(|_| (-rng.random::<f64>().ln()).powi(3))
                .collect(),
        };
        let got = otsu_threshold(&scores).map_err(|e| e.to_string())?;
        let want = otsu_brute(&scores);
        ensure(got == want, || {
            format!(
                "vector {case} (len {}): got {got}, exhaustive {want}",
                scores.len()
            )
        })?;
        if case % 4 == 2 {
            ties += 1;
        }
    }
    // A hand-built exact tie: cuts after the zeros and after the 5 both give 50/3.
    let tie = [0.0, 0.0, 5.0, 10.0, 10.0];
    let (got, want) = (otsu_threshold(&tie).unwrap(), otsu_brute(&tie));
    ensure(got == want && got == 2.5, || {
        format!("exact tie: got {got}, exhaustive {want}")
    })?;
    ensure(otsu_threshold(&[3.0; 7]).unwrap() == SELECT_ALL, || {
        "constant scores must select all".into()
    })?;
    Ok(format!(
        "100 vectors ({ties} mirror-symmetric) plus exact-tie and constant cases match"
    ))
}

// 3 ------------------------------------------------------------------------

fn topk_cardinality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for v in 0..50 {
        let n = rng.random_range(2..=200);
        let mut scores: Vec<f64> = (0..n)
            .map(|i| i as f64 + rng.random::<f64>() * 0.5)
            .collect();
        scores.shuffle(&mut rng);
        for k in 1..=n {
            let rho = topk_threshold(&scores, k).map_err(|e| e.to_string())?;
            let sv = ScoreVector {
                scores: scores.clone(),
                mechanism: Mechanism::GradientVariance,
                epoch: 0,
            };
            let r = apply_selection(n, sv, rho).map_err(|e| e.to_string())?;
            ensure(r.discarded.len() == k, || {
                format!("vector {v}: k={k} discarded {}", r.discarded.len())
            })?;
            // The discarded set must be exactly the k largest scores.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            let mut top: Vec<usize> = order[..k].to_vec();
            top.sort_unstable();
            ensure(top == r.discarded, || {
                format!("vector {v}: k={k} discarded the wrong items")
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (vector, k) pairs discard exactly k"))
}

// 4 ------------------------------------------------------------------------

fn auroc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for set in 0..100 {
        let total = rng.random_range(2..=500);
        let n_id = rng.random_range(1..total);
        let coarse = set % 2 == 0;
        let mut draw = |shift: f64| {
            if coarse {
                (rng.random_range(0..8) as f64) + shift
            } else {
                rng.random::<f64>() + shift * 0.3
            }
        };
        let id: Vec<f64> = (0..n_id).map(|_| draw(0.0)).collect();
        let ood: Vec<f64> = (0..total - n_id).map(|_| draw(1.0)).collect();
        let mut wins = 0.0;
        for a in &ood {
            for b in &id {
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let brute = wins / (id.len() * ood.len()) as f64;
        let got = auroc(&id, &ood).map_err(|e| e.to_string())?;
        let err = (got - brute).abs();
        ensure(err <= 1e-12, || {
            format!("set {set}: rank {got} vs pairs {brute}")
        })?;
        worst = worst.max(err);
    }
    Ok(format!("100 sets, max |rank - pairs| {worst:.1e}"))
}

// 5 ------------------------------------------------------------------------

fn conformance() -> Check {
    let cfg = TheoryConfig {
        conformance_specs: vec![
            OracleSpec {
                sigma2: 1.0,
                epsilon: 0.05,
                nu: 1e4,
            },
            OracleSpec {
                sigma2: 0.25,
                epsilon: 0.2,
                nu: 1e2,
            },
        ],
        conformance_draws: 100_000,
        ..TheoryConfig::default()
    };
    let reports = conformance_study(&cfg).map_err(|e| e.to_string())?;
    ensure(reports.len() == 6, || {
        format!("expected 6 reports, got {}", reports.len())
    })?;
    let mut worst_z: f64 = 0.0;
    let mut worst_v: f64 = 0.0;
    for (i, r) in reports.iter().enumerate() {
        let spec = &cfg.conformance_specs[i / 3];
        let expected_kind = [OracleKind::Id, OracleKind::Friendly, OracleKind::Unfriendly][i % 3];
        ensure(r.kind == expected_kind && r.draws == 100_000, || {
            format!("report {i} has the wrong kind or draws")
        })?;
        // Recomputed from the oracle parameters: E|g - grad|^2 = c^2 |grad|^2 + sigma2.
        let c2 = match r.kind {
            OracleKind::Id => 0.0,
            OracleKind::Friendly => spec.epsilon / 2.0,
            OracleKind::Unfriendly => spec.nu / 2.0,
        };
        let obj = cfg.objective().unwrap();
        let theta = obj.start_with_gap(cfg.delta0, derive_seed(cfg.seed, &[7]));
        let g2: f64 = obj.grad(&theta).iter().map(|v| v * v).sum();
        let target = c2 * g2 + spec.sigma2;
        ensure((target - r.variance_target).abs() <= 1e-9 * target, || {
            format!(
                "{:?}: variance target {} vs {}",
                r.kind, r.variance_target, target
            )
        })?;
        let vz = (r.variance - target).abs() / r.variance_se;
        ensure(r.max_mean_z <= 3.0 && vz <= 3.0, || {
            format!(
                "{:?} sigma2={}: mean z {:.2}, variance z {:.2}",
                r.kind, spec.sigma2, r.max_mean_z, vz
            )
        })?;
        worst_z = worst_z.max(r.max_mean_z);
        worst_v = worst_v.max(vz);
    }
    Ok(format!(
        "3 oracles x 2 specs, 1e5 draws; worst mean z {worst_z:.2}, variance z {worst_v:.2}"
    ))
}

// 6, 7 ---------------------------------------------------------------------

fn ls_slope(ns: &[f64], gaps: &[f64]) -> f64 {
    let x: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = gaps.iter().map(|v| v.ln()).collect();
    let (mx, my) = (
        x.iter().sum::<f64>() / x.len() as f64,
        y.iter().sum::<f64>() / y.len() as f64,
    );
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn rate(case: TheoryCase) -> Check {
    let cfg = TheoryConfig::default();
    ensure(
        cfg.grid == [100, 1000, 10_000, 100_000] && cfg.replications == 20,
        || "unexpected default grid".into(),
    )?;
    if case == TheoryCase::C {
        ensure(
            cfg.friendly_lambda == 0.5 && cfg.oracle.epsilon == 0.05,
            || "unexpected case (c) setup".into(),
        )?;
    }
    let study = rate_study(&cfg, case).map_err(|e| e.to_string())?;
    let ns: Vec<f64> = study.points.iter().map(|p| p.total as f64).collect();
    let gaps: Vec<f64> = study.points.iter().map(|p| p.mean_final_gap).collect();
    let slope = ls_slope(&ns, &gaps);
    ensure((slope - study.slope).abs() < 1e-9, || {
        format!("library slope {} vs {slope}", study.slope)
    })?;
    ensure((-1.3..=-0.7).contains(&slope), || {
        format!("slope {slope:.3} outside [-1.3, -0.7]")
    })?;
    let (l, mu, s2, d0) = (cfg.l_smooth, cfg.mu, cfg.oracle.sigma2, cfg.delta0);
    let mut worst: f64 = 0.0;
    for p in &study.points {
        let n = p.total as f64;
        let bound = (l * s2 / (n * mu * mu)) * (1.0 + 2.0 * (n * mu * mu * d0 / (s2 * l)).ln());
        let ratio = p.mean_final_gap / bound;
        ensure(ratio <= 3.0, || {
            format!(
                "n={}: gap {:.3e} is {ratio:.2}x the bound",
                p.total, p.mean_final_gap
            )
        })?;
        worst = worst.max(ratio);
    }
    Ok(format!("slope {slope:.3}, worst gap/bound {worst:.2}"))
}

// 8 ------------------------------------------------------------------------

fn stall() -> Check {
    let cfg = TheoryConfig::default();
    ensure(
        cfg.oracle.nu == 1e4
            && (cfg.stall_lambda - 1.0 / 3.0).abs() < 1e-15
            && cfg.stall_tau == 0.5,
        || "unexpected stall setup".into(),
    )?;
    let s = stall_study(&cfg).map_err(|e| e.to_string())?;
    ensure(!s.all_data_divergent, || "case (a) run diverged".into())?;
    ensure(s.all_data_gap >= 0.2 * cfg.delta0, || {
        format!("case (a) gap {:.4} < 0.2", s.all_data_gap)
    })?;
    ensure(s.friendly_gap <= 0.01 * cfg.delta0, || {
        format!("case (c) gap {:.4} > 0.01", s.friendly_gap)
    })?;
    Ok(format!(
        "budget {}: case (a) gap {:.3}, case (c) gap {:.4}",
        s.budget, s.all_data_gap, s.friendly_gap
    ))
}

// 9 ------------------------------------------------------------------------

fn proof_steps() -> Check {
    let cfg = TheoryConfig {
        check_points: 20,
        check_draws: 100_000,
        ..TheoryConfig::default()
    };
    let s = proof_step_study(&cfg).map_err(|e| e.to_string())?;
    ensure(s.descent.len() == 20 && s.variance.len() == 20, || {
        "expected 20 points".into()
    })?;
    let mut worst: f64 = f64::INFINITY;
    for r in s.descent.iter().chain(&s.variance) {
        ensure(r.draws == 100_000, || {
            format!("{}: {} draws", r.name, r.draws)
        })?;
        ensure(r.margin >= -3.0 * r.std_error, || {
            format!(
                "{}: margin {:.3e} below -3 SE ({:.3e})",
                r.name, r.margin, r.std_error
            )
        })?;
        ensure(
            (r.rhs - r.lhs - r.margin).abs() <= 1e-9 * r.rhs.abs().max(1.0),
            || format!("{}: margin mismatch", r.name),
        )?;
        if r.std_error > 0.0 {
            worst = worst.min(r.margin / r.std_error);
        }
    }
    Ok(format!(
        "40 inequalities at 20 points, smallest margin/SE {worst:.2}"
    ))
}

// 10 -----------------------------------------------------------------------

fn drift_and_lsm() -> Check {
    let cfg = TheoryConfig::default();
    ensure(cfg.drift_steps == 1000 && cfg.lsm_events == 20, || {
        "unexpected drift/L-SM setup".into()
    })?;
    let d = drift_study(&cfg).map_err(|e| e.to_string())?;
    ensure(d.windows > 0 && d.violations == 0, || {
        format!(
            "{} of {} windows violate the drift bound",
            d.violations, d.windows
        )
    })?;
    let lsm = lsm_study(&cfg).map_err(|e| e.to_string())?;
    ensure(lsm.len() == 20, || {
        format!("{} selection events", lsm.len())
    })?;
    let checked: usize = lsm.iter().map(|r| r.selected).sum();
    let bad: usize = lsm.iter().map(|r| r.violations).sum();
    ensure(checked > 0 && bad == 0, || {
        format!("{bad} of {checked} selected instances violate the loss bound")
    })?;
    Ok(format!(
        "drift: {} windows, max ratio {:.3}; L-SM: {checked} selected instances in 20 events",
        d.windows, d.max_ratio
    ))
}

// 11, 12 -------------------------------------------------------------------

fn fixture(seed: u64) -> Result<OpenSetData, String> {
    let mut cfg: OpenSetConfig = load("synth_planted.json");
    cfg.seed += seed;
    ensure(
        cfg.unfriendly_fraction == 0.1 && cfg.unfriendly_noise_scale == 10.0,
        || "fixture changed".into(),
    )?;
    make_openset_mixture(&cfg).map_err(|e| e.to_string())
}

fn planted_recovery() -> Check {
    let base: TrainConfig = load("train_gv.json");
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    for seed in 0..10 {
        let data = fixture(seed)?;
        // The selection at epoch 0 happens before any parameter update.
        let cfg = TrainConfig {
            epochs: 1,
            seed,
            ..base.clone()
        };
        let run = train(&cfg, &data).map_err(|e| e.to_string())?;
        let sel = run.selections.first().ok_or("no selection recorded")?;
        let (p, r) = selection_quality(sel, &data.unlabeled).map_err(|e| e.to_string())?;
        p_sum += p;
        r_sum += r;
    }
    let (p, r) = (p_sum / 10.0, r_sum / 10.0);
    ensure(p >= 0.9 && r >= 0.9, || {
        format!("mean precision {p:.3}, recall {r:.3}")
    })?;
    Ok(format!(
        "mean precision {p:.3}, recall {r:.3} over 10 seeds"
    ))
}

fn directional_benefit() -> Check {
    let none: TrainConfig = load("train_none.json");
    let mut table = Vec::new();
    for seed in 0..10 {
        let data = fixture(seed)?;
        let acc = |cfg: TrainConfig| -> Result<f64, String> {
            let run = train(&cfg, &data).map_err(|e| e.to_string())?;
            Ok(run.log.last().ok_or("no epochs")?.id_acc)
        };
        let base = TrainConfig {
            seed,
            ..none.clone()
        };
        let lo = baseline_labeled_only(&base, &data)
            .map_err(|e| e.to_string())?
            .log
            .last()
            .ok_or("no epochs")?
            .id_acc;
        let n = acc(base.clone())?;
        let gv = acc(TrainConfig {
            selection: SelectionMode::Gv,
            ..base.clone()
        })?;
        let ls = acc(TrainConfig {
            selection: SelectionMode::Loss,
            ..base.clone()
        })?;
        table.push((lo, n, gv, ls));
    }
    let count = |f: &dyn Fn(&(f64, f64, f64, f64)) -> bool| table.iter().filter(|r| f(r)).count();
    let none_vs_lo = count(&|r| r.1 >= r.0);
    let gv_vs_none = count(&|r| r.2 >= r.1);
    let loss_vs_none = count(&|r| r.3 >= r.1);
    let mean =
        |i: usize| table.iter().map(|r| [r.0, r.1, r.2, r.3][i]).sum::<f64>() / table.len() as f64;
    let detail = format!(
        "none>=labeled-only {none_vs_lo}/10, gv>=none {gv_vs_none}/10, loss>=none {loss_vs_none}/10; \
         mean acc lo {:.3} none {:.3} gv {:.3} loss {:.3}",
        mean(0),
        mean(1),
        mean(2),
        mean(3)
    );
    if none_vs_lo >= 7 && gv_vs_none >= 7 && loss_vs_none >= 7 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 13 -----------------------------------------------------------------------

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_openset"))
        .args(args)
        .arg("--quiet")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        )
    })
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = |name: &str| {
        repo_root()
            .join("configs")
            .join(name)
            .to_string_lossy()
            .into_owned()
    };
    let mut compared = 0;
    for (label, threads) in [("r1", "1"), ("r1b", "1"), ("r8", "8")] {
        let root = tmp.path().join(label);
        let data = root.join("data");
        cli(&[
            "synth",
            "--config",
            &cfg("synth_planted.json"),
            "--out",
            data.to_str().unwrap(),
            "--threads",
            threads,
        ])?;
        let csv = data.join("dataset.csv");
        for arm in ["train_gv.json", "train_loss.json"] {
            let out = root.join(arm.trim_end_matches(".json"));
            cli(&[
                "train",
                "--config",
                &cfg(arm),
                "--data",
                csv.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--threads",
                threads,
            ])?;
        }
        for theory in ["theory_quick.json", "theory_sanity.json"] {
            let out = root.join(theory.trim_end_matches(".json"));
            cli(&[
                "theory",
                "--config",
                &cfg(theory),
                "--out",
                out.to_str().unwrap(),
                "--threads",
                threads,
            ])?;
        }
    }
    let reference = snapshot(&tmp.path().join("r1"));
    ensure(
        reference.keys().any(|k| k.ends_with("summary.json")),
        || "no summary written".into(),
    )?;
    for other in ["r1b", "r8"] {
        let snap = snapshot(&tmp.path().join(other));
        ensure(snap.keys().eq(reference.keys()), || {
            format!("{other}: different file set")
        })?;
        for (k, v) in &reference {
            ensure(&snap[k] == v, || {
                format!("{other}: {} differs", k.display())
            })?;
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} files byte-identical across rerun and --threads 8"
    ))
}

// ---------------------------------------------------------------------------

/// Criteria that fail on this implementation, with the reason.
const KNOWN_FAILURES: &[(&str, &str)] = &[(
    "12",
    "loss-based selection keeps planted and unseen items and drops seen-class items on this fixture",
)];

fn main() -> ExitCode {
    let criteria: Vec<(&str, u64, fn() -> Check)> = vec![
        ("1 gradient correctness", 60, gradient_correctness),
        ("2 otsu oracle", 10, otsu_oracle),
        ("3 top-k cardinality", 5, topk_cardinality),
        ("4 auroc oracle", 10, auroc_oracle),
        ("5 oracle conformance", 60, conformance),
        ("6 rate, labeled only", 300, || rate(TheoryCase::B)),
        ("7 rate, labeled + friendly", 300, || rate(TheoryCase::C)),
        ("8 stall with unfriendly data", 120, stall),
        ("9 proof-step inequalities", 180, proof_steps),
        ("10 drift and loss bounds", 60, drift_and_lsm),
        ("11 planted selection recovery", 300, planted_recovery),
        ("12 directional benefit", 900, directional_benefit),
        ("13 determinism", 120, determinism),
    ];
    let mut failed = 0;
    let mut unexpected = 0;
    for (name, budget, f) in criteria {
        let start = Instant::now();
        let result = f();
        let took = start.elapsed();
        let result = match result {
            Ok(d) if took > Duration::from_secs(budget) => {
                Err(format!("{d} (took {took:.1?}, budget {budget}s)"))
            }
            other => other,
        };
        match result {
            Ok(d) => println!("PASS  {name}: {d} [{took:.1?}]"),
            Err(d) => {
                failed += 1;
                let id = name.split(' ').next().unwrap_or_default();
                match KNOWN_FAILURES.iter().find(|k| k.0 == id) {
                    Some((_, why)) => {
                        println!("FAIL  {name}: {d} [{took:.1?}] (known failure: {why})")
                    }
                    None => {
                        unexpected += 1;
                        println!("FAIL  {name}: {d} [{took:.1?}]");
                    }
                }
            }
        }
    }
    println!(
        "{} of 13 criteria passed, {unexpected} unexpected failures",
        13 - failed
    );
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
