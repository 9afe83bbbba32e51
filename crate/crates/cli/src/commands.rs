use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use openset_core::data::{export_csv, import_csv, make_openset_mixture, OpenSetConfig};
use openset_core::selection::write_selection_csv;
use openset_core::theory::{run_theory, TheoryConfig};
use openset_core::trainer::{train as run_training, TrainConfig};
use openset_core::Error;

use crate::Common;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, configuration or input files.
    Usage(String),
    /// A mandatory check did not hold.
    Check(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Check(_) | Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Check(m) => write!(f, "check failed: {m}"),
            Failure::Runtime(m) => write!(f, "{m}"),
        }
    }
}

/// Configuration and parse problems are usage errors; everything else is a
/// runtime failure.
fn classify(e: Error) -> Failure {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Json(_) => Failure::Usage(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    }
}

fn usage(context: &str) -> impl Fn(Error) -> Failure + '_ {
    move |e| Failure::Usage(format!("{context}: {e}"))
}

fn runtime<E: fmt::Display>(context: &str) -> impl Fn(E) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{context}: {e}"))
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(runtime("cannot create output directory"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime("serialization"))?;
    text.push('\n');
    fs::write(path, text).map_err(runtime("write"))
}

fn with_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> openset_core::Result<()>,
) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path).map_err(runtime("create"))?);
    f(&mut w).map_err(classify)?;
    w.flush().map_err(runtime("write"))
}

pub fn synth(c: &Common) -> Result<(), Failure> {
    let start = Instant::now();
    let mut cfg: OpenSetConfig = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(classify)?;
    let data = make_openset_mixture(&cfg).map_err(classify)?;
    prepare_out(&c.out)?;
    write_json(&c.out.join("config.json"), &cfg)?;
    export_csv(&data, &c.out.join("dataset.csv")).map_err(classify)?;
    info!(
        "wrote {} labeled, {} unlabeled, {} validation, {} test rows in {:.2?}",
        data.labeled.len(),
        data.unlabeled.len(),
        data.validation.len(),
        data.test.len(),
        start.elapsed()
    );
    Ok(())
}

pub fn train(c: &Common, data_path: &Path) -> Result<(), Failure> {
    let start = Instant::now();
    let mut cfg: TrainConfig = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(classify)?;
    let data = import_csv(data_path).map_err(usage("cannot import dataset"))?;
    prepare_out(&c.out)?;
    write_json(&c.out.join("config.json"), &cfg)?;
    let run = run_training(&cfg, &data).map_err(classify)?;

    with_file(&c.out.join("metrics.csv"), |w| run.log.write_csv(w))?;
    run.params
        .save_checkpoint(&c.out.join("checkpoint.bin"))
        .map_err(classify)?;
    if let Some(report) = &run.final_report {
        with_file(&c.out.join("confusion.csv"), |w| {
            report.confusion.write_csv(w, false)
        })?;
    }
    if !run.selections.is_empty() {
        let dir = c.out.join("selections");
        fs::create_dir_all(&dir).map_err(runtime("cannot create selections directory"))?;
        for sel in &run.selections {
            let path = dir.join(format!("epoch_{:04}.csv", sel.scores.epoch));
            with_file(&path, |w| write_selection_csv(sel, &data.unlabeled, w))?;
        }
    }
    let last = run.log.last();
    let summary = json!({
        "command": "train",
        "config": cfg,
        "data": {
            "dim": data.dim,
            "k_seen": data.k_seen,
            "k_unseen": data.k_unseen,
            "labeled": data.labeled.len(),
            "unlabeled": data.unlabeled.len(),
            "validation": data.validation.len(),
            "test": data.test.len(),
        },
        "param_count": run.params.len(),
        "epochs_run": run.log.records.len(),
        "selection_epochs": run.selections.iter().map(|s| s.scores.epoch).collect::<Vec<_>>(),
        "final": last.map(|r| json!({
            "id_accuracy": r.id_acc,
            "auroc": r.auroc,
            "pseudo_acc": r.pseudo_acc,
            "selection_precision": r.sel_precision,
            "selection_recall": r.sel_recall,
            "selected_count": r.selected_count,
            "loss_s": r.loss_s,
            "loss_u": r.loss_u,
        })),
    });
    write_json(&c.out.join("summary.json"), &summary)?;
    match last {
        Some(r) => info!(
            "trained {} epochs in {:.2?}: id_acc {:.4}, auroc {}",
            run.log.records.len(),
            start.elapsed(),
            r.id_acc,
            r.auroc.map_or("n/a".to_string(), |a| format!("{a:.4}"))
        ),
        None => info!("no epochs requested; wrote the initial model"),
    }
    Ok(())
}

pub fn theory(c: &Common) -> Result<(), Failure> {
    let start = Instant::now();
    let mut cfg: TheoryConfig = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(classify)?;
    prepare_out(&c.out)?;
    write_json(&c.out.join("config.json"), &cfg)?;
    let report = run_theory(&cfg).map_err(classify)?;
    with_file(&c.out.join("theory.csv"), |w| report.write_csv(w))?;
    write_json(&c.out.join("theory_report.json"), &report)?;
    if let Some(s) = &report.studies {
        info!(
            "slopes: labeled-only {:.3}, labeled+friendly {:.3}; stall gap {:.3} vs {:.4}",
            s.labeled_only.slope,
            s.labeled_friendly.slope,
            s.stall.all_data_gap,
            s.stall.friendly_gap
        );
    }
    for s in &report.scenarios {
        info!(
            "scenario {}: eta {:.4e}, final gap {:.4e}, divergent {}",
            s.name, s.eta, s.mean_final_gap, s.divergent_replications
        );
    }
    info!("theory run finished in {:.2?}", start.elapsed());
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Check(
            "one or more theory checks failed; see theory_report.json".into(),
        ))
    }
}
