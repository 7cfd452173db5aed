//! Append-only run log and its on-disk form: CSV curves plus one structured
//! summary document. Every float is written with Rust's shortest
//! round-trippable formatting, so identical runs produce identical bytes.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::aca::confidence_fluctuation;
use crate::boostloss::LossBreakdown;
use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::eval::EvalReport;
use crate::metrics::GapPoint;

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iter: u64,
    pub epoch: usize,
    /// One breakdown per modality, in model order.
    pub losses: Vec<LossBreakdown>,
    pub joint: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AcaEvent {
    pub iter: u64,
    pub scores: Vec<f64>,
    /// "none", "add:<modality>" or "capped:<modality>".
    pub action: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceSample {
    pub iter: u64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalCheckpoint {
    pub epoch: usize,
    pub iter: u64,
    pub val_loss: f64,
    pub lr: f64,
    pub val: EvalReport,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct RunLog {
    pub modalities: Vec<String>,
    pub iterations: Vec<IterationRecord>,
    pub aca_events: Vec<AcaEvent>,
    pub confidence: Vec<ConfidenceSample>,
    pub checkpoints: Vec<EvalCheckpoint>,
    pub gap_trace: Vec<GapPoint>,
    pub final_counts: Vec<usize>,
    pub final_train: Option<EvalReport>,
    pub final_val: Option<EvalReport>,
    pub final_test: Option<EvalReport>,
}

impl RunLog {
    pub fn new(modalities: Vec<String>) -> Self {
        RunLog { modalities, ..RunLog::default() }
    }

    /// Per-modality confidence series at the check cadence.
    pub fn confidence_series(&self, modality: usize) -> Vec<f64> {
        self.confidence.iter().map(|c| c.scores[modality]).collect()
    }

    pub fn add_events(&self, modality: usize) -> usize {
        let tag = format!("add:{}", self.modalities[modality]);
        self.aca_events.iter().filter(|e| e.action == tag).count()
    }
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    modalities: &'a [String],
    iterations: u64,
    final_counts: &'a [usize],
    final_lr: Option<f64>,
    confidence_fluctuation: Vec<Option<f64>>,
    aca_events: &'a [AcaEvent],
    final_train: &'a Option<EvalReport>,
    final_val: &'a Option<EvalReport>,
    final_test: &'a Option<EvalReport>,
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(body.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn report_cells(report: &crate::metrics::MetricsReport) -> String {
    format!("{:?},{:?},{:?}", report.accuracy, report.map, report.macro_f1)
}

/// Write the CSV curves, the config echo, and summary.json into `dir`.
pub fn write_run_files(log: &RunLog, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let names = &log.modalities;

    let mut losses = String::new();
    losses.push_str("iter,epoch");
    for n in names {
        losses.push_str(&format!(",{n}_eps,{n}_eps_all,{n}_eps_pre,{n}_total"));
    }
    losses.push_str(",joint\n");
    for r in &log.iterations {
        losses.push_str(&format!("{},{}", r.iter, r.epoch));
        for l in &r.losses {
            losses.push_str(&format!(",{:?},{:?},{:?},{:?}", l.eps, l.eps_all, l.eps_pre, l.total));
        }
        losses.push_str(&format!(",{:?}\n", r.joint));
    }
    write_file(&dir.join("losses.csv"), &losses)?;

    let mut conf = String::from("iter");
    for n in names {
        conf.push_str(&format!(",{n}"));
    }
    conf.push('\n');
    for c in &log.confidence {
        conf.push_str(&c.iter.to_string());
        for s in &c.scores {
            conf.push_str(&format!(",{s:?}"));
        }
        conf.push('\n');
    }
    write_file(&dir.join("confidence.csv"), &conf)?;

    let mut events = String::from("iter,action");
    for n in names {
        events.push_str(&format!(",{n}"));
    }
    events.push('\n');
    for e in &log.aca_events {
        events.push_str(&format!("{},{}", e.iter, e.action));
        for s in &e.scores {
            events.push_str(&format!(",{s:?}"));
        }
        events.push('\n');
    }
    write_file(&dir.join("events.csv"), &events)?;

    let mut gap = String::from("iter,loss_a,loss_v,gap\n");
    for g in &log.gap_trace {
        gap.push_str(&format!("{},{:?},{:?},{:?}\n", g.iteration, g.loss_a, g.loss_v, g.gap));
    }
    write_file(&dir.join("gap.csv"), &gap)?;

    let mut metrics = String::from("epoch,iter,split,scope,accuracy,map,macro_f1\n");
    let push_report = |epoch: usize, iter: u64, split: &str, report: &EvalReport, out: &mut String| {
        out.push_str(&format!("{epoch},{iter},{split},multi,{}\n", report_cells(&report.multi)));
        for m in &report.per_modality {
            if let Some(rep) = &m.report {
                out.push_str(&format!("{epoch},{iter},{split},{},{}\n", m.name, report_cells(rep)));
            }
        }
    };
    for c in &log.checkpoints {
        push_report(c.epoch, c.iter, "val", &c.val, &mut metrics);
    }
    let last_iter = log.iterations.last().map_or(0, |r| r.iter);
    let last_epoch = log.iterations.last().map_or(0, |r| r.epoch);
    for (split, report) in
        [("train", &log.final_train), ("val", &log.final_val), ("test", &log.final_test)]
    {
        if let Some(rep) = report {
            push_report(last_epoch, last_iter, split, rep, &mut metrics);
        }
    }
    write_file(&dir.join("metrics.csv"), &metrics)?;

    let fluct: Vec<Option<f64>> = (0..names.len())
        .map(|m| {
            let series = log.confidence_series(m);
            confidence_fluctuation(&series).ok()
        })
        .collect();
    let summary = Summary {
        config: cfg,
        modalities: names,
        iterations: last_iter,
        final_counts: &log.final_counts,
        final_lr: log.checkpoints.last().map(|c| c.lr),
        confidence_fluctuation: fluct,
        aca_events: &log.aca_events,
        final_train: &log.final_train,
        final_val: &log.final_val,
        final_test: &log.final_test,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| crate::error::Error::Config(e.to_string()))?;
    write_file(&dir.join("summary.json"), &json)?;

    write_file(&dir.join("config.toml"), &cfg.to_toml_string()?)?;
    Ok(())
}
