//! Hyperparameter sweeps: one train+evaluate per (value, seed) pair over a
//! fixed seed set. Runs are independent and execute in parallel; results
//! come back in deterministic (value, seed) order.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::eval::EvalReport;
use crate::harness::train::train;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Sigma,
    Lambda,
    MaxClassifiers,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SweepParam::Sigma => "sigma",
            SweepParam::Lambda => "lambda",
            SweepParam::MaxClassifiers => "max_classifiers",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(SweepParam::Sigma),
            "lambda" => Ok(SweepParam::Lambda),
            "max_classifiers" | "max-classifiers" => Ok(SweepParam::MaxClassifiers),
            other => Err(Error::Config(format!(
                "unknown sweep parameter {other:?} (sigma, lambda, max_classifiers)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub test: EvalReport,
}

fn apply(cfg: &mut ExperimentConfig, param: SweepParam, value: f64) -> Result<()> {
    match param {
        SweepParam::Sigma => cfg.aca.sigma = value,
        SweepParam::Lambda => cfg.lambda = value,
        SweepParam::MaxClassifiers => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!(
                    "max_classifiers sweep values must be positive integers, got {value}"
                )));
            }
            cfg.aca.max_classifiers = Some(value as usize);
        }
    }
    Ok(())
}

/// Train and test-evaluate every (value, seed) combination.
pub fn sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one value and one seed".to_string()));
    }
    let mut jobs = Vec::new();
    for &value in values {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.output_dir = None;
            cfg.seed = Some(seed);
            apply(&mut cfg, param, value)?;
            cfg.validate()?;
            jobs.push((value, seed, cfg));
        }
    }
    jobs.into_par_iter()
        .map(|(value, seed, cfg)| {
            let out = train(&cfg)?;
            let test = out
                .log
                .final_test
                .ok_or_else(|| Error::Config("sweep requires a non-empty test split".to_string()))?;
            Ok(SweepRow { value, seed, test })
        })
        .collect()
}

/// Per-value median of a metric extracted from the rows.
pub fn median_by_value(rows: &[SweepRow], metric: impl Fn(&SweepRow) -> f64) -> Vec<(f64, f64)> {
    let mut values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    values.dedup();
    values
        .into_iter()
        .map(|v| {
            let mut ms: Vec<f64> =
                rows.iter().filter(|r| r.value == v).map(&metric).collect();
            ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (v, median_of_sorted(&ms))
        })
        .collect()
}

pub fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// CSV table: `param,value,seed,accuracy,map,macro_f1`.
pub fn write_sweep_csv<W: Write>(param: SweepParam, rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "param,value,seed,accuracy,map,macro_f1")?;
    for r in rows {
        writeln!(
            out,
            "{param},{:?},{},{:?},{:?},{:?}",
            r.value, r.seed, r.test.multi.accuracy, r.test.multi.map, r.test.multi.macro_f1
        )?;
    }
    Ok(())
}
