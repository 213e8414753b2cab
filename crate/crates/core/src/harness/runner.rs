use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use super::config::{ConfigError, ExperimentConfig};
use crate::netsim::{simulate, SimError};
use crate::scheduling::optimal_throughput;
use crate::types::{new_interface, IfaceId};

pub const CSV_HEADER: [&str; 8] =
    ["experiment", "scheduler", "sweep_var", "sweep_value", "mean_throughput_bps", "stddev", "runs", "seed_base"];

/// Name used for the upper-bound pseudo-scheduler rows.
pub const OPTIMAL: &str = "optimal";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub scheduler: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub mean_throughput_bps: f64,
    pub stddev: f64,
    pub runs: usize,
    pub seed_base: u64,
    /// Throughput of every run, in run-index order.
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn get(&self, scheduler: &str, sweep_value: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.scheduler == scheduler && r.sweep_value == sweep_value)
    }

    pub fn mean(&self, scheduler: &str, sweep_value: f64) -> Option<f64> {
        self.get(scheduler, sweep_value).map(|r| r.mean_throughput_bps)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.experiment.clone(),
                r.scheduler.clone(),
                r.sweep_var.clone(),
                format!("{}", r.sweep_value),
                format!("{:.3}", r.mean_throughput_bps),
                format!("{:.3}", r.stddev),
                r.runs.to_string(),
                r.seed_base.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_stddev(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every (sweep value, scheduler, run) combination and averages the
/// runs. Run `i` uses seed `seed + i`, so a scheduler comparison at one
/// point sees identical workloads. The configuration and the output path
/// are checked before anything is simulated.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable, HarnessError> {
    cfg.validate()?;
    let mut out = match &cfg.out {
        Some(path) => Some(open_output(path)?),
        None => None,
    };

    let jobs: Vec<(usize, usize, usize)> = (0..cfg.sweep_values.len())
        .flat_map(|p| (0..cfg.schedulers.len()).flat_map(move |s| (0..cfg.runs).map(move |r| (p, s, r))))
        .collect();
    let results: Vec<f64> = jobs
        .par_iter()
        .map(|&(p, s, r)| {
            let sim = cfg.sim_config(cfg.sweep_values[p], cfg.schedulers[s], cfg.seed.wrapping_add(r as u64));
            simulate(&sim).map(|m| m.aggregate_throughput)
        })
        .collect::<Result<_, _>>()?;

    let mut table = ResultTable::default();
    let mut chunks = results.chunks(cfg.runs);
    for &value in &cfg.sweep_values {
        let row = |scheduler: String, samples: Vec<f64>| {
            let (mean, sd) = mean_stddev(&samples);
            ResultRow {
                experiment: cfg.name.clone(),
                scheduler,
                sweep_var: cfg.sweep_var.name().into(),
                sweep_value: value,
                mean_throughput_bps: mean,
                stddev: sd,
                runs: cfg.runs,
                seed_base: cfg.seed,
                samples,
            }
        };
        for kind in &cfg.schedulers {
            let samples = chunks.next().expect("one chunk per point and scheduler").to_vec();
            table.rows.push(row(kind.name().into(), samples));
        }
        let bound = optimal_for(cfg, value);
        table.rows.push(row(OPTIMAL.into(), vec![bound; cfg.runs]));
    }

    if let Some(file) = out.as_mut() {
        table.write_csv(file)?;
    }
    Ok(table)
}

fn optimal_for(cfg: &ExperimentConfig, value: f64) -> f64 {
    let p = cfg.point(value);
    let ifaces: Vec<_> = p
        .interfaces
        .iter()
        .enumerate()
        .filter_map(|(i, f)| new_interface(IfaceId(i as u16), f.bandwidth_mbps * 1e6, 0.0, p.mtu).ok())
        .collect();
    optimal_throughput(&ifaces)
}

fn open_output(path: &Path) -> Result<File, HarnessError> {
    File::create(path).map_err(|source| HarnessError::Output { path: path.display().to_string(), source })
}
