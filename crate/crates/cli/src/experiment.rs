//! Experiment drivers. Everything here is in-memory; `commands` does the
//! file output.

use kfed::datagen::{generate_mixture, iid_partition, MixtureSpec, PartitionSpec};
use kfed::evaluation::{cost_ratio_report, kmeans_cost, labels_cost, matched_accuracy};
use kfed::federation::{run_kfed, KfedOptions, KfedRun};
use kfed::local::DEFAULT_MAX_ITER;
use kfed::separation::{lemma_audit, separation_quantities, AuditReport, SeparationReport, DEFAULT_AUDIT_SLACK};
use kfed::{Clustering, DataMatrix, DevicePartition};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::state::RunState;

/// One generated problem: data, planted labels and device split.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub spec: MixtureSpec,
    pub partition_spec: PartitionSpec,
    pub a: DataMatrix,
    pub truth: Clustering,
    pub partition: DevicePartition,
}

pub fn build_instance(cfg: &RunConfig, seed: u64, c: f64) -> CliResult<Instance> {
    let spec = cfg.mixture_spec(seed, c);
    spec.validate()?;
    let (a, truth) = generate_mixture(&spec)?;
    let partition = cfg.partition.build(&truth, seed)?;
    Ok(Instance {
        seed,
        spec,
        partition_spec: cfg.partition.clone(),
        a,
        truth,
        partition,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub run_id: String,
    pub seed: u64,
    pub c: f64,
    pub accuracy: f64,
    pub misclassified: usize,
    pub cost: f64,
    pub distance_count: usize,
    /// `2·Z·k'·k²`.
    pub distance_bound: usize,
    pub messages_sent: usize,
    /// Planted clusters with no rows on any participating device.
    pub vanished_clusters: Vec<usize>,
    pub max_lloyd_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub report: SeedReport,
    pub run: KfedRun,
    pub state: RunState,
}

pub fn options(cfg: &RunConfig, seed: u64) -> KfedOptions {
    KfedOptions {
        seed,
        tol: cfg.tol,
        max_iter: DEFAULT_MAX_ITER,
        exclude: cfg.exclude_devices.clone(),
        start_device: None,
    }
}

/// Runs the protocol on `inst` and scores the rows that took part.
pub fn run_instance(cfg: &RunConfig, config_hash: &str, inst: &Instance, c: f64, run_id: String) -> CliResult<SeedOutcome> {
    let opts = options(cfg, inst.seed);
    let run = run_kfed(&inst.partition, &inst.a, &opts)?;
    let rows = &run.induced.rows;
    let truth: Vec<usize> = rows.iter().map(|&i| inst.truth.assignment[i]).collect();
    let m = matched_accuracy(&run.induced.global.assignment, &truth)?;
    let sub = inst.a.select_rows(rows)?;
    let cost = labels_cost(&sub, &run.induced.global.assignment, run.induced.global.k)?;

    let mut present = vec![false; inst.truth.k];
    for &l in &truth {
        present[l] = true;
    }
    let vanished: Vec<usize> = (0..inst.truth.k).filter(|&r| !present[r]).collect();
    if !vanished.is_empty() {
        log::warn!("{run_id}: clusters {vanished:?} have no participating rows");
    }
    let z = run.uploads.len();
    let kp = inst.partition.k_prime();
    let k = inst.partition.k;
    let report = SeedReport {
        run_id,
        seed: inst.seed,
        c,
        accuracy: m.accuracy,
        misclassified: m.misclassified,
        cost,
        distance_count: run.accounting.pairwise_distance_count,
        distance_bound: 2 * z * kp * k * k,
        messages_sent: run.accounting.messages_sent,
        vanished_clusters: vanished,
        max_lloyd_iterations: run.local.iter().map(|l| l.lloyd_iterations).max().unwrap_or(0),
    };
    let state = RunState {
        version: 1,
        config_hash: config_hash.to_string(),
        seed: inst.seed,
        tol: cfg.tol,
        max_iter: DEFAULT_MAX_ITER,
        k,
        num_devices: inst.partition.num_devices(),
        tau_means: run.server().tau_means.to_rows(),
    };
    Ok(SeedOutcome { report, run, state })
}

pub fn run_id(cfg: &RunConfig, c: f64, seed: u64) -> String {
    if cfg.experiment == crate::config::Experiment::CSweep {
        format!("c{c}-s{seed}")
    } else {
        format!("s{seed}")
    }
}

/// All seeds at one `c`, in parallel; results keep seed order.
pub fn run_seeds(cfg: &RunConfig, config_hash: &str, c: f64) -> Vec<(u64, CliResult<SeedOutcome>)> {
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let out = build_instance(cfg, seed, c)
                .and_then(|inst| run_instance(cfg, config_hash, &inst, c, run_id(cfg, c, seed)));
            if let Err(e) = &out {
                log::error!("seed {seed}: {e}");
            }
            (seed, out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator; 0 for a single run).
    pub std: f64,
    /// Percent, two decimals: `"mean ± std"`.
    pub formatted: String,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = if n == 0 { f64::NAN } else { values.iter().sum::<f64>() / n as f64 };
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary {
        runs: n,
        mean,
        std,
        formatted: format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub seed: u64,
    pub oracle_cost: f64,
    pub structured_cost: f64,
    pub iid_cost: f64,
    pub structured_accuracy: f64,
    pub iid_accuracy: f64,
    /// `None` when the IID cost matches the oracle.
    pub ratio: Option<f64>,
}

/// Structured partition from the config against an IID split over the
/// same number of devices. The oracle cost is the planted labelling's cost.
pub fn cost_ratio_seed(cfg: &RunConfig, config_hash: &str, seed: u64) -> CliResult<(RatioRow, SeedOutcome, SeedOutcome)> {
    let inst = build_instance(cfg, seed, cfg.c)?;
    let iid = Instance {
        partition: iid_partition(&inst.truth, inst.partition.num_devices(), seed)?,
        partition_spec: PartitionSpec::Iid {
            devices: inst.partition.num_devices(),
        },
        ..inst.clone()
    };
    let mut full = cfg.clone();
    full.exclude_devices.clear();
    let s = run_instance(&full, config_hash, &inst, cfg.c, format!("structured-s{seed}"))?;
    let r = run_instance(&full, config_hash, &iid, cfg.c, format!("iid-s{seed}"))?;
    let oracle = kmeans_cost(&inst.a, &inst.truth);
    let ratio = match cost_ratio_report(oracle, s.report.cost, r.report.cost) {
        Ok(x) => Some(x),
        Err(e) => {
            log::warn!("seed {seed}: {e}");
            None
        }
    };
    let row = RatioRow {
        seed,
        oracle_cost: oracle,
        structured_cost: s.report.cost,
        iid_cost: r.report.cost,
        structured_accuracy: s.report.accuracy,
        iid_accuracy: r.report.accuracy,
        ratio,
    };
    Ok((row, s, r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub separation: SeparationReport,
    pub audit: AuditReport,
}

pub fn profile(a: &DataMatrix, truth: &Clustering, partition: &DevicePartition, c: f64, m0: Option<f64>) -> CliResult<Profile> {
    Ok(Profile {
        separation: separation_quantities(a, truth, partition, c, m0)?,
        audit: lemma_audit(a, truth, partition, DEFAULT_AUDIT_SLACK)?,
    })
}
