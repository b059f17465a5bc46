//! Subcommand implementations. All file output goes through here.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use kfed::evaluation::{labels_cost, matched_accuracy, EvalResult};
use kfed::federation::{assign_new_device, device_seed, DeviceCenters, DevicePartition};
use kfed::io::{self, InstanceSpec, UploadMessage, DATA_FILE, LABELS_FILE, PARTITION_FILE, SPEC_FILE};
use kfed::local::local_cluster_with;
use kfed::Clustering;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, RunConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{self, Profile, RatioRow, SeedOutcome, SeedReport, Summary};
use crate::plot::{line_chart, Series};
use crate::state::RunState;

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub c: Option<f64>,
    pub m0: Option<f64>,
    pub tol: Option<f64>,
    pub exclude_devices: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: RunConfig) -> RunConfig {
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(c) = self.c {
            cfg.c = c;
        }
        if let Some(m0) = self.m0 {
            cfg.m0 = Some(m0);
        }
        if let Some(tol) = self.tol {
            cfg.tol = tol;
        }
        if let Some(ex) = &self.exclude_devices {
            cfg.exclude_devices = ex.clone();
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn provenance(hash: &str, seed: u64) -> Vec<String> {
    vec![format!("config_hash {hash}"), format!("seed {seed}")]
}

/// Writes the four instance files for one seed. Everything is validated
/// and generated before the first file is touched.
pub fn cmd_generate(cfg: &RunConfig, seed: Option<u64>, out: &Path) -> CliResult<InstanceSpec> {
    cfg.validate()?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let hash = cfg.hash();
    let inst = experiment::build_instance(cfg, seed, cfg.c)?;
    let spec = InstanceSpec {
        version: 1,
        seed,
        config_hash: hash.clone(),
        mixture: inst.spec.clone(),
        partition: inst.partition_spec.clone(),
    };
    create_dir(out)?;
    let tags = provenance(&hash, seed);
    io::write_data_csv(&out.join(DATA_FILE), &inst.a, &tags)?;
    io::write_labels_csv(&out.join(LABELS_FILE), &inst.truth.assignment, &tags)?;
    io::write_partition_json(&out.join(PARTITION_FILE), &inst.partition.device_rows)?;
    io::write_json(&out.join(SPEC_FILE), &spec)?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResultRow<'a> {
    run_id: &'a str,
    config_hash: &'a str,
    seed: u64,
    accuracy: f64,
    cost: f64,
    distance_count: usize,
}

fn results_csv(hash: &str, reports: &[&SeedReport]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(ResultRow {
            run_id: &r.run_id,
            config_hash: hash,
            seed: r.seed,
            accuracy: r.accuracy,
            cost: r.cost,
            distance_count: r.distance_count,
        })
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub c: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<SeedReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CSummary {
    pub c: f64,
    pub summary: Summary,
}

/// Everything `cmd_run` wrote, for callers that want the numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub experiment: Experiment,
    pub entries: Vec<SeedEntry>,
    pub summaries: Vec<CSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cost_ratio: Vec<RatioRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_below_one: Option<usize>,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.error.is_some()).count()
    }

    pub fn status(&self) -> CliResult<()> {
        match self.failures() {
            0 => Ok(()),
            failed => Err(CliError::SeedsFailed {
                failed,
                total: self.entries.len(),
            }),
        }
    }
}

fn entry(seed: u64, c: f64, out: &CliResult<SeedOutcome>) -> SeedEntry {
    SeedEntry {
        seed,
        c,
        result: out.as_ref().ok().map(|o| o.report.clone()),
        error: out.as_ref().err().map(|e| e.to_string()),
    }
}

/// Runs the configured experiment over all seeds and writes the results.
/// Failed seeds are reported and skipped; see [`RunReport::status`].
pub fn cmd_run(cfg: &RunConfig, record: bool) -> CliResult<RunReport> {
    cfg.validate()?;
    let hash = cfg.hash();
    let out = cfg.output_dir.clone();
    create_dir(&out)?;
    io::write_json(&out.join("config.json"), cfg)?;

    let mut report = RunReport {
        config_hash: hash.clone(),
        experiment: cfg.experiment,
        entries: Vec::new(),
        summaries: Vec::new(),
        cost_ratio: Vec::new(),
        ratio_below_one: None,
    };
    let mut ok_reports: Vec<SeedReport> = Vec::new();

    match cfg.experiment {
        Experiment::Table1 | Experiment::SingleRun | Experiment::CSweep => {
            for c in cfg.c_grid() {
                let runs = experiment::run_seeds(cfg, &hash, c);
                let mut accs = Vec::new();
                for (seed, res) in &runs {
                    report.entries.push(entry(*seed, c, res));
                    let Ok(o) = res else { continue };
                    accs.push(o.report.accuracy);
                    ok_reports.push(o.report.clone());
                    if cfg.experiment != Experiment::CSweep {
                        o.state.save(&out.join(format!("state-s{seed}.json")))?;
                        if record {
                            write_uploads(&out.join(format!("uploads-s{seed}.jsonl")), &o.run.uploads)?;
                        }
                    }
                }
                report.summaries.push(CSummary {
                    c,
                    summary: experiment::summarize(&accs),
                });
            }
            if cfg.experiment == Experiment::CSweep {
                write_sweep(&out, &hash, &report.summaries)?;
            }
        }
        Experiment::CostRatio => {
            let rows: Vec<_> = cfg
                .seeds
                .par_iter()
                .map(|&seed| (seed, experiment::cost_ratio_seed(cfg, &hash, seed)))
                .collect();
            for (seed, res) in rows {
                match res {
                    Ok((row, s, r)) => {
                        report.entries.push(entry(seed, cfg.c, &Ok(s.clone())));
                        ok_reports.push(s.report);
                        ok_reports.push(r.report);
                        report.cost_ratio.push(row);
                    }
                    Err(e) => {
                        log::error!("seed {seed}: {e}");
                        report.entries.push(entry(seed, cfg.c, &Err(e)));
                    }
                }
            }
            report.ratio_below_one = Some(report.cost_ratio.iter().filter(|r| r.ratio.is_some_and(|x| x < 1.0)).count());
            write_ratios(&out, &hash, &report.cost_ratio)?;
        }
        Experiment::SeparationProfile => {
            let profiles: Vec<_> = cfg
                .seeds
                .par_iter()
                .map(|&seed| {
                    let p = experiment::build_instance(cfg, seed, cfg.c).and_then(|inst| {
                        let m0 = cfg.m0.or(Some(inst.partition.m0));
                        experiment::profile(&inst.a, &inst.truth, &inst.partition, cfg.c, m0)
                    });
                    (seed, p)
                })
                .collect();
            for (seed, p) in profiles {
                match p {
                    Ok(p) => {
                        write_profile(&out.join(format!("s{seed}")), &hash, seed, &p)?;
                        report.entries.push(SeedEntry { seed, c: cfg.c, result: None, error: None });
                    }
                    Err(e) => {
                        log::error!("seed {seed}: {e}");
                        report.entries.push(SeedEntry { seed, c: cfg.c, result: None, error: Some(e.to_string()) });
                    }
                }
            }
        }
    }

    let refs: Vec<&SeedReport> = ok_reports.iter().collect();
    io::write_atomic(&out.join("results.csv"), &results_csv(&hash, &refs)?)?;
    io::write_json(&out.join("report.json"), &report)?;
    let mut text = String::new();
    for s in &report.summaries {
        text.push_str(&format!(
            "{:?} (d={}, k={}, m0={}, c={}): {}\n",
            cfg.experiment,
            cfg.mixture.d,
            cfg.mixture.k,
            cfg.m0_for_placement(),
            s.c,
            s.summary.formatted
        ));
    }
    if let Some(n) = report.ratio_below_one {
        text.push_str(&format!("cost ratio < 1 in {n} of {} seeds\n", report.cost_ratio.len()));
    }
    io::write_atomic(&out.join("summary.txt"), text.as_bytes())?;
    Ok(report)
}

fn write_uploads(path: &Path, uploads: &[DeviceCenters]) -> CliResult<()> {
    let mut text = String::new();
    for u in uploads {
        text.push_str(&UploadMessage::from_device(u).to_json());
        text.push('\n');
    }
    Ok(io::write_atomic(path, text.as_bytes())?)
}

fn write_sweep(out: &Path, hash: &str, rows: &[CSummary]) -> CliResult<()> {
    let mut csv = format!("# config_hash {hash}\nc,runs,mean_accuracy,std_accuracy\n");
    for r in rows {
        csv.push_str(&format!("{},{},{},{}\n", r.c, r.summary.runs, r.summary.mean, r.summary.std));
    }
    io::write_atomic(&out.join("c_sweep.csv"), csv.as_bytes())?;
    let series = [
        Series {
            name: "mean accuracy".into(),
            points: rows.iter().map(|r| (r.c, r.summary.mean)).collect(),
        },
        Series {
            name: "std accuracy".into(),
            points: rows.iter().map(|r| (r.c, r.summary.std)).collect(),
        },
    ];
    let svg = line_chart("Accuracy against separation constant", "c", "accuracy", &series, true);
    Ok(io::write_atomic(&out.join("c_sweep.svg"), svg.as_bytes())?)
}

fn write_ratios(out: &Path, hash: &str, rows: &[RatioRow]) -> CliResult<()> {
    let mut csv = format!("# config_hash {hash}\nseed,oracle_cost,structured_cost,iid_cost,ratio\n");
    for r in rows {
        let ratio = r.ratio.map_or("degenerate".to_string(), |x| x.to_string());
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.seed, r.oracle_cost, r.structured_cost, r.iid_cost, ratio
        ));
    }
    io::write_atomic(&out.join("cost_ratio.csv"), csv.as_bytes())?;
    let series = [Series {
        name: "cost ratio".into(),
        points: rows.iter().filter_map(|r| r.ratio.map(|x| (r.seed as f64, x))).collect(),
    }];
    let svg = line_chart("Structured vs IID cost ratio", "seed", "ratio", &series, false);
    Ok(io::write_atomic(&out.join("cost_ratio.svg"), svg.as_bytes())?)
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    config_hash: &'a str,
    seed: Option<u64>,
    #[serde(flatten)]
    body: &'a T,
}

fn write_profile(dir: &Path, hash: &str, seed: u64, p: &Profile) -> CliResult<()> {
    write_profile_tagged(dir, hash, Some(seed), p)
}

fn write_profile_tagged(dir: &Path, hash: &str, seed: Option<u64>, p: &Profile) -> CliResult<()> {
    create_dir(dir)?;
    io::write_json(&dir.join("separation.json"), &Tagged { config_hash: hash, seed, body: &p.separation })?;
    io::write_json(&dir.join("lemma_audit.json"), &Tagged { config_hash: hash, seed, body: &p.audit })?;
    let mut buf = format!("# config_hash {hash}\n");
    if let Some(s) = seed {
        buf.push_str(&format!("# seed {s}\n"));
    }
    let mut bytes = buf.into_bytes();
    p.separation.write_pairs_csv(&mut bytes)?;
    Ok(io::write_atomic(&dir.join("separation_pairs.csv"), &bytes)?)
}

#[derive(Debug, Clone, Default)]
pub struct ProfileArgs {
    /// Directory holding the four instance files.
    pub instance: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    /// Cluster count; labels outside `0..k` are rejected.
    pub k: Option<usize>,
    pub c: f64,
    pub m0: Option<f64>,
    pub out: PathBuf,
}

/// Separation diagnostics for a labelled instance on disk.
pub fn cmd_profile(args: &ProfileArgs) -> CliResult<Profile> {
    let pick = |explicit: &Option<PathBuf>, name: &str| -> CliResult<PathBuf> {
        explicit
            .clone()
            .or_else(|| args.instance.as_ref().map(|d| d.join(name)))
            .ok_or_else(|| CliError::Validation(format!("missing --{} (or --instance)", name.split('.').next().unwrap_or(name))))
    };
    let spec: Option<InstanceSpec> = match &args.instance {
        Some(d) => Some(io::read_json(&d.join(SPEC_FILE))?),
        None => None,
    };
    let k_hint = args.k.or(spec.as_ref().map(|s| s.mixture.k));
    let a = io::read_data_csv(&pick(&args.data, DATA_FILE)?)?;
    let labels = io::read_labels_csv(&pick(&args.labels, LABELS_FILE)?, k_hint)?;
    let rows = io::read_partition_json(&pick(&args.partition, PARTITION_FILE)?)?;
    if labels.len() != a.nrows() {
        return Err(CliError::Validation(format!(
            "labels have {} rows, data has {}",
            labels.len(),
            a.nrows()
        )));
    }
    let k = k_hint.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let truth = Clustering::from_labels(&a, &labels, k)?;
    let partition = DevicePartition::from_labels(rows, &labels, k, args.m0)?;
    partition.validate(a.nrows())?;
    let p = experiment::profile(&a, &truth, &partition, args.c, args.m0)?;
    let hash = spec.as_ref().map_or("none".to_string(), |s| s.config_hash.clone());
    write_profile_tagged(&args.out, &hash, spec.map(|s| s.seed), &p)?;
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct JoinArgs {
    pub state: PathBuf,
    pub data: PathBuf,
    pub k_z: usize,
    /// Id the device takes; defaults to the next unused id.
    pub device_id: Option<usize>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinOutput {
    pub device_id: usize,
    /// Global label of every row of the new device.
    pub labels: Vec<usize>,
    /// Global label of each local center.
    pub center_labels: Vec<usize>,
    pub distance_count: usize,
}

/// Labels a device that was not part of the original run, using only the
/// persisted server state.
pub fn cmd_join(args: &JoinArgs) -> CliResult<JoinOutput> {
    let state = RunState::load(&args.state)?;
    let server = state.server()?;
    let a = io::read_data_csv(&args.data)?;
    let device_id = args.device_id.unwrap_or(state.num_devices);
    let local = local_cluster_with(
        &a,
        args.k_z,
        device_seed(state.seed, device_id),
        state.tol,
        state.max_iter,
    )?;
    let dev = DeviceCenters::from_local(device_id, &local);
    let (center_labels, distance_count) = assign_new_device(Some(&server), &dev)?;
    let labels: Vec<usize> = dev.local_assignment.iter().map(|&s| center_labels[s]).collect();

    create_dir(&args.out)?;
    let tags = provenance(&state.config_hash, state.seed);
    io::write_labels_csv(&args.out.join(format!("join-d{device_id}-labels.csv")), &labels, &tags)?;
    append_join_row(&args.out.join("join_results.csv"), &state, device_id, a.nrows(), args.k_z, distance_count)?;
    Ok(JoinOutput {
        device_id,
        labels,
        center_labels,
        distance_count,
    })
}

fn append_join_row(path: &Path, state: &RunState, device: usize, rows: usize, k_z: usize, count: usize) -> CliResult<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut line = String::new();
    if fresh {
        line.push_str("run_id,config_hash,seed,device_id,rows,k_z,distance_count\n");
    }
    line.push_str(&format!(
        "join-d{device}-s{},{},{},{device},{rows},{k_z},{count}\n",
        state.seed, state.config_hash, state.seed
    ));
    f.write_all(line.as_bytes()).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub data: PathBuf,
    pub pred: PathBuf,
    pub truth: PathBuf,
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<EvalResult> {
    let a = io::read_data_csv(&args.data)?;
    let pred = io::read_labels_csv(&args.pred, None)?;
    let truth = io::read_labels_csv(&args.truth, None)?;
    if pred.len() != a.nrows() || truth.len() != a.nrows() {
        return Err(CliError::Validation(format!(
            "{} rows, {} predicted labels, {} true labels",
            a.nrows(),
            pred.len(),
            truth.len()
        )));
    }
    let k = pred.iter().max().map_or(0, |m| m + 1);
    let m = matched_accuracy(&pred, &truth)?;
    let res = EvalResult {
        kmeans_cost: labels_cost(&a, &pred, k)?,
        accuracy: m.accuracy,
        misclassified: m.misclassified,
        permutation: m.permutation,
    };
    if let Some(out) = &args.out {
        if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        io::write_json(out, &res)?;
    }
    Ok(res)
}
