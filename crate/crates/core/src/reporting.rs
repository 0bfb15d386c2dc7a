//! Result artifacts: communication matrices, per-cluster result tables and
//! sweep curves, all as plain CSV.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationRule;
use crate::error::{Error, Result};
use crate::selection::SelectionPolicy;
use crate::similarity::CostTotals;
use crate::simulator::{run_experiment, RunConfig};

/// `counts[i][j]` = number of times client `i` sampled client `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl CommMatrix {
    pub fn new(k: usize) -> Self {
        CommMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let k = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::Dimension {
                expected: k,
                actual: bad.len(),
            });
        }
        Ok(CommMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn record(&mut self, sampler: usize, target: usize) {
        self.counts[sampler * self.k + target] += 1;
    }

    pub fn get(&self, sampler: usize, target: usize) -> u64 {
        self.counts[sampler * self.k + target]
    }

    pub fn row(&self, sampler: usize) -> &[u64] {
        &self.counts[sampler * self.k..(sampler + 1) * self.k]
    }

    pub fn row_sum(&self, sampler: usize) -> u64 {
        self.row(sampler).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, other: &CommMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Dimension {
                expected: self.k,
                actual: other.k,
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record((0..self.k).map(|i| i.to_string()))?;
        for i in 0..self.k {
            w.write_record(self.row(i).iter().map(|c| c.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<heatmap>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        for (pos, field) in header.iter().enumerate() {
            if field != pos.to_string() {
                return Err(Error::invalid(format!(
                    "heatmap header column {pos} is `{field}`, expected `{pos}`"
                )));
            }
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<u64>()
                        .map_err(|e| Error::invalid(format!("heatmap count `{f}`: {e}")))
                })
                .collect::<Result<Vec<u64>>>()?;
            rows.push(row);
        }
        if rows.len() != header.len() {
            return Err(Error::Dimension {
                expected: header.len(),
                actual: rows.len(),
            });
        }
        Self::from_rows(rows)
    }
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Writes `cm` with a header row of client ids and one row per sampler.
pub fn export_heatmap_csv(cm: &CommMatrix, path: &Path) -> Result<()> {
    cm.write_csv(create(path)?).map_err(|e| with_path(e, path))
}

pub fn parse_heatmap_csv(path: &Path) -> Result<CommMatrix> {
    CommMatrix::read_csv(open(path)?).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Fraction of all recorded communications whose target is in the
/// sampler's own cluster.
pub fn cluster_purity(cm: &CommMatrix, cluster_ids: &[usize]) -> Result<f64> {
    if cluster_ids.len() != cm.size() {
        return Err(Error::Dimension {
            expected: cm.size(),
            actual: cluster_ids.len(),
        });
    }
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("communication matrix is empty"));
    }
    let mut same = 0;
    for i in 0..cm.size() {
        for j in 0..cm.size() {
            if cluster_ids[i] == cluster_ids[j] {
                same += cm.get(i, j);
            }
        }
    }
    Ok(same as f64 / total as f64)
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

/// Everything recorded about one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Final test metric of every client.
    pub client_metrics: Vec<f64>,
    pub cluster_means: Vec<f64>,
    pub comm: CommMatrix,
    pub cost: CostTotals,
    /// Mean validation metric of the active clients after each round.
    pub trace: Vec<f64>,
    /// Round in which each client stopped early, if it did.
    pub stopped_round: Vec<Option<usize>>,
}

impl RunOutcome {
    pub fn new(
        client_metrics: Vec<f64>,
        cluster_ids: &[usize],
        num_clusters: usize,
        comm: CommMatrix,
        cost: CostTotals,
        trace: Vec<f64>,
        stopped_round: Vec<Option<usize>>,
    ) -> Self {
        let cluster_means = (0..num_clusters)
            .map(|c| {
                let vals: Vec<f64> = client_metrics
                    .iter()
                    .zip(cluster_ids)
                    .filter(|(_, &id)| id == c)
                    .map(|(v, _)| *v)
                    .collect();
                Stat::of(&vals).mean
            })
            .collect();
        RunOutcome {
            client_metrics,
            cluster_means,
            comm,
            cost,
            trace,
            stopped_round,
        }
    }

    /// Mean over clusters of the per-cluster means.
    pub fn overall(&self) -> f64 {
        Stat::of(&self.cluster_means).mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub method: String,
    pub rule: AggregationRule,
    pub tau: Option<f64>,
    /// Per cluster: mean and std across runs of the cluster's mean metric.
    pub cluster_stats: Vec<Stat>,
    /// Mean and std across runs of the mean-over-clusters metric.
    pub overall: Stat,
    pub cost: CostTotals,
    pub runs: Vec<RunOutcome>,
}

impl ExperimentResult {
    pub fn from_runs(config: &RunConfig, runs: Vec<RunOutcome>) -> Self {
        let clusters = config.scenario.num_clusters();
        let cluster_stats = (0..clusters)
            .map(|c| Stat::of(&runs.iter().map(|r| r.cluster_means[c]).collect::<Vec<_>>()))
            .collect();
        let overall = Stat::of(&runs.iter().map(RunOutcome::overall).collect::<Vec<_>>());
        let cost = runs.iter().fold(CostTotals::default(), |acc, r| acc + r.cost);
        let tau = match config.policy {
            SelectionPolicy::SimilaritySoftmax { tau, .. } => Some(tau),
            _ => None,
        };
        ExperimentResult {
            method: config.policy.label().to_string(),
            rule: config.rule,
            tau,
            cluster_stats,
            overall,
            cost,
            runs,
        }
    }

    pub fn rows(&self) -> Vec<ResultRow> {
        let mut rows: Vec<ResultRow> = self
            .cluster_stats
            .iter()
            .enumerate()
            .map(|(c, s)| ResultRow {
                method: self.method.clone(),
                rule: self.rule.name().to_string(),
                cluster: c.to_string(),
                mean: s.mean,
                std: s.std,
            })
            .collect();
        rows.push(ResultRow {
            method: self.method.clone(),
            rule: self.rule.name().to_string(),
            cluster: MEAN_ROW.to_string(),
            mean: self.overall.mean,
            std: self.overall.std,
        });
        rows
    }
}

/// `cluster` value of the mean-over-clusters row.
pub const MEAN_ROW: &str = "mean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub rule: String,
    pub cluster: String,
    pub mean: f64,
    pub std: f64,
}

pub fn write_result_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["method", "rule", "cluster", "mean", "std"])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<results>", e))?;
    Ok(())
}

pub fn read_result_rows<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}

/// Per method: one row per cluster plus a mean-over-clusters row.
pub fn export_results_table(results: &[ExperimentResult], path: &Path) -> Result<()> {
    let rows: Vec<ResultRow> = results.iter().flat_map(ExperimentResult::rows).collect();
    write_result_rows(&rows, create(path)?).map_err(|e| with_path(e, path))
}

pub fn parse_results_table(path: &Path) -> Result<Vec<ResultRow>> {
    read_result_rows(open(path)?).map_err(|e| with_path(e, path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Tau,
    TrainSize,
    NumNeighbors,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Tau => "tau",
            SweepAxis::TrainSize => "train_size",
            SweepAxis::NumNeighbors => "num_neighbors",
        }
    }

    /// `config` with the axis set to `value`. Policies the axis does not
    /// apply to (tau for the baselines) come back unchanged.
    pub fn apply(self, config: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = config.clone();
        let as_count = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::invalid(format!(
                    "{} must be a positive integer, got {value}",
                    self.name()
                )))
            }
        };
        match self {
            SweepAxis::Tau => {
                if let SelectionPolicy::SimilaritySoftmax { tau, .. } = &mut c.policy {
                    *tau = value;
                }
            }
            SweepAxis::TrainSize => c.split.train = as_count()?,
            SweepAxis::NumNeighbors => c.num_neighbors = as_count()?,
        }
        c.validate()?;
        Ok(c)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SweepAxis::Tau, SweepAxis::TrainSize, SweepAxis::NumNeighbors]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub method: String,
    pub rule: String,
    pub mean: f64,
    pub std: f64,
    pub forward_passes: u64,
    pub param_ops: u64,
}

/// Runs every method in `configs` at every value of `axis`; one row per
/// (value, method). Configurations the axis leaves unchanged are run once
/// and their result repeated.
pub fn sweep(configs: &[RunConfig], axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let mut rows = Vec::new();
    let mut cache: Vec<(RunConfig, ExperimentResult)> = Vec::new();
    for &value in values {
        for base in configs {
            let cfg = axis.apply(base, value)?;
            let result = match cache.iter().find(|(c, _)| *c == cfg) {
                Some((_, r)) => r.clone(),
                None => {
                    let r = run_experiment(&cfg)?;
                    cache.push((cfg, r.clone()));
                    r
                }
            };
            rows.push(SweepRow {
                value,
                method: result.method.clone(),
                rule: result.rule.name().to_string(),
                mean: result.overall.mean,
                std: result.overall.std,
                forward_passes: result.cost.forward_passes,
                param_ops: result.cost.param_ops,
            });
        }
    }
    Ok(rows)
}

pub fn export_sweep_csv(rows: &[SweepRow], axis: SweepAxis, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([axis.name(), "method", "rule", "mean", "std", "forward_passes", "param_ops"])?;
    for r in rows {
        w.write_record([
            r.value.to_string(),
            r.method.clone(),
            r.rule.clone(),
            r.mean.to_string(),
            r.std.to_string(),
            r.forward_passes.to_string(),
            r.param_ops.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn parse_sweep_csv(path: &Path) -> Result<(SweepAxis, Vec<SweepRow>)> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let axis: SweepAxis = r
        .headers()?
        .get(0)
        .ok_or_else(|| Error::invalid("empty sweep header"))?
        .parse()?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::invalid("short sweep row"));
        let num = |i: usize| -> Result<f64> {
            field(i)?
                .parse()
                .map_err(|e| Error::invalid(format!("sweep field {i}: {e}")))
        };
        let count = |i: usize| -> Result<u64> {
            field(i)?
                .parse()
                .map_err(|e| Error::invalid(format!("sweep field {i}: {e}")))
        };
        rows.push(SweepRow {
            value: num(0)?,
            method: field(1)?.to_string(),
            rule: field(2)?.to_string(),
            mean: num(3)?,
            std: num(4)?,
            forward_passes: count(5)?,
            param_ops: count(6)?,
        });
    }
    Ok((axis, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_clients_one_round_one_neighbor() {
        let mut cm = CommMatrix::new(3);
        cm.record(0, 1);
        cm.record(1, 2);
        cm.record(2, 0);
        assert_eq!(cm.total(), 3);
        assert_eq!((0..3).filter(|&i| cm.row_sum(i) == 1).count(), 3);
        assert!((0..3).all(|i| cm.get(i, i) == 0));
    }

    #[test]
    fn purity_examples() {
        let mut cm = CommMatrix::new(4);
        cm.record(0, 1);
        cm.record(2, 3);
        assert_eq!(cluster_purity(&cm, &[0, 0, 1, 1]).unwrap(), 1.0);
        cm.record(0, 2);
        cm.record(3, 1);
        assert_eq!(cluster_purity(&cm, &[0, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(cluster_purity(&cm, &[0; 4]).unwrap(), 1.0);
        assert!(cluster_purity(&CommMatrix::new(4), &[0; 4]).is_err());
        assert!(cluster_purity(&cm, &[0; 3]).is_err());
    }

    #[test]
    fn heatmap_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp/heatmap_random.csv");
        let cm = CommMatrix::from_rows(vec![vec![0, 2, 1], vec![4, 0, 0], vec![1, 1, 0]]).unwrap();
        export_heatmap_csv(&cm, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "0,1,2\n0,2,1\n4,0,0\n1,1,0\n"
        );
        assert_eq!(parse_heatmap_csv(&path).unwrap(), cm);
        let missing = dir.path().join("nope.csv");
        match parse_heatmap_csv(&missing) {
            Err(Error::Io { path, .. }) => assert_eq!(path, missing),
            other => panic!("{other:?}"),
        }
    }

    fn result(method: &str, means: &[f64]) -> ExperimentResult {
        ExperimentResult {
            method: method.into(),
            rule: AggregationRule::FedAvg,
            tau: None,
            cluster_stats: means.iter().map(|&m| Stat { mean: m, std: 0.0 }).collect(),
            overall: Stat {
                mean: Stat::of(means).mean,
                std: 0.0,
            },
            cost: CostTotals::default(),
            runs: Vec::new(),
        }
    }

    #[test]
    fn results_table_has_a_mean_row_per_method() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let results = [result("oracle", &[1.0, 2.0, 3.0]), result("random", &[4.0, 5.0, 6.5])];
        export_results_table(&results, &path).unwrap();
        let rows = parse_results_table(&path).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[3].cluster, MEAN_ROW);
        assert_eq!(rows[3].mean, 2.0);
        assert!(rows.iter().all(|r| r.std == 0.0));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("method,rule,cluster,mean,std\n"));
    }

    #[test]
    fn stat_examples() {
        assert_eq!(Stat::of(&[4.0]), Stat { mean: 4.0, std: 0.0 });
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn heatmap_csv_round_trips(rows in (1usize..8).prop_flat_map(|k| {
            prop::collection::vec(prop::collection::vec(0u64..1000, k), k)
        })) {
            let cm = CommMatrix::from_rows(rows).unwrap();
            let mut buf = Vec::new();
            cm.write_csv(&mut buf).unwrap();
            prop_assert_eq!(CommMatrix::read_csv(buf.as_slice()).unwrap(), cm);
        }

        #[test]
        fn result_rows_round_trip(
            means in prop::collection::vec(-1e6f64..1e6, 1..5),
            stds in prop::collection::vec(0f64..1e3, 5),
        ) {
            let rows: Vec<ResultRow> = means.iter().zip(&stds).enumerate().map(|(c, (&m, &s))| ResultRow {
                method: "cos_grad".into(),
                rule: "fedsim".into(),
                cluster: c.to_string(),
                mean: m,
                std: s,
            }).collect();
            let mut buf = Vec::new();
            write_result_rows(&rows, &mut buf).unwrap();
            prop_assert_eq!(read_result_rows(buf.as_slice()).unwrap(), rows);
        }
    }
}
