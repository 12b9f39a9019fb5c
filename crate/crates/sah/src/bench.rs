//! Synthetic data generation, ground truth, metrics, and the experiment
//! driver behind the CLI's eval/sweep commands.

use std::io::Write;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::baseline::{ExactConfig, ExactIndex};
use crate::error::{Error, Result};
use crate::index::{SahConfig, SahIndex};
use crate::vector::{dot, normalize_users, DenseVector, ResultSet, VectorSet};

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub clusters: usize,
    pub queries: usize,
    pub seed: u64,
    /// Ratio between the largest and smallest cluster norm scale.
    pub norm_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            m: 10_000,
            d: 50,
            clusters: 5,
            queries: 100,
            seed: 1,
            norm_spread: 4.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n", self.n),
            ("m", self.m),
            ("d", self.d),
            ("clusters", self.clusters),
            ("queries", self.queries),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        if self.norm_spread < 1.0 {
            return Err(Error::invalid("norm_spread", "must be at least 1"));
        }
        Ok(())
    }
}

/// Items from Gaussian clusters with geometrically spread norms, users
/// likewise but normalized, queries sampled from the items.
pub fn gen_synth(cfg: &SynthConfig) -> Result<(VectorSet, VectorSet, VectorSet)> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let items = cluster_sample(&mut rng, cfg.n, cfg.d, cfg.clusters, cfg.norm_spread);
    let raw_users = cluster_sample(&mut rng, cfg.m, cfg.d, cfg.clusters, 1.0);
    let (users, _) = normalize_users(&raw_users);
    let queries = VectorSet::new(
        cfg.d,
        (0..cfg.queries)
            .map(|i| {
                let src = items.get(rng.random_range(0..items.len()));
                DenseVector::new(i as u32, src.coords.clone())
            })
            .collect(),
    )?;
    Ok((items, users, queries))
}

fn cluster_sample(
    rng: &mut ChaCha12Rng,
    count: usize,
    d: usize,
    clusters: usize,
    norm_spread: f64,
) -> VectorSet {
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..d).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let scales: Vec<f64> = (0..clusters)
        .map(|c| {
            if clusters == 1 {
                1.0
            } else {
                norm_spread.powf(c as f64 / (clusters - 1) as f64)
            }
        })
        .collect();
    let vectors = (0..count)
        .map(|i| {
            let c = rng.random_range(0..clusters);
            let coords = (0..d)
                .map(|j| {
                    let noise: f64 = rng.sample(StandardNormal);
                    ((centers[c][j] + 0.5 * noise) * scales[c]) as f32
                })
                .collect();
            DenseVector::new(i as u32, coords)
        })
        .collect();
    VectorSet::new(d, vectors).expect("generated vectors are well-formed")
}

/// Per-user k-th largest item score. A user answers yes to query q at level
/// k iff <u,q> >= this threshold, so truth over many queries is O(m) each.
pub fn user_thresholds(items: &VectorSet, unit_users: &[DenseVector], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if k > items.len() {
        return Err(Error::invalid(
            "k",
            format!("k = {k} exceeds item count {}", items.len()),
        ));
    }
    Ok(unit_users
        .iter()
        .map(|u| {
            // ascending heap of the current top-k scores; front is the k-th
            let mut top: Vec<f64> = Vec::with_capacity(k + 1);
            for p in items.vectors() {
                let s = dot(&p.coords, &u.coords);
                if top.len() < k {
                    let pos = top.partition_point(|x| *x < s);
                    top.insert(pos, s);
                } else if s > top[0] {
                    top.remove(0);
                    let pos = top.partition_point(|x| *x < s);
                    top.insert(pos, s);
                }
            }
            top[0]
        })
        .collect())
}

/// Exact reverse top-k answers for every query, via user thresholds.
pub fn exact_truth(
    items: &VectorSet,
    users: &VectorSet,
    queries: &VectorSet,
    k: usize,
) -> Result<Vec<ResultSet>> {
    if items.dim() != users.dim() || items.dim() != queries.dim() {
        return Err(Error::DimensionMismatch {
            expected: items.dim(),
            got: users.dim().max(queries.dim()),
        });
    }
    let (unit_users, _) = normalize_users(users);
    let thresholds = user_thresholds(items, unit_users.vectors(), k)?;
    Ok(queries
        .vectors()
        .iter()
        .map(|q| {
            let mut rs = ResultSet::new(q.id);
            for (u, t) in unit_users.vectors().iter().zip(&thresholds) {
                if dot(&u.coords, &q.coords) >= *t {
                    rs.user_ids.insert(u.id);
                }
            }
            rs
        })
        .collect())
}

/// F1 with the empty-set conventions: both empty -> 1, exactly one empty -> 0.
pub fn f1(pred: &ResultSet, truth: &ResultSet) -> f64 {
    if pred.user_ids.is_empty() && truth.user_ids.is_empty() {
        return 1.0;
    }
    if pred.user_ids.is_empty() || truth.user_ids.is_empty() {
        return 0.0;
    }
    let overlap = pred.user_ids.intersection(&truth.user_ids).count() as f64;
    let precision = overlap / pred.user_ids.len() as f64;
    let recall = overlap / truth.user_ids.len() as f64;
    if overlap == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryStats {
    pub query_id: u32,
    pub exact_size: usize,
    pub returned_size: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub k: usize,
    pub per_query: Vec<QueryStats>,
    pub mean_f1: f64,
    pub median_f1: f64,
    pub mean_query_secs: f64,
    pub p95_query_secs: f64,
    pub build_secs: f64,
}

impl EvalReport {
    fn from_runs(
        method: &str,
        k: usize,
        runs: Vec<(u32, ResultSet, f64)>,
        truth: &[ResultSet],
        build_secs: f64,
    ) -> Self {
        let per_query: Vec<QueryStats> = runs
            .into_iter()
            .zip(truth)
            .map(|((query_id, pred, wall_secs), t)| {
                let overlap = pred.user_ids.intersection(&t.user_ids).count() as f64;
                let precision = if pred.user_ids.is_empty() {
                    if t.user_ids.is_empty() {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    overlap / pred.user_ids.len() as f64
                };
                let recall = if t.user_ids.is_empty() {
                    if pred.user_ids.is_empty() {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    overlap / t.user_ids.len() as f64
                };
                QueryStats {
                    query_id,
                    exact_size: t.user_ids.len(),
                    returned_size: pred.user_ids.len(),
                    precision,
                    recall,
                    f1: f1(&pred, t),
                    wall_secs,
                }
            })
            .collect();
        let mut f1s: Vec<f64> = per_query.iter().map(|s| s.f1).collect();
        f1s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut times: Vec<f64> = per_query.iter().map(|s| s.wall_secs).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let count = per_query.len().max(1) as f64;
        Self {
            method: method.to_string(),
            k,
            mean_f1: f1s.iter().sum::<f64>() / count,
            median_f1: percentile(&f1s, 0.5),
            mean_query_secs: times.iter().sum::<f64>() / count,
            p95_query_secs: percentile(&times, 0.95),
            build_secs,
            per_query,
        }
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[idx]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sah,
    Exact,
    Brute,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Sah => "sah",
            Method::Exact => "exact",
            Method::Brute => "brute",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sah" => Ok(Method::Sah),
            "exact" => Ok(Method::Exact),
            "brute" => Ok(Method::Brute),
            other => Err(Error::invalid(
                "method",
                format!("{other:?} is not one of sah, exact, brute"),
            )),
        }
    }
}

pub struct ExperimentConfig {
    pub sah: SahConfig,
    pub ks: Vec<usize>,
    pub methods: Vec<Method>,
    pub trials: usize,
}

/// Runs each (method, k) over all queries `trials` times with distinct index
/// seeds and averages the per-trial reports into one row each.
pub fn run_experiment(
    items: &VectorSet,
    users: &VectorSet,
    queries: &VectorSet,
    cfg: &ExperimentConfig,
) -> Result<Vec<EvalReport>> {
    if cfg.trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    for &k in &cfg.ks {
        if k == 0 || k > cfg.sah.k_max {
            return Err(Error::invalid(
                "k",
                format!("k = {k} outside 1..=k_max ({})", cfg.sah.k_max),
            ));
        }
    }
    let mut truths: Vec<Vec<ResultSet>> = Vec::with_capacity(cfg.ks.len());
    for &k in &cfg.ks {
        truths.push(exact_truth(items, users, queries, k)?);
    }

    let mut reports = Vec::new();
    for &method in &cfg.methods {
        let mut trial_reports: Vec<Vec<EvalReport>> = Vec::new();
        for trial in 0..cfg.trials {
            let mut sah_cfg = cfg.sah;
            sah_cfg.seed = cfg.sah.seed.wrapping_add(trial as u64);
            trial_reports.push(run_trial(items, users, queries, method, &sah_cfg, &cfg.ks, &truths)?);
        }
        for (ki, _) in cfg.ks.iter().enumerate() {
            reports.push(average_reports(
                trial_reports.iter().map(|t| &t[ki]).collect::<Vec<_>>(),
            ));
        }
    }
    Ok(reports)
}

fn run_trial(
    items: &VectorSet,
    users: &VectorSet,
    queries: &VectorSet,
    method: Method,
    sah_cfg: &SahConfig,
    ks: &[usize],
    truths: &[Vec<ResultSet>],
) -> Result<Vec<EvalReport>> {
    match method {
        Method::Sah => {
            let start = Instant::now();
            let idx = SahIndex::build(items, users, *sah_cfg)?;
            let build_secs = start.elapsed().as_secs_f64();
            ks.iter()
                .zip(truths)
                .map(|(&k, truth)| {
                    let runs = timed_queries(queries, |q| idx.query(q, k))?;
                    Ok(EvalReport::from_runs("sah", k, runs, truth, build_secs))
                })
                .collect()
        }
        Method::Exact => {
            let ecfg = ExactConfig {
                k_max: sah_cfg.k_max,
                n0: sah_cfg.n0,
                seed: sah_cfg.seed,
                prefix_factor: sah_cfg.prefix_factor,
            };
            let start = Instant::now();
            let idx = ExactIndex::build(items, users, ecfg)?;
            let build_secs = start.elapsed().as_secs_f64();
            ks.iter()
                .zip(truths)
                .map(|(&k, truth)| {
                    let runs = timed_queries(queries, |q| idx.query(q, k))?;
                    Ok(EvalReport::from_runs("exact", k, runs, truth, build_secs))
                })
                .collect()
        }
        Method::Brute => {
            let (unit_users, _) = normalize_users(users);
            ks.iter()
                .zip(truths)
                .map(|(&k, truth)| {
                    let thresholds = user_thresholds(items, unit_users.vectors(), k)?;
                    let runs = timed_queries(queries, |q| {
                        let mut rs = ResultSet::new(q.id);
                        for (u, t) in unit_users.vectors().iter().zip(&thresholds) {
                            if dot(&u.coords, &q.coords) >= *t {
                                rs.user_ids.insert(u.id);
                            }
                        }
                        Ok(rs)
                    })?;
                    Ok(EvalReport::from_runs("brute", k, runs, truth, 0.0))
                })
                .collect()
        }
    }
}

fn timed_queries<F>(queries: &VectorSet, mut run: F) -> Result<Vec<(u32, ResultSet, f64)>>
where
    F: FnMut(&DenseVector) -> Result<ResultSet>,
{
    queries
        .vectors()
        .iter()
        .map(|q| {
            let start = Instant::now();
            let rs = run(q)?;
            Ok((q.id, rs, start.elapsed().as_secs_f64()))
        })
        .collect()
}

fn average_reports(trials: Vec<&EvalReport>) -> EvalReport {
    let count = trials.len() as f64;
    let first = trials[0];
    EvalReport {
        method: first.method.clone(),
        k: first.k,
        per_query: first.per_query.clone(),
        mean_f1: trials.iter().map(|r| r.mean_f1).sum::<f64>() / count,
        median_f1: trials.iter().map(|r| r.median_f1).sum::<f64>() / count,
        mean_query_secs: trials.iter().map(|r| r.mean_query_secs).sum::<f64>() / count,
        p95_query_secs: trials.iter().map(|r| r.p95_query_secs).sum::<f64>() / count,
        build_secs: trials.iter().map(|r| r.build_secs).sum::<f64>() / count,
    }
}

/// Summary table, one row per (method, k); wall-clock columns vary run to run.
pub fn write_report_csv<W: Write>(w: &mut W, reports: &[EvalReport]) -> Result<()> {
    writeln!(
        w,
        "method,k,mean_f1,median_f1,mean_query_secs,p95_query_secs,build_secs"
    )?;
    for r in reports {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.9},{:.9},{:.6}",
            r.method, r.k, r.mean_f1, r.median_f1, r.mean_query_secs, r.p95_query_secs, r.build_secs
        )?;
    }
    Ok(())
}
