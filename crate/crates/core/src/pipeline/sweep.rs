//! Repeated-split evaluation of every calibrator.
//!
//! For each seed the data is split into tree / calibration / tuning / test
//! parts. Partitioners are grown on the tree split, every hyperparameter
//! candidate is fit on the calibration split, the candidate with the best
//! tuning AUAC is kept (ties: lower tuning CE(h; beta), then smaller depth,
//! then grid order), and its test metrics are reported.
//!
//! (seed, calibrator) cells run in parallel; each cell is deterministic and
//! results are collected in input order, so the output does not depend on
//! the thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::calibrators::{fit_calibrator, CalibratorKind, FitParams, FittedCalibrator};
use super::config::{PartitionerKind, SweepConfig};
use crate::dataset::{split_dataset, Dataset, SplitSpec, Splits};
use crate::error::{Error, Result};
use crate::metrics::{estimate_auac, estimate_ce_beta, evaluate, EvalRecord, MetricsReport};
use crate::partitioner::{build_kdtree, build_kmeans, Assignment, DimOrder, Partitioner};
use crate::scaler::{select_prior_variance, ScalerSample};
use crate::scaling::halve_indices;

const SCALER_SEED_SALT: u64 = 0x5DEE_CE66_D1CE_4E5B;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub calibrator: CalibratorKind,
    pub seed: u64,
    pub hyperparameters: String,
    pub tune_auac: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub calibrator: CalibratorKind,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub calibrator: CalibratorKind,
    pub n_seeds: usize,
    pub ce: MeanSd,
    pub ce_beta: MeanSd,
    pub mce: MeanSd,
    pub mce_beta: MeanSd,
    pub auac: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dataset: String,
    pub config: SweepConfig,
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
}

impl SweepReport {
    pub fn summary_for(&self, kind: CalibratorKind) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.calibrator == kind)
    }
}

struct SeedContext {
    seed: u64,
    splits: Splits,
    parts: BTreeMap<usize, Partitioner>,
}

impl SeedContext {
    fn part(&self, depth: usize) -> &Partitioner {
        &self.parts[&depth]
    }
}

pub fn build_partitioner(kind: PartitionerKind, points: &[&[f64]], depth: usize, seed: u64) -> Result<Partitioner> {
    Ok(match kind {
        PartitionerKind::Kdtree => build_kdtree(points, depth, DimOrder::Cycle)?.into(),
        PartitionerKind::Kmeans => build_kmeans(points, 1 << depth, seed)?.into(),
    })
}

fn build_context(dataset: &Dataset, cfg: &SweepConfig, seed: u64) -> Result<SeedContext> {
    let splits = split_dataset(
        dataset,
        &SplitSpec {
            fractions: cfg.fractions,
            seed,
        },
    )?;
    let points = splits.tree.embeddings();
    let mut depths = cfg.depths.clone();
    depths.push(cfg.eval_depth());
    depths.sort_unstable();
    depths.dedup();
    let mut parts = BTreeMap::new();
    for d in depths {
        parts.insert(d, build_partitioner(cfg.partitioner, &points, d, seed)?);
    }
    Ok(SeedContext { seed, splits, parts })
}

fn assign_all(part: Option<&Partitioner>, data: &Dataset) -> Result<Vec<Assignment>> {
    data.records
        .iter()
        .map(|r| match part {
            Some(p) => p.assign(&r.embedding),
            None => Ok(Assignment::OutOfBounds),
        })
        .collect()
}

/// Applies a fitted calibrator and groups the outputs by `eval_part`.
pub fn eval_records(
    fitted: &FittedCalibrator,
    fit_part: Option<&Partitioner>,
    eval_part: &Partitioner,
    data: &Dataset,
) -> Result<Vec<EvalRecord>> {
    let routed = assign_all(fit_part, data)?;
    data.records
        .iter()
        .zip(routed)
        .map(|(r, a)| {
            Ok(EvalRecord {
                partition: eval_part.assign(&r.embedding)?,
                confidence: fitted.predict(r.confidence, a)?,
                label: r.label,
            })
        })
        .collect()
}

struct Candidate {
    depth: Option<usize>,
    params: FitParams,
    label: String,
}

struct Scored {
    depth: usize,
    auac: f64,
    ce_beta: f64,
    label: String,
    fitted: FittedCalibrator,
}

fn candidates(kind: CalibratorKind, cfg: &SweepConfig, ctx: &SeedContext) -> Result<Vec<Candidate>> {
    let n_cal = ctx.splits.cal.len();
    let base = FitParams {
        delta: cfg.delta,
        seed: ctx.seed ^ SCALER_SEED_SALT,
        ..FitParams::default()
    };
    let mut out = Vec::new();
    match kind {
        CalibratorKind::None | CalibratorKind::Platt => out.push(Candidate {
            depth: None,
            params: base,
            label: String::new(),
        }),
        CalibratorKind::Umd | CalibratorKind::ScaleBin => {
            for bins in cfg.bin_counts(n_cal) {
                out.push(Candidate {
                    depth: None,
                    params: FitParams {
                        bins: Some(bins),
                        ..base
                    },
                    label: format!("B={bins}"),
                });
            }
        }
        CalibratorKind::Qab | CalibratorKind::SQab | CalibratorKind::HsQab => {
            let mut variances: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
            for (d, b) in cfg.depth_b_pairs(n_cal) {
                let mut params = FitParams { b: Some(b), ..base };
                let mut label = format!("d={d};b={b}");
                if kind == CalibratorKind::HsQab {
                    let (su, sv) = match variances.get(&d) {
                        Some(&v) => v,
                        None => {
                            let v = tune_variances(cfg, ctx, d, base.seed)?;
                            variances.insert(d, v);
                            v
                        }
                    };
                    params.sigma_u2 = su;
                    params.sigma_v2 = sv;
                    label = format!("{label};sigma_u2={su};sigma_v2={sv}");
                }
                out.push(Candidate {
                    depth: Some(d),
                    params,
                    label,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no hyperparameter candidates for {kind} with {n_cal} calibration records"
        )));
    }
    Ok(out)
}

/// Prior variances for the hierarchical scaler at depth `d`: trained on the
/// scaler half of the calibration split, scored on the tuning split.
fn tune_variances(cfg: &SweepConfig, ctx: &SeedContext, d: usize, split_seed: u64) -> Result<(f64, f64)> {
    let part = ctx.part(d);
    let cal = &ctx.splits.cal;
    let (first, _) = halve_indices(cal.len(), 0.5, split_seed)?;
    let cal_assign = assign_all(Some(part), cal)?;
    let train: Vec<ScalerSample> = first
        .iter()
        .map(|&i| ScalerSample {
            confidence: cal.records[i].confidence,
            partition: cal_assign[i],
            target: cal.records[i].label,
        })
        .collect();
    let tune = &ctx.splits.tune;
    let holdout: Vec<ScalerSample> = tune
        .records
        .iter()
        .zip(assign_all(Some(part), tune)?)
        .map(|(r, a)| ScalerSample {
            confidence: r.confidence,
            partition: a,
            target: r.label,
        })
        .collect();
    select_prior_variance(&train, &holdout, &cfg.scaler_variance_grid, 100, 1e-8)
}

fn run_cell(kind: CalibratorKind, cfg: &SweepConfig, ctx: &SeedContext) -> Result<RunResult> {
    let eval_part = ctx.part(cfg.eval_depth());
    let mut best: Option<Scored> = None;
    for c in candidates(kind, cfg, ctx)? {
        let fit_part = c.depth.map(|d| ctx.part(d));
        let scored = fit_calibrator(kind, &ctx.splits.cal, fit_part, &c.params).and_then(|fitted| {
            let recs = eval_records(&fitted, fit_part, eval_part, &ctx.splits.tune)?;
            Ok(Scored {
                depth: c.depth.unwrap_or(0),
                auac: estimate_auac(&recs, cfg.grid_size)?,
                ce_beta: estimate_ce_beta(&recs, cfg.n_bins)?.0,
                label: c.label.clone(),
                fitted,
            })
        });
        let s = match scored {
            Ok(s) => s,
            Err(e) => {
                log::debug!("{kind} seed {}: candidate {} skipped: {e}", ctx.seed, c.label);
                continue;
            }
        };
        let better = match &best {
            None => true,
            Some(b) => {
                s.auac > b.auac
                    || (s.auac == b.auac && (s.ce_beta < b.ce_beta || (s.ce_beta == b.ce_beta && s.depth < b.depth)))
            }
        };
        if better {
            best = Some(s);
        }
    }
    let best = best.ok_or_else(|| Error::InvalidParameter(format!("every {kind} candidate failed")))?;
    let fit_part = kind.needs_partitioner().then(|| ctx.part(best.depth));
    let recs = eval_records(&best.fitted, fit_part, eval_part, &ctx.splits.test)?;
    Ok(RunResult {
        dataset: cfg.dataset.clone(),
        calibrator: kind,
        seed: ctx.seed,
        hyperparameters: best.label,
        tune_auac: best.auac,
        metrics: evaluate(&recs, cfg.n_bins, cfg.grid_size)?,
    })
}

fn summarize(cfg: &SweepConfig, runs: &[RunResult]) -> Vec<SummaryRow> {
    cfg.calibrators
        .iter()
        .filter_map(|&kind| {
            let mine: Vec<&MetricsReport> = runs.iter().filter(|r| r.calibrator == kind).map(|r| &r.metrics).collect();
            if mine.is_empty() {
                return None;
            }
            let stat = |f: fn(&MetricsReport) -> f64| MeanSd::of(&mine.iter().map(|m| f(m)).collect::<Vec<_>>());
            Some(SummaryRow {
                dataset: cfg.dataset.clone(),
                calibrator: kind,
                n_seeds: mine.len(),
                ce: stat(|m| m.ce),
                ce_beta: stat(|m| m.ce_beta),
                mce: stat(|m| m.mce),
                mce_beta: stat(|m| m.mce_beta),
                auac: stat(|m| m.auac),
            })
        })
        .collect()
}

fn sweep_inner(dataset: &Dataset, cfg: &SweepConfig) -> SweepReport {
    let contexts: Vec<(u64, Result<SeedContext>)> = cfg
        .seeds
        .par_iter()
        .map(|&s| (s, build_context(dataset, cfg, s)))
        .collect();
    let mut failures = Vec::new();
    let mut ready = Vec::new();
    for (seed, ctx) in contexts {
        match ctx {
            Ok(c) => ready.push(c),
            Err(e) => {
                log::warn!("seed {seed}: setup failed: {e}");
                failures.extend(cfg.calibrators.iter().map(|&k| CellFailure {
                    calibrator: k,
                    seed,
                    reason: e.to_string(),
                }));
            }
        }
    }
    let cells: Vec<(usize, CalibratorKind)> = (0..ready.len())
        .flat_map(|i| cfg.calibrators.iter().map(move |&k| (i, k)))
        .collect();
    let outcomes: Vec<(CalibratorKind, u64, Result<RunResult>)> = cells
        .par_iter()
        .map(|&(i, k)| (k, ready[i].seed, run_cell(k, cfg, &ready[i])))
        .collect();
    let mut runs = Vec::new();
    for (kind, seed, out) in outcomes {
        match out {
            Ok(r) => runs.push(r),
            Err(e) => {
                log::warn!("{kind} seed {seed}: {e}");
                failures.push(CellFailure {
                    calibrator: kind,
                    seed,
                    reason: e.to_string(),
                });
            }
        }
    }
    let summary = summarize(cfg, &runs);
    SweepReport {
        dataset: cfg.dataset.clone(),
        config: cfg.clone(),
        runs,
        summary,
        failures,
    }
}

/// Runs the full sweep. `threads` caps parallelism (None: rayon default).
pub fn run_sweep(dataset: &Dataset, cfg: &SweepConfig, threads: Option<usize>) -> Result<SweepReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    match threads {
        None => Ok(sweep_inner(dataset, cfg)),
        Some(0) => Err(Error::InvalidParameter("thread count must be positive".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(|| sweep_inner(dataset, cfg)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guarantees::{generate_synthetic, ConfidenceLaw, SyntheticSpec};

    fn small() -> Dataset {
        let spec = SyntheticSpec::hypercube(4, 500, vec![(0.5, 0.5), (0.0, 1.0), (-0.5, 2.0), (0.2, 3.0)], ConfidenceLaw::Uniform, 3)
            .unwrap();
        generate_synthetic(&spec).unwrap()
    }

    fn cfg() -> SweepConfig {
        let mut cfg = SweepConfig::new(vec![0, 1, 2]);
        cfg.seeds = vec![1, 2];
        cfg.b_grid = Some(vec![40, 60, 100]);
        cfg
    }

    #[test]
    fn every_cell_reports() {
        let report = run_sweep(&small(), &cfg(), Some(2)).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert_eq!(report.runs.len(), 14);
        assert_eq!(report.summary.len(), 7);
        for r in &report.runs {
            assert_eq!(r.metrics.n, 200);
            for v in [r.metrics.ce, r.metrics.ce_beta, r.metrics.mce, r.metrics.mce_beta, r.metrics.auac] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn selected_pairs_respect_envelope() {
        let c = cfg();
        let report = run_sweep(&small(), &c, Some(1)).unwrap();
        let n_cal = 1200;
        for r in report.runs.iter().filter(|r| r.calibrator.needs_partitioner()) {
            let mut it = r.hyperparameters.split(';');
            let d: usize = it.next().unwrap()[2..].parse().unwrap();
            let b: usize = it.next().unwrap()[2..].parse().unwrap();
            assert!((3..=10).contains(&((n_cal >> d) / b)), "{}", r.hyperparameters);
        }
    }

    #[test]
    fn identity_reports_raw_confidences() {
        let ds = small();
        let mut c = cfg();
        c.calibrators = vec![CalibratorKind::None];
        c.seeds = vec![4];
        let report = run_sweep(&ds, &c, Some(1)).unwrap();
        let ctx = build_context(&ds, &c, 4).unwrap();
        let eval_part = ctx.part(2);
        let recs: Vec<EvalRecord> = ctx
            .splits
            .test
            .records
            .iter()
            .map(|r| EvalRecord::new(eval_part.assign(&r.embedding).unwrap(), r.confidence, r.label))
            .collect();
        assert_eq!(report.runs[0].metrics, evaluate(&recs, 10, 101).unwrap());
    }

    #[test]
    fn impossible_grid_is_a_logged_failure() {
        let mut c = cfg();
        c.calibrators = vec![CalibratorKind::Qab, CalibratorKind::None];
        c.b_grid = Some(vec![5000]);
        let report = run_sweep(&small(), &c, Some(1)).unwrap();
        assert_eq!(report.failures.len(), 2);
        assert_eq!(report.runs.len(), 2);
    }

    #[test]
    fn mean_sd() {
        let m = MeanSd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.sd, 1.0);
        assert_eq!(MeanSd::of(&[0.5]).sd, 0.0);
    }
}
