//! Acceptance suite: one PASS/FAIL line per criterion, each at its stated
//! tolerance and runtime budget.
//!
//! A criterion fails if any of its checks fails or it exceeds its budget.
//! Checks listed in `KNOWN_RED` are expected to fail for an analysed reason;
//! they are still reported as FAIL. The process exits non-zero if any other
//! check fails, or if a known-red check unexpectedly passes (the analysis
//! would then be stale).

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qacal_core::dataset::{split_dataset, SplitSpec};
use qacal_core::guarantees::{
    choose_b, choose_b_with, epsilon_bound_qa, generate_synthetic, validate_conditional_guarantee, BoundQuery,
    ConfidenceLaw, LogBase, SyntheticSpec,
};
use qacal_core::metrics::{estimate_ce, estimate_ce_beta, EvalRecord};
use qacal_core::partitioner::{build_kdtree, DimOrder};
use qacal_core::pipeline::{fit_calibrator, run_sweep, CalibratorKind, FitParams, SweepConfig};
use qacal_core::scaler::{fit_scaler, logistic, ScalerMode, ScalerObjective, ScalerOptions, ScalerSample};
use qacal_core::umd::{fit_umd, DEFAULT_DELTA};
use qacal_core::{Assignment, Partitioner};

/// `(check id, analysis)` for checks that fail by design.
const KNOWN_RED: &[(&str, &str)] = &[(
    "C4.b_near_300",
    "with the natural log the bound is met at b = 226 for N = 1000, alpha = 0.1, eps = 0.1; \
     the [280, 320] range holds under log base 2 (b = 304) or under ln with alpha near 0.017. \
     The natural log is kept because the Hoeffding step of the derivation requires it, and \
     at b = 300 the ln bound gives eps = 0.0838, within the +/-0.02 tolerance of 0.1",
)];

struct Check {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn check(id: &'static str, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        id,
        pass,
        detail: detail.into(),
    }
}

struct Criterion {
    number: u8,
    title: &'static str,
    budget: Duration,
    run: fn() -> Vec<Check>,
}

fn main() {
    let criteria = [
        Criterion {
            number: 1,
            title: "two-group calibration fixture",
            budget: Duration::from_secs(1),
            run: c1_fixture,
        },
        Criterion {
            number: 2,
            title: "UMD hand trace and brute-force oracle",
            budget: Duration::from_secs(5),
            run: c2_umd,
        },
        Criterion {
            number: 3,
            title: "conditional guarantee Monte-Carlo coverage",
            budget: Duration::from_secs(120),
            run: c3_coverage,
        },
        Criterion {
            number: 4,
            title: "bound algebra",
            budget: Duration::from_secs(1),
            run: c4_bounds,
        },
        Criterion {
            number: 5,
            title: "depth-0 reductions",
            budget: Duration::from_secs(10),
            run: c5_depth_zero,
        },
        Criterion {
            number: 6,
            title: "end-to-end ordering on heterogeneous data",
            budget: Duration::from_secs(600),
            run: c6_ordering,
        },
        Criterion {
            number: 7,
            title: "scaler numerics",
            budget: Duration::from_secs(30),
            run: c7_scaler,
        },
        Criterion {
            number: 8,
            title: "sweep determinism",
            budget: Duration::from_secs(300),
            run: c8_determinism,
        },
    ];

    let mut unexpected = Vec::new();
    let mut passed = 0;
    for c in &criteria {
        let start = Instant::now();
        let checks = (c.run)();
        let elapsed = start.elapsed();
        let in_budget = elapsed <= c.budget;
        let ok = in_budget && checks.iter().all(|k| k.pass);
        passed += ok as usize;
        let summary: Vec<String> = checks
            .iter()
            .map(|k| format!("{}{}: {}", if k.pass { "" } else { "!" }, k.id, k.detail))
            .collect();
        println!(
            "C{} {} {} [{:.2}s / {}s budget] {}",
            c.number,
            if ok { "PASS" } else { "FAIL" },
            c.title,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            summary.join("; ")
        );
        if !in_budget {
            unexpected.push(format!("C{} over budget", c.number));
        }
        for k in &checks {
            let known = KNOWN_RED.iter().find(|(id, _)| *id == k.id);
            match (k.pass, known) {
                (false, Some((_, why))) => println!("    known red {}: {}", k.id, why),
                (false, None) => unexpected.push(format!("{} failed", k.id)),
                (true, Some(_)) => unexpected.push(format!("{} passed but is listed as known red", k.id)),
                (true, None) => {}
            }
        }
    }
    println!("acceptance: {passed}/{} criteria PASS", criteria.len());
    if !unexpected.is_empty() {
        println!("acceptance: unexpected results: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}

fn c1_fixture() -> Vec<Check> {
    let mut recs = Vec::new();
    for (s, correct) in [(0, 6), (0, 7), (1, 9), (1, 10)] {
        for i in 0..10 {
            recs.push(EvalRecord::new(Assignment::Partition(s), 0.8, if i < correct { 1.0 } else { 0.0 }));
        }
    }
    let ce = estimate_ce(&recs, 10).unwrap();
    let ce_beta = estimate_ce_beta(&recs, 10).unwrap().0;
    vec![
        check("C1.ce", ce.abs() <= 1e-12, format!("ce={ce:e} (want 0 +/- 1e-12)")),
        check(
            "C1.ce_beta",
            (ce_beta - 0.15).abs() <= 1e-12,
            format!("ce_beta={ce_beta} (want 0.15 +/- 1e-12)"),
        ),
    ]
}

/// Literal UMD: sort by confidence (ties by input position), boundaries at
/// order statistics ceil(b (n + 1) / B), bin means over the strictly interior
/// order statistics, edges at the boundary confidences.
fn umd_oracle(pairs: &[(f64, f64)], bins: usize) -> (Vec<f64>, Vec<f64>) {
    let n = pairs.len();
    let mut sorted: Vec<(f64, usize, f64)> = pairs.iter().enumerate().map(|(i, &(h, y))| (h, i, y)).collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    // order statistic k (1-based) is sorted[k - 1]
    let a: Vec<usize> = (0..=bins)
        .map(|b| ((b * (n + 1)) as f64 / bins as f64).ceil() as usize)
        .collect();
    let mut means = Vec::new();
    for j in 1..=bins {
        let mut sum = 0.0;
        let mut count = 0;
        for k in 1..=n {
            if a[j - 1] < k && k < a[j] {
                sum += sorted[k - 1].2;
                count += 1;
            }
        }
        means.push(sum / count as f64);
    }
    let mut edges = vec![0.0];
    for j in 1..bins {
        edges.push(sorted[a[j] - 1].0);
    }
    edges.push(1.0);
    (edges, means)
}

fn c2_umd() -> Vec<Check> {
    let h = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let y = [0.0, 1.0, 0.0, 1.0, 1.0, 1.0];
    let pairs: Vec<(f64, f64)> = h.iter().copied().zip(y.iter().copied()).collect();
    let hand = fit_umd(&pairs, 2, DEFAULT_DELTA).unwrap();
    let hand_ok = hand.edges == [0.0, 0.4, 1.0] && hand.means == [1.0 / 3.0, 1.0];

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let bins = rng.random_range(1..=3usize);
        let n = rng.random_range(2 * bins..=12);
        // Confidences on a coarse grid so ties occur.
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0..=20) as f64 / 20.0, rng.random_range(0..=1) as f64))
            .collect();
        let fit = fit_umd(&pairs, bins, DEFAULT_DELTA).unwrap();
        let (edges, means) = umd_oracle(&pairs, bins);
        let predictions_agree = (0..=100).all(|q| {
            let q = q as f64 / 100.0;
            let j = (1..bins).filter(|&j| edges[j] <= q).count();
            fit.apply(q).unwrap() == means[j]
        });
        if fit.edges != edges || fit.means != means || !predictions_agree {
            mismatches += 1;
        }
    }
    vec![
        check(
            "C2.hand_trace",
            hand_ok,
            format!("edges={:?} means={:?} (want [0, 0.4, 1], [1/3, 1])", hand.edges, hand.means),
        ),
        check("C2.oracle", mismatches == 0, format!("{mismatches}/1000 instances differ from the oracle")),
    ]
}

fn heterogeneous(points: usize, seed: u64) -> SyntheticSpec {
    let slopes = [0.3, 0.8, 1.5, 3.0];
    SyntheticSpec::hypercube(4, points, slopes.iter().map(|&c| (0.0, c)).collect(), ConfidenceLaw::Uniform, seed)
        .unwrap()
}

fn c3_coverage() -> Vec<Check> {
    let spec = heterogeneous(1000, 17);
    let n = spec.total_points();
    let b = choose_b(n, 0.1, 0.0, 0.15).unwrap();
    let r = validate_conditional_guarantee(&spec, 2, b, 0.1, 200).unwrap();
    vec![check(
        "C3.coverage",
        r.coverage >= 0.9,
        format!(
            "N={n} b={b} eps={:.4} coverage={:.3} over {} trials (want >= 0.90), worst gap {:.4}",
            r.epsilon, r.coverage, r.trials, r.worst_gap
        ),
    )]
}

fn c4_bounds() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps = |n, b, alpha, nu| epsilon_bound_qa(&BoundQuery { n, b, alpha, nu }).unwrap();

    let mut monotone_bad = 0;
    let mut additive_bad = 0;
    for _ in 0..100 {
        let n = rng.random_range(100..100_000usize);
        let alpha = rng.random_range(0.01..0.5);
        let b = rng.random_range(2..n / 2);
        let nu = rng.random_range(0.0..0.2);
        if eps(n, b + 1, alpha, 0.0) >= eps(n, b, alpha, 0.0) {
            monotone_bad += 1;
        }
        if eps(n, b, alpha, nu) != eps(n, b, alpha, 0.0) + nu {
            additive_bad += 1;
        }
    }

    let mut consistent_bad = 0;
    let mut feasible = 0;
    while feasible < 100 {
        let n = rng.random_range(50..200_000usize);
        let alpha = rng.random_range(0.01..0.5);
        let nu = rng.random_range(0.0..0.05);
        let target = nu + rng.random_range(0.02..0.3);
        let Ok(b) = choose_b(n, alpha, nu, target) else { continue };
        feasible += 1;
        let ok = eps(n, b, alpha, nu) <= target && (b == 2 || eps(n, b - 1, alpha, nu) > target);
        consistent_bad += !ok as usize;
    }

    let b_ln = choose_b(1000, 0.1, 0.0, 0.1).unwrap();
    let b_log2 = choose_b_with(1000, 0.1, 0.0, 0.1, LogBase::Two).unwrap();
    let eps_300 = eps(1000, 300, 0.1, 0.0);
    vec![
        check("C4.monotone", monotone_bad == 0, format!("{monotone_bad}/100 violations")),
        check("C4.additive", additive_bad == 0, format!("{additive_bad}/100 inexact")),
        check("C4.choose_b", consistent_bad == 0, format!("{consistent_bad}/100 inconsistent")),
        check(
            "C4.eps_at_300",
            (eps_300 - 0.1).abs() <= 0.02,
            format!("eps(N=1000, b=300)={eps_300:.4} (want 0.1 +/- 0.02)"),
        ),
        check(
            "C4.b_near_300",
            (280..=320).contains(&b_ln),
            format!("choose_b(1000, 0.1, 0, 0.1)={b_ln} (want [280, 320]; {b_log2} under log base 2)"),
        ),
    ]
}

fn c5_depth_zero() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ce_bad = 0;
    for set in 0..50 {
        let n = rng.random_range(20..2000);
        let embeddings: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let refs: Vec<&[f64]> = embeddings.iter().map(|e| e.as_slice()).collect();
        let tree = build_kdtree(&refs, 0, DimOrder::Cycle).unwrap();
        // Alternate between few distinct confidences and continuous ones.
        let recs: Vec<EvalRecord> = embeddings
            .iter()
            .map(|e| {
                let h = if set % 2 == 0 {
                    rng.random_range(0..10) as f64 / 10.0
                } else {
                    rng.random::<f64>()
                };
                let y = if rng.random::<f64>() < h { 1.0 } else { 0.0 };
                EvalRecord::new(tree.assign(e).unwrap(), h, y)
            })
            .collect();
        let ce = estimate_ce(&recs, 10).unwrap();
        let ce_beta = estimate_ce_beta(&recs, 10).unwrap().0;
        ce_bad += (ce.to_bits() != ce_beta.to_bits()) as usize;
    }

    let mut pred_bad = 0;
    let mut compared = 0;
    for seed in 0..5 {
        let ds = generate_synthetic(&heterogeneous(500, 50 + seed)).unwrap();
        let splits = split_dataset(&ds, &SplitSpec::with_seed(seed)).unwrap();
        let part: Partitioner = build_kdtree(&splits.tree.embeddings(), 0, DimOrder::Cycle).unwrap().into();
        for b in [20, 50, 120] {
            let params = FitParams {
                b: Some(b),
                bins: Some(splits.cal.len() / b),
                ..FitParams::default()
            };
            let umd = fit_calibrator(CalibratorKind::Umd, &splits.cal, None, &params).unwrap();
            let qab = fit_calibrator(CalibratorKind::Qab, &splits.cal, Some(&part), &params).unwrap();
            for r in &splits.test.records {
                let a = part.assign(&r.embedding).unwrap();
                compared += 1;
                if umd.predict(r.confidence, a).unwrap() != qab.predict(r.confidence, a).unwrap() {
                    pred_bad += 1;
                }
            }
        }
    }
    vec![
        check("C5.ce_beta_equals_ce", ce_bad == 0, format!("{ce_bad}/50 sets not bit-identical")),
        check(
            "C5.qab_equals_umd",
            pred_bad == 0,
            format!("{pred_bad}/{compared} test predictions differ"),
        ),
    ]
}

fn c6_ordering() -> Vec<Check> {
    let ds = generate_synthetic(&heterogeneous(4000, 2024)).unwrap();
    let mut cfg = SweepConfig::new(vec![0, 1, 2, 3]);
    cfg.dataset = "heterogeneous".into();
    // CE(h; beta) is measured on the depth-2 tree, one leaf per cluster.
    cfg.eval_depth = Some(2);
    let report = run_sweep(&ds, &cfg, None).unwrap();
    let mean = |k: CalibratorKind| report.summary_for(k).map_or(f64::NAN, |r| r.ce_beta.mean);
    let seeds = |k: CalibratorKind| report.summary_for(k).map_or(0, |r| r.n_seeds);
    let hs = mean(CalibratorKind::HsQab);
    let platt = mean(CalibratorKind::Platt);
    let qab = mean(CalibratorKind::Qab);
    let umd = mean(CalibratorKind::Umd);
    let baselines = [CalibratorKind::None, CalibratorKind::Umd, CalibratorKind::Platt, CalibratorKind::ScaleBin];
    let (best_kind, best) = baselines
        .iter()
        .map(|&k| (k, mean(k)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let gain = 1.0 - hs / best;
    let complete = CalibratorKind::ALL.iter().all(|&k| seeds(k) == 8) && report.failures.is_empty();
    vec![
        check("C6.complete", complete, format!("{} runs, {} failures", report.runs.len(), report.failures.len())),
        check("C6.hs_qab_lt_platt", hs < platt, format!("HS-QAB {hs:.4} vs S {platt:.4}")),
        check("C6.qab_lt_umd", qab < umd, format!("QAB {qab:.4} vs B {umd:.4}")),
        check(
            "C6.gain",
            gain >= 0.10,
            format!("HS-QAB improves on best baseline {} ({best:.4}) by {:.1}% (want >= 10%)", best_kind.label(), 100.0 * gain),
        ),
    ]
}

fn scaler_data(rng: &mut ChaCha8Rng, n: usize, groups: usize) -> Vec<ScalerSample> {
    let effects: Vec<(f64, f64)> = (0..groups)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.3..3.0)))
        .collect();
    (0..n)
        .map(|i| {
            let s = i % groups;
            let h: f64 = rng.random_range(0.01..0.99);
            let (a, c) = effects[s];
            let p = logistic(a + c * (h / (1.0 - h)).ln());
            ScalerSample {
                confidence: h,
                partition: Assignment::Partition(s),
                target: if rng.random::<f64>() < p { 1.0 } else { 0.0 },
            }
        })
        .collect()
}

fn c7_scaler() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let data = scaler_data(&mut rng, 400, 4);
    let obj = ScalerObjective::new(&data, &ScalerOptions::hierarchical(0.5, 2.0));
    let mut worst_rel = 0.0f64;
    for _ in 0..10 {
        let theta: Vec<f64> = (0..obj.n_params()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = obj.gradient(&theta);
        for j in 0..theta.len() {
            let step = 1e-5;
            let (mut hi, mut lo) = (theta.clone(), theta.clone());
            hi[j] += step;
            lo[j] -= step;
            let fd = (obj.value(&hi) - obj.value(&lo)) / (2.0 * step);
            worst_rel = worst_rel.max((g[j] - fd).abs() / g[j].abs().max(1.0));
        }
    }

    let data = scaler_data(&mut rng, 2000, 5);
    let shrunk = fit_scaler(&data, &ScalerOptions::hierarchical(1e-8, 1e-8)).unwrap().model;
    let pooled = fit_scaler(&data, &ScalerOptions::new(ScalerMode::Pooled)).unwrap().model;
    let mut shrink_gap = (shrunk.b0 - pooled.b0).abs().max((shrunk.b1 - pooled.b1).abs());
    for s in 0..5 {
        for q in 1..100 {
            let h = q as f64 / 100.0;
            let a = Assignment::Partition(s);
            shrink_gap = shrink_gap.max((shrunk.apply(h, a) - pooled.apply(h, a)).abs());
        }
    }

    let mut dips = 0;
    let mut worst_dip = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(100..2000);
        let groups = rng.random_range(1..8);
        let data = scaler_data(&mut rng, n, groups);
        let opts = ScalerOptions::hierarchical(10f64.powf(rng.random_range(-2.0..1.0)), 10f64.powf(rng.random_range(-2.0..1.0)));
        let fit = fit_scaler(&data, &opts).unwrap();
        let slack = 1e-12 * fit.objective_trace[0].abs();
        for w in fit.objective_trace.windows(2) {
            worst_dip = worst_dip.max(w[0] - w[1]);
            dips += (w[1] < w[0] - slack) as usize;
        }
    }
    vec![
        check(
            "C7.gradient",
            worst_rel <= 1e-5,
            format!("max relative error {worst_rel:.2e} (want <= 1e-5, denominator floored at 1)"),
        ),
        check(
            "C7.shrinkage",
            shrink_gap <= 1e-3,
            format!("sigma2=1e-8 vs pooled: max parameter/probability gap {shrink_gap:.2e} (want <= 1e-3)"),
        ),
        check(
            "C7.monotone",
            dips == 0,
            format!("{dips} decreasing steps over 20 fits (largest dip {worst_dip:.1e}, rounding slack 1e-12 relative)"),
        ),
    ]
}

fn sweep_once(data: &Path, cfg: &Path, out: &Path, threads: usize) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_qacal"))
        .args(["sweep", "--config"])
        .arg(cfg)
        .arg("--data")
        .arg(data)
        .arg("--out-dir")
        .arg(out)
        .env("QACAL_THREADS", threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn c8_determinism() -> Vec<Check> {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ds = generate_synthetic(&heterogeneous(1000, 88)).unwrap();
    let data = d.join("data.jsonl");
    qacal_core::dataset::save_dataset(&data, &ds).unwrap();
    let cfg = d.join("sweep.json");
    fs::write(&cfg, r#"{"dataset": "determinism", "depths": [0, 1, 2]}"#).unwrap();
    let runs = [("first", 1), ("second", 1), ("eight", 8)];
    for (name, threads) in runs {
        if let Err(e) = sweep_once(&data, &cfg, &d.join(name), threads) {
            return vec![check("C8.sweep_runs", false, format!("sweep failed: {e}"))];
        }
    }
    let mut differing = Vec::new();
    for file in ["runs.csv", "summary.csv", "partitions.csv"] {
        let first = fs::read(d.join("first").join(file)).unwrap();
        for (name, _) in &runs[1..] {
            if fs::read(d.join(name).join(file)).unwrap() != first {
                differing.push(format!("{file} ({name})"));
            }
        }
    }
    let rows = fs::read_to_string(d.join("first").join("runs.csv")).unwrap().lines().count() - 1;
    vec![check(
        "C8.byte_identical",
        differing.is_empty() && rows == 56,
        format!(
            "{rows} run rows; CSVs differing from the first run: {}",
            if differing.is_empty() { "none".to_string() } else { differing.join(", ") }
        ),
    )]
}
