use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;

use qacal_core::dataset::{load_dataset, save_dataset, split_dataset, write_jsonl, LabelKind, SplitSpec};
use qacal_core::guarantees::{
    bound_curve, choose_b_with, generate_synthetic, choose_bins_umd, epsilon_bound_qa_with, epsilon_bound_umd, validate_conditional_guarantee,
    BoundQuery, LogBase, SyntheticSpec,
};
use qacal_core::metrics::{evaluate, EvalRecord};
use qacal_core::pipeline::report::write_atomic;
use qacal_core::pipeline::{
    build_partitioner, fit_calibrator, load_bundle, load_report, run_sweep, save_bundle, summary_markdown,
    write_outputs, CalibratorKind, FitParams, PartitionerKind, SweepConfig,
};
use qacal_core::scaler::{select_prior_variance, ScalerSample, DEFAULT_VARIANCE_GRID};
use qacal_core::scaling::{estimate_misspecification, halve_indices, MISSPECIFICATION_BINS};
use qacal_core::{Assignment, Dataset, Partitioner};

use crate::args::*;
use crate::{CliError, CliResult};

pub fn dispatch(cmd: Command, m: &ArgMatches) -> CliResult<()> {
    match cmd {
        Command::Ingest(a) => ingest(merge_config(a, m)?),
        Command::Split(a) => split(merge_config(a, m)?),
        Command::Partition(a) => partition(merge_config(a, m)?),
        Command::Fit(a) => fit(merge_config(a, m)?),
        Command::Predict(a) => predict(merge_config(a, m)?),
        Command::Evaluate(a) => evaluate_cmd(merge_config(a, m)?),
        Command::Sweep(a) => sweep(a),
        Command::Simulate(a) => simulate(merge_config(a, m)?),
        Command::Bound(a) => bound(merge_config(a, m)?),
        Command::ExportReport(a) => export(merge_config(a, m)?),
    }
}

/// Fills every flag not given on the command line from the `--config` file.
fn merge_config<T: Serialize + DeserializeOwned>(args: T, m: &ArgMatches) -> CliResult<T> {
    let Some(path) = m.get_one::<PathBuf>("config") else {
        return Ok(args);
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(anyhow::anyhow!("{}: {e}", path.display())))?;
    let file: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| CliError::invalid(format!("{}: expected a JSON object: {e}", path.display())))?;
    let serde_json::Value::Object(mut merged) = serde_json::to_value(&args)? else {
        unreachable!("argument structs serialize to objects")
    };
    for (key, value) in file {
        if key == "config" || !merged.contains_key(&key) {
            return Err(CliError::invalid(format!("{}: unknown key {key:?}", path.display())));
        }
        if m.value_source(&key) != Some(ValueSource::CommandLine) {
            merged.insert(key, value);
        }
    }
    serde_json::from_value(serde_json::Value::Object(merged))
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::invalid(format!("missing required flag {flag}")))
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn ingest(a: IngestArgs) -> CliResult<()> {
    let ds = load_dataset(require(a.input, "--in")?, a.expect_dim)?;
    let proxies = ds.records.iter().filter(|r| r.label_kind == LabelKind::Proxy).count();
    let n = ds.len() as f64;
    print_json(&serde_json::json!({
        "records": ds.len(),
        "dim": ds.embedding_dim,
        "ground_truth_labels": ds.len() - proxies,
        "proxy_labels": proxies,
        "mean_confidence": ds.records.iter().map(|r| r.confidence).sum::<f64>() / n,
        "mean_label": ds.records.iter().map(|r| r.label).sum::<f64>() / n,
    }))
}

fn split(a: SplitArgs) -> CliResult<()> {
    let ds = load_dataset(require(a.input, "--in")?, None)?;
    let fractions: [f64; 4] = a
        .fractions
        .as_slice()
        .try_into()
        .map_err(|_| CliError::invalid("--fractions needs exactly four values"))?;
    let splits = split_dataset(&ds, &SplitSpec { fractions, seed: a.seed })?;
    fs::create_dir_all(&a.out_dir)?;
    let mut sizes = BTreeMap::new();
    for (name, part) in ["tree", "cal", "tune", "test"].into_iter().zip(splits.parts()) {
        save_dataset(a.out_dir.join(format!("{name}.jsonl")), part)?;
        sizes.insert(name, part.len());
    }
    print_json(&sizes)
}

fn partition(a: PartitionArgs) -> CliResult<()> {
    let ds = load_dataset(require(a.input, "--in")?, None)?;
    let depth = require(a.depth, "--depth")?;
    let kind = match a.kind {
        PartitionKind::Kdtree => PartitionerKind::Kdtree,
        PartitionKind::Kmeans => PartitionerKind::Kmeans,
    };
    let part = build_partitioner(kind, &ds.embeddings(), depth, a.seed)?;
    part.save(require(a.out, "--out")?)?;
    print_json(&serde_json::json!({
        "partitions": part.n_partitions(),
        "dim": part.dim(),
        "fingerprint": part.fingerprint(),
    }))
}

fn kind_of(m: Method) -> CalibratorKind {
    match m {
        Method::Umd => CalibratorKind::Umd,
        Method::Platt => CalibratorKind::Platt,
        Method::ScaleBin => CalibratorKind::ScaleBin,
        Method::Qab => CalibratorKind::Qab,
        Method::SQab => CalibratorKind::SQab,
        Method::HsQab => CalibratorKind::HsQab,
    }
}

fn scaler_samples(ds: &Dataset, part: Option<&Partitioner>, idx: &[usize]) -> CliResult<Vec<ScalerSample>> {
    idx.iter()
        .map(|&i| {
            let r = &ds.records[i];
            Ok(ScalerSample {
                confidence: r.confidence,
                partition: match part {
                    Some(p) => p.assign(&r.embedding)?,
                    None => Assignment::OutOfBounds,
                },
                target: r.label,
            })
        })
        .collect()
}

fn fit(a: FitArgs) -> CliResult<()> {
    let method = require(a.method, "--method")?;
    let kind = kind_of(method);
    let train = require(a.train, "--train")?;
    let out = require(a.out, "--out")?;
    let part = if kind.needs_partitioner() {
        let p = a.partitioner.as_ref().ok_or_else(|| {
            CliError::invalid(format!("missing required flag --partitioner (needed by --method {kind})"))
        })?;
        Some(Partitioner::load(p)?)
    } else {
        None
    };
    if kind.needs_partitioner() && a.b.is_none() {
        return Err(CliError::invalid(format!("missing required flag --b (needed by --method {kind})")));
    }
    if matches!(kind, CalibratorKind::Umd | CalibratorKind::ScaleBin) && a.b.is_none() && a.bins.is_none() {
        return Err(CliError::invalid(format!("--method {kind} needs --B or --b")));
    }
    let cal = load_dataset(&train, part.as_ref().map(|p| p.dim()))?;
    let tune = a.tune.as_ref().map(|p| load_dataset(p, Some(cal.embedding_dim))).transpose()?;

    let mut params = FitParams {
        b: a.b,
        bins: a.bins,
        delta: a.delta,
        seed: a.seed,
        ..FitParams::default()
    };
    if let Some(v) = a.sigma_u2 {
        params.sigma_u2 = v;
    }
    if let Some(v) = a.sigma_v2 {
        params.sigma_v2 = v;
    }
    if kind == CalibratorKind::HsQab && a.sigma_u2.is_none() && a.sigma_v2.is_none() {
        if let Some(tune) = &tune {
            let (first, _) = halve_indices(cal.len(), 0.5, a.seed)?;
            let train_s = scaler_samples(&cal, part.as_ref(), &first)?;
            let hold = scaler_samples(tune, part.as_ref(), &(0..tune.len()).collect::<Vec<_>>())?;
            let (su, sv) = select_prior_variance(&train_s, &hold, &DEFAULT_VARIANCE_GRID, 100, 1e-8)?;
            params.sigma_u2 = su;
            params.sigma_v2 = sv;
        }
    }
    let fitted = fit_calibrator(kind, &cal, part.as_ref(), &params)?;
    let nu_hat = match (&tune, fitted.scaler()) {
        (Some(tune), Some(scaler)) => {
            let rows = tune
                .records
                .iter()
                .map(|r| {
                    let s = match (&part, kind) {
                        (Some(p), CalibratorKind::SQab | CalibratorKind::HsQab) => p.assign(&r.embedding)?,
                        _ => Assignment::OutOfBounds,
                    };
                    Ok((r.confidence, s, r.label))
                })
                .collect::<CliResult<Vec<_>>>()?;
            Some(estimate_misspecification(scaler, &rows, MISSPECIFICATION_BINS)?)
        }
        _ => None,
    };
    save_bundle(&out, kind, &params, &fitted, part.as_ref(), nu_hat)?;
    print_json(&serde_json::json!({
        "method": kind,
        "bundle": out,
        "records": cal.len(),
        "sigma_u2": params.sigma_u2,
        "sigma_v2": params.sigma_v2,
        "nu_hat": nu_hat,
    }))
}

fn predict(a: PredictArgs) -> CliResult<()> {
    let bundle = load_bundle(require(a.bundle, "--bundle")?)?;
    let mut ds = load_dataset(require(a.input, "--in")?, bundle.partitioner.as_ref().map(|p| p.dim()))?;
    for r in &mut ds.records {
        let s = match &bundle.partitioner {
            Some(p) => p.assign(&r.embedding)?,
            None => Assignment::OutOfBounds,
        };
        r.calibrated = Some(bundle.fitted.predict(r.confidence, s)?);
    }
    let out = require(a.out, "--out")?;
    let mut w = BufWriter::new(File::create(&out)?);
    write_jsonl(&mut w, &ds.records)?;
    w.flush()?;
    eprintln!("wrote {} records to {}", ds.len(), out.display());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> CliResult<()> {
    let part = Partitioner::load(require(a.partitioner, "--partitioner")?)?;
    let ds = load_dataset(require(a.input, "--in")?, Some(part.dim()))?;
    let with_cal = ds.records.iter().filter(|r| r.calibrated.is_some()).count();
    if with_cal != 0 && with_cal != ds.len() {
        return Err(CliError::invalid(format!(
            "{with_cal} of {} records carry `calibrated`; expected all or none",
            ds.len()
        )));
    }
    let recs = ds
        .records
        .iter()
        .map(|r| Ok(EvalRecord::new(part.assign(&r.embedding)?, r.calibrated.unwrap_or(r.confidence), r.label)))
        .collect::<CliResult<Vec<_>>>()?;
    let report = evaluate(&recs, a.bins, a.grid)?;
    if let Some(out) = a.out {
        let mut text = serde_json::to_vec_pretty(&report)?;
        text.push(b'\n');
        write_atomic(&out, &text)?;
    }
    println!(
        "n={} ce={:.6} ce_beta={:.6} mce={:.6} mce_beta={:.6} auac={:.6} score={}",
        report.n,
        report.ce,
        report.ce_beta,
        report.mce,
        report.mce_beta,
        report.auac,
        if with_cal > 0 { "calibrated" } else { "confidence" }
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    let mut cfg = match (&a.config, &a.depths) {
        (Some(p), _) => SweepConfig::load(p)?,
        (None, Some(d)) => SweepConfig::new(d.clone()),
        (None, None) => return Err(CliError::invalid("missing required flag --config (or --depths)")),
    };
    if let Some(v) = a.dataset {
        cfg.dataset = v;
    }
    if let Some(v) = a.depths {
        cfg.depths = v;
    }
    if let Some(v) = a.b_grid {
        cfg.b_grid = Some(v);
    }
    if let Some(v) = a.bins_grid {
        cfg.bins_grid = Some(v);
    }
    if let Some(v) = a.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = a.calibrators {
        cfg.calibrators = v.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    }
    if let Some(v) = a.eval_depth {
        cfg.eval_depth = Some(v);
    }
    if let Some(v) = a.partitioner {
        cfg.partitioner = match v {
            PartitionKind::Kdtree => PartitionerKind::Kdtree,
            PartitionKind::Kmeans => PartitionerKind::Kmeans,
        };
    }
    cfg.validate()?;
    let ds = load_dataset(&a.data, None)?;
    let report = run_sweep(&ds, &cfg, None)?;
    for f in &report.failures {
        eprintln!("warning: {} seed {} failed: {}", f.calibrator, f.seed, f.reason);
    }
    if report.runs.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!("every (calibrator, seed) cell failed")));
    }
    let written = write_outputs(&report, &a.out_dir)?;
    print!("{}", summary_markdown(&report));
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let path = require(a.spec, "--spec")?;
    let text = fs::read_to_string(&path).map_err(|e| CliError::Runtime(anyhow::anyhow!("{}: {e}", path.display())))?;
    let mut spec = SyntheticSpec::from_json(&text)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(out) = &a.emit_data {
        let ds = generate_synthetic(&spec)?;
        save_dataset(out, &ds)?;
        eprintln!("wrote {} records to {}", ds.len(), out.display());
        if a.b.is_none() && a.depth.is_none() {
            return Ok(());
        }
    }
    let depth = require(a.depth, "--depth")?;
    let b = require(a.b, "--b")?;
    let r = validate_conditional_guarantee(&spec, depth, b, a.alpha, a.trials)?;
    let within = r.trial_gaps.iter().filter(|&&g| g <= r.epsilon).count();
    println!(
        "coverage={:.4} ({within}/{} trials within epsilon={:.6}; target >= {:.2}; worst gap {:.6}; N={} b={})",
        r.coverage,
        r.trials,
        r.epsilon,
        1.0 - r.alpha,
        r.worst_gap,
        r.n,
        r.b
    );
    if let Some(out) = a.out {
        let mut csv = String::from("trial,gap,within_epsilon\n");
        for (t, g) in r.trial_gaps.iter().enumerate() {
            csv.push_str(&format!("{t},{g},{}\n", *g <= r.epsilon));
        }
        write_atomic(&out, csv.as_bytes())?;
    }
    Ok(())
}

fn bound(a: BoundArgs) -> CliResult<()> {
    let base = match a.log_base {
        LogBaseArg::E => LogBase::Natural,
        LogBaseArg::Two => LogBase::Two,
    };
    if a.umd && base != LogBase::Natural {
        return Err(CliError::invalid("--umd supports only --log-base e"));
    }
    if a.curve {
        let ns = match (a.n_values, a.n) {
            (Some(v), _) => v,
            (None, Some(n)) => vec![n],
            (None, None) => return Err(CliError::invalid("missing required flag --n (or --n-values)")),
        };
        let bs = require(a.b_values, "--b-values")?;
        let nus = a.nu_values.unwrap_or_else(|| vec![a.nu]);
        let mut csv = String::from("b,N,nu,epsilon\n");
        for p in bound_curve(&ns, &bs, a.alpha, &nus, base)? {
            csv.push_str(&format!("{},{},{},{}\n", p.b, p.n, p.nu, p.epsilon));
        }
        return match a.out {
            Some(out) => Ok(write_atomic(&out, csv.as_bytes())?),
            None => {
                print!("{csv}");
                Ok(())
            }
        };
    }
    let n = require(a.n, "--n")?;
    if let Some(eps) = a.target_eps {
        let chosen = if a.umd {
            choose_bins_umd(n, a.alpha, a.nu, eps)?
        } else {
            choose_b_with(n, a.alpha, a.nu, eps, base)?
        };
        println!("{chosen}");
        return Ok(());
    }
    let eps = if a.umd {
        epsilon_bound_umd(n, require(a.bins, "--B")?, a.alpha, a.nu)?
    } else {
        let q = BoundQuery {
            n,
            b: require(a.b, "--b")?,
            alpha: a.alpha,
            nu: a.nu,
        };
        epsilon_bound_qa_with(&q, base)?
    };
    println!("{eps}");
    Ok(())
}

fn export(a: ExportArgs) -> CliResult<()> {
    let report = load_report(require(a.report, "--report")?)?;
    if let Some(dir) = a.out_dir {
        for p in write_outputs(&report, &dir)? {
            eprintln!("wrote {}", p.display());
        }
    }
    let md = summary_markdown(&report);
    match a.markdown {
        Some(p) => write_atomic(Path::new(&p), md.as_bytes())?,
        None => print!("{md}"),
    }
    Ok(())
}
