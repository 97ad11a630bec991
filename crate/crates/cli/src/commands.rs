//! The six pipeline commands. All indices in emitted artifacts are 1-based;
//! the library is 0-based and the conversion happens here.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use sbmcov::ldaeval::{self, LabeledData};
use sbmcov::matstore::{self, MatError};
use sbmcov::randdist::{streams, DistError, RngStream};
use sbmcov::sbm::SbmError;
use sbmcov::screen::{self, CalibrationRecord, FnrCalibration, ScreenError};
use sbmcov::simlab::{
    self, CovEstimator, ExperimentSpec, ExperimentTable, SampleCovEstimator, SbmEstimator,
    ScreeningRecipe, SimError,
};

use crate::config::RunConfig;

/// Exit code 1: the request itself is wrong (paths, arguments, shapes).
/// Exit code 2: the computation failed numerically.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::User(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<MatError> for CliError {
    fn from(e: MatError) -> Self {
        match e {
            MatError::NotPositiveDefinite(_) | MatError::DegeneratePivot { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<DistError> for CliError {
    fn from(e: DistError) -> Self {
        match e {
            DistError::Nonconvergent(_) | DistError::InvalidGigParams { .. } => {
                CliError::Numerical(e.to_string())
            }
            DistError::Matrix(m) => m.into(),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<ScreenError> for CliError {
    fn from(e: ScreenError) -> Self {
        match e {
            ScreenError::Dist(d) => d.into(),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<SbmError> for CliError {
    fn from(e: SbmError) -> Self {
        match e {
            SbmError::Matrix(m) => m.into(),
            SbmError::Dist(d) => d.into(),
            SbmError::GigDomain(_) => CliError::Numerical(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Matrix(m) => m.into(),
            SimError::Screen(s) => s.into(),
            SimError::Chain(c) => c.into(),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<ldaeval::LdaError> for CliError {
    fn from(e: ldaeval::LdaError) -> Self {
        match e {
            ldaeval::LdaError::Estimator(s) => s.into(),
            ldaeval::LdaError::Matrix(m) => m.into(),
            _ => CliError::User(e.to_string()),
        }
    }
}

fn require_data(cfg: &RunConfig) -> Result<&PathBuf, CliError> {
    cfg.data
        .as_ref()
        .ok_or_else(|| CliError::User("--data is required for this command".into()))
}

fn require_out(cfg: &RunConfig) -> Result<&PathBuf, CliError> {
    cfg.out
        .as_ref()
        .ok_or_else(|| CliError::User("--out is required for this command".into()))
}

fn check_exists(path: &Path) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::User(format!(
            "input path does not exist: {}",
            path.display()
        )));
    }
    Ok(())
}

fn read_data(cfg: &RunConfig) -> Result<Array2<f64>, CliError> {
    let path = require_data(cfg)?;
    check_exists(path)?;
    Ok(matstore::read_matrix_csv(path)?)
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = require_out(cfg)?;
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::User(format!("cannot create {}: {e}", out.display())))?;
    // Record the fully resolved configuration next to the artifacts.
    write_text(&out.join("config_used.toml"), &cfg.to_toml())?;
    Ok(out.clone())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::User(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::User(format!("write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::User(format!("write {}: {e}", path.display())))
}

/// Pair list with 1-based indices and the screened correlation magnitudes.
fn screenset_csv(set: &sbmcov::ScreenSet, corr: Option<&screen::CorrMatrix>) -> String {
    let mut text = String::from("j,k,abs_corr\n");
    for &(a, b) in set.pairs() {
        let rho = corr.map(|c| c.get(a, b).abs());
        match rho {
            Some(v) => {
                let _ = writeln!(text, "{},{},{v}", a + 1, b + 1);
            }
            None => {
                let _ = writeln!(text, "{},{},", a + 1, b + 1);
            }
        }
    }
    text
}

#[derive(Serialize)]
struct ScreenRecord {
    r: f64,
    r_j: Option<f64>,
    n: usize,
    p: usize,
    pairs_kept: usize,
    pairs_total: usize,
    seed: u64,
}

/// Resolves the configured recipe against the data and writes the pair list.
pub fn cmd_screen(cfg: &RunConfig) -> Result<(), CliError> {
    let x = read_data(cfg)?;
    let out = prepare_out(cfg)?;
    let recipe = cfg.recipe().map_err(CliError::User)?;
    let resolved = recipe.resolve(&x, cfg.center(), cfg.seed, streams::CALIBRATION)?;
    let corr = screen::sample_correlations(&x, cfg.center())?;
    write_text(&out.join("screenset.csv"), &screenset_csv(&resolved.set, Some(&corr)))?;
    let p = x.ncols();
    write_json(
        &out.join("screen.json"),
        &ScreenRecord {
            r: resolved.r,
            r_j: resolved.r_j,
            n: x.nrows(),
            p,
            pairs_kept: resolved.set.len(),
            pairs_total: p * (p - 1) / 2,
            seed: cfg.seed,
        },
    )?;
    println!(
        "screened {} of {} pairs at r = {}",
        resolved.set.len(),
        p * (p - 1) / 2,
        resolved.r
    );
    Ok(())
}

/// FNR calibration without running a chain.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<(), CliError> {
    let out = prepare_out(cfg)?;
    let n = match (&cfg.data, cfg.n) {
        (_, Some(n)) => n,
        (Some(path), None) => {
            check_exists(path)?;
            matstore::read_matrix_csv(path)?.nrows()
        }
        (None, None) => {
            return Err(CliError::User(
                "calibrate needs a sample size: pass --n or --data".into(),
            ))
        }
    };
    let fnr = cfg.screening.fnr.clone().unwrap_or_default();
    let cal = FnrCalibration {
        rho_star: fnr.rho_star,
        alpha_fnr: fnr.alpha_fnr,
        reps: fnr.reps,
        n,
        kappa: fnr.kappa,
    };
    let mut rng = RngStream::new(cfg.seed, streams::CALIBRATION);
    let (r, r_j) = screen::calibrate_threshold_fnr(&cal, &mut rng)?;
    let record = CalibrationRecord {
        r,
        r_j,
        rho_star: cal.rho_star,
        alpha_fnr: cal.alpha_fnr,
        reps: cal.reps,
        n,
        kappa: cal.kappa,
        seed: cfg.seed,
    };
    write_json(&out.join("calibration.json"), &record)?;
    println!("r = {r} (r_J = {r_j})");
    Ok(())
}

#[derive(Serialize)]
struct EstimateRecord {
    r: f64,
    r_j: Option<f64>,
    screen_size: usize,
    retained: usize,
    n: usize,
    p: usize,
    seed: u64,
    diagnostics: sbmcov::sbm::ChainDiagnostics,
}

/// The full two-stage pipeline: screen, sample, summarize.
pub fn cmd_estimate(cfg: &RunConfig) -> Result<(), CliError> {
    let x = read_data(cfg)?;
    let out = prepare_out(cfg)?;
    let (n, p) = (x.nrows(), x.ncols());
    let estimator = sbm_estimator(cfg, n, p)?;
    let (summary, resolved) =
        estimator.run(&x, cfg.seed, streams::CALIBRATION, streams::chain(0))?;

    matstore::write_matrix_csv(
        &out.join("posterior_mean.csv"),
        summary.posterior_mean.as_array(),
        None,
    )?;
    let corr = screen::sample_correlations(&x, cfg.center())?;
    write_text(&out.join("screenset.csv"), &screenset_csv(&resolved.set, Some(&corr)))?;
    if let (Some(lo), Some(hi)) = (&summary.lower_quantile, &summary.upper_quantile) {
        matstore::write_matrix_csv(&out.join("lower_quantile.csv"), lo.as_array(), None)?;
        matstore::write_matrix_csv(&out.join("upper_quantile.csv"), hi.as_array(), None)?;
    }
    write_json(
        &out.join("diagnostics.json"),
        &EstimateRecord {
            r: resolved.r,
            r_j: resolved.r_j,
            screen_size: summary.screen_size,
            retained: summary.retained,
            n,
            p,
            seed: cfg.seed,
            diagnostics: summary.diagnostics.clone(),
        },
    )?;
    println!(
        "estimated {p}x{p} covariance: |S_r| = {}, retained {} draws, {:.3}s/sweep",
        summary.screen_size, summary.retained, summary.diagnostics.seconds_per_sweep_mean
    );
    Ok(())
}

fn sbm_estimator(cfg: &RunConfig, n: usize, p: usize) -> Result<SbmEstimator, CliError> {
    let recipe = cfg.recipe().map_err(CliError::User)?;
    let mut est = SbmEstimator::new(recipe);
    est.hyper = Some(cfg.hyperparams(n, p));
    est.n_iter = cfg.chain.iters;
    est.burn_in = cfg.chain.burnin;
    est.thin = cfg.chain.thin;
    est.refresh_interval = cfg.chain.refresh_interval;
    est.store_mode = cfg.chain.store;
    est.center = cfg.center();
    Ok(est)
}

fn experiment_estimator(
    cfg: &RunConfig,
    name: &str,
    n: usize,
    p: usize,
) -> Result<Box<dyn CovEstimator>, CliError> {
    match name {
        "sbm" => Ok(Box::new(sbm_estimator(cfg, n, p)?)),
        "sample" => Ok(Box::new(SampleCovEstimator {
            center: cfg.center(),
        })),
        other => Err(CliError::User(format!(
            "unknown estimator '{other}': expected sbm or sample"
        ))),
    }
}

/// Replication table with timing (results.csv) and without it (metrics.csv,
/// the byte-stable artifact under a fixed seed).
fn write_tables(out: &Path, stem: &str, table: &ExperimentTable) -> Result<(), CliError> {
    let mut results = String::from("rep,rmse,mnorm,seconds_per_1k_iter,screen_size\n");
    let mut metrics = String::from("rep,rmse,mnorm,screen_size\n");
    for row in &table.rows {
        match &row.metrics {
            Some(m) => {
                let _ = writeln!(
                    results,
                    "{},{},{},{},{}",
                    m.rep, m.rmse, m.mnorm, m.seconds_per_1k_iter, m.screen_size
                );
                let _ = writeln!(metrics, "{},{},{},{}", m.rep, m.rmse, m.mnorm, m.screen_size);
            }
            None => {
                let _ = writeln!(results, "{},,,,", row.rep);
                let _ = writeln!(metrics, "{},,,", row.rep);
            }
        }
    }
    write_text(&out.join(format!("{stem}_results.csv")), &results)?;
    write_text(&out.join(format!("{stem}_metrics.csv")), &metrics)?;
    Ok(())
}

fn experiment_spec(cfg: &RunConfig) -> (ExperimentSpec, String) {
    let section = cfg.experiment.clone().unwrap_or_default();
    (
        ExperimentSpec {
            design: section.design.to_design(section.p),
            n: section.n,
            replications: section.replications,
            seed: cfg.seed,
        },
        section.estimator,
    )
}

/// Synthetic-truth replication study with the configured estimator.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let out = prepare_out(cfg)?;
    let (spec, estimator_name) = experiment_spec(cfg);
    let estimator = experiment_estimator(cfg, &estimator_name, spec.n, spec.design.p)?;
    let table = simlab::run_experiment(&spec, estimator.as_ref())?;
    write_tables(&out, "simulate", &table)?;
    write_json(&out.join("simulate_summary.json"), &table)?;
    println!(
        "{} on {:?}: rmse {:.4} ({:.4}), mnorm {:.4} ({:.4}), {} failures",
        table.estimator,
        spec.design.kind,
        table.rmse_mean,
        table.rmse_sd,
        table.mnorm_mean,
        table.mnorm_sd,
        table.failures
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchmarkRecord {
    sbm_seconds_per_1k_iter_mean: f64,
    baseline_seconds_per_1k_iter_mean: f64,
    /// baseline / screened: above 1 means the screened chain is faster.
    speed_ratio: f64,
    sbm_screen_size_mean: f64,
    baseline_screen_size_mean: f64,
}

/// Runs the screened chain and the unscreened (r = 0) baseline on identical
/// replications and reports the wall-clock ratio.
pub fn cmd_benchmark(cfg: &RunConfig) -> Result<(), CliError> {
    let out = prepare_out(cfg)?;
    let (spec, _) = experiment_spec(cfg);
    let screened = sbm_estimator(cfg, spec.n, spec.design.p)?;
    let mut baseline = screened.clone();
    baseline.recipe = ScreeningRecipe::Fixed { r: 0.0 };

    let screened_table = simlab::run_experiment(&spec, &screened)?;
    let baseline_table = simlab::run_experiment(&spec, &baseline)?;
    write_tables(&out, "sbm", &screened_table)?;
    write_tables(&out, "baseline", &baseline_table)?;

    let mean_of = |t: &ExperimentTable, f: fn(&simlab::RepMetrics) -> f64| -> f64 {
        let vals: Vec<f64> = t.rows.iter().filter_map(|r| r.metrics.as_ref()).map(f).collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    };
    let sbm_secs = mean_of(&screened_table, |m| m.seconds_per_1k_iter);
    let base_secs = mean_of(&baseline_table, |m| m.seconds_per_1k_iter);
    let record = BenchmarkRecord {
        sbm_seconds_per_1k_iter_mean: sbm_secs,
        baseline_seconds_per_1k_iter_mean: base_secs,
        speed_ratio: base_secs / sbm_secs,
        sbm_screen_size_mean: mean_of(&screened_table, |m| m.screen_size as f64),
        baseline_screen_size_mean: mean_of(&baseline_table, |m| m.screen_size as f64),
    };
    write_json(&out.join("benchmark.json"), &record)?;
    println!(
        "screened {:.3}s/1k iters vs unscreened {:.3}s/1k iters: speed ratio {:.2}",
        sbm_secs, base_secs, record.speed_ratio
    );
    Ok(())
}

/// LDA with leave-one-out cross-validation and the four reported scores.
pub fn cmd_lda(cfg: &RunConfig) -> Result<(), CliError> {
    let out = prepare_out(cfg)?;
    let section = cfg.lda.clone().unwrap_or_default();
    let (x, labels, class_names) = read_labeled(cfg, section.label_col.as_deref())?;
    let (n, p) = (x.nrows(), x.ncols());
    let data = LabeledData::new(x, labels)?;
    let estimator = experiment_estimator(cfg, &section.estimator, n, p)?;
    let report = ldaeval::loocv_scores(&data, estimator.as_ref(), section.pooling, cfg.seed)?;

    write_json(&out.join("scores.json"), &report.scores)?;
    let mut folds = String::from("fold,truth,predicted\n");
    for f in &report.folds {
        let truth = &class_names[f.truth];
        match f.predicted {
            Some(pred) => {
                let _ = writeln!(folds, "{},{},{}", f.fold + 1, truth, class_names[pred]);
            }
            None => {
                let _ = writeln!(folds, "{},{},", f.fold + 1, truth);
            }
        }
    }
    write_text(&out.join("folds.csv"), &folds)?;
    println!(
        "loocv over {} folds ({} failed): accuracy {:.4}, precision {:.4}, recall {:.4}, f1 {:.4}",
        report.folds.len(),
        report.failed_folds,
        report.scores.accuracy,
        report.scores.precision,
        report.scores.recall,
        report.scores.f1
    );
    Ok(())
}

/// Reads features and labels: either a separate single-column labels file or
/// a designated label column inside the data file. Class names map to dense
/// ids in lexicographic order.
fn read_labeled(
    cfg: &RunConfig,
    label_col: Option<&str>,
) -> Result<(Array2<f64>, Vec<usize>, Vec<String>), CliError> {
    let data_path = require_data(cfg)?;
    check_exists(data_path)?;
    if let Some(labels_path) = &cfg.labels {
        check_exists(labels_path)?;
        let x = matstore::read_matrix_csv(data_path)?;
        let text = std::fs::read_to_string(labels_path)
            .map_err(|e| CliError::User(format!("read {}: {e}", labels_path.display())))?;
        let raw: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if raw.len() != x.nrows() {
            return Err(CliError::User(format!(
                "{} labels for {} rows",
                raw.len(),
                x.nrows()
            )));
        }
        let (ids, names) = dense_ids(&raw);
        return Ok((x, ids, names));
    }
    let Some(col) = label_col else {
        return Err(CliError::User(
            "lda needs labels: pass --labels FILE or set lda.label_col".into(),
        ));
    };
    read_label_column(data_path, col)
}

fn dense_ids(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = raw.to_vec();
    names.sort();
    names.dedup();
    let ids = raw
        .iter()
        .map(|l| names.binary_search(l).expect("label present"))
        .collect();
    (ids, names)
}

fn read_label_column(
    path: &Path,
    column: &str,
) -> Result<(Array2<f64>, Vec<usize>, Vec<String>), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines
        .next()
        .ok_or_else(|| CliError::User(format!("{} is empty", path.display())))?;
    let first_fields: Vec<&str> = first.split(',').map(str::trim).collect();
    let has_header = first_fields.iter().any(|f| f.parse::<f64>().is_err());
    let col_idx = if has_header {
        match first_fields.iter().position(|f| *f == column) {
            Some(i) => i,
            None => column.parse::<usize>().map_err(|_| {
                CliError::User(format!("label column '{column}' not found in header"))
            })?,
        }
    } else {
        column
            .parse::<usize>()
            .map_err(|_| CliError::User(format!("no header row: label column must be an index, got '{column}'")))?
    };
    let data_lines: Vec<&str> = if has_header {
        lines.collect()
    } else {
        std::iter::once(first).chain(lines).collect()
    };
    let mut raw_labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in data_lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if col_idx >= fields.len() {
            return Err(CliError::User(format!(
                "line {}: label column {col_idx} out of range",
                i + 1
            )));
        }
        raw_labels.push(fields[col_idx].to_string());
        let mut row = Vec::with_capacity(fields.len() - 1);
        for (j, f) in fields.iter().enumerate() {
            if j == col_idx {
                continue;
            }
            row.push(f.parse::<f64>().map_err(|e| {
                CliError::User(format!("line {}: field {}: {e}", i + 1, j + 1))
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::User("no data rows".into()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(CliError::User("ragged rows".into()));
    }
    let mut x = Array2::zeros((rows.len(), width));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    let (ids, names) = dense_ids(&raw_labels);
    Ok((x, ids, names))
}
