use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use expca::components::{bottom_up_with, principal_expectile_with, top_down_with};
use expca::{
    asymptotic_variance, expectile_1d, explained_variance, quantile_1d, tau_deviation, tau_variance, Algorithm,
    DataMatrix, LawsComponentOptions, PecOptions, SampleVector, SignRule, TauLevel,
};
use expca_simbench::{
    generate, reports_json, run_config, write_curves_csv, write_reports_csv, RunOptions, Scenario, Setting, SimConfig,
    Size,
};
use expca_weather::{read_long_csv, run_pipeline, write_outputs};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::input::{read_column, read_matrix};
use crate::{CliError, ExpectileArgs, FitArgs, RunManifest, SimulateArgs, Status, WeatherArgs};

/// JSON written by `expca fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub tau: f64,
    pub k: usize,
    pub algorithm: Algorithm,
    pub center: Vec<f64>,
    /// `k` vectors of length `p`.
    pub components: Vec<Vec<f64>>,
    /// `n` rows of `k` coordinates.
    pub loadings: Vec<Vec<f64>>,
    /// Cumulative, for `1..=k` components.
    pub explained_variance: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// JSON written by `expca expectile`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectileOutput {
    pub tau: f64,
    pub n: usize,
    pub expectile: f64,
    pub quantile: f64,
    pub tau_variance: f64,
    pub tau_deviation: f64,
    pub asymptotic_variance: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn tau_level(v: f64) -> Result<TauLevel, CliError> {
    Ok(TauLevel::new(v)?)
}

fn algorithms(names: Option<Vec<String>>) -> Result<Vec<Algorithm>, CliError> {
    match names {
        None => Ok(vec![Algorithm::BottomUp, Algorithm::TopDown, Algorithm::PrincipalExpectile]),
        Some(v) if v.is_empty() => Err(CliError::Input("no algorithms given".into())),
        Some(v) => v.iter().map(|s| Ok(s.parse::<Algorithm>()?)).collect(),
    }
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn write_json(value: &impl Serialize, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn required(path: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    path.ok_or_else(|| CliError::Input(format!("missing --{flag}")))
}

pub fn fit(a: FitArgs) -> Result<Status, CliError> {
    let started = Instant::now();
    let input = required(a.input, "input")?;
    let header = a.header.unwrap_or(false);
    let tau = tau_level(a.tau.unwrap_or(0.5))?;
    let k = a.k.unwrap_or(1);
    let algorithm: Algorithm = a.algorithm.as_deref().unwrap_or("topdown").parse()?;
    let seed = a.seed.unwrap_or(0);

    let y = DataMatrix::from_rows(&read_matrix(&input, header)?)?;
    let p = y.ncols();
    if k == 0 || k >= p {
        return Err(CliError::Input(format!("k must satisfy 1 <= k < {p} (number of columns), got {k}")));
    }
    let cs = match algorithm {
        Algorithm::TopDown => top_down_with(&y, k, tau, &LawsComponentOptions { seed, ..Default::default() })?,
        Algorithm::BottomUp => bottom_up_with(&y, k, tau, &LawsComponentOptions { seed, ..Default::default() })?,
        Algorithm::PrincipalExpectile => principal_expectile_with(&y, k, tau, &PecOptions { seed, ..Default::default() })?,
    };
    let out = FitOutput {
        tau: tau.value(),
        k,
        algorithm,
        center: cs.center.iter().copied().collect(),
        components: columns(&cs.components),
        loadings: rows(&cs.loadings),
        explained_variance: explained_variance(&y, &cs)?,
        objective: cs.objective,
        iterations: cs.iterations(),
        converged: cs.converged(),
    };
    write_json(&out, a.out.as_deref())?;

    let mut m = RunManifest::new("fit", seed);
    m.param("input", &input);
    m.param("header", header);
    m.param("tau", tau.value());
    m.param("k", k);
    m.param("algorithm", algorithm);
    m.param("rows", y.nrows());
    m.param("columns", p);
    m.convergence.insert(algorithm.name().into(), out.converged);
    let manifest = a.manifest.or_else(|| a.out.map(|o| o.with_extension("manifest.json")));
    m.emit(started, manifest.as_deref())?;
    Ok(m.status())
}

pub fn expectile(a: ExpectileArgs) -> Result<Status, CliError> {
    let started = Instant::now();
    let tau = tau_level(a.tau.unwrap_or(0.5))?;
    let header = a.header.unwrap_or(false);
    let column = a.column.unwrap_or(1);
    let mut m = RunManifest::new("expectile", 0);
    let values = match (a.values, &a.input) {
        (Some(v), None) => v,
        (None, Some(p)) => {
            m.param("input", p);
            m.param("column", column);
            m.param("header", header);
            read_column(p, column, header)?
        }
        (Some(_), Some(_)) => return Err(CliError::Input("give either --values or --input, not both".into())),
        (None, None) => return Err(CliError::Input("give --values or --input".into())),
    };
    let sample = SampleVector::new(values)?;
    let e = expectile_1d(&sample, tau);
    let out = ExpectileOutput {
        tau: tau.value(),
        n: sample.len(),
        expectile: e.value,
        quantile: quantile_1d(&sample, tau),
        tau_variance: tau_variance(&sample, tau),
        tau_deviation: tau_deviation(&sample, tau),
        asymptotic_variance: asymptotic_variance(&sample, tau),
        iterations: e.iterations,
        converged: e.converged,
    };
    write_json(&out, None)?;

    m.param("tau", tau.value());
    m.param("n", sample.len());
    m.convergence.insert("expectile".into(), e.converged);
    m.emit(started, a.manifest.as_deref())?;
    Ok(m.status())
}

fn sign_rule(name: &str) -> Result<SignRule, CliError> {
    match name {
        "largest-positive" => Ok(SignRule::LargestPositive),
        "tau-variance" => Ok(SignRule::TauVariance),
        "solver" => Ok(SignRule::Solver),
        other => Err(CliError::Input(format!(
            "unknown sign rule '{other}' (expected largest-positive, tau-variance or solver)"
        ))),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn simulate(a: SimulateArgs) -> Result<Status, CliError> {
    let started = Instant::now();
    let out = required(a.out, "out")?;
    let settings = a
        .setting
        .unwrap_or_else(|| vec![1])
        .into_iter()
        .map(Setting::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    let scenarios = a
        .scenario
        .unwrap_or_else(|| vec![1])
        .into_iter()
        .map(Scenario::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    let sizes = a
        .size
        .unwrap_or_else(|| vec!["small".into()])
        .iter()
        .map(|s| s.parse::<Size>())
        .collect::<Result<Vec<_>, _>>()?;
    let taus = a
        .tau
        .unwrap_or_else(|| vec![0.95])
        .into_iter()
        .map(tau_level)
        .collect::<Result<Vec<_>, _>>()?;
    let algs = algorithms(a.algorithm)?;
    let replications = a.replications.unwrap_or(expca_simbench::DEFAULT_REPLICATIONS);
    let seed = a.seed.unwrap_or(0);
    let pec_sign = a.pec_sign.unwrap_or_else(|| "largest-positive".into());
    let opts = RunOptions {
        timing: a.timing.unwrap_or(false),
        pec_sign: sign_rule(&pec_sign)?,
        noise_scale: 1.0,
    };
    if settings.is_empty() || scenarios.is_empty() || sizes.is_empty() || taus.is_empty() {
        return Err(CliError::Input("every grid dimension needs at least one value".into()));
    }

    let mut configs = Vec::new();
    for &setting in &settings {
        for &scenario in &scenarios {
            for &size in &sizes {
                for &tau in &taus {
                    for &algorithm in &algs {
                        let c = SimConfig {
                            setting,
                            scenario,
                            size,
                            tau,
                            algorithm,
                            replications,
                            seed,
                        };
                        c.validate()?;
                        configs.push(c);
                    }
                }
            }
        }
    }

    let curves_dir = out.join("curves");
    std::fs::create_dir_all(&curves_dir)?;
    let mut m = RunManifest::new("simulate", seed);
    let mut reports = Vec::with_capacity(configs.len());
    for c in &configs {
        let label = format!(
            "setting{}_scenario{}_{}_tau{}_{}",
            c.setting,
            c.scenario,
            c.size,
            c.tau,
            c.algorithm.abbreviation()
        );
        eprintln!("simulate: {label}");
        let (report, outcomes) = run_config(c, &opts)?;
        write_curves_csv(&outcomes, &generate(c, 0), create(&curves_dir.join(format!("{label}.csv")))?)?;
        m.convergence.insert(label, report.nonconvergence_rate == 0.0);
        reports.push(report);
    }
    write_reports_csv(&reports, create(&out.join("reports.csv"))?)?;
    std::fs::write(out.join("reports.json"), reports_json(&reports)? + "\n")?;

    m.param("setting", &settings);
    m.param("scenario", &scenarios);
    m.param("size", &sizes);
    m.param("tau", &taus);
    m.param("algorithm", &algs);
    m.param("replications", replications);
    m.param("timing", opts.timing);
    m.param("pec_sign", &pec_sign);
    m.param("out", &out);
    m.emit(started, Some(&out.join("manifest.json")))?;
    // Nonconvergence is a reported statistic of the study, not a failure of the run.
    Ok(Status::Converged)
}

pub fn weather(a: WeatherArgs) -> Result<Status, CliError> {
    let started = Instant::now();
    let input = required(a.input, "input")?;
    let out = required(a.out, "out")?;
    let taus = a
        .tau
        .unwrap_or_else(|| vec![0.05, 0.5, 0.95])
        .into_iter()
        .map(tau_level)
        .collect::<Result<Vec<_>, _>>()?;
    let k = a.k.unwrap_or(2);
    let algs = algorithms(a.algorithm)?;

    let file = File::open(&input).map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
    let series = read_long_csv(file)?;
    let result = run_pipeline(&series, &taus, k, &algs)?;
    let files = write_outputs(&out, &result)?;

    let mut m = RunManifest::new("weather", 0);
    m.param("input", &input);
    m.param("tau", &taus);
    m.param("k", k);
    m.param("algorithm", &algs);
    m.param("stations", result.models.len());
    m.param("calendar", "365 days; Feb 29 dropped");
    m.param(
        "detrending",
        "seasonal least squares on 1, t and two harmonics, then AR(10) least squares on the deseasonalized series",
    );
    m.param("smoothing", "projection onto a constant and 11 sine/cosine pairs");
    m.param("outputs", &files);
    for e in &result.analysis.entries {
        m.convergence.insert(
            format!("{}_tau{}", e.algorithm.abbreviation(), e.tau),
            e.components.converged(),
        );
    }
    m.emit(started, Some(&out.join("manifest.json")))?;
    Ok(m.status())
}
