//! Monte-Carlo benchmark for the expectile component algorithms.
//!
//! Curves follow `Yᵢⱼ = μ(tⱼ) + f₁(tⱼ)α₁ᵢ + f₂(tⱼ)α₂ᵢ + εᵢⱼ` on an equidistant grid of
//! `[0, 1]`, with two coefficient settings and five noise scenarios. Each replicate
//! draws from its own ChaCha8 stream, so results do not depend on thread count.
//!
//! Two error measures are reported per replicate. `mse` compares the best affine
//! τ-expectile fit on the estimated two-dimensional basis with the true conditional
//! τ-expectile surface `μ(tⱼ) + f₁(tⱼ)α₁ᵢ + f₂(tⱼ)α₂ᵢ + e_τ(εᵢⱼ)`, averaged over all
//! `n·p` cells. `component_mse` compares the component vectors themselves with
//! `(f₁, f₂)`, see [`component_mse`].

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use expca::components::{bottom_up_with, principal_expectile_with, top_down_with};
use expca::{
    fit_affine_basis, Algorithm, ComponentSet, DataMatrix, LawsComponentOptions, LawsOptions, PecOptions, SignRule,
    TauLevel,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StudentT, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as NormalDist, StudentsT};
use thiserror::Error;

/// Iteration budget per attempt and number of restarts before a run counts as unconverged.
pub const SIM_MAX_ITER: usize = 30;
pub const SIM_RESTARTS: usize = 50;
/// Default number of replications per configuration.
pub const DEFAULT_REPLICATIONS: usize = 100;

#[derive(Error, Debug)]
pub enum SimError {
    #[error(transparent)]
    Fit(#[from] expca::Error),
    #[error("invalid {what}: {value}")]
    Invalid { what: &'static str, value: String },
    #[error("grid mismatch: estimate has {estimate} points, truth has {truth}")]
    GridMismatch { estimate: usize, truth: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

fn invalid(what: &'static str, value: impl fmt::Display) -> SimError {
    SimError::Invalid {
        what,
        value: value.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Setting {
    /// α variances 36 and 9, noise variance 0.5.
    One,
    /// α variances 16 and 9, noise variance 1.
    Two,
}

impl Setting {
    pub fn alpha_variances(self) -> (f64, f64) {
        match self {
            Setting::One => (36.0, 9.0),
            Setting::Two => (16.0, 9.0),
        }
    }

    pub fn noise_variance(self) -> f64 {
        match self {
            Setting::One => 0.5,
            Setting::Two => 1.0,
        }
    }
}

impl TryFrom<u8> for Setting {
    type Error = SimError;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Setting::One),
            2 => Ok(Setting::Two),
            other => Err(invalid("setting", other)),
        }
    }
}

impl From<Setting> for u8 {
    fn from(s: Setting) -> u8 {
        match s {
            Setting::One => 1,
            Setting::Two => 2,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

impl FromStr for Setting {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        s.trim().parse::<u8>().map_err(|_| invalid("setting", s)).and_then(Setting::try_from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scenario {
    /// iid Normal(0, σ²).
    Normal,
    /// iid Student t with 5 degrees of freedom.
    StudentT,
    /// Normal(0, μ(tⱼ)σ²).
    Heteroscedastic,
    /// iid log-Normal(0, σ²), not recentred.
    LogNormal,
    /// Sum of two iid Uniform(0, σ²), not recentred.
    UniformSum,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Normal,
        Scenario::StudentT,
        Scenario::Heteroscedastic,
        Scenario::LogNormal,
        Scenario::UniformSum,
    ];
}

impl TryFrom<u8> for Scenario {
    type Error = SimError;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Scenario::Normal),
            2 => Ok(Scenario::StudentT),
            3 => Ok(Scenario::Heteroscedastic),
            4 => Ok(Scenario::LogNormal),
            5 => Ok(Scenario::UniformSum),
            other => Err(invalid("scenario", other)),
        }
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        match s {
            Scenario::Normal => 1,
            Scenario::StudentT => 2,
            Scenario::Heteroscedastic => 3,
            Scenario::LogNormal => 4,
            Scenario::UniformSum => 5,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

impl FromStr for Scenario {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        s.trim().parse::<u8>().map_err(|_| invalid("scenario", s)).and_then(Scenario::try_from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Medium,
    Large,
}

impl Size {
    /// `(n, p)`.
    pub fn dims(self) -> (usize, usize) {
        match self {
            Size::Small => (20, 100),
            Size::Medium => (50, 150),
            Size::Large => (100, 200),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Medium => "medium",
            Size::Large => "large",
        }
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Size {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "small" => Ok(Size::Small),
            "medium" => Ok(Size::Medium),
            "large" => Ok(Size::Large),
            _ => Err(invalid("size", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub setting: Setting,
    pub scenario: Scenario,
    pub size: Size,
    pub tau: TauLevel,
    pub algorithm: Algorithm,
    pub replications: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(invalid("replications", 0));
        }
        Ok(())
    }
}

/// Mean curve `μ(t) = 1 + t + exp{−(t − 0.6)²/0.05}`.
pub fn mean_function(t: f64) -> f64 {
    1.0 + t + (-(t - 0.6).powi(2) / 0.05).exp()
}

/// First component curve `√2 sin(2πt)`.
pub fn f1(t: f64) -> f64 {
    std::f64::consts::SQRT_2 * (2.0 * std::f64::consts::PI * t).sin()
}

/// Second component curve `√2 cos(2πt)`.
pub fn f2(t: f64) -> f64 {
    std::f64::consts::SQRT_2 * (2.0 * std::f64::consts::PI * t).cos()
}

/// `tⱼ = (j − 1)/(p − 1)`, `j = 1..p`.
pub fn grid(p: usize) -> Vec<f64> {
    if p == 1 {
        return vec![0.0];
    }
    (0..p).map(|j| j as f64 / (p - 1) as f64).collect()
}

/// One simulated data set together with the truth it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDraw {
    pub y: DataMatrix,
    /// Noise-free part `μ(tⱼ) + f₁(tⱼ)α₁ᵢ + f₂(tⱼ)α₂ᵢ`.
    pub signal: DMatrix<f64>,
    pub grid: Vec<f64>,
    pub f1: DVector<f64>,
    pub f2: DVector<f64>,
    /// `n × 2` factor scores.
    pub scores: DMatrix<f64>,
}

/// The RNG of replicate `replicate` under `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

pub fn generate(config: &SimConfig, replicate: u64) -> SimDraw {
    generate_scaled(config, replicate, 1.0)
}

/// Like [`generate`] with every noise draw multiplied by `noise_scale` (0 gives noiseless curves).
pub fn generate_scaled(config: &SimConfig, replicate: u64, noise_scale: f64) -> SimDraw {
    let (n, p) = config.size.dims();
    let t = grid(p);
    let mut rng = replicate_rng(config.seed, replicate);
    let (v1, v2) = config.setting.alpha_variances();
    let a1 = Normal::new(0.0, v1.sqrt()).expect("positive sd");
    let a2 = Normal::new(0.0, v2.sqrt()).expect("positive sd");
    let mut scores = DMatrix::zeros(n, 2);
    for i in 0..n {
        scores[(i, 0)] = a1.sample(&mut rng);
        scores[(i, 1)] = a2.sample(&mut rng);
    }
    let s2 = config.setting.noise_variance();
    let normal = Normal::new(0.0, s2.sqrt()).expect("positive sd");
    let student = StudentT::new(5.0).expect("positive dof");
    let lognormal = LogNormal::new(0.0, s2.sqrt()).expect("positive sd");
    let uniform = Uniform::new(0.0, s2).expect("nonempty range");
    let mu: Vec<f64> = t.iter().map(|&x| mean_function(x)).collect();
    let g1 = DVector::from_iterator(p, t.iter().map(|&x| f1(x)));
    let g2 = DVector::from_iterator(p, t.iter().map(|&x| f2(x)));
    let signal = DMatrix::from_fn(n, p, |i, j| mu[j] + g1[j] * scores[(i, 0)] + g2[j] * scores[(i, 1)]);
    let mut y = signal.clone();
    for i in 0..n {
        for j in 0..p {
            let eps = match config.scenario {
                Scenario::Normal => normal.sample(&mut rng),
                Scenario::StudentT => student.sample(&mut rng),
                Scenario::Heteroscedastic => mu[j].sqrt() * normal.sample(&mut rng),
                Scenario::LogNormal => lognormal.sample(&mut rng),
                Scenario::UniformSum => uniform.sample(&mut rng) + uniform.sample(&mut rng),
            };
            y[(i, j)] += noise_scale * eps;
        }
    }
    SimDraw {
        y: DataMatrix::new(y).expect("simulated values are finite"),
        signal,
        grid: t,
        f1: g1,
        f2: g2,
        scores,
    }
}

/// Component-function MSE of the first two estimated components against `(f₁, f₂)`.
///
/// The true pair is Gram–Schmidt orthonormalised and scaled to unit mean square on the
/// grid; estimates (unit vectors) are scaled the same way. Estimates are paired with
/// the truth by the larger total absolute inner product and sign-aligned, and the
/// mean squared pointwise difference is averaged over the pair.
pub fn component_mse(components: &DMatrix<f64>, truth: (&DVector<f64>, &DVector<f64>)) -> Result<f64> {
    let p = truth.0.len();
    if components.nrows() != p || truth.1.len() != p {
        return Err(SimError::GridMismatch {
            estimate: components.nrows(),
            truth: p,
        });
    }
    if components.ncols() < 2 {
        return Err(invalid("component count", components.ncols()));
    }
    let scale = (p as f64).sqrt();
    let q1 = truth.0.normalize();
    let q2 = {
        let r = truth.1 - &q1 * q1.dot(truth.1);
        r.normalize()
    };
    let g = [&q1 * scale, &q2 * scale];
    let est: Vec<DVector<f64>> = (0..2).map(|j| components.column(j).normalize() * scale).collect();
    let ip = |a: &DVector<f64>, b: &DVector<f64>| a.dot(b).abs();
    let straight = ip(&g[0], &est[0]) + ip(&g[1], &est[1]);
    let swapped = ip(&g[0], &est[1]) + ip(&g[1], &est[0]);
    let pairs = if straight >= swapped { [(0, 0), (1, 1)] } else { [(0, 1), (1, 0)] };
    let mut total = 0.0;
    for (ti, ei) in pairs {
        let e = if g[ti].dot(&est[ei]) < 0.0 { -&est[ei] } else { est[ei].clone() };
        total += (&g[ti] - e).norm_squared() / p as f64;
    }
    Ok(total / 2.0)
}

/// `E(e − X)₊` for the noise law of `scenario` at standard deviation `sd` (scenarios 1–3),
/// log-scale `sd` (scenario 4) or uniform width `sd²` (scenario 5).
fn lower_partial_moment(scenario: Scenario, sd: f64, e: f64) -> f64 {
    match scenario {
        Scenario::Normal | Scenario::Heteroscedastic => {
            let z = e / sd;
            let std = NormalDist::new(0.0, 1.0).expect("standard normal");
            sd * (std.pdf(z) + z * std.cdf(z))
        }
        Scenario::StudentT => {
            let nu = 5.0;
            let t = StudentsT::new(0.0, 1.0, nu).expect("valid t");
            e * t.cdf(e) + t.pdf(e) * (nu + e * e) / (nu - 1.0)
        }
        Scenario::LogNormal => {
            if e <= 0.0 {
                return 0.0;
            }
            let std = NormalDist::new(0.0, 1.0).expect("standard normal");
            let l = e.ln();
            e * std.cdf(l / sd) - (sd * sd / 2.0).exp() * std.cdf((l - sd * sd) / sd)
        }
        Scenario::UniformSum => {
            // Triangular law on [0, 2a] with mode a.
            let a = sd * sd;
            if e <= 0.0 {
                0.0
            } else if e <= a {
                e.powi(3) / (6.0 * a * a)
            } else if e <= 2.0 * a {
                a / 6.0 + (e - a) - (a.powi(3) - (2.0 * a - e).powi(3)) / (6.0 * a * a)
            } else {
                e - a
            }
        }
    }
}

fn noise_mean(scenario: Scenario, sd: f64) -> f64 {
    match scenario {
        Scenario::Normal | Scenario::Heteroscedastic | Scenario::StudentT => 0.0,
        Scenario::LogNormal => (sd * sd / 2.0).exp(),
        Scenario::UniformSum => sd * sd,
    }
}

/// τ-expectile of one noise law: the root of `τ(EX − e) + (2τ − 1)E(e − X)₊`, which is decreasing in `e`.
fn noise_law_expectile(scenario: Scenario, sd: f64, tau: TauLevel) -> f64 {
    let t = tau.value();
    let mean = noise_mean(scenario, sd);
    let h = |e: f64| t * (mean - e) + (2.0 * t - 1.0) * lower_partial_moment(scenario, sd, e);
    let mut width = sd.max(1.0);
    let (mut lo, mut hi) = (mean - width, mean + width);
    while h(lo) < 0.0 || h(hi) > 0.0 {
        width *= 2.0;
        lo = mean - width;
        hi = mean + width;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// τ-expectile of `εᵢⱼ` at each grid point, for noise multiplied by `noise_scale ≥ 0`.
pub fn noise_expectiles(config: &SimConfig, grid: &[f64], noise_scale: f64) -> DVector<f64> {
    let s2 = config.setting.noise_variance();
    let tau = config.tau;
    let sd = match config.scenario {
        Scenario::StudentT => 1.0,
        _ => s2.sqrt(),
    };
    let homogeneous = noise_law_expectile(config.scenario, sd, tau);
    DVector::from_iterator(
        grid.len(),
        grid.iter().map(|&t| {
            let e = match config.scenario {
                Scenario::Heteroscedastic => mean_function(t).sqrt() * homogeneous,
                _ => homogeneous,
            };
            noise_scale * e
        }),
    )
}

/// True conditional τ-expectile surface of a draw.
pub fn expectile_surface(draw: &SimDraw, config: &SimConfig, noise_scale: f64) -> DMatrix<f64> {
    let e = noise_expectiles(config, &draw.grid, noise_scale);
    let mut out = draw.signal.clone();
    for mut row in out.row_iter_mut() {
        row += e.transpose();
    }
    out
}

/// Mean squared cellwise difference between the best affine τ-expectile fit on the first
/// two columns of `components` and `target`.
pub fn surface_mse(y: &DataMatrix, components: &DMatrix<f64>, tau: TauLevel, target: &DMatrix<f64>) -> Result<f64> {
    if components.ncols() < 2 {
        return Err(invalid("component count", components.ncols()));
    }
    if target.shape() != y.as_matrix().shape() {
        return Err(SimError::GridMismatch {
            estimate: y.ncols(),
            truth: target.ncols(),
        });
    }
    let basis = components.columns(0, 2).into_owned();
    let fit = fit_affine_basis(y, &basis, tau, SURFACE_MAX_ITER)?;
    let diff = fit.fitted(&basis) - target;
    Ok(diff.norm_squared() / diff.len() as f64)
}

const SURFACE_MAX_ITER: usize = 500;

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub replicate: u64,
    /// Surface MSE, see [`surface_mse`].
    pub mse: f64,
    pub component_mse: f64,
    pub converged: bool,
    pub seconds: f64,
    pub components: DMatrix<f64>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Fits two components with the benchmark's 30-iteration / 50-restart budget.
pub fn estimate(
    y: &DataMatrix,
    tau: TauLevel,
    algorithm: Algorithm,
    seed: u64,
    pec_sign: SignRule,
) -> Result<ComponentSet> {
    let cs = match algorithm {
        Algorithm::PrincipalExpectile => {
            let opts = PecOptions {
                max_iter: SIM_MAX_ITER,
                restarts: SIM_RESTARTS,
                seed,
                sign: pec_sign,
                ..PecOptions::default()
            };
            principal_expectile_with(y, 2, tau, &opts)?
        }
        Algorithm::TopDown | Algorithm::BottomUp => {
            let opts = LawsComponentOptions {
                laws: LawsOptions {
                    max_weight_sweeps: SIM_MAX_ITER,
                    ..LawsOptions::default()
                },
                restarts: SIM_RESTARTS,
                seed,
            };
            if algorithm == Algorithm::TopDown {
                top_down_with(y, 2, tau, &opts)?
            } else {
                bottom_up_with(y, 2, tau, &opts)?
            }
        }
    };
    Ok(cs)
}

pub fn run_replicate(config: &SimConfig, replicate: u64, opts: &RunOptions) -> Result<ReplicateOutcome> {
    if !(opts.noise_scale >= 0.0 && opts.noise_scale.is_finite()) {
        return Err(invalid("noise scale", opts.noise_scale));
    }
    let draw = generate_scaled(config, replicate, opts.noise_scale);
    let seed = splitmix(config.seed ^ splitmix(replicate));
    let start = Instant::now();
    let cs = estimate(&draw.y, config.tau, config.algorithm, seed, opts.pec_sign)?;
    let seconds = start.elapsed().as_secs_f64();
    let target = expectile_surface(&draw, config, opts.noise_scale);
    Ok(ReplicateOutcome {
        replicate,
        mse: surface_mse(&draw.y, &cs.components, config.tau, &target)?,
        component_mse: component_mse(&cs.components, (&draw.f1, &draw.f2))?,
        converged: cs.converged(),
        seconds,
        components: cs.components,
    })
}

/// Aggregates for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub setting: Setting,
    pub scenario: Scenario,
    pub size: Size,
    pub tau: TauLevel,
    pub algorithm: Algorithm,
    pub mean_mse: f64,
    pub sd_mse: f64,
    pub mean_component_mse: f64,
    pub sd_component_mse: f64,
    pub nonconvergence_rate: f64,
    pub mean_seconds: f64,
    pub replications_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Record wall-clock time; without it `mean_seconds` is 0 and reports are byte-stable.
    pub timing: bool,
    /// Eigenvector sign handling inside the PEC iteration.
    pub pec_sign: SignRule,
    /// Multiplier on every noise draw.
    pub noise_scale: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            timing: true,
            pec_sign: SignRule::LargestPositive,
            noise_scale: 1.0,
        }
    }
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let r = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / r;
    let sd = if r > 1.0 {
        (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn aggregate(config: &SimConfig, outcomes: &[ReplicateOutcome], opts: &RunOptions) -> SimReport {
    let r = outcomes.len() as f64;
    let (mean_mse, sd_mse) = mean_sd(outcomes.iter().map(|o| o.mse));
    let (mean_component_mse, sd_component_mse) = mean_sd(outcomes.iter().map(|o| o.component_mse));
    let flagged = outcomes.iter().filter(|o| !o.converged).count();
    let seconds = if opts.timing {
        outcomes.iter().map(|o| o.seconds).sum::<f64>() / r
    } else {
        0.0
    };
    SimReport {
        setting: config.setting,
        scenario: config.scenario,
        size: config.size,
        tau: config.tau,
        algorithm: config.algorithm,
        mean_mse,
        sd_mse,
        mean_component_mse,
        sd_component_mse,
        nonconvergence_rate: flagged as f64 / r,
        mean_seconds: seconds,
        replications_used: outcomes.len(),
    }
}

/// Runs every replicate of `config` in parallel; outcomes are in replicate order.
pub fn run_config(config: &SimConfig, opts: &RunOptions) -> Result<(SimReport, Vec<ReplicateOutcome>)> {
    config.validate()?;
    let outcomes = (0..config.replications as u64)
        .into_par_iter()
        .map(|r| run_replicate(config, r, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok((aggregate(config, &outcomes, opts), outcomes))
}

pub fn run_grid(configs: &[SimConfig], opts: &RunOptions) -> Result<Vec<SimReport>> {
    if configs.is_empty() {
        return Err(invalid("configuration list", "empty"));
    }
    configs.iter().map(|c| run_config(c, opts).map(|(r, _)| r)).collect()
}

/// Report table with columns
/// `setting,scenario,size,tau,algorithm,mean_mse,sd_mse,noncvg_rate,mean_seconds`.
pub fn write_reports_csv<W: Write>(reports: &[SimReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "setting",
        "scenario",
        "size",
        "tau",
        "algorithm",
        "mean_mse",
        "sd_mse",
        "noncvg_rate",
        "mean_seconds",
    ])?;
    for r in reports {
        w.write_record([
            r.setting.to_string(),
            r.scenario.to_string(),
            r.size.to_string(),
            r.tau.value().to_string(),
            r.algorithm.abbreviation().to_string(),
            r.mean_mse.to_string(),
            r.sd_mse.to_string(),
            r.nonconvergence_rate.to_string(),
            r.mean_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn reports_json(reports: &[SimReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

/// Long table `replicate,component,t,truth,estimate` of sign-aligned estimated curves
/// against the (orthonormalised, unit mean-square) truth.
pub fn write_curves_csv<W: Write>(outcomes: &[ReplicateOutcome], draw: &SimDraw, out: W) -> Result<()> {
    let p = draw.grid.len();
    let scale = (p as f64).sqrt();
    let q1 = draw.f1.normalize();
    let q2 = (&draw.f2 - &q1 * q1.dot(&draw.f2)).normalize();
    let truth = [&q1 * scale, &q2 * scale];
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replicate", "component", "t", "truth", "estimate"])?;
    for o in outcomes {
        for (c, g) in truth.iter().enumerate() {
            let est = (0..o.components.ncols())
                .map(|j| o.components.column(j).into_owned())
                .max_by(|a, b| a.dot(g).abs().total_cmp(&b.dot(g).abs()))
                .expect("at least one component");
            let est = if est.dot(g) < 0.0 { -est } else { est } * scale;
            for j in 0..p {
                w.write_record([
                    o.replicate.to_string(),
                    (c + 1).to_string(),
                    draw.grid[j].to_string(),
                    g[j].to_string(),
                    est[j].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(algorithm: Algorithm) -> SimConfig {
        SimConfig {
            setting: Setting::One,
            scenario: Scenario::Normal,
            size: Size::Small,
            tau: TauLevel::new(0.95).unwrap(),
            algorithm,
            replications: 2,
            seed: 7,
        }
    }

    #[test]
    fn curve_values_at_zero() {
        assert!((mean_function(0.0) - (1.0 + (-0.36f64 / 0.05).exp())).abs() < 1e-15);
        assert!((mean_function(0.0) - 1.00075).abs() < 1e-5);
        assert_eq!(f1(0.0), 0.0);
        assert!((f2(0.0) - 2f64.sqrt()).abs() < 1e-15);
        let g = grid(100);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[99], 1.0);
    }

    #[test]
    fn enumerations_parse() {
        assert_eq!("2".parse::<Setting>().unwrap(), Setting::Two);
        assert!("3".parse::<Setting>().is_err());
        assert_eq!("5".parse::<Scenario>().unwrap(), Scenario::UniformSum);
        assert!("6".parse::<Scenario>().is_err());
        assert_eq!("Medium".parse::<Size>().unwrap(), Size::Medium);
    }

    #[test]
    fn generation_is_deterministic_and_shaped() {
        let c = config(Algorithm::TopDown);
        let a = generate(&c, 3);
        let b = generate(&c, 3);
        assert_eq!(a, b);
        assert_eq!(a.y.as_matrix().shape(), (20, 100));
        assert_ne!(generate(&c, 4).y, a.y);
    }

    #[test]
    fn noise_expectiles_match_quadrature() {
        // Reference roots of the expectile first-order condition by numerical quadrature.
        let cases = [
            (Setting::One, Scenario::Normal, 0.95, 0.8062227489336897),
            (Setting::One, Scenario::Normal, 0.9, 0.6092376253060758),
            (Setting::One, Scenario::StudentT, 0.95, 1.4800119472247841),
            (Setting::One, Scenario::StudentT, 0.9, 1.076782102112304),
            (Setting::One, Scenario::LogNormal, 0.95, 2.828707630535405),
            (Setting::One, Scenario::UniformSum, 0.95, 0.7317174176638883),
            (Setting::One, Scenario::UniformSum, 0.9, 0.6780225623239682),
            (Setting::Two, Scenario::LogNormal, 0.95, 4.927467523802053),
        ];
        for (setting, scenario, tau, want) in cases {
            let c = SimConfig {
                setting,
                scenario,
                tau: TauLevel::new(tau).unwrap(),
                ..config(Algorithm::TopDown)
            };
            let got = noise_expectiles(&c, &[0.3], 1.0)[0];
            assert!((got - want).abs() < 1e-9, "{scenario:?} {tau}: {got} vs {want}");
        }
        let c = SimConfig {
            scenario: Scenario::Heteroscedastic,
            ..config(Algorithm::TopDown)
        };
        let e = noise_expectiles(&c, &[0.0, 0.6], 2.0);
        assert!((e[0] - 2.0 * mean_function(0.0).sqrt() * 0.8062227489336897).abs() < 1e-9);
        assert!((e[1] - 2.0 * 2.6f64.sqrt() * 0.8062227489336897).abs() < 1e-9);
    }

    #[test]
    fn noiseless_top_down_surface_is_exact() {
        let c = config(Algorithm::TopDown);
        let opts = RunOptions {
            timing: false,
            noise_scale: 0.0,
            ..RunOptions::default()
        };
        let o = run_replicate(&c, 0, &opts).unwrap();
        assert!(o.converged);
        assert!(o.mse < 1e-12, "{}", o.mse);
        assert!(o.component_mse < 0.2);
    }

    #[test]
    fn mse_of_truth_is_zero() {
        let c = config(Algorithm::TopDown);
        let d = generate(&c, 0);
        let q1 = d.f1.normalize();
        let q2 = (&d.f2 - &q1 * q1.dot(&d.f2)).normalize();
        let est = DMatrix::from_columns(&[q1.clone(), q2.clone()]);
        assert!(component_mse(&est, (&d.f1, &d.f2)).unwrap() < 1e-28);
        let flipped = DMatrix::from_columns(&[-q2, -q1]);
        assert!(component_mse(&flipped, (&d.f1, &d.f2)).unwrap() < 1e-28);
        assert!(component_mse(&DMatrix::zeros(5, 2), (&d.f1, &d.f2)).is_err());
    }

    #[test]
    fn replicate_report_is_reproducible() {
        let c = SimConfig {
            replications: 1,
            ..config(Algorithm::PrincipalExpectile)
        };
        let opts = RunOptions {
            timing: false,
            ..RunOptions::default()
        };
        let a = run_grid(&[c], &opts).unwrap();
        let b = run_grid(&[c], &opts).unwrap();
        assert_eq!(a, b);
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_reports_csv(&a, &mut x).unwrap();
        write_reports_csv(&b, &mut y).unwrap();
        assert_eq!(x, y);
    }
}
