//! Nested component bases: TopDown, BottomUp and principal expectile components.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::{fit_fixed_basis, laws_fit, DataMatrix, Factorization, Init, LawsOptions, SubspaceConstraint};
use crate::linalg;
use crate::stats::{expectile_slice, tau_variance_slice, TauLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    TopDown,
    BottomUp,
    #[serde(rename = "pec")]
    PrincipalExpectile,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::BottomUp, Algorithm::TopDown, Algorithm::PrincipalExpectile];

    /// Short label as used in reports: `BUP`, `TD`, `PEC`.
    pub fn abbreviation(self) -> &'static str {
        match self {
            Algorithm::TopDown => "TD",
            Algorithm::BottomUp => "BUP",
            Algorithm::PrincipalExpectile => "PEC",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::TopDown => "topdown",
            Algorithm::BottomUp => "bottomup",
            Algorithm::PrincipalExpectile => "pec",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "topdown" | "td" => Ok(Algorithm::TopDown),
            "bottomup" | "bup" | "bu" => Ok(Algorithm::BottomUp),
            "pec" | "principalexpectile" | "principal_expectile" => Ok(Algorithm::PrincipalExpectile),
            other => Err(Error::Shape(format!(
                "unknown algorithm '{other}' (expected topdown, bottomup or pec)"
            ))),
        }
    }
}

/// Per-component diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    /// τ-variance of the component's loadings.
    pub tau_variance: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Weighted center, covariance and leading direction for one label configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PecState {
    /// `τ` for observations in τ₊, `1 − τ` otherwise.
    pub weights: DVector<f64>,
    pub e_hat: DVector<f64>,
    pub c_matrix: DMatrix<f64>,
    pub phi: DVector<f64>,
    /// τ-expectile of the projections `φᵀYᵢ`.
    pub mu: f64,
}

/// Output of the three component constructions.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    pub algorithm: Algorithm,
    pub tau: TauLevel,
    pub center: DVector<f64>,
    /// `p × k`, orthonormal columns, largest-magnitude entry of each positive.
    pub components: DMatrix<f64>,
    /// `n × k` coordinates of `Yᵢ − center` on the components.
    pub loadings: DMatrix<f64>,
    pub stats: Vec<ComponentStats>,
    /// Whether each component was negated to meet the sign convention.
    pub flipped: Vec<bool>,
    /// Asymmetric objective of the underlying low-rank fit (TopDown/BottomUp),
    /// or of the component reconstruction (PrincipalExpectile).
    pub objective: f64,
    /// Final label state per component (PrincipalExpectile only).
    pub pec_states: Vec<PecState>,
    /// Stability certificate per component (PrincipalExpectile only).
    pub stable: Vec<bool>,
    /// Restarts used over all inner fits.
    pub restarts: usize,
}

impl ComponentSet {
    pub fn k(&self) -> usize {
        self.components.ncols()
    }

    pub fn converged(&self) -> bool {
        self.stats.iter().all(|s| s.converged)
    }

    pub fn iterations(&self) -> usize {
        self.stats.iter().map(|s| s.iterations).sum()
    }

    /// Component `j` in the orientation the algorithm produced it.
    pub fn raw_component(&self, j: usize) -> DVector<f64> {
        let c = self.components.column(j).into_owned();
        if self.flipped[j] {
            -c
        } else {
            c
        }
    }
}

/// Shared options for TopDown and BottomUp.
#[derive(Debug, Clone, PartialEq)]
pub struct LawsComponentOptions {
    pub laws: LawsOptions,
    /// Random-start retries for an inner fit that does not converge.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for LawsComponentOptions {
    fn default() -> Self {
        LawsComponentOptions {
            laws: LawsOptions::default(),
            restarts: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PecOptions {
    /// Iterations per attempt.
    pub max_iter: usize,
    /// Random-label restarts after the τ-path attempt fails.
    pub restarts: usize,
    pub seed: u64,
    /// Step of the τ-path from ½ to the target level; 0 disables the path.
    pub path_step: f64,
    /// Subtract `μφ` as well as the projection when forming residuals for later components.
    pub residual_shift: bool,
    pub sign: SignRule,
}

/// How the sign of each iterate's eigenvector is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignRule {
    /// The sign with the larger τ-variance of the projections; ties keep the previous orientation.
    #[default]
    TauVariance,
    /// Entry of largest magnitude positive, whatever the data say.
    LargestPositive,
    /// Whatever sign the eigensolver returns.
    Solver,
}

impl Default for PecOptions {
    fn default() -> Self {
        PecOptions {
            max_iter: 30,
            restarts: 50,
            seed: 0,
            path_step: 0.05,
            residual_shift: true,
            sign: SignRule::default(),
        }
    }
}

fn check_k(y: &DataMatrix, k: usize) -> Result<()> {
    let (n, p) = (y.nrows(), y.ncols());
    if k == 0 || k >= p || k > n {
        return Err(Error::InvalidRank(format!(
            "need 1 <= k < p and k <= n, got k = {k} for a {n}x{p} matrix"
        )));
    }
    Ok(())
}

/// `laws_fit` with random-start retries; keeps the best objective when none converges.
fn fit_with_restarts(
    y: &DataMatrix,
    k: usize,
    tau: TauLevel,
    constraint: &SubspaceConstraint,
    opts: &LawsComponentOptions,
    stream: u64,
) -> Result<(Factorization, usize)> {
    let mut best = laws_fit(y, k, tau, constraint, &opts.laws)?;
    let mut used = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    while !best.converged && used < opts.restarts {
        used += 1;
        let laws = LawsOptions {
            init: Init::Random(rng.random()),
            ..opts.laws.clone()
        };
        let f = laws_fit(y, k, tau, constraint, &laws)?;
        if f.converged || f.objective < best.objective {
            best = f;
        }
    }
    Ok((best, used))
}

/// Appends the last column of `v` to `basis` after Gram–Schmidt.
fn push_new_direction(basis: &mut DMatrix<f64>, v: &DMatrix<f64>) -> Result<()> {
    let dir = v.column(v.ncols() - 1).into_owned();
    let q = linalg::orthonormalize_against(&dir, basis)
        .ok_or_else(|| Error::Degenerate("new component lies in the span of the previous ones".into()))?;
    let at = basis.ncols();
    *basis = basis.clone().insert_column(at, 0.0);
    basis.set_column(at, &q);
    Ok(())
}

/// Orients components, computes loadings and per-component τ-variances.
#[allow(clippy::too_many_arguments)]
fn finish(
    algorithm: Algorithm,
    tau: TauLevel,
    center: DVector<f64>,
    mut comps: DMatrix<f64>,
    mut loadings: DMatrix<f64>,
    flags: Vec<(bool, usize)>,
    objective: f64,
    restarts: usize,
) -> ComponentSet {
    let mut flipped = Vec::with_capacity(comps.ncols());
    for j in 0..comps.ncols() {
        let mut c = comps.column(j).into_owned();
        let f = linalg::orient_largest_positive(&mut c);
        if f {
            comps.set_column(j, &c);
            let l = -loadings.column(j).into_owned();
            loadings.set_column(j, &l);
        }
        flipped.push(f);
    }
    let stats = flags
        .into_iter()
        .enumerate()
        .map(|(j, (converged, iterations))| ComponentStats {
            tau_variance: tau_variance_slice(loadings.column(j).as_slice(), tau),
            converged,
            iterations,
        })
        .collect();
    ComponentSet {
        algorithm,
        tau,
        center,
        components: comps,
        loadings,
        stats,
        flipped,
        objective,
        pec_states: Vec::new(),
        stable: Vec::new(),
        restarts,
    }
}

pub fn top_down(y: &DataMatrix, k: usize, tau: TauLevel) -> Result<ComponentSet> {
    top_down_with(y, k, tau, &LawsComponentOptions::default())
}

/// TopDown: the optimal affine k-subspace first, then nested optimal subspaces inside it.
pub fn top_down_with(y: &DataMatrix, k: usize, tau: TauLevel, opts: &LawsComponentOptions) -> Result<ComponentSet> {
    check_k(y, k)?;
    let (full, mut restarts) = fit_with_restarts(y, k, tau, &SubspaceConstraint::intercept(), opts, 0)?;
    let center = full.center.clone().expect("intercept fit has a center");
    let q = linalg::orthonormal_basis(&full.v);
    if q.ncols() < k {
        return Err(Error::Degenerate("fitted subspace has lower rank than k".into()));
    }
    let shifted = DataMatrix::new(linalg::subtract_row(y.as_matrix(), &center))?;
    let mut basis = DMatrix::zeros(y.ncols(), 0);
    let mut flags = Vec::with_capacity(k);
    for j in 1..k {
        let mut c = SubspaceConstraint::none().with_within(q.clone());
        if j > 1 {
            c = c.with_contains(basis.clone());
        }
        let (f, used) = fit_with_restarts(&shifted, j, tau, &c, opts, j as u64)?;
        restarts += used;
        push_new_direction(&mut basis, &f.v)?;
        flags.push((f.converged, f.iterations));
    }
    let rest = linalg::orthonormal_basis(&linalg::project_out(&q, &basis));
    let last = rest.column(0).into_owned();
    let at = basis.ncols();
    basis = basis.insert_column(at, 0.0);
    basis.set_column(at, &last);
    flags.push((full.converged, full.iterations));
    let loadings = &full.u * (full.v.transpose() * &basis);
    Ok(finish(
        Algorithm::TopDown,
        tau,
        center,
        basis,
        loadings,
        flags,
        full.objective,
        restarts,
    ))
}

pub fn bottom_up(y: &DataMatrix, k: usize, tau: TauLevel) -> Result<ComponentSet> {
    bottom_up_with(y, k, tau, &LawsComponentOptions::default())
}

/// BottomUp: grow the optimal affine subspace one dimension at a time, re-estimating the center.
pub fn bottom_up_with(y: &DataMatrix, k: usize, tau: TauLevel, opts: &LawsComponentOptions) -> Result<ComponentSet> {
    check_k(y, k)?;
    let mut basis = DMatrix::zeros(y.ncols(), 0);
    let mut flags = Vec::with_capacity(k);
    let mut restarts = 0;
    let mut last = None;
    for j in 1..=k {
        let mut c = SubspaceConstraint::intercept();
        if j > 1 {
            c = c.with_contains(basis.clone());
        }
        let (f, used) = fit_with_restarts(y, j, tau, &c, opts, j as u64)?;
        restarts += used;
        push_new_direction(&mut basis, &f.v)?;
        flags.push((f.converged, f.iterations));
        last = Some(f);
    }
    let f = last.expect("k >= 1");
    let center = f.center.clone().expect("intercept fit has a center");
    let loadings = &f.u * (f.v.transpose() * &basis);
    Ok(finish(
        Algorithm::BottomUp,
        tau,
        center,
        basis,
        loadings,
        flags,
        f.objective,
        restarts,
    ))
}

fn check_labels(y: &DMatrix<f64>, labels: &[bool]) -> Result<()> {
    if labels.len() != y.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} observations",
            labels.len(),
            y.nrows()
        )));
    }
    Ok(())
}

/// `{τ Σ_{τ₊} Yᵢ + (1 − τ) Σ_{τ₋} Yᵢ} / {τ n₊ + (1 − τ) n₋}`; `labels[i]` marks τ₊.
pub fn pec_center(labels: &[bool], y: &DataMatrix, tau: TauLevel) -> Result<DVector<f64>> {
    check_labels(y.as_matrix(), labels)?;
    Ok(weighted_center(y.as_matrix(), labels, tau))
}

fn weighted_center(y: &DMatrix<f64>, labels: &[bool], tau: TauLevel) -> DVector<f64> {
    let mut sum = DVector::zeros(y.ncols());
    let mut den = 0.0;
    for (i, &pos) in labels.iter().enumerate() {
        let w = tau.label_weight(pos);
        sum.axpy(w, &y.row(i).transpose(), 1.0);
        den += w;
    }
    sum / den
}

/// `(τ/n) Σ_{τ₊} (Yᵢ − ê)(Yᵢ − ê)ᵀ + ((1 − τ)/n) Σ_{τ₋} (Yᵢ − ê)(Yᵢ − ê)ᵀ`.
pub fn pec_cov(labels: &[bool], y: &DataMatrix, e_hat: &DVector<f64>, tau: TauLevel) -> Result<DMatrix<f64>> {
    check_labels(y.as_matrix(), labels)?;
    if e_hat.len() != y.ncols() {
        return Err(Error::Shape(format!(
            "center has length {}, expected {}",
            e_hat.len(),
            y.ncols()
        )));
    }
    let x = scaled_deviations(y.as_matrix(), labels, e_hat, tau);
    let c = x.transpose() * x;
    Ok((&c + c.transpose()) * 0.5)
}

/// Rows `√(wᵢ/n)(Yᵢ − ê)`, so that `C = XᵀX`.
fn scaled_deviations(y: &DMatrix<f64>, labels: &[bool], e_hat: &DVector<f64>, tau: TauLevel) -> DMatrix<f64> {
    let n = y.nrows() as f64;
    let mut x = linalg::subtract_row(y, e_hat);
    for (i, &pos) in labels.iter().enumerate() {
        let s = (tau.label_weight(pos) / n).sqrt();
        x.row_mut(i).scale_mut(s);
    }
    x
}

/// Leading unit eigenvector of `XᵀX`, through the smaller of the two Gram matrices.
fn leading_direction(x: &DMatrix<f64>) -> DVector<f64> {
    let (n, p) = x.shape();
    let pick = |eig: SymmetricEigen<f64, nalgebra::Dyn>| -> DVector<f64> {
        let idx = eig.eigenvalues.imax();
        eig.eigenvectors.column(idx).into_owned()
    };
    if n < p {
        let g = x * x.transpose();
        let a = pick(SymmetricEigen::new((&g + g.transpose()) * 0.5));
        let v = x.transpose() * a;
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
        let mut e = DVector::zeros(p);
        e[0] = 1.0;
        e
    } else {
        let c = x.transpose() * x;
        pick(SymmetricEigen::new((&c + c.transpose()) * 0.5))
    }
}

fn projections(y: &DMatrix<f64>, phi: &DVector<f64>) -> Vec<f64> {
    (y * phi).as_slice().to_vec()
}

/// Chooses the sign of `phi` that maximises the τ-variance of the projections,
/// falling back to agreement with `prev` (then to the sign convention) on a tie.
fn choose_sign(
    y: &DMatrix<f64>,
    phi: DVector<f64>,
    tau: TauLevel,
    prev: Option<&DVector<f64>>,
    rule: SignRule,
) -> DVector<f64> {
    match rule {
        SignRule::LargestPositive => {
            let mut phi = phi;
            linalg::orient_largest_positive(&mut phi);
            return phi;
        }
        SignRule::Solver => return phi,
        SignRule::TauVariance => {}
    }
    let proj = projections(y, &phi);
    let plus = tau_variance_slice(&proj, tau);
    let minus = tau_variance_slice(&proj, tau.complement());
    let scale = plus.max(minus);
    if (plus - minus).abs() > 1e-12 * scale {
        return if plus >= minus { phi } else { -phi };
    }
    match prev {
        Some(p) if p.dot(&phi) < 0.0 => -phi,
        Some(_) => phi,
        None => {
            let mut phi = phi;
            linalg::orient_largest_positive(&mut phi);
            phi
        }
    }
}

/// One PrincipalExpectile step: state for `labels` and the labels it induces.
pub fn pec_step(
    y: &DataMatrix,
    labels: &[bool],
    tau: TauLevel,
    prev_phi: Option<&DVector<f64>>,
) -> Result<(PecState, Vec<bool>)> {
    check_labels(y.as_matrix(), labels)?;
    Ok(step(y.as_matrix(), labels, tau, prev_phi, SignRule::default()))
}

fn step(
    y: &DMatrix<f64>,
    labels: &[bool],
    tau: TauLevel,
    prev_phi: Option<&DVector<f64>>,
    rule: SignRule,
) -> (PecState, Vec<bool>) {
    let e_hat = weighted_center(y, labels, tau);
    let x = scaled_deviations(y, labels, &e_hat, tau);
    let phi = choose_sign(y, leading_direction(&x), tau, prev_phi, rule);
    let proj = projections(y, &phi);
    let mu = expectile_slice(&proj, tau, false).0.value;
    let next: Vec<bool> = proj.iter().map(|&z| z > mu).collect();
    let c = x.transpose() * &x;
    let state = PecState {
        weights: DVector::from_iterator(labels.len(), labels.iter().map(|&l| tau.label_weight(l))),
        e_hat,
        c_matrix: (&c + c.transpose()) * 0.5,
        phi,
        mu,
    };
    (state, next)
}

/// Result of the first-component search on one data matrix.
struct PecRun {
    state: PecState,
    labels: Vec<bool>,
    converged: bool,
    iterations: usize,
    restarts: usize,
}

struct Attempt {
    converged: bool,
    iterations: usize,
    /// Best iterate by τ-variance of the projections.
    best: Option<(f64, PecState, Vec<bool>)>,
    last_labels: Vec<bool>,
    last_phi: Option<DVector<f64>>,
}

/// Iterates from `labels` until the labels repeat or a cycle / the cap is hit.
fn iterate(
    y: &DMatrix<f64>,
    mut labels: Vec<bool>,
    tau: TauLevel,
    max_iter: usize,
    mut prev: Option<DVector<f64>>,
    rule: SignRule,
) -> Attempt {
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    let mut best: Option<(f64, PecState, Vec<bool>)> = None;
    for it in 1..=max_iter {
        seen.insert(labels.clone());
        let (state, next) = step(y, &labels, tau, prev.as_ref(), rule);
        prev = Some(state.phi.clone());
        let var = tau_variance_slice(&projections(y, &state.phi), tau);
        if next == labels {
            return Attempt {
                converged: true,
                iterations: it,
                best: Some((var, state, labels.clone())),
                last_labels: labels,
                last_phi: prev,
            };
        }
        if best.as_ref().is_none_or(|(b, _, _)| var > *b) {
            best = Some((var, state, labels.clone()));
        }
        let cycle = seen.contains(&next);
        labels = next;
        if cycle {
            return Attempt {
                converged: false,
                iterations: it,
                best,
                last_labels: labels,
                last_phi: prev,
            };
        }
    }
    Attempt {
        converged: false,
        iterations: max_iter,
        best,
        last_labels: labels,
        last_phi: prev,
    }
}

/// Levels strictly between ½ and `tau` in steps of `step`, then `tau` itself.
fn tau_path(tau: TauLevel, step: f64) -> Vec<TauLevel> {
    let t = tau.value();
    let mut out = Vec::new();
    if step > 0.0 {
        let dir = if t >= 0.5 { 1.0 } else { -1.0 };
        let mut level = 0.5 + dir * step;
        while (level - t) * dir < -1e-12 {
            out.push(TauLevel::new(level).expect("path level inside (0, 1)"));
            level += dir * step;
        }
    }
    out.push(tau);
    out
}

fn first_component(y: &DMatrix<f64>, tau: TauLevel, opts: &PecOptions, stream: u64) -> PecRun {
    let n = y.nrows();
    let path = tau_path(tau, opts.path_step);

    // Classical start: leading direction at the symmetric level.
    let mean = linalg::column_means(y);
    let x = linalg::subtract_row(y, &mean);
    let sign_level = path[0];
    let phi0 = choose_sign(y, leading_direction(&x), sign_level, None, opts.sign);
    let proj = projections(y, &phi0);
    let mu0 = expectile_slice(&proj, TauLevel::half(), false).0.value;
    let mut labels: Vec<bool> = proj.iter().map(|&z| z > mu0).collect();
    let mut prev = Some(phi0);

    let (target, warm) = path.split_last().expect("path ends at tau");
    for &level in warm {
        let a = iterate(y, labels, level, opts.max_iter, prev, opts.sign);
        labels = a.last_labels;
        prev = a.last_phi;
    }

    let mut total_iter = 0;
    let mut best: Option<(f64, PecState, Vec<bool>)> = None;
    let mut keep = |a: Attempt, best: &mut Option<(f64, PecState, Vec<bool>)>| -> Option<(PecState, Vec<bool>)> {
        total_iter += a.iterations;
        if a.converged {
            let (_, s, l) = a.best.expect("converged attempt has a state");
            return Some((s, l));
        }
        if let Some(cand) = a.best {
            if best.as_ref().is_none_or(|(b, _, _)| cand.0 > *b) {
                *best = Some(cand);
            }
        }
        None
    };

    let a = iterate(y, labels, *target, opts.max_iter, prev, opts.sign);
    if let Some((state, labels)) = keep(a, &mut best) {
        return PecRun {
            state,
            labels,
            converged: true,
            iterations: total_iter,
            restarts: 0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    for r in 1..=opts.restarts {
        let start: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let a = iterate(y, start, *target, opts.max_iter, None, opts.sign);
        if let Some((state, labels)) = keep(a, &mut best) {
            return PecRun {
                state,
                labels,
                converged: true,
                iterations: total_iter,
                restarts: r,
            };
        }
    }
    let (_, state, labels) = best.expect("at least one iteration ran");
    PecRun {
        state,
        labels,
        converged: false,
        iterations: total_iter,
        restarts: opts.restarts,
    }
}

/// Stability certificate: `φᵀYᵢ > φᵀê` exactly for the observations labelled τ₊.
pub fn is_stable(y: &DataMatrix, state: &PecState, labels: &[bool]) -> bool {
    let level = state.phi.dot(&state.e_hat);
    projections(y.as_matrix(), &state.phi)
        .iter()
        .zip(labels)
        .all(|(&z, &l)| (z > level) == l)
}

pub fn principal_expectile(y: &DataMatrix, k: usize, tau: TauLevel) -> Result<ComponentSet> {
    principal_expectile_with(y, k, tau, &PecOptions::default())
}

/// Principal expectile components: the first by the label fixed-point iteration,
/// later ones by repeating it on residuals.
pub fn principal_expectile_with(y: &DataMatrix, k: usize, tau: TauLevel, opts: &PecOptions) -> Result<ComponentSet> {
    check_k(y, k)?;
    let p = y.ncols();
    let mut z = y.as_matrix().clone();
    let mut basis = DMatrix::<f64>::zeros(p, 0);
    let mut flags = Vec::with_capacity(k);
    let mut states = Vec::with_capacity(k);
    let mut stable = Vec::with_capacity(k);
    let mut restarts = 0;
    let mut center = None;
    for j in 0..k {
        let run = first_component(&z, tau, opts, j as u64);
        restarts += run.restarts;
        let zd = DataMatrix::new(z.clone())?;
        stable.push(run.converged && is_stable(&zd, &run.state, &run.labels));
        let phi = linalg::orthonormalize_against(&run.state.phi, &basis)
            .ok_or_else(|| Error::Degenerate("component lies in the span of the previous ones".into()))?;
        let at = basis.ncols();
        basis = basis.insert_column(at, 0.0);
        basis.set_column(at, &phi);
        if center.is_none() {
            center = Some(run.state.e_hat.clone());
        }
        // Yᵢ − φ(φᵀYᵢ) − μφ
        let proj = &z * &phi;
        z -= &proj * phi.transpose();
        if opts.residual_shift {
            let shift = &phi * run.state.mu;
            z = linalg::subtract_row(&z, &shift);
        }
        flags.push((run.converged, run.iterations));
        states.push(run.state);
    }
    let center = center.expect("k >= 1");
    let centered = linalg::subtract_row(y.as_matrix(), &center);
    let loadings = &centered * &basis;
    let objective = {
        let m = center.clone();
        crate::laws::objective_value(y, &m, &loadings, &basis, tau)?
    };
    let mut cs = finish(
        Algorithm::PrincipalExpectile,
        tau,
        center,
        basis,
        loadings,
        flags,
        objective,
        restarts,
    );
    cs.pec_states = states;
    cs.stable = stable;
    Ok(cs)
}

/// Runs `algorithm` with default options.
pub fn fit_components(y: &DataMatrix, k: usize, tau: TauLevel, algorithm: Algorithm) -> Result<ComponentSet> {
    match algorithm {
        Algorithm::TopDown => top_down(y, k, tau),
        Algorithm::BottomUp => bottom_up(y, k, tau),
        Algorithm::PrincipalExpectile => principal_expectile(y, k, tau),
    }
}

/// Total coordinatewise τ-variance, `Σⱼ Var_τ(Y·ⱼ)`.
pub fn total_tau_variance(y: &DataMatrix, tau: TauLevel) -> f64 {
    y.as_matrix()
        .column_iter()
        .map(|c| tau_variance_slice(c.as_slice(), tau))
        .sum()
}

/// Cumulative proportion of τ-variation explained by the first `j` components, `j = 1..k`.
pub fn explained_variance(y: &DataMatrix, cs: &ComponentSet) -> Result<Vec<f64>> {
    if cs.components.nrows() != y.ncols() {
        return Err(Error::Shape(format!(
            "components have {} rows, data has {} columns",
            cs.components.nrows(),
            y.ncols()
        )));
    }
    let total = total_tau_variance(y, cs.tau);
    if total <= 0.0 {
        return Err(Error::Degenerate("data have zero total tau-variance".into()));
    }
    let k = cs.k();
    let mut out = Vec::with_capacity(k);
    match cs.algorithm {
        Algorithm::PrincipalExpectile => {
            let mut acc = 0.0;
            for s in &cs.stats {
                acc += s.tau_variance;
                out.push((acc / total).clamp(0.0, 1.0));
            }
        }
        Algorithm::TopDown | Algorithm::BottomUp => {
            let base = y.nrows() as f64 * total;
            for j in 1..=k {
                let v = cs.components.columns(0, j).into_owned();
                let fit = fit_fixed_basis(y, Some(&cs.center), &v, cs.tau, 200)?;
                out.push((1.0 - fit.objective / base).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}
