//! Low-rank approximation in the asymmetric L2 norm by iterative weighted least squares.
//!
//! The fitted matrix is `1mᵀ + UVᵀ`. Rows of `U` and columns of `Vᵀ` are solved
//! alternately by weighted least squares, with the weight of every cell set to τ
//! when its residual is positive and `1 − τ` otherwise. Each block update is a
//! Newton step on a convex piecewise quadratic; steps that would raise the
//! asymmetric objective are halved until they do not, so the objective never
//! increases.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, solve_spd};
use crate::stats::TauLevel;

const MAX_HALVINGS: usize = 40;
const ACCEPT_SLACK: f64 = 1e-14;

/// An `n × p` matrix of finite observations, rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(DMatrix<f64>);

impl DataMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() < 2 {
            return Err(Error::NotEnoughSamples {
                required: 2,
                got: m.nrows(),
            });
        }
        if m.ncols() < 1 {
            return Err(Error::Shape("data matrix needs at least one column".into()));
        }
        if let Some(idx) = m.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: idx,
                value: m[idx],
            });
        }
        Ok(DataMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Shape(format!(
                "row {bad} has {} entries, expected {p}",
                rows[bad].len()
            )));
        }
        DataMatrix::new(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl TryFrom<DMatrix<f64>> for DataMatrix {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        DataMatrix::new(m)
    }
}

/// Restrictions on the fitted column space.
///
/// `contains` (p × r) is kept as the first `r` columns of `V`; `within` (p × R)
/// forces `span V ⊆ span within`; `fixed_intercept` adjoins an all-ones column to
/// `U` whose partner column in `V` is the center `m`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubspaceConstraint {
    pub contains: Option<DMatrix<f64>>,
    pub within: Option<DMatrix<f64>>,
    pub fixed_intercept: bool,
}

impl SubspaceConstraint {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn intercept() -> Self {
        SubspaceConstraint {
            fixed_intercept: true,
            ..Self::default()
        }
    }

    pub fn with_contains(mut self, basis: DMatrix<f64>) -> Self {
        self.contains = Some(basis);
        self
    }

    pub fn with_within(mut self, basis: DMatrix<f64>) -> Self {
        self.within = Some(basis);
        self
    }
}

/// Starting basis for the free columns of `V`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    /// Leading right singular vectors of the (centered, constraint-projected) data.
    #[default]
    Svd,
    /// Uniform random entries from a seeded ChaCha8 stream.
    Random(u64),
    /// Explicit `p × (k − r)` starting matrix for the free columns.
    Given(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LawsOptions {
    /// Cap on full sweeps.
    pub max_sweeps: usize,
    /// Give up (unconverged) when the weights are still changing after this many sweeps.
    pub max_weight_sweeps: usize,
    /// Relative change of the fitted matrix (Frobenius, scaled by ‖Y‖) under which a
    /// sweep with unchanged weights counts as converged.
    pub tol: f64,
    pub init: Init,
}

impl Default for LawsOptions {
    fn default() -> Self {
        LawsOptions {
            max_sweeps: 200,
            max_weight_sweeps: 200,
            tol: 1e-10,
            init: Init::Svd,
        }
    }
}

/// Result of [`laws_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub center: Option<DVector<f64>>,
    /// `n × k` loadings.
    pub u: DMatrix<f64>,
    /// `p × k` basis; with a `contains` constraint its first columns are the given ones.
    pub v: DMatrix<f64>,
    /// Cell weights, each τ or `1 − τ`, consistent with the stored residual signs.
    pub weights: DMatrix<f64>,
    pub objective: f64,
    /// Full sweeps performed.
    pub iterations: usize,
    /// Sweeps after which the weights stopped changing.
    pub weight_sweeps: usize,
    pub converged: bool,
    /// Objective after every half-sweep, starting after the first `U` update.
    pub objective_trace: Vec<f64>,
    /// Whether any normal-equation solve needed the ridge fallback.
    pub regularized: bool,
}

impl Factorization {
    /// `1mᵀ + UVᵀ`.
    pub fn fitted(&self) -> DMatrix<f64> {
        let mut f = &self.u * self.v.transpose();
        if let Some(m) = &self.center {
            for mut row in f.row_iter_mut() {
                row += m.transpose();
            }
        }
        f
    }

    pub fn residuals(&self, y: &DataMatrix) -> DMatrix<f64> {
        y.as_matrix() - self.fitted()
    }
}

#[inline]
fn rho(r: f64, tau: TauLevel) -> f64 {
    tau.weight(r) * r * r
}

/// `Σᵢⱼ wᵢⱼ (Yᵢⱼ − mⱼ − (UVᵀ)ᵢⱼ)²` with sign-rule weights.
pub fn objective_value(
    y: &DataMatrix,
    m: &DVector<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    tau: TauLevel,
) -> Result<f64> {
    let (n, p) = y.as_matrix().shape();
    if m.len() != p {
        return Err(Error::Shape(format!("center has length {}, expected {p}", m.len())));
    }
    if u.nrows() != n || v.nrows() != p || u.ncols() != v.ncols() {
        return Err(Error::Shape(format!(
            "U is {}x{} and V is {}x{} for a {n}x{p} data matrix",
            u.nrows(),
            u.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    let fit = u * v.transpose();
    let ym = y.as_matrix();
    let mut total = 0.0;
    for j in 0..p {
        for i in 0..n {
            total += rho(ym[(i, j)] - m[j] - fit[(i, j)], tau);
        }
    }
    Ok(total)
}

/// Exact weighted least-squares solve for every row of `U` given `V` and `W`.
/// Returns the loadings and whether the ridge fallback was used.
pub fn weighted_ls_update_rows(
    y: &DMatrix<f64>,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, bool)> {
    let (n, p) = y.shape();
    if v.nrows() != p || w.shape() != (n, p) {
        return Err(Error::Shape("weighted_ls_update_rows: shapes do not conform".into()));
    }
    let k = v.ncols();
    let mut u = DMatrix::zeros(n, k);
    let mut regularized = false;
    for i in 0..n {
        let (a, g) = normal_equations(v, |j| w[(i, j)], |j| y[(i, j)]);
        let s = solve_spd(a, &g);
        regularized |= s.regularized;
        u.row_mut(i).copy_from(&s.x.transpose());
    }
    Ok((u, regularized))
}

/// Exact weighted least-squares solve for every row of `V` given `U` and `W`.
pub fn weighted_ls_update_cols(
    y: &DMatrix<f64>,
    u: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, bool)> {
    let (vt, reg) = weighted_ls_update_rows(&y.transpose(), u, &w.transpose())?;
    Ok((vt, reg))
}

/// Normal equations `Σⱼ wⱼ dⱼdⱼᵀ`, `Σⱼ wⱼ rⱼ dⱼ` over the rows `dⱼ` of `design`.
fn normal_equations(
    design: &DMatrix<f64>,
    weight: impl Fn(usize) -> f64,
    resp: impl Fn(usize) -> f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let q = design.ncols();
    let mut a = DMatrix::zeros(q, q);
    let mut g = DVector::<f64>::zeros(q);
    for j in 0..design.nrows() {
        let wj = weight(j);
        let rj = resp(j);
        for s in 0..q {
            let ds = wj * design[(j, s)];
            g[s] += ds * rj;
            for t in 0..=s {
                a[(s, t)] += ds * design[(j, t)];
            }
        }
    }
    for s in 0..q {
        for t in 0..s {
            a[(t, s)] = a[(s, t)];
        }
    }
    (a, g)
}

fn row_loss(resp: &DMatrix<f64>, i: usize, design: &DMatrix<f64>, theta: &[f64], tau: TauLevel) -> f64 {
    let mut total = 0.0;
    for j in 0..design.nrows() {
        let mut f = 0.0;
        for (s, t) in theta.iter().enumerate() {
            f += design[(j, s)] * t;
        }
        total += rho(resp[(i, j)] - f, tau);
    }
    total
}

/// One safeguarded Newton step for each row of `coef`, where row `i` of `resp` is
/// modelled as `design · coefᵢ`. With `uniform` the weights are all ½ and the plain
/// least-squares solution is taken. Returns whether any solve was regularized.
fn row_step(
    resp: &DMatrix<f64>,
    design: &DMatrix<f64>,
    coef: &mut DMatrix<f64>,
    tau: TauLevel,
    uniform: bool,
) -> bool {
    let q = design.ncols();
    let mut regularized = false;
    let mut theta = vec![0.0; q];
    let mut trial = vec![0.0; q];
    for i in 0..resp.nrows() {
        for s in 0..q {
            theta[s] = coef[(i, s)];
        }
        let fitted_i = |j: usize, th: &[f64]| -> f64 { (0..q).map(|s| design[(j, s)] * th[s]).sum() };
        let (a, g) = normal_equations(
            design,
            |j| {
                if uniform {
                    0.5
                } else {
                    tau.weight(resp[(i, j)] - fitted_i(j, &theta))
                }
            },
            |j| resp[(i, j)],
        );
        let sol = solve_spd(a, &g);
        regularized |= sol.regularized;
        if uniform {
            for s in 0..q {
                coef[(i, s)] = sol.x[s];
            }
            continue;
        }
        let f_old = row_loss(resp, i, design, &theta, tau);
        let mut alpha = 1.0;
        for _ in 0..MAX_HALVINGS {
            for s in 0..q {
                trial[s] = theta[s] + alpha * (sol.x[s] - theta[s]);
            }
            if row_loss(resp, i, design, &trial, tau) <= f_old * (1.0 + ACCEPT_SLACK) {
                for s in 0..q {
                    coef[(i, s)] = trial[s];
                }
                break;
            }
            alpha *= 0.5;
        }
    }
    regularized
}

/// Validated constraint with an orthonormal basis of the free directions.
struct Prepared {
    intercept: bool,
    /// Frozen columns of `V` (p × r), as supplied.
    fixed: DMatrix<f64>,
    /// Orthonormal basis of `span(within) ∩ span(fixed)⊥`, when `within` is present.
    free_basis: Option<DMatrix<f64>>,
    /// Orthonormal basis of `span(fixed)`.
    fixed_q: DMatrix<f64>,
}

fn prepare(p: usize, k: usize, c: &SubspaceConstraint) -> Result<Prepared> {
    if k == 0 || k >= p {
        return Err(Error::InvalidRank(format!("need 1 <= k < p, got k = {k}, p = {p}")));
    }
    let fixed = match &c.contains {
        Some(m) => {
            if m.nrows() != p {
                return Err(Error::Shape(format!("contains basis has {} rows, expected {p}", m.nrows())));
            }
            if m.ncols() >= k {
                return Err(Error::InvalidRank(format!(
                    "contains basis has {} columns, must be fewer than k = {k}",
                    m.ncols()
                )));
            }
            if linalg::numerical_rank(m) != m.ncols() {
                return Err(Error::InvalidRank("contains basis is rank deficient".into()));
            }
            linalg::check_finite_matrix(m)?;
            m.clone()
        }
        None => DMatrix::zeros(p, 0),
    };
    let fixed_q = linalg::orthonormal_basis(&fixed);
    let free_basis = match &c.within {
        Some(b) => {
            if b.nrows() != p {
                return Err(Error::Shape(format!("within basis has {} rows, expected {p}", b.nrows())));
            }
            if b.ncols() <= k {
                return Err(Error::InvalidRank(format!(
                    "within basis has {} columns, must exceed k = {k}",
                    b.ncols()
                )));
            }
            linalg::check_finite_matrix(b)?;
            if linalg::numerical_rank(b) != b.ncols() {
                return Err(Error::InvalidRank("within basis is rank deficient".into()));
            }
            let bq = linalg::orthonormal_basis(b);
            if fixed.ncols() > 0 {
                let outside = linalg::project_out(&fixed, &bq);
                if outside.norm() > 1e-8 * fixed.norm() {
                    return Err(Error::InvalidRank(
                        "contains basis does not lie within the within basis".into(),
                    ));
                }
            }
            let free = linalg::orthonormal_basis(&linalg::project_out(&bq, &fixed_q));
            if free.ncols() < k - fixed.ncols() {
                return Err(Error::InvalidRank("too few free directions inside the within basis".into()));
            }
            Some(free)
        }
        None => None,
    };
    Ok(Prepared {
        intercept: c.fixed_intercept,
        fixed,
        free_basis,
        fixed_q,
    })
}

/// Fills `m` (d × kf) with extra orthonormal columns where its own columns are
/// numerically dependent, drawing from `pool` columns.
fn complete_columns(m: DMatrix<f64>, pool: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, kf) = m.shape();
    let mut out = DMatrix::<f64>::zeros(d, 0);
    let candidates = m.column_iter().map(|c| c.into_owned()).chain(pool.column_iter().map(|c| c.into_owned()));
    for c in candidates {
        if out.ncols() == kf {
            break;
        }
        if let Some(q) = linalg::orthonormalize_against(&c, &out) {
            let last = out.ncols();
            out = out.insert_column(last, 0.0);
            out.set_column(last, &q);
        }
    }
    out
}

struct State<'a> {
    y: &'a DMatrix<f64>,
    tau: TauLevel,
    prep: Prepared,
    k: usize,
    m: DVector<f64>,
    u: DMatrix<f64>,
    /// Free coefficients: `V′` (in free-basis coordinates) when `within` is set, else the free columns of `V`.
    free: DMatrix<f64>,
    regularized: bool,
}

impl State<'_> {
    fn r(&self) -> usize {
        self.prep.fixed.ncols()
    }

    fn kf(&self) -> usize {
        self.k - self.r()
    }

    fn free_columns(&self) -> DMatrix<f64> {
        match &self.prep.free_basis {
            Some(b) => b * &self.free,
            None => self.free.clone(),
        }
    }

    fn v(&self) -> DMatrix<f64> {
        let p = self.y.ncols();
        let mut v = DMatrix::zeros(p, self.k);
        let r = self.r();
        v.columns_mut(0, r).copy_from(&self.prep.fixed);
        v.columns_mut(r, self.kf()).copy_from(&self.free_columns());
        v
    }

    fn fitted(&self) -> DMatrix<f64> {
        let mut f = &self.u * self.v().transpose();
        if self.prep.intercept {
            for mut row in f.row_iter_mut() {
                row += self.m.transpose();
            }
        }
        f
    }

    fn objective(&self, fitted: &DMatrix<f64>) -> f64 {
        self.y.zip_fold(fitted, 0.0, |acc, a, b| acc + rho(a - b, self.tau))
    }

    fn u_step(&mut self, uniform: bool) {
        let resp = if self.prep.intercept {
            linalg::subtract_row(self.y, &self.m)
        } else {
            self.y.clone()
        };
        let v = self.v();
        self.regularized |= row_step(&resp, &v, &mut self.u, self.tau, uniform);
    }

    fn v_step(&mut self) {
        if self.prep.free_basis.is_some() {
            self.v_step_within();
        } else {
            self.v_step_plain();
        }
        self.normalize_free();
    }

    /// Response for the free part: `Y − U_C Cᵀ`.
    fn free_response(&self) -> DMatrix<f64> {
        let r = self.r();
        if r == 0 {
            self.y.clone()
        } else {
            self.y - self.u.columns(0, r) * self.prep.fixed.transpose()
        }
    }

    fn v_step_plain(&mut self) {
        let r = self.r();
        let kf = self.kf();
        let n = self.y.nrows();
        let off = usize::from(self.prep.intercept);
        let resp_t = self.free_response().transpose();
        let mut design = DMatrix::zeros(n, off + kf);
        if self.prep.intercept {
            design.column_mut(0).fill(1.0);
        }
        design.columns_mut(off, kf).copy_from(&self.u.columns(r, kf));
        let p = self.y.ncols();
        let mut coef = DMatrix::zeros(p, off + kf);
        if self.prep.intercept {
            coef.column_mut(0).copy_from(&self.m);
        }
        coef.columns_mut(off, kf).copy_from(&self.free);
        self.regularized |= row_step(&resp_t, &design, &mut coef, self.tau, false);
        if self.prep.intercept {
            self.m.copy_from(&coef.column(0));
        }
        self.free.copy_from(&coef.columns(off, kf));
    }

    /// Joint solve for `V′` (and `m`) when `V_free = B V′` couples the columns.
    fn v_step_within(&mut self) {
        let b = self.prep.free_basis.clone().expect("within basis");
        let (n, p) = self.y.shape();
        let r = self.r();
        let kf = self.kf();
        let q1 = b.ncols();
        let q = q1 * kf;
        let resp = self.free_response();
        let uf = self.u.columns(r, kf).into_owned();
        let fitted = self.fitted();
        let tau = self.tau;
        let idx = |a: usize, l: usize| a + q1 * l;

        let mut big_a = DMatrix::<f64>::zeros(q, q);
        let mut g = DVector::<f64>::zeros(q);
        let mut schur_a = DMatrix::<f64>::zeros(q, q);
        let mut schur_g = DVector::<f64>::zeros(q);
        let mut d = vec![0.0; p];
        let mut c = vec![0.0; p];
        let mut s_vecs = DMatrix::<f64>::zeros(kf, p);
        for j in 0..p {
            let mut mj = DMatrix::<f64>::zeros(kf, kf);
            let mut hj = DVector::<f64>::zeros(kf);
            let mut sj = DVector::<f64>::zeros(kf);
            let (mut dj, mut cj) = (0.0, 0.0);
            for i in 0..n {
                let w = tau.weight(self.y[(i, j)] - fitted[(i, j)]);
                let rij = resp[(i, j)];
                dj += w;
                cj += w * rij;
                for l in 0..kf {
                    let wu = w * uf[(i, l)];
                    hj[l] += wu * rij;
                    sj[l] += wu;
                    for l2 in 0..kf {
                        mj[(l, l2)] += wu * uf[(i, l2)];
                    }
                }
            }
            for l in 0..kf {
                for a in 0..q1 {
                    g[idx(a, l)] += b[(j, a)] * hj[l];
                    for l2 in 0..kf {
                        let ml = mj[(l, l2)];
                        if ml == 0.0 {
                            continue;
                        }
                        for a2 in 0..q1 {
                            big_a[(idx(a, l), idx(a2, l2))] += b[(j, a)] * b[(j, a2)] * ml;
                        }
                    }
                }
            }
            if self.prep.intercept {
                d[j] = dj;
                c[j] = cj;
                s_vecs.column_mut(j).copy_from(&sj);
                // b_j[(a, l)] = B_ja s_j[l]
                for l in 0..kf {
                    for a in 0..q1 {
                        let bj = b[(j, a)] * sj[l];
                        schur_g[idx(a, l)] += bj * cj / dj;
                        for l2 in 0..kf {
                            for a2 in 0..q1 {
                                schur_a[(idx(a, l), idx(a2, l2))] += bj * b[(j, a2)] * sj[l2] / dj;
                            }
                        }
                    }
                }
            }
        }
        let sol = solve_spd(&big_a - &schur_a, &(&g - &schur_g));
        self.regularized |= sol.regularized;
        let theta_new = DMatrix::from_fn(q1, kf, |a, l| sol.x[idx(a, l)]);
        let m_new = if self.prep.intercept {
            let vf = &b * &theta_new;
            DVector::from_fn(p, |j, _| {
                let bt: f64 = (0..kf).map(|l| s_vecs[(l, j)] * vf[(j, l)]).sum();
                (c[j] - bt) / d[j]
            })
        } else {
            self.m.clone()
        };

        let f_old = self.objective(&fitted);
        let theta_old = self.free.clone();
        let m_old = self.m.clone();
        let mut alpha = 1.0;
        for _ in 0..MAX_HALVINGS {
            self.free = &theta_old + (&theta_new - &theta_old) * alpha;
            self.m = &m_old + (&m_new - &m_old) * alpha;
            if self.objective(&self.fitted()) <= f_old * (1.0 + ACCEPT_SLACK) {
                return;
            }
            alpha *= 0.5;
        }
        self.free = theta_old;
        self.m = m_old;
    }

    /// Re-expresses the free block with orthonormal columns, compensating in `U`.
    fn normalize_free(&mut self) {
        let r = self.r();
        let kf = self.kf();
        let qr = self.free.clone().qr();
        let rr = qr.r();
        if (0..kf).any(|i| rr[(i, i)].abs() <= 1e-300) {
            return;
        }
        let q = qr.q();
        let uf = self.u.columns(r, kf) * rr.transpose();
        self.u.columns_mut(r, kf).copy_from(&uf);
        self.free = q;
    }

    /// Residual signs as `Some(positive)`; residuals at roundoff level carry no sign.
    fn labels(&self, fitted: &DMatrix<f64>, noise: f64) -> Vec<Option<bool>> {
        self.y
            .iter()
            .zip(fitted.iter())
            .map(|(a, b)| {
                let r = a - b;
                (r.abs() > noise).then_some(r > 0.0)
            })
            .collect()
    }
}

type MapFn = Box<dyn Fn(&DMatrix<f64>) -> DMatrix<f64>>;

/// Fits `Y ≈ 1mᵀ + UVᵀ` with `rank V = k` in the asymmetric L2 norm.
pub fn laws_fit(
    y: &DataMatrix,
    k: usize,
    tau: TauLevel,
    constraint: &SubspaceConstraint,
    options: &LawsOptions,
) -> Result<Factorization> {
    let ym = y.as_matrix();
    let (n, p) = ym.shape();
    let prep = prepare(p, k, constraint)?;
    let r = prep.fixed.ncols();
    let kf = k - r;

    let m = if prep.intercept {
        linalg::column_means(ym)
    } else {
        DVector::zeros(p)
    };
    let base = if prep.intercept {
        linalg::subtract_row(ym, &m)
    } else {
        ym.clone()
    };
    // Free space in its own coordinates: free-basis coordinates under `within`,
    // otherwise ℝᵖ with the fixed span projected away.
    let (space_dim, to_space): (usize, MapFn) = match &prep.free_basis {
        Some(b) => {
            let bt = b.transpose();
            (b.ncols(), Box::new(move |x: &DMatrix<f64>| &bt * x))
        }
        None => {
            let fq = prep.fixed_q.clone();
            (p, Box::new(move |x: &DMatrix<f64>| linalg::project_out(x, &fq)))
        }
    };
    let pool = to_space(&DMatrix::identity(p, p));
    let raw = match &options.init {
        Init::Svd => {
            let proj = to_space(&base.transpose()).transpose();
            linalg::top_right_singular_vectors(&proj, kf.min(proj.nrows().min(proj.ncols())))
        }
        Init::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let g = DMatrix::from_fn(p, kf, |_, _| rng.random_range(-1.0..1.0));
            to_space(&g)
        }
        Init::Given(v0) => {
            if v0.shape() != (p, kf) {
                return Err(Error::Shape(format!(
                    "initial basis is {}x{}, expected {p}x{kf}",
                    v0.nrows(),
                    v0.ncols()
                )));
            }
            to_space(v0)
        }
    };
    let mut padded = DMatrix::zeros(space_dim, kf);
    let take = raw.ncols().min(kf);
    padded.columns_mut(0, take).copy_from(&raw.columns(0, take));
    let free = complete_columns(padded, &pool);
    if free.ncols() < kf {
        return Err(Error::InvalidRank("could not build an initial basis of full rank".into()));
    }

    let mut st = State {
        y: ym,
        tau,
        prep,
        k,
        m,
        u: DMatrix::zeros(n, k),
        free,
        regularized: false,
    };

    let y_norm = ym.norm();
    let noise = 64.0 * f64::EPSILON * ym.amax();
    let symmetric = tau.value() == 0.5;
    let mut trace = Vec::new();

    st.u_step(true);
    let mut fitted = st.fitted();
    trace.push(st.objective(&fitted));
    st.v_step();
    fitted = st.fitted();
    trace.push(st.objective(&fitted));
    let mut labels = st.labels(&fitted, noise);
    let mut iterations = 1;
    let mut weight_sweeps = 1;
    let mut converged = false;

    while iterations < options.max_sweeps {
        let fitted_old = fitted;
        st.u_step(false);
        let mid = st.fitted();
        trace.push(st.objective(&mid));
        let labels_mid = st.labels(&mid, noise);
        st.v_step();
        fitted = st.fitted();
        trace.push(st.objective(&fitted));
        let labels_new = st.labels(&fitted, noise);
        iterations += 1;
        let same_weights = symmetric || (labels_mid == labels && labels_new == labels);
        if !same_weights {
            weight_sweeps = iterations;
            if iterations >= options.max_weight_sweeps {
                break;
            }
        }
        labels = labels_new;
        let change = (&fitted - &fitted_old).norm();
        if same_weights && change <= options.tol * y_norm {
            converged = true;
            break;
        }
    }

    let v = st.v();
    let center = st.prep.intercept.then(|| st.m.clone());
    let residual = ym - &fitted;
    let weights = residual.map(|e| tau.weight(e));
    let objective = st.objective(&fitted);
    let rank_ok = linalg::numerical_rank(&v) == k;
    Ok(Factorization {
        center,
        u: st.u,
        v,
        weights,
        objective,
        iterations,
        weight_sweeps,
        converged: converged && rank_ok,
        objective_trace: trace,
        regularized: st.regularized,
    })
}

/// Loadings for a fixed basis, found by the row-wise reweighting iteration alone.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedBasisFit {
    pub u: DMatrix<f64>,
    /// Largest number of weight updates any row needed before its weights repeated.
    pub updates: usize,
    pub converged: bool,
    pub objective: f64,
}

/// Optimal loadings of `Y − 1cᵀ` on the fixed basis `V` under the asymmetric norm.
pub fn fit_fixed_basis(
    y: &DataMatrix,
    center: Option<&DVector<f64>>,
    v: &DMatrix<f64>,
    tau: TauLevel,
    max_updates: usize,
) -> Result<FixedBasisFit> {
    let (n, p) = y.as_matrix().shape();
    if v.nrows() != p {
        return Err(Error::Shape(format!("basis has {} rows, expected {p}", v.nrows())));
    }
    let resp = match center {
        Some(c) if c.len() != p => {
            return Err(Error::Shape(format!("center has length {}, expected {p}", c.len())))
        }
        Some(c) => linalg::subtract_row(y.as_matrix(), c),
        None => y.as_matrix().clone(),
    };
    let k = v.ncols();
    let mut u = DMatrix::zeros(n, k);
    let mut worst = 0;
    let mut converged = true;
    for i in 0..n {
        let row = resp.rows(i, 1).into_owned();
        let mut coef = DMatrix::zeros(1, k);
        row_step(&row, v, &mut coef, tau, true);
        let labels_of = |coef: &DMatrix<f64>| -> Vec<bool> {
            let f = v * coef.transpose();
            (0..p).map(|j| row[(0, j)] - f[j] > 0.0).collect()
        };
        let mut labels = labels_of(&coef);
        let mut updates = 0;
        let mut done = false;
        while updates < max_updates {
            row_step(&row, v, &mut coef, tau, false);
            updates += 1;
            let next = labels_of(&coef);
            if next == labels {
                done = true;
                break;
            }
            labels = next;
        }
        converged &= done;
        worst = worst.max(updates);
        u.row_mut(i).copy_from(&coef.row(0));
    }
    let zero = DVector::zeros(p);
    let objective = objective_value(y, center.unwrap_or(&zero), &u, v, tau)?;
    Ok(FixedBasisFit {
        u,
        updates: worst,
        converged,
        objective,
    })
}

/// Best affine approximation `1mᵀ + UVᵀ` with the basis `V` held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBasisFit {
    pub center: DVector<f64>,
    pub u: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl AffineBasisFit {
    pub fn fitted(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut f = &self.u * v.transpose();
        for mut row in f.row_iter_mut() {
            row += self.center.transpose();
        }
        f
    }
}

/// Jointly optimal center and loadings for a fixed full-rank basis `V`.
///
/// The center is kept in `span(V)⊥` so the problem is strictly convex; each
/// iteration solves the weighted normal equations for `(m, U)` through a Schur
/// complement on `m` and backtracks if the asymmetric objective would rise.
pub fn fit_affine_basis(y: &DataMatrix, v: &DMatrix<f64>, tau: TauLevel, max_iter: usize) -> Result<AffineBasisFit> {
    let ym = y.as_matrix();
    let (n, p) = ym.shape();
    let k = v.ncols();
    if v.nrows() != p {
        return Err(Error::Shape(format!("basis has {} rows, expected {p}", v.nrows())));
    }
    linalg::check_finite_matrix(v)?;
    if k == 0 || k >= p || linalg::numerical_rank(v) != k {
        return Err(Error::InvalidRank(format!("basis must have full column rank k < p = {p}")));
    }
    let q_basis = linalg::orthonormal_basis(v);
    let comp = linalg::orthonormal_basis(&linalg::project_out(&DMatrix::identity(p, p), &q_basis));

    let evaluate = |c: &DVector<f64>, u: &DMatrix<f64>| -> (DMatrix<f64>, f64) {
        let m = &comp * c;
        let mut f = u * v.transpose();
        for mut row in f.row_iter_mut() {
            row += m.transpose();
        }
        let obj = ym.zip_fold(&f, 0.0, |acc, a, b| acc + rho(a - b, tau));
        (f, obj)
    };
    let solve = |w: &DMatrix<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let col_w = DVector::from_fn(p, |j, _| w.column(j).sum());
        let mut s = comp.transpose() * DMatrix::from_diagonal(&col_w) * &comp;
        let wy = w.component_mul(ym);
        let mut rhs = comp.transpose() * DVector::from_fn(p, |j, _| wy.column(j).sum());
        let mut per_row = Vec::with_capacity(n);
        for i in 0..n {
            let wi = w.row(i).transpose();
            let wv = DMatrix::from_fn(p, k, |j, l| wi[j] * v[(j, l)]);
            let a = v.transpose() * &wv;
            let b = wv.transpose() * &comp;
            let r = wv.transpose() * ym.row(i).transpose();
            let chol = a.clone().cholesky();
            let (ainv_b, ainv_r) = match &chol {
                Some(ch) => (ch.solve(&b), ch.solve(&r)),
                None => {
                    let pinv = linalg::pseudo_inverse(&a);
                    (&pinv * &b, &pinv * &r)
                }
            };
            s -= b.transpose() * &ainv_b;
            rhs -= b.transpose() * &ainv_r;
            per_row.push((ainv_b, ainv_r));
        }
        let c = linalg::solve_spd((&s + s.transpose()) * 0.5, &rhs).x;
        let mut u = DMatrix::zeros(n, k);
        for (i, (ainv_b, ainv_r)) in per_row.into_iter().enumerate() {
            let ui = ainv_r - ainv_b * &c;
            u.row_mut(i).copy_from(&ui.transpose());
        }
        (c, u)
    };

    let noise = 64.0 * f64::EPSILON * ym.amax();
    let signs = |f: &DMatrix<f64>| -> Vec<Option<bool>> {
        ym.iter()
            .zip(f.iter())
            .map(|(a, b)| {
                let r = a - b;
                (r.abs() > noise).then_some(r > 0.0)
            })
            .collect()
    };

    let (mut c, mut u) = solve(&DMatrix::from_element(n, p, 0.5));
    let (mut fitted, mut obj) = evaluate(&c, &u);
    let mut labels = signs(&fitted);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let w = DMatrix::from_fn(n, p, |i, j| tau.weight(ym[(i, j)] - fitted[(i, j)]));
        let (c_new, u_new) = solve(&w);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let ct = &c + (&c_new - &c) * alpha;
            let ut = &u + (&u_new - &u) * alpha;
            let (ft, ot) = evaluate(&ct, &ut);
            if ot <= obj * (1.0 + ACCEPT_SLACK) {
                c = ct;
                u = ut;
                fitted = ft;
                obj = ot;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        let next = signs(&fitted);
        if !accepted || next == labels {
            converged = accepted;
            break;
        }
        labels = next;
    }
    Ok(AffineBasisFit {
        center: &comp * c,
        u,
        objective: obj,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tau(v: f64) -> TauLevel {
        TauLevel::new(v).unwrap()
    }

    fn pseudo_random(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn data_matrix_validation() {
        assert!(DataMatrix::new(DMatrix::zeros(1, 3)).is_err());
        assert!(DataMatrix::new(DMatrix::from_element(2, 2, f64::NAN)).is_err());
        assert!(DataMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(DataMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).is_ok());
    }

    #[test]
    fn objective_examples() {
        let y = DataMatrix::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.0]]).unwrap();
        let m = DVector::zeros(2);
        let u = DMatrix::zeros(2, 1);
        let v = DMatrix::zeros(2, 1);
        assert!((objective_value(&y, &m, &u, &v, tau(0.9)).unwrap() - 4.6).abs() < 1e-12);
        assert!((objective_value(&y, &m, &u, &v, tau(0.5)).unwrap() - 3.0).abs() < 1e-12);
        assert!(objective_value(&y, &DVector::zeros(3), &u, &v, tau(0.5)).is_err());
    }

    #[test]
    fn row_update_scalar_closed_form() {
        let y = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]);
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 0.5, 2.0]);
        let w = DMatrix::from_row_slice(1, 3, &[0.9, 0.1, 0.9]);
        let (u, reg) = weighted_ls_update_rows(&y, &v, &w).unwrap();
        assert!(!reg);
        let num: f64 = (0..3).map(|j| w[j] * y[j] * v[j]).sum();
        let den: f64 = (0..3).map(|j| w[j] * v[j] * v[j]).sum();
        assert!((u[0] - num / den).abs() < 1e-14);
        // 1-d grid oracle
        let loss = |a: f64| (0..3).map(|j| w[j] * (y[j] - a * v[j]).powi(2)).sum::<f64>();
        let best = (-2000..=2000)
            .map(|i| i as f64 * 1e-3)
            .min_by(|a, b| loss(*a).total_cmp(&loss(*b)))
            .unwrap();
        assert!((best - u[0]).abs() < 1e-3);
    }

    #[test]
    fn constant_weight_orthonormal_basis_gives_projection() {
        let y = pseudo_random(5, 4, 3);
        let v = linalg::orthonormal_basis(&pseudo_random(4, 2, 4));
        let w = DMatrix::from_element(5, 4, 0.8);
        let (u, _) = weighted_ls_update_rows(&y, &v, &w).unwrap();
        assert!((u - &y * &v).norm() < 1e-12);
    }

    #[test]
    fn exact_rank_k_has_zero_objective() {
        let a = pseudo_random(12, 2, 5);
        let b = pseudo_random(6, 2, 6);
        let y = DataMatrix::new(&a * b.transpose()).unwrap();
        for t in [0.1, 0.5, 0.9] {
            let f = laws_fit(&y, 2, tau(t), &SubspaceConstraint::none(), &LawsOptions::default()).unwrap();
            assert!(f.objective < 1e-20, "{}", f.objective);
            assert!(f.converged);
        }
    }

    #[test]
    fn symmetric_case_matches_svd_residual() {
        let y = DataMatrix::new(pseudo_random(15, 6, 7)).unwrap();
        let f = laws_fit(&y, 2, tau(0.5), &SubspaceConstraint::intercept(), &LawsOptions::default()).unwrap();
        let centered = linalg::subtract_row(y.as_matrix(), &linalg::column_means(y.as_matrix()));
        let s = centered.singular_values();
        let mut sv: Vec<f64> = s.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = sv[2..].iter().map(|x| x * x).sum();
        assert!((f.objective - 0.5 * tail).abs() <= 1e-10 * tail);
        assert!(f.converged);
    }

    #[test]
    fn stored_weights_and_objective_are_consistent() {
        let y = DataMatrix::new(pseudo_random(10, 5, 8)).unwrap();
        let f = laws_fit(&y, 1, tau(0.8), &SubspaceConstraint::intercept(), &LawsOptions::default()).unwrap();
        let res = f.residuals(&y);
        for (w, r) in f.weights.iter().zip(res.iter()) {
            assert_eq!(*w, tau(0.8).weight(*r));
        }
        let recomputed = objective_value(&y, f.center.as_ref().unwrap(), &f.u, &f.v, tau(0.8)).unwrap();
        assert!((recomputed - f.objective).abs() <= 1e-10 * recomputed.max(1e-300));
    }

    #[test]
    fn contains_and_within_are_respected() {
        let y = DataMatrix::new(pseudo_random(20, 6, 9)).unwrap();
        let c = pseudo_random(6, 1, 10);
        let b = DMatrix::from_fn(6, 4, |i, j| if j == 0 { c[i] } else { ((i * 7 + j * 3) % 5) as f64 - 2.0 });
        let cons = SubspaceConstraint::intercept().with_contains(c.clone()).with_within(b.clone());
        let f = laws_fit(&y, 2, tau(0.9), &cons, &LawsOptions::default()).unwrap();
        assert!((f.v.column(0) - c.column(0)).norm() < 1e-15);
        let bq = linalg::orthonormal_basis(&b);
        assert!(linalg::project_out(&f.v, &bq).norm() < 1e-10);
        let trace = &f.objective_trace;
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn invalid_constraints_are_rejected() {
        let y = DataMatrix::new(pseudo_random(8, 4, 11)).unwrap();
        let opts = LawsOptions::default();
        assert!(laws_fit(&y, 4, tau(0.5), &SubspaceConstraint::none(), &opts).is_err());
        let c = pseudo_random(4, 2, 12);
        assert!(laws_fit(&y, 2, tau(0.5), &SubspaceConstraint::none().with_contains(c), &opts).is_err());
        let b = pseudo_random(4, 2, 13);
        assert!(laws_fit(&y, 2, tau(0.5), &SubspaceConstraint::none().with_within(b), &opts).is_err());
    }

    #[test]
    fn affine_basis_fit_is_exact_on_model_data_and_optimal_over_centers() {
        let a = pseudo_random(15, 2, 16);
        let v = pseudo_random(6, 2, 17);
        let m = DVector::from_fn(6, |j, _| j as f64 - 2.0);
        let mut exact = &a * v.transpose();
        for mut row in exact.row_iter_mut() {
            row += m.transpose();
        }
        let y = DataMatrix::new(exact).unwrap();
        let f = fit_affine_basis(&y, &v, tau(0.9), 100).unwrap();
        assert!(f.converged);
        assert!(f.objective < 1e-18, "{}", f.objective);
        assert!((f.fitted(&v) - y.as_matrix()).amax() < 1e-9);

        let noisy = DataMatrix::new(pseudo_random(15, 6, 18)).unwrap();
        let g = fit_affine_basis(&noisy, &v, tau(0.8), 100).unwrap();
        assert!(g.converged);
        let direct = noisy.as_matrix().zip_fold(&g.fitted(&v), 0.0, |acc, a, b| acc + rho(a - b, tau(0.8)));
        assert!((direct - g.objective).abs() <= 1e-12 * direct);
        let means = linalg::column_means(noisy.as_matrix());
        let h = fit_fixed_basis(&noisy, Some(&means), &v, tau(0.8), 200).unwrap();
        assert!(g.objective <= h.objective * (1.0 + 1e-12));
        assert!(fit_affine_basis(&noisy, &pseudo_random(6, 6, 19), tau(0.8), 10).is_err());
    }

    #[test]
    fn fixed_basis_counts_updates() {
        let y = DataMatrix::new(pseudo_random(3, 50, 14)).unwrap();
        let v = pseudo_random(50, 1, 15);
        let fit = fit_fixed_basis(&y, None, &v, tau(0.9), 200).unwrap();
        assert!(fit.converged);
        assert!(fit.updates >= 1);
    }
}
