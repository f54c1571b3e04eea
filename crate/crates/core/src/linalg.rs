//! Dense linear algebra, stability analysis and exact-cost oracles for
//! discounted LQR.
//!
//! The closed-loop cost of a gain `K` under `x_{t+1} = A x_t + B u_t + z_t`,
//! `u_t = -K x_t`, `x_0 = 0` and unit-covariance noise is
//!
//! ```text
//! C(K) = γ/(1-γ) · tr((Q + KᵀRK) X),   X = I + γ (A-BK) X (A-BK)ᵀ
//! ```
//!
//! since `E[x_t x_tᵀ] = Σ_{k<t} M^k M^kᵀ` with `M = A - BK`. `X` is obtained by
//! the doubling iteration on `√γ M`.

use nalgebra::{DMatrix, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Strict margin used by [`is_stabilizing`].
pub const STABILITY_MARGIN: f64 = 1e-10;
/// Relative singular-value threshold for the controllability rank test.
pub const CONTROLLABILITY_RTOL: f64 = 1e-8;
/// Absolute tolerance on `Q - Qᵀ` and `R - Rᵀ`.
pub const SYMMETRY_TOL: f64 = 1e-12;

const LYAPUNOV_RTOL: f64 = 1e-12;
const LYAPUNOV_MAX_DOUBLINGS: usize = 128;
const DARE_RTOL: f64 = 1e-12;
const DARE_MAX_ITERATIONS: usize = 2_000_000;
const SCHUR_MAX_ITERATIONS: usize = 10_000;

/// Default central-difference step for gradients of [`exact_cost`].
pub const FD_STEP: f64 = 1e-6;

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Dimension("matrix has no rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::Dimension("matrix has no columns".into()));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn symmetrize(m: &mut Mat) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// One cluster's LQR instance `(A, B, Q, R, γ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemRepr", into = "SystemRepr")]
pub struct SystemTuple {
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct SystemRepr {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    gamma: f64,
}

impl TryFrom<SystemRepr> for SystemTuple {
    type Error = Error;

    fn try_from(s: SystemRepr) -> Result<Self> {
        SystemTuple::new(
            matrix_from_rows(&s.a)?,
            matrix_from_rows(&s.b)?,
            matrix_from_rows(&s.q)?,
            matrix_from_rows(&s.r)?,
            s.gamma,
        )
    }
}

impl From<SystemTuple> for SystemRepr {
    fn from(s: SystemTuple) -> Self {
        SystemRepr {
            a: matrix_to_rows(&s.a),
            b: matrix_to_rows(&s.b),
            q: matrix_to_rows(&s.q),
            r: matrix_to_rows(&s.r),
            gamma: s.gamma,
        }
    }
}

fn check_spd(name: &str, m: &Mat) -> Result<()> {
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::Invalid(format!(
            "{name} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if min_eig <= 0.0 {
        return Err(Error::Invalid(format!(
            "{name} is not positive definite (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

/// Numerical rank of `[B, AB, …, A^{n-1}B]`.
pub fn controllability_rank(a: &Mat, b: &Mat) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = Mat::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        ctrb.columns_mut(k * m, m).copy_from(&block);
        block = a * block;
    }
    let sv = ctrb.svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter()
        .filter(|&&s| s > CONTROLLABILITY_RTOL * smax)
        .count()
}

impl SystemTuple {
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat, gamma: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "B must have {n} rows, got {}",
                b.nrows()
            )));
        }
        let m = b.ncols();
        if q.shape() != (n, n) {
            return Err(Error::Dimension(format!("Q must be {n}x{n}")));
        }
        if r.shape() != (m, m) {
            return Err(Error::Dimension(format!("R must be {m}x{m}")));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("Q", &q), ("R", &r)] {
            if !all_finite(mat) {
                return Err(Error::Invalid(format!("{name} has non-finite entries")));
            }
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Invalid(format!(
                "discount factor must lie in (0, 1), got {gamma}"
            )));
        }
        check_spd("Q", &q)?;
        check_spd("R", &r)?;
        let rank = controllability_rank(&a, &b);
        if rank < n {
            return Err(Error::Invalid(format!(
                "(A, B) is not controllable (rank {rank} < {n})"
            )));
        }
        Ok(SystemTuple { a, b, q, r, gamma })
    }

    /// Scalar system `x' = a x + b u + z` with stage cost `q x² + r u²`.
    pub fn scalar(a: f64, b: f64, q: f64, r: f64, gamma: f64) -> Result<Self> {
        SystemTuple::new(
            Mat::from_element(1, 1, a),
            Mat::from_element(1, 1, b),
            Mat::from_element(1, 1, q),
            Mat::from_element(1, 1, r),
            gamma,
        )
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn q(&self) -> &Mat {
        &self.q
    }
    pub fn r(&self) -> &Mat {
        &self.r
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Number of policy parameters `D = m·n`.
    pub fn policy_dim(&self) -> usize {
        self.state_dim() * self.input_dim()
    }

    /// Copy with `Q` and `R` multiplied by `q_scale` and `r_scale`.
    pub fn with_cost_scaled(&self, q_scale: f64, r_scale: f64) -> Result<Self> {
        SystemTuple::new(
            self.a.clone(),
            self.b.clone(),
            &self.q * q_scale,
            &self.r * r_scale,
            self.gamma,
        )
    }

    pub fn with_dynamics(&self, a: Mat) -> Result<Self> {
        SystemTuple::new(a, self.b.clone(), self.q.clone(), self.r.clone(), self.gamma)
    }

    fn check_policy_shape(&self, k: &Mat) -> Result<()> {
        let want = (self.input_dim(), self.state_dim());
        if k.shape() != want {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, system expects {}x{}",
                k.nrows(),
                k.ncols(),
                want.0,
                want.1
            )));
        }
        Ok(())
    }

    /// `A - B K`.
    pub fn closed_loop(&self, k: &Mat) -> Result<Mat> {
        self.check_policy_shape(k)?;
        Ok(&self.a - &self.b * k)
    }

    /// `Q + Kᵀ R K`, the per-step cost weight on the state under `u = -Kx`.
    pub fn stage_weight(&self, k: &Mat) -> Result<Mat> {
        self.check_policy_shape(k)?;
        let mut p = &self.q + k.transpose() * &self.r * k;
        symmetrize(&mut p);
        Ok(p)
    }
}

/// Linear state-feedback gain `K` (`u = -K x`), an `m × n` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Policy(Mat);

impl TryFrom<Vec<Vec<f64>>> for Policy {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Policy::new(matrix_from_rows(&rows)?)
    }
}

impl From<Policy> for Vec<Vec<f64>> {
    fn from(p: Policy) -> Self {
        matrix_to_rows(&p.0)
    }
}

impl Policy {
    pub fn new(gain: Mat) -> Result<Self> {
        if gain.is_empty() {
            return Err(Error::Dimension("empty gain matrix".into()));
        }
        if !all_finite(&gain) {
            return Err(Error::Invalid("gain has non-finite entries".into()));
        }
        Ok(Policy(gain))
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Policy(Mat::zeros(m, n))
    }

    pub fn scalar(k: f64) -> Self {
        Policy(Mat::from_element(1, 1, k))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Policy::new(matrix_from_rows(rows)?)
    }

    pub fn gain(&self) -> &Mat {
        &self.0
    }

    pub fn into_gain(self) -> Mat {
        self.0
    }

    /// `(m, n)`.
    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Largest eigenvalue modulus, from the real Schur form.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.is_empty() {
        return Err(Error::Dimension("empty matrix".into()));
    }
    if !all_finite(m) {
        return Err(Error::Invalid("matrix has non-finite entries".into()));
    }
    if m.nrows() == 1 {
        return Ok(m[(0, 0)].abs());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITERATIONS).ok_or(
        Error::Convergence {
            what: "Schur decomposition",
            iterations: SCHUR_MAX_ITERATIONS,
        },
    )?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// `ρ(A - BK) < 1 - STABILITY_MARGIN`.
pub fn is_stabilizing(k: &Policy, sys: &SystemTuple) -> Result<bool> {
    Ok(closed_loop_radius(sys, k.gain())? < 1.0 - STABILITY_MARGIN)
}

pub fn closed_loop_radius(sys: &SystemTuple, k: &Mat) -> Result<f64> {
    spectral_radius(&sys.closed_loop(k)?)
}

/// Solves `X = I + γ M X Mᵀ` by doubling. Requires `ρ(√γ M) < 1`.
pub fn discounted_lyapunov(m: &Mat, gamma: f64) -> Result<Mat> {
    let n = m.nrows();
    let mut f = m * gamma.sqrt();
    let mut x = Mat::identity(n, n);
    for _ in 0..LYAPUNOV_MAX_DOUBLINGS {
        let inc = &f * &x * f.transpose();
        let inc_norm = inc.norm();
        x += inc;
        if !all_finite(&x) {
            break;
        }
        if inc_norm <= LYAPUNOV_RTOL * x.norm() {
            symmetrize(&mut x);
            return Ok(x);
        }
        f = &f * &f;
    }
    Err(Error::Convergence {
        what: "discounted Lyapunov iteration",
        iterations: LYAPUNOV_MAX_DOUBLINGS,
    })
}

fn require_stabilizing(sys: &SystemTuple, k: &Mat) -> Result<Mat> {
    let m = sys.closed_loop(k)?;
    let radius = spectral_radius(&m)?;
    if radius >= 1.0 - STABILITY_MARGIN {
        return Err(Error::NotStabilizing { radius });
    }
    Ok(m)
}

/// Closed-form discounted cost `C(K)` from `x_0 = 0` with identity noise
/// covariance.
pub fn exact_cost(sys: &SystemTuple, k: &Policy) -> Result<f64> {
    exact_cost_of(sys, k.gain())
}

/// [`exact_cost`] on a raw gain matrix (used for perturbed gains).
pub fn exact_cost_of(sys: &SystemTuple, k: &Mat) -> Result<f64> {
    let m = require_stabilizing(sys, k)?;
    let x = discounted_lyapunov(&m, sys.gamma)?;
    let p = sys.stage_weight(k)?;
    let g = sys.gamma;
    Ok(g / (1.0 - g) * (p * x).trace())
}

/// Upper bound on every expected stage cost `E[x_tᵀ(Q + KᵀRK)x_t]`, the
/// stationary value `tr((Q + KᵀRK) Σ∞)` with `Σ∞ = I + M Σ∞ Mᵀ`.
pub fn stage_cost_bound(sys: &SystemTuple, k: &Policy) -> Result<f64> {
    let m = require_stabilizing(sys, k.gain())?;
    let sigma = discounted_lyapunov(&m, 1.0)?;
    Ok((sys.stage_weight(k.gain())? * sigma).trace())
}

/// Central finite-difference gradient of `f` at `k`.
pub fn fd_gradient<F>(f: F, k: &Mat, step: f64) -> Result<Mat>
where
    F: Fn(&Mat) -> Result<f64>,
{
    let mut grad = Mat::zeros(k.nrows(), k.ncols());
    let mut probe = k.clone();
    for idx in 0..k.len() {
        let orig = probe[idx];
        probe[idx] = orig + step;
        let up = f(&probe)?;
        probe[idx] = orig - step;
        let down = f(&probe)?;
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// Finite-difference gradient of [`exact_cost`] with step [`FD_STEP`].
pub fn cost_gradient(sys: &SystemTuple, k: &Mat) -> Result<Mat> {
    fd_gradient(|kk| exact_cost_of(sys, kk), k, FD_STEP)
}

/// Optimal discounted gain, its cost, and the Riccati value matrix of the
/// `√γ`-rescaled system.
#[derive(Debug, Clone)]
pub struct DareSolution {
    pub gain: Policy,
    pub cost: f64,
    pub value: Mat,
    pub iterations: usize,
}

/// Riccati value iteration on `(√γ A, √γ B)`.
pub fn solve_dare(sys: &SystemTuple) -> Result<DareSolution> {
    let sg = sys.gamma.sqrt();
    let a = &sys.a * sg;
    let b = &sys.b * sg;
    let gain_for = |p: &Mat| -> Result<Mat> {
        let bt_p = b.transpose() * p;
        let s = &sys.r + &bt_p * &b;
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Invalid("R + BᵀPB lost positive definiteness".into()))?;
        Ok(chol.solve(&(bt_p * &a)))
    };

    let mut p = sys.q.clone();
    for it in 1..=DARE_MAX_ITERATIONS {
        let k = gain_for(&p)?;
        let closed = &a - &b * &k;
        let mut next = &sys.q + k.transpose() * &sys.r * &k + closed.transpose() * &p * &closed;
        symmetrize(&mut next);
        if !all_finite(&next) {
            break;
        }
        let diff = (&next - &p).norm();
        p = next;
        if diff <= DARE_RTOL * p.norm() {
            let gain = Policy::new(gain_for(&p)?)?;
            let cost = exact_cost(sys, &gain)?;
            return Ok(DareSolution {
                gain,
                cost,
                value: p,
                iterations: it,
            });
        }
    }
    Err(Error::Convergence {
        what: "Riccati value iteration",
        iterations: DARE_MAX_ITERATIONS,
    })
}

/// Smallest pairwise distance in a list of optimal costs.
pub fn min_pairwise_gap(costs: &[f64]) -> Result<f64> {
    if costs.len() < 2 {
        return Err(Error::Invalid(
            "separation gap needs at least two clusters".into(),
        ));
    }
    let mut gap = f64::INFINITY;
    for (i, ci) in costs.iter().enumerate() {
        for cj in &costs[i + 1..] {
            gap = gap.min((ci - cj).abs());
        }
    }
    Ok(gap)
}

/// Cluster separation `Δ = min_{j≠k} |C_j(K*_j) - C_k(K*_k)|`.
pub fn separation_gap(systems: &[SystemTuple]) -> Result<f64> {
    if systems.len() < 2 {
        return Err(Error::Invalid(
            "separation gap needs at least two clusters".into(),
        ));
    }
    let costs = systems
        .iter()
        .map(|s| solve_dare(s).map(|d| d.cost))
        .collect::<Result<Vec<_>>>()?;
    min_pairwise_gap(&costs)
}
