//! Finite-sample robust estimators on synthetic linear-regression data.
//!
//! This module solves the actual `n`-sample estimation problems whose
//! high-dimensional limits the scalar saddle solvers predict:
//!
//! * [`fit_w1`] -- order-1 transport robustness collapses to norm-regularized
//!   M-estimation `(1/n) sum L(y_i - <x_i, theta>) + eps * Lip(L) * ||theta||`,
//!   solved by proximal subgradient descent with iterate averaging.
//! * [`fit_w2_squared`] -- the squared-loss order-2 problem collapses to the
//!   square-root lasso `||r||/sqrt(n) + sqrt(eps) * ||theta||` (the reported
//!   objective is its square), solved by the same engine.
//! * [`fit_w2_smooth`] / [`fit_dre`] -- smooth-loss order-2 transport and
//!   distributional-regularization problems, solved through their
//!   convex-concave dual `g(theta, lambda) = lambda * eps +
//!   (1/n) sum sup_u [r_i u + u^2 s - L*(u)]` with `s = ||theta||^2 / (4
//!   lambda)`, by alternating a one-dimensional `lambda` line search with a
//!   projected envelope-gradient step in `theta`.
//!
//! The inner supremum has closed forms ([`inner_sup`]); it is strictly
//! concave only while `s < 1/(2M)` for an `M`-smooth loss, and the solvers
//! keep iterates inside that region (`lambda` floor plus the projection onto
//! `||theta|| <= R_theta * sqrt(d)`).

use crate::loss_models::LossModel;
use thiserror::Error;

/// Errors raised by the finite-sample fitters.
#[derive(Debug, Error)]
pub enum FitError {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {reason}")]
    InvalidArgument { reason: String },
    /// The inner supremum lost strict concavity: `s >= 1/(2M)`.
    #[error("inner supremum is not strictly concave: s = {s:.6e} >= {bound:.6e} = 1/(2M)")]
    ConcavityViolation { s: f64, bound: f64 },
    /// The tracked objective became non-finite.
    #[error("objective became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },
    /// The alternating solver increased its objective beyond tolerance.
    #[error("objective increased by {increase:.3e} at outer iteration {iteration}")]
    Oscillation { iteration: usize, increase: f64 },
    /// A line-search bracket could not be expanded to contain the minimizer.
    #[error("line-search bracket for {variable} exhausted (lo = {lo:.6e}, hi = {hi:.6e})")]
    BracketFailure {
        variable: &'static str,
        lo: f64,
        hi: f64,
    },
}

/// A synthetic linear-regression instance `y = A theta0 + z`.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Row-major `n x d` design matrix; row `i` is the covariate vector
    /// `x_i`.
    pub a: Vec<f64>,
    /// Responses, assembled exactly as `y = A theta0 + z`.
    pub y: Vec<f64>,
    /// Noise realization.
    pub z: Vec<f64>,
    /// Ground-truth signal.
    pub theta0: Vec<f64>,
    /// Signal dimension.
    pub d: usize,
    /// Sample count.
    pub n: usize,
}

impl Dataset {
    /// Assembles an instance from its parts, constructing `y = A theta0 + z`
    /// exactly (no fitting involved).
    pub fn from_parts(
        n: usize,
        d: usize,
        a: Vec<f64>,
        theta0: Vec<f64>,
        z: Vec<f64>,
    ) -> Result<Self, FitError> {
        if n == 0 || d == 0 {
            return Err(FitError::InvalidArgument {
                reason: format!("dataset dimensions must be positive, got n = {n}, d = {d}"),
            });
        }
        if a.len() != n * d || theta0.len() != d || z.len() != n {
            return Err(FitError::InvalidArgument {
                reason: format!(
                    "inconsistent dataset shapes: |A| = {} (want {}), |theta0| = {} (want {d}), \
                     |z| = {} (want {n})",
                    a.len(),
                    n * d,
                    theta0.len(),
                    z.len()
                ),
            });
        }
        let mut y = matvec(&a, &theta0, n, d);
        for (yi, zi) in y.iter_mut().zip(&z) {
            *yi += *zi;
        }
        Ok(Dataset {
            a,
            y,
            z,
            theta0,
            d,
            n,
        })
    }

    /// Residual vector `y - A theta`.
    pub fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        assert_eq!(theta.len(), self.d, "theta has the wrong dimension");
        let mut r = matvec(&self.a, theta, self.n, self.d);
        for (ri, yi) in r.iter_mut().zip(&self.y) {
            *ri = yi - *ri;
        }
        r
    }
}

/// Iteration budgets and stopping tolerances for the fitters.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Iteration cap for the proximal-subgradient solvers.
    pub max_iterations: usize,
    /// Minimum iterations before the plateau stop may fire.
    pub min_iterations: usize,
    /// Plateau window: stop once this many iterations pass without a
    /// meaningful best-objective improvement.
    pub plateau_window: usize,
    /// Relative improvement threshold that counts as progress.
    pub plateau_tol: f64,
    /// Outer-iteration cap for the alternating solvers.
    pub max_outer: usize,
    /// Relative objective-change stopping tolerance for the alternating
    /// solvers.
    pub outer_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 100_000,
            min_iterations: 200,
            plateau_window: 50,
            plateau_tol: 1e-9,
            max_outer: 4000,
            outer_tol: 1e-8,
        }
    }
}

/// Outcome of a finite-sample fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// The fitted coefficient vector.
    pub theta_hat: Vec<f64>,
    /// Final objective value (for [`fit_w2_squared`], the squared
    /// square-root-lasso value, i.e. the order-2 transport objective).
    pub objective: f64,
    /// Iterations consumed.
    pub iterations: usize,
    /// Whether a stopping rule fired before the iteration cap.
    pub converged: bool,
    /// `||theta_hat - theta0||^2 / d`.
    pub normalized_error: f64,
}

/// `||theta_hat - theta0||^2 / d`.
pub fn normalized_error(theta_hat: &[f64], theta0: &[f64], d: usize) -> f64 {
    assert_eq!(theta_hat.len(), d, "theta_hat has the wrong dimension");
    assert_eq!(theta0.len(), d, "theta0 has the wrong dimension");
    theta_hat
        .iter()
        .zip(theta0)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / d as f64
}

/// Closed-form inner supremum `sup_u { r u + u^2 s - L*(u) }` of the
/// convex-concave dual, returning `(value, u_star)`.
///
/// For an `M`-smooth loss the supremand is strictly concave only while
/// `s < 1/(2M)`; beyond that the supremum is unbounded and
/// [`FitError::ConcavityViolation`] is returned. The absolute loss has a
/// bounded conjugate domain (`[-1, 1]`), so every `s >= 0` is admissible
/// there.
pub fn inner_sup(r: f64, s: f64, loss: &LossModel) -> Result<(f64, f64), FitError> {
    if !(s >= 0.0) {
        return Err(FitError::InvalidArgument {
            reason: format!("inner_sup requires s >= 0, got s = {s}"),
        });
    }
    match *loss {
        // L*(u) = u^2/2 on [-delta, delta]: unconstrained stationary point
        // u = r/(1 - 2s), clipped to the conjugate domain.
        LossModel::Huber { delta } => {
            let bound = 0.5;
            if s >= bound {
                return Err(FitError::ConcavityViolation { s, bound });
            }
            let u = (r / (1.0 - 2.0 * s)).clamp(-delta, delta);
            Ok((r * u + u * u * (s - 0.5), u))
        }
        // L*(u) = u^2/4: stationary point u = 2r/(1 - 4s), always interior.
        LossModel::Squared => {
            let bound = 0.25;
            if s >= bound {
                return Err(FitError::ConcavityViolation { s, bound });
            }
            let u = 2.0 * r / (1.0 - 4.0 * s);
            Ok((r * r / (1.0 - 4.0 * s), u))
        }
        // L*(u) = 0 on [-1, 1]: the supremand r u + u^2 s is maximized at
        // the endpoint aligned with r, giving |r| + s.
        LossModel::Absolute => {
            let u = if r >= 0.0 { 1.0 } else { -1.0 };
            Ok((r.abs() + s, u))
        }
    }
}

/// Order-1 transport-robust fit: proximal subgradient descent on
/// `(1/n) sum L(y_i - <x_i, theta>) + eps * Lip(L) * ||theta||`.
///
/// `epsilon` is the transport radius after the caller applies the
/// `epsilon0 / sqrt(n)` scaling. The loss must have a finite Lipschitz
/// constant unless `epsilon = 0` (then the penalty vanishes and any loss is
/// admissible).
pub fn fit_w1(
    data: &Dataset,
    loss: &LossModel,
    epsilon: f64,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(FitError::InvalidArgument {
            reason: format!("fit_w1 requires a finite epsilon >= 0, got {epsilon}"),
        });
    }
    let lam = match loss.constants().lipschitz {
        Some(lip) => epsilon * lip,
        None => {
            if epsilon > 0.0 {
                return Err(FitError::InvalidArgument {
                    reason: "the squared loss has no finite Lipschitz constant; the order-1 \
                             transport penalty requires epsilon = 0 for it"
                        .to_string(),
                });
            }
            0.0
        }
    };
    let loss = *loss;
    let n_f = data.n as f64;
    prox_subgradient(
        data,
        opts,
        lam,
        |r, w| {
            for (wi, &ri) in w.iter_mut().zip(r) {
                *wi = loss.derivative(ri) / n_f;
            }
        },
        |r, theta| r.iter().map(|&ri| loss.eval_loss(ri)).sum::<f64>() / n_f + lam * norm(theta),
    )
}

/// Squared-loss order-2 transport fit: proximal subgradient descent on the
/// square-root lasso `||y - A theta|| / sqrt(n) + sqrt(eps) * ||theta||`.
///
/// `epsilon` is the transport radius after the caller applies the
/// `epsilon0 / n` scaling. The reported `objective` is the squared optimal
/// value, matching the order-2 transport objective.
pub fn fit_w2_squared(data: &Dataset, epsilon: f64, opts: &FitOptions) -> Result<FitResult, FitError> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(FitError::InvalidArgument {
            reason: format!("fit_w2_squared requires a finite epsilon >= 0, got {epsilon}"),
        });
    }
    // At radius zero the square-root-lasso objective is plain least
    // squares. Solve it with the smooth least-squares weight: the norm
    // weight below is nonsmooth at r = 0 and would stall at subgradient
    // accuracy instead of interpolating exactly in the noiseless case.
    // The reported objectives agree (both are |r|^2 / n at lam = 0).
    if epsilon == 0.0 {
        return fit_w1(data, &LossModel::Squared, 0.0, opts);
    }
    let lam = epsilon.sqrt();
    let n_f = data.n as f64;
    let sqrt_n = n_f.sqrt();
    let mut result = prox_subgradient(
        data,
        opts,
        lam,
        |r, w| {
            let scale = 1.0 / (sqrt_n * norm(r).max(1e-300));
            for (wi, &ri) in w.iter_mut().zip(r) {
                *wi = ri * scale;
            }
        },
        |r, theta| norm(r) / sqrt_n + lam * norm(theta),
    )?;
    result.objective = result.objective * result.objective;
    Ok(result)
}

/// Smooth-loss order-2 transport fit via the convex-concave dual,
/// alternating a golden-section `lambda` step with projected
/// envelope-gradient descent in `theta` over `||theta|| <= r_theta *
/// sqrt(d)`.
///
/// `epsilon` is the transport radius after the caller applies the
/// `epsilon0 / n` scaling and must be positive (the optimal `lambda` runs
/// away to infinity at `epsilon = 0`; use [`fit_w1`] with `epsilon = 0` for
/// the unregularized problem).
pub fn fit_w2_smooth(
    data: &Dataset,
    loss: &LossModel,
    epsilon: f64,
    r_theta: f64,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(FitError::InvalidArgument {
            reason: format!("fit_w2_smooth requires a finite epsilon > 0, got {epsilon}"),
        });
    }
    fit_alternating(data, loss, epsilon, None, r_theta, opts)
}

/// Distributionally regularized fit: identical machinery to
/// [`fit_w2_smooth`] with `lambda` held fixed (no `lambda` step) and no
/// `lambda * eps` term in the objective.
///
/// `lambda` is the regularization strength after the caller applies the
/// `d * lambda0` scaling.
pub fn fit_dre(
    data: &Dataset,
    loss: &LossModel,
    lambda: f64,
    r_theta: f64,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(FitError::InvalidArgument {
            reason: format!("fit_dre requires a finite lambda > 0, got {lambda}"),
        });
    }
    fit_alternating(data, loss, 0.0, Some(lambda), r_theta, opts)
}

// ---------------------------------------------------------------------------
// Linear algebra helpers (row-major dense matrices).
// ---------------------------------------------------------------------------

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `A x` for row-major `A` of shape `n x d`.
pub(crate) fn matvec(a: &[f64], x: &[f64], n: usize, d: usize) -> Vec<f64> {
    (0..n).map(|i| dot(&a[i * d..(i + 1) * d], x)).collect()
}

/// `A^T r` for row-major `A` of shape `n x d`.
pub(crate) fn matvec_t(a: &[f64], r: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..n {
        let row = &a[i * d..(i + 1) * d];
        let ri = r[i];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += ri * v;
        }
    }
    out
}

/// Largest singular value of `A`, estimated by 20 power iterations on
/// `A^T A` from a deterministic start vector.
pub(crate) fn spectral_norm(a: &[f64], n: usize, d: usize) -> f64 {
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lam = 0.0;
    for _ in 0..20 {
        let av = matvec(a, &v, n, d);
        let atav = matvec_t(a, &av, n, d);
        lam = norm(&atav);
        if lam <= 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&atav) {
            *vi = wi / lam;
        }
    }
    lam.sqrt()
}

/// Ridge-regularized least squares `(A^T A + mu I) theta = A^T y`, solved by
/// conjugate gradients on the normal equations. Used as a warm start.
fn ridge_normal_cg(a: &[f64], y: &[f64], n: usize, d: usize, mu: f64) -> Vec<f64> {
    let b = matvec_t(a, y, n, d);
    let mut x = vec![0.0; d];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let b_norm = rs.sqrt().max(1e-300);
    let max_iter = (4 * d).max(32);
    for _ in 0..max_iter {
        if rs.sqrt() <= 1e-13 * b_norm {
            break;
        }
        let ap_data = matvec(a, &p, n, d);
        let mut ap = matvec_t(a, &ap_data, n, d);
        for (api, pi) in ap.iter_mut().zip(&p) {
            *api += mu * pi;
        }
        let denom = dot(&p, &ap);
        if denom <= 0.0 {
            break;
        }
        let alpha = rs / denom;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += alpha * pi;
        }
        for (ri, api) in r.iter_mut().zip(&ap) {
            *ri -= alpha * api;
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        rs = rs_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    x
}

// ---------------------------------------------------------------------------
// Proximal subgradient engine (order-1 and squared order-2 problems).
// ---------------------------------------------------------------------------

/// Minimizes `data_term(theta) + lam * ||theta||` by subgradient steps on
/// the data term and exact proximal (block soft-threshold) steps on the norm
/// term, with step rule `c / sqrt(k)`, doubling-window suffix averaging of
/// the iterates, and best-objective tracking.
///
/// `weight` fills the per-sample vector `w` from the residuals so that the
/// data-term subgradient is `-A^T w`; `objective` evaluates the full
/// objective at an averaged iterate given its residuals.
fn prox_subgradient<W, O>(
    data: &Dataset,
    opts: &FitOptions,
    lam: f64,
    mut weight: W,
    mut objective: O,
) -> Result<FitResult, FitError>
where
    W: FnMut(&[f64], &mut [f64]),
    O: FnMut(&[f64], &[f64]) -> f64,
{
    let (n, d) = (data.n, data.d);
    let na = spectral_norm(&data.a, n, d);
    if na <= 0.0 {
        return Err(FitError::InvalidArgument {
            reason: "the design matrix is identically zero".to_string(),
        });
    }
    let c = n as f64 / (na * na);

    let mut theta = ridge_normal_cg(&data.a, &data.y, n, d, 1e-10);
    let mut w = vec![0.0; n];
    let mut sum_theta = vec![0.0; d];
    let mut cnt = 0usize;
    let mut next_restart = 64usize;
    let mut best_obj = f64::INFINITY;
    let mut best_theta = theta.clone();
    let mut last_improve = 0usize;
    let mut used = opts.max_iterations;
    let mut converged = false;

    for k in 1..=opts.max_iterations {
        let r = data.residuals(&theta);
        weight(&r, &mut w);
        let g = matvec_t(&data.a, &w, n, d);
        let step = c / (k as f64).sqrt();
        // The data-term subgradient is -g, so the descent step adds step*g.
        for (ti, gi) in theta.iter_mut().zip(&g) {
            *ti += step * gi;
        }
        let nt = norm(&theta);
        if nt > 0.0 && lam > 0.0 {
            let shrink = (1.0 - step * lam / nt).max(0.0);
            for ti in theta.iter_mut() {
                *ti *= shrink;
            }
        }

        if k == next_restart {
            sum_theta.iter_mut().for_each(|v| *v = 0.0);
            cnt = 0;
            next_restart *= 2;
        }
        for (si, ti) in sum_theta.iter_mut().zip(&theta) {
            *si += *ti;
        }
        cnt += 1;
        let theta_bar: Vec<f64> = sum_theta.iter().map(|s| s / cnt as f64).collect();
        let r_bar = data.residuals(&theta_bar);
        let o = objective(&r_bar, &theta_bar);
        if !o.is_finite() {
            return Err(FitError::Diverged { iteration: k });
        }
        if o < best_obj - opts.plateau_tol * best_obj.abs().max(1e-12) {
            best_obj = o;
            best_theta = theta_bar;
            last_improve = k;
        } else if o < best_obj {
            best_obj = o;
            best_theta = theta_bar;
        }
        if k - last_improve >= opts.plateau_window && k > opts.min_iterations {
            used = k;
            converged = true;
            break;
        }
    }

    let err = normalized_error(&best_theta, &data.theta0, d);
    Ok(FitResult {
        theta_hat: best_theta,
        objective: best_obj,
        iterations: used,
        converged,
        normalized_error: err,
    })
}

// ---------------------------------------------------------------------------
// Alternating dual engine (smooth order-2 and regularized problems).
// ---------------------------------------------------------------------------

/// Golden-section minimization of a unimodal function on `[lo, hi]`,
/// shrinking the bracket to relative width `tol` and returning the midpoint
/// with its value.
fn golden_min<F>(f: &mut F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64), FitError>
where
    F: FnMut(f64) -> Result<f64, FitError>,
{
    let gr = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c1 = b - gr * (b - a);
    let mut c2 = a + gr * (b - a);
    let mut f1 = f(c1)?;
    let mut f2 = f(c2)?;
    for _ in 0..200 {
        if b - a < tol * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if f1 <= f2 {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - gr * (b - a);
            f1 = f(c1)?;
        } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + gr * (b - a);
            f2 = f(c2)?;
        }
    }
    let x = (a + b) / 2.0;
    let fx = f(x)?;
    Ok((x, fx))
}

/// Coarse 24-point prescan on `[lo, hi]` with geometric upper-bracket
/// expansion while the minimizer sits in the top two cells, then
/// golden-section refinement in the winning cell.
fn line_min<F>(f: &mut F, lo: f64, mut hi: f64, variable: &'static str) -> Result<(f64, f64), FitError>
where
    F: FnMut(f64) -> Result<f64, FitError>,
{
    const N: usize = 24;
    let mut xs = [0.0_f64; N];
    let mut best_i;
    loop {
        let step = (hi - lo) / (N as f64 - 1.0);
        for (j, x) in xs.iter_mut().enumerate() {
            *x = lo + step * j as f64;
        }
        best_i = 0;
        let mut best_v = f(xs[0])?;
        for (j, &x) in xs.iter().enumerate().skip(1) {
            let v = f(x)?;
            if v < best_v {
                best_v = v;
                best_i = j;
            }
        }
        if best_i < N - 2 {
            break;
        }
        hi *= 4.0;
        if !hi.is_finite() {
            return Err(FitError::BracketFailure { variable, lo, hi });
        }
    }
    let a = xs[best_i.saturating_sub(1)];
    let b = xs[(best_i + 1).min(N - 1)];
    golden_min(f, a, b, 1e-9)
}

/// Shared alternating engine behind [`fit_w2_smooth`] (`lambda_fixed =
/// None`, `epsilon > 0`) and [`fit_dre`] (`lambda_fixed = Some(lambda)`,
/// `epsilon = 0`).
fn fit_alternating(
    data: &Dataset,
    loss: &LossModel,
    epsilon: f64,
    lambda_fixed: Option<f64>,
    r_theta: f64,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    if !(r_theta > 0.0) || !r_theta.is_finite() {
        return Err(FitError::InvalidArgument {
            reason: format!("the radius r_theta must be a finite positive real, got {r_theta}"),
        });
    }
    let m = loss.constants().smoothness_m.ok_or_else(|| FitError::InvalidArgument {
        reason: "the alternating dual solver requires a smooth loss (squared or Huber); \
                 use fit_w1 for the absolute loss"
            .to_string(),
    })?;
    let (n, d) = (data.n, data.d);
    let n_f = n as f64;
    let sqrt_d = (d as f64).sqrt();
    let rad = r_theta * sqrt_d;
    let loss = *loss;

    let mut theta = ridge_normal_cg(&data.a, &data.y, n, d, 1e-10);
    let nt0 = norm(&theta);
    if nt0 > rad {
        let scale = rad / nt0;
        for ti in theta.iter_mut() {
            *ti *= scale;
        }
    }
    let mut lam = match lambda_fixed {
        Some(l) => l,
        None => m * r_theta * sqrt_d * norm(&theta).max(1e-8),
    };

    // Dual objective g(theta, lambda); +inf signals an infeasible
    // (non-concave) trial point rejected by the line search.
    let eval_obj = |theta: &[f64], lam: f64| -> f64 {
        let s = dot(theta, theta) / (4.0 * lam);
        let r = data.residuals(theta);
        let mut acc = 0.0;
        for &ri in &r {
            match inner_sup(ri, s, &loss) {
                Ok((v, _)) => acc += v,
                Err(_) => return f64::INFINITY,
            }
        }
        let transport = if lambda_fixed.is_none() { lam * epsilon } else { 0.0 };
        transport + acc / n_f
    };

    let mut f = eval_obj(&theta, lam);
    if !f.is_finite() {
        // Only reachable with a fixed lambda too small for the ball radius;
        // the adaptive lambda floor keeps the W2 branch strictly feasible.
        let s = dot(&theta, &theta) / (4.0 * lam);
        return Err(FitError::ConcavityViolation {
            s,
            bound: 1.0 / (2.0 * m),
        });
    }

    // Coefficient of the lambda feasibility floor, lambda >= floor_coef *
    // ||theta||, active only for the transport branch.
    let floor_coef = if lambda_fixed.is_none() {
        m * r_theta * sqrt_d / 2.0 * (1.0 + 1e-9)
    } else {
        0.0
    };

    let mut t_step = 1.0_f64;
    let mut iterations = opts.max_outer;
    let mut converged = false;

    for it in 0..opts.max_outer {
        // lambda step: 1-D convex line search over the feasible bracket.
        if lambda_fixed.is_none() {
            let nt = norm(&theta);
            if nt > 1e-12 {
                let r = data.residuals(&theta);
                let lp_ms = r
                    .iter()
                    .map(|&ri| {
                        let lp = loss.derivative(ri);
                        lp * lp
                    })
                    .sum::<f64>()
                    / n_f;
                let lo = floor_coef * nt;
                let hi = ((m * r_theta * sqrt_d / 2.0 + lp_ms.sqrt()) * nt).max(lo * (1.0 + 1e-6));
                let mut phi = |l: f64| -> Result<f64, FitError> {
                    let s = nt * nt / (4.0 * l);
                    let mut acc = 0.0;
                    for &ri in &r {
                        acc += inner_sup(ri, s, &loss)?.0;
                    }
                    Ok(l * epsilon + acc / n_f)
                };
                let (l_star, _) = line_min(&mut phi, lo, hi, "lambda")?;
                lam = l_star.max(lo);
            }
        }

        // theta step: projected gradient with Armijo backtracking on the
        // envelope-theorem gradient. Trial points are evaluated at the
        // floor-projected lambda, and when the floor is active its
        // chain-rule term joins the gradient; otherwise a step that grows
        // ||theta|| books a gain that evaporates as soon as lambda is made
        // feasible again, and the alternation stalls short of the optimum.
        let r = data.residuals(&theta);
        let s = dot(&theta, &theta) / (4.0 * lam);
        let mut u = vec![0.0; n];
        for (ui, &ri) in u.iter_mut().zip(&r) {
            *ui = inner_sup(ri, s, &loss)?.1;
        }
        let atu = matvec_t(&data.a, &u, n, d);
        let u_ms = dot(&u, &u) / n_f;
        let nt = norm(&theta);
        // When the lambda step lands on its feasibility floor (signalled by
        // a positive boundary derivative d(g)/d(lambda) = dphi), descending
        // further requires a joint move along the floor manifold lambda =
        // floor_coef * ||theta||: trial points track the floor in both
        // directions and the gradient gains the chain-rule term
        // dphi * floor_coef * theta/||theta||. On that manifold this is the
        // exact two-sided gradient of the lambda-marginal objective; with
        // lambda merely clamped from below, radial shrink trials get no
        // lambda relief and the alternation stalls short of the optimum. At
        // an interior lambda optimum dphi vanishes and the plain fixed-
        // lambda step is recovered.
        let dphi = if lambda_fixed.is_none() && nt > 1e-12 {
            (epsilon - u_ms * nt * nt / (4.0 * lam * lam)).max(0.0)
        } else {
            0.0
        };
        // The threshold must sit well above the golden-section noise floor
        // of the stationarity residual (observed around 1e-5 * epsilon)
        // and well below a genuinely pinned lambda (dphi of order epsilon).
        let floor_tracking = dphi > 1e-3 * epsilon && epsilon > 0.0;
        let chain = if floor_tracking { dphi * floor_coef / nt } else { 0.0 };
        let g: Vec<f64> = theta
            .iter()
            .zip(&atu)
            .map(|(&ti, &ai)| -ai / n_f + (u_ms / (2.0 * lam) + chain) * ti)
            .collect();
        let gg = dot(&g, &g);
        let trial_obj = |theta: &[f64]| -> f64 {
            let lam_t = if floor_tracking {
                (floor_coef * norm(theta)).max(f64::MIN_POSITIVE)
            } else {
                lam.max(floor_coef * norm(theta))
            };
            eval_obj(theta, lam_t)
        };
        let f_cur = trial_obj(&theta);

        let mut t = t_step * 2.0;
        let mut thn: Vec<f64>;
        let mut fn_val: f64;
        loop {
            thn = theta.iter().zip(&g).map(|(&ti, &gi)| ti - t * gi).collect();
            let nn = norm(&thn);
            if nn > rad {
                let scale = rad / nn;
                for ti in thn.iter_mut() {
                    *ti *= scale;
                }
            }
            fn_val = trial_obj(&thn);
            if fn_val <= f_cur - 1e-4 * t * gg {
                break;
            }
            t *= 0.5;
            if t <= 1e-18 {
                break;
            }
        }
        t_step = t;
        theta = thn;


        if !fn_val.is_finite() {
            return Err(FitError::Diverged { iteration: it + 1 });
        }
        // Oscillation guard on the descent step at fixed lambda. The
        // across-iteration value may tick up legitimately when a growing
        // ||theta|| raises the lambda feasibility floor above the previous
        // lambda, so the monotonicity that certifies the solver is that of
        // the Armijo step itself.
        let increase = fn_val - f_cur;
        if increase > 1e-12 * f_cur.abs().max(1.0) {
            return Err(FitError::Oscillation {
                iteration: it + 1,
                increase,
            });
        }
        let done = (f - fn_val).abs() < opts.outer_tol * f.abs().max(1.0);
        f = fn_val;
        if done {
            iterations = it + 1;
            converged = true;
            break;
        }
    }

    let err = normalized_error(&theta, &data.theta0, d);
    Ok(FitResult {
        theta_hat: theta,
        objective: f,
        iterations,
        converged,
        normalized_error: err,
    })
}
