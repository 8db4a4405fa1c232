//! Scalar building blocks of the asymptotic error predictions.
//!
//! The high-dimensional estimation error of every supported estimator is
//! characterized by a low-dimensional minimax problem whose objective is
//! assembled from four deterministic scalar functions:
//!
//! * `L(c, tau)` -- the expected Moreau envelope of the loss at a shifted
//!   Gaussian, `E[e_L(c G + Z, tau)]` ([`expected_shifted_envelope_l`]);
//! * `F(c, tau)` -- the same expectation for the convex component `f` of an
//!   M-smooth loss ([`expected_envelope_f`]);
//! * `E(c, tau)` -- the closed two-branch form the `L`-expectation takes for
//!   the squared loss ([`e_function`]);
//! * `G(c, tau)` -- the two-branch function carrying the robustness radius
//!   ([`g_function`]).
//!
//! [`ProblemSpec`] describes one estimation problem (estimator family, loss,
//! noise, aspect ratio and signal scales); [`Evaluator`] binds a spec to a
//! quadrature configuration and exposes the five minimax objectives with
//! memoized envelope expectations. Free functions mirroring each objective
//! are provided for one-off evaluation.
//!
//! Expectations against Gaussian or point-mass noise are computed in closed
//! form from truncated second-moment identities: the envelope integrands
//! have kinks, which cost tensor quadrature several digits and would poison
//! the tight tolerances downstream. Numerical integration (tensor rules or
//! seeded Monte Carlo, per [`QuadratureConfig`]) is used for Laplace noise
//! and for the sampling mode.

use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss_models::{FComponent, LossError, LossModel};
use crate::noise_models::{
    expectation_nodes, IntegrationMode, NoiseError, NoiseModel, QuadratureConfig,
};
use crate::search::{self, Exhaust, Scale, SearchFailure, SearchParams, Span};

/// Threshold under which a nonnegative optimization variable is treated as
/// exactly zero and the objective is evaluated by its limit convention.
pub const EDGE_EPS: f64 = 1e-12;

/// Lower endpoint of every bracket over a positive scale variable.
pub(crate) const TAU_FLOOR: f64 = 1e-9;

/// Quantization step for envelope memoization keys.
const KEY_QUANTUM: f64 = 1e-12;

/// Below this envelope parameter the closed forms switch to their
/// `tau -> 0` limits (the generic expressions would divide by `2 tau`).
const TINY_TAU: f64 = 1e-14;

/// `sqrt(2/pi)`, the mean of |N(0,1)|.
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Errors raised while validating a problem spec or evaluating an objective.
#[derive(Debug, Error)]
pub enum ScalarizationError {
    /// A loss-model operation failed.
    #[error("loss model: {0}")]
    Loss(#[from] LossError),
    /// A noise-model or quadrature operation failed.
    #[error("noise model: {0}")]
    Noise(#[from] NoiseError),
    /// The squared loss has no proper convex component; its estimators are
    /// handled by the dedicated squared-loss objectives.
    #[error(
        "the squared loss has a degenerate convex component; use the squared-loss specialization"
    )]
    UseSquaredSpecialization,
    /// An inner minimization kept escaping through its expanded bracket.
    #[error("inner minimization bracket [{lo:.3e}, {hi:.3e}] expanded past its cap")]
    BracketError { lo: f64, hi: f64 },
    /// An objective evaluated to NaN.
    #[error("objective evaluated to a non-finite value at {at:.6e}")]
    NonFiniteObjective { at: f64 },
    /// The problem spec violates a precondition of the requested mode.
    #[error("invalid problem spec: {reason}")]
    InvalidSpec { reason: String },
}

impl From<SearchFailure<ScalarizationError>> for ScalarizationError {
    fn from(failure: SearchFailure<ScalarizationError>) -> Self {
        match failure {
            SearchFailure::Bracket { lo, hi } => ScalarizationError::BracketError { lo, hi },
            SearchFailure::NonFinite { at } => ScalarizationError::NonFiniteObjective { at },
            SearchFailure::Inner(e) => e,
        }
    }
}

/// Estimator family selector.
///
/// The serialized names match the CLI configuration schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Order-1 Wasserstein DRO (robustness radius `epsilon0 / sqrt(n)`).
    #[serde(rename = "W1")]
    W1,
    /// Order-2 Wasserstein DRO with an M-smooth loss (radius `epsilon0 / n`).
    #[serde(rename = "W2_DRO")]
    W2Dro,
    /// Order-2 Wasserstein DRO specialized to the squared loss.
    #[serde(rename = "W2_DRO_Squared")]
    W2DroSquared,
    /// Distributionally regularized estimation (penalty weight `d lambda0`).
    #[serde(rename = "DRE")]
    Dre,
    /// Distributionally regularized estimation with the squared loss.
    #[serde(rename = "DRE_Squared")]
    DreSquared,
}

impl Mode {
    /// Whether the mode is one of the penalized (DRE) families.
    pub fn is_regularized(self) -> bool {
        matches!(self, Mode::Dre | Mode::DreSquared)
    }
}

/// Full description of one estimation problem in the proportional regime.
///
/// The design has i.i.d. `N(0, 1/d)` entries, the target `theta_0` satisfies
/// `|theta_0|^2 / d = sigma_theta0^2`, and the aspect ratio is
/// `rho = d / n`. `epsilon0` is the robustness-radius coefficient of the DRO
/// modes (ignored by the DRE modes); `lambda0` is the penalty coefficient of
/// the DRE modes (ignored otherwise). `r_theta` bounds the feasible-set
/// radius `|theta| <= r_theta sqrt(d)`. `l_lower` is an optional lower
/// estimate of the empirical loss floor used to certify admissibility of
/// `epsilon0` in the `W2_DRO` mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub mode: Mode,
    pub loss: LossModel,
    pub noise: NoiseModel,
    pub rho: f64,
    #[serde(default)]
    pub epsilon0: f64,
    #[serde(default)]
    pub lambda0: f64,
    pub sigma_theta0: f64,
    pub r_theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_lower: Option<f64>,
}

/// Constants derived from a validated [`ProblemSpec`].
///
/// All four are `None` when their ingredients are missing: `b`, `p_const`
/// and `q_const` need the smoothness constant `M`; `epsilon0_max`
/// additionally needs `l_lower`. The defining identities are
/// `b = sqrt(epsilon0 rho) M r_theta`, `p_const = epsilon0 sqrt(rho) M
/// r_theta / 2`, `q_const = 2 sqrt(rho) M r_theta` and `epsilon0_max =
/// l_lower / (rho M^2 r_theta^2)`; consequently `b^2 = epsilon0 rho M^2
/// r_theta^2 = 2 p_const q_const ... / 2`, i.e. `b^2` equals
/// `epsilon0 * rho * M^2 * r_theta^2` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub b: Option<f64>,
    pub p_const: Option<f64>,
    pub q_const: Option<f64>,
    pub epsilon0_max: Option<f64>,
}

impl ProblemSpec {
    /// Validate the spec against the preconditions of its mode and return
    /// the derived constants.
    pub fn validate(&self) -> Result<DerivedConstants, ScalarizationError> {
        self.loss.validate()?;
        self.noise.validate()?;
        let invalid = |reason: String| ScalarizationError::InvalidSpec { reason };
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(invalid(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.sigma_theta0 > 0.0) || !self.sigma_theta0.is_finite() {
            return Err(invalid(format!(
                "sigma_theta0 must be positive, got {}",
                self.sigma_theta0
            )));
        }
        if !(self.r_theta > 0.0) || !self.r_theta.is_finite() {
            return Err(invalid(format!(
                "r_theta must be positive, got {}",
                self.r_theta
            )));
        }
        if !(self.epsilon0 >= 0.0) || !self.epsilon0.is_finite() {
            return Err(invalid(format!(
                "epsilon0 must be finite and nonnegative, got {}",
                self.epsilon0
            )));
        }
        if let Some(l) = self.l_lower {
            if !(l > 0.0) || !l.is_finite() {
                return Err(invalid(format!("l_lower must be positive, got {l}")));
            }
        }
        let consts = self.loss.constants();
        match self.mode {
            Mode::W1 => {
                if self.epsilon0 > 0.0 && consts.lipschitz.is_none() {
                    return Err(invalid(
                        "mode W1 with epsilon0 > 0 requires a globally Lipschitz loss; \
                         the squared loss has no Lipschitz constant"
                            .to_string(),
                    ));
                }
            }
            Mode::W2Dro => {
                if self.loss == LossModel::Squared {
                    return Err(invalid(
                        "mode W2_DRO with the squared loss degenerates; use mode W2_DRO_Squared"
                            .to_string(),
                    ));
                }
                if consts.smoothness_m.is_none() {
                    return Err(invalid(
                        "mode W2_DRO requires an M-smooth loss; the absolute loss is not smooth"
                            .to_string(),
                    ));
                }
                if self.r_theta < 2.0 * self.sigma_theta0 {
                    return Err(invalid(format!(
                        "mode W2_DRO requires r_theta >= 2 sigma_theta0; \
                         got r_theta = {}, sigma_theta0 = {}",
                        self.r_theta, self.sigma_theta0
                    )));
                }
            }
            Mode::W2DroSquared => {
                if self.loss != LossModel::Squared {
                    return Err(invalid(format!(
                        "mode W2_DRO_Squared requires the squared loss, got {:?}",
                        self.loss
                    )));
                }
            }
            Mode::Dre => {
                if self.loss == LossModel::Squared {
                    return Err(invalid(
                        "mode DRE with the squared loss degenerates; use mode DRE_Squared"
                            .to_string(),
                    ));
                }
                let m = consts.smoothness_m.ok_or_else(|| invalid(
                    "mode DRE requires an M-smooth loss; the absolute loss is not smooth"
                        .to_string(),
                ))?;
                if self.r_theta < self.sigma_theta0 {
                    return Err(invalid(format!(
                        "mode DRE requires r_theta >= sigma_theta0; \
                         got r_theta = {}, sigma_theta0 = {}",
                        self.r_theta, self.sigma_theta0
                    )));
                }
                let bound = m * self.r_theta * self.r_theta / 2.0;
                if !(self.lambda0 > bound) {
                    return Err(invalid(format!(
                        "mode DRE requires lambda0 > M r_theta^2 / 2; \
                         got lambda0 = {}, M r_theta^2 / 2 = {}",
                        self.lambda0, bound
                    )));
                }
            }
            Mode::DreSquared => {
                if self.loss != LossModel::Squared {
                    return Err(invalid(format!(
                        "mode DRE_Squared requires the squared loss, got {:?}",
                        self.loss
                    )));
                }
                let bound = self.r_theta * self.r_theta;
                if !(self.lambda0 > bound) {
                    return Err(invalid(format!(
                        "mode DRE_Squared requires lambda0 > r_theta^2; \
                         got lambda0 = {}, r_theta^2 = {}",
                        self.lambda0, bound
                    )));
                }
            }
        }
        if self.mode.is_regularized() && (!self.lambda0.is_finite() || self.lambda0 <= 0.0) {
            return Err(invalid(format!(
                "regularized modes require a positive finite lambda0, got {}",
                self.lambda0
            )));
        }
        let m = consts.smoothness_m;
        Ok(DerivedConstants {
            b: m.map(|m| (self.epsilon0 * self.rho).sqrt() * m * self.r_theta),
            p_const: m.map(|m| self.epsilon0 * self.rho.sqrt() * m * self.r_theta / 2.0),
            q_const: m.map(|m| 2.0 * self.rho.sqrt() * m * self.r_theta),
            epsilon0_max: match (self.l_lower, m) {
                (Some(l), Some(m)) => {
                    Some(l / (self.rho * m * m * self.r_theta * self.r_theta))
                }
                _ => None,
            },
        })
    }

    /// Standard deviation `sigma_Z` of the noise.
    pub fn sigma_z(&self) -> f64 {
        self.noise.second_moment().sqrt()
    }
}

/// The two-branch robustness function
///
/// ```text
/// G(c, tau) = sqrt(c^2 + s^2)/sqrt(rho) - tau/(2 rho) - s/sqrt(rho)
///                                   if sqrt(rho) sqrt(c^2 + s^2) > tau,
///             (c^2 + s^2)/(2 tau) - s/sqrt(rho)     otherwise,
/// ```
///
/// with `s = sigma_theta0`. The two branches agree on the boundary
/// `tau = sqrt(rho) sqrt(c^2 + s^2)`, so `G` is continuous. `tau = 0` is
/// admitted and lands in the first branch (`s > 0` forces the radical
/// positive).
pub fn g_function(c: f64, tau: f64, rho: f64, sigma_theta0: f64) -> f64 {
    let sr = rho.sqrt();
    let h = c.hypot(sigma_theta0);
    if sr * h > tau {
        h / sr - tau / (2.0 * rho) - sigma_theta0 / sr
    } else {
        (c * c + sigma_theta0 * sigma_theta0) / (2.0 * tau) - sigma_theta0 / sr
    }
}

/// The squared-loss expectation function
///
/// ```text
/// E(c, tau) = sqrt(c^2 + sigma_z^2) - tau/2 - sigma_z/sqrt(rho)
///                                   if sqrt(c^2 + sigma_z^2) > tau,
///             (c^2 + sigma_z^2)/(2 tau) - sigma_z/sqrt(rho)   otherwise.
/// ```
///
/// The additive constant `-sigma_z/sqrt(rho)` is used in both branches so
/// the function is continuous across the boundary; being independent of
/// every optimization variable it cannot move any minimizer. `tau = 0` is
/// admitted and lands in the first branch; `E(c, tau) -> -sigma_z/sqrt(rho)`
/// as `tau -> inf`.
pub fn e_function(c: f64, tau: f64, rho: f64, sigma_z: f64) -> f64 {
    let h = c.hypot(sigma_z);
    let offset = sigma_z / rho.sqrt();
    if h > tau || tau <= 0.0 {
        h - tau / 2.0 - offset
    } else {
        (c * c + sigma_z * sigma_z) / (2.0 * tau) - offset
    }
}

/// The transport block `-alpha tau2/2 - alpha beta^2/(2 tau2) + leg *
/// G(alpha beta/tau2, alpha leg/tau2)` shared by the order-1 and squared-loss
/// order-2 objectives, evaluated in a regrouped form.
///
/// Composing [`g_function`] naively subtracts two `O(1/tau2)` quantities
/// whose difference is `O(1)`; near `tau2 = 0` -- where the block's supremum
/// can sit -- the floating-point cancellation error grows like `ulp(1/tau2)`
/// and swamps the value. Substituting `c = alpha beta/tau2` and
/// `tau = alpha leg/tau2` into `G` and cancelling symbolically gives, with
/// `u = leg/sqrt(rho)`, `s = sigma_theta0` and `hyp = hypot(alpha beta,
/// s tau2)`:
///
/// ```text
/// hyp >  alpha u:  -alpha tau2/2 - leg s/sqrt(rho)
///                    - alpha (beta - u)^2/(2 tau2)
///                    + u s^2 tau2 / (hyp + alpha beta)
/// hyp <= alpha u:  -alpha tau2/2 + s^2 tau2/(2 alpha) - leg s/sqrt(rho)
/// ```
///
/// Every term is now `O(tau2)` or a single `O(1/tau2)` monomial, so the
/// evaluation stays exact down to `tau2 -> 0`. Requires `tau2 > 0` and
/// `leg > 0`; the second branch is unreachable when `alpha = 0`.
fn transport_tau2_block(
    alpha: f64,
    tau2: f64,
    beta: f64,
    leg: f64,
    rho: f64,
    sigma_theta0: f64,
) -> f64 {
    let sr = rho.sqrt();
    let u = leg / sr;
    let s = sigma_theta0;
    let hyp = (alpha * beta).hypot(s * tau2);
    let offset = leg * s / sr;
    if hyp > alpha * u {
        let denom = hyp + alpha * beta;
        let corr = if denom > 0.0 {
            u * s * s * tau2 / denom
        } else {
            0.0
        };
        -alpha * tau2 / 2.0 - offset - alpha * (beta - u) * (beta - u) / (2.0 * tau2) + corr
    } else {
        -alpha * tau2 / 2.0 + s * s * tau2 / (2.0 * alpha) - offset
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[a_in X^2 1{|X| <= t} + (slope |X| + offset) 1{|X| > t}]` for
/// `X ~ N(0, s^2)`, via truncated Gaussian moments. Every piecewise
/// envelope expectation against a centered normal reduces to this.
fn piecewise_gaussian_moment(s: f64, a_in: f64, t: f64, slope: f64, offset: f64) -> f64 {
    if s < 1e-300 {
        // X is identically zero and t >= 0: the inner piece applies.
        return 0.0;
    }
    let u = t / s;
    let pdf = normal_pdf(u);
    let p_in = 2.0 * normal_cdf(u) - 1.0;
    let second_in = s * s * p_in - 2.0 * s * t * pdf;
    let abs_out = 2.0 * s * pdf;
    let p_out = 2.0 * (1.0 - normal_cdf(u));
    a_in * second_in + slope * abs_out + offset * p_out
}

/// `E[e_L(X, tau)]` for `X ~ N(0, c^2 + sigma_z^2)` in closed form.
///
/// For the squared loss the formula `(c^2 + sigma_z^2)/(1 + 2 tau)` is valid
/// for any zero-mean noise with the given second moment, not only Gaussian.
fn env_l_normal(loss: &LossModel, c: f64, tau: f64, sigma_z: f64) -> f64 {
    let s_sq = c * c + sigma_z * sigma_z;
    match *loss {
        LossModel::Squared => s_sq / (1.0 + 2.0 * tau),
        LossModel::Absolute => {
            let s = s_sq.sqrt();
            if tau < TINY_TAU {
                return s * SQRT_2_OVER_PI;
            }
            piecewise_gaussian_moment(s, 1.0 / (2.0 * tau), tau, 1.0, -tau / 2.0)
        }
        LossModel::Huber { delta } => {
            let s = s_sq.sqrt();
            let t = 1.0 + tau;
            piecewise_gaussian_moment(s, 1.0 / (2.0 * t), delta * t, delta, -delta * delta * t / 2.0)
        }
    }
}

/// `E[e_f(X, tau)]` for `f(v) = scale |v|` and `X ~ N(0, c^2 + sigma_z^2)`.
fn env_f_normal(scale: f64, c: f64, tau: f64, sigma_z: f64) -> f64 {
    let s = (c * c + sigma_z * sigma_z).sqrt();
    if tau < TINY_TAU {
        return scale * s * SQRT_2_OVER_PI;
    }
    piecewise_gaussian_moment(s, 1.0 / (2.0 * tau), scale * tau, scale, -scale * scale * tau / 2.0)
}

/// `E[L(Z)]` in closed form; for the squared loss this is exact for any
/// noise (it only needs the second moment), otherwise `Z` must be normal.
fn expected_loss_normal(loss: &LossModel, sigma_z: f64) -> f64 {
    match *loss {
        LossModel::Squared => sigma_z * sigma_z,
        LossModel::Absolute => sigma_z * SQRT_2_OVER_PI,
        LossModel::Huber { delta } => {
            piecewise_gaussian_moment(sigma_z, 0.5, delta, delta, -delta * delta / 2.0)
        }
    }
}

fn closed_form_applies(loss: &LossModel, noise: &NoiseModel, cfg: &QuadratureConfig) -> bool {
    matches!(loss, LossModel::Squared)
        || (matches!(cfg.mode, IntegrationMode::Quadrature)
            && matches!(noise, NoiseModel::Gaussian { .. } | NoiseModel::PointMass))
}

/// Expected (optionally shifted) Moreau envelope of the loss,
/// `L(c, tau) = E[e_L(c G + Z, tau) - shift * L(Z)]`, over independent
/// `G ~ N(0,1)` and noise `Z`.
///
/// The shift only subtracts a constant independent of `(c, tau)`: it can
/// change reported optimal values but never a minimizer. With the shift off
/// the result is nonnegative.
pub fn expected_shifted_envelope_l(
    c: f64,
    tau: f64,
    loss: &LossModel,
    noise: &NoiseModel,
    cfg: &QuadratureConfig,
    shift: bool,
) -> Result<f64, ScalarizationError> {
    loss.validate()?;
    noise.validate()?;
    cfg.validate()?;
    if !(tau > 0.0) {
        return Err(LossError::NonPositiveTau { tau }.into());
    }
    let sigma_z = noise.second_moment().sqrt();
    if closed_form_applies(loss, noise, cfg) {
        let mut v = env_l_normal(loss, c, tau, sigma_z);
        if shift {
            v -= expected_loss_normal(loss, sigma_z);
        }
        return Ok(v);
    }
    let loss = *loss;
    let value = crate::noise_models::product_expectation(
        |g, z| {
            let e = loss.moreau_envelope(c * g + z, tau).unwrap_or(f64::NAN);
            if shift {
                e - loss.eval_loss(z)
            } else {
                e
            }
        },
        noise,
        cfg,
    )?;
    Ok(value)
}

/// Expected Moreau envelope of the convex component,
/// `F(c, tau) = E[e_f(c G + Z, tau)] >= 0`.
///
/// Returns [`ScalarizationError::UseSquaredSpecialization`] for the squared
/// loss (degenerate component) and propagates
/// [`LossError::NotSmooth`] for the absolute loss.
pub fn expected_envelope_f(
    c: f64,
    tau: f64,
    loss: &LossModel,
    noise: &NoiseModel,
    cfg: &QuadratureConfig,
) -> Result<f64, ScalarizationError> {
    loss.validate()?;
    noise.validate()?;
    cfg.validate()?;
    if !(tau > 0.0) {
        return Err(LossError::NonPositiveTau { tau }.into());
    }
    let component = match loss.f_component() {
        Ok(fc) => fc,
        Err(LossError::Degenerate) => return Err(ScalarizationError::UseSquaredSpecialization),
        Err(e) => return Err(e.into()),
    };
    let sigma_z = noise.second_moment().sqrt();
    if closed_form_applies(loss, noise, cfg) {
        let FComponent::ScaledAbsolute { scale } = component;
        return Ok(env_f_normal(scale, c, tau, sigma_z));
    }
    let value = crate::noise_models::product_expectation(
        |g, z| component.moreau_envelope(c * g + z, tau).unwrap_or(f64::NAN),
        noise,
        cfg,
    )?;
    Ok(value)
}

fn quantize(x: f64) -> i128 {
    // `as` saturates, so extreme arguments fold onto the end keys instead
    // of wrapping.
    (x / KEY_QUANTUM).round() as i128
}

/// Objective evaluator binding a validated [`ProblemSpec`] to a
/// [`QuadratureConfig`].
///
/// Envelope expectations are memoized on `(c, tau)` with `1e-12` key
/// quantization; the nested searches re-query identical points constantly.
/// Evaluation is deterministic: repeated calls (and fresh evaluators over
/// the same inputs) produce bit-identical values.
pub struct Evaluator {
    spec: ProblemSpec,
    constants: DerivedConstants,
    sigma_z: f64,
    lipschitz: Option<f64>,
    smoothness_m: Option<f64>,
    analytic: bool,
    /// `(g, z, w)` nodes for the numerical-integration path; empty when the
    /// closed forms apply.
    nodes: Vec<(f64, f64, f64)>,
    /// Default upper endpoint for brackets over scale variables.
    cap: f64,
    env_l_cache: RwLock<HashMap<(i128, i128), f64>>,
    env_f_cache: RwLock<HashMap<(i128, i128), f64>>,
}

impl Evaluator {
    /// Validate the spec and precompute integration nodes if needed.
    pub fn new(spec: ProblemSpec, cfg: QuadratureConfig) -> Result<Self, ScalarizationError> {
        let constants = spec.validate()?;
        cfg.validate()?;
        let loss_constants = spec.loss.constants();
        let sigma_z = spec.sigma_z();
        let analytic = closed_form_applies(&spec.loss, &spec.noise, &cfg);
        let nodes = if analytic {
            Vec::new()
        } else {
            expectation_nodes(&spec.noise, &cfg)?
        };
        let cap = 10.0 * (spec.sigma_theta0 + sigma_z + 1.0);
        Ok(Evaluator {
            spec,
            constants,
            sigma_z,
            lipschitz: loss_constants.lipschitz,
            smoothness_m: loss_constants.smoothness_m,
            analytic,
            nodes,
            cap,
            env_l_cache: RwLock::new(HashMap::new()),
            env_f_cache: RwLock::new(HashMap::new()),
        })
    }

    /// The validated problem spec.
    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    /// Constants derived from the spec.
    pub fn constants(&self) -> &DerivedConstants {
        &self.constants
    }

    /// Noise standard deviation `sigma_Z`.
    pub fn sigma_z(&self) -> f64 {
        self.sigma_z
    }

    /// Default bracket cap `10 (sigma_theta0 + sigma_Z + 1)`.
    pub fn bracket_cap(&self) -> f64 {
        self.cap
    }

    fn integrate(
        &self,
        mut h: impl FnMut(f64, f64) -> f64,
    ) -> Result<f64, ScalarizationError> {
        let mut acc = 0.0;
        for &(g, z, w) in &self.nodes {
            let v = h(g, z);
            if !v.is_finite() {
                return Err(NoiseError::EvaluationError { g, z }.into());
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Memoized `L(c, tau)` (shift off).
    pub fn env_l(&self, c: f64, tau: f64) -> Result<f64, ScalarizationError> {
        if !(tau > 0.0) {
            return Err(LossError::NonPositiveTau { tau }.into());
        }
        let key = (quantize(c), quantize(tau));
        if let Some(&v) = self.env_l_cache.read().expect("cache poisoned").get(&key) {
            return Ok(v);
        }
        let v = if self.analytic {
            env_l_normal(&self.spec.loss, c, tau, self.sigma_z)
        } else {
            let loss = self.spec.loss;
            self.integrate(|g, z| loss.moreau_envelope(c * g + z, tau).unwrap_or(f64::NAN))?
        };
        self.env_l_cache
            .write()
            .expect("cache poisoned")
            .insert(key, v);
        Ok(v)
    }

    /// Memoized `F(c, tau)`.
    pub fn env_f(&self, c: f64, tau: f64) -> Result<f64, ScalarizationError> {
        if !(tau > 0.0) {
            return Err(LossError::NonPositiveTau { tau }.into());
        }
        let component = match self.spec.loss.f_component() {
            Ok(fc) => fc,
            Err(LossError::Degenerate) => {
                return Err(ScalarizationError::UseSquaredSpecialization)
            }
            Err(e) => return Err(e.into()),
        };
        let key = (quantize(c), quantize(tau));
        if let Some(&v) = self.env_f_cache.read().expect("cache poisoned").get(&key) {
            return Ok(v);
        }
        let v = if self.analytic {
            let FComponent::ScaledAbsolute { scale } = component;
            env_f_normal(scale, c, tau, self.sigma_z)
        } else {
            self.integrate(|g, z| {
                component.moreau_envelope(c * g + z, tau).unwrap_or(f64::NAN)
            })?
        };
        self.env_f_cache
            .write()
            .expect("cache poisoned")
            .insert(key, v);
        Ok(v)
    }

    /// Order-1 Wasserstein objective
    ///
    /// ```text
    /// beta tau1/2 - alpha tau2/2 - alpha beta^2/(2 tau2)
    ///   + (1/rho) L(alpha, tau1/beta)
    ///   + epsilon0 Lip * G(alpha beta/tau2, alpha epsilon0 Lip / tau2).
    /// ```
    ///
    /// At `beta < EDGE_EPS` the `beta tau1/2 + (1/rho) L` block is replaced
    /// by its limit `0` (the envelope flattens onto `inf L = 0`); with
    /// `epsilon0 = 0` the `G` term is dropped (zero coefficient). The
    /// `tau2` group is computed through [`transport_tau2_block`] so it stays
    /// accurate at small `tau2`.
    pub fn objective_w1(
        &self,
        alpha: f64,
        tau1: f64,
        tau2: f64,
        beta: f64,
    ) -> Result<f64, ScalarizationError> {
        let spec = &self.spec;
        let l_block = if beta < EDGE_EPS {
            0.0
        } else {
            beta * tau1 / 2.0 + self.env_l(alpha, tau1 / beta)? / spec.rho
        };
        let eps_lip = spec.epsilon0 * self.lipschitz.unwrap_or(0.0);
        let t2_block = if eps_lip > 0.0 {
            transport_tau2_block(alpha, tau2, beta, eps_lip, spec.rho, spec.sigma_theta0)
        } else {
            -alpha * tau2 / 2.0 - alpha * beta * beta / (2.0 * tau2)
        };
        Ok(l_block + t2_block)
    }

    fn require_smoothness(&self) -> Result<f64, ScalarizationError> {
        self.smoothness_m
            .ok_or_else(|| ScalarizationError::InvalidSpec {
                reason: "this objective requires an M-smooth loss".to_string(),
            })
    }

    /// Order-2 Wasserstein objective on the outer branch (`beta > b`):
    ///
    /// ```text
    /// beta tau1/2 + sqrt(epsilon0) beta tau2/2 - beta^2/(2M)
    ///   + F(alpha, tau1/beta)
    ///   - alpha beta sqrt(rho) sqrt(rho epsilon0 s^2/tau2^2 + 1)
    ///   + sqrt(epsilon0) beta rho (s^2 + alpha^2)/(2 tau2),     s = sigma_theta0.
    /// ```
    ///
    /// The two `O(1/tau2)` terms nearly cancel near `alpha = s`, so they are
    /// regrouped before evaluation: with `x = sqrt(rho epsilon0) s` and the
    /// identity `sqrt(x^2/tau2^2 + 1) = x/tau2 + tau2/(hypot(x, tau2) + x)`,
    /// the last two terms become
    ///
    /// ```text
    /// sqrt(epsilon0) beta rho (alpha - s)^2/(2 tau2)
    ///   - alpha beta sqrt(rho) tau2/(hypot(x, tau2) + x).
    /// ```
    pub fn objective_o1(
        &self,
        alpha: f64,
        tau1: f64,
        tau2: f64,
        beta: f64,
    ) -> Result<f64, ScalarizationError> {
        let spec = &self.spec;
        let m = self.require_smoothness()?;
        let st = spec.sigma_theta0;
        let sr = spec.rho.sqrt();
        let se = spec.epsilon0.sqrt();
        let f_block = if beta < EDGE_EPS {
            0.0
        } else {
            beta * tau1 / 2.0 + self.env_f(alpha, tau1 / beta)?
        };
        let x = sr * se * st;
        let denom = x.hypot(tau2) + x;
        // epsilon0 = 0 collapses the radical to 1: the ratio tau2/denom is 1.
        let frac = if denom > 0.0 { tau2 / denom } else { 1.0 };
        Ok(f_block + se * beta * tau2 / 2.0 - beta * beta / (2.0 * m)
            + se * beta * spec.rho * (alpha - st) * (alpha - st) / (2.0 * tau2)
            - alpha * beta * sr * frac)
    }

    /// Order-2 Wasserstein objective on the inner branch (`0 <= beta <= b`),
    /// including its inner minimization over `tau2`:
    ///
    /// ```text
    /// inf_{tau2 > 0}  beta tau1/2 + p tau2/2 + beta^2 tau2/(2q)
    ///   - beta^2/(2M) + F(alpha, tau1/beta)
    ///   - alpha sqrt(rho) sqrt(c1^2 rho s^2/tau2^2 + beta^2)
    ///   + rho c1 (s^2 + alpha^2)/(2 tau2),      c1 = p + beta^2/q.
    /// ```
    ///
    /// The inner objective is convex in `tau2`, grows linearly as
    /// `tau2 -> inf`, and diverges as `tau2 -> 0` except at `alpha = s`
    /// (where it decays to its infimum at the boundary), so the bracketed
    /// search is globally correct.
    pub fn objective_o2(
        &self,
        alpha: f64,
        tau1: f64,
        beta: f64,
    ) -> Result<f64, ScalarizationError> {
        self.objective_o2_with_tau2(alpha, tau1, beta).map(|r| r.0)
    }

    /// Same as [`Evaluator::objective_o2`] but also reports the minimizing
    /// `tau2` of the inner problem (a saddle-point witness coordinate).
    pub fn objective_o2_with_tau2(
        &self,
        alpha: f64,
        tau1: f64,
        beta: f64,
    ) -> Result<(f64, f64), ScalarizationError> {
        let spec = &self.spec;
        let m = self.require_smoothness()?;
        let p = self.constants.p_const.expect("smooth loss has p_const");
        let q = self.constants.q_const.expect("smooth loss has q_const");
        let st = spec.sigma_theta0;
        let rho = spec.rho;
        let sr = rho.sqrt();
        let f_block = if beta < EDGE_EPS {
            0.0
        } else {
            beta * tau1 / 2.0 + self.env_f(alpha, tau1 / beta)?
        };
        let c1 = p + beta * beta / q;
        // Same regrouping as in `objective_o1`: the O(1/t2) parts of the
        // radical and of the last term cancel to rho c1 (alpha - s)^2/(2 t2),
        // with x = c1 sqrt(rho) s and a stable remainder.
        let x = c1 * sr * st;
        let mut inner = |t2: f64| -> Result<f64, ScalarizationError> {
            let denom = x.hypot(beta * t2) + x;
            let rem = if denom > 0.0 {
                alpha * sr * beta * beta * t2 / denom
            } else {
                0.0
            };
            Ok(p * t2 / 2.0 + beta * beta * t2 / (2.0 * q)
                + rho * c1 * (alpha - st) * (alpha - st) / (2.0 * t2)
                - rem)
        };
        let params = SearchParams {
            var_tol: 1e-9,
            ..SearchParams::default()
        };
        let span = Span::open_hi(TAU_FLOOR, self.cap, Scale::Log, Exhaust::Error);
        let (tau2_star, inner_value) = search::minimize(&mut inner, &span, &params)?;
        Ok((f_block - beta * beta / (2.0 * m) + inner_value, tau2_star))
    }

    /// Regularized-estimation objective
    ///
    /// ```text
    /// beta tau1/2 - beta^2/(2M) + F(alpha, tau1/beta)
    ///   + beta^2 (s^2 + alpha^2)/(4 lambda0)
    ///   - alpha beta sqrt(rho + beta^2 s^2/(4 lambda0^2)),   s = sigma_theta0.
    /// ```
    ///
    /// Identically `0` at `beta = 0` (every term carries `beta`).
    pub fn objective_dre(
        &self,
        alpha: f64,
        tau1: f64,
        beta: f64,
    ) -> Result<f64, ScalarizationError> {
        if beta < EDGE_EPS {
            return Ok(0.0);
        }
        let spec = &self.spec;
        let m = self.require_smoothness()?;
        let st = spec.sigma_theta0;
        let l0 = spec.lambda0;
        let f_block = beta * tau1 / 2.0 + self.env_f(alpha, tau1 / beta)?;
        Ok(f_block - beta * beta / (2.0 * m)
            + beta * beta * (st * st + alpha * alpha) / (4.0 * l0)
            - alpha * beta * (spec.rho + beta * beta * st * st / (4.0 * l0 * l0)).sqrt())
    }

    /// Squared-loss order-2 Wasserstein objective
    ///
    /// ```text
    /// beta tau1/2 - alpha tau2/2 - alpha beta^2/(2 tau2)
    ///   + (1/rho) E(alpha, tau1/beta)
    ///   + sqrt(epsilon0) G(alpha beta/tau2, alpha sqrt(epsilon0)/tau2).
    /// ```
    ///
    /// At `beta < EDGE_EPS` the `beta tau1/2 + (1/rho) E` block is replaced
    /// by its limit `-sigma_z / (rho sqrt(rho))` -- the envelope function `E`
    /// carries an additive constant, so this limit is not zero. The `tau2`
    /// group is computed through [`transport_tau2_block`] so it stays
    /// accurate at small `tau2`.
    pub fn objective_sq_dro(
        &self,
        alpha: f64,
        tau1: f64,
        tau2: f64,
        beta: f64,
    ) -> Result<f64, ScalarizationError> {
        let spec = &self.spec;
        let rho = spec.rho;
        let e_block = if beta < EDGE_EPS {
            -self.sigma_z / (rho * rho.sqrt())
        } else {
            beta * tau1 / 2.0 + e_function(alpha, tau1 / beta, rho, self.sigma_z) / rho
        };
        let se = spec.epsilon0.sqrt();
        let t2_block = if se > 0.0 {
            transport_tau2_block(alpha, tau2, beta, se, rho, spec.sigma_theta0)
        } else {
            -alpha * tau2 / 2.0 - alpha * beta * beta / (2.0 * tau2)
        };
        Ok(e_block + t2_block)
    }

    /// Squared-loss regularized objective (two variables; `M = 2`):
    ///
    /// ```text
    /// beta sqrt(alpha^2 + sigma_z^2) - beta^2/4
    ///   + beta^2 (s^2 + alpha^2)/(4 lambda0)
    ///   - alpha beta sqrt(rho + beta^2 s^2/(4 lambda0^2)).
    /// ```
    pub fn objective_sq_dre(&self, alpha: f64, beta: f64) -> Result<f64, ScalarizationError> {
        let spec = &self.spec;
        let st = spec.sigma_theta0;
        let l0 = spec.lambda0;
        Ok(beta * (alpha * alpha + self.sigma_z * self.sigma_z).sqrt() - beta * beta / 4.0
            + beta * beta * (st * st + alpha * alpha) / (4.0 * l0)
            - alpha * beta * (spec.rho + beta * beta * st * st / (4.0 * l0 * l0)).sqrt())
    }
}

/// One-off evaluation of [`Evaluator::objective_w1`].
pub fn objective_w1(
    alpha: f64,
    tau1: f64,
    tau2: f64,
    beta: f64,
    spec: &ProblemSpec,
    cfg: &QuadratureConfig,
) -> Result<f64, ScalarizationError> {
    Evaluator::new(spec.clone(), *cfg)?.objective_w1(alpha, tau1, tau2, beta)
}

/// One-off evaluation of [`Evaluator::objective_o1`].
pub fn objective_o1(
    alpha: f64,
    tau1: f64,
    tau2: f64,
    beta: f64,
    spec: &ProblemSpec,
    cfg: &QuadratureConfig,
) -> Result<f64, ScalarizationError> {
    Evaluator::new(spec.clone(), *cfg)?.objective_o1(alpha, tau1, tau2, beta)
}

/// One-off evaluation of [`Evaluator::objective_o2`].
pub fn objective_o2(
    alpha: f64,
    tau1: f64,
    beta: f64,
    spec: &ProblemSpec,
    cfg: &QuadratureConfig,
) -> Result<f64, ScalarizationError> {
    Evaluator::new(spec.clone(), *cfg)?.objective_o2(alpha, tau1, beta)
}

/// One-off evaluation of [`Evaluator::objective_dre`].
pub fn objective_dre(
    alpha: f64,
    tau1: f64,
    beta: f64,
    spec: &ProblemSpec,
    cfg: &QuadratureConfig,
) -> Result<f64, ScalarizationError> {
    Evaluator::new(spec.clone(), *cfg)?.objective_dre(alpha, tau1, beta)
}

/// One-off evaluation of [`Evaluator::objective_sq_dro`].
pub fn objective_sq_dro(
    alpha: f64,
    tau1: f64,
    tau2: f64,
    beta: f64,
    spec: &ProblemSpec,
    cfg: &QuadratureConfig,
) -> Result<f64, ScalarizationError> {
    Evaluator::new(spec.clone(), *cfg)?.objective_sq_dro(alpha, tau1, tau2, beta)
}

/// One-off evaluation of [`Evaluator::objective_sq_dre`] (no quadrature
/// is involved: the squared-loss objectives are fully closed-form).
pub fn objective_sq_dre(
    alpha: f64,
    beta: f64,
    spec: &ProblemSpec,
) -> Result<f64, ScalarizationError> {
    Evaluator::new(spec.clone(), QuadratureConfig::default())?.objective_sq_dre(alpha, beta)
}
