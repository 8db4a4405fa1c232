//! Loss models for robust regression: squared, absolute, and Huber.
//!
//! Every loss `L` here is convex, even, and minimized at the origin with
//! `L(0) = 0`. The module provides the pieces the scalar minimax reduction
//! is assembled from:
//!
//! * pointwise evaluation and the convex conjugate `L*`,
//! * the Moreau envelope in closed form,
//!
//!   ```text
//!   e_L(x; tau) = min_v  (x - v)^2 / (2 tau) + L(v),      tau > 0,
//!   ```
//!
//! * for an `M`-smooth loss, the convex component `f` such that the loss is
//!   itself an envelope, `L = e_f(.; 1/M)`, which gives the semigroup
//!   identity `e_L(x; tau) = e_f(x; tau + 1/M)` used throughout the theory,
//! * a slow brute-force envelope minimizer that serves as an independent
//!   oracle for the closed forms in tests.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default Huber threshold (the classical 95%-efficiency tuning constant).
pub const DEFAULT_HUBER_DELTA: f64 = 1.345;

fn default_huber_delta() -> f64 {
    DEFAULT_HUBER_DELTA
}

/// Errors raised by loss-model operations.
#[derive(Debug, Error)]
pub enum LossError {
    /// The Moreau envelope parameter must satisfy `tau > 0`.
    #[error("Moreau envelope parameter must be positive, got tau = {tau}")]
    NonPositiveTau { tau: f64 },
    /// The Huber threshold must satisfy `delta > 0`.
    #[error("Huber threshold must be positive, got delta = {delta}")]
    InvalidDelta { delta: f64 },
    /// The absolute loss has no finite smoothness constant, hence no
    /// envelope component `f`.
    #[error("the absolute loss is not smooth; it has no envelope component f")]
    NotSmooth,
    /// The squared loss sits exactly at the smoothness boundary `M = 2`:
    /// its component `f` degenerates to the indicator of `{0}` and must be
    /// handled by the dedicated squared-loss formulas.
    #[error(
        "the squared loss has a degenerate envelope component (the indicator of zero); \
         use the squared-loss specialization instead"
    )]
    Degenerate,
    /// The brute-force envelope minimizer landed on the search boundary;
    /// the bracket `[c - halfwidth, c + halfwidth]` is too small.
    #[error(
        "brute-force envelope minimizer hit the bracket boundary \
         (c = {c}, halfwidth = {halfwidth}); enlarge the halfwidth"
    )]
    BracketTooSmall { c: f64, halfwidth: f64 },
}

/// A convex regression loss.
///
/// The Huber variant carries its threshold; `LossModel::huber(delta)`
/// validates it, and `{"kind": "Huber"}` deserializes with the default
/// threshold [`DEFAULT_HUBER_DELTA`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LossModel {
    /// `L(r) = r^2`.
    Squared,
    /// `L(r) = |r|`.
    Absolute,
    /// `L(r) = r^2/2` for `|r| <= delta`, `delta |r| - delta^2/2` beyond.
    Huber {
        #[serde(default = "default_huber_delta")]
        delta: f64,
    },
}

/// Global constants of a loss: the Lipschitz constant of `L` and the
/// smoothness constant `M` (a global bound on the curvature, i.e. `L'` is
/// `M`-Lipschitz). `None` marks a constant that does not exist: the squared
/// loss is not Lipschitz, the absolute loss is not smooth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    pub lipschitz: Option<f64>,
    pub smoothness_m: Option<f64>,
}

/// The convex component `f` of a smooth loss, i.e. the function with
/// `L = e_f(.; 1/M)`. Only the Huber loss has a proper (finite-valued)
/// component: `f(v) = delta |v|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FComponent {
    /// `f(v) = scale * |v|`.
    ScaledAbsolute { scale: f64 },
}

impl FComponent {
    /// Evaluate `f(v)`.
    pub fn eval(&self, v: f64) -> f64 {
        match *self {
            FComponent::ScaledAbsolute { scale } => scale * v.abs(),
        }
    }

    /// Closed-form Moreau envelope `e_f(x; tau)`.
    ///
    /// For `f(v) = s |v|` this is the Huber function with threshold
    /// `s * tau`:
    ///
    /// ```text
    /// e_f(x; tau) = x^2 / (2 tau)          for |x| <= s tau,
    ///               s |x| - s^2 tau / 2     otherwise.
    /// ```
    pub fn moreau_envelope(&self, x: f64, tau: f64) -> Result<f64, LossError> {
        if !(tau > 0.0) {
            return Err(LossError::NonPositiveTau { tau });
        }
        match *self {
            FComponent::ScaledAbsolute { scale } => {
                let ax = x.abs();
                if ax <= scale * tau {
                    Ok(x * x / (2.0 * tau))
                } else {
                    Ok(scale * ax - scale * scale * tau / 2.0)
                }
            }
        }
    }
}

impl LossModel {
    /// Construct a Huber loss, validating the threshold.
    pub fn huber(delta: f64) -> Result<Self, LossError> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(LossError::InvalidDelta { delta });
        }
        Ok(LossModel::Huber { delta })
    }

    /// Construct a Huber loss with the default threshold.
    pub fn huber_default() -> Self {
        LossModel::Huber {
            delta: DEFAULT_HUBER_DELTA,
        }
    }

    /// Check the model parameters (a deserialized Huber threshold may be
    /// arbitrary).
    pub fn validate(&self) -> Result<(), LossError> {
        match *self {
            LossModel::Huber { delta } if !(delta > 0.0) || !delta.is_finite() => {
                Err(LossError::InvalidDelta { delta })
            }
            _ => Ok(()),
        }
    }

    /// Evaluate the loss `L(r)`.
    pub fn eval_loss(&self, r: f64) -> f64 {
        match *self {
            LossModel::Squared => r * r,
            LossModel::Absolute => r.abs(),
            LossModel::Huber { delta } => {
                let ar = r.abs();
                if ar <= delta {
                    0.5 * r * r
                } else {
                    delta * ar - 0.5 * delta * delta
                }
            }
        }
    }

    /// A (sub)derivative `L'(r)`, taking the value `0` at the kink of the
    /// absolute loss.
    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            LossModel::Squared => 2.0 * r,
            LossModel::Absolute => {
                if r == 0.0 {
                    0.0
                } else {
                    r.signum()
                }
            }
            LossModel::Huber { delta } => r.clamp(-delta, delta),
        }
    }

    /// Lipschitz and smoothness constants of the loss.
    pub fn constants(&self) -> LossConstants {
        match *self {
            LossModel::Squared => LossConstants {
                lipschitz: None,
                smoothness_m: Some(2.0),
            },
            LossModel::Absolute => LossConstants {
                lipschitz: Some(1.0),
                smoothness_m: None,
            },
            LossModel::Huber { delta } => LossConstants {
                lipschitz: Some(delta),
                smoothness_m: Some(1.0),
            },
        }
    }

    /// Convex conjugate `L*(u) = sup_r { r u - L(r) }`.
    ///
    /// Values outside the effective domain are reported as `f64::INFINITY`.
    pub fn conjugate(&self, u: f64) -> f64 {
        match *self {
            LossModel::Squared => 0.25 * u * u,
            LossModel::Absolute => {
                if u.abs() <= 1.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            LossModel::Huber { delta } => {
                if u.abs() <= delta {
                    0.5 * u * u
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Closed-form Moreau envelope `e_L(x; tau)` for `tau > 0`.
    ///
    /// ```text
    /// squared:   x^2 / (1 + 2 tau)
    /// absolute:  x^2 / (2 tau)                   for |x| <= tau,
    ///            |x| - tau / 2                    otherwise
    /// Huber:     x^2 / (2 (1 + tau))              for |x| <= delta (1 + tau),
    ///            delta |x| - delta^2 (1 + tau)/2  otherwise
    /// ```
    pub fn moreau_envelope(&self, x: f64, tau: f64) -> Result<f64, LossError> {
        if !(tau > 0.0) {
            return Err(LossError::NonPositiveTau { tau });
        }
        let ax = x.abs();
        Ok(match *self {
            LossModel::Squared => x * x / (1.0 + 2.0 * tau),
            LossModel::Absolute => {
                if ax <= tau {
                    x * x / (2.0 * tau)
                } else {
                    ax - 0.5 * tau
                }
            }
            LossModel::Huber { delta } => {
                let kink = delta * (1.0 + tau);
                if ax <= kink {
                    x * x / (2.0 * (1.0 + tau))
                } else {
                    delta * ax - 0.5 * delta * delta * (1.0 + tau)
                }
            }
        })
    }

    /// The convex component `f` with `L = e_f(.; 1/M)`.
    ///
    /// Errors: [`LossError::NotSmooth`] for the absolute loss,
    /// [`LossError::Degenerate`] for the squared loss (its component is the
    /// indicator of `{0}`, which the squared-loss specialization absorbs
    /// analytically).
    pub fn f_component(&self) -> Result<FComponent, LossError> {
        match *self {
            LossModel::Squared => Err(LossError::Degenerate),
            LossModel::Absolute => Err(LossError::NotSmooth),
            LossModel::Huber { delta } => Ok(FComponent::ScaledAbsolute { scale: delta }),
        }
    }
}

/// Golden-section step used by the brute-force refiner.
const GOLDEN_RATIO: f64 = 0.618_033_988_749_894_8;
/// Number of cells in the brute-force prescan.
const BRUTE_FORCE_GRID: usize = 2048;

/// Brute-force Moreau envelope of an arbitrary function: minimizes
/// `(c - v)^2 / (2 tau) + f(v)` over `v` in `[c - halfwidth, c + halfwidth]`
/// by a dense grid scan followed by golden-section refinement of the best
/// cell, down to a bracket width of `tol`.
///
/// This is the independent oracle used to validate the closed-form
/// envelopes. If the grid minimizer lands in a boundary cell the bracket
/// cannot be trusted and [`LossError::BracketTooSmall`] is returned.
pub fn brute_force_envelope<F: Fn(f64) -> f64>(
    f: F,
    c: f64,
    tau: f64,
    halfwidth: f64,
    tol: f64,
) -> Result<f64, LossError> {
    if !(tau > 0.0) {
        return Err(LossError::NonPositiveTau { tau });
    }
    let objective = |v: f64| (c - v) * (c - v) / (2.0 * tau) + f(v);
    let lo = c - halfwidth;
    let step = 2.0 * halfwidth / BRUTE_FORCE_GRID as f64;
    let mut best_i = 0usize;
    let mut best_v = objective(lo);
    for i in 1..=BRUTE_FORCE_GRID {
        let v = objective(lo + step * i as f64);
        if v < best_v {
            best_i = i;
            best_v = v;
        }
    }
    if best_i == 0 || best_i == BRUTE_FORCE_GRID {
        return Err(LossError::BracketTooSmall { c, halfwidth });
    }
    let mut a = lo + step * (best_i - 1) as f64;
    let mut b = lo + step * (best_i + 1) as f64;
    let mut x1 = b - GOLDEN_RATIO * (b - a);
    let mut x2 = a + GOLDEN_RATIO * (b - a);
    let mut f1 = objective(x1);
    let mut f2 = objective(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN_RATIO * (b - a);
            f1 = objective(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN_RATIO * (b - a);
            f2 = objective(x2);
        }
    }
    Ok(objective(0.5 * (a + b)))
}
