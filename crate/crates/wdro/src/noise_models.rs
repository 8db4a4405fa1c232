//! Noise distributions and product expectations `E[h(G, Z)]`, `G ~ N(0,1)`.
//!
//! The scalarized objectives are built from expectations of envelope
//! functions over the product of a standard Gaussian (the projected design
//! direction) and the noise law `Z`. This module provides:
//!
//! * the supported noise models (Gaussian, Laplace, point mass at zero) with
//!   seeded sampling,
//! * Gaussian quadrature rules generated on the fly by the Golub-Welsch
//!   eigenvalue method: Gauss-Hermite for Gaussian axes and two-sided
//!   Gauss-Laguerre for the Laplace axis,
//! * [`product_expectation`], which integrates an arbitrary bivariate
//!   function against the product measure by tensor quadrature or by a
//!   seeded Monte Carlo fallback.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum admissible number of Gauss-Hermite nodes per axis.
pub const MIN_GH_NODES: usize = 8;
/// Default number of quadrature nodes per axis.
pub const DEFAULT_GH_NODES: usize = 64;
/// Minimum admissible Monte Carlo sample count.
pub const MIN_MC_SAMPLES: usize = 10_000;
/// Default Monte Carlo sample count.
pub const DEFAULT_MC_SAMPLES: usize = 40_000;

/// Errors raised by noise-model operations.
#[derive(Debug, Error)]
pub enum NoiseError {
    /// A distribution parameter is out of range.
    #[error("invalid noise parameter {name} = {value}; must be positive and finite")]
    InvalidParameter { name: &'static str, value: f64 },
    /// Too few quadrature nodes requested.
    #[error("gh_nodes = {requested} is below the minimum of {minimum}")]
    TooFewNodes { requested: usize, minimum: usize },
    /// Too few Monte Carlo samples requested.
    #[error("mc_samples = {requested} is below the minimum of {minimum}")]
    TooFewSamples { requested: usize, minimum: usize },
    /// The integrand returned a non-finite value at an evaluation point.
    #[error("integrand evaluated to a non-finite value at (g = {g}, z = {z})")]
    EvaluationError { g: f64, z: f64 },
    /// The tridiagonal eigenvalue iteration failed to converge (never
    /// observed for the node counts admitted here; reported defensively).
    #[error("quadrature eigenvalue iteration failed to converge at index {index}")]
    EigenFailure { index: usize },
}

/// Noise law of the regression residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum NoiseModel {
    /// `Z ~ N(0, sigma^2)`.
    Gaussian { sigma: f64 },
    /// Laplace with density `exp(-|z| / scale) / (2 scale)`.
    Laplace { scale: f64 },
    /// Deterministic `Z = 0` (noiseless observations).
    PointMass,
}

impl NoiseModel {
    /// Check the model parameters.
    pub fn validate(&self) -> Result<(), NoiseError> {
        match *self {
            NoiseModel::Gaussian { sigma } if !(sigma > 0.0) || !sigma.is_finite() => {
                Err(NoiseError::InvalidParameter {
                    name: "sigma",
                    value: sigma,
                })
            }
            NoiseModel::Laplace { scale } if !(scale > 0.0) || !scale.is_finite() => {
                Err(NoiseError::InvalidParameter {
                    name: "scale",
                    value: scale,
                })
            }
            _ => Ok(()),
        }
    }

    /// Second moment `E[Z^2]`.
    pub fn second_moment(&self) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => sigma * sigma,
            NoiseModel::Laplace { scale } => 2.0 * scale * scale,
            NoiseModel::PointMass => 0.0,
        }
    }

    /// Draw one variate using the provided stream.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => {
                let g: f64 = rng.sample(StandardNormal);
                sigma * g
            }
            NoiseModel::Laplace { scale } => {
                // Inverse-CDF transform of a uniform on (-1/2, 1/2).
                let u: f64 = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
            }
            NoiseModel::PointMass => 0.0,
        }
    }

    /// Draw `n` variates from a fresh ChaCha stream seeded with `seed`.
    /// The same `(seed, n)` always produces the same vector.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_with(&mut rng)).collect()
    }
}

/// How product expectations are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegrationMode {
    /// Tensor-product Gaussian quadrature (deterministic).
    Quadrature,
    /// Seeded Monte Carlo averaging.
    MonteCarlo,
}

/// Configuration of the expectation engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Nodes per quadrature axis (>= [`MIN_GH_NODES`]).
    pub gh_nodes: usize,
    /// Monte Carlo sample count (>= [`MIN_MC_SAMPLES`]).
    pub mc_samples: usize,
    /// Evaluation mode.
    pub mode: IntegrationMode,
    /// Seed for the Monte Carlo stream.
    pub seed: u64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            gh_nodes: DEFAULT_GH_NODES,
            mc_samples: DEFAULT_MC_SAMPLES,
            mode: IntegrationMode::Quadrature,
            seed: 0,
        }
    }
}

impl QuadratureConfig {
    /// Check the node and sample minima.
    pub fn validate(&self) -> Result<(), NoiseError> {
        if self.gh_nodes < MIN_GH_NODES {
            return Err(NoiseError::TooFewNodes {
                requested: self.gh_nodes,
                minimum: MIN_GH_NODES,
            });
        }
        if self.mc_samples < MIN_MC_SAMPLES {
            return Err(NoiseError::TooFewSamples {
                requested: self.mc_samples,
                minimum: MIN_MC_SAMPLES,
            });
        }
        Ok(())
    }
}

/// Eigen-decomposition of a symmetric tridiagonal matrix by the implicit QL
/// method, tracking only the first row of the eigenvector matrix (all a
/// Gaussian quadrature rule needs). `diag` holds the diagonal, `off` the
/// subdiagonal (`off[i]` couples rows `i` and `i+1`); `first_row` must be
/// the first unit vector on entry. On exit `diag` holds the eigenvalues
/// (unsorted) and `first_row` the first components of the eigenvectors.
fn symtri_eigen(diag: &mut [f64], off: &mut [f64], first_row: &mut [f64]) -> Result<(), NoiseError> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }
    // e[i] mirrors the subdiagonal with a trailing sentinel zero.
    let mut e = vec![0.0f64; n];
    e[..n - 1].copy_from_slice(&off[..n - 1]);
    for l in 0..n {
        let mut iter = 0usize;
        loop {
            // Find the first negligible subdiagonal element at or after l.
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                return Err(NoiseError::EigenFailure { index: l });
            }
            // Wilkinson shift.
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            let denom = g + if g >= 0.0 { r } else { -r };
            g = diag[m] - diag[l] + e[l] / denom;
            let mut s = 1.0f64;
            let mut c = 1.0f64;
            let mut p = 0.0f64;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                // Accumulate the rotation into the tracked first row.
                f = first_row[i + 1];
                first_row[i + 1] = s * first_row[i] + c * f;
                first_row[i] = c * first_row[i] - s * f;
            }
            if r == 0.0 && m > l + 1 {
                continue;
            }
            diag[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    off[..n - 1].copy_from_slice(&e[..n - 1]);
    Ok(())
}

/// Gauss-Hermite rule in probabilist normalization: nodes `x_i` and weights
/// `w_i` with `E[f(G)] ~= sum_i w_i f(x_i)` for `G ~ N(0,1)`. Exact for
/// polynomials of degree `2n - 1`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>), NoiseError> {
    if n < 1 {
        return Err(NoiseError::TooFewNodes {
            requested: n,
            minimum: 1,
        });
    }
    // Jacobi matrix of the probabilist Hermite polynomials: zero diagonal,
    // subdiagonal sqrt(k).
    let mut diag = vec![0.0f64; n];
    let mut off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    off.push(0.0);
    let mut first = vec![0.0f64; n];
    first[0] = 1.0;
    symtri_eigen(&mut diag, &mut off, &mut first)?;
    let mut pairs: Vec<(f64, f64)> = diag
        .iter()
        .zip(first.iter())
        .map(|(&x, &v)| (x, v * v))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize: the rule is even, so enforce exact node symmetry and
    // weight equality to keep downstream evaluations deterministic.
    let m = n / 2;
    for i in 0..m {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[m].0 = 0.0;
    }
    Ok(pairs.into_iter().unzip())
}

/// Gauss-Laguerre rule: nodes `t_i > 0` and weights `w_i` with
/// `int_0^inf e^{-t} f(t) dt ~= sum_i w_i f(t_i)`.
pub fn gauss_laguerre(n: usize) -> Result<(Vec<f64>, Vec<f64>), NoiseError> {
    if n < 1 {
        return Err(NoiseError::TooFewNodes {
            requested: n,
            minimum: 1,
        });
    }
    let mut diag: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + 1.0).collect();
    let mut off: Vec<f64> = (1..n).map(|k| k as f64).collect();
    off.push(0.0);
    let mut first = vec![0.0f64; n];
    first[0] = 1.0;
    symtri_eigen(&mut diag, &mut off, &mut first)?;
    let mut pairs: Vec<(f64, f64)> = diag
        .iter()
        .zip(first.iter())
        .map(|(&x, &v)| (x, v * v))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

/// Evaluation points `(g, z, weight)` for the product measure
/// `N(0,1) (x) P_Z` under the given configuration. Weights sum to one.
pub(crate) fn expectation_nodes(
    noise: &NoiseModel,
    cfg: &QuadratureConfig,
) -> Result<Vec<(f64, f64, f64)>, NoiseError> {
    noise.validate()?;
    cfg.validate()?;
    match cfg.mode {
        IntegrationMode::MonteCarlo => {
            let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
            let w = 1.0 / cfg.mc_samples as f64;
            Ok((0..cfg.mc_samples)
                .map(|_| {
                    let g: f64 = rng.sample(StandardNormal);
                    let z = noise.sample_with(&mut rng);
                    (g, z, w)
                })
                .collect())
        }
        IntegrationMode::Quadrature => {
            let (gx, gw) = gauss_hermite(cfg.gh_nodes)?;
            let mut nodes = Vec::new();
            match *noise {
                NoiseModel::PointMass => {
                    // The z-axis collapses; integrate over g only.
                    for (&g, &wg) in gx.iter().zip(gw.iter()) {
                        nodes.push((g, 0.0, wg));
                    }
                }
                NoiseModel::Gaussian { sigma } => {
                    for (&g, &wg) in gx.iter().zip(gw.iter()) {
                        for (&z, &wz) in gx.iter().zip(gw.iter()) {
                            nodes.push((g, sigma * z, wg * wz));
                        }
                    }
                }
                NoiseModel::Laplace { scale } => {
                    // E[h(Z)] = 1/2 int_0^inf e^{-t} (h(b t) + h(-b t)) dt:
                    // one Gauss-Laguerre axis per half-line.
                    let (lx, lw) = gauss_laguerre(cfg.gh_nodes)?;
                    for (&g, &wg) in gx.iter().zip(gw.iter()) {
                        for (&t, &wt) in lx.iter().zip(lw.iter()) {
                            nodes.push((g, scale * t, 0.5 * wg * wt));
                            nodes.push((g, -scale * t, 0.5 * wg * wt));
                        }
                    }
                }
            }
            Ok(nodes)
        }
    }
}

/// Expectation `E[h(G, Z)]` over the product of a standard Gaussian and the
/// noise law, by tensor quadrature or seeded Monte Carlo according to `cfg`.
///
/// Returns [`NoiseError::EvaluationError`] if the integrand is non-finite at
/// any evaluation point.
pub fn product_expectation<H: Fn(f64, f64) -> f64>(
    integrand: H,
    noise: &NoiseModel,
    cfg: &QuadratureConfig,
) -> Result<f64, NoiseError> {
    let nodes = expectation_nodes(noise, cfg)?;
    let mut acc = 0.0;
    for &(g, z, w) in &nodes {
        let v = integrand(g, z);
        if !v.is_finite() {
            return Err(NoiseError::EvaluationError { g, z });
        }
        acc += w * v;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hermite_small_rules_match_known_values() {
        let (x, w) = gauss_hermite(2).unwrap();
        assert_abs_diff_eq!(x[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-14);
        let (x, w) = gauss_hermite(3).unwrap();
        assert_abs_diff_eq!(x[0], -(3.0f64.sqrt()), epsilon = 1e-13);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(x[2], 3.0f64.sqrt(), epsilon = 1e-13);
        assert_abs_diff_eq!(w[1], 2.0 / 3.0, epsilon = 1e-13);
        assert_abs_diff_eq!(w[0], 1.0 / 6.0, epsilon = 1e-13);
    }

    #[test]
    fn hermite_reproduces_gaussian_moments() {
        let (x, w) = gauss_hermite(64).unwrap();
        let moment = |k: u32| -> f64 {
            x.iter()
                .zip(w.iter())
                .map(|(&xi, &wi)| wi * xi.powi(k as i32))
                .sum()
        };
        assert_abs_diff_eq!(moment(0), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(moment(1), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(moment(2), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moment(4), 3.0, epsilon = 1e-11);
        assert_abs_diff_eq!(moment(6), 15.0, epsilon = 1e-10);
        assert_abs_diff_eq!(moment(8), 105.0, epsilon = 1e-9);
    }

    #[test]
    fn laguerre_reproduces_factorials() {
        let (t, w) = gauss_laguerre(32).unwrap();
        let moment = |k: u32| -> f64 {
            t.iter()
                .zip(w.iter())
                .map(|(&ti, &wi)| wi * ti.powi(k as i32))
                .sum()
        };
        assert_abs_diff_eq!(moment(0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moment(1), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moment(2), 2.0, epsilon = 1e-11);
        assert_abs_diff_eq!(moment(3), 6.0, epsilon = 1e-10);
        assert_abs_diff_eq!(moment(5), 120.0, epsilon = 1e-8);
    }

    #[test]
    fn second_moments_match_quadrature() {
        let cfg = QuadratureConfig::default();
        for noise in [
            NoiseModel::Gaussian { sigma: 0.7 },
            NoiseModel::Laplace { scale: 1.3 },
            NoiseModel::PointMass,
        ] {
            let m2 = product_expectation(|_, z| z * z, &noise, &cfg).unwrap();
            assert_abs_diff_eq!(m2, noise.second_moment(), epsilon = 1e-10);
        }
    }

    #[test]
    fn product_expectation_separates_axes() {
        // E[g^2 z^2] = E[g^2] E[z^2] for independent axes.
        let cfg = QuadratureConfig::default();
        let noise = NoiseModel::Laplace { scale: 0.9 };
        let v = product_expectation(|g, z| g * g * z * z, &noise, &cfg).unwrap();
        assert_abs_diff_eq!(v, noise.second_moment(), epsilon = 1e-9);
    }

    #[test]
    fn monte_carlo_agrees_with_quadrature_within_three_se() {
        // Degree-4 polynomial integrand: the tensor rule is exact, so the
        // comparison isolates the Monte Carlo error.
        let noise = NoiseModel::Gaussian { sigma: 1.0 };
        let quad = QuadratureConfig::default();
        let mc = QuadratureConfig {
            mode: IntegrationMode::MonteCarlo,
            mc_samples: 200_000,
            seed: 20_260_815,
            ..QuadratureConfig::default()
        };
        let h = |g: f64, z: f64| (0.8 * g + z) * (0.8 * g + z) + 0.5 * g * g * z * z;
        let vq = product_expectation(h, &noise, &quad).unwrap();
        assert_abs_diff_eq!(vq, 1.64 + 0.5, epsilon = 1e-12);
        let nodes = expectation_nodes(&noise, &mc).unwrap();
        let n = nodes.len() as f64;
        let mean: f64 = nodes.iter().map(|&(g, z, w)| w * h(g, z)).sum();
        let var: f64 = nodes
            .iter()
            .map(|&(g, z, _)| (h(g, z) - mean) * (h(g, z) - mean))
            .sum::<f64>()
            / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(
            (vq - mean).abs() <= 3.0 * se,
            "quadrature {vq} vs monte carlo {mean} (3 se = {})",
            3.0 * se
        );
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let noise = NoiseModel::Laplace { scale: 2.0 };
        let a = noise.sample(42, 128);
        let b = noise.sample(42, 128);
        let c = noise.sample(43, 128);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(NoiseModel::PointMass.sample(1, 4), vec![0.0; 4]);
    }

    #[test]
    fn laplace_sample_moments_are_plausible() {
        let noise = NoiseModel::Laplace { scale: 1.5 };
        let xs = noise.sample(11, 200_000);
        let mean: f64 = xs.iter().sum::<f64>() / xs.len() as f64;
        let m2: f64 = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert_abs_diff_eq!(m2, noise.second_moment(), epsilon = 0.15);
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        assert!(matches!(
            NoiseModel::Gaussian { sigma: 0.0 }.validate(),
            Err(NoiseError::InvalidParameter { .. })
        ));
        assert!(matches!(
            NoiseModel::Laplace { scale: -1.0 }.validate(),
            Err(NoiseError::InvalidParameter { .. })
        ));
        let cfg = QuadratureConfig {
            gh_nodes: 4,
            ..QuadratureConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(NoiseError::TooFewNodes { .. })
        ));
        let cfg = QuadratureConfig {
            mc_samples: 100,
            ..QuadratureConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(NoiseError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let cfg = QuadratureConfig::default();
        let err = product_expectation(
            |g, _| 1.0 / (g - g), // NaN everywhere
            &NoiseModel::PointMass,
            &cfg,
        );
        assert!(matches!(err, Err(NoiseError::EvaluationError { .. })));
    }
}
