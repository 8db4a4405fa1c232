//! Seeded Monte Carlo validation harness.
//!
//! This module generates synthetic regression instances matching the
//! asymptotic model -- isotropic Gaussian designs with `N(0, 1/d)` entries,
//! a target with `||theta_0||^2 / d -> sigma_theta0^2`, independent noise --
//! fits each instance with the matching finite-dimensional solver from
//! [`crate::finite_sample`], and aggregates the normalized errors against
//! the prediction from [`crate::saddle_solver`].
//!
//! Every trial is seeded independently through a splitmix64 hash of
//! `(d, n, trial)` XORed with the experiment's base seed, so any single
//! trial can be reproduced in isolation, re-running an experiment is
//! bit-identical, and results do not depend on thread count or completion
//! order.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finite_sample::{self, Dataset, FitOptions, FitResult};
use crate::noise_models::QuadratureConfig;
use crate::saddle_solver::{self, Prediction, SaddleError};
use crate::scalarization::{Mode, ProblemSpec};

/// Errors produced by the experiment harness.
#[derive(Debug, Error)]
pub enum ExperimentError {
    /// The experiment description is inconsistent.
    #[error("invalid experiment: {reason}")]
    InvalidSpec { reason: String },
    /// The asymptotic prediction itself failed.
    #[error(transparent)]
    Prediction(#[from] SaddleError),
    /// More than 10% of the trials at one `(d, n)` failed to solve.
    #[error(
        "{failures} of {trials} trials failed at d = {d}, n = {n}; first failure: {first}"
    )]
    TooManyFailures {
        d: usize,
        n: usize,
        failures: usize,
        trials: usize,
        first: String,
    },
}

/// How the target vector `theta_0` is drawn.
///
/// Both styles satisfy `||theta_0||^2 / d -> sigma_theta0^2`; the sphere
/// style satisfies it exactly at every `d`, which removes one source of
/// finite-dimensional fluctuation from the measured errors, and is
/// therefore the default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theta0Style {
    /// Entries i.i.d. `N(0, sigma_theta0^2)`.
    GaussianEntries,
    /// `sigma_theta0 sqrt(d)` times a uniformly random unit vector.
    #[default]
    SphereScaled,
}

/// A batch of Monte Carlo trials for one problem over several sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// The estimation problem; its `rho` pins the admissible `(d, n)` pairs.
    pub problem: ProblemSpec,
    /// Instance sizes; every pair must satisfy `|d/n - rho| <= 1/n`.
    pub dims: Vec<(usize, usize)>,
    /// Trials per size (at least 1).
    pub trials: usize,
    /// Base seed; trial `k` at size `(d, n)` uses
    /// `base_seed ^ hash(d, n, k)`.
    pub base_seed: u64,
    /// Target-vector style.
    #[serde(default)]
    pub theta0_style: Theta0Style,
}

impl ExperimentSpec {
    /// Check the experiment invariants (including the problem's own).
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |reason: String| ExperimentError::InvalidSpec { reason };
        self.problem
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1".to_string()));
        }
        if self.dims.is_empty() {
            return Err(invalid("dims must list at least one (d, n) pair".to_string()));
        }
        for &(d, n) in &self.dims {
            if d == 0 || n == 0 {
                return Err(invalid(format!("dims entries must be positive, got ({d}, {n})")));
            }
            let ratio = d as f64 / n as f64;
            let slack = 1.0 / n as f64;
            if (ratio - self.problem.rho).abs() > slack {
                return Err(invalid(format!(
                    "dims entry ({d}, {n}) has d/n = {ratio}, which differs from rho = {} \
                     by more than 1/n = {slack}",
                    self.problem.rho
                )));
            }
        }
        if self.problem.mode == Mode::W2Dro && !(self.problem.epsilon0 > 0.0) {
            return Err(invalid(
                "mode W2_DRO needs epsilon0 > 0 to be fitted at finite n \
                 (the dual reformulation degenerates at radius zero)"
                    .to_string(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub d: usize,
    pub n: usize,
    /// Trial index within its `(d, n)` batch.
    pub trial: usize,
    /// The exact seed the trial's generator was created from.
    pub seed: u64,
    /// Normalized squared error `||theta_hat - theta_0||^2 / d`;
    /// `None` when the solve failed.
    pub error: Option<f64>,
    /// Iterations the solver consumed (0 on failure).
    pub iterations: usize,
    /// Whether a stopping rule fired before the iteration cap.
    pub converged: bool,
    /// Failure description when the solve failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Aggregated errors at one `(d, n)`.
///
/// Failed trials are excluded from the aggregates and counted in
/// `failures`. With fewer than two successes the sample deviation (and its
/// standard error) are reported as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimSummary {
    pub d: usize,
    pub n: usize,
    /// Trials that solved.
    pub successes: usize,
    /// Trials that failed (excluded from the aggregates).
    pub failures: usize,
    /// Mean normalized error over the successes.
    pub mean: f64,
    /// Sample standard deviation (denominator `successes - 1`).
    pub std: f64,
    /// Standard error of the mean, `std / sqrt(successes)`.
    pub std_err: f64,
    /// `|mean - alpha_star^2| / alpha_star^2`, or the absolute gap when the
    /// prediction is below `1e-12`.
    pub relative_gap: f64,
}

/// Full result of [`run_experiment`]: the prediction, per-size aggregates,
/// and every per-trial record (from which the aggregates are recomputable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub spec: ExperimentSpec,
    pub prediction: Prediction,
    pub dims: Vec<DimSummary>,
    pub records: Vec<TrialRecord>,
}

/// The splitmix64 finalizer-style mixer (Steele, Lea, Flood 2014).
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for trial `trial` of the `(d, n)` batch: the base seed XORed with
/// a splitmix64 chain over the three indices.
pub fn trial_seed(base_seed: u64, d: usize, n: usize, trial: usize) -> u64 {
    let mut h = splitmix64(d as u64);
    h = splitmix64(h ^ n as u64);
    h = splitmix64(h ^ trial as u64);
    base_seed ^ h
}

/// Draw one synthetic instance.
///
/// The design has i.i.d. `N(0, 1/d)` entries (filled row by row), the
/// target follows `style`, and the noise follows `problem.noise`; the
/// responses are assembled exactly as `y = A theta_0 + z`. The same
/// arguments always produce the same instance.
pub fn generate_instance(
    problem: &ProblemSpec,
    style: Theta0Style,
    d: usize,
    n: usize,
    seed: u64,
) -> Dataset {
    assert!(d >= 1 && n >= 1, "generate_instance needs d, n >= 1");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let scale = 1.0 / (d as f64).sqrt();
    let mut a = vec![0.0; n * d];
    for entry in a.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *entry = scale * g;
    }
    let mut theta0: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    match style {
        Theta0Style::GaussianEntries => {
            for t in theta0.iter_mut() {
                *t *= problem.sigma_theta0;
            }
        }
        Theta0Style::SphereScaled => {
            let norm = theta0
                .iter()
                .map(|t| t * t)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            let factor = problem.sigma_theta0 * (d as f64).sqrt() / norm;
            for t in theta0.iter_mut() {
                *t *= factor;
            }
        }
    }
    let z: Vec<f64> = (0..n).map(|_| problem.noise.sample_with(&mut rng)).collect();
    Dataset::from_parts(n, d, a, theta0, z)
        .expect("generated dimensions are consistent by construction")
}

/// Fit one generated instance with the solver matching `problem.mode`,
/// applying the mode's size scaling to the robustness radius or penalty:
/// `epsilon = epsilon0 / sqrt(n)` (order 1), `epsilon = epsilon0 / n`
/// (order 2), `lambda = d lambda0` (regularized).
fn run_trial(
    problem: &ProblemSpec,
    style: Theta0Style,
    opts: &FitOptions,
    d: usize,
    n: usize,
    trial: usize,
    seed: u64,
) -> TrialRecord {
    let data = generate_instance(problem, style, d, n, seed);
    let fitted: Result<FitResult, _> = match problem.mode {
        Mode::W1 => finite_sample::fit_w1(
            &data,
            &problem.loss,
            problem.epsilon0 / (n as f64).sqrt(),
            opts,
        ),
        Mode::W2Dro => finite_sample::fit_w2_smooth(
            &data,
            &problem.loss,
            problem.epsilon0 / n as f64,
            problem.r_theta,
            opts,
        ),
        Mode::W2DroSquared => {
            finite_sample::fit_w2_squared(&data, problem.epsilon0 / n as f64, opts)
        }
        Mode::Dre | Mode::DreSquared => finite_sample::fit_dre(
            &data,
            &problem.loss,
            d as f64 * problem.lambda0,
            problem.r_theta,
            opts,
        ),
    };
    match fitted {
        Ok(r) => TrialRecord {
            d,
            n,
            trial,
            seed,
            error: Some(r.normalized_error),
            iterations: r.iterations,
            converged: r.converged,
            failure: None,
        },
        Err(e) => TrialRecord {
            d,
            n,
            trial,
            seed,
            error: None,
            iterations: 0,
            converged: false,
            failure: Some(e.to_string()),
        },
    }
}

/// Aggregate one batch of records; errors out when more than 10% failed.
fn summarize_dim(
    d: usize,
    n: usize,
    trials: usize,
    records: &[TrialRecord],
    prediction_alpha_sq: f64,
) -> Result<DimSummary, ExperimentError> {
    let errors: Vec<f64> = records.iter().filter_map(|r| r.error).collect();
    let failures = records.len() - errors.len();
    if 10 * failures > trials {
        let first = records
            .iter()
            .find_map(|r| r.failure.clone())
            .unwrap_or_default();
        return Err(ExperimentError::TooManyFailures {
            d,
            n,
            failures,
            trials,
            first,
        });
    }
    let successes = errors.len();
    let mean = errors.iter().sum::<f64>() / successes as f64;
    let std = if successes >= 2 {
        (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
            / (successes - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    let std_err = std / (successes as f64).sqrt();
    let gap = (mean - prediction_alpha_sq).abs();
    let relative_gap = if prediction_alpha_sq > 1e-12 {
        gap / prediction_alpha_sq
    } else {
        gap
    };
    Ok(DimSummary {
        d,
        n,
        successes,
        failures,
        mean,
        std,
        std_err,
        relative_gap,
    })
}

/// Run the full experiment: predict once, then for every `(d, n)` run
/// `trials` independent seeded trials (in parallel) and aggregate.
///
/// The result is a deterministic function of `spec` and `cfg`: trials carry
/// their own seeds and are reduced in index order, never completion order.
pub fn run_experiment(
    spec: &ExperimentSpec,
    cfg: &QuadratureConfig,
) -> Result<ExperimentSummary, ExperimentError> {
    spec.validate()?;
    let prediction = saddle_solver::solve(&spec.problem, cfg)?;
    let opts = FitOptions::default();
    let mut dims = Vec::with_capacity(spec.dims.len());
    let mut records = Vec::with_capacity(spec.dims.len() * spec.trials);
    for &(d, n) in &spec.dims {
        let batch: Vec<TrialRecord> = (0..spec.trials)
            .into_par_iter()
            .map(|k| {
                run_trial(
                    &spec.problem,
                    spec.theta0_style,
                    &opts,
                    d,
                    n,
                    k,
                    trial_seed(spec.base_seed, d, n, k),
                )
            })
            .collect();
        dims.push(summarize_dim(d, n, spec.trials, &batch, prediction.alpha_star_sq)?);
        records.extend(batch);
    }
    Ok(ExperimentSummary {
        spec: spec.clone(),
        prediction,
        dims,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss_models::LossModel;
    use crate::noise_models::NoiseModel;

    fn quadrature() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn squared_problem(rho: f64, sigma: f64, epsilon0: f64) -> ProblemSpec {
        ProblemSpec {
            mode: Mode::W2DroSquared,
            loss: LossModel::Squared,
            noise: if sigma > 0.0 {
                NoiseModel::Gaussian { sigma }
            } else {
                NoiseModel::PointMass
            },
            rho,
            epsilon0,
            lambda0: 0.0,
            sigma_theta0: 1.0,
            r_theta: 4.0,
            l_lower: None,
        }
    }

    fn lad_problem(rho: f64, epsilon0: f64) -> ProblemSpec {
        ProblemSpec {
            mode: Mode::W1,
            loss: LossModel::Absolute,
            noise: NoiseModel::Gaussian { sigma: 1.0 },
            rho,
            epsilon0,
            lambda0: 0.0,
            sigma_theta0: 1.0,
            r_theta: 4.0,
            l_lower: None,
        }
    }

    #[test]
    fn sphere_scaled_norm_is_exact_at_every_d() {
        let mut problem = squared_problem(0.5, 1.0, 0.0);
        problem.sigma_theta0 = 1.7;
        for (d, n, seed) in [(7usize, 14usize, 3u64), (64, 128, 99), (301, 602, 12345)] {
            let data = generate_instance(&problem, Theta0Style::SphereScaled, d, n, seed);
            let norm_sq = data.theta0.iter().map(|t| t * t).sum::<f64>() / d as f64;
            let target = problem.sigma_theta0 * problem.sigma_theta0;
            assert!(
                ((norm_sq - target) / target).abs() < 1e-12,
                "sphere norm off at d = {d}: {norm_sq} vs {target}"
            );
        }
    }

    #[test]
    fn gaussian_entries_norm_concentrates() {
        let mut problem = squared_problem(0.5, 1.0, 0.0);
        problem.sigma_theta0 = 0.8;
        let (d, n) = (10_000usize, 20_000usize);
        let data = generate_instance(&problem, Theta0Style::GaussianEntries, d, n, 7);
        let norm_sq = data.theta0.iter().map(|t| t * t).sum::<f64>() / d as f64;
        let target = problem.sigma_theta0 * problem.sigma_theta0;
        assert!(
            ((norm_sq - target) / target).abs() < 0.05,
            "chi-square concentration violated: {norm_sq} vs {target}"
        );
    }

    #[test]
    fn design_matches_gaussian_scale_bounds() {
        let problem = squared_problem(0.01, 1.0, 0.0);
        let (d, n) = (100usize, 10_000usize);
        let data = generate_instance(&problem, Theta0Style::SphereScaled, d, n, 41);
        // Column means: each is an average of n N(0, 1/d) variables, so its
        // standard deviation is 1/sqrt(n d); allow 4 standard deviations.
        let bound = 4.0 / ((n * d) as f64).sqrt();
        for j in 0..d {
            let mean: f64 = (0..n).map(|i| data.a[i * d + j]).sum::<f64>() / n as f64;
            assert!(
                mean.abs() <= bound,
                "column {j} mean {mean} exceeds CLT bound {bound}"
            );
        }
        // The average squared entry estimates 1/d very tightly at n d = 1e6.
        let mean_sq: f64 = data.a.iter().map(|v| v * v).sum::<f64>() / (n * d) as f64;
        assert!((mean_sq * d as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn trial_seeds_are_distinct_and_base_xors_in() {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        for d in [10usize, 20, 40] {
            for n in [20usize, 40, 80] {
                for k in 0..50usize {
                    seen.insert(trial_seed(7, d, n, k));
                }
            }
        }
        assert_eq!(seen.len(), 3 * 3 * 50, "hash collisions across trial indices");
        // The base seed enters by XOR, so switching it relabels every seed
        // by the same mask.
        assert_eq!(
            trial_seed(1, 5, 10, 3) ^ trial_seed(2, 5, 10, 3),
            1 ^ 2
        );
    }

    #[test]
    fn noiseless_squared_experiment_is_exact() {
        let spec = ExperimentSpec {
            problem: squared_problem(0.5, 0.0, 0.0),
            dims: vec![(40, 80)],
            trials: 1,
            base_seed: 3,
            theta0_style: Theta0Style::SphereScaled,
        };
        let summary = run_experiment(&spec, &quadrature()).expect("noiseless run");
        assert!(summary.prediction.alpha_star_sq <= 1e-6);
        let dim = &summary.dims[0];
        assert_eq!(dim.failures, 0);
        assert!(
            dim.mean <= 1e-12,
            "noiseless interpolation should be exact, got mean {}",
            dim.mean
        );
    }

    #[test]
    fn least_squares_limit_reproduced_at_finite_d() {
        // At a vanishing radius the order-2 squared fit is least squares,
        // whose normalized error concentrates on rho sigma_z^2 / (1 - rho)
        // = 1 at rho = 1/2, sigma_z = 1.
        let spec = ExperimentSpec {
            problem: squared_problem(0.5, 1.0, 1e-12),
            dims: vec![(400, 800)],
            trials: 3,
            base_seed: 11,
            theta0_style: Theta0Style::SphereScaled,
        };
        let summary = run_experiment(&spec, &quadrature()).expect("ls-limit run");
        let dim = &summary.dims[0];
        assert_eq!(dim.failures, 0);
        assert!(
            (dim.mean - 1.0).abs() < 0.05,
            "LS-limit mean {} deviates from 1.0 by more than 5%",
            dim.mean
        );
        assert!((summary.prediction.alpha_star_sq - 1.0).abs() < 0.02);
    }

    #[test]
    fn aggregates_are_recomputable_and_trials_reproducible() {
        let spec = ExperimentSpec {
            problem: lad_problem(0.2, 0.5),
            dims: vec![(30, 150)],
            trials: 5,
            base_seed: 2024,
            theta0_style: Theta0Style::SphereScaled,
        };
        let summary = run_experiment(&spec, &quadrature()).expect("lad run");
        let dim = &summary.dims[0];

        // Recompute the aggregates from the records with the same fold.
        let errors: Vec<f64> = summary.records.iter().filter_map(|r| r.error).collect();
        assert_eq!(errors.len(), dim.successes);
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        assert_eq!(mean.to_bits(), dim.mean.to_bits(), "mean not recomputable");

        // Re-run one trial in isolation from its recorded seed.
        let rec = &summary.records[3];
        assert_eq!(rec.seed, trial_seed(2024, 30, 150, 3));
        let data = generate_instance(
            &spec.problem,
            spec.theta0_style,
            rec.d,
            rec.n,
            rec.seed,
        );
        let refit = finite_sample::fit_w1(
            &data,
            &spec.problem.loss,
            spec.problem.epsilon0 / (rec.n as f64).sqrt(),
            &FitOptions::default(),
        )
        .expect("refit");
        assert_eq!(
            refit.normalized_error.to_bits(),
            rec.error.unwrap().to_bits(),
            "isolated re-run did not reproduce the recorded error"
        );
        assert_eq!(refit.iterations, rec.iterations);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let spec = ExperimentSpec {
            problem: lad_problem(0.2, 0.5),
            dims: vec![(20, 100), (30, 150)],
            trials: 3,
            base_seed: 5,
            theta0_style: Theta0Style::GaussianEntries,
        };
        let first = run_experiment(&spec, &quadrature()).expect("first run");
        let second = run_experiment(&spec, &quadrature()).expect("second run");
        assert_eq!(first, second);
    }

    #[test]
    fn validation_rejects_bad_experiments() {
        let good = ExperimentSpec {
            problem: lad_problem(0.2, 0.5),
            dims: vec![(30, 150)],
            trials: 5,
            base_seed: 0,
            theta0_style: Theta0Style::SphereScaled,
        };
        good.validate().expect("baseline spec is valid");

        let mut bad = good.clone();
        bad.trials = 0;
        assert!(matches!(
            bad.validate(),
            Err(ExperimentError::InvalidSpec { .. })
        ));

        let mut bad = good.clone();
        bad.dims.clear();
        assert!(bad.validate().is_err());

        // d/n = 0.3 against rho = 0.2 differs by more than 1/n.
        let mut bad = good.clone();
        bad.dims = vec![(30, 100)];
        assert!(bad.validate().is_err());

        // A pair off by at most 1/n is accepted: 31/150 = 0.2067.
        let mut near = good.clone();
        near.dims = vec![(31, 150)];
        near.validate().expect("within-rounding pair accepted");

        // The order-2 smooth mode cannot be fitted at radius zero.
        let mut bad = good;
        bad.problem.mode = Mode::W2Dro;
        bad.problem.loss = LossModel::huber_default();
        bad.problem.epsilon0 = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn failure_gate_and_relative_gap_guard() {
        let rec = |trial: usize, error: Option<f64>| TrialRecord {
            d: 10,
            n: 20,
            trial,
            seed: trial as u64,
            error,
            iterations: 1,
            converged: error.is_some(),
            failure: error.is_none().then(|| "synthetic failure".to_string()),
        };

        // Exactly 10% failures pass; more than 10% error out.
        let mut records: Vec<TrialRecord> = (0..18).map(|k| rec(k, Some(2.0))).collect();
        records.push(rec(18, Some(4.0)));
        records.push(rec(19, None));
        let dim = summarize_dim(10, 20, 20, &records, 2.0).expect("10% failures pass");
        assert_eq!((dim.successes, dim.failures), (19, 1));
        // mean = (18 * 2 + 4) / 19, compared against a prediction of 2.
        let mean = (18.0 * 2.0 + 4.0) / 19.0;
        assert!((dim.mean - mean).abs() < 1e-15);
        assert!((dim.relative_gap - (mean - 2.0) / 2.0).abs() < 1e-15);
        assert!(dim.std > 0.0 && dim.std_err > 0.0);

        let records: Vec<TrialRecord> = (0..20)
            .map(|k| rec(k, (k >= 3).then_some(2.0)))
            .collect();
        let err = summarize_dim(10, 20, 20, &records, 2.0).unwrap_err();
        match err {
            ExperimentError::TooManyFailures {
                failures, trials, ..
            } => {
                assert_eq!((failures, trials), (3, 20));
            }
            other => panic!("expected TooManyFailures, got {other:?}"),
        }

        // Near-zero predictions switch the gap to absolute.
        let records: Vec<TrialRecord> = (0..3).map(|k| rec(k, Some(1e-9))).collect();
        let dim = summarize_dim(10, 20, 3, &records, 0.0).expect("zero-prediction batch");
        assert!((dim.relative_gap - 1e-9).abs() < 1e-18);
    }

    #[test]
    fn relative_gap_shrinks_as_d_grows() {
        // Convergence-in-probability diagnostic: with 20-trial batches at
        // d in {100, 200, 400}, the relative gap should not increase in at
        // least two of the three pairwise comparisons between consecutive
        // sizes (the smallest batch is noisy, so one inversion is allowed).
        let spec = ExperimentSpec {
            problem: squared_problem(0.5, 1.0, 1.0),
            dims: vec![(100, 200), (200, 400), (400, 800)],
            trials: 20,
            base_seed: 2026,
            theta0_style: Theta0Style::SphereScaled,
        };
        let summary = run_experiment(&spec, &quadrature()).expect("trend run");
        let gaps: Vec<f64> = summary.dims.iter().map(|s| s.relative_gap).collect();
        let holds = [
            gaps[1] <= gaps[0],
            gaps[2] <= gaps[1],
            gaps[2] <= gaps[0],
        ];
        let count = holds.iter().filter(|&&b| b).count();
        assert!(
            count >= 2,
            "relative gaps {gaps:?} do not trend downward (only {count} of 3 comparisons hold)"
        );
    }
}
