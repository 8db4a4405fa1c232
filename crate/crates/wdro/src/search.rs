//! Crate-internal one-dimensional derivative-free search.
//!
//! All minimax solves reduce to nested scalar optimizations of unimodal
//! marginals. The engine used everywhere is the same: a coarse prescan
//! (linear or geometric) locates the best cell and golden-section refines
//! it. Open brackets grow geometrically at the top when the prescan
//! optimizer lands at the upper edge, and geometric brackets can shrink at
//! the bottom when it lands at the lower edge (scale variables whose true
//! optimum sits on the open boundary). Everything is plain arithmetic on
//! `f64`, so repeated runs are bit-identical.

/// Golden-section ratio `(sqrt(5) - 1) / 2`.
pub(crate) const GOLDEN_RATIO: f64 = 0.618_033_988_749_894_8;

/// Smallest admitted left endpoint of a geometric prescan.
const LOG_FLOOR: f64 = 1e-18;

/// Spacing of the prescan grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Scale {
    Linear,
    Log,
}

/// What to do when an expanding bracket reaches its growth cap with the
/// optimum still at the top edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Exhaust {
    /// Report [`SearchFailure::Bracket`].
    Error,
    /// Refine inside the topmost cell: correct for marginals that increase
    /// toward a finite asymptote, where the cap value approximates the
    /// supremum.
    UseEdge,
}

/// A search interval plus its boundary semantics.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Span {
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
    /// Grow `hi` geometrically while the optimum sits at the top edge.
    pub expand_hi: bool,
    /// Shrink `lo` geometrically (log scale only) while the optimum sits at
    /// the bottom edge; approximates open lower boundaries like `tau > 0`.
    pub shrink_lo: bool,
    pub on_exhaust: Exhaust,
}

impl Span {
    pub(crate) fn closed(lo: f64, hi: f64, scale: Scale) -> Self {
        Span {
            lo,
            hi,
            scale,
            expand_hi: false,
            shrink_lo: false,
            on_exhaust: Exhaust::Error,
        }
    }

    pub(crate) fn open_hi(lo: f64, hi: f64, scale: Scale, on_exhaust: Exhaust) -> Self {
        Span {
            lo,
            hi,
            scale,
            expand_hi: true,
            shrink_lo: false,
            on_exhaust,
        }
    }
}

/// Tuning knobs shared by every nested search.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SearchParams {
    /// Bracket width below which golden-section refinement stops, relative
    /// to `1 + |a| + |b|`.
    pub var_tol: f64,
    /// Number of prescan points.
    pub prescan: usize,
    /// Geometric growth factor for open brackets.
    pub expand_factor: f64,
    /// Maximum total expansion of the initial upper endpoint.
    pub max_expand: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            var_tol: 1e-7,
            prescan: 32,
            expand_factor: 4.0,
            max_expand: 1e3,
        }
    }
}

/// Why a search failed.
#[derive(Debug)]
pub(crate) enum SearchFailure<E> {
    /// The optimum kept escaping through the upper edge after the maximal
    /// bracket expansion.
    Bracket { lo: f64, hi: f64 },
    /// The objective returned NaN.
    NonFinite { at: f64 },
    /// The objective itself failed.
    Inner(E),
}

fn grid(lo: f64, hi: f64, n: usize, scale: Scale) -> Vec<f64> {
    debug_assert!(n >= 2);
    match scale {
        Scale::Linear => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
        Scale::Log => {
            let lo = lo.max(LOG_FLOOR);
            let ratio = (hi / lo).max(1.0);
            (0..n)
                .map(|i| lo * ratio.powf(i as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

/// Golden-section minimization on `[a, b]`; returns the midpoint of the
/// final bracket and its value.
fn golden<E>(
    f: &mut dyn FnMut(f64) -> Result<f64, E>,
    mut a: f64,
    mut b: f64,
    var_tol: f64,
) -> Result<(f64, f64), SearchFailure<E>> {
    let eval = |x: f64, f: &mut dyn FnMut(f64) -> Result<f64, E>| -> Result<f64, SearchFailure<E>> {
        let v = f(x).map_err(SearchFailure::Inner)?;
        if v.is_nan() {
            return Err(SearchFailure::NonFinite { at: x });
        }
        Ok(v)
    };
    let mut x1 = b - GOLDEN_RATIO * (b - a);
    let mut x2 = a + GOLDEN_RATIO * (b - a);
    let mut f1 = eval(x1, f)?;
    let mut f2 = eval(x2, f)?;
    while b - a > var_tol * (1.0 + a.abs() + b.abs()) {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN_RATIO * (b - a);
            f1 = eval(x1, f)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN_RATIO * (b - a);
            f2 = eval(x2, f)?;
        }
    }
    let x = 0.5 * (a + b);
    let v = eval(x, f)?;
    Ok((x, v))
}

/// Minimize a unimodal function over the span; returns `(x, f(x))`.
pub(crate) fn minimize<E>(
    f: &mut dyn FnMut(f64) -> Result<f64, E>,
    span: &Span,
    p: &SearchParams,
) -> Result<(f64, f64), SearchFailure<E>> {
    let n = p.prescan.max(4);
    let hi0 = span.hi;
    let mut lo = span.lo;
    let mut hi = span.hi;
    loop {
        let xs = grid(lo, hi, n, span.scale);
        let mut best_i = 0usize;
        let mut best_v = f(xs[0]).map_err(SearchFailure::Inner)?;
        if best_v.is_nan() {
            return Err(SearchFailure::NonFinite { at: xs[0] });
        }
        for (i, &x) in xs.iter().enumerate().skip(1) {
            let v = f(x).map_err(SearchFailure::Inner)?;
            if v.is_nan() {
                return Err(SearchFailure::NonFinite { at: x });
            }
            if v < best_v {
                best_i = i;
                best_v = v;
            }
        }
        if span.expand_hi && best_i + 2 >= n {
            if hi < p.max_expand * hi0 {
                hi *= p.expand_factor;
                continue;
            }
            if span.on_exhaust == Exhaust::Error {
                return Err(SearchFailure::Bracket { lo, hi });
            }
            // Fall through: refine inside the topmost cells.
        } else if span.shrink_lo && span.scale == Scale::Log && best_i <= 1 && lo > LOG_FLOOR {
            lo = (lo / 64.0).max(LOG_FLOOR);
            continue;
        }
        let a = xs[best_i.saturating_sub(1)];
        let b = xs[(best_i + 1).min(n - 1)];
        return golden(f, a, b, p.var_tol);
    }
}

/// Maximize a unimodal function over the span; see [`minimize`].
pub(crate) fn maximize<E>(
    f: &mut dyn FnMut(f64) -> Result<f64, E>,
    span: &Span,
    p: &SearchParams,
) -> Result<(f64, f64), SearchFailure<E>> {
    let mut neg = |x: f64| f(x).map(|v| -v);
    let (x, v) = minimize(&mut neg, span, p)?;
    Ok((x, -v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    type NoError = std::convert::Infallible;

    fn ok(f: impl Fn(f64) -> f64) -> impl FnMut(f64) -> Result<f64, NoError> {
        move |x| Ok(f(x))
    }

    #[test]
    fn quadratic_minimum_is_found() {
        let p = SearchParams::default();
        let span = Span::closed(0.0, 10.0, Scale::Linear);
        let (x, v) = minimize(&mut ok(|x| (x - 2.0) * (x - 2.0)), &span, &p).unwrap();
        assert_abs_diff_eq!(x, 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn open_bracket_expands_to_reach_minimum() {
        let p = SearchParams::default();
        let span = Span::open_hi(0.0, 1.0, Scale::Linear, Exhaust::Error);
        let (x, _) = minimize(&mut ok(|x| (x - 40.0) * (x - 40.0)), &span, &p).unwrap();
        assert_abs_diff_eq!(x, 40.0, epsilon = 1e-5);
    }

    #[test]
    fn runaway_minimizer_reports_bracket_failure() {
        let p = SearchParams::default();
        let span = Span::open_hi(0.0, 1.0, Scale::Linear, Exhaust::Error);
        let err = minimize(&mut ok(|x| -x), &span, &p);
        assert!(matches!(err, Err(SearchFailure::Bracket { .. })));
    }

    #[test]
    fn exhausted_expansion_can_settle_on_the_edge() {
        // Increasing toward the asymptote 5: the capped edge value is within
        // a whisker of the supremum.
        let p = SearchParams::default();
        let span = Span {
            lo: 0.0,
            hi: 1.0,
            scale: Scale::Linear,
            expand_hi: true,
            shrink_lo: false,
            on_exhaust: Exhaust::UseEdge,
        };
        let (x, v) = maximize(&mut ok(|x| 5.0 - 1.0 / (1.0 + x)), &span, &p).unwrap();
        assert!(x > 900.0);
        assert!((v - 5.0).abs() < 1e-2);
    }

    #[test]
    fn log_scale_handles_wide_ranges() {
        let p = SearchParams::default();
        let span = Span::open_hi(1e-9, 30.0, Scale::Log, Exhaust::Error);
        let (x, v) = minimize(&mut ok(|x| x + 1.0 / x), &span, &p).unwrap();
        assert_abs_diff_eq!(x, 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn shrinking_lower_edge_tracks_an_open_infimum() {
        // min x over tau in (0, cap): the infimum 0 is approached at the
        // shrunken floor instead of sticking at the initial 1e-9.
        let p = SearchParams::default();
        let span = Span {
            lo: 1e-9,
            hi: 30.0,
            scale: Scale::Log,
            expand_hi: false,
            shrink_lo: true,
            on_exhaust: Exhaust::Error,
        };
        let (x, v) = minimize(&mut ok(|x| x), &span, &p).unwrap();
        assert!(x < 1e-12, "x = {x}");
        assert!(v < 1e-12, "v = {v}");
    }

    #[test]
    fn maximize_negates_consistently() {
        let p = SearchParams::default();
        let span = Span::closed(0.0, 10.0, Scale::Linear);
        let (x, v) = maximize(&mut ok(|x| 1.0 - (x - 3.0) * (x - 3.0)), &span, &p).unwrap();
        assert_abs_diff_eq!(x, 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nan_objective_is_reported() {
        let p = SearchParams::default();
        let span = Span::closed(0.0, 1.0, Scale::Linear);
        let err = minimize(&mut ok(|_| f64::NAN), &span, &p);
        assert!(matches!(err, Err(SearchFailure::NonFinite { .. })));
    }

    #[test]
    fn degenerate_interval_returns_the_single_point() {
        let p = SearchParams::default();
        let span = Span::closed(0.0, 0.0, Scale::Linear);
        let (x, v) = minimize(&mut ok(|x| x * x + 3.0), &span, &p).unwrap();
        assert_eq!(x, 0.0);
        assert_eq!(v, 3.0);
    }
}
