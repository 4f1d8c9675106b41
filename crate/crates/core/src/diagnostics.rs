//! Fractional norms and convergence verdicts for mode series.
//!
//! A series `Σ a_k` is judged by the log-log slope of its increments `a_k`
//! against `k` over the upper half of the computed modes. Slopes clearly
//! below `-1` mean convergence, slopes clearly above mean divergence, and a
//! band of width [`VERDICT_BAND`] on each side of `-1` is left undecided.

use faer::Mat;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{ou_variance_factor, Covariance, EnsembleSample};
use crate::spectral::SpectralBasis;
use crate::stats::{self, LineFit};

pub const VERDICT_BAND: f64 = 0.15;
/// Normal quantile used for slope confidence intervals.
pub const CI_Z: f64 = 1.96;
/// Fewest modes a series verdict is computed from.
pub const MIN_SERIES_MODES: usize = 100;

/// Shift `λ > 0` and exponent `α ∈ (−1, 1)` of `‖(λ − A)^α u‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracNormSpec {
    pub lambda: f64,
    pub alpha: f64,
}

impl FracNormSpec {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::NonpositiveShift(lambda));
        }
        if !(alpha > -1.0 && alpha < 1.0) {
            return Err(Error::InvalidExponent(alpha));
        }
        Ok(FracNormSpec { lambda, alpha })
    }

    /// `(λ − λ_k)^{2α}`.
    pub fn weight(&self, lambda_k: f64) -> f64 {
        (self.lambda - lambda_k).powf(2.0 * self.alpha)
    }
}

/// `sqrt(Σ_k (λ − λ_k)^{2α} c_k²)`.
pub fn frac_norm(coeffs: &[f64], spec: &FracNormSpec, b: &SpectralBasis) -> f64 {
    coeffs
        .iter()
        .zip(&b.lambdas)
        .map(|(c, &l)| spec.weight(l) * c * c)
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converging,
    Diverging,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Converging => "converging",
            Verdict::Diverging => "diverging",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Decision rule on a tail slope and its confidence interval.
pub fn classify(slope: f64, ci: (f64, f64)) -> Verdict {
    if slope < -1.0 - VERDICT_BAND && ci.1 < -1.0 {
        Verdict::Converging
    } else if slope > -1.0 + VERDICT_BAND && ci.0 > -1.0 {
        Verdict::Diverging
    } else {
        Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesVerdict {
    pub alpha: Option<f64>,
    pub increments: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub slope: f64,
    pub slope_se: f64,
    pub ci: (f64, f64),
    pub verdict: Verdict,
    /// Slopes below `thresholds.0` converge, above `thresholds.1` diverge.
    pub thresholds: (f64, f64),
}

impl SeriesVerdict {
    pub fn from_increments(increments: Vec<f64>, alpha: Option<f64>) -> Self {
        let mut acc = 0.0;
        let partial_sums = increments
            .iter()
            .map(|a| {
                acc += a;
                acc
            })
            .collect();
        let thresholds = (-1.0 - VERDICT_BAND, -1.0 + VERDICT_BAND);
        let (slope, slope_se, ci, verdict) = if increments.iter().all(|a| *a == 0.0) {
            let s = f64::NEG_INFINITY;
            (s, 0.0, (s, s), Verdict::Converging)
        } else {
            match tail_fit(&increments) {
                Some(f) => {
                    let ci = f.slope_interval(CI_Z);
                    (f.slope, f.slope_se, ci, classify(f.slope, ci))
                }
                None => (f64::NAN, f64::NAN, (f64::NAN, f64::NAN), Verdict::Inconclusive),
            }
        };
        SeriesVerdict {
            alpha,
            increments,
            partial_sums,
            slope,
            slope_se,
            ci,
            verdict,
            thresholds,
        }
    }

    pub fn total(&self) -> f64 {
        self.partial_sums.last().copied().unwrap_or(0.0)
    }

    /// `{alpha, partial_sums, slope, ci, verdict}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "alpha": self.alpha,
            "partial_sums": self.partial_sums,
            "slope": finite_or_null(self.slope),
            "slope_se": finite_or_null(self.slope_se),
            "ci": [finite_or_null(self.ci.0), finite_or_null(self.ci.1)],
            "verdict": self.verdict.as_str(),
            "thresholds": [self.thresholds.0, self.thresholds.1],
        })
    }

    /// `k,increment,partial_sum` with 1-based `k`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,increment,partial_sum\n");
        for (i, (a, p)) in self.increments.iter().zip(&self.partial_sums).enumerate() {
            s.push_str(&format!("{},{a},{p}\n", i + 1));
        }
        s
    }
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::Value::Null
    }
}

/// Log-log fit of bin-averaged increments against the bin-averaged 1-based
/// index over the upper half of the series. Bins have even width so that
/// period-two patterns (alternating vertex values) average out.
pub fn tail_fit(increments: &[f64]) -> Option<LineFit> {
    let n = increments.len();
    let lo = n / 2;
    let tail = n - lo;
    let width = 2 * (tail / 40).max(1);
    let mut ks = Vec::new();
    let mut vals = Vec::new();
    let mut i = lo;
    while i + width <= n {
        let k = (i..i + width).map(|j| (j + 1) as f64).sum::<f64>() / width as f64;
        let v = increments[i..i + width].iter().sum::<f64>() / width as f64;
        ks.push(k);
        vals.push(v);
        i += width;
    }
    stats::loglog_fit(&ks, &vals)
}

fn require_modes(b: &SpectralBasis) -> Result<()> {
    if b.n_modes() < MIN_SERIES_MODES {
        return Err(Error::InsufficientModes {
            available: b.n_modes(),
            required: MIN_SERIES_MODES,
        });
    }
    Ok(())
}

/// Closed-form `E‖Z_K(t)‖²_α` series:
/// `Σ_k (λ − λ_k)^{2α} (Lf_k)ᵀQ̃(Lf_k) (1 − e^{2λ_k t})/(−2λ_k)`.
pub fn regularity_series_k(
    b: &SpectralBasis,
    q: &Covariance,
    alpha: f64,
    t: f64,
) -> Result<SeriesVerdict> {
    require_modes(b)?;
    let spec = FracNormSpec::new(b.lambda_shift, alpha)?;
    if q.dim() != b.n_vertices() {
        return Err(Error::DimensionMismatch {
            expected: b.n_vertices(),
            found: q.dim(),
        });
    }
    let inc = (0..b.n_modes())
        .map(|k| {
            let l = b.lambdas[k];
            spec.weight(l) * q.quad(&b.vertex_traces[k]) * ou_variance_factor(l, t)
        })
        .collect();
    Ok(SeriesVerdict::from_increments(inc, Some(alpha)))
}

/// Closed-form `E‖Z(t)‖²_α` series for full vertex noise, from the map
/// coefficients `c_{jk} = ⟨D e_j, f_k⟩` computed at shift `lambda`:
/// `Σ_k (λ − λ_k)^{2α} ‖(λ − λ_k) c_{·k}‖²_Q (1 − e^{2λ_k t})/(−2λ_k)`.
pub fn regularity_series_full(
    b: &SpectralBasis,
    coeffs: &Mat<f64>,
    lambda: f64,
    q: &Covariance,
    alpha: f64,
    t: f64,
) -> Result<SeriesVerdict> {
    require_modes(b)?;
    let spec = FracNormSpec::new(lambda, alpha)?;
    if coeffs.ncols() != b.n_modes() {
        return Err(Error::DimensionMismatch {
            expected: b.n_modes(),
            found: coeffs.ncols(),
        });
    }
    if q.dim() != coeffs.nrows() {
        return Err(Error::DimensionMismatch {
            expected: coeffs.nrows(),
            found: q.dim(),
        });
    }
    let inc = (0..b.n_modes())
        .map(|k| {
            let l = b.lambdas[k];
            let g: Vec<f64> = (0..coeffs.nrows())
                .map(|j| (lambda - l) * coeffs[(j, k)])
                .collect();
            spec.weight(l) * q.quad(&g) * ou_variance_factor(l, t)
        })
        .collect();
    Ok(SeriesVerdict::from_increments(inc, Some(alpha)))
}

/// `T + Σ_{k≥2} (1 − e^{2λ_k T})/(−2λ_k)`, the integrated Hilbert–Schmidt
/// norm of the semigroup.
pub fn trace_class_check(b: &SpectralBasis, horizon: f64) -> Result<SeriesVerdict> {
    require_modes(b)?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon {horizon}")));
    }
    let inc = b
        .lambdas
        .iter()
        .map(|&l| ou_variance_factor(l, horizon))
        .collect();
    Ok(SeriesVerdict::from_increments(inc, None))
}

/// Monte Carlo estimate of the divergence threshold in `α`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum AlphaFit {
    Threshold {
        estimate: f64,
        ci: (f64, f64),
        /// `(α, tail slope)` pairs of the full ensemble.
        slopes: Vec<(f64, f64)>,
    },
    NoSignal,
}

impl AlphaFit {
    pub fn estimate(&self) -> Option<f64> {
        match self {
            AlphaFit::Threshold { estimate, .. } => Some(*estimate),
            AlphaFit::NoSignal => None,
        }
    }
}

/// Number of bootstrap resamples behind the threshold interval.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

fn threshold_from_moments(lambdas: &[f64], moments: &[f64], lambda: f64, alphas: &[f64]) -> Option<(f64, Vec<(f64, f64)>)> {
    let mut pts = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let inc: Vec<f64> = lambdas
            .iter()
            .zip(moments)
            .map(|(&l, m)| (lambda - l).powf(2.0 * a) * m)
            .collect();
        let f = tail_fit(&inc)?;
        pts.push((a, f.slope));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let fit = stats::linear_fit(&x, &y)?;
    if !(fit.slope > 0.0) {
        return None;
    }
    Some(((-1.0 - fit.intercept) / fit.slope, pts))
}

/// Fits the `α` at which the tail slope of `(λ − λ_k)^{2α} E z_k(t)²`
/// crosses `-1`, i.e. where the truncated expected norm stops converging
/// as the number of modes grows. The interval is a percentile bootstrap
/// over paths.
pub fn empirical_alpha_fit(
    sample: &EnsembleSample,
    checkpoint: usize,
    b: &SpectralBasis,
    lambda: f64,
    alphas: &[f64],
    seed: u64,
) -> Result<AlphaFit> {
    FracNormSpec::new(lambda, 0.0)?;
    for &a in alphas {
        FracNormSpec::new(lambda, a)?;
    }
    if alphas.len() < 2 {
        return Err(Error::InvalidArgument("need at least two alpha values".into()));
    }
    if sample.n_paths() < 2 {
        return Err(Error::InvalidArgument("need at least two paths".into()));
    }
    let n_modes = sample.values[0][checkpoint].len().min(b.n_modes());
    let lambdas = &b.lambdas[..n_modes];
    let moments = sample.second_moments(checkpoint).mean_square;
    if moments.iter().all(|m| *m == 0.0) {
        return Ok(AlphaFit::NoSignal);
    }
    let Some((estimate, slopes)) = threshold_from_moments(lambdas, &moments[..n_modes], lambda, alphas)
    else {
        return Ok(AlphaFit::NoSignal);
    };
    let n = sample.n_paths();
    let boot_seed = rng::derived_seed(seed, 1);
    let mut boots: Vec<f64> = (0..BOOTSTRAP_RESAMPLES as u64)
        .into_par_iter()
        .filter_map(|r| {
            let mut g = rng::stream(boot_seed, r, 0);
            let idx: Vec<usize> = (0..n).map(|_| g.random_range(0..n)).collect();
            let m = sample.second_moments_of(checkpoint, &idx).mean_square;
            threshold_from_moments(lambdas, &m[..n_modes], lambda, alphas).map(|x| x.0)
        })
        .collect();
    boots.sort_by(f64::total_cmp);
    let ci = if boots.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let q = |p: f64| boots[((p * (boots.len() - 1) as f64).round() as usize).min(boots.len() - 1)];
        (q(0.025), q(0.975))
    };
    Ok(AlphaFit::Threshold {
        estimate,
        ci,
        slopes,
    })
}

/// Ensemble `E‖Z(s+δ) − Z(s)‖²_M` against `δ`, with the fitted Hölder
/// exponent (half the log-log slope).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanSquareContinuity {
    pub deltas: Vec<f64>,
    pub mean_square: Vec<f64>,
    pub holder_exponent: f64,
}

/// `sample` must hold checkpoint `0` at time `s` followed by checkpoints
/// `s + δ_i`.
pub fn mean_square_continuity(sample: &EnsembleSample) -> Result<MeanSquareContinuity> {
    if sample.times.len() < 3 || sample.n_paths() == 0 {
        return Err(Error::InvalidArgument(
            "need a base time and at least two increments".into(),
        ));
    }
    let s = sample.times[0];
    let deltas: Vec<f64> = sample.times[1..].iter().map(|t| t - s).collect();
    let mean_square: Vec<f64> = (1..sample.times.len())
        .map(|c| {
            let d: Vec<f64> = sample
                .values
                .iter()
                .map(|p| p[c].iter().zip(&p[0]).map(|(a, b)| (a - b).powi(2)).sum())
                .collect();
            stats::mean(&d)
        })
        .collect();
    let fit = stats::loglog_fit(&deltas, &mean_square)
        .ok_or_else(|| Error::InvalidArgument("degenerate increments".into()))?;
    Ok(MeanSquareContinuity {
        deltas,
        mean_square,
        holder_exponent: fit.slope / 2.0,
    })
}
