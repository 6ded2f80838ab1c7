//! Credible intervals on the quality of a multi-run inner range.
//!
//! Modeling the accepted query values as draws from a four-parameter Beta
//! on the unknown exact interval, the probability that the ε-inflated range
//! covers the exact bounds is a ratio of integrals of a hypergeometric
//! kernel. The general case needs 2-D quadrature; a known-zero lower end or
//! known-one upper end reduces to single integrals, all-equal runs to a
//! closed form in the run count, and uniform runs to a closed form in
//! (k, ε, L).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CredibleError {
    #[error("series did not converge within the term budget")]
    NonConvergent,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("epsilon {epsilon} violates the validity conditions: {reason}")]
    InvalidEpsilon { epsilon: f64, reason: String },
    #[error("case mismatch: {0}")]
    CaseMismatch(String),
    #[error("degenerate sample: all runs equal")]
    DegenerateSample,
    #[error("target probability unreachable at any valid epsilon (best {best:.6})")]
    Unreachable { best: f64 },
}

// ---------------------------------------------------------------------------
// special functions

/// Lanczos g=7, n=9 approximation of ln Γ(x), x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection: Γ(x)Γ(1−x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Digamma via recurrence to x ≥ 6 plus the asymptotic series.
pub fn digamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + x.ln()
        - 0.5 * inv
        - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0))))
}

/// Trigamma via recurrence to x ≥ 6 plus the asymptotic series.
pub fn trigamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 6.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        * (1.0
            + inv * (0.5
                + inv * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))))
}

// ---------------------------------------------------------------------------
// Gauss hypergeometric function

const SERIES_BUDGET: usize = 100_000;
const SERIES_CUTOFF: f64 = 1e-14;

fn is_nonpositive_integer(v: f64) -> bool {
    v <= 1e-12 && (v - v.round()).abs() < 1e-12
}

fn series_2f1(p: f64, q: f64, r: f64, z: f64) -> Result<f64, CredibleError> {
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for n in 0..SERIES_BUDGET {
        let nf = n as f64;
        term *= (p + nf) * (q + nf) / ((r + nf) * (nf + 1.0)) * z;
        sum += term;
        if term == 0.0 || term.abs() <= SERIES_CUTOFF * sum.abs() {
            return Ok(sum);
        }
    }
    Err(CredibleError::NonConvergent)
}

/// ₂F₁(p, q; r; z) for z ∈ [0, 1], with z = 1 requiring r − p − q > 0.
///
/// Power series for z ≤ 1/2; for larger z the argument is mapped to 1 − z:
/// through the incomplete-beta connection when r = p + 1 (the shape every
/// caller in this crate uses), through the Gauss summation at z = 1, and
/// through the standard two-term linear transformation otherwise.
pub fn hyp2f1(p: f64, q: f64, r: f64, z: f64) -> Result<f64, CredibleError> {
    if !is_nonpositive_integer(p) && !is_nonpositive_integer(q) && is_nonpositive_integer(r) {
        return Err(CredibleError::InvalidArgument(format!(
            "r = {r} is a non-positive integer"
        )));
    }
    if !(-1.0..=1.0).contains(&z) {
        return Err(CredibleError::InvalidArgument(format!(
            "z = {z} outside [-1, 1]"
        )));
    }
    // terminating polynomial when p or q is a non-positive integer
    if is_nonpositive_integer(p) || is_nonpositive_integer(q) {
        return series_2f1(p, q, r, z);
    }
    if z <= 0.5 {
        return series_2f1(p, q, r, z);
    }
    let beta_exp = r - p - q;
    if (z - 1.0).abs() < 1e-15 {
        if beta_exp <= 0.0 {
            return Err(CredibleError::NonConvergent);
        }
        // Gauss: Γ(r)Γ(r−p−q) / (Γ(r−p)Γ(r−q))
        return Ok(
            (ln_gamma(r) + ln_gamma(beta_exp) - ln_gamma(r - p) - ln_gamma(r - q)).exp(),
        );
    }
    if (r - (p + 1.0)).abs() < 1e-12 && q < 1.0 && p > 0.0 {
        // incomplete-beta connection: z^p F(p, 1−β; p+1; z) / p = B_z(p, β)
        // with β = 1 − q, and B_z(p, β) = B(p, β) − B_{1−z}(β, p).
        let alpha = p;
        let beta = 1.0 - q;
        let tail = series_2f1(beta, 1.0 - alpha, beta + 1.0, 1.0 - z)?;
        let b_tail = (1.0 - z).powf(beta) / beta * tail;
        let b_full = ln_beta(alpha, beta).exp();
        return Ok(alpha * (b_full - b_tail) / z.powf(alpha));
    }
    // two-term 1−z transformation; the pole at integer r−p−q does not occur
    // in this crate's call family
    if (beta_exp - beta_exp.round()).abs() < 1e-9 {
        return Err(CredibleError::NonConvergent);
    }
    let w = 1.0 - z;
    let t1 = (ln_gamma(r) + ln_gamma(beta_exp) - ln_gamma(r - p) - ln_gamma(r - q)).exp()
        * series_2f1(p, q, 1.0 - beta_exp, w)?;
    let t2 = (ln_gamma(r) + ln_gamma(-beta_exp) - ln_gamma(p) - ln_gamma(q)).exp()
        * w.powf(beta_exp)
        * series_2f1(r - p, r - q, 1.0 + beta_exp, w)?;
    Ok(t1 + t2)
}

// ---------------------------------------------------------------------------
// quadrature

const QUAD_REL_TOL: f64 = 1e-7;
const QUAD_MAX_DEPTH: u32 = 40;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth >= QUAD_MAX_DEPTH || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
        + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)
}

/// Adaptive Simpson with local relative tolerance [`QUAD_REL_TOL`].
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    let tol = QUAD_REL_TOL * whole.abs().max(1e-300);
    adaptive_step(&f, a, b, fa, fm, fb, whole, tol, 0)
}

// ---------------------------------------------------------------------------
// coverage machinery

/// Fitted Beta shape with the support the samples were rescaled onto.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct BetaFit {
    pub alpha: f64,
    pub beta: f64,
    pub support: (f64, f64),
}

/// Range statistics of a run collection plus the inflation factor ε.
#[derive(Debug, Clone, Copy)]
pub struct CoverageQuery {
    pub a: f64,
    pub b: f64,
    pub k: usize,
    pub epsilon: f64,
}

impl CoverageQuery {
    pub fn new(a: f64, b: f64, k: usize, epsilon: f64) -> Result<Self, CredibleError> {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
            return Err(CredibleError::InvalidArgument(format!(
                "range [{a}, {b}] outside the unit interval"
            )));
        }
        if k < 1 {
            return Err(CredibleError::InvalidArgument("k must be ≥ 1".into()));
        }
        if epsilon < 0.0 {
            return Err(CredibleError::InvalidArgument(
                "epsilon must be ≥ 0".into(),
            ));
        }
        Ok(CoverageQuery { a, b, k, epsilon })
    }

    pub fn from_rho(rho: &[f64], epsilon: f64) -> Result<Self, CredibleError> {
        if rho.is_empty() {
            return Err(CredibleError::InvalidArgument(
                "empty run collection".into(),
            ));
        }
        let a = rho.iter().copied().fold(f64::INFINITY, f64::min);
        let b = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(a, b, rho.len(), epsilon)
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    /// Numerator half-widths (δ_a, δ_b): 2Lε until the known sign
    /// constraints a* ≥ 0 and b* ≤ 1 cap them at 2a and 2(1−b).
    pub fn deltas(&self) -> (f64, f64) {
        let l = self.width();
        let delta_a = if self.epsilon <= self.a / l {
            2.0 * l * self.epsilon
        } else {
            2.0 * self.a
        };
        let delta_b = if self.epsilon <= (1.0 - self.b) / l {
            2.0 * l * self.epsilon
        } else {
            2.0 * (1.0 - self.b)
        };
        (delta_a, delta_b)
    }

    fn check_validity(&self) -> Result<(f64, f64), CredibleError> {
        let l = self.width();
        let (da, db) = self.deltas();
        if db > 1.0 - l + 1e-12 {
            return Err(CredibleError::InvalidEpsilon {
                epsilon: self.epsilon,
                reason: format!("δ_b = {db} exceeds 1 − L = {}", 1.0 - l),
            });
        }
        if da > 2.0 * (1.0 - l) - db + 1e-12 {
            return Err(CredibleError::InvalidEpsilon {
                epsilon: self.epsilon,
                reason: format!(
                    "δ_a = {da} exceeds 2(1−L) − δ_b = {}",
                    2.0 * (1.0 - l) - db
                ),
            });
        }
        Ok((da, db))
    }
}

/// P(all k samples fall inside the range | endpoint errors x, y): the
/// regularized incomplete-beta increment over the range, written through
/// the hypergeometric form and raised to the k-th power.
fn kernel_2d(x: f64, y: f64, l: f64, alpha: f64, beta: f64, k: usize) -> f64 {
    let s = l + x + y;
    let z1 = ((l + x) / s).min(1.0);
    let z2 = (x / s).min(1.0);
    let f1 = hyp2f1(alpha, 1.0 - beta, alpha + 1.0, z1).expect("kernel 2F1");
    let f2 = hyp2f1(alpha, 1.0 - beta, alpha + 1.0, z2).expect("kernel 2F1");
    let val = (z1.powf(alpha) * f1 - z2.powf(alpha) * f2) / (alpha * ln_beta(alpha, beta).exp());
    val.clamp(0.0, 1.0).powi(k as i32)
}

/// Probability that the ε-inflated range covers the exact interval,
/// P(a − εL ≤ a* ≤ b* ≤ b + εL | ρ), for ranges strictly inside (0, 1).
pub fn coverage_probability(query: &CoverageQuery, fit: &BetaFit) -> Result<f64, CredibleError> {
    let (a, b, l) = (query.a, query.b, query.width());
    if l <= 0.0 || l >= 1.0 {
        return Err(CredibleError::CaseMismatch(format!(
            "interior case needs 0 < L < 1, got L = {l}"
        )));
    }
    if a <= 0.0 || b >= 1.0 {
        return Err(CredibleError::CaseMismatch(
            "a = 0 or b = 1: use edge_coverage".into(),
        ));
    }
    let (da, db) = query.check_validity()?;
    let (alpha, beta, k) = (fit.alpha, fit.beta, query.k);

    let numerator = integrate(
        |y| integrate(|x| kernel_2d(x, y, l, alpha, beta, k), 0.0, da / 2.0),
        0.0,
        db / 2.0,
    );
    let t = a + (1.0 - b);
    let denominator = integrate(
        |y| integrate(|x| kernel_2d(x, y, l, alpha, beta, k), 0.0, t - y),
        0.0,
        t,
    );
    if denominator <= 0.0 {
        return Err(CredibleError::InvalidArgument(
            "degenerate denominator in coverage integral".into(),
        ));
    }
    Ok((numerator / denominator).clamp(0.0, 1.0))
}

/// Which endpoint of the range is pinned by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeCase {
    /// a = 0, hence a* = 0: only the upper end is uncertain.
    AZero,
    /// b = 1, hence b* = 1: only the lower end is uncertain.
    BOne,
}

/// Single-integral coverage for ranges touching 0 or 1.
pub fn edge_coverage(
    query: &CoverageQuery,
    fit: &BetaFit,
    case: EdgeCase,
) -> Result<f64, CredibleError> {
    let (a, b, l) = (query.a, query.b, query.width());
    if l <= 0.0 || l >= 1.0 {
        return Err(CredibleError::CaseMismatch(format!(
            "edge case needs 0 < L < 1, got L = {l}"
        )));
    }
    let (alpha, beta, k) = (fit.alpha, fit.beta, query.k);
    match case {
        EdgeCase::AZero => {
            if a.abs() > 1e-12 {
                return Err(CredibleError::CaseMismatch(format!("a = {a} is not 0")));
            }
            // kernel: I_{L/(L+y)}(α, β)^k
            let kernel = |y: f64| {
                let z = (l / (l + y)).min(1.0);
                let f = hyp2f1(alpha, 1.0 - beta, alpha + 1.0, z).expect("kernel 2F1");
                let val = z.powf(alpha) * f / (alpha * ln_beta(alpha, beta).exp());
                val.clamp(0.0, 1.0).powi(k as i32)
            };
            let half_delta = (l * query.epsilon).min(1.0 - b);
            let numerator = integrate(kernel, 0.0, half_delta);
            let denominator = integrate(kernel, 0.0, 1.0 - b);
            if denominator <= 0.0 {
                return Err(CredibleError::InvalidArgument(
                    "degenerate denominator in coverage integral".into(),
                ));
            }
            Ok((numerator / denominator).clamp(0.0, 1.0))
        }
        EdgeCase::BOne => {
            if (b - 1.0).abs() > 1e-12 {
                return Err(CredibleError::CaseMismatch(format!("b = {b} is not 1")));
            }
            // kernel: (1 − I_{x/(L+x)}(α, β))^k — the same hypergeometric
            // difference with the upper-end error pinned to zero
            let kernel = |x: f64| kernel_2d(x, 0.0, l, alpha, beta, k);
            let half_delta = (l * query.epsilon).min(a);
            let numerator = integrate(kernel, 0.0, half_delta);
            let denominator = integrate(kernel, 0.0, a);
            if denominator <= 0.0 {
                return Err(CredibleError::InvalidArgument(
                    "degenerate denominator in coverage integral".into(),
                ));
            }
            Ok((numerator / denominator).clamp(0.0, 1.0))
        }
    }
}

/// P(a* = b* | all k runs equal) = 1 + 9/3^k − 8/2^k, clamped to [0, 1].
pub fn identifiability_probability(k: usize) -> f64 {
    let kf = k as i32;
    (1.0 + 9.0 / 3.0f64.powi(kf) - 8.0 / 2.0f64.powi(kf)).clamp(0.0, 1.0)
}

/// Closed-form coverage for uniformly distributed runs (shape α = β = 1):
/// [1 + (1+2ε)^{2−k} − 2(1+ε)^{2−k}] / [(1 − L^{k−2}) − (k−2)(1−L)L^{k−2}].
pub fn uniform_coverage(k: usize, epsilon: f64, l: f64) -> Result<f64, CredibleError> {
    if k < 3 {
        return Err(CredibleError::InvalidArgument("k must be ≥ 3".into()));
    }
    if !(0.0 < l && l < 1.0) {
        return Err(CredibleError::InvalidArgument(format!(
            "L = {l} outside (0, 1)"
        )));
    }
    let e = 2.0 - k as f64;
    let numerator = 1.0 + (1.0 + 2.0 * epsilon).powf(e) - 2.0 * (1.0 + epsilon).powf(e);
    let km2 = k as f64 - 2.0;
    let denominator = (1.0 - l.powf(km2)) - km2 * (1.0 - l) * l.powf(km2);
    Ok((numerator / denominator).clamp(0.0, 1.0))
}

/// Endpoint clip applied before the Beta fit, guarding the log-likelihood
/// against samples exactly on the support boundary.
const FIT_CLIP: f64 = 1e-6;
const SHAPE_MIN: f64 = 1e-3;
const SHAPE_MAX: f64 = 1e6;

/// Maximum-likelihood Beta shape for the runs rescaled onto the ε-inflated
/// support [a − εL, b + εL]; Newton iteration from a method-of-moments
/// start.
pub fn fit_beta(rho: &[f64], epsilon: f64) -> Result<BetaFit, CredibleError> {
    if rho.len() < 2 {
        return Err(CredibleError::InvalidArgument(
            "need at least two runs to fit".into(),
        ));
    }
    let a = rho.iter().copied().fold(f64::INFINITY, f64::min);
    let b = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if b - a < 1e-15 {
        return Err(CredibleError::DegenerateSample);
    }
    let l = b - a;
    let lo = a - epsilon * l;
    let hi = b + epsilon * l;
    let width = hi - lo;
    let t: Vec<f64> = rho
        .iter()
        .map(|&p| ((p - lo) / width).clamp(FIT_CLIP, 1.0 - FIT_CLIP))
        .collect();

    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n;
    let (mut alpha, mut beta) = if var > 1e-12 {
        let common = (mean * (1.0 - mean) / var - 1.0).max(SHAPE_MIN);
        (mean * common, (1.0 - mean) * common)
    } else {
        (1.0, 1.0)
    };
    alpha = alpha.clamp(SHAPE_MIN, SHAPE_MAX);
    beta = beta.clamp(SHAPE_MIN, SHAPE_MAX);

    let s1 = t.iter().map(|&v| v.ln()).sum::<f64>() / n;
    let s2 = t.iter().map(|&v| (1.0 - v).ln()).sum::<f64>() / n;

    for _ in 0..200 {
        let psi_ab = digamma(alpha + beta);
        let g1 = digamma(alpha) - psi_ab - s1;
        let g2 = digamma(beta) - psi_ab - s2;
        if g1.abs() < 1e-12 && g2.abs() < 1e-12 {
            break;
        }
        let tri_ab = trigamma(alpha + beta);
        let j11 = trigamma(alpha) - tri_ab;
        let j22 = trigamma(beta) - tri_ab;
        let j12 = -tri_ab;
        let det = j11 * j22 - j12 * j12;
        if det.abs() < 1e-300 {
            break;
        }
        let mut da = -(g1 * j22 - g2 * j12) / det;
        let mut db = -(g2 * j11 - g1 * j12) / det;
        // damp steps that would leave the positive quadrant
        while alpha + da <= 0.0 || beta + db <= 0.0 {
            da *= 0.5;
            db *= 0.5;
        }
        alpha += da;
        beta += db;
        if da.abs() < 1e-13 * alpha && db.abs() < 1e-13 * beta {
            break;
        }
    }
    Ok(BetaFit {
        alpha: alpha.clamp(SHAPE_MIN, SHAPE_MAX),
        beta: beta.clamp(SHAPE_MIN, SHAPE_MAX),
        support: (lo, hi),
    })
}

/// Coverage of a run collection at a given ε, dispatching on the range
/// shape (interior, edge, or degenerate).
pub fn coverage_for_rho(rho: &[f64], epsilon: f64) -> Result<f64, CredibleError> {
    let q = CoverageQuery::from_rho(rho, epsilon)?;
    let (a, b) = (q.a, q.b);
    if (b - a).abs() < 1e-15 {
        return Ok(identifiability_probability(q.k));
    }
    if a <= 1e-12 && b >= 1.0 - 1e-12 {
        return Ok(1.0);
    }
    let fit = fit_beta(rho, epsilon)?;
    if a <= 1e-12 {
        edge_coverage(&q, &fit, EdgeCase::AZero)
    } else if b >= 1.0 - 1e-12 {
        edge_coverage(&q, &fit, EdgeCase::BOne)
    } else {
        coverage_probability(&q, &fit)
    }
}

/// Largest ε that still satisfies the validity conditions (the valid set is
/// an interval starting at 0, and the δ caps make coverage constant past
/// the saturation point).
fn max_valid_epsilon(rho: &[f64]) -> f64 {
    let a = rho.iter().copied().fold(f64::INFINITY, f64::min);
    let b = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let l = b - a;
    if a <= 1e-12 || b >= 1.0 - 1e-12 {
        // edge formulas saturate once δ/2 reaches the integration limit
        return (a.max(1.0 - b) / l).max(1e-6);
    }
    let saturation = a.max(1.0 - b) / l;
    let valid = |eps: f64| {
        CoverageQuery::new(a, b, rho.len().max(1), eps)
            .map(|q| q.check_validity().is_ok())
            .unwrap_or(false)
    };
    if valid(saturation) {
        return saturation;
    }
    let (mut lo, mut hi) = (0.0, saturation);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if valid(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Smallest ε whose coverage reaches `target_p`, bisected to 1e-4 over the
/// valid range. Coverage is monotone in ε, so bisection is exact up to the
/// tolerance.
pub fn epsilon_star(rho: &[f64], target_p: f64) -> Result<f64, CredibleError> {
    if !(0.0 < target_p && target_p < 1.0) {
        return Err(CredibleError::InvalidArgument(format!(
            "target probability {target_p} outside (0, 1)"
        )));
    }
    let q = CoverageQuery::from_rho(rho, 0.0)?;
    if q.width() < 1e-15 {
        // all runs equal: coverage does not depend on ε
        if identifiability_probability(q.k) >= target_p {
            return Ok(0.0);
        }
        return Err(CredibleError::Unreachable {
            best: identifiability_probability(q.k),
        });
    }
    if q.a <= 1e-12 && q.b >= 1.0 - 1e-12 {
        return Ok(0.0);
    }
    let hi = max_valid_epsilon(rho);
    let best = coverage_for_rho(rho, hi)?;
    if best < target_p {
        return Err(CredibleError::Unreachable { best });
    }
    let (mut lo, mut hi) = (0.0, hi);
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if coverage_for_rho(rho, mid)? >= target_p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Beta as BetaDist, Distribution};

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(2.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(5.0), 24.0f64.ln(), epsilon = 1e-11);
        assert_abs_diff_eq!(
            ln_gamma(0.5),
            std::f64::consts::PI.sqrt().ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn digamma_and_trigamma_known_values() {
        // ψ(1) = −γ, ψ'(1) = π²/6
        assert_abs_diff_eq!(digamma(1.0), -0.5772156649015329, epsilon = 1e-10);
        assert_abs_diff_eq!(
            trigamma(1.0),
            std::f64::consts::PI.powi(2) / 6.0,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(digamma(2.0), digamma(1.0) + 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hyp2f1_at_zero_is_one() {
        assert_abs_diff_eq!(hyp2f1(0.7, -0.3, 1.7, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn hyp2f1_log_identity() {
        // ₂F₁(1, 1; 2; z) = −ln(1−z)/z
        assert_abs_diff_eq!(
            hyp2f1(1.0, 1.0, 2.0, 0.5).unwrap(),
            2.0 * 2.0f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn hyp2f1_at_one_matches_gauss_sum() {
        // F(α, 1−β; α+1; 1) = α B(α, β) for β > 0
        for &(alpha, beta) in &[(0.7, 2.3), (1.5, 0.4), (3.0, 1.0)] {
            let got = hyp2f1(alpha, 1.0 - beta, alpha + 1.0, 1.0).unwrap();
            let want = alpha * ln_beta(alpha, beta).exp();
            assert_abs_diff_eq!(got, want, epsilon = 1e-10 * want.abs());
        }
    }

    /// Long-series oracle with compensated summation; valid for z well
    /// inside the unit disk.
    fn series_oracle(p: f64, q: f64, r: f64, z: f64) -> f64 {
        let mut sum = 1.0f64;
        let mut comp = 0.0f64;
        let mut term = 1.0f64;
        for n in 0..1_000_000u64 {
            let nf = n as f64;
            term *= (p + nf) * (q + nf) / ((r + nf) * (nf + 1.0)) * z;
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            if term.abs() < 1e-305 {
                break;
            }
        }
        sum
    }

    #[test]
    fn hyp2f1_matches_long_series_oracle() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..60 {
            let alpha = rng.random_range(0.2..4.0);
            let beta = rng.random_range(0.2..4.0);
            let z = rng.random_range(0.0..0.85);
            let got = hyp2f1(alpha, 1.0 - beta, alpha + 1.0, z).unwrap();
            let want = series_oracle(alpha, 1.0 - beta, alpha + 1.0, z);
            assert!(
                (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                "2F1({alpha},{},{},{z}): {got} vs {want}",
                1.0 - beta,
                alpha + 1.0
            );
        }
    }

    #[test]
    fn coverage_zero_epsilon_is_zero() {
        let q = CoverageQuery::new(0.3, 0.6, 10, 0.0).unwrap();
        let fit = BetaFit {
            alpha: 1.0,
            beta: 1.0,
            support: (0.3, 0.6),
        };
        let p = coverage_probability(&q, &fit).unwrap();
        assert_abs_diff_eq!(p, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn coverage_matches_uniform_closed_form() {
        for &k in &[5usize, 10, 25] {
            for &l in &[0.3, 0.5] {
                for &eps in &[0.05, 0.1, 0.2] {
                    let a = (1.0 - l) / 2.0;
                    let b = a + l;
                    let q = CoverageQuery::new(a, b, k, eps).unwrap();
                    let fit = BetaFit {
                        alpha: 1.0,
                        beta: 1.0,
                        support: (a, b),
                    };
                    let got = coverage_probability(&q, &fit).unwrap();
                    let want = uniform_coverage(k, eps, l).unwrap();
                    assert_abs_diff_eq!(got, want, epsilon = 1e-4);
                }
            }
        }
    }

    #[test]
    fn coverage_is_monotone_in_epsilon() {
        let fit = BetaFit {
            alpha: 2.0,
            beta: 1.5,
            support: (0.0, 1.0),
        };
        let mut last = -1.0;
        for i in 0..10 {
            let eps = 0.02 * i as f64;
            let q = CoverageQuery::new(0.3, 0.65, 8, eps).unwrap();
            let p = coverage_probability(&q, &fit).unwrap();
            assert!(p >= last - 1e-9, "coverage decreased at eps={eps}");
            last = p;
        }
    }

    #[test]
    fn monte_carlo_oracle_agrees_interior() {
        // generative model behind the formula: endpoint errors uniform on
        // the triangle, k Beta draws on the shifted support, conditioned on
        // all draws landing inside [a, b]
        let (a, b, k, eps) = (0.3, 0.7, 6usize, 0.12);
        let q = CoverageQuery::new(a, b, k, eps).unwrap();
        let (alpha, beta) = (1.6, 2.4);
        let fit = BetaFit {
            alpha,
            beta,
            support: (a, b),
        };
        let want = coverage_probability(&q, &fit).unwrap();

        let mut rng = StdRng::seed_from_u64(2024);
        let dist = BetaDist::new(alpha, beta).unwrap();
        let t = a + (1.0 - b);
        let (da, db) = q.deltas();
        let mut hits = 0u64;
        let mut in_rect = 0u64;
        for _ in 0..400_000 {
            let (mut x, mut y) = (rng.random::<f64>() * t, rng.random::<f64>() * t);
            if x + y > t {
                x = t - x;
                y = t - y;
            }
            let (lo, hi) = (a - x, b + y);
            let all_inside = (0..k).all(|_| {
                let v = lo + (hi - lo) * dist.sample(&mut rng);
                (a..=b).contains(&v)
            });
            if all_inside {
                hits += 1;
                if x <= da / 2.0 && y <= db / 2.0 {
                    in_rect += 1;
                }
            }
        }
        let got = in_rect as f64 / hits as f64;
        let se = (got * (1.0 - got) / hits as f64).sqrt();
        assert!(
            (got - want).abs() <= 3.0 * se + 1e-4,
            "MC {got} vs quadrature {want} (3se = {})",
            3.0 * se
        );
    }

    #[test]
    fn edge_coverage_zero_epsilon_and_limit() {
        let fit = BetaFit {
            alpha: 1.3,
            beta: 2.1,
            support: (0.0, 0.6),
        };
        let q = CoverageQuery::new(0.0, 0.6, 9, 0.0).unwrap();
        assert_abs_diff_eq!(
            edge_coverage(&q, &fit, EdgeCase::AZero).unwrap(),
            0.0,
            epsilon = 1e-12
        );

        // full 2-D coverage approaches the single-integral value as a → 0
        let eps = 0.08;
        let edge_q = CoverageQuery::new(0.0, 0.6, 9, eps).unwrap();
        let edge = edge_coverage(&edge_q, &fit, EdgeCase::AZero).unwrap();
        let mut prev_err = f64::INFINITY;
        for &a in &[1e-2, 1e-3, 1e-4] {
            let q = CoverageQuery::new(a, 0.6 + a, 9, eps).unwrap();
            let full = coverage_probability(&q, &fit).unwrap();
            let err = (full - edge).abs();
            assert!(err <= prev_err + 1e-6);
            prev_err = err;
        }
        assert!(prev_err <= 1e-3, "limit gap {prev_err}");
    }

    #[test]
    fn b_one_mirrors_a_zero() {
        // remapping π → 1−π swaps the cases and the Beta shapes
        let (l, k, eps) = (0.55, 7usize, 0.1);
        let (alpha, beta) = (1.8, 0.9);
        let qa = CoverageQuery::new(0.0, l, k, eps).unwrap();
        let fa = BetaFit {
            alpha,
            beta,
            support: (0.0, l),
        };
        let a_zero = edge_coverage(&qa, &fa, EdgeCase::AZero).unwrap();

        let qb = CoverageQuery::new(1.0 - l, 1.0, k, eps).unwrap();
        let fb = BetaFit {
            alpha: beta,
            beta: alpha,
            support: (1.0 - l, 1.0),
        };
        let b_one = edge_coverage(&qb, &fb, EdgeCase::BOne).unwrap();
        assert_abs_diff_eq!(a_zero, b_one, epsilon = 1e-6);
    }

    #[test]
    fn identifiability_formula() {
        assert_abs_diff_eq!(identifiability_probability(1), 0.0);
        assert_abs_diff_eq!(identifiability_probability(2), 0.0, epsilon = 1e-12);
        // direct evaluation: 1 + 9/3^10 − 8/2^10
        assert_abs_diff_eq!(
            identifiability_probability(10),
            0.9923399157892384,
            epsilon = 1e-12
        );
        assert!(identifiability_probability(1000) > 1.0 - 1e-12);
        let mut last = identifiability_probability(2);
        for k in 3..40 {
            let p = identifiability_probability(k);
            assert!(p > last, "not increasing at k={k}");
            last = p;
        }
    }

    #[test]
    fn uniform_coverage_closed_form() {
        assert_abs_diff_eq!(
            uniform_coverage(5, 0.0, 0.4).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        // Monte-Carlo oracle with uniform runs
        let (k, eps, l) = (6usize, 0.15, 0.5);
        let want = uniform_coverage(k, eps, l).unwrap();
        let (a, b) = (0.25, 0.75);
        let t = a + (1.0 - b);
        let mut rng = StdRng::seed_from_u64(77);
        let (mut hits, mut in_rect) = (0u64, 0u64);
        for _ in 0..400_000 {
            let (mut x, mut y) = (rng.random::<f64>() * t, rng.random::<f64>() * t);
            if x + y > t {
                x = t - x;
                y = t - y;
            }
            let (lo, hi) = (a - x, b + y);
            let all_inside = (0..k).all(|_| {
                let v = lo + (hi - lo) * rng.random::<f64>();
                (a..=b).contains(&v)
            });
            if all_inside {
                hits += 1;
                if x <= l * eps && y <= l * eps {
                    in_rect += 1;
                }
            }
        }
        let got = in_rect as f64 / hits as f64;
        let se = (got * (1.0 - got) / hits as f64).sqrt();
        assert!((got - want).abs() <= 3.0 * se + 1e-4);
    }

    #[test]
    fn beta_fit_recovers_shapes() {
        let mut rng = StdRng::seed_from_u64(5);
        // symmetric sample around the support midpoint: α ≈ β
        let sym: Vec<f64> = (0..2000)
            .map(|_| {
                let u: f64 = rng.random();
                0.2 + 0.6 * u
            })
            .collect();
        let fit = fit_beta(&sym, 0.0).unwrap();
        assert!((fit.alpha - fit.beta).abs() < 0.1 * fit.alpha);

        // uniform draws recover α ≈ β ≈ 1
        let unif: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let fit = fit_beta(&unif, 0.0).unwrap();
        assert!(fit.alpha > 0.95 && fit.alpha < 1.05, "alpha = {}", fit.alpha);
        assert!(fit.beta > 0.95 && fit.beta < 1.05, "beta = {}", fit.beta);

        // Beta(2, 5) recovered within 5%; pad the sample with points near
        // the true support ends so the rescaling window is [0, 1]
        let dist = BetaDist::new(2.0, 5.0).unwrap();
        let mut sample: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
        sample.push(1e-4);
        sample.push(0.9999);
        let fit = fit_beta(&sample, 0.0).unwrap();
        assert!((fit.alpha - 2.0).abs() < 0.1, "alpha = {}", fit.alpha);
        assert!((fit.beta - 5.0).abs() < 0.25, "beta = {}", fit.beta);

        // degenerate sample rejected
        assert_eq!(
            fit_beta(&[0.4, 0.4, 0.4], 0.1).unwrap_err(),
            CredibleError::DegenerateSample
        );
    }

    #[test]
    fn epsilon_star_bisection_matches_grid_scan() {
        let mut rng = StdRng::seed_from_u64(9);
        let rho: Vec<f64> = (0..40).map(|_| 0.35 + 0.3 * rng.random::<f64>()).collect();
        let target = 0.99;
        let star = epsilon_star(&rho, target).unwrap();

        // dense scan oracle at the bisection tolerance
        let mut grid_star = None;
        let mut eps = 0.0;
        while eps <= max_valid_epsilon(&rho) {
            if coverage_for_rho(&rho, eps).unwrap() >= target {
                grid_star = Some(eps);
                break;
            }
            eps += 1e-4;
        }
        let grid_star = grid_star.expect("grid scan found no epsilon");
        assert!(
            (star - grid_star).abs() <= 2e-4,
            "bisection {star} vs grid {grid_star}"
        );

        // monotone in the target
        let star90 = epsilon_star(&rho, 0.90).unwrap();
        assert!(star90 <= star + 1e-9);
    }

    #[test]
    fn quadrature_is_stable_under_splitting() {
        let f = |x: f64| kernel_2d(x, 0.05, 0.4, 1.7, 2.2, 9);
        let full = integrate(f, 0.0, 0.3);
        let split = integrate(f, 0.0, 0.15) + integrate(f, 0.15, 0.3);
        assert!((full - split).abs() <= 1e-4 * full.abs().max(1e-12));
    }
}
