//! The mixing law f(λ) of the mean-reversion rate.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::ambit_geometry::{GClassAmbit, GFunction};
use crate::error::{invalid, require_positive, MstouError, Result};
use crate::quadrature::Quadrature;
use crate::special::ln_gamma;

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum RateDensity {
    /// Gamma(shape α, rate β) density β^α λ^{α−1} e^{−βλ} / Γ(α).
    Gamma { alpha: f64, beta: f64 },
    /// Σ qₖ δ_{λₖ}, stored as (qₖ, λₖ) pairs.
    Discrete(Vec<(f64, f64)>),
    Dirac(f64),
}

impl RateDensity {
    pub fn gamma(alpha: f64, beta: f64) -> Result<Self> {
        require_positive("alpha", alpha)?;
        require_positive("beta", beta)?;
        Ok(Self::Gamma { alpha, beta })
    }

    pub fn dirac(lambda0: f64) -> Result<Self> {
        require_positive("lambda0", lambda0)?;
        Ok(Self::Dirac(lambda0))
    }

    pub fn discrete(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(invalid("mixture", "needs at least one atom"));
        }
        for &(q, l) in &pairs {
            require_positive("mixture weight", q)?;
            require_positive("mixture rate", l)?;
        }
        let total: f64 = pairs.iter().map(|p| p.0).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(invalid("mixture", format!("weights sum to {total}, not 1")));
        }
        for (i, a) in pairs.iter().enumerate() {
            if pairs[i + 1..].iter().any(|b| b.1 == a.1) {
                return Err(invalid("mixture", format!("rate {} repeated", a.1)));
            }
        }
        Ok(Self::Discrete(pairs))
    }

    /// Atoms (q, λ) when the law is discrete; `None` for Gamma.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Self::Gamma { .. } => None,
            Self::Discrete(p) => Some(p.clone()),
            Self::Dirac(l) => Some(vec![(1.0, *l)]),
        }
    }

    pub fn mean_rate(&self) -> f64 {
        match self {
            Self::Gamma { alpha, beta } => alpha / beta,
            Self::Discrete(p) => p.iter().map(|(q, l)| q * l).sum(),
            Self::Dirac(l) => *l,
        }
    }

    /// E[λ^{−k}], +∞ when the integral diverges.
    pub fn inverse_moment(&self, k: u32) -> f64 {
        self.laplace_inverse_moment(k, 0.0)
    }

    /// E[λ^{−k} e^{−λ·shift}] for `shift ≥ 0`; +∞ when divergent.
    ///
    /// For Gamma(α, β) this is β^α / ((β + shift)^{α−k} (α−1)…(α−k)) when
    /// α > k.
    pub fn laplace_inverse_moment(&self, k: u32, shift: f64) -> f64 {
        match self {
            Self::Gamma { alpha, beta } => {
                if *alpha <= k as f64 {
                    return f64::INFINITY;
                }
                let falling: f64 = (1..=k).map(|j| alpha - j as f64).product();
                // β^α (β+shift)^{k−α}, computed in logs for large α
                let log_ratio = alpha * beta.ln() + (k as f64 - alpha) * (beta + shift).ln();
                log_ratio.exp() / falling
            }
            Self::Discrete(p) => p
                .iter()
                .map(|&(q, l)| q * l.powi(-(k as i32)) * (-l * shift).exp())
                .sum(),
            Self::Dirac(l) => l.powi(-(k as i32)) * (-l * shift).exp(),
        }
    }

    /// Gamma density value; `None` for atomic laws.
    pub fn density(&self, lambda: f64) -> Option<f64> {
        match self {
            Self::Gamma { alpha, beta } => {
                if lambda <= 0.0 {
                    return Some(0.0);
                }
                let log_f = alpha * beta.ln() + (alpha - 1.0) * lambda.ln() - beta * lambda - ln_gamma(*alpha);
                Some(log_f.exp())
            }
            _ => None,
        }
    }

    /// E[h(λ)]: an exact sum for atomic laws, adaptive quadrature against
    /// the Gamma density otherwise.
    pub fn expect<H: Fn(f64) -> f64>(&self, h: H, quad: &Quadrature) -> Result<f64> {
        match self {
            Self::Gamma { alpha, beta } => {
                let integrand = |l: f64| {
                    let f = self.density(l).unwrap_or(0.0);
                    if f == 0.0 {
                        0.0
                    } else {
                        h(l) * f
                    }
                };
                let mode_scale = alpha.max(1.0) / beta;
                // Split at the bulk so the singular left end and the tail are resolved separately.
                let left = quad.integrate(integrand, 0.0, mode_scale)?;
                let right = quad.integrate_to_infinity(integrand, mode_scale, mode_scale)?;
                Ok(left.value + right.value)
            }
            Self::Discrete(p) => Ok(p.iter().map(|&(q, l)| q * h(l)).sum()),
            Self::Dirac(l) => Ok(h(*l)),
        }
    }

    /// [`RateDensity::expect`] for an `h` that can fail; the first failure
    /// is returned.
    pub fn try_expect<H: Fn(f64) -> Result<f64>>(&self, h: H, quad: &Quadrature) -> Result<f64> {
        let failure = std::cell::RefCell::new(None);
        let value = self.expect(
            |l| match h(l) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            },
            quad,
        );
        match failure.into_inner() {
            Some(e) => Err(e),
            None => value,
        }
    }

    /// One draw of λ.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Gamma { alpha, beta } => Gamma::new(*alpha, 1.0 / beta)
                .expect("validated gamma parameters")
                .sample(rng),
            Self::Discrete(p) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(q, l) in p {
                    acc += q;
                    if u < acc {
                        return l;
                    }
                }
                p[p.len() - 1].1
            }
            Self::Dirac(l) => *l,
        }
    }
}

/// Free-function form of [`RateDensity::inverse_moment`].
pub fn inverse_moment(f: &RateDensity, k: u32) -> f64 {
    f.inverse_moment(k)
}

pub fn sample_rate<R: Rng + ?Sized>(f: &RateDensity, rng: &mut R) -> f64 {
    f.sample(rng)
}

/// Verdict of a numerical divergence test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum TailVerdict {
    Finite(f64),
    Divergent,
}

/// Whether ∫_0^{λ₀} h(λ) f(λ) dλ is finite for a Gamma density, judged from
/// the dyadic pieces [2^{−k−1}λ₀, 2^{−k}λ₀]. Power-law behaviour λ^p near 0
/// makes successive pieces shrink by 2^{−(p+1)}; ratios at or above one mean
/// divergence.
pub(crate) fn small_rate_tail(
    rates: &RateDensity,
    h: &dyn Fn(f64) -> Result<f64>,
    lambda0: f64,
) -> Result<TailVerdict> {
    const LEVELS: usize = 48;
    const DIVERGENT_RATIO: f64 = 1.0 - 1e-3;
    let quad = Quadrature::new(1e-300, 1e-9);
    let piece = |lo: f64, hi: f64| -> Result<f64> {
        let weighted = |l: f64| h(l).map(|v| v * rates.density(l).unwrap_or(0.0));
        Ok(crate::quadrature::fallible(weighted, |f| quad.integrate(f, lo, hi))?.value)
    };
    let mut total = 0.0;
    let mut previous: Option<f64> = None;
    let mut ratios = Vec::new();
    let mut hi = lambda0;
    for _ in 0..LEVELS {
        let lo = 0.5 * hi;
        let p = piece(lo, hi)?;
        total += p;
        if let Some(prev) = previous {
            if prev > 0.0 {
                ratios.push(p / prev);
            }
        }
        previous = Some(p);
        hi = lo;
        if p <= 1e-16 * total && ratios.len() >= 4 {
            return Ok(TailVerdict::Finite(total));
        }
    }
    let last: Vec<f64> = ratios.iter().rev().take(4).copied().collect();
    if last.len() < 4 {
        return Err(MstouError::NonConvergence("dyadic tail test had no usable pieces".into()));
    }
    if last.iter().all(|&r| r >= DIVERGENT_RATIO) {
        return Ok(TailVerdict::Divergent);
    }
    let r = last[0];
    if last.iter().all(|&x| x < DIVERGENT_RATIO) && (last[0] - last[1]).abs() < 1e-2 {
        // Geometric remainder r/(1−r) of the last piece.
        let remainder = previous.unwrap_or(0.0) * r / (1.0 - r);
        return Ok(TailVerdict::Finite(total + remainder));
    }
    Err(MstouError::NonConvergence(format!(
        "dyadic piece ratios {last:?} neither settle below one nor stay at or above it"
    )))
}

/// Whether the g-class model with rate law `f` is well defined, i.e. both
/// ∫∫ g^d(w) e^{−λw} f(λ) dw dλ and its 2λ analogue are finite.
///
/// Linear g reduces to E[λ^{−(d+1)}] < ∞. Tabulated g is checked
/// numerically; a quadrature that fails to settle is reported as
/// `NonConvergence`, distinct from a `false` verdict.
pub fn integrability_check(f: &RateDensity, ambit: &GClassAmbit) -> Result<bool> {
    let d = ambit.dimension() as u32;
    if let GFunction::Linear { .. } = ambit.g() {
        return Ok(f.inverse_moment(d + 1).is_finite());
    }
    match f {
        RateDensity::Gamma { alpha, beta } => {
            for factor in [1.0, 2.0] {
                let h = |l: f64| ambit.exponential_moment(factor * l);
                let lambda0 = alpha.max(1.0) / beta;
                match small_rate_tail(f, &h, lambda0)? {
                    TailVerdict::Divergent => return Ok(false),
                    TailVerdict::Finite(_) => {}
                }
                // Bulk and upper tail: the ambit integral decays like 1/λ there.
                let upper = Quadrature::new(1e-300, 1e-8).integrate_to_infinity(
                    |l| {
                        ambit
                            .exponential_moment(factor * l)
                            .map(|v| v * f.density(l).unwrap_or(0.0))
                            .unwrap_or(f64::NAN)
                    },
                    lambda0,
                    lambda0,
                );
                match upper {
                    Ok(v) if v.value.is_finite() => {}
                    Ok(_) => return Ok(false),
                    Err(MstouError::Numerical(_)) => {
                        return Err(MstouError::NonConvergence("ambit integral failed in the upper rate range".into()))
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(true)
        }
        _ => {
            for (_, l) in f.atoms().expect("atomic law") {
                for factor in [1.0, 2.0] {
                    let v = ambit.exponential_moment(factor * l)?;
                    if !v.is_finite() {
                        return Ok(false);
                    }
                }
            }
            Ok(true)
        }
    }
}
