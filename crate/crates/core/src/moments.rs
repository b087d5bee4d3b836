//! Second-order structure of the MSTOU field: mean, covariance, correlation,
//! long-range dependence and the CAR superposition contrast.
//!
//! Covariances take a time lag and a spatial distance; the g-class ambit set
//! is isotropic, so only the norm of the spatial lag matters. Closed forms
//! are available for linear g, and [`cov_quadrature_oracle`] evaluates the
//! defining integral numerically for any g.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::ambit_geometry::{equal_radius_intersection_volume, intersection_onset_lag, GClassAmbit, GFunction};
use crate::error::{invalid, MstouError, Result};
use crate::levy_basis::{CompoundPoissonSeed, SeedMoments};
use crate::quadrature::Quadrature;
use crate::rate_mixture::{integrability_check, small_rate_tail, RateDensity, TailVerdict};
use crate::special::{factorial, unit_ball_volume};

/// The Lévy seed of a model: a simulable compound-Poisson seed, or just its
/// first two moments when only second-order quantities are needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Seed {
    CompoundPoisson(CompoundPoissonSeed),
    Moments(SeedMoments),
}

impl Seed {
    pub fn moments(&self) -> SeedMoments {
        match self {
            Self::CompoundPoisson(s) => s.moments(),
            Self::Moments(m) => *m,
        }
    }
}

impl From<CompoundPoissonSeed> for Seed {
    fn from(s: CompoundPoissonSeed) -> Self {
        Self::CompoundPoisson(s)
    }
}

impl From<SeedMoments> for Seed {
    fn from(m: SeedMoments) -> Self {
        Self::Moments(m)
    }
}

/// A g-class MSTOU model. Construction fails with `NotIntegrable` unless the
/// field is well defined for the given rate law and ambit set.
#[derive(Debug, Clone, PartialEq)]
pub struct MstouModel {
    seed: Seed,
    rate: RateDensity,
    ambit: GClassAmbit,
}

impl MstouModel {
    pub fn new(seed: impl Into<Seed>, rate: RateDensity, ambit: GClassAmbit) -> Result<Self> {
        let seed = seed.into();
        let m = seed.moments();
        if !m.mean.is_finite() || !m.variance.is_finite() {
            return Err(invalid("seed", "moments must be finite"));
        }
        if !integrability_check(&rate, &ambit)? {
            return Err(MstouError::NotIntegrable(format!(
                "rate law {rate:?} with a {}-dimensional ambit set",
                ambit.dimension()
            )));
        }
        Ok(Self { seed, rate, ambit })
    }

    pub fn seed(&self) -> &Seed {
        &self.seed
    }

    pub fn seed_moments(&self) -> SeedMoments {
        self.seed.moments()
    }

    pub fn rate(&self) -> &RateDensity {
        &self.rate
    }

    pub fn ambit(&self) -> &GClassAmbit {
        &self.ambit
    }

    pub fn dimension(&self) -> usize {
        self.ambit.dimension()
    }

    fn linear_slope(&self) -> Option<f64> {
        self.ambit.g().linear_slope()
    }

    fn gamma_params(&self) -> Option<(f64, f64)> {
        match self.rate {
            RateDensity::Gamma { alpha, beta } => Some((alpha, beta)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMethod {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceValue {
    pub value: f64,
    pub method: CovarianceMethod,
}

impl CovarianceValue {
    fn closed(value: f64) -> Self {
        Self {
            value,
            method: CovarianceMethod::ClosedForm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dependence {
    ShortRange,
    LongRange,
    Undefined,
}

impl std::fmt::Display for Dependence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ShortRange => "short_range",
            Self::LongRange => "long_range",
            Self::Undefined => "undefined",
        })
    }
}

fn outer_quadrature() -> Quadrature {
    Quadrature::new(1e-300, 1e-10)
}

fn inner_quadrature() -> Quadrature {
    Quadrature::new(1e-300, 1e-10)
}

/// E[Y]: closed form for linear g, quadrature otherwise.
pub fn mean(model: &MstouModel) -> Result<f64> {
    let m = model.seed_moments();
    if m.mean == 0.0 {
        return Ok(0.0);
    }
    match model.linear_slope() {
        Some(c) => {
            let d = model.dimension();
            let k = d as u32 + 1;
            Ok(m.mean * unit_ball_volume(d) * c.powi(d as i32) * factorial(d as u32) * model.rate.inverse_moment(k))
        }
        None => mean_quadrature(model),
    }
}

/// E[Y] from the double integral over rates and ambit lags, both numeric.
pub fn mean_quadrature(model: &MstouModel) -> Result<f64> {
    let m = model.seed_moments();
    let ambit = &model.ambit;
    let section = |w: f64| ambit.cross_section_volume(w);
    let inner = inner_quadrature();
    let e = model
        .rate
        .try_expect(|l| lag_integral(ambit, &section, l, 0.0, 0.0, &inner), &outer_quadrature())?;
    Ok(m.mean * e)
}

/// Covariance of the d = 1 linear-g model at time lag `dt` and spatial lag
/// `dx`: Var(L′)·(c/2)·E[λ^{−2} e^{−λA}] with A = max(|dt|, |dx|/c).
pub fn cov_1d(model: &MstouModel, dt: f64, dx: f64) -> Result<CovarianceValue> {
    let c = match (model.dimension(), model.linear_slope()) {
        (1, Some(c)) => c,
        _ => return Err(MstouError::Unsupported("cov_1d needs d = 1 and linear g".into())),
    };
    let var = model.seed_moments().variance;
    let reach = dt.abs().max(dx.abs() / c);
    Ok(CovarianceValue::closed(
        var * 0.5 * c * model.rate.laplace_inverse_moment(2, reach),
    ))
}

fn gamma_3d(model: &MstouModel) -> Result<(f64, f64, f64, f64)> {
    let (alpha, beta) = model
        .gamma_params()
        .ok_or_else(|| MstouError::Unsupported("3-d closed forms need a Gamma rate law".into()))?;
    let c = match (model.dimension(), model.linear_slope()) {
        (3, Some(c)) => c,
        _ => return Err(MstouError::Unsupported("3-d closed forms need d = 3 and linear g".into())),
    };
    if alpha <= 4.0 {
        return Err(MstouError::NotIntegrable(format!("alpha = {alpha} must exceed 4")));
    }
    let var = model.seed_moments().variance;
    let prefactor =
        beta.powi(4) * c.powi(3) * PI * var / (2.0 * (alpha - 4.0) * (alpha - 3.0) * (alpha - 2.0) * (alpha - 1.0));
    Ok((alpha, beta, c, prefactor))
}

/// Purely spatial covariance of the d = 3 linear-g Gamma model at distance `dx`.
pub fn cov_3d_spatial(model: &MstouModel, dx: f64) -> Result<CovarianceValue> {
    let (alpha, beta, c, prefactor) = gamma_3d(model)?;
    let r = dx.abs();
    let bc = beta * c;
    let value = prefactor * ((bc + r) / bc).powf(3.0 - alpha) * ((2.0 * bc + (alpha - 2.0) * r) / (2.0 * bc));
    Ok(CovarianceValue::closed(value))
}

/// Purely temporal covariance of the d = 3 linear-g Gamma model at lag `dt`.
pub fn cov_3d_temporal(model: &MstouModel, dt: f64) -> Result<CovarianceValue> {
    let (alpha, beta, _, prefactor) = gamma_3d(model)?;
    Ok(CovarianceValue::closed(prefactor * (beta / (beta + dt.abs())).powf(alpha - 4.0)))
}

/// Cov(Y_t(x), Y_{t+dt}(x+dx)) with |dx| = `dx`, from a closed form where one
/// exists and from [`cov_quadrature_oracle`] otherwise.
pub fn covariance(model: &MstouModel, dt: f64, dx: f64) -> Result<CovarianceValue> {
    let (dt, dx) = (dt.abs(), dx.abs());
    let d = model.dimension();
    let var = model.seed_moments().variance;
    if var == 0.0 {
        return Ok(CovarianceValue::closed(0.0));
    }
    match model.linear_slope() {
        Some(_) if d == 1 => cov_1d(model, dt, dx),
        Some(c) if dx == 0.0 => {
            // Var·V_d c^d d!/2^{d+1}·E[λ^{−(d+1)} e^{−λ dt}]
            let k = d as u32 + 1;
            let geometry = unit_ball_volume(d) * c.powi(d as i32) * factorial(d as u32) / 2f64.powi(k as i32);
            Ok(CovarianceValue::closed(
                var * geometry * model.rate.laplace_inverse_moment(k, dt),
            ))
        }
        Some(c) if d == 3 && dt == 0.0 => {
            // Lens volume integrated against e^{−2λw} from the onset lag dx/(2c).
            let reach = dx / c;
            let f = &model.rate;
            let value = var * c * c * PI / 4.0
                * (dx * f.laplace_inverse_moment(3, reach) + 2.0 * c * f.laplace_inverse_moment(4, reach));
            Ok(CovarianceValue::closed(value))
        }
        _ => cov_quadrature_oracle(model, dt, dx),
    }
}

pub fn variance(model: &MstouModel) -> Result<f64> {
    Ok(covariance(model, 0.0, 0.0)?.value)
}

/// ∫_{onset}^∞ section(w)·e^{−rate·w} dw, split at the tabulated knots and
/// their `dt` shifts.
fn lag_integral(
    ambit: &GClassAmbit,
    section: &dyn Fn(f64) -> f64,
    rate: f64,
    onset: f64,
    dt: f64,
    quad: &Quadrature,
) -> Result<f64> {
    let integrand = |w: f64| {
        let s = section(w);
        if s == 0.0 {
            0.0
        } else {
            s * (-rate * (w - onset)).exp()
        }
    };
    let mut breaks = vec![onset];
    if let GFunction::Tabulated(table) = ambit.g() {
        for &(u, _) in table.knots() {
            for b in [u, u - dt] {
                if b > onset {
                    breaks.push(b);
                }
            }
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let last = *breaks.last().expect("non-empty");
    let body = quad.integrate_breaks(integrand, &breaks)?.value;
    let tail = quad.integrate_to_infinity(integrand, last, 1.0 / rate)?.value;
    // The integrand was shifted by e^{rate·onset} to keep it O(1) near the onset.
    Ok((body + tail) * (-rate * onset).exp())
}

/// Smallest w ≥ 0 with g(w) + g(w + dt) ≥ dx, the lag behind the earlier
/// apex at which the two d = 1 ambit sets start to overlap.
fn overlap_onset_1d(g: &GFunction, dt: f64, dx: f64) -> Option<f64> {
    let reach = |w: f64| g.eval(w) + g.eval(w + dt) - dx;
    if reach(0.0) >= 0.0 {
        return Some(0.0);
    }
    let mut hi = 1.0;
    let mut doublings = 0;
    while reach(hi) < 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if reach(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Covariance by direct numerical integration of the kernel product over
/// A_t(x) ∩ A_{t+dt}(x+dx), then over the rate law.
///
/// Supported geometries: any lags for d = 1, and for d ≥ 2 either dx = 0 or
/// dt = 0. The joint case for d ≥ 2 returns `Unsupported`.
pub fn cov_quadrature_oracle(model: &MstouModel, dt: f64, dx: f64) -> Result<CovarianceValue> {
    let (dt, dx) = (dt.abs(), dx.abs());
    let d = model.dimension();
    let ambit = &model.ambit;
    let g = ambit.g();
    let var = model.seed_moments().variance;

    let section: Box<dyn Fn(f64) -> f64 + '_> = if dx == 0.0 {
        Box::new(|w: f64| ambit.cross_section_volume(w))
    } else if d == 1 {
        Box::new(move |w: f64| {
            let near = g.eval(w);
            let far = g.eval(w + dt);
            (near.min(dx + far) - (-near).max(dx - far)).max(0.0)
        })
    } else if dt == 0.0 {
        Box::new(move |w: f64| equal_radius_intersection_volume(d, g.eval(w), dx).unwrap_or(0.0))
    } else {
        return Err(MstouError::Unsupported(format!(
            "joint space-time covariance for d = {d} (only dx = 0 or dt = 0)"
        )));
    };

    let onset = if dx == 0.0 {
        Some(0.0)
    } else {
        match g {
            GFunction::Linear { c } => Some(intersection_onset_lag(*c, dt, dx)? - dt),
            _ if d == 1 => overlap_onset_1d(g, dt, dx),
            _ => {
                let w = g.inverse(0.5 * dx);
                w.is_finite().then_some(w)
            }
        }
    };
    let Some(onset) = onset else {
        return Ok(CovarianceValue {
            value: 0.0,
            method: CovarianceMethod::Quadrature,
        });
    };

    let inner = inner_quadrature();
    let value = model.rate.try_expect(
        |l| {
            let decay = (-l * dt).exp();
            if decay == 0.0 {
                return Ok(0.0);
            }
            Ok(decay * lag_integral(ambit, &*section, 2.0 * l, onset, dt, &inner)?)
        },
        &outer_quadrature(),
    )?;
    Ok(CovarianceValue {
        value: var * value,
        method: CovarianceMethod::Quadrature,
    })
}

/// cov(dt, dx) / cov(0, 0); 0 for a degenerate (zero-variance) seed.
pub fn correlation(model: &MstouModel, dt: f64, dx: f64) -> Result<f64> {
    let at_origin = covariance(model, 0.0, 0.0)?.value;
    if at_origin == 0.0 {
        return Ok(0.0);
    }
    Ok(covariance(model, dt, dx)?.value / at_origin)
}

/// Temporal long-range dependence: whether ∫_0^∞ cov(τ, 0) dτ diverges.
///
/// Gamma rates with linear g use the exact thresholds d+1 < α ≤ d+2; atomic
/// rate laws are always short-range; Gamma rates with tabulated g are judged
/// by the dyadic small-rate divergence test on E[λ^{−1}∫ V_d g^d e^{−2λw} dw].
pub fn lrd_classify(model: &MstouModel) -> Dependence {
    let d = model.dimension() as f64;
    match (&model.rate, model.linear_slope()) {
        (RateDensity::Gamma { alpha, .. }, Some(_)) => {
            if *alpha > d + 2.0 {
                Dependence::ShortRange
            } else if *alpha > d + 1.0 {
                Dependence::LongRange
            } else {
                Dependence::Undefined
            }
        }
        (RateDensity::Gamma { alpha, beta }, None) => {
            let ambit = &model.ambit;
            let h = |l: f64| Ok(ambit.exponential_moment(2.0 * l)? / l);
            match small_rate_tail(&model.rate, &h, alpha.max(1.0) / beta) {
                Ok(TailVerdict::Divergent) => Dependence::LongRange,
                Ok(TailVerdict::Finite(_)) => Dependence::ShortRange,
                Err(_) => Dependence::Undefined,
            }
        }
        _ => Dependence::ShortRange,
    }
}

/// ∫_0^∞ cov(τ, 0) dτ, +∞ for long-range dependent models.
pub fn temporal_cov_integral(model: &MstouModel) -> Result<f64> {
    let var = model.seed_moments().variance;
    match lrd_classify(model) {
        Dependence::LongRange => return Ok(f64::INFINITY),
        Dependence::Undefined => {
            return Err(MstouError::NonConvergence(
                "could not decide whether the temporal covariance integrates".into(),
            ))
        }
        Dependence::ShortRange => {}
    }
    let d = model.dimension();
    match model.linear_slope() {
        Some(c) => {
            let k = d as u32 + 1;
            let geometry = unit_ball_volume(d) * c.powi(d as i32) * factorial(d as u32) / 2f64.powi(k as i32);
            Ok(var * geometry * model.rate.inverse_moment(k + 1))
        }
        None => {
            let ambit = &model.ambit;
            Ok(var
                * model
                    .rate
                    .try_expect(|l| Ok(ambit.exponential_moment(2.0 * l)? / l), &outer_quadrature())?)
        }
    }
}

/// ∫_0^{2R} (lens volume of two radius-R balls at separation r) dr / R^{d+1}.
pub fn lens_integral_constant(d: usize) -> Result<f64> {
    match d {
        1 => Ok(2.0),
        2 => Ok(8.0 / 3.0),
        3 => Ok(PI),
        _ => Err(invalid("dimension", "must be 1, 2 or 3")),
    }
}

/// ∫_0^∞ cov(0, r) dr along any spatial ray, +∞ when it diverges.
pub fn spatial_cov_integral(model: &MstouModel) -> Result<f64> {
    let var = model.seed_moments().variance;
    let d = model.dimension();
    let lens = lens_integral_constant(d)?;
    let power = d as u32 + 1;
    match model.linear_slope() {
        Some(c) => {
            let geometry = lens * c.powi(power as i32) * factorial(power) / 2f64.powi(power as i32 + 1);
            Ok(var * geometry * model.rate.inverse_moment(power + 1))
        }
        None => {
            let ambit = &model.ambit;
            let h = |l: f64| ambit.power_exponential_integral(power, 2.0 * l, 0.0);
            if let RateDensity::Gamma { alpha, beta } = model.rate {
                if small_rate_tail(&model.rate, &h, alpha.max(1.0) / beta)? == TailVerdict::Divergent {
                    return Ok(f64::INFINITY);
                }
            }
            Ok(var * lens * model.rate.try_expect(h, &outer_quadrature())?)
        }
    }
}

/// Kernel of a CAR(p) superposition written as Σ wᵢ e^{ηᵢu}.
#[derive(Debug, Clone, PartialEq)]
pub struct CarSuperposition {
    eigenvalues: Vec<f64>,
    weights: Vec<f64>,
}

impl CarSuperposition {
    /// Eigenvalues in decreasing order (closest to zero first).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.eigenvalues.len()
    }

    /// k(u) = Σ wᵢ e^{ηᵢu}.
    pub fn kernel(&self, u: f64) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.weights)
            .map(|(eta, w)| w * (eta * u).exp())
            .sum()
    }
}

const CAR_REAL_TOL: f64 = 1e-7;
const CAR_DISTINCT_TOL: f64 = 1e-6;

/// Companion matrix with ones on the superdiagonal and last row
/// (−a_p, …, −a_1).
pub fn car_companion(coefficients: &[f64]) -> DMatrix<f64> {
    let p = coefficients.len();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..p {
        a[(p - 1, j)] = -coefficients[p - 1 - j];
    }
    a
}

/// Eigen-decomposition of the CAR(p) companion matrix for coefficients
/// a₁…a_p, with weights wᵢ = 1/∏_{m≠i}(ηᵢ − η_m).
///
/// Rejects complex, non-negative or repeated eigenvalues.
pub fn car_superposition(p: usize, coefficients: &[f64]) -> Result<CarSuperposition> {
    if p == 0 {
        return Err(MstouError::InvalidCar("order must be at least 1".into()));
    }
    if coefficients.len() != p {
        return Err(MstouError::InvalidCar(format!(
            "order {p} needs {p} coefficients, got {}",
            coefficients.len()
        )));
    }
    if coefficients.iter().any(|a| !a.is_finite()) {
        return Err(MstouError::InvalidCar("coefficients must be finite".into()));
    }
    let raw = car_companion(coefficients).complex_eigenvalues();
    let mut eigenvalues = Vec::with_capacity(p);
    for z in raw.iter() {
        let scale = z.re.abs().max(1.0);
        if z.im.abs() > CAR_REAL_TOL * scale {
            return Err(MstouError::InvalidCar(format!("complex eigenvalue {} + {}i", z.re, z.im)));
        }
        eigenvalues.push(z.re);
    }
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    for pair in eigenvalues.windows(2) {
        if (pair[0] - pair[1]).abs() <= CAR_DISTINCT_TOL * pair[0].abs().max(1.0) {
            return Err(MstouError::InvalidCar(format!("repeated eigenvalue {}", pair[0])));
        }
    }
    // Newton is only safe once the roots are known to be simple.
    for eta in eigenvalues.iter_mut() {
        *eta = polish_root(coefficients, *eta);
    }
    if let Some(&top) = eigenvalues.first() {
        if top >= 0.0 {
            return Err(MstouError::InvalidCar(format!("non-negative eigenvalue {top}")));
        }
    }
    let weights = eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &eta)| {
            let prod: f64 = eigenvalues
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != i)
                .map(|(_, &other)| eta - other)
                .product();
            1.0 / prod
        })
        .collect();
    Ok(CarSuperposition { eigenvalues, weights })
}

/// Newton steps on η^p + a₁η^{p−1} + … + a_p starting from `root`.
fn polish_root(coefficients: &[f64], root: f64) -> f64 {
    let mut x = root;
    for _ in 0..8 {
        let (mut value, mut slope) = (1.0, 0.0);
        for &a in coefficients {
            slope = slope * x + value;
            value = value * x + a;
        }
        if slope == 0.0 {
            break;
        }
        let step = value / slope;
        if !step.is_finite() {
            break;
        }
        let next = x - step;
        if (next - x).abs() <= f64::EPSILON * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

/// ∫_0^∞ Cov(Y_t(x), Y_{t+τ}(x)) dτ for the CAR(p) field on `ambit`:
/// Var(L′)·Σᵢ Σⱼ wᵢwⱼ/(−ηⱼ)·∫_A e^{(ηᵢ+ηⱼ)(t−s)} dξ ds.
pub fn car_temporal_cov_integral(superposition: &CarSuperposition, ambit: &GClassAmbit, seed: &SeedMoments) -> Result<f64> {
    let (eta, w) = (&superposition.eigenvalues, &superposition.weights);
    let mut total = 0.0;
    for i in 0..eta.len() {
        for j in 0..eta.len() {
            total += w[i] * w[j] / (-eta[j]) * ambit.exponential_moment(-(eta[i] + eta[j]))?;
        }
    }
    Ok(seed.variance * total)
}
