//! g-class ambit sets A_t(x) = {(ξ, s): s ≤ t, |x − ξ| ≤ g(t − s)}.
//!
//! Covers membership, the ball-shaped temporal cross-sections and the
//! volume of two equal balls at a given separation, which is all the
//! covariance integrals need for same-time or same-place lags.

use std::f64::consts::PI;

use crate::error::{invalid, require_nonnegative, require_positive, MstouError, Result};
use crate::special::{beta_inc, gamma, unit_ball_volume};

const INVERSE_TOL: f64 = 1e-10;
const HORIZON_DOUBLINGS: usize = 80;

/// Monotone radius function g: [0, ∞) → [0, ∞).
#[derive(Debug, Clone, PartialEq)]
pub enum GFunction {
    /// g(u) = c·u.
    Linear { c: f64 },
    Tabulated(TabulatedG),
}

/// Piecewise-linear g through `(u, g(u))` knots starting at u = 0.
/// Beyond the last knot the final segment's slope is continued.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedG {
    knots: Vec<(f64, f64)>,
}

impl TabulatedG {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(invalid("g table", "needs at least two knots"));
        }
        if knots[0].0 != 0.0 {
            return Err(invalid("g table", "first knot must be at u = 0"));
        }
        if knots[0].1 < 0.0 || !knots[0].1.is_finite() {
            return Err(invalid("g table", "g(0) must be finite and >= 0"));
        }
        for w in knots.windows(2) {
            let ((u0, g0), (u1, g1)) = (w[0], w[1]);
            if !(u1 > u0) || !u1.is_finite() {
                return Err(invalid("g table", "knot abscissae must be strictly increasing"));
            }
            if !(g1 >= g0) || !g1.is_finite() {
                return Err(invalid("g table", "g must be non-decreasing"));
            }
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    fn tail_slope(&self) -> f64 {
        let n = self.knots.len();
        let (u0, g0) = self.knots[n - 2];
        let (u1, g1) = self.knots[n - 1];
        (g1 - g0) / (u1 - u0)
    }

    pub fn eval(&self, u: f64) -> f64 {
        let u = u.max(0.0);
        let last = self.knots[self.knots.len() - 1];
        if u >= last.0 {
            return last.1 + self.tail_slope() * (u - last.0);
        }
        let idx = self.knots.partition_point(|&(k, _)| k <= u);
        let (u0, g0) = self.knots[idx - 1];
        let (u1, g1) = self.knots[idx];
        g0 + (g1 - g0) * (u - u0) / (u1 - u0)
    }
}

impl GFunction {
    pub fn linear(c: f64) -> Result<Self> {
        require_positive("c", c)?;
        Ok(Self::Linear { c })
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Self::Linear { c } => c * u.max(0.0),
            Self::Tabulated(t) => t.eval(u),
        }
    }

    /// Smallest lag w ≥ 0 with g(w) ≥ y; +∞ if g never reaches y.
    pub fn inverse(&self, y: f64) -> f64 {
        match self {
            Self::Linear { c } => (y / c).max(0.0),
            Self::Tabulated(t) => {
                if y <= t.eval(0.0) {
                    return 0.0;
                }
                let last = t.knots[t.knots.len() - 1];
                if y > last.1 && t.tail_slope() <= 0.0 {
                    return f64::INFINITY;
                }
                let mut hi = last.0.max(1.0);
                while self.eval(hi) < y {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                while hi - lo > INVERSE_TOL * hi.max(1.0) {
                    let mid = 0.5 * (lo + hi);
                    if self.eval(mid) >= y {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        }
    }

    pub fn linear_slope(&self) -> Option<f64> {
        match self {
            Self::Linear { c } => Some(*c),
            Self::Tabulated(_) => None,
        }
    }
}

/// A g-class ambit set in `dimension` spatial dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct GClassAmbit {
    dimension: usize,
    g: GFunction,
}

impl GClassAmbit {
    pub fn new(dimension: usize, g: GFunction) -> Result<Self> {
        if !(1..=3).contains(&dimension) {
            return Err(invalid("dimension", format!("must be 1, 2 or 3, got {dimension}")));
        }
        Ok(Self { dimension, g })
    }

    pub fn linear(dimension: usize, c: f64) -> Result<Self> {
        Self::new(dimension, GFunction::linear(c)?)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn g(&self) -> &GFunction {
        &self.g
    }

    /// Whether `(point_x, point_t)` lies in the ambit set with apex
    /// `(apex_x, apex_t)`. The boundary is included.
    pub fn contains(&self, apex_x: &[f64], apex_t: f64, point_x: &[f64], point_t: f64) -> bool {
        debug_assert_eq!(apex_x.len(), self.dimension);
        debug_assert_eq!(point_x.len(), self.dimension);
        if point_t > apex_t {
            return false;
        }
        let radius = self.g.eval(apex_t - point_t);
        if self.dimension == 1 {
            (apex_x[0] - point_x[0]).abs() <= radius
        } else {
            let dist2: f64 = apex_x.iter().zip(point_x).map(|(a, p)| (a - p) * (a - p)).sum();
            dist2 <= radius * radius
        }
    }

    /// Volume of the spatial cross-section at lag `w` behind the apex.
    pub fn cross_section_volume(&self, w: f64) -> f64 {
        if w < 0.0 {
            return 0.0;
        }
        unit_ball_volume(self.dimension) * self.g.eval(w).powi(self.dimension as i32)
    }
}

impl GClassAmbit {
    /// ∫_{from}^∞ Vol(cross-section at lag w)·e^{−rate·w} dw, the integral of
    /// e^{−rate(t−s)} over the part of the ambit set at least `from` behind
    /// the apex.
    pub fn exponential_moment_from(&self, rate: f64, from: f64) -> Result<f64> {
        let d = self.dimension;
        Ok(unit_ball_volume(d) * self.power_exponential_integral(d as u32, rate, from)?)
    }

    /// ∫_{from}^∞ g(w)^power e^{−rate·w} dw.
    ///
    /// Closed form for linear g; otherwise adaptive quadrature on a horizon
    /// that doubles until the integrand at the horizon, times the decay
    /// length, falls below 1e-10 (relative). Returns `NonConvergence` if the
    /// horizon budget runs out.
    pub fn power_exponential_integral(&self, power: u32, rate: f64, from: f64) -> Result<f64> {
        require_positive("rate", rate)?;
        require_nonnegative("from", from)?;
        match &self.g {
            GFunction::Linear { c } => {
                // ∫_{w0}^∞ w^p e^{−rw} dw = p! e^{−r w0} Σ_{k≤p} (r w0)^k / k! / r^{p+1}
                let x = rate * from;
                let mut term = 1.0;
                let mut series = 1.0;
                for k in 1..=power {
                    term *= x / k as f64;
                    series += term;
                }
                let fact = crate::special::factorial(power);
                Ok(c.powi(power as i32) * fact * (-x).exp() * series / rate.powi(power as i32 + 1))
            }
            GFunction::Tabulated(table) => {
                let integrand = |w: f64| self.g.eval(w).powi(power as i32) * (-rate * w).exp();
                let quad = crate::quadrature::Quadrature::new(1e-300, 1e-11);
                let decay = 1.0 / rate;
                let mut lo = from;
                let mut hi = from + table.knots()[table.knots().len() - 1].0.max(decay);
                let mut total = 0.0;
                for _ in 0..HORIZON_DOUBLINGS {
                    let mut breaks = vec![lo];
                    breaks.extend(table.knots().iter().map(|k| k.0).filter(|&u| u > lo && u < hi));
                    breaks.push(hi);
                    total += quad.integrate_breaks(integrand, &breaks)?.value;
                    let tail = integrand(hi) * hi.max(decay);
                    if tail <= 1e-10 * total.max(f64::MIN_POSITIVE) || tail == 0.0 {
                        return Ok(total);
                    }
                    lo = hi;
                    hi *= 2.0;
                }
                Err(MstouError::NonConvergence(format!(
                    "ambit integral at rate {rate} not settled by horizon {lo}"
                )))
            }
        }
    }

    /// ∫_{A_t(x)} e^{−rate(t−s)} dξ ds.
    pub fn exponential_moment(&self, rate: f64) -> Result<f64> {
        self.exponential_moment_from(rate, 0.0)
    }
}

/// Volume of the intersection of two `d`-balls of equal radius whose
/// centres are `separation` apart.
pub fn equal_radius_intersection_volume(d: usize, radius: f64, separation: f64) -> Result<f64> {
    require_nonnegative("radius", radius)?;
    require_nonnegative("separation", separation)?;
    if d == 0 {
        return Err(invalid("dimension", "must be >= 1"));
    }
    let (g, r) = (radius, separation);
    if r >= 2.0 * g {
        return Ok(0.0);
    }
    Ok(match d {
        1 => 2.0 * g - r,
        // The two terms cancel as the discs separate; switch to the beta form there.
        2 if r < g => 2.0 * g * g * (r / (2.0 * g)).acos() - 0.5 * r * (4.0 * g * g - r * r).sqrt(),
        3 => PI * (4.0 * g + r) * (2.0 * g - r).powi(2) / 12.0,
        _ => lens_volume_incomplete_beta(d, g, r),
    })
}

/// Two identical spherical caps written through the incomplete beta
/// function; valid in every dimension.
pub fn lens_volume_incomplete_beta(d: usize, radius: f64, separation: f64) -> f64 {
    if separation >= 2.0 * radius {
        return 0.0;
    }
    let df = d as f64;
    let prefactor = PI.powf((df - 1.0) / 2.0) / gamma((df - 1.0) / 2.0 + 1.0);
    let x = 1.0 - (separation / (2.0 * radius)).powi(2);
    prefactor * radius.powi(d as i32) * beta_inc(x, (df + 1.0) / 2.0, 0.5)
}

/// Lag, measured back from the later apex, at which A_t(x) and
/// A_{t+dt}(x+dx) start to overlap for linear g(u) = c·u.
///
/// When |dx| > c·dt the overlap begins at t* = t + (dt − |dx|/c)/2, i.e.
/// (dt + |dx|/c)/2 before t + dt; otherwise it begins at t itself, a lag
/// of dt.
pub fn intersection_onset_lag(c: f64, dt: f64, dx: f64) -> Result<f64> {
    require_positive("c", c)?;
    require_nonnegative("dt", dt)?;
    if !dx.is_finite() {
        return Err(MstouError::InvalidParameter {
            name: "dx",
            reason: "must be finite".into(),
        });
    }
    let dx = dx.abs();
    if dx > c * dt {
        Ok(0.5 * (dt + dx / c))
    } else {
        Ok(dt)
    }
}
