//! Globally adaptive Gauss–Kronrod (10/21-point) integration.
//!
//! Intervals are bisected in order of largest error estimate until the
//! summed error drops below `max(abs_tol, rel_tol * |value|)`. Semi-infinite
//! ranges are mapped onto `[0, 1)` with `x = a + s * t / (1 - t)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{MstouError, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_208_626_368,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

/// Integral value together with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEstimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_intervals: 4000,
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    for j in 0..10 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    (value, error)
}

impl Quadrature {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_max_intervals(mut self, max_intervals: usize) -> Self {
        self.max_intervals = max_intervals;
        self
    }

    /// Integrates `f` over the finite interval `[a, b]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<QuadEstimate> {
        self.integrate_breaks(f, &[a, b])
    }

    /// Integrates over `[points[0], points[last]]`, seeding the adaptive
    /// partition with the supplied (sorted) breakpoints.
    pub fn integrate_breaks<F: Fn(f64) -> f64>(&self, f: F, points: &[f64]) -> Result<QuadEstimate> {
        if points.len() < 2 {
            return Ok(QuadEstimate { value: 0.0, error: 0.0 });
        }
        let mut heap = BinaryHeap::new();
        let mut total = 0.0;
        let mut total_err = 0.0;
        for w in points.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let (value, error) = gauss_kronrod(&f, a, b);
            total += value;
            total_err += error;
            heap.push(Segment { a, b, value, error });
        }
        loop {
            if !total.is_finite() || !total_err.is_finite() {
                return Err(MstouError::Numerical(format!(
                    "non-finite integrand on [{}, {}]",
                    points[0],
                    points[points.len() - 1]
                )));
            }
            if total_err <= self.abs_tol.max(self.rel_tol * total.abs()) {
                return Ok(QuadEstimate {
                    value: total,
                    error: total_err,
                });
            }
            if heap.len() >= self.max_intervals {
                return Err(MstouError::NonConvergence(format!(
                    "{} intervals used, error {total_err:e} for value {total:e}",
                    heap.len()
                )));
            }
            let worst = heap.pop().expect("heap is non-empty");
            let mid = 0.5 * (worst.a + worst.b);
            if mid <= worst.a || mid >= worst.b {
                // Interval cannot be split further in floating point.
                return Err(MstouError::NonConvergence(format!(
                    "interval [{}, {}] exhausted floating-point resolution",
                    worst.a, worst.b
                )));
            }
            let (lv, le) = gauss_kronrod(&f, worst.a, mid);
            let (rv, re) = gauss_kronrod(&f, mid, worst.b);
            total += lv + rv - worst.value;
            total_err += le + re - worst.error;
            // Guard against drift in the running error sum.
            if total_err < 0.0 {
                total_err = heap.iter().map(|s| s.error).sum::<f64>() + le + re;
            }
            heap.push(Segment { a: worst.a, b: mid, value: lv, error: le });
            heap.push(Segment { a: mid, b: worst.b, value: rv, error: re });
        }
    }

    /// Integrates `f` over `[a, ∞)`; `scale` should be of the order of the
    /// integrand's decay length.
    pub fn integrate_to_infinity<F: Fn(f64) -> f64>(&self, f: F, a: f64, scale: f64) -> Result<QuadEstimate> {
        let g = |t: f64| {
            let one_minus = 1.0 - t;
            let x = a + scale * t / one_minus;
            let jac = scale / (one_minus * one_minus);
            let v = f(x);
            if v == 0.0 {
                0.0
            } else {
                v * jac
            }
        };
        self.integrate(g, 0.0, 1.0)
    }
}

/// Runs an integration whose integrand can fail; the first error raised by
/// the integrand wins over any quadrature error.
pub fn fallible<H, Q>(h: H, run: Q) -> Result<QuadEstimate>
where
    H: Fn(f64) -> Result<f64>,
    Q: FnOnce(&dyn Fn(f64) -> f64) -> Result<QuadEstimate>,
{
    let failure = std::cell::RefCell::new(None);
    let wrapped = |x: f64| match h(x) {
        Ok(v) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            // A non-finite value stops the quadrature at once.
            f64::NAN
        }
    };
    let out = run(&wrapped);
    match failure.into_inner() {
        Some(e) => Err(e),
        None => out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = Quadrature::default();
        let r = q.integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0).unwrap();
        assert!((r.value - (64.0 / 6.0 - 4.0)).abs() < 1e-13);
    }

    #[test]
    fn exponential_tail() {
        let q = Quadrature::default();
        let r = q.integrate_to_infinity(|x| (-x).exp(), 0.0, 1.0).unwrap();
        assert!((r.value - 1.0).abs() < 1e-10);
        let r = q.integrate_to_infinity(|x| x * x * (-3.0 * x).exp(), 1.0, 1.0).unwrap();
        let exact = (-3.0f64).exp() * (1.0 / 3.0 + 2.0 / 9.0 + 2.0 / 27.0);
        assert!((r.value - exact).abs() < 1e-11);
    }

    #[test]
    fn integrable_endpoint_singularity() {
        let q = Quadrature::new(1e-10, 1e-10);
        let r = q.integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0).unwrap();
        assert!((r.value - 2.0).abs() < 1e-8);
    }

    #[test]
    fn kink_handled_by_breakpoints() {
        let q = Quadrature::default();
        let r = q.integrate_breaks(|x: f64| (x - 0.3).abs(), &[0.0, 0.3, 1.0]).unwrap();
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-14);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let q = Quadrature::new(0.0, 1e-15).with_max_intervals(5);
        let err = q.integrate(|x| (1.0 / x).sin(), 1e-6, 1.0).unwrap_err();
        assert!(matches!(err, MstouError::NonConvergence(_)));
    }
}
