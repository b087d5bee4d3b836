//! Compound-Poisson Lévy seeds and their first two moments.
//!
//! The jump law is closed over the two families used throughout the crate
//! (Gamma and Normal marks). Adding a family means extending
//! [`JumpDistribution`] with its mean, variance and sampler.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{invalid, require_nonnegative, require_positive, Result};

/// Law of the jump marks Zₖ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JumpDistribution {
    /// Gamma with shape and rate (mean `shape / rate`).
    Gamma { shape: f64, rate: f64 },
    Normal { mean: f64, sd: f64 },
}

impl JumpDistribution {
    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        require_positive("jump shape", shape)?;
        require_positive("jump rate", rate)?;
        Ok(Self::Gamma { shape, rate })
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(invalid("jump mean", "must be finite"));
        }
        require_nonnegative("jump sd", sd)?;
        Ok(Self::Normal { mean, sd })
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Gamma { shape, rate } => shape / rate,
            Self::Normal { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Gamma { shape, rate } => shape / (rate * rate),
            Self::Normal { sd, .. } => sd * sd,
        }
    }

    /// E[Z²].
    pub fn second_moment(&self) -> f64 {
        let m = self.mean();
        self.variance() + m * m
    }

    /// Draws one mark.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate)
                .expect("validated gamma parameters")
                .sample(rng),
            Self::Normal { mean, sd } => {
                if sd == 0.0 {
                    mean
                } else {
                    Normal::new(mean, sd).expect("validated normal parameters").sample(rng)
                }
            }
        }
    }
}

/// Compound-Poisson seed: Poisson jumps of intensity μ per unit space-time
/// volume carrying i.i.d. marks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundPoissonSeed {
    intensity: f64,
    jumps: JumpDistribution,
}

/// Mean and variance of the Lévy seed L′.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedMoments {
    pub mean: f64,
    pub variance: f64,
}

impl SeedMoments {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(invalid("seed mean", "must be finite"));
        }
        require_nonnegative("seed variance", variance)?;
        Ok(Self { mean, variance })
    }

    /// Var(L′) + E[L′]², the second moment of the seed.
    pub fn second_moment(&self) -> f64 {
        self.variance + self.mean * self.mean
    }
}

impl CompoundPoissonSeed {
    pub fn new(intensity: f64, jumps: JumpDistribution) -> Result<Self> {
        require_positive("intensity", intensity)?;
        Ok(Self { intensity, jumps })
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn jumps(&self) -> &JumpDistribution {
        &self.jumps
    }

    /// E[L′] = μE[Z] and Var(L′) = μ(Var(Z) + E[Z]²).
    pub fn moments(&self) -> SeedMoments {
        SeedMoments {
            mean: self.intensity * self.jumps.mean(),
            variance: self.intensity * self.jumps.second_moment(),
        }
    }
}

/// Free-function form of [`CompoundPoissonSeed::moments`].
pub fn seed_moments(seed: &CompoundPoissonSeed) -> SeedMoments {
    seed.moments()
}

/// Compound-Poisson seed mimicking a centred Gaussian seed of variance
/// `target_variance`: zero-mean Normal jumps with E[Z²] = σ²/μ.
pub fn gaussian_approx_seed(target_variance: f64, intensity: f64) -> Result<CompoundPoissonSeed> {
    require_positive("target variance", target_variance)?;
    require_positive("intensity", intensity)?;
    let sd = (target_variance / intensity).sqrt();
    CompoundPoissonSeed::new(intensity, JumpDistribution::Normal { mean: 0.0, sd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Poisson;

    #[test]
    fn gamma_marks_moments() {
        let seed = CompoundPoissonSeed::new(0.2, JumpDistribution::gamma(3.0, 1.0).unwrap()).unwrap();
        let m = seed_moments(&seed);
        assert!((m.mean - 0.6).abs() < 1e-15);
        assert!((m.variance - 2.4).abs() < 1e-14);
    }

    #[test]
    fn normal_marks_moments() {
        let seed = CompoundPoissonSeed::new(0.2, JumpDistribution::normal(0.0, 15f64.sqrt()).unwrap()).unwrap();
        let m = seed.moments();
        assert_eq!(m.mean, 0.0);
        assert!((m.variance - 3.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_and_rejected_seeds() {
        assert!(CompoundPoissonSeed::new(0.0, JumpDistribution::normal(0.0, 1.0).unwrap()).is_err());
        assert!(CompoundPoissonSeed::new(-1.0, JumpDistribution::normal(0.0, 1.0).unwrap()).is_err());
        let seed = CompoundPoissonSeed::new(1.0, JumpDistribution::normal(0.0, 0.0).unwrap()).unwrap();
        assert_eq!(seed.moments(), SeedMoments { mean: 0.0, variance: 0.0 });
        assert!(JumpDistribution::gamma(0.0, 1.0).is_err());
        assert!(JumpDistribution::normal(0.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_approximation() {
        let seed = gaussian_approx_seed(3.0, 40.0).unwrap();
        match seed.jumps() {
            JumpDistribution::Normal { mean, sd } => {
                assert_eq!(*mean, 0.0);
                assert!((sd * sd * 40.0 - 3.0).abs() < 1e-14);
            }
            other => panic!("unexpected jump law {other:?}"),
        }
        let unit = gaussian_approx_seed(1.0, 1.0).unwrap();
        assert_eq!(*unit.jumps(), JumpDistribution::Normal { mean: 0.0, sd: 1.0 });
        for &(v, mu) in &[(0.1, 1.0), (3.0, 0.2), (7.5, 1e4)] {
            let m = gaussian_approx_seed(v, mu).unwrap().moments();
            assert_eq!(m.mean, 0.0);
            assert!((m.variance - v).abs() < 1e-12 * v);
        }
        assert!(gaussian_approx_seed(0.0, 1.0).is_err());
        assert!(gaussian_approx_seed(1.0, 0.0).is_err());
    }

    /// L(E) over a unit-volume set is a Poisson(μ) sum of marks.
    #[test]
    fn monte_carlo_unit_volume_sum() {
        let seed = CompoundPoissonSeed::new(0.2, JumpDistribution::gamma(3.0, 1.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let poisson = Poisson::new(seed.intensity()).unwrap();
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let count: f64 = poisson.sample(&mut rng);
            let l: f64 = (0..count as u64).map(|_| seed.jumps().sample(&mut rng)).sum();
            s1 += l;
            s2 += l * l;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let m = seed.moments();
        let se_mean = (m.variance / n as f64).sqrt();
        assert!((mean - m.mean).abs() < 4.0 * se_mean, "mean {mean}");
        // E[Z⁴] for Gamma(3,1) is 3·4·5·6 = 360; Var(L²-ish) bound for the SE.
        let fourth_cumulant = 0.2 * 360.0;
        let se_var = ((fourth_cumulant + 2.0 * m.variance * m.variance) / n as f64).sqrt();
        assert!((var - m.variance).abs() < 4.0 * se_var, "var {var}");
    }
}
