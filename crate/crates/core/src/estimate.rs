//! Moment-based estimation for the canonical one-dimensional model: Gamma(α, β)
//! rates, linear g(u) = c·u, parameters θ = (α, β, c, E[L′], Var(L′)).
//!
//! For lag count m, each anchor (t, x) contributes the residual vector
//!
//! ```text
//! f = (Y − μ, Y² − s₀, Y·Y(x+hΔ) − sₓ(h), Y·Y(t+hΔ) − sₜ(h)),  h = 1..m
//! ```
//!
//! where the model terms are the mean and the second cross-moments implied by
//! θ. Averaging over anchors gives g(θ), which is minimised as g′Wg, first
//! with W = I and then with W = Ŝ⁻¹ built from the step-one residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, MstouError, Result};
use crate::optimize::{differential_evolution, Bounds, DeConfig};
use crate::simulate::FieldRealization;

pub use crate::moments::Dependence;

/// Number of model parameters.
pub const PARAMS: usize = 5;

/// θ as (α, β, c, E[L′], Var(L′)).
pub type ParamVector = [f64; PARAMS];

const RIDGE_EPSILON: f64 = 1e-8;
const MAX_CONDITION: f64 = 1e12;

/// Residual vector (f_E, f_Var, f_X,1..m, f_T,1..m).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    values: Vec<f64>,
    lags: usize,
}

impl MomentVector {
    fn from_values(values: Vec<f64>, lags: usize) -> Self {
        debug_assert_eq!(values.len(), moment_count(lags));
        Self { values, lags }
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean_component(&self) -> f64 {
        self.values[0]
    }

    pub fn variance_component(&self) -> f64 {
        self.values[1]
    }

    /// Spatial product residual at lag h (1-based).
    pub fn spatial(&self, h: usize) -> f64 {
        self.values[1 + h]
    }

    /// Temporal product residual at lag h (1-based).
    pub fn temporal(&self, h: usize) -> f64 {
        self.values[1 + self.lags + h]
    }

    /// g′Wg.
    pub fn quadratic_form(&self, weight: &DMatrix<f64>) -> f64 {
        let v = DVector::from_column_slice(&self.values);
        (v.transpose() * weight * &v)[(0, 0)]
    }
}

fn moment_count(lags: usize) -> usize {
    2 * (1 + lags)
}

fn check_lags(lags: usize) -> Result<()> {
    if lags < 2 {
        return Err(invalid("m", "needs at least 2 lags"));
    }
    Ok(())
}

/// Values observed around one anchor: Y_t(x), Y_t(x + hΔ) and Y_{t+hΔ}(x)
/// for h = 1..m.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentWindow {
    pub centre: f64,
    pub spatial: Vec<f64>,
    pub temporal: Vec<f64>,
}

impl MomentWindow {
    pub fn lags(&self) -> usize {
        self.spatial.len()
    }

    /// Data part of the residual vector.
    fn observations(&self) -> Vec<f64> {
        let y = self.centre;
        let mut out = Vec::with_capacity(moment_count(self.lags()));
        out.push(y);
        out.push(y * y);
        out.extend(self.spatial.iter().map(|v| y * v));
        out.extend(self.temporal.iter().map(|v| y * v));
        out
    }
}

/// Model-implied mean and second moments for θ at grid spacing Δ.
pub fn model_moments(params: &ParamVector, spacing: f64, lags: usize) -> Result<Vec<f64>> {
    let [alpha, beta, c, mean, variance] = *params;
    if !(alpha > 2.0) {
        return Err(invalid("alpha", format!("must exceed 2, got {alpha}")));
    }
    if params.iter().any(|v| !v.is_finite()) || beta < 0.0 || c < 0.0 || variance < 0.0 {
        return Err(invalid("theta", format!("{params:?} is outside the parameter space")));
    }
    let denom = (alpha - 2.0) * (alpha - 1.0);
    let mu = 2.0 * c * beta * beta * mean / denom;
    let mu2 = mu * mu;
    // c·β^α·V / (2 (β + A)^{α−2} (α−2)(α−1)), written to stay finite as β → 0 or c → 0.
    let cross = |shift: f64| {
        let ratio = if beta == 0.0 { 0.0 } else { beta / (beta + shift) };
        c * beta * beta * variance * ratio.powf(alpha - 2.0) / (2.0 * denom) + mu2
    };
    let mut out = Vec::with_capacity(moment_count(lags));
    out.push(mu);
    out.push(cross(0.0));
    for h in 1..=lags {
        let dx = h as f64 * spacing;
        out.push(if c == 0.0 { mu2 } else { cross(dx / c) });
    }
    for h in 1..=lags {
        out.push(cross(h as f64 * spacing));
    }
    Ok(out)
}

/// Residuals of a single window at θ.
pub fn moment_residuals(window: &MomentWindow, params: &ParamVector, spacing: f64) -> Result<MomentVector> {
    let lags = window.lags();
    check_lags(lags)?;
    if window.temporal.len() != lags {
        return Err(invalid("window", "spatial and temporal lag counts differ"));
    }
    let model = model_moments(params, spacing, lags)?;
    let values = window.observations().iter().zip(&model).map(|(d, m)| d - m).collect();
    Ok(MomentVector::from_values(values, lags))
}

/// Anchor averages of the data terms, from which g(θ) and Ŝ(θ) follow
/// without revisiting the field.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    lags: usize,
    spacing: f64,
    side: usize,
    anchors: usize,
    data_mean: Vec<f64>,
    /// Average of d·d′ over anchors, row-major.
    data_outer: Vec<f64>,
}

impl SampleMoments {
    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Grid side N used (points per axis).
    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of anchors, (N − m)².
    pub fn anchors(&self) -> usize {
        self.anchors
    }

    pub fn data_mean(&self) -> &[f64] {
        &self.data_mean
    }

    /// g_{N,m}(θ).
    pub fn evaluate(&self, params: &ParamVector) -> Result<MomentVector> {
        let model = model_moments(params, self.spacing, self.lags)?;
        let values = self.data_mean.iter().zip(&model).map(|(d, m)| d - m).collect();
        Ok(MomentVector::from_values(values, self.lags))
    }

    /// Ŝ(θ): average of f·f′ over anchors.
    pub fn residual_outer(&self, params: &ParamVector) -> Result<DMatrix<f64>> {
        let model = model_moments(params, self.spacing, self.lags)?;
        let k = model.len();
        // mean((d − m)(d − m)′) = mean(dd′) − d̄m′ − md̄′ + mm′
        let s = DMatrix::from_fn(k, k, |i, j| {
            self.data_outer[i * k + j] - self.data_mean[i] * model[j] - model[i] * self.data_mean[j] + model[i] * model[j]
        });
        if s.iter().any(|v| !v.is_finite()) {
            return Err(MstouError::Numerical("residual outer product is not finite".into()));
        }
        Ok(s)
    }
}

/// Side length and spacing of the square part of a 1-D field used for
/// estimation, plus a warning when the grid is rectangular.
fn square_side(field: &FieldRealization) -> Result<(usize, Option<String>)> {
    if field.grid.dimension() != 1 {
        return Err(MstouError::Unsupported(
            "moment estimation is implemented for one spatial dimension".into(),
        ));
    }
    let nx = field.grid.space_counts()[0];
    let nt = field.grid.time_count();
    let side = nx.min(nt);
    let warning = (nx != nt).then(|| format!("grid is {nx}×{nt}; using the leading {side}×{side} block"));
    Ok((side, warning))
}

/// Precomputes the anchor averages for g_{N,m} on the leading N×N block of a
/// 1-D field. Anchors are the (N − m)² points whose m spatial and temporal
/// forward neighbours lie on the grid.
pub fn sample_moment_average(field: &FieldRealization, lags: usize) -> Result<SampleMoments> {
    check_lags(lags)?;
    let (side, _) = square_side(field)?;
    if side <= lags {
        return Err(MstouError::InsufficientData(format!(
            "need more than {lags} points per axis, got {side}"
        )));
    }
    if field.values.iter().any(|v| !v.is_finite()) {
        return Err(MstouError::InsufficientData("field contains non-finite values".into()));
    }
    let k = moment_count(lags);
    let reach = side - lags;
    let mut data_mean = vec![0.0; k];
    let mut data_outer = vec![0.0; k * k];
    let mut d = vec![0.0; k];
    for x in 0..reach {
        for t in 0..reach {
            let y = field.value(x, t);
            d[0] = y;
            d[1] = y * y;
            for h in 1..=lags {
                d[1 + h] = y * field.value(x + h, t);
                d[1 + lags + h] = y * field.value(x, t + h);
            }
            for i in 0..k {
                data_mean[i] += d[i];
                for j in 0..k {
                    data_outer[i * k + j] += d[i] * d[j];
                }
            }
        }
    }
    let anchors = reach * reach;
    let n = anchors as f64;
    data_mean.iter_mut().for_each(|v| *v /= n);
    data_outer.iter_mut().for_each(|v| *v /= n);
    Ok(SampleMoments {
        lags,
        spacing: field.grid.spacing(),
        side,
        anchors,
        data_mean,
        data_outer,
    })
}

/// Ŝ at θ and its (possibly regularised) inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub covariance: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    /// Ridge added to the diagonal before inversion, 0 when none was needed.
    pub ridge: f64,
}

/// Builds Ŝ(θ) and inverts it, adding ε·trace/dim·I first when Ŝ is singular
/// or its condition number exceeds 1e12.
pub fn weight_matrix(sample: &SampleMoments, params: &ParamVector) -> Result<WeightMatrix> {
    let covariance = sample.residual_outer(params)?;
    let k = covariance.nrows();
    let symmetric = (&covariance + covariance.transpose()) * 0.5;
    let eigen = symmetric.clone().symmetric_eigen().eigenvalues;
    let largest = eigen.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let smallest = eigen.iter().copied().fold(f64::INFINITY, f64::min);
    let ridge = if smallest <= 0.0 || largest / smallest > MAX_CONDITION {
        RIDGE_EPSILON * symmetric.trace() / k as f64
    } else {
        0.0
    };
    if !(ridge >= 0.0) || (smallest <= 0.0 && ridge == 0.0) {
        return Err(MstouError::Numerical("residual covariance is degenerate".into()));
    }
    let regular = &symmetric + DMatrix::identity(k, k) * ridge;
    let inverse = regular
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| regular.try_inverse())
        .ok_or_else(|| MstouError::Numerical("residual covariance is not invertible".into()))?;
    Ok(WeightMatrix {
        covariance,
        inverse,
        ridge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GmmMode {
    OneStep,
    TwoStep,
    /// Re-weight and refit until successive estimates differ by less than
    /// `tol` in Euclidean norm.
    Iterated { max_iters: usize, tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmConfig {
    pub lags: usize,
    pub bounds: Bounds,
    pub optimizer: DeConfig,
    pub mode: GmmMode,
}

/// Default search box for θ. The β edge starts at 1e-6 so the rate density
/// stays proper.
pub fn default_bounds() -> Bounds {
    Bounds::new(vec![2.0, 1e-6, 0.0, -2.5, 0.0], vec![35.0, 35.0, 5.0, 2.5, 15.0]).expect("static bounds are valid")
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            lags: 3,
            bounds: default_bounds(),
            optimizer: DeConfig::default(),
            mode: GmmMode::TwoStep,
        }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        check_lags(self.lags)?;
        self.optimizer.validate()?;
        if self.bounds.dimension() != PARAMS {
            return Err(invalid("bounds", "need one interval per parameter"));
        }
        if self.bounds.lower[0] < 2.0 {
            return Err(invalid("bounds", "alpha lower edge must be at least 2"));
        }
        if self.bounds.lower[1] < 0.0 || self.bounds.lower[2] < 0.0 || self.bounds.lower[4] < 0.0 {
            return Err(invalid("bounds", "beta, c and the variance must be non-negative"));
        }
        if let GmmMode::Iterated { max_iters, tol } = self.mode {
            if max_iters == 0 || !(tol > 0.0) {
                return Err(invalid("mode", "iterated mode needs max_iters ≥ 1 and tol > 0"));
            }
        }
        Ok(())
    }
}

/// One optimiser run.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmStep {
    pub beta_hat: ParamVector,
    pub objective: f64,
    pub generations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmEstimate {
    pub beta_hat: ParamVector,
    /// g′Wg at `beta_hat` under `weight_matrix`.
    pub objective: f64,
    pub weight_matrix: DMatrix<f64>,
    /// Ridge used for the final weight matrix (0 for identity or none).
    pub ridge: f64,
    pub trace: Vec<GmmStep>,
    pub side: usize,
    pub warnings: Vec<String>,
}

impl GmmEstimate {
    pub fn steps(&self) -> usize {
        self.trace.len()
    }

    /// False when some optimiser run exhausted its budget; the estimate is
    /// then the best point found.
    pub fn converged(&self) -> bool {
        self.trace.iter().all(|s| s.converged)
    }
}

fn to_params(x: &[f64]) -> ParamVector {
    let mut p = [0.0; PARAMS];
    p.copy_from_slice(x);
    p
}

fn minimise(sample: &SampleMoments, weight: Option<&DMatrix<f64>>, config: &GmmConfig, step: usize) -> Result<GmmStep> {
    let objective = |x: &[f64]| match sample.evaluate(&to_params(x)) {
        Ok(g) => match weight {
            Some(w) => g.quadratic_form(w),
            None => g.as_slice().iter().map(|v| v * v).sum(),
        },
        Err(_) => f64::INFINITY,
    };
    let de = DeConfig {
        seed: config.optimizer.seed.wrapping_add(step as u64),
        ..config.optimizer.clone()
    };
    let result = differential_evolution(objective, &config.bounds, &de)?;
    if !result.value.is_finite() {
        return Err(MstouError::NonConvergence(
            "objective is infinite over the whole search box".into(),
        ));
    }
    Ok(GmmStep {
        beta_hat: to_params(&result.best),
        objective: result.value,
        generations: result.generations,
        evaluations: result.evaluations,
        converged: result.converged,
    })
}

/// GMM fit on the leading N×N block of a 1-D field.
pub fn gmm_fit(field: &FieldRealization, config: &GmmConfig) -> Result<GmmEstimate> {
    config.validate()?;
    let (side, warning) = square_side(field)?;
    if side <= config.lags + 1 {
        return Err(MstouError::InsufficientData(format!(
            "need more than {} points per axis, got {side}",
            config.lags + 1
        )));
    }
    let sample = sample_moment_average(field, config.lags)?;
    fit_sample(&sample, config, warning.into_iter().collect())
}

/// GMM fit from precomputed anchor averages.
pub fn fit_sample(sample: &SampleMoments, config: &GmmConfig, mut warnings: Vec<String>) -> Result<GmmEstimate> {
    config.validate()?;
    if sample.lags() != config.lags {
        return Err(invalid("lags", "sample was built with a different lag count"));
    }
    let k = moment_count(config.lags);
    let first = minimise(sample, None, config, 0)?;
    let mut trace = vec![first];
    let mut weight = DMatrix::identity(k, k);
    let mut ridge = 0.0;
    let reweights = match config.mode {
        GmmMode::OneStep => 0,
        GmmMode::TwoStep => 1,
        GmmMode::Iterated { max_iters, .. } => max_iters,
    };
    for step in 1..=reweights {
        let previous = trace.last().expect("at least one step").beta_hat;
        let w = weight_matrix(sample, &previous)?;
        let next = minimise(sample, Some(&w.inverse), config, step)?;
        let shift = previous
            .iter()
            .zip(&next.beta_hat)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        weight = w.inverse;
        ridge = w.ridge;
        trace.push(next);
        if let GmmMode::Iterated { tol, max_iters } = config.mode {
            if shift < tol {
                break;
            }
            if step == max_iters {
                warnings.push(format!("iterated GMM stopped after {max_iters} re-weightings"));
            }
        }
    }
    let last = trace.last().expect("at least one step");
    if trace.iter().any(|s| !s.converged) {
        warnings.push("optimiser budget exhausted; reporting best point found".into());
    }
    Ok(GmmEstimate {
        beta_hat: last.beta_hat,
        objective: last.objective,
        weight_matrix: weight,
        ridge,
        trace,
        side: sample.side(),
        warnings,
    })
}

/// Long-range dependence in time for d = 1 holds iff α ≤ 3.
pub fn lrd_decision(estimate: &GmmEstimate) -> Dependence {
    if estimate.beta_hat[0] <= 3.0 {
        Dependence::LongRange
    } else {
        Dependence::ShortRange
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcfAxis {
    /// Time series at spatial site `site`.
    Temporal { site: usize },
    /// Spatial profile (d = 1) at time index `time_index`.
    Spatial { time_index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Centring {
    /// Subtract the slice's own mean.
    SliceMean,
    /// Subtract a given level, such as a pooled or theoretical mean.
    Known(f64),
}

fn slice(field: &FieldRealization, axis: AcfAxis) -> Result<Vec<f64>> {
    match axis {
        AcfAxis::Temporal { site } => {
            if site >= field.grid.space_len() {
                return Err(invalid("site", format!("{site} is off the grid")));
            }
            Ok(field.series_at(site).to_vec())
        }
        AcfAxis::Spatial { time_index } => {
            if field.grid.dimension() != 1 {
                return Err(MstouError::Unsupported("spatial ACF needs one spatial dimension".into()));
            }
            if time_index >= field.grid.time_count() {
                return Err(invalid("time_index", format!("{time_index} is off the grid")));
            }
            Ok(field.snapshot_at(time_index))
        }
    }
}

/// Sample autocorrelation r(0..=max_lag) of one axis slice, centred on the
/// slice mean.
pub fn empirical_acf(field: &FieldRealization, axis: AcfAxis, max_lag: usize) -> Result<Vec<f64>> {
    empirical_acf_centred(field, axis, max_lag, Centring::SliceMean)
}

pub fn empirical_acf_centred(field: &FieldRealization, axis: AcfAxis, max_lag: usize, centring: Centring) -> Result<Vec<f64>> {
    sample_acf(&slice(field, axis)?, max_lag, centring)
}

/// r(h) = Σ (yᵢ − ȳ)(yᵢ₊ₕ − ȳ) / Σ (yᵢ − ȳ)².
pub fn sample_acf(series: &[f64], max_lag: usize, centring: Centring) -> Result<Vec<f64>> {
    let n = series.len();
    if n < max_lag + 2 {
        return Err(MstouError::InsufficientData(format!(
            "{n} points cannot support lag {max_lag}"
        )));
    }
    let centre = match centring {
        Centring::SliceMean => series.iter().sum::<f64>() / n as f64,
        Centring::Known(level) => level,
    };
    let dev: Vec<f64> = series.iter().map(|y| y - centre).collect();
    let denom: f64 = dev.iter().map(|v| v * v).sum();
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(MstouError::InsufficientData("slice has zero variance".into()));
    }
    Ok((0..=max_lag)
        .map(|h| dev.iter().zip(&dev[h..]).map(|(a, b)| a * b).sum::<f64>() / denom)
        .collect())
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}
