//! Shot-noise simulation of compound-Poisson MSTOU fields.
//!
//! Jumps are drawn on the padded domain, then every grid value is the sum of
//! e^{−λₖ(t − sₖ)}·Zₖ over the jumps whose location lies in the ambit set of
//! the grid point. Sums run in jump-index order, so a realization is
//! bit-identical for a given seed whatever the thread count.
//!
//! Randomness comes from one master seed split into ChaCha streams for the
//! jump count, locations, rates and marks. The jump set does not depend on
//! the grid.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::ambit_geometry::GFunction;
use crate::error::{invalid, require_nonnegative, require_positive, MstouError, Result};
use crate::moments::{MstouModel, Seed};
use crate::quadrature::Quadrature;
use crate::rate_mixture::RateDensity;
use crate::special::{factorial, unit_ball_volume};

const STREAM_COUNT: u64 = 0;
const STREAM_LOCATIONS: u64 = 1;
const STREAM_RATES: u64 = 2;
const STREAM_MARKS: u64 = 3;

/// Observation window plus padding. Space is padded on every side, time only
/// toward the past.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationDomain {
    space: Vec<(f64, f64)>,
    time: (f64, f64),
    space_pad: f64,
    time_pad: f64,
}

impl SimulationDomain {
    pub fn new(space: Vec<(f64, f64)>, time: (f64, f64), space_pad: f64, time_pad: f64) -> Result<Self> {
        if space.is_empty() || space.len() > 3 {
            return Err(invalid("domain", "needs 1 to 3 spatial dimensions"));
        }
        for &(lo, hi) in space.iter().chain(std::iter::once(&time)) {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(invalid("domain", format!("[{lo}, {hi}] is not a proper interval")));
            }
        }
        require_nonnegative("space pad", space_pad)?;
        require_nonnegative("time pad", time_pad)?;
        Ok(Self {
            space,
            time,
            space_pad,
            time_pad,
        })
    }

    pub fn dimension(&self) -> usize {
        self.space.len()
    }

    pub fn space(&self) -> &[(f64, f64)] {
        &self.space
    }

    pub fn time(&self) -> (f64, f64) {
        self.time
    }

    pub fn space_pad(&self) -> f64 {
        self.space_pad
    }

    pub fn time_pad(&self) -> f64 {
        self.time_pad
    }

    /// Same window with different pads.
    pub fn with_pads(&self, space_pad: f64, time_pad: f64) -> Result<Self> {
        Self::new(self.space.clone(), self.time, space_pad, time_pad)
    }

    pub fn extended_space(&self) -> Vec<(f64, f64)> {
        self.space
            .iter()
            .map(|&(lo, hi)| (lo - self.space_pad, hi + self.space_pad))
            .collect()
    }

    pub fn extended_time(&self) -> (f64, f64) {
        (self.time.0 - self.time_pad, self.time.1)
    }

    /// Lebesgue measure of the padded domain.
    pub fn extended_volume(&self) -> f64 {
        let (t0, t1) = self.extended_time();
        self.extended_space().iter().map(|(lo, hi)| hi - lo).product::<f64>() * (t1 - t0)
    }

    pub fn extended_contains(&self, location: &[f64], time: f64) -> bool {
        let (t0, t1) = self.extended_time();
        time >= t0
            && time <= t1
            && location
                .iter()
                .zip(self.extended_space())
                .all(|(x, (lo, hi))| *x >= lo && *x <= hi)
    }
}

/// Regular grid with common spacing in space and time. Values are stored
/// with time varying fastest, then the last spatial coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    space_origin: Vec<f64>,
    time_origin: f64,
    spacing: f64,
    space_counts: Vec<usize>,
    time_count: usize,
}

impl Grid {
    pub fn new(space_origin: Vec<f64>, time_origin: f64, spacing: f64, space_counts: Vec<usize>, time_count: usize) -> Result<Self> {
        require_positive("spacing", spacing)?;
        if space_origin.is_empty() || space_origin.len() != space_counts.len() {
            return Err(invalid("grid", "origin and counts must have one entry per dimension"));
        }
        if space_counts.contains(&0) || time_count == 0 {
            return Err(invalid("grid", "counts must be positive"));
        }
        if space_origin.iter().any(|x| !x.is_finite()) || !time_origin.is_finite() {
            return Err(invalid("grid", "origin must be finite"));
        }
        Ok(Self {
            space_origin,
            time_origin,
            spacing,
            space_counts,
            time_count,
        })
    }

    /// The largest grid with the given spacing anchored at the lower corner
    /// of the (unpadded) window.
    pub fn covering(domain: &SimulationDomain, spacing: f64) -> Result<Self> {
        require_positive("spacing", spacing)?;
        let count = |lo: f64, hi: f64| ((hi - lo) / spacing + 1e-9).floor() as usize + 1;
        let (t0, t1) = domain.time();
        Self::new(
            domain.space().iter().map(|r| r.0).collect(),
            t0,
            spacing,
            domain.space().iter().map(|&(lo, hi)| count(lo, hi)).collect(),
            count(t0, t1),
        )
    }

    pub fn dimension(&self) -> usize {
        self.space_origin.len()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn space_counts(&self) -> &[usize] {
        &self.space_counts
    }

    pub fn time_count(&self) -> usize {
        self.time_count
    }

    pub fn space_len(&self) -> usize {
        self.space_counts.iter().product()
    }

    pub fn len(&self) -> usize {
        self.space_len() * self.time_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time_point(&self, j: usize) -> f64 {
        self.time_origin + j as f64 * self.spacing
    }

    /// Coordinates of spatial site `index` (row-major over dimensions).
    pub fn space_point(&self, index: usize) -> Vec<f64> {
        let mut rest = index;
        let mut x = vec![0.0; self.dimension()];
        for k in (0..self.dimension()).rev() {
            let n = self.space_counts[k];
            x[k] = self.space_origin[k] + (rest % n) as f64 * self.spacing;
            rest /= n;
        }
        x
    }

    /// (site, time index) of flat value index `k`.
    pub fn split_index(&self, k: usize) -> (usize, usize) {
        (k / self.time_count, k % self.time_count)
    }

    pub fn check_within(&self, domain: &SimulationDomain) -> Result<()> {
        if domain.dimension() != self.dimension() {
            return Err(invalid("grid", "dimension differs from the domain"));
        }
        let slack = 1e-9 * self.spacing;
        let last = |origin: f64, n: usize| origin + (n - 1) as f64 * self.spacing;
        for k in 0..self.dimension() {
            let (lo, hi) = domain.space()[k];
            let (a, b) = (self.space_origin[k], last(self.space_origin[k], self.space_counts[k]));
            if a < lo - slack || b > hi + slack {
                return Err(invalid("grid", format!("axis {k} spans [{a}, {b}] outside [{lo}, {hi}]")));
            }
        }
        let (t0, t1) = domain.time();
        let (a, b) = (self.time_origin, last(self.time_origin, self.time_count));
        if a < t0 - slack || b > t1 + slack {
            return Err(invalid("grid", format!("time spans [{a}, {b}] outside [{t0}, {t1}]")));
        }
        Ok(())
    }
}

/// One jump of the compound-Poisson basis: location (ξ, s), rate λ, mark Z.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub location: Vec<f64>,
    pub time: f64,
    pub rate: f64,
    pub mark: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpSet {
    dimension: usize,
    jumps: Vec<JumpRecord>,
}

impl JumpSet {
    pub fn new(dimension: usize, jumps: Vec<JumpRecord>) -> Result<Self> {
        if dimension == 0 {
            return Err(invalid("dimension", "must be >= 1"));
        }
        for j in &jumps {
            if j.location.len() != dimension {
                return Err(invalid("jump", "location dimension mismatch"));
            }
            require_positive("jump rate", j.rate)?;
        }
        Ok(Self { dimension, jumps })
    }

    pub fn empty(dimension: usize) -> Self {
        Self {
            dimension,
            jumps: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn jumps(&self) -> &[JumpRecord] {
        &self.jumps
    }

    pub fn len(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    pub fn min_rate(&self) -> Option<f64> {
        self.jumps.iter().map(|j| j.rate).min_by(f64::total_cmp)
    }

    /// Jumps inside the padded `domain`, in their original order.
    pub fn restricted_to(&self, domain: &SimulationDomain) -> Self {
        Self {
            dimension: self.dimension,
            jumps: self
                .jumps
                .iter()
                .filter(|j| domain.extended_contains(&j.location, j.time))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRealization {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub jumps: JumpSet,
    pub seed: Option<u64>,
}

impl FieldRealization {
    pub fn value(&self, site: usize, time_index: usize) -> f64 {
        self.values[site * self.grid.time_count + time_index]
    }

    /// Time series at spatial site `site`.
    pub fn series_at(&self, site: usize) -> &[f64] {
        let m = self.grid.time_count;
        &self.values[site * m..(site + 1) * m]
    }

    /// Values over all sites at time index `j`.
    pub fn snapshot_at(&self, time_index: usize) -> Vec<f64> {
        (0..self.grid.space_len()).map(|s| self.value(s, time_index)).collect()
    }

    /// The grid points inside `space` × `time` (closed boxes), with the jump
    /// set kept as is.
    pub fn restrict(&self, space: &[(f64, f64)], time: (f64, f64)) -> Result<Self> {
        let grid = &self.grid;
        if space.len() != grid.dimension() {
            return Err(invalid("window", "dimension differs from the grid"));
        }
        let slack = 1e-9 * grid.spacing;
        let range = |origin: f64, n: usize, lo: f64, hi: f64| {
            let first = ((lo - origin) / grid.spacing - 1e-9).ceil().max(0.0) as usize;
            let last = (((hi - origin) / grid.spacing + 1e-9).floor()).min(n as f64 - 1.0);
            if last < first as f64 || origin + first as f64 * grid.spacing > hi + slack {
                None
            } else {
                Some((first, last as usize + 1 - first))
            }
        };
        let mut starts = Vec::new();
        let mut counts = Vec::new();
        #[allow(clippy::needless_range_loop)]
        for k in 0..grid.dimension() {
            let (first, n) = range(grid.space_origin[k], grid.space_counts[k], space[k].0, space[k].1)
                .ok_or_else(|| MstouError::InsufficientData(format!("window misses the grid on axis {k}")))?;
            starts.push(first);
            counts.push(n);
        }
        let (t_first, t_count) = range(grid.time_origin, grid.time_count, time.0, time.1)
            .ok_or_else(|| MstouError::InsufficientData("window misses the grid in time".into()))?;
        let sub = Grid::new(
            (0..grid.dimension())
                .map(|k| grid.space_origin[k] + starts[k] as f64 * grid.spacing)
                .collect(),
            grid.time_origin + t_first as f64 * grid.spacing,
            grid.spacing,
            counts,
            t_count,
        )?;
        let mut values = Vec::with_capacity(sub.len());
        for site in 0..sub.space_len() {
            // Map the sub-grid site back to the parent's site index.
            let mut rest = site;
            let mut local = vec![0; grid.dimension()];
            for k in (0..grid.dimension()).rev() {
                local[k] = rest % sub.space_counts[k];
                rest /= sub.space_counts[k];
            }
            let mut parent = 0;
            for k in 0..grid.dimension() {
                parent = parent * grid.space_counts[k] + starts[k] + local[k];
            }
            values.extend_from_slice(&self.series_at(parent)[t_first..t_first + t_count]);
        }
        Ok(Self {
            grid: sub,
            values,
            jumps: self.jumps.clone(),
            seed: self.seed,
        })
    }
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws the Poisson jump set of the model's compound-Poisson seed on the
/// padded domain.
pub fn draw_jumps(model: &MstouModel, domain: &SimulationDomain, seed: u64) -> Result<JumpSet> {
    let cp = match model.seed() {
        Seed::CompoundPoisson(cp) => *cp,
        Seed::Moments(_) => {
            return Err(MstouError::Unsupported(
                "simulation needs a compound-Poisson seed, not bare moments".into(),
            ))
        }
    };
    if domain.dimension() != model.dimension() {
        return Err(invalid("domain", "dimension differs from the model"));
    }
    let mean_count = cp.intensity() * domain.extended_volume();
    let count = {
        let mut rng = stream(seed, STREAM_COUNT);
        let draw: f64 = Poisson::new(mean_count)
            .map_err(|e| invalid("intensity", e.to_string()))?
            .sample(&mut rng);
        draw as usize
    };
    let space = domain.extended_space();
    let (t0, t1) = domain.extended_time();
    let mut loc_rng = stream(seed, STREAM_LOCATIONS);
    let mut rate_rng = stream(seed, STREAM_RATES);
    let mut mark_rng = stream(seed, STREAM_MARKS);
    let jumps = (0..count)
        .map(|_| {
            let location = space
                .iter()
                .map(|&(lo, hi)| lo + (hi - lo) * loc_rng.random::<f64>())
                .collect();
            let time = t0 + (t1 - t0) * loc_rng.random::<f64>();
            JumpRecord {
                location,
                time,
                rate: model.rate().sample(&mut rate_rng),
                mark: cp.jumps().sample(&mut mark_rng),
            }
        })
        .collect();
    Ok(JumpSet {
        dimension: domain.dimension(),
        jumps,
    })
}

/// Shot-noise sum at every grid point. No discretisation of the kernel is
/// involved; boundary points of an ambit set count as inside.
pub fn evaluate_field(jumps: &JumpSet, model: &MstouModel, grid: &Grid) -> Result<FieldRealization> {
    if jumps.dimension() != grid.dimension() || grid.dimension() != model.dimension() {
        return Err(invalid("grid", "dimension differs from the model or jump set"));
    }
    let g = model.ambit().g();
    let records = jumps.jumps();
    let values = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let (site, j) = grid.split_index(k);
            let x = grid.space_point(site);
            let t = grid.time_point(j);
            let mut y = 0.0;
            for jump in records {
                let lag = t - jump.time;
                if lag < 0.0 {
                    continue;
                }
                let radius = match g {
                    GFunction::Linear { c } => c * lag,
                    other => other.eval(lag),
                };
                let dist2: f64 = x.iter().zip(&jump.location).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist2 <= radius * radius {
                    y += (-jump.rate * lag).exp() * jump.mark;
                }
            }
            y
        })
        .collect();
    Ok(FieldRealization {
        grid: grid.clone(),
        values,
        jumps: jumps.clone(),
        seed: None,
    })
}

/// Draws jumps and evaluates the field on `grid`, which must lie inside the
/// unpadded window.
pub fn simulate(model: &MstouModel, domain: &SimulationDomain, grid: &Grid, seed: u64) -> Result<FieldRealization> {
    grid.check_within(domain)?;
    let jumps = draw_jumps(model, domain, seed)?;
    let mut field = evaluate_field(&jumps, model, grid)?;
    field.seed = Some(seed);
    Ok(field)
}

/// e^{−λ_min·T_pad}: how much of the slowest-decaying jump survives the
/// temporal pad. 1 for an empty jump set.
pub fn truncation_indicator(jumps: &JumpSet, time_pad: f64) -> f64 {
    match jumps.min_rate() {
        Some(l) => (-l * time_pad).exp(),
        None => 1.0,
    }
}

/// Upper bound on E[(Y − Y_truncated)²] from padding by `space_pad` and
/// `time_pad`:
/// V_d (Var(L′) + E[L′]²) E[∫_{w₀}^∞ g^d(w) e^{−2λw} dw] with
/// w₀ = min(T_pad, g⁻¹(X_pad)).
pub fn mse_bound(model: &MstouModel, space_pad: f64, time_pad: f64) -> Result<f64> {
    require_nonnegative("space pad", space_pad)?;
    require_nonnegative("time pad", time_pad)?;
    let second = model.seed_moments().second_moment();
    let d = model.dimension();
    let g = model.ambit().g();
    let w0 = time_pad.min(g.inverse(space_pad));
    match (g.linear_slope(), model.rate()) {
        (Some(c), RateDensity::Gamma { alpha, beta }) if d == 1 => {
            let (a, b) = (*alpha, *beta);
            let reach = 2.0 * w0;
            Ok(c * b.powf(a) * second / (2.0 * (a - 1.0))
                * (reach / (b + reach).powf(a - 1.0) + 1.0 / ((a - 2.0) * (b + reach).powf(a - 2.0))))
        }
        (Some(c), rates) => {
            // ∫_{w0}^∞ w^d e^{−2λw} dw = d! Σ_k (2w0)^k/k! · λ^{k−d−1} e^{−2λw0} / 2^{d+1}
            let reach = 2.0 * w0;
            let mut sum = 0.0;
            let mut power = 1.0;
            for k in 0..=d as u32 {
                if k > 0 {
                    power *= reach / k as f64;
                }
                sum += power * rates.laplace_inverse_moment(d as u32 + 1 - k, reach);
            }
            let geometry = unit_ball_volume(d) * c.powi(d as i32) * factorial(d as u32) / 2f64.powi(d as i32 + 1);
            Ok(second * geometry * sum)
        }
        (None, rates) => {
            let ambit = model.ambit();
            let quad = Quadrature::new(1e-300, 1e-10);
            let e = rates.try_expect(|l| ambit.exponential_moment_from(2.0 * l, w0), &quad)?;
            Ok(second * e)
        }
    }
}

/// Squared per-point differences between the field from all jumps drawn on
/// `large` and the field from the jumps that fall inside `small`.
pub fn exact_truncation_error(
    model: &MstouModel,
    small: &SimulationDomain,
    large: &SimulationDomain,
    grid: &Grid,
    seed: u64,
) -> Result<Vec<f64>> {
    if small.space() != large.space() || small.time() != large.time() {
        return Err(invalid("domain", "both domains must share the observation window"));
    }
    if small.space_pad() > large.space_pad() || small.time_pad() > large.time_pad() {
        return Err(invalid("domain", "the reference domain must have the larger pads"));
    }
    grid.check_within(large)?;
    let all = draw_jumps(model, large, seed)?;
    let kept = all.restricted_to(small);
    let full = evaluate_field(&all, model, grid)?;
    let truncated = evaluate_field(&kept, model, grid)?;
    Ok(full
        .values
        .iter()
        .zip(&truncated.values)
        .map(|(a, b)| (a - b) * (a - b))
        .collect())
}

fn write_comment<W: Write>(out: &mut W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

/// Writes `xi_1..xi_d,s,lambda,z` rows, preceded by optional `#` comment lines.
pub fn write_jumps_csv<W: Write>(mut out: W, jumps: &JumpSet, comment: Option<&str>) -> Result<()> {
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=jumps.dimension()).map(|k| format!("xi_{k}")).collect();
    header.extend(["s", "lambda", "z"].map(String::from));
    w.write_record(&header)?;
    for j in jumps.jumps() {
        let mut row: Vec<String> = j.location.iter().map(f64::to_string).collect();
        row.extend([j.time, j.rate, j.mark].map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `x_1..x_d,t,value` rows in storage order.
pub fn write_field_csv<W: Write>(mut out: W, field: &FieldRealization, comment: Option<&str>) -> Result<()> {
    write_comment(&mut out, comment)?;
    let grid = &field.grid;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=grid.dimension()).map(|k| format!("x_{k}")).collect();
    header.extend(["t", "value"].map(String::from));
    w.write_record(&header)?;
    for (k, v) in field.values.iter().enumerate() {
        let (site, j) = grid.split_index(k);
        let mut row: Vec<String> = grid.space_point(site).iter().map(f64::to_string).collect();
        row.push(grid.time_point(j).to_string());
        row.push(v.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input)
}

fn parse_cell(record: &csv::StringRecord, i: usize, line: usize) -> Result<f64> {
    let cell = record
        .get(i)
        .ok_or_else(|| MstouError::Format(format!("row {line}: missing column {}", i + 1)))?;
    cell.parse::<f64>()
        .map_err(|_| MstouError::Format(format!("row {line}: `{cell}` is not a number")))
}

/// Reads a jump file written by [`write_jumps_csv`].
pub fn read_jumps_csv<R: Read>(input: R) -> Result<JumpSet> {
    let mut reader = csv_reader(input);
    let headers = reader.headers()?.clone();
    let d = headers.iter().filter(|h| h.starts_with("xi_")).count();
    if d == 0 || headers.len() != d + 3 {
        return Err(MstouError::Format("expected columns xi_1..xi_d,s,lambda,z".into()));
    }
    let mut jumps = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let location = (0..d).map(|i| parse_cell(&record, i, line + 1)).collect::<Result<_>>()?;
        jumps.push(JumpRecord {
            location,
            time: parse_cell(&record, d, line + 1)?,
            rate: parse_cell(&record, d + 1, line + 1)?,
            mark: parse_cell(&record, d + 2, line + 1)?,
        });
    }
    JumpSet::new(d, jumps)
}

type FieldRow = (Vec<f64>, f64, f64);

/// Reads a field file written by [`write_field_csv`] (any row order) and
/// rebuilds its grid. The jump set of the result is empty.
pub fn read_field_csv<R: Read>(input: R) -> Result<FieldRealization> {
    let mut reader = csv_reader(input);
    let headers = reader.headers()?.clone();
    let d = headers.iter().filter(|h| h.starts_with("x_")).count();
    if d == 0 || headers.len() != d + 2 {
        return Err(MstouError::Format("expected columns x_1..x_d,t,value".into()));
    }
    let mut rows: Vec<FieldRow> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let x = (0..d).map(|i| parse_cell(&record, i, line + 1)).collect::<Result<Vec<_>>>()?;
        rows.push((x, parse_cell(&record, d, line + 1)?, parse_cell(&record, d + 1, line + 1)?));
    }
    if rows.is_empty() {
        return Err(MstouError::InsufficientData("field file has no rows".into()));
    }
    let axis_values = |get: &dyn Fn(&FieldRow) -> f64| {
        let mut v: Vec<f64> = rows.iter().map(get).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let mut axes: Vec<Vec<f64>> = (0..d).map(|k| axis_values(&|r| r.0[k])).collect();
    axes.push(axis_values(&|r| r.1));
    let spacing = axes
        .iter()
        .find(|a| a.len() > 1)
        .map(|a| a[1] - a[0])
        .ok_or_else(|| MstouError::InsufficientData("field has a single point".into()))?;
    let tol = 1e-6 * spacing;
    for a in &axes {
        for w in a.windows(2) {
            if ((w[1] - w[0]) - spacing).abs() > tol {
                return Err(MstouError::Format("coordinates are not on a regular grid".into()));
            }
        }
    }
    let time_axis = axes.pop().expect("time axis");
    let grid = Grid::new(
        axes.iter().map(|a| a[0]).collect(),
        time_axis[0],
        spacing,
        axes.iter().map(Vec::len).collect(),
        time_axis.len(),
    )?;
    if rows.len() != grid.len() {
        return Err(MstouError::Format(format!(
            "{} rows for a grid of {} points",
            rows.len(),
            grid.len()
        )));
    }
    let index = |v: f64, origin: f64| ((v - origin) / spacing).round() as usize;
    let mut values = vec![f64::NAN; grid.len()];
    for (x, t, value) in rows {
        let mut site = 0;
        #[allow(clippy::needless_range_loop)]
        for k in 0..d {
            site = site * grid.space_counts[k] + index(x[k], grid.space_origin[k]);
        }
        let slot = site * grid.time_count + index(t, grid.time_origin);
        if !values[slot].is_nan() {
            return Err(MstouError::Format("duplicate grid point".into()));
        }
        values[slot] = value;
    }
    Ok(FieldRealization {
        grid,
        values,
        jumps: JumpSet::empty(d),
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambit_geometry::GClassAmbit;
    use crate::levy_basis::{CompoundPoissonSeed, JumpDistribution, SeedMoments};

    fn canonical(mu: f64) -> MstouModel {
        let seed = CompoundPoissonSeed::new(mu, JumpDistribution::gamma(3.0, 1.0).unwrap()).unwrap();
        MstouModel::new(seed, RateDensity::gamma(3.0, 1.0).unwrap(), GClassAmbit::linear(1, 1.0).unwrap()).unwrap()
    }

    fn square(side: f64, pad: f64) -> SimulationDomain {
        SimulationDomain::new(vec![(0.0, side)], (0.0, side), pad, pad).unwrap()
    }

    #[test]
    fn domain_geometry() {
        let d = square(100.0, 40.0);
        assert_eq!(d.extended_space(), vec![(-40.0, 140.0)]);
        assert_eq!(d.extended_time(), (-40.0, 100.0));
        assert_eq!(d.extended_volume(), 180.0 * 140.0);
        assert!(SimulationDomain::new(vec![(1.0, 0.0)], (0.0, 1.0), 0.0, 0.0).is_err());
        assert!(SimulationDomain::new(vec![(0.0, 1.0)], (0.0, 1.0), -1.0, 0.0).is_err());
    }

    #[test]
    fn grid_layout() {
        let d = SimulationDomain::new(vec![(0.0, 2.0), (10.0, 11.0)], (0.0, 1.0), 0.0, 0.0).unwrap();
        let g = Grid::covering(&d, 0.5).unwrap();
        assert_eq!(g.space_counts(), &[5, 3]);
        assert_eq!(g.time_count(), 3);
        assert_eq!(g.len(), 45);
        assert_eq!(g.space_point(0), vec![0.0, 10.0]);
        assert_eq!(g.space_point(4), vec![0.5, 10.5]);
        assert_eq!(g.split_index(7), (2, 1));
        g.check_within(&d).unwrap();
        let outside = Grid::new(vec![0.0, 10.0], 0.0, 0.5, vec![6, 3], 3).unwrap();
        assert!(outside.check_within(&d).is_err());
    }

    #[test]
    fn jump_count_matches_poisson_mean() {
        let m = canonical(0.2);
        let d = square(100.0, 40.0);
        let expected = 0.2 * 180.0 * 140.0;
        assert_eq!(expected, 5040.0);
        for seed in 0..5 {
            let jumps = draw_jumps(&m, &d, seed).unwrap();
            assert!((jumps.len() as f64 - expected).abs() <= 4.0 * expected.sqrt());
            assert!(jumps.jumps().iter().all(|j| d.extended_contains(&j.location, j.time)));
            assert!(jumps.jumps().iter().all(|j| j.rate > 0.0 && j.mark > 0.0));
        }
    }

    #[test]
    fn tiny_intensity_gives_empty_field() {
        let m = canonical(1e-12);
        let d = square(10.0, 1.0);
        let f = simulate(&m, &d, &Grid::covering(&d, 0.5).unwrap(), 3).unwrap();
        assert!(f.jumps.is_empty());
        assert!(f.values.iter().all(|&v| v == 0.0));
        assert_eq!(truncation_indicator(&f.jumps, 40.0), 1.0);
    }

    #[test]
    fn single_jump_contribution() {
        let m = canonical(0.2);
        let d = square(10.0, 0.0);
        let grid = Grid::covering(&d, 1.0).unwrap();
        let jump = JumpRecord {
            location: vec![3.0],
            time: 2.0,
            rate: 0.5,
            mark: 1.5,
        };
        let f = evaluate_field(&JumpSet::new(1, vec![jump]).unwrap(), &m, &grid).unwrap();
        for k in 0..grid.len() {
            let (site, j) = grid.split_index(k);
            let (x, t) = (grid.space_point(site)[0], grid.time_point(j));
            let expected = if t >= 2.0 && (x - 3.0).abs() <= t - 2.0 {
                1.5 * (-0.5 * (t - 2.0)).exp()
            } else {
                0.0
            };
            assert_eq!(f.values[k], expected, "x={x} t={t}");
        }
        // The apex of the cone sits on the jump itself and counts.
        assert_eq!(f.value(3, 2), 1.5);
    }

    #[test]
    fn deterministic_across_runs_and_threads() {
        let m = canonical(0.2);
        let d = square(20.0, 10.0);
        let grid = Grid::covering(&d, 0.5).unwrap();
        let a = simulate(&m, &d, &grid, 11).unwrap();
        let b = simulate(&m, &d, &grid, 11).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| simulate(&m, &d, &grid, 11).unwrap());
        assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), c.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let other = simulate(&m, &d, &grid, 12).unwrap();
        assert_ne!(a.values, other.values);
    }

    #[test]
    fn jump_set_does_not_depend_on_grid() {
        let m = canonical(0.2);
        let d = square(20.0, 10.0);
        let coarse = simulate(&m, &d, &Grid::covering(&d, 1.0).unwrap(), 5).unwrap();
        let fine = simulate(&m, &d, &Grid::covering(&d, 0.25).unwrap(), 5).unwrap();
        assert_eq!(coarse.jumps, fine.jumps);
        // Shared points agree exactly.
        assert_eq!(coarse.value(2, 3), fine.value(8, 12));
    }

    #[test]
    fn non_negative_marks_give_non_negative_field() {
        let m = canonical(0.5);
        let d = square(15.0, 5.0);
        let f = simulate(&m, &d, &Grid::covering(&d, 0.5).unwrap(), 1).unwrap();
        assert!(f.values.iter().all(|&v| v >= 0.0));
        assert!(f.values.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn moment_seed_cannot_be_simulated() {
        let m = MstouModel::new(
            SeedMoments::new(0.0, 1.0).unwrap(),
            RateDensity::gamma(3.0, 1.0).unwrap(),
            GClassAmbit::linear(1, 1.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(draw_jumps(&m, &square(5.0, 1.0), 0), Err(MstouError::Unsupported(_))));
    }

    #[test]
    fn truncation_indicator_values() {
        let jumps = JumpSet::new(
            1,
            vec![
                JumpRecord { location: vec![0.0], time: 0.0, rate: 0.3, mark: 1.0 },
                JumpRecord { location: vec![0.0], time: 0.0, rate: 0.1, mark: 1.0 },
            ],
        )
        .unwrap();
        assert!((truncation_indicator(&jumps, 40.0) - (-4.0f64).exp()).abs() < 1e-17);
        assert!((truncation_indicator(&jumps, 40.0) - 0.018_316).abs() < 1e-6);
        assert_eq!(truncation_indicator(&jumps, 0.0), 1.0);
    }

    /// E over λ of the numerically integrated tail of the ambit set beyond w0.
    fn mse_by_quadrature(model: &MstouModel, w0: f64) -> f64 {
        let quad = Quadrature::new(1e-300, 1e-11);
        let second = model.seed_moments().second_moment();
        let ambit = model.ambit();
        second
            * model
                .rate()
                .expect(
                    |l| {
                        quad.integrate_to_infinity(
                            |w| ambit.cross_section_volume(w) * (-2.0 * l * w).exp(),
                            w0,
                            1.0 / (2.0 * l),
                        )
                        .unwrap()
                        .value
                    },
                    &quad,
                )
                .unwrap()
    }

    #[test]
    fn mse_bound_values() {
        let m = canonical(0.2);
        let second = m.seed_moments().second_moment();
        assert!((second - 2.76).abs() < 1e-14);
        let hand = 0.69 * (80.0 / 6561.0 + 1.0 / 81.0);
        let bound = mse_bound(&m, 40.0, 40.0).unwrap();
        assert!((bound - hand).abs() < 1e-15);
        assert!((bound - 0.016_932).abs() < 1e-6);
        assert!((bound - mse_by_quadrature(&m, 40.0)).abs() < 1e-9 * bound);
        // The smaller pad (in units of g) decides.
        assert_eq!(mse_bound(&m, 10.0, 40.0).unwrap(), mse_bound(&m, 40.0, 10.0).unwrap());
        assert!(mse_bound(&m, 1e6, 1e6).unwrap() < 1e-6);
        let pads = [0.0, 5.0, 10.0, 20.0, 40.0, 80.0];
        for w in pads.windows(2) {
            assert!(mse_bound(&m, w[1], w[1]).unwrap() < mse_bound(&m, w[0], w[0]).unwrap());
        }
    }

    #[test]
    fn general_mse_bound_matches_quadrature() {
        for d in 1..=3 {
            for rate in [RateDensity::gamma(d as f64 + 2.5, 1.5).unwrap(), RateDensity::discrete(vec![(0.3, 0.4), (0.7, 2.0)]).unwrap()] {
                let seed = CompoundPoissonSeed::new(0.7, JumpDistribution::normal(0.3, 1.2).unwrap()).unwrap();
                let m = MstouModel::new(seed, rate, GClassAmbit::linear(d, 0.8).unwrap()).unwrap();
                for &(xp, tp) in &[(0.0, 0.0), (4.0, 10.0), (12.0, 3.0)] {
                    let bound = mse_bound(&m, xp, tp).unwrap();
                    let w0 = f64::min(tp, xp / 0.8);
                    let oracle = mse_by_quadrature(&m, w0);
                    assert!((bound - oracle).abs() <= 1e-8 * oracle, "d={d} pads=({xp},{tp}): {bound} vs {oracle}");
                }
            }
        }
    }

    #[test]
    fn truncation_error_vanishes_for_identical_domains() {
        let m = canonical(0.2);
        let d = square(10.0, 5.0);
        let e = exact_truncation_error(&m, &d, &d, &Grid::covering(&d, 1.0).unwrap(), 9).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
        assert!(exact_truncation_error(&m, &square(10.0, 6.0), &d, &Grid::covering(&d, 1.0).unwrap(), 9).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = canonical(0.3);
        let d = SimulationDomain::new(vec![(0.0, 3.0)], (1.0, 4.0), 2.0, 2.0).unwrap();
        let f = simulate(&m, &d, &Grid::covering(&d, 0.5).unwrap(), 4).unwrap();
        let mut buf = Vec::new();
        write_field_csv(&mut buf, &f, Some("config_hash=abc")).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# config_hash=abc\nx_1,t,value\n"));
        let back = read_field_csv(buf.as_slice()).unwrap();
        assert_eq!(back.grid, f.grid);
        assert_eq!(back.values, f.values);

        let mut buf = Vec::new();
        write_jumps_csv(&mut buf, &f.jumps, None).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("xi_1,s,lambda,z\n"));
        assert_eq!(read_jumps_csv(buf.as_slice()).unwrap(), f.jumps);
    }

    #[test]
    fn restriction_keeps_values() {
        let d = SimulationDomain::new(vec![(0.0, 10.0), (0.0, 4.0)], (0.0, 10.0), 2.0, 2.0).unwrap();
        let f = simulate(&m_2d(), &d, &Grid::covering(&d, 0.5).unwrap(), 8).unwrap();
        let r = f.restrict(&[(2.5, 5.0), (1.0, 2.0)], (6.0, 10.0)).unwrap();
        assert_eq!(r.grid.space_counts(), &[6, 3]);
        assert_eq!(r.grid.time_count(), 9);
        for k in 0..r.grid.len() {
            let (site, j) = r.grid.split_index(k);
            let x = r.grid.space_point(site);
            let t = r.grid.time_point(j);
            let parent = (0..f.grid.len())
                .find(|&q| {
                    let (ps, pj) = f.grid.split_index(q);
                    f.grid.space_point(ps) == x && f.grid.time_point(pj) == t
                })
                .unwrap();
            assert_eq!(r.values[k], f.values[parent]);
        }
        assert!(f.restrict(&[(20.0, 30.0), (0.0, 1.0)], (0.0, 1.0)).is_err());
    }

    fn m_2d() -> MstouModel {
        let seed = CompoundPoissonSeed::new(0.3, JumpDistribution::gamma(3.0, 1.0).unwrap()).unwrap();
        MstouModel::new(seed, RateDensity::gamma(4.0, 1.0).unwrap(), GClassAmbit::linear(2, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn malformed_field_files_are_rejected() {
        assert!(read_field_csv("x_1,t,value\n".as_bytes()).is_err());
        assert!(read_field_csv("x_1,t,value\n0,0,1\n0,1,oops\n".as_bytes()).is_err());
        assert!(read_field_csv("x_1,t,value\n0,0,1\n0,1,2\n0,3,2\n".as_bytes()).is_err());
        assert!(read_field_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
