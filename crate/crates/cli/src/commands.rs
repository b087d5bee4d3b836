//! Subcommand bodies. Each command computes every output in memory first and
//! only then writes files, so a failing run leaves no partial CSV behind.

use std::path::{Path, PathBuf};

use mstou::estimate::{
    gmm_fit, lrd_decision, quantile, sample_acf, Centring, GmmEstimate, PARAMS,
};
use mstou::moments::{
    correlation, cov_quadrature_oracle, covariance, car_superposition, lrd_classify, mean, mean_quadrature,
    spatial_cov_integral, temporal_cov_integral, variance, CovarianceMethod, Dependence,
};
use mstou::simulate::{
    mse_bound, read_field_csv, simulate, truncation_indicator, write_field_csv, write_jumps_csv, FieldRealization,
    JumpSet,
};
use mstou::MstouModel;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Files produced by a command, written together once all are ready.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes each file through a temporary sibling and a rename.
    pub fn commit(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            let tmp = dir.join(format!(".{name}.tmp"));
            std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
            std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }
}

pub struct Context {
    pub config: RunConfig,
    /// Directory that relative input paths are resolved against.
    pub base: PathBuf,
    pub hash: String,
}

impl Context {
    fn comment(&self) -> String {
        format!("config_hash={}", self.hash)
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    fn table(&self, header: &[&str], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
        let mut bytes = format!("# {}\n", self.comment()).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut bytes);
            w.write_record(header).map_err(csv_error)?;
            for row in rows {
                w.write_record(row).map_err(csv_error)?;
            }
            w.flush().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(bytes)
    }

    /// Fields to analyse: the listed files, or `replicates` simulations with
    /// seeds seed, seed+1, ….
    fn fields(&self, files: &[PathBuf], replicates: usize) -> CliResult<Vec<(String, FieldRealization)>> {
        if !files.is_empty() {
            return files
                .iter()
                .map(|f| {
                    let path = self.resolve(f);
                    let file = std::fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
                    let field = read_field_csv(std::io::BufReader::new(file))?;
                    Ok((f.display().to_string(), field))
                })
                .collect();
        }
        if replicates == 0 {
            return Err(CliError::Config("no field files listed and replicates = 0".into()));
        }
        (0..replicates as u64)
            .into_par_iter()
            .map(|r| {
                let seed = self.config.seed.wrapping_add(r);
                Ok((format!("simulated:{seed}"), self.simulated_field(seed)?))
            })
            .collect()
    }

    fn simulated_field(&self, seed: u64) -> CliResult<FieldRealization> {
        let domain = self.config.build_domain()?;
        let grid = self.config.build_grid(&domain)?;
        if self.config.is_empty_field() {
            return Ok(FieldRealization {
                values: vec![0.0; grid.len()],
                jumps: JumpSet::empty(grid.dimension()),
                grid,
                seed: Some(seed),
            });
        }
        Ok(simulate(&self.config.build_model()?, &domain, &grid, seed)?)
    }
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Config(format!("csv: {e}"))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn lags(max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn simulate_cmd(ctx: &Context) -> CliResult<Outputs> {
    let config = &ctx.config;
    let domain = config.build_domain()?;
    let field = ctx.simulated_field(config.seed)?;
    let (expected, bound) = if config.is_empty_field() {
        (0.0, 0.0)
    } else {
        let model = config.build_model()?;
        (
            config.model.intensity * domain.extended_volume(),
            mse_bound(&model, domain.space_pad(), domain.time_pad())?,
        )
    };
    let mut out = Outputs::default();
    let mut bytes = Vec::new();
    write_field_csv(&mut bytes, &field, Some(&ctx.comment()))?;
    out.add("field.csv", bytes);
    let mut bytes = Vec::new();
    write_jumps_csv(&mut bytes, &field.jumps, Some(&ctx.comment()))?;
    out.add("jumps.csv", bytes);
    let rows = vec![
        vec!["seed".into(), config.seed.to_string()],
        vec!["grid_points".into(), field.grid.len().to_string()],
        vec!["jump_count".into(), field.jumps.len().to_string()],
        vec!["expected_jump_count".into(), num(expected)],
        vec!["truncation_indicator".into(), num(truncation_indicator(&field.jumps, domain.time_pad()))],
        vec!["mse_bound".into(), num(bound)],
    ];
    out.add("diagnostics.csv", ctx.table(&["quantity", "value"], &rows)?);
    Ok(out)
}

fn oracle_columns(model: &MstouModel, dt: f64, dx: f64, var_oracle: f64) -> CliResult<[String; 2]> {
    let c = cov_quadrature_oracle(model, dt, dx)?.value;
    Ok([num(c), num(c / var_oracle)])
}

pub fn moments_cmd(ctx: &Context) -> CliResult<Outputs> {
    let config = &ctx.config;
    let model = config.build_model()?;
    let m = &config.moments;
    let dts = lags(m.max_dt, m.points);
    let dxs = lags(m.max_dx, m.points);
    // Mixed lags have a closed form only in one dimension.
    let pairs: Vec<(f64, f64)> = if model.dimension() == 1 {
        dts.iter().flat_map(|&dt| dxs.iter().map(move |&dx| (dt, dx))).collect()
    } else {
        dts.iter().map(|&dt| (dt, 0.0)).chain(dxs.iter().skip(1).map(|&dx| (0.0, dx))).collect()
    };
    let var = variance(&model)?;
    let var_oracle = if m.oracle { cov_quadrature_oracle(&model, 0.0, 0.0)?.value } else { f64::NAN };
    let rows = pairs
        .par_iter()
        .map(|&(dt, dx)| {
            let cov = covariance(&model, dt, dx)?;
            let method = match cov.method {
                CovarianceMethod::ClosedForm => "closed_form",
                CovarianceMethod::Quadrature => "quadrature",
            };
            let [oc, or] = if m.oracle {
                oracle_columns(&model, dt, dx, var_oracle)?
            } else {
                [String::new(), String::new()]
            };
            Ok(vec![num(dt), num(dx), num(cov.value), oc, num(correlation(&model, dt, dx)?), or, method.into()])
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = Outputs::default();
    out.add(
        "moments.csv",
        ctx.table(
            &["dt", "dx", "covariance", "covariance_oracle", "correlation", "correlation_oracle", "method"],
            &rows,
        )?,
    );
    let optional = |r: mstou::Result<f64>| r.map(num).unwrap_or_else(|_| "inf".into());
    let mut summary = vec![
        vec!["mean".into(), num(mean(&model)?)],
        vec!["variance".into(), num(var)],
    ];
    if m.oracle {
        summary.push(vec!["mean_oracle".into(), num(mean_quadrature(&model)?)]);
        summary.push(vec!["variance_oracle".into(), num(var_oracle)]);
    }
    summary.push(vec!["dependence".into(), lrd_classify(&model).to_string()]);
    if model.ambit().g().linear_slope().is_some() {
        summary.push(vec!["temporal_cov_integral".into(), optional(temporal_cov_integral(&model))]);
        summary.push(vec!["spatial_cov_integral".into(), optional(spatial_cov_integral(&model))]);
    }
    out.add("summary.csv", ctx.table(&["quantity", "value"], &summary)?);
    Ok(out)
}

fn fit_one(ctx: &Context, field: &FieldRealization) -> CliResult<GmmEstimate> {
    let gmm = ctx.config.gmm_config()?;
    let field = match &ctx.config.estimate.region {
        Some(r) => field.restrict(&[(r.space[0], r.space[1])], (r.time[0], r.time[1]))?,
        None => field.clone(),
    };
    Ok(gmm_fit(&field, &gmm)?)
}

pub fn estimate_cmd(ctx: &Context) -> CliResult<Outputs> {
    let config = &ctx.config;
    config.gmm_config()?;
    let fields = ctx.fields(&config.estimate.fields, config.estimate.replicates)?;
    let fits = fields
        .par_iter()
        .map(|(_, f)| fit_one(ctx, f))
        .collect::<CliResult<Vec<_>>>()?;

    let header = [
        "replicate", "source", "alpha", "beta", "c", "mean", "variance", "objective", "steps", "converged", "dependence",
    ];
    let rows: Vec<Vec<String>> = fits
        .iter()
        .zip(&fields)
        .enumerate()
        .map(|(i, (fit, (source, _)))| {
            let mut row = vec![i.to_string(), source.clone()];
            row.extend(fit.beta_hat.iter().map(|v| num(*v)));
            row.extend([
                num(fit.objective),
                fit.steps().to_string(),
                fit.converged().to_string(),
                lrd_decision(fit).to_string(),
            ]);
            row
        })
        .collect();

    let mut summary = Vec::new();
    let columns: Vec<Vec<f64>> = (0..PARAMS)
        .map(|k| {
            let mut xs: Vec<f64> = fits.iter().map(|f| f.beta_hat[k]).collect();
            xs.sort_by(f64::total_cmp);
            xs
        })
        .collect();
    for (label, p) in [("median", 0.5), ("q1", 0.25), ("q3", 0.75)] {
        let mut row = vec![label.to_string()];
        row.extend(columns.iter().map(|xs| num(quantile(xs, p).unwrap_or(f64::NAN))));
        summary.push(row);
    }
    let mut iqr = vec!["iqr".to_string()];
    iqr.extend(columns.iter().map(|xs| {
        num(quantile(xs, 0.75).unwrap_or(f64::NAN) - quantile(xs, 0.25).unwrap_or(f64::NAN))
    }));
    summary.push(iqr);

    let n = fits.len() as f64;
    let lrd: Vec<Vec<String>> = [Dependence::ShortRange, Dependence::LongRange]
        .into_iter()
        .map(|d| {
            let count = fits.iter().filter(|f| lrd_decision(f) == d).count();
            vec![d.to_string(), count.to_string(), num(count as f64 / n)]
        })
        .collect();

    let mut out = Outputs::default();
    out.add("estimates.csv", ctx.table(&header, &rows)?);
    out.add(
        "estimate_summary.csv",
        ctx.table(&["statistic", "alpha", "beta", "c", "mean", "variance"], &summary)?,
    );
    out.add("lrd.csv", ctx.table(&["dependence", "count", "fraction"], &lrd)?);
    Ok(out)
}

pub fn car_cmd(ctx: &Context) -> CliResult<Outputs> {
    let car = &ctx.config.car;
    let sup = car_superposition(car.coefficients.len(), &car.coefficients)?;
    let rows: Vec<Vec<String>> = sup
        .eigenvalues()
        .iter()
        .zip(sup.weights())
        .enumerate()
        .map(|(i, (e, w))| vec![(i + 1).to_string(), num(*e), num(*w)])
        .collect();
    let kernel: Vec<Vec<String>> = lags(car.kernel_max, car.kernel_points)
        .into_iter()
        .map(|u| vec![num(u), num(sup.kernel(u))])
        .collect();
    let mut out = Outputs::default();
    out.add("car.csv", ctx.table(&["index", "eigenvalue", "weight"], &rows)?);
    out.add("kernel.csv", ctx.table(&["u", "kernel"], &kernel)?);
    Ok(out)
}

pub fn mse_cmd(ctx: &Context) -> CliResult<Outputs> {
    let config = &ctx.config;
    let model = if config.is_empty_field() { None } else { Some(config.build_model()?) };
    let rows = config
        .mse
        .pads
        .iter()
        .map(|&pad| {
            let bound = match &model {
                Some(m) => mse_bound(m, pad, pad)?,
                None => 0.0,
            };
            Ok(vec![num(pad), num(bound)])
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = Outputs::default();
    out.add("mse.csv", ctx.table(&["pad", "bound"], &rows)?);
    Ok(out)
}

/// Slice ACFs averaged over every slice of a field, centred on the field
/// mean.
fn averaged_acf(field: &FieldRealization, max_lag: usize, temporal: bool) -> CliResult<Vec<f64>> {
    let centre = field.values.iter().sum::<f64>() / field.values.len() as f64;
    let slices: Vec<Vec<f64>> = if temporal {
        (0..field.grid.space_len()).map(|s| field.series_at(s).to_vec()).collect()
    } else {
        (0..field.grid.time_count()).map(|j| field.snapshot_at(j)).collect()
    };
    let mut acc = vec![0.0; max_lag + 1];
    for s in &slices {
        let r = sample_acf(s, max_lag, Centring::Known(centre))?;
        acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
    }
    Ok(acc.into_iter().map(|v| v / slices.len() as f64).collect())
}

pub fn acf_cmd(ctx: &Context) -> CliResult<Outputs> {
    let config = &ctx.config;
    let files: Vec<PathBuf> = config.acf.field.iter().cloned().collect();
    let fields = ctx.fields(&files, config.acf.replicates)?;
    let max_lag = config.acf.max_lag;
    let per_field = fields
        .par_iter()
        .map(|(_, f)| {
            let t = averaged_acf(f, max_lag, true)?;
            let s = if f.grid.dimension() == 1 {
                averaged_acf(f, max_lag, false)?
            } else {
                // Spatial slices need a single spatial axis.
                vec![f64::NAN; max_lag + 1]
            };
            Ok((t, s))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let spacing = fields[0].1.grid.spacing();
    let model = if config.acf.field.is_none() && !config.is_empty_field() {
        Some(config.build_model()?)
    } else {
        None
    };
    let n = per_field.len() as f64;
    let rows = (0..=max_lag)
        .map(|h| {
            let t = per_field.iter().map(|p| p.0[h]).sum::<f64>() / n;
            let s = per_field.iter().map(|p| p.1[h]).sum::<f64>() / n;
            let lag = h as f64 * spacing;
            let (mt, ms) = match &model {
                Some(m) => (num(correlation(m, lag, 0.0)?), num(correlation(m, 0.0, lag)?)),
                None => (String::new(), String::new()),
            };
            Ok(vec![h.to_string(), num(lag), num(t), num(s), mt, ms])
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = Outputs::default();
    out.add(
        "acf.csv",
        ctx.table(&["lag", "distance", "temporal", "spatial", "temporal_model", "spatial_model"], &rows)?,
    );
    Ok(out)
}
