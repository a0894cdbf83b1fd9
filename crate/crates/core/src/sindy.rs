//! Sparse identification of the angle/speed dynamics with a linear plus
//! trigonometric feature library, and FO source scoring from the fitted
//! sinusoid coefficients of the angle equations.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lstsq::lstsq_rcond;
#[cfg(test)]
use crate::lstsq::lstsq;
use crate::measurement::MeasurementWindow;
use crate::model::{channel_name, ChannelKind, StateLayout};
use crate::signal::{forward_difference, moving_average, running_trapezoid, SignalError};

/// ζ entries at or below this count as zero.
pub const ZETA_ZERO: f64 = 1e-12;
pub const STLS_MAX_ITER: usize = 50;
pub const MAX_FREQUENCIES: usize = 3;

#[derive(Debug, Error)]
pub enum SindyError {
    #[error("missing channel `{0}`")]
    MissingChannel(String),
    #[error("no FO frequencies supplied")]
    NoFrequencies,
    #[error("at most {MAX_FREQUENCIES} frequencies are supported, got {0}")]
    TooManyFrequencies(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("threshold must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("library has no trigonometric columns")]
    MissingTrig,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Constant,
    Delta(usize),
    Omega(usize),
    Vq(usize),
    VqIntegral(usize),
    Sin(usize),
    Cos(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub kind: ColumnKind,
    pub name: String,
}

impl fmt::Display for ColumnSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLibrary {
    pub matrix: DMatrix<f64>,
    pub columns: Vec<ColumnSpec>,
    pub frequencies: Vec<f64>,
}

impl FeatureLibrary {
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Reorder columns: column `k` of the result is column `perm[k]` here.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n_cols());
        Self {
            matrix: self.matrix.select_columns(perm),
            columns: perm.iter().map(|&p| self.columns[p].clone()).collect(),
            frequencies: self.frequencies.clone(),
        }
    }

    pub fn column_index(&self, kind: ColumnKind) -> Option<usize> {
        self.columns.iter().position(|c| c.kind == kind)
    }
}

fn channel<'a>(window: &'a MeasurementWindow, name: &str) -> Result<&'a [f64], SindyError> {
    window
        .channel(name)
        .ok_or_else(|| SindyError::MissingChannel(name.to_string()))
}

/// Library over the first `len - 1` samples:
/// `[1, δ, ω, v_q, ∫v_q, sin/cos(2π f t) per frequency]`.
pub fn build_library(
    window: &MeasurementWindow,
    layout: &StateLayout,
    frequencies: &[f64],
) -> Result<FeatureLibrary, SindyError> {
    if frequencies.is_empty() {
        return Err(SindyError::NoFrequencies);
    }
    if frequencies.len() > MAX_FREQUENCIES {
        return Err(SindyError::TooManyFrequencies(frequencies.len()));
    }
    let rows = window.n_samples() - 1;
    let (ng, nr) = (layout.n_generators, layout.n_ibrs);
    let mut cols: Vec<(ColumnSpec, Vec<f64>)> = Vec::new();
    cols.push((
        ColumnSpec {
            kind: ColumnKind::Constant,
            name: "1".into(),
        },
        vec![1.0; rows],
    ));
    for i in 0..ng {
        let name = channel_name(ChannelKind::Delta, i);
        cols.push((
            ColumnSpec {
                kind: ColumnKind::Delta(i),
                name: name.clone(),
            },
            channel(window, &name)?[..rows].to_vec(),
        ));
    }
    for i in 0..ng {
        let name = channel_name(ChannelKind::Omega, i);
        cols.push((
            ColumnSpec {
                kind: ColumnKind::Omega(i),
                name: name.clone(),
            },
            channel(window, &name)?[..rows].to_vec(),
        ));
    }
    let mut integrals = Vec::with_capacity(nr);
    for j in 0..nr {
        let name = channel_name(ChannelKind::Vq, j);
        let vq = channel(window, &name)?;
        integrals.push(running_trapezoid(vq, window.dt())?);
        cols.push((
            ColumnSpec {
                kind: ColumnKind::Vq(j),
                name,
            },
            vq[..rows].to_vec(),
        ));
    }
    for (j, integral) in integrals.into_iter().enumerate() {
        cols.push((
            ColumnSpec {
                kind: ColumnKind::VqIntegral(j),
                name: format!("ibr{j}.vqI"),
            },
            integral[..rows].to_vec(),
        ));
    }
    for (i, f) in frequencies.iter().enumerate() {
        if !(f.is_finite() && *f > 0.0) {
            return Err(SindyError::Dimension(format!("frequency {f} is not positive")));
        }
        let w = 2.0 * std::f64::consts::PI * f;
        let times: Vec<f64> = (0..rows).map(|k| window.time(k)).collect();
        cols.push((
            ColumnSpec {
                kind: ColumnKind::Sin(i),
                name: format!("sin({f}Hz)"),
            },
            times.iter().map(|t| (w * t).sin()).collect(),
        ));
        cols.push((
            ColumnSpec {
                kind: ColumnKind::Cos(i),
                name: format!("cos({f}Hz)"),
            },
            times.iter().map(|t| (w * t).cos()).collect(),
        ));
    }
    let matrix = DMatrix::from_fn(rows, cols.len(), |r, c| cols[c].1[r]);
    Ok(FeatureLibrary {
        matrix,
        columns: cols.into_iter().map(|(s, _)| s).collect(),
        frequencies: frequencies.to_vec(),
    })
}

/// Forward-difference derivatives of the state channels in layout order,
/// optionally smoothed by a centered moving average first.
pub fn build_derivatives(
    window: &MeasurementWindow,
    layout: &StateLayout,
    smoothing_width: usize,
) -> Result<DMatrix<f64>, SindyError> {
    let n = window.n_samples();
    let mut out = DMatrix::zeros(n.saturating_sub(1), layout.n_states());
    for (c, ch) in layout.states.iter().enumerate() {
        let series = moving_average(channel(window, &ch.name)?, smoothing_width);
        let d = forward_difference(&series, window.dt())?;
        out.set_column(c, &DVector::from_vec(d));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StlsOptions {
    pub max_iter: usize,
    /// Solve on unit-variance columns, then map the coefficients back.
    pub scale_columns: bool,
    /// Relative rank cutoff for the least-squares solves; `None` uses the
    /// machine-precision default.
    pub rcond: Option<f64>,
}

impl Default for StlsOptions {
    fn default() -> Self {
        Self {
            max_iter: STLS_MAX_ITER,
            scale_columns: false,
            rcond: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub xi: DMatrix<f64>,
    pub columns: Vec<ColumnSpec>,
    pub row_names: Vec<String>,
    pub lambda: f64,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
}

impl CoefficientMatrix {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }
}

fn column_scales(theta: &DMatrix<f64>) -> Vec<f64> {
    theta
        .column_iter()
        .map(|c| {
            let n = c.len() as f64;
            let m = c.sum() / n;
            let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                let rms = (c.norm_squared() / n).sqrt();
                if rms > 0.0 {
                    rms
                } else {
                    1.0
                }
            }
        })
        .collect()
}

/// Least squares restricted to `active` columns, returned at full width.
fn solve_active(theta: &DMatrix<f64>, y: &DVector<f64>, active: &[usize], scales: &[f64], rcond: Option<f64>) -> DVector<f64> {
    let mut full = DVector::zeros(theta.ncols());
    if active.is_empty() {
        return full;
    }
    let sub = DMatrix::from_fn(theta.nrows(), active.len(), |r, c| theta[(r, active[c])] / scales[active[c]]);
    let sol = lstsq_rcond(&sub, y, rcond);
    for (c, &a) in active.iter().enumerate() {
        full[a] = sol.x[c] / scales[a];
    }
    full
}

/// Sparse fit of one derivative column. Returns coefficients, whether the
/// active set settled, and the iteration count.
pub fn stls_row(
    theta: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    opts: &StlsOptions,
) -> (DVector<f64>, bool, usize) {
    let scales = if opts.scale_columns {
        column_scales(theta)
    } else {
        vec![1.0; theta.ncols()]
    };
    let mut active: Vec<usize> = (0..theta.ncols()).collect();
    let mut xi = DVector::zeros(theta.ncols());
    for iter in 1..=opts.max_iter.max(1) {
        xi = solve_active(theta, y, &active, &scales, opts.rcond);
        let kept: Vec<usize> = active.iter().copied().filter(|&c| xi[c].abs() >= lambda).collect();
        if kept.len() == active.len() {
            return (xi, true, iter);
        }
        active = kept;
        if active.is_empty() {
            return (DVector::zeros(theta.ncols()), true, iter);
        }
    }
    for v in xi.iter_mut() {
        if v.abs() < lambda {
            *v = 0.0;
        }
    }
    (xi, false, opts.max_iter)
}

pub fn stls(
    library: &FeatureLibrary,
    derivatives: &DMatrix<f64>,
    row_names: &[String],
    lambda: f64,
    opts: &StlsOptions,
) -> Result<CoefficientMatrix, SindyError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SindyError::BadLambda(lambda));
    }
    let theta = &library.matrix;
    if theta.nrows() != derivatives.nrows() {
        return Err(SindyError::Dimension(format!(
            "library has {} rows, derivatives {}",
            theta.nrows(),
            derivatives.nrows()
        )));
    }
    if row_names.len() != derivatives.ncols() {
        return Err(SindyError::Dimension(format!(
            "{} row names for {} derivative columns",
            row_names.len(),
            derivatives.ncols()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(SindyError::NonFinite("library"));
    }
    if derivatives.iter().any(|v| !v.is_finite()) {
        return Err(SindyError::NonFinite("derivatives"));
    }
    let n = derivatives.ncols();
    let mut xi = DMatrix::zeros(n, theta.ncols());
    let mut converged = Vec::with_capacity(n);
    let mut iterations = Vec::with_capacity(n);
    for k in 0..n {
        let y = derivatives.column(k).into_owned();
        let (row, ok, it) = stls_row(theta, &y, lambda, opts);
        xi.set_row(k, &row.transpose());
        converged.push(ok);
        iterations.push(it);
    }
    Ok(CoefficientMatrix {
        xi,
        columns: library.columns.clone(),
        row_names: row_names.to_vec(),
        lambda,
        converged,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedSource {
    pub device: String,
    pub device_index: usize,
    pub frequency_hz: f64,
    pub frequency_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceScore {
    /// `zeta[i][j]`: frequency `i`, device `j`.
    pub zeta: Vec<Vec<f64>>,
    pub frequencies: Vec<f64>,
    pub devices: Vec<String>,
    pub ranking: Vec<RankedSource>,
}

impl SourceScore {
    pub fn nonzero_count(&self) -> usize {
        self.zeta.iter().flatten().filter(|v| **v > ZETA_ZERO).count()
    }

    pub fn max(&self) -> f64 {
        self.ranking.first().map_or(0.0, |r| r.score)
    }
}

/// Squared sinusoid magnitude per (frequency, device) from the angle rows:
/// generator δ rows, then inverter θ rows.
pub fn extract_zeta(xi: &CoefficientMatrix, layout: &StateLayout, frequencies: &[f64]) -> Result<SourceScore, SindyError> {
    let n_angles = layout.n_angles();
    if xi.xi.nrows() < n_angles {
        return Err(SindyError::Dimension(format!(
            "coefficient matrix has {} rows, layout has {} angle states",
            xi.xi.nrows(),
            n_angles
        )));
    }
    let devices = layout.device_ids();
    let mut zeta = Vec::with_capacity(frequencies.len());
    for i in 0..frequencies.len() {
        let find = |kind| {
            xi.columns
                .iter()
                .position(|c| c.kind == kind)
                .ok_or(SindyError::MissingTrig)
        };
        let (s, c) = (find(ColumnKind::Sin(i))?, find(ColumnKind::Cos(i))?);
        zeta.push(
            (0..n_angles)
                .map(|row| xi.xi[(row, s)].powi(2) + xi.xi[(row, c)].powi(2))
                .collect::<Vec<f64>>(),
        );
    }
    let mut ranking: Vec<RankedSource> = zeta
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            let devices = &devices;
            row.iter().enumerate().map(move |(j, &score)| RankedSource {
                device: devices[j].clone(),
                device_index: j,
                frequency_hz: frequencies[i],
                frequency_index: i,
                score,
            })
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.device_index.cmp(&b.device_index))
            .then(a.frequency_index.cmp(&b.frequency_index))
    });
    Ok(SourceScore {
        zeta,
        frequencies: frequencies.to_vec(),
        devices,
        ranking,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Localization {
    Source {
        top: RankedSource,
        /// Every cell sharing the top score, in tie-break order.
        ties: Vec<RankedSource>,
        /// Top score over the runner-up; infinite when the runner-up is 0.
        dominance: f64,
    },
    NoSource,
}

pub fn locate_source(score: &SourceScore) -> Localization {
    let Some(top) = score.ranking.first() else {
        return Localization::NoSource;
    };
    if top.score <= ZETA_ZERO {
        return Localization::NoSource;
    }
    let ties: Vec<RankedSource> = score
        .ranking
        .iter()
        .take_while(|r| r.score == top.score)
        .cloned()
        .collect();
    let second = score.ranking.get(1).map_or(0.0, |r| r.score);
    let dominance = if second > 0.0 {
        top.score / second
    } else {
        f64::INFINITY
    };
    Localization::Source {
        top: top.clone(),
        ties,
        dominance,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveResult {
    pub coefficients: CoefficientMatrix,
    pub score: SourceScore,
    pub rounds: usize,
    /// Set when the round cap was hit with too many nonzero ζ entries.
    pub exceeded: bool,
}

pub const ADAPTIVE_GROWTH: f64 = 1.5;
pub const ADAPTIVE_MAX_ROUNDS: usize = 20;

/// Raise λ by a factor 1.5 until at most `max_nonzero` ζ entries survive.
pub fn adaptive_threshold(
    library: &FeatureLibrary,
    derivatives: &DMatrix<f64>,
    layout: &StateLayout,
    lambda0: f64,
    max_nonzero: usize,
    opts: &StlsOptions,
) -> Result<AdaptiveResult, SindyError> {
    let rows: Vec<String> = layout.states.iter().map(|c| c.name.clone()).collect();
    let mut lambda = lambda0;
    let mut round = 1;
    loop {
        let coefficients = stls(library, derivatives, &rows, lambda, opts)?;
        let score = extract_zeta(&coefficients, layout, &library.frequencies)?;
        let ok = score.nonzero_count() <= max_nonzero;
        if ok || round >= ADAPTIVE_MAX_ROUNDS {
            return Ok(AdaptiveResult {
                coefficients,
                score,
                rounds: round,
                exceeded: !ok,
            });
        }
        lambda *= ADAPTIVE_GROWTH;
        round += 1;
    }
}
