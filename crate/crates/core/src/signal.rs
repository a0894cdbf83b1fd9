//! Measurement conditioning and FO frequency detection.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurement::MeasurementWindow;

pub const MIN_SPECTRUM_LEN: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("series needs at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("sampling step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("spectra are on different frequency grids ({0} vs {1})")]
    GridMismatch(String, String),
    #[error("no spectra supplied")]
    NoSpectra,
    #[error("invalid detector setting: {0}")]
    Config(String),
}

fn check_series(len: usize, needed: usize, step: f64) -> Result<(), SignalError> {
    if len < needed {
        return Err(SignalError::TooShort { needed, got: len });
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(SignalError::BadStep(step));
    }
    Ok(())
}

pub fn mean(series: &[f64]) -> f64 {
    series.iter().sum::<f64>() / series.len() as f64
}

pub fn remove_mean_series(series: &[f64]) -> Vec<f64> {
    let m = mean(series);
    series.iter().map(|v| v - m).collect()
}

/// Subtract each channel's sample mean.
pub fn remove_mean(window: &MeasurementWindow) -> MeasurementWindow {
    window.map_columns(remove_mean_series)
}

/// `(x[k+1] - x[k]) / tau`.
pub fn forward_difference(series: &[f64], tau: f64) -> Result<Vec<f64>, SignalError> {
    check_series(series.len(), 2, tau)?;
    Ok(series.windows(2).map(|w| (w[1] - w[0]) / tau).collect())
}

/// Cumulative trapezoid rule starting from 0.
pub fn running_trapezoid(series: &[f64], tau: f64) -> Result<Vec<f64>, SignalError> {
    check_series(series.len(), 2, tau)?;
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    out.push(acc);
    for w in series.windows(2) {
        acc += 0.5 * tau * (w[1] + w[0]);
        out.push(acc);
    }
    Ok(out)
}

/// Centered moving average, truncated at the ends. Width 0 or 1 returns the
/// input.
pub fn moving_average(series: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 {
        return series.to_vec();
    }
    let n = series.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in series {
        prefix.push(prefix.last().unwrap() + v);
    }
    let back = width / 2;
    let fwd = (width - 1) / 2;
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(back);
            let hi = (k + fwd + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taper {
    #[default]
    Rectangular,
    Hann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub source_channel: String,
}

impl Spectrum {
    pub fn resolution(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(0.0)
    }

    pub fn nearest_bin(&self, f: f64) -> usize {
        let df = self.resolution();
        if df <= 0.0 {
            return 0;
        }
        ((f / df).round().max(0.0) as usize).min(self.frequencies.len() - 1)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, a) in self.amplitudes.iter().enumerate() {
            if *a > self.amplitudes[best] {
                best = k;
            }
        }
        best
    }
}

/// Magnitude spectrum over bins `0..=len/2` of the mean-removed series,
/// rescaled so its largest entry is 1. A series with no content beyond
/// rounding (e.g. a constant) yields all zeros.
pub fn single_sided_spectrum(
    series: &[f64],
    fs: f64,
    taper: Taper,
    channel: impl Into<String>,
) -> Result<Spectrum, SignalError> {
    check_series(series.len(), MIN_SPECTRUM_LEN, fs)?;
    let n = series.len();
    let centered = remove_mean_series(series);
    let mut buf: Vec<Complex<f64>> = centered
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let w = match taper {
                Taper::Rectangular => 1.0,
                Taper::Hann => {
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()
                }
            };
            Complex::new(v * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bins = n / 2 + 1;
    let mut amplitudes: Vec<f64> = buf[..bins].iter().map(|c| c.norm() / n as f64).collect();
    let peak = amplitudes.iter().cloned().fold(0.0, f64::max);
    let scale = series.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if peak <= 1e-12 * scale || peak == 0.0 {
        amplitudes.iter_mut().for_each(|a| *a = 0.0);
    } else {
        amplitudes.iter_mut().for_each(|a| *a /= peak);
    }
    let frequencies = (0..bins).map(|k| k as f64 * fs / n as f64).collect();
    Ok(Spectrum {
        frequencies,
        amplitudes,
        source_channel: channel.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZScoreConfig {
    pub lag: usize,
    pub threshold: f64,
    pub influence: f64,
    /// Peaks below this rescaled amplitude are treated as numerical noise.
    pub min_amplitude: f64,
    /// Peaks below this frequency are ignored; they track the slow drift of
    /// the rotor angles rather than an oscillation.
    pub min_frequency_hz: f64,
}

impl Default for ZScoreConfig {
    fn default() -> Self {
        Self {
            lag: 50,
            threshold: 1.0,
            influence: 0.0,
            min_amplitude: 1e-6,
            min_frequency_hz: 0.1,
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let var = xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

/// Smoothed z-score signal: `true` where a value rises more than `threshold`
/// standard deviations above the trailing mean of the previous `lag`
/// filtered values. The first `lag` points are judged against the
/// statistics of the first `lag` points; short series use the whole series.
pub fn zscore_flags(y: &[f64], cfg: &ZScoreConfig) -> Result<Vec<bool>, SignalError> {
    if cfg.lag < 2 {
        return Err(SignalError::Config("lag must be >= 2".into()));
    }
    if !(cfg.threshold >= 0.0) || !(0.0..=1.0).contains(&cfg.influence) || !(cfg.min_frequency_hz >= 0.0) {
        return Err(SignalError::Config(
            "threshold and min_frequency_hz must be >= 0 and influence within [0, 1]".into(),
        ));
    }
    let n = y.len();
    let lag = cfg.lag.min(n);
    let mut flags = vec![false; n];
    if n == 0 {
        return Ok(flags);
    }
    let (m0, s0) = mean_std(&y[..lag]);
    for k in 0..lag {
        flags[k] = y[k] - m0 > cfg.threshold * s0;
    }
    let mut filtered = y[..lag].to_vec();
    filtered.reserve(n - lag);
    for k in lag..n {
        let (m, s) = mean_std(&filtered[k - lag..k]);
        if y[k] - m > cfg.threshold * s {
            flags[k] = true;
            let prev = filtered[k - 1];
            filtered.push(cfg.influence * y[k] + (1.0 - cfg.influence) * prev);
        } else {
            filtered.push(y[k]);
        }
    }
    Ok(flags)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub bin: usize,
    pub frequency: f64,
    pub amplitude: f64,
}

/// Flagged local maxima of one spectrum, DC excluded.
pub fn spectrum_peaks(spectrum: &Spectrum, cfg: &ZScoreConfig) -> Result<Vec<Peak>, SignalError> {
    let a = &spectrum.amplitudes;
    if a.iter().all(|v| *v == 0.0) {
        return Ok(Vec::new());
    }
    let flags = zscore_flags(a, cfg)?;
    let n = a.len();
    let mut peaks = Vec::new();
    for k in 1..n {
        if !flags[k] {
            continue;
        }
        let left = a[k - 1];
        let right = if k + 1 < n { a[k + 1] } else { f64::NEG_INFINITY };
        let in_band = spectrum.frequencies[k] >= cfg.min_frequency_hz;
        if in_band && a[k] > left && a[k] >= right && a[k] >= cfg.min_amplitude {
            peaks.push(Peak {
                bin: k,
                frequency: spectrum.frequencies[k],
                amplitude: a[k],
            });
        }
    }
    Ok(peaks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectedFrequency {
    /// Spectral bin centre.
    pub frequency_hz: f64,
    /// Off-grid estimate; equals `frequency_hz` until refined.
    pub refined_hz: f64,
    pub bin: usize,
    pub amplitude: f64,
    /// Channels whose peaks merged into this frequency.
    pub channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectedFrequencies {
    pub values: Vec<DetectedFrequency>,
    pub per_channel_evidence: BTreeMap<String, Vec<usize>>,
}

impl DetectedFrequencies {
    pub fn frequencies(&self) -> Vec<f64> {
        self.values.iter().map(|d| d.frequency_hz).collect()
    }

    pub fn refined_frequencies(&self) -> Vec<f64> {
        self.values.iter().map(|d| d.refined_hz).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
}

/// Union of per-channel peaks, merged greedily within one bin from the
/// strongest down, keeping at most `max_frequencies` groups. Groups rank by
/// their strongest rescaled peak, then by total rescaled amplitude across
/// channels, then by lower bin.
pub fn detect_fo_frequencies(
    spectra: &[Spectrum],
    cfg: &ZScoreConfig,
    max_frequencies: usize,
) -> Result<DetectedFrequencies, SignalError> {
    let first = spectra.first().ok_or(SignalError::NoSpectra)?;
    for s in spectra {
        let same = s.frequencies.len() == first.frequencies.len()
            && (s.resolution() - first.resolution()).abs() <= 1e-12 * first.resolution().abs();
        if !same {
            return Err(SignalError::GridMismatch(
                first.source_channel.clone(),
                s.source_channel.clone(),
            ));
        }
    }
    let mut all = Vec::new();
    let mut evidence = BTreeMap::new();
    for s in spectra {
        let peaks = spectrum_peaks(s, cfg)?;
        evidence.insert(s.source_channel.clone(), peaks.iter().map(|p| p.bin).collect());
        all.extend(peaks.into_iter().map(|p| (p, s.source_channel.clone())));
    }
    all.sort_by(|(a, _), (b, _)| b.amplitude.total_cmp(&a.amplitude).then(a.bin.cmp(&b.bin)));

    struct Group {
        peak: Peak,
        total: f64,
        channels: Vec<String>,
    }
    let mut groups: Vec<Group> = Vec::new();
    for (p, ch) in all {
        match groups.iter_mut().find(|g| g.peak.bin.abs_diff(p.bin) <= 1) {
            Some(g) => {
                g.total += p.amplitude;
                if !g.channels.contains(&ch) {
                    g.channels.push(ch);
                }
            }
            None => groups.push(Group {
                peak: p,
                total: p.amplitude,
                channels: vec![ch],
            }),
        }
    }
    groups.sort_by(|a, b| {
        b.peak
            .amplitude
            .total_cmp(&a.peak.amplitude)
            .then(b.total.total_cmp(&a.total))
            .then(a.peak.bin.cmp(&b.peak.bin))
    });
    groups.truncate(max_frequencies.min(3));
    Ok(DetectedFrequencies {
        values: groups
            .into_iter()
            .map(|g| DetectedFrequency {
                frequency_hz: g.peak.frequency,
                refined_hz: g.peak.frequency,
                bin: g.peak.bin,
                amplitude: g.peak.amplitude,
                channels: g.channels,
            })
            .collect(),
        per_channel_evidence: evidence,
    })
}

/// Squared DTFT magnitude of the mean-removed series at `f`, over `n^2`.
pub fn dtft_power(series: &[f64], dt: f64, f: f64) -> f64 {
    let m = mean(series);
    let w = 2.0 * std::f64::consts::PI * f * dt;
    let (mut re, mut im) = (0.0, 0.0);
    for (k, v) in series.iter().enumerate() {
        let (s, c) = (w * k as f64).sin_cos();
        re += (v - m) * c;
        im -= (v - m) * s;
    }
    let n = series.len() as f64;
    (re * re + im * im) / (n * n)
}

/// Off-grid frequency estimate: maximizes the summed, per-channel
/// normalized DTFT power over `f0 ± half_width` by golden-section search.
pub fn refine_frequency(channels: &[&[f64]], dt: f64, f0: f64, half_width: f64) -> f64 {
    let weights: Vec<f64> = channels
        .iter()
        .map(|c| {
            let p = dtft_power(c, dt, f0);
            if p > 0.0 {
                1.0 / p
            } else {
                0.0
            }
        })
        .collect();
    if weights.iter().all(|w| *w == 0.0) {
        return f0;
    }
    let objective = |f: f64| -> f64 {
        channels
            .iter()
            .zip(&weights)
            .map(|(c, w)| w * dtft_power(c, dt, f))
            .sum()
    };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = ((f0 - half_width).max(1e-9), f0 + half_width);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (objective(x1), objective(x2));
    for _ in 0..48 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = objective(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = objective(x1);
        }
    }
    let best = 0.5 * (a + b);
    if objective(best) >= objective(f0) {
        best
    } else {
        f0
    }
}
