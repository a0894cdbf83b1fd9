//! End-to-end localization: window selection, conditioning, frequency
//! detection, sparse identification, scoring and report export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::measurement::{ingest_csv, MeasurementError, MeasurementWindow};
use crate::model::{ChannelKind, ModelError, SystemModel};
use crate::signal::{detect_fo_frequencies, refine_frequency, remove_mean, single_sided_spectrum, DetectedFrequencies, SignalError, Spectrum, Taper, ZScoreConfig};
use crate::simulator::{simulate, Scenario, SimError};
use crate::sindy::{
    adaptive_threshold, build_derivatives, build_library, locate_source, AdaptiveResult, Localization, SindyError, StlsOptions,
};

pub const MIN_WINDOW_SAMPLES: f64 = 240.0;
/// Initial STLS threshold. The generator angle rows carry the forcing only
/// through the sampling interval, so their sinusoid coefficients are of
/// order `dt * a / M`; the threshold has to sit below that in per-unit.
pub const DEFAULT_LAMBDA: f64 = 0.0015;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("simulation: {0}")]
    Simulation(#[from] SimError),
    #[error("measurements: {0}")]
    Measurement(#[from] MeasurementError),
    #[error("frequency detection: {0}")]
    Signal(#[from] SignalError),
    #[error("identification: {0}")]
    Identification(#[from] SindyError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("writing {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// Failures caused by the numbers rather than by the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PipelineError::Simulation(SimError::NonFinite { .. }) | PipelineError::Identification(SindyError::NonFinite(_))
        )
    }
}

/// Settings for one analysis of a measurement window.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    /// Defaults to the first sample.
    pub window_start: Option<f64>,
    pub window_length: f64,
    pub stls_lambda: f64,
    pub max_frequencies: usize,
    pub max_nonzero: usize,
    pub zscore: ZScoreConfig,
    pub smoothing_width: usize,
    pub taper: Taper,
    pub scale_columns: bool,
    pub rcond: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            window_start: None,
            window_length: 40.0,
            stls_lambda: DEFAULT_LAMBDA,
            max_frequencies: 3,
            max_nonzero: 3,
            zscore: ZScoreConfig::default(),
            smoothing_width: 0,
            taper: Taper::Rectangular,
            scale_columns: false,
            rcond: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    /// Selected, mean-removed window in layout order.
    pub window: MeasurementWindow,
    pub spectra: Vec<Spectrum>,
    pub detected: DetectedFrequencies,
    pub fit: Option<AdaptiveResult>,
    pub localization: Localization,
    pub lambda0: f64,
}

impl Analysis {
    pub fn source_found(&self) -> bool {
        matches!(self.localization, Localization::Source { .. })
    }
}

pub fn analyze(model: &SystemModel, data: &MeasurementWindow, cfg: &AnalysisConfig) -> Result<Analysis, PipelineError> {
    let layout = model.layout();
    let start = cfg.window_start.unwrap_or(data.t0());
    let window = data.select(start, cfg.window_length)?.for_layout(&layout)?;
    if (window.n_samples() as f64) < MIN_WINDOW_SAMPLES {
        return Err(PipelineError::Config(format!(
            "window holds {} samples, at least {MIN_WINDOW_SAMPLES} are needed",
            window.n_samples()
        )));
    }
    let window = remove_mean(&window);
    let fs = 1.0 / window.dt();

    let mut spectra = Vec::new();
    for ch in layout.all_channels() {
        if matches!(ch.kind, ChannelKind::Omega | ChannelKind::Vq) {
            let series = window.channel(&ch.name).expect("window follows layout");
            spectra.push(single_sided_spectrum(series, fs, cfg.taper, ch.name.clone())?);
        }
    }
    let mut detected = detect_fo_frequencies(&spectra, &cfg.zscore, cfg.max_frequencies)?;
    let df = spectra[0].resolution();
    for d in detected.values.iter_mut() {
        let series: Vec<&[f64]> = d.channels.iter().filter_map(|c| window.channel(c)).collect();
        d.refined_hz = refine_frequency(&series, window.dt(), d.frequency_hz, df);
    }
    if detected.is_empty() {
        return Ok(Analysis {
            window,
            spectra,
            detected,
            fit: None,
            localization: Localization::NoSource,
            lambda0: cfg.stls_lambda,
        });
    }
    let library = build_library(&window, &layout, &detected.refined_frequencies())?;
    let derivatives = build_derivatives(&window, &layout, cfg.smoothing_width)?;
    let opts = StlsOptions {
        scale_columns: cfg.scale_columns,
        rcond: cfg.rcond,
        ..Default::default()
    };
    let fit = adaptive_threshold(&library, &derivatives, &layout, cfg.stls_lambda, cfg.max_nonzero, &opts)?;
    let localization = locate_source(&fit.score);
    Ok(Analysis {
        window,
        spectra,
        detected,
        fit: Some(fit),
        localization,
        lambda0: cfg.stls_lambda,
    })
}

/// Configuration file for a full run. Relative paths resolve against the
/// file's directory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model_path: PathBuf,
    #[serde(default)]
    pub scenario_path: Option<PathBuf>,
    #[serde(default)]
    pub measurements_path: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub window_start: Option<f64>,
    #[serde(default = "default_window_length")]
    pub window_length: f64,
    #[serde(default = "default_sampling_rate")]
    pub sampling_rate: f64,
    #[serde(default = "default_lambda")]
    pub stls_lambda: f64,
    #[serde(default = "default_max_frequencies")]
    pub max_frequencies: usize,
    #[serde(default)]
    pub zscore: ZScoreConfig,
    #[serde(default)]
    pub smoothing_width: usize,
    #[serde(default)]
    pub taper: Taper,
    #[serde(default)]
    pub scale_columns: bool,
}

fn default_window_length() -> f64 {
    40.0
}
fn default_sampling_rate() -> f64 {
    60.0
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_max_frequencies() -> usize {
    3
}

impl PipelineConfig {
    pub fn new(model_path: impl Into<PathBuf>) -> Self {
        Self {
            model_path: model_path.into(),
            scenario_path: None,
            measurements_path: None,
            output_dir: None,
            seed: None,
            window_start: None,
            window_length: default_window_length(),
            sampling_rate: default_sampling_rate(),
            stls_lambda: default_lambda(),
            max_frequencies: default_max_frequencies(),
            zscore: ZScoreConfig::default(),
            smoothing_width: 0,
            taper: Taper::Rectangular,
            scale_columns: false,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.model_path);
        cfg.scenario_path.iter_mut().for_each(resolve);
        cfg.measurements_path.iter_mut().for_each(resolve);
        cfg.output_dir.iter_mut().for_each(resolve);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.scenario_path.is_some() == self.measurements_path.is_some() {
            return Err(PipelineError::Config(
                "exactly one of scenario_path and measurements_path must be given".into(),
            ));
        }
        if !(self.window_length > 0.0 && self.sampling_rate > 0.0) {
            return Err(PipelineError::Config("window length and sampling rate must be positive".into()));
        }
        if self.window_length * self.sampling_rate < MIN_WINDOW_SAMPLES - 1e-9 {
            return Err(PipelineError::Config(format!(
                "window of {} s at {} Hz has fewer than {MIN_WINDOW_SAMPLES} samples",
                self.window_length, self.sampling_rate
            )));
        }
        if !(self.stls_lambda > 0.0 && self.stls_lambda.is_finite()) {
            return Err(PipelineError::Config(format!("stls_lambda must be positive, got {}", self.stls_lambda)));
        }
        if self.max_frequencies == 0 || self.max_frequencies > 3 {
            return Err(PipelineError::Config(format!(
                "max_frequencies must be between 1 and 3, got {}",
                self.max_frequencies
            )));
        }
        Ok(())
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            window_start: self.window_start,
            window_length: self.window_length,
            stls_lambda: self.stls_lambda,
            max_frequencies: self.max_frequencies,
            zscore: self.zscore,
            smoothing_width: self.smoothing_width,
            taper: self.taper,
            scale_columns: self.scale_columns,
            ..AnalysisConfig::default()
        }
    }
}

#[derive(Debug)]
pub struct PipelineRun {
    pub analysis: Analysis,
    pub measurements: MeasurementWindow,
    pub files: Vec<PathBuf>,
}

/// Load, simulate or ingest, analyze, and write the artifacts.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    cfg.validate()?;
    let model = SystemModel::load(&cfg.model_path)?;
    let mut analysis_cfg = cfg.analysis();
    let measurements = if let Some(path) = &cfg.scenario_path {
        let mut scenario = Scenario::load(path)?;
        if let Some(seed) = cfg.seed {
            scenario.seed = seed;
        }
        if analysis_cfg.window_start.is_none() {
            analysis_cfg.window_start = Some(scenario.first_onset().unwrap_or(0.0));
        }
        simulate(&model, &scenario)?
    } else {
        let path = cfg.measurements_path.as_ref().expect("validated");
        ingest_csv(path)?
    };
    let analysis = analyze(&model, &measurements, &analysis_cfg)?;
    let out = cfg
        .output_dir
        .clone()
        .ok_or_else(|| PipelineError::Config("no output directory given".into()))?;
    let files = export_report(&analysis, &out)?;
    Ok(PipelineRun {
        analysis,
        measurements,
        files,
    })
}

pub fn render_report(a: &Analysis) -> String {
    let mut s = String::new();
    let w = &a.window;
    let _ = writeln!(s, "foloc localization report");
    let _ = writeln!(
        s,
        "window: start {} s, length {} s, {} samples, dt {} s",
        w.t0(),
        w.n_samples() as f64 * w.dt(),
        w.n_samples(),
        w.dt()
    );
    if a.detected.is_empty() {
        let _ = writeln!(s, "detected frequencies: none");
        let _ = writeln!(s, "no FO detected");
        let _ = writeln!(s, "no source identified");
        return s;
    }
    let _ = writeln!(s, "detected frequencies:");
    for (i, d) in a.detected.values.iter().enumerate() {
        let _ = writeln!(
            s,
            "  {}. {} Hz, refined {:.4} Hz (amplitude {:.4}, channels {})",
            i + 1,
            d.frequency_hz,
            d.refined_hz,
            d.amplitude,
            d.channels.join(" ")
        );
    }
    if let Some(fit) = &a.fit {
        let _ = writeln!(
            s,
            "lambda: initial {}, used {}, rounds {}{}",
            a.lambda0,
            fit.coefficients.lambda,
            fit.rounds,
            if fit.exceeded { " (round cap reached, more than 3 nonzero cells remain)" } else { "" }
        );
        let flags: Vec<String> = fit
            .coefficients
            .row_names
            .iter()
            .zip(&fit.coefficients.converged)
            .map(|(n, c)| format!("{n}={}", if *c { "yes" } else { "no" }))
            .collect();
        let _ = writeln!(s, "stls converged: {}", flags.join(" "));
        let _ = writeln!(s, "ranking:");
        for (i, r) in fit.score.ranking.iter().enumerate() {
            let _ = writeln!(s, "  {}. {} at {} Hz, zeta {:.6e}", i + 1, r.device, r.frequency_hz, r.score);
        }
    }
    match &a.localization {
        Localization::Source { top, ties, dominance } => {
            let _ = writeln!(s, "dominance: {}", if dominance.is_infinite() { "inf".to_string() } else { format!("{dominance:.4}") });
            if ties.len() > 1 {
                let names: Vec<String> = ties.iter().map(|t| format!("{} at {} Hz", t.device, t.frequency_hz)).collect();
                let _ = writeln!(s, "tied: {}", names.join(", "));
            }
            let _ = writeln!(s, "source: {} at {} Hz", top.device, top.frequency_hz);
        }
        Localization::NoSource => {
            let _ = writeln!(s, "no source identified");
        }
    }
    s
}

fn write_file(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| PipelineError::Output {
        path: path.clone(),
        source,
    })?;
    files.push(path);
    Ok(())
}

/// Write `report.txt`, `zeta.csv`, `xi.csv`, `spectrum.csv` and
/// `frequencies.csv` into `dir`, creating it if needed.
pub fn export_report(a: &Analysis, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, PipelineError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Output {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    write_file(dir, "report.txt", &render_report(a), &mut files)?;

    let mut zeta = String::from("frequency_hz");
    let mut xi = String::from("equation");
    if let Some(fit) = &a.fit {
        for d in &fit.score.devices {
            let _ = write!(zeta, ",{d}");
        }
        zeta.push('\n');
        for (f, row) in fit.score.frequencies.iter().zip(&fit.score.zeta) {
            let _ = write!(zeta, "{f}");
            for v in row {
                let _ = write!(zeta, ",{v}");
            }
            zeta.push('\n');
        }
        let c = &fit.coefficients;
        for col in &c.columns {
            let _ = write!(xi, ",{col}");
        }
        xi.push('\n');
        for (r, name) in c.row_names.iter().enumerate() {
            xi.push_str(name);
            for k in 0..c.xi.ncols() {
                let _ = write!(xi, ",{}", c.xi[(r, k)]);
            }
            xi.push('\n');
        }
    } else {
        zeta.push('\n');
        xi.push('\n');
    }
    write_file(dir, "zeta.csv", &zeta, &mut files)?;
    write_file(dir, "xi.csv", &xi, &mut files)?;

    let mut spectrum = String::from("frequency_hz,amplitude,channel\n");
    for sp in &a.spectra {
        for (f, v) in sp.frequencies.iter().zip(&sp.amplitudes) {
            let _ = writeln!(spectrum, "{f},{v},{}", sp.source_channel);
        }
    }
    write_file(dir, "spectrum.csv", &spectrum, &mut files)?;

    let mut freqs = String::from("rank,frequency_hz,amplitude,channels,refined_hz\n");
    for (i, d) in a.detected.values.iter().enumerate() {
        let _ = writeln!(
            freqs,
            "{},{},{},{},{}",
            i + 1,
            d.frequency_hz,
            d.amplitude,
            d.channels.join(";"),
            d.refined_hz
        );
    }
    write_file(dir, "frequencies.csv", &freqs, &mut files)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk::{desk_model, single_source_scenario, ONSET_S};
    use crate::simulator::FoChannel;

    fn generator_case(seed: u64) -> (SystemModel, MeasurementWindow) {
        let m = desk_model();
        let sc = single_source_scenario("G2", FoChannel::GenMechPower, 1.2, 0.05, seed);
        let w = simulate(&m, &sc).unwrap();
        (m, w)
    }

    #[test]
    fn generator_source_found() {
        let (m, w) = generator_case(11);
        let cfg = AnalysisConfig {
            window_start: Some(ONSET_S),
            ..Default::default()
        };
        let a = analyze(&m, &w, &cfg).unwrap();
        match &a.localization {
            Localization::Source { top, .. } => {
                assert_eq!(top.device, "G2", "{}", render_report(&a));
                assert!((top.frequency_hz - 1.2).abs() <= 0.025);
            }
            other => panic!("{other:?}\n{}", render_report(&a)),
        }
    }

    #[test]
    fn export_is_byte_stable_and_shaped() {
        let (m, w) = generator_case(3);
        let cfg = AnalysisConfig {
            window_start: Some(ONSET_S),
            ..Default::default()
        };
        let a = analyze(&m, &w, &cfg).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let f1 = export_report(&a, d1.path()).unwrap();
        export_report(&a, d2.path()).unwrap();
        for f in &f1 {
            let name = f.file_name().unwrap();
            assert_eq!(std::fs::read(f).unwrap(), std::fs::read(d2.path().join(name)).unwrap());
        }
        let zeta = std::fs::read_to_string(d1.path().join("zeta.csv")).unwrap();
        let lines: Vec<&str> = zeta.lines().collect();
        let fit = a.fit.as_ref().unwrap();
        assert_eq!(lines.len(), 1 + fit.score.frequencies.len());
        assert!(lines.iter().all(|l| l.split(',').count() == 1 + 6));
    }

    #[test]
    fn empty_result_reports_no_source() {
        let m = desk_model();
        let names = m.layout().channel_names();
        let w = MeasurementWindow::new(0.0, 1.0 / 60.0, names.clone(), vec![vec![0.0; 2401]; names.len()]).unwrap();
        let a = analyze(&m, &w, &AnalysisConfig::default()).unwrap();
        assert!(!a.source_found());
        assert!(render_report(&a).lines().any(|l| l == "no source identified"));
    }

    #[test]
    fn config_validation() {
        let mut c = PipelineConfig::new("m.toml");
        assert!(c.validate().is_err());
        c.scenario_path = Some("s.toml".into());
        assert!(c.validate().is_ok());
        c.measurements_path = Some("x.csv".into());
        assert!(c.validate().is_err());
        c.measurements_path = None;
        c.window_length = 3.0;
        assert!(c.validate().is_err());
    }
}
