//! Browser bindings for the reference desk system: simulate an oscillation,
//! inspect its spectrum and locate its source. Every entry point returns a
//! JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use foloc::desk::{desk_model, single_source_scenario, ONSET_S, WINDOW_S};
use foloc::measurement::MeasurementWindow;
use foloc::pipeline::{analyze, AnalysisConfig};
use foloc::signal::{remove_mean_series, single_sided_spectrum, Taper};
use foloc::simulator::{simulate, FoChannel};
use foloc::sindy::Localization;

/// Plot points per series sent to the page.
const PREVIEW_POINTS: usize = 600;

fn channel_for(device: &str) -> Result<FoChannel, String> {
    let model = desk_model();
    if model.generators().iter().any(|g| g.id == device) {
        Ok(FoChannel::GenMechPower)
    } else if model.ibrs().iter().any(|d| d.id == device) {
        Ok(FoChannel::IbrVq)
    } else {
        Err(format!("unknown device {device}"))
    }
}

fn run_scenario(device: &str, frequency_hz: f64, amplitude: f64, seed: u64) -> Result<MeasurementWindow, String> {
    if !(frequency_hz > 0.0 && frequency_hz < 30.0) {
        return Err(format!("frequency must be within (0, 30) Hz, got {frequency_hz}"));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(format!("amplitude must be >= 0, got {amplitude}"));
    }
    let channel = channel_for(device)?;
    let scenario = single_source_scenario(device, channel, frequency_hz, amplitude, seed);
    simulate(&desk_model(), &scenario).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Series {
    name: String,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct Preview {
    time: Vec<f64>,
    series: Vec<Series>,
}

pub fn simulate_preview(device: &str, frequency_hz: f64, amplitude: f64, seed: u64) -> Result<String, String> {
    let w = run_scenario(device, frequency_hz, amplitude, seed)?;
    let stride = (w.n_samples() / PREVIEW_POINTS).max(1);
    let rows: Vec<usize> = (0..w.n_samples()).step_by(stride).collect();
    let series = w
        .channel_names()
        .iter()
        .filter(|n| n.ends_with(".omega") || n.ends_with(".vq"))
        .map(|n| {
            let col = w.channel(n).expect("listed channel");
            Series {
                name: n.clone(),
                values: rows.iter().map(|&k| col[k]).collect(),
            }
        })
        .collect();
    let preview = Preview {
        time: rows.iter().map(|&k| w.time(k)).collect(),
        series,
    };
    serde_json::to_string(&preview).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SpectrumView {
    channel: String,
    frequencies: Vec<f64>,
    amplitudes: Vec<f64>,
}

/// Spectrum of one channel over the analysis window, up to `max_hz`.
pub fn channel_spectrum(
    device: &str,
    frequency_hz: f64,
    amplitude: f64,
    seed: u64,
    channel: &str,
    max_hz: f64,
) -> Result<String, String> {
    let w = run_scenario(device, frequency_hz, amplitude, seed)?;
    let w = w.select(ONSET_S, WINDOW_S).map_err(|e| e.to_string())?;
    let series = w.channel(channel).ok_or_else(|| format!("unknown channel {channel}"))?;
    let s = single_sided_spectrum(&remove_mean_series(series), 1.0 / w.dt(), Taper::Rectangular, channel)
        .map_err(|e| e.to_string())?;
    let keep = s.frequencies.iter().take_while(|f| **f <= max_hz).count();
    let view = SpectrumView {
        channel: channel.to_string(),
        frequencies: s.frequencies[..keep].to_vec(),
        amplitudes: s.amplitudes[..keep].to_vec(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Detected {
    frequency_hz: f64,
    refined_hz: f64,
    amplitude: f64,
}

#[derive(Serialize)]
struct LocateView {
    detected: Vec<Detected>,
    devices: Vec<String>,
    /// `zeta[i][j]`: frequency `i`, device `j`.
    zeta: Vec<Vec<f64>>,
    source: Option<String>,
    source_frequency_hz: Option<f64>,
    lambda: Option<f64>,
}

pub fn locate_source(device: &str, frequency_hz: f64, amplitude: f64, seed: u64) -> Result<String, String> {
    let model = desk_model();
    let w = run_scenario(device, frequency_hz, amplitude, seed)?;
    let cfg = AnalysisConfig {
        window_start: Some(ONSET_S),
        ..AnalysisConfig::default()
    };
    let a = analyze(&model, &w, &cfg).map_err(|e| e.to_string())?;
    let (source, source_frequency_hz) = match &a.localization {
        Localization::Source { top, .. } => (Some(top.device.clone()), Some(top.frequency_hz)),
        Localization::NoSource => (None, None),
    };
    let view = LocateView {
        detected: a
            .detected
            .values
            .iter()
            .map(|d| Detected {
                frequency_hz: d.frequency_hz,
                refined_hz: d.refined_hz,
                amplitude: d.amplitude,
            })
            .collect(),
        devices: model.layout().device_ids(),
        zeta: a.fit.as_ref().map(|f| f.score.zeta.clone()).unwrap_or_default(),
        source,
        source_frequency_hz,
        lambda: a.fit.as_ref().map(|f| f.coefficients.lambda),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = simulatePreview)]
pub fn simulate_preview_js(device: &str, frequency_hz: f64, amplitude: f64, seed: u32) -> Result<String, JsValue> {
    simulate_preview(device, frequency_hz, amplitude, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = channelSpectrum)]
pub fn channel_spectrum_js(
    device: &str,
    frequency_hz: f64,
    amplitude: f64,
    seed: u32,
    channel: &str,
    max_hz: f64,
) -> Result<String, JsValue> {
    channel_spectrum(device, frequency_hz, amplitude, seed.into(), channel, max_hz).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = locateSource)]
pub fn locate_source_js(device: &str, frequency_hz: f64, amplitude: f64, seed: u32) -> Result<String, JsValue> {
    locate_source(device, frequency_hz, amplitude, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = deviceIds)]
pub fn device_ids() -> String {
    serde_json::to_string(&desk_model().layout().device_ids()).expect("strings serialize")
}
