//! Success rates of the reference localization scenarios over seeds.
//!
//! cargo run --release --example sweep -- [trials]

use foloc::desk::{burst_scenario, desk_model, single_source_scenario, with_mode_at, ONSET_S};
use foloc::pipeline::{analyze, render_report, AnalysisConfig};
use foloc::simulator::{simulate, FoChannel, Scenario};
use foloc::sindy::Localization;
use foloc::model::SystemModel;

fn rate(model: &SystemModel, device: &str, freq: Option<f64>, trials: u64, make: impl Fn(u64) -> Scenario) -> u64 {
    if let Ok(only) = std::env::var("ONLY") {
        if only != device {
            return 0;
        }
    }
    let cfg = AnalysisConfig {
        window_start: Some(std::env::var("WSTART").ok().and_then(|v| v.parse().ok()).unwrap_or(ONSET_S)),
        scale_columns: std::env::var("SCALE").is_ok(),
        rcond: std::env::var("RCOND").ok().and_then(|v| v.parse().ok()),
        stls_lambda: std::env::var("LAMBDA").ok().and_then(|v| v.parse().ok()).unwrap_or(foloc::pipeline::DEFAULT_LAMBDA),
        ..Default::default()
    };
    let mut ok = 0;
    let seed0: u64 = std::env::var("SEED0").ok().and_then(|v| v.parse().ok()).unwrap_or(0);
    for seed in seed0..seed0 + trials {
        let mut sc = make(seed);
        if let Some(d) = std::env::var("DUR").ok().and_then(|v| v.parse().ok()) {
            sc.duration = d;
        }
        if let Some(d) = std::env::var("SNR").ok().and_then(|v| v.parse::<f64>().ok()) {
            sc.process_noise_snr_db = if d < 0.0 { None } else { Some(d) };
        }
        let w = simulate(model, &sc).unwrap();
        let a = analyze(model, &w, &cfg).unwrap();
        let hit = match &a.localization {
            Localization::Source { top, .. } => {
                !device.is_empty() && top.device == device && freq.map_or(true, |f| (top.frequency_hz - f).abs() <= 0.025)
            }
            Localization::NoSource => device.is_empty(),
        };
        if hit {
            ok += 1;
        } else if std::env::var("SWEEP_VERBOSE").is_ok() {
            println!("--- miss seed {seed}\n{}", render_report(&a));
        }
    }
    ok
}

fn main() {
    let trials: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let mut m = desk_model();
    if let (Some(kp), Some(ki)) = (
        std::env::var("KP").ok().and_then(|v| v.parse::<f64>().ok()),
        std::env::var("KI").ok().and_then(|v| v.parse::<f64>().ok()),
    ) {
        let mut ibrs = m.ibrs().to_vec();
        for d in ibrs.iter_mut() {
            d.k_pllp = kp;
            d.k_plli = ki;
        }
        m = SystemModel::new(m.generators().to_vec(), ibrs, m.coupling().clone(), 0).unwrap();
    }
    println!("modes: {:?}", m.oscillatory_modes());
    for g in ["G1", "G2", "G3", "G4"] {
        let n = rate(&m, g, Some(1.2), trials, |s| single_source_scenario(g, FoChannel::GenMechPower, 1.2, 0.05, s));
        println!("generator {g} 1.2 Hz: {n}/{trials}");
    }
    for ibr in ["WT1", "PV1"] {
        for (f, a) in [(0.379, 0.012), (0.614, 0.0222), (1.27, 0.0522)] {
            let n = rate(&m, ibr, Some(f), trials, |s| single_source_scenario(ibr, FoChannel::IbrVq, f, a, s));
            println!("inverter {ibr} {f} Hz: {n}/{trials}");
            let r = with_mode_at(&m, f, 0.01).unwrap();
            let n = rate(&r, ibr, Some(f), trials, |s| single_source_scenario(ibr, FoChannel::IbrVq, f, a, s));
            println!("inverter {ibr} {f} Hz resonant: {n}/{trials}");
        }
        let n = rate(&m, ibr, None, trials, |s| burst_scenario(ibr, [0.012, 0.0222, 0.0522], s));
        println!("inverter {ibr} bursts: {n}/{trials}");
    }
    let n = rate(&m, "", None, trials, |s| {
        let mut sc = Scenario::new(45.0, 1.0 / 60.0, s);
        sc.process_noise_snr_db = None;
        sc
    });
    println!("ambient correctly silent: {}/{}", n, trials);
}
