use std::path::Path;

use foloc::desk::{desk_model, single_source_scenario, ONSET_S};
use foloc::pipeline::{analyze, render_report, run_pipeline, AnalysisConfig, PipelineConfig};
use foloc::simulator::{simulate, FoChannel, Scenario};
use foloc::sindy::Localization;

fn data(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn config() -> AnalysisConfig {
    AnalysisConfig {
        window_start: Some(ONSET_S),
        ..AnalysisConfig::default()
    }
}

#[test]
fn ingesting_exported_measurements_gives_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::new(data("desk_model.toml"));
    cfg.scenario_path = Some(data("g2_mech_power.toml"));
    cfg.output_dir = Some(dir.path().join("sim"));
    let simulated = run_pipeline(&cfg).unwrap();

    let csv = dir.path().join("m.csv");
    simulated.measurements.save_csv(&csv).unwrap();
    let mut cfg = PipelineConfig::new(data("desk_model.toml"));
    cfg.measurements_path = Some(csv);
    cfg.window_start = Some(ONSET_S);
    cfg.output_dir = Some(dir.path().join("csv"));
    let ingested = run_pipeline(&cfg).unwrap();

    assert_eq!(render_report(&simulated.analysis), render_report(&ingested.analysis));
    let report = std::fs::read(dir.path().join("sim/report.txt")).unwrap();
    assert_eq!(report, std::fs::read(dir.path().join("csv/report.txt")).unwrap());
}

#[test]
fn simulated_runs_start_the_window_at_onset() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::new(data("desk_model.toml"));
    cfg.scenario_path = Some(data("wt1_bursts.toml"));
    cfg.output_dir = Some(dir.path().to_path_buf());
    let run = run_pipeline(&cfg).unwrap();
    assert_eq!(run.analysis.window.t0(), ONSET_S);
    assert_eq!(run.analysis.window.n_samples(), 2400);
    match run.analysis.localization {
        Localization::Source { top, .. } => assert_eq!(top.device, "WT1"),
        Localization::NoSource => panic!("bursts not located"),
    }
}

#[test]
fn ambient_noise_is_mostly_reported_as_no_source() {
    let m = desk_model();
    let silent = (0..20)
        .filter(|&seed| {
            let mut sc = Scenario::new(45.0, 1.0 / 60.0, seed);
            sc.process_noise_snr_db = None;
            let a = analyze(&m, &simulate(&m, &sc).unwrap(), &config()).unwrap();
            !a.source_found()
        })
        .count();
    assert!(silent >= 18, "{silent}/20");
}

#[test]
fn identification_at_the_wide_area_threshold_settles_in_one_round() {
    let m = desk_model();
    let w = simulate(&m, &single_source_scenario("PV1", FoChannel::IbrVq, 0.614, 0.0222, 2)).unwrap();
    let a = analyze(&m, &w, &AnalysisConfig { stls_lambda: 0.006, ..config() }).unwrap();
    let fit = a.fit.unwrap();
    assert_eq!(fit.rounds, 1);
    assert!((1..=3).contains(&fit.score.nonzero_count()));
    assert_eq!(fit.score.ranking[0].device, "PV1");
}
