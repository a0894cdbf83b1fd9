use foloc::desk::{desk_model, single_source_scenario, ONSET_S};
use foloc::pipeline::{analyze, render_report, AnalysisConfig};
use foloc::simulator::{simulate, FoChannel};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dev = &args[1];
    let f: f64 = args[2].parse().unwrap();
    let a: f64 = args[3].parse().unwrap();
    let ch = if dev.starts_with('G') { FoChannel::GenMechPower } else { FoChannel::IbrVq };
    let mut m = desk_model();
    let env = |k: &str| std::env::var(k).ok().and_then(|v| v.parse::<f64>().ok());
    if let (Some(kp), Some(ki)) = (env("KP"), env("KI")) {
        let mut ibrs = m.ibrs().to_vec();
        for d in &mut ibrs { d.k_pllp = kp; d.k_plli = ki; }
        m = foloc::model::SystemModel::new(m.generators().to_vec(), ibrs, m.coupling().clone(), 0).unwrap();
    }
    let mut sc = single_source_scenario(dev, ch, f, a, env("SEED").unwrap_or(1.0) as u64);
    if let Some(snr) = env("SNR") { sc.process_noise_snr_db = if snr < 0.0 { None } else { Some(snr) }; }
    if let Some(d) = env("DUR") { sc.duration = d; }
    if let Some(s) = env("SUB") { sc.substeps = s as usize; }
    let w = simulate(&m, &sc).unwrap();
    let cfg = AnalysisConfig { window_start: Some(env("WSTART").unwrap_or(ONSET_S)), stls_lambda: env("LAMBDA").unwrap_or(0.006), ..Default::default() };
    let an = analyze(&m, &w, &cfg).unwrap();
    print!("{}", render_report(&an));
    if let Some(fit) = &an.fit {
        let lib = foloc::sindy::build_library(&an.window, &m.layout(), &an.detected.refined_frequencies()).unwrap();
        let sv = lib.matrix.clone().singular_values();
        println!("singular values: {:?}", sv.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>());
        let c = &fit.coefficients;
        println!("{}", c.columns.iter().map(|c| c.name.clone()).collect::<Vec<_>>().join(" "));
        for r in 0..c.xi.nrows() {
            println!("{} {:?}", c.row_names[r], c.xi.row(r).iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());
        }
    }
}
