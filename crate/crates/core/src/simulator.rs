//! Stochastic simulation of the linearized swing and PLL dynamics with
//! forced-oscillation injections.
//!
//! Generators follow the swing equation with white load noise; each
//! grid-following inverter runs a PI-PLL whose input is its q-axis voltage
//! plus any injected disturbance. The q-axis voltage itself is an algebraic
//! function of the angle states. Integration is explicit Euler-Maruyama with
//! `substeps` internal steps per recorded sample.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurement::MeasurementWindow;
use crate::model::{DeviceRef, Resource, StateLayout, SystemModel};

/// Betz limit.
pub const MAX_POWER_COEFFICIENT: f64 = 0.593;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("negative or non-finite input `{0}`")]
    NegativeInput(&'static str),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("channel {channel:?} cannot drive device `{device}`")]
    IncompatibleChannel { device: String, channel: FoChannel },
    #[error("invalid injection on `{device}`: {reason}")]
    Injection { device: String, reason: String },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("state became non-finite at t = {time} s")]
    NonFinite { time: f64 },
    #[error("could not read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("could not parse scenario file: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoChannel {
    /// Mechanical power of a synchronous generator, per-unit.
    GenMechPower,
    /// Disturbance added to an inverter's q-axis voltage, per-unit.
    IbrVq,
    /// Wind-speed oscillation at an inverter with a wind resource, m/s.
    WindSpeed,
    /// Irradiance oscillation at an inverter with a solar resource, W/m^2.
    SolarIrradiance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoInjection {
    #[serde(rename = "device")]
    pub device_id: String,
    pub channel: FoChannel,
    #[serde(rename = "frequency_hz")]
    pub frequency: f64,
    pub amplitude: f64,
    #[serde(rename = "phase_rad", default)]
    pub phase: f64,
    #[serde(rename = "start_s", default)]
    pub start_time: f64,
    #[serde(rename = "end_s", default = "infinite")]
    pub end_time: f64,
}

fn infinite() -> f64 {
    f64::INFINITY
}

impl FoInjection {
    pub fn new(device_id: impl Into<String>, channel: FoChannel, frequency: f64, amplitude: f64) -> Self {
        Self {
            device_id: device_id.into(),
            channel,
            frequency,
            amplitude,
            phase: 0.0,
            start_time: 0.0,
            end_time: f64::INFINITY,
        }
    }

    pub fn between(mut self, start: f64, end: f64) -> Self {
        self.start_time = start;
        self.end_time = end;
        self
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn is_active(&self, t: f64) -> bool {
        self.start_time <= t && t < self.end_time
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: &str| SimError::Injection {
            device: self.device_id.clone(),
            reason: reason.to_string(),
        };
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(bad("frequency must be > 0"));
        }
        if !(self.start_time >= 0.0 && self.start_time.is_finite()) {
            return Err(bad("start time must be >= 0"));
        }
        if !(self.end_time > self.start_time) {
            return Err(bad("end time must be after start time"));
        }
        if !self.amplitude.is_finite() || !self.phase.is_finite() {
            return Err(bad("amplitude and phase must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(rename = "injection", default)]
    pub injections: Vec<FoInjection>,
    pub duration: f64,
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Process noise relative to the largest injection, in dB. `None` keeps
    /// the model's own sigma values.
    #[serde(default)]
    pub process_noise_snr_db: Option<f64>,
    /// Measurement noise relative to each channel's RMS, in dB.
    #[serde(default)]
    pub measurement_noise_snr_db: Option<f64>,
    /// Integration steps per recorded sample.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_substeps() -> usize {
    10
}

impl Scenario {
    pub fn new(duration: f64, dt: f64, seed: u64) -> Self {
        Self {
            injections: Vec::new(),
            duration,
            dt,
            seed,
            process_noise_snr_db: None,
            measurement_noise_snr_db: None,
            substeps: default_substeps(),
        }
    }

    pub fn with_injection(mut self, inj: FoInjection) -> Self {
        self.injections.push(inj);
        self
    }

    pub fn sample_count(&self) -> Result<usize, SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Scenario(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(SimError::Scenario(format!(
                "duration must be > 0, got {}",
                self.duration
            )));
        }
        let steps = self.duration / self.dt;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(SimError::Scenario(format!(
                "duration {} is not a whole number of dt = {} steps",
                self.duration, self.dt
            )));
        }
        Ok(rounded as usize + 1)
    }

    pub fn validate(&self, model: &SystemModel) -> Result<(), SimError> {
        self.sample_count()?;
        if self.substeps == 0 {
            return Err(SimError::Scenario("substeps must be >= 1".into()));
        }
        for inj in &self.injections {
            inj.validate()?;
            injection_gain(model, inj)?;
        }
        Ok(())
    }

    /// Earliest injection start, if any.
    pub fn first_onset(&self) -> Option<f64> {
        self.injections
            .iter()
            .map(|i| i.start_time)
            .min_by(f64::total_cmp)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// `0.5 * rho * A * v^3 * Cp`.
pub fn wind_power(v_eq_ws: f64, rho: f64, a_swept: f64, c_p: f64) -> Result<f64, SimError> {
    for (v, name) in [(v_eq_ws, "wind speed"), (rho, "air density"), (a_swept, "swept area"), (c_p, "power coefficient")] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(SimError::NegativeInput(name));
        }
    }
    if c_p > MAX_POWER_COEFFICIENT {
        return Err(SimError::NegativeInput("power coefficient above Betz limit"));
    }
    Ok(0.5 * rho * a_swept * v_eq_ws.powi(3) * c_p)
}

/// `A * C * g`.
pub fn solar_power(g_eq_irr: f64, a_panel: f64, c_solar: f64) -> Result<f64, SimError> {
    for (v, name) in [(g_eq_irr, "irradiance"), (a_panel, "panel area"), (c_solar, "efficiency")] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(SimError::NegativeInput(name));
        }
    }
    if c_solar > 1.0 {
        return Err(SimError::NegativeInput("efficiency above 1"));
    }
    Ok(a_panel * c_solar * g_eq_irr)
}

/// Target of an injection and the factor turning its amplitude into per-unit
/// forcing. Wind and solar oscillations are linearized about the resource's
/// operating point and expressed per-unit of rated power.
fn injection_gain(model: &SystemModel, inj: &FoInjection) -> Result<(DeviceRef, f64), SimError> {
    let dev = model
        .find_device(&inj.device_id)
        .ok_or_else(|| SimError::UnknownDevice(inj.device_id.clone()))?;
    let incompatible = || SimError::IncompatibleChannel {
        device: inj.device_id.clone(),
        channel: inj.channel,
    };
    let gain = match (dev, inj.channel) {
        (DeviceRef::Generator(_), FoChannel::GenMechPower) => 1.0,
        (DeviceRef::Ibr(_), FoChannel::IbrVq) => 1.0,
        (DeviceRef::Ibr(j), FoChannel::WindSpeed) => match &model.ibrs()[j].resource {
            Some(Resource::Wind {
                air_density,
                swept_area,
                power_coefficient,
                wind_speed,
                rated_power,
            }) => {
                let p0 = wind_power(*wind_speed, *air_density, *swept_area, *power_coefficient)?;
                if !(*wind_speed > 0.0 && *rated_power > 0.0) {
                    return Err(SimError::NegativeInput("wind operating point"));
                }
                3.0 * p0 / wind_speed / rated_power
            }
            _ => return Err(incompatible()),
        },
        (DeviceRef::Ibr(j), FoChannel::SolarIrradiance) => match &model.ibrs()[j].resource {
            Some(Resource::Solar {
                panel_area,
                efficiency,
                irradiance,
                rated_power,
            }) => {
                let p0 = solar_power(*irradiance, *panel_area, *efficiency)?;
                if !(*irradiance > 0.0 && *rated_power > 0.0) {
                    return Err(SimError::NegativeInput("solar operating point"));
                }
                p0 / irradiance / rated_power
            }
            _ => return Err(incompatible()),
        },
        _ => return Err(incompatible()),
    };
    Ok((dev, gain))
}

/// Per-unit forcing on each generator's power balance and each inverter's
/// PLL input.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub omega: Vec<f64>,
    pub vq: Vec<f64>,
}

impl Forcing {
    pub fn zeros(model: &SystemModel) -> Self {
        Self {
            omega: vec![0.0; model.n_generators()],
            vq: vec![0.0; model.n_ibrs()],
        }
    }

    /// Forcing placed on the rows of the state layout: generator entries on
    /// the speed rows, inverter entries on the PLL-angle rows.
    pub fn stacked(&self, layout: &StateLayout) -> Vec<f64> {
        let mut out = vec![0.0; layout.n_states()];
        for (i, v) in self.omega.iter().enumerate() {
            out[layout.omega_row(i)] = *v;
        }
        for (j, v) in self.vq.iter().enumerate() {
            out[layout.theta_row(j)] = *v;
        }
        out
    }
}

pub fn forcing_at(t: f64, injections: &[FoInjection], model: &SystemModel) -> Result<Forcing, SimError> {
    let mut f = Forcing::zeros(model);
    for inj in injections {
        let (dev, gain) = injection_gain(model, inj)?;
        if !inj.is_active(t) {
            continue;
        }
        let value = gain * inj.amplitude * (2.0 * PI * inj.frequency * t + inj.phase).sin();
        match dev {
            DeviceRef::Generator(i) => f.omega[i] += value,
            DeviceRef::Ibr(j) => f.vq[j] += value,
        }
    }
    Ok(f)
}

/// Integrator state carried between steps: the layout state vector, each
/// PLL's running integral of its drive `v_q + u`, and the previous drive for
/// the trapezoid update.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub x: Vec<f64>,
    pub vq_integral: Vec<f64>,
    pub last_drive: Vec<f64>,
}

impl SimState {
    pub fn zeros(model: &SystemModel) -> Self {
        Self::from_deviation(model, vec![0.0; model.n_states()])
    }

    pub fn from_deviation(model: &SystemModel, x: Vec<f64>) -> Self {
        Self {
            x,
            vq_integral: vec![0.0; model.n_ibrs()],
            last_drive: vec![0.0; model.n_ibrs()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.vq_integral).all(|v| v.is_finite())
    }
}

/// Algebraic q-axis voltage of each inverter from the angle states.
pub fn vq_map(model: &SystemModel, x: &[f64]) -> Vec<f64> {
    let na = model.n_generators() + model.n_ibrs();
    model
        .ibrs()
        .iter()
        .map(|d| d.vq_coupling.iter().zip(&x[..na]).map(|(c, a)| c * a).sum())
        .collect()
}

/// One Euler-Maruyama step of length `dt`.
pub fn step(
    state: &SimState,
    model: &SystemModel,
    u: &Forcing,
    dt: f64,
    noise_draw: &[f64],
) -> Result<SimState, SimError> {
    let ng = model.n_generators();
    let nr = model.n_ibrs();
    if state.x.len() != model.n_states()
        || state.vq_integral.len() != nr
        || state.last_drive.len() != nr
        || u.omega.len() != ng
        || u.vq.len() != nr
        || noise_draw.len() != ng
    {
        return Err(SimError::Dimension(format!(
            "state {} / forcing ({}, {}) / noise {} for a model with {} generators and {} inverters",
            state.x.len(),
            u.omega.len(),
            u.vq.len(),
            noise_draw.len(),
            ng,
            nr
        )));
    }
    if !(dt > 0.0) {
        return Err(SimError::Scenario(format!("dt must be > 0, got {dt}")));
    }
    if !state.is_finite() {
        return Err(SimError::NonFinite { time: f64::NAN });
    }
    let x = &state.x;
    let (th0, om0) = (ng, ng + nr);
    let j = model.coupling().matrix();
    let sqrt_dt = dt.sqrt();
    let mut next = x.clone();

    for (i, g) in model.generators().iter().enumerate() {
        let mut accel = u.omega[i] - g.damping * x[om0 + i];
        for k in 0..ng {
            accel -= j[(i, k)] * x[k];
        }
        for (r, d) in model.ibrs().iter().enumerate() {
            accel += d.grid_injection[i] * u.vq[r];
        }
        next[i] = x[i] + x[om0 + i] * dt;
        next[om0 + i] =
            x[om0 + i] + accel / g.inertia * dt - g.noise_sigma / g.inertia * noise_draw[i] * sqrt_dt;
    }

    let vq = vq_map(model, x);
    let mut integral = state.vq_integral.clone();
    let mut drive = vec![0.0; nr];
    for (r, d) in model.ibrs().iter().enumerate() {
        drive[r] = vq[r] + u.vq[r];
        integral[r] += 0.5 * dt * (state.last_drive[r] + drive[r]);
        next[th0 + r] = x[th0 + r] + (d.k_pllp * drive[r] + d.k_plli * integral[r]) * dt;
    }

    let out = SimState {
        x: next,
        vq_integral: integral,
        last_drive: drive,
    };
    if !out.is_finite() {
        return Err(SimError::NonFinite { time: f64::NAN });
    }
    Ok(out)
}

/// Load-noise sigma used for a scenario: scaled from the largest injection
/// amplitude when an SNR is given, otherwise the model's own.
pub fn effective_model(model: &SystemModel, scenario: &Scenario) -> Result<SystemModel, SimError> {
    match scenario.process_noise_snr_db {
        Some(snr) if !scenario.injections.is_empty() => {
            let mut reference: f64 = 0.0;
            for inj in &scenario.injections {
                let (_, gain) = injection_gain(model, inj)?;
                reference = reference.max((gain * inj.amplitude).abs());
            }
            Ok(model.with_noise_sigma(reference * 10f64.powf(-snr / 20.0)))
        }
        _ => Ok(model.clone()),
    }
}

pub fn simulate(model: &SystemModel, scenario: &Scenario) -> Result<MeasurementWindow, SimError> {
    simulate_from(model, scenario, SimState::zeros(model))
}

pub fn simulate_from(
    model: &SystemModel,
    scenario: &Scenario,
    initial: SimState,
) -> Result<MeasurementWindow, SimError> {
    scenario.validate(model)?;
    let n_samples = scenario.sample_count()?;
    let model = effective_model(model, scenario)?;
    let layout = model.layout();
    let ng = model.n_generators();
    let n_states = layout.n_states();
    let n_channels = n_states + layout.inputs.len();
    let h = scenario.dt / scenario.substeps as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut noise = vec![0.0; ng];
    let noisy = model.generators().iter().any(|g| g.noise_sigma > 0.0);

    let mut columns = vec![Vec::with_capacity(n_samples); n_channels];
    let mut state = initial;
    if state.x.len() != n_states {
        return Err(SimError::Dimension(format!(
            "initial state has {} entries, expected {n_states}",
            state.x.len()
        )));
    }
    for k in 0..n_samples {
        let vq = vq_map(&model, &state.x);
        for (c, v) in state.x.iter().chain(&vq).enumerate() {
            columns[c].push(*v);
        }
        if k + 1 == n_samples {
            break;
        }
        for s in 0..scenario.substeps {
            let t = (k * scenario.substeps + s) as f64 * h;
            let u = forcing_at(t, &scenario.injections, &model)?;
            if noisy {
                for v in noise.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
            state = step(&state, &model, &u, h, &noise).map_err(|e| match e {
                SimError::NonFinite { .. } => SimError::NonFinite { time: t + h },
                other => other,
            })?;
        }
    }

    if let Some(snr) = scenario.measurement_noise_snr_db {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        rng.set_stream(1);
        let scale = 10f64.powf(-snr / 20.0);
        for col in columns.iter_mut() {
            let rms = (col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64).sqrt();
            let sd = rms * scale;
            for v in col.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += sd * z;
            }
        }
    }

    MeasurementWindow::new(0.0, scenario.dt, layout.channel_names(), columns)
        .map_err(|e| SimError::Scenario(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CouplingMatrix, IbrDevice, SynchronousGenerator};

    fn single_machine(m: f64, d: f64) -> SystemModel {
        SystemModel::new(
            vec![SynchronousGenerator {
                id: "g".into(),
                inertia: m,
                damping: d,
                noise_sigma: 0.0,
                emf: 1.0,
            }],
            vec![],
            CouplingMatrix::from_rows(&[vec![0.0]]).unwrap(),
            0,
        )
        .unwrap()
    }

    fn machine_and_pll() -> SystemModel {
        SystemModel::new(
            vec![SynchronousGenerator {
                id: "g".into(),
                inertia: 1.0,
                damping: 1.0,
                noise_sigma: 0.0,
                emf: 1.0,
            }],
            vec![IbrDevice {
                id: "pv".into(),
                k_pllp: 50.0,
                k_plli: 200.0,
                nominal_freq: 377.0,
                vq_coupling: vec![0.0, 0.0],
                grid_injection: vec![0.0],
                resource: Some(Resource::Solar {
                    panel_area: 2.0,
                    efficiency: 0.2,
                    irradiance: 1000.0,
                    rated_power: 400.0,
                }),
            }],
            CouplingMatrix::from_rows(&[vec![0.0]]).unwrap(),
            0,
        )
        .unwrap()
    }

    #[test]
    fn wind_power_values() {
        assert_eq!(wind_power(0.0, 1.225, 2.0, 0.4).unwrap(), 0.0);
        let p = wind_power(10.0, 1.225, 2.0, 0.4).unwrap();
        assert!((p - 490.0).abs() < 1e-9);
        assert_eq!(wind_power(20.0, 1.225, 2.0, 0.4).unwrap(), 8.0 * p);
        assert!(wind_power(-1.0, 1.225, 2.0, 0.4).is_err());
        assert!(wind_power(10.0, 1.225, 2.0, 0.7).is_err());
    }

    #[test]
    fn solar_power_values() {
        assert_eq!(solar_power(0.0, 2.0, 0.2).unwrap(), 0.0);
        let p = solar_power(1000.0, 2.0, 0.2).unwrap();
        assert!((p - 400.0).abs() < 1e-9);
        assert_eq!(solar_power(2000.0, 2.0, 0.2).unwrap(), 2.0 * p);
        assert!(solar_power(1000.0, -2.0, 0.2).is_err());
    }

    #[test]
    fn forcing_placement() {
        let m = machine_and_pll();
        let layout = m.layout();
        assert_eq!(forcing_at(1.0, &[], &m).unwrap().stacked(&layout), vec![0.0; 3]);

        let f = 0.5;
        let inj = FoInjection::new("g", FoChannel::GenMechPower, f, 0.3);
        let u = forcing_at(1.0 / (4.0 * f), &[inj.clone()], &m).unwrap();
        let stacked = u.stacked(&layout);
        assert!((stacked[layout.omega_row(0)] - 0.3).abs() < 1e-15);
        assert_eq!(stacked[layout.delta_row(0)], 0.0);
        assert_eq!(stacked[layout.theta_row(0)], 0.0);

        let other = FoInjection::new("pv", FoChannel::IbrVq, 1.3, 0.01).with_phase(0.4);
        let t = 2.7;
        let both = forcing_at(t, &[inj.clone(), other.clone()], &m).unwrap().stacked(&layout);
        let a = forcing_at(t, &[inj], &m).unwrap().stacked(&layout);
        let b = forcing_at(t, &[other], &m).unwrap().stacked(&layout);
        for k in 0..3 {
            assert_eq!(both[k], a[k] + b[k]);
        }
    }

    #[test]
    fn forcing_schedule_and_errors() {
        let m = machine_and_pll();
        let inj = FoInjection::new("g", FoChannel::GenMechPower, 1.0, 1.0).between(1.0, 2.0);
        assert_eq!(forcing_at(0.25, &[inj.clone()], &m).unwrap().omega[0], 0.0);
        assert!(forcing_at(1.25, &[inj.clone()], &m).unwrap().omega[0].abs() > 0.9);
        assert_eq!(forcing_at(2.25, &[inj], &m).unwrap().omega[0], 0.0);

        let unknown = FoInjection::new("nope", FoChannel::GenMechPower, 1.0, 1.0);
        assert!(matches!(forcing_at(0.0, &[unknown], &m), Err(SimError::UnknownDevice(_))));
        let wrong = FoInjection::new("pv", FoChannel::GenMechPower, 1.0, 1.0);
        assert!(matches!(forcing_at(0.0, &[wrong], &m), Err(SimError::IncompatibleChannel { .. })));
        let wind = FoInjection::new("pv", FoChannel::WindSpeed, 1.0, 1.0);
        assert!(matches!(forcing_at(0.0, &[wind], &m), Err(SimError::IncompatibleChannel { .. })));
    }

    #[test]
    fn solar_injection_is_linearized() {
        let m = machine_and_pll();
        // dP/dg = A * C = 0.4 W per W/m^2, over 400 W rated.
        let inj = FoInjection::new("pv", FoChannel::SolarIrradiance, 1.0, 50.0);
        let u = forcing_at(0.25, &[inj], &m).unwrap();
        assert!((u.vq[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let m = machine_and_pll();
        let s = SimState::zeros(&m);
        let next = step(&s, &m, &Forcing::zeros(&m), 1e-3, &[0.0]).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn scalar_decay_step() {
        let m = single_machine(1.0, 1.0);
        let s = SimState::from_deviation(&m, vec![0.0, 0.1]);
        let dt = 1e-3;
        let next = step(&s, &m, &Forcing::zeros(&m), dt, &[0.0]).unwrap();
        assert!((next.x[1] - 0.1 * (1.0 - dt)).abs() < 1e-15);
        assert!((next.x[1] - 0.0999).abs() < 1e-12);
    }

    #[test]
    fn pll_angle_matches_closed_form_under_constant_input() {
        let m = machine_and_pll();
        let (kp, ki, v) = (50.0, 200.0, 0.01);
        let dt = 1e-3;
        let u = Forcing {
            omega: vec![0.0],
            vq: vec![v],
        };
        let mut s = SimState::zeros(&m);
        for _ in 0..1000 {
            s = step(&s, &m, &u, dt, &[0.0]).unwrap();
        }
        let t: f64 = 1.0;
        let expected = kp * v * t + ki * v * t * t / 2.0;
        let theta = s.x[m.layout().theta_row(0)];
        assert!(((theta - expected) / expected).abs() < 1e-3, "{theta} vs {expected}");
    }

    #[test]
    fn step_rejects_bad_dimensions() {
        let m = machine_and_pll();
        let s = SimState::zeros(&m);
        assert!(matches!(
            step(&s, &m, &Forcing::zeros(&m), 1e-3, &[0.0, 0.0]),
            Err(SimError::Dimension(_))
        ));
        let mut bad = s.clone();
        bad.x[0] = f64::NAN;
        assert!(matches!(
            step(&bad, &m, &Forcing::zeros(&m), 1e-3, &[0.0]),
            Err(SimError::NonFinite { .. })
        ));
    }

    #[test]
    fn sample_count_formula() {
        assert_eq!(Scenario::new(40.0, 1.0 / 60.0, 0).sample_count().unwrap(), 2401);
        assert!(Scenario::new(1.0, 0.3, 0).sample_count().is_err());
    }

    #[test]
    fn unstable_model_reports_time() {
        let m = single_machine(1.0, 0.0);
        let mut sc = Scenario::new(10.0, 0.1, 0);
        sc.substeps = 1;
        let s = SimState::from_deviation(&m, vec![0.0, f64::MAX]);
        match simulate_from(&m, &sc, s) {
            Err(SimError::NonFinite { time }) => assert!(time > 0.0 && time <= 10.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scenario_file_parses() {
        let text = r#"
duration = 50.0
dt = 0.016666666666666666
seed = 7
process_noise_snr_db = 50.0

[[injection]]
device = "g"
channel = "gen_mech_power"
frequency_hz = 1.2
amplitude = 0.05
phase_rad = 0.0
start_s = 5.0
end_s = 1e300
"#;
        let sc = Scenario::from_toml_str(text).unwrap();
        assert_eq!(sc.injections.len(), 1);
        assert_eq!(sc.substeps, 10);
        assert_eq!(sc.injections[0].channel, FoChannel::GenMechPower);
        assert_eq!(sc.first_onset(), Some(5.0));
    }
}
