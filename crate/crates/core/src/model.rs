//! Grid description: synchronous machines, grid-following inverters, and the
//! linearized network coupling between machine rotor angles.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row-sum tolerance for [`CouplingMatrix`].
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("susceptance matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("susceptance matrix has nonzero diagonal at {0}")]
    NonzeroDiagonal(usize),
    #[error("coupling row {row} sums to {sum:e}, expected 0")]
    RowSum { row: usize, sum: f64 },
    #[error("invalid parameter for device `{device}`: {reason}")]
    Parameter { device: String, reason: String },
    #[error("duplicate device id `{0}`")]
    DuplicateId(String),
    #[error("reference device {0} out of range ({1} generators)")]
    Reference(usize, usize),
    #[error("at least one synchronous generator is required")]
    NoGenerators,
    #[error("could not read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("could not parse model file: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynchronousGenerator {
    pub id: String,
    /// M, per-unit s^2.
    pub inertia: f64,
    /// D, per-unit.
    pub damping: f64,
    /// Standard deviation of the stochastic load variation seen by this machine.
    pub noise_sigma: f64,
    /// Internal EMF magnitude, per-unit.
    pub emf: f64,
}

impl SynchronousGenerator {
    fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::Parameter {
            device: self.id.clone(),
            reason: reason.to_string(),
        };
        if !(self.inertia > 0.0 && self.inertia.is_finite()) {
            return Err(bad("inertia M must be > 0"));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(bad("damping D must be >= 0"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(bad("noise sigma must be >= 0"));
        }
        if !(self.emf > 0.0 && self.emf.is_finite()) {
            return Err(bad("emf E must be > 0"));
        }
        Ok(())
    }
}

/// Operating point of the primary energy source behind an inverter. Used to
/// turn wind-speed and irradiance oscillations into power oscillations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resource {
    Wind {
        air_density: f64,
        swept_area: f64,
        power_coefficient: f64,
        wind_speed: f64,
        rated_power: f64,
    },
    Solar {
        panel_area: f64,
        efficiency: f64,
        irradiance: f64,
        rated_power: f64,
    },
}

/// Grid-following inverter with a PI phase-locked loop.
#[derive(Debug, Clone, PartialEq)]
pub struct IbrDevice {
    pub id: String,
    pub k_pllp: f64,
    pub k_plli: f64,
    /// Nominal grid frequency in rad/s. Cancels in deviation coordinates.
    pub nominal_freq: f64,
    /// Sensitivity of this device's q-axis voltage to every angle state
    /// (generator angles first, then inverter PLL angles).
    pub vq_coupling: Vec<f64>,
    /// Sensitivity of each generator's accelerating power to the disturbance
    /// injected at this inverter. Zero means the inverter does not push back
    /// on the machines.
    pub grid_injection: Vec<f64>,
    pub resource: Option<Resource>,
}

impl IbrDevice {
    fn validate(&self, n_gen: usize, n_angles: usize) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::Parameter {
            device: self.id.clone(),
            reason,
        };
        if !(self.k_pllp > 0.0 && self.k_pllp.is_finite()) {
            return Err(bad("k_pllp must be > 0".into()));
        }
        if !(self.k_plli > 0.0 && self.k_plli.is_finite()) {
            return Err(bad("k_plli must be > 0".into()));
        }
        if !(self.nominal_freq > 0.0 && self.nominal_freq.is_finite()) {
            return Err(bad("omega_g must be > 0".into()));
        }
        if self.vq_coupling.len() != n_angles {
            return Err(bad(format!(
                "vq_coupling has {} entries, model has {} angle states",
                self.vq_coupling.len(),
                n_angles
            )));
        }
        if self.grid_injection.len() != n_gen {
            return Err(bad(format!(
                "grid_injection has {} entries, model has {} generators",
                self.grid_injection.len(),
                n_gen
            )));
        }
        if self
            .vq_coupling
            .iter()
            .chain(&self.grid_injection)
            .any(|v| !v.is_finite())
        {
            return Err(bad("non-finite coupling entry".into()));
        }
        Ok(())
    }
}

/// dP_e/d(delta) at the operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix(DMatrix<f64>);

impl CouplingMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self, ModelError> {
        if entries.nrows() != entries.ncols() {
            return Err(ModelError::Dimension(format!(
                "coupling matrix is {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        for (row, r) in entries.row_iter().enumerate() {
            let sum: f64 = r.iter().sum();
            let scale = r.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            if !sum.is_finite() || sum.abs() > ROW_SUM_TOL * scale {
                return Err(ModelError::RowSum { row, sum });
            }
        }
        Ok(Self(entries))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(ModelError::Dimension("coupling matrix rows are ragged".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Linearized coupling of a lossless network with
/// `P_e,i = sum_j E_i E_j B_ij sin(delta_i - delta_j)`.
pub fn build_coupling(
    susceptances: &DMatrix<f64>,
    emfs: &[f64],
    equilibrium_angles: &[f64],
) -> Result<CouplingMatrix, ModelError> {
    let n = emfs.len();
    if susceptances.nrows() != n || susceptances.ncols() != n || equilibrium_angles.len() != n {
        return Err(ModelError::Dimension(format!(
            "susceptances {}x{}, {} emfs, {} angles",
            susceptances.nrows(),
            susceptances.ncols(),
            n,
            equilibrium_angles.len()
        )));
    }
    for i in 0..n {
        if susceptances[(i, i)] != 0.0 {
            return Err(ModelError::NonzeroDiagonal(i));
        }
        for j in (i + 1)..n {
            let (a, b) = (susceptances[(i, j)], susceptances[(j, i)]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(ModelError::NotSymmetric(i, j));
            }
        }
    }
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for k in 0..n {
            if k == i {
                continue;
            }
            let s = emfs[i]
                * emfs[k]
                * susceptances[(i, k)]
                * (equilibrium_angles[i] - equilibrium_angles[k]).cos();
            j[(i, k)] = -s;
            diag += s;
        }
        j[(i, i)] = diag;
    }
    CouplingMatrix::new(j)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelKind {
    Delta,
    Theta,
    Omega,
    Vq,
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Delta => "delta",
            ChannelKind::Theta => "theta",
            ChannelKind::Omega => "omega",
            ChannelKind::Vq => "vq",
        })
    }
}

/// One measured quantity. `index` is the device position within its group
/// (generators or inverters).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Channel {
    pub name: String,
    pub device_id: String,
    pub index: usize,
    pub kind: ChannelKind,
}

/// Canonical channel name, e.g. `g1.omega` or `ibr0.vq`.
pub fn channel_name(kind: ChannelKind, index: usize) -> String {
    match kind {
        ChannelKind::Delta | ChannelKind::Omega => format!("g{index}.{kind}"),
        ChannelKind::Theta | ChannelKind::Vq => format!("ibr{index}.{kind}"),
    }
}

/// Parse a canonical channel name back into its kind and device index.
pub fn parse_channel_name(name: &str) -> Option<(ChannelKind, usize)> {
    let (dev, kind) = name.split_once('.')?;
    let (prefix, idx) = if let Some(rest) = dev.strip_prefix("ibr") {
        ("ibr", rest)
    } else if let Some(rest) = dev.strip_prefix('g') {
        ("g", rest)
    } else {
        return None;
    };
    if idx.is_empty() || !idx.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if idx.len() > 1 && idx.starts_with('0') {
        return None;
    }
    let index: usize = idx.parse().ok()?;
    let kind = match (prefix, kind) {
        ("g", "delta") => ChannelKind::Delta,
        ("g", "omega") => ChannelKind::Omega,
        ("ibr", "theta") => ChannelKind::Theta,
        ("ibr", "vq") => ChannelKind::Vq,
        _ => return None,
    };
    Some((kind, index))
}

/// Ordering of states and measured inputs: generator angles, inverter PLL
/// angles, generator speeds; then inverter q-axis voltages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLayout {
    pub states: Vec<Channel>,
    pub inputs: Vec<Channel>,
    pub n_generators: usize,
    pub n_ibrs: usize,
}

impl StateLayout {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_angles(&self) -> usize {
        self.n_generators + self.n_ibrs
    }

    pub fn delta_row(&self, gen: usize) -> usize {
        gen
    }

    pub fn theta_row(&self, ibr: usize) -> usize {
        self.n_generators + ibr
    }

    pub fn omega_row(&self, gen: usize) -> usize {
        self.n_generators + self.n_ibrs + gen
    }

    /// State channels followed by input channels.
    pub fn all_channels(&self) -> impl Iterator<Item = &Channel> {
        self.states.iter().chain(self.inputs.iter())
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.all_channels().map(|c| c.name.clone()).collect()
    }

    /// Device ids in ranking order: generators then inverters.
    pub fn device_ids(&self) -> Vec<String> {
        self.states[..self.n_angles()]
            .iter()
            .map(|c| c.device_id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    generators: Vec<SynchronousGenerator>,
    ibrs: Vec<IbrDevice>,
    coupling: CouplingMatrix,
    reference_device: usize,
}

impl SystemModel {
    pub fn new(
        generators: Vec<SynchronousGenerator>,
        ibrs: Vec<IbrDevice>,
        coupling: CouplingMatrix,
        reference_device: usize,
    ) -> Result<Self, ModelError> {
        if generators.is_empty() {
            return Err(ModelError::NoGenerators);
        }
        let n_gen = generators.len();
        if coupling.dim() != n_gen {
            return Err(ModelError::Dimension(format!(
                "coupling is {0}x{0} but there are {1} generators",
                coupling.dim(),
                n_gen
            )));
        }
        if reference_device >= n_gen {
            return Err(ModelError::Reference(reference_device, n_gen));
        }
        let mut seen = HashSet::new();
        for id in generators.iter().map(|g| &g.id).chain(ibrs.iter().map(|d| &d.id)) {
            if !seen.insert(id.as_str()) {
                return Err(ModelError::DuplicateId(id.clone()));
            }
        }
        for g in &generators {
            g.validate()?;
        }
        let n_angles = n_gen + ibrs.len();
        for d in &ibrs {
            d.validate(n_gen, n_angles)?;
        }
        Ok(Self {
            generators,
            ibrs,
            coupling,
            reference_device,
        })
    }

    pub fn generators(&self) -> &[SynchronousGenerator] {
        &self.generators
    }

    pub fn ibrs(&self) -> &[IbrDevice] {
        &self.ibrs
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    pub fn reference_device(&self) -> usize {
        self.reference_device
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn n_ibrs(&self) -> usize {
        self.ibrs.len()
    }

    pub fn n_states(&self) -> usize {
        2 * self.n_generators() + self.n_ibrs()
    }

    /// Copy of the model with every generator's load-noise sigma replaced.
    pub fn with_noise_sigma(&self, sigma: f64) -> Self {
        let mut m = self.clone();
        for g in &mut m.generators {
            g.noise_sigma = sigma;
        }
        m
    }

    /// Copy of the model with a different coupling matrix.
    pub fn with_coupling(&self, coupling: CouplingMatrix) -> Result<Self, ModelError> {
        Self::new(
            self.generators.clone(),
            self.ibrs.clone(),
            coupling,
            self.reference_device,
        )
    }

    /// Which group a device id belongs to, and its index within that group.
    pub fn find_device(&self, id: &str) -> Option<DeviceRef> {
        if let Some(i) = self.generators.iter().position(|g| g.id == id) {
            return Some(DeviceRef::Generator(i));
        }
        self.ibrs
            .iter()
            .position(|d| d.id == id)
            .map(DeviceRef::Ibr)
    }

    /// Continuous-time deterministic dynamics over `[delta, theta, omega, z]`
    /// where `z` is each PLL's integrator state.
    pub fn system_matrix(&self) -> DMatrix<f64> {
        let ng = self.n_generators();
        let nr = self.n_ibrs();
        let na = ng + nr;
        let n = 2 * ng + 2 * nr;
        let (th0, om0, z0) = (ng, na, na + ng);
        let j = self.coupling.matrix();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..ng {
            a[(i, om0 + i)] = 1.0;
            let m = self.generators[i].inertia;
            for k in 0..ng {
                a[(om0 + i, k)] = -j[(i, k)] / m;
            }
            a[(om0 + i, om0 + i)] = -self.generators[i].damping / m;
        }
        for (r, dev) in self.ibrs.iter().enumerate() {
            for (col, c) in dev.vq_coupling.iter().enumerate() {
                a[(th0 + r, col)] += dev.k_pllp * c;
                a[(z0 + r, col)] += c;
            }
            a[(th0 + r, z0 + r)] += dev.k_plli;
        }
        a
    }

    /// Largest real part among the system eigenvalues, ignoring the single
    /// eigenvalue at the origin that comes from rotating every angle
    /// together (the network only sees angle differences).
    pub fn spectral_abscissa(&self) -> f64 {
        let eig = self.system_matrix().complex_eigenvalues();
        let mut vals: Vec<_> = eig.iter().copied().collect();
        if let Some(pos) = vals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .map(|(i, _)| i)
        {
            if vals[pos].norm() < 1e-7 {
                vals.remove(pos);
            }
        }
        vals.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lightly damped oscillatory modes, ordered by frequency.
    pub fn oscillatory_modes(&self) -> Vec<Mode> {
        let eig = self.system_matrix().complex_eigenvalues();
        let mut modes: Vec<Mode> = eig
            .iter()
            .filter(|z| z.im > 1e-9)
            .map(|z| Mode {
                frequency_hz: z.im / (2.0 * std::f64::consts::PI),
                damping_ratio: -z.re / z.norm(),
            })
            .collect();
        modes.sort_by(|a, b| a.frequency_hz.total_cmp(&b.frequency_hz));
        modes
    }

    pub fn layout(&self) -> StateLayout {
        state_layout(self)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = toml::from_str(text)?;
        file.into_model()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let file = ModelFile {
            generators: self
                .generators
                .iter()
                .map(|g| GeneratorEntry {
                    id: g.id.clone(),
                    m: g.inertia,
                    d: g.damping,
                    sigma: g.noise_sigma,
                    e: g.emf,
                })
                .collect(),
            ibrs: self
                .ibrs
                .iter()
                .map(|d| IbrEntry {
                    id: d.id.clone(),
                    k_pllp: d.k_pllp,
                    k_plli: d.k_plli,
                    omega_g: d.nominal_freq,
                    vq_coupling: d.vq_coupling.clone(),
                    grid_injection: Some(d.grid_injection.clone()),
                    resource: d.resource.clone(),
                })
                .collect(),
            coupling: CouplingEntry::Matrix {
                matrix: self
                    .coupling
                    .matrix()
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
            },
            reference_device: self.reference_device,
        };
        toml::to_string(&file).expect("model serializes to toml")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceRef {
    Generator(usize),
    Ibr(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub frequency_hz: f64,
    pub damping_ratio: f64,
}

pub fn state_layout(model: &SystemModel) -> StateLayout {
    let ng = model.n_generators();
    let nr = model.n_ibrs();
    let gen = |kind, i: usize| Channel {
        name: channel_name(kind, i),
        device_id: model.generators[i].id.clone(),
        index: i,
        kind,
    };
    let ibr = |kind, i: usize| Channel {
        name: channel_name(kind, i),
        device_id: model.ibrs[i].id.clone(),
        index: i,
        kind,
    };
    let mut states = Vec::with_capacity(2 * ng + nr);
    states.extend((0..ng).map(|i| gen(ChannelKind::Delta, i)));
    states.extend((0..nr).map(|i| ibr(ChannelKind::Theta, i)));
    states.extend((0..ng).map(|i| gen(ChannelKind::Omega, i)));
    let inputs = (0..nr).map(|i| ibr(ChannelKind::Vq, i)).collect();
    StateLayout {
        states,
        inputs,
        n_generators: ng,
        n_ibrs: nr,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    generators: Vec<GeneratorEntry>,
    #[serde(default)]
    ibrs: Vec<IbrEntry>,
    coupling: CouplingEntry,
    reference_device: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorEntry {
    id: String,
    #[serde(rename = "M")]
    m: f64,
    #[serde(rename = "D")]
    d: f64,
    sigma: f64,
    #[serde(rename = "E")]
    e: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IbrEntry {
    id: String,
    k_pllp: f64,
    k_plli: f64,
    omega_g: f64,
    vq_coupling: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid_injection: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resource: Option<Resource>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum CouplingEntry {
    Network {
        susceptances: Vec<Vec<f64>>,
        emfs: Vec<f64>,
        equilibrium_angles: Vec<f64>,
    },
    Matrix {
        matrix: Vec<Vec<f64>>,
    },
}

impl ModelFile {
    fn into_model(self) -> Result<SystemModel, ModelError> {
        let n_gen = self.generators.len();
        let coupling = match self.coupling {
            CouplingEntry::Matrix { matrix } => CouplingMatrix::from_rows(&matrix)?,
            CouplingEntry::Network {
                susceptances,
                emfs,
                equilibrium_angles,
            } => {
                let n = susceptances.len();
                if susceptances.iter().any(|r| r.len() != n) {
                    return Err(ModelError::Dimension("susceptance rows are ragged".into()));
                }
                let b = DMatrix::from_fn(n, n, |i, j| susceptances[i][j]);
                build_coupling(&b, &emfs, &equilibrium_angles)?
            }
        };
        let generators = self
            .generators
            .into_iter()
            .map(|g| SynchronousGenerator {
                id: g.id,
                inertia: g.m,
                damping: g.d,
                noise_sigma: g.sigma,
                emf: g.e,
            })
            .collect();
        let ibrs = self
            .ibrs
            .into_iter()
            .map(|d| IbrDevice {
                id: d.id,
                k_pllp: d.k_pllp,
                k_plli: d.k_plli,
                nominal_freq: d.omega_g,
                vq_coupling: d.vq_coupling,
                grid_injection: d.grid_injection.unwrap_or_else(|| vec![0.0; n_gen]),
                resource: d.resource,
            })
            .collect();
        SystemModel::new(generators, ibrs, coupling, self.reference_device)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(id: &str) -> SynchronousGenerator {
        SynchronousGenerator {
            id: id.into(),
            inertia: 0.03,
            damping: 0.02,
            noise_sigma: 0.0,
            emf: 1.0,
        }
    }

    fn ibr(id: &str, n_gen: usize, n_angles: usize) -> IbrDevice {
        IbrDevice {
            id: id.into(),
            k_pllp: 50.0,
            k_plli: 200.0,
            nominal_freq: 377.0,
            vq_coupling: vec![0.0; n_angles],
            grid_injection: vec![0.0; n_gen],
            resource: None,
        }
    }

    /// Electrical power of a classical lossless network.
    fn p_e(b: &DMatrix<f64>, e: &[f64], d: &[f64]) -> Vec<f64> {
        let n = e.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| e[i] * e[j] * b[(i, j)] * (d[i] - d[j]).sin())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn two_machine_coupling() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let j = build_coupling(&b, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(j.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn ring_coupling_matches_finite_differences() {
        let b = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.5, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0]);
        let e = [1.0, 1.0, 1.0];
        let d0 = [0.0, 0.1, -0.1];
        let j = build_coupling(&b, &e, &d0).unwrap();
        let h = 1e-6;
        let mut max_err: f64 = 0.0;
        for col in 0..3 {
            let mut up = d0;
            let mut dn = d0;
            up[col] += h;
            dn[col] -= h;
            let (pu, pd) = (p_e(&b, &e, &up), p_e(&b, &e, &dn));
            for row in 0..3 {
                let fd = (pu[row] - pd[row]) / (2.0 * h);
                max_err = max_err.max((fd - j.matrix()[(row, col)]).abs());
            }
        }
        assert!(max_err < 1e-6, "max err {max_err}");
    }

    #[test]
    fn coupling_rejects_bad_input() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(
            build_coupling(&asym, &[1.0, 1.0], &[0.0, 0.0]),
            Err(ModelError::NotSymmetric(0, 1))
        ));
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            build_coupling(&b, &[1.0], &[0.0, 0.0]),
            Err(ModelError::Dimension(_))
        ));
        assert!(CouplingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn layout_orders_states() {
        let c = CouplingMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let m = SystemModel::new(vec![gen("a"), gen("b")], vec![ibr("w", 2, 3)], c, 0).unwrap();
        let l = m.layout();
        let names: Vec<_> = l.states.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["g0.delta", "g1.delta", "ibr0.theta", "g0.omega", "g1.omega"]);
        assert_eq!(l.inputs[0].name, "ibr0.vq");
        assert_eq!(l.device_ids(), ["a", "b", "w"]);

        let c1 = CouplingMatrix::from_rows(&[vec![0.0]]).unwrap();
        let m1 = SystemModel::new(vec![gen("a")], vec![], c1, 0).unwrap();
        let names: Vec<_> = m1.layout().states.into_iter().map(|c| c.name).collect();
        assert_eq!(names, ["g0.delta", "g0.omega"]);
        assert!(m1.layout().inputs.is_empty());
    }

    #[test]
    fn layout_dimension_formula() {
        let n = 4;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 3.0 } else { -1.0 }).collect())
            .collect();
        let c = CouplingMatrix::from_rows(&rows).unwrap();
        let gens = (0..n).map(|i| gen(&format!("g{i}"))).collect();
        let ibrs = (0..2).map(|i| ibr(&format!("i{i}"), n, n + 2)).collect();
        let m = SystemModel::new(gens, ibrs, c, 0).unwrap();
        assert_eq!(m.layout().n_states(), 10);
        assert_eq!(m.layout().inputs.len(), 2);
    }

    #[test]
    fn model_validation() {
        let c = CouplingMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let dup = SystemModel::new(vec![gen("a"), gen("a")], vec![], c.clone(), 0);
        assert!(matches!(dup, Err(ModelError::DuplicateId(_))));
        let r = SystemModel::new(vec![gen("a"), gen("b")], vec![], c.clone(), 2);
        assert!(matches!(r, Err(ModelError::Reference(2, 2))));
        let mut g = gen("b");
        g.inertia = 0.0;
        assert!(SystemModel::new(vec![gen("a"), g], vec![], c.clone(), 0).is_err());
        let short = ibr("w", 2, 2);
        assert!(SystemModel::new(vec![gen("a"), gen("b")], vec![short], c, 0).is_err());
    }

    #[test]
    fn channel_names_parse() {
        assert_eq!(parse_channel_name("g12.delta"), Some((ChannelKind::Delta, 12)));
        assert_eq!(parse_channel_name("ibr0.vq"), Some((ChannelKind::Vq, 0)));
        assert_eq!(parse_channel_name("g0.vq"), None);
        assert_eq!(parse_channel_name("ibr.theta"), None);
        assert_eq!(parse_channel_name("g01.omega"), None);
        assert_eq!(parse_channel_name("time"), None);
    }

    #[test]
    fn model_file_both_coupling_forms() {
        let text = r#"
reference_device = 0

[[generators]]
id = "north"
M = 0.03
D = 0.02
sigma = 0.001
E = 1.0

[[generators]]
id = "south"
M = 0.02
D = 0.01
sigma = 0.001
E = 1.1

[[ibrs]]
id = "wind"
k_pllp = 40.0
k_plli = 400.0
omega_g = 376.99
vq_coupling = [0.5, 0.5, -1.0]

[coupling]
susceptances = [[0.0, 2.0], [2.0, 0.0]]
emfs = [1.0, 1.1]
equilibrium_angles = [0.0, -0.1]
"#;
        let m = SystemModel::from_toml_str(text).unwrap();
        assert_eq!(m.n_generators(), 2);
        assert_eq!(m.ibrs()[0].grid_injection, vec![0.0, 0.0]);
        let back = SystemModel::from_toml_str(&m.to_toml_string()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn single_machine_abscissa_ignores_rotation() {
        let c = CouplingMatrix::from_rows(&[vec![0.0]]).unwrap();
        let m = SystemModel::new(vec![gen("a")], vec![], c, 0).unwrap();
        let expected = -0.02 / 0.03;
        assert!((m.spectral_abscissa() - expected).abs() < 1e-9);
    }
}
