//! Time-aligned, uniformly sampled measurement windows and their CSV form.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{parse_channel_name, StateLayout};

/// Allowed deviation of a timestamp from the uniform grid, in seconds.
pub const TIMESTAMP_JITTER_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("window needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("channel `{name}` has {got} samples, expected {expected}")]
    Ragged {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("duplicate channel `{0}`")]
    DuplicateChannel(String),
    #[error("sampling interval must be positive and finite, got {0}")]
    BadInterval(f64),
    #[error("missing channel `{0}`")]
    MissingChannel(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("non-uniform sampling at row {row}: t = {time}, expected {expected}")]
    NonUniform { row: usize, time: f64, expected: f64 },
    #[error("non-finite or unparsable value at row {row}, column `{column}`")]
    BadValue { row: usize, column: String },
    #[error("requested window [{start}, {end}) s lies outside the data [{t0}, {t1}] s")]
    OutOfRange {
        start: f64,
        end: f64,
        t0: f64,
        t1: f64,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A block of samples on a uniform time grid `t0 + k * dt`, stored one
/// series per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementWindow {
    t0: f64,
    dt: f64,
    channel_names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl MeasurementWindow {
    pub fn new(
        t0: f64,
        dt: f64,
        channel_names: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self, MeasurementError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(MeasurementError::BadInterval(dt));
        }
        if channel_names.len() != columns.len() {
            return Err(MeasurementError::Header(format!(
                "{} names for {} columns",
                channel_names.len(),
                columns.len()
            )));
        }
        let n = columns.first().map_or(0, Vec::len);
        if n < 2 {
            return Err(MeasurementError::TooShort(n));
        }
        let mut seen = HashSet::new();
        for (name, col) in channel_names.iter().zip(&columns) {
            if !seen.insert(name.as_str()) {
                return Err(MeasurementError::DuplicateChannel(name.clone()));
            }
            if col.len() != n {
                return Err(MeasurementError::Ragged {
                    name: name.clone(),
                    got: col.len(),
                    expected: n,
                });
            }
        }
        Ok(Self {
            t0,
            dt,
            channel_names,
            columns,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_samples(&self) -> usize {
        self.columns[0].len()
    }

    pub fn n_channels(&self) -> usize {
        self.columns.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_samples()).map(|k| self.time(k)).collect()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channel_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn sample(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    /// Same metadata, new data per channel.
    pub fn map_columns(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        Self {
            t0: self.t0,
            dt: self.dt,
            channel_names: self.channel_names.clone(),
            columns: self.columns.iter().map(|c| f(c)).collect(),
        }
    }

    /// Samples with `start <= t < start + length`.
    pub fn select(&self, start: f64, length: f64) -> Result<Self, MeasurementError> {
        let n = self.n_samples();
        let out_of_range = || MeasurementError::OutOfRange {
            start,
            end: start + length,
            t0: self.t0,
            t1: self.time(n - 1),
        };
        if !(start.is_finite() && length.is_finite() && length > 0.0) {
            return Err(out_of_range());
        }
        let first = ((start - self.t0) / self.dt - 1e-9).ceil().max(0.0) as usize;
        let count = (length / self.dt - 1e-9).ceil() as usize;
        if start < self.t0 - TIMESTAMP_JITTER_TOL || first + count > n || count < 2 {
            return Err(out_of_range());
        }
        Ok(Self {
            t0: self.time(first),
            dt: self.dt,
            channel_names: self.channel_names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| c[first..first + count].to_vec())
                .collect(),
        })
    }

    /// Reorder to the layout's channel order, failing on the first channel the
    /// layout needs but the window lacks.
    pub fn for_layout(&self, layout: &StateLayout) -> Result<Self, MeasurementError> {
        let mut names = Vec::new();
        let mut columns = Vec::new();
        for ch in layout.all_channels() {
            let col = self
                .channel(&ch.name)
                .ok_or_else(|| MeasurementError::MissingChannel(ch.name.clone()))?;
            names.push(ch.name.clone());
            columns.push(col.to_vec());
        }
        Self::new(self.t0, self.dt, names, columns)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MeasurementError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(self.channel_names.iter().cloned());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for k in 0..self.n_samples() {
            record.clear();
            record.push(self.time(k).to_string());
            record.extend(self.columns.iter().map(|c| c[k].to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), MeasurementError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Read a measurement CSV: header `time,<channel>...` with canonical channel
/// names, strictly increasing timestamps on a uniform grid.
pub fn read_csv<R: Read>(reader: R) -> Result<MeasurementWindow, MeasurementError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = r.headers()?.clone();
    if header.get(0) != Some("time") {
        return Err(MeasurementError::Header(
            "first column must be `time`".into(),
        ));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if names.is_empty() {
        return Err(MeasurementError::Header("no data channels".into()));
    }
    for name in &names {
        if parse_channel_name(name).is_none() {
            return Err(MeasurementError::Header(format!(
                "`{name}` is not a channel name (expected g<k>.delta, g<k>.omega, ibr<k>.theta or ibr<k>.vq)"
            )));
        }
    }
    let mut times = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() + 1 {
            return Err(MeasurementError::Header(format!(
                "row {row} has {} fields, header has {}",
                rec.len(),
                names.len() + 1
            )));
        }
        let parse = |i: usize, column: &str| -> Result<f64, MeasurementError> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| MeasurementError::BadValue {
                    row,
                    column: column.to_string(),
                })
        };
        times.push(parse(0, "time")?);
        for (c, name) in names.iter().enumerate() {
            columns[c].push(parse(c + 1, name)?);
        }
    }
    if times.len() < 2 {
        return Err(MeasurementError::TooShort(times.len()));
    }
    let dt = infer_interval(&times)?;
    MeasurementWindow::new(times[0], dt, names, columns)
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<MeasurementWindow, MeasurementError> {
    read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Median timestamp delta, snapped to `1 / round(rate)` when the implied
/// rate is an integer number of hertz to within 1e-6 relative. Every
/// timestamp must lie within [`TIMESTAMP_JITTER_TOL`] of the resulting grid.
pub fn infer_interval(times: &[f64]) -> Result<f64, MeasurementError> {
    let mut deltas: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    for (row, d) in deltas.iter().enumerate() {
        if !(*d > 0.0) {
            return Err(MeasurementError::NonUniform {
                row: row + 1,
                time: times[row + 1],
                expected: f64::NAN,
            });
        }
    }
    deltas.sort_by(f64::total_cmp);
    let mid = deltas.len() / 2;
    let median = if deltas.len() % 2 == 1 {
        deltas[mid]
    } else {
        0.5 * (deltas[mid - 1] + deltas[mid])
    };
    let rate = 1.0 / median;
    let rounded = rate.round();
    let dt = if rounded >= 1.0 && ((rate - rounded) / rounded).abs() < 1e-6 {
        1.0 / rounded
    } else {
        median
    };
    for (row, &t) in times.iter().enumerate() {
        let expected = times[0] + row as f64 * dt;
        if (t - expected).abs() > TIMESTAMP_JITTER_TOL {
            return Err(MeasurementError::NonUniform {
                row,
                time: t,
                expected,
            });
        }
    }
    Ok(dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window() -> MeasurementWindow {
        MeasurementWindow::new(
            0.0,
            0.5,
            vec!["g0.delta".into(), "g0.omega".into()],
            vec![vec![0.1, 0.2, 0.3, 0.4], vec![1.0, -1.0, 1e-17, 3.25]],
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let w = window();
        let back = read_csv(w.to_csv_string().as_bytes()).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn jittered_sixty_hertz_snaps() {
        let times: Vec<f64> = (0..600)
            .map(|k| k as f64 / 60.0 + if k % 2 == 0 { 1e-9 } else { -1e-9 })
            .collect();
        assert_eq!(infer_interval(&times).unwrap(), 1.0 / 60.0);
    }

    #[test]
    fn off_grid_rate_keeps_median() {
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.017).collect();
        let dt = infer_interval(&times).unwrap();
        assert!((dt - 0.017).abs() < 1e-12);
    }

    #[test]
    fn non_uniform_rejected() {
        let mut times: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        times[50] += 0.01;
        assert!(matches!(
            infer_interval(&times),
            Err(MeasurementError::NonUniform { row: 50, .. })
        ));
        let backwards = [0.0, 0.1, 0.05];
        assert!(infer_interval(&backwards).is_err());
    }

    #[test]
    fn bad_value_reports_location() {
        let text = "time,g0.delta\n0,1\n0.5,NaN\n1,2\n";
        match read_csv(text.as_bytes()) {
            Err(MeasurementError::BadValue { row, column }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "g0.delta");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_csv("t,g0.delta\n0,1\n1,1\n".as_bytes()),
            Err(MeasurementError::Header(_))
        ));
        assert!(matches!(
            read_csv("time,bus7\n0,1\n1,1\n".as_bytes()),
            Err(MeasurementError::Header(_))
        ));
    }

    #[test]
    fn select_is_half_open() {
        let w = MeasurementWindow::new(0.0, 0.25, vec!["g0.delta".into()], vec![(0..20).map(f64::from).collect()])
            .unwrap();
        let s = w.select(1.0, 2.0).unwrap();
        assert_eq!(s.n_samples(), 8);
        assert_eq!(s.t0(), 1.0);
        assert_eq!(s.columns()[0][0], 4.0);
        assert!(w.select(4.0, 2.0).is_err());
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            MeasurementWindow::new(0.0, 1.0, vec!["a".into()], vec![vec![1.0]]),
            Err(MeasurementError::TooShort(1))
        ));
        assert!(matches!(
            MeasurementWindow::new(0.0, 1.0, vec!["a".into(), "a".into()], vec![vec![1.0, 2.0]; 2]),
            Err(MeasurementError::DuplicateChannel(_))
        ));
        assert!(MeasurementWindow::new(0.0, 0.0, vec!["a".into()], vec![vec![1.0, 2.0]]).is_err());
    }
}
