//! Time series of wavepacket observables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average velocity (and optionally acceleration and per-peak diffraction
/// amplitudes) sampled on a time grid. Units are whatever the producer used;
/// the simulation pipeline works in recoil units (t_r, v_r).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VelocityTrace {
    pub times: Vec<f64>,
    pub velocity: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceleration: Option<Vec<f64>>,
    /// Per-sample diffraction peak amplitudes, when the trace came from the
    /// measurement pipeline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_amplitudes: Option<Vec<Vec<f64>>>,
}

impl VelocityTrace {
    pub fn new(times: Vec<f64>, velocity: Vec<f64>) -> Self {
        assert_eq!(times.len(), velocity.len());
        Self { times, velocity, acceleration: None, peak_amplitudes: None }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sample spacing; the trace must be uniformly sampled.
    pub fn sample_interval(&self) -> Result<f64> {
        if self.times.len() < 2 {
            return Err(Error::TraceTooShort { samples: self.times.len(), needed: 2 });
        }
        let dt = self.times[1] - self.times[0];
        for w in self.times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1e-300) {
                return Err(Error::Parse("trace is not uniformly sampled".into()));
            }
        }
        Ok(dt)
    }

    /// Indices of samples with `t0 <= t <= t1`.
    pub fn window_indices(&self, t0: f64, t1: f64) -> Vec<usize> {
        self.times
            .iter()
            .enumerate()
            .filter(|(_, &t)| t >= t0 && t <= t1)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t,v")?;
        if self.acceleration.is_some() {
            write!(w, ",a")?;
        }
        let n_peaks = self.peak_amplitudes.as_ref().map_or(0, |p| p.first().map_or(0, Vec::len));
        for j in 0..n_peaks {
            write!(w, ",peak_{j}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{},{}", self.times[i], self.velocity[i])?;
            if let Some(a) = &self.acceleration {
                write!(w, ",{}", a[i])?;
            }
            if let Some(p) = &self.peak_amplitudes {
                for v in &p[i] {
                    write!(w, ",{v}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Read a trace written by [`write_csv`](Self::write_csv) (or any CSV with
    /// `t` and `v` columns).
    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<Self> {
        let (headers, columns) = crate::io::read_numeric_csv(r)?;
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (it, iv) = match (col("t"), col("v")) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Parse("trace CSV needs 't' and 'v' columns".into())),
        };
        let mut trace = VelocityTrace::new(columns[it].clone(), columns[iv].clone());
        if let Some(ia) = col("a") {
            trace.acceleration = Some(columns[ia].clone());
        }
        let peak_cols: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("peak_"))
            .map(|(i, _)| i)
            .collect();
        if !peak_cols.is_empty() {
            let n = trace.times.len();
            trace.peak_amplitudes = Some(
                (0..n)
                    .map(|i| peak_cols.iter().map(|&c| columns[c][i]).collect())
                    .collect(),
            );
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_preserves_all_columns() {
        let mut trace = VelocityTrace::new(vec![0.0, 0.1, 0.2], vec![1.0, 2.0, 3.0]);
        trace.acceleration = Some(vec![0.5, 0.6, 0.7]);
        trace.peak_amplitudes = Some(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = VelocityTrace::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.times, trace.times);
        assert_eq!(back.velocity, trace.velocity);
        assert_eq!(back.acceleration, trace.acceleration);
        assert_eq!(back.peak_amplitudes, trace.peak_amplitudes);
    }

    #[test]
    fn nonuniform_traces_are_rejected() {
        let trace = VelocityTrace::new(vec![0.0, 0.1, 0.3], vec![0.0; 3]);
        assert!(trace.sample_interval().is_err());
    }
}
