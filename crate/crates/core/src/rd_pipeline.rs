//! Pulse compression, coherent integration and model-input construction.
//!
//! Both transforms use the unitary DFT (`1/√n` in each direction), so cell
//! energies are directly comparable across stages and white noise keeps its
//! per-cell power. Windows are rectangular.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::signal_sim::{reference_chirp, RadarParams, RawEchoMatrix, SPEED_OF_LIGHT};

/// `rows × cols` complex grid, row-major. After the full chain rows are
/// range bins and columns are Doppler bins with zero Doppler at `cols / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RDMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl RDMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn energy(&self) -> EnergyMap {
        EnergyMap {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.norm_sqr()).collect(),
        }
    }

    pub fn total_energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Per-cell energy `|x|²` of an RD matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMap {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl EnergyMap {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}×{cols} map",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|e| e * k).collect(),
        }
    }
}

/// Three min-max normalized channels (`|x|`, `Re x`, `Im x`) over an RD grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RDTensor {
    pub rows: usize,
    pub cols: usize,
    /// `3 × rows × cols`, channel-major.
    pub data: Vec<f64>,
}

impl RDTensor {
    pub fn get(&self, ch: usize, r: usize, c: usize) -> f64 {
        self.data[(ch * self.rows + r) * self.cols + c]
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[ch * n..(ch + 1) * n]
    }
}

/// Truth positions of one frame in continuous bin coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthFrame {
    pub frame: usize,
    pub entries: Vec<(f64, f64)>,
}

fn unitary_fft(planner: &mut FftPlanner<f64>, buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    fft.process(buf);
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= scale);
}

/// Frequency response of the range matched filter: the conjugate reference
/// spectrum at unit magnitude. For `fs = B` the discrete chirp spectrum is
/// already flat, and this is the textbook matched filter.
fn matched_filter_response(params: &RadarParams, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let mut spec = reference_chirp(params);
    unitary_fft(planner, &mut spec, false);
    let peak = spec.iter().map(|z| z.norm()).fold(0.0, f64::max);
    spec.iter()
        .map(|z| {
            let mag = z.norm();
            if mag > 1e-12 * peak {
                z.conj() / mag
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
        .collect()
}

/// Matched-filter every pulse against the reference chirp (circular
/// correlation). Output has the raw layout: fast time (range) rows, pulse
/// columns.
pub fn pulse_compress(raw: &RawEchoMatrix) -> Result<RDMatrix> {
    let (rows, cols) = (raw.rows(), raw.cols());
    if raw.data.len() != rows * cols {
        return Err(Error::Shape(format!(
            "echo has {} samples, params say {rows}×{cols}",
            raw.data.len()
        )));
    }
    let mut planner = FftPlanner::new();
    let response = matched_filter_response(&raw.params, &mut planner);
    let mut out = RDMatrix::zeros(rows, cols);
    let mut buf = vec![Complex64::new(0.0, 0.0); rows];
    for n in 0..cols {
        for m in 0..rows {
            buf[m] = raw.get(m, n);
        }
        unitary_fft(&mut planner, &mut buf, false);
        buf.iter_mut().zip(&response).for_each(|(x, h)| *x *= h);
        unitary_fft(&mut planner, &mut buf, true);
        for m in 0..rows {
            out.set(m, n, buf[m]);
        }
    }
    Ok(out)
}

fn doppler_transform(input: &RDMatrix, inverse: bool) -> RDMatrix {
    let (rows, cols) = (input.rows, input.cols);
    let shift = cols / 2;
    let mut planner = FftPlanner::new();
    let mut out = RDMatrix::zeros(rows, cols);
    let mut buf = vec![Complex64::new(0.0, 0.0); cols];
    for r in 0..rows {
        let row = &input.data[r * cols..(r + 1) * cols];
        if inverse {
            for k in 0..cols {
                buf[k] = row[(k + shift) % cols];
            }
            unitary_fft(&mut planner, &mut buf, true);
            out.data[r * cols..(r + 1) * cols].copy_from_slice(&buf);
        } else {
            buf.copy_from_slice(row);
            unitary_fft(&mut planner, &mut buf, false);
            for k in 0..cols {
                out.data[r * cols + (k + shift) % cols] = buf[k];
            }
        }
    }
    out
}

/// Unitary DFT across slow time per range bin, zero Doppler moved to the
/// center column.
pub fn coherent_integrate(compressed: &RDMatrix) -> RDMatrix {
    doppler_transform(compressed, false)
}

/// Exact inverse of [`coherent_integrate`].
pub fn coherent_integrate_inverse(rd: &RDMatrix) -> RDMatrix {
    doppler_transform(rd, true)
}

/// Echo to Range-Doppler matrix.
pub fn process_frame(raw: &RawEchoMatrix) -> Result<RDMatrix> {
    Ok(coherent_integrate(&pulse_compress(raw)?))
}

/// Min-max normalize in place; a constant channel becomes all zeros.
fn min_max(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let span = hi - lo;
    values
        .iter_mut()
        .for_each(|v| *v = ((*v - lo) / span).clamp(0.0, 1.0));
}

/// Model input: amplitude, real and imaginary channels, each normalized to
/// `[0, 1]` over the frame.
pub fn three_channel(rd: &RDMatrix) -> RDTensor {
    let n = rd.rows * rd.cols;
    let mut data = Vec::with_capacity(3 * n);
    data.extend(rd.data.iter().map(|z| z.norm()));
    data.extend(rd.data.iter().map(|z| z.re));
    data.extend(rd.data.iter().map(|z| z.im));
    for ch in data.chunks_mut(n.max(1)) {
        min_max(ch);
    }
    RDTensor {
        rows: rd.rows,
        cols: rd.cols,
        data,
    }
}

/// Continuous `(range_bin, doppler_bin)` of a physical `(range, velocity)`.
pub fn bin_of(range: f64, velocity: f64, params: &RadarParams) -> Result<(f64, f64)> {
    let (rb, db) = crate::signal_sim::bins_unchecked(range, velocity, params);
    if !(rb >= 0.0 && rb < params.samples as f64) || !(db >= 0.0 && db < params.pulses as f64) {
        return Err(Error::OutOfRange(format!(
            "({range} m, {velocity} m/s) maps outside the {}×{} grid",
            params.samples, params.pulses
        )));
    }
    Ok((rb, db))
}

/// Physical `(range, velocity)` of a continuous bin position.
pub fn phys_of(range_bin: f64, doppler_bin: f64, params: &RadarParams) -> Result<(f64, f64)> {
    if !(range_bin >= 0.0 && range_bin < params.samples as f64)
        || !(doppler_bin >= 0.0 && doppler_bin < params.pulses as f64)
    {
        return Err(Error::OutOfRange(format!(
            "bin ({range_bin}, {doppler_bin}) outside the {}×{} grid",
            params.samples, params.pulses
        )));
    }
    Ok(phys_unchecked(range_bin, doppler_bin, params))
}

pub(crate) fn phys_unchecked(range_bin: f64, doppler_bin: f64, p: &RadarParams) -> (f64, f64) {
    let range = range_bin * SPEED_OF_LIGHT / (2.0 * p.sample_rate_hz);
    let f_d = (doppler_bin - p.doppler_center() as f64) / (p.pulses as f64 * p.pulse_width_s);
    (range, f_d * SPEED_OF_LIGHT / (2.0 * p.carrier_hz))
}

/// Post-integration SNR gain of the full chain for an on-grid point
/// target, in dB: `10·log10(M·L)`.
pub fn processing_gain_db(params: &RadarParams) -> f64 {
    10.0 * ((params.samples * params.pulses) as f64).log10()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::signal_sim::ScenarioConfig;

    fn params(m: usize, l: usize) -> RadarParams {
        RadarParams::new(77e9, 100e6, l, m, 100e6, 0.2).unwrap()
    }

    fn raw_from_columns(p: &RadarParams, pulse: impl Fn(usize, usize) -> Complex64) -> RawEchoMatrix {
        let mut data = Vec::new();
        for m in 0..p.samples {
            for n in 0..p.pulses {
                data.push(pulse(m, n));
            }
        }
        RawEchoMatrix {
            data,
            params: p.clone(),
            signal_power: 1.0,
            noise_power: 0.0,
        }
    }

    fn argmax(v: impl Iterator<Item = f64>) -> usize {
        v.enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap()
    }

    #[test]
    fn reference_pulse_peaks_at_zero_and_shifts() {
        let p = params(64, 4);
        let chirp = reference_chirp(&p);
        for d in [0usize, 5, 37] {
            let raw = raw_from_columns(&p, |m, _| chirp[(m + 64 - d) % 64]);
            let rd = pulse_compress(&raw).unwrap();
            let peak = argmax((0..64).map(|m| rd.get(m, 0).norm()));
            assert_eq!(peak, d);
        }
    }

    #[test]
    fn pulse_compression_is_linear_and_energy_preserving() {
        let p = params(32, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw = raw_from_columns(&p, |_, _| Complex64::new(0.0, 0.0));
        let raw = RawEchoMatrix {
            data: raw
                .data
                .iter()
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect(),
            ..raw
        };
        let out = pulse_compress(&raw).unwrap();
        for n in 0..3 {
            let e_in: f64 = (0..32).map(|m| raw.get(m, n).norm_sqr()).sum();
            let e_out: f64 = (0..32).map(|m| out.get(m, n).norm_sqr()).sum();
            assert!((e_in - e_out).abs() <= 1e-9 * e_in);
        }
        let scaled = RawEchoMatrix {
            data: raw.data.iter().map(|z| z * 2.5).collect(),
            ..raw.clone()
        };
        let out2 = pulse_compress(&scaled).unwrap();
        for (a, b) in out.data.iter().zip(&out2.data) {
            assert!((a * 2.5 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn doppler_dft_examples() {
        let l = 16;
        let constant = RDMatrix::from_fn(2, l, |_, _| Complex64::new(1.0, 0.0));
        let rd = coherent_integrate(&constant);
        assert!((rd.get(0, l / 2).norm() - 4.0).abs() < 1e-12);
        let off: f64 = (0..l).filter(|&k| k != l / 2).map(|k| rd.get(0, k).norm()).sum();
        assert!(off < 1e-12);

        let m0 = 3;
        let tone = RDMatrix::from_fn(1, l, |_, n| {
            Complex64::from_polar(1.0, 2.0 * PI * (n * m0) as f64 / l as f64)
        });
        let rd = coherent_integrate(&tone);
        assert_eq!(argmax((0..l).map(|k| rd.get(0, k).norm())), l / 2 + m0);
    }

    #[test]
    fn three_channel_examples() {
        let constant = RDMatrix::from_fn(4, 4, |_, _| Complex64::new(2.0, -1.0));
        assert!(three_channel(&constant).data.iter().all(|&v| v == 0.0));

        let mut m = RDMatrix::zeros(4, 4);
        m.set(1, 2, Complex64::new(3.0, 4.0));
        let t = three_channel(&m);
        let ones: Vec<usize> = (0..16).filter(|&i| t.channel(0)[i] == 1.0).collect();
        assert_eq!(ones, vec![6]);
    }

    #[test]
    fn bin_mapping_examples() {
        let p = RadarParams::table1();
        assert_eq!(bin_of(0.0, 0.0, &p).unwrap(), (0.0, 256.0));
        let (rb, db) = bin_of(50.0, 10.0, &p).unwrap();
        let (r, v) = phys_of(rb, db, &p).unwrap();
        assert!((r - 50.0).abs() < 1e-9 && (v - 10.0).abs() < 1e-9);
        assert!(bin_of(1e4, 0.0, &p).is_err());
        assert!(phys_of(-1.0, 0.0, &p).is_err());
    }

    #[test]
    fn chain_gain_matches_grid_size() {
        let mut cfg = ScenarioConfig::new(RadarParams::square(64).unwrap());
        let (r, v) = phys_of(20.0, 40.0, &cfg.radar).unwrap();
        cfg.targets = vec![crate::signal_sim::TargetState::new(r, v, 1.0)];
        let raw = crate::signal_sim::synth_echo(&cfg, 0, &cfg.targets).unwrap();
        let rd = process_frame(&raw).unwrap();
        let peak = rd.get(20, 40).norm_sqr();
        let gain_db = 10.0 * (peak / raw.signal_power).log10();
        assert!((gain_db - processing_gain_db(&cfg.radar)).abs() < 0.05, "{gain_db}");
    }
}
