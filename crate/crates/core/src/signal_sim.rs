//! LFMCW echo synthesis and measurement-level scene simulation.
//!
//! The transmitter sweeps a periodic linear chirp of width `T` once per
//! pulse. Each received pulse is the reference chirp circularly delayed by
//! the round-trip time, rotated by the carrier phase at frame start and by
//! a slow-time Doppler progression `2π·f_d·nT` (stop-and-hop: no Doppler
//! within a pulse). Complex white Gaussian noise is scaled so that the
//! per-sample SNR equals the configured value.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::features::{FeatureVec, FEATURE_DIM};
use crate::rng::{self, Purpose};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Waveform and sampling parameters of the radar.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarParams {
    /// Carrier frequency `f0` in Hz.
    pub carrier_hz: f64,
    /// Sweep bandwidth `B` in Hz.
    pub bandwidth_hz: f64,
    /// Pulse (sweep) width `T` in s.
    pub pulse_width_s: f64,
    /// Pulses per frame `L` (slow-time length, Doppler bins).
    pub pulses: usize,
    /// Samples per pulse `M` (fast-time length, range bins).
    pub samples: usize,
    /// Fast-time sample rate `fs` in Hz.
    pub sample_rate_hz: f64,
    /// Frame period `Δt` in s.
    pub frame_period_s: f64,
}

impl RadarParams {
    /// Parameters with the sweep width chosen so one pulse spans exactly
    /// `samples` fast-time samples.
    pub fn new(
        carrier_hz: f64,
        bandwidth_hz: f64,
        pulses: usize,
        samples: usize,
        sample_rate_hz: f64,
        frame_period_s: f64,
    ) -> Result<Self> {
        let p = Self {
            carrier_hz,
            bandwidth_hz,
            pulse_width_s: samples as f64 / sample_rate_hz,
            pulses,
            samples,
            sample_rate_hz,
            frame_period_s,
        };
        p.validate()?;
        Ok(p)
    }

    /// 77 GHz, 561.96 MHz sweep, 512 × 512 samples, fs = B, Δt = 0.2 s.
    pub fn table1() -> Self {
        Self::new(77e9, 561.96e6, 512, 512, 561.96e6, 0.2).expect("valid defaults")
    }

    /// Same waveform as [`table1`](Self::table1) on a square `n × n` grid.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(77e9, 561.96e6, n, n, 561.96e6, 0.2)
    }

    /// Chirp slope `k = B / T` in Hz/s.
    pub fn chirp_slope(&self) -> f64 {
        self.bandwidth_hz / self.pulse_width_s
    }

    /// Index of the zero-Doppler bin after the half-spectrum shift.
    pub fn doppler_center(&self) -> usize {
        self.pulses / 2
    }

    /// Range covered by one range bin, m.
    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.sample_rate_hz)
    }

    /// Radial velocity covered by one Doppler bin, m/s.
    pub fn velocity_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.carrier_hz * self.pulses as f64 * self.pulse_width_s)
    }

    pub fn doppler_hz(&self, velocity: f64) -> f64 {
        2.0 * self.carrier_hz * velocity / SPEED_OF_LIGHT
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.carrier_hz,
            self.bandwidth_hz,
            self.pulse_width_s,
            self.sample_rate_hz,
            self.frame_period_s,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("radar parameters must be finite".into()));
        }
        if self.carrier_hz <= 0.0 || self.bandwidth_hz <= 0.0 || self.pulse_width_s <= 0.0 {
            return Err(Error::Config("f0, B and T must be positive".into()));
        }
        if self.pulses == 0 || self.samples == 0 {
            return Err(Error::Config("pulses and samples must be at least 1".into()));
        }
        if self.sample_rate_hz < self.bandwidth_hz {
            return Err(Error::Config(format!(
                "sample rate {} Hz below bandwidth {} Hz",
                self.sample_rate_hz, self.bandwidth_hz
            )));
        }
        let span = self.pulse_width_s * self.sample_rate_hz;
        if (span - self.samples as f64).abs() > 1e-6 * self.samples as f64 {
            return Err(Error::Config(format!(
                "pulse width spans {span} samples, expected {}",
                self.samples
            )));
        }
        if self.frame_period_s < 0.0 {
            return Err(Error::Config("frame period must be non-negative".into()));
        }
        Ok(())
    }
}

/// Point target: range, radial velocity and received amplitude `A_r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetState {
    pub range: f64,
    pub velocity: f64,
    pub amplitude: f64,
}

impl TargetState {
    pub fn new(range: f64, velocity: f64, amplitude: f64) -> Self {
        Self {
            range,
            velocity,
            amplitude,
        }
    }
}

/// Measurement-level clutter and detection-noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterConfig {
    /// Poisson mean of clutter points per frame.
    pub rate: f64,
    /// Uniform clutter support in range, m.
    pub range: (f64, f64),
    /// Uniform clutter support in radial velocity, m/s.
    pub velocity: (f64, f64),
    /// Confidence band for clutter detections.
    pub clutter_confidence: (f64, f64),
    /// Confidence band for target detections.
    pub target_confidence: (f64, f64),
    /// Range measurement noise σ_r, m.
    pub sigma_range: f64,
    /// Velocity measurement noise σ_v, m/s.
    pub sigma_velocity: f64,
    /// Per-component noise of synthesized target features; `None` disables
    /// feature synthesis.
    pub feature_noise: Option<f64>,
}

impl Default for ClutterConfig {
    fn default() -> Self {
        Self {
            rate: 0.0,
            range: (0.0, 130.0),
            velocity: (-20.0, 20.0),
            clutter_confidence: (0.05, 0.45),
            target_confidence: (0.55, 0.95),
            sigma_range: 0.6,
            sigma_velocity: 0.2,
            feature_noise: None,
        }
    }
}

/// Everything needed to reproduce one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub radar: RadarParams,
    pub targets: Vec<TargetState>,
    /// Pre-processing per-sample SNR in dB; `None` disables noise.
    pub snr_db: Option<f64>,
    pub frames: usize,
    pub clutter: ClutterConfig,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(radar: RadarParams) -> Self {
        Self {
            radar,
            targets: Vec::new(),
            snr_db: None,
            frames: 1,
            clutter: ClutterConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.radar.validate()?;
        if self.frames == 0 {
            return Err(Error::Config("frames must be at least 1".into()));
        }
        let c = &self.clutter;
        if !(c.rate >= 0.0 && c.rate.is_finite()) {
            return Err(Error::Config("clutter rate must be finite and non-negative".into()));
        }
        if c.rate > 0.0 && !(c.range.1 > c.range.0 && c.velocity.1 > c.velocity.0) {
            return Err(Error::Config("clutter region is empty".into()));
        }
        for (name, (lo, hi)) in [
            ("clutter_confidence", c.clutter_confidence),
            ("target_confidence", c.target_confidence),
        ] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::Config(format!("{name} must be a sub-interval of [0, 1]")));
            }
        }
        if c.sigma_range < 0.0 || c.sigma_velocity < 0.0 {
            return Err(Error::Config("measurement sigmas must be non-negative".into()));
        }
        for t in &self.targets {
            if !(t.range > 0.0 && t.amplitude > 0.0) {
                return Err(Error::Config(format!(
                    "target range and amplitude must be positive: {t:?}"
                )));
            }
        }
        Ok(())
    }

    /// Targets at the start of `frame` under constant velocity.
    pub fn targets_at(&self, frame: usize) -> Vec<TargetState> {
        propagate_targets(&self.targets, frame as f64 * self.radar.frame_period_s)
    }
}

/// Complex fast-time × slow-time samples of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEchoMatrix {
    /// `samples × pulses`, row `m` holds fast-time sample `m` of every pulse.
    pub data: Vec<Complex64>,
    pub params: RadarParams,
    /// Mean per-sample power of the summed target signal.
    pub signal_power: f64,
    /// Per-sample noise power that was added.
    pub noise_power: f64,
}

impl RawEchoMatrix {
    pub fn rows(&self) -> usize {
        self.params.samples
    }

    pub fn cols(&self) -> usize {
        self.params.pulses
    }

    pub fn get(&self, sample: usize, pulse: usize) -> Complex64 {
        self.data[sample * self.params.pulses + pulse]
    }

    /// One pulse as a contiguous vector.
    pub fn pulse(&self, pulse: usize) -> Vec<Complex64> {
        (0..self.rows()).map(|m| self.get(m, pulse)).collect()
    }
}

/// Noise power `P_N` with `10·log10(P_S / P_N) = snr_db`.
pub fn noise_power_for_snr(signal_power: f64, snr_db: f64) -> Result<f64> {
    if !signal_power.is_finite() || !snr_db.is_finite() {
        return Err(Error::Domain(format!(
            "signal power {signal_power} and SNR {snr_db} dB must be finite"
        )));
    }
    if signal_power <= 0.0 {
        return Err(Error::Domain(format!("signal power {signal_power} must be positive")));
    }
    Ok(signal_power / 10f64.powf(snr_db / 10.0))
}

/// Reference chirp `exp(jπk t²)` sampled over one pulse.
pub fn reference_chirp(params: &RadarParams) -> Vec<Complex64> {
    let k = params.chirp_slope();
    (0..params.samples)
        .map(|m| {
            let t = m as f64 / params.sample_rate_hz;
            Complex64::from_polar(1.0, PI * k * t * t)
        })
        .collect()
}

fn check_extent(params: &RadarParams, t: &TargetState, pulse_span: f64) -> Result<()> {
    let max_range = t.range.max(t.range + t.velocity * pulse_span);
    let min_range = t.range.min(t.range + t.velocity * pulse_span);
    let delay_samples = 2.0 * max_range * params.sample_rate_hz / SPEED_OF_LIGHT;
    if min_range < 0.0 || delay_samples >= params.samples as f64 {
        return Err(Error::OutOfRange(format!(
            "target at {} m delays {delay_samples:.3} samples, window is {}",
            t.range, params.samples
        )));
    }
    let cycles_per_pulse = params.doppler_hz(t.velocity) * params.pulse_width_s;
    if cycles_per_pulse.abs() >= 0.5 {
        return Err(Error::OutOfRange(format!(
            "target velocity {} m/s aliases in Doppler",
            t.velocity
        )));
    }
    Ok(())
}

/// Synthesize the received echo matrix of one frame.
pub fn synth_echo(
    cfg: &ScenarioConfig,
    frame: usize,
    targets: &[TargetState],
) -> Result<RawEchoMatrix> {
    let p = &cfg.radar;
    p.validate()?;
    let (rows, cols) = (p.samples, p.pulses);
    let pulse_t = p.pulse_width_s;
    for t in targets {
        check_extent(p, t, cols as f64 * pulse_t)?;
    }

    let k = p.chirp_slope();
    let mut data = vec![Complex64::new(0.0, 0.0); rows * cols];
    for t in targets {
        let f_d = p.doppler_hz(t.velocity);
        let carrier = -2.0 * PI * p.carrier_hz * 2.0 * t.range / SPEED_OF_LIGHT;
        for n in 0..cols {
            let tau = 2.0 * (t.range + t.velocity * n as f64 * pulse_t) / SPEED_OF_LIGHT;
            let delay = tau * p.sample_rate_hz;
            let slow = carrier + 2.0 * PI * f_d * n as f64 * pulse_t;
            for m in 0..rows {
                let u = (m as f64 - delay).rem_euclid(rows as f64) / p.sample_rate_hz;
                let phase = PI * k * u * u + slow;
                data[m * cols + n] += Complex64::from_polar(t.amplitude, phase);
            }
        }
    }

    let signal_power = data.iter().map(|s| s.norm_sqr()).sum::<f64>() / data.len() as f64;
    let noise_power = match cfg.snr_db {
        Some(snr) if signal_power > 0.0 => noise_power_for_snr(signal_power, snr)?,
        // Without targets the SNR is undefined; noise is drawn at unit
        // reference power so noise-only frames stay comparable.
        Some(snr) => noise_power_for_snr(1.0, snr)?,
        None => 0.0,
    };
    if noise_power > 0.0 {
        let mut rng = rng::stream(cfg.seed, frame as u64, Purpose::EchoNoise);
        let sigma = (noise_power / 2.0).sqrt();
        for s in data.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *s += Complex64::new(sigma * re, sigma * im);
        }
    }

    Ok(RawEchoMatrix {
        data,
        params: p.clone(),
        signal_power,
        noise_power,
    })
}

/// Constant-velocity propagation over `delta_t` seconds.
pub fn propagate_targets(targets: &[TargetState], delta_t: f64) -> Vec<TargetState> {
    targets
        .iter()
        .map(|t| TargetState {
            range: t.range + t.velocity * delta_t,
            ..*t
        })
        .collect()
}

fn uniform_in(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn random_unit(rng: &mut impl Rng) -> FeatureVec {
    let v: Vec<f64> = (0..FEATURE_DIM).map(|_| StandardNormal.sample(rng)).collect();
    FeatureVec::normalized(v)
}

/// Persistent feature signature of target `index` in a run.
pub fn target_signature(seed: u64, index: usize) -> FeatureVec {
    let mut rng = rng::stream(seed ^ 0x5167_6e61_7475_7265, index as u64, Purpose::Features);
    random_unit(&mut rng)
}

/// Continuous bin position without extent checks (measurement noise may
/// push a point slightly outside the grid).
pub(crate) fn bins_unchecked(range: f64, velocity: f64, p: &RadarParams) -> (f64, f64) {
    (
        2.0 * range * p.sample_rate_hz / SPEED_OF_LIGHT,
        p.doppler_center() as f64 + p.doppler_hz(velocity) * p.pulses as f64 * p.pulse_width_s,
    )
}

/// Simulated detector output for tracker-only experiments: one noisy
/// detection per target plus Poisson clutter, in bin coordinates.
pub fn gen_measurement_frame(
    cfg: &ScenarioConfig,
    targets: &[TargetState],
    frame: usize,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let c = &cfg.clutter;
    let f = frame as u64;
    let mut noise_rng = rng::stream(cfg.seed, f, Purpose::MeasurementNoise);
    let mut conf_rng = rng::stream(cfg.seed, f, Purpose::Confidence);
    let mut feat_rng = rng::stream(cfg.seed, f, Purpose::Features);
    let mut clutter_rng = rng::stream(cfg.seed, f, Purpose::Clutter);

    let range_noise = Normal::new(0.0, c.sigma_range).map_err(|e| Error::Config(e.to_string()))?;
    let vel_noise = Normal::new(0.0, c.sigma_velocity).map_err(|e| Error::Config(e.to_string()))?;

    let mut out = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        let r = t.range + range_noise.sample(&mut noise_rng);
        let v = t.velocity + vel_noise.sample(&mut noise_rng);
        let (rb, db) = bins_unchecked(r, v, &cfg.radar);
        let conf = uniform_in(&mut conf_rng, c.target_confidence);
        let mut det = Detection::new(rb, db, conf, 0.0);
        if let Some(sigma) = c.feature_noise {
            let sig = target_signature(cfg.seed, i);
            let noisy: Vec<f64> = sig
                .as_slice()
                .iter()
                .map(|x| x + sigma * Distribution::<f64>::sample(&StandardNormal, &mut feat_rng))
                .collect();
            det.feature = Some(FeatureVec::normalized(noisy));
        }
        out.push(det);
    }

    if c.rate > 0.0 {
        let poisson = Poisson::new(c.rate).map_err(|e| Error::Config(e.to_string()))?;
        let count = poisson.sample(&mut clutter_rng) as usize;
        for _ in 0..count {
            let r = uniform_in(&mut clutter_rng, c.range);
            let v = uniform_in(&mut clutter_rng, c.velocity);
            let (rb, db) = bins_unchecked(r, v, &cfg.radar);
            let conf = uniform_in(&mut conf_rng, c.clutter_confidence);
            let mut det = Detection::new(rb, db, conf, 0.0);
            if c.feature_noise.is_some() {
                det.feature = Some(random_unit(&mut feat_rng));
            }
            out.push(det);
        }
    }
    Ok(out)
}
