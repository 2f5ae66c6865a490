//! Synthetic labeled recordings: a ground-truth heart-rate walk and a PPG
//! waveform that follows it, with baseline wander, sensor noise and motion
//! artifacts layered on top.

use std::f64::consts::TAU;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::signal::{HrSeries, PpgRecording, Scenario};

/// Relative amplitudes of the pulse fundamental and its first two harmonics.
const HARMONIC_AMPS: [f64; 3] = [1.0, 0.35, 0.12];
/// Baseline wander (respiration-like drift) frequency in Hz.
const WANDER_HZ: f64 = 0.1;
/// Moving-average length used to band-limit motion-artifact noise.
const MA_SMOOTH: usize = 5;

const STREAM_TRUTH: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_BURSTS: u64 = 2;

/// Pull of the truth walk back toward its starting rate, per second. Keeps
/// long recordings stationary around the resting level instead of drifting
/// across the whole physiological range, the way resting heart rate recovers
/// after activity.
const REVERSION_RATE: f64 = 0.025;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid config field {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

/// Parameters for one synthetic recording.
///
/// The scenario scales the truth walk's step spread and picks the default
/// motion-artifact rate; everything else can be overridden per field.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scenario: Scenario,
    pub duration_s: f64,
    pub fs_hz: f64,
    pub seed: u64,
    pub hr_start_bpm: f64,
    /// Inclusive (low, high) bounds for the truth walk, within [20, 230].
    pub hr_bounds_bpm: (f64, f64),
    /// Largest per-second change of the truth heart rate.
    pub hr_max_slew_bpm_per_s: f64,
    /// Standard deviation of additive white sensor noise.
    pub noise_std: f64,
    pub baseline_wander_amp: f64,
    /// Motion-artifact bursts per minute; arrival times are Poisson.
    pub ma_rate_per_min: f64,
    pub ma_amp: f64,
    pub ma_dur_s: f64,
}

impl SynthConfig {
    /// Config with the preset artifact rate for `scenario` and reference
    /// values everywhere else.
    pub fn for_scenario(scenario: Scenario) -> Self {
        Self {
            scenario,
            duration_s: 120.0,
            fs_hz: crate::signal::DEFAULT_FS_HZ,
            seed: 0,
            hr_start_bpm: 75.0,
            hr_bounds_bpm: (40.0, 190.0),
            hr_max_slew_bpm_per_s: 2.0,
            noise_std: 0.12,
            baseline_wander_amp: 0.3,
            ma_rate_per_min: scenario.ma_rate_per_min(),
            ma_amp: 1.0,
            ma_dur_s: 2.0,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |field, reason: String| Err(SynthError::InvalidConfig { field, reason });
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return bad("duration_s", format!("must be positive, got {}", self.duration_s));
        }
        if !(self.fs_hz > 0.0) || !self.fs_hz.is_finite() {
            return bad("fs_hz", format!("must be positive, got {}", self.fs_hz));
        }
        let (lo, hi) = self.hr_bounds_bpm;
        if !(crate::signal::HR_MIN_BPM..=crate::signal::HR_MAX_BPM).contains(&lo)
            || !(crate::signal::HR_MIN_BPM..=crate::signal::HR_MAX_BPM).contains(&hi)
            || lo >= hi
        {
            return bad(
                "hr_bounds_bpm",
                format!("need 20 <= low < high <= 230, got ({lo}, {hi})"),
            );
        }
        if !(lo..=hi).contains(&self.hr_start_bpm) {
            return bad(
                "hr_start_bpm",
                format!("{} outside bounds ({lo}, {hi})", self.hr_start_bpm),
            );
        }
        for (field, v) in [
            ("hr_max_slew_bpm_per_s", self.hr_max_slew_bpm_per_s),
            ("noise_std", self.noise_std),
            ("baseline_wander_amp", self.baseline_wander_amp),
            ("ma_rate_per_min", self.ma_rate_per_min),
            ("ma_amp", self.ma_amp),
            ("ma_dur_s", self.ma_dur_s),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(field, format!("must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::for_scenario(Scenario::Daily)
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator for one of the synth noise streams, so adding draws
/// to one stream never perturbs the others.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream)))
}

pub(crate) fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    // 53 random mantissa bits, value in [0, 1)
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u kept away from zero so ln() stays finite
    let u = uniform01(rng).max(f64::MIN_POSITIVE);
    let v = uniform01(rng);
    (-2.0 * u.ln()).sqrt() * (TAU * v).cos()
}

/// Ground-truth heart rate: a 1 Hz bounded, mean-reverting random walk.
///
/// Steps are Gaussian with spread `hr_max_slew * scenario scale` plus a
/// gentle pull back toward the starting rate; the whole step is hard-capped
/// at `hr_max_slew` per second and the walk is clamped to `hr_bounds_bpm`.
pub fn gen_truth_hr(cfg: &SynthConfig) -> Result<HrSeries, SynthError> {
    cfg.validate()?;
    let n = cfg.duration_s.round().max(1.0) as usize;
    let mut rng = stream_rng(cfg.seed, STREAM_TRUTH);
    let slew = cfg.hr_max_slew_bpm_per_s;
    let sigma = slew * cfg.scenario.hr_step_scale();
    let (lo, hi) = cfg.hr_bounds_bpm;
    let rest = cfg.hr_start_bpm.clamp(lo, hi);

    let mut values = Vec::with_capacity(n);
    let mut hr = rest;
    values.push(hr);
    for _ in 1..n {
        let noise = if sigma > 0.0 {
            sigma * gauss(&mut rng)
        } else {
            0.0
        };
        let step = (REVERSION_RATE * (rest - hr) + noise).clamp(-slew, slew);
        hr = (hr + step).clamp(lo, hi);
        values.push(hr);
    }
    Ok(HrSeries::new(1.0, values, 0.0))
}

/// Truth heart rate in Hz at time `t` seconds, linearly interpolated between
/// the 1 Hz readings and held constant past either end.
fn truth_hz_at(truth: &HrSeries, t: f64) -> f64 {
    let vals = &truth.values;
    let rel = (t - truth.t0_s) * truth.rate_hz;
    if rel <= 0.0 || vals.len() == 1 {
        return vals[0] / 60.0;
    }
    let last = vals.len() - 1;
    if rel >= last as f64 {
        return vals[last] / 60.0;
    }
    let i = rel as usize;
    let frac = rel - i as f64;
    (vals[i] + frac * (vals[i + 1] - vals[i])) / 60.0
}

/// PPG waveform following `truth`: fundamental plus two harmonics at the
/// instantaneous heart-rate frequency, with wander, noise and motion bursts.
///
/// Pure function of `(truth, cfg)`: the same inputs give bit-identical
/// samples.
pub fn gen_ppg(truth: &HrSeries, cfg: &SynthConfig) -> Result<PpgRecording, SynthError> {
    cfg.validate()?;
    if truth.is_empty() {
        return Err(SynthError::InvalidConfig {
            field: "duration_s",
            reason: "truth series is empty".into(),
        });
    }
    let fs = cfg.fs_hz;
    let dt = 1.0 / fs;
    let n = (cfg.duration_s * fs).round() as usize;
    let mut noise_rng = stream_rng(cfg.seed, STREAM_NOISE);

    let mut samples = Vec::with_capacity(n);
    // phase = 2*pi * integral of hr(t)/60, trapezoidal per sample
    let mut phase = 0.0f64;
    let mut prev_hz = truth_hz_at(truth, truth.t0_s);
    for i in 0..n {
        let t = truth.t0_s + i as f64 * dt;
        let mut v = 0.0;
        for (h, amp) in HARMONIC_AMPS.iter().enumerate() {
            v += amp * ((h + 1) as f64 * phase).sin();
        }
        v += cfg.baseline_wander_amp * (TAU * WANDER_HZ * (t - truth.t0_s)).sin();
        if cfg.noise_std > 0.0 {
            v += cfg.noise_std * gauss(&mut noise_rng);
        }
        samples.push(v);
        let next_hz = truth_hz_at(truth, t + dt);
        phase += TAU * 0.5 * (prev_hz + next_hz) * dt;
        prev_hz = next_hz;
    }
    add_ma_bursts(&mut samples, fs, cfg);
    Ok(PpgRecording::new(fs, vec![samples], truth.t0_s))
}

/// Overlay Poisson-arriving motion-artifact bursts: band-limited noise with a
/// raised-cosine envelope, `ma_dur_s` long, `ma_amp` peak standard deviation.
fn add_ma_bursts(samples: &mut [f64], fs: f64, cfg: &SynthConfig) {
    let rate_per_s = cfg.ma_rate_per_min / 60.0;
    if rate_per_s <= 0.0 || cfg.ma_amp <= 0.0 || cfg.ma_dur_s <= 0.0 {
        return;
    }
    let mut rng = stream_rng(cfg.seed, STREAM_BURSTS);
    let burst_len = (cfg.ma_dur_s * fs).round().max(1.0) as usize;
    let duration_s = samples.len() as f64 / fs;

    let mut t = 0.0;
    loop {
        // exponential inter-arrival times
        t += -(1.0 - uniform01(&mut rng)).ln() / rate_per_s;
        if t >= duration_s {
            break;
        }
        let start = (t * fs) as usize;
        let raw: Vec<f64> = (0..burst_len + MA_SMOOTH - 1)
            .map(|_| gauss(&mut rng))
            .collect();
        for j in 0..burst_len {
            let Some(slot) = samples.get_mut(start + j) else {
                break;
            };
            let smoothed: f64 = raw[j..j + MA_SMOOTH].iter().sum::<f64>() / MA_SMOOTH as f64;
            let env = 0.5 * (1.0 - (TAU * j as f64 / burst_len as f64).cos());
            // the moving average shrinks variance by MA_SMOOTH; undo it so
            // ma_amp is the envelope-peak standard deviation
            *slot += cfg.ma_amp * (MA_SMOOTH as f64).sqrt() * smoothed * env;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean_config(hr: f64, duration_s: f64) -> (SynthConfig, HrSeries) {
        let cfg = SynthConfig {
            scenario: Scenario::Sitting,
            duration_s,
            hr_start_bpm: hr,
            hr_max_slew_bpm_per_s: 0.0,
            noise_std: 0.0,
            baseline_wander_amp: 0.0,
            ma_rate_per_min: 0.0,
            ..SynthConfig::default()
        };
        let truth = gen_truth_hr(&cfg).unwrap();
        (cfg, truth)
    }

    #[test]
    fn zero_slew_walk_is_constant() {
        let (_, truth) = clean_config(75.0, 60.0);
        assert_eq!(truth.len(), 60);
        assert!(truth.values.iter().all(|&v| v == 75.0));
    }

    #[test]
    fn walk_respects_slew_and_bounds() {
        for seed in 0..20 {
            let cfg = SynthConfig {
                seed,
                duration_s: 600.0,
                hr_bounds_bpm: (50.0, 90.0),
                hr_start_bpm: 70.0,
                ..SynthConfig::default()
            };
            let truth = gen_truth_hr(&cfg).unwrap();
            for w in truth.values.windows(2) {
                assert!((w[1] - w[0]).abs() <= cfg.hr_max_slew_bpm_per_s + 1e-12);
            }
            assert!(truth
                .values
                .iter()
                .all(|&v| (50.0..=90.0).contains(&v)));
        }
    }

    #[test]
    fn walk_stays_stationary_around_the_start() {
        // two-hour daily walks must not drift away for good: the early and
        // late halves have to occupy the same range, or chronological
        // train/test splits would sample different distributions
        for seed in 0..5 {
            let cfg = SynthConfig {
                seed,
                duration_s: 7200.0,
                ..SynthConfig::for_scenario(Scenario::Daily)
            };
            let truth = gen_truth_hr(&cfg).unwrap();
            let half = truth.len() / 2;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let early = mean(&truth.values[..half]);
            let late = mean(&truth.values[half..]);
            assert!(
                (early - late).abs() < 20.0,
                "seed {seed}: halves drifted apart, {early:.1} vs {late:.1}"
            );
            assert!(
                (mean(&truth.values) - cfg.hr_start_bpm).abs() < 15.0,
                "seed {seed}: walk left its resting level"
            );
        }
    }

    #[test]
    fn same_seed_reproduces_bits() {
        let cfg = SynthConfig { seed: 42, ..SynthConfig::default() };
        let t1 = gen_truth_hr(&cfg).unwrap();
        let t2 = gen_truth_hr(&cfg).unwrap();
        assert_eq!(t1, t2);
        let p1 = gen_ppg(&t1, &cfg).unwrap();
        let p2 = gen_ppg(&t2, &cfg).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn different_seeds_differ() {
        let a = gen_truth_hr(&SynthConfig { seed: 1, ..SynthConfig::default() }).unwrap();
        let b = gen_truth_hr(&SynthConfig { seed: 2, ..SynthConfig::default() }).unwrap();
        assert_ne!(a.values, b.values);
    }

    #[test]
    fn invalid_duration_names_field() {
        let cfg = SynthConfig { duration_s: 0.0, ..SynthConfig::default() };
        match gen_truth_hr(&cfg) {
            Err(SynthError::InvalidConfig { field, .. }) => assert_eq!(field, "duration_s"),
            other => panic!("expected InvalidConfig, got {other:?}"),
        }
    }

    /// Strict local maxima of the sampled waveform, no separation rules.
    fn count_maxima(samples: &[f64]) -> usize {
        samples
            .windows(3)
            .filter(|w| w[1] > w[0] && w[1] > w[2])
            .count()
    }

    #[test]
    fn clean_signal_has_one_peak_per_beat() {
        // 10 s at 60 bpm: one fundamental period per second
        let (cfg, truth) = clean_config(60.0, 10.0);
        let rec = gen_ppg(&truth, &cfg).unwrap();
        let peaks = count_maxima(&rec.channels[0]);
        assert!((9..=11).contains(&peaks), "got {peaks} peaks");
    }

    #[test]
    fn clean_signal_frequency_matches_truth() {
        // zero-crossing oracle: the waveform crosses zero upward once per
        // beat, so crossings/duration estimates hr/60 Hz
        for hr in [50.0, 72.0, 120.0, 180.0] {
            let (cfg, truth) = clean_config(hr, 300.0);
            let rec = gen_ppg(&truth, &cfg).unwrap();
            let s = &rec.channels[0];
            let crossings = s
                .windows(2)
                .filter(|w| w[0] <= 0.0 && w[1] > 0.0)
                .count();
            let est_hz = crossings as f64 / cfg.duration_s;
            let want_hz = hr / 60.0;
            assert!(
                (est_hz - want_hz).abs() / want_hz < 0.01,
                "hr {hr}: estimated {est_hz} Hz want {want_hz} Hz"
            );
        }
    }

    #[test]
    fn ppg_sample_count_matches_duration() {
        let (cfg, truth) = clean_config(72.0, 120.0);
        let rec = gen_ppg(&truth, &cfg).unwrap();
        assert_eq!(rec.len(), 3000);
        assert_eq!(rec.fs_hz, 25.0);
    }

    #[test]
    fn bursts_change_the_signal() {
        let cfg = SynthConfig {
            duration_s: 60.0,
            noise_std: 0.0,
            baseline_wander_amp: 0.0,
            ma_rate_per_min: 10.0,
            ..SynthConfig::default()
        };
        let truth = gen_truth_hr(&cfg).unwrap();
        let with = gen_ppg(&truth, &cfg).unwrap();
        let without = gen_ppg(&truth, &SynthConfig { ma_rate_per_min: 0.0, ..cfg }).unwrap();
        assert_ne!(with.channels[0], without.channels[0]);
    }
}
