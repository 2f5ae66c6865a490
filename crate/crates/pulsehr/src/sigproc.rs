//! Signal processing: raw PPG to a 1 Hz heart-rate series.
//!
//! The chain is peak detection on short sliding windows, an initial 4 Hz
//! rate estimate from inter-peak intervals, a rolling z-score outlier filter,
//! per-second averaging down to 1 Hz, and a slew-rate clamp against the
//! previous output.

use thiserror::Error;

use crate::signal::{HrSeries, PpgRecording, HR_MAX_BPM, HR_MIN_BPM};

/// Readings a window must hold before the z-score filter activates.
const Z_MIN_READINGS: usize = 8;
/// Rate estimate emitted while no peaks have been seen yet.
const FALLBACK_HR_BPM: f64 = 70.0;

#[derive(Debug, Error, PartialEq)]
pub enum SigprocError {
    #[error("peak detection needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("recording covers {got_s:.2} s, need at least {need_s:.2} s")]
    RecordingTooShort { got_s: f64, need_s: f64 },
}

/// Tuning knobs for the whole stage-two chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SigprocConfig {
    /// Channel to process; recordings with fewer channels fall back to the
    /// last one present.
    pub channel: usize,
    /// Sliding estimation window length in seconds.
    pub window_s: f64,
    /// Step between successive windows in seconds; 0.25 s gives 4 readings
    /// per second.
    pub hop_s: f64,
    /// Length of the centered moving average subtracted before peak picking.
    pub detrend_window_s: f64,
    /// Peak height threshold as a multiple of the detrended window's
    /// standard deviation.
    pub min_prominence_factor: f64,
    /// Physiological ceiling; sets the refractory distance between peaks.
    pub max_hr_bpm: f64,
    pub z_threshold: f64,
    /// Trailing window of the outlier filter, in readings. 120 readings at
    /// 4 Hz is 30 s.
    pub z_window_readings: usize,
    /// Fractional change allowed per second by the final clamp.
    pub clamp_bound: f64,
}

impl Default for SigprocConfig {
    fn default() -> Self {
        Self {
            channel: 1,
            window_s: 8.0,
            hop_s: 0.25,
            detrend_window_s: 1.0,
            min_prominence_factor: 0.5,
            max_hr_bpm: 220.0,
            z_threshold: 3.0,
            z_window_readings: 120,
            clamp_bound: 0.05,
        }
    }
}

impl SigprocConfig {
    /// Minimum distance between peaks in samples at `fs_hz`.
    pub fn refractory_samples(&self, fs_hz: f64) -> usize {
        ((fs_hz * 60.0 / self.max_hr_bpm).floor() as usize).max(1)
    }
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Subtract a centered moving-average baseline, truncated at the edges.
fn detrend(samples: &[f64], window: usize) -> Vec<f64> {
    let n = samples.len();
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &s in samples {
        prefix.push(prefix.last().unwrap() + s);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let mean = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            samples[i] - mean
        })
        .collect()
}

/// Topographic prominence of the local maximum at `i`: height above the
/// higher of the two bases, where each base is the lowest point between the
/// peak and the nearest strictly higher sample (or the edge) on that side.
fn prominence(det: &[f64], i: usize) -> f64 {
    let h = det[i];
    let mut left_base = h;
    for j in (0..i).rev() {
        if det[j] > h {
            break;
        }
        left_base = left_base.min(det[j]);
    }
    let mut right_base = h;
    for &v in &det[i + 1..] {
        if v > h {
            break;
        }
        right_base = right_base.min(v);
    }
    h - left_base.max(right_base)
}

/// Indices of pulse peaks in `samples`, ascending.
///
/// After baseline removal, candidates are strict local maxima whose
/// topographic prominence reaches `min_prominence_factor` times the
/// detrended standard deviation; ripples riding on a pulse flank stay below
/// that bar even when they sit high. Candidates closer than the refractory
/// distance are resolved by keeping the larger peak, then the earlier one.
pub fn detect_peaks(
    samples: &[f64],
    fs_hz: f64,
    cfg: &SigprocConfig,
) -> Result<Vec<usize>, SigprocError> {
    let n = samples.len();
    if n < 3 {
        return Err(SigprocError::TooFewSamples(n));
    }
    let w = (cfg.detrend_window_s * fs_hz).round().max(1.0) as usize;
    let det = detrend(samples, w);
    let threshold = cfg.min_prominence_factor * population_std(&det);
    let min_dist = cfg.refractory_samples(fs_hz);

    let mut candidates: Vec<usize> = (1..n - 1)
        .filter(|&i| {
            det[i] > det[i - 1] && det[i] > det[i + 1] && prominence(&det, i) >= threshold
        })
        .collect();
    candidates.sort_by(|&a, &b| det[b].total_cmp(&det[a]).then(a.cmp(&b)));

    let mut kept: Vec<usize> = Vec::new();
    for i in candidates {
        // kept stays sorted, so only the insertion neighbors can conflict
        let pos = kept.partition_point(|&k| k < i);
        let near_prev = pos > 0 && i - kept[pos - 1] < min_dist;
        let near_next = pos < kept.len() && kept[pos] - i < min_dist;
        if !near_prev && !near_next {
            kept.insert(pos, i);
        }
    }
    Ok(kept)
}

/// Initial heart-rate estimate: one reading per `hop_s` from the mean
/// inter-peak interval of each trailing window, clamped to [20, 230] bpm.
///
/// Windows with fewer than two peaks repeat the previous reading; before any
/// estimate exists the fallback is 70 bpm. The first reading sits at the end
/// of the first full window, `t0 + window_s`.
pub fn initial_hr(rec: &PpgRecording, cfg: &SigprocConfig) -> Result<HrSeries, SigprocError> {
    let samples = rec.channel(cfg.channel);
    let fs = rec.fs_hz;
    let window = (cfg.window_s * fs).round() as usize;
    if samples.len() < window {
        return Err(SigprocError::RecordingTooShort {
            got_s: samples.len() as f64 / fs,
            need_s: cfg.window_s,
        });
    }
    let hop = cfg.hop_s * fs;
    let mut values = Vec::new();
    let mut prev = FALLBACK_HR_BPM;
    for j in 0.. {
        let start = (j as f64 * hop).round() as usize;
        let Some(end) = start.checked_add(window).filter(|&e| e <= samples.len()) else {
            break;
        };
        let peaks = detect_peaks(&samples[start..end], fs, cfg)?;
        let hr = if peaks.len() >= 2 {
            let span = (peaks[peaks.len() - 1] - peaks[0]) as f64;
            let beats = (peaks.len() - 1) as f64;
            (60.0 * fs * beats / span).clamp(HR_MIN_BPM, HR_MAX_BPM)
        } else {
            prev
        };
        values.push(hr);
        prev = hr;
    }
    Ok(HrSeries::new(1.0 / cfg.hop_s, values, rec.t0_s + cfg.window_s))
}

/// Replace outliers with the average of their neighbors.
///
/// A reading is an outlier when its z-score over the trailing
/// `z_window_readings` readings (current included, already-revised values
/// seen) exceeds `z_threshold`. The replacement averages the revised
/// predecessor and the raw successor; endpoints use their single neighbor.
/// The filter stays inactive until 8 readings exist.
pub fn zscore_filter(hr: &HrSeries, cfg: &SigprocConfig) -> HrSeries {
    let input = &hr.values;
    let mut out = input.clone();
    for i in 0..out.len() {
        let lo = (i + 1).saturating_sub(cfg.z_window_readings);
        if i + 1 - lo < Z_MIN_READINGS {
            continue;
        }
        let window = &out[lo..=i];
        let std = population_std(window);
        if std <= 0.0 {
            continue;
        }
        let mean = window.iter().sum::<f64>() / window.len() as f64;
        if (out[i] - mean).abs() / std > cfg.z_threshold {
            let mut sum = 0.0;
            let mut count = 0.0;
            if i > 0 {
                sum += out[i - 1];
                count += 1.0;
            }
            if i + 1 < input.len() {
                sum += input[i + 1];
                count += 1.0;
            }
            if count > 0.0 {
                out[i] = sum / count;
            }
        }
    }
    HrSeries::new(hr.rate_hz, out, hr.t0_s)
}

/// Average each second's readings down to a 1 Hz series; a trailing partial
/// second is dropped.
pub fn smooth_per_second(hr: &HrSeries) -> HrSeries {
    let per_second = (hr.rate_hz.round() as usize).max(1);
    let values = hr
        .values
        .chunks_exact(per_second)
        .map(|c| c.iter().sum::<f64>() / per_second as f64)
        .collect();
    HrSeries::new(1.0, values, hr.t0_s)
}

/// Limit second-to-second change to `clamp_bound` of the previous output.
///
/// The bound is relative to the already-clamped predecessor, so a step
/// change turns into a geometric ramp.
pub fn clamp_smooth(hr: &HrSeries, cfg: &SigprocConfig) -> HrSeries {
    let mut out: Vec<f64> = Vec::with_capacity(hr.len());
    for &v in &hr.values {
        let next = match out.last() {
            None => v,
            Some(&prev) => v.clamp(prev * (1.0 - cfg.clamp_bound), prev * (1.0 + cfg.clamp_bound)),
        };
        out.push(next);
    }
    HrSeries::new(hr.rate_hz, out, hr.t0_s)
}

/// The full stage-two chain: PPG recording in, 1 Hz heart-rate series out.
///
/// An N-second recording yields `N - window_s` seconds of readings starting
/// at `t0 + window_s`.
pub fn stage2(rec: &PpgRecording, cfg: &SigprocConfig) -> Result<HrSeries, SigprocError> {
    let raw = initial_hr(rec, cfg)?;
    let filtered = zscore_filter(&raw, cfg);
    let per_second = smooth_per_second(&filtered);
    Ok(clamp_smooth(&per_second, cfg))
}
