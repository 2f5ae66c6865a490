//! Core signal types shared by the whole pipeline.

use thiserror::Error;

/// Lowest heart rate the pipeline will ever report, in beats per minute.
pub const HR_MIN_BPM: f64 = 20.0;
/// Highest heart rate the pipeline will ever report, in beats per minute.
pub const HR_MAX_BPM: f64 = 230.0;

/// Default PPG sample rate in Hz. Sensors running at 125 Hz are also handled.
pub const DEFAULT_FS_HZ: f64 = 25.0;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("channel {channel} sample {index} is not finite")]
    NonFiniteSample { channel: usize, index: usize },
    #[error("channel {channel} has {len} samples, expected {expected}")]
    ChannelLengthMismatch {
        channel: usize,
        len: usize,
        expected: usize,
    },
    #[error("sample rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("recording must have 1 or 2 channels, got {0}")]
    BadChannelCount(usize),
}

/// A raw PPG recording: one or two channels sampled uniformly at `fs_hz`.
///
/// Two-channel recordings hold green and infrared in that order; channel
/// selection for processing is a [`crate::sigproc::SigprocConfig`] knob.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgRecording {
    pub fs_hz: f64,
    pub channels: Vec<Vec<f64>>,
    /// Time of the first sample, in seconds.
    pub t0_s: f64,
}

impl PpgRecording {
    pub fn new(fs_hz: f64, channels: Vec<Vec<f64>>, t0_s: f64) -> Self {
        Self {
            fs_hz,
            channels,
            t0_s,
        }
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Duration covered by the samples, in seconds.
    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fs_hz
    }

    /// Channel to process: the requested index when it exists, otherwise the
    /// last available channel.
    pub fn channel(&self, index: usize) -> &[f64] {
        let idx = index.min(self.channels.len().saturating_sub(1));
        &self.channels[idx]
    }
}

/// A heart-rate series at a fixed rate, values in `[HR_MIN_BPM, HR_MAX_BPM]`.
///
/// The signal-processing stage emits 4 Hz intermediates and a 1 Hz final
/// series; ground truth is 1 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct HrSeries {
    pub rate_hz: f64,
    pub values: Vec<f64>,
    /// Time of the first reading, in seconds.
    pub t0_s: f64,
}

impl HrSeries {
    pub fn new(rate_hz: f64, values: Vec<f64>, t0_s: f64) -> Self {
        Self {
            rate_hz,
            values,
            t0_s,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time of reading `i`, in seconds.
    pub fn time_of(&self, i: usize) -> f64 {
        self.t0_s + i as f64 / self.rate_hz
    }
}

/// Activity scenario for synthetic recordings. Controls heart-rate
/// variability and motion-artifact frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Sitting,
    Sleeping,
    Daily,
}

impl Scenario {
    /// Scale applied to the random-walk step spread of the truth series.
    pub fn hr_step_scale(self) -> f64 {
        match self {
            Scenario::Sitting => 0.2,
            Scenario::Sleeping => 0.1,
            Scenario::Daily => 1.0,
        }
    }

    /// Motion-artifact bursts per minute.
    pub fn ma_rate_per_min(self) -> f64 {
        match self {
            Scenario::Sitting => 0.5,
            Scenario::Sleeping => 0.2,
            Scenario::Daily => 4.0,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sitting" => Ok(Scenario::Sitting),
            "sleeping" => Ok(Scenario::Sleeping),
            "daily" => Ok(Scenario::Daily),
            other => Err(format!(
                "unknown scenario {other:?}, expected one of: sitting, sleeping, daily"
            )),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Scenario::Sitting => "sitting",
            Scenario::Sleeping => "sleeping",
            Scenario::Daily => "daily",
        };
        f.write_str(name)
    }
}

/// Check a recording for structural problems: sample rate, channel count,
/// equal channel lengths, finite samples. Returns the recording unchanged
/// when it is well-formed, so validation is idempotent.
pub fn validate_recording(rec: PpgRecording) -> Result<PpgRecording, SignalError> {
    if !(rec.fs_hz > 0.0) || !rec.fs_hz.is_finite() {
        return Err(SignalError::NonPositiveRate(rec.fs_hz));
    }
    if rec.channels.is_empty() || rec.channels.len() > 2 {
        return Err(SignalError::BadChannelCount(rec.channels.len()));
    }
    let expected = rec.channels[0].len();
    for (ci, ch) in rec.channels.iter().enumerate() {
        if ch.len() != expected {
            return Err(SignalError::ChannelLengthMismatch {
                channel: ci,
                len: ch.len(),
                expected,
            });
        }
        if let Some(index) = ch.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFiniteSample { channel: ci, index });
        }
    }
    Ok(rec)
}
