//! Heart rate from pulse waveforms by short-time spectral peak picking.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{ci95, MeanCi};
use crate::synth::SyntheticDataset;

pub const HR_MIN_BPM: f64 = 40.0;
pub const HR_MAX_BPM: f64 = 180.0;
/// Windows whose in-band peak magnitude falls below this are flagged low-confidence.
pub const LOW_CONFIDENCE_PEAK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_s: f64,
    pub hop_s: f64,
    /// FFT length as a multiple of the window length.
    pub pad_factor: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_s: 10.0,
            hop_s: 1.0,
            pad_factor: 4,
        }
    }
}

impl StftParams {
    pub fn window_samples(&self, fps: f64) -> usize {
        (self.window_s * fps).round() as usize
    }

    pub fn hop_samples(&self, fps: f64) -> usize {
        ((self.hop_s * fps).round() as usize).max(1)
    }

    /// Width of one spectral bin in BPM.
    pub fn bin_bpm(&self, fps: f64) -> f64 {
        60.0 * fps / (self.pad_factor * self.window_samples(fps)) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0 && self.hop_s > 0.0) || self.pad_factor == 0 {
            return Err(Error::Config(format!("invalid STFT parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvpSeries {
    pub subject_id: String,
    pub fps: f64,
    pub samples: Vec<f64>,
}

impl BvpSeries {
    pub fn new(subject_id: impl Into<String>, fps: f64, samples: Vec<f64>) -> Self {
        Self {
            subject_id: subject_id.into(),
            fps,
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HrSeries {
    /// Window centers, seconds.
    pub times: Vec<f64>,
    pub bpm: Vec<f64>,
    pub low_confidence: Vec<bool>,
}

impl HrSeries {
    pub fn len(&self) -> usize {
        self.bpm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bpm.is_empty()
    }

    /// `time_s,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,value\n");
        for (t, v) in self.times.iter().zip(&self.bpm) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Per-window heart rate: Hann-weighted, mean-removed, zero-padded magnitude
/// spectrum, argmax restricted to 40–180 BPM.
pub fn stft_hr(bvp: &BvpSeries, params: StftParams) -> Result<HrSeries> {
    params.validate()?;
    if bvp.fps.is_nan() || bvp.fps <= 0.0 {
        return Err(Error::Config(format!("fps must be positive, got {}", bvp.fps)));
    }
    let win = params.window_samples(bvp.fps);
    let hop = params.hop_samples(bvp.fps);
    if win < 2 || bvp.samples.len() < win {
        return Err(Error::Length {
            len: bvp.samples.len(),
            required: win.max(2),
        });
    }
    let nfft = win * params.pad_factor;
    let hz_per_bin = bvp.fps / nfft as f64;
    let lo = (HR_MIN_BPM / 60.0 / hz_per_bin).ceil() as usize;
    let hi = ((HR_MAX_BPM / 60.0 / hz_per_bin).floor() as usize).min(nfft / 2);
    if lo > hi {
        return Err(Error::Config(
            "frequency resolution too coarse for the heart-rate band".into(),
        ));
    }

    let window = hann(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut out = HrSeries::default();
    let mut start = 0;
    while start + win <= bvp.samples.len() {
        let seg = &bvp.samples[start..start + win];
        let mean = seg.iter().sum::<f64>() / win as f64;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < win {
                Complex::new((seg[i] - mean) * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        let (mut best, mut peak) = (lo, f64::NEG_INFINITY);
        for (k, c) in buf.iter().enumerate().take(hi + 1).skip(lo) {
            let mag = c.norm();
            if mag > peak {
                peak = mag;
                best = k;
            }
        }
        out.times.push((start as f64 + win as f64 / 2.0) / bvp.fps);
        out.bpm.push(60.0 * best as f64 * hz_per_bin);
        out.low_confidence.push(peak < LOW_CONFIDENCE_PEAK);
        start += hop;
    }
    Ok(out)
}

/// Mean absolute error in BPM between two series sharing window timestamps.
pub fn mae(pred: &HrSeries, truth: &HrSeries) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Alignment(format!(
            "{} predicted windows vs {} ground-truth windows",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Alignment("empty heart-rate series".into()));
    }
    if let Some(i) = pred
        .times
        .iter()
        .zip(&truth.times)
        .position(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(Error::Alignment(format!(
            "window {i} at {} s vs {} s",
            pred.times[i], truth.times[i]
        )));
    }
    Ok(pred
        .bpm
        .iter()
        .zip(&truth.bpm)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Ground-truth summary of one clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipStats {
    pub seconds: f64,
    pub avg_hr: f64,
    pub hr_stddev: f64,
}

impl ClipStats {
    pub fn from_series(hr: &[f64], fps: f64) -> Self {
        let n = hr.len() as f64;
        let avg = hr.iter().sum::<f64>() / n;
        let var = if hr.len() > 1 {
            hr.iter().map(|h| (h - avg).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            seconds: n / fps,
            avg_hr: avg,
            hr_stddev: var.sqrt(),
        }
    }
}

/// Per-domain clip time, average HR, and HR standard deviation, each as mean ± 95% CI across clips.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub time: MeanCi,
    pub avg_hr: MeanCi,
    pub hr_stddev: MeanCi,
}

impl SummaryStats {
    pub fn row(&self, name: &str) -> String {
        format!("{name},{},{},{}", self.time, self.avg_hr, self.hr_stddev)
    }
}

pub fn summary_stats(clips: &[ClipStats]) -> Result<SummaryStats> {
    if clips.is_empty() {
        return Err(Error::InsufficientData("no clips".into()));
    }
    let col = |f: fn(&ClipStats) -> f64| clips.iter().map(f).collect::<Vec<_>>();
    let (time, avg, sd) = (col(|c| c.seconds), col(|c| c.avg_hr), col(|c| c.hr_stddev));
    if clips.len() < 2 {
        return Err(Error::CiUndefined {
            means: [time[0], avg[0], sd[0]],
        });
    }
    Ok(SummaryStats {
        time: ci95(&time)?,
        avg_hr: ci95(&avg)?,
        hr_stddev: ci95(&sd)?,
    })
}

pub fn dataset_summary(dataset: &SyntheticDataset) -> Result<SummaryStats> {
    let clips: Vec<ClipStats> = dataset
        .subjects
        .iter()
        .map(|s| ClipStats::from_series(&s.hr, dataset.fps))
        .collect();
    summary_stats(&clips)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fps: f64, seconds: f64, amp: f64) -> BvpSeries {
        let n = (fps * seconds) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / fps).sin())
            .collect();
        BvpSeries::new("s", fps, samples)
    }

    #[test]
    fn bin_width() {
        let p = StftParams::default();
        assert!((p.bin_bpm(30.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn recovers_90_bpm() {
        let p = StftParams::default();
        let hr = stft_hr(&sine(1.5, 30.0, 30.0, 1.0), p).unwrap();
        assert_eq!(hr.len(), 21);
        for &b in &hr.bpm {
            assert!((b - 90.0).abs() <= p.bin_bpm(30.0));
        }
        assert!((hr.times[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sub_band_fundamental_with_harmonic_reports_harmonic() {
        // 0.5 Hz pulse shape with its first harmonic at 1 Hz (60 BPM).
        let fps = 30.0;
        let samples = (0..900)
            .map(|i| {
                let ph = 2.0 * std::f64::consts::PI * 0.5 * i as f64 / fps;
                ph.sin() + 0.5 * (2.0 * ph).sin()
            })
            .collect();
        let p = StftParams::default();
        let hr = stft_hr(&BvpSeries::new("s", fps, samples), p).unwrap();
        for &b in &hr.bpm {
            assert!((b - 60.0).abs() <= p.bin_bpm(fps), "{b}");
        }
    }

    #[test]
    fn pure_sub_band_sinusoid_leaks_to_band_floor() {
        let p = StftParams::default();
        let hr = stft_hr(&sine(0.5, 30.0, 30.0, 1.0), p).unwrap();
        for &b in &hr.bpm {
            assert!((b - HR_MIN_BPM).abs() <= p.bin_bpm(30.0), "{b}");
        }
    }

    #[test]
    fn dc_input_is_low_confidence() {
        let hr = stft_hr(&BvpSeries::new("s", 30.0, vec![2.5; 600]), StftParams::default()).unwrap();
        assert!(hr.low_confidence.iter().all(|&c| c));
        assert!(hr.bpm.iter().all(|b| (HR_MIN_BPM..=HR_MAX_BPM).contains(b)));
    }

    #[test]
    fn too_short() {
        match stft_hr(&sine(1.0, 30.0, 5.0, 1.0), StftParams::default()) {
            Err(Error::Length { len, required }) => {
                assert_eq!(len, 150);
                assert_eq!(required, 300);
            }
            other => panic!("{other:?}"),
        }
    }

    fn series(bpm: &[f64]) -> HrSeries {
        HrSeries {
            times: (0..bpm.len()).map(|i| i as f64).collect(),
            bpm: bpm.to_vec(),
            low_confidence: vec![false; bpm.len()],
        }
    }

    #[test]
    fn mae_cases() {
        let t = series(&[70.0, 80.0, 90.0]);
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        let shifted = series(&[73.0, 83.0, 93.0]);
        assert!((mae(&shifted, &t).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(mae(&series(&[80.0, 90.0]), &series(&[90.0, 80.0])).unwrap(), 10.0);
        let mut off = series(&[1.0, 2.0, 3.0]);
        off.times[1] = 1.5;
        assert!(matches!(mae(&off, &t), Err(Error::Alignment(_))));
        assert!(matches!(mae(&series(&[1.0]), &t), Err(Error::Alignment(_))));
    }

    #[test]
    fn summary_of_constant_domain() {
        let clip = ClipStats::from_series(&[60.0; 900], 30.0);
        let s = summary_stats(&[clip; 4]).unwrap();
        assert_eq!((s.time.mean, s.time.halfwidth), (30.0, 0.0));
        assert_eq!((s.avg_hr.mean, s.avg_hr.halfwidth), (60.0, 0.0));
        assert_eq!((s.hr_stddev.mean, s.hr_stddev.halfwidth), (0.0, 0.0));
    }

    #[test]
    fn summary_single_clip_keeps_means() {
        let clip = ClipStats::from_series(&[60.0, 62.0], 1.0);
        match summary_stats(&[clip]) {
            Err(Error::CiUndefined { means }) => {
                assert_eq!(means[0], 2.0);
                assert_eq!(means[1], 61.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_row_format() {
        let m = MeanCi {
            mean: 69.2,
            halfwidth: 6.026,
        };
        assert_eq!(m.to_string(), "69.200 ± 6.026");
    }
}
