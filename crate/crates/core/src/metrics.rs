//! Stream quality metrics: per-frame jitter, validity flicker and the share
//! of dropped readings a filter recovers.
//!
//! Each metric has a streaming accumulator, so the pipeline can measure
//! frames as they pass and the slice functions reuse the same code.

use serde::Serialize;
use thiserror::Error;

use crate::frame::{DepthFrame, INVALID_DEPTH};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {frame_number} is {got:?}, expected {expected:?}")]
    Shape {
        frame_number: u32,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("raw and filtered streams differ in length: {raw} vs {filtered}")]
    Length { raw: usize, filtered: usize },
}

fn check_shape(expected: (usize, usize), f: &DepthFrame) -> Result<(), MetricsError> {
    let got = (f.width(), f.height());
    if got != expected {
        return Err(MetricsError::Shape {
            frame_number: f.frame_number(),
            expected,
            got,
        });
    }
    Ok(())
}

/// Sum of `|Δdepth|` in meters over pixels valid in consecutive frames,
/// averaged over frame pairs.
#[derive(Debug, Clone, Default)]
pub struct JitterAccumulator {
    previous: Option<DepthFrame>,
    total_mm: u64,
    pairs: usize,
}

impl JitterAccumulator {
    pub fn push(&mut self, frame: &DepthFrame) -> Result<(), MetricsError> {
        if let Some(prev) = &self.previous {
            check_shape((prev.width(), prev.height()), frame)?;
            self.total_mm += prev
                .data()
                .iter()
                .zip(frame.data())
                .filter(|(&a, &b)| a != INVALID_DEPTH && b != INVALID_DEPTH)
                .map(|(&a, &b)| u64::from(a.abs_diff(b)))
                .sum::<u64>();
            self.pairs += 1;
        }
        self.previous = Some(frame.clone());
        Ok(())
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn value(&self) -> Result<f64, MetricsError> {
        if self.pairs == 0 {
            return Err(MetricsError::TooFewFrames(self.previous.is_some() as usize));
        }
        Ok(self.total_mm as f64 * 1e-3 / self.pairs as f64)
    }
}

/// Valid↔invalid transitions per consecutive frame pair.
#[derive(Debug, Clone, Default)]
pub struct FlickerAccumulator {
    previous: Option<Vec<bool>>,
    shape: (usize, usize),
    toggles: u64,
    pairs: usize,
}

impl FlickerAccumulator {
    pub fn push(&mut self, frame: &DepthFrame) -> Result<(), MetricsError> {
        let valid: Vec<bool> = frame.data().iter().map(|&d| d != INVALID_DEPTH).collect();
        if let Some(prev) = &self.previous {
            check_shape(self.shape, frame)?;
            self.toggles += prev.iter().zip(&valid).filter(|(a, b)| a != b).count() as u64;
            self.pairs += 1;
        }
        self.shape = (frame.width(), frame.height());
        self.previous = Some(valid);
        Ok(())
    }

    pub fn value(&self) -> Result<f64, MetricsError> {
        if self.pairs == 0 {
            return Err(MetricsError::TooFewFrames(self.previous.is_some() as usize));
        }
        Ok(self.toggles as f64 / self.pairs as f64)
    }
}

/// Pixel-frames invalid in the raw stream that the filtered stream fills.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecoveryAccumulator {
    invalid_raw: u64,
    recovered: u64,
}

impl RecoveryAccumulator {
    pub fn push(&mut self, raw: &DepthFrame, filtered: &DepthFrame) -> Result<(), MetricsError> {
        check_shape((raw.width(), raw.height()), filtered)?;
        for (&r, &f) in raw.data().iter().zip(filtered.data()) {
            if r == INVALID_DEPTH {
                self.invalid_raw += 1;
                if f != INVALID_DEPTH {
                    self.recovered += 1;
                }
            }
        }
        Ok(())
    }

    pub fn invalid_raw(&self) -> u64 {
        self.invalid_raw
    }

    /// Zero when the raw stream had no invalid readings.
    pub fn value(&self) -> f64 {
        if self.invalid_raw == 0 {
            0.0
        } else {
            self.recovered as f64 / self.invalid_raw as f64
        }
    }
}

pub fn jitter_metric(frames: &[DepthFrame]) -> Result<f64, MetricsError> {
    if frames.len() < 2 {
        return Err(MetricsError::TooFewFrames(frames.len()));
    }
    let mut acc = JitterAccumulator::default();
    frames.iter().try_for_each(|f| acc.push(f))?;
    acc.value()
}

pub fn flicker_metric(frames: &[DepthFrame]) -> Result<f64, MetricsError> {
    if frames.len() < 2 {
        return Err(MetricsError::TooFewFrames(frames.len()));
    }
    let mut acc = FlickerAccumulator::default();
    frames.iter().try_for_each(|f| acc.push(f))?;
    acc.value()
}

pub fn recovered_vertex_ratio(raw: &[DepthFrame], filtered: &[DepthFrame]) -> Result<f64, MetricsError> {
    if raw.len() != filtered.len() {
        return Err(MetricsError::Length {
            raw: raw.len(),
            filtered: filtered.len(),
        });
    }
    let mut acc = RecoveryAccumulator::default();
    raw.iter().zip(filtered).try_for_each(|(r, f)| acc.push(r, f))?;
    Ok(acc.value())
}

/// Raw versus filtered quality of one stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QualityReport {
    pub jitter_raw_m: f64,
    pub jitter_filtered_m: f64,
    pub flicker_raw: f64,
    pub flicker_filtered: f64,
    pub recovered_ratio: f64,
}

impl QualityReport {
    pub fn jitter_reduction(&self) -> f64 {
        reduction(self.jitter_raw_m, self.jitter_filtered_m)
    }

    pub fn flicker_reduction(&self) -> f64 {
        reduction(self.flicker_raw, self.flicker_filtered)
    }

    pub const CSV_HEADER: &'static str = "jitter_raw_m,jitter_filtered_m,flicker_raw,flicker_filtered,recovered_ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.jitter_raw_m, self.jitter_filtered_m, self.flicker_raw, self.flicker_filtered, self.recovered_ratio
        )
    }
}

fn reduction(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        0.0
    } else {
        1.0 - after / before
    }
}

/// Accumulates a [`QualityReport`] frame by frame.
#[derive(Debug, Clone, Default)]
pub struct QualityAccumulator {
    jitter_raw: JitterAccumulator,
    jitter_filtered: JitterAccumulator,
    flicker_raw: FlickerAccumulator,
    flicker_filtered: FlickerAccumulator,
    recovery: RecoveryAccumulator,
}

impl QualityAccumulator {
    pub fn push(&mut self, raw: &DepthFrame, filtered: &DepthFrame) -> Result<(), MetricsError> {
        self.jitter_raw.push(raw)?;
        self.jitter_filtered.push(filtered)?;
        self.flicker_raw.push(raw)?;
        self.flicker_filtered.push(filtered)?;
        self.recovery.push(raw, filtered)
    }

    pub fn report(&self) -> Result<QualityReport, MetricsError> {
        Ok(QualityReport {
            jitter_raw_m: self.jitter_raw.value()?,
            jitter_filtered_m: self.jitter_filtered.value()?,
            flicker_raw: self.flicker_raw.value()?,
            flicker_filtered: self.flicker_filtered.value()?,
            recovered_ratio: self.recovery.value(),
        })
    }
}

pub fn quality_report(raw: &[DepthFrame], filtered: &[DepthFrame]) -> Result<QualityReport, MetricsError> {
    Ok(QualityReport {
        jitter_raw_m: jitter_metric(raw)?,
        jitter_filtered_m: jitter_metric(filtered)?,
        flicker_raw: flicker_metric(raw)?,
        flicker_filtered: flicker_metric(filtered)?,
        recovered_ratio: recovered_vertex_ratio(raw, filtered)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(n: u32, data: Vec<u16>) -> DepthFrame {
        let w = data.len();
        DepthFrame::new(n, 0, w, 1, data).unwrap()
    }

    #[test]
    fn static_stream_has_no_jitter_or_flicker() {
        let f: Vec<_> = (0..5).map(|n| frame(n, vec![1000; 10])).collect();
        assert_eq!(jitter_metric(&f).unwrap(), 0.0);
        assert_eq!(flicker_metric(&f).unwrap(), 0.0);
    }

    #[test]
    fn millimeter_at_thousand_pixels_is_one_meter() {
        let a = frame(0, vec![1000; 2000]);
        let mut d = vec![1000; 2000];
        d[..1000].fill(1001);
        let b = frame(1, d);
        assert_eq!(jitter_metric(&[a, b]).unwrap(), 1.0);
    }

    #[test]
    fn jitter_ignores_pixels_invalid_in_either_frame() {
        let a = frame(0, vec![0, 1000, 1000]);
        let b = frame(1, vec![1500, 0, 1002]);
        assert!((jitter_metric(&[a, b]).unwrap() - 0.002).abs() < 1e-15);
    }

    #[test]
    fn alternating_pixel_flickers_once_per_frame() {
        let f: Vec<_> = (0..11).map(|n| frame(n, vec![if n % 2 == 0 { 1000 } else { 0 }])).collect();
        assert_eq!(flicker_metric(&f).unwrap(), 1.0);
    }

    #[test]
    fn recovery_trivial_cases() {
        let raw = vec![frame(0, vec![0, 1000]), frame(1, vec![1000, 0])];
        assert_eq!(recovered_vertex_ratio(&raw, &raw).unwrap(), 0.0);
        let full = vec![frame(0, vec![900, 1000]), frame(1, vec![1000, 900])];
        assert_eq!(recovered_vertex_ratio(&raw, &full).unwrap(), 1.0);
        assert_eq!(recovered_vertex_ratio(&full, &full).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert_eq!(jitter_metric(&[frame(0, vec![1])]), Err(MetricsError::TooFewFrames(1)));
        assert!(matches!(
            flicker_metric(&[frame(0, vec![1]), frame(1, vec![1, 2])]),
            Err(MetricsError::Shape { .. })
        ));
        assert!(matches!(
            recovered_vertex_ratio(&[frame(0, vec![1])], &[]),
            Err(MetricsError::Length { .. })
        ));
    }

    #[test]
    fn accumulator_matches_slices() {
        let raw: Vec<_> = (0..6).map(|n| frame(n, vec![1000 + n as u16 % 3, (n % 2) as u16 * 800, 0])).collect();
        let filtered: Vec<_> = raw.iter().map(|f| frame(f.frame_number(), vec![1000, 800, 0])).collect();
        let mut acc = QualityAccumulator::default();
        for (r, f) in raw.iter().zip(&filtered) {
            acc.push(r, f).unwrap();
        }
        assert_eq!(acc.report().unwrap(), quality_report(&raw, &filtered).unwrap());
    }
}
