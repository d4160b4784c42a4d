//! Temporal depth stabilization: historic fill, small-jitter hold and
//! large-jitter hold.
//!
//! The history keeps raw sensor readings. Moving averages, change counts and
//! historic fill read from it; holds reuse the previous *filtered* value so a
//! held vertex stays put from frame to frame.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{DepthFrame, INVALID_DEPTH};

/// Pixels per parallel work unit.
const BAND: usize = 4096;

/// Longest window; keeps the per-pixel running sums within `u32`.
pub const MAX_WINDOW: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid filter parameter: {0}")]
    Params(String),
    #[error("frame is {got:?} but history holds {expected:?} frames")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    pub historic_window_ms: u64,
    pub small_n: usize,
    pub small_threshold_mm: u16,
    pub large_n2: usize,
    pub large_lambda_mm: u16,
    pub large_ratio: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            historic_window_ms: 200,
            small_n: 10,
            small_threshold_mm: 3,
            large_n2: 60,
            large_lambda_mm: 3,
            large_ratio: 0.6,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.historic_window_ms == 0 {
            return Err(FilterError::Params("historic_window_ms must be positive".into()));
        }
        if self.small_n == 0 || self.large_n2 == 0 {
            return Err(FilterError::Params("window lengths must be positive".into()));
        }
        if self.small_n > MAX_WINDOW || self.large_n2 > MAX_WINDOW {
            return Err(FilterError::Params(format!("window lengths must not exceed {MAX_WINDOW}")));
        }
        if self.small_threshold_mm == 0 || self.large_lambda_mm == 0 {
            return Err(FilterError::Params("thresholds must be positive".into()));
        }
        if !(self.large_ratio > 0.0 && self.large_ratio <= 1.0) {
            return Err(FilterError::Params(format!(
                "large_ratio must be in (0, 1], got {}",
                self.large_ratio
            )));
        }
        Ok(())
    }

    /// Frames always retained, independent of the time window.
    pub fn frame_capacity(&self) -> usize {
        self.small_n.max(self.large_n2)
    }
}

#[derive(Debug, Clone)]
struct HistoryFrame {
    timestamp_us: u64,
    data: Vec<u16>,
}

/// Sliding-window sums kept up to date as raw frames arrive, for the
/// window lengths they were built with.
#[derive(Debug, Clone)]
struct WindowStats {
    small_n: usize,
    large_n2: usize,
    large_lambda_mm: u16,
    /// Sum and count of valid readings over the last `small_n` frames.
    sum: Vec<u32>,
    count: Vec<u16>,
    /// Large valid→valid changes among the last `large_n2` frames.
    changes: Vec<u16>,
}

impl WindowStats {
    fn matches(&self, p: &FilterParams) -> bool {
        (self.small_n, self.large_n2, self.large_lambda_mm) == (p.small_n, p.large_n2, p.large_lambda_mm)
    }
}

fn is_large_change(a: u16, b: u16, lambda: u16) -> bool {
    a != INVALID_DEPTH && b != INVALID_DEPTH && a.abs_diff(b) > lambda
}

/// Recent raw depth readings per pixel plus the last filtered output.
#[derive(Debug, Clone)]
pub struct PixelHistory {
    width: usize,
    height: usize,
    /// Oldest first.
    frames: VecDeque<HistoryFrame>,
    previous_output: Option<Vec<u16>>,
    stats: Option<WindowStats>,
}

impl PixelHistory {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            frames: VecDeque::new(),
            previous_output: None,
            stats: None,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Appends a raw reading and drops frames that are both beyond the frame
    /// capacity and outside the historic window.
    pub fn push_raw(&mut self, frame: &DepthFrame, params: &FilterParams) -> Result<(), FilterError> {
        self.check_shape(frame)?;
        self.frames.push_back(HistoryFrame {
            timestamp_us: frame.timestamp_us(),
            data: frame.data().to_vec(),
        });
        self.update_stats(params);
        let window_us = params.historic_window_ms * 1000;
        let newest = frame.timestamp_us();
        while self.frames.len() > params.frame_capacity() {
            let oldest = self.frames.front().unwrap().timestamp_us;
            if newest.saturating_sub(oldest) > window_us {
                self.frames.pop_front();
            } else {
                break;
            }
        }
        Ok(())
    }

    pub fn set_previous_output(&mut self, output: &DepthFrame) -> Result<(), FilterError> {
        self.check_shape(output)?;
        self.previous_output = Some(output.data().to_vec());
        Ok(())
    }

    /// Raw readings of pixel `idx`, oldest first, with their timestamps.
    pub fn pixel_series(&self, idx: usize) -> Vec<(u64, u16)> {
        self.frames.iter().map(|f| (f.timestamp_us, f.data[idx])).collect()
    }

    /// Folds the newest frame into the window sums, dropping the frame and
    /// transition that left each window. Runs before old frames are evicted.
    fn update_stats(&mut self, params: &FilterParams) {
        let len = self.frames.len();
        let stale = self.stats.as_ref().map_or(true, |s| !s.matches(params));
        if stale || len == 1 {
            self.stats = Some(self.rebuild_stats(params));
            return;
        }
        let mut stats = self.stats.take().expect("checked above");
        let frame = |k: usize| self.frames[k].data.as_slice();
        let newest = frame(len - 1);
        let lambda = params.large_lambda_mm;
        let leaving = (len > params.small_n).then(|| frame(len - 1 - params.small_n));
        let gone = (len > params.large_n2).then(|| (frame(len - 1 - params.large_n2), frame(len - params.large_n2)));
        let previous = frame(len - 2);
        stats
            .sum
            .par_chunks_mut(BAND)
            .zip(stats.count.par_chunks_mut(BAND))
            .zip(stats.changes.par_chunks_mut(BAND))
            .enumerate()
            .for_each(|(band, ((sum, count), changes))| {
                let base = band * BAND;
                for k in 0..sum.len() {
                    let idx = base + k;
                    let d = newest[idx];
                    if d != INVALID_DEPTH {
                        sum[k] += u32::from(d);
                        count[k] += 1;
                    }
                    if let Some(old) = leaving {
                        if old[idx] != INVALID_DEPTH {
                            sum[k] -= u32::from(old[idx]);
                            count[k] -= 1;
                        }
                    }
                    changes[k] += is_large_change(previous[idx], d, lambda) as u16;
                    if let Some((a, b)) = gone {
                        changes[k] -= is_large_change(a[idx], b[idx], lambda) as u16;
                    }
                }
            });
        self.stats = Some(stats);
    }

    fn rebuild_stats(&self, params: &FilterParams) -> WindowStats {
        let n = self.width * self.height;
        let mut stats = WindowStats {
            small_n: params.small_n,
            large_n2: params.large_n2,
            large_lambda_mm: params.large_lambda_mm,
            sum: vec![0; n],
            count: vec![0; n],
            changes: vec![0; n],
        };
        for f in self.last(params.small_n) {
            for (idx, &d) in f.iter().enumerate() {
                if d != INVALID_DEPTH {
                    stats.sum[idx] += u32::from(d);
                    stats.count[idx] += 1;
                }
            }
        }
        let recent: Vec<&[u16]> = self.last(params.large_n2).collect();
        for pair in recent.windows(2) {
            for ((c, &a), &b) in stats.changes.iter_mut().zip(pair[0]).zip(pair[1]) {
                *c += is_large_change(a, b, params.large_lambda_mm) as u16;
            }
        }
        stats
    }

    /// Window sums valid for `params`, if tracked.
    fn stats_for(&self, params: &FilterParams) -> Option<&WindowStats> {
        self.stats.as_ref().filter(|s| s.matches(params))
    }

    /// Value a hold reuses: the previous output, or the newest raw reading
    /// when no output has been recorded.
    fn held(&self) -> Option<&[u16]> {
        self.previous_output
            .as_deref()
            .or_else(|| self.frames.back().map(|f| f.data.as_slice()))
    }

    /// The newest `n` raw frames, oldest first.
    fn last(&self, n: usize) -> impl Iterator<Item = &[u16]> {
        let skip = self.frames.len().saturating_sub(n);
        self.frames.iter().skip(skip).map(|f| f.data.as_slice())
    }

    fn check_shape(&self, frame: &DepthFrame) -> Result<(), FilterError> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(FilterError::Shape {
                expected: (self.width, self.height),
                got: (frame.width(), frame.height()),
            });
        }
        Ok(())
    }
}

/// Replaces every invalid pixel with its most recent valid raw reading no
/// older than the historic window.
pub fn historic_fill(current: &DepthFrame, history: &PixelHistory, params: &FilterParams) -> DepthFrame {
    let window_us = params.historic_window_ms * 1000;
    let now = current.timestamp_us();
    // newest first
    let eligible: Vec<&[u16]> = history
        .frames
        .iter()
        .rev()
        .filter(|f| now.saturating_sub(f.timestamp_us) <= window_us && f.timestamp_us <= now)
        .map(|f| f.data.as_slice())
        .collect();
    let mut out = current.data().to_vec();
    if !eligible.is_empty() {
        out.par_chunks_mut(BAND).enumerate().for_each(|(band, chunk)| {
            let base = band * BAND;
            for (k, value) in chunk.iter_mut().enumerate() {
                if *value != INVALID_DEPTH {
                    continue;
                }
                let idx = base + k;
                if let Some(d) = eligible.iter().map(|f| f[idx]).find(|&d| d != INVALID_DEPTH) {
                    *value = d;
                }
            }
        });
    }
    current.with_data(out).expect("same shape")
}

/// Holds the previous value where the current reading lies within the
/// threshold of the moving average of the last `small_n` valid raw readings
/// and the previous value does too.
pub fn small_jitter_hold(current: &DepthFrame, history: &PixelHistory, params: &FilterParams) -> DepthFrame {
    let Some(held) = history.held() else {
        return current.clone();
    };
    let threshold = i64::from(params.small_threshold_mm);
    let tracked = history.stats_for(params);
    let recent: Vec<&[u16]> = if tracked.is_some() {
        Vec::new()
    } else {
        history.last(params.small_n).collect()
    };
    let mut out = current.data().to_vec();
    out.par_chunks_mut(BAND).enumerate().for_each(|(band, chunk)| {
        let base = band * BAND;
        let len = chunk.len();
        let (sum, count): (Vec<i64>, Vec<i64>) = match tracked {
            Some(st) => (
                st.sum[base..base + len].iter().map(|&v| i64::from(v)).collect(),
                st.count[base..base + len].iter().map(|&v| i64::from(v)).collect(),
            ),
            None => {
                let mut sum = vec![0i64; len];
                let mut count = vec![0i64; len];
                for frame in &recent {
                    for (k, &d) in frame[base..base + len].iter().enumerate() {
                        if d != INVALID_DEPTH {
                            sum[k] += i64::from(d);
                            count[k] += 1;
                        }
                    }
                }
                (sum, count)
            }
        };
        for (k, value) in chunk.iter_mut().enumerate() {
            let (s, c) = (sum[k], count[k]);
            let cur = i64::from(*value);
            let prev = i64::from(held[base + k]);
            // |x - s/c| <= thr  <=>  |x*c - s| <= thr*c
            if cur != 0
                && c > 0
                && prev != 0
                && (cur * c - s).abs() <= threshold * c
                && (prev * c - s).abs() <= threshold * c
            {
                *value = prev as u16;
            }
        }
    });
    current.with_data(out).expect("same shape")
}

/// Holds the previous value where the share of large valid→valid changes
/// over the last `large_n2` raw readings exceeds `large_ratio`.
pub fn large_jitter_hold(current: &DepthFrame, history: &PixelHistory, params: &FilterParams) -> DepthFrame {
    let Some(held) = history.held() else {
        return current.clone();
    };
    if history.len() < 2 {
        return current.clone();
    }
    let tracked = history.stats_for(params);
    let recent: Vec<&[u16]> = if tracked.is_some() {
        Vec::new()
    } else {
        history.last(params.large_n2).collect()
    };
    let n2 = params.large_n2 as f64;
    let mut out = current.data().to_vec();
    out.par_chunks_mut(BAND).enumerate().for_each(|(band, chunk)| {
        let base = band * BAND;
        let len = chunk.len();
        let changes: Vec<u16> = match tracked {
            Some(st) => st.changes[base..base + len].to_vec(),
            None => {
                let mut changes = vec![0u16; len];
                for pair in recent.windows(2) {
                    for (k, c) in changes.iter_mut().enumerate() {
                        *c += is_large_change(pair[0][base + k], pair[1][base + k], params.large_lambda_mm) as u16;
                    }
                }
                changes
            }
        };
        for (k, value) in chunk.iter_mut().enumerate() {
            let prev = held[base + k];
            if prev != INVALID_DEPTH && f64::from(changes[k]) / n2 > params.large_ratio {
                *value = prev;
            }
        }
    });
    current.with_data(out).expect("same shape")
}

/// Historic fill, then small-jitter hold, then large-jitter hold. Records the
/// raw frame and the output in `history` afterwards.
pub fn filter_frame(
    current: &DepthFrame,
    history: &mut PixelHistory,
    params: &FilterParams,
) -> Result<DepthFrame, FilterError> {
    history.check_shape(current)?;
    let filled = historic_fill(current, history, params);
    let small = small_jitter_hold(&filled, history, params);
    let out = large_jitter_hold(&small, history, params);
    history.push_raw(current, params)?;
    history.set_previous_output(&out)?;
    Ok(out)
}

/// Owns a history for one depth stream.
#[derive(Debug, Clone)]
pub struct TemporalFilter {
    params: FilterParams,
    history: PixelHistory,
}

impl TemporalFilter {
    pub fn new(width: usize, height: usize, params: FilterParams) -> Result<Self, FilterError> {
        params.validate()?;
        Ok(Self {
            params,
            history: PixelHistory::new(width, height),
        })
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn history(&self) -> &PixelHistory {
        &self.history
    }

    pub fn process(&mut self, frame: &DepthFrame) -> Result<DepthFrame, FilterError> {
        filter_frame(frame, &mut self.history, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FRAME_US: u64 = 33_333;

    fn px(n: u32, value: u16) -> DepthFrame {
        DepthFrame::new(n, n as u64 * FRAME_US, 1, 1, vec![value]).unwrap()
    }

    fn history_of(values: &[u16]) -> PixelHistory {
        let params = FilterParams::default();
        let mut h = PixelHistory::new(1, 1);
        for (n, &v) in values.iter().enumerate() {
            h.push_raw(&px(n as u32, v), &params).unwrap();
        }
        h
    }

    #[test]
    fn fill_from_three_frames_ago() {
        let params = FilterParams::default();
        let mut h = PixelHistory::new(1, 1);
        h.push_raw(&DepthFrame::new(0, 0, 1, 1, vec![950]).unwrap(), &params).unwrap();
        h.push_raw(&DepthFrame::new(1, 33_333, 1, 1, vec![0]).unwrap(), &params).unwrap();
        h.push_raw(&DepthFrame::new(2, 66_667, 1, 1, vec![0]).unwrap(), &params).unwrap();
        let cur = DepthFrame::new(3, 100_000, 1, 1, vec![0]).unwrap();
        assert_eq!(historic_fill(&cur, &h, &params).data(), &[950]);
    }

    #[test]
    fn fill_ignores_readings_outside_window() {
        let params = FilterParams::default();
        let mut h = PixelHistory::new(1, 1);
        h.push_raw(&DepthFrame::new(0, 0, 1, 1, vec![950]).unwrap(), &params).unwrap();
        let cur = DepthFrame::new(7, 250_000, 1, 1, vec![0]).unwrap();
        assert_eq!(historic_fill(&cur, &h, &params).data(), &[0]);
        // window edge is inclusive
        let cur = DepthFrame::new(6, 200_000, 1, 1, vec![0]).unwrap();
        assert_eq!(historic_fill(&cur, &h, &params).data(), &[950]);
    }

    #[test]
    fn fill_keeps_valid_pixels() {
        let h = history_of(&[900, 910]);
        let cur = px(2, 1000);
        assert_eq!(historic_fill(&cur, &h, &FilterParams::default()).data(), &[1000]);
    }

    #[test]
    fn small_hold_within_threshold() {
        let h = history_of(&[1000; 10]);
        let out = small_jitter_hold(&px(10, 1002), &h, &FilterParams::default());
        assert_eq!(out.data(), &[1000]);
    }

    #[test]
    fn small_hold_releases_beyond_threshold() {
        let h = history_of(&[1000; 10]);
        let out = small_jitter_hold(&px(10, 1010), &h, &FilterParams::default());
        assert_eq!(out.data(), &[1010]);
    }

    #[test]
    fn small_hold_averages_valid_entries_only() {
        // valid mean = (1000 + 1004 + 998) / 3 = 1000.67; previous raw 998
        let h = history_of(&[1000, 0, 1004, 0, 998]);
        assert_eq!(small_jitter_hold(&px(5, 1003), &h, &FilterParams::default()).data(), &[998]);
        assert_eq!(small_jitter_hold(&px(5, 1004), &h, &FilterParams::default()).data(), &[1004]);
    }

    #[test]
    fn small_hold_without_valid_history_passes() {
        let h = history_of(&[0, 0, 0]);
        assert_eq!(small_jitter_hold(&px(3, 1000), &h, &FilterParams::default()).data(), &[1000]);
    }

    #[test]
    fn large_hold_static_history_passes() {
        let h = history_of(&[1000; 60]);
        let out = large_jitter_hold(&px(60, 1200), &h, &FilterParams::default());
        assert_eq!(out.data(), &[1200]);
    }

    #[test]
    fn large_hold_alternating_history_holds() {
        let values: Vec<u16> = (0..60).map(|k| if k % 2 == 0 { 1000 } else { 1010 }).collect();
        let h = history_of(&values);
        // 59 changes / 60 > 0.6 → previous value (1010)
        let out = large_jitter_hold(&px(60, 1200), &h, &FilterParams::default());
        assert_eq!(out.data(), &[1010]);
    }

    #[test]
    fn large_hold_excludes_transitions_touching_invalid() {
        // alternating with every third reading invalid: only valid-valid pairs count
        let values: Vec<u16> = (0..60)
            .map(|k| match k % 3 {
                0 => 0,
                1 => 1000,
                _ => 1010,
            })
            .collect();
        // 20 valid-valid changes → 20/60 < 0.6
        let h = history_of(&values);
        let out = large_jitter_hold(&px(60, 1200), &h, &FilterParams::default());
        assert_eq!(out.data(), &[1200]);
    }

    #[test]
    fn first_frame_passes_through() {
        let mut f = TemporalFilter::new(4, 2, FilterParams::default()).unwrap();
        let frame = DepthFrame::new(0, 0, 4, 2, vec![0, 1000, 1001, 0, 5, 6, 7, 8]).unwrap();
        assert_eq!(f.process(&frame).unwrap(), frame);
    }

    #[test]
    fn static_stream_is_fixed_point() {
        let mut f = TemporalFilter::new(3, 3, FilterParams::default()).unwrap();
        for n in 0..80 {
            let frame = DepthFrame::filled(n, n as u64 * FRAME_US, 3, 3, 1234).unwrap();
            assert_eq!(f.process(&frame).unwrap(), frame);
        }
    }

    #[test]
    fn history_retention_covers_windows() {
        let params = FilterParams::default();
        let mut h = PixelHistory::new(1, 1);
        for n in 0..200 {
            h.push_raw(&px(n, 1000), &params).unwrap();
        }
        assert_eq!(h.len(), 60);
        // at 1000 FPS the 200 ms window dominates
        let mut h = PixelHistory::new(1, 1);
        for n in 0..500u32 {
            h.push_raw(&DepthFrame::new(n, n as u64 * 1000, 1, 1, vec![1]).unwrap(), &params).unwrap();
        }
        assert_eq!(h.len(), 201);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut f = TemporalFilter::new(2, 2, FilterParams::default()).unwrap();
        let frame = DepthFrame::filled(0, 0, 3, 2, 1).unwrap();
        assert!(matches!(f.process(&frame), Err(FilterError::Shape { .. })));
    }

    #[test]
    fn params_validation() {
        let bad = FilterParams {
            large_ratio: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(FilterParams::default().validate().is_ok());
    }
}
