//! Depth and color frames and the synchronized pair that carries them.

use thiserror::Error;

/// Default depth resolution (NFOV 2x2 binned).
pub const DEPTH_WIDTH: usize = 320;
pub const DEPTH_HEIGHT: usize = 288;
/// Default color resolution.
pub const COLOR_WIDTH: usize = 1920;
pub const COLOR_HEIGHT: usize = 1080;

/// Depth value reserved for an invalid sensor reading.
pub const INVALID_DEPTH: u16 = 0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame data has {actual} elements, expected {expected} for {width}x{height}")]
    DataLength {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("frame dimensions {width}x{height} are out of range")]
    Dimensions { width: usize, height: usize },
    #[error("depth frame {depth} paired with color frame {color}")]
    Unpaired { depth: u32, color: u32 },
}

fn check_dims(width: usize, height: usize) -> Result<(), FrameError> {
    if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(FrameError::Dimensions { width, height });
    }
    Ok(())
}

/// Row-major 16-bit depth map in millimeters. Zero marks an invalid reading.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DepthFrame {
    frame_number: u32,
    timestamp_us: u64,
    width: usize,
    height: usize,
    data: Vec<u16>,
}

impl DepthFrame {
    pub fn new(
        frame_number: u32,
        timestamp_us: u64,
        width: usize,
        height: usize,
        data: Vec<u16>,
    ) -> Result<Self, FrameError> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(FrameError::DataLength {
                width,
                height,
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            frame_number,
            timestamp_us,
            width,
            height,
            data,
        })
    }

    /// A frame with every pixel set to `value`.
    pub fn filled(
        frame_number: u32,
        timestamp_us: u64,
        width: usize,
        height: usize,
        value: u16,
    ) -> Result<Self, FrameError> {
        Self::new(frame_number, timestamp_us, width, height, vec![value; width * height])
    }

    pub fn frame_number(&self) -> u32 {
        self.frame_number
    }

    pub fn timestamp_us(&self) -> u64 {
        self.timestamp_us
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u16> {
        self.data
    }

    /// Depth at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    /// Same metadata and dimensions with new pixel values.
    pub fn with_data(&self, data: Vec<u16>) -> Result<Self, FrameError> {
        Self::new(self.frame_number, self.timestamp_us, self.width, self.height, data)
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d != INVALID_DEPTH).count()
    }
}

/// Row-major RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColorFrame {
    frame_number: u32,
    timestamp_us: u64,
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ColorFrame {
    pub fn new(
        frame_number: u32,
        timestamp_us: u64,
        width: usize,
        height: usize,
        data: Vec<u8>,
    ) -> Result<Self, FrameError> {
        check_dims(width, height)?;
        if data.len() != 3 * width * height {
            return Err(FrameError::DataLength {
                width,
                height,
                expected: 3 * width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            frame_number,
            timestamp_us,
            width,
            height,
            data,
        })
    }

    pub fn filled(
        frame_number: u32,
        timestamp_us: u64,
        width: usize,
        height: usize,
        rgb: [u8; 3],
    ) -> Result<Self, FrameError> {
        let data = rgb.iter().copied().cycle().take(3 * width * height).collect();
        Self::new(frame_number, timestamp_us, width, height, data)
    }

    pub fn frame_number(&self) -> u32 {
        self.frame_number
    }

    pub fn timestamp_us(&self) -> u64 {
        self.timestamp_us
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// A depth frame and the color frame captured at the same instant.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FramePair {
    depth: DepthFrame,
    color: ColorFrame,
}

impl FramePair {
    pub fn new(depth: DepthFrame, color: ColorFrame) -> Result<Self, FrameError> {
        if depth.frame_number != color.frame_number {
            return Err(FrameError::Unpaired {
                depth: depth.frame_number,
                color: color.frame_number,
            });
        }
        Ok(Self { depth, color })
    }

    pub fn frame_number(&self) -> u32 {
        self.depth.frame_number
    }

    pub fn timestamp_us(&self) -> u64 {
        self.depth.timestamp_us
    }

    pub fn depth(&self) -> &DepthFrame {
        &self.depth
    }

    pub fn color(&self) -> &ColorFrame {
        &self.color
    }

    pub fn into_parts(self) -> (DepthFrame, ColorFrame) {
        (self.depth, self.color)
    }

    /// Replace the depth half, keeping the pairing invariant.
    pub fn with_depth(self, depth: DepthFrame) -> Result<Self, FrameError> {
        Self::new(depth, self.color)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_data_length() {
        let err = DepthFrame::new(0, 0, 4, 4, vec![0; 15]).unwrap_err();
        assert!(matches!(err, FrameError::DataLength { expected: 16, actual: 15, .. }));
        assert!(ColorFrame::new(0, 0, 2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn rejects_zero_or_oversized_dims() {
        assert!(DepthFrame::new(0, 0, 0, 4, vec![]).is_err());
        assert!(DepthFrame::filled(0, 0, 70_000, 1, 0).is_err());
    }

    #[test]
    fn pair_requires_equal_frame_numbers() {
        let d = DepthFrame::filled(3, 0, 2, 2, 1000).unwrap();
        let c = ColorFrame::filled(4, 0, 2, 2, [0, 255, 0]).unwrap();
        assert_eq!(
            FramePair::new(d.clone(), c).unwrap_err(),
            FrameError::Unpaired { depth: 3, color: 4 }
        );
        let c = ColorFrame::filled(3, 0, 2, 2, [0, 255, 0]).unwrap();
        let pair = FramePair::new(d, c).unwrap();
        assert_eq!(pair.frame_number(), 3);
        assert_eq!(pair.color().pixel(1, 1), [0, 255, 0]);
    }
}
