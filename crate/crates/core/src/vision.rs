//! Camera-frame preprocessing and augmentation: crop away sky and hood,
//! bilinear resize to the network input size, BT.601 YUV conversion,
//! horizontal flipping with steering negation, darkening, and the steering
//! based dataset balancing rule.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sample;

/// Network input width in pixels.
pub const MODEL_WIDTH: usize = 200;
/// Network input height in pixels.
pub const MODEL_HEIGHT: usize = 66;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("pixel buffer holds {found} bytes, {width}x{height} RGB needs {expected}")]
    BufferLength {
        width: usize,
        height: usize,
        expected: usize,
        found: usize,
    },
    #[error("crop rows {top}..{bottom}, cols {left}..{right} is empty or outside a {width}x{height} frame")]
    CropOutOfBounds {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
        width: usize,
        height: usize,
    },
    #[error("resize target {width}x{height} is degenerate")]
    DegenerateTarget { width: usize, height: usize },
    #[error("resize source {width}x{height} is smaller than 2x2")]
    SourceTooSmall { width: usize, height: usize },
    #[error("brightness factor {0} outside [0.4, 1.0]")]
    BrightnessOutOfRange(f32),
}

pub type Result<T, E = VisionError> = std::result::Result<T, E>;

/// Interleaved 8-bit three-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RawFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        let expected = width * height * 3;
        if pixels.len() != expected || width == 0 || height == 0 {
            return Err(VisionError::BufferLength {
                width,
                height,
                expected,
                found: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Rows `top..bottom` and columns `left..right` of a source frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropRegion {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl CropRegion {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            top: 0,
            bottom: height,
            left: 0,
            right: width,
        }
    }

    /// Default sky/hood crop: drops the top 40% (sky, distant scenery) and
    /// the bottom 7.5% (hood), keeps the full width.
    pub fn default_for(width: usize, height: usize) -> Self {
        Self {
            top: height * 2 / 5,
            bottom: height - height * 3 / 40,
            left: 0,
            right: width,
        }
    }

    pub fn width(&self) -> usize {
        self.right.saturating_sub(self.left)
    }

    pub fn height(&self) -> usize {
        self.bottom.saturating_sub(self.top)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.top >= self.bottom || self.left >= self.right || self.bottom > height || self.right > width {
            return Err(VisionError::CropOutOfBounds {
                top: self.top,
                bottom: self.bottom,
                left: self.left,
                right: self.right,
                width,
                height,
            });
        }
        Ok(())
    }

    /// True when the crop is mirror-symmetric about the frame's vertical midline.
    pub fn is_horizontally_centered(&self, width: usize) -> bool {
        self.left == width - self.right
    }
}

/// Channels-first 8-bit image (`C×H×W`), the layout the network consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanarImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl PlanarImage {
    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

pub fn crop(frame: &RawFrame, region: &CropRegion) -> Result<RawFrame> {
    region.validate(frame.width, frame.height)?;
    let (w, h) = (region.width(), region.height());
    let mut pixels = Vec::with_capacity(w * h * 3);
    for y in region.top..region.bottom {
        let row = (y * frame.width + region.left) * 3;
        pixels.extend_from_slice(&frame.pixels[row..row + w * 3]);
    }
    Ok(RawFrame {
        width: w,
        height: h,
        pixels,
    })
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Source coordinate and blend weights for one output coordinate; pixel
/// centers of source and target are aligned.
fn sample_axis(dst: usize, src_len: usize, scale: f32) -> (usize, usize, f32) {
    let s = ((dst as f32 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f32);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f32)
}

pub fn resize_bilinear(frame: &RawFrame, width: usize, height: usize) -> Result<RawFrame> {
    if width == 0 || height == 0 {
        return Err(VisionError::DegenerateTarget { width, height });
    }
    if frame.width < 2 || frame.height < 2 {
        return Err(VisionError::SourceTooSmall {
            width: frame.width,
            height: frame.height,
        });
    }
    let sx = frame.width as f32 / width as f32;
    let sy = frame.height as f32 / height as f32;
    let cols: Vec<_> = (0..width).map(|x| sample_axis(x, frame.width, sx)).collect();
    let src = &frame.pixels;
    let stride = frame.width * 3;
    let mut pixels = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let (y0, y1, fy) = sample_axis(y, frame.height, sy);
        let (r0, r1) = (&src[y0 * stride..], &src[y1 * stride..]);
        for &(x0, x1, fx) in &cols {
            for c in 0..3 {
                let a = r0[x0 * 3 + c] as f32;
                let b = r0[x1 * 3 + c] as f32;
                let top = a + (b - a) * fx;
                let a = r1[x0 * 3 + c] as f32;
                let b = r1[x1 * 3 + c] as f32;
                let bottom = a + (b - a) * fx;
                pixels.push(quantize(top + (bottom - top) * fy));
            }
        }
    }
    Ok(RawFrame {
        width,
        height,
        pixels,
    })
}

/// BT.601 full-range RGB → YUV, rounded to nearest, chroma offset 128.
pub fn rgb_to_yuv_pixel([r, g, b]: [u8; 3]) -> [u8; 3] {
    let (r, g, b) = (r as f32, g as f32, b as f32);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let u = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let v = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    [quantize(y), quantize(u), quantize(v)]
}

/// Inverse of [`rgb_to_yuv_pixel`] up to quantization.
pub fn yuv_to_rgb_pixel([y, u, v]: [u8; 3]) -> [u8; 3] {
    let (y, u, v) = (y as f32, u as f32 - 128.0, v as f32 - 128.0);
    [
        quantize(y + 1.402 * v),
        quantize(y - 0.344136 * u - 0.714136 * v),
        quantize(y + 1.772 * u),
    ]
}

pub fn rgb_to_yuv(frame: &RawFrame) -> RawFrame {
    let mut pixels = Vec::with_capacity(frame.pixels.len());
    for px in frame.pixels.chunks_exact(3) {
        pixels.extend_from_slice(&rgb_to_yuv_pixel([px[0], px[1], px[2]]));
    }
    RawFrame {
        width: frame.width,
        height: frame.height,
        pixels,
    }
}

pub fn yuv_to_rgb(frame: &RawFrame) -> RawFrame {
    let mut pixels = Vec::with_capacity(frame.pixels.len());
    for px in frame.pixels.chunks_exact(3) {
        pixels.extend_from_slice(&yuv_to_rgb_pixel([px[0], px[1], px[2]]));
    }
    RawFrame {
        width: frame.width,
        height: frame.height,
        pixels,
    }
}

/// Mirrors the image about its vertical axis.
pub fn flip_frame(frame: &RawFrame) -> RawFrame {
    let mut pixels = Vec::with_capacity(frame.pixels.len());
    for row in frame.pixels.chunks_exact(frame.width * 3) {
        for px in row.chunks_exact(3).rev() {
            pixels.extend_from_slice(px);
        }
    }
    RawFrame {
        width: frame.width,
        height: frame.height,
        pixels,
    }
}

/// Mirrored image with negated steering; throttle and provenance unchanged.
pub fn flip_horizontal(sample: &Sample) -> Sample {
    Sample {
        frame: flip_frame(&sample.frame),
        steering: -sample.steering,
        ..sample.clone()
    }
}

pub const BRIGHTNESS_MIN: f32 = 0.4;
pub const BRIGHTNESS_MAX: f32 = 1.0;

/// Darkens every channel by `factor` in `[0.4, 1.0]`.
pub fn adjust_brightness(frame: &RawFrame, factor: f32) -> Result<RawFrame> {
    if !(BRIGHTNESS_MIN..=BRIGHTNESS_MAX).contains(&factor) {
        return Err(VisionError::BrightnessOutOfRange(factor));
    }
    let pixels = frame.pixels.iter().map(|&p| quantize(p as f32 * factor)).collect();
    Ok(RawFrame {
        width: frame.width,
        height: frame.height,
        pixels,
    })
}

/// Crop and resize to the network input size, still RGB and interleaved.
pub fn crop_and_resize(frame: &RawFrame, region: &CropRegion) -> Result<RawFrame> {
    resize_bilinear(&crop(frame, region)?, MODEL_WIDTH, MODEL_HEIGHT)
}

/// YUV conversion and channels-first repacking of an already resized frame.
pub fn to_yuv_planar(small: &RawFrame) -> PlanarImage {
    let n = small.width * small.height;
    let mut data = vec![0u8; n * 3];
    for (i, px) in small.pixels.chunks_exact(3).enumerate() {
        let yuv = rgb_to_yuv_pixel([px[0], px[1], px[2]]);
        data[i] = yuv[0];
        data[n + i] = yuv[1];
        data[2 * n + i] = yuv[2];
    }
    PlanarImage {
        channels: 3,
        height: small.height,
        width: small.width,
        data,
    }
}

/// Crop → resize → YUV, channels first (`3×66×200`).
pub fn preprocess(frame: &RawFrame, region: &CropRegion) -> Result<PlanarImage> {
    Ok(to_yuv_planar(&crop_and_resize(frame, region)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceConfig {
    /// Samples with |steering| above this appear twice.
    pub steer_threshold: f32,
    /// Keep probability for forward-throttle, small-steering samples.
    pub p_keep: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            steer_threshold: 0.3,
            p_keep: 0.5,
        }
    }
}

/// Balanced, shuffled list of indices into `labels` (`(steering, throttle)`).
pub fn balance_indices(labels: &[(f32, f32)], config: &BalanceConfig, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(labels.len());
    for (i, &(steer, throttle)) in labels.iter().enumerate() {
        if steer.abs() > config.steer_threshold {
            out.push(i);
            out.push(i);
        } else if throttle > 0.0 {
            if rng.gen::<f64>() < config.p_keep {
                out.push(i);
            }
        } else {
            out.push(i);
        }
    }
    out.shuffle(&mut rng);
    out
}

pub fn balance(samples: &[Sample], config: &BalanceConfig, seed: u64) -> Vec<Sample> {
    let labels: Vec<_> = samples.iter().map(|s| (s.steering, s.throttle)).collect();
    balance_indices(&labels, config, seed)
        .into_iter()
        .map(|i| samples[i].clone())
        .collect()
}
