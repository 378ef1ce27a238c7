//! Image, mask and label-map types.
//!
//! Every raster is row-major: pixel `(x, y)` lives at `x + y * width`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RasterError {
    #[error("image dimensions must be non-zero (got {width}x{height})")]
    ZeroDimension { width: u32, height: u32 },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(u8),
    #[error("pixel buffer has {actual} entries, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("pixel scale must be a positive finite number")]
    Scale,
    #[error("crop box [{x0},{x1})x[{y0},{y1}) does not fit a {width}x{height} frame")]
    CropBounds {
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
        width: u32,
        height: u32,
    },
    #[error("mask score {0} outside [0, 1]")]
    Score(f32),
    #[error("run lengths cover {covered} pixels, frame has {expected}")]
    RunLength { covered: u64, expected: u64 },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

fn check_dims(width: u32, height: u32) -> Result<usize, RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::ZeroDimension { width, height });
    }
    Ok(width as usize * height as usize)
}

/// An 8-bit gray or RGB micrograph with an optional physical pixel size.
#[derive(Clone, PartialEq)]
pub struct Micrograph {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
    scale: Option<f64>,
}

impl fmt::Debug for Micrograph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Micrograph")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .field("scale", &self.scale)
            .finish_non_exhaustive()
    }
}

impl Micrograph {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, RasterError> {
        let n = check_dims(width, height)?;
        if channels != 1 && channels != 3 {
            return Err(RasterError::Channels(channels));
        }
        let expected = n * channels as usize;
        if pixels.len() != expected {
            return Err(RasterError::BufferLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
            scale: None,
        })
    }

    pub fn gray(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        Self::new(width, height, 1, pixels)
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Result<Self, RasterError> {
        check_dims(width, height)?;
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::gray(width, height, pixels)
    }

    /// Attaches a physical scale in micrometres per pixel.
    pub fn with_scale(mut self, um_per_px: f64) -> Result<Self, RasterError> {
        if !(um_per_px.is_finite() && um_per_px > 0.0) {
            return Err(RasterError::Scale);
        }
        self.scale = Some(um_per_px);
        Ok(self)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn scale(&self) -> Option<f64> {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn full_frame(&self) -> CropBox {
        CropBox::full(self.width, self.height)
    }

    /// ITU-R 601 luminance, rounded to nearest. One-channel images are
    /// returned unchanged.
    pub fn to_grayscale(&self) -> Micrograph {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks_exact(3)
            .map(|rgb| {
                let weighted = 299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32;
                ((weighted + 500) / 1000) as u8
            })
            .collect();
        Micrograph {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
            scale: self.scale,
        }
    }

    /// Copies the pixels inside `crop` into a new image (scale preserved).
    pub fn crop(&self, crop: &CropBox) -> Micrograph {
        let c = self.channels as usize;
        let mut pixels = Vec::with_capacity(crop.area() * c);
        for y in crop.y0..crop.y1 {
            let row = (y as usize * self.width as usize + crop.x0 as usize) * c;
            let len = crop.width() as usize * c;
            pixels.extend_from_slice(&self.pixels[row..row + len]);
        }
        Micrograph {
            width: crop.width(),
            height: crop.height(),
            channels: self.channels,
            pixels,
            scale: self.scale,
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)` tagged with its level in
/// the crop pyramid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CropBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub layer: u32,
}

impl CropBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32, layer: u32, width: u32, height: u32) -> Result<Self, RasterError> {
        if x0 >= x1 || y0 >= y1 || x1 > width || y1 > height {
            return Err(RasterError::CropBounds {
                x0,
                y0,
                x1,
                y1,
                width,
                height,
            });
        }
        Ok(Self { x0, y0, x1, y1, layer })
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
            layer: 0,
        }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() as usize * self.height() as usize
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersect(&self, other: &CropBox) -> Option<CropBox> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        (x0 < x1 && y0 < y1).then_some(CropBox {
            x0,
            y0,
            x1,
            y1,
            layer: self.layer,
        })
    }
}

/// Bit-packed set of pixels.
///
/// Bits are packed contiguously in row-major order, 64 per word; bits past
/// `width * height` in the final word are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryMask({}x{}, area {})", self.width, self.height, self.area())
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut mask = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    mask.insert_index(x as usize + y as usize * width as usize);
                }
            }
        }
        mask
    }

    pub fn from_bools(width: u32, height: u32, bits: &[bool]) -> Result<Self, RasterError> {
        let n = width as usize * height as usize;
        if bits.len() != n {
            return Err(RasterError::BufferLength {
                expected: n,
                actual: bits.len(),
            });
        }
        let mut mask = Self::new(width, height);
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            mask.insert_index(i);
        }
        Ok(mask)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn same_frame(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn contains_index(&self, i: usize) -> bool {
        self.words[i >> 6] >> (i & 63) & 1 == 1
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.contains_index(x as usize + y as usize * self.width as usize)
    }

    #[inline]
    pub fn insert_index(&mut self, i: usize) {
        self.words[i >> 6] |= 1 << (i & 63);
    }

    #[inline]
    pub fn remove_index(&mut self, i: usize) {
        self.words[i >> 6] &= !(1 << (i & 63));
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = x as usize + y as usize * self.width as usize;
        if value {
            self.insert_index(i);
        } else {
            self.remove_index(i);
        }
    }

    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Iterates set pixel indices in raster order.
    pub fn iter_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            core::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + bit)
            })
        })
    }

    /// Iterates set pixels as `(x, y)` in raster order.
    pub fn iter_points(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.iter_indices().map(move |i| ((i % w) as u32, (i / w) as u32))
    }

    /// Tight bounding box of the set pixels, or `None` when empty.
    pub fn bounding_box(&self) -> Option<CropBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        let mut any = false;
        for (x, y) in self.iter_points() {
            any = true;
            x0 = x0.min(x);
            x1 = x1.max(x + 1);
            y0 = y0.min(y);
            y1 = y1.max(y + 1);
        }
        any.then_some(CropBox {
            x0,
            y0,
            x1,
            y1,
            layer: 0,
        })
    }

    /// Number of pixels set in both masks, scanning only the given rows.
    pub fn intersection_count_rows(&self, other: &BinaryMask, rows: core::ops::Range<u32>) -> usize {
        let w = self.width as usize;
        let start = (rows.start as usize * w) / 64;
        let end = (rows.end as usize * w).div_ceil(64).min(self.words.len());
        if start >= end {
            return 0;
        }
        self.words[start..end]
            .iter()
            .zip(&other.words[start..end])
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn intersect_with(&mut self, other: &BinaryMask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= b;
        }
    }

    /// Set complement within the frame.
    pub fn complement(&self) -> BinaryMask {
        let mut out = self.clone();
        for w in out.words.iter_mut() {
            *w = !*w;
        }
        out.clear_tail();
        out
    }

    fn clear_tail(&mut self) {
        let n = self.len();
        if n % 64 != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << (n % 64)) - 1;
            }
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Copies `self` (in the frame of `crop`) into a `width x height` frame
    /// at the crop's offset.
    pub fn place_into(&self, crop: &CropBox, width: u32, height: u32) -> BinaryMask {
        let mut out = BinaryMask::new(width, height);
        for (x, y) in self.iter_points() {
            out.set(x + crop.x0, y + crop.y0, true);
        }
        out
    }

    /// Row-major run lengths alternating off/on, starting with an off run
    /// (which may be zero).
    pub fn to_rle(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for i in 0..self.len() {
            let bit = self.contains_index(i);
            if bit != current {
                runs.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
        runs.push(run);
        runs
    }

    pub fn from_rle(width: u32, height: u32, runs: &[u32]) -> Result<Self, RasterError> {
        let n = width as u64 * height as u64;
        let covered: u64 = runs.iter().map(|&r| r as u64).sum();
        if covered != n {
            return Err(RasterError::RunLength { covered, expected: n });
        }
        let mut mask = BinaryMask::new(width, height);
        let mut pos = 0usize;
        for (k, &run) in runs.iter().enumerate() {
            if k % 2 == 1 {
                for i in pos..pos + run as usize {
                    mask.insert_index(i);
                }
            }
            pos += run as usize;
        }
        Ok(mask)
    }
}

/// Non-negative integer partition of a frame; 0 is background.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
}

impl fmt::Debug for LabelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LabelMap({}x{}, max {})", self.width, self.height, self.max_label())
    }
}

impl LabelMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, labels: Vec<u32>) -> Result<Self, RasterError> {
        let n = width as usize * height as usize;
        if labels.len() != n {
            return Err(RasterError::BufferLength {
                expected: n,
                actual: labels.len(),
            });
        }
        Ok(Self { width, height, labels })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u32) -> Self {
        let mut labels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y));
            }
        }
        Self { width, height, labels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    pub fn into_labels(self) -> Vec<u32> {
        self.labels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[x as usize + y as usize * self.width as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, label: u32) {
        self.labels[x as usize + y as usize * self.width as usize] = label;
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Distinct nonzero labels in ascending order.
    pub fn distinct_labels(&self) -> Vec<u32> {
        let mut seen: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    pub fn foreground(&self) -> BinaryMask {
        self.mask_where(|l| l != 0)
    }

    pub fn region_mask(&self, label: u32) -> BinaryMask {
        self.mask_where(|l| l == label)
    }

    pub fn mask_where(&self, mut pred: impl FnMut(u32) -> bool) -> BinaryMask {
        let mut mask = BinaryMask::new(self.width, self.height);
        for (i, &l) in self.labels.iter().enumerate() {
            if pred(l) {
                mask.insert_index(i);
            }
        }
        mask
    }

    pub fn crop(&self, crop: &CropBox) -> LabelMap {
        let mut labels = Vec::with_capacity(crop.area());
        for y in crop.y0..crop.y1 {
            let row = y as usize * self.width as usize;
            labels.extend_from_slice(&self.labels[row + crop.x0 as usize..row + crop.x1 as usize]);
        }
        LabelMap {
            width: crop.width(),
            height: crop.height(),
            labels,
        }
    }
}

/// Where a mask came from: the crop it was predicted in and the prompt (in
/// full-image coordinates) that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MaskOrigin {
    pub crop: usize,
    pub prompt: Option<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMask {
    pub mask: BinaryMask,
    score: f32,
    pub origin: MaskOrigin,
}

impl ScoredMask {
    pub fn new(mask: BinaryMask, score: f32, origin: MaskOrigin) -> Result<Self, RasterError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(RasterError::Score(score));
        }
        Ok(Self { mask, score, origin })
    }

    pub fn score(&self) -> f32 {
        self.score
    }

    pub fn area(&self) -> usize {
        self.mask.area()
    }
}
