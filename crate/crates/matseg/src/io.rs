//! Raster and mask file formats.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, ImageFormat, Luma, RgbImage};
use matseg_core::{BinaryMask, LabelMap, Micrograph, RasterError, ScoredMask};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: file not found", .0.display())]
    Missing(PathBuf),
    #[error("{}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{}: cannot decode image: {source}", path.display())]
    Decode { path: PathBuf, source: image::ImageError },
    #[error("cannot encode image: {0}")]
    Encode(#[from] image::ImageError),
    #[error("{}: {source}", path.display())]
    Raster { path: PathBuf, source: RasterError },
    #[error("label {0} does not fit a 16-bit label raster")]
    LabelOverflow(u32),
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
}

fn decode(path: &Path) -> Result<DynamicImage, IoError> {
    if !path.exists() {
        return Err(IoError::Missing(path.to_path_buf()));
    }
    let reader = image::ImageReader::open(path)
        .map_err(|source| IoError::Read { path: path.to_path_buf(), source })?
        .with_guessed_format()
        .map_err(|source| IoError::Read { path: path.to_path_buf(), source })?;
    reader.decode().map_err(|source| IoError::Decode { path: path.to_path_buf(), source })
}

/// Loads PNG or TIFF. Gray stays one channel, colour becomes RGB; alpha is
/// dropped and 16-bit samples are reduced to 8 bits.
pub fn load_micrograph(path: &Path) -> Result<Micrograph, IoError> {
    let img = decode(path)?;
    let (w, h) = (img.width(), img.height());
    let raster = |source| IoError::Raster { path: path.to_path_buf(), source };
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        Micrograph::new(w, h, 1, img.into_luma8().into_raw()).map_err(raster)
    } else {
        Micrograph::new(w, h, 3, img.into_rgb8().into_raw()).map_err(raster)
    }
}

fn png_bytes(img: DynamicImage) -> Result<Vec<u8>, IoError> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::Read { path: path.to_path_buf(), source })
}

/// 16-bit grayscale PNG holding the labels verbatim.
pub fn encode_labels(lm: &LabelMap) -> Result<Vec<u8>, IoError> {
    let max = lm.max_label();
    if max > u16::MAX as u32 {
        return Err(IoError::LabelOverflow(max));
    }
    let data: Vec<u16> = lm.labels().iter().map(|&l| l as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(lm.width(), lm.height(), data).expect("buffer matches frame");
    png_bytes(DynamicImage::ImageLuma16(buf))
}

pub fn save_labels(lm: &LabelMap, path: &Path) -> Result<(), IoError> {
    write_file(path, &encode_labels(lm)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// A single-channel raster read as integer labels, with its sample depth.
pub fn load_label_raster(path: &Path) -> Result<(LabelMap, BitDepth), IoError> {
    let img = decode(path)?;
    let (w, h) = (img.width(), img.height());
    let (labels, depth): (Vec<u32>, _) = match img {
        DynamicImage::ImageLuma16(b) => (b.into_raw().into_iter().map(u32::from).collect(), BitDepth::Sixteen),
        DynamicImage::ImageLuma8(b) => (b.into_raw().into_iter().map(u32::from).collect(), BitDepth::Eight),
        _ => {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                reason: "expected a single-channel 8- or 16-bit raster".into(),
            })
        }
    };
    let lm = LabelMap::from_vec(w, h, labels).map_err(|source| IoError::Raster { path: path.to_path_buf(), source })?;
    Ok((lm, depth))
}

pub fn load_labels(path: &Path) -> Result<LabelMap, IoError> {
    load_label_raster(path).map(|(lm, _)| lm)
}

/// 8-bit PNG, 255 where set.
pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>, IoError> {
    let data: Vec<u8> = (0..mask.len()).map(|i| if mask.contains_index(i) { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(mask.width(), mask.height(), data).expect("buffer matches frame");
    png_bytes(DynamicImage::ImageLuma8(buf))
}

pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<(), IoError> {
    write_file(path, &encode_mask(mask)?)
}

/// Any nonzero sample is set.
pub fn load_mask(path: &Path) -> Result<BinaryMask, IoError> {
    let (lm, _) = load_label_raster(path)?;
    Ok(lm.foreground())
}

pub fn encode_rgb_png(width: u32, height: u32, rgb: Vec<u8>) -> Result<Vec<u8>, IoError> {
    let buf = RgbImage::from_raw(width, height, rgb).expect("buffer matches frame");
    png_bytes(DynamicImage::ImageRgb8(buf))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    /// Label this mask carries in the label map.
    pub label: u32,
    pub score: f32,
    pub area: usize,
    pub crop: usize,
    pub prompt: Option<[u32; 2]>,
    /// Row-major run lengths, alternating off and on, starting with off.
    pub rle: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskDocument {
    pub width: u32,
    pub height: u32,
    pub masks: Vec<MaskRecord>,
}

impl MaskDocument {
    pub fn from_masks(width: u32, height: u32, masks: &[ScoredMask]) -> Self {
        let masks = masks
            .iter()
            .enumerate()
            .map(|(i, m)| MaskRecord {
                label: i as u32 + 1,
                score: m.score(),
                area: m.area(),
                crop: m.origin.crop,
                prompt: m.origin.prompt.map(|(x, y)| [x, y]),
                rle: m.mask.to_rle(),
            })
            .collect();
        Self { width, height, masks }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("plain data serializes");
        out.push(b'\n');
        out
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let bytes = std::fs::read(path).map_err(|source| IoError::Read { path: path.to_path_buf(), source })?;
        serde_json::from_slice(&bytes).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
    }

    pub fn decode_masks(&self) -> Result<Vec<BinaryMask>, RasterError> {
        self.masks.iter().map(|m| BinaryMask::from_rle(self.width, self.height, &m.rle)).collect()
    }
}

/// File stem with the output-kind suffixes (`.labels`, `.phase`,
/// `.boundary`, ...) removed, so predictions and ground truth line up.
pub fn image_stem(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    for suffix in [".labels", ".phase", ".boundary", ".overlay", ".masks", ".stats", ".prompts"] {
        if let Some(s) = stem.strip_suffix(suffix) {
            return s.to_string();
        }
    }
    stem
}

pub fn is_raster(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "tif" | "tiff"))
}

/// Raster files directly inside `dir` (or `dir` itself when it is a file),
/// sorted by path.
pub fn list_rasters(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    if dir.is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    if !dir.exists() {
        return Err(IoError::Missing(dir.to_path_buf()));
    }
    let entries = std::fs::read_dir(dir).map_err(|source| IoError::Read { path: dir.to_path_buf(), source })?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|source| IoError::Read { path: dir.to_path_buf(), source })?.path();
        if p.is_file() && is_raster(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
