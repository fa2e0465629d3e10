//! Grayscale rasters and binary masks, plus their on-disk formats.
//!
//! Both types are row-major with the origin at the top-left corner:
//! `x` is the column in `[0, width)` and `y` the row in `[0, height)`.
//! PNG and binary PGM (P5) are accepted on read; masks are written with
//! foreground = 255 and background = 0, and any nonzero value reads back as
//! foreground.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("unsupported image format: {reason}")]
    Unsupported { reason: String },
    #[error("empty raster")]
    Empty,
    #[error("buffer of length {len} does not match {width}x{height}")]
    LengthMismatch { width: u32, height: u32, len: usize },
    #[error("mask value {value} at index {index} is not 0 or 1")]
    NotBinary { index: usize, value: u8 },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {}: {reason}", path.display())]
    Write { path: PathBuf, reason: String },
}

fn check_len(width: u32, height: u32, len: usize) -> Result<(), RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::Empty);
    }
    if (width as usize) * (height as usize) != len {
        return Err(RasterError::LengthMismatch { width, height, len });
    }
    Ok(())
}

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        check_len(width, height, data.len())?;
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        assert!(width > 0 && height > 0, "empty raster");
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }
}

/// Binary raster; every element is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        check_len(width, height, data.len())?;
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(RasterError::NotBinary { index, value });
        }
        Ok(Mask {
            width,
            height,
            data,
        })
    }

    /// All-background mask.
    pub fn zeros(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "empty mask");
        Mask {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Mask::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.data[(y * width + x) as usize] = 1;
                }
            }
        }
        m
    }

    pub(crate) fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), width as usize * height as usize);
        debug_assert!(data.iter().all(|&v| v <= 1));
        Mask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize] != 0
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        self.data[(y * self.width + x) as usize] = on as u8;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn has_foreground(&self) -> bool {
        self.data.iter().any(|&v| v != 0)
    }

    pub fn same_shape(&self, other: &Mask) -> Result<(), RasterError> {
        if self.width != other.width || self.height != other.height {
            return Err(RasterError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Pixelwise OR. Panics on shape mismatch.
    pub fn union(&self, other: &Mask) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a | b)
            .collect();
        Mask::from_raw(self.width, self.height, data)
    }

    /// Mask as a 0/255 raster, the on-disk convention.
    pub fn to_raster(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v * 255).collect(),
        }
    }
}

/// Foreground iff the intensity is nonzero.
pub fn binarize(r: &Raster) -> Mask {
    let data = r.data.iter().map(|&v| (v != 0) as u8).collect();
    Mask::from_raw(r.width, r.height, data)
}

/// Decode PNG or PNM bytes into a grayscale raster, keeping channel 0 of
/// multi-channel images.
pub fn decode_grayscale(bytes: &[u8]) -> Result<Raster, RasterError> {
    let format = if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        ImageFormat::Png
    } else if bytes.len() >= 2 && bytes[0] == b'P' && (b'1'..=b'6').contains(&bytes[1]) {
        ImageFormat::Pnm
    } else {
        return Err(RasterError::Unsupported {
            reason: "expected PNG or PGM data".into(),
        });
    };
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| {
        RasterError::Unsupported {
            reason: e.to_string(),
        }
    })?;
    let (width, height) = (img.width(), img.height());
    if width == 0 || height == 0 {
        return Err(RasterError::Empty);
    }
    let data = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => first_channel(buf.into_raw(), 2),
        DynamicImage::ImageRgb8(buf) => first_channel(buf.into_raw(), 3),
        DynamicImage::ImageRgba8(buf) => first_channel(buf.into_raw(), 4),
        other => {
            return Err(RasterError::Unsupported {
                reason: format!("{:?} pixels are not 8-bit", other.color()),
            })
        }
    };
    Raster::new(width, height, data)
}

fn first_channel(raw: Vec<u8>, channels: usize) -> Vec<u8> {
    raw.chunks_exact(channels).map(|px| px[0]).collect()
}

pub fn load_grayscale(path: impl AsRef<Path>) -> Result<Raster, RasterError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(RasterError::NotFound(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|source| RasterError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    decode_grayscale(&bytes)
}

/// Convenience: `binarize(load_grayscale(path))`.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask, RasterError> {
    load_grayscale(path).map(|r| binarize(&r))
}

fn output_format(path: &Path) -> ImageFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("pgm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    }
}

/// Write an 8-bit grayscale raster. `.pgm` paths get binary PGM, anything
/// else PNG.
pub fn save_raster(r: &Raster, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    let format = output_format(path);
    let mut bytes = Vec::new();
    if format == ImageFormat::Pnm {
        bytes.extend_from_slice(format!("P5\n{} {}\n255\n", r.width, r.height).as_bytes());
        bytes.extend_from_slice(&r.data);
    } else {
        encode_png(&r.data, r.width, r.height, image::ExtendedColorType::L8, &mut bytes)
            .map_err(|reason| RasterError::Write {
                path: path.to_path_buf(),
                reason,
            })?;
    }
    write_bytes(path, &bytes)
}

pub fn save_mask(m: &Mask, path: impl AsRef<Path>) -> Result<(), RasterError> {
    save_raster(&m.to_raster(), path)
}

/// Write interleaved 8-bit RGB as PNG.
pub fn save_rgb(width: u32, height: u32, rgb: &[u8], path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    if rgb.len() != width as usize * height as usize * 3 {
        return Err(RasterError::LengthMismatch {
            width,
            height,
            len: rgb.len(),
        });
    }
    let mut bytes = Vec::new();
    encode_png(rgb, width, height, image::ExtendedColorType::Rgb8, &mut bytes).map_err(
        |reason| RasterError::Write {
            path: path.to_path_buf(),
            reason,
        },
    )?;
    write_bytes(path, &bytes)
}

fn encode_png(
    data: &[u8],
    width: u32,
    height: u32,
    color: image::ExtendedColorType,
    out: &mut Vec<u8>,
) -> Result<(), String> {
    use image::codecs::png::{CompressionType, FilterType, PngEncoder};
    use image::ImageEncoder;
    PngEncoder::new_with_quality(out, CompressionType::Default, FilterType::Adaptive)
        .write_image(data, width, height, color)
        .map_err(|e| e.to_string())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), RasterError> {
    fs::write(path, bytes).map_err(|e| RasterError::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn loads_pgm_bytes_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        fs::write(&path, b"P5\n2 2\n255\n\x00\x80\xff\x07").unwrap();
        let r = load_grayscale(&path).unwrap();
        assert_eq!((r.width(), r.height()), (2, 2));
        assert_eq!(r.data(), &[0, 128, 255, 7]);
    }

    #[test]
    fn zero_sized_image_is_empty_raster() {
        let err = decode_grayscale(b"P5\n0 0\n255\n").unwrap_err();
        assert!(matches!(err, RasterError::Empty));
        assert_eq!(err.to_string(), "empty raster");
    }

    #[test]
    fn three_channel_png_keeps_first_channel() {
        let rgb = [5u8, 9, 200, 5, 1, 2, 5, 0, 0, 5, 255, 255];
        let mut bytes = Vec::new();
        encode_png(&rgb, 2, 2, image::ExtendedColorType::Rgb8, &mut bytes).unwrap();
        let r = decode_grayscale(&bytes).unwrap();
        assert_eq!(r.data(), &[5, 5, 5, 5]);
    }

    #[test]
    fn load_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        assert!(matches!(load_grayscale(&missing), Err(RasterError::NotFound(_))));
        let junk = dir.path().join("junk.png");
        fs::write(&junk, b"GIF89a....").unwrap();
        assert!(matches!(load_grayscale(&junk), Err(RasterError::Unsupported { .. })));
    }

    #[test]
    fn binarize_rule() {
        let r = Raster::new(4, 1, vec![0, 1, 128, 255]).unwrap();
        assert_eq!(binarize(&r).data(), &[0, 1, 1, 1]);
        let zeros = Raster::new(3, 2, vec![0; 6]).unwrap();
        assert!(!binarize(&zeros).has_foreground());
        let full = Raster::new(3, 2, vec![255; 6]).unwrap();
        assert_eq!(binarize(&full).count(), 6);
    }

    #[test]
    fn mask_rejects_non_binary_values() {
        assert!(matches!(
            Mask::new(2, 1, vec![0, 2]),
            Err(RasterError::NotBinary { index: 1, value: 2 })
        ));
        assert!(matches!(Mask::new(2, 2, vec![0; 3]), Err(RasterError::LengthMismatch { .. })));
    }

    #[test]
    fn saved_mask_uses_255_for_foreground() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mask::new(2, 1, vec![0, 1]).unwrap();
        let png = dir.path().join("m.png");
        save_mask(&m, &png).unwrap();
        assert_eq!(load_grayscale(&png).unwrap().data(), &[0, 255]);
        let pgm = dir.path().join("m.pgm");
        save_mask(&m, &pgm).unwrap();
        assert_eq!(fs::read(&pgm).unwrap(), b"P5\n2 1\n255\n\x00\xff");
    }

    #[test]
    fn single_pixel_mask_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mask::new(1, 1, vec![1]).unwrap();
        let path = dir.path().join("one.png");
        save_mask(&m, &path).unwrap();
        let r = load_grayscale(&path).unwrap();
        assert_eq!((r.width(), r.height()), (1, 1));
        assert_eq!(binarize(&r), m);
    }

    #[test]
    fn unwritable_path_is_reported() {
        let m = Mask::zeros(2, 2);
        let err = save_mask(&m, "/nonexistent-dir/x/m.png").unwrap_err();
        assert!(matches!(err, RasterError::Write { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn save_load_binarize_is_identity(
            (w, h, bits) in (1u32..40, 1u32..40).prop_flat_map(|(w, h)| {
                (Just(w), Just(h), proptest::collection::vec(0u8..=1, (w * h) as usize))
            }),
            pgm in any::<bool>(),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let m = Mask::new(w, h, bits).unwrap();
            let path = dir.path().join(if pgm { "m.pgm" } else { "m.png" });
            save_mask(&m, &path).unwrap();
            let back = binarize(&load_grayscale(&path).unwrap());
            prop_assert_eq!(back, m);
        }
    }
}
