//! Grayscale frames and the conversions the detector and recognizer need.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1 (got {width}x{height})")]
    Empty { width: u32, height: u32 },
    #[error("pixel buffer has {actual} entries, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("crop {w}x{h}+{x}+{y} exceeds {width}x{height} image")]
    CropOutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
    #[error("failed to decode image: {0}")]
    Decode(#[from] image::ImageError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major 8-bit intensity image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> u8,
    ) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    /// Luminance conversion of packed RGB8: `round(0.299 R + 0.587 G + 0.114 B)`.
    pub fn from_rgb(width: u32, height: u32, rgb: &[u8]) -> Result<Self, ImageError> {
        let expected = width as usize * height as usize * 3;
        if rgb.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                actual: rgb.len(),
            });
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|p| luminance(p[0], p[1], p[2]))
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<GrayImage, ImageError> {
        if w == 0
            || h == 0
            || x.checked_add(w).is_none_or(|r| r > self.width)
            || y.checked_add(h).is_none_or(|b| b > self.height)
        {
            return Err(ImageError::CropOutOfBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        GrayImage::from_fn(w, h, |cx, cy| self.get(x + cx, y + cy))
    }

    /// Nearest-neighbour resampling; source pixel for target `(tx, ty)` is
    /// `floor((t + 0.5) * src / dst)`.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Result<GrayImage, ImageError> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = |tx: u32| -> u32 {
            let v = ((2 * tx as u64 + 1) * self.width as u64) / (2 * width as u64);
            (v as u32).min(self.width - 1)
        };
        let sy = |ty: u32| -> u32 {
            let v = ((2 * ty as u64 + 1) * self.height as u64) / (2 * height as u64);
            (v as u32).min(self.height - 1)
        };
        GrayImage::from_fn(width, height, |x, y| self.get(sx(x), sy(y)))
    }

    /// Upscales by an integer factor, replicating each pixel into a block.
    pub fn upscale(&self, factor: u32) -> GrayImage {
        let factor = factor.max(1);
        GrayImage::from_fn(self.width * factor, self.height * factor, |x, y| {
            self.get(x / factor, y / factor)
        })
        .expect("non-empty source")
    }

    pub fn open(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
        let decoded = image::ImageReader::open(path)?
            .with_guessed_format()?
            .decode()?;
        Ok(Self::from_dynamic(&decoded))
    }

    pub fn decode(bytes: &[u8]) -> Result<GrayImage, ImageError> {
        let decoded = image::load_from_memory(bytes)?;
        Ok(Self::from_dynamic(&decoded))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> GrayImage {
        match img {
            image::DynamicImage::ImageLuma8(g) => {
                GrayImage::new(g.width(), g.height(), g.as_raw().clone())
                    .expect("decoder yields non-empty images")
            }
            other => {
                let rgb = other.to_rgb8();
                GrayImage::from_rgb(rgb.width(), rgb.height(), rgb.as_raw())
                    .expect("decoder yields non-empty images")
            }
        }
    }

    fn to_luma(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        self.to_luma().save(path)?;
        Ok(())
    }

    /// Portable graymap (binary P5) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn to_jpeg(&self, quality: u8) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality);
        self.to_luma().write_with_encoder(encoder)?;
        Ok(out)
    }
}

pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    let weighted = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((weighted + 500) / 1000) as u8
}
