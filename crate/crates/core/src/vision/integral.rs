use crate::image::GrayImage;

use super::VisionError;

/// Summed-area table with a zero guard row and column.
///
/// Entry `(x, y)` holds the sum of all pixels strictly above and to the left
/// of `(x, y)`, so the table is `(width + 1) x (height + 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    width: u32,
    height: u32,
    table: Vec<u64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let stride = w + 1;
        let mut table = vec![0u64; stride * (h + 1)];
        let px = img.pixels();
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += px[y * w + x] as u64;
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
            }
        }
        Self {
            width: img.width(),
            height: img.height(),
            table,
        }
    }

    /// Width of the source image.
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Table entry at `(x, y)` with `x <= width`, `y <= height`.
    pub fn at(&self, x: u32, y: u32) -> u64 {
        self.table[y as usize * (self.width as usize + 1) + x as usize]
    }

    pub fn rect_sum(&self, x: u32, y: u32, w: u32, h: u32) -> Result<u64, VisionError> {
        let right = x.checked_add(w);
        let bottom = y.checked_add(h);
        match (right, bottom) {
            (Some(r), Some(b)) if r <= self.width && b <= self.height => {
                Ok(self.at(r, b) + self.at(x, y) - self.at(r, y) - self.at(x, b))
            }
            _ => Err(VisionError::OutOfBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            }),
        }
    }
}

pub fn integral_image(img: &GrayImage) -> IntegralImage {
    IntegralImage::new(img)
}
