//! Integral images, Haar cascades and sliding-window face detection.

mod cascade;
mod detect;
mod integral;

use thiserror::Error;

pub use cascade::{
    eval_haar_feature, evaluate_window, scale_coord, CascadeModel, CascadeStage, HaarFeature,
    ScanWindow, WeakClassifier, WeightedRect, WindowVerdict,
};
pub use detect::{
    detect_faces, group_rectangles, pyramid_scales, raw_detections, DetectParams, FaceBox,
};
pub use integral::{integral_image, IntegralImage};

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("rectangle {w}x{h}+{x}+{y} is outside the {width}x{height} image")]
    OutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
    #[error("cascade parse error at line {line}, column {column}: {msg}")]
    CascadeParse {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("invalid cascade at {path}: {msg}")]
    InvalidCascade { path: String, msg: String },
    #[error("invalid detection parameters: {0}")]
    InvalidParams(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crops the face box out of `img` and resamples it to `(w, h)`.
pub fn face_crop(
    img: &crate::image::GrayImage,
    face: &FaceBox,
    w: u32,
    h: u32,
) -> Result<crate::image::GrayImage, crate::image::ImageError> {
    img.crop(face.x, face.y, face.w, face.h)?
        .resize_nearest(w, h)
}

/// The box with the largest area; ties go to the first in scan order.
pub fn largest_face(faces: &[FaceBox]) -> Option<&FaceBox> {
    faces
        .iter()
        .reduce(|best, f| if f.area() > best.area() { f } else { best })
}
