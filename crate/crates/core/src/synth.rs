//! Deterministic synthetic fixtures: a centre-bright cascade, planted
//! patterns that it fires on, and per-person face textures for training and
//! probing the recognizer. Everything is seeded so fixtures are reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::GrayImage;
use crate::vision::{CascadeModel, CascadeStage, HaarFeature, WeakClassifier, WeightedRect};

/// Default contrast threshold of the shipped cascade (mean-intensity units).
pub const CONTRAST_THRESHOLD: f64 = 25.0;
/// Default border-darkness threshold of the shipped cascade.
pub const BORDER_THRESHOLD: f64 = -25.0;

/// Two-stage 24x24 cascade that accepts a bright 12x12 centre on a dark
/// border. Stage 0 thresholds `(centre - border) / area`, stage 1 thresholds
/// `-border / area`.
pub fn center_bright_cascade() -> CascadeModel {
    center_bright_cascade_with(CONTRAST_THRESHOLD, BORDER_THRESHOLD)
}

pub fn center_bright_cascade_with(contrast: f64, border: f64) -> CascadeModel {
    let full = WeightedRect {
        x: 0,
        y: 0,
        w: 24,
        h: 24,
        weight: -1.0,
    };
    let centre = |weight| WeightedRect {
        x: 6,
        y: 6,
        w: 12,
        h: 12,
        weight,
    };
    let stump = |threshold, rects| CascadeStage {
        stage_threshold: 0.0,
        classifiers: vec![WeakClassifier {
            threshold,
            left_value: -1.0,
            right_value: 1.0,
            feature: HaarFeature { rects },
        }],
    };
    CascadeModel {
        base_width: 24,
        base_height: 24,
        stages: vec![
            stump(contrast, vec![full, centre(2.0)]),
            stump(border, vec![full, centre(1.0)]),
        ],
    }
}

/// Writes a `size x size` block with a `size/2` bright centre onto `img`.
pub fn plant_pattern(img: &mut GrayImage, x: u32, y: u32, size: u32, dark: u8, bright: u8) {
    let q = size / 4;
    for dy in 0..size {
        for dx in 0..size {
            let inner = (q..q + size / 2).contains(&dx) && (q..q + size / 2).contains(&dy);
            img.set(x + dx, y + dy, if inner { bright } else { dark });
        }
    }
}

/// Uniform noise background in `[lo, hi]`.
pub fn noise_image(width: u32, height: u32, lo: u8, hi: u8, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayImage::from_fn(width, height, |_, _| rng.random_range(lo..=hi)).expect("non-empty")
}

/// Uniformly random image over the full intensity range.
pub fn random_image(width: u32, height: u32, seed: u64) -> GrayImage {
    noise_image(width, height, 0, 255, seed)
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma`, clamped to 0..=255.
pub fn add_noise(img: &GrayImage, sigma: f64, rng: &mut impl Rng) -> GrayImage {
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let px = img
        .pixels()
        .iter()
        .map(|&p| clamp_u8(p as f64 + normal.sample(rng)))
        .collect();
    GrayImage::new(img.width(), img.height(), px).expect("same shape")
}

/// Random per-person base pattern for recognizer tests: every pixel drawn
/// uniformly from 0..=255.
pub fn base_pattern(size: u32, seed: u64) -> GrayImage {
    random_image(size, size, seed ^ 0x5eed_face)
}

/// A detectable face: dark border, bright textured centre whose 4x4-block
/// texture is specific to `identity`.
pub fn face_patch(size: u32, identity: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(identity.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let blocks = 4u32;
    let texture: Vec<u8> = (0..blocks * blocks)
        .map(|_| rng.random_range(150..=250))
        .collect();
    let q = size / 4;
    let inner = size / 2;
    GrayImage::from_fn(size, size, |x, y| {
        if (q..q + inner).contains(&x) && (q..q + inner).contains(&y) {
            let bx = ((x - q) * blocks / inner).min(blocks - 1);
            let by = ((y - q) * blocks / inner).min(blocks - 1);
            texture[(by * blocks + bx) as usize]
        } else {
            12
        }
    })
    .expect("non-empty")
}

/// Pastes `patch` into `frame` at `(x, y)`.
pub fn paste(frame: &mut GrayImage, patch: &GrayImage, x: u32, y: u32) {
    for dy in 0..patch.height() {
        for dx in 0..patch.width() {
            frame.set(x + dx, y + dy, patch.get(dx, dy));
        }
    }
}

/// Camera-style frame: mid-grey noise background with a noisy face at `(x, y)`.
pub fn face_frame(
    width: u32,
    height: u32,
    identity: u64,
    face_size: u32,
    x: u32,
    y: u32,
    seed: u64,
) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame = noise_image(width, height, 70, 130, seed.wrapping_add(1));
    let face = add_noise(&face_patch(face_size, identity), 4.0, &mut rng);
    paste(&mut frame, &face, x, y);
    frame
}

/// Labelled noisy samples around per-class base patterns.
pub fn labelled_samples(
    classes: usize,
    per_class: usize,
    size: u32,
    sigma: f64,
    seed: u64,
) -> Vec<(String, Vec<GrayImage>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..classes)
        .map(|c| {
            let base = base_pattern(size, seed.wrapping_mul(31).wrapping_add(c as u64));
            let samples = (0..per_class)
                .map(|_| add_noise(&base, sigma, &mut rng))
                .collect();
            (format!("person{c:02}"), samples)
        })
        .collect()
}
