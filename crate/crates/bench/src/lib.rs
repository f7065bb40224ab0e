//! Shared inputs for the benchmarks.

use vigil_core::fisherface::{train, FisherModel, TrainConfig, TrainingSet};
use vigil_core::synth::{face_frame, labelled_samples};
use vigil_core::GrayImage;

/// A VGA-ish camera frame with one face near the middle.
pub fn camera_frame(width: u32, height: u32, seed: u64) -> GrayImage {
    face_frame(width, height, 11, 48, width / 2 - 24, height / 2 - 24, seed)
}

/// `classes` people with `per_class` noisy `size x size` samples each.
pub fn training_set(classes: usize, per_class: usize, size: u32) -> TrainingSet {
    let data = labelled_samples(classes, per_class, size, 8.0, 7);
    TrainingSet::from_images(&data, size, size).expect("synthetic corpus")
}

pub fn trained_model(classes: usize, per_class: usize, size: u32) -> FisherModel {
    train(
        &training_set(classes, per_class, size),
        &TrainConfig::new(size, size),
    )
    .expect("synthetic corpus trains")
}
