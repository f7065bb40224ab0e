//! Fisherface recognition: PCA to `N - C` dimensions, LDA to `C - 1`, then
//! nearest-neighbour matching in the discriminant space with an
//! unknown-person rejection radius.

mod io;
mod linalg;

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::GrayImage;

pub use io::{load_corpus, CorpusReport, ModelFileError, MODEL_FORMAT, MODEL_VERSION};
pub use linalg::{
    centered_rank, class_means, fix_sign, global_mean, lda_solve, pca_reduce, ridge_for,
    scatter_matrices, LdaSolution, PcaReduction, ScatterPair, WITHIN_RIDGE,
};

#[derive(Debug, Error)]
pub enum FisherError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid training set: {0}")]
    InvalidTrainingSet(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("requested {requested} PCA components but the centred data has rank {achievable}")]
    PcaRank { requested: usize, achievable: usize },
    #[error("numerical failure in {stage}: {detail}")]
    Numerical { stage: &'static str, detail: String },
}

/// Row-major flattened face crop.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVector(Vec<f64>);

impl FaceVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    /// Inverse of [`flatten`] for a known geometry.
    pub fn to_image(&self, width: u32, height: u32) -> Option<GrayImage> {
        if self.0.len() != width as usize * height as usize {
            return None;
        }
        let px = self
            .0
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::new(width, height, px).ok()
    }
}

/// Flattens a crop already resized to `(width, height)`.
pub fn flatten(crop: &GrayImage, width: u32, height: u32) -> Result<FaceVector, FisherError> {
    if crop.width() != width || crop.height() != height {
        return Err(FisherError::Dimension {
            expected: width as usize * height as usize,
            actual: crop.width() as usize * crop.height() as usize,
        });
    }
    Ok(FaceVector(
        crop.pixels().iter().map(|&p| p as f64).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceClass {
    pub label: String,
    pub samples: Vec<FaceVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    classes: Vec<FaceClass>,
    dim: usize,
}

impl TrainingSet {
    pub fn new(classes: Vec<FaceClass>) -> Result<Self, FisherError> {
        if classes.len() < 2 {
            return Err(FisherError::Config(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut seen = HashSet::new();
        let mut dim = None;
        for class in &classes {
            if !seen.insert(class.label.as_str()) {
                return Err(FisherError::InvalidTrainingSet(format!(
                    "duplicate label {:?}",
                    class.label
                )));
            }
            if class.samples.is_empty() {
                return Err(FisherError::InvalidTrainingSet(format!(
                    "class {:?} has no samples",
                    class.label
                )));
            }
            for s in &class.samples {
                match dim {
                    None if s.is_empty() => {
                        return Err(FisherError::InvalidTrainingSet("empty sample".into()))
                    }
                    None => dim = Some(s.len()),
                    Some(d) if d != s.len() => {
                        return Err(FisherError::Dimension {
                            expected: d,
                            actual: s.len(),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(Self {
            classes,
            dim: dim.expect("at least one sample"),
        })
    }

    pub fn from_images(
        labelled: &[(String, Vec<GrayImage>)],
        width: u32,
        height: u32,
    ) -> Result<Self, FisherError> {
        let classes = labelled
            .iter()
            .map(|(label, imgs)| {
                let samples = imgs
                    .iter()
                    .map(|img| {
                        let resized = img
                            .resize_nearest(width, height)
                            .map_err(|e| FisherError::InvalidTrainingSet(e.to_string()))?;
                        flatten(&resized, width, height)
                    })
                    .collect::<Result<_, _>>()?;
                Ok(FaceClass {
                    label: label.clone(),
                    samples,
                })
            })
            .collect::<Result<_, FisherError>>()?;
        Self::new(classes)
    }

    pub fn classes(&self) -> &[FaceClass] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_samples(&self) -> usize {
        self.classes.iter().map(|c| c.samples.len()).sum()
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Samples as columns, class-major in insertion order.
    pub fn data_matrix(&self) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = self
            .classes
            .iter()
            .flat_map(|c| c.samples.iter().map(FaceVector::as_dvector))
            .collect();
        DMatrix::from_columns(&cols)
    }

    /// Label of each column of [`data_matrix`](Self::data_matrix).
    pub fn sample_labels(&self) -> Vec<&str> {
        self.classes
            .iter()
            .flat_map(|c| c.samples.iter().map(move |_| c.label.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub face_width: u32,
    pub face_height: u32,
    /// PCA dimension; defaults to `min(N - C, rank)`.
    pub pca_dim: Option<usize>,
    /// Fixed rejection radius; derived from the training data when absent.
    pub reject_threshold: Option<f64>,
    pub threshold_margin: f64,
}

impl TrainConfig {
    pub fn new(face_width: u32, face_height: u32) -> Self {
        Self {
            face_width,
            face_height,
            pca_dim: None,
            reject_threshold: None,
            threshold_margin: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSample {
    pub label: String,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherModel {
    pub face_width: u32,
    pub face_height: u32,
    pub global_mean: DVector<f64>,
    /// `D x P`.
    pub pca_basis: DMatrix<f64>,
    pub pca_eigenvalues: Vec<f64>,
    /// `P x L`.
    pub lda_matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub projected_training: Vec<ProjectedSample>,
    pub reject_threshold: f64,
}

pub fn train(ts: &TrainingSet, config: &TrainConfig) -> Result<FisherModel, FisherError> {
    let c = ts.class_count();
    let n = ts.total_samples();
    if c < 2 {
        return Err(FisherError::Config(format!(
            "need at least 2 classes, got {c}"
        )));
    }
    let expected = config.face_width as usize * config.face_height as usize;
    if expected != ts.dim() {
        return Err(FisherError::Dimension {
            expected,
            actual: ts.dim(),
        });
    }

    let p = match config.pca_dim {
        Some(p) => p,
        None => {
            let rank = centered_rank(ts);
            if rank == 0 {
                return Err(FisherError::InvalidTrainingSet(
                    "all samples are identical".into(),
                ));
            }
            match (n - c).min(rank) {
                0 => rank.min(c - 1),
                p => p,
            }
        }
    };
    let pca = pca_reduce(ts, p)?;

    let mut groups = Vec::with_capacity(c);
    let mut col = 0;
    for class in ts.classes() {
        let g: Vec<DVector<f64>> = (col..col + class.samples.len())
            .map(|i| pca.projections.column(i).into_owned())
            .collect();
        col += class.samples.len();
        groups.push(g);
    }
    let scatter = scatter_matrices(&groups);
    let lda = lda_solve(&scatter, (c - 1).min(p))?;

    let mut model = FisherModel {
        face_width: config.face_width,
        face_height: config.face_height,
        global_mean: pca.mean,
        pca_basis: pca.basis,
        pca_eigenvalues: pca.eigenvalues,
        lda_matrix: lda.projection,
        eigenvalues: lda.eigenvalues,
        projected_training: Vec::with_capacity(n),
        reject_threshold: 0.0,
    };
    // Stored projections go through `project` so a training sample presented
    // again lands on exactly the same point.
    for class in ts.classes() {
        for s in &class.samples {
            let y = model.project(s)?;
            model.projected_training.push(ProjectedSample {
                label: class.label.clone(),
                y,
            });
        }
    }
    model.reject_threshold = match config.reject_threshold {
        Some(t) => t,
        None => default_threshold(&model.projected_training, config.threshold_margin),
    };
    Ok(model)
}

/// `margin` times the largest nearest-same-class-neighbour distance. When no
/// class has two samples, half the smallest between-class distance is used.
pub fn default_threshold(samples: &[ProjectedSample], margin: f64) -> f64 {
    let mut worst_nn: Option<f64> = None;
    for (i, a) in samples.iter().enumerate() {
        let nn = samples
            .iter()
            .enumerate()
            .filter(|(j, b)| *j != i && b.label == a.label)
            .map(|(_, b)| (&a.y - &b.y).norm())
            .reduce(f64::min);
        if let Some(d) = nn {
            worst_nn = Some(worst_nn.map_or(d, |w: f64| w.max(d)));
        }
    }
    match worst_nn {
        Some(w) => w * margin,
        None => {
            let closest = samples
                .iter()
                .enumerate()
                .flat_map(|(i, a)| samples[i + 1..].iter().map(move |b| (a, b)))
                .filter(|(a, b)| a.label != b.label)
                .map(|(a, b)| (&a.y - &b.y).norm())
                .reduce(f64::min)
                .unwrap_or(0.0);
            closest / 2.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Known { label: String, distance: f64 },
    Unknown { min_distance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionResult {
    pub verdict: Verdict,
    /// Minimum distance to each class's training samples.
    pub distances: BTreeMap<String, f64>,
}

impl RecognitionResult {
    pub fn label(&self) -> Option<&str> {
        match &self.verdict {
            Verdict::Known { label, .. } => Some(label),
            Verdict::Unknown { .. } => None,
        }
    }
}

impl FisherModel {
    pub fn dim(&self) -> usize {
        self.global_mean.len()
    }

    pub fn labels(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for s in &self.projected_training {
            if !seen.contains(&s.label.as_str()) {
                seen.push(&s.label);
            }
        }
        seen
    }

    pub fn project(&self, face: &FaceVector) -> Result<DVector<f64>, FisherError> {
        if face.len() != self.dim() {
            return Err(FisherError::Dimension {
                expected: self.dim(),
                actual: face.len(),
            });
        }
        let centred = face.as_dvector() - &self.global_mean;
        let pca = self.pca_basis.transpose() * centred;
        Ok(self.lda_matrix.transpose() * pca)
    }

    pub fn recognize(&self, face: &FaceVector) -> Result<RecognitionResult, FisherError> {
        let y = self.project(face)?;
        let mut distances: BTreeMap<String, f64> = BTreeMap::new();
        for s in &self.projected_training {
            let d = (&y - &s.y).norm();
            distances
                .entry(s.label.clone())
                .and_modify(|m| *m = m.min(d))
                .or_insert(d);
        }
        // BTreeMap iterates labels in order, so strict `<` keeps the
        // lexicographically smallest label on ties.
        let mut best: Option<(&String, f64)> = None;
        for (label, &d) in &distances {
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((label, d));
            }
        }
        let (label, distance) = best.expect("model has training samples");
        let verdict = if distance <= self.reject_threshold {
            Verdict::Known {
                label: label.clone(),
                distance,
            }
        } else {
            Verdict::Unknown {
                min_distance: distance,
            }
        };
        Ok(RecognitionResult { verdict, distances })
    }

    /// Resizes, flattens and recognizes a face crop.
    pub fn recognize_crop(&self, crop: &GrayImage) -> Result<RecognitionResult, FisherError> {
        let resized = crop
            .resize_nearest(self.face_width, self.face_height)
            .map_err(|e| FisherError::Config(e.to_string()))?;
        self.recognize(&flatten(&resized, self.face_width, self.face_height)?)
    }
}

pub fn project(model: &FisherModel, face: &FaceVector) -> Result<DVector<f64>, FisherError> {
    model.project(face)
}

pub fn recognize(model: &FisherModel, face: &FaceVector) -> Result<RecognitionResult, FisherError> {
    model.recognize(face)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FaceVector {
        FaceVector::new(v.to_vec())
    }

    #[test]
    fn flatten_is_row_major() {
        let img = GrayImage::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(
            flatten(&img, 2, 2).unwrap().as_slice(),
            &[1.0, 2.0, 3.0, 4.0]
        );
        let one = GrayImage::new(1, 1, vec![7]).unwrap();
        assert_eq!(flatten(&one, 1, 1).unwrap().as_slice(), &[7.0]);
        assert!(matches!(
            flatten(&img, 3, 2),
            Err(FisherError::Dimension { .. })
        ));
    }

    #[test]
    fn flatten_then_reshape_is_identity() {
        let img = crate::synth::random_image(3, 3, 42);
        assert_eq!(flatten(&img, 3, 3).unwrap().to_image(3, 3).unwrap(), img);
    }

    #[test]
    fn training_set_validation() {
        let one = vec![FaceClass {
            label: "a".into(),
            samples: vec![fv(&[1.0])],
        }];
        assert!(matches!(TrainingSet::new(one), Err(FisherError::Config(_))));
        let dup = vec![
            FaceClass {
                label: "a".into(),
                samples: vec![fv(&[1.0])],
            },
            FaceClass {
                label: "a".into(),
                samples: vec![fv(&[2.0])],
            },
        ];
        assert!(TrainingSet::new(dup).is_err());
        let ragged = vec![
            FaceClass {
                label: "a".into(),
                samples: vec![fv(&[1.0])],
            },
            FaceClass {
                label: "b".into(),
                samples: vec![fv(&[2.0, 3.0])],
            },
        ];
        assert!(matches!(
            TrainingSet::new(ragged),
            Err(FisherError::Dimension { .. })
        ));
        let empty = vec![
            FaceClass {
                label: "a".into(),
                samples: vec![],
            },
            FaceClass {
                label: "b".into(),
                samples: vec![fv(&[2.0])],
            },
        ];
        assert!(TrainingSet::new(empty).is_err());
    }

    #[test]
    fn identical_per_class_samples_collapse_to_points() {
        let a = [10.0, 20.0, 30.0, 40.0];
        let b = [40.0, 10.0, 0.0, 25.0];
        let ts = TrainingSet::new(vec![
            FaceClass {
                label: "a".into(),
                samples: vec![fv(&a), fv(&a)],
            },
            FaceClass {
                label: "b".into(),
                samples: vec![fv(&b), fv(&b)],
            },
        ])
        .unwrap();
        let model = train(&ts, &TrainConfig::new(2, 2)).unwrap();
        let ys = &model.projected_training;
        assert!((&ys[0].y - &ys[1].y).norm() < 1e-9);
        assert!((&ys[2].y - &ys[3].y).norm() < 1e-9);
        assert!((&ys[0].y - &ys[2].y).norm() > 1e-3);
        let r = model.recognize(&fv(&a)).unwrap();
        assert_eq!(r.label(), Some("a"));
    }

    #[test]
    fn mean_face_projects_to_origin_and_training_samples_match() {
        let data = crate::synth::labelled_samples(3, 4, 8, 5.0, 17);
        let ts = TrainingSet::from_images(&data, 8, 8).unwrap();
        let model = train(&ts, &TrainConfig::new(8, 8)).unwrap();
        let mean = FaceVector::new(model.global_mean.as_slice().to_vec());
        assert!(model.project(&mean).unwrap().norm() < 1e-9);
        let x = ts.data_matrix();
        for (i, s) in model.projected_training.iter().enumerate() {
            let y = model
                .project(&FaceVector::new(x.column(i).as_slice().to_vec()))
                .unwrap();
            assert!((y - &s.y).norm() < 1e-9);
        }
        assert_eq!(model.lda_matrix.ncols(), 2);
        assert_eq!(model.pca_basis.ncols(), 12 - 3);
    }

    #[test]
    fn zero_threshold_rejects_unseen_faces() {
        let data = crate::synth::labelled_samples(3, 3, 8, 5.0, 5);
        let ts = TrainingSet::from_images(&data, 8, 8).unwrap();
        let cfg = TrainConfig {
            reject_threshold: Some(0.0),
            ..TrainConfig::new(8, 8)
        };
        let model = train(&ts, &cfg).unwrap();
        let probe = flatten(&crate::synth::random_image(8, 8, 999), 8, 8).unwrap();
        assert!(matches!(
            model.recognize(&probe).unwrap().verdict,
            Verdict::Unknown { .. }
        ));
        let member = &ts.classes()[1].samples[0];
        match model.recognize(member).unwrap().verdict {
            Verdict::Known { label, distance } => {
                assert_eq!(label, ts.classes()[1].label);
                assert!(distance <= 1e-9);
            }
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn ties_resolve_to_smallest_label() {
        let model = FisherModel {
            face_width: 1,
            face_height: 1,
            global_mean: DVector::from_vec(vec![0.0]),
            pca_basis: DMatrix::from_element(1, 1, 1.0),
            pca_eigenvalues: vec![1.0],
            lda_matrix: DMatrix::from_element(1, 1, 1.0),
            eigenvalues: vec![1.0],
            projected_training: vec![
                ProjectedSample {
                    label: "zed".into(),
                    y: DVector::from_vec(vec![1.0]),
                },
                ProjectedSample {
                    label: "amy".into(),
                    y: DVector::from_vec(vec![-1.0]),
                },
            ],
            reject_threshold: 5.0,
        };
        let r = model.recognize(&fv(&[0.0])).unwrap();
        assert_eq!(r.label(), Some("amy"));
        assert_eq!(r.distances.len(), 2);
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let data = crate::synth::labelled_samples(2, 3, 4, 5.0, 1);
        let ts = TrainingSet::from_images(&data, 4, 4).unwrap();
        let model = train(&ts, &TrainConfig::new(4, 4)).unwrap();
        assert!(model.project(&fv(&[1.0; 15])).is_err());
        assert!(train(&ts, &TrainConfig::new(5, 4)).is_err());
    }
}
