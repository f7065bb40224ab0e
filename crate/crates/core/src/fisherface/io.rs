use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{flatten, FaceClass, FisherError, FisherModel, ProjectedSample, TrainingSet};
use crate::image::GrayImage;

pub const MODEL_FORMAT: &str = "vigil-fisherface";
pub const MODEL_VERSION: u32 = 1;

const IMAGE_EXTENSIONS: &[&str] = &["pgm", "ppm", "pnm", "pbm", "png", "jpg", "jpeg"];

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed model file at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("unsupported model file: {0}")]
    Unsupported(String),
    #[error("inconsistent model file: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Fisher(#[from] FisherError),
}

#[derive(Serialize, Deserialize)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    /// Column-major.
    data: Vec<f64>,
}

impl MatrixRecord {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }

    fn into_matrix(self, name: &str) -> Result<DMatrix<f64>, ModelFileError> {
        if self.rows * self.cols != self.data.len() {
            return Err(ModelFileError::Inconsistent(format!(
                "{name}: {}x{} matrix with {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_vec(self.rows, self.cols, self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    label: String,
    y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    format: String,
    version: u32,
    face_width: u32,
    face_height: u32,
    reject_threshold: f64,
    global_mean: Vec<f64>,
    pca_eigenvalues: Vec<f64>,
    pca_basis: MatrixRecord,
    eigenvalues: Vec<f64>,
    lda_matrix: MatrixRecord,
    projected_training: Vec<SampleRecord>,
}

impl FisherModel {
    pub fn to_json(&self) -> String {
        let record = ModelRecord {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            face_width: self.face_width,
            face_height: self.face_height,
            reject_threshold: self.reject_threshold,
            global_mean: self.global_mean.as_slice().to_vec(),
            pca_eigenvalues: self.pca_eigenvalues.clone(),
            pca_basis: MatrixRecord::from_matrix(&self.pca_basis),
            eigenvalues: self.eigenvalues.clone(),
            lda_matrix: MatrixRecord::from_matrix(&self.lda_matrix),
            projected_training: self
                .projected_training
                .iter()
                .map(|s| SampleRecord {
                    label: s.label.clone(),
                    y: s.y.as_slice().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&record).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelFileError> {
        let r: ModelRecord = serde_json::from_str(text).map_err(|e| ModelFileError::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        if r.format != MODEL_FORMAT || r.version != MODEL_VERSION {
            return Err(ModelFileError::Unsupported(format!(
                "{} v{} (expected {MODEL_FORMAT} v{MODEL_VERSION})",
                r.format, r.version
            )));
        }
        let pca_basis = r.pca_basis.into_matrix("pca_basis")?;
        let lda_matrix = r.lda_matrix.into_matrix("lda_matrix")?;
        let d = r.face_width as usize * r.face_height as usize;
        if r.global_mean.len() != d
            || pca_basis.nrows() != d
            || lda_matrix.nrows() != pca_basis.ncols()
            || r.projected_training.is_empty()
            || r.projected_training
                .iter()
                .any(|s| s.y.len() != lda_matrix.ncols())
        {
            return Err(ModelFileError::Inconsistent(
                "matrix shapes disagree with face geometry".into(),
            ));
        }
        Ok(FisherModel {
            face_width: r.face_width,
            face_height: r.face_height,
            global_mean: DVector::from_vec(r.global_mean),
            pca_basis,
            pca_eigenvalues: r.pca_eigenvalues,
            lda_matrix,
            eigenvalues: r.eigenvalues,
            projected_training: r
                .projected_training
                .into_iter()
                .map(|s| ProjectedSample {
                    label: s.label,
                    y: DVector::from_vec(s.y),
                })
                .collect(),
            reject_threshold: r.reject_threshold,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| ModelFileError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelFileError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusReport {
    pub classes: Vec<CorpusClassReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusClassReport {
    pub label: String,
    pub used: usize,
    /// Files that failed to decode or had no usable face.
    pub skipped: Vec<String>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, ModelFileError> {
    let io = |source| ModelFileError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut entries = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?;
    entries.sort();
    Ok(entries)
}

/// Loads a `<dir>/<label>/<image>` corpus. Each image is passed through
/// `extract` (face detection and cropping, or identity) and then resized to
/// the face geometry; images for which `extract` yields nothing are skipped.
pub fn load_corpus(
    dir: impl AsRef<Path>,
    face_width: u32,
    face_height: u32,
    extract: impl Fn(&GrayImage) -> Option<GrayImage>,
) -> Result<(TrainingSet, CorpusReport), ModelFileError> {
    let mut classes = Vec::new();
    let mut report = CorpusReport::default();
    for class_dir in sorted_entries(dir.as_ref())?
        .into_iter()
        .filter(|p| p.is_dir())
    {
        let label = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let mut samples = Vec::new();
        let mut skipped = Vec::new();
        for file in sorted_entries(&class_dir)?
            .into_iter()
            .filter(|p| is_image(p))
        {
            let name = file.display().to_string();
            let face = GrayImage::open(&file)
                .ok()
                .and_then(|img| extract(&img))
                .and_then(|crop| crop.resize_nearest(face_width, face_height).ok());
            match face {
                Some(crop) => samples.push(flatten(&crop, face_width, face_height)?),
                None => skipped.push(name),
            }
        }
        report.classes.push(CorpusClassReport {
            label: label.clone(),
            used: samples.len(),
            skipped,
        });
        if !samples.is_empty() {
            classes.push(FaceClass { label, samples });
        }
    }
    Ok((TrainingSet::new(classes)?, report))
}
