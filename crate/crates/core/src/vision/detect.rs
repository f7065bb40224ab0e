use serde::{Deserialize, Serialize};

use super::cascade::{evaluate_window, scale_coord, CascadeModel, ScanWindow};
use super::integral::IntegralImage;
use super::VisionError;
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub neighbors: u32,
}

impl FaceBox {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    fn sort_key(&self) -> (u32, u32, u32, u32) {
        (self.y, self.x, self.w, self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    pub scale_factor: f64,
    pub step: u32,
    /// Smallest window side (pixels) to scan; windows below it are skipped.
    pub min_size: u32,
    /// Largest window side to scan; `None` scans up to the image size.
    pub max_size: Option<u32>,
    pub min_neighbors: u32,
    pub group_eps: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            scale_factor: 1.1,
            step: 2,
            min_size: 0,
            max_size: None,
            min_neighbors: 2,
            group_eps: 0.2,
        }
    }
}

impl DetectParams {
    // Negated comparisons make NaN fail the check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), VisionError> {
        if !(self.scale_factor >= 1.05) || !self.scale_factor.is_finite() {
            return Err(VisionError::InvalidParams(format!(
                "scale_factor must be >= 1.05, got {}",
                self.scale_factor
            )));
        }
        if self.step == 0 {
            return Err(VisionError::InvalidParams("step must be >= 1".into()));
        }
        if !(self.group_eps >= 0.0) {
            return Err(VisionError::InvalidParams("group_eps must be >= 0".into()));
        }
        Ok(())
    }
}

/// Scales visited by the pyramid, smallest first. A scale is listed when the
/// magnified base window fits the image and respects the size limits.
pub fn pyramid_scales(
    cascade: &CascadeModel,
    params: &DetectParams,
    width: u32,
    height: u32,
) -> Vec<f64> {
    let mut scales = Vec::new();
    for k in 0.. {
        let s = params.scale_factor.powi(k);
        let (ww, wh) = (
            scale_coord(cascade.base_width, s),
            scale_coord(cascade.base_height, s),
        );
        if ww > width || wh > height {
            break;
        }
        if let Some(max) = params.max_size {
            if ww > max || wh > max {
                break;
            }
        }
        if ww >= params.min_size && wh >= params.min_size {
            scales.push(s);
        }
    }
    scales
}

/// Every window the cascade accepts, before grouping, sorted by `(y, x, w)`.
pub fn raw_detections(
    ii: &IntegralImage,
    cascade: &CascadeModel,
    params: &DetectParams,
) -> Result<Vec<FaceBox>, VisionError> {
    params.validate()?;
    let mut raw = Vec::new();
    for s in pyramid_scales(cascade, params, ii.width(), ii.height()) {
        let probe = ScanWindow::for_cascade(cascade, 0, 0, s);
        for y in (0..=ii.height() - probe.height).step_by(params.step as usize) {
            for x in (0..=ii.width() - probe.width).step_by(params.step as usize) {
                let win = ScanWindow::for_cascade(cascade, x, y, s);
                if evaluate_window(ii, cascade, &win)?.accepted {
                    raw.push(FaceBox {
                        x,
                        y,
                        w: win.width,
                        h: win.height,
                        neighbors: 1,
                    });
                }
            }
        }
    }
    raw.sort_by_key(FaceBox::sort_key);
    Ok(raw)
}

/// Multi-scale sliding-window detection. With `min_neighbors == 0` the raw
/// accepted windows are returned ungrouped.
pub fn detect_faces(
    img: &GrayImage,
    cascade: &CascadeModel,
    params: &DetectParams,
) -> Result<Vec<FaceBox>, VisionError> {
    let ii = IntegralImage::new(img);
    let raw = raw_detections(&ii, cascade, params)?;
    if params.min_neighbors == 0 {
        return Ok(raw);
    }
    Ok(group_rectangles(
        &raw,
        params.min_neighbors,
        params.group_eps,
    ))
}

fn similar(a: &FaceBox, b: &FaceBox, eps: f64) -> bool {
    let delta = eps * (a.w.min(b.w) + a.h.min(b.h)) as f64 * 0.5;
    let d = |p: u32, q: u32| (p as f64 - q as f64).abs() <= delta;
    d(a.x, b.x) && d(a.y, b.y) && d(a.x + a.w, b.x + b.w) && d(a.y + a.h, b.y + b.h)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Partitions boxes into similarity classes (transitive closure of the
/// pairwise overlap test) and emits one averaged box per class larger than
/// `min_neighbors`.
pub fn group_rectangles(raw: &[FaceBox], min_neighbors: u32, eps: f64) -> Vec<FaceBox> {
    let n = raw.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if similar(&raw[i], &raw[j], eps) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    let mut classes: std::collections::BTreeMap<usize, Vec<&FaceBox>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        classes.entry(root).or_default().push(&raw[i]);
    }

    let mut out: Vec<FaceBox> = classes
        .into_values()
        .filter(|members| members.len() as u32 > min_neighbors)
        .map(|members| {
            let k = members.len() as f64;
            let mean = |f: &dyn Fn(&FaceBox) -> u32| {
                (members.iter().map(|b| f(b) as f64).sum::<f64>() / k).round() as u32
            };
            let x0 = mean(&|b| b.x);
            let y0 = mean(&|b| b.y);
            let x1 = mean(&|b| b.x + b.w);
            let y1 = mean(&|b| b.y + b.h);
            FaceBox {
                x: x0,
                y: y0,
                w: (x1 - x0).max(1),
                h: (y1 - y0).max(1),
                neighbors: members.len() as u32,
            }
        })
        .collect();
    out.sort_by_key(FaceBox::sort_key);
    out
}
