//! Haar features, boosted stumps and the staged cascade that chains them.
//!
//! Feature values are the weighted rectangle sums divided by the scanned
//! window's pixel area, so thresholds in a cascade file are expressed in
//! mean-intensity units and stay comparable across scales.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::integral::IntegralImage;
use super::VisionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaarFeature {
    pub rects: Vec<WeightedRect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakClassifier {
    pub threshold: f64,
    pub left_value: f64,
    pub right_value: f64,
    #[serde(flatten)]
    pub feature: HaarFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeStage {
    pub stage_threshold: f64,
    pub classifiers: Vec<WeakClassifier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    #[serde(default = "default_base")]
    pub base_width: u32,
    #[serde(default = "default_base")]
    pub base_height: u32,
    pub stages: Vec<CascadeStage>,
}

fn default_base() -> u32 {
    24
}

/// Rounds `v * scale` to the nearest integer, ties toward zero.
pub fn scale_coord(v: u32, scale: f64) -> u32 {
    let t = v as f64 * scale;
    let f = t.floor();
    if t - f > 0.5 {
        f as u32 + 1
    } else {
        f as u32
    }
}

/// A base-sized detection window placed at `(x, y)` and magnified by `scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanWindow {
    pub x: u32,
    pub y: u32,
    pub scale: f64,
    pub width: u32,
    pub height: u32,
}

impl ScanWindow {
    pub fn new(x: u32, y: u32, scale: f64, base_width: u32, base_height: u32) -> Self {
        Self {
            x,
            y,
            scale,
            width: scale_coord(base_width, scale),
            height: scale_coord(base_height, scale),
        }
    }

    pub fn for_cascade(cascade: &CascadeModel, x: u32, y: u32, scale: f64) -> Self {
        Self::new(x, y, scale, cascade.base_width, cascade.base_height)
    }

    fn area(&self) -> f64 {
        self.width as f64 * self.height as f64
    }
}

impl WeightedRect {
    /// Image-space `(x, y, w, h)` of this rectangle inside `win`. Edges are
    /// scaled and rounded independently so the result nests in the window.
    pub fn placed(&self, win: &ScanWindow) -> (u32, u32, u32, u32) {
        let x0 = scale_coord(self.x, win.scale);
        let x1 = scale_coord(self.x + self.w, win.scale);
        let y0 = scale_coord(self.y, win.scale);
        let y1 = scale_coord(self.y + self.h, win.scale);
        (win.x + x0, win.y + y0, x1 - x0, y1 - y0)
    }
}

impl HaarFeature {
    pub fn validate(&self, base_width: u32, base_height: u32) -> Result<(), String> {
        if self.rects.len() < 2 {
            return Err(format!(
                "feature needs at least 2 rectangles, found {}",
                self.rects.len()
            ));
        }
        for (i, r) in self.rects.iter().enumerate() {
            if r.w == 0 || r.h == 0 {
                return Err(format!("rects[{i}] has zero area"));
            }
            if r.x + r.w > base_width || r.y + r.h > base_height {
                return Err(format!(
                    "rects[{i}] ({},{} {}x{}) leaves the {base_width}x{base_height} window",
                    r.x, r.y, r.w, r.h
                ));
            }
            if !r.weight.is_finite() {
                return Err(format!("rects[{i}] weight is not finite"));
            }
        }
        Ok(())
    }
}

/// Weighted rectangle sum of `f` inside `win`, normalised by window area.
pub fn eval_haar_feature(
    ii: &IntegralImage,
    f: &HaarFeature,
    win: &ScanWindow,
) -> Result<f64, VisionError> {
    let mut acc = 0.0;
    for r in &f.rects {
        let (x, y, w, h) = r.placed(win);
        acc += r.weight * ii.rect_sum(x, y, w, h)? as f64;
    }
    Ok(acc / win.area())
}

impl WeakClassifier {
    pub fn vote(&self, feature_value: f64) -> f64 {
        if feature_value < self.threshold {
            self.left_value
        } else {
            self.right_value
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowVerdict {
    pub accepted: bool,
    pub rejected_at_stage: Option<usize>,
}

// Negated comparisons make NaN fail the check.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn evaluate_window(
    ii: &IntegralImage,
    cascade: &CascadeModel,
    win: &ScanWindow,
) -> Result<WindowVerdict, VisionError> {
    if win.x + win.width > ii.width() || win.y + win.height > ii.height() {
        return Err(VisionError::OutOfBounds {
            x: win.x,
            y: win.y,
            w: win.width,
            h: win.height,
            width: ii.width(),
            height: ii.height(),
        });
    }
    for (idx, stage) in cascade.stages.iter().enumerate() {
        let mut sum = 0.0;
        for wc in &stage.classifiers {
            sum += wc.vote(eval_haar_feature(ii, &wc.feature, win)?);
        }
        if !(sum >= stage.stage_threshold) {
            return Ok(WindowVerdict {
                accepted: false,
                rejected_at_stage: Some(idx),
            });
        }
    }
    Ok(WindowVerdict {
        accepted: true,
        rejected_at_stage: None,
    })
}

impl CascadeModel {
    pub fn validate(&self) -> Result<(), VisionError> {
        let invalid = |path: String, msg: String| VisionError::InvalidCascade { path, msg };
        if self.base_width < 4 || self.base_height < 4 {
            return Err(invalid(
                "base_width/base_height".into(),
                format!(
                    "base window must be at least 4x4, got {}x{}",
                    self.base_width, self.base_height
                ),
            ));
        }
        if self.stages.is_empty() {
            return Err(invalid("stages".into(), "cascade has no stages".into()));
        }
        for (si, stage) in self.stages.iter().enumerate() {
            if stage.classifiers.is_empty() {
                return Err(invalid(
                    format!("stages[{si}].classifiers"),
                    "stage has no classifiers".into(),
                ));
            }
            if stage.stage_threshold.is_nan() {
                return Err(invalid(
                    format!("stages[{si}].stage_threshold"),
                    "threshold is NaN".into(),
                ));
            }
            for (ci, wc) in stage.classifiers.iter().enumerate() {
                wc.feature
                    .validate(self.base_width, self.base_height)
                    .map_err(|m| invalid(format!("stages[{si}].classifiers[{ci}]"), m))?;
                if !(wc.left_value.is_finite() && wc.right_value.is_finite())
                    || wc.threshold.is_nan()
                {
                    return Err(invalid(
                        format!("stages[{si}].classifiers[{ci}]"),
                        "non-finite stump parameters".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, VisionError> {
        let model: CascadeModel =
            serde_json::from_str(text).map_err(|e| VisionError::CascadeParse {
                line: e.line(),
                column: e.column(),
                msg: e.to_string(),
            })?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VisionError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cascade serialises")
    }

    pub fn truncated(&self, stages: usize) -> CascadeModel {
        CascadeModel {
            base_width: self.base_width,
            base_height: self.base_height,
            stages: self.stages[..stages.min(self.stages.len())].to_vec(),
        }
    }
}
