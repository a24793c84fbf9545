//! Grid-prediction decoding, IoU and per-class non-maximum suppression.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("prediction holds {actual} values, S={s} B={b} C={c} needs {expected}")]
    ValueCount {
        s: usize,
        b: usize,
        c: usize,
        expected: usize,
        actual: usize,
    },
    #[error("prediction value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("{0} class names for {1} classes")]
    ClassNames(usize, usize),
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, DetectorError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if ![x_min, y_min, x_max, y_max].into_iter().all(in_unit) {
            return Err(DetectorError::InvalidBox(format!(
                "({x_min}, {y_min}, {x_max}, {y_max}) leaves [0, 1]"
            )));
        }
        if x_min > x_max || y_min > y_max {
            return Err(DetectorError::InvalidBox(format!(
                "({x_min}, {y_min}, {x_max}, {y_max}) has inverted corners"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Box from centre and extent, clamped to the unit square.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        let (x_min, x_max) = (clamp(cx - w / 2.0), clamp(cx + w / 2.0));
        let (y_min, y_max) = (clamp(cy - h / 2.0), clamp(cy + h / 2.0));
        Self {
            x_min,
            y_min,
            x_max: x_max.max(x_min),
            y_max: y_max.max(y_min),
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

fn intersection(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    w * h
}

/// Intersection over union. Zero when the union has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub class_name: String,
    pub confidence: f64,
    /// `confidence * class probability`
    pub score: f64,
}

/// Raw `S x S x (B*5 + C)` output: per box `(x, y, w, h, confidence)`, then the
/// cell's class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPrediction {
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_names: Vec<String>,
    pub values: Vec<f64>,
}

impl GridPrediction {
    pub fn new(s: usize, b: usize, c: usize, values: Vec<f64>) -> Result<Self, DetectorError> {
        let pred = Self {
            s,
            b,
            c,
            class_names: Vec::new(),
            values,
        };
        pred.validate()?;
        Ok(pred)
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self, DetectorError> {
        self.class_names = names;
        self.validate()?;
        Ok(self)
    }

    pub fn cell_stride(&self) -> usize {
        self.b * 5 + self.c
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let expected = self.s * self.s * self.cell_stride();
        if self.values.len() != expected {
            return Err(DetectorError::ValueCount {
                s: self.s,
                b: self.b,
                c: self.c,
                expected,
                actual: self.values.len(),
            });
        }
        if let Some((index, &value)) = self
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(DetectorError::OutOfRange { index, value });
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.c {
            return Err(DetectorError::ClassNames(self.class_names.len(), self.c));
        }
        Ok(())
    }

    pub fn class_name(&self, class_id: usize) -> String {
        self.class_names
            .get(class_id)
            .cloned()
            .unwrap_or_else(|| format!("class_{class_id}"))
    }
}

/// Decodes every box whose confidence reaches `conf_threshold`.
pub fn decode_grid(
    pred: &GridPrediction,
    conf_threshold: f64,
) -> Result<Vec<Detection>, DetectorError> {
    pred.validate()?;
    let s = pred.s as f64;
    let stride = pred.cell_stride();
    let mut out = Vec::new();
    for row in 0..pred.s {
        for col in 0..pred.s {
            let cell = &pred.values[(row * pred.s + col) * stride..][..stride];
            let probs = &cell[pred.b * 5..];
            let (class_id, class_prob) = match probs.len() {
                0 => (0, 1.0),
                _ => {
                    let id = crate::classifier::argmax(probs);
                    (id, probs[id])
                }
            };
            for bx in cell[..pred.b * 5].chunks_exact(5) {
                let (x, y, w, h, confidence) = (bx[0], bx[1], bx[2], bx[3], bx[4]);
                if confidence < conf_threshold {
                    continue;
                }
                let cx = (col as f64 + x) / s;
                let cy = (row as f64 + y) / s;
                out.push(Detection {
                    bbox: BBox::from_center(cx, cy, w, h),
                    class_id,
                    class_name: pred.class_name(class_id),
                    confidence,
                    score: confidence * class_prob,
                });
            }
        }
    }
    Ok(out)
}

fn rank(a: &(usize, &Detection), b: &(usize, &Detection)) -> Ordering {
    b.1.score
        .total_cmp(&a.1.score)
        .then(a.1.class_id.cmp(&b.1.class_id))
        .then(a.0.cmp(&b.0))
}

/// Greedy per-class suppression. A detection is dropped when it overlaps an
/// already-kept detection of the same class with IoU above `iou_threshold`.
/// Output is ordered by descending score.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<(usize, &Detection)> = detections.iter().enumerate().collect();
    order.sort_by(rank);
    let mut kept: Vec<&Detection> = Vec::new();
    for (_, det) in order {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == det.class_id && iou(&k.bbox, &det.bbox) > iou_threshold);
        if !suppressed {
            kept.push(det);
        }
    }
    kept.into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(bbox: BBox, class_id: usize, score: f64) -> Detection {
        Detection {
            bbox,
            class_id,
            class_name: format!("class_{class_id}"),
            confidence: score,
            score,
        }
    }

    #[test]
    fn iou_examples() {
        let a = b(0.1, 0.2, 0.5, 0.7);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(0.6, 0.0, 0.9, 0.1)), 0.0);
        let v = iou(&b(0.0, 0.0, 0.2, 0.2), &b(0.1, 0.1, 0.3, 0.3));
        assert!((v - 1.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn touching_and_degenerate_boxes() {
        assert_eq!(iou(&b(0.0, 0.0, 0.5, 0.5), &b(0.5, 0.0, 1.0, 0.5)), 0.0);
        let point = b(0.3, 0.3, 0.3, 0.3);
        assert_eq!(iou(&point, &point), 0.0);
        assert_eq!(iou(&point, &b(0.0, 0.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn bbox_validation() {
        assert!(BBox::new(0.5, 0.0, 0.4, 1.0).is_err());
        assert!(BBox::new(-0.1, 0.0, 0.4, 1.0).is_err());
        let c = BBox::from_center(0.95, 0.05, 0.2, 0.2);
        assert_eq!(c.to_array(), [0.85, 0.0, 1.0, 0.15000000000000002]);
    }

    #[test]
    fn decode_all_zero_is_empty() {
        let p = GridPrediction::new(3, 2, 4, vec![0.0; 9 * 14]).unwrap();
        assert!(decode_grid(&p, DEFAULT_CONF_THRESHOLD).unwrap().is_empty());
    }

    #[test]
    fn decode_single_cell() {
        let p = GridPrediction::new(1, 1, 1, vec![0.5, 0.5, 0.5, 0.5, 0.9, 1.0]).unwrap();
        let d = decode_grid(&p, 0.25).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox.to_array(), [0.25, 0.25, 0.75, 0.75]);
        assert!((d[0].score - 0.9).abs() < 1e-12);
        assert_eq!(d[0].class_name, "class_0");

        let low = GridPrediction::new(1, 1, 1, vec![0.5, 0.5, 0.5, 0.5, 0.2, 1.0]).unwrap();
        assert!(decode_grid(&low, 0.25).unwrap().is_empty());
    }

    #[test]
    fn decode_uses_cell_offsets() {
        // S=2, cell (row 1, col 0) holds a box at its centre
        let mut values = vec![0.0; 4 * 7];
        let cell = 2 * 7;
        values[cell..cell + 7].copy_from_slice(&[0.5, 0.5, 0.2, 0.2, 0.8, 0.3, 0.6]);
        let p = GridPrediction::new(2, 1, 2, values)
            .unwrap()
            .with_class_names(vec!["person".into(), "bag".into()])
            .unwrap();
        let d = decode_grid(&p, 0.5).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox.center(), (0.25, 0.75));
        assert_eq!(d[0].class_id, 1);
        assert_eq!(d[0].class_name, "bag");
        assert!((d[0].score - 0.48).abs() < 1e-12);
    }

    #[test]
    fn decode_rejects_bad_values() {
        assert!(matches!(
            GridPrediction::new(1, 1, 1, vec![0.0; 5]),
            Err(DetectorError::ValueCount { .. })
        ));
        assert!(matches!(
            GridPrediction::new(1, 1, 1, vec![0.0, 0.0, 0.0, 0.0, 1.5, 0.0]),
            Err(DetectorError::OutOfRange { index: 4, .. })
        ));
    }

    #[test]
    fn nms_examples() {
        let one = vec![det(b(0.1, 0.1, 0.2, 0.2), 0, 0.7)];
        assert_eq!(nms(&one, 0.5), one);

        let bx = b(0.1, 0.1, 0.4, 0.4);
        let dup = vec![det(bx, 0, 0.8), det(bx, 0, 0.9)];
        let kept = nms(&dup, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);

        let apart = vec![det(b(0.0, 0.0, 0.1, 0.1), 0, 0.5), det(b(0.5, 0.5, 0.9, 0.9), 0, 0.6)];
        assert_eq!(nms(&apart, 0.0).len(), 2);
    }

    #[test]
    fn nms_is_per_class() {
        let bx = b(0.1, 0.1, 0.4, 0.4);
        let mixed = vec![det(bx, 0, 0.9), det(bx, 1, 0.8)];
        assert_eq!(nms(&mixed, 0.5).len(), 2);
    }

    #[test]
    fn nms_threshold_is_strict() {
        // IoU exactly 0.5: not above the threshold, so both survive
        let a = b(0.0, 0.0, 0.5, 0.5);
        let c = b(0.0, 0.0, 0.5, 0.25);
        assert_eq!(iou(&a, &c), 0.5);
        assert_eq!(nms(&[det(a, 0, 0.9), det(c, 0, 0.8)], 0.5).len(), 2);
    }
}
