//! Browser bindings for the interactive page in `www/`.
//!
//! Boxes cross the boundary as flat `f64` arrays in normalized
//! `[x_min, y_min, x_max, y_max]` order.

use wasm_bindgen::prelude::*;

use sentinel_core::detector::{self, BBox, Detection};
use sentinel_core::heatmap::HeatmapGrid;

/// Fields per box in [`nms_kept`] input: corners, score, class id.
pub const NMS_STRIDE: usize = 6;

fn bbox(v: &[f64]) -> Result<BBox, String> {
    match v {
        [x0, y0, x1, y1] => BBox::new(*x0, *y0, *x1, *y1).map_err(|e| e.to_string()),
        _ => Err(format!("a box needs 4 values, got {}", v.len())),
    }
}

pub fn box_iou(a: &[f64], b: &[f64]) -> Result<f64, String> {
    Ok(detector::iou(&bbox(a)?, &bbox(b)?))
}

/// Indices of the boxes surviving per-class NMS, highest score first.
pub fn surviving_indices(flat: &[f64], iou_threshold: f64) -> Result<Vec<u32>, String> {
    if !flat.len().is_multiple_of(NMS_STRIDE) {
        return Err(format!("box data length {} is not a multiple of {NMS_STRIDE}", flat.len()));
    }
    let dets = flat
        .chunks(NMS_STRIDE)
        .enumerate()
        .map(|(i, c)| {
            Ok(Detection {
                bbox: bbox(&c[..4])?,
                score: c[4],
                confidence: c[4],
                class_id: c[5] as usize,
                // carries the input index through suppression
                class_name: i.to_string(),
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(detector::nms(&dets, iou_threshold)
        .iter()
        .map(|d| d.class_name.parse().unwrap())
        .collect())
}

/// RGBA pixels of a heatmap built from flat `[x, y, x, y, ...]` points.
pub fn heatmap_pixels(points: &[f64], grid: usize, cell_px: usize) -> Result<Vec<u8>, String> {
    if cell_px == 0 {
        return Err("cell size must be at least 1".into());
    }
    let mut g = HeatmapGrid::new(grid).map_err(|e| e.to_string())?;
    for p in points.chunks_exact(2) {
        g.add_point(p[0], p[1]);
    }
    Ok(g.render_rgb(cell_px)
        .chunks_exact(3)
        .flat_map(|px| [px[0], px[1], px[2], 255])
        .collect())
}

#[wasm_bindgen]
pub fn iou(a: &[f64], b: &[f64]) -> Result<f64, JsError> {
    box_iou(a, b).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn nms_kept(boxes: &[f64], iou_threshold: f64) -> Result<Vec<u32>, JsError> {
    surviving_indices(boxes, iou_threshold).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn heatmap_rgba(points: &[f64], grid: usize, cell_px: usize) -> Result<Vec<u8>, JsError> {
    heatmap_pixels(points, grid, cell_px).map_err(|e| JsError::new(&e))
}
