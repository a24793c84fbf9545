//! Surveillance video analytics: per-frame CNN classification with k-of-N
//! alarm aggregation, grid-detection post-processing (IoU, NMS), activity
//! heatmaps, and debounced webhook alerts.
//!
//! Frames are binary netpbm stills read in filename order; time is frame
//! index divided by the configured frame rate.

pub mod alerting;
pub mod classifier;
pub mod detector;
pub mod heatmap;
pub mod imaging;
pub mod pipeline;
pub mod reference;
pub mod tensor;

pub use classifier::{AlarmAggregator, AlarmDecision, FrameVerdict, ModelSpec};
pub use detector::{BBox, Detection, GridPrediction};
pub use heatmap::HeatmapGrid;
pub use imaging::Frame;
pub use tensor::{Kernel, Tensor};
