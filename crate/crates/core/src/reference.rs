//! Hand-constructed reference model.
//!
//! The intensity model maps an 8x8 grayscale frame to `[normal, crime]`
//! probabilities whose crime component rises monotonically with mean pixel
//! intensity: a 2x2 stride-2 averaging convolution, ReLU, flatten, and a dense
//! layer whose crime logit is `8 * (mean - 0.5)` against a zero normal logit.
//! A mid-grey frame therefore sits exactly on the 0.5 boundary.

use crate::classifier::{Layer, ModelSpec, DEFAULT_CLASS_LABELS};
use crate::tensor::Kernel;

pub const INTENSITY_INPUT: usize = 8;
/// Logit slope per unit of mean intensity.
pub const INTENSITY_GAIN: f64 = 8.0;

pub fn intensity_model() -> ModelSpec {
    let pooled = (INTENSITY_INPUT / 2) * (INTENSITY_INPUT / 2);
    let average = Kernel::new(2, 2, 1, 1, vec![0.25; 4], vec![0.0]).expect("valid kernel");
    let mut weights = vec![0.0; pooled];
    weights.extend(std::iter::repeat_n(INTENSITY_GAIN / pooled as f64, pooled));
    let bias = vec![0.0, -INTENSITY_GAIN / 2.0];
    ModelSpec::new(
        "intensity-reference",
        (INTENSITY_INPUT, INTENSITY_INPUT, 1),
        vec![
            Layer::Conv {
                kernel: average,
                stride: 2,
            },
            Layer::Relu,
            Layer::Flatten,
            Layer::dense(pooled, 2, weights, bias).expect("valid dense"),
            Layer::Softmax,
        ],
        DEFAULT_CLASS_LABELS.iter().map(|s| s.to_string()).collect(),
        None,
    )
    .expect("reference model shapes chain")
}
