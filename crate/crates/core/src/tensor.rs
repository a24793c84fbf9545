//! Dense tensor math for the CNN forward pass.
//!
//! Tensors are stored row-major with channels varying fastest, so the element
//! at `(row, col, ch)` lives at `(row * width + col) * channels + ch`. All
//! arithmetic is done in `f64`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {actual} does not match shape {height}x{width}x{channels}")]
    ShapeMismatch {
        height: usize,
        width: usize,
        channels: usize,
        actual: usize,
    },
    #[error("{what} contains a non-finite value at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("kernel expects {expected} input channels but input has {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("kernel {kh}x{kw} does not fit inside input {height}x{width}")]
    KernelTooLarge {
        kh: usize,
        kw: usize,
        height: usize,
        width: usize,
    },
    #[error("{what} must be at least 1")]
    ZeroExtent { what: &'static str },
    #[error("pool window {ph}x{pw} larger than input {height}x{width}")]
    WindowTooLarge {
        ph: usize,
        pw: usize,
        height: usize,
        width: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("softmax of an empty vector")]
    EmptyInput,
}

fn check_finite(what: &'static str, values: &[f64]) -> Result<(), TensorError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TensorError::NonFinite { what, index }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, TensorError> {
        if data.len() != height * width * channels {
            return Err(TensorError::ShapeMismatch {
                height,
                width,
                channels,
                actual: data.len(),
            });
        }
        check_finite("tensor", &data)?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Convolution kernel. Weights are indexed `[ky][kx][in_ch][out_ch]`, flattened
/// in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    kh: usize,
    kw: usize,
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Kernel {
    pub fn new(
        kh: usize,
        kw: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, TensorError> {
        if kh == 0 || kw == 0 {
            return Err(TensorError::ZeroExtent {
                what: "kernel extent",
            });
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(TensorError::ZeroExtent {
                what: "kernel channel count",
            });
        }
        let expected = kh * kw * in_channels * out_channels;
        if weights.len() != expected {
            return Err(TensorError::Dimension(format!(
                "kernel needs {expected} weights, got {}",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(TensorError::Dimension(format!(
                "kernel needs {out_channels} biases, got {}",
                bias.len()
            )));
        }
        check_finite("kernel weights", &weights)?;
        check_finite("kernel bias", &bias)?;
        Ok(Self {
            kh,
            kw,
            in_channels,
            out_channels,
            weights,
            bias,
        })
    }

    /// Single-channel 2D kernel given as rows.
    pub fn from_2d(rows: &[&[f64]], bias: f64) -> Result<Self, TensorError> {
        let kh = rows.len();
        let kw = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != kw) {
            return Err(TensorError::Dimension("ragged kernel rows".into()));
        }
        Self::new(kh, kw, 1, 1, rows.concat(), vec![bias])
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    fn weight(&self, ky: usize, kx: usize, ci: usize, co: usize) -> f64 {
        self.weights[((ky * self.kw + kx) * self.in_channels + ci) * self.out_channels + co]
    }
}

/// Output extent of a valid-padding sliding window.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}

/// Valid-padding cross-correlation.
pub fn conv2d(input: &Tensor, kernel: &Kernel, stride: usize) -> Result<Tensor, TensorError> {
    if stride == 0 {
        return Err(TensorError::ZeroExtent { what: "stride" });
    }
    if kernel.in_channels != input.channels {
        return Err(TensorError::ChannelMismatch {
            expected: kernel.in_channels,
            actual: input.channels,
        });
    }
    if kernel.kh > input.height || kernel.kw > input.width {
        return Err(TensorError::KernelTooLarge {
            kh: kernel.kh,
            kw: kernel.kw,
            height: input.height,
            width: input.width,
        });
    }
    let out_h = conv_output_dim(input.height, kernel.kh, stride);
    let out_w = conv_output_dim(input.width, kernel.kw, stride);
    let out_c = kernel.out_channels;
    let mut data = Vec::with_capacity(out_h * out_w * out_c);
    for oy in 0..out_h {
        for ox in 0..out_w {
            for co in 0..out_c {
                let mut acc = 0.0;
                for ky in 0..kernel.kh {
                    for kx in 0..kernel.kw {
                        for ci in 0..input.channels {
                            acc += input.get(oy * stride + ky, ox * stride + kx, ci)
                                * kernel.weight(ky, kx, ci, co);
                        }
                    }
                }
                data.push(acc + kernel.bias[co]);
            }
        }
    }
    Tensor::new(out_h, out_w, out_c, data)
}

/// Max pooling with stride equal to the window; partial trailing windows are dropped.
pub fn maxpool2d(input: &Tensor, ph: usize, pw: usize) -> Result<Tensor, TensorError> {
    if ph == 0 || pw == 0 {
        return Err(TensorError::ZeroExtent {
            what: "pool window",
        });
    }
    if ph > input.height || pw > input.width {
        return Err(TensorError::WindowTooLarge {
            ph,
            pw,
            height: input.height,
            width: input.width,
        });
    }
    let out_h = input.height / ph;
    let out_w = input.width / pw;
    let mut data = Vec::with_capacity(out_h * out_w * input.channels);
    for oy in 0..out_h {
        for ox in 0..out_w {
            for ch in 0..input.channels {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..ph {
                    for dx in 0..pw {
                        best = best.max(input.get(oy * ph + dy, ox * pw + dx, ch));
                    }
                }
                data.push(best);
            }
        }
    }
    Tensor::new(out_h, out_w, input.channels, data)
}

pub fn flatten(input: &Tensor) -> Vec<f64> {
    input.data.clone()
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
pub fn dense(input: &[f64], weights: &[f64], bias: &[f64]) -> Result<Vec<f64>, TensorError> {
    let outputs = bias.len();
    if weights.len() != outputs * input.len() {
        return Err(TensorError::Dimension(format!(
            "dense weights have {} entries, expected {} x {}",
            weights.len(),
            outputs,
            input.len()
        )));
    }
    if input.is_empty() {
        return Ok(bias.to_vec());
    }
    Ok(weights
        .chunks_exact(input.len())
        .zip(bias)
        .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect())
}

pub fn relu(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| v.max(0.0)).collect()
}

pub fn softmax(input: &[f64]) -> Result<Vec<f64>, TensorError> {
    if input.is_empty() {
        return Err(TensorError::EmptyInput);
    }
    check_finite("softmax input", input)?;
    let max = input.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = input.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Weight count of a fully connected layer, bias excluded.
pub fn dense_weight_count(inputs: u64, outputs: u64) -> u64 {
    inputs * outputs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(rows: &[&[f64]]) -> Tensor {
        Tensor::new(rows.len(), rows[0].len(), 1, rows.concat()).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let t = Tensor::new(2, 3, 2, (0..12).map(f64::from).collect()).unwrap();
        let k = Kernel::new(1, 1, 2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(conv2d(&t, &k, 1).unwrap(), t);
        let k1 = Kernel::from_2d(&[&[1.0]], 0.0).unwrap();
        let g = single(&[&[0.1, 0.2], &[0.3, 0.4]]);
        assert_eq!(conv2d(&g, &k1, 1).unwrap(), g);
    }

    #[test]
    fn ones_kernel_on_constant_image() {
        let t = Tensor::filled(5, 5, 1, 2.0);
        let k = Kernel::new(3, 3, 1, 1, vec![1.0; 9], vec![0.0]).unwrap();
        let out = conv2d(&t, &k, 1).unwrap();
        assert_eq!(out.shape(), (3, 3, 1));
        assert!(out.data().iter().all(|&v| v == 18.0));
    }

    #[test]
    fn diagonal_kernel() {
        let t = single(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let k = Kernel::from_2d(&[&[1.0, 0.0], &[0.0, 1.0]], 0.0).unwrap();
        assert_eq!(conv2d(&t, &k, 1).unwrap().data(), &[5.0]);
    }

    #[test]
    fn strided_output_dims() {
        let t = Tensor::filled(7, 6, 1, 1.0);
        let k = Kernel::new(3, 2, 1, 4, vec![0.5; 24], vec![0.0; 4]).unwrap();
        let out = conv2d(&t, &k, 2).unwrap();
        assert_eq!(out.shape(), (3, 3, 4));
    }

    #[test]
    fn conv_errors() {
        let t = Tensor::filled(2, 2, 1, 1.0);
        let k3 = Kernel::new(3, 3, 1, 1, vec![1.0; 9], vec![0.0]).unwrap();
        assert!(matches!(
            conv2d(&t, &k3, 1),
            Err(TensorError::KernelTooLarge { .. })
        ));
        let k2c = Kernel::new(1, 1, 2, 1, vec![1.0; 2], vec![0.0]).unwrap();
        assert!(matches!(
            conv2d(&t, &k2c, 1),
            Err(TensorError::ChannelMismatch { .. })
        ));
        let k1 = Kernel::from_2d(&[&[1.0]], 0.0).unwrap();
        assert!(conv2d(&t, &k1, 0).is_err());
        assert!(matches!(
            Kernel::new(1, 1, 1, 1, vec![f64::NAN], vec![0.0]),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn tensor_rejects_bad_data() {
        assert!(Tensor::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Tensor::new(1, 1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let t = single(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(maxpool2d(&t, 2, 2).unwrap().data(), &[4.0]);

        let t = Tensor::new(4, 4, 1, (1..=16).map(f64::from).collect()).unwrap();
        assert_eq!(maxpool2d(&t, 2, 2).unwrap().data(), &[6.0, 8.0, 14.0, 16.0]);

        let c = Tensor::filled(5, 7, 2, 0.3);
        let out = maxpool2d(&c, 2, 3).unwrap();
        assert_eq!(out.shape(), (2, 2, 2));
        assert!(out.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn maxpool_rejects_zero_window() {
        let t = Tensor::filled(2, 2, 1, 0.0);
        assert!(matches!(
            maxpool2d(&t, 0, 1),
            Err(TensorError::ZeroExtent { .. })
        ));
    }

    #[test]
    fn flatten_lengths() {
        assert_eq!(flatten(&Tensor::filled(28, 28, 1, 0.0)).len(), 784);
        assert_eq!(flatten(&Tensor::filled(1920, 1080, 1, 0.0)).len(), 2_073_600);
        let t = single(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(flatten(&t), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dense_examples() {
        let x = [1.0, 2.0];
        assert_eq!(dense(&x, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap(), x);
        assert_eq!(dense(&x, &[0.0; 4], &[5.0, -1.0]).unwrap(), [5.0, -1.0]);
        assert_eq!(
            dense(&x, &[1.0, 1.0, 0.0, 3.0], &[0.0, 1.0]).unwrap(),
            [3.0, 7.0]
        );
        assert!(dense(&x, &[1.0; 3], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0]);
        assert_eq!(relu(&[0.5, 3.0]), [0.5, 3.0]);
        assert_eq!(relu(&[-0.5, -3.0]), [0.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), [0.5, 0.5]);
        assert_eq!(softmax(&[7.5]).unwrap(), [1.0]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(softmax(&[]), Err(TensorError::EmptyInput));
        // large logits stay finite
        let p = softmax(&[1000.0, 1000.0]).unwrap();
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn weight_count() {
        assert_eq!(dense_weight_count(784, 1), 784);
        assert_eq!(dense_weight_count(1920 * 1080, 64), 132_710_400);
        assert_eq!(dense_weight_count(17, 0), 0);
    }
}
