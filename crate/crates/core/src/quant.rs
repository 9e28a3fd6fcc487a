//! Per-channel weight scaling driven by activation maxima, and per-tensor
//! symmetric INT8 quantization.
//!
//! Scaling multiplies every input-channel column `c` of the weight by
//! `s_c = channel_max[c]^alpha`; the matching activations are divided by the
//! same factor, so the layer output is unchanged in exact arithmetic. The
//! wider weight range this produces quantizes to a peakier int8 histogram,
//! which the entropy coder then exploits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ActivationStats, WeightTensor};

/// Floor applied to scale factors of channels with zero calibration activation.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Largest quantized magnitude; -128 is never produced.
pub const QMAX: i8 = 127;

/// The alpha grid `{0, 0.1, ..., 1.0}`.
pub fn alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Per-input-channel scale factors.
///
/// Factors are kept at f32 precision so that the container, which stores them
/// as f32, reproduces them exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleVector {
    alpha: f64,
    s: Vec<f64>,
}

impl ScaleVector {
    pub fn identity(cols: usize) -> Self {
        Self { alpha: 0.0, s: vec![1.0; cols] }
    }

    /// Rebuilds a vector from stored f32 factors.
    pub fn from_f32(alpha: f64, s: &[f32]) -> Result<Self> {
        check_alpha(alpha)?;
        if let Some(pos) = s.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "scale factor {pos} is not a positive finite number"
            )));
        }
        Ok(Self { alpha, s: s.iter().map(|&v| v as f64).collect() })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn factors(&self) -> &[f64] {
        &self.s
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.s.iter().map(|&v| v as f32).collect()
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.s.iter().all(|&v| v == 1.0)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// `s_i = channel_max[i]^alpha`, floored at [`SCALE_FLOOR`].
pub fn compute_scale(stats: &ActivationStats, alpha: f64) -> Result<ScaleVector> {
    check_alpha(alpha)?;
    let s = stats
        .channel_max
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let raw = if alpha == 0.0 { 1.0 } else { m.powf(alpha).max(SCALE_FLOOR) };
            let v = raw as f32;
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "scale factor for channel {i} of `{}` overflows f32",
                    stats.name
                )));
            }
            Ok(v as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScaleVector { alpha, s })
}

/// A weight tensor that has been multiplied column-wise by a scale vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledTensor {
    pub tensor: WeightTensor,
    pub scale: ScaleVector,
}

pub fn scale_weights(w: &WeightTensor, sv: &ScaleVector) -> Result<ScaledTensor> {
    if sv.len() != w.cols() {
        return Err(Error::DimensionMismatch(format!(
            "scale vector has {} entries, `{}` has {} input channels",
            sv.len(),
            w.name(),
            w.cols()
        )));
    }
    let cols = w.cols();
    let values = w
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * sv.s[i % cols])
        .collect();
    Ok(ScaledTensor {
        tensor: WeightTensor::new(w.name(), w.rows(), cols, values)?,
        scale: sv.clone(),
    })
}

/// An int8 tensor plus what is needed to map it back to floats.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub qvalues: Vec<i8>,
    /// `max|W'|` of the quantized (scaled) weights; the step size is this over 127.
    pub max_abs: f64,
    pub scale: ScaleVector,
}

impl QuantizedTensor {
    /// Dequantization step: `max|W'| / 127`.
    pub fn w_scale(&self) -> f64 {
        self.max_abs / QMAX as f64
    }

    pub fn len(&self) -> usize {
        self.qvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qvalues.is_empty()
    }

    pub fn as_bytes(&self) -> Vec<u8> {
        self.qvalues.iter().map(|&q| q as u8).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidTensor { name: self.name.clone(), reason };
        if self.rows.checked_mul(self.cols) != Some(self.qvalues.len()) {
            return Err(bad(format!("{} values for shape {}x{}", self.qvalues.len(), self.rows, self.cols)));
        }
        if self.qvalues.contains(&i8::MIN) {
            return Err(bad("value -128 outside the symmetric range".into()));
        }
        if !(self.max_abs.is_finite() && self.max_abs > 0.0) {
            return Err(bad(format!("max_abs {} is not positive", self.max_abs)));
        }
        if self.scale.len() != self.cols {
            return Err(bad(format!("scale vector has {} entries", self.scale.len())));
        }
        Ok(())
    }
}

/// Symmetric per-tensor quantization of a slice: returns the codes and `max|v|`.
pub fn quantize_values(values: &[f64]) -> Result<(Vec<i8>, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::ZeroDynamicRange);
    }
    if !max_abs.is_finite() {
        return Err(Error::InvalidParameter("non-finite value in quantizer input".into()));
    }
    let q = values
        .iter()
        .map(|&v| {
            // f64::round is half-away-from-zero
            let code = (v * QMAX as f64 / max_abs).round();
            code.clamp(-(QMAX as f64), QMAX as f64) as i8
        })
        .collect();
    Ok((q, max_abs))
}

fn dequantize_code(q: i8, max_abs: f64) -> f64 {
    // q/127 first so that +-127 maps back to exactly +-max_abs
    (q as f64 / QMAX as f64) * max_abs
}

/// Quantizes an unscaled tensor (identity scale vector).
pub fn quantize(w: &WeightTensor) -> Result<QuantizedTensor> {
    quantize_scaled(&ScaledTensor {
        tensor: w.clone(),
        scale: ScaleVector::identity(w.cols()),
    })
}

pub fn quantize_scaled(w: &ScaledTensor) -> Result<QuantizedTensor> {
    let t = &w.tensor;
    let (qvalues, max_abs) =
        quantize_values(t.values()).map_err(|e| e.context(format!("quantizing `{}`", t.name())))?;
    Ok(QuantizedTensor {
        name: t.name().to_string(),
        rows: t.rows(),
        cols: t.cols(),
        qvalues,
        max_abs,
        scale: w.scale.clone(),
    })
}

/// Undoes quantization and the per-channel scaling.
pub fn dequantize(q: &QuantizedTensor) -> Result<WeightTensor> {
    q.validate()?;
    let s = q.scale.factors();
    let values = q
        .qvalues
        .iter()
        .enumerate()
        .map(|(i, &code)| dequantize_code(code, q.max_abs) / s[i % q.cols])
        .collect();
    WeightTensor::new(q.name.clone(), q.rows, q.cols, values)
}

/// Distribution of the stored int8 codes.
pub fn analyze_quantized(q: &QuantizedTensor) -> Result<crate::tensor::DistributionReport> {
    crate::tensor::analyze_int8(&q.qvalues)
}

/// Compute scale, scale, quantize: the per-tensor front half of the pipeline.
pub fn scale_and_quantize(
    w: &WeightTensor,
    stats: &ActivationStats,
    alpha: f64,
) -> Result<QuantizedTensor> {
    stats.check_matches(w.cols())?;
    let sv = compute_scale(stats, alpha)?;
    quantize_scaled(&scale_weights(w, &sv)?)
}

/// A batch of calibration activations, `tokens x cols`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSample {
    tokens: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ActivationSample {
    pub fn new(tokens: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if tokens.checked_mul(cols) != Some(values.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{} activation values for {tokens}x{cols}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite activation".into()));
        }
        Ok(Self { tokens, cols, values })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Per-channel `max|x|` over all tokens.
    pub fn channel_max(&self) -> Vec<f64> {
        let mut m = vec![0.0f64; self.cols];
        for row in self.values.chunks(self.cols.max(1)) {
            for (acc, v) in m.iter_mut().zip(row) {
                *acc = acc.max(v.abs());
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerErrorReport {
    pub alpha: f64,
    /// `||(X/s)(sW)^T - XW^T|| / ||XW^T||` without quantization.
    pub scaling_identity_error: f64,
    /// `||Y_int8 - XW^T|| / ||XW^T||` with both operands quantized.
    pub quantized_error: f64,
}

/// `Y = X W^T` for `x: t x k` and `w: n x k`, both row-major.
pub(crate) fn matmul_nt(x: &[f64], t: usize, w: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut y = vec![0.0; t * n];
    for i in 0..t {
        let xr = &x[i * k..(i + 1) * k];
        for j in 0..n {
            let wr = &w[j * k..(j + 1) * k];
            y[i * n + j] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
        }
    }
    y
}

pub(crate) fn relative_error(approx: &[f64], exact: &[f64]) -> f64 {
    let num: f64 = approx.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = exact.iter().map(|b| b * b).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Runs one linear layer in full precision and through the scaled INT8 path.
///
/// The scale vector is derived from the channel maxima of `x` itself.
pub fn simulate_layer(x: &ActivationSample, w: &WeightTensor, alpha: f64) -> Result<LayerErrorReport> {
    if x.cols() != w.cols() {
        return Err(Error::DimensionMismatch(format!(
            "activations have {} channels, `{}` has {} input channels",
            x.cols(),
            w.name(),
            w.cols()
        )));
    }
    let (t, k, n) = (x.tokens(), x.cols(), w.rows());
    let stats = ActivationStats::new(w.name(), x.channel_max())?;
    let sv = compute_scale(&stats, alpha)?;
    let s = sv.factors();

    let x_scaled: Vec<f64> = x.values().iter().enumerate().map(|(i, v)| v / s[i % k]).collect();
    let w_scaled = scale_weights(w, &sv)?;

    let y_fp = matmul_nt(x.values(), t, w.values(), n, k);
    let y_scaled = matmul_nt(&x_scaled, t, w_scaled.tensor.values(), n, k);

    let (qx, x_max) = quantize_values(&x_scaled).map_err(|e| e.context("quantizing activations"))?;
    let (qw, w_max) = quantize_values(w_scaled.tensor.values())
        .map_err(|e| e.context(format!("quantizing `{}`", w.name())))?;
    let xd: Vec<f64> = qx.iter().map(|&q| dequantize_code(q, x_max)).collect();
    let wd: Vec<f64> = qw.iter().map(|&q| dequantize_code(q, w_max)).collect();
    let y_q = matmul_nt(&xd, t, &wd, n, k);

    Ok(LayerErrorReport {
        alpha,
        scaling_identity_error: relative_error(&y_scaled, &y_fp),
        quantized_error: relative_error(&y_q, &y_fp),
    })
}
