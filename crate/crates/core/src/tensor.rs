//! Weight and activation-statistics types plus distribution analytics.
//!
//! The analytics here are what the rest of the toolkit uses to reason about
//! compressibility: how many values sit near zero, how much information a
//! byte of the serialized tensor carries, and how many values fall outside
//! the box-plot whiskers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Float values with magnitude below this count as near zero.
pub const FLOAT_NEAR_ZERO: f64 = 1e-2;

/// Int8 values with magnitude at or below this count as near zero.
pub const INT8_NEAR_ZERO: i8 = 1;

/// A 2-D weight matrix. Rows are output channels, columns are input channels.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl WeightTensor {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected = rows.checked_mul(cols).ok_or_else(|| Error::InvalidTensor {
            name: name.clone(),
            reason: "shape overflows".into(),
        })?;
        if values.len() != expected {
            return Err(Error::InvalidTensor {
                name,
                reason: format!("{} values for shape {rows}x{cols}", values.len()),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor {
                name,
                reason: format!("non-finite value at index {pos}"),
            });
        }
        Ok(Self { name, rows, cols, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Per-input-channel maximum absolute activation collected during calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationStats {
    pub name: String,
    pub channel_max: Vec<f64>,
}

impl ActivationStats {
    pub fn new(name: impl Into<String>, channel_max: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if let Some(pos) = channel_max.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidTensor {
                name,
                reason: format!("channel_max[{pos}] is negative or non-finite"),
            });
        }
        Ok(Self { name, channel_max })
    }

    pub fn len(&self) -> usize {
        self.channel_max.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channel_max.is_empty()
    }

    /// Checks that the statistics describe the input channels of `w`.
    pub fn check_matches(&self, cols: usize) -> Result<()> {
        if self.channel_max.len() != cols {
            return Err(Error::DimensionMismatch(format!(
                "stats `{}` has {} channels, tensor has {cols} input channels",
                self.name,
                self.channel_max.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub near_zero_fraction: f64,
    /// Bits per symbol, in `[0, 8]`.
    pub byte_entropy: f64,
    pub outlier_count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub stddev: f64,
}

/// Shannon entropy in bits of a histogram given as raw counts.
pub fn shannon_entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

pub fn byte_histogram(data: &[u8]) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &b in data {
        hist[b as usize] += 1;
    }
    hist
}

/// Empirical entropy of a byte stream, bits per byte.
pub fn byte_entropy(data: &[u8]) -> f64 {
    shannon_entropy(&byte_histogram(data))
}

/// Uncompressed size divided by compressed size.
pub fn compression_ratio(original_bytes: u64, compressed_bytes: u64) -> Result<f64> {
    if compressed_bytes == 0 {
        return Err(Error::InvalidParameter("compressed size is zero".into()));
    }
    Ok(original_bytes as f64 / compressed_bytes as f64)
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Values of `|v|` outside the 1.5×IQR whiskers.
fn whisker_outliers(mut magnitudes: Vec<f64>) -> usize {
    magnitudes.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&magnitudes, 0.25);
    let q3 = quantile_sorted(&magnitudes, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    magnitudes.iter().filter(|&&m| m < lo || m > hi).count()
}

fn moments(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64, f64, f64) {
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut sum = 0.0;
    for v in values.clone() {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (min, max, mean, var.sqrt())
}

pub fn analyze_float(t: &WeightTensor) -> Result<DistributionReport> {
    analyze_float_values(t.values())
}

pub fn analyze_float_values(values: &[f64]) -> Result<DistributionReport> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = values.len();
    let (min, max, mean, stddev) = moments(values.iter().copied(), n);

    let near_zero = values.iter().filter(|v| v.abs() < FLOAT_NEAR_ZERO).count();

    let mut hist = [0u64; 256];
    let span = max - min;
    if span > 0.0 {
        for &v in values {
            let bin = (((v - min) / span) * 256.0).floor() as usize;
            hist[bin.min(255)] += 1;
        }
    } else {
        hist[0] = n as u64;
    }

    Ok(DistributionReport {
        near_zero_fraction: near_zero as f64 / n as f64,
        byte_entropy: shannon_entropy(&hist),
        outlier_count: whisker_outliers(values.iter().map(|v| v.abs()).collect()),
        min,
        max,
        mean,
        stddev,
    })
}

/// Distribution of raw int8 values, as stored in a quantized tensor.
pub fn analyze_int8(values: &[i8]) -> Result<DistributionReport> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = values.len();
    let (min, max, mean, stddev) = moments(values.iter().map(|&v| v as f64), n);
    let near_zero = values
        .iter()
        .filter(|v| v.unsigned_abs() <= INT8_NEAR_ZERO as u8)
        .count();
    let mut hist = [0u64; 256];
    for &v in values {
        hist[v as u8 as usize] += 1;
    }
    Ok(DistributionReport {
        near_zero_fraction: near_zero as f64 / n as f64,
        byte_entropy: shannon_entropy(&hist),
        outlier_count: whisker_outliers(values.iter().map(|v| (*v as f64).abs()).collect()),
        min,
        max,
        mean,
        stddev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_tensor_has_zero_entropy() {
        let t = WeightTensor::new("c", 10, 10, vec![0.5; 100]).unwrap();
        let r = analyze_float(&t).unwrap();
        assert_eq!(r.byte_entropy, 0.0);
        assert_eq!(r.near_zero_fraction, 0.0);
        assert_eq!(r.outlier_count, 0);
    }

    #[test]
    fn all_zero_tensor_is_fully_near_zero() {
        let t = WeightTensor::new("z", 4, 8, vec![0.0; 32]).unwrap();
        assert_eq!(analyze_float(&t).unwrap().near_zero_fraction, 1.0);
    }

    #[test]
    fn empty_input_is_rejected() {
        let t = WeightTensor::new("e", 0, 5, vec![]).unwrap();
        assert!(matches!(analyze_float(&t), Err(Error::EmptyInput)));
        assert!(matches!(analyze_int8(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn tensor_rejects_bad_shapes_and_nan() {
        assert!(WeightTensor::new("a", 2, 2, vec![0.0; 3]).is_err());
        assert!(WeightTensor::new("a", 1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(WeightTensor::new("a", 1, 1, vec![f64::INFINITY]).is_err());
        assert!(ActivationStats::new("a", vec![1.0, -0.5]).is_err());
    }

    #[test]
    fn int8_near_zero_band() {
        let r = analyze_int8(&[0; 64]).unwrap();
        assert_eq!(r.near_zero_fraction, 1.0);
        assert_eq!(r.byte_entropy, 0.0);

        let r = analyze_int8(&[-1, 0, 1]).unwrap();
        assert_eq!(r.near_zero_fraction, 1.0);

        let r = analyze_int8(&[-2, 0, 2, 127]).unwrap();
        assert_eq!(r.near_zero_fraction, 0.25);
    }

    #[test]
    fn compression_ratio_definition() {
        assert_eq!(compression_ratio(1000, 500).unwrap(), 2.0);
        assert_eq!(compression_ratio(1000, 1000).unwrap(), 1.0);
        assert!((compression_ratio(1540, 1000).unwrap() - 1.54).abs() < 1e-15);
        assert!(compression_ratio(10, 0).is_err());
    }

    #[test]
    fn entropy_of_equiprobable_symbols() {
        for k in [1usize, 2, 3, 7, 16, 200, 256] {
            let counts = vec![5u64; k];
            assert!((shannon_entropy(&counts) - (k as f64).log2()).abs() < 1e-9);
        }
    }

    #[test]
    fn whiskers_flag_a_single_spike() {
        let mut v = vec![0.1; 99];
        v.push(10.0);
        let r = analyze_float_values(&v).unwrap();
        assert_eq!(r.outlier_count, 1);
        assert_eq!(r.max, 10.0);
    }
}
