//! The 12 perceptual attributes, their training-split statistics and the
//! z-score clamp that maps raw values into `[-0.9, 0.9]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_ATTRIBUTES: usize = 12;

/// Canonical attribute order, used everywhere a vector is serialized.
pub const ATTRIBUTE_NAMES: [&str; NUM_ATTRIBUTES] = [
    "contrast",
    "repetitiveness",
    "granularity",
    "randomness",
    "roughness",
    "density",
    "directionality",
    "structural_complexity",
    "coarseness",
    "regularity",
    "orientation",
    "uniformity",
];

pub const CONTRAST: usize = 0;
pub const REPETITIVENESS: usize = 1;
pub const GRANULARITY: usize = 2;
pub const RANDOMNESS: usize = 3;
pub const ROUGHNESS: usize = 4;
pub const DENSITY: usize = 5;
pub const DIRECTIONALITY: usize = 6;
pub const STRUCTURAL_COMPLEXITY: usize = 7;
pub const COARSENESS: usize = 8;
pub const REGULARITY: usize = 9;
pub const ORIENTATION: usize = 10;
pub const UNIFORMITY: usize = 11;

/// Scaled values live in `[-SCALED_LIMIT, SCALED_LIMIT]`.
pub const SCALED_LIMIT: f64 = 0.9;
const CLAMP_SIGMAS: f64 = 3.0;
const SCALE: f64 = 0.3;

pub fn attribute_index(name: &str) -> Option<usize> {
    ATTRIBUTE_NAMES.iter().position(|n| *n == name)
}

/// Twelve attribute values in canonical order, raw or scaled depending on
/// context.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeVector(pub [f64; NUM_ATTRIBUTES]);

impl AttributeVector {
    pub fn zeros() -> Self {
        AttributeVector([0.0; NUM_ATTRIBUTES])
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_ATTRIBUTES] = values.try_into().map_err(|_| {
            Error::InvalidArgument(format!(
                "expected {NUM_ATTRIBUTES} attribute values, got {}",
                values.len()
            ))
        })?;
        Ok(AttributeVector(arr))
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        attribute_index(name).map(|i| self.0[i])
    }

    /// Index of the first component outside the scaled range, if any.
    pub fn out_of_range(&self, tolerance: f64) -> Option<usize> {
        self.0
            .iter()
            .position(|v| !v.is_finite() || v.abs() > SCALED_LIMIT + tolerance)
    }

    pub fn check_scaled(&self) -> Result<()> {
        match self.out_of_range(1e-6) {
            Some(i) => Err(Error::InvalidArgument(format!(
                "attribute {i} ({}) = {} is outside [-0.9, 0.9]; was it scaled?",
                ATTRIBUTE_NAMES[i], self.0[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Per-attribute mean and standard deviation over a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub mean: [f64; NUM_ATTRIBUTES],
    pub std: [f64; NUM_ATTRIBUTES],
}

impl AttributeStats {
    /// Population statistics; rejects attributes with zero spread.
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a AttributeVector>) -> Result<Self> {
        let rows: Vec<&AttributeVector> = samples.into_iter().collect();
        if rows.is_empty() {
            return Err(Error::InvalidArgument("no samples for attribute statistics".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; NUM_ATTRIBUTES];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.0) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = [0.0; NUM_ATTRIBUTES];
        for r in &rows {
            for j in 0..NUM_ATTRIBUTES {
                std[j] += (r.0[j] - mean[j]).powi(2);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        let stats = AttributeStats { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..NUM_ATTRIBUTES {
            if !(self.std[j] > 0.0 && self.std[j].is_finite() && self.mean[j].is_finite()) {
                return Err(Error::StatsMismatch(format!(
                    "attribute `{}` is degenerate (mean {}, std {})",
                    ATTRIBUTE_NAMES[j], self.mean[j], self.std[j]
                )));
            }
        }
        Ok(())
    }

    /// `min(max((f - E) / σ, -3), 3) * 0.3` componentwise.
    pub fn scale(&self, raw: &AttributeVector) -> Result<AttributeVector> {
        self.validate()?;
        let mut out = [0.0; NUM_ATTRIBUTES];
        for j in 0..NUM_ATTRIBUTES {
            out[j] = scale_one(raw.0[j], self.mean[j], self.std[j]);
        }
        Ok(AttributeVector(out))
    }

    /// Inverse of [`scale`](Self::scale) inside the clamp region.
    pub fn unscale(&self, scaled: &AttributeVector) -> AttributeVector {
        let mut out = [0.0; NUM_ATTRIBUTES];
        for j in 0..NUM_ATTRIBUTES {
            out[j] = self.mean[j] + scaled.0[j] / SCALE * self.std[j];
        }
        AttributeVector(out)
    }
}

pub fn scale_one(f: f64, mean: f64, std: f64) -> f64 {
    ((f - mean) / std).clamp(-CLAMP_SIGMAS, CLAMP_SIGMAS) * SCALE
}

pub fn scale_attributes(raw: &AttributeVector, stats: &AttributeStats) -> Result<AttributeVector> {
    stats.scale(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_stats() -> AttributeStats {
        AttributeStats {
            mean: [0.5; NUM_ATTRIBUTES],
            std: [0.1; NUM_ATTRIBUTES],
        }
    }

    #[test]
    fn scaling_examples() {
        let s = unit_stats();
        assert_eq!(scale_one(0.5, 0.5, 0.1), 0.0);
        assert!((scale_one(0.5 + 5.0 * 0.1, 0.5, 0.1) - 0.9).abs() < 1e-12);
        assert!((scale_one(0.4, 0.5, 0.1) + 0.3).abs() < 1e-12);
        let v = s.scale(&AttributeVector([0.45; NUM_ATTRIBUTES])).unwrap();
        assert!(v.0.iter().all(|x| (x + 0.15).abs() < 1e-12));
        let back = s.unscale(&v);
        assert!(back.0.iter().all(|x| (x - 0.45).abs() < 1e-12));
    }

    #[test]
    fn zero_spread_rejected() {
        let mut s = unit_stats();
        s.std[3] = 0.0;
        let err = s.scale(&AttributeVector::zeros()).unwrap_err().to_string();
        assert!(err.contains("randomness"), "{err}");
        let same = [AttributeVector::zeros(), AttributeVector::zeros()];
        assert!(AttributeStats::from_samples(&same).is_err());
    }

    #[test]
    fn population_statistics() {
        let rows = [AttributeVector([1.0; NUM_ATTRIBUTES]), AttributeVector([3.0; NUM_ATTRIBUTES])];
        let s = AttributeStats::from_samples(&rows).unwrap();
        assert_eq!(s.mean, [2.0; NUM_ATTRIBUTES]);
        assert_eq!(s.std, [1.0; NUM_ATTRIBUTES]);
    }

    #[test]
    fn range_check_names_index() {
        let mut v = AttributeVector::zeros();
        assert!(v.check_scaled().is_ok());
        v.0[4] = -0.95;
        assert_eq!(v.out_of_range(1e-6), Some(4));
        assert!(v.check_scaled().unwrap_err().to_string().contains("roughness"));
        assert_eq!(attribute_index("directionality"), Some(DIRECTIONALITY));
        assert!(AttributeVector::from_slice(&[0.0; 11]).is_err());
    }
}
