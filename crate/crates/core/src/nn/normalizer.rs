use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-component min-max scaling into [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut iter = rows.into_iter();
        let first = iter.next().ok_or(Error::InvalidConfig("cannot fit a normalizer to no data".into()))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in iter {
            if row.len() != min.len() {
                return Err(Error::dim("normalizer input", min.len(), row.len()));
            }
            for (k, &v) in row.iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    fn span(&self, k: usize) -> f64 {
        let s = self.max[k] - self.min[k];
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn transform(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(k, x)| (x - self.min[k]) / self.span(k)).collect()
    }

    pub fn inverse(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(k, x)| self.min[k] + x * self.span(k)).collect()
    }
}
