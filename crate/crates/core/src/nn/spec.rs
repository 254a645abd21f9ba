use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One Conv-BatchNorm-ReLU-MaxPool block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub filters: usize,
    pub pool: usize,
}

/// Architecture of the volumetric classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub in_channels: usize,
    /// Spatial extents (D, H, W).
    pub input_shape: [usize; 3],
    pub blocks: Vec<BlockSpec>,
    pub kernel: usize,
    /// Width of the first fully-connected layer.
    pub dense_hidden: usize,
    pub classes: usize,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

pub const DEFAULT_FILTERS: [usize; 4] = [8, 16, 31, 64];
pub const DEFAULT_POOLS: [usize; 4] = [2, 3, 2, 3];

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            in_channels: 1,
            input_shape: [36, 36, 36],
            blocks: DEFAULT_FILTERS
                .iter()
                .zip(DEFAULT_POOLS)
                .map(|(&filters, pool)| BlockSpec { filters, pool })
                .collect(),
            kernel: 3,
            dense_hidden: 128,
            classes: 2,
            dropout: 0.4,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl NetworkSpec {
    pub fn with_input(mut self, extent: [usize; 3]) -> Self {
        self.input_shape = extent;
        self
    }

    pub fn pool_product(&self) -> usize {
        self.blocks.iter().map(|b| b.pool).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidSpec("at least one block is required".into()));
        }
        if self.in_channels == 0 || self.classes < 2 || self.dense_hidden == 0 {
            return Err(Error::InvalidSpec(
                "channels, hidden width and class count must be positive (classes >= 2)".into(),
            ));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!(
                "kernel size {} must be odd",
                self.kernel
            )));
        }
        if let Some(b) = self.blocks.iter().find(|b| b.filters == 0 || b.pool == 0) {
            return Err(Error::InvalidSpec(format!(
                "block {b:?} needs positive filters and pool size"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidSpec(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.bn_eps <= 0.0 || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidSpec(
                "batchnorm eps/momentum out of range".into(),
            ));
        }
        let product = self.pool_product();
        for (axis, &extent) in self.input_shape.iter().enumerate() {
            if extent == 0 || extent % product != 0 {
                return Err(Error::InvalidSpec(format!(
                    "input extent {extent} on axis {axis} is not divisible by the pool product {product}"
                )));
            }
        }
        Ok(())
    }

    /// Spatial extents after each block.
    pub fn shape_chain(&self) -> Vec<[usize; 3]> {
        let mut cur = self.input_shape;
        self.blocks
            .iter()
            .map(|b| {
                cur = cur.map(|e| e / b.pool);
                cur
            })
            .collect()
    }

    pub fn feature_len(&self) -> usize {
        let last = self
            .shape_chain()
            .last()
            .copied()
            .unwrap_or(self.input_shape);
        self.blocks.last().map_or(self.in_channels, |b| b.filters) * last.iter().product::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_chain() {
        let spec = NetworkSpec::default();
        spec.validate().unwrap();
        assert_eq!(
            spec.shape_chain(),
            vec![[18, 18, 18], [6, 6, 6], [3, 3, 3], [1, 1, 1]]
        );
        assert_eq!(spec.feature_len(), 64);
        assert_eq!(spec.pool_product(), 36);
    }

    #[test]
    fn rejects_non_divisible_extent() {
        let spec = NetworkSpec::default().with_input([36, 35, 36]);
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("35"), "{err}");
    }
}
