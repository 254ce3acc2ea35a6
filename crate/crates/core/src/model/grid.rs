use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Discretized incentive levels `d_0 < d_1 < ... < d_{D-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct IncentiveGrid {
    levels: Vec<f64>,
}

impl IncentiveGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::invalid(format!(
                "an incentive grid needs at least 2 levels, got {}",
                levels.len()
            )));
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid("incentive levels must be finite"));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("incentive levels must be strictly increasing"));
        }
        Ok(Self { levels })
    }

    /// `0, stride, 2*stride, ...` up to and including `max` when it is a multiple.
    pub fn stride(max: u32, stride: u32) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("grid stride must be positive"));
        }
        Self::new((0..=max).step_by(stride as usize).map(f64::from).collect())
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn level(&self, j: usize) -> f64 {
        self.levels[j]
    }

    /// Index of the highest level `<= c`. Queries between levels round down.
    pub fn level_index(&self, c: f64) -> Result<usize> {
        if !(c >= self.levels[0]) {
            return Err(Error::invalid(format!(
                "incentive {c} is below the lowest grid level {}",
                self.levels[0]
            )));
        }
        Ok(self.levels.partition_point(|&d| d <= c) - 1)
    }

    pub fn isotonic_embed(&self, c: f64) -> Result<IsotonicEmbedding> {
        let top = self.level_index(c)?;
        Ok(IsotonicEmbedding {
            bits: (0..self.len()).map(|j| u8::from(j <= top)).collect(),
        })
    }

    /// Largest gap between consecutive levels.
    pub fn max_gap(&self) -> f64 {
        self.levels.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for IncentiveGrid {
    type Error = Error;

    fn try_from(levels: Vec<f64>) -> Result<Self> {
        Self::new(levels)
    }
}

impl From<IncentiveGrid> for Vec<f64> {
    fn from(g: IncentiveGrid) -> Self {
        g.levels
    }
}

/// Prefix-of-ones encoding: `bits[j] = 1` iff the incentive is `>= d_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsotonicEmbedding {
    pub bits: Vec<u8>,
}

impl IsotonicEmbedding {
    /// Number of leading ones, i.e. one past the grid index of the incentive.
    pub fn ones(&self) -> usize {
        self.bits.iter().take_while(|&&b| b == 1).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> IncentiveGrid {
        IncentiveGrid::new(vec![0.0, 10.0, 20.0, 30.0, 40.0]).unwrap()
    }

    #[test]
    fn embedding_examples() {
        let g = grid();
        assert_eq!(g.isotonic_embed(20.0).unwrap().bits, vec![1, 1, 1, 0, 0]);
        assert_eq!(g.isotonic_embed(0.0).unwrap().bits, vec![1, 0, 0, 0, 0]);
        assert_eq!(g.isotonic_embed(40.0).unwrap().bits, vec![1; 5]);
        assert_eq!(g.isotonic_embed(25.0).unwrap().bits, vec![1, 1, 1, 0, 0]);
        assert_eq!(g.isotonic_embed(1e9).unwrap().ones(), 5);
    }

    #[test]
    fn below_grid_is_an_error() {
        assert!(matches!(grid().isotonic_embed(-0.5), Err(Error::InvalidArgument(_))));
        assert!(grid().level_index(f64::NAN).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(IncentiveGrid::new(vec![1.0]).is_err());
        assert!(IncentiveGrid::new(vec![1.0, 1.0]).is_err());
        assert!(IncentiveGrid::new(vec![2.0, 1.0]).is_err());
        let g = IncentiveGrid::stride(100, 10).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g.level(10), 100.0);
        assert_eq!(g.level_index(19.0).unwrap(), 1);
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<IncentiveGrid>(&json).unwrap(), g);
        assert!(serde_json::from_str::<IncentiveGrid>("[3.0, 1.0]").is_err());
    }
}
