use alloc::vec::Vec;

use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CloudError {
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("color of point {0} is outside [0, 1]")]
    ColorRange(usize),
    #[error("{colors} colors for {points} points")]
    ColorCount { points: usize, colors: usize },
}

/// World-space points with optional RGB colors in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    colors: Option<Vec<[f64; 3]>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>, colors: Option<Vec<[f64; 3]>>) -> Result<Self, CloudError> {
        if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
            return Err(CloudError::NonFinite(i));
        }
        if let Some(c) = &colors {
            if c.len() != positions.len() {
                return Err(CloudError::ColorCount {
                    points: positions.len(),
                    colors: c.len(),
                });
            }
            if let Some(i) = c
                .iter()
                .position(|rgb| rgb.iter().any(|v| !(0.0..=1.0).contains(v)))
            {
                return Err(CloudError::ColorRange(i));
            }
        }
        Ok(PointCloud { positions, colors })
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[[f64; 3]]> {
        self.colors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Keeps every `factor`-th point, starting with the first.
    pub fn downsample(&self, factor: usize) -> PointCloud {
        let factor = factor.max(1);
        PointCloud {
            positions: self.positions.iter().step_by(factor).copied().collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| c.iter().step_by(factor).copied().collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn validation() {
        assert!(PointCloud::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)], None).is_err());
        assert!(PointCloud::new(vec![Vec3::ZERO], Some(vec![[1.5, 0.0, 0.0]])).is_err());
        assert!(PointCloud::new(vec![Vec3::ZERO], Some(vec![])).is_err());
        assert!(PointCloud::new(vec![], None).unwrap().is_empty());
    }

    #[test]
    fn downsample_keeps_every_kth() {
        let pts = (0..25).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let c = PointCloud::new(pts, None).unwrap().downsample(10);
        assert_eq!(c.len(), 3);
        assert_eq!(c.positions()[2].x, 20.0);
    }
}
