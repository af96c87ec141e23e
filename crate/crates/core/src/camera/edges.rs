use nalgebra::Point2;

use super::{BinaryMask, CameraError};

/// Boundary pixels of one mask, in raster-scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePointSet {
    pub points: Vec<Point2<f64>>,
    pub source_mask_id: usize,
}

impl EdgePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub const MIN_EDGE_POINTS: usize = 5;

/// Foreground pixels with at least one 8-neighbor in the background (pixels
/// outside the image count as background).
pub fn extract_edge_points(mask: &BinaryMask, source_mask_id: usize) -> Result<EdgePointSet, CameraError> {
    if mask.is_empty() {
        return Err(CameraError::EmptyMask);
    }
    let mut points = Vec::new();
    for (x, y) in mask.foreground() {
        let (xi, yi) = (x as i64, y as i64);
        let boundary = (-1..=1)
            .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
            .any(|(dx, dy)| (dx, dy) != (0, 0) && !mask.get_signed(xi + dx, yi + dy));
        if boundary {
            points.push(Point2::new(x as f64, y as f64));
        }
    }
    if points.len() < MIN_EDGE_POINTS {
        return Err(CameraError::TooFewEdgePoints(points.len()));
    }
    Ok(EdgePointSet { points, source_mask_id })
}
