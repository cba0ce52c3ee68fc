//! Per-frame target generation: lidar + calibration + pseudo boxes → bundle.

use crate::config::PipelineConfig;
use crate::depth_targets::{propagate, region_filter, Box2D, UncertaintyMap};
use crate::error::{Error, Result};
use crate::geometry::{lidar_to_sparse_depth, CameraModel, LidarPoint, RigidTransform};
use crate::io_formats::{count_classes, BoxSource, BundleCounts, BundleMetadata, TargetBundle};
use crate::keypoint_targets::{corner_heatmaps, detection_targets};

/// Source of the Laplace scale used for propagation.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaSource {
    Constant(f64),
    Map(UncertaintyMap),
}

impl SigmaSource {
    pub fn describe(&self) -> String {
        match self {
            SigmaSource::Constant(s) => format!("constant:{s}"),
            SigmaSource::Map(_) => "map".to_string(),
        }
    }

    fn resolve(&self, width: usize, height: usize) -> Result<UncertaintyMap> {
        match self {
            SigmaSource::Constant(s) => UncertaintyMap::constant(width, height, *s),
            SigmaSource::Map(m) => {
                if (m.width(), m.height()) != (width, height) {
                    return Err(Error::mismatch(
                        format!("{width}x{height} sigma map"),
                        format!("{}x{}", m.width(), m.height()),
                    ));
                }
                Ok(m.clone())
            }
        }
    }
}

pub struct FrameInput<'a> {
    pub frame_id: &'a str,
    pub camera: CameraModel,
    pub lidar_to_cam: RigidTransform,
    pub points: &'a [LidarPoint],
    /// Boxes in pixels; clipped to the image before use.
    pub boxes: &'a [Box2D],
    pub box_source: BoxSource,
    pub sigma: &'a SigmaSource,
}

pub fn generate_frame_targets(
    input: &FrameInput<'_>,
    config: &PipelineConfig,
) -> Result<TargetBundle> {
    config.validate()?;
    let cam = &input.camera;
    let (width, height) = cam.grid_dims(config.stride)?;

    let boxes: Vec<Box2D> = input
        .boxes
        .iter()
        .filter_map(|b| b.clip(cam.image_w as f64, cam.image_h as f64))
        .collect();
    let class_counts = count_classes(boxes.iter().map(|b| b.class_id), config.n_classes)?;

    let sparse = lidar_to_sparse_depth(input.points, &input.lidar_to_cam, cam, config.stride)?;
    let filtered = region_filter(&sparse, &boxes, config.max_depth);
    let sigma = input.sigma.resolve(width, height)?;
    let depth = propagate(&filtered, &sigma, &config.propagation())?;

    let corners = corner_heatmaps(&boxes, config.stride, width, height, config.min_iou)?;
    let detection = detection_targets(
        &boxes,
        config.n_classes,
        config.stride,
        width,
        height,
        config.min_iou,
    )?;

    let counts = BundleCounts {
        lidar_points: input.points.len(),
        sparse_cells: sparse.present_count(),
        filtered_cells: filtered.present_count(),
        original_cells: depth.count(crate::depth_targets::Provenance::Original),
        propagated_cells: depth.count(crate::depth_targets::Provenance::Propagated),
        boxes: boxes.len(),
        class_counts,
    };
    let metadata = BundleMetadata {
        frame_id: input.frame_id.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        image_w: cam.image_w,
        image_h: cam.image_h,
        stride: config.stride,
        width,
        height,
        n_classes: config.n_classes,
        max_depth: config.max_depth,
        sigma_lo: config.sigma_lo,
        sigma_hi: config.sigma_hi,
        wide_patch: config.wide_patch,
        narrow_patch: config.narrow_patch,
        propagated_weight: config.propagated_weight,
        min_iou: config.min_iou,
        score_threshold: config.score_threshold,
        box_source: input.box_source,
        sigma_source: input.sigma.describe(),
        counts,
    };
    Ok(TargetBundle {
        depth,
        corners,
        detection,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_in_box_fills_patch() {
        let cam = CameraModel::new(100.0, 100.0, 32.0, 32.0, 64, 64).unwrap();
        // projects to pixel (34, 34) -> cell (8, 8) at stride 4
        let pts = [LidarPoint::new(0.2, 0.2, 10.0, 0.5)];
        let boxes = [Box2D::new(1, 16.0, 16.0, 48.0, 48.0, 0.9).unwrap()];
        let sigma = SigmaSource::Constant(0.2);
        let input = FrameInput {
            frame_id: "f",
            camera: cam,
            lidar_to_cam: RigidTransform::identity(),
            points: &pts,
            boxes: &boxes,
            box_source: BoxSource::Detector,
            sigma: &sigma,
        };
        let b = generate_frame_targets(&input, &PipelineConfig::default()).unwrap();
        assert_eq!(b.depth.supervised_count(), 25);
        assert_eq!(b.metadata.counts.class_counts, vec![0, 1, 0]);
        assert_eq!(b.corners.shape(), (4, 16, 16));
        assert_eq!(b.detection.centers.len(), 1);
    }
}
