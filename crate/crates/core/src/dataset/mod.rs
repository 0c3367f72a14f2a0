//! Training corpus construction: keypoint supersets, 3D lifting, illumination
//! groups with cell labels, and the on-disk layout.

mod adaptation;
mod augment;
mod detector;
mod labels;
mod lifting;
mod views;

pub use adaptation::{
    accumulate_response, build_feature_superset, warp_image, AdaptationConfig, HomographySampler,
};
pub use augment::{
    augment_dataset, build_groups, label_stage, load_groups, render_stage, AugmentConfig, DatasetManifest,
    GroupEntry, ImageGroup, FULL_SCALE_ILLUM, FULL_SCALE_VIEWS,
};
pub use detector::{detect_from_response, nms_points, quantile, Keypoint2d, PointDetector, StructureTensorDetector};
pub use labels::{
    decode_heatmap_label, encode_heatmap_label, project_feature_set, HeatmapLabel, ProjectedKeypoint, DUSTBIN,
};
pub use lifting::{build_object_feature_set, lift_keypoints_to_3d, merge_points, FeatureBuildConfig};
pub use views::{sample_views, ViewConfig};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("detector failure: {0}")]
    DetectorFailure(String),
    #[error("keypoint ({x}, {y}) outside a {width}×{height} image")]
    OutOfBounds { x: f64, y: f64, width: usize, height: usize },
    #[error("invalid dataset configuration: {0}")]
    InvalidConfig(String),
    #[error("io failure on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("dataset at {0} is incomplete")]
    Incomplete(String),
    #[error(transparent)]
    Render(#[from] crate::render::RenderError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
}

impl DatasetError {
    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::Io { path: path.display().to_string(), reason: e.to_string() }
    }
}
