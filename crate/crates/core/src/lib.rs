//! Localization of square fiducial tags on intensity-annotated LiDAR maps.
//!
//! The pipeline keeps points with a strong local intensity gradient, groups
//! them into Euclidean clusters, fits an oriented bounding box to each
//! cluster and keeps the boxes whose size and shape could hold a tag. Every
//! surviving box is cut back out of the raw map with a margin, moved to a
//! virtual plane one meter in front of the origin and rendered as an
//! occlusion-free intensity image. A square-marker decoder reads the tag ID
//! and corners from that image; the corners are mapped back into the map and
//! a rigid alignment yields the tag pose.
//!
//! [`synth`] generates stitched multi-viewpoint scenes with known tag
//! placements so each stage can be checked without LiDAR hardware.

pub mod cloud;
pub mod cluster;
pub mod decoder;
pub mod filter;
pub mod geometry;
pub mod gradient;
pub mod pcd;
pub mod pipeline;
pub mod pose;
pub mod report;
pub mod reproject;
pub mod spatial;
pub mod synth;

pub use cloud::{CloudError, IntensityCloud, Point3I};
pub use geometry::RigidTransform;
pub use spatial::SpatialIndex;
