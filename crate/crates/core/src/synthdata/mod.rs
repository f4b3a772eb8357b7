//! Synthetic labeled scenes, two-view augmentation with exactly tracked
//! geometry, and ground-truth correspondence between views.
//!
//! Scenes are flat-colored disks, squares and triangles on a low-contrast
//! textured background. Every view records the crop, flip and color shift
//! that produced it, so any feature-grid cell can be mapped back to source
//! pixels exactly.

mod geometry;
mod scene;
mod view;

pub use geometry::{geometry_correspondence, grid_labels, mask_at_grid, GeoCorrespondence};
pub use scene::{generate_scene, Scene, SceneSpec, ShapeClass};
pub use view::{render_view, sample_view_pair, AugmentationPolicy, ViewPair, ViewTransform};
