//! Core of holoproxy: a smartphone acting as the tangible proxy for a holographic
//! 2.5D bar chart.
//!
//! - [`model`]: datasets, chart layout, summary statistics
//! - [`interaction`]: discrete and axis selection, haptic encoding, projection
//! - [`anchor`]: pose composition between the tracked phone and the mounted hologram
//! - [`protocol`]: the wire format and the session reducer
//!
//! The math modules are generic over [`Scalar`] (`f32` or `f64`). The protocol and
//! everything that crosses the wire use `f64`; the aliases below name those instantiations.

pub mod anchor;
pub mod interaction;
pub mod model;
pub mod protocol;
pub mod scalar;

pub use interaction::{
    axis_select, haptic_encode, hit_test_mark, project_series, tap_point, toggle_select, HapticMode,
    InteractionError, PixelRect, ScreenConfig, SelectionState,
};
pub use model::{layout_chart, load_dataset, load_dataset_with, summarize, Axis, CellId, ModelError};
pub use scalar::Scalar;

pub type DataCube = model::DataCube<f64>;
pub type ChartLayout = model::ChartLayout<f64>;
pub type SummaryStats = model::SummaryStats<f64>;
pub type Rect = model::Rect<f64>;
pub type HapticCommand = interaction::HapticCommand<f64>;
pub type Projection2D = interaction::Projection2D<f64>;
pub type Pose = anchor::Pose<f64>;
pub type Quat = anchor::Quat<f64>;
pub type Vec3 = anchor::Vec3<f64>;
pub type MountOffset = anchor::MountOffset<f64>;

pub type DataCube32 = model::DataCube<f32>;
pub type ChartLayout32 = model::ChartLayout<f32>;
pub type Pose32 = anchor::Pose<f32>;

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
