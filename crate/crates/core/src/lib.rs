//! Volumetric capture toolkit: RGBD stream I/O, camera projection, temporal
//! depth filtering, grid-mesh reconstruction, rigid alignment, frame-pair
//! synchronization, synthetic scenes and metrics.

pub mod align;
pub mod camera;
pub mod filter;
pub mod frame;
pub mod mesh;
pub mod projection;
pub mod stream;
pub mod sync;
pub mod metrics;
pub mod synth;
pub mod pipeline;
