//! Post-detector stages of a whole-slide mitotic counting system: tissue
//! detection and tiling, detector/gate interfaces with deterministic stubs,
//! mask post-processing with micron-scale filters, exact 10HPF search on a
//! Chebyshev k-d tree, and a bounded-queue worker pipeline.

pub mod annotation;
pub mod bench;
pub mod detect;
pub mod error;
pub mod hpf;
pub mod kdtree;
pub mod pipeline;
pub mod postprocess;
pub mod raster;
pub mod store;
pub mod synth;
pub mod tissue;
pub mod units;

pub use error::{Error, Result};
pub use hpf::{brute_force_best_hpf, candidate_centers, find_best_hpf, HpfRegion};
pub use kdtree::{KdTree2, QueryBox, RangeHits};
pub use raster::{BinaryMask, GrayImage};
pub use units::{chebyshev, hpf_geometry, microns_to_pixels, HpfGeometry, MicronsPerPixel, Point2};
