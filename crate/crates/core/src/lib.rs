//! Fast block-structure determination for two-resolution encoding ladders.
//!
//! A low-resolution rung is encoded with a full quadtree RDO; the depth map it
//! produces drives early termination of the 4-way split search at the high
//! resolution. The inference model (per-depth neighborhood margin and threshold)
//! is recalibrated from a few fully encoded frames at the start of every group.
//!
//! Modules:
//!
//! - [`frame_io`]: Y4M ingest, box-filter downscale, superblock padding, raw dumps.
//! - [`rdo`]: block geometry, leaf cost model and the partition search.
//! - [`neighborhood`]: depth maps and the co-located neighborhood estimator.
//! - [`trainer`]: calibration of the per-depth `(margin, tau)` table.
//! - [`driver`]: the group schedule and the accelerated two-pass pipeline.
//! - [`sim`]: a synthetic simulator for the statistical model behind the estimator.
//! - [`metrics`]: Bjøntegaard deltas and run summaries.
//! - [`synth`]: deterministic procedural test clips.

pub mod driver;
pub mod error;
pub mod frame_io;
pub mod metrics;
pub mod neighborhood;
pub mod rdo;
pub mod sim;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use frame_io::{Dims, FrameBuffer, FrameSource, SequenceHeader};
pub use neighborhood::{DepthMap, NeighborhoodSpec, RegionF};
pub use rdo::{BlockRect, PartitionMode, PartitionTree, RdoConfig};
