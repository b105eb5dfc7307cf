//! Out-of-core fusion of aligned range images into a single watertight
//! triangle mesh.
//!
//! The pipeline turns depth maps and 360-degree LIDAR scans into a linear
//! Morton-coded octree on disk, balances it 2:1, votes every distance field
//! into per-cell histograms, minimizes a total-generalized-variation
//! functional coarse to fine with a primal-dual scheme, and extracts the
//! zero isosurface per treetop leaf with locked borders so the parts
//! concatenate seamlessly. Every stage keeps a bounded number of records
//! resident, independent of scene size.

pub mod error;
pub mod geom;
pub mod instrument;
pub mod mesh;
pub mod morton;
pub mod octree;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod range;
pub mod record;
pub mod solver;
pub mod synth;
pub mod voting;

pub use error::{Error, Result};
pub use geom::{RootFrame, SensorPose};
pub use morton::{Face, MortonCode};
pub use record::{CubeRecord, OctreeFile, RecordReader, RecordWriter};
