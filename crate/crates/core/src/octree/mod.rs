//! The disk-resident linear octree: run spawning, external k-way merging,
//! out-of-core 2:1 balancing with completion, and treetop indexing.

pub mod balance;
pub mod merge;
pub mod spawn;
pub mod treetop;

pub use balance::{balance, BalanceStats};
pub use merge::{external_merge, MergeStats};
pub use spawn::{spawn_cubes, SpawnStats};
pub use treetop::{build_treetop, Treetop, TreetopLeaf};
