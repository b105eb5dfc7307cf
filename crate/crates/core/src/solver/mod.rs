//! Coarse-to-fine primal-dual minimization of the TGV functional over the
//! balanced octree, one treetop leaf group at a time with frozen borders.

pub mod ctf;
pub mod ops;
pub mod pd;
pub mod prox;
pub mod view;

pub use ctf::{restrict_histograms, solve_coarse_to_fine, EnergyRow, SolveParams, SolveStats};
pub use ops::{assemble_operators, DiscreteOperators};
pub use pd::{energy, primal_dual_iterate, PdParams, PdState};
pub use prox::data_prox;
pub use view::{build_level_view, LevelCell, LevelView};
