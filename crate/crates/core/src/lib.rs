//! Revenue-optimal auctions of one object in several quality grades.
//!
//! Buyers have multi-dimensional types (one value per grade). The optimal
//! symmetric mechanism is approximated by an LP over a discretized type space
//! and solved by iterative plane cutting with incentive-compatibility and
//! Border separation oracles. Exclusive buyer mechanisms and a
//! one-dimensional Myerson benchmark are provided for comparison.

pub mod ebm;
pub mod harness;
pub mod lp;
pub mod lpmodel;
pub mod separation;
pub mod solver;
pub mod typespace;
pub mod validation;

pub use lpmodel::AuctionSetting;
pub use solver::{solve_optimal_auction, MechanismSolution, SolverConfig};
pub use typespace::{DiscreteDensity, DistributionSpec, TypeBox, TypeGrid};
