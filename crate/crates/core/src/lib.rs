//! Safe reward-free exploration for episodic MDPs.
//!
//! The crate covers exact tabular MDP machinery ([`mdp`]), the clipped value
//! recursion and its supergradient ([`truncated`]), the constrained policy
//! optimizations used during exploration and planning ([`solver`]), the
//! tabular and low-rank exploration loops ([`tabular`], [`lowrank`]),
//! independent ground-truth solvers ([`oracle`]) and an experiment harness
//! ([`harness`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod format;
pub mod harness;
pub mod lowrank;
pub mod mdp;
pub mod oracle;
pub mod rng;
pub mod runlog;
pub mod solver;
pub mod tabular;
pub mod truncated;
pub mod uncertainty;

pub use error::{Result, SweetError};
pub use mdp::{
    evaluate_value, greedy_version, max_trajectory_utility, min_cost_value, mixture_to_markov, occupancy,
    policy_value, sample_trajectory, EpisodeSampler, MarkovPolicy, MixturePolicy, OccupancyMeasure,
    SimulatedEnv, StepTable, TabularMDP, Trajectory, Utility,
};
pub use truncated::{truncated_evaluate, truncated_subgradient, PolicySubgradient, TruncatedEval};
