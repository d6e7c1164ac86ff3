//! Finite MDP model, policies, value tables, exact Bellman operators and solvers.

mod bellman;
mod io;
mod model;

pub use bellman::{
    bellman_op, bellman_optimality_op, exact_q_pi, exact_q_star, greedy_policy, induce_model,
    policy_distance, InducedModel, SOLVE_RESIDUAL_TOL,
};
pub use io::{format_mdp, load_mdp, parse_mdp};
pub use model::{QTable, StochasticPolicy, TabularMdp, STOCHASTIC_TOL};
