//! 1-D longitudinal driving planner: an MCTS trajectory generator paired with
//! a linear IRL trajectory scorer, evaluated in a closed-loop log-playback
//! simulator with a metrics suite and a latency benchmark harness.

pub mod commands;
pub mod mcts;
pub mod mdp;
pub mod metrics;
pub mod policies;
pub mod scenario;
pub mod scorer;
pub mod sim;
