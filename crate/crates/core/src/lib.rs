//! Multi-agent committee deliberation with trajectory-divergence analysis.
//!
//! A committee of agents deliberates over a policy scenario for a fixed
//! number of rounds, each turn ending in a machine-readable `STATE:` line.
//! Replicates of the same condition give an ensemble of committee-mean
//! trajectories on the 3-option simplex, and the growth rate of their mean
//! pairwise distance is an empirical Lyapunov exponent.
//!
//! * [`state_codec`] parses and formats `STATE:` lines.
//! * [`protocol`] runs the windowed-summary deliberation protocol.
//! * [`backends`] supplies scripted, synthetic and remote agents.
//! * [`analysis`] computes divergence, λ̂, its bootstrap CI and permutation
//!   p-value, plus group metrics and branching certificates.
//! * [`store`] persists runs as JSONL and does run accounting.
//! * [`runner`] expands condition matrices and schedules replicates.

pub mod analysis;
pub mod backends;
pub mod protocol;
pub mod runner;
pub mod seeds;
pub mod state_codec;
pub mod store;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/protocol.md")]
    struct Protocol;
    #[doc = include_str!("../../../book/src/backends.md")]
    struct Backends;
    #[doc = include_str!("../../../book/src/estimand.md")]
    struct Estimand;
    #[doc = include_str!("../../../book/src/branching.md")]
    struct Branching;
    #[doc = include_str!("../../../book/src/running.md")]
    struct Running;
}
