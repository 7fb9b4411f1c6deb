//! Reproducible end-to-end runs behind the `magic` binary: configuration,
//! CSV data handling, simulation recipes, and report files.
//!
//! Every run is a pure function of its resolved configuration (which embeds
//! the master seed): worker count only changes scheduling, never output
//! bytes. Reports embed the resolved configuration so a run can be
//! reproduced from its own report.

pub mod config;
pub mod data;
pub mod report;
pub mod run;
pub mod sim;

pub use config::{DataPaths, ProblemKind, RandomizationSpec, RunConfig, SamplerSettings, SimSpec};
pub use report::{GraphReport, InferReport, PowerReport, SimNullReport};
pub use run::{cmd_graph_infer, cmd_infer, cmd_simulate_null, cmd_simulate_power};

/// Deterministic per-task seed derived from the master seed and a tag path
/// (replication index, variable index, ...), via iterated splitmix64.
pub fn child_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master;
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t.wrapping_add(0x9e3779b97f4a7c15)));
    }
    splitmix64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
