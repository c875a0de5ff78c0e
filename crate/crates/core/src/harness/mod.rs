//! Experiment harness: environments, the simulation loop, audits and
//! on-disk artifacts.

pub mod audit;
pub mod env;
pub mod output;
pub mod run;

pub use audit::{clopper_pearson_lower, coverage_audit, covered_throughout, width_inequality_checks, width_sums, CoverageReport};
pub use env::{build_environment, check_feasible, make_production_line, make_symmetric_env, production_line_structure, symmetric_structure};
pub use output::{audit_directory, discover_runs, load_run, write_run, DirectoryAudit, Manifest, RunLog};
pub use run::{episode_regret, run_experiment, run_single, simulate_episode, slope, stream_rng, EpisodeRecord, RunArtifacts, RunRecord, Stream};
