//! Crash-injection harness for the pmbuf storage engine: seeded trials,
//! sweep suites, and the exhaustive small-page classification check.

pub mod config;
pub mod enumeration;
pub mod suite;
pub mod trial;

pub use config::{CrashMode, TrialConfig};
pub use enumeration::{run_oracle_enumeration, EnumConfig, EnumReport};
pub use suite::{run_point, run_suite, SuiteReport, SweepSpec};
pub use trial::{resume_trial, run_trial, run_trial_with_dump, OracleState, TrialReport};
