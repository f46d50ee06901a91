//! Sequential individualized treatment effects by propensity-score matching.

pub mod delta;
pub mod groups;
pub mod io;
pub mod matching;
pub mod propensity;

pub use delta::{
    build_delta_sequences, compute_delta, Caliper, DeltaRecord, DeltaSet, IteConfig, IteEstimate,
    MatchReportRow, RelevantLabs,
};
pub use groups::{enumerate_group_pairs, ComparableGroupPair, Member};
pub use io::{load_deltas, read_deltas, save_deltas, save_match_report, write_deltas, write_match_report};
pub use matching::{match_groups, MatchOutcome, MatchedPair};
pub use propensity::{fit_propensity, PropensityModel};
