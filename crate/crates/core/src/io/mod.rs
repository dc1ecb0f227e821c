//! Case files, day profiles, the synthetic feeder and result tables.

mod case;
mod output;
mod profile;
mod synthetic;

pub use case::{
    load_case, read_case_file, save_case, BranchRecord, BusDevice, BusRecord, Case, CaseFile, DcRecord, EmpcSection,
    GcRecord, NetworkSection, DEFAULT_X_BOUND_PU,
};
pub use profile::{
    day_profile, format_timestamp, profile_records, read_profile, write_profile, ProfileRecord, SeriesKind,
    PRICE_ONLY_REGULARIZER,
};
pub use synthetic::{generate_lebanon_synthetic, IMPEDANCE_SCALE, SYNTHETIC_INTERVALS, SYNTHETIC_PEAK_KW, SYNTHETIC_PV_PEAK_KW};
pub use output::{
    write_consensus_table, write_deviation_table, write_generation_table, write_interval_table, write_manifest,
    write_run, Manifest, Summary, CONSENSUS_TABLE, DEVIATION_TABLE, GENERATION_TABLE, INTERVALS_TABLE,
    MANIFEST_FILE, SUMMARY_FILE,
};
