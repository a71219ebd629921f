//! Scenario files, experiment orchestration and metric tables.
//!
//! A run is fully determined by its scenario file: the top-level `seed`
//! plus the arithmetic stream ids described in [`experiments`].

pub mod experiments;
pub mod records;
pub mod scenario;

pub use experiments::{run_experiment, sweep_optimize, SweepResult};
pub use records::{
    export_records, import_records, read_records, records_to_string, write_records, MetricRecord, RecordFormat,
    CSV_HEADER,
};
pub use scenario::{
    load_scenario, parse_scenario, save_scenario, scenario_to_toml, set_parameter, BlindParams, CpmParams,
    CraParams, CsMudParams, DetectorMode, ExperimentKind, GrantFreeParams, GrantFreePhyName, ModulationName,
    PrecodingName, Scenario, ScmaParams, StopName, MAX_TRIALS,
};

