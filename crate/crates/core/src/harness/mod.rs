//! Named experiments, calibration against field anchors and result files.

mod calibration;
mod config;
mod experiments;
mod report;

pub use calibration::{
    fit_calibration, operating_point, settled_attenuation, Anchor, AnchorResidual, Calibration, CalibrationReport,
    OperatingPoint, SteadyStateModel,
};
pub use config::{
    CalibrationSettings, ChannelSweepSettings, EnduranceSettings, Experiment, ExperimentConfig, LossSweepSettings,
    ProfileSettings, SingleLinkSettings, SyncStressSettings,
};
pub use experiments::{
    ceiling_checks, ceiling_points, prepare, project_skr, run_experiment, run_prepared, run_single_link, single_link_scenario,
    slot_points, socket_pair, sweep_checks, sweep_points, sync_runs, CeilingPoint, LossPoint, Prepared, Projection,
    RunOptions, SlotPoint, TransportMode, PLATEAU_MAX_OF_OPTIMUM, PLATEAU_MAX_SPREAD, SWEEP_CHECK_LOSSES_DB,
    UNCAP_MIN_GAIN,
};
pub use report::{write_csv, write_summary, write_telemetry, Check, Headline, Summary, SUMMARY_SCHEMA};
