//! Synthetic SDE datasets with random observation schedules and their
//! analytic conditional expectations.

mod dataset;
mod model;
mod schedule;
mod simulate;

pub use dataset::{fmt_f64, read_dataset, split_dataset, write_dataset, Dataset, Path, FORMAT_VERSION};
pub use model::{euler_maruyama_step, true_conditional_expectation, HestonParams, SdeModel};
pub use schedule::{
    sample_observation_times, sample_observation_times_seeded, MaskMode, ObservationSchedule, TimeGrid,
};
pub use simulate::{generate_dataset, simulate_paths, simulate_states_from, GenerateOptions};
