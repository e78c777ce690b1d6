//! Persistence: model containers, sample CSVs, run reports and exporters.

pub mod container;
pub mod export;
pub mod report;
pub mod samples;

pub use container::{load_model, load_model_file, save_model, save_model_with, ModelFile, ModelMeta};
pub use export::{export_mesh, export_star_plot, AngularBound};
pub use report::{load_report, save_report, RunReport, SideReport};
pub use samples::{read_samples, write_samples};
