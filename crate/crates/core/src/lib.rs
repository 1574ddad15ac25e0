pub mod aggregation;
pub mod bsr;
pub mod config;
pub mod control;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod radio;
pub mod scheduler;
pub mod traffic;

pub use config::{BsrScheme, ControlDesign, PriorityMode, ScenarioConfig, SchedulerMode};
pub use engine::{run, Simulation};
pub use error::{Error, Result};
pub use metrics::{Ecdf, RunReport, Satisfaction, SatisfactionSpec};
pub use traffic::{Direction, FlowSpec, Priority};
