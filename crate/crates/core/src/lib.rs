pub mod analysis;
pub mod cli;
pub mod data;
pub mod datasets;
pub mod error;
pub mod estimation;
pub mod monitoring;
pub mod numeric;
pub mod rho;
pub mod scalar;
pub mod stats;

pub use data::DataMatrix;
pub use error::{Error, Result};
pub use estimation::{FitResult, Method, Starts, SubsetPool};
pub use rho::{KMethod, RhoFamily, RhoSpec};
pub use scalar::Real;
pub use monitoring::{EstimatorKind, MonitoringTrace};

pub type DataMatrix64 = DataMatrix<f64>;
pub type DataMatrix32 = DataMatrix<f32>;
pub type RhoSpec64 = RhoSpec<f64>;
pub type RhoSpec32 = RhoSpec<f32>;
pub type FitResult64 = FitResult<f64>;
pub type FitResult32 = FitResult<f32>;
pub type Starts64 = Starts<f64>;
pub type Starts32 = Starts<f32>;
pub type MonitoringTrace64 = MonitoringTrace<f64>;
pub type MonitoringTrace32 = MonitoringTrace<f32>;
