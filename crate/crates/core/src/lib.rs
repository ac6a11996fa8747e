//! Uncertainty evaluation for dynamic measurements.
//!
//! Signals and spectra carry their covariance alongside the estimate. The
//! building blocks are linear propagation through the DFT, digital filters
//! and bin-wise spectral arithmetic, a streaming Monte Carlo engine,
//! least-squares design of deconvolution filters and a second-order sensor
//! model.
//!
//! ```
//! use dynunc::{dft::gum_dft, TimeSeriesU, Uncertainty};
//!
//! let x = TimeSeriesU::new(vec![1.0, 0.0, 0.0, 0.0], 1e-3, 0.0, Uncertainty::White(0.1)).unwrap();
//! let spec = gum_dft(&x).unwrap();
//! assert_eq!(spec.re(), &[1.0, 1.0, 1.0]);
//! assert!((spec.cov()[(1, 1)] - 0.02).abs() < 1e-15);
//! ```

pub mod design;
pub mod dft;
pub mod error;
pub mod filter;
pub mod mc;
pub mod poly;
pub mod propagate;
pub mod signals;
pub mod sos;
pub mod types;

pub use design::{FreqRespData, LsOptions};
pub use error::{Error, Result};
pub use filter::DigitalFilterU;
pub use mc::{McConfig, McResult};
pub use sos::SosParams;
pub use types::{AmpPhaseU, Cov, DftGrid, LinearModel, SpectrumU, StateSpace, TimeSeriesU, Uncertainty};
