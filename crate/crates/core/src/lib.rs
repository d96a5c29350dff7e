//! Scalable parametric-equalizer attenuation filters for feedback delay
//! network reverberators.
//!
//! A PEQ of one low shelf, `N - 2` bells and one high shelf is fitted by
//! gradient descent to the attenuation a reference delay line needs for a
//! target T60(f). The same bands serve every delay line with gains scaled by
//! line length. Fitted bands can be digitized to biquads, rendered through a
//! full FDN, and evaluated with the relative T60 error protocol.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod digitize;
pub mod error;
pub mod eval;
pub mod fdn;
pub mod io;
pub mod optim;
pub mod peq;
pub mod prototypes;
pub mod target;

pub use error::{Error, Result};
pub use optim::{adam_step, fit, loss_and_gradient, mse_loss, AdamState, FitConfig, FitReport, ParamVector};
pub use peq::{peq_log_magnitude, response_to_t60, scale_to_delay, FittedPeq, PeqParams};
pub use prototypes::{bell_magnitude, db_to_linear_amp, high_shelf_magnitude, low_shelf_magnitude, BandKind, BandParams};
pub use target::{interpolate_to_grid, load_t60_table, target_magnitude, FrequencyGrid, T60Curve};
