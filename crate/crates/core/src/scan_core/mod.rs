//! Selective state-space recurrence and its four-direction 2-D extension.

mod discretize;
mod kernel;
mod params;
mod sequential;
mod ss2d;

pub use discretize::{discretize, discretize_scalar, discretize_unchecked};
pub use kernel::selective_scan;
pub use params::{SelectiveScanParams, DEFAULT_STATE_DIM};
pub use sequential::{scan_recurrence, selective_scan_sequential};
pub use ss2d::{ss2d, ss2d_sequential, ScanDirection, Ss2d};
