//! Kernel ridge regression mean predictors.

mod discrete;
mod kernel;
mod nystrom;

pub use discrete::DiscreteKrr;
pub use kernel::SeKernel;
pub use nystrom::{qr_rank1_update, symmetric_pinv, AnchorData, MapReplication, NystromKrr, REFACTOR_EVERY};
