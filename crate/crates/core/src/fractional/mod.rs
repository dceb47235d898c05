//! Fractional calculus on uniform grids and the fBm transfer operators.

mod kernel;
mod norms;
mod ops;
mod transfer;

pub use kernel::{c_tilde, kernel_k, KernelCells};
pub use norms::{fgn_autocovariance, hnorm_oracle};
pub use ops::{derivative_via_integral, frac_apply, FracOpSpec, OpKind, Side};
pub use transfer::{
    apply_kbig, apply_kstar, apply_kstar_fractional, hnorm, invert_kbig, invert_kbig_cells,
    invert_kbig_general,
};

pub(crate) use kernel::gl6;
pub(crate) use transfer::kstar_l2_sq;
