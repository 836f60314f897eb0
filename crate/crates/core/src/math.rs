//! Scalar math routed through `libm` so results match with and without `std`.

pub(crate) use libm::{atan2, cos, exp, expm1, log as ln, sin, sqrt};

pub(crate) const PI: f64 = core::f64::consts::PI;

pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}
