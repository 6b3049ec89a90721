//! Central finite differences, used as the independent oracle for the
//! gradient tests across the workspace.

use crate::tape::Tensor;

/// Numerical derivative of `f` with respect to element `index` (flat,
/// row-major) of `x`.
pub fn central_difference(
    f: &mut dyn FnMut(&Tensor) -> f64,
    x: &Tensor,
    index: usize,
    h: f64,
) -> f64 {
    let mut xp = x.as_standard_layout().into_owned();
    let base = xp.as_slice().unwrap()[index];
    xp.as_slice_mut().unwrap()[index] = base + h;
    let fp = f(&xp);
    xp.as_slice_mut().unwrap()[index] = base - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Relative error with an absolute floor, so that gradients near zero are
/// compared on an absolute scale.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
