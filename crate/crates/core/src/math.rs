//! `libm` shims so the numerical kernels build without `std`.

#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// Wraps `x` into `[lower, upper)`.
#[inline]
pub(crate) fn wrap(x: f64, lower: f64, upper: f64) -> f64 {
    let period = upper - lower;
    let mut r = libm::fmod(x - lower, period);
    if r < 0.0 {
        r += period;
    }
    // fmod of a tiny negative can round back up to the full period
    if r >= period {
        r = 0.0;
    }
    lower + r
}
