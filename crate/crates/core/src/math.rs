//! Thin wrappers so the same code builds with and without `std`.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}
#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}
#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    let mut base = if n < 0 { 1.0 / x } else { x };
    let mut k = n.unsigned_abs();
    let mut acc = 1.0;
    while k > 0 {
        if k & 1 == 1 {
            acc *= base;
        }
        base *= base;
        k >>= 1;
    }
    acc
}
#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}
#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}
#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}
#[inline]
pub fn lgamma(x: f64) -> f64 {
    libm::lgamma(x)
}
#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}
#[inline]
pub fn atan(x: f64) -> f64 {
    libm::atan(x)
}

/// `r2^{-alpha/2}` with fast paths for the exponents the kernel actually uses.
#[inline]
pub fn inv_pow_from_sq(r2: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return 1.0;
    }
    let half = alpha * 0.5;
    if half == floor(half) && half <= 8.0 {
        return powi(1.0 / r2, half as i32);
    }
    let r = sqrt(r2);
    if alpha == floor(alpha) && alpha <= 16.0 {
        // odd integer exponent
        return powi(1.0 / r2, (alpha as i32 - 1) / 2) / r;
    }
    powf(r, -alpha)
}
