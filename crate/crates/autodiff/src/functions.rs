//! Scalar activation functions and their closed-form derivatives.
//!
//! SiLU is differentiated by hand up to third order so the composition
//! jets never go through `exp`/`ln` compositions.

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)`, returning `z` itself above 30 where the correction is
/// below double precision.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inverse needs a positive argument");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// First derivative of SiLU: `s (1 + x (1 - s))`.
#[inline]
pub fn silu_d1(x: f64) -> f64 {
    silu_d1_given(x, sigmoid(x))
}

/// Second derivative of SiLU: `s' (2 + x (1 - 2 s))` with `s' = s (1 - s)`.
#[inline]
pub fn silu_d2(x: f64) -> f64 {
    silu_d2_given(x, sigmoid(x))
}

/// Third derivative of SiLU.
#[inline]
pub fn silu_d3(x: f64) -> f64 {
    silu_d3_given(x, sigmoid(x))
}

/// [`silu_d1`] with `s = sigmoid(x)` already known.
#[inline]
pub fn silu_d1_given(x: f64, s: f64) -> f64 {
    s * (1.0 + x * (1.0 - s))
}

#[inline]
pub fn silu_d2_given(x: f64, s: f64) -> f64 {
    let ds = s * (1.0 - s);
    ds * (2.0 + x * (1.0 - 2.0 * s))
}

#[inline]
pub fn silu_d3_given(x: f64, s: f64) -> f64 {
    let ds = s * (1.0 - s);
    let dds = ds * (1.0 - 2.0 * s);
    dds * (2.0 + x * (1.0 - 2.0 * s)) + ds * (1.0 - 2.0 * s - 2.0 * x * ds)
}

/// Elementwise smooth-L1 (Huber with threshold `beta`, divided by `beta`
/// in the quadratic branch).
#[inline]
pub fn smooth_l1(err: f64, beta: f64) -> f64 {
    let a = err.abs();
    if a < beta {
        0.5 * err * err / beta
    } else {
        a - 0.5 * beta
    }
}

#[inline]
pub fn smooth_l1_grad(err: f64, beta: f64) -> f64 {
    if err.abs() < beta {
        err / beta
    } else if err > 0.0 {
        1.0
    } else if err < 0.0 {
        -1.0
    } else {
        0.0
    }
}
