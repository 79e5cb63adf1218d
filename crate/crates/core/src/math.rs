//! Scalar math shims (std intrinsics or `libm`) and small numeric helpers.

macro_rules! shim {
    ($name:ident) => {
        #[inline(always)]
        pub fn $name(x: f64) -> f64 {
            #[cfg(feature = "std")]
            {
                x.$name()
            }
            #[cfg(not(feature = "std"))]
            {
                libm::$name(x)
            }
        }
    };
}

shim!(sqrt);
shim!(sin);
shim!(cos);
shim!(exp);
shim!(floor);

#[inline(always)]
pub fn ln(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.ln()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::log(x)
    }
}

#[inline(always)]
pub fn abs(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.abs()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::fabs(x)
    }
}

/// Pairwise summation: order-independent up to association, with error
/// growth O(log n) instead of O(n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Trapezoidal quadrature of uniformly spaced samples.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let interior = pairwise_sum(values);
    dt * (interior - 0.5 * (values[0] + values[values.len() - 1]))
}

/// Sample mean and standard error (sample sd over sqrt(n)).
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(samples) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let mut sq = alloc::vec::Vec::with_capacity(n);
    for &x in samples {
        let d = x - mean;
        sq.push(d * d);
    }
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, sqrt(var / n as f64))
}

/// Maximum absolute value over a slice (0 for empty input).
pub fn max_abs(xs: &[f64]) -> f64 {
    let mut m = 0.0;
    for &x in xs {
        let a = abs(x);
        if a > m {
            m = a;
        }
    }
    m
}
