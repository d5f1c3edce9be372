//! Univariate slice sampling with stepping out and shrinkage (Neal, 2003).

use rand::Rng;

const MAX_STEP_OUT: usize = 32;
const MAX_SHRINK: usize = 200;

/// Draws one slice-sampling update of `x0` under the unnormalised log density
/// `log_density`, restricted to the open interval `(lower, upper)`.
///
/// Either bound may be infinite. Points outside the interval are treated as
/// having zero density. If `x0` itself has zero density the value is returned
/// unchanged.
pub fn slice_sample<R, F>(
    x0: f64,
    mut log_density: F,
    lower: f64,
    upper: f64,
    width: f64,
    rng: &mut R,
) -> f64
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    let mut density = |x: f64| {
        if x <= lower || x >= upper || !x.is_finite() {
            f64::NEG_INFINITY
        } else {
            log_density(x)
        }
    };

    let fx0 = density(x0);
    if !fx0.is_finite() {
        return x0;
    }
    // Height of the slice, in log space.
    let u: f64 = rng.gen();
    let level = fx0 + (1.0 - u).ln();

    let mut left = x0 - width * rng.gen::<f64>();
    let mut right = left + width;
    let mut steps = 0;
    while steps < MAX_STEP_OUT && left > lower && density(left) > level {
        left -= width;
        steps += 1;
    }
    steps = 0;
    while steps < MAX_STEP_OUT && right < upper && density(right) > level {
        right += width;
        steps += 1;
    }
    left = left.max(lower);
    right = right.min(upper);

    for _ in 0..MAX_SHRINK {
        let x1 = left + rng.gen::<f64>() * (right - left);
        if density(x1) > level {
            return x1;
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
    }
    x0
}
