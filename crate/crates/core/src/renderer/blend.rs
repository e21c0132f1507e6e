//! Front-to-back compositing, its exact inverse and its adjoint.
//!
//! States and samples are `[r, g, b, alpha]` with premultiplied color. For a
//! sample the color is the opacity-weighted emission `alpha_s * rgb`.

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::field::ALPHA_EPSILON;

pub type Rgba = [f64; 4];

#[inline]
pub(crate) fn blend_s<S: Scalar>(acc: &mut [S; 4], color: [S; 3], alpha: S) {
    let t = S::cst(1.0) - acc[3];
    acc[0] = acc[0] + t * color[0];
    acc[1] = acc[1] + t * color[1];
    acc[2] = acc[2] + t * color[2];
    acc[3] = acc[3] + t * alpha;
}

/// `C' = C + (1 - a) C_s`, `a' = a + (1 - a) a_s`.
pub fn blend(state: Rgba, sample: Rgba) -> Rgba {
    let mut acc = state;
    blend_s(&mut acc, [sample[0], sample[1], sample[2]], sample[3]);
    acc
}

#[inline]
pub(crate) fn invert_unchecked(next: Rgba, sample: Rgba) -> Rgba {
    let a_s = sample[3];
    let alpha = (a_s - next[3]) / (a_s - 1.0);
    let t = 1.0 - alpha;
    [
        next[0] - t * sample[0],
        next[1] - t * sample[1],
        next[2] - t * sample[2],
        alpha,
    ]
}

/// Recovers the state before `blend(state, sample)` from its result.
pub fn blend_invert(next: Rgba, sample: Rgba) -> Result<Rgba> {
    if !(sample[3] <= 1.0 - ALPHA_EPSILON) {
        return Err(Error::InvalidInput(format!(
            "sample opacity {} exceeds 1 - {ALPHA_EPSILON}",
            sample[3]
        )));
    }
    Ok(invert_unchecked(next, sample))
}

/// Transposed Jacobian of [`blend`] applied to `next_hat`; returns the
/// adjoints of the previous state and of the sample.
#[inline]
pub fn blend_adjoint(state: Rgba, sample: Rgba, next_hat: Rgba) -> (Rgba, Rgba) {
    let t = 1.0 - state[3];
    let color_dot = sample[0] * next_hat[0] + sample[1] * next_hat[1] + sample[2] * next_hat[2];
    let state_hat = [
        next_hat[0],
        next_hat[1],
        next_hat[2],
        (1.0 - sample[3]) * next_hat[3] - color_dot,
    ];
    let sample_hat = [t * next_hat[0], t * next_hat[1], t * next_hat[2], t * next_hat[3]];
    (state_hat, sample_hat)
}
