//! Scalar abstraction so the numeric core runs in either f32 or f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

/// Floating-point element type of tensors, parameters, and losses.
///
/// Randomness is always drawn in f64 and converted, so f32 and f64 runs
/// with the same seed see the same underlying sample stream.
///
/// The two activation functions live here because the types want
/// different trade-offs. f64 is the evaluation and verification type,
/// so it calls libm and its gate derivatives are exact to rounding.
/// f32 exists to make large training runs cheap on one core, so its
/// tanh is a clamped odd rational approximation (max abs error under
/// 3e-7, a couple of f32 ulps at saturation) that auto-vectorizes
/// instead of calling libm per element.
pub trait Scalar:
    Float + NumAssign + Sum + Debug + Display + std::str::FromStr + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;

    fn to_f64(self) -> f64;

    /// Logistic function 1 / (1 + e^-x).
    fn sigmoid_act(self) -> Self;

    /// Hyperbolic tangent.
    fn tanh_act(self) -> Self;

    const HALF: Self;
    const TWO: Self;
    /// Name used in checkpoint headers. Display/FromStr round-trips
    /// are exact only within one scalar type, so files are tagged.
    const TAG: &'static str;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn sigmoid_act(self) -> Self {
        0.5 * (0.5 * self).tanh_act() + 0.5
    }

    fn tanh_act(self) -> Self {
        // Odd rational x*P(x^2)/Q(x^2) on [-7.9, 7.9], saturated outside.
        const CLAMP: f32 = 7.905_311_3;
        const P: [f32; 7] = [
            -2.760_768_4e-16,
            2.000_187_9e-13,
            -8.604_671_6e-11,
            5.122_297_1e-8,
            1.485_722_4e-5,
            6.372_619_3e-4,
            4.893_524_6e-3,
        ];
        const Q: [f32; 4] = [1.198_258_4e-6, 1.185_347e-4, 2.268_434_6e-3, 4.893_525_2e-3];
        let x = self.clamp(-CLAMP, CLAMP);
        let x2 = x * x;
        let p = P.iter().fold(0.0f32, |acc, &c| acc.mul_add(x2, c));
        let q = Q.iter().fold(0.0f32, |acc, &c| acc.mul_add(x2, c));
        x * p / q
    }

    const HALF: Self = 0.5;
    const TWO: Self = 2.0;
    const TAG: &'static str = "f32";
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn sigmoid_act(self) -> Self {
        1.0 / (1.0 + (-self).exp())
    }

    fn tanh_act(self) -> Self {
        self.tanh()
    }

    const HALF: Self = 0.5;
    const TWO: Self = 2.0;
    const TAG: &'static str = "f64";
}
