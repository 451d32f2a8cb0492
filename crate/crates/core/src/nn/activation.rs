use serde::{Deserialize, Serialize};

use crate::nn::{Real, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub fn apply_scalar<T: Real>(self, v: T) -> T {
        match self {
            Activation::Sigmoid => {
                // Split by sign so exp never overflows.
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(T::zero()),
            Activation::LeakyRelu { slope } => {
                if v > T::zero() {
                    v
                } else {
                    v * T::lit(slope)
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::lit(slope)
                }
            }
        }
    }

    pub fn apply<T: Real>(self, input: &Tensor4<T>) -> Tensor4<T> {
        input.map(|v| self.apply_scalar(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(Activation::Sigmoid.apply_scalar(0.0f64), 0.5);
        assert_eq!(Activation::Tanh.apply_scalar(0.0f64), 0.0);
        let lr = Activation::LeakyRelu { slope: 0.2 };
        assert!((lr.apply_scalar(-1.0f64) + 0.2).abs() < 1e-15);
        assert_eq!(lr.apply_scalar(3.0f64), 3.0);
        assert_eq!(Activation::Relu.apply_scalar(-2.0f64), 0.0);
    }

    #[test]
    fn sigmoid_and_tanh_stay_in_range_at_extremes() {
        for v in [-80.0f32, -10.0, 10.0, 80.0] {
            let s = Activation::Sigmoid.apply_scalar(v);
            assert!((0.0..=1.0).contains(&s) && s.is_finite());
            let t = Activation::Tanh.apply_scalar(v);
            assert!((-1.0..=1.0).contains(&t));
        }
        for v in [-5.0f64, -0.3, 0.4, 5.0] {
            let s = Activation::Sigmoid.apply_scalar(v);
            assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for kind in [
            Activation::Sigmoid,
            Activation::Tanh,
            Activation::Relu,
            Activation::LeakyRelu { slope: 0.2 },
        ] {
            for x in [-1.3f64, -0.2, 0.7, 2.1] {
                let y = kind.apply_scalar(x);
                let fd = (kind.apply_scalar(x + h) - kind.apply_scalar(x - h)) / (2.0 * h);
                assert!((fd - kind.derivative(x, y)).abs() < 1e-8, "{kind:?} at {x}");
            }
        }
    }
}
