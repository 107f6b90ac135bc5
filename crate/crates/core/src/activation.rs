use num_traits::Float;

/// In-place logistic sigmoid `1 / (1 + e^-x)`. Saturates to 0/1 without NaN.
pub fn sigmoid_block<F: Float>(buf: &mut [F]) {
    for v in buf {
        *v = sigmoid(*v);
    }
}

/// In-place hyperbolic tangent.
pub fn tanh_block<F: Float>(buf: &mut [F]) {
    for v in buf {
        *v = v.tanh();
    }
}

#[inline]
pub(crate) fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Elementwise activation fused after a fully-connected block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply_block(self, buf: &mut [f32]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => buf.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => sigmoid_block(buf),
        }
    }

    pub fn apply_f64(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "none" => Ok(Self::Identity),
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_at_zero() {
        let mut s = [0.0f32];
        sigmoid_block(&mut s);
        let mut t = [0.0f32];
        tanh_block(&mut t);
        assert_eq!(s[0], 0.5);
        assert_eq!(t[0], 0.0);
    }

    #[test]
    fn sigmoid_symmetry() {
        let xs: Vec<f32> = (0..200).map(|i| (i as f32 * 0.37).sin() * 12.0).collect();
        let mut pos = xs.clone();
        let mut neg: Vec<f32> = xs.iter().map(|x| -x).collect();
        sigmoid_block(&mut pos);
        sigmoid_block(&mut neg);
        for (p, n) in pos.iter().zip(&neg) {
            assert!((n - (1.0 - p)).abs() <= 1e-6, "{p} {n}");
        }
    }

    #[test]
    fn saturation_without_nan() {
        let mut s = [-50.0f32, 50.0, -1e30, 1e30];
        let mut t = s;
        sigmoid_block(&mut s);
        tanh_block(&mut t);
        assert!(s.iter().chain(&t).all(|v| v.is_finite()));
        assert!(s[0] < 1e-20 && s[2] == 0.0);
        assert_eq!(s[1], 1.0);
        assert_eq!(t, [-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn monotone() {
        let mut xs: Vec<f64> = (-400..400).map(|i| i as f64 * 0.05).collect();
        let mut ts = xs.clone();
        sigmoid_block(&mut xs);
        tanh_block(&mut ts);
        assert!(xs.windows(2).all(|w| w[0] <= w[1]));
        assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn relu_and_parse() {
        let mut v = [-1.0f32, 0.0, 2.0];
        Activation::Relu.apply_block(&mut v);
        assert_eq!(v, [0.0, 0.0, 2.0]);
        assert_eq!("ReLU".parse::<Activation>().unwrap(), Activation::Relu);
        assert!("tanh".parse::<Activation>().is_err());
    }
}
