use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::Element;

// sqrt(2 / pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// Pointwise nonlinearities. GELU uses the tanh approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Silu,
    Sigmoid,
    Relu,
}

#[inline]
fn sigmoid<E: Element>(x: E) -> E {
    E::one() / (E::one() + (-x).exp())
}

impl Activation {
    #[inline]
    pub fn apply<E: Element>(self, x: E) -> E {
        match self {
            Activation::Gelu => {
                let half = E::from_f64(0.5);
                let u = E::from_f64(GELU_K) * (x + E::from_f64(GELU_C) * x * x * x);
                half * x * (E::one() + u.tanh())
            }
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(E::zero()),
        }
    }

    /// d(apply)/dx at `x`.
    #[inline]
    pub fn derivative<E: Element>(self, x: E) -> E {
        match self {
            Activation::Gelu => {
                let (k, c, half) = (E::from_f64(GELU_K), E::from_f64(GELU_C), E::from_f64(0.5));
                let t = (k * (x + c * x * x * x)).tanh();
                let du = k * (E::one() + E::from_f64(3.0) * c * x * x);
                half * (E::one() + t) + half * x * (E::one() - t * t) * du
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (E::one() + x * (E::one() - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (E::one() - s)
            }
            Activation::Relu => {
                if x > E::zero() {
                    E::one()
                } else {
                    E::zero()
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Gelu => "gelu",
            Activation::Silu => "silu",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gelu" => Ok(Activation::Gelu),
            "silu" | "swish" => Ok(Activation::Silu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}
