use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Elementwise nonlinearity φ. Every variant maps 0 to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Softsign,
    Tanh,
    /// ELU with unit scale.
    Elu,
}

impl Activation {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::Softsign => u / (1.0 + u.abs()),
            Activation::Tanh => u.tanh(),
            Activation::Elu => {
                if u > 0.0 {
                    u
                } else {
                    u.exp_m1()
                }
            }
        }
    }

    /// φ'(u) from the pre-activation. ReLU uses 0 at the kink.
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softsign => {
                let d = 1.0 + u.abs();
                1.0 / (d * d)
            }
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Activation::Elu => {
                if u > 0.0 {
                    1.0
                } else {
                    u.exp()
                }
            }
        }
    }

    pub fn map(self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|&x| self.apply(x)).collect()
    }

    /// `grad ⊙ φ'(u)`.
    pub fn backward(self, u: &[f64], grad: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(grad)
            .map(|(&x, &g)| g * self.derivative(x))
            .collect()
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Softsign => "softsign",
            Activation::Tanh => "tanh",
            Activation::Elu => "elu",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "softsign" => Ok(Activation::Softsign),
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Activation; 4] = [
        Activation::Relu,
        Activation::Softsign,
        Activation::Tanh,
        Activation::Elu,
    ];

    #[test]
    fn fixes_zero() {
        for act in ALL {
            assert_eq!(act.apply(0.0), 0.0, "{act}");
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let h = 1e-6;
        for act in ALL {
            for &u in &[-2.3, -0.4, 0.3, 1.7] {
                let fd = (act.apply(u + h) - act.apply(u - h)) / (2.0 * h);
                assert!((fd - act.derivative(u)).abs() < 1e-8, "{act} at {u}");
            }
        }
    }

    #[test]
    fn parses_names() {
        for act in ALL {
            assert_eq!(act.to_string().parse::<Activation>().unwrap(), act);
        }
        assert!("gelu".parse::<Activation>().is_err());
    }
}
