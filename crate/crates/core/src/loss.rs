//! Robust scalar loss functions applied entrywise to residuals.
//!
//! Every loss here is even, twice differentiable almost everywhere, satisfies
//! `l(0) = 0`, `l(t) <= t^2 / 2`, and has a derivative of the form
//! `l'(t) = psi(t) * t` with `psi` taking values in `[0, 1]` and `psi(0) = 1`.
//! Those properties are what the solver's convergence arguments lean on, and
//! the test suite checks them directly on sampled points.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("unknown loss '{0}'")]
    Unknown(String),
    #[error("invalid parameter for loss '{name}': {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// Entrywise loss. Parameters are validated at construction.
#[derive(Clone, Debug, PartialEq)]
pub enum LossFunction {
    /// `t^2 / 2`.
    LeastSquares,
    /// Quadratic inside `[-delta, delta]`, linear growth outside.
    Huber { delta: f64 },
    /// Quadratic inside, `|t|^p` growth outside; `p = 2` recovers least
    /// squares, `p = 1` recovers Huber.
    GeneralizedHuber { delta: f64, p: f64 },
    /// `2 (sqrt(1 + t^2 / 2) - 1)`.
    L1L2,
    /// `sigma^2 (|t| / sigma - ln(1 + |t| / sigma))`.
    Fair { sigma: f64 },
    /// `sigma^2 / 2 * ln(1 + t^2 / sigma^2)`; nonconvex, strongly redescending.
    Cauchy { sigma: f64 },
}

impl LossFunction {
    pub fn huber(delta: f64) -> Result<Self, LossError> {
        require_positive("huber", "delta", delta)?;
        Ok(LossFunction::Huber { delta })
    }

    pub fn generalized_huber(delta: f64, p: f64) -> Result<Self, LossError> {
        require_positive("ghuber", "delta", delta)?;
        if !(p > 0.0 && p <= 2.0) {
            return Err(LossError::InvalidParameter {
                name: "ghuber",
                reason: format!("p must lie in (0, 2], got {p}"),
            });
        }
        Ok(LossFunction::GeneralizedHuber { delta, p })
    }

    pub fn fair(sigma: f64) -> Result<Self, LossError> {
        require_positive("fair", "sigma", sigma)?;
        Ok(LossFunction::Fair { sigma })
    }

    pub fn cauchy(sigma: f64) -> Result<Self, LossError> {
        require_positive("cauchy", "sigma", sigma)?;
        Ok(LossFunction::Cauchy { sigma })
    }

    /// Loss value at residual `t`.
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            LossFunction::LeastSquares => 0.5 * t * t,
            LossFunction::Huber { delta } => {
                let a = t.abs();
                if a <= delta {
                    0.5 * t * t
                } else {
                    delta * a - 0.5 * delta * delta
                }
            }
            LossFunction::GeneralizedHuber { delta, p } => {
                let a = t.abs();
                if a <= delta {
                    0.5 * t * t
                } else {
                    let dp = delta.powf(2.0 - p);
                    dp * (a.powf(p) / p + delta.powf(p) * (0.5 - 1.0 / p))
                }
            }
            LossFunction::L1L2 => 2.0 * ((1.0 + 0.5 * t * t).sqrt() - 1.0),
            LossFunction::Fair { sigma } => {
                let a = t.abs() / sigma;
                sigma * sigma * (a - a.ln_1p())
            }
            LossFunction::Cauchy { sigma } => {
                0.5 * sigma * sigma * (t * t / (sigma * sigma)).ln_1p()
            }
        }
    }

    /// First derivative `l'(t)`.
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            LossFunction::LeastSquares => t,
            LossFunction::Huber { delta } => {
                if t.abs() <= delta {
                    t
                } else {
                    delta * t.signum()
                }
            }
            LossFunction::GeneralizedHuber { delta, p } => {
                let a = t.abs();
                if a <= delta {
                    t
                } else {
                    delta.powf(2.0 - p) * a.powf(p - 1.0) * t.signum()
                }
            }
            LossFunction::L1L2 => t / (1.0 + 0.5 * t * t).sqrt(),
            LossFunction::Fair { sigma } => t / (1.0 + t.abs() / sigma),
            LossFunction::Cauchy { sigma } => t / (1.0 + t * t / (sigma * sigma)),
        }
    }

    /// The weight function `psi(t) = l'(t) / t`, continuously extended by
    /// `psi(0) = 1`. Always in `[0, 1]`.
    pub fn psi(&self, t: f64) -> f64 {
        match *self {
            LossFunction::LeastSquares => 1.0,
            LossFunction::Huber { delta } => {
                let a = t.abs();
                if a <= delta {
                    1.0
                } else {
                    delta / a
                }
            }
            LossFunction::GeneralizedHuber { delta, p } => {
                let a = t.abs();
                if a <= delta {
                    1.0
                } else {
                    delta.powf(2.0 - p) * a.powf(p - 2.0)
                }
            }
            LossFunction::L1L2 => 1.0 / (1.0 + 0.5 * t * t).sqrt(),
            LossFunction::Fair { sigma } => 1.0 / (1.0 + t.abs() / sigma),
            LossFunction::Cauchy { sigma } => 1.0 / (1.0 + t * t / (sigma * sigma)),
        }
    }

    /// Parses a loss specification string: `ls`, `huber[:delta]`,
    /// `ghuber[:delta[:p]]`, `l1l2`, `fair[:sigma]`, `cauchy[:sigma]`.
    /// Defaults: `delta = 1`, `p = 1`, `sigma = 1` for fair, `sigma = 0.08`
    /// for cauchy.
    pub fn parse(spec: &str) -> Result<Self, LossError> {
        let mut parts = spec.split(':');
        let name = parts.next().unwrap_or("").trim();
        let args: Vec<&str> = parts.map(|s| s.trim()).collect();
        let num = |s: &str, what: &'static str| -> Result<f64, LossError> {
            s.parse::<f64>().map_err(|_| LossError::InvalidParameter {
                name: what,
                reason: format!("'{s}' is not a number"),
            })
        };
        match (name, args.len()) {
            ("ls", 0) => Ok(LossFunction::LeastSquares),
            ("l1l2", 0) => Ok(LossFunction::L1L2),
            ("huber", 0) => LossFunction::huber(1.0),
            ("huber", 1) => LossFunction::huber(num(args[0], "huber")?),
            ("ghuber", 0) => LossFunction::generalized_huber(1.0, 1.0),
            ("ghuber", 1) => LossFunction::generalized_huber(num(args[0], "ghuber")?, 1.0),
            ("ghuber", 2) => {
                LossFunction::generalized_huber(num(args[0], "ghuber")?, num(args[1], "ghuber")?)
            }
            ("fair", 0) => LossFunction::fair(1.0),
            ("fair", 1) => LossFunction::fair(num(args[0], "fair")?),
            ("cauchy", 0) => LossFunction::cauchy(0.08),
            ("cauchy", 1) => LossFunction::cauchy(num(args[0], "cauchy")?),
            _ => Err(LossError::Unknown(spec.to_string())),
        }
    }

    /// Canonical spec string, inverse of `parse`.
    pub fn spec_string(&self) -> String {
        match *self {
            LossFunction::LeastSquares => "ls".into(),
            LossFunction::Huber { delta } => format!("huber:{delta}"),
            LossFunction::GeneralizedHuber { delta, p } => format!("ghuber:{delta}:{p}"),
            LossFunction::L1L2 => "l1l2".into(),
            LossFunction::Fair { sigma } => format!("fair:{sigma}"),
            LossFunction::Cauchy { sigma } => format!("cauchy:{sigma}"),
        }
    }
}

impl std::fmt::Display for LossFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.spec_string())
    }
}

fn require_positive(name: &'static str, what: &str, v: f64) -> Result<(), LossError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(LossError::InvalidParameter {
            name,
            reason: format!("{what} must be positive and finite, got {v}"),
        })
    }
}

/// All six families with representative parameters; test helper.
#[doc(hidden)]
pub fn representative_losses() -> Vec<LossFunction> {
    vec![
        LossFunction::LeastSquares,
        LossFunction::huber(1.0).unwrap(),
        LossFunction::generalized_huber(1.0, 1.5).unwrap(),
        LossFunction::L1L2,
        LossFunction::fair(1.0).unwrap(),
        LossFunction::cauchy(0.08).unwrap(),
    ]
}
