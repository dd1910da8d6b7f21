//! Confining potentials `V(x) = λx²/2 + β cos(ωx)`.
//!
//! The family is closed under the standing hypotheses of the decay estimate:
//! every derivative of order two or more is bounded and `e^{-V}` is
//! integrable, because the quadratic part dominates the bounded cosine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Harmonic,
    HarmonicCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub kind: PotentialKind,
    pub lambda: f64,
    pub beta: f64,
    pub omega: f64,
    #[serde(default = "one_dim")]
    pub dim: usize,
}

fn one_dim() -> usize {
    1
}

impl Potential {
    pub fn new(kind: PotentialKind, lambda: f64, beta: f64, omega: f64) -> Result<Self> {
        let p = Potential {
            kind,
            lambda,
            beta,
            omega,
            dim: 1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn harmonic(lambda: f64) -> Result<Self> {
        Self::new(PotentialKind::Harmonic, lambda, 0.0, 1.0)
    }

    pub fn harmonic_cosine(lambda: f64, beta: f64, omega: f64) -> Result<Self> {
        Self::new(PotentialKind::HarmonicCosine, lambda, beta, omega)
    }

    /// Re-checks the construction preconditions; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::NonConfining(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta", format!("must be >= 0, got {}", self.beta)));
        }
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::invalid("omega", format!("must be > 0, got {}", self.omega)));
        }
        if self.kind == PotentialKind::Harmonic && self.beta != 0.0 {
            return Err(Error::invalid("beta", "harmonic potential requires beta = 0"));
        }
        if self.dim != 1 {
            return Err(Error::invalid("dim", format!("only dim = 1 is supported, got {}", self.dim)));
        }
        Ok(())
    }

    pub fn eval_v(&self, x: f64) -> f64 {
        0.5 * self.lambda * x * x + self.beta * (self.omega * x).cos()
    }

    pub fn eval_v1(&self, x: f64) -> f64 {
        self.lambda * x - self.beta * self.omega * (self.omega * x).sin()
    }

    pub fn eval_v2(&self, x: f64) -> f64 {
        self.lambda - self.beta * self.omega.powi(2) * (self.omega * x).cos()
    }

    pub fn eval_v3(&self, x: f64) -> f64 {
        self.beta * self.omega.powi(3) * (self.omega * x).sin()
    }

    /// Closed-form sup-bounds `(M2, M3)` on `|V''|` and `|V'''|`.
    pub fn derivative_bounds(&self) -> (f64, f64) {
        (
            self.lambda + self.beta * self.omega.powi(2),
            self.beta * self.omega.powi(3),
        )
    }

    /// Trapezoid approximation of `∫_{-R}^{R} e^{-V}` on `n` intervals.
    pub fn confinement_mass(&self, radius: f64, n: usize) -> Result<f64> {
        if !(radius > 0.0) {
            return Err(Error::invalid("R", "must be > 0"));
        }
        if n < 16 {
            return Err(Error::invalid("n", "at least 16 intervals required"));
        }
        let h = 2.0 * radius / n as f64;
        let mut sum = 0.5 * ((-self.eval_v(-radius)).exp() + (-self.eval_v(radius)).exp());
        for i in 1..n {
            sum += (-self.eval_v(-radius + i as f64 * h)).exp();
        }
        Ok(sum * h)
    }
}
