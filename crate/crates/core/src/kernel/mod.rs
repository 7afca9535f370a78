//! Covariance functions and Gram matrices.

mod bessel;

pub use bessel::{bessel_k, ln_bessel_k, ln_gamma};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn unit() -> f64 {
    1.0
}

/// A covariance function family together with its hyperparameters.
///
/// Serialized as a table tagged by `family`, e.g.
/// `{ family = "matern", lengthscale = 0.25, smoothness = 3.0 }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `amplitude · (x₁ᵀx₂ + offset)^degree`
    Polynomial {
        degree: u32,
        offset: f64,
        #[serde(default = "unit")]
        amplitude: f64,
    },
    /// `amplitude · exp(−‖x₁ − x₂‖² / (2 l²))`
    Rbf {
        lengthscale: f64,
        #[serde(default = "unit")]
        amplitude: f64,
    },
    /// `amplitude · 2^{1−ν}/Γ(ν) · z^ν K_ν(z)` with `z = √(2ν) ‖x₁ − x₂‖ / l`
    Matern {
        lengthscale: f64,
        smoothness: f64,
        #[serde(default = "unit")]
        amplitude: f64,
    },
}

impl KernelSpec {
    pub fn rbf(lengthscale: f64) -> Self {
        KernelSpec::Rbf {
            lengthscale,
            amplitude: 1.0,
        }
    }

    pub fn matern(smoothness: f64, lengthscale: f64) -> Self {
        KernelSpec::Matern {
            lengthscale,
            smoothness,
            amplitude: 1.0,
        }
    }

    pub fn polynomial(degree: u32, offset: f64) -> Self {
        KernelSpec::Polynomial {
            degree,
            offset,
            amplitude: 1.0,
        }
    }

    pub fn with_amplitude(mut self, value: f64) -> Self {
        match &mut self {
            KernelSpec::Polynomial { amplitude, .. }
            | KernelSpec::Rbf { amplitude, .. }
            | KernelSpec::Matern { amplitude, .. } => *amplitude = value,
        }
        self
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            KernelSpec::Polynomial { amplitude, .. }
            | KernelSpec::Rbf { amplitude, .. }
            | KernelSpec::Matern { amplitude, .. } => amplitude,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Polynomial { .. } => "polynomial",
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Matern { .. } => "matern",
        }
    }

    /// Whether `k(x, x)` is the same constant for every `x`.
    pub fn is_stationary(&self) -> bool {
        !matches!(self, KernelSpec::Polynomial { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::arg(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match *self {
            KernelSpec::Polynomial {
                degree,
                offset,
                amplitude,
            } => {
                if degree == 0 {
                    return Err(Error::arg("polynomial degree must be at least 1"));
                }
                if !offset.is_finite() {
                    return Err(Error::arg("polynomial offset must be finite"));
                }
                positive("amplitude", amplitude)
            }
            KernelSpec::Rbf {
                lengthscale,
                amplitude,
            } => {
                positive("lengthscale", lengthscale)?;
                positive("amplitude", amplitude)
            }
            KernelSpec::Matern {
                lengthscale,
                smoothness,
                amplitude,
            } => {
                positive("lengthscale", lengthscale)?;
                positive("smoothness", smoothness)?;
                positive("amplitude", amplitude)
            }
        }
    }

    /// `k(x₁, x₂)` with dimension and finiteness checks.
    pub fn eval(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        check_pair(x1, x2)?;
        Ok(self.covariance(x1, x2))
    }

    /// `k(x₁, x₂)` without argument checks; callers guarantee equal lengths
    /// and finite coordinates.
    pub fn covariance(&self, x1: &[f64], x2: &[f64]) -> f64 {
        debug_assert_eq!(x1.len(), x2.len());
        match *self {
            KernelSpec::Polynomial {
                degree,
                offset,
                amplitude,
            } => {
                let ip: f64 = x1.iter().zip(x2).map(|(a, b)| a * b).sum();
                amplitude * (ip + offset).powi(degree as i32)
            }
            KernelSpec::Rbf {
                lengthscale,
                amplitude,
            } => amplitude * (-0.5 * squared_distance(x1, x2) / (lengthscale * lengthscale)).exp(),
            KernelSpec::Matern {
                lengthscale,
                smoothness,
                amplitude,
            } => {
                let r = squared_distance(x1, x2).sqrt() / lengthscale;
                amplitude * matern_unit(smoothness, r)
            }
        }
    }

    /// `k(x, x)`.
    pub fn prior_variance(&self, x: &[f64]) -> f64 {
        self.covariance(x, x)
    }

    /// Gram matrix `[k(xᵢ, xⱼ)]`.
    pub fn gram(&self, points: &[Vec<f64>]) -> Result<Matrix> {
        check_points(points)?;
        let n = points.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.covariance(&points[i], &points[j]);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        Ok(m)
    }

    /// Short human-readable label, used in reports.
    pub fn label(&self) -> String {
        match *self {
            KernelSpec::Polynomial {
                degree,
                offset,
                amplitude,
            } => format!("polynomial(degree={degree},offset={offset},amplitude={amplitude})"),
            KernelSpec::Rbf {
                lengthscale,
                amplitude,
            } => format!("rbf(lengthscale={lengthscale},amplitude={amplitude})"),
            KernelSpec::Matern {
                lengthscale,
                smoothness,
                amplitude,
            } => format!("matern(smoothness={smoothness},lengthscale={lengthscale},amplitude={amplitude})"),
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unit-amplitude Matérn correlation at scaled distance `r = ‖x₁ − x₂‖ / l`.
fn matern_unit(nu: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    if nu == 0.5 {
        (-r).exp()
    } else if nu == 1.5 {
        let s = 3f64.sqrt() * r;
        (1.0 + s) * (-s).exp()
    } else if nu == 2.5 {
        let s = 5f64.sqrt() * r;
        (1.0 + s + s * s / 3.0) * (-s).exp()
    } else {
        matern_bessel_form(nu, r)
    }
}

/// The general Bessel-function form, valid for every `ν > 0` and `r > 0`.
pub(crate) fn matern_bessel_form(nu: f64, r: f64) -> f64 {
    let z = (2.0 * nu).sqrt() * r;
    let ln_k = ln_bessel_k(nu, z).expect("z > 0 for r > 0");
    let ln_v = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * z.ln() + ln_k;
    ln_v.exp().min(1.0)
}

pub(crate) fn check_point(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::arg("points must have dimension at least 1"));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::arg(format!("non-finite coordinate {v}")));
    }
    Ok(())
}

fn check_pair(x1: &[f64], x2: &[f64]) -> Result<()> {
    if x1.len() != x2.len() {
        return Err(Error::arg(format!(
            "dimension mismatch: {} vs {}",
            x1.len(),
            x2.len()
        )));
    }
    check_point(x1)?;
    check_point(x2)
}

/// Validates that every point is finite and shares one dimension.
pub(crate) fn check_points(points: &[Vec<f64>]) -> Result<()> {
    let Some(first) = points.first() else {
        return Ok(());
    };
    for p in points {
        if p.len() != first.len() {
            return Err(Error::arg(format!(
                "mixed dimensions: {} vs {}",
                first.len(),
                p.len()
            )));
        }
        check_point(p)?;
    }
    Ok(())
}
