//! Torus-size rescaling: a period-`L` constant at `β` equals a period-1
//! constant at `β√L`, so every query is answered by the unit-torus estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rescaling {
    pub beta: f64,
    pub l: f64,
    /// `β/√L`.
    pub beta_l: f64,
    pub sigma2_relation: String,
    pub big_sigma2_relation: String,
}

impl Rescaling {
    /// Factor `c` in `Σ²(β, 1) = c · Σ²(β_L, L)`.
    pub fn big_sigma2_factor(&self) -> f64 {
        self.l * self.l
    }
}

pub fn rescale(beta: f64, l: f64) -> Result<Rescaling> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::Domain(format!("torus length must be positive, got {l}")));
    }
    let beta_l = beta / l.sqrt();
    let (sigma2_relation, big_sigma2_relation) = if l == 1.0 {
        ("identity".to_string(), "identity".to_string())
    } else {
        (
            format!("sigma2({beta}, 1) = sigma2({beta_l}, {l})"),
            format!("Sigma2({beta}, 1) = {} * Sigma2({beta_l}, {l})", l * l),
        )
    };
    Ok(Rescaling {
        beta,
        l,
        beta_l,
        sigma2_relation,
        big_sigma2_relation,
    })
}
