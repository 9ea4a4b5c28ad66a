//! System parameters of the N-system and the dimensionless ratios derived
//! from them.
//!
//! Pool `s1` (flexible) serves both customer types, pool `s2` serves only
//! type `c1` customers. Everything downstream is a pure function of
//! [`SystemParams`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six primitive parameters of the N-system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Arrival rate of type `c1` customers.
    pub lambda1: f64,
    /// Arrival rate of type `c2` customers.
    pub lambda2: f64,
    /// Number of flexible `s1` servers.
    pub n1: usize,
    /// Number of dedicated `s2` servers.
    pub n2: usize,
    /// Service rate of an `s1` server.
    pub mu1: f64,
    /// Service rate of an `s2` server.
    pub mu2: f64,
}

/// Ratios derived from [`SystemParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedRatios {
    pub lambda: f64,
    pub n: usize,
    pub alpha: f64,
    pub theta: f64,
    pub rho: f64,
    pub delta: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stability {
    /// `rho < 1 && delta < 1`.
    pub stable: bool,
    /// Stability is necessary for pooling; pooling itself also needs `beta`
    /// (see [`crate::fluid::pooling`]).
    pub pooled_prerequisite: bool,
}

/// Server pool membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ServerKind {
    /// Flexible server, serves both customer types.
    S1,
    /// Dedicated server, serves type `c1` only.
    S2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CustomerKind {
    C1,
    C2,
}

impl ServerKind {
    pub fn serves(self, c: CustomerKind) -> bool {
        !(self == ServerKind::S2 && c == CustomerKind::C2)
    }

    pub fn index(self) -> usize {
        match self {
            ServerKind::S1 => 0,
            ServerKind::S2 => 1,
        }
    }
}

impl CustomerKind {
    pub fn index(self) -> usize {
        match self {
            CustomerKind::C1 => 0,
            CustomerKind::C2 => 1,
        }
    }
}

impl SystemParams {
    pub fn mu(&self, kind: ServerKind) -> f64 {
        match kind {
            ServerKind::S1 => self.mu1,
            ServerKind::S2 => self.mu2,
        }
    }
}

/// Dimensionless description of a family of systems indexed by total size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub alpha: f64,
    pub theta: f64,
    pub rho: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl SystemParams {
    /// Builds validated parameters.
    pub fn new(lambda1: f64, lambda2: f64, n1: usize, n2: usize, mu1: f64, mu2: f64) -> Result<Self> {
        let p = Self { lambda1, lambda2, n1, n2, mu1, mu2 };
        p.validate()?;
        Ok(p)
    }

    /// Parses a JSON document carrying exactly the six primitive fields.
    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::InvalidParams(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda1, self.lambda2, self.mu1, self.mu2].iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParams("rates must be finite".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::InvalidParams("arrival rates must be non-negative".into()));
        }
        if self.lambda1 + self.lambda2 <= 0.0 {
            return Err(Error::InvalidParams("total arrival rate must be positive".into()));
        }
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::InvalidParams("both pools need at least one server".into()));
        }
        if self.mu1 <= 0.0 || self.mu2 <= 0.0 {
            return Err(Error::InvalidParams("service rates must be positive".into()));
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda1 + self.lambda2
    }

    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    /// Total service capacity `n1*mu1 + n2*mu2`.
    pub fn capacity(&self) -> f64 {
        self.n1 as f64 * self.mu1 + self.n2 as f64 * self.mu2
    }

    pub fn derive(&self) -> DerivedRatios {
        let lambda = self.lambda();
        let n = self.n();
        DerivedRatios {
            lambda,
            n,
            alpha: self.lambda1 / lambda,
            theta: self.n1 as f64 / n as f64,
            rho: lambda / self.capacity(),
            delta: self.lambda2 / (self.n1 as f64 * self.mu1),
            kappa: self.lambda1 / (self.mu2 * self.n2 as f64),
        }
    }

    pub fn stability(&self) -> Stability {
        let d = self.derive();
        let stable = d.rho < 1.0 && d.delta < 1.0;
        Stability { stable, pooled_prerequisite: stable }
    }

    /// Fails with [`Error::Unstable`] unless `rho < 1` and `delta < 1`.
    pub fn require_stable(&self) -> Result<()> {
        let d = self.derive();
        if d.rho < 1.0 && d.delta < 1.0 {
            Ok(())
        } else {
            Err(Error::Unstable { rho: d.rho, delta: d.delta })
        }
    }
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.alpha)
            && self.theta > 0.0
            && self.theta < 1.0
            && self.rho > 0.0
            && self.rho.is_finite()
            && self.mu1 > 0.0
            && self.mu2 > 0.0
            && self.mu1.is_finite()
            && self.mu2.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("invalid shape {self:?}")))
        }
    }

    /// Instantiates the shape at total size `n`: `n1 = ceil(theta n)`,
    /// `lambda = rho (n1 mu1 + n2 mu2)`.
    ///
    /// The arrival rate keeps `rho` equal to the offered-load fraction for any
    /// service rates, which coincides with `lambda = rho n` when `mu1 = mu2 = 1`.
    pub fn scale(&self, n: usize) -> Result<SystemParams> {
        self.validate()?;
        if n < 2 {
            return Err(Error::InvalidParams(format!("n = {n} must be at least 2")));
        }
        let n1 = ((self.theta * n as f64).ceil() as usize).max(1);
        if n1 >= n {
            return Err(Error::InvalidParams(format!("theta = {} leaves no s2 servers at n = {n}", self.theta)));
        }
        let n2 = n - n1;
        let capacity = n1 as f64 * self.mu1 + n2 as f64 * self.mu2;
        let lambda = self.rho * capacity;
        SystemParams::new(self.alpha * lambda, (1.0 - self.alpha) * lambda, n1, n2, self.mu1, self.mu2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn symmetric_system_ratios() {
        let p = SystemParams::new(80.0, 20.0, 100, 100, 1.0, 1.0).unwrap();
        let d = p.derive();
        assert!(close(d.alpha, 0.8));
        assert!(close(d.theta, 0.5));
        assert!(close(d.rho, 0.5));
        assert!(close(d.delta, 0.2));
        assert!(close(d.kappa, 0.8));
        assert!(p.stability().stable);
    }

    #[test]
    fn no_c2_arrivals() {
        let d = SystemParams::new(7.0, 0.0, 3, 4, 1.0, 2.0).unwrap().derive();
        assert_eq!(d.alpha, 1.0);
        assert_eq!(d.delta, 0.0);
    }

    #[test]
    fn heterogeneous_rates() {
        let d = SystemParams::new(36.0, 24.0, 50, 50, 2.0, 1.0).unwrap().derive();
        assert!(close(d.rho, 0.4));
        assert!(close(d.delta, 0.24));
        assert!(close(d.kappa, 0.72));
    }

    #[test]
    fn stability_boundaries() {
        // delta = 1
        let p = SystemParams::new(1.0, 100.0, 100, 100, 1.0, 1.0).unwrap();
        assert!(!p.stability().stable);
        assert!(matches!(p.require_stable(), Err(Error::Unstable { .. })));
        // rho = 1
        let p = SystemParams::new(100.0, 50.0, 50, 50, 2.0, 1.0).unwrap();
        assert_eq!(p.derive().rho, 1.0);
        assert!(!p.stability().stable);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SystemParams::new(0.0, 0.0, 1, 1, 1.0, 1.0).is_err());
        assert!(SystemParams::new(1.0, -1.0, 1, 1, 1.0, 1.0).is_err());
        assert!(SystemParams::new(1.0, 1.0, 0, 1, 1.0, 1.0).is_err());
        assert!(SystemParams::new(1.0, 1.0, 1, 1, 0.0, 1.0).is_err());
        assert!(SystemParams::new(f64::NAN, 1.0, 1, 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn json_ingestion() {
        let p = SystemParams::from_json(r#"{"lambda1": 80, "lambda2": 20, "n1": 100, "n2": 100, "mu1": 1, "mu2": 1}"#)
            .unwrap();
        assert_eq!(p.n1, 100);
        let unknown = r#"{"lambda1": 80, "lambda2": 20, "n1": 100, "n2": 100, "mu1": 1, "mu2": 1, "extra": 3}"#;
        assert!(SystemParams::from_json(unknown).is_err());
        let missing = r#"{"lambda1": 80, "lambda2": 20, "n1": 100, "n2": 100, "mu1": 1}"#;
        assert!(SystemParams::from_json(missing).is_err());
    }

    #[test]
    fn scale_examples() {
        let shape = Shape { alpha: 0.8, theta: 0.5, rho: 0.5, mu1: 1.0, mu2: 1.0 };
        let p = shape.scale(200).unwrap();
        assert_eq!((p.n1, p.n2), (100, 100));
        assert!(close(p.lambda(), 100.0));
        assert!(close(p.lambda1, 80.0));

        let p = Shape { theta: 0.5, ..shape }.scale(3).unwrap();
        assert_eq!((p.n1, p.n2), (2, 1));

        let p = Shape { alpha: 0.6, theta: 0.4, rho: 0.7, mu1: 2.0, mu2: 1.0 }.scale(10).unwrap();
        assert_eq!((p.n1, p.n2), (4, 6));
        assert!(close(p.lambda(), 9.8));

        assert!(Shape { theta: 0.99, ..shape }.scale(10).is_err());
        assert!(shape.scale(1).is_err());
    }

    proptest! {
        #[test]
        fn derive_scale_round_trip(
            alpha in 0.01f64..=1.0,
            theta in 0.05f64..0.95,
            rho in 0.01f64..0.99,
            mu1 in 0.1f64..10.0,
            mu2 in 0.1f64..10.0,
            n in 20usize..2000,
        ) {
            let shape = Shape { alpha, theta, rho, mu1, mu2 };
            let p = shape.scale(n).unwrap();
            let d = p.derive();
            let eps = 4.0 * f64::EPSILON;
            prop_assert!((d.alpha - alpha).abs() <= eps);
            prop_assert!((d.rho - rho).abs() <= eps * rho);
            prop_assert_eq!(d.theta, (theta * n as f64).ceil() / n as f64);
            prop_assert_eq!(p.n1 + p.n2, n);
            prop_assert!((p.lambda1 + p.lambda2 - d.lambda).abs() <= eps * d.lambda);
        }
    }
}
