//! The closed-form frontier family: a four-constant shape curve over the gap
//! delta, and its seven-constant extension where the offset scales as
//! C1 + C2(N^-C3 + D^-C4) in model size N and train-set size D.

use crate::error::{Error, Result};
use crate::frontier::{budget_envelope, FrontierCurve, FrontierKind};

/// Shape constants: loss(delta) = b - c*c'*ln(1-c''+delta) - c*(1-c')*ln(c''-delta)
/// plus a quadratic correction term. Valid deltas lie strictly inside
/// (max(0, c''-1), c'').
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeConstants {
    pub c: f64,
    pub c_prime: f64,
    pub c_double_prime: f64,
    pub b: f64,
}

impl ShapeConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::Config(format!("c must be finite and >= 0, got {}", self.c)));
        }
        if !(0.0..=1.0).contains(&self.c_prime) {
            return Err(Error::Config(format!("c' must be in [0,1], got {}", self.c_prime)));
        }
        if !(0.0..=1.0).contains(&self.c_double_prime) {
            return Err(Error::Config(format!(
                "c'' must be in [0,1], got {}",
                self.c_double_prime
            )));
        }
        if !self.b.is_finite() {
            return Err(Error::Config("b must be finite".into()));
        }
        let (lo, hi) = self.delta_domain();
        if !(lo < hi) {
            return Err(Error::Config(format!("empty delta domain [{lo}, {hi})")));
        }
        Ok(())
    }

    /// Open interval of valid deltas: (max(0, c''-1), c'').
    pub fn delta_domain(&self) -> (f64, f64) {
        ((self.c_double_prime - 1.0).max(0.0), self.c_double_prime)
    }
}

/// The scaled family: C5, C6, C7 play the roles of c, c', c''; the offset is
/// C1 + C2(N^-C3 + D^-C4).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
}

impl ScalingConstants {
    pub fn validate(&self) -> Result<()> {
        if self.c2 < 0.0 {
            return Err(Error::Config(format!("C2 must be >= 0, got {}", self.c2)));
        }
        if self.c3 <= 0.0 || self.c4 <= 0.0 {
            return Err(Error::Config(format!(
                "C3, C4 must be > 0, got {}, {}",
                self.c3, self.c4
            )));
        }
        if !(self.c7 > 0.0 && self.c7 <= 1.0) {
            return Err(Error::Config(format!("C7 must be in (0,1], got {}", self.c7)));
        }
        self.shape(0.0).validate()
    }

    /// Shape constants at offset `b`.
    pub fn shape(&self, b: f64) -> ShapeConstants {
        ShapeConstants {
            c: self.c5,
            c_prime: self.c6,
            c_double_prime: self.c7,
            b,
        }
    }

    /// The scale-dependent offset C1 + C2(N^-C3 + D^-C4).
    pub fn offset(&self, n_params: f64, d_train: f64) -> f64 {
        self.c1 + self.c2 * (n_params.powf(-self.c3) + d_train.powf(-self.c4))
    }
}

/// Closed-form frontier loss at gap `delta`. Errors on or outside the domain
/// boundary, naming the log argument that fails.
pub fn pf_loss(delta: f64, k: &ShapeConstants) -> Result<f64> {
    k.validate()?;
    let u = 1.0 - k.c_double_prime + delta; // argument of the first log
    let v = k.c_double_prime - delta; // argument of the second log
    if u <= 0.0 {
        return Err(Error::Domain(format!(
            "log argument 1-c''+delta = {u:?} not positive at delta {delta}"
        )));
    }
    if v <= 0.0 {
        return Err(Error::Domain(format!(
            "log argument c''-delta = {v:?} not positive at delta {delta}"
        )));
    }
    let quad = v * u * (k.c * k.c_prime / (2.0 * u * u) + k.c * (1.0 - k.c_prime) / (2.0 * v * v));
    Ok(k.b - k.c * k.c_prime * u.ln() - k.c * (1.0 - k.c_prime) * v.ln() + quad)
}

/// Seven-constant frontier loss at (delta, N, D).
pub fn scaling_loss(delta: f64, n_params: f64, d_train: f64, c: &ScalingConstants) -> Result<f64> {
    if n_params < 1.0 || d_train < 1.0 {
        return Err(Error::Config(format!(
            "n_params and d_train must be >= 1, got {n_params}, {d_train}"
        )));
    }
    pf_loss(delta, &c.shape(c.offset(n_params, d_train)))
}

/// The default evaluation grid: 512 uniform deltas just inside the domain.
pub fn default_grid(k: &ShapeConstants) -> Vec<f64> {
    let (lo, hi) = k.delta_domain();
    let (lo, hi) = (lo + 1e-6, hi - 1e-6);
    let n = 512;
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Evaluates the exact curve over `grid` and its budget envelope. Boundary or
/// out-of-domain grid points are skipped and reported back, never clamped.
pub fn sweep_shape(grid: &[f64], k: &ShapeConstants) -> Result<(FrontierCurve, FrontierCurve, Vec<f64>)> {
    k.validate()?;
    let mut pts = Vec::with_capacity(grid.len());
    let mut skipped = Vec::new();
    for &d in grid {
        match pf_loss(d, k) {
            Ok(l) => pts.push((d, l)),
            Err(Error::Domain(_)) => skipped.push(d),
            Err(e) => return Err(e),
        }
    }
    if pts.is_empty() {
        return Err(Error::Infeasible("entire grid outside the delta domain".into()));
    }
    let source = format!(
        "shape c={:?} c'={:?} c''={:?} b={:?}",
        k.c, k.c_prime, k.c_double_prime, k.b
    );
    let mut exact_pts = pts.clone();
    exact_pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let exact = FrontierCurve {
        kind: FrontierKind::ExactGapHull,
        vertices: exact_pts,
        source: source.clone(),
    };
    let envelope = budget_envelope(&pts, &source)?;
    Ok((exact, envelope, skipped))
}
