//! Estimating the seven scaling constants from empirical frontier vertices:
//! derivative-free simplex descent with Latin-hypercube multi-start, box
//! constraints via smooth reparameterization, and a one-sided mode whose
//! fitted curve is guaranteed to lie below every observation.

use crate::closed_form::ScalingConstants;
use crate::error::{Error, Result};
use crate::frontier::{budget_envelope, FrontierCurve, FrontierKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub n_params: f64,
    pub d_train: f64,
    pub delta: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    LeastSquares,
    /// Least squares plus a hinge forcing the curve below every observation;
    /// the final offset is shifted so no violation exceeds 1e-6.
    LowerBound,
}

impl FitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMode::LeastSquares => "least_squares",
            FitMode::LowerBound => "lower_bound",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "least_squares" => Some(FitMode::LeastSquares),
            "lower_bound" => Some(FitMode::LowerBound),
            _ => None,
        }
    }
}

/// Optional pins fixing individual constants during the fit.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Pins {
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    pub c4: Option<f64>,
    pub c5: Option<f64>,
    pub c6: Option<f64>,
    pub c7: Option<f64>,
}

impl Pins {
    /// The conventional default: both scale exponents pinned at 0.5.
    pub fn half_exponents() -> Self {
        Pins {
            c3: Some(0.5),
            c4: Some(0.5),
            ..Pins::default()
        }
    }

    fn as_array(&self) -> [Option<f64>; 7] {
        [self.c1, self.c2, self.c3, self.c4, self.c5, self.c6, self.c7]
    }
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    pub observations: Vec<Observation>,
    pub weights: Option<Vec<f64>>,
    pub pins: Pins,
    pub mode: FitMode,
    pub n_starts: usize,
}

impl FitProblem {
    pub fn new(observations: Vec<Observation>, pins: Pins, mode: FitMode) -> Self {
        Self {
            observations,
            weights: None,
            pins,
            mode,
            n_starts: 32,
        }
    }

    fn validate(&self) -> Result<(Vec<Observation>, Vec<f64>)> {
        let obs = &self.observations;
        if obs.is_empty() {
            return Err(Error::Infeasible("no observations to fit".into()));
        }
        for o in obs {
            if !(o.delta.is_finite() && o.loss.is_finite()) {
                return Err(Error::Infeasible("non-finite observation".into()));
            }
            if o.delta >= 1.0 || o.delta < 0.0 {
                return Err(Error::Infeasible(format!(
                    "observed delta {} outside [0, 1)",
                    o.delta
                )));
            }
            if o.n_params < 1.0 || o.d_train < 1.0 {
                return Err(Error::Infeasible("n_params and d_train must be >= 1".into()));
            }
        }
        let pins = self.pins.as_array();
        let n_free = pins.iter().filter(|p| p.is_none()).count();
        if obs.len() < n_free + 1 {
            return Err(Error::Infeasible(format!(
                "{} observations cannot constrain {} free constants",
                obs.len(),
                n_free
            )));
        }
        // The scale exponents are unidentifiable without scale variation; a
        // free C2 alone is tolerated (the ridge resolves the C1/C2 tie).
        let scale_free = pins[2].is_none() || pins[3].is_none();
        if scale_free {
            let mut scales: Vec<(u64, u64)> = obs
                .iter()
                .map(|o| (o.n_params.to_bits(), o.d_train.to_bits()))
                .collect();
            scales.sort_unstable();
            scales.dedup();
            if scales.len() < 2 {
                return Err(Error::Infeasible(
                    "fitting scale constants needs at least 2 distinct (n_params, d_train) values"
                        .into(),
                ));
            }
        }
        let weights = match &self.weights {
            Some(w) => {
                if w.len() != obs.len() {
                    return Err(Error::Infeasible("weights length mismatch".into()));
                }
                if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                    return Err(Error::Infeasible("weights must be positive".into()));
                }
                w.clone()
            }
            None => vec![1.0; obs.len()],
        };
        // Canonical observation order makes the fit independent of input order.
        let mut pairs: Vec<(Observation, f64)> = obs.iter().copied().zip(weights).collect();
        pairs.sort_by(|a, b| {
            (a.0.n_params, a.0.d_train, a.0.delta, a.0.loss)
                .partial_cmp(&(b.0.n_params, b.0.d_train, b.0.delta, b.0.loss))
                .unwrap()
        });
        Ok(pairs.into_iter().unzip())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub constants: ScalingConstants,
    pub mode: FitMode,
    pub rmse: f64,
    /// Largest fitted-minus-observed residual (positive means the curve sits
    /// above a point somewhere).
    pub max_violation: f64,
    pub n_restarts_used: usize,
    pub non_converged: bool,
    /// Restart optima within 1% of the best rmse, exposing flat directions.
    pub near_optima: Vec<ScalingConstants>,
    /// Residual rms per (n_params, d_train) group.
    pub group_residuals: Vec<((u64, u64), f64)>,
}

/// Transform between the free-parameter vector and the constant box.
struct Reparam {
    pins: [Option<f64>; 7],
    c7_floor: f64,
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Reparam {
    fn n_free(&self) -> usize {
        self.pins.iter().filter(|p| p.is_none()).count()
    }

    /// theta -> constants. Unbounded C1 is identity; positives go through
    /// exp; C6 through a logistic; C7 through a logistic scaled onto
    /// (c7_floor, 1].
    fn constants(&self, theta: &[f64]) -> ScalingConstants {
        let mut vals = [0.0f64; 7];
        let mut it = theta.iter();
        for (i, v) in vals.iter_mut().enumerate() {
            *v = match self.pins[i] {
                Some(p) => p,
                None => {
                    let t = *it.next().expect("theta length matches free count");
                    match i {
                        0 => t,
                        1..=4 => t.exp(),
                        5 => logistic(t),
                        6 => self.c7_floor + (1.0 - self.c7_floor) * logistic(t),
                        _ => unreachable!(),
                    }
                }
            };
        }
        ScalingConstants {
            c1: vals[0],
            c2: vals[1],
            c3: vals[2],
            c4: vals[3],
            c5: vals[4],
            c6: vals[5],
            c7: vals[6],
        }
    }

    /// Natural sampling box in theta-space for multi-start.
    fn start_box(&self) -> Vec<(f64, f64)> {
        let mut box_ = Vec::new();
        for (i, p) in self.pins.iter().enumerate() {
            if p.is_some() {
                continue;
            }
            box_.push(match i {
                0 => (-3.0, 3.0),                      // C1
                1 => ((1e-3f64).ln(), (100.0f64).ln()), // C2
                2 | 3 => ((0.1f64).ln(), (1.5f64).ln()), // C3, C4
                4 => ((1e-3f64).ln(), (3.0f64).ln()),  // C5
                5 => (logit(0.02), logit(0.98)),       // C6
                6 => (logit(0.02), logit(0.98)),       // C7 (before scaling)
                _ => unreachable!(),
            });
        }
        box_
    }
}

/// Shape term without validation; +inf outside the domain so the simplex
/// treats boundaries as soft barriers.
fn shape_value(delta: f64, c5: f64, c6: f64, c7: f64) -> f64 {
    let u = 1.0 - c7 + delta;
    let v = c7 - delta;
    if u <= 0.0 || v <= 0.0 {
        return f64::INFINITY;
    }
    let quad = v * u * (c5 * c6 / (2.0 * u * u) + c5 * (1.0 - c6) / (2.0 * v * v));
    -c5 * c6 * u.ln() - c5 * (1.0 - c6) * v.ln() + quad
}

fn predict(o: &Observation, c: &ScalingConstants) -> f64 {
    c.offset(o.n_params, o.d_train) + shape_value(o.delta, c.c5, c.c6, c.c7)
}

fn objective(
    theta: &[f64],
    rp: &Reparam,
    obs: &[Observation],
    weights: &[f64],
    mode: FitMode,
) -> f64 {
    let c = rp.constants(theta);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut hinge = 0.0;
    for (o, &w) in obs.iter().zip(weights) {
        let r = predict(o, &c) - o.loss;
        if !r.is_finite() {
            return 1e30;
        }
        num += w * r * r;
        den += w;
        if mode == FitMode::LowerBound && r > 0.0 {
            hinge += w * r * r;
        }
    }
    // Tiny ridge on C2 breaks the single-scale degeneracy toward the
    // conservative (scale-independent) end.
    num / den + 1e4 * hinge / den + 1e-10 * c.c2 * c.c2
}

struct SimplexOutcome {
    theta: Vec<f64>,
    value: f64,
    converged: bool,
}

/// Standard Nelder-Mead on `f`, returning the best vertex.
fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, start: &[f64], max_iter: usize) -> SimplexOutcome {
    let d = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..d {
        let mut v = start.to_vec();
        v[i] += if v[i].abs() > 1e-6 { 0.1 * v[i].abs() } else { 0.1 };
        let fv = f(&v);
        simplex.push((v, fv));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = simplex[d].1 - simplex[0].1;
        if spread.abs() < 1e-13 * (1.0 + simplex[0].1.abs()) {
            converged = true;
            break;
        }
        let mut centroid = vec![0.0; d];
        for (v, _) in &simplex[..d] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / d as f64;
            }
        }
        let worst = simplex[d].clone();
        let refl: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(&c, &w)| c + alpha * (c - w))
            .collect();
        let f_refl = f(&refl);
        if f_refl < simplex[0].1 {
            let exp: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(&c, &w)| c + gamma * (c - w))
                .collect();
            let f_exp = f(&exp);
            simplex[d] = if f_exp < f_refl { (exp, f_exp) } else { (refl, f_refl) };
        } else if f_refl < simplex[d - 1].1 {
            simplex[d] = (refl, f_refl);
        } else {
            let contr: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(&c, &w)| c + rho * (w - c))
                .collect();
            let f_contr = f(&contr);
            if f_contr < worst.1 {
                simplex[d] = (contr, f_contr);
            } else {
                let best = simplex[0].0.clone();
                for (v, fv) in simplex.iter_mut().skip(1) {
                    for (x, &b) in v.iter_mut().zip(&best) {
                        *x = b + sigma * (*x - b);
                    }
                    *fv = f(v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    SimplexOutcome {
        theta: simplex[0].0.clone(),
        value: simplex[0].1,
        converged,
    }
}

/// Latin-hypercube start points over `box_`, deterministic.
fn lhs_starts(box_: &[(f64, f64)], n: usize) -> Vec<Vec<f64>> {
    let d = box_.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0x4c48_5342);
    let mut strata: Vec<Vec<usize>> = (0..d).map(|_| (0..n).collect()).collect();
    for col in &mut strata {
        for i in (1..col.len()).rev() {
            let j = rng.gen_range(0..=i);
            col.swap(i, j);
        }
    }
    (0..n)
        .map(|row| {
            (0..d)
                .map(|dim| {
                    let (lo, hi) = box_[dim];
                    let s = strata[dim][row] as f64;
                    let frac = (s + rng.gen_range(0.0..1.0)) / n as f64;
                    lo + (hi - lo) * frac
                })
                .collect()
        })
        .collect()
}

fn rmse_and_violation(obs: &[Observation], weights: &[f64], c: &ScalingConstants) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut viol = f64::NEG_INFINITY;
    for (o, &w) in obs.iter().zip(weights) {
        let r = predict(o, c) - o.loss;
        num += w * r * r;
        den += w;
        viol = viol.max(r);
    }
    ((num / den).sqrt(), viol)
}

/// Fits the seven constants to the observations.
pub fn fit(problem: &FitProblem) -> Result<FitResult> {
    let (obs, weights) = problem.validate()?;
    let max_delta = obs.iter().map(|o| o.delta).fold(0.0, f64::max);
    let c7_floor = max_delta + 1e-4;
    if c7_floor >= 1.0 {
        return Err(Error::Infeasible(format!(
            "max observed delta {max_delta} leaves no room for C7 in (0, 1]"
        )));
    }
    if let Some(c7) = problem.pins.c7 {
        if c7 <= max_delta {
            return Err(Error::Infeasible(format!(
                "pinned C7 {c7} does not exceed max observed delta {max_delta}"
            )));
        }
    }
    let rp = Reparam {
        pins: problem.pins.as_array(),
        c7_floor,
    };
    if rp.n_free() == 0 {
        let c = rp.constants(&[]);
        let (rmse, viol) = rmse_and_violation(&obs, &weights, &c);
        return Ok(FitResult {
            group_residuals: group_residuals(&obs, &weights, &c),
            constants: c,
            mode: problem.mode,
            rmse,
            max_violation: viol,
            n_restarts_used: 0,
            non_converged: false,
            near_optima: Vec::new(),
        });
    }

    let starts = lhs_starts(&rp.start_box(), problem.n_starts.max(1));
    let outcomes: Vec<(usize, SimplexOutcome)> = starts
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let f = |theta: &[f64]| objective(theta, &rp, &obs, &weights, problem.mode);
            let d = s.len();
            (i, nelder_mead(f, s, 600 * d))
        })
        .collect();
    let (best_idx, best) = outcomes
        .iter()
        .min_by(|a, b| (a.1.value, a.0).partial_cmp(&(b.1.value, b.0)).unwrap())
        .map(|(i, o)| (*i, o))
        .expect("at least one start");
    let _ = best_idx;

    let mut constants = rp.constants(&best.theta);
    if problem.mode == FitMode::LowerBound {
        // Any residual violation is absorbed into the offset.
        let (_, viol) = rmse_and_violation(&obs, &weights, &constants);
        if viol > 0.0 {
            constants.c1 -= viol;
        }
    }
    let (rmse, max_violation) = rmse_and_violation(&obs, &weights, &constants);

    let mut near_optima = Vec::new();
    for (_, o) in &outcomes {
        if o.value <= best.value * 1.01 + 1e-15 {
            let c = rp.constants(&o.theta);
            if (c.c1 - constants.c1).abs() > 1e-9
                || (c.c2 - constants.c2).abs() > 1e-9
                || (c.c7 - constants.c7).abs() > 1e-9
            {
                near_optima.push(c);
            }
        }
    }

    Ok(FitResult {
        group_residuals: group_residuals(&obs, &weights, &constants),
        constants,
        mode: problem.mode,
        rmse,
        max_violation,
        n_restarts_used: starts.len(),
        non_converged: !best.converged,
        near_optima,
    })
}

fn group_residuals(
    obs: &[Observation],
    weights: &[f64],
    c: &ScalingConstants,
) -> Vec<((u64, u64), f64)> {
    let mut map: std::collections::BTreeMap<(u64, u64), (f64, f64)> = std::collections::BTreeMap::new();
    for (o, &w) in obs.iter().zip(weights) {
        let r = predict(o, c) - o.loss;
        let e = map
            .entry((o.n_params as u64, o.d_train as u64))
            .or_insert((0.0, 0.0));
        e.0 += w * r * r;
        e.1 += w;
    }
    map.into_iter()
        .map(|(k, (num, den))| (k, (num / den).sqrt()))
        .collect()
}

/// Evaluates the fitted family at a new scale (N+, D+) over `grid`,
/// returning the exact curve and its budget envelope.
pub fn extrapolate(
    constants: &ScalingConstants,
    n_plus: f64,
    d_plus: f64,
    grid: &[f64],
) -> Result<(FrontierCurve, FrontierCurve)> {
    constants.validate()?;
    if n_plus < 1.0 || d_plus < 1.0 {
        return Err(Error::Config("extrapolation scale must be >= 1".into()));
    }
    let b = constants.offset(n_plus, d_plus);
    let mut pts = Vec::with_capacity(grid.len());
    for &d in grid {
        let v = shape_value(d, constants.c5, constants.c6, constants.c7);
        if !v.is_finite() {
            return Err(Error::Domain(format!(
                "grid delta {d} outside the fitted domain (c'' = {})",
                constants.c7
            )));
        }
        pts.push((d, b + v));
    }
    if pts.is_empty() {
        return Err(Error::Infeasible("empty extrapolation grid".into()));
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let source = format!("extrapolation n_plus={n_plus:?} d_plus={d_plus:?}");
    let exact = FrontierCurve {
        kind: FrontierKind::ExactGapHull,
        vertices: pts.clone(),
        source: source.clone(),
    };
    let envelope = budget_envelope(&pts, &source)?;
    Ok((exact, envelope))
}

/// Persists a fit as a structured text document.
pub fn write_fit(path: &Path, result: &FitResult, observation_digest: &str) -> Result<()> {
    let c = &result.constants;
    let mut out = String::new();
    out.push_str("# scaling-fit v1\n");
    out.push_str(&format!("mode={}\n", result.mode.as_str()));
    out.push_str(&format!("observation_digest={observation_digest}\n"));
    for (name, v) in [
        ("c1", c.c1),
        ("c2", c.c2),
        ("c3", c.c3),
        ("c4", c.c4),
        ("c5", c.c5),
        ("c6", c.c6),
        ("c7", c.c7),
    ] {
        out.push_str(&format!("{name}={v:?}\n"));
    }
    out.push_str(&format!("rmse={:?}\n", result.rmse));
    out.push_str(&format!("max_violation={:?}\n", result.max_violation));
    out.push_str(&format!("n_restarts_used={}\n", result.n_restarts_used));
    out.push_str(&format!("non_converged={}\n", result.non_converged));
    out.push_str(&format!("near_optima_count={}\n", result.near_optima.len()));
    for ((n, d), r) in &result.group_residuals {
        out.push_str(&format!("group_rmse n={n} d={d} {r:?}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads the constants, mode, and digest back from a fit document.
pub fn read_fit(path: &Path) -> Result<(ScalingConstants, FitMode, String)> {
    let body = std::fs::read_to_string(path)?;
    let mut vals = std::collections::HashMap::new();
    let mut mode = None;
    let mut digest = String::new();
    for (i, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("group_rmse") {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Parse {
            line: i + 1,
            msg: "expected key=value".into(),
        })?;
        match k {
            "mode" => {
                mode = Some(FitMode::parse(v).ok_or(Error::Parse {
                    line: i + 1,
                    msg: format!("unknown mode '{v}'"),
                })?)
            }
            "observation_digest" => digest = v.to_string(),
            "c1" | "c2" | "c3" | "c4" | "c5" | "c6" | "c7" => {
                let x: f64 = v.parse().map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("{e}"),
                })?;
                vals.insert(k.to_string(), x);
            }
            _ => {}
        }
    }
    let get = |k: &str| -> Result<f64> {
        vals.get(k).copied().ok_or(Error::Parse {
            line: 1,
            msg: format!("missing constant {k}"),
        })
    };
    let constants = ScalingConstants {
        c1: get("c1")?,
        c2: get("c2")?,
        c3: get("c3")?,
        c4: get("c4")?,
        c5: get("c5")?,
        c6: get("c6")?,
        c7: get("c7")?,
    };
    let mode = mode.ok_or(Error::Parse {
        line: 1,
        msg: "missing mode".into(),
    })?;
    Ok((constants, mode, digest))
}
