//! The audit itself: how far a contested model sits from the extrapolated
//! frontier (the certified fairness-improvement distance delta*), what
//! resources would put a target point on the frontier, and a diagnostic for
//! the score-symmetry premise on synthetic data.

use crate::closed_form::{default_grid, pf_loss, ScalingConstants};
use crate::dgp::{bayes_optimal_score, g_network, Dataset, Provenance, Split};
use crate::error::{Error, Result};
use crate::fitting::{extrapolate, FitMode};
use crate::nn::MlpModel;
use std::path::Path;

/// The model under audit: its measured loss and fairness gap, and the scale
/// it was trained at.
#[derive(Debug, Clone)]
pub struct ContestedModel {
    pub loss: f64,
    pub delta: f64,
    pub n_plus: u64,
    pub d_plus: u64,
    pub label: String,
}

impl ContestedModel {
    fn validate(&self) -> Result<()> {
        if !(self.loss.is_finite() && self.delta.is_finite()) {
            return Err(Error::Config("contested loss and delta must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!(
                "contested delta {} outside [0, 1]",
                self.delta
            )));
        }
        if self.n_plus < 1 || self.d_plus < 1 {
            return Err(Error::Config("n_plus and d_plus must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    /// A less discriminatory alternative exists at gap distance delta*.
    LdaExists(f64),
    OnFrontier,
    /// The contested loss undercuts the estimated frontier minimum; the
    /// estimate cannot certify anything (conservative outcome, not an error).
    BelowFrontierEstimate,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::LdaExists(_) => "lda_exists",
            Verdict::OnFrontier => "on_frontier",
            Verdict::BelowFrontierEstimate => "below_frontier_estimate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub label: String,
    pub delta_star: f64,
    /// Smallest frontier gap achieving the contested loss (the gap of the
    /// envelope minimum when the verdict is below_frontier_estimate).
    pub frontier_delta_at_loss: f64,
    pub verdict: Verdict,
    pub fit_mode: FitMode,
    pub constants_digest: String,
}

impl AuditReport {
    /// One-line machine-readable summary.
    pub fn summary_line(&self) -> String {
        format!(
            "{},{:?},{:?},{}",
            self.verdict.as_str(),
            self.delta_star,
            self.frontier_delta_at_loss,
            self.constants_digest
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# audit-report v1\n");
        out.push_str(&format!("label={}\n", self.label));
        out.push_str(&format!("verdict={}\n", self.verdict.as_str()));
        out.push_str(&format!("delta_star={:?}\n", self.delta_star));
        out.push_str(&format!(
            "frontier_delta_at_loss={:?}\n",
            self.frontier_delta_at_loss
        ));
        out.push_str(&format!("fit_mode={}\n", self.fit_mode.as_str()));
        out.push_str(&format!("constants_digest={}\n", self.constants_digest));
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Distance of the contested model from the budget envelope extrapolated to
/// its scale: delta* = max(0, contested gap - smallest envelope gap whose
/// loss does not exceed the contested loss).
pub fn delta_distance(
    contested: &ContestedModel,
    constants: &ScalingConstants,
    fit_mode: FitMode,
    constants_digest: &str,
) -> Result<AuditReport> {
    contested.validate()?;
    constants.validate()?;
    let grid = default_grid(&constants.shape(0.0));
    let (_, envelope) = extrapolate(
        constants,
        contested.n_plus as f64,
        contested.d_plus as f64,
        &grid,
    )?;
    let min_loss = envelope
        .vertices
        .iter()
        .map(|&(_, l)| l)
        .fold(f64::INFINITY, f64::min);
    if contested.loss < min_loss {
        let argmin = envelope
            .vertices
            .iter()
            .find(|&&(_, l)| l == min_loss)
            .expect("nonempty envelope")
            .0;
        return Ok(AuditReport {
            label: contested.label.clone(),
            delta_star: 0.0,
            frontier_delta_at_loss: argmin,
            verdict: Verdict::BelowFrontierEstimate,
            fit_mode,
            constants_digest: constants_digest.to_string(),
        });
    }
    let frontier_delta = envelope.delta_at_loss(contested.loss)?;
    let delta_star = (contested.delta - frontier_delta).max(0.0);
    let verdict = if delta_star > 0.0 {
        Verdict::LdaExists(delta_star)
    } else {
        Verdict::OnFrontier
    };
    Ok(AuditReport {
        label: contested.label.clone(),
        delta_star,
        frontier_delta_at_loss: frontier_delta,
        verdict,
        fit_mode,
        constants_digest: constants_digest.to_string(),
    })
}

#[derive(Debug, Clone)]
pub enum ResourceOutcome {
    /// Sampled (d_train, n_params) pairs on the feasibility curve.
    Curve(Vec<(f64, f64)>),
    /// Power budget R <= 0: no scale reaches the target.
    InfeasibleAtAnyScale,
    /// C2 = 0: the fit carries no scale dependence; `achievable` says
    /// whether the target is met at every scale or at none.
    ScaleIndependent { achievable: bool },
}

/// Inverts the scaling form: which (N, D) pairs achieve `target_loss` at gap
/// `target_delta`? N(D) = (R - D^-C4)^(-1/C3) with
/// R = (target_loss - C1 - shape(target_delta)) / C2.
pub fn resource_requirement(
    target_loss: f64,
    target_delta: f64,
    constants: &ScalingConstants,
    d_grid: &[f64],
) -> Result<ResourceOutcome> {
    constants.validate()?;
    let shape = pf_loss(target_delta, &constants.shape(0.0))?;
    let headroom = target_loss - constants.c1 - shape;
    if constants.c2 == 0.0 {
        return Ok(ResourceOutcome::ScaleIndependent {
            achievable: headroom >= 0.0,
        });
    }
    let r = headroom / constants.c2;
    if r <= 0.0 {
        return Ok(ResourceOutcome::InfeasibleAtAnyScale);
    }
    let mut curve = Vec::new();
    for &d in d_grid {
        if d < 1.0 {
            return Err(Error::Config(format!("d_train {d} must be >= 1")));
        }
        let rem = r - d.powf(-constants.c4);
        if rem <= 0.0 {
            continue; // this D alone already exceeds the power budget
        }
        let n = rem.powf(-1.0 / constants.c3);
        if n >= 1.0 {
            curve.push((d, n));
        }
    }
    Ok(ResourceOutcome::Curve(curve))
}

/// Per-model symmetry diagnostic: the best-matching tilt zeta and the
/// per-group mean discrepancies against the matched reference score.
#[derive(Debug, Clone)]
pub struct SymmetryRow {
    pub label: String,
    pub zeta_hat: f64,
    pub mean_a0: f64,
    pub mean_a1: f64,
    pub gap: f64,
}

/// Runs the symmetry diagnostic for each (label, scorer) against the
/// reference family sigma(g(x) - zeta a) on the test split. Only defined for
/// synthetic data, where g is reconstructible.
pub fn assess_symmetry_scores(
    dataset: &Dataset,
    scorers: &[(String, Box<dyn Fn(&[f64], u8) -> f64 + Sync>)],
) -> Result<Vec<SymmetryRow>> {
    let config = match &dataset.provenance {
        Provenance::Synthetic(c) => c,
        Provenance::External { path } => {
            return Err(Error::Unsupported(format!(
                "symmetry diagnostic needs synthetic provenance; dataset came from {path}"
            )))
        }
    };
    let g = g_network(config.x_dim, config.g_seed);
    let idx = dataset.split_indices(Split::Test);
    if idx.is_empty() {
        return Err(Error::Eval("empty test split".into()));
    }
    let mut rows = Vec::with_capacity(scorers.len());
    for (label, scorer) in scorers {
        let mse_at = |zeta: f64| -> f64 {
            idx.iter()
                .map(|&i| {
                    let f = scorer(&dataset.features[i], dataset.groups[i]);
                    let q = bayes_optimal_score(&g, zeta, &dataset.features[i], dataset.groups[i]);
                    (f - q).powi(2)
                })
                .sum::<f64>()
                / idx.len() as f64
        };
        let zeta_hat = golden_section(&mse_at, 0.0, 10.0, 1e-8);
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for &i in &idx {
            let f = scorer(&dataset.features[i], dataset.groups[i]);
            let q = bayes_optimal_score(&g, zeta_hat, &dataset.features[i], dataset.groups[i]);
            let a = dataset.groups[i] as usize;
            sums[a] += f - q;
            counts[a] += 1;
        }
        let mean_a0 = sums[0] / counts[0].max(1) as f64;
        let mean_a1 = sums[1] / counts[1].max(1) as f64;
        rows.push(SymmetryRow {
            label: label.clone(),
            zeta_hat,
            mean_a0,
            mean_a1,
            gap: (mean_a1 - mean_a0).abs(),
        });
    }
    Ok(rows)
}

/// Symmetry diagnostic for trained checkpoints.
pub fn assess_symmetry(dataset: &Dataset, models: &[(String, MlpModel)]) -> Result<Vec<SymmetryRow>> {
    let scorers: Vec<(String, Box<dyn Fn(&[f64], u8) -> f64 + Sync>)> = models
        .iter()
        .map(|(label, m)| {
            let m = m.clone();
            let f: Box<dyn Fn(&[f64], u8) -> f64 + Sync> =
                Box::new(move |x: &[f64], a: u8| m.forward(x, a).unwrap_or(0.5));
            (label.clone(), f)
        })
        .collect();
    assess_symmetry_scores(dataset, &scorers)
}

fn golden_section(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::scaling_loss;
    use crate::dgp::{generate, DgpConfig, GroupMode};

    fn constants() -> ScalingConstants {
        ScalingConstants {
            c1: 0.2,
            c2: 9.0,
            c3: 0.5,
            c4: 0.5,
            c5: 0.08,
            c6: 0.43,
            c7: 0.85,
        }
    }

    fn contested(loss: f64, delta: f64) -> ContestedModel {
        ContestedModel {
            loss,
            delta,
            n_plus: 423_040,
            d_plus: 50_000,
            label: "contested".into(),
        }
    }

    #[test]
    fn point_on_envelope_is_on_frontier() {
        let c = constants();
        let delta = 0.3;
        let loss = scaling_loss(delta, 423_040.0, 50_000.0, &c).unwrap();
        // The shape is decreasing at delta=0.3 (< argmin), so the envelope
        // equals the exact curve there.
        let r = delta_distance(&contested(loss, delta), &c, FitMode::LeastSquares, "d").unwrap();
        assert_eq!(r.verdict, Verdict::OnFrontier);
        assert!(r.delta_star.abs() < 2e-3, "delta_star {}", r.delta_star);
    }

    #[test]
    fn point_right_of_curve_has_lda() {
        let c = constants();
        let frontier_delta = 0.2;
        let loss = scaling_loss(frontier_delta, 423_040.0, 50_000.0, &c).unwrap();
        let r = delta_distance(&contested(loss, 0.6), &c, FitMode::LeastSquares, "d").unwrap();
        match r.verdict {
            Verdict::LdaExists(d) => {
                assert!((d - (0.6 - frontier_delta)).abs() < 2e-3, "delta {d}");
                assert_eq!(d, r.delta_star);
            }
            other => panic!("expected lda_exists, got {other:?}"),
        }
    }

    #[test]
    fn loss_below_minimum_is_conservative_verdict() {
        let c = constants();
        let r = delta_distance(&contested(-10.0, 0.5), &c, FitMode::LeastSquares, "d").unwrap();
        assert_eq!(r.verdict, Verdict::BelowFrontierEstimate);
        assert_eq!(r.delta_star, 0.0);
    }

    #[test]
    fn delta_star_monotone_in_contested_point() {
        let c = constants();
        let loss = scaling_loss(0.2, 423_040.0, 50_000.0, &c).unwrap();
        let at = |d: f64, l: f64| {
            delta_distance(&contested(l, d), &c, FitMode::LeastSquares, "d")
                .unwrap()
                .delta_star
        };
        assert!(at(0.7, loss) >= at(0.5, loss));
        assert!(at(0.5, loss - 0.01) <= at(0.5, loss));
    }

    #[test]
    fn resource_roundtrip_through_scaling_loss() {
        let c = ScalingConstants {
            c1: -0.285,
            c2: 55.0,
            c3: 0.7,
            c4: 0.5,
            c5: 0.0176,
            c6: 0.92,
            c7: 0.1424,
        };
        let delta = 0.05;
        let target = scaling_loss(delta, 423_040.0, 6_500.0, &c).unwrap();
        let grid = [1_000.0, 6_500.0, 100_000.0];
        match resource_requirement(target, delta, &c, &grid).unwrap() {
            ResourceOutcome::Curve(pairs) => {
                let (_, n) = pairs
                    .iter()
                    .find(|&&(d, _)| d == 6_500.0)
                    .expect("6500 feasible");
                assert!((n / 423_040.0 - 1.0).abs() < 1e-9, "n {n}");
                for &(d, n) in &pairs {
                    let back = scaling_loss(delta, n, d, &c).unwrap();
                    assert!((back - target).abs() < 1e-9);
                }
            }
            other => panic!("expected curve, got {other:?}"),
        }
    }

    #[test]
    fn resource_infeasible_and_degenerate() {
        let c = constants();
        let shape = pf_loss(0.1, &c.shape(0.0)).unwrap();
        let below = c.c1 + shape - 0.01;
        assert!(matches!(
            resource_requirement(below, 0.1, &c, &[1000.0]).unwrap(),
            ResourceOutcome::InfeasibleAtAnyScale
        ));
        let flat = ScalingConstants { c2: 0.0, ..c };
        match resource_requirement(below, 0.1, &flat, &[1000.0]).unwrap() {
            ResourceOutcome::ScaleIndependent { achievable } => assert!(!achievable),
            other => panic!("{other:?}"),
        }
        match resource_requirement(c.c1 + shape + 0.5, 0.1, &flat, &[1000.0]).unwrap() {
            ResourceOutcome::ScaleIndependent { achievable } => assert!(achievable),
            other => panic!("{other:?}"),
        }
    }

    fn synthetic() -> Dataset {
        generate(&DgpConfig {
            n_samples: 600,
            x_dim: 4,
            pi: 0.4,
            zeta: 0.5,
            g_seed: 21,
            data_seed: 22,
            mode: GroupMode::Independent,
        })
        .unwrap()
    }

    #[test]
    fn symmetry_of_exact_bayes_scorer_is_zero() {
        let ds = synthetic();
        let g = g_network(4, 21);
        let scorer: Box<dyn Fn(&[f64], u8) -> f64 + Sync> =
            Box::new(move |x, a| bayes_optimal_score(&g, 0.5, x, a));
        let rows = assess_symmetry_scores(&ds, &[("bayes".into(), scorer)]).unwrap();
        let r = &rows[0];
        assert!((r.zeta_hat - 0.5).abs() < 1e-4, "zeta {}", r.zeta_hat);
        assert!(r.mean_a0.abs() < 1e-6 && r.mean_a1.abs() < 1e-6);
        assert!(r.gap < 1e-6);
    }

    #[test]
    fn symmetry_unsupported_on_external_data() {
        let mut ds = synthetic();
        ds.provenance = Provenance::External {
            path: "somewhere.csv".into(),
        };
        assert!(matches!(
            assess_symmetry(&ds, &[]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn symmetry_of_constant_scorer_reports_gap() {
        let ds = synthetic();
        let scorer: Box<dyn Fn(&[f64], u8) -> f64 + Sync> = Box::new(|_, _| 0.5);
        let rows = assess_symmetry_scores(&ds, &[("const".into(), scorer)]).unwrap();
        assert!(rows[0].gap.is_finite());
    }

    #[test]
    fn report_summary_format() {
        let c = constants();
        let loss = scaling_loss(0.2, 423_040.0, 50_000.0, &c).unwrap();
        let r = delta_distance(&contested(loss, 0.6), &c, FitMode::LowerBound, "abc123").unwrap();
        let line = r.summary_line();
        assert!(line.starts_with("lda_exists,"));
        assert!(line.ends_with(",abc123"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.txt");
        r.write(&path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.contains("fit_mode=lower_bound"));
    }
}
