//! Empirical frontier extraction on the (gap, loss) plane: the lower convex
//! hull of a sweep's point cloud, and the monotone budget envelope (best loss
//! achievable at gap at most delta).

use crate::error::{Error, Result};
use crate::training::TrainedPoint;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontierKind {
    ExactGapHull,
    BudgetEnvelope,
}

impl FrontierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrontierKind::ExactGapHull => "exact_gap_hull",
            FrontierKind::BudgetEnvelope => "budget_envelope",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact_gap_hull" => Some(FrontierKind::ExactGapHull),
            "budget_envelope" => Some(FrontierKind::BudgetEnvelope),
            _ => None,
        }
    }
}

/// A frontier curve: vertices are (delta, loss) pairs with strictly
/// increasing delta. Hulls interpolate linearly between vertices; envelopes
/// are right-continuous steps (the running minimum).
#[derive(Debug, Clone)]
pub struct FrontierCurve {
    pub kind: FrontierKind,
    pub vertices: Vec<(f64, f64)>,
    /// Free-form provenance note carried into curve files.
    pub source: String,
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Sorts by delta and keeps only the minimum loss at each exact delta value.
fn dedupe_sorted(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    if points.is_empty() {
        return Err(Error::Infeasible("no points to build a frontier from".into()));
    }
    if points.iter().any(|&(d, l)| !d.is_finite() || !l.is_finite()) {
        return Err(Error::Eval("non-finite frontier input point".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        match out.last() {
            Some(&(d, _)) if d == p.0 => {} // sorted, so the kept one is minimal
            _ => out.push(p),
        }
    }
    Ok(out)
}

/// Lower convex hull of the cloud (Andrew's monotone chain). Collinear
/// interior points are dropped; equal-delta points keep the lowest loss.
pub fn lower_convex_hull(points: &[(f64, f64)], source: &str) -> Result<FrontierCurve> {
    let pts = dedupe_sorted(points)?;
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    Ok(FrontierCurve {
        kind: FrontierKind::ExactGapHull,
        vertices: hull,
        source: source.to_string(),
    })
}

/// Budget envelope: at each distinct delta, the best loss among points with
/// gap at most that delta (the running minimum). Already non-increasing
/// inputs pass through unchanged, so the construction is idempotent.
pub fn budget_envelope(points: &[(f64, f64)], source: &str) -> Result<FrontierCurve> {
    let pts = dedupe_sorted(points)?;
    let mut vertices: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    let mut best = f64::INFINITY;
    for (d, l) in pts {
        best = best.min(l);
        vertices.push((d, best));
    }
    Ok(FrontierCurve {
        kind: FrontierKind::BudgetEnvelope,
        vertices,
        source: source.to_string(),
    })
}

impl FrontierCurve {
    /// Loss at gap `delta`: linear interpolation for hulls, running-minimum
    /// step for envelopes. Errors outside the vertex range (envelopes accept
    /// any delta at or above their first vertex).
    pub fn interpolate(&self, delta: f64) -> Result<f64> {
        let v = &self.vertices;
        let (lo, hi) = (v[0].0, v[v.len() - 1].0);
        if delta < lo {
            return Err(Error::Domain(format!(
                "delta {delta} below frontier range [{lo}, {hi}]"
            )));
        }
        match self.kind {
            FrontierKind::BudgetEnvelope => {
                let i = v.partition_point(|&(d, _)| d <= delta);
                Ok(v[i - 1].1)
            }
            FrontierKind::ExactGapHull => {
                if delta > hi {
                    return Err(Error::Domain(format!(
                        "delta {delta} above frontier range [{lo}, {hi}]"
                    )));
                }
                let i = v.partition_point(|&(d, _)| d <= delta);
                if i == v.len() {
                    return Ok(v[v.len() - 1].1);
                }
                let (d0, l0) = v[i - 1];
                let (d1, l1) = v[i];
                Ok(l0 + (l1 - l0) * (delta - d0) / (d1 - d0))
            }
        }
    }

    /// Smallest gap at which the curve reaches `loss`, solved exactly on the
    /// piecewise-linear (or step) segments. Errors if the curve never gets
    /// that low.
    pub fn delta_at_loss(&self, loss: f64) -> Result<f64> {
        let v = &self.vertices;
        let min_loss = v.iter().map(|&(_, l)| l).fold(f64::INFINITY, f64::min);
        if loss < min_loss {
            return Err(Error::Infeasible(format!(
                "loss {loss} below the curve minimum {min_loss}"
            )));
        }
        if v[0].1 <= loss {
            return Ok(v[0].0);
        }
        for w in v.windows(2) {
            let ((d0, l0), (d1, l1)) = (w[0], w[1]);
            if l1 <= loss {
                return Ok(match self.kind {
                    FrontierKind::BudgetEnvelope => d1,
                    FrontierKind::ExactGapHull => {
                        if l0 == l1 {
                            d0
                        } else {
                            d0 + (d1 - d0) * (loss - l0) / (l1 - l0)
                        }
                    }
                });
            }
        }
        unreachable!("min_loss vertex guarantees a crossing");
    }
}

/// Projects sweep points onto the (gap, loss) plane. With `average_seeds`,
/// points sharing (n_params, lambda) are first averaged across seeds.
pub fn to_plane(points: &[TrainedPoint], average_seeds: bool) -> Vec<(f64, f64)> {
    if !average_seeds {
        return points.iter().map(|p| (p.test_dp, p.test_bce)).collect();
    }
    let mut grouped: std::collections::BTreeMap<(usize, u64), (f64, f64, usize)> =
        std::collections::BTreeMap::new();
    for p in points {
        let e = grouped
            .entry((p.n_params, p.lambda.to_bits()))
            .or_insert((0.0, 0.0, 0));
        e.0 += p.test_dp;
        e.1 += p.test_bce;
        e.2 += 1;
    }
    grouped
        .values()
        .map(|&(d, l, n)| (d / n as f64, l / n as f64))
        .collect()
}

/// Writes a curve file: `# key=value` comment lines, then a `delta,loss`
/// header and one row per vertex.
pub fn write_curve(path: &Path, curve: &FrontierCurve, extra_comments: &[String]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# kind={}\n", curve.kind.as_str()));
    out.push_str(&format!("# source={}\n", curve.source));
    for c in extra_comments {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("delta,loss\n");
    for &(d, l) in &curve.vertices {
        out.push_str(&format!("{d:?},{l:?}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a curve file written by [`write_curve`].
pub fn read_curve(path: &Path) -> Result<FrontierCurve> {
    let body = std::fs::read_to_string(path)?;
    let mut kind = None;
    let mut source = String::new();
    let mut vertices = Vec::new();
    for (i, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line == "delta,loss" {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            let c = c.trim();
            if let Some(k) = c.strip_prefix("kind=") {
                kind = Some(FrontierKind::parse(k).ok_or(Error::Parse {
                    line: i + 1,
                    msg: format!("unknown curve kind '{k}'"),
                })?);
            } else if let Some(s) = c.strip_prefix("source=") {
                source = s.to_string();
            }
            continue;
        }
        let (d, l) = line.split_once(',').ok_or(Error::Parse {
            line: i + 1,
            msg: "expected 'delta,loss' row".into(),
        })?;
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("{e}"),
            })
        };
        vertices.push((parse(d)?, parse(l)?));
    }
    let kind = kind.ok_or(Error::Parse {
        line: 1,
        msg: "missing '# kind=' comment".into(),
    })?;
    if vertices.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "curve file has no vertices".into(),
        })?;
    }
    Ok(FrontierCurve {
        kind,
        vertices,
        source,
    })
}
