//! Exact-enumeration oracles for the analytic identities behind the
//! closed-form frontier: the five-term loss decomposition, the
//! covariance/importance-ratio lemma, association of monotone sigmoid
//! transforms, the second-order log expansion, and the variance bound.
//!
//! Everything here works on small discrete distributions so equalities can be
//! checked at machine precision; only the association check is Monte-Carlo.

use crate::error::{Error, Result};

/// Joint distribution of (X, A, Y) on a finite support: `probs[x][a][y]`,
/// X capped at 16 points, A and Y binary.
#[derive(Debug, Clone)]
pub struct DiscreteJoint {
    pub probs: Vec<[[f64; 2]; 2]>,
}

impl DiscreteJoint {
    pub fn new(probs: Vec<[[f64; 2]; 2]>) -> Result<Self> {
        if probs.is_empty() || probs.len() > 16 {
            return Err(Error::Config(format!(
                "X support must have 1..=16 points, got {}",
                probs.len()
            )));
        }
        let mut total = 0.0;
        for cell in probs.iter().flatten().flatten() {
            if !(cell.is_finite() && *cell >= 0.0) {
                return Err(Error::Config("probabilities must be finite and >= 0".into()));
            }
            total += cell;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn n_x(&self) -> usize {
        self.probs.len()
    }

    fn mass(&self, x: usize, a: usize) -> f64 {
        self.probs[x][a][0] + self.probs[x][a][1]
    }

    /// Bayes-optimal score p(y=1 | x, a); 0.5 on zero-mass cells (never
    /// weighted, so the value is arbitrary).
    pub fn bayes(&self, x: usize, a: usize) -> f64 {
        let m = self.mass(x, a);
        if m == 0.0 {
            0.5
        } else {
            self.probs[x][a][1] / m
        }
    }

    /// Bayes score table of this distribution.
    pub fn bayes_table(&self) -> Vec<[f64; 2]> {
        (0..self.n_x()).map(|x| [self.bayes(x, 0), self.bayes(x, 1)]).collect()
    }

    /// Exact BCE loss of a score table under this distribution. Degenerate
    /// Bayes scores (0 or 1) are fine as long as the opposing label has no
    /// mass there.
    pub fn loss(&self, f: &[[f64; 2]]) -> f64 {
        let mut total = 0.0;
        for (x, cell) in self.probs.iter().enumerate() {
            for a in 0..2 {
                let s = f[x][a];
                if cell[a][1] > 0.0 {
                    total += cell[a][1] * -s.ln();
                }
                if cell[a][0] > 0.0 {
                    total += cell[a][0] * -(1.0 - s).ln();
                }
            }
        }
        total
    }

    /// Expectation of a pointwise function of (x, a, y).
    pub fn expect<F: Fn(usize, usize, usize) -> f64>(&self, f: F) -> f64 {
        let mut total = 0.0;
        for (x, cell) in self.probs.iter().enumerate() {
            for a in 0..2 {
                for y in 0..2 {
                    if cell[a][y] > 0.0 {
                        total += cell[a][y] * f(x, a, y);
                    }
                }
            }
        }
        total
    }
}

/// S(x, a, y): log likelihood ratio between the Bernoulli models given by
/// q's Bayes score and the classifier score.
fn s_value(q_bayes: f64, f: f64, y: usize) -> f64 {
    if y == 1 {
        (q_bayes / f).ln()
    } else {
        ((1.0 - q_bayes) / (1.0 - f)).ln()
    }
}

/// The five telescoping terms and the quantities controlling when they
/// collapse to the three-term form.
#[derive(Debug, Clone)]
pub struct DecompositionReport {
    /// [shift of f, misspecification, shift of q-Bayes, Bayes-vs-Bayes gap,
    /// irreducible loss].
    pub terms: [f64; 5],
    pub loss_p_f: f64,
    pub e_p_s: f64,
    pub e_q_s: f64,
    /// E_q[R S] with R = p/q - 1; always equals terms[0] + terms[2].
    pub e_q_rs: f64,
    /// Residual of the three-term form loss = misspec + kl + irreducible.
    pub three_term_residual: f64,
    /// E_{p_{X,A}}[KL(p_{Y|x,a} || q_{Y|x,a})]; always equals terms[3].
    pub expected_kl: f64,
}

/// Enumerates the loss decomposition of score table `f` between test
/// distribution `p` and train distribution `q`.
pub fn verify_decomposition(
    p: &DiscreteJoint,
    q: &DiscreteJoint,
    f: &[[f64; 2]],
) -> Result<DecompositionReport> {
    if p.n_x() != q.n_x() || f.len() != p.n_x() {
        return Err(Error::Shape("p, q, f must share a support".into()));
    }
    for (x, cell) in p.probs.iter().enumerate() {
        for a in 0..2 {
            for y in 0..2 {
                if cell[a][y] > 0.0 && q.probs[x][a][y] == 0.0 {
                    return Err(Error::Config(format!(
                        "p not absolutely continuous w.r.t. q at (x={x}, a={a}, y={y})"
                    )));
                }
            }
        }
    }
    for &[f0, f1] in f {
        for s in [f0, f1] {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Config(format!("score {s} outside (0, 1)")));
            }
        }
    }

    let qb = q.bayes_table();
    let pb = p.bayes_table();
    let l_p_f = p.loss(f);
    let l_q_f = q.loss(f);
    let l_q_qb = q.loss(&qb);
    let l_p_qb = p.loss(&qb);
    let l_p_pb = p.loss(&pb);
    let terms = [
        l_p_f - l_q_f,
        l_q_f - l_q_qb,
        l_q_qb - l_p_qb,
        l_p_qb - l_p_pb,
        l_p_pb,
    ];

    let s = |x: usize, a: usize, y: usize| s_value(qb[x][a], f[x][a], y);
    let e_p_s = p.expect(s);
    let e_q_s = q.expect(s);
    let e_q_rs = q.expect(|x, a, y| {
        let w = p.probs[x][a][y] / q.probs[x][a][y];
        (w - 1.0) * s(x, a, y)
    });
    let expected_kl = p.expect(|x, a, y| {
        // Weighting by p(x,a,y) and summing the per-y log ratio enumerates
        // E_{p_{X,A}}[KL(p_{Y|x,a} || q_{Y|x,a})].
        let py = if y == 1 { pb[x][a] } else { 1.0 - pb[x][a] };
        let qy = if y == 1 { qb[x][a] } else { 1.0 - qb[x][a] };
        (py / qy).ln()
    });
    let three_term_residual = l_p_f - (terms[1] + expected_kl + l_p_pb);
    Ok(DecompositionReport {
        terms,
        loss_p_f: l_p_f,
        e_p_s,
        e_q_s,
        e_q_rs,
        three_term_residual,
        expected_kl,
    })
}

/// Checks the three equivalent conditions of the importance-ratio covariance
/// lemma for measures `mu` and `nu` (same support, same total mass) and a
/// statistic `s`: Cov_nu(R, S) = 0, E_nu[RS] = E_nu[R] E_nu[S], and
/// E_mu[S] = E_nu[S], with R = dmu/dnu - 1.
pub fn verify_cov_lemma(mu: &[f64], nu: &[f64], s: &[f64]) -> Result<(bool, bool, bool)> {
    if mu.len() != nu.len() || s.len() != nu.len() || nu.is_empty() {
        return Err(Error::Shape("mu, nu, s must share a support".into()));
    }
    let (m_mass, n_mass): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (m_mass - n_mass).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "measures must have equal mass: {m_mass} vs {n_mass}"
        )));
    }
    for (&m, &n) in mu.iter().zip(nu) {
        if n <= 0.0 && m > 0.0 {
            return Err(Error::Config("mu not absolutely continuous w.r.t. nu".into()));
        }
    }
    let e_nu = |f: &dyn Fn(usize) -> f64| -> f64 {
        nu.iter()
            .enumerate()
            .map(|(i, &n)| if n > 0.0 { n * f(i) } else { 0.0 })
            .sum::<f64>()
            / n_mass
    };
    let r = |i: usize| mu[i] / nu[i] - 1.0;
    let e_r = e_nu(&|i| r(i));
    let e_s_nu = e_nu(&|i| s[i]);
    let e_rs = e_nu(&|i| r(i) * s[i]);
    let cov = e_rs - e_r * e_s_nu;
    let e_s_mu = mu
        .iter()
        .enumerate()
        .map(|(i, &m)| if m > 0.0 { m * s[i] } else { 0.0 })
        .sum::<f64>()
        / m_mass;
    let tol = 1e-12;
    Ok((
        cov.abs() < tol,
        (e_rs - e_r * e_s_nu).abs() < tol,
        (e_s_mu - e_s_nu).abs() < tol,
    ))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CovEstimate {
    pub cov: f64,
    pub se: f64,
    pub bootstrap_ci: (f64, f64),
}

/// Monte-Carlo check that Cov(sigmoid(U - zeta_p), sigmoid(U - zeta_q)) >= 0:
/// sample covariance with a 200-resample bootstrap CI.
pub fn verify_chebyshev_cov(u_samples: &[f64], zeta_p: f64, zeta_q: f64) -> Result<CovEstimate> {
    let n = u_samples.len();
    if n < 10_000 {
        return Err(Error::Config(format!("need at least 10000 samples, got {n}")));
    }
    use rand::{Rng, SeedableRng};
    let pairs: Vec<(f64, f64)> = u_samples
        .iter()
        .map(|&u| (sigmoid(u - zeta_p), sigmoid(u - zeta_q)))
        .collect();
    let cov_of = |idx: &mut dyn Iterator<Item = usize>| -> f64 {
        let mut sa = 0.0;
        let mut sb = 0.0;
        let mut sab = 0.0;
        let mut count = 0.0;
        for i in idx {
            let (a, b) = pairs[i];
            sa += a;
            sb += b;
            sab += a * b;
            count += 1.0;
        }
        sab / count - (sa / count) * (sb / count)
    };
    let cov = cov_of(&mut (0..n));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xb007);
    let mut boots: Vec<f64> = (0..200)
        .map(|_| {
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            cov_of(&mut sample.into_iter())
        })
        .collect();
    boots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean: f64 = boots.iter().sum::<f64>() / boots.len() as f64;
    let var: f64 =
        boots.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (boots.len() - 1) as f64;
    Ok(CovEstimate {
        cov,
        se: var.sqrt(),
        bootstrap_ci: (boots[4], boots[194]), // central 95%
    })
}

/// A finite distribution for the scalar oracles.
#[derive(Debug, Clone)]
pub struct DiscreteDist {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.len() != probs.len() || values.is_empty() {
            return Err(Error::Shape("values/probs mismatch".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 || probs.iter().any(|&p| p < 0.0) {
            return Err(Error::Config("probs must be nonnegative and sum to 1".into()));
        }
        Ok(Self { values, probs })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(&v, &p)| v * p).sum()
    }

    pub fn moment_about_mean(&self, k: i32, absolute: bool) -> f64 {
        let mu = self.mean();
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(&v, &p)| {
                let d = v - mu;
                p * if absolute { d.abs().powi(k) } else { d.powi(k) }
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TaylorReport {
    /// E[log(1 - Z)], exact.
    pub lhs: f64,
    /// log(1 - E[Z]) - Var(Z) / (2 (1 - E[Z])^2).
    pub rhs: f64,
    pub abs_error: f64,
    pub third_abs_moment: f64,
}

/// Compares E[log(1-Z)] with its second-order expansion around E[Z].
pub fn verify_taylor_log(z: &DiscreteDist) -> Result<TaylorReport> {
    if z.values.iter().any(|&v| v <= 0.0 || v >= 1.0) {
        return Err(Error::Domain("Z must be supported inside (0, 1)".into()));
    }
    let mu = z.mean();
    let var = z.moment_about_mean(2, false);
    let lhs: f64 = z
        .values
        .iter()
        .zip(&z.probs)
        .map(|(&v, &p)| p * (1.0 - v).ln())
        .sum();
    let rhs = (1.0 - mu).ln() - var / (2.0 * (1.0 - mu).powi(2));
    Ok(TaylorReport {
        lhs,
        rhs,
        abs_error: (lhs - rhs).abs(),
        third_abs_moment: z.moment_about_mean(3, true),
    })
}

/// Checks Var(Z) <= mu (1 - mu) for Z supported in [0, 1].
pub fn verify_var_bound(z: &DiscreteDist) -> Result<bool> {
    if z.values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain("Z must be supported in [0, 1]".into()));
    }
    let mu = z.mean();
    Ok(z.moment_about_mean(2, false) <= mu * (1.0 - mu) + 1e-12)
}
