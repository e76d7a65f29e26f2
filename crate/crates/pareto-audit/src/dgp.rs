//! Synthetic data generation: isotropic Gaussian features, a group bit that
//! is either independent Bernoulli or a thresholded linear projection of the
//! first two features, and labels drawn from Ber(sigmoid(g(x) - zeta * a))
//! with a fixed seeded MLP g. Also loads external datasets from CSV.

use crate::error::{Error, Result};
use crate::nn::{sigmoid, MlpArchitecture, MlpModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use std::io::{BufRead, Write};
use std::path::Path;

/// How the group bit relates to the features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMode {
    /// A ~ Ber(pi), independent of X.
    Independent,
    /// A = 1 iff a fixed linear projection of x[0..2] exceeds the empirical
    /// (1 - pi)-quantile (the experiments' DGP).
    Projected,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub n_samples: usize,
    #[serde(default = "default_x_dim")]
    pub x_dim: usize,
    pub pi: f64,
    pub zeta: f64,
    pub g_seed: u64,
    pub data_seed: u64,
    pub mode: GroupMode,
}

fn default_x_dim() -> usize {
    20
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 10 {
            return Err(Error::Config("n_samples must be >= 10".into()));
        }
        if self.x_dim == 0 {
            return Err(Error::Config("x_dim must be >= 1".into()));
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::Config("pi must lie in (0, 1)".into()));
        }
        if self.zeta < 0.0 || !self.zeta.is_finite() {
            return Err(Error::Config("zeta must be >= 0 and finite".into()));
        }
        Ok(())
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone)]
pub enum Provenance {
    Synthetic(DgpConfig),
    External { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub groups: Vec<u8>,
    pub labels: Vec<u8>,
    pub split: Vec<Split>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Row indices belonging to `split`.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    /// Writes the dataset as `x0,...,x{d-1},a,y,split` CSV.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let d = self.x_dim();
        let cols: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        out.push_str(&cols.join(","));
        out.push_str(",a,y,split\n");
        for i in 0..self.len() {
            for v in &self.features[i] {
                out.push_str(&format!("{v:?},"));
            }
            out.push_str(&format!(
                "{},{},{}\n",
                self.groups[i],
                self.labels[i],
                self.split[i].as_str()
            ));
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// The label-law network g: a seeded x_dim -> [32] -> 1 ReLU MLP with
/// Gaussian fan-in-scaled init.
pub fn g_network(x_dim: usize, g_seed: u64) -> MlpModel {
    let arch = MlpArchitecture::new(x_dim, vec![32]).expect("valid g architecture");
    MlpModel::init(arch, false, g_seed)
}

fn g_value(g: &MlpModel, x: &[f64]) -> f64 {
    // Raw pre-sigmoid output of g.
    let mut act: Vec<f64> = x.to_vec();
    for (layer, (w, b)) in g.weights.iter().zip(&g.biases).enumerate() {
        let fan_out = b.len();
        let mut next = b.clone();
        for (i, &ai) in act.iter().enumerate() {
            if ai != 0.0 {
                let row = &w[i * fan_out..(i + 1) * fan_out];
                for (nj, &wij) in next.iter_mut().zip(row) {
                    *nj += ai * wij;
                }
            }
        }
        if layer + 1 < g.weights.len() {
            for v in &mut next {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        act = next;
    }
    act[0]
}

/// The Bayes optimal score under the tilted distribution:
/// sigma(g(x) - zeta * a).
pub fn bayes_optimal_score(g: &MlpModel, zeta: f64, x: &[f64], a: u8) -> f64 {
    sigmoid(g_value(g, x) - zeta * f64::from(a))
}

/// Generates a fully seeded synthetic dataset.
pub fn generate(config: &DgpConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.data_seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = config.n_samples;
    let d = config.x_dim;

    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect())
        .collect();

    let groups: Vec<u8> = match config.mode {
        GroupMode::Independent => (0..n)
            .map(|_| u8::from(rng.gen::<f64>() < config.pi))
            .collect(),
        GroupMode::Projected => {
            // w, b drawn from the g_seed stream so the projection is fixed by
            // the DGP, not by the data draw.
            let mut prng = ChaCha8Rng::seed_from_u64(config.g_seed.wrapping_add(0x9e3779b97f4a7c15));
            let w0: f64 = normal.sample(&mut prng);
            let w1: f64 = normal.sample(&mut prng);
            let b: f64 = normal.sample(&mut prng);
            if d < 2 {
                return Err(Error::Config(
                    "projected mode needs x_dim >= 2 for the 2-feature projection".into(),
                ));
            }
            let scores: Vec<f64> = features
                .iter()
                .map(|x| w0 * x[0] + w1 * x[1] + b)
                .collect();
            // Empirical quantile: exactly round(n*pi) rows land in group 1.
            let k = ((n as f64) * config.pi).round() as usize;
            let k = k.clamp(1, n - 1);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap());
            let mut groups = vec![0u8; n];
            for &i in order.iter().take(k) {
                groups[i] = 1;
            }
            groups
        }
    };

    let g = g_network(d, config.g_seed);
    let labels: Vec<u8> = features
        .iter()
        .zip(&groups)
        .map(|(x, &a)| {
            let p = bayes_optimal_score(&g, config.zeta, x, a);
            u8::from(rng.gen::<f64>() < p)
        })
        .collect();

    let split = stratified_split(&groups, &labels, config.data_seed)?;
    let ds = Dataset {
        features,
        groups,
        labels,
        split,
        provenance: Provenance::Synthetic(config.clone()),
    };
    for s in [Split::Train, Split::Val, Split::Test] {
        let idx = ds.split_indices(s);
        let has0 = idx.iter().any(|&i| ds.groups[i] == 0);
        let has1 = idx.iter().any(|&i| ds.groups[i] == 1);
        if !(has0 && has1) {
            return Err(Error::Generation(format!(
                "split {} lacks one group; raise n_samples or move pi away from 0/1",
                s.as_str()
            )));
        }
    }
    Ok(ds)
}

/// Deterministic 65/15/20 split, stratified by (a, y) cell so each split sees
/// both groups and both labels whenever the cells are large enough.
pub fn stratified_split(groups: &[u8], labels: &[u8], seed: u64) -> Result<Vec<Split>> {
    let n = groups.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5851f42d4c957f2d));
    let mut split = vec![Split::Train; n];
    for a in 0..2u8 {
        for y in 0..2u8 {
            let mut idx: Vec<usize> = (0..n)
                .filter(|&i| groups[i] == a && labels[i] == y)
                .collect();
            // Fisher-Yates with the shared rng; cell order is fixed.
            for i in (1..idx.len()).rev() {
                let j = rng.gen_range(0..=i);
                idx.swap(i, j);
            }
            let m = idx.len();
            let n_train = ((m as f64) * 0.65).round() as usize;
            let n_val = ((m as f64) * 0.15).round() as usize;
            for (pos, &row) in idx.iter().enumerate() {
                split[row] = if pos < n_train {
                    Split::Train
                } else if pos < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
        }
    }
    Ok(split)
}

/// Loads a dataset from a `x0,...,x{d-1},a,y[,split]` CSV file. Without a
/// split column, rows are auto-split 65/15/20 stratified by (a, y) using
/// `data_seed`.
pub fn load_external(path: &Path, data_seed: u64) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })
        .and_then(|(i, l)| Ok((i, l?)))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let has_split = cols.last() == Some(&"split");
    let feat_end = cols.len() - if has_split { 3 } else { 2 };
    if feat_end == 0
        || cols.get(feat_end) != Some(&"a")
        || cols.get(feat_end + 1) != Some(&"y")
    {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header x0,...,a,y[,split]; got '{header}'"),
        });
    }
    for (i, c) in cols[..feat_end].iter().enumerate() {
        if *c != format!("x{i}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected feature column x{i}, got '{c}'"),
            });
        }
    }

    let mut features = Vec::new();
    let mut groups = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let mut x = Vec::with_capacity(feat_end);
        for f in &fields[..feat_end] {
            let v: f64 = f.parse().map_err(|e| Error::Parse {
                line: line_no,
                msg: format!("bad feature '{f}': {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "non-finite feature".into(),
                });
            }
            x.push(v);
        }
        let parse_bit = |s: &str, name: &str| -> Result<u8> {
            match s {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Parse {
                    line: line_no,
                    msg: format!("{name} must be 0 or 1, got '{other}'"),
                }),
            }
        };
        groups.push(parse_bit(fields[feat_end], "a")?);
        labels.push(parse_bit(fields[feat_end + 1], "y")?);
        if has_split {
            split.push(match fields[feat_end + 2] {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("unknown split '{other}'"),
                    })
                }
            });
        }
        features.push(x);
    }
    if features.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "no data rows".into(),
        });
    }
    if !has_split {
        split = stratified_split(&groups, &labels, data_seed)?;
    }
    Ok(Dataset {
        features,
        groups,
        labels,
        split,
        provenance: Provenance::External {
            path: path.display().to_string(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: GroupMode, zeta: f64) -> DgpConfig {
        DgpConfig {
            n_samples: 10_000,
            x_dim: 20,
            pi: 0.2,
            zeta,
            g_seed: 3,
            data_seed: 4,
            mode,
        }
    }

    #[test]
    fn deterministic_given_seeds() {
        let c = cfg(GroupMode::Projected, 0.5);
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.groups, b.groups);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.split, b.split);
    }

    #[test]
    fn projected_group_rate_matches_pi() {
        let c = cfg(GroupMode::Projected, 0.5);
        let ds = generate(&c).unwrap();
        let n1: usize = ds.groups.iter().map(|&a| a as usize).sum();
        let rate = n1 as f64 / ds.len() as f64;
        assert!((rate - 0.2).abs() <= 1.0 / ds.len() as f64 + 1e-12);
    }

    #[test]
    fn zeta_zero_equalizes_label_rates() {
        let c = cfg(GroupMode::Independent, 0.0);
        let ds = generate(&c).unwrap();
        let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0.0, 0.0, 0.0);
        for (&a, &y) in ds.groups.iter().zip(&ds.labels) {
            if a == 1 {
                s1 += f64::from(y);
                n1 += 1.0;
            } else {
                s0 += f64::from(y);
                n0 += 1.0;
            }
        }
        let (r1, r0) = (s1 / n1, s0 / n0);
        // 3 sigma of binomial noise on the pooled rate.
        let p = (s1 + s0) / (n1 + n0);
        let se = (p * (1.0 - p) * (1.0 / n1 + 1.0 / n0)).sqrt();
        assert!((r1 - r0).abs() < 3.0 * se, "r1={r1} r0={r0} se={se}");
    }

    #[test]
    fn independent_mode_group_uncorrelated_with_features() {
        let c = cfg(GroupMode::Independent, 0.5);
        let ds = generate(&c).unwrap();
        let n = ds.len() as f64;
        let mean_a = ds.groups.iter().map(|&a| f64::from(a)).sum::<f64>() / n;
        for j in 0..5 {
            let col: Vec<f64> = ds.features.iter().map(|x| x[j]).collect();
            let mean_x = col.iter().sum::<f64>() / n;
            let cov = ds
                .groups
                .iter()
                .zip(&col)
                .map(|(&a, &x)| (f64::from(a) - mean_a) * (x - mean_x))
                .sum::<f64>()
                / n;
            let var_x = col.iter().map(|&x| (x - mean_x).powi(2)).sum::<f64>() / n;
            let corr = cov / (var_x.sqrt() * (mean_a * (1.0 - mean_a)).sqrt());
            assert!(corr.abs() < 3.0 / n.sqrt(), "col {j}: corr {corr}");
        }
    }

    #[test]
    fn label_law_matches_bayes_scores() {
        let c = cfg(GroupMode::Projected, 1.0);
        let ds = generate(&c).unwrap();
        let g = g_network(c.x_dim, c.g_seed);
        let mean_p: f64 = ds
            .features
            .iter()
            .zip(&ds.groups)
            .map(|(x, &a)| bayes_optimal_score(&g, c.zeta, x, a))
            .sum::<f64>()
            / ds.len() as f64;
        let mean_y: f64 = ds.labels.iter().map(|&y| f64::from(y)).sum::<f64>() / ds.len() as f64;
        let se = (mean_p * (1.0 - mean_p) / ds.len() as f64).sqrt();
        assert!((mean_y - mean_p).abs() < 3.0 * se);
    }

    #[test]
    fn larger_zeta_weakly_lowers_group1_scores() {
        let c0 = cfg(GroupMode::Projected, 0.0);
        let g = g_network(c0.x_dim, c0.g_seed);
        let ds = generate(&c0).unwrap();
        let x = &ds.features[0];
        let s0 = bayes_optimal_score(&g, 0.0, x, 1);
        let s2 = bayes_optimal_score(&g, 2.0, x, 1);
        assert!(s2 < s0);
        // a = 0 is unaffected by zeta.
        assert_eq!(
            bayes_optimal_score(&g, 0.0, x, 0),
            bayes_optimal_score(&g, 2.0, x, 0)
        );
    }

    #[test]
    fn split_proportions() {
        let ds = generate(&cfg(GroupMode::Projected, 0.5)).unwrap();
        let n = ds.len() as f64;
        let tr = ds.split_indices(Split::Train).len() as f64 / n;
        let va = ds.split_indices(Split::Val).len() as f64 / n;
        let te = ds.split_indices(Split::Test).len() as f64 / n;
        assert!((tr - 0.65).abs() < 0.01);
        assert!((va - 0.15).abs() < 0.01);
        assert!((te - 0.20).abs() < 0.01);
    }

    #[test]
    fn csv_roundtrip_and_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let c = DgpConfig {
            n_samples: 100,
            x_dim: 3,
            pi: 0.4,
            zeta: 0.5,
            g_seed: 1,
            data_seed: 2,
            mode: GroupMode::Independent,
        };
        let ds = generate(&c).unwrap();
        ds.save_csv(&path).unwrap();
        let loaded = load_external(&path, 0).unwrap();
        assert_eq!(loaded.len(), 100);
        assert_eq!(loaded.groups, ds.groups);
        assert_eq!(loaded.split, ds.split);

        // y = 2 rejected with a row number.
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "x0,a,y\n0.5,0,2\n").unwrap();
        match load_external(&bad, 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_split_column_autosplits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nosplit.csv");
        let mut body = String::from("x0,x1,a,y\n");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            body.push_str(&format!(
                "{:?},{:?},{},{}\n",
                rng.gen::<f64>(),
                rng.gen::<f64>(),
                rng.gen_range(0..2),
                rng.gen_range(0..2)
            ));
        }
        std::fs::write(&path, body).unwrap();
        let a = load_external(&path, 42).unwrap();
        let b = load_external(&path, 42).unwrap();
        assert_eq!(a.split, b.split);
        let tr = a.split_indices(Split::Train).len() as f64 / 200.0;
        assert!((tr - 0.65).abs() < 0.05);
    }
}
