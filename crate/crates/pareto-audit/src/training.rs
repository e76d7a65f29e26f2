//! Linear-scalarization training sweeps over (architecture, lambda, seed)
//! grids. Each run's RNG is derived solely from its own triple, so sweep
//! results do not depend on execution order or parallelism degree.

use crate::dgp::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{adam_step, param_count, AdamState, MlpArchitecture, MlpModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Training objective: mean BCE plus lambda times the per-batch DP gap
/// estimate. Batches missing a group contribute no DP term.
#[derive(Debug, Clone, Copy)]
pub struct ScalarizedLoss {
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Hyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            lr: 0.001,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub architectures: Vec<MlpArchitecture>,
    pub lambda_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub hyper: Hyper,
    /// Nested-prefix subsample of the train split, for sweeps over D.
    pub train_subset: Option<usize>,
    /// When set, each run writes its best checkpoint here.
    pub checkpoint_dir: Option<PathBuf>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() {
            return Err(Error::Config("no architectures in sweep".into()));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::Config("empty lambda grid".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds in sweep".into()));
        }
        if self.hyper.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.lambda_grid.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("non-finite lambda".into()));
        }
        Ok(())
    }

    /// The (arch index, lambda, seed) product in deterministic order.
    pub fn run_plan(&self) -> Vec<(usize, f64, u64)> {
        let mut plan = Vec::new();
        for ai in 0..self.architectures.len() {
            for &l in &self.lambda_grid {
                for &s in &self.seeds {
                    plan.push((ai, l, s));
                }
            }
        }
        plan
    }
}

/// One trained model's record on the loss-fairness plane.
#[derive(Debug, Clone)]
pub struct TrainedPoint {
    pub n_params: usize,
    pub d_train: usize,
    pub lambda: f64,
    pub seed: u64,
    pub train_bce: f64,
    pub val_bce: f64,
    /// Scalarized validation loss at the selected checkpoint, kept alongside
    /// the plain-BCE selection criterion for audit.
    pub val_scalarized: f64,
    pub test_bce: f64,
    pub test_dp: f64,
    pub checkpoint_ref: Option<String>,
}

/// The 100-value default lambda grid: 60 uniform in [-3, 0), 40 uniform in
/// [0, 5], denser on the negative side.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = Vec::with_capacity(100);
    for k in 0..60 {
        grid.push(-3.0 + 0.05 * k as f64);
    }
    for k in 0..40 {
        grid.push(5.0 * k as f64 / 39.0);
    }
    grid
}

/// An evenly subsampled version of the default grid, for reduced sweeps.
pub fn subsampled_lambda_grid(count: usize) -> Vec<f64> {
    let full = default_lambda_grid();
    if count == 0 || count >= full.len() {
        return full;
    }
    (0..count)
        .map(|i| full[i * (full.len() - 1) / (count - 1).max(1)])
        .collect()
}

/// RNG seed derived solely from the run's identifying triple.
fn run_seed(n_params: usize, lambda: f64, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update((n_params as u64).to_le_bytes());
    h.update(lambda.to_bits().to_le_bytes());
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Shared train-order permutation so subsampled runs use nested prefixes of
/// one shuffle of the train split.
fn shuffled_train_indices(dataset: &Dataset) -> Vec<usize> {
    let mut idx = dataset.split_indices(Split::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(0x7072_6566_6978); // fixed stream
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

fn eval_indices(model: &MlpModel, dataset: &Dataset, idx: &[usize]) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for &i in idx {
        let f = model.forward(&dataset.features[i], dataset.groups[i])?;
        let y = f64::from(dataset.labels[i]);
        total += -(y * f.ln() + (1.0 - y) * (1.0 - f).ln());
        let a = dataset.groups[i] as usize;
        sums[a] += f;
        counts[a] += 1;
    }
    let bce = total / idx.len() as f64;
    let dp = if counts[0] > 0 && counts[1] > 0 {
        (sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64).abs()
    } else {
        0.0
    };
    Ok((bce, dp))
}

/// Trains one model: seeded minibatch Adam, best-validation-BCE checkpoint
/// over epochs, evaluated on the test split.
pub fn train_one(
    dataset: &Dataset,
    arch: &MlpArchitecture,
    loss: &ScalarizedLoss,
    seed: u64,
    hyper: &Hyper,
    train_subset: Option<usize>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainedPoint> {
    let n_params = param_count(arch).weights_only;
    let derived = run_seed(n_params, loss.lambda, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derived);

    let mut train_idx = shuffled_train_indices(dataset);
    if let Some(limit) = train_subset {
        if limit == 0 || limit > train_idx.len() {
            return Err(Error::Config(format!(
                "train_subset {limit} outside 1..={}",
                train_idx.len()
            )));
        }
        train_idx.truncate(limit);
    }
    let val_idx = dataset.split_indices(Split::Val);
    let test_idx = dataset.split_indices(Split::Test);
    if train_idx.is_empty() || val_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Eval("dataset must provide all three splits".into()));
    }
    let d_train = train_idx.len();

    let mut model = MlpModel::init(arch.clone(), true, derived.wrapping_add(1));
    let mut state = AdamState::new(&model, hyper.lr);
    let mut best: Option<(f64, f64, MlpModel)> = None; // (val_bce, val_scalarized, model)

    let mut order = train_idx.clone();
    for epoch in 0..hyper.epochs {
        // Per-epoch shuffle from the run's own stream.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for (batch_no, batch) in order.chunks(hyper.batch_size).enumerate() {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| dataset.features[i].as_slice()).collect();
            let groups: Vec<u8> = batch.iter().map(|&i| dataset.groups[i]).collect();
            let ys: Vec<u8> = batch.iter().map(|&i| dataset.labels[i]).collect();
            let (grads, batch_loss) = model.backward(&xs, &groups, &ys, loss).map_err(|e| match e {
                Error::Numeric { .. } => Error::Diverged {
                    epoch,
                    batch: batch_no,
                },
                other => other,
            })?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                });
            }
            adam_step(&mut model, &grads, &mut state);
        }
        let (val_bce, val_dp) = eval_indices(&model, dataset, &val_idx)?;
        let val_scalarized = val_bce + loss.lambda * val_dp;
        let better = best.as_ref().map_or(true, |(b, _, _)| val_bce < *b);
        if better {
            best = Some((val_bce, val_scalarized, model.clone()));
        }
    }

    let (val_bce, val_scalarized, best_model) = best.expect("epochs >= 1");
    let (train_bce, _) = eval_indices(&best_model, dataset, &train_idx)?;
    let (test_bce, test_dp) = eval_indices(&best_model, dataset, &test_idx)?;

    let checkpoint_ref = if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        let name = format!("n{}_l{}_s{}.ckpt", n_params, fmt_lambda_key(loss.lambda), seed);
        let path = dir.join(name);
        best_model.save(&path)?;
        Some(path.display().to_string())
    } else {
        None
    };

    Ok(TrainedPoint {
        n_params,
        d_train,
        lambda: loss.lambda,
        seed,
        train_bce,
        val_bce,
        val_scalarized,
        test_bce,
        test_dp,
        checkpoint_ref,
    })
}

fn fmt_lambda_key(lambda: f64) -> String {
    format!("{:016x}", lambda.to_bits())
}

/// Outcome of a sweep: completed points plus descriptions of failed runs.
#[derive(Debug)]
pub struct SweepOutcome {
    pub points: Vec<TrainedPoint>,
    pub failures: Vec<String>,
    pub runs_executed: usize,
    pub runs_skipped: usize,
}

/// Runs the Cartesian (arch x lambda x seed) sweep in parallel. Runs whose
/// (n_params, lambda, seed) key already appears in `existing` are skipped;
/// newly completed rows are appended to `append_to` incrementally. Output
/// points are sorted by (n_params, lambda, seed).
pub fn run_sweep(
    dataset: &Dataset,
    config: &SweepConfig,
    existing: &[TrainedPoint],
    append_to: Option<&Path>,
) -> Result<SweepOutcome> {
    config.validate()?;
    let have: std::collections::HashSet<(usize, u64, u64)> = existing
        .iter()
        .map(|p| (p.n_params, p.lambda.to_bits(), p.seed))
        .collect();
    let plan = config.run_plan();
    let todo: Vec<(usize, f64, u64)> = plan
        .iter()
        .copied()
        .filter(|&(ai, l, s)| {
            let n = param_count(&config.architectures[ai]).weights_only;
            !have.contains(&(n, l.to_bits(), s))
        })
        .collect();
    let runs_skipped = plan.len() - todo.len();

    let writer = match append_to {
        Some(path) => {
            let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            Some(Mutex::new(file))
        }
        None => None,
    };

    let results: Vec<std::result::Result<TrainedPoint, String>> = todo
        .par_iter()
        .map(|&(ai, lambda, seed)| {
            let arch = &config.architectures[ai];
            train_one(
                dataset,
                arch,
                &ScalarizedLoss { lambda },
                seed,
                &config.hyper,
                config.train_subset,
                config.checkpoint_dir.as_deref(),
            )
            .map(|p| {
                if let Some(w) = &writer {
                    let mut f = w.lock().unwrap();
                    let _ = f.write_all(point_csv_row(&p).as_bytes());
                }
                p
            })
            .map_err(|e| format!("arch {:?} lambda {} seed {}: {}", arch.hidden_sizes, lambda, seed, e))
        })
        .collect();

    let mut points: Vec<TrainedPoint> = existing.to_vec();
    let mut failures = Vec::new();
    let mut runs_executed = 0;
    for r in results {
        match r {
            Ok(p) => {
                runs_executed += 1;
                points.push(p);
            }
            Err(msg) => failures.push(msg),
        }
    }
    points.sort_by(|a, b| {
        (a.n_params, a.lambda, a.seed)
            .partial_cmp(&(b.n_params, b.lambda, b.seed))
            .unwrap()
    });
    Ok(SweepOutcome {
        points,
        failures,
        runs_executed,
        runs_skipped,
    })
}

pub const POINTS_HEADER: &str = "n_params,d_train,lambda,seed,train_bce,val_bce,test_bce,test_dp";

fn point_csv_row(p: &TrainedPoint) -> String {
    format!(
        "{},{},{:?},{},{:?},{:?},{:?},{:?}\n",
        p.n_params, p.d_train, p.lambda, p.seed, p.train_bce, p.val_bce, p.test_bce, p.test_dp
    )
}

/// Writes a full results file (comment lines first, then header and sorted rows).
pub fn write_points(path: &Path, points: &[TrainedPoint], comments: &[String]) -> Result<()> {
    let mut sorted: Vec<&TrainedPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        (a.n_params, a.lambda, a.seed)
            .partial_cmp(&(b.n_params, b.lambda, b.seed))
            .unwrap()
    });
    let mut out = String::new();
    for c in comments {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str(POINTS_HEADER);
    out.push('\n');
    for p in sorted {
        out.push_str(&point_csv_row(p));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a results file written by [`write_points`] or appended by
/// [`run_sweep`]; comment lines and the header are skipped.
pub fn read_points(path: &Path) -> Result<Vec<TrainedPoint>> {
    let body = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (i, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == POINTS_HEADER {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("{e}"),
            })
        };
        points.push(TrainedPoint {
            n_params: fields[0].parse().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("{e}"),
            })?,
            d_train: fields[1].parse().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("{e}"),
            })?,
            lambda: parse(fields[2])?,
            seed: fields[3].parse().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("{e}"),
            })?,
            train_bce: parse(fields[4])?,
            val_bce: parse(fields[5])?,
            val_scalarized: f64::NAN, // not persisted
            test_bce: parse(fields[6])?,
            test_dp: parse(fields[7])?,
            checkpoint_ref: None,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, DgpConfig, GroupMode};

    fn tiny_dataset() -> Dataset {
        generate(&DgpConfig {
            n_samples: 400,
            x_dim: 4,
            pi: 0.4,
            zeta: 0.5,
            g_seed: 11,
            data_seed: 12,
            mode: GroupMode::Projected,
        })
        .unwrap()
    }

    fn tiny_arch() -> MlpArchitecture {
        MlpArchitecture::new(4, vec![8]).unwrap()
    }

    fn fast_hyper() -> Hyper {
        Hyper {
            epochs: 8,
            batch_size: 64,
            lr: 0.01,
        }
    }

    #[test]
    fn default_grid_shape() {
        let grid = default_lambda_grid();
        assert_eq!(grid.len(), 100);
        assert_eq!(grid.iter().cloned().fold(f64::INFINITY, f64::min), -3.0);
        assert_eq!(grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 5.0);
        assert_eq!(grid.iter().filter(|&&l| l < 0.0).count(), 60);
    }

    #[test]
    fn train_one_is_deterministic() {
        let ds = tiny_dataset();
        let run = || {
            train_one(
                &ds,
                &tiny_arch(),
                &ScalarizedLoss { lambda: 0.5 },
                7,
                &fast_hyper(),
                None,
                None,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.test_bce.to_bits(), b.test_bce.to_bits());
        assert_eq!(a.test_dp.to_bits(), b.test_dp.to_bits());
        assert_eq!(a.val_bce.to_bits(), b.val_bce.to_bits());
    }

    #[test]
    fn large_lambda_reduces_dp() {
        let ds = tiny_dataset();
        let h = fast_hyper();
        let base = train_one(&ds, &tiny_arch(), &ScalarizedLoss { lambda: 0.0 }, 3, &h, None, None)
            .unwrap();
        let fair = train_one(&ds, &tiny_arch(), &ScalarizedLoss { lambda: 50.0 }, 3, &h, None, None)
            .unwrap();
        assert!(
            fair.test_dp <= base.test_dp,
            "dp {} vs {}",
            fair.test_dp,
            base.test_dp
        );
    }

    #[test]
    fn run_plan_counts() {
        let cfg = SweepConfig {
            architectures: vec![
                MlpArchitecture::new(20, vec![80, 80]).unwrap(),
                MlpArchitecture::new(20, vec![160, 160]).unwrap(),
                MlpArchitecture::new(20, vec![320, 320]).unwrap(),
                MlpArchitecture::new(20, vec![640, 640]).unwrap(),
            ],
            lambda_grid: default_lambda_grid(),
            seeds: vec![0, 1, 2],
            hyper: Hyper::default(),
            train_subset: None,
            checkpoint_dir: None,
        };
        assert_eq!(cfg.run_plan().len(), 1200);
    }

    #[test]
    fn empty_lambda_grid_rejected() {
        let cfg = SweepConfig {
            architectures: vec![tiny_arch()],
            lambda_grid: vec![],
            seeds: vec![0],
            hyper: Hyper::default(),
            train_subset: None,
            checkpoint_dir: None,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_resume_skips_completed_runs() {
        let ds = tiny_dataset();
        let cfg = SweepConfig {
            architectures: vec![tiny_arch()],
            lambda_grid: vec![0.0, 1.0],
            seeds: vec![1, 2],
            hyper: fast_hyper(),
            train_subset: None,
            checkpoint_dir: None,
        };
        let first = run_sweep(&ds, &cfg, &[], None).unwrap();
        assert_eq!(first.points.len(), 4);
        assert_eq!(first.runs_executed, 4);
        let second = run_sweep(&ds, &cfg, &first.points, None).unwrap();
        assert_eq!(second.runs_executed, 0);
        assert_eq!(second.runs_skipped, 4);
        assert_eq!(second.points.len(), 4);
    }

    #[test]
    fn sweep_order_invariance() {
        // Points are functions of their triple alone: a sweep over a permuted
        // grid yields bitwise-identical sorted results.
        let ds = tiny_dataset();
        let mk = |grid: Vec<f64>| SweepConfig {
            architectures: vec![tiny_arch()],
            lambda_grid: grid,
            seeds: vec![5],
            hyper: fast_hyper(),
            train_subset: None,
            checkpoint_dir: None,
        };
        let a = run_sweep(&ds, &mk(vec![0.0, 0.5, 1.0]), &[], None).unwrap();
        let b = run_sweep(&ds, &mk(vec![1.0, 0.0, 0.5]), &[], None).unwrap();
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_eq!(pa.lambda.to_bits(), pb.lambda.to_bits());
            assert_eq!(pa.test_bce.to_bits(), pb.test_bce.to_bits());
            assert_eq!(pa.test_dp.to_bits(), pb.test_dp.to_bits());
        }
    }

    #[test]
    fn nested_subset_prefixes() {
        let ds = tiny_dataset();
        let h = fast_hyper();
        let p100 = train_one(&ds, &tiny_arch(), &ScalarizedLoss { lambda: 0.0 }, 1, &h, Some(100), None)
            .unwrap();
        let p200 = train_one(&ds, &tiny_arch(), &ScalarizedLoss { lambda: 0.0 }, 1, &h, Some(200), None)
            .unwrap();
        assert_eq!(p100.d_train, 100);
        assert_eq!(p200.d_train, 200);
    }

    #[test]
    fn points_file_roundtrip() {
        let ds = tiny_dataset();
        let cfg = SweepConfig {
            architectures: vec![tiny_arch()],
            lambda_grid: vec![-0.5, 0.25],
            seeds: vec![9],
            hyper: fast_hyper(),
            train_subset: None,
            checkpoint_dir: None,
        };
        let out = run_sweep(&ds, &cfg, &[], None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("points.csv");
        write_points(&path, &out.points, &["dataset_digest=deadbeef".into()]).unwrap();
        let read = read_points(&path).unwrap();
        assert_eq!(read.len(), out.points.len());
        for (a, b) in read.iter().zip(&out.points) {
            assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
            assert_eq!(a.test_bce.to_bits(), b.test_bce.to_bits());
        }
    }
}
