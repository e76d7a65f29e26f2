//! Command-line pipeline: dataset generation, training sweeps, frontier
//! extraction, scaling fits, extrapolation, audits, and the identity
//! verification suite. Every artifact embeds the digest of its inputs.

use clap::{Args, Parser, Subcommand};
use pareto_audit::artifact::{bytes_digest, check_upstream, file_digest};
use pareto_audit::audit::{delta_distance, resource_requirement, ContestedModel, ResourceOutcome};
use pareto_audit::closed_form::ShapeConstants;
use pareto_audit::dgp::{generate, load_external, DgpConfig};
use pareto_audit::error::{Error, Result};
use pareto_audit::fitting::{
    extrapolate, fit, read_fit, write_fit, FitMode, FitProblem, Observation, Pins,
};
use pareto_audit::frontier::{
    budget_envelope, lower_convex_hull, read_curve, to_plane, write_curve, FrontierCurve,
};
use pareto_audit::nn::MlpArchitecture;
use pareto_audit::theory;
use pareto_audit::training::{
    default_lambda_grid, read_points, run_sweep, subsampled_lambda_grid, write_points, Hyper,
    SweepConfig, TrainedPoint,
};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "pareto-audit", version, about = "Loss-fairness frontier estimation and audits")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Emit exact and budget-envelope curves of the closed-form shape.
    Simulate(SimulateArgs),
    /// Generate a synthetic dataset CSV.
    Gen(GenArgs),
    /// Train the (architecture x lambda x seed) sweep over a dataset.
    Sweep(SweepArgs),
    /// Extract a frontier curve from sweep points.
    Frontier(FrontierArgs),
    /// Fit the seven scaling constants to frontier vertices.
    Fit(FitArgs),
    /// Evaluate a fitted frontier at a new (N+, D+) scale.
    Extrapolate(ExtrapolateArgs),
    /// Compute the fairness-improvement distance of a contested model.
    Audit(AuditArgs),
    /// Run the numerical identity checks; nonzero exit on any failure.
    Verify,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    c: f64,
    #[arg(long)]
    c_prime: f64,
    #[arg(long)]
    c_double_prime: f64,
    #[arg(long, default_value_t = 0.0)]
    b: f64,
    /// Comma-separated list of c values to sweep; overrides --c when given.
    #[arg(long)]
    sweep_c: Option<String>,
    #[arg(long, default_value_t = 512)]
    grid_points: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// TOML config with a [dgp] section; flags override nothing when set.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    x_dim: Option<usize>,
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    g_seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// independent | projected
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Semicolon-separated hidden layer lists, e.g. "80,80;160,160".
    #[arg(long)]
    hidden: Option<String>,
    /// Explicit comma-separated lambda values.
    #[arg(long)]
    lambdas: Option<String>,
    /// Evenly subsample the default 100-value grid down to this count.
    #[arg(long)]
    lambda_count: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    train_subset: Option<usize>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Sweep parallelism cap; defaults to all logical cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Proceed even if an existing results file was built from different data.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct FrontierArgs {
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// hull | envelope
    #[arg(long, default_value = "envelope")]
    kind: String,
    /// Average (loss, gap) across seeds per (n_params, lambda) before hulling.
    #[arg(long)]
    average_seeds: bool,
    /// Restrict to one model size when the points file holds several.
    #[arg(long)]
    n_params: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frontier curve file(s) whose vertices become observations.
    #[arg(long, required = true)]
    frontier: Vec<PathBuf>,
    /// Points file each frontier was built from, for staleness checking.
    #[arg(long)]
    points: Option<PathBuf>,
    /// least_squares | lower_bound
    #[arg(long, default_value = "least_squares")]
    mode: String,
    #[arg(long)]
    pin_c3: Option<f64>,
    #[arg(long)]
    pin_c4: Option<f64>,
    /// Leave the scale exponents C3, C4 free instead of pinning them at 0.5.
    #[arg(long)]
    free_exponents: bool,
    #[arg(long, default_value_t = 32)]
    starts: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ExtrapolateArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    n_plus: f64,
    #[arg(long)]
    d_plus: f64,
    #[arg(long, default_value_t = 512)]
    grid_points: usize,
    /// Writes {out_prefix}_exact.csv and {out_prefix}_envelope.csv.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    loss: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    n_plus: Option<u64>,
    #[arg(long)]
    d_plus: Option<u64>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print the (D, N) resource curve for the contested point.
    #[arg(long)]
    resources: bool,
}

/// Top-level config document; any section may be omitted.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    dgp: Option<DgpConfig>,
    sweep: Option<SweepSection>,
    fit: Option<FitSection>,
    audit: Option<AuditSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    hidden: Vec<Vec<usize>>,
    lambdas: Option<Vec<f64>>,
    lambda_count: Option<usize>,
    seeds: Vec<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    train_subset: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitSection {
    mode: Option<String>,
    pin_c3: Option<f64>,
    pin_c4: Option<f64>,
    free_exponents: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AuditSection {
    loss: f64,
    delta: f64,
    n_plus: u64,
    d_plus: u64,
    label: Option<String>,
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let body = std::fs::read_to_string(path)?;
    toml::from_str(&body).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} value '{t}'")))
        })
        .collect()
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let cs: Vec<f64> = match &a.sweep_c {
        Some(list) => parse_list(list, "c")?,
        None => vec![a.c],
    };
    // Validate every setting before writing anything.
    let mut shapes = Vec::new();
    for &c in &cs {
        let k = ShapeConstants {
            c,
            c_prime: a.c_prime,
            c_double_prime: a.c_double_prime,
            b: a.b,
        };
        k.validate()?;
        shapes.push(k);
    }
    if a.grid_points < 2 {
        return Err(Error::Config("grid_points must be >= 2".into()));
    }
    std::fs::create_dir_all(&a.out_dir)?;
    for k in &shapes {
        let (lo, hi) = k.delta_domain();
        let (lo, hi) = (lo + 1e-6, hi - 1e-6);
        let grid: Vec<f64> = (0..a.grid_points)
            .map(|i| lo + (hi - lo) * i as f64 / (a.grid_points - 1) as f64)
            .collect();
        let (exact, envelope, skipped) = pareto_audit::closed_form::sweep_shape(&grid, k)?;
        for d in &skipped {
            eprintln!("warning: grid point {d} outside the delta domain, skipped");
        }
        let tag = format!("{}", k.c).replace('.', "p");
        write_curve(&a.out_dir.join(format!("shape_c{tag}_exact.csv")), &exact, &[])?;
        write_curve(
            &a.out_dir.join(format!("shape_c{tag}_envelope.csv")),
            &envelope,
            &[],
        )?;
    }
    println!("wrote {} curve files to {}", 2 * shapes.len(), a.out_dir.display());
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let from_config: Option<DgpConfig> = match &a.config {
        Some(p) => load_config(p)?.dgp,
        None => None,
    };
    let config = match from_config {
        Some(c) => c,
        None => DgpConfig {
            n_samples: a
                .n_samples
                .ok_or(Error::Config("--n-samples required without --config".into()))?,
            x_dim: a.x_dim.unwrap_or(20),
            pi: a.pi.ok_or(Error::Config("--pi required without --config".into()))?,
            zeta: a.zeta.ok_or(Error::Config("--zeta required without --config".into()))?,
            g_seed: a.g_seed.unwrap_or(0),
            data_seed: a.data_seed.unwrap_or(0),
            mode: match a.mode.as_deref().unwrap_or("projected") {
                "independent" => pareto_audit::dgp::GroupMode::Independent,
                "projected" => pareto_audit::dgp::GroupMode::Projected,
                other => return Err(Error::Config(format!("unknown mode '{other}'"))),
            },
        },
    };
    let dataset = generate(&config)?;
    dataset.save_csv(&a.out)?;
    println!(
        "wrote {} rows to {} (digest {})",
        dataset.len(),
        a.out.display(),
        &file_digest(&a.out)?[..12]
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    if let Some(w) = a.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    let dataset = load_external(&a.data, 0)?;
    let data_digest = file_digest(&a.data)?;

    let section: Option<SweepSection> = match &a.config {
        Some(p) => load_config(p)?.sweep,
        None => None,
    };
    let hidden: Vec<Vec<usize>> = match (&a.hidden, &section) {
        (Some(h), _) => h
            .split(';')
            .map(|s| parse_list(s, "hidden size"))
            .collect::<Result<_>>()?,
        (None, Some(s)) => s.hidden.clone(),
        (None, None) => return Err(Error::Config("--hidden or a [sweep] config required".into())),
    };
    let architectures: Vec<MlpArchitecture> = hidden
        .into_iter()
        .map(|h| MlpArchitecture::new(dataset.x_dim(), h))
        .collect::<Result<_>>()?;
    let lambda_grid = if let Some(l) = &a.lambdas {
        parse_list(l, "lambda")?
    } else if let Some(n) = a.lambda_count.or(section.as_ref().and_then(|s| s.lambda_count)) {
        subsampled_lambda_grid(n)
    } else if let Some(l) = section.as_ref().and_then(|s| s.lambdas.clone()) {
        l
    } else {
        default_lambda_grid()
    };
    let seeds = if let Some(s) = &a.seeds {
        parse_list(s, "seed")?
    } else if let Some(sec) = &section {
        sec.seeds.clone()
    } else {
        vec![0]
    };
    let hyper = Hyper {
        epochs: a
            .epochs
            .or(section.as_ref().and_then(|s| s.epochs))
            .unwrap_or(Hyper::default().epochs),
        batch_size: a
            .batch_size
            .or(section.as_ref().and_then(|s| s.batch_size))
            .unwrap_or(Hyper::default().batch_size),
        lr: a
            .lr
            .or(section.as_ref().and_then(|s| s.lr))
            .unwrap_or(Hyper::default().lr),
    };
    let config = SweepConfig {
        architectures,
        lambda_grid,
        seeds,
        hyper,
        train_subset: a.train_subset.or(section.as_ref().and_then(|s| s.train_subset)),
        checkpoint_dir: a.checkpoint_dir.clone(),
    };

    let existing: Vec<TrainedPoint> = if a.out.exists() {
        if !a.force {
            check_upstream(&a.out, "input_digest", &a.data)?;
        }
        read_points(&a.out)?
    } else {
        Vec::new()
    };
    let outcome = run_sweep(&dataset, &config, &existing, Some(&a.out))?;
    write_points(
        &a.out,
        &outcome.points,
        &[format!("input_digest={data_digest}")],
    )?;
    for f in &outcome.failures {
        eprintln!("failed run: {f}");
    }
    println!(
        "{} runs executed, {} resumed, {} failed -> {} ({} points)",
        outcome.runs_executed,
        outcome.runs_skipped,
        outcome.failures.len(),
        a.out.display(),
        outcome.points.len()
    );
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Eval(format!("{} sweep runs failed", outcome.failures.len())))
    }
}

fn cmd_frontier(a: &FrontierArgs) -> Result<()> {
    let points = read_points(&a.points)?;
    if points.is_empty() {
        return Err(Error::Infeasible(format!("{} holds no points", a.points.display())));
    }
    let mut sizes: Vec<usize> = points.iter().map(|p| p.n_params).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let selected: Vec<TrainedPoint> = match a.n_params {
        Some(n) => {
            let v: Vec<TrainedPoint> = points.iter().filter(|p| p.n_params == n).cloned().collect();
            if v.is_empty() {
                return Err(Error::Config(format!(
                    "no points with n_params {n}; available: {sizes:?}"
                )));
            }
            v
        }
        None => {
            if sizes.len() > 1 {
                return Err(Error::Config(format!(
                    "points file mixes model sizes {sizes:?}; pick one with --n-params"
                )));
            }
            points
        }
    };
    let d_train = selected[0].d_train;
    let plane = to_plane(&selected, a.average_seeds);
    let source = format!(
        "n_params={} d_train={} points={}",
        selected[0].n_params,
        d_train,
        plane.len()
    );
    let curve = match a.kind.as_str() {
        "hull" => lower_convex_hull(&plane, &source)?,
        "envelope" => budget_envelope(&plane, &source)?,
        other => return Err(Error::Config(format!("unknown kind '{other}' (hull | envelope)"))),
    };
    write_curve(
        &a.out,
        &curve,
        &[
            format!("input_digest={}", file_digest(&a.points)?),
            format!("average_seeds={}", a.average_seeds),
        ],
    )?;
    println!(
        "{} vertices ({}) -> {}",
        curve.vertices.len(),
        curve.kind.as_str(),
        a.out.display()
    );
    Ok(())
}

/// Pulls n_params / d_train back out of a curve's source note.
fn curve_scale(curve: &FrontierCurve, path: &Path) -> Result<(f64, f64)> {
    let mut n = None;
    let mut d = None;
    for tok in curve.source.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n_params=") {
            n = v.parse::<f64>().ok();
        } else if let Some(v) = tok.strip_prefix("d_train=") {
            d = v.parse::<f64>().ok();
        }
    }
    match (n, d) {
        (Some(n), Some(d)) => Ok((n, d)),
        _ => Err(Error::Config(format!(
            "{} lacks n_params/d_train in its source note; was it built by `frontier`?",
            path.display()
        ))),
    }
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let section: Option<FitSection> = match &a.config {
        Some(p) => load_config(p)?.fit,
        None => None,
    };
    let mode_str = section
        .as_ref()
        .and_then(|s| s.mode.clone())
        .unwrap_or_else(|| a.mode.clone());
    let mode = FitMode::parse(&mode_str)
        .ok_or(Error::Config(format!("unknown mode '{mode_str}' (least_squares | lower_bound)")))?;
    let free_exponents =
        a.free_exponents || section.as_ref().and_then(|s| s.free_exponents).unwrap_or(false);
    let pins = if free_exponents {
        Pins::default()
    } else {
        Pins {
            c3: Some(a.pin_c3.or(section.as_ref().and_then(|s| s.pin_c3)).unwrap_or(0.5)),
            c4: Some(a.pin_c4.or(section.as_ref().and_then(|s| s.pin_c4)).unwrap_or(0.5)),
            ..Pins::default()
        }
    };

    let mut observations = Vec::new();
    let mut digests = String::new();
    for path in &a.frontier {
        if let Some(points) = &a.points {
            if !a.force {
                check_upstream(path, "input_digest", points)?;
            }
        }
        let curve = read_curve(path)?;
        let (n, d) = curve_scale(&curve, path)?;
        for &(delta, loss) in &curve.vertices {
            observations.push(Observation {
                n_params: n,
                d_train: d,
                delta,
                loss,
            });
        }
        digests.push_str(&file_digest(path)?);
        digests.push('\n');
    }
    let mut problem = FitProblem::new(observations, pins, mode);
    problem.n_starts = a.starts;
    let result = fit(&problem)?;
    write_fit(&a.out, &result, &bytes_digest(digests.as_bytes()))?;
    let c = &result.constants;
    println!(
        "mode={} rmse={:.6e} max_violation={:.3e} restarts={} near_optima={}{}",
        mode.as_str(),
        result.rmse,
        result.max_violation,
        result.n_restarts_used,
        result.near_optima.len(),
        if result.non_converged { " NON-CONVERGED" } else { "" }
    );
    println!(
        "C1={:.6} C2={:.6} C3={:.6} C4={:.6} C5={:.6} C6={:.6} C7={:.6} -> {}",
        c.c1,
        c.c2,
        c.c3,
        c.c4,
        c.c5,
        c.c6,
        c.c7,
        a.out.display()
    );
    Ok(())
}

fn cmd_extrapolate(a: &ExtrapolateArgs) -> Result<()> {
    let (constants, mode, _) = read_fit(&a.fit)?;
    let (lo, hi) = constants.shape(0.0).delta_domain();
    let (lo, hi) = (lo + 1e-6, hi - 1e-6);
    if a.grid_points < 2 {
        return Err(Error::Config("grid_points must be >= 2".into()));
    }
    let grid: Vec<f64> = (0..a.grid_points)
        .map(|i| lo + (hi - lo) * i as f64 / (a.grid_points - 1) as f64)
        .collect();
    let (exact, envelope) = extrapolate(&constants, a.n_plus, a.d_plus, &grid)?;
    let comments = vec![
        format!("fit_digest={}", file_digest(&a.fit)?),
        format!("fit_mode={}", mode.as_str()),
    ];
    let exact_path = PathBuf::from(format!("{}_exact.csv", a.out_prefix));
    let env_path = PathBuf::from(format!("{}_envelope.csv", a.out_prefix));
    write_curve(&exact_path, &exact, &comments)?;
    write_curve(&env_path, &envelope, &comments)?;
    println!("wrote {} and {}", exact_path.display(), env_path.display());
    Ok(())
}

fn cmd_audit(a: &AuditArgs) -> Result<()> {
    let section: Option<AuditSection> = match &a.config {
        Some(p) => load_config(p)?.audit,
        None => None,
    };
    let pick_f = |flag: Option<f64>, sec: Option<f64>, name: &str| -> Result<f64> {
        flag.or(sec)
            .ok_or(Error::Config(format!("--{name} required (flag or [audit] config)")))
    };
    let pick_u = |flag: Option<u64>, sec: Option<u64>, name: &str| -> Result<u64> {
        flag.or(sec)
            .ok_or(Error::Config(format!("--{name} required (flag or [audit] config)")))
    };
    let contested = ContestedModel {
        loss: pick_f(a.loss, section.as_ref().map(|s| s.loss), "loss")?,
        delta: pick_f(a.delta, section.as_ref().map(|s| s.delta), "delta")?,
        n_plus: pick_u(a.n_plus, section.as_ref().map(|s| s.n_plus), "n-plus")?,
        d_plus: pick_u(a.d_plus, section.as_ref().map(|s| s.d_plus), "d-plus")?,
        label: a
            .label
            .clone()
            .or(section.as_ref().and_then(|s| s.label.clone()))
            .unwrap_or_else(|| "contested".into()),
    };
    let (constants, mode, _) = read_fit(&a.fit)?;
    let digest = file_digest(&a.fit)?;
    let report = delta_distance(&contested, &constants, mode, &digest)?;
    println!("{}", report.summary_line());
    if let Some(out) = &a.out {
        report.write(out)?;
    }
    if a.resources {
        let d_grid: Vec<f64> = (10..=24).map(|k| 2f64.powi(k)).collect();
        match resource_requirement(contested.loss, contested.delta, &constants, &d_grid)? {
            ResourceOutcome::Curve(pairs) => {
                for (d, n) in pairs {
                    println!("resource d={d:.0} n={n:.0}");
                }
            }
            ResourceOutcome::InfeasibleAtAnyScale => {
                println!("resource infeasible_at_any_scale")
            }
            ResourceOutcome::ScaleIndependent { achievable } => {
                println!("resource scale_independent achievable={achievable}")
            }
        }
    }
    Ok(())
}

fn cmd_verify() -> Result<bool> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;
    let mut all_ok = true;
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("{} {name}{}", if ok { "PASS" } else { "FAIL" }, if ok {
            String::new()
        } else {
            format!(": {detail}")
        });
        all_ok &= ok;
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    let random_joint = |rng: &mut ChaCha8Rng| {
        let mut probs = vec![[[0.0f64; 2]; 2]; 3];
        let mut total = 0.0;
        for cell in probs.iter_mut().flatten().flatten() {
            *cell = rng.gen_range(0.05..1.0);
            total += *cell;
        }
        for cell in probs.iter_mut().flatten().flatten() {
            *cell /= total;
        }
        theory::DiscreteJoint::new(probs).unwrap()
    };
    let mut worst_tele: f64 = 0.0;
    let mut worst_rs: f64 = 0.0;
    for _ in 0..100 {
        let p = random_joint(&mut rng);
        let q = random_joint(&mut rng);
        let f: Vec<[f64; 2]> = (0..3)
            .map(|_| [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)])
            .collect();
        let r = theory::verify_decomposition(&p, &q, &f).unwrap();
        worst_tele = worst_tele.max((r.terms.iter().sum::<f64>() - r.loss_p_f).abs());
        worst_rs = worst_rs.max((r.three_term_residual - r.e_q_rs).abs());
    }
    report(
        "decomposition_telescope",
        worst_tele < 1e-12 && worst_rs < 1e-10,
        format!("telescope {worst_tele:e}, rs {worst_rs:e}"),
    );

    let mut equiv_ok = true;
    for _ in 0..100 {
        let n = rng.gen_range(2..8);
        let norm = |v: &mut Vec<f64>| {
            let t: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= t);
        };
        let mut nu: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        norm(&mut nu);
        let mut mu: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        norm(&mut mu);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (a, b, c) = theory::verify_cov_lemma(&mu, &nu, &s).unwrap();
        equiv_ok &= a == b && b == c;
    }
    report("cov_lemma_equivalence", equiv_ok, "conditions diverged".into());

    let u: Vec<f64> = (0..20_000)
        .map(|_| rand_distr::StandardNormal.sample(&mut rng))
        .collect();
    let est = theory::verify_chebyshev_cov(&u, 0.5, 2.0).unwrap();
    report(
        "chebyshev_association",
        est.bootstrap_ci.0 > -3.0 * est.se,
        format!("ci ({:e}, {:e})", est.bootstrap_ci.0, est.bootstrap_ci.1),
    );

    let scales = [0.04, 0.02, 0.01, 0.005, 0.0025];
    let pts: Vec<(f64, f64)> = scales
        .iter()
        .map(|&h| {
            let z =
                theory::DiscreteDist::new(vec![0.4 - h, 0.4 + 2.0 * h], vec![2.0 / 3.0, 1.0 / 3.0])
                    .unwrap();
            let r = theory::verify_taylor_log(&z).unwrap();
            (h.ln(), r.abs_error.ln())
        })
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    report("taylor_cubic_decay", (slope - 3.0).abs() < 0.5, format!("slope {slope}"));

    let mut var_ok = true;
    for _ in 0..100 {
        let vals: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut probs: Vec<f64> = (0..5).map(|_| rng.gen_range(0.01..1.0)).collect();
        let t: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|x| *x /= t);
        let z = theory::DiscreteDist::new(vals, probs).unwrap();
        var_ok &= theory::verify_var_bound(&z).unwrap();
    }
    report("variance_bound", var_ok, "bound violated".into());

    Ok(all_ok)
}

fn dispatch() -> Result<bool> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Simulate(a) => cmd_simulate(a).map(|_| true),
        Cmd::Gen(a) => cmd_gen(a).map(|_| true),
        Cmd::Sweep(a) => cmd_sweep(a).map(|_| true),
        Cmd::Frontier(a) => cmd_frontier(a).map(|_| true),
        Cmd::Fit(a) => cmd_fit(a).map(|_| true),
        Cmd::Extrapolate(a) => cmd_extrapolate(a).map(|_| true),
        Cmd::Audit(a) => cmd_audit(a).map(|_| true),
        Cmd::Verify => cmd_verify(),
    }
}

fn main() -> std::process::ExitCode {
    match dispatch() {
        Ok(true) => std::process::ExitCode::SUCCESS,
        Ok(false) => std::process::ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
