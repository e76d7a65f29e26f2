//! Minimal feed-forward network: fixed MLP family with ReLU hidden layers,
//! a sigmoid output, manual backpropagation, and an Adam optimizer.
//!
//! All arithmetic is f64. Scores are clamped to [`SCORE_CLAMP`, 1 - `SCORE_CLAMP`]
//! before they reach any logarithm.

use crate::error::{Error, Result};
use crate::training::ScalarizedLoss;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::{BufRead, Write};
use std::path::Path;

/// Clamp applied to sigmoid outputs so downstream logs stay finite.
pub const SCORE_CLAMP: f64 = 1e-7;

/// Architecture of the MLP family: `input_dim` refers to the feature vector
/// alone; the group bit, when used, occupies one extra input column that is
/// not part of `input_dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        if hidden_sizes.is_empty() || hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::Config(
                "hidden_sizes must be non-empty with all sizes >= 1".into(),
            ));
        }
        Ok(Self {
            input_dim,
            hidden_sizes,
        })
    }

    /// Per-layer (fan_in, fan_out) pairs for a model with or without the
    /// appended group input.
    pub fn layer_dims(&self, group_input: bool) -> Vec<(usize, usize)> {
        let first_in = self.input_dim + usize::from(group_input);
        let mut dims = Vec::with_capacity(self.hidden_sizes.len() + 1);
        let mut prev = first_in;
        for &h in &self.hidden_sizes {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, 1));
        dims
    }
}

/// Parameter counts for an architecture. `weights_only` matches the published
/// convention (biases excluded, group column excluded); `with_biases` is the
/// full count kept for transparency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub weights_only: usize,
    pub with_biases: usize,
}

/// Weight-only and bias-inclusive parameter counts of `arch`.
pub fn param_count(arch: &MlpArchitecture) -> ParamCount {
    let dims = arch.layer_dims(false);
    let weights_only: usize = dims.iter().map(|&(i, o)| i * o).sum();
    let biases: usize = dims.iter().map(|&(_, o)| o).sum();
    ParamCount {
        weights_only,
        with_biases: weights_only + biases,
    }
}

/// Per-layer gradient (or moment) buffers with the same shapes as a model's
/// parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// A concrete network: row-major weight matrices (fan_in x fan_out) and bias
/// vectors per layer.
#[derive(Debug, Clone)]
pub struct MlpModel {
    pub architecture: MlpArchitecture,
    pub group_input: bool,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub init_seed: u64,
}

impl MlpModel {
    /// Gaussian init with per-layer std 1/sqrt(fan_in); biases zero.
    pub fn init(arch: MlpArchitecture, group_input: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = arch.layer_dims(group_input);
        let mut weights = Vec::with_capacity(dims.len());
        let mut biases = Vec::with_capacity(dims.len());
        for &(fan_in, fan_out) in &dims {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).unwrap();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| normal.sample(&mut rng))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            architecture: arch,
            group_input,
            weights,
            biases,
            init_seed: seed,
        }
    }

    /// All-zero parameters; useful for hand-checked tests.
    pub fn zeros(arch: MlpArchitecture, group_input: bool) -> Self {
        let dims = arch.layer_dims(group_input);
        let weights = dims.iter().map(|&(i, o)| vec![0.0; i * o]).collect();
        let biases = dims.iter().map(|&(_, o)| vec![0.0; o]).collect();
        Self {
            architecture: arch,
            group_input,
            weights,
            biases,
            init_seed: 0,
        }
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    fn expected_x_dim(&self) -> usize {
        self.architecture.input_dim
    }

    /// Score in [SCORE_CLAMP, 1 - SCORE_CLAMP] for one sample. The group bit
    /// is appended as an extra real-valued input iff the model was built with
    /// `group_input`.
    pub fn forward(&self, x: &[f64], a: u8) -> Result<f64> {
        if x.len() != self.expected_x_dim() {
            return Err(Error::Shape(format!(
                "expected {} features, got {}",
                self.expected_x_dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite feature value".into()));
        }
        let mut act: Vec<f64> = x.to_vec();
        if self.group_input {
            act.push(f64::from(a));
        }
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let fan_out = b.len();
            let fan_in = act.len();
            let mut next = b.clone();
            for (i, &ai) in act.iter().enumerate() {
                if ai != 0.0 {
                    let row = &w[i * fan_out..(i + 1) * fan_out];
                    for (nj, &wij) in next.iter_mut().zip(row) {
                        *nj += ai * wij;
                    }
                }
            }
            let last = layer + 1 == self.n_layers();
            if !last {
                for v in &mut next {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer,
                    detail: "non-finite activation".into(),
                });
            }
            debug_assert_eq!(fan_in * fan_out, w.len());
            act = next;
        }
        Ok(clamp_score(sigmoid(act[0])))
    }

    /// Forward pass over a batch, retaining per-layer post-activations for
    /// backprop. Returns (per-layer activations including the input layer,
    /// unclamped sigmoid outputs).
    fn forward_cached(&self, xs: &[&[f64]], groups: &[u8]) -> Result<(Vec<Vec<Vec<f64>>>, Vec<f64>)> {
        let n = xs.len();
        let mut layers: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.n_layers() + 1);
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (x, &a) in xs.iter().zip(groups) {
            if x.len() != self.expected_x_dim() {
                return Err(Error::Shape(format!(
                    "expected {} features, got {}",
                    self.expected_x_dim(),
                    x.len()
                )));
            }
            let mut v = x.to_vec();
            if self.group_input {
                v.push(f64::from(a));
            }
            inputs.push(v);
        }
        layers.push(inputs);
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let fan_out = b.len();
            let prev = layers.last().unwrap();
            let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
            let last = layer + 1 == self.n_layers();
            for row_in in prev {
                let mut next = b.clone();
                for (i, &ai) in row_in.iter().enumerate() {
                    if ai != 0.0 {
                        let row = &w[i * fan_out..(i + 1) * fan_out];
                        for (nj, &wij) in next.iter_mut().zip(row) {
                            *nj += ai * wij;
                        }
                    }
                }
                if !last {
                    for v in &mut next {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric {
                        layer,
                        detail: "non-finite activation".into(),
                    });
                }
                out.push(next);
            }
            layers.push(out);
        }
        let raw: Vec<f64> = layers.last().unwrap().iter().map(|o| sigmoid(o[0])).collect();
        Ok((layers, raw))
    }

    /// Exact reverse-mode gradient of the scalarized batch loss
    /// mean(BCE) + lambda * |mean_{a=1} f - mean_{a=0} f| (the DP term is 0
    /// when a group is absent from the batch). Returns (gradients, loss).
    pub fn backward(
        &self,
        xs: &[&[f64]],
        groups: &[u8],
        ys: &[u8],
        loss_spec: &ScalarizedLoss,
    ) -> Result<(Gradients, f64)> {
        let n = xs.len();
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if groups.len() != n || ys.len() != n {
            return Err(Error::Shape("batch component length mismatch".into()));
        }
        let (layers, raw) = self.forward_cached(xs, groups)?;
        let scores: Vec<f64> = raw.iter().map(|&p| clamp_score(p)).collect();

        let lo = SCORE_CLAMP;
        let hi = 1.0 - SCORE_CLAMP;
        let nf = n as f64;

        // Batch loss and dL/df.
        let mut bce = 0.0;
        for (&f, &y) in scores.iter().zip(ys) {
            bce += -(f64::from(y) * f.ln() + (1.0 - f64::from(y)) * (1.0 - f).ln());
        }
        bce /= nf;

        let n1 = groups.iter().filter(|&&a| a == 1).count();
        let n0 = n - n1;
        let (dp, dp_sign, m1, m0) = if n1 > 0 && n0 > 0 {
            let m1: f64 = scores
                .iter()
                .zip(groups)
                .filter(|(_, &a)| a == 1)
                .map(|(&f, _)| f)
                .sum::<f64>()
                / n1 as f64;
            let m0: f64 = scores
                .iter()
                .zip(groups)
                .filter(|(_, &a)| a == 0)
                .map(|(&f, _)| f)
                .sum::<f64>()
                / n0 as f64;
            let diff = m1 - m0;
            (diff.abs(), sign(diff), m1, m0)
        } else {
            (0.0, 0.0, 0.0, 0.0)
        };
        let _ = (m1, m0);
        let loss = bce + loss_spec.lambda * dp;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                layer: self.n_layers(),
                detail: "non-finite batch loss".into(),
            });
        }

        // dL/dz at the output, folding the sigmoid and the clamp.
        let mut delta: Vec<Vec<f64>> = scores
            .iter()
            .zip(raw.iter())
            .zip(groups.iter().zip(ys))
            .map(|((&f, &p), (&a, &y))| {
                let mut dl_df =
                    (f - f64::from(y)) / (f * (1.0 - f)) / nf;
                if dp_sign != 0.0 && n1 > 0 && n0 > 0 {
                    let gsz = if a == 1 { n1 as f64 } else { n0 as f64 };
                    let gsign = if a == 1 { 1.0 } else { -1.0 };
                    dl_df += loss_spec.lambda * dp_sign * gsign / gsz;
                }
                let df_dz = if p > lo && p < hi { p * (1.0 - p) } else { 0.0 };
                vec![dl_df * df_dz]
            })
            .collect();

        let mut grads = Gradients::zeros_like(self);
        for layer in (0..self.n_layers()).rev() {
            let acts_in = &layers[layer];
            let fan_out = self.biases[layer].len();
            let gw = &mut grads.weights[layer];
            let gb = &mut grads.biases[layer];
            for (a_in, d) in acts_in.iter().zip(&delta) {
                for (i, &ai) in a_in.iter().enumerate() {
                    if ai != 0.0 {
                        let row = &mut gw[i * fan_out..(i + 1) * fan_out];
                        for (g, &dj) in row.iter_mut().zip(d) {
                            *g += ai * dj;
                        }
                    }
                }
                for (g, &dj) in gb.iter_mut().zip(d) {
                    *g += dj;
                }
            }
            if layer > 0 {
                // Propagate through W^T and the ReLU mask of the previous layer.
                let w = &self.weights[layer];
                let prev_acts = &layers[layer];
                let fan_in = prev_acts[0].len();
                let mut new_delta: Vec<Vec<f64>> = Vec::with_capacity(delta.len());
                for (d, pa) in delta.iter().zip(prev_acts) {
                    let mut nd = vec![0.0; fan_in];
                    for i in 0..fan_in {
                        if pa[i] > 0.0 {
                            let row = &w[i * fan_out..(i + 1) * fan_out];
                            let mut s = 0.0;
                            for (&wij, &dj) in row.iter().zip(d) {
                                s += wij * dj;
                            }
                            nd[i] = s;
                        }
                    }
                    new_delta.push(nd);
                }
                delta = new_delta;
            }
        }
        for (layer, (gw, gb)) in grads.weights.iter().zip(&grads.biases).enumerate() {
            if gw.iter().chain(gb.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer,
                    detail: "non-finite gradient".into(),
                });
            }
        }
        Ok((grads, loss))
    }

    /// Scalarized batch loss alone (used by the finite-difference oracle).
    pub fn batch_loss(
        &self,
        xs: &[&[f64]],
        groups: &[u8],
        ys: &[u8],
        loss_spec: &ScalarizedLoss,
    ) -> Result<f64> {
        let n = xs.len();
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut bce = 0.0;
        let mut sum1 = 0.0;
        let mut sum0 = 0.0;
        let mut n1 = 0usize;
        for ((x, &a), &y) in xs.iter().zip(groups).zip(ys) {
            let f = self.forward(x, a)?;
            bce += -(f64::from(y) * f.ln() + (1.0 - f64::from(y)) * (1.0 - f).ln());
            if a == 1 {
                sum1 += f;
                n1 += 1;
            } else {
                sum0 += f;
            }
        }
        bce /= n as f64;
        let n0 = n - n1;
        let dp = if n1 > 0 && n0 > 0 {
            (sum1 / n1 as f64 - sum0 / n0 as f64).abs()
        } else {
            0.0
        };
        Ok(bce + loss_spec.lambda * dp)
    }

    /// Writes a versioned text checkpoint with explicit layer shapes.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# mlp-checkpoint v1\n");
        out.push_str(&format!("input_dim={}\n", self.architecture.input_dim));
        out.push_str(&format!(
            "hidden={}\n",
            self.architecture
                .hidden_sizes
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        out.push_str(&format!("group_input={}\n", u8::from(self.group_input)));
        out.push_str(&format!("init_seed={}\n", self.init_seed));
        let dims = self.architecture.layer_dims(self.group_input);
        for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
            out.push_str(&format!("layer {layer} {fan_in} {fan_out}\n"));
            out.push_str(&join_floats(&self.weights[layer]));
            out.push('\n');
            out.push_str(&join_floats(&self.biases[layer]));
            out.push('\n');
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Loads a checkpoint written by [`MlpModel::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let mut next = |n: usize| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or(Error::Parse {
                    line: n,
                    msg: "unexpected end of checkpoint".into(),
                })
        };
        let header = next(1)?;
        if header.trim() != "# mlp-checkpoint v1" {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unknown checkpoint header: {header}"),
            });
        }
        let kv = |s: &str, key: &str, line: usize| -> Result<String> {
            s.strip_prefix(&format!("{key}="))
                .map(str::to_string)
                .ok_or(Error::Parse {
                    line,
                    msg: format!("expected {key}=..."),
                })
        };
        let input_dim: usize = kv(&next(2)?, "input_dim", 2)?.parse().map_err(|e| Error::Parse {
            line: 2,
            msg: format!("{e}"),
        })?;
        let hidden: Vec<usize> = kv(&next(3)?, "hidden", 3)?
            .split(',')
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: 3,
                msg: format!("{e}"),
            })?;
        let group_input = kv(&next(4)?, "group_input", 4)? == "1";
        let init_seed: u64 = kv(&next(5)?, "init_seed", 5)?.parse().map_err(|e| Error::Parse {
            line: 5,
            msg: format!("{e}"),
        })?;
        let arch = MlpArchitecture::new(input_dim, hidden)?;
        let dims = arch.layer_dims(group_input);
        let mut weights = Vec::with_capacity(dims.len());
        let mut biases = Vec::with_capacity(dims.len());
        let mut line_no = 5;
        for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
            line_no += 1;
            let hdr = next(line_no)?;
            let expect = format!("layer {layer} {fan_in} {fan_out}");
            if hdr.trim() != expect {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected '{expect}', got '{hdr}'"),
                });
            }
            line_no += 1;
            let w = parse_floats(&next(line_no)?, line_no)?;
            if w.len() != fan_in * fan_out {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {} weights, got {}", fan_in * fan_out, w.len()),
                });
            }
            line_no += 1;
            let b = parse_floats(&next(line_no)?, line_no)?;
            if b.len() != fan_out {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {fan_out} biases, got {}", b.len()),
                });
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(Self {
            architecture: arch,
            group_input,
            weights,
            biases,
            init_seed,
        })
    }
}

/// Adam optimizer state; moments share the model's parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &MlpModel, lr: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: Gradients::zeros_like(model),
            second_moment: Gradients::zeros_like(model),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Standard Adam update with bias correction, in place.
pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState) {
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (lr, beta1, beta2, eps) = (state.lr, state.beta1, state.beta2, state.eps);
    let update = |params: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..params.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    for layer in 0..model.weights.len() {
        update(
            &mut model.weights[layer],
            &grads.weights[layer],
            &mut state.first_moment.weights[layer],
            &mut state.second_moment.weights[layer],
        );
        update(
            &mut model.biases[layer],
            &grads.biases[layer],
            &mut state.first_moment.biases[layer],
            &mut state.second_moment.biases[layer],
        );
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_score(p: f64) -> f64 {
    p.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            line,
            msg: format!("{e}"),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn arch(input: usize, hidden: &[usize]) -> MlpArchitecture {
        MlpArchitecture::new(input, hidden.to_vec()).unwrap()
    }

    #[test]
    fn zero_weights_forward_is_half() {
        let m = MlpModel::zeros(arch(3, &[4]), false);
        let f = m.forward(&[1.0, -2.0, 0.5], 0).unwrap();
        assert_eq!(f, 0.5);
    }

    #[test]
    fn hand_set_single_unit() {
        // 1 -> [1] -> 1 with all weights 1, biases 0: sigma(relu(2)) = sigma(2).
        let mut m = MlpModel::zeros(arch(1, &[1]), false);
        m.weights[0][0] = 1.0;
        m.weights[1][0] = 1.0;
        let f = m.forward(&[2.0], 0).unwrap();
        assert!((f - sigmoid(2.0)).abs() < 1e-15);
        assert!((f - 0.8807970779778823).abs() < 1e-12);
    }

    #[test]
    fn published_param_counts() {
        assert_eq!(param_count(&arch(20, &[80, 80])).weights_only, 8080);
        assert_eq!(param_count(&arch(20, &[160, 160])).weights_only, 28960);
        assert_eq!(param_count(&arch(20, &[320, 320])).weights_only, 109120);
        assert_eq!(param_count(&arch(20, &[640, 640])).weights_only, 423040);
    }

    #[test]
    fn param_count_matches_enumeration() {
        for hidden in [vec![3], vec![5, 7], vec![2, 2, 2]] {
            let a = arch(4, &hidden);
            let m = MlpModel::init(a.clone(), false, 1);
            let brute: usize = m.weights.iter().map(|w| w.len()).sum();
            let brute_b: usize = m.biases.iter().map(|b| b.len()).sum();
            let pc = param_count(&a);
            assert_eq!(pc.weights_only, brute);
            assert_eq!(pc.with_biases, brute + brute_b);
        }
    }

    #[test]
    fn big_arch_accepts_20_dim_input() {
        let m = MlpModel::init(arch(20, &[80, 80]), true, 7);
        let x = vec![0.1; 20];
        let f = m.forward(&x, 1).unwrap();
        assert!(f.is_finite() && f > 0.0 && f < 1.0);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let m = MlpModel::zeros(arch(3, &[2]), false);
        assert!(matches!(m.forward(&[1.0], 0), Err(Error::Shape(_))));
    }

    #[test]
    fn clamped_output_range() {
        let mut m = MlpModel::zeros(arch(1, &[1]), false);
        m.weights[0][0] = 100.0;
        m.weights[1][0] = 100.0;
        let f = m.forward(&[100.0], 0).unwrap();
        assert!(f <= 1.0 - SCORE_CLAMP);
        m.weights[1][0] = -100.0;
        let f = m.forward(&[100.0], 0).unwrap();
        assert!(f >= SCORE_CLAMP);
    }

    #[test]
    fn zero_model_bias_gradient_is_mean_residual() {
        // At all-zero weights the output is 0.5 for every sample, so the
        // output-bias gradient of plain BCE is mean(0.5 - y).
        let m = MlpModel::zeros(arch(2, &[3]), false);
        let xs: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 2.0]];
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let ys = [1u8, 0, 1];
        let groups = [0u8, 1, 0];
        let spec = ScalarizedLoss { lambda: 0.0 };
        let (g, _) = m.backward(&refs, &groups, &ys, &spec).unwrap();
        let expect = (0.5 - 1.0 + 0.5 - 0.0 + 0.5 - 1.0) / 3.0;
        let out_bias = g.biases.last().unwrap()[0];
        assert!((out_bias - expect).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_matches_pure_bce_gradient() {
        let m = MlpModel::init(arch(3, &[4]), true, 11);
        let xs: Vec<Vec<f64>> = vec![vec![0.3, -0.2, 0.7], vec![1.1, 0.0, -0.4]];
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let groups = [0u8, 1];
        let ys = [1u8, 0];
        let (g0, l0) = m
            .backward(&refs, &groups, &ys, &ScalarizedLoss { lambda: 0.0 })
            .unwrap();
        // lambda=0 loss must be the plain mean BCE.
        let mut bce = 0.0;
        for ((x, &a), &y) in refs.iter().zip(&groups).zip(&ys) {
            let f = m.forward(x, a).unwrap();
            bce += -(f64::from(y) * f.ln() + (1.0 - f64::from(y)) * (1.0 - f).ln());
        }
        assert!((l0 - bce / 2.0).abs() < 1e-12);
        // And the lambda-weighted gradient decomposes linearly.
        let (g1, _) = m
            .backward(&refs, &groups, &ys, &ScalarizedLoss { lambda: 2.5 })
            .unwrap();
        let (gh, _) = m
            .backward(&refs, &groups, &ys, &ScalarizedLoss { lambda: 5.0 })
            .unwrap();
        for l in 0..g0.weights.len() {
            for i in 0..g0.weights[l].len() {
                let d1 = g1.weights[l][i] - g0.weights[l][i];
                let dh = gh.weights[l][i] - g0.weights[l][i];
                assert!((dh - 2.0 * d1).abs() < 1e-10);
            }
        }
    }

    /// Central finite-difference oracle for the full parameter vector.
    pub(crate) fn finite_diff_grads(
        model: &MlpModel,
        xs: &[&[f64]],
        groups: &[u8],
        ys: &[u8],
        spec: &ScalarizedLoss,
        h: f64,
    ) -> Gradients {
        let mut g = Gradients::zeros_like(model);
        let mut m = model.clone();
        for layer in 0..model.weights.len() {
            for i in 0..model.weights[layer].len() {
                let orig = m.weights[layer][i];
                m.weights[layer][i] = orig + h;
                let lp = m.batch_loss(xs, groups, ys, spec).unwrap();
                m.weights[layer][i] = orig - h;
                let lm = m.batch_loss(xs, groups, ys, spec).unwrap();
                m.weights[layer][i] = orig;
                g.weights[layer][i] = (lp - lm) / (2.0 * h);
            }
            for i in 0..model.biases[layer].len() {
                let orig = m.biases[layer][i];
                m.biases[layer][i] = orig + h;
                let lp = m.batch_loss(xs, groups, ys, spec).unwrap();
                m.biases[layer][i] = orig - h;
                let lm = m.batch_loss(xs, groups, ys, spec).unwrap();
                m.biases[layer][i] = orig;
                g.biases[layer][i] = (lp - lm) / (2.0 * h);
            }
        }
        g
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..5 {
            let m = MlpModel::init(arch(3, &[5, 4]), true, 100 + trial);
            let n = 8;
            let xs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect())
                .collect();
            let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
            let groups: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            let ys: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            let spec = ScalarizedLoss {
                lambda: rng.gen_range(-1.0..2.0),
            };
            let (g, _) = m.backward(&refs, &groups, &ys, &spec).unwrap();
            let fd = finite_diff_grads(&m, &refs, &groups, &ys, &spec, 1e-5);
            for l in 0..g.weights.len() {
                for i in 0..g.weights[l].len() {
                    let a = g.weights[l][i];
                    let b = fd.weights[l][i];
                    let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
                    assert!(rel < 1e-4, "layer {l} w[{i}]: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut m = MlpModel::init(arch(2, &[3]), false, 5);
        let before = m.clone();
        let g = Gradients::zeros_like(&m);
        let mut st = AdamState::new(&m, 0.001);
        adam_step(&mut m, &g, &mut st);
        assert_eq!(st.step_count, 1);
        for l in 0..m.weights.len() {
            assert_eq!(m.weights[l], before.weights[l]);
            assert_eq!(m.biases[l], before.biases[l]);
        }
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut m = MlpModel::zeros(arch(1, &[1]), false);
        let mut g = Gradients::zeros_like(&m);
        g.weights[0][0] = 0.3;
        g.weights[1][0] = -2.0;
        let lr = 0.001;
        let mut st = AdamState::new(&m, lr);
        adam_step(&mut m, &g, &mut st);
        // Bias-corrected first step: delta = -lr * g / (|g| + eps') ~ -lr*sign(g).
        assert!((m.weights[0][0] + lr).abs() < 1e-6);
        assert!((m.weights[1][0] - lr).abs() < 1e-6);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut m = MlpModel::init(arch(2, &[3]), false, 5);
            let mut g = Gradients::zeros_like(&m);
            g.weights[0][0] = 0.5;
            g.biases[1][0] = -0.25;
            let mut st = AdamState::new(&m, 0.01);
            adam_step(&mut m, &g, &mut st);
            adam_step(&mut m, &g, &mut st);
            m
        };
        let a = run();
        let b = run();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.biases, b.biases);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = MlpModel::init(arch(4, &[6, 3]), true, 77);
        m.save(&path).unwrap();
        let loaded = MlpModel::load(&path).unwrap();
        assert_eq!(m.weights, loaded.weights);
        assert_eq!(m.biases, loaded.biases);
        assert_eq!(m.group_input, loaded.group_input);
        assert_eq!(m.init_seed, loaded.init_seed);
    }
}
