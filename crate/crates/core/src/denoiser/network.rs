//! A small fully connected noise predictor with hand-written backpropagation.
//!
//! Input is `[x_t, sinusoidal(t), embedding(c)]`, followed by two tanh hidden
//! layers and a linear head. Parameters live in one flat vector in
//! declaration order: class embedding, w1, b1, w2, b2, w3, b3. Weight matrices
//! are row-major `out × in`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gradcheck::Differentiable;
use super::train::TrainBatch;
use super::{Backend, Denoiser};
use crate::error::{Error, Result};
use crate::rng::{self, domain, StreamFactory};

pub const CHECKPOINT_FORMAT: &str = "driftlab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: usize,
    pub time_dim: usize,
    pub class_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            time_dim: 16,
            class_dim: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    emb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    total: usize,
}

const PARAM_NAMES: [&str; 7] = ["class_embedding", "w1", "b1", "w2", "b2", "w3", "b3"];

impl Layout {
    fn new(dim: usize, classes: usize, cfg: &NetConfig) -> Self {
        let input = dim + cfg.time_dim + cfg.class_dim;
        let h = cfg.hidden;
        let sizes = [
            classes * cfg.class_dim,
            h * input,
            h,
            h * h,
            h,
            dim * h,
            dim,
        ];
        let mut off = [0usize; 8];
        for i in 0..7 {
            off[i + 1] = off[i] + sizes[i];
        }
        Self {
            emb: off[0],
            w1: off[1],
            b1: off[2],
            w2: off[3],
            b2: off[4],
            w3: off[5],
            b3: off[6],
            total: off[7],
        }
    }

    fn ranges(&self) -> [(usize, usize); 7] {
        [
            (self.emb, self.w1),
            (self.w1, self.b1),
            (self.b1, self.w2),
            (self.w2, self.b2),
            (self.b2, self.w3),
            (self.w3, self.b3),
            (self.b3, self.total),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpDenoiser {
    dim: usize,
    classes: usize,
    steps: usize,
    cfg: NetConfig,
    layout: Layout,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backprop.
struct Forward {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

fn matvec(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
        let mut acc = *bias;
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

impl MlpDenoiser {
    /// Fresh network with Xavier-uniform weights, zero biases and a small
    /// normal class embedding, drawn from the `(seed, "init", 0)` stream.
    pub fn new(
        dim: usize,
        classes: usize,
        steps: usize,
        cfg: NetConfig,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || classes == 0 || steps == 0 || cfg.hidden == 0 || cfg.time_dim % 2 != 0 {
            return Err(Error::InvalidRange(format!(
                "network needs dim, classes, steps, hidden >= 1 and even time_dim (got dim={dim}, classes={classes}, steps={steps}, {cfg:?})"
            )));
        }
        let layout = Layout::new(dim, classes, &cfg);
        let mut params = vec![0.0; layout.total];
        let mut rng = StreamFactory::new(seed).stream(domain::INIT, 0);
        for v in &mut params[layout.emb..layout.w1] {
            *v = 0.1 * rng::normal(&mut rng);
        }
        let input = dim + cfg.time_dim + cfg.class_dim;
        let mut xavier = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut params[range] {
                *v = rng.random_range(-a..a);
            }
        };
        xavier(layout.w1..layout.b1, input, cfg.hidden);
        xavier(layout.w2..layout.b2, cfg.hidden, cfg.hidden);
        xavier(layout.w3..layout.b3, cfg.hidden, dim);
        Ok(Self {
            dim,
            classes,
            steps,
            cfg,
            layout,
            params,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn net_config(&self) -> NetConfig {
        self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn input_dim(&self) -> usize {
        self.dim + self.cfg.time_dim + self.cfg.class_dim
    }

    fn time_embedding(&self, t: usize, out: &mut [f64]) {
        let half = self.cfg.time_dim / 2;
        let scaled = t as f64 * 1000.0 / self.steps as f64;
        for k in 0..half {
            let freq = (-(10_000f64).ln() * k as f64 / half as f64).exp();
            out[k] = (scaled * freq).sin();
            out[half + k] = (scaled * freq).cos();
        }
    }

    fn check_inputs(&self, x: &[f64], t: usize, class: usize) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if t == 0 || t > self.steps {
            return Err(Error::IndexOutOfRange {
                index: t,
                max: self.steps,
            });
        }
        if class >= self.classes {
            return Err(Error::LabelOutOfRange {
                label: class,
                classes: self.classes,
            });
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], t: usize, class: usize) -> Forward {
        let l = &self.layout;
        let p = &self.params;
        let h = self.cfg.hidden;
        let mut input = vec![0.0; self.input_dim()];
        input[..self.dim].copy_from_slice(x);
        self.time_embedding(t, &mut input[self.dim..self.dim + self.cfg.time_dim]);
        let cd = self.cfg.class_dim;
        input[self.dim + self.cfg.time_dim..]
            .copy_from_slice(&p[l.emb + class * cd..l.emb + (class + 1) * cd]);
        let mut h1 = vec![0.0; h];
        matvec(&p[l.w1..l.b1], &p[l.b1..l.w2], &input, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = vec![0.0; h];
        matvec(&p[l.w2..l.b2], &p[l.b2..l.w3], &h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = vec![0.0; self.dim];
        matvec(&p[l.w3..l.b3], &p[l.b3..l.total], &h2, &mut out);
        Forward { input, h1, h2, out }
    }

    /// Accumulates ∂/∂θ of `Σ_d g_out[d]·out[d]` into `grad`.
    fn backward(&self, f: &Forward, class: usize, g_out: &[f64], grad: &mut [f64]) {
        let l = &self.layout;
        let p = &self.params;
        let h = self.cfg.hidden;
        let n_in = self.input_dim();

        let mut g_h2 = vec![0.0; h];
        for (o, &go) in g_out.iter().enumerate() {
            grad[l.b3 + o] += go;
            let row = l.w3 + o * h;
            for j in 0..h {
                grad[row + j] += go * f.h2[j];
                g_h2[j] += go * p[row + j];
            }
        }
        let g_a2: Vec<f64> = g_h2
            .iter()
            .zip(&f.h2)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let mut g_h1 = vec![0.0; h];
        for (i, &ga) in g_a2.iter().enumerate() {
            grad[l.b2 + i] += ga;
            let row = l.w2 + i * h;
            for j in 0..h {
                grad[row + j] += ga * f.h1[j];
                g_h1[j] += ga * p[row + j];
            }
        }
        let g_a1: Vec<f64> = g_h1
            .iter()
            .zip(&f.h1)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let emb_start = self.dim + self.cfg.time_dim;
        let cd = self.cfg.class_dim;
        let eg = l.emb + class * cd;
        for (i, &ga) in g_a1.iter().enumerate() {
            grad[l.b1 + i] += ga;
            let row = l.w1 + i * n_in;
            for j in 0..n_in {
                grad[row + j] += ga * f.input[j];
            }
            for k in 0..cd {
                grad[eg + k] += ga * p[row + emb_start + k];
            }
        }
    }

    /// Serializes to the versioned JSON checkpoint format.
    pub fn to_checkpoint(&self, schedule_id: &str, manifest: serde_json::Value) -> Checkpoint {
        let params = self
            .layout
            .ranges()
            .iter()
            .zip(PARAM_NAMES)
            .map(|(&(a, b), name)| NamedParams {
                name: name.to_string(),
                values: self.params[a..b].to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dim: self.dim,
            classes: self.classes,
            steps: self.steps,
            net: self.cfg,
            schedule_id: schedule_id.to_string(),
            params,
            manifest,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if ck.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", ck.version)));
        }
        // guard against absurd sizes before allocating a layout
        let mut net = MlpDenoiser::new(ck.dim, ck.classes, ck.steps, ck.net, 0)
            .map_err(|e| bad(e.to_string()))?;
        if ck.params.len() != PARAM_NAMES.len() {
            return Err(bad(format!(
                "expected {} parameter arrays, got {}",
                PARAM_NAMES.len(),
                ck.params.len()
            )));
        }
        for ((np, name), (a, b)) in ck.params.iter().zip(PARAM_NAMES).zip(net.layout.ranges()) {
            if np.name != name {
                return Err(bad(format!(
                    "expected parameter `{name}`, got `{}`",
                    np.name
                )));
            }
            if np.values.len() != b - a {
                return Err(bad(format!(
                    "`{name}` has {} values, expected {}",
                    np.values.len(),
                    b - a
                )));
            }
            if np.values.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("`{name}` contains non-finite values")));
            }
            net.params[a..b].copy_from_slice(&np.values);
        }
        Ok(net)
    }

    /// Loads a checkpoint and checks it against the expected data dimension
    /// and class count.
    pub fn load(json: &str, dim: usize, classes: usize) -> Result<(Self, Checkpoint)> {
        let ck = Checkpoint::parse(json)?;
        if ck.dim != dim || ck.classes != classes {
            return Err(Error::Checkpoint(format!(
                "dimension mismatch: checkpoint has dim={} classes={}, expected dim={dim} classes={classes}",
                ck.dim, ck.classes
            )));
        }
        Ok((Self::from_checkpoint(&ck)?, ck))
    }
}

const MAX_CHECKPOINT_PARAMS: usize = 50_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedParams {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub classes: usize,
    pub steps: usize,
    pub net: NetConfig,
    pub schedule_id: String,
    pub params: Vec<NamedParams>,
    #[serde(default)]
    pub manifest: serde_json::Value,
}

impl Checkpoint {
    pub fn parse(json: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let input = ck
            .dim
            .checked_add(ck.net.time_dim)
            .and_then(|v| v.checked_add(ck.net.class_dim));
        let approx = input
            .and_then(|i| {
                ck.net
                    .hidden
                    .checked_mul(i.checked_add(ck.net.hidden)?.checked_add(ck.dim)?)
            })
            .and_then(|v| v.checked_add(ck.classes.checked_mul(ck.net.class_dim)?));
        match approx {
            Some(n) if n <= MAX_CHECKPOINT_PARAMS => Ok(ck),
            _ => Err(Error::Checkpoint("network shape too large".into())),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }
}

impl Denoiser for MlpDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn backend(&self) -> Backend {
        Backend::Network
    }

    fn predict_eps_into(&self, x_t: &[f64], t: usize, class: usize, out: &mut [f64]) -> Result<()> {
        self.check_inputs(x_t, t, class)?;
        out.copy_from_slice(&self.forward(x_t, t, class).out);
        Ok(())
    }
}

impl Differentiable for MlpDenoiser {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weighted denoising loss `(1/B) Σ_i w_i ‖ε̂(x_i, t_i, c_i) − target_i‖²`
    /// and its gradient.
    fn loss_and_grad(&self, batch: &TrainBatch) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let inv_b = 1.0 / batch.len() as f64;
        let mut g_out = vec![0.0; self.dim];
        for i in 0..batch.len() {
            let f = self.forward(batch.x_t(i), batch.t[i], batch.class[i]);
            let w = batch.weight[i];
            for (d, (o, y)) in f.out.iter().zip(batch.target(i)).enumerate() {
                let r = o - y;
                loss += w * r * r * inv_b;
                g_out[d] = 2.0 * w * r * inv_b;
            }
            self.backward(&f, batch.class[i], &g_out, &mut grad);
        }
        (loss, grad)
    }

    fn loss(&self, batch: &TrainBatch) -> f64 {
        let inv_b = 1.0 / batch.len() as f64;
        (0..batch.len())
            .map(|i| {
                let f = self.forward(batch.x_t(i), batch.t[i], batch.class[i]);
                let sq: f64 = f
                    .out
                    .iter()
                    .zip(batch.target(i))
                    .map(|(o, y)| (o - y) * (o - y))
                    .sum();
                batch.weight[i] * sq * inv_b
            })
            .sum()
    }
}
