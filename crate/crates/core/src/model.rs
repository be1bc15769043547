//! Embedding network: a ReLU MLP feature extractor `g`, a linear projection
//! `P` with `rows` outputs, and the scaling layer that maps the projection
//! onto the sphere of radius `sqrt(rows)`.
//!
//! Parameters are stored as flat tensors in declaration order:
//! `[W_1, b_1, ..., W_L, b_L, P]`, weights row-major (`out x in`).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden widths; the last one is the embedding width `n_d`.
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        Architecture { input_dim, hidden }
    }

    pub fn embedding_dim(&self) -> usize {
        *self.hidden.last().unwrap_or(&0)
    }

    fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::BadArchitecture(
                "at least one hidden layer is required".into(),
            ));
        }
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::BadArchitecture(format!(
                "zero-width layer in {} -> {:?}",
                self.input_dim, self.hidden
            )));
        }
        Ok(())
    }

    fn layer_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .zip(self.hidden.iter().copied())
    }

    fn tensor_shapes(&self, rows: usize) -> Vec<usize> {
        let mut shapes: Vec<usize> = self
            .layer_dims()
            .flat_map(|(n_in, n_out)| [n_in * n_out, n_out])
            .collect();
        shapes.push(rows * self.embedding_dim());
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    rows: usize,
    tensors: Vec<Vec<f64>>,
}

/// Gradients with the same tensor layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub tensors: Vec<Vec<f64>>,
}

impl ParamGradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ParamGradients {
            tensors: params.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &ParamGradients, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().flatten().for_each(|x| *x *= factor);
    }

    pub fn projection_mut(&mut self) -> &mut [f64] {
        self.tensors.last_mut().unwrap()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&x| x == 0.0)
    }
}

impl ModelParams {
    /// Weights ~ N(0, 1/fan_in), zero biases; projection rows use fan_in = n_d.
    pub fn init(arch: &Architecture, rows: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        if rows == 0 {
            return Err(Error::BadArchitecture(
                "projection needs at least one row".into(),
            ));
        }
        let mut rng = seeded_rng(seed);
        let mut tensors = Vec::new();
        let mut gaussian = |n: usize, fan_in: usize| -> Vec<f64> {
            let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).unwrap();
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        for (n_in, n_out) in arch.layer_dims() {
            tensors.push(gaussian(n_in * n_out, n_in));
            tensors.push(vec![0.0; n_out]);
        }
        tensors.push(gaussian(rows * arch.embedding_dim(), arch.embedding_dim()));
        Ok(ModelParams {
            arch: arch.clone(),
            rows,
            tensors,
        })
    }

    pub fn from_tensors(arch: Architecture, rows: usize, tensors: Vec<Vec<f64>>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.tensor_shapes(rows);
        if shapes.len() != tensors.len() || shapes.iter().zip(&tensors).any(|(&n, t)| n != t.len())
        {
            return Err(Error::ShapeMismatch);
        }
        Ok(ModelParams {
            arch,
            rows,
            tensors,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    /// Number of projection rows: the code length, or the user count for the
    /// class-embedding baselines.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.arch.hidden.len()
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.tensors[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.tensors[2 * layer + 1]
    }

    pub fn projection(&self) -> &[f64] {
        self.tensors.last().unwrap()
    }

    pub fn projection_mut(&mut self) -> &mut [f64] {
        self.tensors.last_mut().unwrap()
    }

    /// Row `i` of the projection (a class embedding for the baselines).
    pub fn projection_row(&self, i: usize) -> &[f64] {
        let n_d = self.embedding_dim();
        &self.projection()[i * n_d..(i + 1) * n_d]
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.arch == other.arch && self.rows == other.rows
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|x| x.is_finite())
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    /// First 16 hex digits of SHA-256 over the little-endian tensor bytes.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for x in self.tensors.iter().flatten() {
            hasher.update(x.to_le_bytes());
        }
        hasher.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn init_params(arch: &Architecture, rows: usize, seed: u64) -> Result<ModelParams> {
    ModelParams::init(arch, rows, seed)
}

fn matvec(w: &[f64], x: &[f64], n_out: usize) -> Vec<f64> {
    let n_in = x.len();
    (0..n_out)
        .map(|o| {
            w[o * n_in..(o + 1) * n_in]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projection of `v` onto the sphere of radius `sqrt(v.len())`; zero maps to
/// zero.
pub fn scale_to_sphere(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        return vec![0.0; v.len()];
    }
    let s = (v.len() as f64).sqrt() / n;
    v.iter().map(|x| x * s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// Post-ReLU output of every hidden layer; the last one is the embedding.
    pub activations: Vec<Vec<f64>>,
    pub projected: Vec<f64>,
    pub projected_norm: f64,
    /// Projection scaled to norm `sqrt(rows)`, or zeros if the projection
    /// vanished.
    pub scaled: Vec<f64>,
}

impl ForwardTrace {
    pub fn embedding(&self) -> &[f64] {
        self.activations.last().unwrap()
    }

    pub fn is_degenerate(&self) -> bool {
        self.projected_norm == 0.0
    }
}

/// Forward pass that tolerates a zero projection (the scaled output is then
/// zero). Used by training and scoring.
pub fn forward_lenient(params: &ModelParams, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != params.arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.arch.input_dim,
            actual: x.len(),
        });
    }
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(params.num_layers());
    for (layer, (_, n_out)) in params.arch.layer_dims().enumerate() {
        let prev = activations.last().map_or(x, |a| a.as_slice());
        let mut h = matvec(params.weights(layer), prev, n_out);
        for (v, b) in h.iter_mut().zip(params.bias(layer)) {
            *v = (*v + b).max(0.0);
        }
        activations.push(h);
    }
    let projected = matvec(
        params.projection(),
        activations.last().unwrap(),
        params.rows,
    );
    let projected_norm = norm(&projected);
    let scaled = scale_to_sphere(&projected);
    Ok(ForwardTrace {
        input: x.to_vec(),
        activations,
        projected,
        projected_norm,
        scaled,
    })
}

pub fn forward(params: &ModelParams, x: &[f64]) -> Result<ForwardTrace> {
    let trace = forward_lenient(params, x)?;
    if trace.is_degenerate() {
        return Err(Error::ZeroNormProjection);
    }
    Ok(trace)
}

fn check_trace(params: &ModelParams, trace: &ForwardTrace) -> Result<()> {
    let widths_match = trace.activations.len() == params.num_layers()
        && trace
            .activations
            .iter()
            .zip(&params.arch.hidden)
            .all(|(a, &w)| a.len() == w);
    if !widths_match
        || trace.input.len() != params.arch.input_dim
        || trace.projected.len() != params.rows
    {
        return Err(Error::StaleTrace(format!(
            "trace widths do not match {:?} with {} rows",
            params.arch, params.rows
        )));
    }
    Ok(())
}

/// Vector-Jacobian product of the scaling layer:
/// `sqrt(c) / |p| * (I - p_hat p_hat^T) * upstream`. Zero at the origin.
pub fn sphere_vjp(projected: &[f64], upstream: &[f64]) -> Vec<f64> {
    let n = norm(projected);
    if n == 0.0 {
        return vec![0.0; projected.len()];
    }
    let radial: f64 = projected
        .iter()
        .zip(upstream)
        .map(|(p, u)| p * u)
        .sum::<f64>()
        / n;
    let s = (projected.len() as f64).sqrt() / n;
    projected
        .iter()
        .zip(upstream)
        .map(|(p, u)| s * (u - radial * p / n))
        .collect()
}

/// ParamGradients given the loss gradient at the scaled output.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    d_scaled: &[f64],
) -> Result<ParamGradients> {
    check_trace(params, trace)?;
    if d_scaled.len() != params.rows {
        return Err(Error::DimensionMismatch {
            expected: params.rows,
            actual: d_scaled.len(),
        });
    }
    let d_projected = sphere_vjp(&trace.projected, d_scaled);
    backward_projected(params, trace, &d_projected)
}

/// ParamGradients given the loss gradient at the raw projection (logits).
pub fn backward_projected(
    params: &ModelParams,
    trace: &ForwardTrace,
    d_projected: &[f64],
) -> Result<ParamGradients> {
    check_trace(params, trace)?;
    if d_projected.len() != params.rows {
        return Err(Error::DimensionMismatch {
            expected: params.rows,
            actual: d_projected.len(),
        });
    }
    let n_d = params.embedding_dim();
    let embedding = trace.embedding();
    let mut grads = ParamGradients::zeros_like(params);
    let mut d_embedding = vec![0.0; n_d];
    let proj = params.projection();
    let d_proj = grads.projection_mut();
    for (r, &dp) in d_projected.iter().enumerate() {
        if dp == 0.0 {
            continue;
        }
        for j in 0..n_d {
            d_proj[r * n_d + j] = dp * embedding[j];
            d_embedding[j] += dp * proj[r * n_d + j];
        }
    }
    backprop_hidden(params, trace, d_embedding, &mut grads);
    Ok(grads)
}

/// ParamGradients given the loss gradient at the embedding `g(x)`; the projection
/// gradient is zero.
pub fn backward_embedding(
    params: &ModelParams,
    trace: &ForwardTrace,
    d_embedding: &[f64],
) -> Result<ParamGradients> {
    check_trace(params, trace)?;
    if d_embedding.len() != params.embedding_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.embedding_dim(),
            actual: d_embedding.len(),
        });
    }
    let mut grads = ParamGradients::zeros_like(params);
    backprop_hidden(params, trace, d_embedding.to_vec(), &mut grads);
    Ok(grads)
}

fn backprop_hidden(
    params: &ModelParams,
    trace: &ForwardTrace,
    mut upstream: Vec<f64>,
    grads: &mut ParamGradients,
) {
    for layer in (0..params.num_layers()).rev() {
        let out = &trace.activations[layer];
        let input = if layer == 0 {
            &trace.input
        } else {
            &trace.activations[layer - 1]
        };
        let n_in = input.len();
        // ReLU: pass gradient where the output is positive.
        let delta: Vec<f64> = upstream
            .iter()
            .zip(out)
            .map(|(&u, &a)| if a > 0.0 { u } else { 0.0 })
            .collect();
        let w = params.weights(layer);
        let mut next = vec![0.0; n_in];
        {
            let gw = &mut grads.tensors[2 * layer];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for i in 0..n_in {
                    gw[o * n_in + i] = d * input[i];
                    next[i] += d * w[o * n_in + i];
                }
            }
        }
        grads.tensors[2 * layer + 1].copy_from_slice(&delta);
        upstream = next;
    }
}

/// `params - lr * grads`, elementwise.
pub fn sgd_step(params: &ModelParams, grads: &ParamGradients, lr: f64) -> ModelParams {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, grads, lr);
    out
}

pub fn sgd_step_in_place(params: &mut ModelParams, grads: &ParamGradients, lr: f64) {
    for (p, g) in params.tensors.iter_mut().zip(&grads.tensors) {
        for (x, d) in p.iter_mut().zip(g) {
            *x -= lr * d;
        }
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FEDUVMDL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint layout (little-endian): magic, version u32, input_dim u32,
/// hidden layer count u32, each hidden width u32, rows u32, n_d u32, then
/// every tensor as f64 in declaration order.
pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * params.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let mut put = |v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put(CHECKPOINT_VERSION as usize);
    put(params.arch.input_dim);
    put(params.arch.hidden.len());
    for &h in &params.arch.hidden {
        put(h);
    }
    put(params.rows);
    put(params.embedding_dim());
    for x in params.tensors.iter().flatten() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let corrupt = |detail: &str| Error::CorruptFile {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut pos = 8;
    let mut get = || -> Result<usize> {
        let chunk = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| corrupt("truncated header"))?;
        pos += 4;
        Ok(u32::from_le_bytes(chunk.try_into().unwrap()) as usize)
    };
    let version = get()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let input_dim = get()?;
    let layers = get()?;
    if layers > 1024 {
        return Err(corrupt("implausible layer count"));
    }
    let hidden = (0..layers).map(|_| get()).collect::<Result<Vec<_>>>()?;
    let rows = get()?;
    let n_d = get()?;
    let arch = Architecture::new(input_dim, hidden);
    if arch.embedding_dim() != n_d {
        return Err(corrupt("embedding width disagrees with architecture"));
    }
    arch.validate()
        .map_err(|_| corrupt("invalid architecture"))?;
    let shapes = arch.tensor_shapes(rows);
    let expected = pos + 8 * shapes.iter().sum::<usize>();
    if bytes.len() != expected {
        return Err(corrupt("payload length does not match header"));
    }
    let mut floats = bytes[pos..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let tensors = shapes
        .iter()
        .map(|&n| floats.by_ref().take(n).collect())
        .collect();
    ModelParams::from_tensors(arch, rows, tensors)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode_checkpoint(&fs::read(path)?, path)
}
