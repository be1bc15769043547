//! FedAvg orchestration with single-class clients.
//!
//! Each round the server samples `kappa = max(floor(eps * K), 1)` clients,
//! each runs `E` local epochs of minibatch SGD from the broadcast
//! parameters, and the server takes the example-weighted mean. The FedAwS
//! baseline additionally keeps each user's class embedding from its owner
//! and takes one spreadout step on the embedding table per round.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codeword::SecretAssignment;
use crate::error::{Error, Result};
use crate::losses::{cosine_pos_loss, feduv_loss, softmax_ce, spreadout_reg};
use crate::model::{
    backward, backward_embedding, backward_projected, forward_lenient, sgd_step_in_place,
    ModelParams, ParamGradients,
};
use crate::rng::stream_rng;

const SAMPLE_STREAM: u64 = 0x5a4d_504c;
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Positive loss only against the user's secret codeword.
    Feduv,
    /// Positive plus weighted negative loss; clients see every codeword
    /// (simulation-only ablation).
    FeduvWithNeg,
    /// Softmax cross-entropy over per-user logits.
    Softmax,
    /// Cosine positive loss plus a server-side spreadout step.
    Fedaws,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Feduv => "feduv",
            Method::FeduvWithNeg => "feduv_with_neg",
            Method::Softmax => "softmax",
            Method::Fedaws => "fedaws",
        }
    }

    pub fn uses_codewords(&self) -> bool {
        matches!(self, Method::Feduv | Method::FeduvWithNeg)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feduv" => Ok(Method::Feduv),
            "feduv_with_neg" => Ok(Method::FeduvWithNeg),
            "softmax" => Ok(Method::Softmax),
            "fedaws" => Ok(Method::Fedaws),
            other => Err(Error::ConfigInvalid(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    /// Fraction of users sampled per round (epsilon).
    pub participation: f64,
    pub local_epochs: usize,
    /// Local minibatch size; `None` means the whole local dataset.
    pub batch_size: Option<usize>,
    pub lr0: f64,
    /// Inverse-time decay: `lr_t = lr0 / (1 + lr_decay * t)`.
    pub lr_decay: f64,
    pub rounds: usize,
    pub method: Method,
    pub seed: u64,
    /// Weight of the negative loss for `feduv_with_neg`.
    pub neg_weight: f64,
    /// Reshuffle local data every epoch.
    pub shuffle: bool,
    /// FedAwS server learning rate as a multiple of the round's client rate.
    pub server_lr_scale: f64,
    /// FedAwS spreadout margin; defaults to `sqrt(2 * n_d)`.
    pub spreadout_margin: Option<f64>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            participation: 0.1,
            local_epochs: 1,
            batch_size: None,
            lr0: 0.1,
            lr_decay: 0.01,
            rounds: 2000,
            method: Method::Feduv,
            seed: 42,
            neg_weight: 1.0,
            shuffle: true,
            server_lr_scale: 0.1,
            spreadout_margin: None,
        }
    }
}

impl FederationConfig {
    pub fn kappa(&self, users: usize) -> usize {
        ((self.participation * users as f64).floor() as usize).max(1)
    }

    pub fn lr_at(&self, round: usize) -> f64 {
        self.lr0 / (1.0 + self.lr_decay * round as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::ConfigInvalid(msg.to_string()));
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return bad("participation must be in (0, 1]");
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay >= 0.0) {
            return bad("lr0 must be positive and lr_decay non-negative");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1");
        }
        if !(self.neg_weight >= 0.0) || !(self.server_lr_scale >= 0.0) {
            return bad("neg_weight and server_lr_scale must be non-negative");
        }
        if self.spreadout_margin.is_some_and(|m| !(m > 0.0)) {
            return bad("spreadout_margin must be positive");
        }
        Ok(())
    }
}

/// What a client trains against.
#[derive(Debug, Clone)]
pub enum ClientTarget {
    Secret {
        secret: SecretAssignment,
        /// Every other user's bipolar codeword; only for the negative-loss
        /// ablation.
        others: Option<Arc<Vec<Vec<f64>>>>,
    },
    /// Row of the projection acting as this user's class embedding / logit.
    Class(usize),
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub user_index: usize,
    pub data: Vec<Vec<f64>>,
    pub target: ClientTarget,
}

impl ClientState {
    pub fn num_examples(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub method: Method,
    pub neg_weight: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub user_index: usize,
    pub params: ModelParams,
    pub num_examples: usize,
    /// Mean per-example loss over every local batch (0 with no batches).
    pub mean_loss: f64,
}

/// RNG for a client's local data order in a given round.
pub fn local_order_rng(seed: u64, user_index: usize, round: usize) -> rand_chacha::ChaCha8Rng {
    stream_rng(seed, &[SHUFFLE_STREAM, user_index as u64, round as u64])
}

/// Loss and gradients of one example under the method's objective.
pub fn example_gradients(
    params: &ModelParams,
    target: &ClientTarget,
    method: Method,
    neg_weight: f64,
    x: &[f64],
) -> Result<(f64, ParamGradients)> {
    let trace = forward_lenient(params, x)?;
    match (method, target) {
        (Method::Feduv | Method::FeduvWithNeg, ClientTarget::Secret { secret, others }) => {
            let no_others: &[Vec<f64>] = &[];
            let (others, lambda) = match method {
                Method::FeduvWithNeg => (
                    others.as_deref().map_or(no_others, |o| o.as_slice()),
                    neg_weight,
                ),
                _ => (no_others, 0.0),
            };
            let loss = feduv_loss(&trace.scaled, secret.bipolar(), others, lambda)?;
            Ok((loss.value, backward(params, &trace, &loss.grad)?))
        }
        (Method::Softmax, ClientTarget::Class(y)) => {
            let loss = softmax_ce(&trace.projected, *y)?;
            Ok((loss.value, backward_projected(params, &trace, &loss.grad)?))
        }
        (Method::Fedaws, ClientTarget::Class(y)) => {
            if *y >= params.rows() {
                return Err(Error::IndexOutOfRange {
                    index: *y,
                    len: params.rows(),
                });
            }
            let loss = cosine_pos_loss(trace.embedding(), params.projection_row(*y))?;
            let mut grads = backward_embedding(params, &trace, &loss.grad_embedding)?;
            let n_d = params.embedding_dim();
            grads.projection_mut()[y * n_d..(y + 1) * n_d].copy_from_slice(&loss.grad_class);
            Ok((loss.value, grads))
        }
        (method, _) => Err(Error::InvalidArgument(format!(
            "client target does not match method {method}"
        ))),
    }
}

/// Local training: `epochs` passes over the client's data in minibatches
/// (the last one may be short), one SGD step on the mean batch gradient per
/// batch. `order_rng` reshuffles the data each epoch when given.
pub fn client_update(
    params: &ModelParams,
    client: &ClientState,
    local: &LocalTraining,
    mut order_rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<ClientUpdate> {
    let n = client.num_examples();
    if n == 0 {
        return Err(Error::EmptyDataset(client.user_index));
    }
    if !(local.lr > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {}",
            local.lr
        )));
    }
    let batch = local.batch_size.unwrap_or(n).clamp(1, n);
    let mut params = params.clone();
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..local.epochs {
        if let Some(rng) = order_rng.as_deref_mut() {
            order.sort_unstable();
            order.shuffle(rng);
        }
        for chunk in order.chunks(batch) {
            let mut grads = ParamGradients::zeros_like(&params);
            for &i in chunk {
                let (loss, g) = example_gradients(
                    &params,
                    &client.target,
                    local.method,
                    local.neg_weight,
                    &client.data[i],
                )?;
                grads.add_scaled(&g, 1.0);
                loss_sum += loss;
                loss_count += 1;
            }
            grads.scale(1.0 / chunk.len() as f64);
            sgd_step_in_place(&mut params, &grads, local.lr);
        }
    }
    Ok(ClientUpdate {
        user_index: client.user_index,
        params,
        num_examples: n,
        mean_loss: if loss_count == 0 {
            0.0
        } else {
            loss_sum / loss_count as f64
        },
    })
}

/// Uniform `kappa`-subset of `0..users` without replacement, sorted,
/// determined by `(seed, round)`.
pub fn sample_clients(round: usize, users: usize, kappa: usize, seed: u64) -> Result<Vec<usize>> {
    if kappa == 0 || kappa > users {
        return Err(Error::BadKappa { kappa, users });
    }
    let mut rng = stream_rng(seed, &[SAMPLE_STREAM, round as u64]);
    let mut picked = index::sample(&mut rng, users, kappa).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Example-count-weighted elementwise mean. Summation follows the given
/// order.
pub fn aggregate(updates: &[(&ModelParams, usize)]) -> Result<ModelParams> {
    let (first, _) = updates.first().ok_or(Error::EmptyUpdateSet)?;
    if updates.iter().any(|(p, _)| !p.same_shape(first)) {
        return Err(Error::ShapeMismatch);
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("total example count is zero".into()));
    }
    // Seeding with the first weighted term keeps a lone update bit-exact
    // (signed zeros included).
    let mut out = (*first).clone();
    let w0 = updates[0].1 as f64 / total as f64;
    out.tensors_mut()
        .iter_mut()
        .flatten()
        .for_each(|x| *x *= w0);
    for (params, n) in &updates[1..] {
        let w = *n as f64 / total as f64;
        for (acc, t) in out.tensors_mut().iter_mut().zip(params.tensors()) {
            for (a, x) in acc.iter_mut().zip(t) {
                *a += w * x;
            }
        }
    }
    Ok(out)
}

/// One gradient step of the spreadout regularizer on the projection rows.
/// Returns the regularizer value before the step.
pub fn spreadout_step(params: &mut ModelParams, margin: f64, lr: f64) -> Result<f64> {
    let n_d = params.embedding_dim();
    let reg = spreadout_reg(params.projection(), n_d, margin)?;
    for (w, g) in params.projection_mut().iter_mut().zip(&reg.grad) {
        *w -= lr * g;
    }
    Ok(reg.value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub lr: f64,
    pub sampled_users: Vec<usize>,
    pub mean_loss: f64,
    pub checksum: String,
}

#[derive(Debug, Clone)]
pub struct FederationRun {
    pub params: ModelParams,
    pub reports: Vec<RoundReport>,
}

pub fn run_federation(
    config: &FederationConfig,
    clients: &[ClientState],
    init: &ModelParams,
) -> Result<FederationRun> {
    run_federation_with(config, clients, init, |_, _| Ok(()))
}

/// Runs every round, calling `observer` after each aggregation.
pub fn run_federation_with<F>(
    config: &FederationConfig,
    clients: &[ClientState],
    init: &ModelParams,
    mut observer: F,
) -> Result<FederationRun>
where
    F: FnMut(&RoundReport, &ModelParams) -> Result<()>,
{
    config.validate()?;
    let users = clients.len();
    let kappa = config.kappa(users);
    let margin = config
        .spreadout_margin
        .unwrap_or_else(|| (2.0 * init.embedding_dim() as f64).sqrt());
    let mut params = init.clone();
    let mut reports = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        let lr = config.lr_at(round);
        let sampled = sample_clients(round, users, kappa, config.seed)?;
        let local = LocalTraining {
            method: config.method,
            neg_weight: config.neg_weight,
            epochs: config.local_epochs,
            batch_size: config.batch_size,
            lr,
        };
        let broadcast = &params;
        let updates: Vec<ClientUpdate> = sampled
            .par_iter()
            .map(|&i| {
                let client = &clients[i];
                let mut rng = local_order_rng(config.seed, client.user_index, round);
                client_update(
                    broadcast,
                    client,
                    &local,
                    config.shuffle.then_some(&mut rng),
                )
            })
            .collect::<Result<_>>()?;

        let weighted: Vec<(&ModelParams, usize)> = updates
            .iter()
            .map(|u| (&u.params, u.num_examples))
            .collect();
        let mut next = aggregate(&weighted)?;

        if config.method == Method::Fedaws {
            let n_d = next.embedding_dim();
            for (u, &i) in updates.iter().zip(&sampled) {
                if let ClientTarget::Class(y) = clients[i].target {
                    let row = u.params.projection_row(y).to_vec();
                    next.projection_mut()[y * n_d..(y + 1) * n_d].copy_from_slice(&row);
                }
            }
            if next.rows() >= 2 {
                spreadout_step(&mut next, margin, config.server_lr_scale * lr)?;
            }
        }

        let mean_loss = updates.iter().map(|u| u.mean_loss).sum::<f64>() / updates.len() as f64;
        if !mean_loss.is_finite() || !next.is_finite() {
            return Err(Error::DivergenceDetected {
                round,
                detail: format!("mean loss {mean_loss}"),
            });
        }
        params = next;
        let report = RoundReport {
            round,
            lr,
            sampled_users: sampled.iter().map(|&i| clients[i].user_index).collect(),
            mean_loss,
            checksum: params.checksum(),
        };
        observer(&report, &params)?;
        reports.push(report);
    }
    Ok(FederationRun { params, reports })
}

pub const METRICS_HEADER: &str = "round,lr,mean_loss,sampled_users,checksum";

/// Metrics CSV; sampled users are `;`-separated within their column.
pub fn render_metrics(reports: &[RoundReport]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in reports {
        let users: Vec<String> = r.sampled_users.iter().map(|u| u.to_string()).collect();
        writeln!(
            out,
            "{},{:e},{:e},{},{}",
            r.round,
            r.lr,
            r.mean_loss,
            users.join(";"),
            r.checksum
        )
        .unwrap();
    }
    out
}
