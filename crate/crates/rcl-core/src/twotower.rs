//! Interaction learning: two independent feed-forward encoders project
//! parameter and KPI sample series into one shared latent space, scored by
//! scaled cosine similarity and trained against the interaction labels with
//! a numerically stable logit BCE and full-batch Adam.
//!
//! With only a handful of entities there is no mini-batching: one epoch is
//! one optimizer step over the complete loss. Gradients are fully analytic;
//! [`gradient_check`] verifies every scalar against central finite
//! differences.

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::graph::{EntityDims, ScoreMatrix};
use crate::mat::{BinMat, Mat};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Stabilizer for L2-normalization denominators; keeps zero rows at zero
/// instead of NaN.
pub const NORM_EPS: f64 = 1e-12;

const MODEL_SCHEMA_VERSION: u32 = 1;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Shared latent dimension H.
    pub latent_dim: usize,
    /// Hidden width of each encoder.
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Multiplier on the `1/sqrt(fan_in)` uniform init range.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden: 64,
            learning_rate: 1e-3,
            epochs: 500,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            init_scale: 1.0,
            seed: 7,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument(
                "latent_dim and hidden must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning_rate must be positive".into(),
            ));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidArgument("init_scale must be positive".into()));
        }
        Ok(())
    }

    /// Same hyperparameters with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut hp = self.clone();
        hp.seed = seed;
        hp
    }
}

/// Weights of one encoder: linear, ReLU, linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerWeights {
    /// `hidden x input_dim`.
    pub w1: Mat,
    pub b1: Vec<f64>,
    /// `latent_dim x hidden`.
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl TowerWeights {
    fn init(input_dim: usize, hidden: usize, latent: usize, scale: f64, rng: &mut Rng) -> Self {
        let r1 = scale / (input_dim as f64).sqrt();
        let r2 = scale / (hidden as f64).sqrt();
        let mut w1 = Mat::zeros(hidden, input_dim);
        for v in w1.data_mut() {
            *v = rng.uniform(-r1, r1);
        }
        let mut w2 = Mat::zeros(latent, hidden);
        for v in w2.data_mut() {
            *v = rng.uniform(-r2, r2);
        }
        Self {
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; latent],
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: Mat::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Mat::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }

    fn n_scalars(&self) -> usize {
        self.w1.rows() * self.w1.cols()
            + self.b1.len()
            + self.w2.rows() * self.w2.cols()
            + self.b2.len()
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        for v in self.w1.data_mut() {
            f(v);
        }
        for v in &mut self.b1 {
            f(v);
        }
        for v in self.w2.data_mut() {
            f(v);
        }
        for v in &mut self.b2 {
            f(v);
        }
    }

    fn push_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w1.data());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.data());
        out.extend_from_slice(&self.b2);
    }
}

/// The full trainable state: both towers plus the similarity scale,
/// stored as `log_alpha` so that `alpha = exp(log_alpha)` stays positive
/// without clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tower_p: TowerWeights,
    pub tower_k: TowerWeights,
    pub log_alpha: f64,
}

impl ModelParams {
    /// Deterministic initialization. Draw order: parameter tower (w1 then
    /// w2), KPI tower (w1 then w2); biases start at zero; alpha starts at 1.
    pub fn init(input_p: usize, input_k: usize, hp: &Hyperparams, rng: &mut Rng) -> Self {
        let tower_p = TowerWeights::init(input_p, hp.hidden, hp.latent_dim, hp.init_scale, rng);
        let tower_k = TowerWeights::init(input_k, hp.hidden, hp.latent_dim, hp.init_scale, rng);
        Self {
            tower_p,
            tower_k,
            log_alpha: 0.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn n_scalars(&self) -> usize {
        self.tower_p.n_scalars() + self.tower_k.n_scalars() + 1
    }

    /// Visits every scalar in the fixed flat order (tower_p, tower_k,
    /// log_alpha).
    pub fn visit_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.tower_p.visit_mut(&mut f);
        self.tower_k.visit_mut(&mut f);
        f(&mut self.log_alpha);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        self.tower_p.push_flat(&mut out);
        self.tower_k.push_flat(&mut out);
        out.push(self.log_alpha);
        out
    }

    pub fn from_flat(template: &ModelParams, flat: &[f64]) -> ModelParams {
        assert_eq!(flat.len(), template.n_scalars());
        let mut out = template.clone();
        let mut i = 0;
        out.visit_mut(|v| {
            *v = flat[i];
            i += 1;
        });
        out
    }
}

/// Latent embeddings of the parameter and KPI entities (pre-normalization).
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub z_p: Mat,
    pub z_k: Mat,
}

/// Metrics recorded after each completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Undefined when the label matrix is single-class.
    pub auc: Option<f64>,
}

/// Per-epoch training history; one record per completed epoch, epochs
/// contiguous from 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

/// Z-scores every row over its columns (population std, stabilized).
pub fn standardize_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    let l = x.cols() as f64;
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / l;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / l;
        let denom = var.sqrt().max(NORM_EPS);
        for v in row {
            *v = (*v - mean) / denom;
        }
    }
    out
}

/// Applies one tower to every entity row: `w2 * relu(w1 * x + b1) + b2`.
pub fn encode(x: &Mat, w: &TowerWeights) -> Result<Mat> {
    if w.w1.cols() != x.cols() {
        return Err(Error::Shape(format!(
            "encoder expects input dim {}, got {}",
            w.w1.cols(),
            x.cols()
        )));
    }
    if w.w2.cols() != w.w1.rows() {
        return Err(Error::Shape("encoder layer widths disagree".into()));
    }
    let (hidden, latent) = (w.w1.rows(), w.w2.rows());
    let mut out = Mat::zeros(x.rows(), latent);
    for i in 0..x.rows() {
        let xi = x.row(i);
        let mut h = vec![0.0; hidden];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut acc = w.b1[j];
            let row = w.w1.row(j);
            for (wv, xv) in row.iter().zip(xi) {
                acc += wv * xv;
            }
            *hj = acc.max(0.0);
        }
        for (o, out_v) in out.row_mut(i).iter_mut().enumerate() {
            let mut acc = w.b2[o];
            let row = w.w2.row(o);
            for (j, hj) in h.iter().enumerate() {
                acc += row[j] * hj;
            }
            *out_v = acc;
        }
    }
    Ok(out)
}

/// Scales every row to unit L2 norm. Zero rows stay zero: the denominator
/// is `sqrt(|z|^2 + NORM_EPS^2)`.
pub fn l2_normalize_rows(z: &Mat) -> Mat {
    let mut out = z.clone();
    for i in 0..z.rows() {
        let row = out.row_mut(i);
        let ss: f64 = row.iter().map(|v| v * v).sum();
        let denom = (ss + NORM_EPS * NORM_EPS).sqrt();
        for v in row {
            *v /= denom;
        }
    }
    out
}

/// Scaled cosine similarity between every parameter and KPI embedding:
/// `alpha * cos(z_p[i], z_k[j])`.
pub fn cross_scores(emb: &Embeddings, log_alpha: f64) -> Mat {
    let alpha = log_alpha.exp();
    let u = l2_normalize_rows(&emb.z_p);
    let v = l2_normalize_rows(&emb.z_k);
    let mut s = Mat::zeros(u.rows(), v.rows());
    for i in 0..u.rows() {
        for j in 0..v.rows() {
            let dot: f64 = u.row(i).iter().zip(v.row(j)).map(|(a, b)| a * b).sum();
            s.set(i, j, alpha * dot);
        }
    }
    s
}

/// Full entity-by-entity score matrix: the normalized embeddings of both
/// towers are stacked and scored pairwise, so the cross block reproduces
/// [`cross_scores`] while the same-entity blocks surface pairwise alignment
/// among parameters and among KPIs.
pub fn full_score_matrix(
    emb: &Embeddings,
    log_alpha: f64,
    dims: EntityDims,
) -> Result<ScoreMatrix> {
    if emb.z_p.rows() != dims.n_params || emb.z_k.rows() != dims.n_kpis {
        return Err(Error::Shape("embedding rows disagree with dims".into()));
    }
    if emb.z_p.cols() != emb.z_k.cols() {
        return Err(Error::Shape(
            "towers must share the latent dimension".into(),
        ));
    }
    let alpha = log_alpha.exp();
    let n = dims.n_entities();
    let h = emb.z_p.cols();
    let mut all = Mat::zeros(n, h);
    for i in 0..dims.n_params {
        all.row_mut(i).copy_from_slice(emb.z_p.row(i));
    }
    for k in 0..dims.n_kpis {
        all.row_mut(dims.n_params + k)
            .copy_from_slice(emb.z_k.row(k));
    }
    let u = l2_normalize_rows(&all);
    let mut s = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = u.row(i).iter().zip(u.row(j)).map(|(a, b)| a * b).sum();
            s.set(i, j, alpha * dot);
        }
    }
    ScoreMatrix::new(s, dims)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable per-cell logit BCE: `max(x, 0) - x*y + ln(1 + exp(-|x|))`.
fn bce_cell(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

/// Mean stable logit BCE over all label cells.
pub fn bce_loss(s_pk: &Mat, y: &BinMat) -> f64 {
    assert_eq!(
        (s_pk.rows(), s_pk.cols()),
        (y.rows(), y.cols()),
        "shape mismatch"
    );
    let mut total = 0.0;
    for i in 0..s_pk.rows() {
        for j in 0..s_pk.cols() {
            total += bce_cell(s_pk.get(i, j), if y.get(i, j) { 1.0 } else { 0.0 });
        }
    }
    total / (s_pk.rows() * s_pk.cols()) as f64
}

// --- training internals -----------------------------------------------------

struct TowerForward {
    /// Pre-activation of the hidden layer, `n x hidden`.
    a1: Mat,
    /// Post-ReLU hidden activations, `n x hidden`.
    h: Mat,
    /// Output embeddings, `n x latent`.
    z: Mat,
}

fn tower_forward(x: &Mat, w: &TowerWeights) -> TowerForward {
    let (hidden, latent) = (w.w1.rows(), w.w2.rows());
    let n = x.rows();
    let mut a1 = Mat::zeros(n, hidden);
    let mut h = Mat::zeros(n, hidden);
    let mut z = Mat::zeros(n, latent);
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..hidden {
            let row = w.w1.row(j);
            let mut acc = w.b1[j];
            for (wv, xv) in row.iter().zip(xi) {
                acc += wv * xv;
            }
            a1.set(i, j, acc);
            h.set(i, j, acc.max(0.0));
        }
        for o in 0..latent {
            let row = w.w2.row(o);
            let mut acc = w.b2[o];
            for (wv, hv) in row.iter().zip(h.row(i)) {
                acc += wv * hv;
            }
            z.set(i, o, acc);
        }
    }
    TowerForward { a1, h, z }
}

/// Gradient of the loss with respect to one tower's weights, given the
/// gradient with respect to its output embeddings.
fn tower_backward(
    x: &Mat,
    fwd: &TowerForward,
    w: &TowerWeights,
    g_z: &Mat,
    grads: &mut TowerWeights,
) {
    let (hidden, latent) = (w.w1.rows(), w.w2.rows());
    for i in 0..x.rows() {
        let xi = x.row(i);
        // Output layer.
        for o in 0..latent {
            let g = g_z.get(i, o);
            if g == 0.0 {
                continue;
            }
            grads.b2[o] += g;
            let row = grads.w2.row_mut(o);
            for (rv, hv) in row.iter_mut().zip(fwd.h.row(i)) {
                *rv += g * hv;
            }
        }
        // Hidden layer through the ReLU gate.
        for j in 0..hidden {
            if fwd.a1.get(i, j) <= 0.0 {
                continue;
            }
            let mut g_h = 0.0;
            for o in 0..latent {
                g_h += w.w2.get(o, j) * g_z.get(i, o);
            }
            if g_h == 0.0 {
                continue;
            }
            grads.b1[j] += g_h;
            let row = grads.w1.row_mut(j);
            for l in 0..xi.len() {
                row[l] += g_h * xi[l];
            }
        }
    }
}

struct ModelGrads {
    tower_p: TowerWeights,
    tower_k: TowerWeights,
    log_alpha: f64,
}

impl ModelGrads {
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.tower_p.n_scalars() + self.tower_k.n_scalars() + 1);
        self.tower_p.push_flat(&mut out);
        self.tower_k.push_flat(&mut out);
        out.push(self.log_alpha);
        out
    }
}

/// Forward pass, loss, and analytic gradients for the full model on
/// standardized inputs.
fn loss_and_grads(
    x_p: &Mat,
    x_k: &Mat,
    labels: &BinMat,
    params: &ModelParams,
) -> (f64, ModelGrads) {
    let fwd_p = tower_forward(x_p, &params.tower_p);
    let fwd_k = tower_forward(x_k, &params.tower_k);
    let (np, nk) = (x_p.rows(), x_k.rows());
    let latent = fwd_p.z.cols();
    let alpha = params.alpha();

    let u_p = l2_normalize_rows(&fwd_p.z);
    let u_k = l2_normalize_rows(&fwd_k.z);

    // Scores and loss.
    let mut s = Mat::zeros(np, nk);
    let mut loss = 0.0;
    for i in 0..np {
        for j in 0..nk {
            let dot: f64 = u_p.row(i).iter().zip(u_k.row(j)).map(|(a, b)| a * b).sum();
            let sij = alpha * dot;
            s.set(i, j, sij);
            loss += bce_cell(sij, if labels.get(i, j) { 1.0 } else { 0.0 });
        }
    }
    let cells = (np * nk) as f64;
    loss /= cells;

    // dL/ds, then the chain back through scale, cosine, and towers.
    let mut g_s = Mat::zeros(np, nk);
    let mut g_log_alpha = 0.0;
    for i in 0..np {
        for j in 0..nk {
            let g = (sigmoid(s.get(i, j)) - if labels.get(i, j) { 1.0 } else { 0.0 }) / cells;
            g_s.set(i, j, g);
            g_log_alpha += g * s.get(i, j);
        }
    }

    let mut g_u_p = Mat::zeros(np, latent);
    let mut g_u_k = Mat::zeros(nk, latent);
    for i in 0..np {
        for j in 0..nk {
            let g = alpha * g_s.get(i, j);
            if g == 0.0 {
                continue;
            }
            for t in 0..latent {
                let v = g_u_p.get(i, t) + g * u_k.get(j, t);
                g_u_p.set(i, t, v);
                let w = g_u_k.get(j, t) + g * u_p.get(i, t);
                g_u_k.set(j, t, w);
            }
        }
    }

    // Through the normalization: g_z = g_u/n - z (z . g_u) / n^3.
    let unnormalize = |z: &Mat, g_u: &Mat| -> Mat {
        let mut g_z = Mat::zeros(z.rows(), z.cols());
        for i in 0..z.rows() {
            let n = {
                let ss: f64 = z.row(i).iter().map(|v| v * v).sum();
                (ss + NORM_EPS * NORM_EPS).sqrt()
            };
            let zdotg: f64 = z.row(i).iter().zip(g_u.row(i)).map(|(a, b)| a * b).sum();
            for t in 0..z.cols() {
                g_z.set(i, t, g_u.get(i, t) / n - z.get(i, t) * zdotg / (n * n * n));
            }
        }
        g_z
    };
    let g_z_p = unnormalize(&fwd_p.z, &g_u_p);
    let g_z_k = unnormalize(&fwd_k.z, &g_u_k);

    let mut grads = ModelGrads {
        tower_p: params.tower_p.zeros_like(),
        tower_k: params.tower_k.zeros_like(),
        log_alpha: g_log_alpha,
    };
    tower_backward(x_p, &fwd_p, &params.tower_p, &g_z_p, &mut grads.tower_p);
    tower_backward(x_k, &fwd_k, &params.tower_k, &g_z_k, &mut grads.tower_k);

    (loss, grads)
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &[f64], hp: &Hyperparams) {
        self.t += 1;
        let b1 = hp.adam_beta1;
        let b2 = hp.adam_beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let lr = hp.learning_rate;
        let eps = hp.adam_eps;
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        params.visit_mut(|p| {
            let g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
            i += 1;
        });
    }
}

/// Incremental trainer. One [`step`](Trainer::step) = one full-batch Adam
/// update followed by a metric evaluation at the new parameters.
pub struct Trainer {
    x_p: Mat,
    x_k: Mat,
    labels: BinMat,
    dims: EntityDims,
    hp: Hyperparams,
    params: ModelParams,
    adam: AdamState,
    epoch: usize,
    cached_emb: Option<Embeddings>,
}

impl Trainer {
    pub fn new(ds: &Dataset, hp: &Hyperparams) -> Result<Self> {
        hp.validate()?;
        let x_p = standardize_rows(&ds.x_p);
        let x_k = standardize_rows(&ds.x_k);
        let mut rng = Rng::new(hp.seed);
        let params = ModelParams::init(x_p.cols(), x_k.cols(), hp, &mut rng);
        let n = params.n_scalars();
        Ok(Self {
            x_p,
            x_k,
            labels: ds.labels.clone(),
            dims: ds.dims(),
            hp: hp.clone(),
            params,
            adam: AdamState::new(n),
            epoch: 0,
            cached_emb: None,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn dims(&self) -> EntityDims {
        self.dims
    }

    /// Embeddings of the standardized inputs under the current parameters
    /// (cached across calls within one epoch).
    pub fn embeddings(&self) -> Result<Embeddings> {
        if let Some(emb) = &self.cached_emb {
            return Ok(emb.clone());
        }
        Ok(Embeddings {
            z_p: encode(&self.x_p, &self.params.tower_p)?,
            z_k: encode(&self.x_k, &self.params.tower_k)?,
        })
    }

    /// Runs one epoch and returns the post-step metrics.
    pub fn step(&mut self) -> Result<EpochRecord> {
        let (loss, grads) = loss_and_grads(&self.x_p, &self.x_k, &self.labels, &self.params);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch + 1,
            });
        }
        let flat = grads.to_flat();
        self.adam.step(&mut self.params, &flat, &self.hp);
        self.epoch += 1;
        self.cached_emb = None;

        let emb = self.embeddings()?;
        self.cached_emb = Some(emb.clone());
        let s_pk = cross_scores(&emb, self.params.log_alpha);
        let loss_after = bce_loss(&s_pk, &self.labels);
        if !loss_after.is_finite() {
            return Err(Error::Diverged { epoch: self.epoch });
        }
        let accuracy = eval::accuracy(&s_pk, &self.labels);
        let auc = eval::roc_auc_matrix(&s_pk, &self.labels).ok();
        Ok(EpochRecord {
            epoch: self.epoch,
            loss: loss_after,
            accuracy,
            auc,
        })
    }
}

/// Trains for `hp.epochs` full-batch epochs. Deterministic in `hp.seed`.
/// With `epochs == 0` this returns the freshly initialized parameters and
/// an empty trace.
pub fn train(ds: &Dataset, hp: &Hyperparams) -> Result<(ModelParams, TrainTrace)> {
    train_with(ds, hp, |_, _| {})
}

/// Like [`train`] but invokes `on_epoch(record, trainer)` after every epoch,
/// giving callers access to the evolving embeddings (e.g. to score
/// reconstruction quality per epoch).
pub fn train_with(
    ds: &Dataset,
    hp: &Hyperparams,
    mut on_epoch: impl FnMut(&EpochRecord, &Trainer),
) -> Result<(ModelParams, TrainTrace)> {
    let mut trainer = Trainer::new(ds, hp)?;
    let mut trace = TrainTrace::default();
    for _ in 0..hp.epochs {
        let record = trainer.step()?;
        on_epoch(&record, &trainer);
        trace.records.push(record);
    }
    Ok((trainer.params, trace))
}

/// Compares the analytic gradient of the total loss against central finite
/// differences (step `1e-5`) for every scalar in the model; returns the
/// maximum relative error with denominator `max(|a|, |b|, 1e-8)`.
///
/// Meaningful at generic random initializations; exactly at a ReLU kink the
/// loss is not differentiable and the comparison is void.
pub fn gradient_check(ds: &Dataset, hp: &Hyperparams) -> Result<f64> {
    hp.validate()?;
    let x_p = standardize_rows(&ds.x_p);
    let x_k = standardize_rows(&ds.x_k);
    let mut rng = Rng::new(hp.seed);
    let params = ModelParams::init(x_p.cols(), x_k.cols(), hp, &mut rng);

    let (_, grads) = loss_and_grads(&x_p, &x_k, &ds.labels, &params);
    let analytic = grads.to_flat();
    let flat = params.to_flat();
    let h = 1e-5;

    let mut max_rel = 0.0f64;
    let mut probe = flat.clone();
    for i in 0..flat.len() {
        probe[i] = flat[i] + h;
        let plus = loss_only(
            &x_p,
            &x_k,
            &ds.labels,
            &ModelParams::from_flat(&params, &probe),
        );
        probe[i] = flat[i] - h;
        let minus = loss_only(
            &x_p,
            &x_k,
            &ds.labels,
            &ModelParams::from_flat(&params, &probe),
        );
        probe[i] = flat[i];
        let fd = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

fn loss_only(x_p: &Mat, x_k: &Mat, labels: &BinMat, params: &ModelParams) -> f64 {
    let z_p = tower_forward(x_p, &params.tower_p).z;
    let z_k = tower_forward(x_k, &params.tower_k).z;
    let s = cross_scores(&Embeddings { z_p, z_k }, params.log_alpha);
    bce_loss(&s, labels)
}

/// Embeds a dataset under trained parameters (standardizing exactly as the
/// trainer does).
pub fn embed_dataset(ds: &Dataset, params: &ModelParams) -> Result<Embeddings> {
    Ok(Embeddings {
        z_p: encode(&standardize_rows(&ds.x_p), &params.tower_p)?,
        z_k: encode(&standardize_rows(&ds.x_k), &params.tower_k)?,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    model: ModelParams,
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        model: params.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.schema_version != MODEL_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported model schema version {} (expected {MODEL_SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    Ok(file.model)
}

/// Appends a training trace to `trace.csv` (`run_id,epoch,loss,accuracy,auc`),
/// writing the header when the file does not exist yet.
pub fn append_trace_csv(path: &Path, run_id: u64, trace: &TrainTrace) -> Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if fresh {
        writeln!(f, "run_id,epoch,loss,accuracy,auc")?;
    }
    for r in &trace.records {
        let auc = r.auc.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{}",
            run_id, r.epoch, r.loss, r.accuracy, auc
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{default_topology, generate};

    #[test]
    fn encode_zero_weights_zero_output() {
        let w = TowerWeights {
            w1: Mat::zeros(3, 2),
            b1: vec![0.0; 3],
            w2: Mat::zeros(2, 3),
            b2: vec![0.0; 2],
        };
        let x = Mat::from_rows(&[&[1.0, -2.0]]);
        let z = encode(&x, &w).unwrap();
        assert_eq!(z, Mat::zeros(1, 2));
    }

    #[test]
    fn encode_identity_weights_relu_clamps() {
        let w = TowerWeights {
            w1: Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]),
            b1: vec![0.0; 2],
            w2: Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]),
            b2: vec![0.0; 2],
        };
        let x = Mat::from_rows(&[&[-1.0, 2.0]]);
        let z = encode(&x, &w).unwrap();
        assert_eq!(z.row(0), &[0.0, 2.0]);
    }

    #[test]
    fn encode_output_shape() {
        let hp = Hyperparams {
            hidden: 8,
            latent_dim: 16,
            ..Default::default()
        };
        let mut rng = Rng::new(1);
        let w = TowerWeights::init(10, hp.hidden, hp.latent_dim, 1.0, &mut rng);
        let x = Mat::zeros(7, 10);
        let z = encode(&x, &w).unwrap();
        assert_eq!((z.rows(), z.cols()), (7, 16));
    }

    #[test]
    fn normalize_three_four_five() {
        let z = l2_normalize_rows(&Mat::from_rows(&[&[3.0, 4.0]]));
        assert!((z.get(0, 0) - 0.6).abs() < 1e-12);
        assert!((z.get(0, 1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalize_unit_row_unchanged() {
        let z = l2_normalize_rows(&Mat::from_rows(&[&[1.0, 0.0]]));
        assert!((z.get(0, 0) - 1.0).abs() < 1e-9);
        assert!(z.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn normalize_zero_row_stays_zero() {
        let z = l2_normalize_rows(&Mat::from_rows(&[&[0.0, 0.0, 0.0]]));
        for v in z.row(0) {
            assert_eq!(*v, 0.0);
            assert!(v.is_finite());
        }
    }

    #[test]
    fn cross_scores_self_orthogonal_antiparallel() {
        let emb = Embeddings {
            z_p: Mat::from_rows(&[&[2.0, 0.0]]),
            z_k: Mat::from_rows(&[&[2.0, 0.0], &[0.0, 3.0], &[-1.0, 0.0]]),
        };
        let s = cross_scores(&emb, 0.0);
        assert!((s.get(0, 0) - 1.0).abs() < 1e-9);
        assert!(s.get(0, 1).abs() < 1e-12);
        assert!((s.get(0, 2) + 1.0).abs() < 1e-9);
        // alpha = 2 doubles everything.
        let s2 = cross_scores(&emb, 2.0f64.ln());
        assert!((s2.get(0, 2) + 2.0).abs() < 1e-9);
    }

    #[test]
    fn full_score_matrix_symmetric_diag_alpha() {
        let dims = EntityDims::new(1, 3, 2).unwrap();
        let mut rng = Rng::new(9);
        let mut z_p = Mat::zeros(3, 4);
        let mut z_k = Mat::zeros(2, 4);
        for v in z_p.data_mut() {
            *v = rng.normal();
        }
        for v in z_k.data_mut() {
            *v = rng.normal();
        }
        let log_alpha = 0.7;
        let s = full_score_matrix(&Embeddings { z_p, z_k }, log_alpha, dims).unwrap();
        let alpha = log_alpha.exp();
        let m = s.values();
        for i in 0..5 {
            assert!((m.get(i, i) - alpha).abs() < 1e-9);
            for j in 0..5 {
                assert!((m.get(i, j) - m.get(j, i)).abs() < 1e-9);
                assert!(m.get(i, j).abs() <= alpha + 1e-9);
            }
        }
    }

    #[test]
    fn full_score_matrix_duplicate_params_hit_alpha() {
        let dims = EntityDims::new(1, 2, 1).unwrap();
        let z_p = Mat::from_rows(&[&[1.0, 2.0], &[1.0, 2.0]]);
        let z_k = Mat::from_rows(&[&[0.5, -0.5]]);
        let log_alpha = 0.3;
        let s = full_score_matrix(&Embeddings { z_p, z_k }, log_alpha, dims).unwrap();
        assert!((s.values().get(0, 1) - log_alpha.exp()).abs() < 1e-9);
    }

    #[test]
    fn cross_block_matches_cross_scores() {
        let dims = EntityDims::new(1, 3, 2).unwrap();
        let mut rng = Rng::new(12);
        let mut z_p = Mat::zeros(3, 6);
        let mut z_k = Mat::zeros(2, 6);
        for v in z_p.data_mut() {
            *v = rng.normal();
        }
        for v in z_k.data_mut() {
            *v = rng.normal();
        }
        let emb = Embeddings { z_p, z_k };
        let s = full_score_matrix(&emb, 0.4, dims).unwrap();
        let direct = cross_scores(&emb, 0.4);
        let b = crate::graph::blocks(&s);
        assert!(b.s_pk.max_abs_diff(&direct) < 1e-9);
    }

    #[test]
    fn scale_invariance_of_the_head() {
        let dims = EntityDims::new(1, 3, 2).unwrap();
        let mut rng = Rng::new(21);
        let mut z_p = Mat::zeros(3, 5);
        let mut z_k = Mat::zeros(2, 5);
        for v in z_p.data_mut() {
            *v = rng.normal();
        }
        for v in z_k.data_mut() {
            *v = rng.normal();
        }
        let s0 = full_score_matrix(
            &Embeddings {
                z_p: z_p.clone(),
                z_k: z_k.clone(),
            },
            0.2,
            dims,
        )
        .unwrap();
        // Scaling any single row by c > 0 must leave the scores unchanged.
        for c in [3.0, 0.01, 250.0] {
            let mut z_p2 = z_p.clone();
            for v in z_p2.row_mut(1) {
                *v *= c;
            }
            let s1 = full_score_matrix(
                &Embeddings {
                    z_p: z_p2,
                    z_k: z_k.clone(),
                },
                0.2,
                dims,
            )
            .unwrap();
            assert!(s0.values().max_abs_diff(s1.values()) < 1e-9, "c = {c}");
        }
    }

    #[test]
    fn bce_reference_values() {
        let y0 = BinMat::from_rows(&[&[0]]);
        let y1 = BinMat::from_rows(&[&[1]]);
        let at = |x: f64, y: &BinMat| bce_loss(&Mat::from_rows(&[&[x]]), y);
        assert!((at(0.0, &y0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((at(10.0, &y1) - 4.539_889_921_686_465e-5).abs() < 1e-15);
        assert!((at(-10.0, &y0) - 4.539_889_921_686_465e-5).abs() < 1e-15);
        // Stable far into saturation.
        assert!(at(1e3, &y0).is_finite());
        assert!(at(-1e3, &y1).is_finite());
        assert!(at(1e3, &y1) >= 0.0);
    }

    #[test]
    fn train_zero_epochs_returns_init() {
        let ds = generate(&default_topology(), 32).unwrap();
        let hp = Hyperparams {
            epochs: 0,
            ..Default::default()
        };
        let (params, trace) = train(&ds, &hp).unwrap();
        assert!(trace.records.is_empty());
        let mut rng = Rng::new(hp.seed);
        let expect = ModelParams::init(32, 32, &hp, &mut rng);
        assert_eq!(params, expect);
    }

    #[test]
    fn train_same_seed_identical() {
        let ds = generate(&default_topology(), 64).unwrap();
        let hp = Hyperparams {
            epochs: 10,
            ..Default::default()
        };
        let (pa, ta) = train(&ds, &hp).unwrap();
        let (pb, tb) = train(&ds, &hp).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ta, tb);
    }

    #[test]
    fn train_epochs_contiguous_from_one() {
        let ds = generate(&default_topology(), 32).unwrap();
        let hp = Hyperparams {
            epochs: 5,
            ..Default::default()
        };
        let (_, trace) = train(&ds, &hp).unwrap();
        let epochs: Vec<usize> = trace.records.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn loss_decreases_over_training() {
        let ds = generate(&default_topology(), 256).unwrap();
        let hp = Hyperparams {
            epochs: 120,
            ..Default::default()
        };
        let (_, trace) = train(&ds, &hp).unwrap();
        let first = trace.records.first().unwrap().loss;
        let last = trace.records.last().unwrap().loss;
        assert!(last < first * 0.8, "loss {first} -> {last}");
    }

    #[test]
    fn gradient_check_small() {
        let ds = generate(&default_topology(), 24).unwrap();
        let hp = Hyperparams {
            hidden: 12,
            latent_dim: 6,
            seed: 5,
            ..Default::default()
        };
        let err = gradient_check(&ds, &hp).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn log_alpha_gradient_matches_finite_difference() {
        // The scale parameter sits on a smooth path (no ReLU kinks), so its
        // analytic gradient sum(g .* s) must match central differences to
        // much tighter tolerance than the full-model check.
        let ds = generate(&default_topology(), 48).unwrap();
        let hp = Hyperparams {
            hidden: 16,
            latent_dim: 8,
            seed: 11,
            ..Default::default()
        };
        let x_p = standardize_rows(&ds.x_p);
        let x_k = standardize_rows(&ds.x_k);
        let mut rng = Rng::new(hp.seed);
        let params = ModelParams::init(48, 48, &hp, &mut rng);

        let loss_at = |log_alpha: f64| {
            let emb = Embeddings {
                z_p: encode(&x_p, &params.tower_p).unwrap(),
                z_k: encode(&x_k, &params.tower_k).unwrap(),
            };
            bce_loss(&cross_scores(&emb, log_alpha), &ds.labels)
        };

        // Analytic: dL/dlog_alpha = mean-normalized sum of (sigmoid(s)-y)*s.
        let emb = Embeddings {
            z_p: encode(&x_p, &params.tower_p).unwrap(),
            z_k: encode(&x_k, &params.tower_k).unwrap(),
        };
        let s = cross_scores(&emb, params.log_alpha);
        let cells = (s.rows() * s.cols()) as f64;
        let mut analytic = 0.0;
        for i in 0..s.rows() {
            for j in 0..s.cols() {
                let y = if ds.labels.get(i, j) { 1.0 } else { 0.0 };
                analytic += (sigmoid(s.get(i, j)) - y) / cells * s.get(i, j);
            }
        }

        let h = 1e-5;
        let fd = (loss_at(params.log_alpha + h) - loss_at(params.log_alpha - h)) / (2.0 * h);
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn model_roundtrip() {
        let dir = std::env::temp_dir().join(format!("rcl-model-{}", std::process::id()));
        let hp = Hyperparams {
            hidden: 4,
            latent_dim: 3,
            ..Default::default()
        };
        let mut rng = Rng::new(2);
        let params = ModelParams::init(5, 6, &hp, &mut rng);
        let path = dir.join("model.json");
        save_model(&params, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(params, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn flat_roundtrip_covers_every_scalar() {
        let hp = Hyperparams {
            hidden: 3,
            latent_dim: 2,
            ..Default::default()
        };
        let mut rng = Rng::new(4);
        let params = ModelParams::init(4, 5, &hp, &mut rng);
        let flat = params.to_flat();
        assert_eq!(flat.len(), params.n_scalars());
        let back = ModelParams::from_flat(&params, &flat);
        assert_eq!(params, back);
    }
}
