use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kmeans::kmeans_init;
use super::mlp::{Activation, LinearGrad, Mlp, MlpCache};
use super::quantize::{quantize_batch, BatchQuantization, Codebook};
use crate::dataio::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RqVaeConfig {
    pub latent_dim: usize,
    /// Number of quantization levels (`L`).
    pub code_len: usize,
    /// Codewords per level (`W`).
    pub codebook_size: usize,
    /// Widths of the four hidden layers; the encoder is
    /// `input → hidden[0] → … → hidden[3] → latent` and the decoder mirrors it.
    pub hidden: Vec<usize>,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub kmeans_iters: usize,
    pub reseed_dead_codes: bool,
    pub seed: u64,
}

impl Default for RqVaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            code_len: 3,
            codebook_size: 256,
            hidden: vec![256, 128, 64, 48],
            beta: 0.25,
            epochs: 300,
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            kmeans_iters: 100,
            reseed_dead_codes: true,
            seed: 0,
        }
    }
}

impl RqVaeConfig {
    /// Full-size schedule: 10,000 epochs at batch size 4,096.
    pub fn full_scale() -> Self {
        Self {
            hidden: vec![512, 256, 128, 64],
            epochs: 10_000,
            batch_size: 4096,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.codebook_size < 2 {
            return bad("rqvae.codebook_size must be >= 2");
        }
        if self.code_len < 1 {
            return bad("rqvae.code_len must be >= 1");
        }
        if !(self.beta > 0.0) {
            return bad("rqvae.beta must be > 0");
        }
        if self.latent_dim == 0 || self.hidden.contains(&0) {
            return bad("rqvae layer widths must be positive");
        }
        if self.batch_size == 0 {
            return bad("rqvae.batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("rqvae.learning_rate must be > 0");
        }
        Ok(())
    }
}

/// Encoder, decoder and one codebook per level.
#[derive(Debug, Clone, PartialEq)]
pub struct RqVaeModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub codebooks: Vec<Codebook>,
    pub beta: f64,
}

/// Everything computed by one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub x_star: Array2<f64>,
    pub codes: Vec<Vec<usize>>,
    /// Batch mean of `‖x − x*‖²`.
    pub rec_loss: f64,
    /// Batch mean of the summed codebook and commitment terms.
    pub rq_loss: f64,
    pub total_loss: f64,
}

/// Gradients for every trainable array, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub encoder: Vec<LinearGrad>,
    pub decoder: Vec<LinearGrad>,
    pub codebooks: Vec<Array2<f64>>,
}

impl ModelGradients {
    /// Encoder then decoder, weight before bias, layer order.
    pub fn network_slices(&self) -> Vec<&[f64]> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|g| {
                [
                    g.weight.as_slice().expect("standard layout"),
                    g.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn network_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|g| {
                [
                    g.weight.as_slice_mut().expect("standard layout"),
                    g.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

struct Pass {
    enc_cache: MlpCache,
    dec_cache: MlpCache,
    quant: BatchQuantization,
    out: ForwardOutput,
}

impl RqVaeModel {
    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn code_len(&self) -> usize {
        self.codebooks.len()
    }

    pub fn codebook_size(&self) -> usize {
        self.codebooks.first().map_or(0, Codebook::size)
    }

    pub fn check(&self) -> Result<()> {
        let latent = self.latent_dim();
        if self.decoder.input_dim() != latent {
            return Err(Error::DimensionMismatch {
                context: "decoder input",
                expected: latent,
                actual: self.decoder.input_dim(),
            });
        }
        if self.decoder.output_dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "decoder output",
                expected: self.input_dim(),
                actual: self.decoder.output_dim(),
            });
        }
        for cb in &self.codebooks {
            if cb.dim() != latent {
                return Err(Error::DimensionMismatch {
                    context: "codebook width",
                    expected: latent,
                    actual: cb.dim(),
                });
            }
        }
        Ok(())
    }

    fn networks(input_dim: usize, cfg: &RqVaeConfig, rng: &mut impl Rng) -> (Mlp, Mlp) {
        let mut enc_sizes = vec![input_dim];
        enc_sizes.extend(&cfg.hidden);
        enc_sizes.push(cfg.latent_dim);
        let dec_sizes: Vec<usize> = enc_sizes.iter().rev().copied().collect();
        (
            Mlp::new(&enc_sizes, Activation::Relu, rng),
            Mlp::new(&dec_sizes, Activation::Relu, rng),
        )
    }

    pub fn encode(&self, x: &Array2<f64>) -> Array2<f64> {
        self.encoder.forward(x)
    }

    fn pass(&self, x: &Array2<f64>) -> Result<Pass> {
        if x.nrows() == 0 {
            return Err(Error::Empty("batch"));
        }
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "model input",
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        let (z, enc_cache) = self.encoder.forward_cached(x);
        let quant = quantize_batch(&z, &self.codebooks)?;
        let (x_star, dec_cache) = self.decoder.forward_cached(&quant.z_star);
        let b = x.nrows() as f64;
        let rec_loss = (x - &x_star).mapv(|v| v * v).sum() / b;
        let committed: f64 = quant.residuals[1..]
            .iter()
            .map(|r| r.mapv(|v| v * v).sum())
            .sum();
        let rq_loss = (1.0 + self.beta) * committed / b;
        let total_loss = rec_loss + rq_loss;
        if !total_loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let codes = quant.codes.clone();
        Ok(Pass {
            enc_cache,
            dec_cache,
            quant,
            out: ForwardOutput {
                x_star,
                codes,
                rec_loss,
                rq_loss,
                total_loss,
            },
        })
    }

    /// Reconstruction, quantization and total loss on a batch.
    ///
    /// The quantization term is `Σ_l ‖sg[r_{l−1}] − e_{c_l}‖² + β‖r_{l−1} − sg[e_{c_l}]‖²`;
    /// stop-gradient only changes derivatives, so its value is
    /// `(1 + β) Σ_l ‖r_l‖²`.
    pub fn forward_loss(&self, x: &Array2<f64>) -> Result<ForwardOutput> {
        Ok(self.pass(x)?.out)
    }

    fn gradients_from(&self, x: &Array2<f64>, pass: &Pass, with_rq: bool) -> ModelGradients {
        let b = x.nrows() as f64;
        let grad_out = (&pass.out.x_star - x) * (2.0 / b);
        let (decoder, g_zstar) = self.decoder.backward(&pass.dec_cache, &grad_out);
        // Straight-through: the decoder's input gradient lands on z unchanged.
        let mut g_z = g_zstar;
        let mut codebooks: Vec<Array2<f64>> = self
            .codebooks
            .iter()
            .map(|cb| Array2::zeros(cb.vectors.raw_dim()))
            .collect();
        if with_rq {
            for (l, r) in pass.quant.residuals[1..].iter().enumerate() {
                // Commitment β‖r_{l−1} − sg[e]‖² pulls the encoder towards the codeword.
                g_z.scaled_add(2.0 * self.beta / b, r);
                // Codebook ‖sg[r_{l−1}] − e‖² pulls the codeword towards the residual.
                for (row, codes) in pass.quant.codes.iter().enumerate() {
                    codebooks[l]
                        .row_mut(codes[l])
                        .scaled_add(-2.0 / b, &r.row(row));
                }
            }
        }
        let (encoder, _) = self.encoder.backward(&pass.enc_cache, &g_z);
        ModelGradients {
            encoder,
            decoder,
            codebooks,
        }
    }

    /// Gradients of the total loss under straight-through estimation.
    pub fn loss_gradients(&self, x: &Array2<f64>) -> Result<(ForwardOutput, ModelGradients)> {
        let pass = self.pass(x)?;
        let grads = self.gradients_from(x, &pass, true);
        Ok((pass.out, grads))
    }

    /// Network gradients of the reconstruction loss alone, codes frozen and
    /// the quantizer bypassed straight-through.
    pub fn rec_gradients(&self, x: &Array2<f64>) -> Result<ModelGradients> {
        let pass = self.pass(x)?;
        Ok(self.gradients_from(x, &pass, false))
    }

    fn network_slices_mut(&mut self) -> Vec<&mut [f64]> {
        net_slices_mut(&mut self.encoder, &mut self.decoder)
    }

    /// Reconstruction loss with the quantizer replaced by a fixed additive
    /// offset, `x* = dec(enc(x) + offset)`. With `offset = z* − z` taken at
    /// some reference parameters, its derivative there is the
    /// straight-through gradient.
    fn rec_loss_with_offset(&self, x: &Array2<f64>, offset: &Array2<f64>) -> f64 {
        let z = self.encoder.forward(x);
        let x_star = self.decoder.forward(&(z + offset));
        (x - &x_star).mapv(|v| v * v).sum() / x.nrows() as f64
    }

    /// Central finite differences of the frozen-code reconstruction loss with
    /// respect to every encoder and decoder parameter.
    pub fn numeric_rec_gradients(&self, x: &Array2<f64>, epsilon: f64) -> Result<ModelGradients> {
        let base = self.pass(x)?;
        let offset = &base.quant.z_star - &base.quant.residuals[0];
        let mut grads = self.rec_gradients(x)?;
        let mut probe = self.clone();
        let n_slices = grads.network_slices().len();
        for s in 0..n_slices {
            let len = grads.network_slices()[s].len();
            for k in 0..len {
                let orig = probe.network_slices_mut()[s][k];
                probe.network_slices_mut()[s][k] = orig + epsilon;
                let plus = probe.rec_loss_with_offset(x, &offset);
                probe.network_slices_mut()[s][k] = orig - epsilon;
                let minus = probe.rec_loss_with_offset(x, &offset);
                probe.network_slices_mut()[s][k] = orig;
                grads.network_slices_mut()[s][k] = (plus - minus) / (2.0 * epsilon);
            }
        }
        for cb in &mut grads.codebooks {
            cb.fill(0.0);
        }
        Ok(grads)
    }
}

/// Largest `|a − n| / max(|a|, |n|, 1e-6)` over all network parameters.
pub fn max_relative_error(analytic: &ModelGradients, numeric: &ModelGradients) -> f64 {
    analytic
        .network_slices()
        .into_iter()
        .zip(numeric.network_slices())
        .flat_map(|(a, n)| a.iter().zip(n.iter()))
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Compares analytic and finite-difference gradients of the reconstruction
/// loss; returns the maximum relative error.
pub fn gradient_check(model: &RqVaeModel, batch: &Array2<f64>, epsilon: f64) -> Result<f64> {
    let analytic = model.rec_gradients(batch)?;
    let numeric = model.numeric_rec_gradients(batch, epsilon)?;
    Ok(max_relative_error(&analytic, &numeric))
}

struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// `params[k]`, `grads[k]` and `decay[k]` describe the same array.
    fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, decay: &[bool], lr: f64, wd: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                if decay[k] {
                    p[i] -= lr * wd * p[i];
                }
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }

    fn reset_row(&mut self, k: usize, row: usize, width: usize) {
        self.m[k][row * width..(row + 1) * width].fill(0.0);
        self.v[k][row * width..(row + 1) * width].fill(0.0);
    }
}

fn net_slices_mut<'a>(encoder: &'a mut Mlp, decoder: &'a mut Mlp) -> Vec<&'a mut [f64]> {
    encoder
        .layers
        .iter_mut()
        .chain(decoder.layers.iter_mut())
        .flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
        .collect()
}

fn all_params_mut(model: &mut RqVaeModel) -> Vec<&mut [f64]> {
    let mut out = net_slices_mut(&mut model.encoder, &mut model.decoder);
    out.extend(
        model
            .codebooks
            .iter_mut()
            .map(|cb| cb.vectors.as_slice_mut().expect("standard layout")),
    );
    out
}

fn all_grads(g: &ModelGradients) -> Vec<&[f64]> {
    let mut out = g.network_slices();
    out.extend(g.codebooks.iter().map(|c| c.as_slice().expect("standard layout")));
    out
}

fn gather_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    /// Reconstruction loss over the whole data set before the first update.
    pub initial_rec_loss: f64,
    /// Mean batch reconstruction loss for each epoch.
    pub rec_loss: Vec<f64>,
    pub rq_loss: Vec<f64>,
    /// Codewords reseeded at the end of each epoch.
    pub reseeded: Vec<usize>,
}

struct Init {
    model: RqVaeModel,
    rng: ChaCha8Rng,
    first_order: Vec<usize>,
}

fn initialize_with_rng(data: &Array2<f64>, cfg: &RqVaeConfig) -> Result<Init> {
    cfg.validate()?;
    if data.nrows() == 0 {
        return Err(Error::Empty("embeddings"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (encoder, decoder) = RqVaeModel::networks(data.ncols(), cfg, &mut rng);
    let mut first_order: Vec<usize> = (0..data.nrows()).collect();
    first_order.shuffle(&mut rng);

    let first = &first_order[..cfg.batch_size.min(data.nrows())];
    let mut residual = encoder.forward(&gather_rows(data, first));
    let mut codebooks = Vec::with_capacity(cfg.code_len);
    for level in 1..=cfg.code_len {
        let centroids = kmeans_init(residual.view(), cfg.codebook_size, cfg.kmeans_iters, &mut rng)?;
        let cb = Codebook::new(level, centroids)?;
        for mut row in residual.rows_mut() {
            let (c, _) = cb.nearest(row.view());
            row.scaled_add(-1.0, &cb.vectors.row(c));
        }
        codebooks.push(cb);
    }
    Ok(Init {
        model: RqVaeModel {
            encoder,
            decoder,
            codebooks,
            beta: cfg.beta,
        },
        rng,
        first_order,
    })
}

/// Randomly initialized networks with codebooks fitted by k-means to the
/// latents of the first (shuffled) training batch. This is exactly the model
/// [`train_rqvae`] starts from.
pub fn initialize_rqvae(embeddings: &EmbeddingMatrix, cfg: &RqVaeConfig) -> Result<RqVaeModel> {
    Ok(initialize_with_rng(embeddings.values(), cfg)?.model)
}

pub fn train_rqvae(embeddings: &EmbeddingMatrix, cfg: &RqVaeConfig) -> Result<RqVaeModel> {
    Ok(train_rqvae_with_history(embeddings, cfg)?.0)
}

/// AdamW with a linearly decaying step size. Weight decay applies to the
/// weight matrices only.
pub fn train_rqvae_with_history(
    embeddings: &EmbeddingMatrix,
    cfg: &RqVaeConfig,
) -> Result<(RqVaeModel, TrainingHistory)> {
    let data = embeddings.values();
    let Init {
        mut model,
        mut rng,
        first_order,
    } = initialize_with_rng(data, cfg)?;

    let mut history = TrainingHistory {
        initial_rec_loss: model.forward_loss(data)?.rec_loss,
        ..Default::default()
    };

    let n = data.nrows();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch).max(1);
    let sizes: Vec<usize> = all_grads(&model.rec_gradients(&data.slice(s![..1, ..]).to_owned())?)
        .iter()
        .map(|g| g.len())
        .collect();
    let n_net = 2 * (model.encoder.layers.len() + model.decoder.layers.len());
    let decay: Vec<bool> = (0..sizes.len()).map(|k| k < n_net && k % 2 == 0).collect();
    let mut opt = AdamW::new(&sizes);
    let mut order = first_order;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        if epoch > 1 {
            order.shuffle(&mut rng);
        }
        let mut usage = vec![vec![0usize; cfg.codebook_size]; cfg.code_len];
        let mut level_inputs: Vec<Array2<f64>> = Vec::new();
        let (mut rec_sum, mut rq_sum) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let x = gather_rows(data, chunk);
            let pass = model.pass(&x).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            let grads = model.gradients_from(&x, &pass, true);
            rec_sum += pass.out.rec_loss;
            rq_sum += pass.out.rq_loss;
            for codes in &pass.out.codes {
                for (l, &c) in codes.iter().enumerate() {
                    usage[l][c] += 1;
                }
            }
            level_inputs = pass.quant.residuals[..cfg.code_len].to_vec();

            let lr = cfg.learning_rate * (1.0 - step as f64 / total_steps as f64);
            opt.step(
                all_params_mut(&mut model),
                all_grads(&grads),
                &decay,
                lr,
                cfg.weight_decay,
            );
            step += 1;
        }
        let rec = rec_sum / batches_per_epoch as f64;
        let rq = rq_sum / batches_per_epoch as f64;
        if !rec.is_finite() || !rq.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: rec + rq,
            });
        }
        history.rec_loss.push(rec);
        history.rq_loss.push(rq);

        let mut reseeded = 0;
        if cfg.reseed_dead_codes {
            for (l, used) in usage.iter().enumerate() {
                let inputs = &level_inputs[l];
                for (w, &count) in used.iter().enumerate() {
                    if count == 0 {
                        let r = rng.random_range(0..inputs.nrows());
                        model.codebooks[l].vectors.row_mut(w).assign(&inputs.row(r));
                        opt.reset_row(n_net + l, w, cfg.latent_dim);
                        reseeded += 1;
                    }
                }
            }
        }
        history.reseeded.push(reseeded);
    }
    Ok((model, history))
}

/// Encodes and quantizes every item, returning its `L` raw codes.
pub fn assign_codes(
    model: &RqVaeModel,
    embeddings: &EmbeddingMatrix,
) -> Result<BTreeMap<String, Vec<u32>>> {
    if embeddings.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "assign_codes",
            expected: model.input_dim(),
            actual: embeddings.dim(),
        });
    }
    let z = model.encode(embeddings.values());
    let quant = quantize_batch(&z, &model.codebooks)?;
    Ok(embeddings
        .ids()
        .iter()
        .zip(quant.codes)
        .map(|(id, codes)| (id.clone(), codes.into_iter().map(|c| c as u32).collect()))
        .collect())
}

/// Mean reconstruction loss over every row of `data`.
pub fn reconstruction_loss(model: &RqVaeModel, data: &Array2<f64>) -> Result<f64> {
    Ok(model.forward_loss(data)?.rec_loss)
}
