use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::encoding::{decode_continuous, decode_discrete_ids, vocab};
use crate::error::{EncodingError, Error, Result};
use crate::rng;
use crate::schedule::Schedule;
use crate::tensor::layers::{BatchNorm1d, Conv1d, ConvTranspose1d, Embedding, Linear, Lstm};
use crate::tensor::{read_checkpoint, write_checkpoint, Checkpoint, Graph, Mode, ParamStore, Tensor, Var};

use super::data::Batch;
use super::{Architecture, EncodingKind, ModelConfig};

const KERNEL: usize = 4;
const STRIDE: usize = 2;

/// Padding that keeps a stride-2, width-4 convolution defined on length `len`.
fn conv_pad(len: usize) -> usize {
    1.max((KERNEL.saturating_sub(len) + 1) / 2)
}

fn conv_out(len: usize, pad: usize) -> usize {
    (len + 2 * pad - KERNEL) / STRIDE + 1
}

/// Encoder lengths `L_0 = len, L_1, …, L_n` and the padding of each layer.
pub fn conv_lengths(len: usize, layers: usize) -> (Vec<usize>, Vec<usize>) {
    let mut lengths = vec![len];
    let mut pads = Vec::with_capacity(layers);
    for _ in 0..layers {
        let l = *lengths.last().expect("non-empty");
        let p = conv_pad(l);
        pads.push(p);
        lengths.push(conv_out(l, p));
    }
    (lengths, pads)
}

/// Output padding for the transposed layer mapping `short` back to `long`.
fn out_padding(long: usize, short: usize, pad: usize) -> Result<usize> {
    let base = (short as isize - 1) * STRIDE as isize - 2 * pad as isize + KERNEL as isize;
    let op = long as isize - base;
    if !(0..STRIDE as isize).contains(&op) {
        return Err(Error::Config(format!("cannot upsample length {short} to {long}")));
    }
    Ok(op as usize)
}

#[derive(Debug, Clone)]
struct DenseBlock {
    lin: Linear,
    bn: Option<BatchNorm1d>,
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv1d,
    bn: BatchNorm1d,
}

#[derive(Debug, Clone)]
struct DeconvBlock {
    deconv: ConvTranspose1d,
    bn: Option<BatchNorm1d>,
    out_pad: usize,
}

#[derive(Debug, Clone)]
enum Encoder {
    Ff(Vec<DenseBlock>),
    Cnn(Vec<ConvBlock>),
    Rnn(Lstm),
}

#[derive(Debug, Clone)]
enum Decoder {
    Ff { blocks: Vec<DenseBlock>, out: Linear },
    Cnn { blocks: Vec<DeconvBlock>, channels: usize, len: usize },
    Rnn(Lstm),
}

#[derive(Debug, Clone)]
struct LatentBlock {
    mu: Linear,
    logvar: Linear,
    resize: Linear,
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `[B, L, C]` class logits.
    pub logits: Var,
    /// `[B, L, 1]` durations in `(0, 1)`; continuous models only.
    pub durations: Option<Var>,
    pub mu: Var,
    pub logvar: Var,
}

/// Loss value and its components, all batch means.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub mse: f64,
    pub kl: f64,
}

/// Argmax decoder output before conversion to schedules.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDecode {
    pub size: usize,
    pub len: usize,
    pub ids: Vec<usize>,
    /// Empty for discrete models.
    pub durations: Vec<f32>,
}

impl RawDecode {
    pub fn row(&self, i: usize) -> (&[usize], &[f32]) {
        let ids = &self.ids[i * self.len..(i + 1) * self.len];
        let d = if self.durations.is_empty() {
            &[][..]
        } else {
            &self.durations[i * self.len..(i + 1) * self.len]
        };
        (ids, d)
    }

    /// Converts row `i` into a schedule.
    pub fn schedule(&self, i: usize, step: u32) -> std::result::Result<Schedule, EncodingError> {
        let (ids, d) = self.row(i);
        if d.is_empty() {
            decode_discrete_ids(ids, step)
        } else {
            let raw: Vec<(usize, f64)> = ids.iter().zip(d).map(|(&s, &v)| (s, f64::from(v))).collect();
            decode_continuous(&raw)
        }
    }
}

/// A schedule VAE: embedding, encoder, latent block, decoder and
/// un-embedding heads over one parameter store.
#[derive(Debug, Clone)]
pub struct VaeModel {
    config: ModelConfig,
    store: ParamStore,
    embed: Embedding,
    encoder: Encoder,
    latent: LatentBlock,
    decoder: Decoder,
    logits: Linear,
    duration: Option<Linear>,
}

impl VaeModel {
    /// Builds a freshly initialised model; `seed` drives initialisation.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, "init", 0);
        let mut store = ParamStore::new();
        let s = config.block_size;
        let n = config.blocks;
        let len = config.seq_len();
        let embed = match config.encoding {
            EncodingKind::Discrete => Embedding::new(&mut store, "embed", vocab::ACTIVITIES, s, &mut r),
            EncodingKind::Continuous => Embedding::new(&mut store, "embed", vocab::SIZE, s - 1, &mut r),
        };
        let dense = |store: &mut ParamStore, name: &str, i: usize, o: usize, r: &mut ChaCha8Rng| DenseBlock {
            lin: Linear::new(store, &format!("{name}.lin"), i, o, r),
            bn: Some(BatchNorm1d::new(store, &format!("{name}.bn"), o)),
        };
        let (encoder, feature) = match config.architecture {
            Architecture::Ff => {
                let blocks = (0..n)
                    .map(|i| dense(&mut store, &format!("enc.{i}"), if i == 0 { len * s } else { s }, s, &mut r))
                    .collect();
                (Encoder::Ff(blocks), s)
            }
            Architecture::Cnn => {
                let (lengths, pads) = conv_lengths(len, n);
                let blocks = pads
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| ConvBlock {
                        conv: Conv1d::new(&mut store, &format!("enc.{i}.conv"), s, s, KERNEL, STRIDE, p, &mut r),
                        bn: BatchNorm1d::new(&mut store, &format!("enc.{i}.bn"), s),
                    })
                    .collect();
                (Encoder::Cnn(blocks), s * lengths[n])
            }
            Architecture::Rnn => (Encoder::Rnn(Lstm::new(&mut store, "enc.lstm", s, s, n, &mut r)), 2 * n * s),
        };
        let latent = LatentBlock {
            mu: Linear::new(&mut store, "latent.mu", feature, config.latent, &mut r),
            logvar: Linear::new(&mut store, "latent.logvar", feature, config.latent, &mut r),
            resize: Linear::new(&mut store, "latent.resize", config.latent, feature, &mut r),
        };
        let decoder = match config.architecture {
            Architecture::Ff => {
                let blocks = (0..n - 1).map(|i| dense(&mut store, &format!("dec.{i}"), s, s, &mut r)).collect();
                let out = Linear::new(&mut store, "dec.out", s, len * s, &mut r);
                Decoder::Ff { blocks, out }
            }
            Architecture::Cnn => {
                let (lengths, pads) = conv_lengths(len, n);
                let mut blocks = Vec::with_capacity(n);
                for i in (0..n).rev() {
                    blocks.push(DeconvBlock {
                        deconv: ConvTranspose1d::new(&mut store, &format!("dec.{i}.deconv"), s, s, KERNEL, STRIDE, pads[i], &mut r),
                        bn: (i > 0).then(|| BatchNorm1d::new(&mut store, &format!("dec.{i}.bn"), s)),
                        out_pad: out_padding(lengths[i], lengths[i + 1], pads[i])?,
                    });
                }
                Decoder::Cnn {
                    blocks,
                    channels: s,
                    len: lengths[n],
                }
            }
            Architecture::Rnn => Decoder::Rnn(Lstm::new(&mut store, "dec.lstm", s, s, n, &mut r)),
        };
        let logits = Linear::new(&mut store, "head.logits", s, config.classes(), &mut r);
        let duration = (config.encoding == EncodingKind::Continuous)
            .then(|| Linear::new(&mut store, "head.duration", s, 1, &mut r));
        Ok(Self {
            config,
            store,
            embed,
            encoder,
            latent,
            decoder,
            logits,
            duration,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    fn activate(&self, g: &mut Graph, bn: Option<&BatchNorm1d>, x: Var, dropout: bool) -> Result<Var> {
        let x = match bn {
            Some(bn) => bn.forward(g, &self.store, x)?,
            None => x,
        };
        let x = g.leaky_relu(x, self.config.leaky_slope as f32);
        Ok(if dropout { g.dropout(x, self.config.dropout as f32) } else { x })
    }

    /// Embeds `n` tokens (with durations for continuous models) as `[n, S]`.
    fn embed_tokens(&self, g: &mut Graph, ids: &[usize], durations: &[f32]) -> Result<Var> {
        let e = self.embed.forward(g, &self.store, ids)?;
        match self.config.encoding {
            EncodingKind::Discrete => Ok(e),
            EncodingKind::Continuous => {
                let d = g.constant(Tensor::new(vec![ids.len(), 1], durations.to_vec())?);
                Ok(g.concat_cols(&[e, d])?)
            }
        }
    }

    /// `[B, S]` hidden state to logits `[B, C]` and durations `[B, 1]`.
    fn heads(&self, g: &mut Graph, h: Var) -> Result<(Var, Option<Var>)> {
        let logits = self.logits.forward(g, &self.store, h)?;
        let durations = match &self.duration {
            Some(lin) => {
                let d = lin.forward(g, &self.store, h)?;
                Some(g.sigmoid(d))
            }
            None => None,
        };
        Ok((logits, durations))
    }

    /// Encodes a batch into `(μ, log σ²)`, each `[B, latent]`.
    pub fn encode(&self, g: &mut Graph, batch: &Batch) -> Result<(Var, Var)> {
        let (b, l, s) = (batch.size, batch.len, self.config.block_size);
        let x = self.embed_tokens(g, &batch.ids, &batch.durations)?;
        let x = g.reshape(x, &[b, l, s])?;
        let features = match &self.encoder {
            Encoder::Ff(blocks) => {
                let mut h = g.reshape(x, &[b, l * s])?;
                for blk in blocks {
                    h = blk.lin.forward(g, &self.store, h)?;
                    h = self.activate(g, blk.bn.as_ref(), h, true)?;
                }
                h
            }
            Encoder::Cnn(blocks) => {
                let mut h = g.swap_last(x)?;
                for blk in blocks {
                    h = blk.conv.forward(g, &self.store, h)?;
                    h = self.activate(g, Some(&blk.bn), h, true)?;
                }
                let n: usize = g.shape(h)[1..].iter().product();
                g.reshape(h, &[b, n])?
            }
            Encoder::Rnn(lstm) => {
                let zero = lstm.zero_state(g, b);
                let (_, finals) = lstm.run(g, &self.store, x, &zero)?;
                let parts: Vec<Var> = finals.iter().flat_map(|&(h, c)| [h, c]).collect();
                g.concat_cols(&parts)?
            }
        };
        let mu = self.latent.mu.forward(g, &self.store, features)?;
        let logvar = self.latent.logvar.forward(g, &self.store, features)?;
        Ok((mu, logvar))
    }

    /// `z = μ + exp(½·log σ²) ⊙ ε`.
    pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, eps: Tensor) -> Result<Var> {
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);
        let e = g.constant(eps);
        let noise = g.mul(sigma, e)?;
        Ok(g.add(mu, noise)?)
    }

    /// Decodes latent vectors `z [B, latent]`. `targets` enables teacher
    /// forcing for recurrent decoders when the graph is in training mode.
    pub fn decode_graph(
        &self,
        g: &mut Graph,
        z: Var,
        targets: Option<(&Batch, &mut ChaCha8Rng)>,
    ) -> Result<(Var, Option<Var>)> {
        let b = g.shape(z)[0];
        let (l, s) = (self.config.seq_len(), self.config.block_size);
        let h = self.latent.resize.forward(g, &self.store, z)?;
        let hidden = match &self.decoder {
            Decoder::Ff { blocks, out } => {
                let mut h = h;
                for blk in blocks {
                    h = blk.lin.forward(g, &self.store, h)?;
                    h = self.activate(g, blk.bn.as_ref(), h, true)?;
                }
                let h = out.forward(g, &self.store, h)?;
                let h = self.activate(g, None, h, false)?;
                g.reshape(h, &[b, l, s])?
            }
            Decoder::Cnn { blocks, channels, len } => {
                let mut h = g.reshape(h, &[b, *channels, *len])?;
                for blk in blocks {
                    h = blk.deconv.forward(g, &self.store, h, blk.out_pad)?;
                    h = self.activate(g, blk.bn.as_ref(), h, blk.bn.is_some())?;
                }
                g.swap_last(h)?
            }
            Decoder::Rnn(lstm) => return self.decode_recurrent(g, lstm, h, targets),
        };
        let logits = self.logits.forward(g, &self.store, hidden)?;
        let durations = match &self.duration {
            Some(lin) => {
                let d = lin.forward(g, &self.store, hidden)?;
                Some(g.sigmoid(d))
            }
            None => None,
        };
        Ok((logits, durations))
    }

    fn decode_recurrent(
        &self,
        g: &mut Graph,
        lstm: &Lstm,
        state: Var,
        mut targets: Option<(&Batch, &mut ChaCha8Rng)>,
    ) -> Result<(Var, Option<Var>)> {
        let b = g.shape(state)[0];
        let (l, s) = (self.config.seq_len(), self.config.block_size);
        let mut st = Vec::with_capacity(lstm.cells.len());
        for i in 0..lstm.cells.len() {
            let h = g.slice_cols(state, 2 * i * s, s)?;
            let c = g.slice_cols(state, 2 * i * s + s, s)?;
            st.push((h, c));
        }
        let continuous = self.config.encoding == EncodingKind::Continuous;
        let mut input = if continuous {
            self.embed_tokens(g, &vec![vocab::SOS; b], &vec![0.0; b])?
        } else {
            g.constant(Tensor::zeros(&[b, s]))
        };
        let forcing = g.is_training() && self.config.teacher_forcing > 0.0;
        let mut logit_steps = Vec::with_capacity(l);
        let mut dur_steps = Vec::with_capacity(l);
        for t in 0..l {
            let h = lstm.step(g, &self.store, input, &mut st)?;
            let (logits, dur) = self.heads(g, h)?;
            logit_steps.push(logits);
            if let Some(d) = dur {
                dur_steps.push(d);
            }
            if t + 1 == l {
                break;
            }
            let forced = match (&mut targets, forcing) {
                (Some((_, r)), true) => r.random::<f64>() < self.config.teacher_forcing,
                _ => false,
            };
            let (ids, durs): (Vec<usize>, Vec<f32>) = match (&targets, forced) {
                (Some((batch, _)), true) => {
                    let ids = (0..b).map(|i| batch.ids[i * l + t]).collect();
                    let durs = if continuous { (0..b).map(|i| batch.durations[i * l + t]).collect() } else { Vec::new() };
                    (ids, durs)
                }
                _ => {
                    let ids = g.value(logits).argmax_rows();
                    let durs = dur.map(|d| g.value(d).data().to_vec()).unwrap_or_default();
                    (ids, durs)
                }
            };
            input = self.embed_tokens(g, &ids, &durs)?;
        }
        let stack3 = |g: &mut Graph, steps: &[Var]| -> Result<Var> { Ok(g.stack_steps(steps)?) };
        let logits = stack3(g, &logit_steps)?;
        let durations = if dur_steps.is_empty() { None } else { Some(stack3(g, &dur_steps)?) };
        Ok((logits, durations))
    }

    /// Full pass for training or validation: encode, sample `z` with the
    /// supplied noise `eps [B, latent]`, decode.
    pub fn forward(&self, g: &mut Graph, batch: &Batch, eps: Tensor, tf: &mut ChaCha8Rng) -> Result<Forward> {
        let (mu, logvar) = self.encode(g, batch)?;
        let z = Self::reparameterize(g, mu, logvar, eps)?;
        let (logits, durations) = self.decode_graph(g, z, Some((batch, tf)))?;
        Ok(Forward {
            logits,
            durations,
            mu,
            logvar,
        })
    }

    /// Reconstruction plus weighted KL loss for a forward pass.
    pub fn loss(&self, g: &mut Graph, fwd: &Forward, batch: &Batch) -> Result<(Var, LossParts)> {
        let rows = batch.size * batch.len;
        let c = self.config.classes();
        let logits = g.reshape(fwd.logits, &[rows, c])?;
        let logp = g.log_softmax(logits);
        let ce = g.nll(logp, &batch.ids)?;
        let kl = kl_divergence(g, fwd.mu, fwd.logvar)?;
        let weighted_kl = g.scale(kl, self.config.beta as f32);
        let mut total = g.add(ce, weighted_kl)?;
        let mut mse_value = 0.0;
        if let Some(d) = fwd.durations {
            let mse = duration_mse(g, d, &batch.durations)?;
            mse_value = f64::from(g.value(mse).item());
            let weighted = g.scale(mse, self.config.alpha() as f32);
            total = g.add(total, weighted)?;
        }
        let parts = LossParts {
            total: f64::from(g.value(total).item()),
            ce: f64::from(g.value(ce).item()),
            mse: mse_value,
            kl: f64::from(g.value(kl).item()),
        };
        Ok((total, parts))
    }

    /// Deterministic argmax decoding of latent vectors `z [B, latent]`.
    pub fn decode_latent(&self, z: &Tensor) -> Result<RawDecode> {
        let mut g = Graph::new(Mode::Eval, rng::stream(0, "unused", 0));
        let zv = g.constant(z.clone());
        let (logits, durations) = self.decode_graph(&mut g, zv, None)?;
        let b = z.shape()[0];
        Ok(RawDecode {
            size: b,
            len: self.config.seq_len(),
            ids: g.value(logits).argmax_rows(),
            durations: durations.map(|d| g.value(d).data().to_vec()).unwrap_or_default(),
        })
    }

    /// Decodes latent vectors into schedules; degenerate rows stay errors.
    pub fn decode(&self, z: &Tensor) -> Result<Vec<std::result::Result<Schedule, EncodingError>>> {
        let raw = self.decode_latent(z)?;
        Ok((0..raw.size).map(|i| raw.schedule(i, self.config.step)).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(self.config.to_toml(), &self.store)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = ckpt.header.parse()?;
        let mut model = Self::new(config, 0)?;
        ckpt.load_into(&mut model.store).map_err(Error::Checkpoint)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_checkpoint(&mut w, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let ckpt = read_checkpoint(&mut r).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&ckpt).map_err(|e| e.context(path.display().to_string()))
    }
}

/// `½ Σ_d (μ² + exp(lv) − 1 − lv)`, summed over latent dimensions and
/// averaged over the batch.
pub fn kl_divergence(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    let b = g.shape(mu)[0].max(1);
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar);
    let t = g.add(mu2, var)?;
    let t = g.sub(t, logvar)?;
    let t = g.add_scalar(t, -1.0);
    let s = g.sum(t);
    Ok(g.scale(s, 0.5 / b as f32))
}

/// Mean squared error between predicted `[B, L, 1]` and target durations.
pub fn duration_mse(g: &mut Graph, predicted: Var, target: &[f32]) -> Result<Var> {
    let shape = g.shape(predicted).to_vec();
    let t = g.constant(Tensor::new(shape, target.to_vec())?);
    let diff = g.sub(predicted, t)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}
