//! Body-part-partitioned cross-attention transformer.
//!
//! A batch of windows `[B × l × d]` is split by body part, each part is
//! embedded to `d_model` and given a sinusoidal position code, every part
//! then serves as key/value for one attention branch whose queries come from
//! the designated query part. Branch outputs are averaged, passed through
//! feed-forward Add&Norm blocks and mean-pooled over time into one
//! representation vector per window.

use cladnet_core::nn::{sinusoidal_positions, LAYER_NORM_EPS};
use cladnet_core::{Binding, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BodyPartSpec;
use crate::error::{Error, Result};

/// Disjoint groups of channel indices covering every channel, plus the
/// index of the group that provides attention queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyPartition {
    pub names: Vec<String>,
    pub groups: Vec<Vec<usize>>,
    pub query: usize,
    pub channels: usize,
}

impl BodyPartition {
    pub fn new(channels: usize, groups: Vec<Vec<usize>>, query: usize) -> Result<Self> {
        let names = (0..groups.len()).map(|i| format!("part{i}")).collect();
        Self::with_names(channels, names, groups, query)
    }

    pub fn with_names(channels: usize, names: Vec<String>, groups: Vec<Vec<usize>>, query: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Config("a body partition needs at least one group".into()));
        }
        if names.len() != groups.len() {
            return Err(Error::Config("one name per body-part group is required".into()));
        }
        if query >= groups.len() {
            return Err(Error::Config(format!(
                "query part {query} out of range for {} groups",
                groups.len()
            )));
        }
        let mut seen = vec![false; channels];
        for (name, g) in names.iter().zip(&groups) {
            if g.is_empty() {
                return Err(Error::Config(format!("body part {name:?} has no channels")));
            }
            for &c in g {
                match seen.get_mut(c) {
                    None => return Err(Error::Config(format!("body part {name:?} names channel {c} of {channels}"))),
                    Some(true) => return Err(Error::Config(format!("channel {c} belongs to more than one body part"))),
                    Some(s) => *s = true,
                }
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("channel {c} is not assigned to any body part")));
        }
        Ok(Self {
            names,
            groups,
            query,
            channels,
        })
    }

    /// Resolves named body parts against the dataset's channel names.
    pub fn from_specs(channel_names: &[String], parts: &[BodyPartSpec], query: &str) -> Result<Self> {
        let mut groups = Vec::with_capacity(parts.len());
        for p in parts {
            let g = p
                .channels
                .iter()
                .map(|name| {
                    channel_names
                        .iter()
                        .position(|c| c == name)
                        .ok_or_else(|| Error::Config(format!("body part {:?} names unknown channel {name:?}", p.name)))
                })
                .collect::<Result<Vec<_>>>()?;
            groups.push(g);
        }
        let q = parts
            .iter()
            .position(|p| p.name == query)
            .ok_or_else(|| Error::Config(format!("query part {query:?} is not a body part")))?;
        Self::with_names(
            channel_names.len(),
            parts.iter().map(|p| p.name.clone()).collect(),
            groups,
            q,
        )
    }

    /// One group holding every channel.
    pub fn whole(channels: usize) -> Self {
        Self {
            names: vec!["all".into()],
            groups: vec![(0..channels).collect()],
            query: 0,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Splits `[rows × d]` into one `[rows × d_i]` matrix per group.
    pub fn split<T: Scalar>(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (rows, d) = x.dims2("partition")?;
        if d != self.channels {
            return Err(Error::Config(format!(
                "window has {d} channels, partition covers {}",
                self.channels
            )));
        }
        Ok(self
            .groups
            .iter()
            .map(|g| {
                let data = (0..rows).flat_map(|r| g.iter().map(move |&c| x.at2(r, c))).collect();
                Tensor::new([rows, g.len()], data).expect("group width")
            })
            .collect())
    }

    /// Inverse of [`split`](Self::split).
    pub fn merge<T: Scalar>(&self, parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let rows = parts.first().map_or(0, |p| p.shape()[0]);
        let mut out = Tensor::zeros([rows, self.channels]);
        for (g, p) in self.groups.iter().zip(parts) {
            for r in 0..rows {
                for (j, &c) in g.iter().enumerate() {
                    out.data_mut()[r * self.channels + c] = p.at2(r, j);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    Cross,
    #[serde(rename = "self")]
    SelfAttention,
}

impl AttentionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cross => "cross",
            Self::SelfAttention => "self",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Hidden width of each feed-forward block; `2 · d_model` when unset.
    pub ff_hidden: Option<usize>,
    pub dropout: f64,
    pub blocks: usize,
    pub attention: AttentionMode,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            ff_hidden: None,
            dropout: 0.1,
            blocks: 3,
            attention: AttentionMode::Cross,
        }
    }
}

impl TransformerConfig {
    pub fn ff_hidden(&self) -> usize {
        self.ff_hidden.unwrap_or(2 * self.d_model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.ff_hidden() == 0 {
            return Err(Error::Config("transformer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("transformer.dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Forward-pass mode. Dropout is active only in `Train`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchIds {
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub wh: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerIds {
    pub embed: Vec<EmbedIds>,
    pub branches: Vec<BranchIds>,
    pub blocks: Vec<BlockIds>,
}

/// Glorot-uniform matrix.
pub(crate) fn glorot<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn([rows, cols], |_| T::lit(rng.random_range(-a..a)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transformer<T: Scalar> {
    pub config: TransformerConfig,
    pub partition: BodyPartition,
    pub params: ParamStore<T>,
    pub ids: TransformerIds,
}

/// Tape handles produced by one forward pass.
pub struct TransformerOutput {
    /// `[B × d_model]` pooled representations.
    pub r: Var,
    /// `attention[i][h]`: `[B·l × l]` weights of head `h` in branch `i`.
    pub attention: Vec<Vec<Var>>,
}

/// Vars of one attention branch, as bound on a tape.
pub struct BranchVars {
    pub wq: Vec<Var>,
    pub wk: Vec<Var>,
    pub wv: Vec<Var>,
    pub wh: Var,
}

impl<T: Scalar> Transformer<T> {
    pub fn new(config: TransformerConfig, partition: BodyPartition, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let ff = config.ff_hidden();
        let mut params = ParamStore::new();
        let embed = partition
            .names
            .iter()
            .zip(partition.widths())
            .map(|(name, w)| EmbedIds {
                w: params.add(format!("embed.{name}.w"), glorot(w, d, &mut rng)),
                b: params.add(format!("embed.{name}.b"), Tensor::zeros([d])),
            })
            .collect();
        let branches = partition
            .names
            .iter()
            .map(|name| {
                let mut head = |kind: &str, h: usize, rng: &mut ChaCha8Rng| {
                    params.add(format!("branch.{name}.{kind}.{h}"), glorot(d, d, rng))
                };
                let mut wq = Vec::new();
                let mut wk = Vec::new();
                let mut wv = Vec::new();
                for h in 0..config.heads {
                    wq.push(head("wq", h, &mut rng));
                    wk.push(head("wk", h, &mut rng));
                    wv.push(head("wv", h, &mut rng));
                }
                let wh = params.add(format!("branch.{name}.wh"), glorot(config.heads * d, d, &mut rng));
                BranchIds { wq, wk, wv, wh }
            })
            .collect();
        let blocks = (0..config.blocks)
            .map(|k| BlockIds {
                w1: params.add(format!("block.{k}.w1"), glorot(d, ff, &mut rng)),
                b1: params.add(format!("block.{k}.b1"), Tensor::zeros([ff])),
                w2: params.add(format!("block.{k}.w2"), glorot(ff, d, &mut rng)),
                b2: params.add(format!("block.{k}.b2"), Tensor::zeros([d])),
                gain: params.add(format!("block.{k}.ln.gain"), Tensor::ones([d])),
                bias: params.add(format!("block.{k}.ln.bias"), Tensor::zeros([d])),
            })
            .collect();
        Ok(Self {
            config,
            partition,
            params,
            ids: TransformerIds {
                embed,
                branches,
                blocks,
            },
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Runs the network on `x: [B × l × d]` using parameters bound on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, bind: &Binding, x: &Tensor<T>, mut mode: Mode<'_>) -> Result<TransformerOutput> {
        let (batch, len, d) = x.dims3("transformer")?;
        if d != self.partition.channels {
            return Err(Error::Config(format!(
                "window has {d} channels, partition covers {}",
                self.partition.channels
            )));
        }
        let dm = self.config.d_model;
        let flat = tape.constant(x.reshape([batch * len, d])?);
        let pe = tiled_positions::<T>(batch, len, dm);

        let mut z = Vec::with_capacity(self.partition.len());
        for (ids, group) in self.ids.embed.iter().zip(&self.partition.groups) {
            let xi = tape.select_cols(flat, group)?;
            z.push(embed_part(tape, xi, bind.var(ids.w), bind.var(ids.b), &pe)?);
        }

        let mut branch_out = Vec::with_capacity(z.len());
        let mut attention = Vec::with_capacity(z.len());
        for (i, ids) in self.ids.branches.iter().enumerate() {
            let query = match self.config.attention {
                AttentionMode::Cross => z[self.partition.query],
                AttentionMode::SelfAttention => z[i],
            };
            let vars = BranchVars {
                wq: ids.wq.iter().map(|&p| bind.var(p)).collect(),
                wk: ids.wk.iter().map(|&p| bind.var(p)).collect(),
                wv: ids.wv.iter().map(|&p| bind.var(p)).collect(),
                wh: bind.var(ids.wh),
            };
            let (a, w) = cross_attention_branch(tape, query, z[i], &vars, batch, len)?;
            branch_out.push(a);
            attention.push(w);
        }
        let mut u = aggregate(tape, &branch_out)?;

        for ids in &self.ids.blocks {
            let h = tape.matmul(u, bind.var(ids.w1))?;
            let h = tape.add_row(h, bind.var(ids.b1))?;
            let h = tape.relu(h);
            let f = tape.matmul(h, bind.var(ids.w2))?;
            let f = tape.add_row(f, bind.var(ids.b2))?;
            let f = dropout(tape, f, self.config.dropout, &mut mode)?;
            let s = tape.add(u, f)?;
            u = tape.layer_norm(s, bind.var(ids.gain), bind.var(ids.bias), T::lit(LAYER_NORM_EPS))?;
        }

        let r = mean_over_time(tape, u, batch, len)?;
        Ok(TransformerOutput { r, attention })
    }

    /// Eval-mode representations `[B × d_model]` without gradient tracking.
    pub fn represent(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bind = self.params.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &bind, x, Mode::Eval)?;
        Ok(tape.value(out.r).clone())
    }

    /// Representations for many windows, computed in chunks.
    pub fn represent_windows(&self, windows: &[&Tensor<T>], chunk: usize) -> Result<Tensor<T>> {
        let dm = self.config.d_model;
        let mut out = Vec::with_capacity(windows.len() * dm);
        for part in windows.chunks(chunk.max(1)) {
            let x = stack_windows(part)?;
            out.extend_from_slice(self.represent(&x)?.data());
        }
        Ok(Tensor::new([windows.len(), dm], out)?)
    }
}

/// Stacks equally shaped `[l × d]` windows into `[B × l × d]`.
pub fn stack_windows<T: Scalar>(windows: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Data("cannot stack an empty batch".into()))?;
    let (l, d) = first.dims2("stack_windows")?;
    let mut data = Vec::with_capacity(windows.len() * l * d);
    for w in windows {
        if w.shape() != [l, d] {
            return Err(Error::Data(format!(
                "window shape {:?} differs from {:?}",
                w.shape(),
                [l, d]
            )));
        }
        data.extend_from_slice(w.data());
    }
    Ok(Tensor::new([windows.len(), l, d], data)?)
}

fn tiled_positions<T: Scalar>(batch: usize, len: usize, width: usize) -> Tensor<T> {
    let pe = sinusoidal_positions::<T>(len, width);
    let mut data = Vec::with_capacity(batch * pe.len());
    for _ in 0..batch {
        data.extend_from_slice(pe.data());
    }
    Tensor::new([batch * len, width], data).expect("tiled positions")
}

/// `x_i · W + b + PE`, with `PE` already tiled to the rows of `x_i`.
pub fn embed_part<T: Scalar>(tape: &mut Tape<T>, x_i: Var, w: Var, b: Var, pe: &Tensor<T>) -> Result<Var> {
    let z = tape.matmul(x_i, w)?;
    let z = tape.add_row(z, b)?;
    Ok(tape.add_const(z, pe)?)
}

/// One attention branch over a batch: queries from `z_q`, keys and values
/// from `z_i`, both `[B·l × d_model]`. Every head attends with scale
/// `1/√d_model`; heads are concatenated and projected by `W_H`.
///
/// Returns the branch output `[B·l × d_model]` and each head's attention
/// weights `[B·l × l]`.
pub fn cross_attention_branch<T: Scalar>(
    tape: &mut Tape<T>,
    z_q: Var,
    z_i: Var,
    vars: &BranchVars,
    batch: usize,
    len: usize,
) -> Result<(Var, Vec<Var>)> {
    let dm = tape.value(z_q).shape()[1];
    let scale = T::lit(1.0 / (dm as f64).sqrt());
    let mut heads = Vec::with_capacity(vars.wq.len());
    let mut weights = Vec::with_capacity(vars.wq.len());
    for h in 0..vars.wq.len() {
        let q = tape.matmul(z_q, vars.wq[h])?;
        let k = tape.matmul(z_i, vars.wk[h])?;
        let v = tape.matmul(z_i, vars.wv[h])?;
        let q = tape.reshape(q, &[batch, len, dm])?;
        let k = tape.reshape(k, &[batch, len, dm])?;
        let v = tape.reshape(v, &[batch, len, dm])?;
        let s = tape.batch_matmul(q, k, false, true)?;
        let s = tape.scale(s, scale);
        let s = tape.reshape(s, &[batch * len, len])?;
        let p = tape.softmax_rows(s)?;
        weights.push(p);
        let p = tape.reshape(p, &[batch, len, len])?;
        let o = tape.batch_matmul(p, v, false, false)?;
        heads.push(tape.reshape(o, &[batch * len, dm])?);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    Ok((tape.matmul(cat, vars.wh)?, weights))
}

/// Elementwise mean of the branch outputs.
pub fn aggregate<T: Scalar>(tape: &mut Tape<T>, branches: &[Var]) -> Result<Var> {
    let (&first, rest) = branches
        .split_first()
        .ok_or_else(|| Error::Config("aggregate needs at least one branch".into()))?;
    if rest.is_empty() {
        return Ok(first);
    }
    let mut acc = first;
    for &b in rest {
        acc = tape.add(acc, b)?;
    }
    Ok(tape.scale(acc, T::lit(1.0 / branches.len() as f64)))
}

/// Inverted dropout; identity in eval mode or at rate 0.
pub fn dropout<T: Scalar>(tape: &mut Tape<T>, x: Var, rate: f64, mode: &mut Mode<'_>) -> Result<Var> {
    let Mode::Train(rng) = mode else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let shape = tape.value(x).shape().to_vec();
    let mask = Tensor::from_fn(shape, |_| if rng.random::<f64>() < rate { T::zero() } else { keep });
    Ok(tape.mul_const(x, mask)?)
}

/// `[B·l × w] → [B × w]` by averaging each window's rows.
pub fn mean_over_time<T: Scalar>(tape: &mut Tape<T>, u: Var, batch: usize, len: usize) -> Result<Var> {
    let w = tape.value(u).shape()[1];
    let u3 = tape.reshape(u, &[batch, len, w])?;
    let avg = tape.constant(Tensor::full([batch, 1, len], T::lit(1.0 / len as f64)));
    let r = tape.batch_matmul(avg, u3, false, false)?;
    Ok(tape.reshape(r, &[batch, w])?)
}
