//! Bimodal encoder–decoder surrogate with cross-attention fusion, plus
//! the single-encoder and plain-concatenation ablations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{Initializer, ParameterStore};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// One encoder over the two maps stacked as channels.
    #[serde(rename = "i")]
    SingleEncoder,
    /// Two encoders, features concatenated.
    #[serde(rename = "ii")]
    Concat,
    /// Two encoders, features fused by cross-attention.
    #[serde(rename = "iii")]
    Fusion,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::SingleEncoder, Variant::Concat, Variant::Fusion];

    pub fn label(self) -> &'static str {
        match self {
            Variant::SingleEncoder => "i",
            Variant::Concat => "ii",
            Variant::Fusion => "iii",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" => Ok(Variant::SingleEncoder),
            "ii" => Ok(Variant::Concat),
            "iii" => Ok(Variant::Fusion),
            _ => Err(Error::Config(format!("unknown variant `{s}` (expected i, ii or iii)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub heads: usize,
    pub head_dim: usize,
    /// Square input/output side; must be divisible by `2^I`.
    pub resolution: usize,
    /// Share one set of attention weights between both fusion directions.
    pub tied_fusion: bool,
}

impl Default for NetworkConfig {
    /// Variant iii at the desk resolution of 64.
    fn default() -> Self {
        Self::new(Variant::Fusion, 64)
    }
}

impl NetworkConfig {
    pub fn new(variant: Variant, resolution: usize) -> Self {
        let enc = vec![16, 32, 64, 128, 256];
        Self {
            variant,
            decoder_channels: enc.iter().rev().copied().collect(),
            encoder_channels: enc,
            heads: 8,
            head_dim: 32,
            resolution,
            tied_fusion: false,
        }
    }

    /// Small network for tests: `I = J = blocks`, narrow channels.
    pub fn tiny(variant: Variant, resolution: usize, blocks: usize) -> Self {
        let enc: Vec<usize> = (0..blocks).map(|b| 4 << b).collect();
        let top = *enc.last().expect("blocks >= 1");
        Self {
            variant,
            decoder_channels: enc.iter().rev().copied().collect(),
            encoder_channels: enc,
            heads: 2,
            head_dim: top / 2,
            resolution,
            tied_fusion: false,
        }
    }

    pub fn blocks(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn bottleneck_side(&self) -> usize {
        self.resolution >> self.blocks()
    }

    fn top_channels(&self) -> usize {
        *self.encoder_channels.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let i = self.encoder_channels.len();
        if i == 0 || self.decoder_channels.len() != i {
            return bad(format!(
                "need as many decoder blocks as encoder blocks (got {} and {})",
                i,
                self.decoder_channels.len()
            ));
        }
        if self.encoder_channels.iter().chain(&self.decoder_channels).any(|&c| c == 0) {
            return bad("channel counts must be positive".into());
        }
        if self.resolution == 0 || self.resolution % (1 << i) != 0 {
            return bad(format!("resolution {} is not divisible by 2^{i}", self.resolution));
        }
        if self.variant == Variant::Fusion && self.heads * self.head_dim != self.top_channels() {
            return bad(format!(
                "heads × head_dim = {} must equal the last encoder width {}",
                self.heads * self.head_dim,
                self.top_channels()
            ));
        }
        Ok(())
    }
}

/// Network parameters together with the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Element> {
    pub config: NetworkConfig,
    pub params: ParameterStore<T>,
}

/// Which encoder branch to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoder {
    Joint,
    Eps,
    Sigma,
}

impl Encoder {
    fn prefix(self) -> &'static str {
        match self {
            Encoder::Joint => "enc",
            Encoder::Eps => "enc_eps",
            Encoder::Sigma => "enc_sigma",
        }
    }
}

/// Parameters of one cross-attention block, already on a tape.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub query: (Var, Var),
    pub key: (Var, Var),
    pub value: (Var, Var),
    /// Head-merge projection.
    pub merge: (Var, Var),
    /// Output 1×1 convolution.
    pub out: (Var, Var),
    pub norm: (Var, Var),
}

/// Result of [`cross_attention`] with intermediates exposed for inspection.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    /// `[N, heads, T, T]`; rows sum to one.
    pub weights: Var,
    /// Heads merged back to `[N, C, h, w]`, before any output projection.
    pub attended: Var,
    /// After the output projections, before residual and normalisation.
    pub pre_residual: Var,
}

/// Multi-head attention between two feature maps. Tokens are the `h·w`
/// spatial positions and channels are the embedding; queries come from
/// `query_src`, keys and values from `kv_src`, and the residual is taken
/// from `kv_src`.
pub fn cross_attention<T: Element>(
    tape: &mut Tape<'_, T>,
    p: &AttentionParams,
    query_src: Var,
    kv_src: Var,
    heads: usize,
    head_dim: usize,
) -> Result<AttentionOutput> {
    let shape = tape.value(kv_src).shape().to_vec();
    if tape.value(query_src).shape() != shape.as_slice() {
        return Err(Error::shape("cross_attention", "query and key/value maps differ in shape"));
    }
    let (n, c, h, w) = tape.value(kv_src).dims4("cross_attention")?;
    if c != heads * head_dim {
        return Err(Error::shape(
            "cross_attention",
            format!("{c} channels cannot split into {heads} heads of {head_dim}"),
        ));
    }
    let t = h * w;
    let q = tape.conv2d(query_src, p.query.0, p.query.1)?;
    let k = tape.conv2d(kv_src, p.key.0, p.key.1)?;
    let v = tape.conv2d(kv_src, p.value.0, p.value.1)?;
    // [N, m, d, T] splits channels head-major
    let q = tape.reshape(q, &[n, heads, head_dim, t])?;
    let q = tape.transpose_last2(q)?;
    let k = tape.reshape(k, &[n, heads, head_dim, t])?;
    let v = tape.reshape(v, &[n, heads, head_dim, t])?;
    let v = tape.transpose_last2(v)?;
    let logits = tape.matmul(q, k)?;
    let logits = tape.scale(logits, T::from_f64(1.0 / (head_dim as f64).sqrt()));
    let weights = tape.softmax_lastdim(logits);
    let attended = tape.matmul(weights, v)?;
    let attended = tape.transpose_last2(attended)?;
    let attended = tape.reshape(attended, &[n, c, h, w])?;
    let merged = tape.conv2d(attended, p.merge.0, p.merge.1)?;
    let pre_residual = tape.conv2d(merged, p.out.0, p.out.1)?;
    let res = tape.add(pre_residual, kv_src)?;
    // normalise each token's channel vector
    let tokens = tape.reshape(res, &[n, c, t])?;
    let tokens = tape.transpose_last2(tokens)?;
    let normed = tape.layer_norm(tokens, p.norm.0, p.norm.1)?;
    let normed = tape.transpose_last2(normed)?;
    let output = tape.reshape(normed, &[n, c, h, w])?;
    Ok(AttentionOutput {
        output,
        weights,
        attended,
        pre_residual,
    })
}

/// Fused features and both attention blocks' intermediates.
#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub fused: Var,
    /// Keys/values from the permittivity branch.
    pub eps: AttentionOutput,
    /// Keys/values from the conductivity branch.
    pub sigma: AttentionOutput,
}

/// Parameter handles on one tape, looked up by name.
pub struct Bound<'m, T: Element> {
    store: &'m ParameterStore<T>,
    vars: Vec<Var>,
}

impl<'m, T: Element> Bound<'m, T> {
    pub fn new(store: &'m ParameterStore<T>, tape: &mut Tape<'m, T>) -> Self {
        let vars = (0..store.len()).map(|i| tape.param(&store.by_index(i).value, i)).collect();
        Self { store, vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.store
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Invalid(format!("model has no parameter `{name}`")))
    }

    fn pair(&self, prefix: &str) -> Result<(Var, Var)> {
        Ok((self.get(&format!("{prefix}.w"))?, self.get(&format!("{prefix}.b"))?))
    }

    pub fn attention(&self, prefix: &str) -> Result<AttentionParams> {
        Ok(AttentionParams {
            query: self.pair(&format!("{prefix}.q"))?,
            key: self.pair(&format!("{prefix}.k"))?,
            value: self.pair(&format!("{prefix}.v"))?,
            merge: self.pair(&format!("{prefix}.merge"))?,
            out: self.pair(&format!("{prefix}.out"))?,
            norm: (self.get(&format!("{prefix}.ln.g"))?, self.get(&format!("{prefix}.ln.b"))?),
        })
    }
}

struct Builder<T: Element> {
    store: ParameterStore<T>,
    init: Initializer,
}

impl<T: Element> Builder<T> {
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<()> {
        let w = self.init.uniform(vec![c_out, c_in, k, k], c_in * k * k);
        self.store.insert(format!("{name}.w"), w)?;
        self.store.insert(format!("{name}.b"), Tensor::zeros([c_out]))?;
        Ok(())
    }

    fn conv_t(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<()> {
        let w = self.init.uniform(vec![c_in, c_out, k, k], c_in * k * k);
        self.store.insert(format!("{name}.w"), w)?;
        self.store.insert(format!("{name}.b"), Tensor::zeros([c_out]))?;
        Ok(())
    }

    fn encoder(&mut self, prefix: &str, c_in: usize, channels: &[usize]) -> Result<()> {
        let mut c = c_in;
        for (b, &co) in channels.iter().enumerate() {
            self.conv(&format!("{prefix}.{b}.conv1"), c, co, 3)?;
            self.conv(&format!("{prefix}.{b}.conv2"), co, co, 3)?;
            c = co;
        }
        Ok(())
    }

    fn attention(&mut self, prefix: &str, c: usize) -> Result<()> {
        for part in ["q", "k", "v", "merge", "out"] {
            self.conv(&format!("{prefix}.{part}"), c, c, 1)?;
        }
        self.store.insert(format!("{prefix}.ln.g"), Tensor::ones([c]))?;
        self.store.insert(format!("{prefix}.ln.b"), Tensor::zeros([c]))?;
        Ok(())
    }
}

impl<T: Element> Model<T> {
    /// Seeded construction; identical `(config, seed)` give identical weights.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            store: ParameterStore::new(),
            init: Initializer::new(seed),
        };
        let enc = &config.encoder_channels;
        let top = config.top_channels();
        match config.variant {
            Variant::SingleEncoder => b.encoder(Encoder::Joint.prefix(), 2, enc)?,
            Variant::Concat | Variant::Fusion => {
                b.encoder(Encoder::Eps.prefix(), 1, enc)?;
                b.encoder(Encoder::Sigma.prefix(), 1, enc)?;
            }
        }
        if config.variant == Variant::Fusion {
            b.attention("fuse.ca1", top)?;
            if !config.tied_fusion {
                b.attention("fuse.ca2", top)?;
            }
        }
        let bottleneck_in = if config.variant == Variant::SingleEncoder { top } else { 2 * top };
        b.conv("bottleneck.conv", bottleneck_in, top, 3)?;
        b.conv_t("bottleneck.convt", top, config.decoder_channels[0], 3)?;
        let mut c = config.decoder_channels[0];
        for (j, &co) in config.decoder_channels.iter().enumerate() {
            b.conv(&format!("dec.{j}.conv1"), c, co, 3)?;
            b.conv(&format!("dec.{j}.conv2"), co, co, 3)?;
            c = co;
        }
        // a zero head starts every prediction at zero, so early steps fit
        // the signal instead of unlearning random output noise
        b.store.insert("head.w", Tensor::zeros([1, c, 1, 1]))?;
        b.store.insert("head.b", Tensor::zeros([1]))?;
        Ok(Self { config, params: b.store })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn conv_relu(&self, tape: &mut Tape<'_, T>, p: &Bound<'_, T>, x: Var, name: &str) -> Result<Var> {
        let (w, b) = p.pair(name)?;
        tape.conv2d_relu(x, w, b)
    }

    /// `I` blocks of conv–ReLU, conv–ReLU, 2×2 max-pool.
    pub fn encode(&self, tape: &mut Tape<'_, T>, p: &Bound<'_, T>, x: Var, which: Encoder) -> Result<Var> {
        let mut h = x;
        for b in 0..self.config.blocks() {
            h = self.conv_relu(tape, p, h, &format!("{}.{b}.conv1", which.prefix()))?;
            h = self.conv_relu(tape, p, h, &format!("{}.{b}.conv2", which.prefix()))?;
            h = tape.maxpool2(h)?;
        }
        Ok(h)
    }

    /// Cross-attention in both directions, channel-concatenated as
    /// `[A_eps, A_sigma]`.
    pub fn fuse(&self, tape: &mut Tape<'_, T>, p: &Bound<'_, T>, f_eps: Var, f_sigma: Var) -> Result<FusionOutput> {
        let ca1 = p.attention("fuse.ca1")?;
        let ca2 = if self.config.tied_fusion { ca1 } else { p.attention("fuse.ca2")? };
        let (m, d) = (self.config.heads, self.config.head_dim);
        let eps = cross_attention(tape, &ca1, f_sigma, f_eps, m, d)?;
        let sigma = cross_attention(tape, &ca2, f_eps, f_sigma, m, d)?;
        let fused = tape.concat_channels(eps.output, sigma.output)?;
        Ok(FusionOutput { fused, eps, sigma })
    }

    /// Bottleneck and decoder from the (possibly fused) encoder features.
    pub fn decode(&self, tape: &mut Tape<'_, T>, p: &Bound<'_, T>, features: Var) -> Result<Var> {
        let mut h = self.conv_relu(tape, p, features, "bottleneck.conv")?;
        let (w, b) = p.pair("bottleneck.convt")?;
        h = tape.conv_transpose2d(h, w, b)?;
        h = tape.relu(h);
        for j in 0..self.config.decoder_channels.len() {
            let (w, b) = p.pair(&format!("dec.{j}.conv1"))?;
            h = tape.upsample_conv2d_relu(h, w, b)?;
            h = self.conv_relu(tape, p, h, &format!("dec.{j}.conv2"))?;
        }
        let (w, b) = p.pair("head")?;
        tape.conv2d(h, w, b)
    }

    /// `[N,1,R,R]` maps to a `[N,1,R,R]` B-scan image.
    pub fn forward(&self, tape: &mut Tape<'_, T>, p: &Bound<'_, T>, x_eps: Var, x_sigma: Var) -> Result<Var> {
        let r = self.config.resolution;
        for x in [x_eps, x_sigma] {
            let (_, c, h, w) = tape.value(x).dims4("forward")?;
            if (c, h, w) != (1, r, r) {
                return Err(Error::shape("forward", format!("expected [N, 1, {r}, {r}], got {:?}", tape.value(x).shape())));
            }
        }
        if tape.value(x_eps).shape() != tape.value(x_sigma).shape() {
            return Err(Error::shape("forward", "input batches differ"));
        }
        let features = match self.config.variant {
            Variant::SingleEncoder => {
                let x = tape.concat_channels(x_eps, x_sigma)?;
                self.encode(tape, p, x, Encoder::Joint)?
            }
            Variant::Concat => {
                let a = self.encode(tape, p, x_eps, Encoder::Eps)?;
                let b = self.encode(tape, p, x_sigma, Encoder::Sigma)?;
                tape.concat_channels(a, b)?
            }
            Variant::Fusion => {
                let a = self.encode(tape, p, x_eps, Encoder::Eps)?;
                let b = self.encode(tape, p, x_sigma, Encoder::Sigma)?;
                self.fuse(tape, p, a, b)?.fused
            }
        };
        self.decode(tape, p, features)
    }

    /// Gradient-free forward on plain tensors.
    pub fn predict(&self, x_eps: &Tensor<T>, x_sigma: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::no_grad();
        let p = Bound::new(&self.params, &mut tape);
        let a = tape.constant(x_eps);
        let b = tape.constant(x_sigma);
        let y = self.forward(&mut tape, &p, a, b)?;
        Ok(tape.value(y).clone())
    }
}
