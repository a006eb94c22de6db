//! Byte-level tokenizer and a desk-scale decoder-only transformer exposing
//! per-layer hidden states and per-layer trainability flags.

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self as k, Tape, Tensor, Var};
use crate::seeds::derive_seed;

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-5;

/// How a layer's token matrix is reduced to a single d-vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Last token's hidden state.
    Lt,
    /// Column-wise sum over all tokens.
    Sat,
    /// Column-wise mean over all tokens.
    Avt,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lt" => Ok(Strategy::Lt),
            "sat" => Ok(Strategy::Sat),
            "avt" => Ok(Strategy::Avt),
            other => Err(Error::InvalidArgument(format!(
                "unknown probing strategy '{other}' (expected lt|sat|avt)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Lt => "lt",
            Strategy::Sat => "sat",
            Strategy::Avt => "avt",
        }
    }
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

/// Byte-level tokenizer: token id = byte value, plus one padding token.
/// Encoding and decoding round-trip exactly for any byte string.
#[derive(Debug, Clone, Default)]
pub struct Tokenizer;

impl Tokenizer {
    pub const PAD: u32 = 256;

    /// 256 byte tokens plus the padding token.
    pub fn vocab_size(&self) -> usize {
        257
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    pub fn decode(&self, tokens: &[u32]) -> Vec<u8> {
        tokens
            .iter()
            .filter(|&&t| t < 256)
            .map(|&t| t as u8)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Model configuration and parameters
// ---------------------------------------------------------------------------

/// Transformer hyperparameters. Desk-scale defaults keep CPU runs at
/// minutes scale while leaving layer selection non-trivial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub context: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 8,
            dim: 64,
            heads: 4,
            context: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.heads == 0 || self.context == 0 {
            return Err(Error::InvalidArgument(
                "model dimensions must be positive".into(),
            ));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "head count {} must divide hidden dim {}",
                self.heads, self.dim
            )));
        }
        Ok(())
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.dim
    }
}

/// Tensor names within one transformer layer, in checkpoint order.
pub const LAYER_TENSOR_NAMES: [&str; 10] = [
    "w_q", "w_k", "w_v", "w_o", "w_ff1", "w_ff2", "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta",
];

/// Parameters of one pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub w_ff1: Tensor,
    pub w_ff2: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

impl LayerParams {
    fn init(config: &ModelConfig, rng: &mut StdRng) -> Self {
        let d = config.dim;
        let ff = config.ff_dim();
        let wb = 1.0 / (d as f64).sqrt();
        let fb = 1.0 / (ff as f64).sqrt();
        LayerParams {
            w_q: Tensor::rand_uniform(vec![d, d], -wb, wb, rng),
            w_k: Tensor::rand_uniform(vec![d, d], -wb, wb, rng),
            w_v: Tensor::rand_uniform(vec![d, d], -wb, wb, rng),
            w_o: Tensor::rand_uniform(vec![d, d], -wb, wb, rng),
            w_ff1: Tensor::rand_uniform(vec![d, ff], -wb, wb, rng),
            w_ff2: Tensor::rand_uniform(vec![ff, d], -fb, fb, rng),
            ln1_gamma: Tensor::filled(vec![1, d], 1.0),
            ln1_beta: Tensor::zeros(vec![1, d]),
            ln2_gamma: Tensor::filled(vec![1, d], 1.0),
            ln2_beta: Tensor::zeros(vec![1, d]),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 10] {
        [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("w_ff1", &self.w_ff1),
            ("w_ff2", &self.w_ff2),
            ("ln1_gamma", &self.ln1_gamma),
            ("ln1_beta", &self.ln1_beta),
            ("ln2_gamma", &self.ln2_gamma),
            ("ln2_beta", &self.ln2_beta),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 10] {
        [
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
            ("w_ff1", &mut self.w_ff1),
            ("w_ff2", &mut self.w_ff2),
            ("ln1_gamma", &mut self.ln1_gamma),
            ("ln1_beta", &mut self.ln1_beta),
            ("ln2_gamma", &mut self.ln2_gamma),
            ("ln2_beta", &mut self.ln2_beta),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Per-layer hidden-state matrices from one forward pass: the input
/// representation plus one `n x d` matrix per layer.
#[derive(Debug, Clone)]
pub struct LayerRepresentations {
    pub input: Tensor,
    pub layers: Vec<Tensor>,
}

impl LayerRepresentations {
    pub fn seq_len(&self) -> usize {
        self.input.rows()
    }
}

/// Leaf variables of the layers registered on a tape.
pub struct LayerVars {
    vars: Vec<[Var; 10]>,
}

impl LayerVars {
    /// Tensor leaves of 1-based layer `layer`, ordered as
    /// [`LAYER_TENSOR_NAMES`].
    pub fn layer(&self, layer: usize) -> &[Var; 10] {
        &self.vars[layer - 1]
    }
}

// ---------------------------------------------------------------------------
// The model
// ---------------------------------------------------------------------------

/// A decoder-only transformer with per-layer trainability flags.
///
/// Layers are addressed 1-based everywhere in the public API, matching how
/// selection results and reports number them.
#[derive(Debug, Clone)]
pub struct LayeredModel {
    config: ModelConfig,
    tokenizer: Tokenizer,
    embedding: Tensor,
    positional: Tensor,
    layers: Vec<LayerParams>,
    trainable: Vec<bool>,
}

impl LayeredModel {
    /// Seeded construction; the same seed yields a bitwise-identical model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let tokenizer = Tokenizer;
        let mut rng = StdRng::seed_from_u64(derive_seed(seed, "model-init"));
        let eb = 1.0 / (config.dim as f64).sqrt();
        let embedding = Tensor::rand_uniform(
            vec![tokenizer.vocab_size(), config.dim],
            -eb,
            eb,
            &mut rng,
        );
        let positional = Tensor::rand_uniform(vec![config.context, config.dim], -0.02, 0.02, &mut rng);
        let layers = (0..config.layers)
            .map(|_| LayerParams::init(&config, &mut rng))
            .collect();
        Ok(LayeredModel {
            trainable: vec![true; config.layers],
            config,
            tokenizer,
            embedding,
            positional,
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn num_layers(&self) -> usize {
        self.config.layers
    }

    pub fn trainable_mask(&self) -> &[bool] {
        &self.trainable
    }

    /// Layers currently marked trainable, 1-based ascending.
    pub fn trainable_layers(&self) -> Vec<usize> {
        self.trainable
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| t.then_some(i + 1))
            .collect()
    }

    pub fn layer_params(&self, layer: usize) -> &LayerParams {
        &self.layers[layer - 1]
    }

    pub fn layer_params_mut(&mut self, layer: usize) -> &mut LayerParams {
        &mut self.layers[layer - 1]
    }

    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }

    pub fn positional(&self) -> &Tensor {
        &self.positional
    }

    pub(crate) fn restore_from_parts(
        config: ModelConfig,
        embedding: Tensor,
        positional: Tensor,
        layers: Vec<LayerParams>,
        trainable: Vec<bool>,
    ) -> Self {
        LayeredModel {
            config,
            tokenizer: Tokenizer,
            embedding,
            positional,
            layers,
            trainable,
        }
    }

    /// Mark exactly the given 1-based layers trainable. The embedding and
    /// positional tables stay frozen unconditionally.
    pub fn set_trainable(&mut self, layers: &[usize]) -> Result<()> {
        for &l in layers {
            if l == 0 || l > self.config.layers {
                return Err(Error::InvalidArgument(format!(
                    "layer {l} out of range 1..={}",
                    self.config.layers
                )));
            }
        }
        self.trainable = vec![false; self.config.layers];
        for &l in layers {
            self.trainable[l - 1] = true;
        }
        Ok(())
    }

    /// Tokenize text, keeping the suffix when it exceeds the context window.
    /// Empty input maps to a single padding token.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids = self.tokenizer.encode(text);
        if ids.is_empty() {
            return vec![Tokenizer::PAD];
        }
        if ids.len() > self.config.context {
            ids.drain(..ids.len() - self.config.context);
        }
        ids
    }

    /// Token embeddings plus positional encodings: row i is `E[t_i] + P[i]`.
    pub fn embed(&self, tokens: &[u32]) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("cannot embed an empty sequence".into()));
        }
        if tokens.len() > self.config.context {
            return Err(Error::InvalidArgument(format!(
                "sequence length {} exceeds context {}",
                tokens.len(),
                self.config.context
            )));
        }
        let d = self.config.dim;
        let mut data = Vec::with_capacity(tokens.len() * d);
        for (pos, &t) in tokens.iter().enumerate() {
            let t = t as usize;
            if t >= self.tokenizer.vocab_size() {
                return Err(Error::InvalidArgument(format!(
                    "token id {t} outside vocabulary of {}",
                    self.tokenizer.vocab_size()
                )));
            }
            let e_row = self.embedding.row(t);
            let p_row = self.positional.row(pos);
            data.extend(e_row.iter().zip(p_row).map(|(e, p)| e + p));
        }
        Ok(Tensor::unchecked(vec![tokens.len(), d], data))
    }

    fn attention(&self, x: &Tensor, layer: &LayerParams) -> Tensor {
        let heads = self.config.heads;
        let hd = self.config.dim / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let h = k::layer_norm_rows(x, &layer.ln1_gamma, &layer.ln1_beta, LN_EPS);
        let q = k::matmul(&h, &layer.w_q);
        let key = k::matmul(&h, &layer.w_k);
        let v = k::matmul(&h, &layer.w_v);
        let mut head_outputs = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = k::slice_cols(&q, head * hd, hd);
            let kh = k::slice_cols(&key, head * hd, hd);
            let vh = k::slice_cols(&v, head * hd, hd);
            let scores = k::scale(&k::matmul(&qh, &k::transpose(&kh)), scale);
            let weights = k::causal_softmax(&scores);
            head_outputs.push(k::matmul(&weights, &vh));
        }
        let refs: Vec<&Tensor> = head_outputs.iter().collect();
        let merged = k::concat_cols(&refs);
        k::matmul(&merged, &layer.w_o)
    }

    fn feed_forward(&self, x: &Tensor, layer: &LayerParams) -> Tensor {
        let h = k::layer_norm_rows(x, &layer.ln2_gamma, &layer.ln2_beta, LN_EPS);
        let f = k::gelu(&k::matmul(&h, &layer.w_ff1));
        k::matmul(&f, &layer.w_ff2)
    }

    /// One pre-norm block: attention and feed-forward, each behind a
    /// residual connection. The block output is the layer's hidden state.
    fn block(&self, x: &Tensor, layer: &LayerParams) -> Tensor {
        let x = k::add(x, &self.attention(x, layer));
        k::add(&x, &self.feed_forward(&x, layer))
    }

    /// Full forward pass returning the input representation and every
    /// layer's hidden-state matrix. Deterministic; never mutates the model.
    pub fn forward_all_layers(&self, tokens: &[u32]) -> Result<LayerRepresentations> {
        let input = self.embed(tokens)?;
        let mut layers = Vec::with_capacity(self.config.layers);
        let mut x = input.clone();
        for layer in &self.layers {
            x = self.block(&x, layer);
            layers.push(x.clone());
        }
        Ok(LayerRepresentations { input, layers })
    }

    // -- recorded forward for training ---------------------------------------

    /// Register layers `1..=upto` as tape leaves. Trainability follows the
    /// model's mask; the embedded input is recorded as a frozen leaf by
    /// [`Self::embed_on_tape`].
    pub fn register_layers(&self, tape: &mut Tape, upto: usize) -> LayerVars {
        let mut vars = Vec::with_capacity(upto);
        for (idx, layer) in self.layers.iter().take(upto).enumerate() {
            let rg = self.trainable[idx];
            let leaves = layer
                .tensors()
                .map(|(_, t)| tape.leaf(t.clone().with_requires_grad(rg)));
            vars.push(leaves);
        }
        LayerVars { vars }
    }

    /// Embed tokens and record the result as a frozen leaf (the embedding
    /// and positional tables never receive gradients).
    pub fn embed_on_tape(&self, tape: &mut Tape, tokens: &[u32]) -> Result<Var> {
        let embedded = self.embed(tokens)?;
        Ok(tape.leaf(embedded))
    }

    fn block_on_tape(&self, tape: &mut Tape, x: Var, leaves: &[Var; 10]) -> Var {
        let heads = self.config.heads;
        let hd = self.config.dim / heads;
        let att_scale = 1.0 / (hd as f64).sqrt();
        let [w_q, w_k, w_v, w_o, w_ff1, w_ff2, ln1_g, ln1_b, ln2_g, ln2_b] = *leaves;

        let h = tape.layer_norm(x, ln1_g, ln1_b, LN_EPS);
        let q = tape.matmul(h, w_q);
        let key = tape.matmul(h, w_k);
        let v = tape.matmul(h, w_v);
        let mut head_outputs = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = tape.slice_cols(q, head * hd, hd);
            let kh = tape.slice_cols(key, head * hd, hd);
            let vh = tape.slice_cols(v, head * hd, hd);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scaled = tape.scale(scores, att_scale);
            let weights = tape.causal_softmax(scaled);
            head_outputs.push(tape.matmul(weights, vh));
        }
        let merged = tape.concat_cols(&head_outputs);
        let attn = tape.matmul(merged, w_o);
        let x = tape.add(x, attn);

        let h2 = tape.layer_norm(x, ln2_g, ln2_b, LN_EPS);
        let f1 = tape.matmul(h2, w_ff1);
        let act = tape.gelu(f1);
        let f2 = tape.matmul(act, w_ff2);
        tape.add(x, f2)
    }

    /// Recorded forward pass through layers `1..=upto`; returns each layer's
    /// hidden-state variable.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        leaves: &LayerVars,
        upto: usize,
    ) -> Result<Vec<Var>> {
        let mut x = self.embed_on_tape(tape, tokens)?;
        let mut outputs = Vec::with_capacity(upto);
        for layer in 1..=upto {
            x = self.block_on_tape(tape, x, leaves.layer(layer));
            outputs.push(x);
        }
        Ok(outputs)
    }

    // -- parameter bookkeeping -------------------------------------------------

    pub fn layer_param_count(&self) -> usize {
        self.layers[0].param_count()
    }

    /// Total parameter count including the frozen embedding tables.
    pub fn total_param_count(&self) -> usize {
        self.embedding.len()
            + self.positional.len()
            + self.layers.iter().map(LayerParams::param_count).sum::<usize>()
    }

    /// All tensors in checkpoint order with their persistent names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("embedding".to_string(), &self.embedding),
            ("positional".to_string(), &self.positional),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.tensors() {
                out.push((format!("layer.{}.{}", i + 1, name), t));
            }
        }
        out
    }
}

/// Reduce one layer's hidden-state matrix to a d-vector.
pub fn extract_representation(
    reps: &LayerRepresentations,
    layer: usize,
    strategy: Strategy,
) -> Result<Vec<f64>> {
    if layer == 0 || layer > reps.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} out of range 1..={}",
            reps.layers.len()
        )));
    }
    let h = &reps.layers[layer - 1];
    Ok(reduce_matrix(h, strategy))
}

pub(crate) fn reduce_matrix(h: &Tensor, strategy: Strategy) -> Vec<f64> {
    let n = h.rows();
    match strategy {
        Strategy::Lt => h.row(n - 1).to_vec(),
        Strategy::Sat => k::sum_rows(h).data().to_vec(),
        Strategy::Avt => k::scale(&k::sum_rows(h), 1.0 / n as f64).data().to_vec(),
    }
}

/// Reduce a hidden-state variable on a tape (training path).
pub fn reduce_on_tape(tape: &mut Tape, h: Var, strategy: Strategy) -> Var {
    let n = tape.value(h).rows();
    match strategy {
        Strategy::Lt => tape.select_row(h, n - 1),
        Strategy::Sat => tape.sum_rows(h),
        Strategy::Avt => {
            let s = tape.sum_rows(h);
            tape.scale(s, 1.0 / n as f64)
        }
    }
}
