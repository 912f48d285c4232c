//! Emission backbones: map a token sequence to an `L × K` matrix of
//! unnormalised label scores.
//!
//! Two kinds are provided. [`LogLinear`] sums hashed sparse features into
//! per-label weights. [`TinyMlp`] averages hashed token embeddings over a
//! small window and feeds them through one `tanh` hidden layer. Both are
//! deterministic functions of their parameters; neither normalises rows,
//! since the chain model is globally normalised.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math::tanh;
use crate::{Error, Matrix, Result};

/// Feature templates and hashing size for the log-linear backbone.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FeatureConfig {
    /// Number of hash buckets.
    pub hash_dim: usize,
    /// Longest prefix/suffix template (0 disables them).
    pub max_affix: usize,
    /// Digit, capitalisation, hyphen and punctuation flags.
    pub shape_flags: bool,
    /// Previous and next lowercased token.
    pub context: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            hash_dim: 1 << 18,
            max_affix: 3,
            shape_flags: true,
            context: true,
        }
    }
}

/// Sizes for the tiny MLP backbone.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MlpConfig {
    /// Embedding rows; tokens are hashed into them so unknown words need no UNK entry.
    pub buckets: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    /// Context half-width of the embedding average.
    pub window: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            buckets: 1 << 12,
            embed_dim: 32,
            hidden: 64,
            window: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum BackboneConfig {
    LogLinear(FeatureConfig),
    TinyMlp(MlpConfig),
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig::LogLinear(FeatureConfig::default())
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            BackboneConfig::LogLinear(f) if f.hash_dim == 0 => {
                Err(Error::Config("hash_dim must be positive".into()))
            }
            BackboneConfig::TinyMlp(m) if m.buckets == 0 || m.embed_dim == 0 || m.hidden == 0 => {
                Err(Error::Config("mlp sizes must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BackboneConfig::LogLinear(_) => "log-linear",
            BackboneConfig::TinyMlp(_) => "tiny-mlp",
        }
    }
}

/// 64-bit FNV-1a.
fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            h ^= 0x1f;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        for b in part.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn bucket(parts: &[&str], dim: usize) -> usize {
    (fnv1a(parts) % dim as u64) as usize
}

fn lower(token: &str) -> String {
    token.to_lowercase()
}

/// Hashed sparse features → per-label weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinear {
    pub config: FeatureConfig,
    /// `hash_dim × K`
    pub weights: Matrix,
}

impl LogLinear {
    pub fn zeros(config: FeatureConfig, n_labels: usize) -> Self {
        let weights = Matrix::zeros(config.hash_dim, n_labels);
        LogLinear { config, weights }
    }

    /// Bucket of a feature given as `(template, value)`.
    ///
    /// Templates: `bias`, `w` (lowercased token), `p1..`/`s1..` (prefix/suffix),
    /// `f` (shape flag), `w-1`/`w+1` (neighbouring lowercased token).
    pub fn feature_index(&self, template: &str, value: &str) -> usize {
        bucket(&[template, value], self.config.hash_dim)
    }

    /// Active feature buckets for every token; duplicates count twice.
    pub fn features(&self, tokens: &[String]) -> Vec<Vec<usize>> {
        let cfg = &self.config;
        let lowered: Vec<String> = tokens.iter().map(|t| lower(t)).collect();
        let idx = |t: &str, v: &str| bucket(&[t, v], cfg.hash_dim);
        let mut out = Vec::with_capacity(tokens.len());
        for (l, tok) in tokens.iter().enumerate() {
            let lw = &lowered[l];
            let mut f = vec![idx("bias", ""), idx("w", lw)];
            let chars: Vec<char> = lw.chars().collect();
            for n in 1..=cfg.max_affix.min(chars.len()) {
                let pre: String = chars[..n].iter().collect();
                let suf: String = chars[chars.len() - n..].iter().collect();
                f.push(idx(&format!("p{n}"), &pre));
                f.push(idx(&format!("s{n}"), &suf));
            }
            if cfg.shape_flags {
                if tok.chars().any(|c| c.is_ascii_digit()) {
                    f.push(idx("f", "digit"));
                }
                if tok.chars().all(|c| c.is_ascii_digit()) {
                    f.push(idx("f", "alldigit"));
                }
                if tok.chars().next().is_some_and(char::is_uppercase) {
                    f.push(idx("f", "cap"));
                }
                if tok.chars().all(char::is_uppercase) {
                    f.push(idx("f", "allcap"));
                }
                if tok.contains('-') {
                    f.push(idx("f", "hyphen"));
                }
                if tok.chars().all(|c| !c.is_alphanumeric()) {
                    f.push(idx("f", "punct"));
                }
            }
            if cfg.context {
                let prev = if l == 0 { "<s>" } else { lowered[l - 1].as_str() };
                let next = lowered.get(l + 1).map_or("</s>", String::as_str);
                f.push(idx("w-1", prev));
                f.push(idx("w+1", next));
            }
            out.push(f);
        }
        out
    }

    fn emit(&self, tokens: &[String]) -> Matrix {
        let k = self.weights.cols();
        let mut e = Matrix::zeros(tokens.len(), k);
        for (l, feats) in self.features(tokens).iter().enumerate() {
            let row = e.row_mut(l);
            for &f in feats {
                for (r, w) in row.iter_mut().zip(self.weights.row(f)) {
                    *r += w;
                }
            }
        }
        e
    }

    fn backward(&self, tokens: &[String], d_emission: &Matrix, grads: &mut [Matrix]) {
        let g = &mut grads[0];
        for (l, feats) in self.features(tokens).iter().enumerate() {
            let d = d_emission.row(l);
            if d.iter().all(|x| *x == 0.0) {
                continue;
            }
            for &f in feats {
                for (gw, dv) in g.row_mut(f).iter_mut().zip(d) {
                    *gw += dv;
                }
            }
        }
    }
}

/// Hashed embeddings, window mean, one `tanh` layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyMlp {
    pub config: MlpConfig,
    /// `buckets × embed_dim`
    pub embed: Matrix,
    /// `hidden × embed_dim`
    pub w1: Matrix,
    /// `1 × hidden`
    pub b1: Matrix,
    /// `K × hidden`
    pub w2: Matrix,
    /// `1 × K`
    pub b2: Matrix,
}

struct MlpTrace {
    ids: Vec<usize>,
    inputs: Matrix,
    hidden: Matrix,
}

impl TinyMlp {
    pub fn zeros(config: MlpConfig, n_labels: usize) -> Self {
        TinyMlp {
            embed: Matrix::zeros(config.buckets, config.embed_dim),
            w1: Matrix::zeros(config.hidden, config.embed_dim),
            b1: Matrix::zeros(1, config.hidden),
            w2: Matrix::zeros(n_labels, config.hidden),
            b2: Matrix::zeros(1, n_labels),
            config,
        }
    }

    pub fn random<R: Rng + ?Sized>(config: MlpConfig, n_labels: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(config, n_labels);
        let uniform = |mat: &mut Matrix, bound: f64, rng: &mut R| {
            for x in mat.as_mut_slice() {
                *x = rng.gen_range(-bound..bound);
            }
        };
        let (d, h, k) = (m.config.embed_dim as f64, m.config.hidden as f64, n_labels as f64);
        uniform(&mut m.embed, 0.5, rng);
        uniform(&mut m.w1, libm::sqrt(6.0 / (d + h)), rng);
        uniform(&mut m.w2, libm::sqrt(6.0 / (h + k)), rng);
        m
    }

    pub fn token_bucket(&self, token: &str) -> usize {
        bucket(&["w", &lower(token)], self.config.buckets)
    }

    fn forward(&self, tokens: &[String]) -> (Matrix, MlpTrace) {
        let len = tokens.len();
        let d = self.config.embed_dim;
        let hsz = self.config.hidden;
        let k = self.w2.rows();
        let ids: Vec<usize> = tokens.iter().map(|t| self.token_bucket(t)).collect();
        let mut inputs = Matrix::zeros(len, d);
        for l in 0..len {
            let (lo, hi) = self.window(l, len);
            let inv = 1.0 / (hi - lo) as f64;
            let row = inputs.row_mut(l);
            for &id in &ids[lo..hi] {
                for (x, e) in row.iter_mut().zip(self.embed.row(id)) {
                    *x += inv * e;
                }
            }
        }
        let mut hidden = Matrix::zeros(len, hsz);
        let mut out = Matrix::zeros(len, k);
        for l in 0..len {
            let x = inputs.row(l);
            for u in 0..hsz {
                let z: f64 = self.b1[(0, u)] + dot(self.w1.row(u), x);
                hidden[(l, u)] = tanh(z);
            }
            let h = hidden.row(l);
            for c in 0..k {
                out[(l, c)] = self.b2[(0, c)] + dot(self.w2.row(c), h);
            }
        }
        (out, MlpTrace { ids, inputs, hidden })
    }

    fn window(&self, l: usize, len: usize) -> (usize, usize) {
        let w = self.config.window;
        (l.saturating_sub(w), (l + w + 1).min(len))
    }

    fn backward(&self, tokens: &[String], d_emission: &Matrix, grads: &mut [Matrix]) {
        let (_, trace) = self.forward(tokens);
        let len = tokens.len();
        let d = self.config.embed_dim;
        let hsz = self.config.hidden;
        let k = self.w2.rows();
        let [g_embed, g_w1, g_b1, g_w2, g_b2] = grads else {
            panic!("tiny-mlp expects 5 gradient blocks");
        };
        let mut dh = vec![0.0; hsz];
        let mut dx = vec![0.0; d];
        for l in 0..len {
            let dl = d_emission.row(l);
            let h = trace.hidden.row(l);
            dh.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..k {
                let g = dl[c];
                if g == 0.0 {
                    continue;
                }
                g_b2[(0, c)] += g;
                for u in 0..hsz {
                    g_w2[(c, u)] += g * h[u];
                    dh[u] += g * self.w2[(c, u)];
                }
            }
            dx.iter_mut().for_each(|v| *v = 0.0);
            let x = trace.inputs.row(l);
            for u in 0..hsz {
                let dz = dh[u] * (1.0 - h[u] * h[u]);
                if dz == 0.0 {
                    continue;
                }
                g_b1[(0, u)] += dz;
                for (i, xi) in x.iter().enumerate() {
                    g_w1[(u, i)] += dz * xi;
                    dx[i] += dz * self.w1[(u, i)];
                }
            }
            let (lo, hi) = self.window(l, len);
            let inv = 1.0 / (hi - lo) as f64;
            for &id in &trace.ids[lo..hi] {
                for (g, v) in g_embed.row_mut(id).iter_mut().zip(&dx) {
                    *g += inv * v;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A trainable emission scorer.
#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    LogLinear(LogLinear),
    TinyMlp(TinyMlp),
}

/// Gradients shaped like [`Backbone::blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGrads {
    pub blocks: Vec<Matrix>,
}

impl BackboneGrads {
    pub fn scale(&mut self, factor: f64) {
        self.blocks.iter_mut().for_each(|b| b.scale(factor));
    }
}

impl Backbone {
    /// All-zero parameters.
    pub fn zeros(config: &BackboneConfig, n_labels: usize) -> Self {
        match config {
            BackboneConfig::LogLinear(f) => Backbone::LogLinear(LogLinear::zeros(f.clone(), n_labels)),
            BackboneConfig::TinyMlp(m) => Backbone::TinyMlp(TinyMlp::zeros(m.clone(), n_labels)),
        }
    }

    /// Training initialisation: zeros for log-linear, seeded random for the MLP.
    pub fn init<R: Rng + ?Sized>(config: &BackboneConfig, n_labels: usize, rng: &mut R) -> Self {
        match config {
            BackboneConfig::LogLinear(f) => Backbone::LogLinear(LogLinear::zeros(f.clone(), n_labels)),
            BackboneConfig::TinyMlp(m) => Backbone::TinyMlp(TinyMlp::random(m.clone(), n_labels, rng)),
        }
    }

    pub fn config(&self) -> BackboneConfig {
        match self {
            Backbone::LogLinear(b) => BackboneConfig::LogLinear(b.config.clone()),
            Backbone::TinyMlp(b) => BackboneConfig::TinyMlp(b.config.clone()),
        }
    }

    pub fn n_labels(&self) -> usize {
        match self {
            Backbone::LogLinear(b) => b.weights.cols(),
            Backbone::TinyMlp(b) => b.w2.rows(),
        }
    }

    /// Parameter blocks in a fixed order (log-linear: `[weights]`;
    /// tiny-mlp: `[embed, w1, b1, w2, b2]`).
    pub fn blocks(&self) -> Vec<&Matrix> {
        match self {
            Backbone::LogLinear(b) => vec![&b.weights],
            Backbone::TinyMlp(b) => vec![&b.embed, &b.w1, &b.b1, &b.w2, &b.b2],
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Backbone::LogLinear(b) => vec![&mut b.weights],
            Backbone::TinyMlp(b) => vec![&mut b.embed, &mut b.w1, &mut b.b1, &mut b.w2, &mut b.b2],
        }
    }

    /// Rebuilds a backbone from a configuration and blocks in [`Self::blocks`] order.
    pub fn from_blocks(config: &BackboneConfig, n_labels: usize, blocks: Vec<Matrix>) -> Result<Self> {
        let mut bb = Backbone::zeros(config, n_labels);
        let expected: Vec<(usize, usize)> = bb.blocks().iter().map(|m| m.shape()).collect();
        let got: Vec<(usize, usize)> = blocks.iter().map(Matrix::shape).collect();
        if expected != got {
            return Err(Error::Shape(format!(
                "backbone blocks {got:?} do not match configuration {expected:?}"
            )));
        }
        for (dst, src) in bb.blocks_mut().into_iter().zip(blocks) {
            *dst = src;
        }
        Ok(bb)
    }

    pub fn zero_grads(&self) -> BackboneGrads {
        BackboneGrads {
            blocks: self
                .blocks()
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    /// `L × K` emission scores for a sentence.
    pub fn emit(&self, tokens: &[String]) -> Matrix {
        match self {
            Backbone::LogLinear(b) => b.emit(tokens),
            Backbone::TinyMlp(b) => b.forward(tokens).0,
        }
    }

    /// Accumulates `∂⟨d_emission, emit(tokens)⟩ / ∂θ` into `grads`.
    pub fn emit_backward(&self, tokens: &[String], d_emission: &Matrix, grads: &mut BackboneGrads) {
        assert_eq!(d_emission.shape(), (tokens.len(), self.n_labels()));
        match self {
            Backbone::LogLinear(b) => b.backward(tokens, d_emission, &mut grads.blocks),
            Backbone::TinyMlp(b) => b.backward(tokens, d_emission, &mut grads.blocks),
        }
    }
}
