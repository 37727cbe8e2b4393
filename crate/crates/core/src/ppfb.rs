//! Polarization prompt fusion block.
//!
//! A block takes a prompt `M` and a feature `X` (both `[C, H, W]`) and treats
//! every pixel as a `C`-dimensional token. Per token:
//!
//! ```text
//! [k; q; v]   = W_kqv [M; X]
//! a           = λ · softmax_C(FC_attn [q; k])
//! [X*; Mx]    = dropout(FC_d (a ⊙ v))
//! [s_q; s_k]  = mean over tokens of FC_stats (M + X)
//! M*          = Mx + FC_out((s_q ⊙ M + s_k ⊙ X) ⊙ k)
//! ```
//!
//! The first half updates the feature with prompt-conditioned channel
//! attention; the second updates the prompt with a channel fovea driven by
//! spatially pooled statistics.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{avg_pool2, dropout_mask, LinearLayer, ParamStore, Tensor};

pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Prompt/feature pair threaded through the block chain.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionState {
    pub prompt: Tensor,
    pub feature: Tensor,
}

impl FusionState {
    pub fn new(prompt: Tensor, feature: Tensor) -> Result<Self> {
        let s = FusionState { prompt, feature };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.prompt.chw()?;
        self.prompt.same_dims(&self.feature, "FusionState")
    }

    pub fn zeros_like(&self) -> FusionState {
        FusionState {
            prompt: Tensor::zeros(self.prompt.dims()),
            feature: Tensor::zeros(self.feature.dims()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpfbParams {
    /// `2C -> 3C`, output order `[k; q; v]`.
    pub w_kqv: LinearLayer,
    /// `2C -> C`, attention logits from `[q; k]`.
    pub fc_attn: LinearLayer,
    /// `C -> 2C`, split into `[X*; Mx]`.
    pub fc_d: LinearLayer,
    /// `C -> 2C`, pooled into `[s_q; s_k]`.
    pub fc_stats: LinearLayer,
    /// `C -> C`
    pub fc_out: LinearLayer,
    pub lambda: f64,
    /// Dropout probability applied after `fc_d`.
    pub dropout: f64,
}

const LAYERS: [&str; 5] = ["w_kqv", "fc_attn", "fc_d", "fc_stats", "fc_out"];

impl PpfbParams {
    /// Random init: Kaiming-uniform weights, zero biases, λ = 1.
    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        let c = channels;
        PpfbParams {
            w_kqv: LinearLayer::init(2 * c, 3 * c, 1.0, rng),
            fc_attn: LinearLayer::init(2 * c, c, 1.0, rng),
            fc_d: LinearLayer::init(c, 2 * c, 1.0, rng),
            fc_stats: LinearLayer::init(c, 2 * c, 1.0, rng),
            fc_out: LinearLayer::init(c, c, 1.0, rng),
            lambda: DEFAULT_LAMBDA,
            dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn zeros(channels: usize) -> Self {
        let c = channels;
        PpfbParams {
            w_kqv: LinearLayer::zeros(2 * c, 3 * c),
            fc_attn: LinearLayer::zeros(2 * c, c),
            fc_d: LinearLayer::zeros(c, 2 * c),
            fc_stats: LinearLayer::zeros(c, 2 * c),
            fc_out: LinearLayer::zeros(c, c),
            lambda: DEFAULT_LAMBDA,
            dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn channels(&self) -> usize {
        self.fc_out.out_features()
    }

    fn layers(&self) -> [&LinearLayer; 5] {
        [&self.w_kqv, &self.fc_attn, &self.fc_d, &self.fc_stats, &self.fc_out]
    }

    fn layers_mut(&mut self) -> [&mut LinearLayer; 5] {
        [
            &mut self.w_kqv,
            &mut self.fc_attn,
            &mut self.fc_d,
            &mut self.fc_stats,
            &mut self.fc_out,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let expected = [(2 * c, 3 * c), (2 * c, c), (c, 2 * c), (c, 2 * c), (c, c)];
        for (layer, (i, o)) in self.layers().into_iter().zip(expected) {
            layer.validate()?;
            if (layer.in_features(), layer.out_features()) != (i, o) {
                return Err(Error::dims(
                    "PpfbParams",
                    &[o, i],
                    &[layer.out_features(), layer.in_features()],
                ));
            }
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Domain(format!("λ = {} must be positive", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Domain(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Writes entries `<prefix>.<layer>.{weight,bias}` and `<prefix>.lambda`.
    pub fn write_to(&self, store: &mut ParamStore, prefix: &str) {
        for (name, layer) in LAYERS.iter().zip(self.layers()) {
            store.set(&format!("{prefix}.{name}.weight"), layer.weight.clone());
            store.set(&format!("{prefix}.{name}.bias"), layer.bias.clone());
        }
        store.set(&format!("{prefix}.lambda"), Tensor::filled(&[1], self.lambda));
    }

    pub fn read_from(store: &ParamStore, prefix: &str, dropout: f64) -> Result<Self> {
        let layer = |name: &str| -> Result<LinearLayer> {
            LinearLayer::new(
                store.get(&format!("{prefix}.{name}.weight"))?.clone(),
                store.get(&format!("{prefix}.{name}.bias"))?.clone(),
            )
        };
        Ok(PpfbParams {
            w_kqv: layer("w_kqv")?,
            fc_attn: layer("fc_attn")?,
            fc_d: layer("fc_d")?,
            fc_stats: layer("fc_stats")?,
            fc_out: layer("fc_out")?,
            lambda: store.get(&format!("{prefix}.lambda"))?.data()[0],
            dropout,
        })
    }

    /// Gradient container with every entry zero.
    pub fn zero_grads(&self) -> Self {
        let mut g = self.clone();
        for l in g.layers_mut() {
            l.weight = Tensor::zeros(l.weight.dims());
            l.bias = Tensor::zeros(l.bias.dims());
        }
        g.lambda = 0.0;
        g
    }
}

/// Intermediates saved by a forward pass, token-major.
#[derive(Clone, Debug)]
struct PpfbCache {
    height: usize,
    width: usize,
    m: Tensor,
    x: Tensor,
    mx_cat: Tensor,
    kqv: Tensor,
    qk: Tensor,
    probs: Tensor,
    fused: Tensor,
    mask: Option<Vec<f64>>,
    sum_mx: Tensor,
    s: Vec<f64>,
    mix: Tensor,
    gated: Tensor,
}

fn split_cols(t: &Tensor, ranges: &[(usize, usize)]) -> Vec<Tensor> {
    let width = t.dims()[1];
    let n = t.dims()[0];
    ranges
        .iter()
        .map(|&(a, b)| {
            let mut out = Vec::with_capacity(n * (b - a));
            for row in t.data().chunks(width) {
                out.extend_from_slice(&row[a..b]);
            }
            Tensor::from_vec(&[n, b - a], out).expect("column split")
        })
        .collect()
}

fn hcat(parts: &[&Tensor]) -> Tensor {
    let n = parts[0].dims()[0];
    let widths: Vec<usize> = parts.iter().map(|p| p.dims()[1]).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    for t in 0..n {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[t * w..(t + 1) * w]);
        }
    }
    Tensor::from_vec(&[n, total], out).expect("column concat")
}

fn forward_impl(
    state: &FusionState,
    params: &PpfbParams,
    dropout_seed: u64,
    training: bool,
) -> Result<(FusionState, PpfbCache)> {
    state.validate()?;
    params.validate()?;
    let (c, h, w) = state.feature.chw()?;
    if c != params.channels() {
        return Err(Error::dims("ppfb channels", &[params.channels()], &[c]));
    }
    let n = h * w;
    let m = state.prompt.to_tokens()?;
    let x = state.feature.to_tokens()?;

    // stage 1: feature update
    let mx_cat = hcat(&[&m, &x]);
    let kqv = params.w_kqv.forward(&mx_cat)?;
    let parts = split_cols(&kqv, &[(0, c), (c, 2 * c), (2 * c, 3 * c)]);
    let (k, q, v) = (&parts[0], &parts[1], &parts[2]);
    let qk = hcat(&[q, k]);
    let logits = params.fc_attn.forward(&qk)?;
    let probs = crate::numerics::softmax(&logits, 1)?;
    let fused = Tensor::from_vec(
        &[n, c],
        probs
            .data()
            .iter()
            .zip(v.data())
            .map(|(p, v)| params.lambda * p * v)
            .collect(),
    )?;
    let mut hidden = params.fc_d.forward(&fused)?;
    let mask = if training && params.dropout > 0.0 {
        let mask = dropout_mask(hidden.len(), params.dropout, dropout_seed)?;
        for (v, m) in hidden.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Some(mask)
    } else {
        None
    };
    hidden.check_finite("ppfb stage 1 (feature update)")?;
    let halves = split_cols(&hidden, &[(0, c), (c, 2 * c)]);
    let (x_star, m_x) = (&halves[0], &halves[1]);

    // stage 2: channel fovea prompt update
    let sum_mx = m.add(&x)?;
    let stats = params.fc_stats.forward(&sum_mx)?;
    let mut s = vec![0.0; 2 * c];
    for row in stats.data().chunks(2 * c) {
        for (acc, v) in s.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut s {
        *v /= n as f64;
    }
    let (s_q, s_k) = s.split_at(c);
    let mut mix = vec![0.0; n * c];
    let mut gated = vec![0.0; n * c];
    for t in 0..n {
        for ch in 0..c {
            let i = t * c + ch;
            // q^m = M, k^m = X, v^m = k^x
            mix[i] = s_q[ch] * m.data()[i] + s_k[ch] * x.data()[i];
            gated[i] = mix[i] * k.data()[i];
        }
    }
    let mix = Tensor::from_vec(&[n, c], mix)?;
    let gated = Tensor::from_vec(&[n, c], gated)?;
    let m_star = m_x.add(&params.fc_out.forward(&gated)?)?;
    m_star.check_finite("ppfb stage 2 (prompt update)")?;

    let out = FusionState {
        prompt: Tensor::from_tokens(&m_star, h, w)?,
        feature: Tensor::from_tokens(x_star, h, w)?,
    };
    let cache = PpfbCache {
        height: h,
        width: w,
        m,
        x,
        mx_cat,
        kqv,
        qk,
        probs,
        fused,
        mask,
        sum_mx,
        s,
        mix,
        gated,
    };
    Ok((out, cache))
}

pub fn ppfb_forward(
    state: &FusionState,
    params: &PpfbParams,
    dropout_seed: u64,
    training: bool,
) -> Result<FusionState> {
    forward_impl(state, params, dropout_seed, training).map(|(out, _)| out)
}

/// Holds the intermediates of one forward pass for the paired backward pass.
#[derive(Clone, Debug, Default)]
pub struct PpfbTape {
    cache: Option<PpfbCache>,
}

impl PpfbTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(
        &mut self,
        state: &FusionState,
        params: &PpfbParams,
        dropout_seed: u64,
        training: bool,
    ) -> Result<FusionState> {
        let (out, cache) = forward_impl(state, params, dropout_seed, training)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Gradients w.r.t. `(M, X)` and every parameter, given upstream
    /// gradients on `(M*, X*)`.
    pub fn backward(&self, params: &PpfbParams, upstream: &FusionState) -> Result<(FusionState, PpfbParams)> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache)?;
        ppfb_backward(cache, params, upstream)
    }
}

fn ppfb_backward(cache: &PpfbCache, params: &PpfbParams, upstream: &FusionState) -> Result<(FusionState, PpfbParams)> {
    let (h, w) = (cache.height, cache.width);
    let n = h * w;
    let c = params.channels();
    if upstream.prompt.dims() != [c, h, w] || upstream.feature.dims() != [c, h, w] {
        return Err(Error::dims("ppfb backward upstream", &[c, h, w], upstream.prompt.dims()));
    }
    let g_mstar = upstream.prompt.to_tokens()?;
    let g_xstar = upstream.feature.to_tokens()?;
    let mut grads = params.zero_grads();

    let mut g_m = vec![0.0; n * c];
    let mut g_x = vec![0.0; n * c];

    // M* = Mx + fc_out(gated)
    let out_g = params.fc_out.backward(&cache.gated, &g_mstar)?;
    grads.fc_out.weight = out_g.weight;
    grads.fc_out.bias = out_g.bias;
    let (s_q, s_k) = cache.s.split_at(c);
    let kqv = cache.kqv.data();
    let mut g_k = vec![0.0; n * c];
    let mut g_sq = vec![0.0; c];
    let mut g_sk = vec![0.0; c];
    for t in 0..n {
        for ch in 0..c {
            let i = t * c + ch;
            let g_gated = out_g.input.data()[i];
            let k = kqv[t * 3 * c + ch];
            let g_mix = g_gated * k;
            g_k[i] += g_gated * cache.mix.data()[i];
            g_sq[ch] += g_mix * cache.m.data()[i];
            g_sk[ch] += g_mix * cache.x.data()[i];
            g_m[i] += g_mix * s_q[ch];
            g_x[i] += g_mix * s_k[ch];
        }
    }
    // s = mean_t fc_stats(M + X)
    let inv_n = 1.0 / n as f64;
    let g_s: Vec<f64> = g_sq.iter().chain(&g_sk).map(|g| g * inv_n).collect();
    let mut g_stats = Vec::with_capacity(n * 2 * c);
    for _ in 0..n {
        g_stats.extend_from_slice(&g_s);
    }
    let stats_g = params
        .fc_stats
        .backward(&cache.sum_mx, &Tensor::from_vec(&[n, 2 * c], g_stats)?)?;
    grads.fc_stats.weight = stats_g.weight;
    grads.fc_stats.bias = stats_g.bias;
    for (i, g) in stats_g.input.data().iter().enumerate() {
        g_m[i] += g;
        g_x[i] += g;
    }

    // [X*; Mx] = dropout(fc_d(fused))
    let mut g_hidden = hcat(&[&g_xstar, &g_mstar]);
    if let Some(mask) = &cache.mask {
        for (g, m) in g_hidden.data_mut().iter_mut().zip(mask) {
            *g *= m;
        }
    }
    let d_g = params.fc_d.backward(&cache.fused, &g_hidden)?;
    grads.fc_d.weight = d_g.weight;
    grads.fc_d.bias = d_g.bias;

    // fused = λ p ⊙ v,  p = softmax(fc_attn([q; k]))
    let mut g_logits = vec![0.0; n * c];
    let mut g_v = vec![0.0; n * c];
    let mut g_lambda = 0.0;
    for t in 0..n {
        let p = &cache.probs.data()[t * c..(t + 1) * c];
        let gf = &d_g.input.data()[t * c..(t + 1) * c];
        let v = &kqv[t * 3 * c + 2 * c..(t + 1) * 3 * c];
        let mut g_p = vec![0.0; c];
        for ch in 0..c {
            g_lambda += gf[ch] * p[ch] * v[ch];
            g_v[t * c + ch] = gf[ch] * params.lambda * p[ch];
            g_p[ch] = gf[ch] * params.lambda * v[ch];
        }
        let dotp: f64 = g_p.iter().zip(p).map(|(a, b)| a * b).sum();
        for ch in 0..c {
            g_logits[t * c + ch] = p[ch] * (g_p[ch] - dotp);
        }
    }
    grads.lambda = g_lambda;
    let attn_g = params
        .fc_attn
        .backward(&cache.qk, &Tensor::from_vec(&[n, c], g_logits)?)?;
    grads.fc_attn.weight = attn_g.weight;
    grads.fc_attn.bias = attn_g.bias;

    // [k; q; v] = w_kqv([M; X])
    let mut g_kqv = vec![0.0; n * 3 * c];
    for t in 0..n {
        let g_qk = &attn_g.input.data()[t * 2 * c..(t + 1) * 2 * c];
        let dst = &mut g_kqv[t * 3 * c..(t + 1) * 3 * c];
        for ch in 0..c {
            dst[ch] = g_k[t * c + ch] + g_qk[c + ch];
            dst[c + ch] = g_qk[ch];
            dst[2 * c + ch] = g_v[t * c + ch];
        }
    }
    let kqv_g = params
        .w_kqv
        .backward(&cache.mx_cat, &Tensor::from_vec(&[n, 3 * c], g_kqv)?)?;
    grads.w_kqv.weight = kqv_g.weight;
    grads.w_kqv.bias = kqv_g.bias;
    for t in 0..n {
        let g = &kqv_g.input.data()[t * 2 * c..(t + 1) * 2 * c];
        for ch in 0..c {
            g_m[t * c + ch] += g[ch];
            g_x[t * c + ch] += g[c + ch];
        }
    }

    let state_grads = FusionState {
        prompt: Tensor::from_tokens(&Tensor::from_vec(&[n, c], g_m)?, h, w)?,
        feature: Tensor::from_tokens(&Tensor::from_vec(&[n, c], g_x)?, h, w)?,
    };
    Ok((state_grads, grads))
}

/// A shape-changing transform between fusion stages.
pub trait StageTransform {
    fn apply(&self, x: &Tensor) -> Result<Tensor>;
}

pub struct Identity;

impl StageTransform for Identity {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }
}

/// 2x average pooling followed by a per-pixel linear projection; carries a
/// prompt to the next stage's resolution and width.
pub struct PromptResample {
    pub projection: LinearLayer,
}

impl StageTransform for PromptResample {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = avg_pool2(x)?;
        let (_, h, w) = pooled.chw()?;
        Tensor::from_tokens(&self.projection.forward(&pooled.to_tokens()?)?, h, w)
    }
}

impl<F: Fn(&Tensor) -> Result<Tensor>> StageTransform for F {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self(x)
    }
}

/// One fusion stage: the block, the feature encoder that follows it, and
/// the rule moving the prompt to the next stage.
pub struct ChainStage<'a> {
    pub block: &'a PpfbParams,
    pub encoder: &'a dyn StageTransform,
    pub prompt_resample: &'a dyn StageTransform,
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub feature: Tensor,
    /// Block output of every stage, before the encoder.
    pub stages: Vec<FusionState>,
}

/// Alternates blocks and encoders:
/// `(M_{i+1}, X_i*) = ppfb_i(M_i, X_i)`, `X_{i+1} = encoder_i(X_i*)`.
///
/// Stage `i` uses dropout seed `seed + i`.
pub fn chain_forward(
    initial: &FusionState,
    stages: &[ChainStage<'_>],
    seed: u64,
    training: bool,
) -> Result<ChainOutput> {
    if stages.is_empty() {
        return Err(Error::Config("fusion chain needs at least one stage".into()));
    }
    let mut state = initial.clone();
    let mut outputs = Vec::with_capacity(stages.len());
    let mut feature = Tensor::zeros(&[0]);
    for (i, stage) in stages.iter().enumerate() {
        let (c, _, _) = state.feature.chw()?;
        if c != stage.block.channels() {
            return Err(Error::dims("chain stage input", &[stage.block.channels()], &[c]));
        }
        let out = ppfb_forward(&state, stage.block, seed.wrapping_add(i as u64), training)?;
        feature = stage.encoder.apply(&out.feature)?;
        if i + 1 < stages.len() {
            let prompt = stage.prompt_resample.apply(&out.prompt)?;
            state = FusionState::new(prompt, feature.clone()).map_err(|_| {
                Error::dims("chain stage contract (prompt vs feature)", out.prompt.dims(), feature.dims())
            })?;
        }
        outputs.push(out);
    }
    Ok(ChainOutput {
        feature,
        stages: outputs,
    })
}
