use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, D_MIN};
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::numerics::{
    avg_pool2, avg_pool2_backward, relu, relu_backward, upsample2, upsample2_backward, Conv3x3, LinearLayer,
    ParamStore, Tensor,
};
use crate::polar::GuidanceTensor;
use crate::ppfb::{FusionState, PpfbParams, PpfbTape};

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;
const HEAD_GAIN: f64 = 0.1;

pub fn enc_concat() -> &'static str {
    "backbone.enc_concat"
}
pub fn enc_depth() -> &'static str {
    "backbone.enc_depth"
}
pub fn head() -> &'static str {
    "backbone.head"
}
pub fn down(i: usize) -> String {
    format!("backbone.down{i}")
}
pub fn dec(i: usize) -> String {
    format!("backbone.dec{i}")
}
pub fn enc_guidance() -> &'static str {
    "prompt.enc_guidance"
}
pub fn resample(i: usize) -> String {
    format!("prompt.resample{i}")
}
pub fn block(i: usize) -> String {
    format!("ppfb{i}")
}

fn put_conv(store: &mut ParamStore, name: &str, conv: Conv3x3) -> Result<()> {
    store.insert(format!("{name}.weight"), conv.weight)?;
    store.insert(format!("{name}.bias"), conv.bias)
}

fn put_linear(store: &mut ParamStore, name: &str, l: LinearLayer) -> Result<()> {
    store.insert(format!("{name}.weight"), l.weight)?;
    store.insert(format!("{name}.bias"), l.bias)
}

fn conv(store: &ParamStore, name: &str, stride: usize) -> Result<Conv3x3> {
    Conv3x3::new(
        store.get(&format!("{name}.weight"))?.clone(),
        store.get(&format!("{name}.bias"))?.clone(),
        stride,
    )
}

fn linear(store: &ParamStore, name: &str) -> Result<LinearLayer> {
    LinearLayer::new(
        store.get(&format!("{name}.weight"))?.clone(),
        store.get(&format!("{name}.bias"))?.clone(),
    )
}

/// Fresh parameters for `config`. Backbone tensors are drawn first, so every
/// ablation mode shares the same backbone init for a given seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = &config.widths;
    let s = config.stages();
    let g = config.guidance_channels;
    let mut store = ParamStore::new();
    put_conv(&mut store, enc_concat(), Conv3x3::init(g + 1, w[0], 1, RELU_GAIN, &mut rng))?;
    put_conv(&mut store, enc_depth(), Conv3x3::init(1, w[0], 1, RELU_GAIN, &mut rng))?;
    for i in 0..s - 1 {
        put_conv(&mut store, &down(i), Conv3x3::init(w[i], w[i + 1], 2, RELU_GAIN, &mut rng))?;
    }
    for i in 1..s {
        put_conv(&mut store, &dec(i), Conv3x3::init(w[i], w[i - 1], 1, RELU_GAIN, &mut rng))?;
    }
    let mut h = Conv3x3::init(w[0], 1, 1, HEAD_GAIN, &mut rng);
    h.bias = Tensor::filled(&[1], config.head_bias);
    put_conv(&mut store, head(), h)?;

    let p = config.ppfb_stages();
    if p > 0 {
        put_conv(&mut store, enc_guidance(), Conv3x3::init(g, w[0], 1, RELU_GAIN, &mut rng))?;
    }
    for i in 0..p.saturating_sub(1) {
        put_linear(&mut store, &resample(i), LinearLayer::init(w[i], w[i + 1], 1.0, &mut rng))?;
    }
    for i in 0..p {
        let mut b = PpfbParams::init(w[i], &mut rng);
        b.lambda = config.lambda_init;
        b.fc_d.weight = b.fc_d.weight.scale(config.fusion_out_gain);
        b.fc_out.weight = b.fc_out.weight.scale(config.fusion_out_gain);
        b.write_to(&mut store, &block(i));
    }
    apply_freeze(&mut store, config);
    Ok(store)
}

/// Marks every parameter under a frozen prefix as non-trainable.
pub fn apply_freeze(store: &mut ParamStore, config: &ModelConfig) -> Vec<String> {
    let mut frozen = Vec::new();
    for (name, p) in store.iter_mut() {
        if config.is_frozen(name) {
            p.trainable = false;
            frozen.push(name.to_string());
        }
    }
    frozen
}

/// Parameter names `config` requires, in store order.
pub fn expected_names(config: &ModelConfig) -> Result<Vec<String>> {
    Ok(init_params(config, 0)?.names().map(str::to_string).collect())
}

/// Typed view of a parameter store for one forward/backward pass.
struct Layers {
    enc_concat: Conv3x3,
    enc_depth: Conv3x3,
    down: Vec<Conv3x3>,
    dec: Vec<Conv3x3>,
    head: Conv3x3,
    enc_guidance: Option<Conv3x3>,
    resample: Vec<LinearLayer>,
    blocks: Vec<PpfbParams>,
}

impl Layers {
    fn read(store: &ParamStore, config: &ModelConfig) -> Result<Self> {
        let s = config.stages();
        let p = config.ppfb_stages();
        let w = &config.widths;
        let layers = Layers {
            enc_concat: conv(store, enc_concat(), 1)?,
            enc_depth: conv(store, enc_depth(), 1)?,
            down: (0..s - 1).map(|i| conv(store, &down(i), 2)).collect::<Result<_>>()?,
            dec: (1..s).map(|i| conv(store, &dec(i), 1)).collect::<Result<_>>()?,
            head: conv(store, head(), 1)?,
            enc_guidance: if p > 0 { Some(conv(store, enc_guidance(), 1)?) } else { None },
            resample: (0..p.saturating_sub(1))
                .map(|i| linear(store, &resample(i)))
                .collect::<Result<_>>()?,
            blocks: (0..p)
                .map(|i| PpfbParams::read_from(store, &block(i), config.dropout))
                .collect::<Result<_>>()?,
        };
        let g = config.guidance_channels;
        let shape_checks: Vec<(&str, &Conv3x3, usize, usize)> = [
            (enc_concat(), &layers.enc_concat, g + 1, w[0]),
            (enc_depth(), &layers.enc_depth, 1, w[0]),
            (head(), &layers.head, w[0], 1),
        ]
        .into_iter()
        .chain(layers.down.iter().enumerate().map(|(i, c)| ("backbone.down", c, w[i], w[i + 1])))
        .chain(layers.dec.iter().enumerate().map(|(i, c)| ("backbone.dec", c, w[i + 1], w[i])))
        .chain(layers.enc_guidance.iter().map(|c| (enc_guidance(), c, g, w[0])))
        .collect();
        for (name, c, i, o) in shape_checks {
            if (c.in_channels(), c.out_channels()) != (i, o) {
                return Err(Error::Config(format!(
                    "{name}: expected {o}x{i} channels, found {}x{}",
                    c.out_channels(),
                    c.in_channels()
                )));
            }
        }
        for (i, b) in layers.blocks.iter().enumerate() {
            b.validate()?;
            if b.channels() != w[i] {
                return Err(Error::dims("ppfb width", &[w[i]], &[b.channels()]));
            }
        }
        for (i, l) in layers.resample.iter().enumerate() {
            if (l.in_features(), l.out_features()) != (w[i], w[i + 1]) {
                return Err(Error::dims("prompt resample", &[w[i + 1], w[i]], &[l.out_features(), l.in_features()]));
            }
        }
        Ok(layers)
    }
}

struct StageCache {
    x_in: Tensor,
    tape: Option<PpfbTape>,
    feature: Tensor,
    /// Post-activation output of the following stride-2 encoder.
    down_out: Option<Tensor>,
    /// Pooled prompt entering the resample projection.
    pooled_prompt: Option<Tensor>,
}

struct DecCache {
    input: Tensor,
    /// Post-activation conv output before upsampling.
    act: Tensor,
}

/// Intermediates of one forward pass, needed by [`Model::backward`].
pub struct ForwardCache {
    guidance: Tensor,
    depth: Tensor,
    concat: Tensor,
    e_concat: Tensor,
    e_depth: Tensor,
    prompt0: Option<Tensor>,
    stages: Vec<StageCache>,
    decoder: Vec<DecCache>,
    head_in: Tensor,
    /// Network output before scaling and clamping, `[1, H, W]`.
    raw: Tensor,
}

impl ForwardCache {
    /// Fused feature of every stage, encoder order.
    pub fn stage_features(&self) -> Vec<&Tensor> {
        self.stages.iter().map(|s| &s.feature).collect()
    }

    pub fn raw(&self) -> &Tensor {
        &self.raw
    }
}

/// A parameter store bound to its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Guidance as the network sees it under the configured ablation.
    pub fn prepare_guidance(&self, guidance: &GuidanceTensor) -> Tensor {
        use super::config::Ablation;
        if self.config.ablation == Ablation::RgbGuidance {
            guidance.with_intensity_substitution().into_tensor()
        } else {
            guidance.tensor().clone()
        }
    }

    fn check_inputs(&self, guidance: &GuidanceTensor, sensor: &DepthMap) -> Result<()> {
        let (h, w) = guidance.dims();
        if sensor.dims() != (h, w) {
            return Err(Error::dims("enhance", &[h, w], &[sensor.height(), sensor.width()]));
        }
        let m = self.config.spatial_multiple();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Domain(format!("input {h}x{w} not divisible by {m}")));
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate.
    pub fn forward(
        &self,
        guidance: &GuidanceTensor,
        sensor: &DepthMap,
        seed: u64,
        training: bool,
    ) -> Result<ForwardCache> {
        self.check_inputs(guidance, sensor)?;
        let cfg = &self.config;
        let l = Layers::read(&self.params, cfg)?;
        let (h, w) = sensor.dims();
        let g = self.prepare_guidance(guidance);
        let depth = sensor.to_zero_invalid().scale(1.0 / cfg.depth_scale).reshape(&[1, h, w])?;
        let concat = Tensor::concat_channels(&[&g, &depth])?;
        let e_concat = relu(&l.enc_concat.forward(&concat)?);
        let e_depth = relu(&l.enc_depth.forward(&depth)?);
        let mut x = e_concat.add(&e_depth)?;
        let prompt0 = match &l.enc_guidance {
            Some(c) => Some(relu(&c.forward(&g)?)),
            None => None,
        };
        let mut prompt = prompt0.clone();

        let s = cfg.stages();
        let mut stages = Vec::with_capacity(s);
        for i in 0..s {
            let x_in = x.clone();
            let (feature, tape) = match (l.blocks.get(i), prompt.take()) {
                (Some(b), Some(m)) => {
                    let mut tape = PpfbTape::new();
                    let out = tape.forward(&FusionState::new(m, x_in.clone())?, b, seed.wrapping_add(i as u64), training)?;
                    let f = if cfg.fusion_residual { out.feature.add(&x_in)? } else { out.feature };
                    prompt = Some(out.prompt);
                    (f, Some(tape))
                }
                _ => (x_in.clone(), None),
            };
            let mut st = StageCache {
                x_in,
                tape,
                feature,
                down_out: None,
                pooled_prompt: None,
            };
            if i + 1 < s {
                x = relu(&l.down[i].forward(&st.feature)?);
                st.down_out = Some(x.clone());
                if let (Some(m), Some(proj)) = (prompt.take(), l.resample.get(i)) {
                    let pooled = avg_pool2(&m)?;
                    let (_, ph, pw) = pooled.chw()?;
                    prompt = Some(Tensor::from_tokens(&proj.forward(&pooled.to_tokens()?)?, ph, pw)?);
                    st.pooled_prompt = Some(pooled);
                }
            }
            stages.push(st);
        }

        let mut y = stages[s - 1].feature.clone();
        let mut decoder = Vec::with_capacity(s.saturating_sub(1));
        for i in (1..s).rev() {
            let act = relu(&l.dec[i - 1].forward(&y)?);
            let next = upsample2(&act)?.add(&stages[i - 1].feature)?;
            decoder.push(DecCache { input: y, act });
            y = next;
        }
        decoder.reverse();
        let raw = l.head.forward(&y)?;
        raw.check_finite("model output")?;
        Ok(ForwardCache {
            guidance: g,
            depth,
            concat,
            e_concat,
            e_depth,
            prompt0,
            stages,
            decoder,
            head_in: y,
            raw,
        })
    }

    /// Depth in mm from a forward cache: scaled and clamped to `(0, d_max]`.
    pub fn prediction(&self, cache: &ForwardCache) -> Result<DepthMap> {
        let (_, h, w) = cache.raw.chw()?;
        let scale = self.config.depth_scale;
        let d_max = self.config.d_max;
        let t = cache.raw.map(|r| (r * scale).clamp(D_MIN, d_max)).reshape(&[h, w])?;
        DepthMap::dense(t)
    }

    /// Inference-mode enhancement.
    pub fn enhance(&self, guidance: &GuidanceTensor, sensor: &DepthMap) -> Result<DepthMap> {
        let cache = self.forward(guidance, sensor, 0, false)?;
        self.prediction(&cache)
    }

    /// Parameter gradients given `grad_pred`, the loss gradient w.r.t. the
    /// predicted depth in mm (`[H, W]`).
    pub fn backward(&self, cache: &ForwardCache, grad_pred: &Tensor) -> Result<ParamStore> {
        let cfg = &self.config;
        let l = Layers::read(&self.params, cfg)?;
        let (_, h, w) = cache.raw.chw()?;
        if grad_pred.dims() != [h, w] {
            return Err(Error::dims("model backward", &[h, w], grad_pred.dims()));
        }
        let scale = cfg.depth_scale;
        let d_max = cfg.d_max;
        let mut g_raw = Tensor::zeros(&[1, h, w]);
        for ((g, &r), &gp) in g_raw.data_mut().iter_mut().zip(cache.raw.data()).zip(grad_pred.data()) {
            let v = r * scale;
            if v > D_MIN && v < d_max {
                *g = gp * scale;
            }
        }

        let mut grads = ParamStore::new();

        let hg = l.head.backward(&cache.head_in, &g_raw)?;
        put_conv_grads(&mut grads, head(), hg.weight, hg.bias);

        let s = cfg.stages();
        let mut g_feature: Vec<Tensor> = cache.stages.iter().map(|st| Tensor::zeros(st.feature.dims())).collect();
        let mut g_y = hg.input;
        for i in 1..s {
            g_feature[i - 1].add_assign(&g_y)?;
            let dc = &cache.decoder[i - 1];
            let g_act = relu_backward(&dc.act, &upsample2_backward(&g_y)?)?;
            let cg = l.dec[i - 1].backward(&dc.input, &g_act)?;
            put_conv_grads(&mut grads, &dec(i), cg.weight, cg.bias);
            g_y = cg.input;
        }
        g_feature[s - 1].add_assign(&g_y)?;

        let mut g_x_next: Option<Tensor> = None;
        let mut g_prompt_next: Option<Tensor> = None;
        for i in (0..s).rev() {
            let st = &cache.stages[i];
            let mut g_f = g_feature[i].clone();
            if let (Some(gx), Some(out)) = (g_x_next.take(), &st.down_out) {
                let cg = l.down[i].backward(&st.feature, &relu_backward(out, &gx)?)?;
                put_conv_grads(&mut grads, &down(i), cg.weight, cg.bias);
                g_f.add_assign(&cg.input)?;
            }
            let mut g_prompt_out = None;
            if let (Some(gm), Some(pooled)) = (g_prompt_next.take(), &st.pooled_prompt) {
                let (_, ph, pw) = pooled.chw()?;
                let lg = l.resample[i].backward(&pooled.to_tokens()?, &gm.to_tokens()?)?;
                grads.set(&format!("{}.weight", resample(i)), lg.weight);
                grads.set(&format!("{}.bias", resample(i)), lg.bias);
                g_prompt_out = Some(avg_pool2_backward(&Tensor::from_tokens(&lg.input, ph, pw)?)?);
            }
            let g_x = match &st.tape {
                Some(tape) => {
                    let b = &l.blocks[i];
                    let upstream = FusionState {
                        prompt: g_prompt_out.unwrap_or_else(|| Tensor::zeros(st.x_in.dims())),
                        feature: g_f.clone(),
                    };
                    let (gs, gp) = tape.backward(b, &upstream)?;
                    gp.write_to(&mut grads, &block(i));
                    g_prompt_next = Some(gs.prompt);
                    let mut gx = gs.feature;
                    if cfg.fusion_residual {
                        gx.add_assign(&g_f)?;
                    }
                    gx
                }
                None => g_f,
            };
            g_x_next = Some(g_x);
        }

        let g_x0 = g_x_next.expect("at least one stage");
        let cg = l.enc_concat.backward(&cache.concat, &relu_backward(&cache.e_concat, &g_x0)?)?;
        put_conv_grads(&mut grads, enc_concat(), cg.weight, cg.bias);
        let cg = l.enc_depth.backward(&cache.depth, &relu_backward(&cache.e_depth, &g_x0)?)?;
        put_conv_grads(&mut grads, enc_depth(), cg.weight, cg.bias);
        if let (Some(enc), Some(m0), Some(gm)) = (&l.enc_guidance, &cache.prompt0, g_prompt_next) {
            let cg = enc.backward(&cache.guidance, &relu_backward(m0, &gm)?)?;
            put_conv_grads(&mut grads, enc_guidance(), cg.weight, cg.bias);
        }
        for (name, p) in self.params.iter() {
            if !grads.contains(name) {
                return Err(Error::MissingParam(format!("gradient for {name}")));
            }
            grads.set_trainable(name, p.trainable)?;
        }
        Ok(grads)
    }
}

fn put_conv_grads(grads: &mut ParamStore, name: &str, gw: Tensor, gb: Tensor) {
    grads.set(&format!("{name}.weight"), gw);
    grads.set(&format!("{name}.bias"), gb);
}

/// `d̂ = f(P, d; θ)` for a parameter store and configuration.
pub fn enhance(guidance: &GuidanceTensor, sensor: &DepthMap, params: &ParamStore, config: &ModelConfig) -> Result<DepthMap> {
    let model = Model {
        config: config.clone(),
        params: params.clone(),
    };
    model.enhance(guidance, sensor)
}
