use polarfuse_core::eval::depth_metrics;
use polarfuse_core::model::{
    enhance, init_params, load_pretrained, loss, loss_and_grad, names, train, train_step, Ablation, Example, Model,
    ModelConfig, Optimizer, OptimizerConfig, TrainConfig,
};
use polarfuse_core::numerics::{fd_gradcheck, Conv3x3, ParamStore, Tensor};
use polarfuse_core::ppfb::{chain_forward, ChainStage, FusionState, PpfbParams, PromptResample, StageTransform};
use polarfuse_core::io::WeightArchive;
use polarfuse_core::polar::GuidanceTensor;
use polarfuse_core::simulate::{generate, generate_sample, DegradationDistribution, SceneDistribution};
use polarfuse_core::DepthMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_inputs(h: usize, w: usize, seed: u64) -> (GuidanceTensor, DepthMap, DepthMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Tensor::from_fn(&[6, h, w], |_| rng.gen_range(0.0..1.0));
    let gt = Tensor::from_fn(&[h, w], |_| rng.gen_range(500.0..3000.0));
    let sensor: Vec<f64> = gt.data().iter().map(|&d| if rng.gen_bool(0.3) { 0.0 } else { d + rng.gen_range(-40.0..40.0) }).collect();
    (
        GuidanceTensor::new_unchecked(g).unwrap(),
        DepthMap::from_zero_invalid(Tensor::from_vec(&[h, w], sensor).unwrap()).unwrap(),
        DepthMap::dense(gt).unwrap(),
    )
}

fn small_config(ablation: Ablation, residual: bool) -> ModelConfig {
    ModelConfig {
        widths: vec![2, 3, 4],
        ablation,
        fusion_residual: residual,
        ..ModelConfig::default()
    }
}

/// Worst per-tensor norm-wise relative error. Elementwise errors are noisy
/// here: ReLU kinks and near-zero coordinates deep in the network dominate.
fn gradcheck(config: ModelConfig, training: bool, seed: u64, h: f64) -> f64 {
    // unit depth scale keeps curvature, and so FD truncation error, small;
    // a large head bias keeps the output far from the clamp kinks
    let config = ModelConfig {
        depth_scale: 1.0,
        head_bias: 100.0,
        // full-size fusion outputs, so no tensor's gradient sits at FD noise level
        fusion_out_gain: 1.0,
        d_max: 1e6,
        ..config
    };
    let (g, sensor, _) = random_inputs(4, 4, seed);
    // metres in, so the network sees the usual input magnitudes
    let sensor = DepthMap::from_zero_invalid(sensor.to_zero_invalid().scale(1e-3)).unwrap();
    let mut model = Model::new(config.clone(), seed).unwrap();
    // move λ off its init value and biases off zero: zero biases put ReLU
    // inputs exactly on the kink wherever a patch of the input is all zero
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for (name, p) in model.params.iter_mut() {
        if name.ends_with("lambda") {
            p.tensor = Tensor::filled(&[1], 0.7);
        } else if name.ends_with("bias") && name != "backbone.head.bias" {
            for v in p.tensor.data_mut() {
                *v = rng.gen_range(-0.2..0.2);
            }
        }
    }
    // targets a few mm from the prediction keep the loss O(1e3), so central
    // differences are not swamped by cancellation, and stay off the |e| kink
    let pred = model.enhance(&g, &sensor).unwrap();
    let offsets: Vec<f64> = (0..16)
        .map(|_| rng.gen_range(5.0..50.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let gt = DepthMap::dense(pred.depth().zip_map(&Tensor::from_vec(&[4, 4], offsets).unwrap(), |d, e| d + e).unwrap()).unwrap();
    let objective = |store: &ParamStore| {
        let m = Model {
            config: config.clone(),
            params: store.clone(),
        };
        let cache = m.forward(&g, &sensor, 11, training)?;
        loss(&m.prediction(&cache)?, &gt)
    };
    let cache = model.forward(&g, &sensor, 11, training).unwrap();
    let (_, grad) = loss_and_grad(&model.prediction(&cache).unwrap(), &gt).unwrap();
    let grads = model.backward(&cache, &grad).unwrap();
    let report = fd_gradcheck(objective, &model.params, &grads, h).unwrap();
    assert_eq!(report.per_tensor.len(), model.params.len());
    report.max_norm_error()
}

#[test]
fn model_gradients_match_finite_differences() {
    for ablation in [Ablation::Ppft, Ablation::NoPpft, Ablation::ShallowPpfb, Ablation::RgbGuidance] {
        for residual in [true, false] {
            for (seed, training) in [(1, false), (2, true), (3, false), (4, true)] {
                let err = gradcheck(small_config(ablation, residual), training, seed, 1e-4);
                assert!(err < 1e-4, "{ablation} residual={residual} training={training}: {err}");
            }
        }
    }
}

#[test]
fn dead_network_outputs_head_bias() {
    let cfg = small_config(Ablation::Ppft, true);
    let mut model = Model::new(cfg.clone(), 3).unwrap();
    for (name, p) in model.params.iter_mut() {
        if name.starts_with(names::head()) || name.starts_with("backbone.dec") {
            p.tensor = Tensor::zeros(p.tensor.dims());
        }
    }
    model.params.set("backbone.head.bias", Tensor::filled(&[1], 1.25));
    let (g, sensor, _) = random_inputs(8, 12, 4);
    let out = model.enhance(&g, &sensor).unwrap();
    assert_eq!(out.valid_count(), 96);
    assert!(out.depth().data().iter().all(|&d| d == 1.25 * cfg.depth_scale));
}

#[test]
fn output_matches_input_extent() {
    for widths in [vec![4, 8, 16], vec![4, 6, 8, 10]] {
        let cfg = ModelConfig {
            widths,
            ..ModelConfig::default()
        };
        let m = Model::new(cfg.clone(), 0).unwrap();
        let k = cfg.spatial_multiple();
        for (h, w) in [(k, k), (2 * k, 3 * k), (5 * k, k)] {
            let (g, s, _) = random_inputs(h, w, 1);
            let out = m.enhance(&g, &s).unwrap();
            assert_eq!(out.dims(), (h, w));
            assert_eq!(out.valid_count(), h * w);
            assert!(out.depth().data().iter().all(|&d| d > 0.0 && d <= cfg.d_max));
        }
        let (g, s, _) = random_inputs(k + 1, k, 1);
        assert!(m.enhance(&g, &s).is_err());
    }
}

#[test]
fn encoder_path_is_the_fusion_chain() {
    let cfg = ModelConfig {
        widths: vec![3, 5, 7],
        fusion_residual: false,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg.clone(), 8).unwrap();
    let (g, sensor, _) = random_inputs(8, 8, 2);
    let cache = model.forward(&g, &sensor, 5, true).unwrap();

    let p = &model.params;
    let conv = |name: &str, stride| {
        Conv3x3::new(p.get(&format!("{name}.weight")).unwrap().clone(), p.get(&format!("{name}.bias")).unwrap().clone(), stride).unwrap()
    };
    let relu = |t: Tensor| t.map(|v| v.max(0.0));
    let depth = sensor.to_zero_invalid().scale(1.0 / cfg.depth_scale).reshape(&[1, 8, 8]).unwrap();
    let x0 = relu(conv(names::enc_concat(), 1).forward(&Tensor::concat_channels(&[g.tensor(), &depth]).unwrap()).unwrap())
        .add(&relu(conv(names::enc_depth(), 1).forward(&depth).unwrap()))
        .unwrap();
    let m0 = relu(conv(names::enc_guidance(), 1).forward(g.tensor()).unwrap());
    let blocks: Vec<PpfbParams> = (0..3).map(|i| PpfbParams::read_from(p, &names::block(i), cfg.dropout).unwrap()).collect();
    let downs: Vec<Conv3x3> = (0..2).map(|i| conv(&names::down(i), 2)).collect();
    let encoders: Vec<Box<dyn Fn(&Tensor) -> polarfuse_core::Result<Tensor>>> = (0..3)
        .map(|i| -> Box<dyn Fn(&Tensor) -> polarfuse_core::Result<Tensor>> {
            match downs.get(i) {
                Some(d) => Box::new(move |x: &Tensor| Ok(relu(d.forward(x)?))),
                None => Box::new(|x: &Tensor| Ok(x.clone())),
            }
        })
        .collect();
    let resamples: Vec<Box<dyn StageTransform>> = (0..3)
        .map(|i| -> Box<dyn StageTransform> {
            if i < 2 {
                let name = names::resample(i);
                Box::new(PromptResample {
                    projection: polarfuse_core::numerics::LinearLayer::new(
                        p.get(&format!("{name}.weight")).unwrap().clone(),
                        p.get(&format!("{name}.bias")).unwrap().clone(),
                    )
                    .unwrap(),
                })
            } else {
                Box::new(polarfuse_core::ppfb::Identity)
            }
        })
        .collect();
    let stages: Vec<ChainStage> = (0..3)
        .map(|i| ChainStage {
            block: &blocks[i],
            encoder: &encoders[i],
            prompt_resample: resamples[i].as_ref(),
        })
        .collect();
    let chain = chain_forward(&FusionState::new(m0, x0).unwrap(), &stages, 5, true).unwrap();
    for (a, b) in cache.stage_features().iter().zip(&chain.stages) {
        assert_eq!(*a, &b.feature);
    }
}

#[test]
fn zeroed_fusion_makes_output_blind_to_polarization() {
    let cfg = ModelConfig {
        widths: vec![4, 8],
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg, 6).unwrap();
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for name in names {
        if name.starts_with("ppfb") && !name.ends_with("lambda") {
            let dims = model.params.get(&name).unwrap().dims().to_vec();
            model.params.set(&name, Tensor::zeros(&dims));
        }
    }
    // first-layer guidance branch: the AoLP and DoLP input columns
    let w = model.params.get_mut("backbone.enc_concat.weight").unwrap();
    let (o, i) = (w.dims()[0], w.dims()[1]);
    for oc in 0..o {
        for ic in [1, 2] {
            for k in 0..9 {
                w.data_mut()[(oc * i + ic) * 9 + k] = 0.0;
            }
        }
    }
    let (g, sensor, _) = random_inputs(8, 8, 9);
    let mut other = g.tensor().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in &mut other.data_mut()[64..192] {
        *v = rng.gen_range(0.0..3.0);
    }
    let other = GuidanceTensor::new_unchecked(other).unwrap();
    assert_ne!(g, other);
    assert_eq!(model.enhance(&g, &sensor).unwrap(), model.enhance(&other, &sensor).unwrap());
}

#[test]
fn inference_is_deterministic_and_free_function_agrees() {
    let model = Model::new(ModelConfig::default(), 1).unwrap();
    let (g, s, _) = random_inputs(16, 16, 3);
    let a = model.enhance(&g, &s).unwrap();
    assert_eq!(a, model.enhance(&g, &s).unwrap());
    assert_eq!(a, enhance(&g, &s, &model.params, &model.config).unwrap());
    let mut broken = model.params.clone();
    let mut missing = ParamStore::new();
    for (n, p) in broken.iter_mut() {
        if n != "ppfb1.fc_out.bias" {
            missing.insert(n, p.tensor.clone()).unwrap();
        }
    }
    assert!(enhance(&g, &s, &missing, &model.config).is_err());
}

#[test]
fn zero_learning_rate_and_full_freeze_leave_params_unchanged() {
    let (g, s, gt) = random_inputs(8, 8, 5);
    let batch = [Example {
        guidance: &g,
        sensor: &s,
        gt: &gt,
    }];
    let mut model = Model::new(small_config(Ablation::Ppft, true), 2).unwrap();
    let before = model.params.clone();
    let mut opt = Optimizer::new(OptimizerConfig::sgd(0.0));
    let r = train_step(&mut model, &batch, &mut opt, 0).unwrap();
    assert!(r.loss > 0.0);
    assert_eq!(model.params, before);

    let cfg = ModelConfig {
        freeze_prefixes: vec![String::new()],
        ..small_config(Ablation::Ppft, true)
    };
    let mut frozen = Model::new(cfg, 2).unwrap();
    let before = frozen.params.clone();
    let mut opt = Optimizer::new(OptimizerConfig::adam(0.1));
    for step in 0..3 {
        train_step(&mut frozen, &batch, &mut opt, step).unwrap();
    }
    assert_eq!(frozen.params, before);
}

#[test]
fn frozen_prefix_is_bit_identical_after_training() {
    let (g, s, gt) = random_inputs(8, 8, 6);
    let batch = [Example {
        guidance: &g,
        sensor: &s,
        gt: &gt,
    }];
    let cfg = ModelConfig {
        freeze_prefixes: vec!["backbone.".into()],
        ..small_config(Ablation::Ppft, true)
    };
    let mut model = Model::new(cfg, 3).unwrap();
    let before = model.params.clone();
    let mut opt = Optimizer::new(OptimizerConfig::sgd(0.05));
    for step in 0..5 {
        train_step(&mut model, &batch, &mut opt, step).unwrap();
    }
    let mut changed = 0;
    for (name, p) in model.params.iter() {
        if name.starts_with("backbone.") {
            assert_eq!(&p.tensor, before.get(name).unwrap(), "{name}");
        } else if &p.tensor != before.get(name).unwrap() {
            changed += 1;
        }
    }
    assert!(changed > 0);
}

#[test]
fn training_is_deterministic_under_a_seed() {
    let samples = generate(3, &SceneDistribution::new(16, 16), &DegradationDistribution::default(), 2).unwrap();
    let ex: Vec<Example> = samples
        .iter()
        .map(|s| Example {
            guidance: &s.guidance,
            sensor: &s.sensor,
            gt: &s.gt,
        })
        .collect();
    let tc = TrainConfig {
        steps: 6,
        batch_size: 2,
        optimizer: OptimizerConfig::adam(1e-3),
        seed: 4,
    };
    let run = || {
        let mut m = Model::new(ModelConfig::default(), 1).unwrap();
        let log = train(&mut m, &ex, &tc).unwrap();
        (m.params, log)
    };
    assert_eq!(run(), run());
}

#[test]
fn overfitting_one_sample_decreases_loss() {
    let s = generate_sample(0, &SceneDistribution::new(32, 32), &DegradationDistribution::default(), 17).unwrap();
    let ex = [Example {
        guidance: &s.guidance,
        sensor: &s.sensor,
        gt: &s.gt,
    }];
    let mut model = Model::new(ModelConfig::default(), 0).unwrap();
    let tc = TrainConfig {
        steps: 200,
        batch_size: 1,
        optimizer: OptimizerConfig::adam(2e-3),
        seed: 0,
    };
    let log = train(&mut model, &ex, &tc).unwrap();
    let avg = |r: &[polarfuse_core::model::StepReport]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    let windows: Vec<f64> = log.chunks(40).map(avg).collect();
    for w in windows.windows(2) {
        assert!(w[1] < w[0], "moving average rose: {windows:?}");
    }
}

#[test]
fn trained_model_beats_its_sensor_input() {
    let dist = SceneDistribution::new(32, 32);
    let degr = DegradationDistribution::default();
    let train_set = generate(48, &dist, &degr, 100).unwrap();
    let test_set = generate(12, &dist, &degr, 200).unwrap();
    let ex: Vec<Example> = train_set
        .iter()
        .map(|s| Example {
            guidance: &s.guidance,
            sensor: &s.sensor,
            gt: &s.gt,
        })
        .collect();
    let mut model = Model::new(ModelConfig::default(), 0).unwrap();
    let tc = TrainConfig {
        steps: 400,
        batch_size: 1,
        optimizer: OptimizerConfig::adam(2e-3),
        seed: 0,
    };
    train(&mut model, &ex, &tc).unwrap();
    let (mut pred_rmse, mut sensor_rmse) = (0.0, 0.0);
    for s in &test_set {
        pred_rmse += depth_metrics(&model.enhance(&s.guidance, &s.sensor).unwrap(), &s.gt).unwrap().rmse;
        sensor_rmse += depth_metrics(&s.sensor, &s.gt).unwrap().rmse;
    }
    assert!(pred_rmse < sensor_rmse, "model {pred_rmse} vs sensor {sensor_rmse}");
}

#[test]
fn pretrained_backbone_round_trips_through_an_archive() {
    let src = init_params(&ModelConfig::default(), 10).unwrap();
    let archive = WeightArchive::from_bytes(&WeightArchive::from_params(&src).unwrap().to_bytes().unwrap()).unwrap();
    let mut dst = init_params(&ModelConfig::default(), 11).unwrap();
    let report = load_pretrained(&mut dst, &archive, &[]);
    assert_eq!(report.loaded.len() + report.kept_fresh.len(), dst.len());
}

