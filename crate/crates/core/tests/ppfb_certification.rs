use polarfuse_core::numerics::{dropout_mask, fd_gradcheck, LinearLayer, ParamStore, Tensor};
use polarfuse_core::ppfb::{
    chain_forward, ppfb_forward, ChainStage, FusionState, Identity, PpfbParams, PpfbTape, PromptResample,
    StageTransform,
};
use polarfuse_oracles::ppfb::{block_reference, BlockWeights, Dense};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(l: &LinearLayer) -> Dense {
    Dense {
        out: l.out_features(),
        inp: l.in_features(),
        weight: l.weight.data().to_vec(),
        bias: l.bias.data().to_vec(),
    }
}

fn weights(p: &PpfbParams) -> BlockWeights {
    BlockWeights {
        kqv: dense(&p.w_kqv),
        attn: dense(&p.fc_attn),
        d: dense(&p.fc_d),
        stats: dense(&p.fc_stats),
        out: dense(&p.fc_out),
        lambda: p.lambda,
    }
}

/// Random params with non-zero biases and λ, so every term is exercised.
fn random_params(c: usize, rng: &mut ChaCha8Rng) -> PpfbParams {
    let mut p = PpfbParams::init(c, rng);
    for l in [&mut p.w_kqv, &mut p.fc_attn, &mut p.fc_d, &mut p.fc_stats, &mut p.fc_out] {
        for b in l.bias.data_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    p.lambda = rng.gen_range(0.5..2.0);
    p
}

fn random_state(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> FusionState {
    let mut t = || Tensor::from_fn(&[c, h, w], |_| rng.gen_range(-1.0..1.0));
    FusionState::new(t(), t()).unwrap()
}

#[test]
fn vectorized_block_matches_per_token_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..60 {
        let c = rng.gen_range(1..=8);
        let h = rng.gen_range(1..=4);
        let w = rng.gen_range(1..=(16 / h).min(4));
        let p = random_params(c, &mut rng);
        let s = random_state(c, h, w, &mut rng);
        let training = case % 2 == 1;
        let out = ppfb_forward(&s, &p, case, training).unwrap();
        let mask = training.then(|| dropout_mask(h * w * 2 * c, p.dropout, case).unwrap());
        let (m_ref, x_ref) = block_reference(
            s.prompt.data(),
            s.feature.data(),
            c,
            h * w,
            &weights(&p),
            mask.as_deref(),
        );
        let err = |a: &Tensor, b: &[f64]| a.data().iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err(&out.prompt, &m_ref) <= 1e-12, "case {case}: prompt {}", err(&out.prompt, &m_ref));
        assert!(err(&out.feature, &x_ref) <= 1e-12, "case {case}: feature");
    }
}

fn pack(state: &FusionState, p: &PpfbParams) -> ParamStore {
    let mut store = ParamStore::new();
    p.write_to(&mut store, "block");
    store.insert("input.prompt", state.prompt.clone()).unwrap();
    store.insert("input.feature", state.feature.clone()).unwrap();
    store
}

fn gradcheck_case(seed: u64, training: bool) -> (f64, Vec<(String, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.gen_range(2..=5);
    let (h, w) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let p = random_params(c, &mut rng);
    let s = random_state(c, h, w, &mut rng);
    let dropout = p.dropout;
    let objective = |store: &ParamStore| {
        let p = PpfbParams::read_from(store, "block", dropout)?;
        let s = FusionState::new(store.get("input.prompt")?.clone(), store.get("input.feature")?.clone())?;
        let o = ppfb_forward(&s, &p, seed, training)?;
        Ok(o.prompt.sum_sq() + o.feature.sum_sq())
    };
    let mut tape = PpfbTape::new();
    let out = tape.forward(&s, &p, seed, training).unwrap();
    let upstream = FusionState {
        prompt: out.prompt.scale(2.0),
        feature: out.feature.scale(2.0),
    };
    let (gs, gp) = tape.backward(&p, &upstream).unwrap();
    let report = fd_gradcheck(objective, &pack(&s, &p), &pack(&gs, &gp), 1e-5).unwrap();
    (report.max_rel_error, report.per_tensor)
}

#[test]
fn block_gradients_pass_finite_difference_certification() {
    for seed in 0..20 {
        for training in [false, true] {
            let (max, per) = gradcheck_case(seed, training);
            assert_eq!(per.len(), 13);
            assert!(max < 1e-4, "seed {seed} training={training}: {per:?}");
        }
    }
}

#[test]
fn block_is_equivariant_to_spatial_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (c, h, w) = (4, 3, 4);
    let p = random_params(c, &mut rng);
    let s = random_state(c, h, w, &mut rng);
    let n = h * w;
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let permute = |t: &Tensor| Tensor::from_fn(t.dims(), |i| t.data()[(i / n) * n + perm[i % n]]);
    let permuted = FusionState::new(permute(&s.prompt), permute(&s.feature)).unwrap();
    let a = ppfb_forward(&s, &p, 0, false).unwrap();
    let b = ppfb_forward(&permuted, &p, 0, false).unwrap();
    assert!(permute(&a.prompt).max_abs_diff(&b.prompt) < 1e-12);
    assert!(permute(&a.feature).max_abs_diff(&b.feature) < 1e-12);
}

#[test]
fn training_mode_is_deterministic_per_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_params(6, &mut rng);
    let s = random_state(6, 4, 4, &mut rng);
    let a = ppfb_forward(&s, &p, 42, true).unwrap();
    let b = ppfb_forward(&s, &p, 42, true).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, ppfb_forward(&s, &p, 43, true).unwrap());
}

#[test]
fn four_stage_chain_follows_declared_schedule() {
    let widths = [8usize, 16, 32, 64];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let blocks: Vec<PpfbParams> = widths.iter().map(|&c| PpfbParams::init(c, &mut rng)).collect();
    let down: Vec<Box<dyn StageTransform>> = widths
        .iter()
        .enumerate()
        .map(|(i, &c)| -> Box<dyn StageTransform> {
            match widths.get(i + 1) {
                Some(&next) => Box::new(PromptResample {
                    projection: LinearLayer::init(c, next, 1.0, &mut rng),
                }),
                None => Box::new(Identity),
            }
        })
        .collect();
    let stages: Vec<ChainStage> = blocks
        .iter()
        .zip(&down)
        .map(|(b, d)| ChainStage {
            block: b,
            encoder: d.as_ref(),
            prompt_resample: d.as_ref(),
        })
        .collect();
    let s = random_state(8, 16, 16, &mut rng);
    let out = chain_forward(&s, &stages, 0, false).unwrap();
    let dims: Vec<Vec<usize>> = out.stages.iter().map(|st| st.feature.dims().to_vec()).collect();
    assert_eq!(dims, vec![vec![8, 16, 16], vec![16, 8, 8], vec![32, 4, 4], vec![64, 2, 2]]);
    for st in &out.stages {
        assert_eq!(st.prompt.dims(), st.feature.dims());
    }
    assert_eq!(out.feature.dims(), &[64, 2, 2]);
}
