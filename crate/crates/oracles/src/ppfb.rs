//! Per-token scalar reference of the prompt fusion block.

/// Row-major `[out][in]` weight plus bias.
#[derive(Clone, Debug)]
pub struct Dense {
    pub out: usize,
    pub inp: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.inp);
        let mut y = Vec::with_capacity(self.out);
        for o in 0..self.out {
            let mut acc = self.bias[o];
            for i in 0..self.inp {
                acc += self.weight[o * self.inp + i] * x[i];
            }
            y.push(acc);
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct BlockWeights {
    pub kqv: Dense,
    pub attn: Dense,
    pub d: Dense,
    pub stats: Dense,
    pub out: Dense,
    pub lambda: f64,
}

/// Returns `(M*, X*)` in channel-first `[C][H*W]` layout.
///
/// `prompt` and `feature` are channel-first too. `dropout_mask`, when given,
/// multiplies the `2C` hidden values of token `t` at `[t*2C .. (t+1)*2C]`.
pub fn block_reference(
    prompt: &[f64],
    feature: &[f64],
    channels: usize,
    tokens: usize,
    w: &BlockWeights,
    dropout_mask: Option<&[f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let c = channels;
    let at = |buf: &[f64], t: usize| -> Vec<f64> { (0..c).map(|ch| buf[ch * tokens + t]).collect() };

    // channel statistics over all tokens first
    let mut s = vec![0.0; 2 * c];
    for t in 0..tokens {
        let m = at(prompt, t);
        let x = at(feature, t);
        let sum: Vec<f64> = m.iter().zip(&x).map(|(a, b)| a + b).collect();
        let u = w.stats.apply(&sum);
        for j in 0..2 * c {
            s[j] += u[j];
        }
    }
    for v in s.iter_mut() {
        *v /= tokens as f64;
    }

    let mut m_star = vec![0.0; c * tokens];
    let mut x_star = vec![0.0; c * tokens];
    for t in 0..tokens {
        let m = at(prompt, t);
        let x = at(feature, t);
        let mut cat = m.clone();
        cat.extend_from_slice(&x);
        let kqv = w.kqv.apply(&cat);
        let k = &kqv[0..c];
        let q = &kqv[c..2 * c];
        let v = &kqv[2 * c..3 * c];
        let mut qk = q.to_vec();
        qk.extend_from_slice(k);
        let logits = w.attn.apply(&qk);
        let probs = crate::softmax::softmax_pairwise(&logits);
        let fused: Vec<f64> = (0..c).map(|i| w.lambda * probs[i] * v[i]).collect();
        let mut hidden = w.d.apply(&fused);
        if let Some(mask) = dropout_mask {
            for j in 0..2 * c {
                hidden[j] *= mask[t * 2 * c + j];
            }
        }
        let gated: Vec<f64> = (0..c)
            .map(|i| (s[i] * m[i] + s[c + i] * x[i]) * k[i])
            .collect();
        let upd = w.out.apply(&gated);
        for i in 0..c {
            x_star[i * tokens + t] = hidden[i];
            m_star[i * tokens + t] = hidden[c + i] + upd[i];
        }
    }
    (m_star, x_star)
}
