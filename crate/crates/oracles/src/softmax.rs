/// `p_i = 1 / Σ_j exp(x_j − x_i)`; no max shift, different rounding path
/// from the usual normalized-exponential form.
pub fn softmax_pairwise(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&xi| 1.0 / x.iter().map(|&xj| (xj - xi).exp()).sum::<f64>())
        .collect()
}
