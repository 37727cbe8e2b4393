use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Mean of `|e| + e²` over the valid pixels of `gt`, with `e = gt − pred`
/// in mm. Pred values are used as stored, whatever their validity.
pub fn loss(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    Ok(loss_and_grad(pred, gt)?.0)
}

/// The loss and its gradient w.r.t. every pred pixel (`[H, W]`).
pub fn loss_and_grad(pred: &DepthMap, gt: &DepthMap) -> Result<(f64, Tensor)> {
    pred.same_dims(gt, "loss")?;
    let n = gt.valid_count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(pred.depth().dims());
    for (((g, &p), &t), &ok) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.depth().data())
        .zip(gt.depth().data())
        .zip(gt.valid())
    {
        if ok {
            let e = t - p;
            total += e.abs() + e * e;
            // d/dp (|t-p| + (t-p)²), with sign(0) = 0
            *g = -(e.signum() * (e != 0.0) as u8 as f64 + 2.0 * e) * inv;
        }
    }
    let value = total * inv;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss = {value}")));
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(values: &[f64], valid: &[bool]) -> DepthMap {
        DepthMap::new(Tensor::from_vec(&[1, values.len()], values.to_vec()).unwrap(), valid.to_vec()).unwrap()
    }

    #[test]
    fn analytic_examples() {
        let gt = map(&[1000.0, 500.0], &[true, false]);
        assert_eq!(loss(&map(&[1000.0, 7.0], &[true, true]), &gt).unwrap(), 0.0);
        assert_eq!(loss(&map(&[1002.0, 7.0], &[true, true]), &gt).unwrap(), 6.0);
        let gt2 = map(&[10.0, 20.0], &[true, true]);
        assert_eq!(loss(&map(&[11.0, 17.0], &[true, true]), &gt2).unwrap(), 7.0);
        assert!(matches!(loss(&gt, &map(&[1.0, 1.0], &[false, false])), Err(Error::EmptyMask)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let gt = map(&[10.0, 20.0, 30.0], &[true, true, false]);
        let pred = [10.4, 18.0, 3.0];
        let (_, g) = loss_and_grad(&map(&pred, &[true; 3]), &gt).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut a = pred;
            let mut b = pred;
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&map(&a, &[true; 3]), &gt).unwrap() - loss(&map(&b, &[true; 3]), &gt).unwrap()) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-6, "{i}: {fd} vs {}", g.data()[i]);
        }
    }

    proptest! {
        #[test]
        fn non_negative_and_zero_only_at_match(
            gt in prop::collection::vec(1.0f64..5000.0, 1..12),
            noise in prop::collection::vec(-50.0f64..50.0, 12),
        ) {
            let n = gt.len();
            let truth = map(&gt, &vec![true; n]);
            let pred: Vec<f64> = gt.iter().zip(&noise).map(|(g, e)| (g + e).max(0.5)).collect();
            let l = loss(&map(&pred, &vec![true; n]), &truth).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, pred == gt);
        }
    }
}
