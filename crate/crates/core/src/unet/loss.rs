use super::tensor::{Scalar, Tensor4};
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over pixels that are valid and labeled.
///
/// `targets` hold 1-based class indices per pixel (0 = unlabeled). Returns
/// the loss and its gradient with respect to the logits, which is
/// `(softmax - onehot) / count` at included pixels and zero elsewhere.
pub fn masked_cross_entropy<T: Scalar>(
    logits: &Tensor4<T>,
    targets: &[u8],
    valid: &[bool],
) -> Result<(f64, Tensor4<T>)> {
    let k = logits.c();
    let npix = logits.n() * logits.h() * logits.w();
    if targets.len() != npix || valid.len() != npix {
        return Err(Error::Dimension(format!(
            "{} targets / {} mask entries for {npix} pixels",
            targets.len(),
            valid.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t as usize > k) {
        return Err(Error::InvalidInput(format!("target index {t} exceeds {k} classes")));
    }
    let count = targets.iter().zip(valid).filter(|(&t, &v)| v && t != 0).count();
    if count == 0 {
        return Err(Error::NoSupervision);
    }
    let inv = T::from(1.0 / count as f64).expect("float cast");
    let mut grad = Tensor4::zeros(logits.shape());
    let mut loss = 0f64;
    for ((px, g), (&t, &v)) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.data_mut().chunks_exact_mut(k))
        .zip(targets.iter().zip(valid))
    {
        if !v || t == 0 {
            continue;
        }
        let m = px.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (gi, &z) in g.iter_mut().zip(px) {
            *gi = (z - m).exp();
            sum += *gi;
        }
        let target = t as usize - 1;
        let log_p = (px[target] - m) - sum.ln();
        loss -= log_p.to_f64().expect("finite");
        for gi in g.iter_mut() {
            *gi = *gi / sum * inv;
        }
        g[target] -= inv;
    }
    Ok((loss / count as f64, grad))
}
