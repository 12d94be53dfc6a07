use crate::error::{shape_err, Error, Result};
use crate::tensor::{Element, Tensor};

/// Mean over the batch of `-log softmax(logits)[label]` for `logits [B, K]`.
pub fn softmax_cross_entropy<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(shape_err!(
            "logits {:?} vs {} labels",
            logits.shape(),
            labels.len()
        ));
    }
    let (batch, k) = (logits.shape()[0], logits.shape()[1]);
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Input(format!("label {bad} outside 0..{k}")));
    }
    let mut probs = Vec::with_capacity(batch * k);
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let shifted: Vec<T> = row.iter().map(|&z| z - max).collect();
        let log_z = shifted.iter().map(|&s| s.exp()).sum::<T>().ln();
        total += log_z - shifted[label];
        probs.extend(shifted.iter().map(|&s| (s - log_z).exp()));
    }
    let n = T::from_usize(batch).expect("batch");
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        "softmax_cross_entropy",
        Vec::new(),
        vec![total / n],
        vec![logits.clone()],
        Box::new(move |_, _, g, _| {
            let scale = g[0] / n;
            let mut gx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (b, &label) in labels.iter().enumerate() {
                gx[b * k + label] -= scale;
            }
            vec![Some(gx)]
        }),
    ))
}
