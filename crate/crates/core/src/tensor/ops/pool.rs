use crate::error::{shape_err, Error, Result};
use crate::tensor::{Element, Tensor};

/// Non-overlapping mean over windows of `k` samples along the last axis.
/// Trailing samples that do not fill a window are dropped.
pub fn avg_pool_temporal<T: Element>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    if k == 0 {
        return Err(Error::Parameter("pooling window must be positive".into()));
    }
    let t_len = *input
        .shape()
        .last()
        .ok_or_else(|| shape_err!("cannot pool a scalar"))?;
    let t_out = t_len / k;
    if t_out == 0 {
        return Err(shape_err!("pool window {k} exceeds time length {t_len}"));
    }
    let inv = T::one() / T::from_usize(k).expect("window");
    let out: Vec<T> = input
        .data()
        .chunks_exact(t_len)
        .flat_map(|row| {
            row.chunks_exact(k)
                .take(t_out)
                .map(move |w| w.iter().copied().sum::<T>() * inv)
        })
        .collect();
    let mut shape = input.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = t_out;
    let n = input.numel();
    Ok(Tensor::from_op(
        "avg_pool_temporal",
        shape,
        out,
        vec![input.clone()],
        Box::new(move |_, _, g, _| {
            let mut gx = vec![T::zero(); n];
            for (row, (gxr, gr)) in gx
                .chunks_exact_mut(t_len)
                .zip(g.chunks_exact(t_out))
                .enumerate()
            {
                let _ = row;
                for (w, &gw) in gxr.chunks_exact_mut(k).take(t_out).zip(gr) {
                    w.iter_mut().for_each(|v| *v = gw * inv);
                }
            }
            vec![Some(gx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_window() {
        let x = Tensor::<f64>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool_temporal(&x, 4).unwrap().data(), &[2.5]);
    }

    #[test]
    fn remainder_is_dropped() {
        let x = Tensor::<f32>::zeros(&[2, 16, 1, 1, 75]).unwrap();
        assert_eq!(avg_pool_temporal(&x, 8).unwrap().shape(), &[2, 16, 1, 1, 9]);
    }

    #[test]
    fn zero_window_is_rejected() {
        let x = Tensor::<f32>::zeros(&[4]).unwrap();
        assert!(matches!(avg_pool_temporal(&x, 0), Err(Error::Parameter(_))));
    }
}
