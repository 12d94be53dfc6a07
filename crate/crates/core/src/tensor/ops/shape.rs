use crate::error::{shape_err, Result};
use crate::tensor::{numel_of, Element, Tensor};

pub fn reshape<T: Element>(t: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if shape.contains(&0) || numel_of(shape) != t.numel() {
        return Err(shape_err!("cannot reshape {:?} into {shape:?}", t.shape()));
    }
    Ok(t.shared_view(
        shape.to_vec(),
        vec![t.clone()],
        Box::new(|_, _, g, _| vec![Some(g.to_vec())]),
    ))
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel_of(&shape[..axis]);
    let inner = numel_of(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat<T: Element>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err!("concat of nothing"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(shape_err!(
            "concat axis {axis} out of range for rank {rank}"
        ));
    }
    for p in parts {
        let ok = p.rank() == rank
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(shape_err!(
                "concat shape mismatch: {:?} vs {:?} on axis {axis}",
                p.shape(),
                first.shape()
            ));
        }
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;

    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &e) in parts.iter().zip(&extents) {
            let chunk = e * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let parents: Vec<Tensor<T>> = parts.iter().map(|p| (*p).clone()).collect();
    Ok(Tensor::from_op(
        "concat",
        shape,
        out,
        parents,
        Box::new(move |_, _, g, needs| {
            let mut grads: Vec<Option<Vec<T>>> = extents
                .iter()
                .zip(needs)
                .map(|(&e, &n)| n.then(|| Vec::with_capacity(outer * e * inner)))
                .collect();
            let row = total * inner;
            for o in 0..outer {
                let mut off = o * row;
                for (gp, &e) in grads.iter_mut().zip(&extents) {
                    let chunk = e * inner;
                    if let Some(gp) = gp {
                        gp.extend_from_slice(&g[off..off + chunk]);
                    }
                    off += chunk;
                }
            }
            grads
        }),
    ))
}

/// The sub-tensor `start..start + len` along `axis`.
pub fn narrow<T: Element>(
    t: &Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Tensor<T>> {
    if axis >= t.rank() || len == 0 || start + len > t.shape()[axis] {
        return Err(shape_err!(
            "narrow({axis}, {start}, {len}) out of range for {:?}",
            t.shape()
        ));
    }
    let (outer, extent, inner) = split_at_axis(t.shape(), axis);
    let mut shape = t.shape().to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        out.extend_from_slice(&t.data()[base..base + len * inner]);
    }
    let n = t.numel();
    Ok(Tensor::from_op(
        "narrow",
        shape,
        out,
        vec![t.clone()],
        Box::new(move |_, _, g, _| {
            let mut gx = vec![T::zero(); n];
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                gx[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }),
    ))
}

/// Repeats every slice along axis 0 `repeats` times in place:
/// rows `[a, b]` become `[a, a, b, b]` for `repeats = 2`.
pub fn repeat_interleave<T: Element>(t: &Tensor<T>, repeats: usize) -> Result<Tensor<T>> {
    if repeats == 0 || t.rank() == 0 {
        return Err(shape_err!(
            "repeat_interleave({repeats}) on shape {:?}",
            t.shape()
        ));
    }
    let rows = t.shape()[0];
    let inner = t.numel() / rows;
    let mut shape = t.shape().to_vec();
    shape[0] = rows * repeats;
    let mut out = Vec::with_capacity(t.numel() * repeats);
    for r in 0..rows {
        let row = &t.data()[r * inner..(r + 1) * inner];
        for _ in 0..repeats {
            out.extend_from_slice(row);
        }
    }
    Ok(Tensor::from_op(
        "repeat_interleave",
        shape,
        out,
        vec![t.clone()],
        Box::new(move |_, _, g, _| {
            let mut gx = vec![T::zero(); rows * inner];
            for r in 0..rows {
                let dst = &mut gx[r * inner..(r + 1) * inner];
                for k in 0..repeats {
                    let src = &g[(r * repeats + k) * inner..(r * repeats + k + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
                }
            }
            vec![Some(gx)]
        }),
    ))
}
