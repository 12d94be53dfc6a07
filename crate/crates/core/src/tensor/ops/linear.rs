use crate::error::{shape_err, Result};
use crate::tensor::ops::conv::{axpy, dot};
use crate::tensor::{Element, Tensor};

/// Affine map `x W^T + b` for `x [B, F]`, `W [O, F]`, `b [O]`.
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[1] || b.shape() != [w.shape()[0]]
    {
        return Err(shape_err!(
            "linear: x {:?}, W {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        ));
    }
    let (batch, f) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let mut out = Vec::with_capacity(batch * o);
    for xr in x.data().chunks_exact(f) {
        for (wr, bias) in w.data().chunks_exact(f).zip(b.data()) {
            out.push(*bias + dot(wr, xr));
        }
    }
    Ok(Tensor::from_op(
        "linear",
        vec![batch, o],
        out,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |p, _, g, needs| {
            let (x, w) = (p[0].data(), p[1].data());
            let gx = needs[0].then(|| {
                let mut gx = vec![T::zero(); batch * f];
                for (gxr, gr) in gx.chunks_exact_mut(f).zip(g.chunks_exact(o)) {
                    for (wr, &gv) in w.chunks_exact(f).zip(gr) {
                        axpy(gv, wr, gxr);
                    }
                }
                gx
            });
            let gw = needs[1].then(|| {
                let mut gw = vec![T::zero(); o * f];
                for (xr, gr) in x.chunks_exact(f).zip(g.chunks_exact(o)) {
                    for (gwr, &gv) in gw.chunks_exact_mut(f).zip(gr) {
                        axpy(gv, xr, gwr);
                    }
                }
                gw
            });
            let gb = needs[2].then(|| {
                let mut gb = vec![T::zero(); o];
                for gr in g.chunks_exact(o) {
                    gb.iter_mut().zip(gr).for_each(|(a, b)| *a += *b);
                }
                gb
            });
            vec![gx, gw, gb]
        }),
    ))
}
