use crate::error::{shape_err, Result};
use crate::tensor::{Element, Tensor};

fn same_shape<T: Element>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{op}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let out = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| *x + *y)
        .collect();
    Ok(Tensor::from_op(
        "add",
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(|_, _, g, needs| needs.iter().map(|&n| n.then(|| g.to_vec())).collect()),
    ))
}

pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    let out = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| *x - *y)
        .collect();
    Ok(Tensor::from_op(
        "sub",
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(|_, _, g, needs| {
            vec![
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.iter().map(|v| -*v).collect()),
            ]
        }),
    ))
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let out = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| *x * *y)
        .collect();
    Ok(Tensor::from_op(
        "mul",
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(|p, _, g, needs| {
            let prod =
                |other: &Tensor<T>| g.iter().zip(other.data()).map(|(g, o)| *g * *o).collect();
            vec![needs[0].then(|| prod(&p[1])), needs[1].then(|| prod(&p[0]))]
        }),
    ))
}

pub fn scale<T: Element>(a: &Tensor<T>, factor: T) -> Tensor<T> {
    let out = a.data().iter().map(|x| *x * factor).collect();
    Tensor::from_op(
        "scale",
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(move |_, _, g, _| vec![Some(g.iter().map(|v| *v * factor).collect())]),
    )
}

/// Sum of all elements as a scalar.
pub fn sum<T: Element>(a: &Tensor<T>) -> Tensor<T> {
    let total = a.data().iter().copied().sum();
    let n = a.numel();
    Tensor::from_op(
        "sum",
        Vec::new(),
        vec![total],
        vec![a.clone()],
        Box::new(move |_, _, g, _| vec![Some(vec![g[0]; n])]),
    )
}

/// `x` for `x >= 0`, `exp(x) - 1` otherwise (alpha = 1).
pub fn elu<T: Element>(a: &Tensor<T>) -> Tensor<T> {
    let out = a
        .data()
        .iter()
        .map(|&x| if x >= T::zero() { x } else { x.exp_m1() })
        .collect();
    Tensor::from_op(
        "elu",
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(|p, y, g, _| {
            // d/dx = 1 on the positive side and exp(x) = y + 1 on the negative side.
            let gx = p[0]
                .data()
                .iter()
                .zip(y)
                .zip(g)
                .map(|((&x, &y), &g)| {
                    if x >= T::zero() {
                        g
                    } else {
                        g * (y + T::one())
                    }
                })
                .collect();
            vec![Some(gx)]
        }),
    )
}
