//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable value. Operations in [`ops`] produce new
//! tensors and, when any input requires a gradient, record a backward
//! closure together with their inputs. [`Tensor::backward`] walks that graph
//! in reverse topological order.
//!
//! Gradients are only stored on leaves created with
//! [`Tensor::parameter`]. Calling `backward` twice without
//! [`Tensor::zero_grad`] in between accumulates into those leaves, the same
//! convention as most deep-learning frameworks.

mod adam;
mod checkpoint;
pub mod ops;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::{Arc, Mutex};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{shape_err, Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState, WeightDecay};
pub(crate) use checkpoint::write_atomic;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, NamedArray,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

/// Floating-point element type. Training runs in `f32`; gradient checks use `f64`.
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    /// `C = alpha A B + beta C` on strided matrices.
    ///
    /// # Safety
    /// Every index reachable through the shapes and strides must lie inside
    /// the respective allocation; see [`ops::gemm`] for the checked entry.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Element for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Element for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any backward graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Computes the gradient of each parent given the upstream gradient.
///
/// Arguments: parents, forward output, upstream gradient, and which parents
/// require a gradient. Entries for parents that do not need one may be `None`.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&[Tensor<T>], &[T], &[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct GradFn<T: Element> {
    name: &'static str,
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Element> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    grad_fn: Option<GradFn<T>>,
}

#[derive(Clone)]
pub struct Tensor<T: Element = f32>(Arc<Node<T>>);

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad);
        if let Some(g) = &self.0.grad_fn {
            d.field("op", &g.name);
        }
        if self.numel() <= 16 {
            d.field("data", &self.0.data);
        }
        d.finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn leaf(shape: Vec<usize>, data: Arc<Vec<T>>, requires_grad: bool) -> Self {
        Tensor(Arc::new(Node {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn: None,
        }))
    }

    /// A constant tensor. Fails if `data.len()` differs from the shape's product
    /// or any extent is zero.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(shape_err!("zero extent in shape {shape:?}"));
        }
        if numel_of(shape) != data.len() {
            return Err(shape_err!(
                "shape {shape:?} needs {} values, got {}",
                numel_of(shape),
                data.len()
            ));
        }
        Ok(Self::leaf(shape.to_vec(), Arc::new(data), false))
    }

    /// A trainable leaf; gradients accumulate on it during [`Tensor::backward`].
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(Self::leaf(t.0.shape.clone(), t.0.data.clone(), true))
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(Vec::new(), Arc::new(vec![value]), false)
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        Self::from_vec(shape, vec![value; numel_of(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// Records an operation result. The graph edge is only kept when gradient
    /// recording is enabled and some parent requires a gradient.
    pub(crate) fn from_op(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len(), "{name}: bad output size");
        let track = is_grad_enabled() && parents.iter().any(Tensor::requires_grad);
        if !track {
            return Self::leaf(shape, Arc::new(data), false);
        }
        Tensor(Arc::new(Node {
            shape,
            data: Arc::new(data),
            requires_grad: true,
            grad: Mutex::new(None),
            grad_fn: Some(GradFn {
                name,
                parents,
                backward,
            }),
        }))
    }

    /// Reinterprets the buffer under a new shape without copying.
    pub(crate) fn shared_view(
        &self,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let track = is_grad_enabled() && parents.iter().any(Tensor::requires_grad);
        Tensor(Arc::new(Node {
            shape,
            data: self.0.data.clone(),
            requires_grad: track,
            grad: Mutex::new(None),
            grad_fn: track.then(|| GradFn {
                name: "reshape",
                parents,
                backward,
            }),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.as_ref().clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.data() {
            [v] => Ok(*v),
            _ => Err(shape_err!("item() on tensor of shape {:?}", self.shape())),
        }
    }

    /// Accumulated gradient of a parameter leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// A constant leaf sharing this tensor's buffer.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), false)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
            .collect();
        Tensor::leaf(
            self.0.shape.clone(),
            Arc::new(data),
            self.requires_grad() && self.is_leaf(),
        )
    }

    fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Back-propagates from this scalar to every reachable parameter leaf.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward() needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS gives a topological order.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.0.grad_fn {
                for p in gf.parents.iter().filter(|p| p.requires_grad()) {
                    if !seen.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut grads: HashMap<usize, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    if node.requires_grad() {
                        let mut slot = node.0.grad.lock().expect("grad lock");
                        match slot.as_mut() {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                            None => *slot = Some(g),
                        }
                    }
                }
                Some(gf) => {
                    let needs: Vec<bool> = gf.parents.iter().map(Tensor::requires_grad).collect();
                    let parent_grads = (gf.backward)(&gf.parents, node.data(), &g, &needs);
                    debug_assert_eq!(parent_grads.len(), gf.parents.len(), "{}", gf.name);
                    for ((p, pg), need) in gf.parents.iter().zip(parent_grads).zip(needs) {
                        let Some(pg) = pg else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel(), "{}: grad size", gf.name);
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_buffer() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(t.rank(), 2);
    }

    #[test]
    fn backward_requires_scalar() {
        let w = Tensor::<f64>::parameter(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = ops::mul(&w, &w).unwrap();
        assert!(matches!(y.backward(), Err(Error::Usage(_))));
    }

    #[test]
    fn grad_of_linear_sum_is_input() {
        // loss = sum(w * x) with x fixed: dloss/dw = x
        let x = Tensor::<f64>::from_vec(&[4], vec![0.5, -1.0, 2.0, 3.5]).unwrap();
        let w = Tensor::<f64>::parameter(&[4], vec![1.0; 4]).unwrap();
        let loss = ops::sum(&ops::mul(&w, &x).unwrap());
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![0.5, -1.0, 2.0, 3.5]);
        assert!(x.grad().is_none());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::<f64>::parameter(&[2], vec![1.0, -2.0]).unwrap();
        let loss = ops::sum(&ops::mul(&w, &w).unwrap());
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![4.0, -8.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, -4.0]);
    }

    #[test]
    fn unreachable_parameter_has_no_grad() {
        let used = Tensor::<f64>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let unused = Tensor::<f64>::parameter(&[2], vec![3.0, 4.0]).unwrap();
        ops::sum(&used).backward().unwrap();
        assert!(used.grad().is_some());
        assert!(unused.grad().is_none());
    }

    #[test]
    fn shared_subexpression_sums_both_paths() {
        let w = Tensor::<f64>::parameter(&[1], vec![3.0]).unwrap();
        let a = ops::mul(&w, &w).unwrap();
        let loss = ops::sum(&ops::add(&a, &a).unwrap());
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let w = Tensor::<f64>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| ops::sum(&ops::mul(&w, &w).unwrap()));
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
        y.backward().unwrap();
        assert!(w.grad().is_none());
    }
}
