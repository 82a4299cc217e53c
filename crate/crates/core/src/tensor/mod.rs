//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! Nodes form a DAG ordered by creation id; inputs always carry smaller ids
//! than the nodes consuming them, so walking ids in descending order is a
//! reverse topological order. Gradients persist only on leaves (parameters,
//! inputs); interior gradient buffers are transient per `backward` call, which
//! is what makes repeated backward calls accumulate leaf gradients without
//! double-counting interior contributions.

pub mod conv;
pub mod grad_check;
pub(crate) mod kernel;
mod ops;

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{MmcError, Result};

/// Scalar element of a tensor.
///
/// Training storage is `f32`; the gradient checker re-evaluates the same
/// graph code at `f64` so finite-difference noise does not mask real bugs.
pub trait Elem: num_traits::Float + fmt::Debug + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Elem for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Elem for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) type BackwardFn<E> = Box<dyn Fn(&[E], &mut GradStore<E>)>;

pub(crate) struct Inner<E: Elem> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<E>,
    pub(crate) grad: Option<Vec<E>>,
    pub(crate) requires_grad: bool,
    pub(crate) parents: Vec<Tensor<E>>,
    pub(crate) backward_fn: Option<BackwardFn<E>>,
}

/// Dense N-dimensional array participating in a differentiation graph.
///
/// Cheap to clone: clones share storage and graph node.
pub struct Tensor<E: Elem = f32> {
    pub(crate) inner: Rc<RefCell<Inner<E>>>,
}

impl<E: Elem> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Elem> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("id", &b.id)
            .field("shape", &b.shape)
            .field("requires_grad", &b.requires_grad)
            .finish()
    }
}

/// Transient per-backward gradient buffers, keyed by node id.
pub(crate) struct GradStore<E: Elem> {
    bufs: HashMap<u64, Vec<E>>,
}

impl<E: Elem> GradStore<E> {
    fn new() -> Self {
        GradStore {
            bufs: HashMap::new(),
        }
    }

    /// Buffer to accumulate into for `t`, or None when `t` takes no gradient.
    pub(crate) fn acc(&mut self, t: &Tensor<E>) -> Option<&mut [E]> {
        let (id, n, rg) = {
            let b = t.inner.borrow();
            (b.id, b.data.len(), b.requires_grad)
        };
        if !rg {
            return None;
        }
        Some(self.bufs.entry(id).or_insert_with(|| vec![E::zero(); n]))
    }

    fn take(&mut self, id: u64) -> Option<Vec<E>> {
        self.bufs.remove(&id)
    }
}

impl<E: Elem> Tensor<E> {
    pub(crate) fn new_inner(
        shape: Vec<usize>,
        data: Vec<E>,
        requires_grad: bool,
        parents: Vec<Tensor<E>>,
        backward_fn: Option<BackwardFn<E>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                grad: None,
                requires_grad,
                parents,
                backward_fn,
            })),
        }
    }

    /// Constant (non-differentiable) tensor from raw data.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(MmcError::Contract(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(MmcError::Contract(format!(
                "shape {shape:?} wants {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self::new_inner(shape.to_vec(), data, false, vec![], None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        let n: usize = shape.iter().product();
        Self::from_vec(shape, vec![v; n]).expect("full: valid shape")
    }

    pub fn scalar(v: E) -> Self {
        Self::from_vec(&[1], vec![v]).expect("scalar")
    }

    /// Mark a leaf as differentiable. Must be called before the tensor is
    /// used in any operation whose gradient should reach it.
    pub fn with_grad(self) -> Self {
        {
            let mut b = self.inner.borrow_mut();
            assert!(
                b.parents.is_empty(),
                "with_grad applies to leaves, not op outputs"
            );
            b.requires_grad = true;
        }
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Borrow the raw data. Keep the guard short-lived: ops and backward
    /// borrow internally.
    pub fn data(&self) -> Ref<'_, [E]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> E {
        let b = self.inner.borrow();
        assert_eq!(b.data.len(), 1, "item() on non-scalar shape {:?}", b.shape);
        b.data[0]
    }

    pub fn grad_vec(&self) -> Option<Vec<E>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite data in place (same length). The graph is not rebuilt;
    /// callers mutate only between forward passes.
    pub fn set_data(&self, new: &[E]) -> Result<()> {
        let mut b = self.inner.borrow_mut();
        if b.data.len() != new.len() {
            return Err(MmcError::Contract(format!(
                "set_data: length {} into tensor of {} elements",
                new.len(),
                b.data.len()
            )));
        }
        b.data.copy_from_slice(new);
        Ok(())
    }

    /// In-place update used by optimizers: `f(i, &mut value)` per element,
    /// with the gradient for element i passed when present.
    pub fn update_data(&self, mut f: impl FnMut(usize, &mut E, E)) {
        let mut b = self.inner.borrow_mut();
        let Inner { data, grad, .. } = &mut *b;
        let g = grad.as_deref();
        for (i, v) in data.iter_mut().enumerate() {
            let gi = g.map_or(E::zero(), |g| g[i]);
            f(i, v, gi);
        }
    }

    /// Copy with the graph cut: same values, no parents, no gradient.
    pub fn detach(&self) -> Self {
        let b = self.inner.borrow();
        Self::new_inner(b.shape.clone(), b.data.clone(), false, vec![], None)
    }

    /// Accumulate d(self)/d(leaf) into every differentiable leaf's grad.
    ///
    /// Non-destructive: the same graph may be walked again; interior buffers
    /// are rebuilt from scratch each call, so repeated calls add exactly one
    /// more copy of the gradient to each leaf.
    pub fn backward(&self) -> Result<()> {
        {
            let b = self.inner.borrow();
            if b.data.len() != 1 {
                return Err(MmcError::Contract(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    b.shape
                )));
            }
            if !b.requires_grad {
                return Err(MmcError::Contract(
                    "backward on a constant: loss is not connected to any differentiable leaf"
                        .into(),
                ));
            }
        }

        // All differentiable nodes reachable from the loss.
        let mut nodes: Vec<Tensor<E>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            let b = t.inner.borrow();
            if !b.requires_grad || !seen.insert(b.id) {
                continue;
            }
            for p in &b.parents {
                stack.push(p.clone());
            }
            drop(b);
            nodes.push(t);
        }
        // Descending creation id = reverse topological order.
        nodes.sort_by(|a, b| b.id().cmp(&a.id()));

        let mut store = GradStore::new();
        store
            .bufs
            .insert(self.id(), vec![E::one()]);

        for n in &nodes {
            let Some(g) = store.take(n.id()) else {
                // Reachable but received no gradient (e.g. unused concat lane).
                continue;
            };
            let is_leaf = n.inner.borrow().backward_fn.is_none();
            if is_leaf {
                let mut b = n.inner.borrow_mut();
                let len = b.data.len();
                let buf = b.grad.get_or_insert_with(|| vec![E::zero(); len]);
                for (o, gi) in buf.iter_mut().zip(&g) {
                    *o = *o + *gi;
                }
            } else {
                let b = n.inner.borrow();
                let f = b.backward_fn.as_ref().expect("non-leaf has backward_fn");
                f(&g, &mut store);
            }
        }
        Ok(())
    }
}

/// Graph-node constructor for ops: output requires grad iff any input does;
/// otherwise the parents and closure are dropped and a constant is returned.
pub(crate) fn make_node<E: Elem>(
    shape: Vec<usize>,
    data: Vec<E>,
    parents: Vec<Tensor<E>>,
    backward_fn: BackwardFn<E>,
) -> Tensor<E> {
    if parents.iter().any(|p| p.requires_grad()) {
        Tensor::new_inner(shape, data, true, parents, Some(backward_fn))
    } else {
        Tensor::new_inner(shape, data, false, vec![], None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_shape() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn backward_on_constant_is_contract_error() {
        let c = Tensor::<f32>::scalar(3.0);
        match c.backward() {
            Err(MmcError::Contract(_)) => {}
            other => panic!("expected contract error, got {other:?}"),
        }
    }

    #[test]
    fn backward_on_non_scalar_is_contract_error() {
        let x = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap().with_grad();
        let y = x.square();
        assert!(matches!(y.backward(), Err(MmcError::Contract(_))));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::<f32>::from_vec(&[3], vec![1.0, 2.0, 3.0])
            .unwrap()
            .with_grad();
        let loss = x.square().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let x = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0])
            .unwrap()
            .with_grad();
        let loss = x.square().sum_all();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![4.0, 8.0]);
        x.zero_grad();
        loss.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn backward_twice_with_zeroing_is_deterministic() {
        let x = Tensor::<f32>::from_vec(&[4], vec![0.3, -1.2, 0.0, 2.5])
            .unwrap()
            .with_grad();
        let loss = x.gelu().mul(&x.sigmoid()).unwrap().sum_all();
        loss.backward().unwrap();
        let g1 = x.grad_vec().unwrap();
        x.zero_grad();
        loss.backward().unwrap();
        let g2 = x.grad_vec().unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn detach_blocks_gradient() {
        let x = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0])
            .unwrap()
            .with_grad();
        let d = x.detach();
        assert!(!d.requires_grad());
        // A loss built only from the detached copy has no differentiable leaf.
        assert!(d.square().sum_all().backward().is_err());
    }

    #[test]
    fn shared_subexpression_accumulates_both_paths() {
        // loss = x*x + x  =>  d/dx = 2x + 1
        let x = Tensor::<f32>::from_vec(&[1], vec![3.0]).unwrap().with_grad();
        let loss = x.mul(&x).unwrap().add(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![7.0]);
    }
}
