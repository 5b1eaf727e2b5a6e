//! Dense tensor arithmetic with reverse-mode automatic differentiation.
//!
//! Values are immutable row-major `f64` arrays. A [`Graph`] is a tape: every
//! differentiable op pushed through it records a backward rule, and
//! [`Graph::backward`] replays the tape once in reverse, accumulating
//! gradients additively into every tensor that requires them. The tape is
//! consumed by the backward pass; a fresh graph is recorded per forward pass.
//!
//! Results are bit-identical regardless of thread count: parallelism only
//! ever splits loops over independent output elements, and every reduction
//! runs in a fixed sequential order.

mod matmul;
mod ops;
mod par;

pub use par::set_threads;

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Uninitialized f64 buffer for outputs whose every element is written
/// before any read. Skips the allocator's zero fill, which profiles as a
/// top cost in op-heavy passes.
pub(crate) fn uninit_vec(n: usize) -> Vec<f64> {
    let mut v: Vec<std::mem::MaybeUninit<f64>> = Vec::with_capacity(n);
    // SAFETY: the capacity is n and MaybeUninit needs no initialization.
    unsafe { v.set_len(n) };
    let mut v = std::mem::ManuallyDrop::new(v);
    let (ptr, len, cap) = (v.as_mut_ptr(), v.len(), v.capacity());
    // SAFETY: MaybeUninit<f64> and f64 share layout; ownership moves once.
    unsafe { Vec::from_raw_parts(ptr as *mut f64, len, cap) }
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

/// An immutable n-dimensional array of `f64`, cheaply cloneable.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad,
            }),
        }
    }

    /// A tensor that never receives gradients (observations, masks, ...).
    pub fn constant(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self::new(shape, data, false)
    }

    /// A trainable leaf: gradients accumulate into it during backward.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self::new(shape, data, true)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::constant(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(vec![], vec![v])
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Extract the single element of a scalar (or 1-element) tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "expected scalar tensor, got shape {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data[0])
    }

    /// Same values, marked as a gradient-receiving leaf.
    pub fn to_param(&self) -> Tensor {
        Tensor::param(self.shape().to_vec(), self.data().to_vec())
    }
}

type BackwardFn = Box<dyn FnOnce(&[f64], &mut GradStore)>;

struct Record {
    output_id: u64,
    backward: BackwardFn,
}

pub(crate) struct GradStore {
    map: HashMap<u64, Vec<f64>>,
}

impl GradStore {
    /// Gradient slot for a tensor, zero-initialized on first touch.
    fn slot(&mut self, id: u64, numel: usize) -> &mut Vec<f64> {
        self.map.entry(id).or_insert_with(|| vec![0.0; numel])
    }

    /// Accumulate into a tensor's gradient only if it participates in the
    /// graph (constants are skipped).
    fn accumulate(&mut self, t: &Tensor, contrib: impl FnOnce(&mut [f64])) {
        if t.requires_grad() {
            contrib(self.slot(t.id(), t.numel()));
        }
    }

    /// First-contribution fast path: when the slot does not exist yet, move
    /// `make()`'s buffer in instead of zero-filling and adding.
    fn accumulate_make(
        &mut self,
        t: &Tensor,
        make: impl FnOnce() -> Vec<f64>,
        add: impl FnOnce(&mut [f64]),
    ) {
        if !t.requires_grad() {
            return;
        }
        match self.map.entry(t.id()) {
            std::collections::hash_map::Entry::Vacant(e) => {
                let buf = make();
                debug_assert_eq!(buf.len(), t.numel());
                e.insert(buf);
            }
            std::collections::hash_map::Entry::Occupied(mut e) => add(e.get_mut()),
        }
    }
}

/// Gradient map returned by [`Graph::backward`], keyed by tensor identity.
#[derive(Debug)]
pub struct Gradients {
    map: HashMap<u64, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.map.get(&t.id()).map(Vec::as_slice)
    }

    /// Gradient for `t`, densified to zeros when the tensor was unused.
    pub fn dense(&self, t: &Tensor) -> Vec<f64> {
        self.get(t)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }
}

/// Recording tape for one forward pass.
pub struct Graph {
    recording: bool,
    consumed: bool,
    records: Vec<Record>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::recording()
    }
}

impl Graph {
    /// A tape that records backward rules for gradient-tracking inputs.
    pub fn recording() -> Self {
        Graph {
            recording: true,
            consumed: false,
            records: Vec::new(),
        }
    }

    /// A pass-through graph for evaluation: nothing is recorded and every
    /// output is gradient-free.
    pub fn inference() -> Self {
        Graph {
            recording: false,
            consumed: false,
            records: Vec::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Whether an op with these inputs must record a backward rule.
    fn tracks(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    /// Create the op output and register its backward rule if needed.
    fn emit(
        &mut self,
        inputs: &[&Tensor],
        shape: Vec<usize>,
        data: Vec<f64>,
        backward: impl FnOnce() -> BackwardFn,
    ) -> Tensor {
        let tracked = self.tracks(inputs);
        let out = Tensor::new(shape, data, tracked);
        if tracked {
            self.records.push(Record {
                output_id: out.id(),
                backward: backward(),
            });
        }
        out
    }

    /// Like [`Graph::emit`], but the backward builder may capture the output
    /// tensor itself (for rules that reuse the forward result).
    fn emit_with_out(
        &mut self,
        inputs: &[&Tensor],
        shape: Vec<usize>,
        data: Vec<f64>,
        backward: impl FnOnce(&Tensor) -> BackwardFn,
    ) -> Tensor {
        let tracked = self.tracks(inputs);
        let out = Tensor::new(shape, data, tracked);
        if tracked {
            self.records.push(Record {
                output_id: out.id(),
                backward: backward(&out),
            });
        }
        out
    }

    /// Run the tape backwards from a scalar root.
    ///
    /// Gradients from multiple uses of a tensor accumulate by addition. The
    /// tape is consumed: a second call is a usage error.
    pub fn backward(&mut self, root: &Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Usage(
                "backward called twice on the same graph".into(),
            ));
        }
        if !self.recording {
            return Err(Error::Usage("backward on an inference graph".into()));
        }
        if root.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward root must be scalar, got shape {:?}",
                root.shape()
            )));
        }
        self.consumed = true;
        let mut store = GradStore {
            map: HashMap::new(),
        };
        store.map.insert(root.id(), vec![1.0]);
        for rec in self.records.drain(..).rev() {
            // Tensors produced by a record are only consumed by later
            // records, all of which have already run; the output gradient is
            // final and can be moved out.
            if let Some(g) = store.map.remove(&rec.output_id) {
                (rec.backward)(&g, &mut store);
            }
        }
        Ok(Gradients { map: store.map })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_param_flags() {
        let c = Tensor::constant(vec![2], vec![1.0, 2.0]);
        let p = Tensor::param(vec![2], vec![1.0, 2.0]);
        assert!(!c.requires_grad());
        assert!(p.requires_grad());
    }

    #[test]
    #[should_panic(expected = "shape")]
    fn shape_data_mismatch_panics() {
        let _ = Tensor::constant(vec![3], vec![1.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::recording();
        let p = Tensor::param(vec![2], vec![1.0, 2.0]);
        let y = g.mul(&p, &p).unwrap();
        let err = g.backward(&y).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn second_backward_is_usage_error() {
        let mut g = Graph::recording();
        let p = Tensor::param(vec![2], vec![1.0, 2.0]);
        let y = g.mul(&p, &p).unwrap();
        let s = g.sum_all(&y);
        g.backward(&s).unwrap();
        assert!(matches!(g.backward(&s), Err(Error::Usage(_))));
    }

    #[test]
    fn sum_of_squares_gradient() {
        // root = sum(w ⊙ w) at w=[1,2] → grad [2,4]
        let mut g = Graph::recording();
        let w = Tensor::param(vec![2], vec![1.0, 2.0]);
        let y = g.mul(&w, &w).unwrap();
        let s = g.sum_all(&y);
        let grads = g.backward(&s).unwrap();
        assert_eq!(grads.get(&w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_root_gives_no_gradient_for_unrelated_params() {
        let mut g = Graph::recording();
        let w = Tensor::param(vec![2], vec![1.0, 2.0]);
        let c = Tensor::param(vec![], vec![5.0]);
        let root = g.mul_scalar(&c, 1.0);
        let grads = g.backward(&root).unwrap();
        assert_eq!(grads.dense(&w), vec![0.0, 0.0]);
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        // y = w + w → dy/dw = 2 per element
        let mut g = Graph::recording();
        let w = Tensor::param(vec![2], vec![3.0, 4.0]);
        let y = g.add(&w, &w).unwrap();
        let s = g.sum_all(&y);
        let grads = g.backward(&s).unwrap();
        assert_eq!(grads.get(&w).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn inference_graph_records_nothing() {
        let mut g = Graph::inference();
        let w = Tensor::param(vec![2], vec![3.0, 4.0]);
        let y = g.mul(&w, &w).unwrap();
        assert!(!y.requires_grad());
        assert!(g.backward(&y).is_err());
    }
}
