//! Dense-tensor numerics with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: it supports exactly the operations the
//! two networks and the training objectives need, in 32- or 64-bit precision
//! (selected through the [`Scalar`] type parameter). Verification suites run
//! in `f64` so central-difference gradient checks have headroom; training
//! defaults to `f32`.
//!
//! A [`Tape`] records every differentiable operation executed through it.
//! [`Tape::backward`] replays the record once, in reverse, accumulating
//! gradients into each tensor's grad slot (summing when a tensor feeds
//! several consumers). Tapes are rebuilt every training step; tensors that
//! must survive a step (parameters) are ordinary [`Tensor`] values held
//! outside the tape.

mod adam;
mod batchnorm;
mod conv;
pub mod gradcheck;
pub(crate) mod linalg;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{BN_EPS, BN_MOMENTUM};

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Element type of the engine: `f32` for training builds, `f64` for
/// verification. Implementations must behave identically up to precision.
pub trait Scalar:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const NAME: &'static str;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Whether batch statistics are computed (training) or running statistics
/// are used (evaluation). Also controls running-stat updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

pub(crate) struct TensorData<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
    pub grad: Option<Vec<S>>,
    pub requires_grad: bool,
    /// True when this tensor lies on a path from a `requires_grad` leaf, so
    /// backward must propagate through it.
    pub needs_grad: bool,
}

/// Shared handle to an n-dimensional array (canonical 4-D layout
/// batch x channels x height x width). Cloning is cheap.
#[derive(Clone)]
pub struct Tensor<S: Scalar> {
    pub(crate) inner: Rc<RefCell<TensorData<S>>>,
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.inner.borrow();
        write!(f, "Tensor<{}>(shape={:?}, grad={})", S::NAME, d.shape, d.grad.is_some())
    }
}

impl<S: Scalar> Tensor<S> {
    /// New leaf tensor. `data.len()` must equal the product of `shape`.
    pub fn new(shape: &[usize], data: Vec<S>, requires_grad: bool) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "shape {:?} does not match data length {}", shape, data.len());
        Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                shape: shape.to_vec(),
                data,
                grad: None,
                requires_grad,
                needs_grad: requires_grad,
            })),
        }
    }

    pub fn zeros(shape: &[usize], requires_grad: bool) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![S::zero(); numel], requires_grad)
    }

    pub fn from_f64(shape: &[usize], data: &[f64], requires_grad: bool) -> Self {
        Tensor::new(shape, data.iter().map(|&v| S::from_f64(v)).collect(), requires_grad)
    }

    pub fn scalar(v: S) -> Self {
        Tensor::new(&[1], vec![v], false)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Toggle gradient tracking on a leaf (used to freeze a network while it
    /// participates in another network's loss).
    pub fn set_requires_grad(&self, on: bool) {
        let mut d = self.inner.borrow_mut();
        d.requires_grad = on;
        d.needs_grad = on;
    }

    pub(crate) fn needs_grad(&self) -> bool {
        self.inner.borrow().needs_grad
    }

    pub fn data(&self) -> Vec<S> {
        self.inner.borrow().data.clone()
    }

    pub fn data_f64(&self) -> Vec<f64> {
        self.inner.borrow().data.iter().map(|v| v.as_f64()).collect()
    }

    /// Replace the contents in place (shape must match).
    pub fn set_data(&self, data: &[S]) {
        let mut d = self.inner.borrow_mut();
        assert_eq!(d.data.len(), data.len());
        d.data.copy_from_slice(data);
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Value of a scalar (single-element) tensor.
    pub fn item(&self) -> S {
        let d = self.inner.borrow();
        assert_eq!(d.data.len(), 1, "item() on tensor of shape {:?}", d.shape);
        d.data[0]
    }

    /// Copy of the data as a fresh leaf with no gradient history.
    pub fn detach(&self) -> Tensor<S> {
        let d = self.inner.borrow();
        Tensor::new(&d.shape, d.data.clone(), false)
    }

    pub(crate) fn same_tensor(&self, other: &Tensor<S>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Accumulate `contrib` into the grad slot.
    pub(crate) fn accumulate_grad(&self, contrib: &[S]) {
        let mut d = self.inner.borrow_mut();
        let n = d.data.len();
        debug_assert_eq!(n, contrib.len());
        let g = d.grad.get_or_insert_with(|| vec![S::zero(); n]);
        for (gv, &cv) in g.iter_mut().zip(contrib) {
            *gv = *gv + cv;
        }
    }
}

trait Node<S: Scalar> {
    fn name(&self) -> &'static str;
    fn backward(&self) -> Result<()>;
    /// Tensors whose gradients this node writes (for debug NaN checks).
    fn written(&self) -> Vec<Tensor<S>>;
}

/// Ordered record of executed differentiable operations.
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Box<dyn Node<S>>>>,
    grad_enabled: bool,
    consumed: Cell<bool>,
    debug_checks: bool,
}

impl<S: Scalar> Tape<S> {
    /// Recording tape. Debug-mode finiteness checks follow `debug_assertions`.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            consumed: Cell::new(false),
            debug_checks: cfg!(debug_assertions),
        }
    }

    /// Non-recording tape for pure inference.
    pub fn inference() -> Self {
        let mut t = Tape::new();
        t.grad_enabled = false;
        t
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_finite(&self, op: &'static str, t: &Tensor<S>) -> Result<()> {
        if self.debug_checks {
            let d = t.inner.borrow();
            if let Some(pos) = d.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    op,
                    detail: format!("non-finite output at flat index {pos}"),
                });
            }
        }
        Ok(())
    }

    fn record(&self, out: &Tensor<S>, node: impl Node<S> + 'static) {
        if self.grad_enabled {
            out.inner.borrow_mut().needs_grad = true;
            self.nodes.borrow_mut().push(Box::new(node));
        }
    }

    fn tracks(&self, inputs: &[&Tensor<S>]) -> bool {
        self.grad_enabled && inputs.iter().any(|t| t.needs_grad())
    }

    /// Run reverse-mode accumulation from a scalar loss.
    ///
    /// Gradients accumulate (sum) into every tensor on a differentiable path
    /// to a `requires_grad` leaf. Calling backward twice on the same tape is
    /// an error; build a new tape instead.
    pub fn backward(&self, loss: &Tensor<S>) -> Result<()> {
        if self.consumed.get() {
            return Err(Error::Autodiff("backward called twice on the same tape".into()));
        }
        if loss.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !loss.item().is_finite() {
            return Err(Error::Numeric { op: "backward", detail: "loss is not finite".into() });
        }
        self.consumed.set(true);
        loss.accumulate_grad(&[S::one()]);
        let nodes = self.nodes.borrow();
        for node in nodes.iter().rev() {
            node.backward()?;
            if self.debug_checks {
                for t in node.written() {
                    let d = t.inner.borrow();
                    if let Some(g) = &d.grad {
                        if g.iter().any(|v| !v.is_finite()) {
                            return Err(Error::Numeric {
                                op: node.name(),
                                detail: "non-finite gradient produced in backward".into(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Tape::new()
    }
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::config(format!("{op}: shape mismatch {sa:?} vs {sb:?}")));
    }
    Ok(())
}

/// Gradient of the output w.r.t. one input of an elementwise op, as a fresh
/// contribution buffer (safe under operand aliasing such as `mul(x, x)`).
struct ElemwiseNode<S: Scalar> {
    name: &'static str,
    inputs: Vec<Tensor<S>>,
    out: Tensor<S>,
    /// For input `i`, maps (out_grad, out_data, input_data) to the
    /// contribution to that input's grad.
    vjp: fn(usize, &[S], &[S], &[Vec<S>]) -> Vec<S>,
}

impl<S: Scalar> Node<S> for ElemwiseNode<S> {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self) -> Result<()> {
        let (out_grad, out_data) = {
            let d = self.out.inner.borrow();
            match &d.grad {
                Some(g) => (g.clone(), d.data.clone()),
                None => return Ok(()), // output not on any path to the loss
            }
        };
        let input_data: Vec<Vec<S>> = self.inputs.iter().map(|t| t.data()).collect();
        for (i, inp) in self.inputs.iter().enumerate() {
            if !inp.needs_grad() {
                continue;
            }
            let contrib = (self.vjp)(i, &out_grad, &out_data, &input_data);
            inp.accumulate_grad(&contrib);
        }
        Ok(())
    }

    fn written(&self) -> Vec<Tensor<S>> {
        self.inputs.iter().filter(|t| t.needs_grad()).cloned().collect()
    }
}

impl<S: Scalar> Tape<S> {
    fn elementwise(
        &self,
        name: &'static str,
        inputs: &[&Tensor<S>],
        out_shape: &[usize],
        out_data: Vec<S>,
        vjp: fn(usize, &[S], &[S], &[Vec<S>]) -> Vec<S>,
    ) -> Result<Tensor<S>> {
        let out = Tensor::new(out_shape, out_data, false);
        self.check_finite(name, &out)?;
        if self.tracks(inputs) {
            self.record(
                &out,
                ElemwiseNode {
                    name,
                    inputs: inputs.iter().map(|&t| t.clone()).collect(),
                    out: out.clone(),
                    vjp,
                },
            );
        }
        Ok(out)
    }

    pub fn add(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("add", a, b)?;
        let (da, db) = (a.inner.borrow(), b.inner.borrow());
        let out: Vec<S> = da.data.iter().zip(&db.data).map(|(&x, &y)| x + y).collect();
        let shape = da.shape.clone();
        drop((da, db));
        self.elementwise("add", &[a, b], &shape, out, |_, og, _, _| og.to_vec())
    }

    pub fn sub(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("sub", a, b)?;
        let (da, db) = (a.inner.borrow(), b.inner.borrow());
        let out: Vec<S> = da.data.iter().zip(&db.data).map(|(&x, &y)| x - y).collect();
        let shape = da.shape.clone();
        drop((da, db));
        self.elementwise("sub", &[a, b], &shape, out, |i, og, _, _| {
            if i == 0 {
                og.to_vec()
            } else {
                og.iter().map(|&g| -g).collect()
            }
        })
    }

    pub fn mul(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("mul", a, b)?;
        let (da, db) = (a.inner.borrow(), b.inner.borrow());
        let out: Vec<S> = da.data.iter().zip(&db.data).map(|(&x, &y)| x * y).collect();
        let shape = da.shape.clone();
        drop((da, db));
        self.elementwise("mul", &[a, b], &shape, out, |i, og, _, ins| {
            let other = &ins[1 - i];
            og.iter().zip(other).map(|(&g, &o)| g * o).collect()
        })
    }

    pub fn div(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("div", a, b)?;
        let (da, db) = (a.inner.borrow(), b.inner.borrow());
        let out: Vec<S> = da.data.iter().zip(&db.data).map(|(&x, &y)| x / y).collect();
        let shape = da.shape.clone();
        drop((da, db));
        self.elementwise("div", &[a, b], &shape, out, |i, og, _, ins| {
            let (num, den) = (&ins[0], &ins[1]);
            if i == 0 {
                og.iter().zip(den).map(|(&g, &d)| g / d).collect()
            } else {
                og.iter()
                    .zip(num.iter().zip(den))
                    .map(|(&g, (&n, &d))| -g * n / (d * d))
                    .collect()
            }
        })
    }

    pub fn add_scalar(&self, a: &Tensor<S>, c: S) -> Result<Tensor<S>> {
        let da = a.inner.borrow();
        let out: Vec<S> = da.data.iter().map(|&x| x + c).collect();
        let shape = da.shape.clone();
        drop(da);
        self.elementwise("add_scalar", &[a], &shape, out, |_, og, _, _| og.to_vec())
    }

    pub fn mul_scalar(&self, a: &Tensor<S>, c: S) -> Result<Tensor<S>> {
        let da = a.inner.borrow();
        let out: Vec<S> = da.data.iter().map(|&x| x * c).collect();
        let shape = da.shape.clone();
        drop(da);
        let out_t = Tensor::new(&shape, out, false);
        self.check_finite("mul_scalar", &out_t)?;
        if self.tracks(&[a]) {
            self.record(
                &out_t,
                ScaleNode { input: a.clone(), out: out_t.clone(), factor: c },
            );
        }
        Ok(out_t)
    }

    pub fn ln(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let da = a.inner.borrow();
        let out: Vec<S> = da.data.iter().map(|&x| x.ln()).collect();
        let shape = da.shape.clone();
        drop(da);
        self.elementwise("ln", &[a], &shape, out, |_, og, _, ins| {
            og.iter().zip(&ins[0]).map(|(&g, &x)| g / x).collect()
        })
    }

    /// Elementwise power with a constant exponent.
    pub fn powf(&self, a: &Tensor<S>, e: f64) -> Result<Tensor<S>> {
        let ee = S::from_f64(e);
        let da = a.inner.borrow();
        let out: Vec<S> = da.data.iter().map(|&x| x.powf(ee)).collect();
        let shape = da.shape.clone();
        drop(da);
        let out_t = Tensor::new(&shape, out, false);
        self.check_finite("powf", &out_t)?;
        if self.tracks(&[a]) {
            self.record(
                &out_t,
                PowfNode { input: a.clone(), out: out_t.clone(), exponent: e },
            );
        }
        Ok(out_t)
    }

    /// Clamp to [lo, hi]; gradient passes where lo <= x <= hi.
    pub fn clamp(&self, a: &Tensor<S>, lo: f64, hi: f64) -> Result<Tensor<S>> {
        let (l, h) = (S::from_f64(lo), S::from_f64(hi));
        let da = a.inner.borrow();
        let out: Vec<S> = da.data.iter().map(|&x| x.max(l).min(h)).collect();
        let shape = da.shape.clone();
        drop(da);
        let out_t = Tensor::new(&shape, out, false);
        self.check_finite("clamp", &out_t)?;
        if self.tracks(&[a]) {
            self.record(
                &out_t,
                ClampNode { input: a.clone(), out: out_t.clone(), lo: l, hi: h },
            );
        }
        Ok(out_t)
    }

    /// Rectified linear unit; subgradient 0 at 0.
    pub fn relu(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let da = a.inner.borrow();
        let out: Vec<S> = da.data.iter().map(|&x| x.max(S::zero())).collect();
        let shape = da.shape.clone();
        drop(da);
        self.elementwise("relu", &[a], &shape, out, |_, og, _, ins| {
            og.iter()
                .zip(&ins[0])
                .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                .collect()
        })
    }

    pub fn sigmoid(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let da = a.inner.borrow();
        let out: Vec<S> = da.data.iter().map(|&x| stable_sigmoid(x)).collect();
        let shape = da.shape.clone();
        drop(da);
        self.elementwise("sigmoid", &[a], &shape, out, |_, og, od, _| {
            og.iter().zip(od).map(|(&g, &y)| g * y * (S::one() - y)).collect()
        })
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let da = a.inner.borrow();
        let total = sum_pairwise(&da.data);
        drop(da);
        self.elementwise("sum", &[a], &[1], vec![total], |_, og, _, ins| {
            vec![og[0]; ins[0].len()]
        })
    }

    /// Mean of all elements as a scalar tensor.
    pub fn mean(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let da = a.inner.borrow();
        let n = da.data.len();
        let total = sum_pairwise(&da.data);
        drop(da);
        let inv = S::one() / S::from_f64(n as f64);
        self.elementwise("mean", &[a], &[1], vec![total * inv], |_, og, _, ins| {
            let n = ins[0].len();
            let inv = S::one() / S::from_f64(n as f64);
            vec![og[0] * inv; n]
        })
    }

    /// Concatenate two 4-D tensors along the channel axis.
    pub fn concat_channels(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 4 || sb.len() != 4 {
            return Err(Error::config(format!(
                "concat_channels: expected 4-D tensors, got {sa:?} and {sb:?}"
            )));
        }
        if sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(Error::config(format!(
                "concat_channels: batch/spatial mismatch {sa:?} vs {sb:?}"
            )));
        }
        let (bsz, c1, c2, h, w) = (sa[0], sa[1], sb[1], sa[2], sa[3]);
        let plane = h * w;
        let mut out = Vec::with_capacity(bsz * (c1 + c2) * plane);
        {
            let (da, db) = (a.inner.borrow(), b.inner.borrow());
            for bi in 0..bsz {
                out.extend_from_slice(&da.data[bi * c1 * plane..(bi + 1) * c1 * plane]);
                out.extend_from_slice(&db.data[bi * c2 * plane..(bi + 1) * c2 * plane]);
            }
        }
        let out_t = Tensor::new(&[bsz, c1 + c2, h, w], out, false);
        self.check_finite("concat_channels", &out_t)?;
        if self.tracks(&[a, b]) {
            self.record(
                &out_t,
                ConcatNode { a: a.clone(), b: b.clone(), out: out_t.clone(), c1, c2, plane },
            );
        }
        Ok(out_t)
    }
}

struct ScaleNode<S: Scalar> {
    input: Tensor<S>,
    out: Tensor<S>,
    factor: S,
}

impl<S: Scalar> Node<S> for ScaleNode<S> {
    fn name(&self) -> &'static str {
        "mul_scalar"
    }
    fn backward(&self) -> Result<()> {
        let og = match self.out.inner.borrow().grad.clone() {
            Some(g) => g,
            None => return Ok(()),
        };
        if self.input.needs_grad() {
            let contrib: Vec<S> = og.iter().map(|&g| g * self.factor).collect();
            self.input.accumulate_grad(&contrib);
        }
        Ok(())
    }
    fn written(&self) -> Vec<Tensor<S>> {
        vec![self.input.clone()]
    }
}

struct PowfNode<S: Scalar> {
    input: Tensor<S>,
    out: Tensor<S>,
    exponent: f64,
}

impl<S: Scalar> Node<S> for PowfNode<S> {
    fn name(&self) -> &'static str {
        "powf"
    }
    fn backward(&self) -> Result<()> {
        let og = match self.out.inner.borrow().grad.clone() {
            Some(g) => g,
            None => return Ok(()),
        };
        if self.input.needs_grad() {
            let e = S::from_f64(self.exponent);
            let em1 = S::from_f64(self.exponent - 1.0);
            let xs = self.input.data();
            let contrib: Vec<S> =
                og.iter().zip(&xs).map(|(&g, &x)| g * e * x.powf(em1)).collect();
            self.input.accumulate_grad(&contrib);
        }
        Ok(())
    }
    fn written(&self) -> Vec<Tensor<S>> {
        vec![self.input.clone()]
    }
}

struct ClampNode<S: Scalar> {
    input: Tensor<S>,
    out: Tensor<S>,
    lo: S,
    hi: S,
}

impl<S: Scalar> Node<S> for ClampNode<S> {
    fn name(&self) -> &'static str {
        "clamp"
    }
    fn backward(&self) -> Result<()> {
        let og = match self.out.inner.borrow().grad.clone() {
            Some(g) => g,
            None => return Ok(()),
        };
        if self.input.needs_grad() {
            let xs = self.input.data();
            let contrib: Vec<S> = og
                .iter()
                .zip(&xs)
                .map(|(&g, &x)| if x >= self.lo && x <= self.hi { g } else { S::zero() })
                .collect();
            self.input.accumulate_grad(&contrib);
        }
        Ok(())
    }
    fn written(&self) -> Vec<Tensor<S>> {
        vec![self.input.clone()]
    }
}

struct ConcatNode<S: Scalar> {
    a: Tensor<S>,
    b: Tensor<S>,
    out: Tensor<S>,
    c1: usize,
    c2: usize,
    plane: usize,
}

impl<S: Scalar> Node<S> for ConcatNode<S> {
    fn name(&self) -> &'static str {
        "concat_channels"
    }
    fn backward(&self) -> Result<()> {
        let og = match self.out.inner.borrow().grad.clone() {
            Some(g) => g,
            None => return Ok(()),
        };
        let bsz = self.out.shape()[0];
        let (s1, s2) = (self.c1 * self.plane, self.c2 * self.plane);
        if self.a.needs_grad() {
            let mut contrib = vec![S::zero(); bsz * s1];
            for bi in 0..bsz {
                contrib[bi * s1..(bi + 1) * s1]
                    .copy_from_slice(&og[bi * (s1 + s2)..bi * (s1 + s2) + s1]);
            }
            self.a.accumulate_grad(&contrib);
        }
        if self.b.needs_grad() {
            let mut contrib = vec![S::zero(); bsz * s2];
            for bi in 0..bsz {
                contrib[bi * s2..(bi + 1) * s2]
                    .copy_from_slice(&og[bi * (s1 + s2) + s1..(bi + 1) * (s1 + s2)]);
            }
            self.b.accumulate_grad(&contrib);
        }
        Ok(())
    }
    fn written(&self) -> Vec<Tensor<S>> {
        vec![self.a.clone(), self.b.clone()]
    }
}

#[inline]
fn stable_sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Pairwise summation: better rounding than a running sum, deterministic.
pub(crate) fn sum_pairwise<S: Scalar>(xs: &[S]) -> S {
    if xs.len() <= 8 {
        let mut s = S::zero();
        for &x in xs {
            s = s + x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    sum_pairwise(&xs[..mid]) + sum_pairwise(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    type T64 = Tape<f64>;

    #[test]
    fn sum_backward_is_ones() {
        let tape = T64::new();
        let x = Tensor::from_f64(&[4], &[1.0, 2.0, 3.0, 4.0], true);
        let loss = tape.sum(&x).unwrap();
        assert_eq!(loss.item(), 10.0);
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn square_sum_gradient() {
        // loss = sum(x*x) at x=[1,2] -> grad [2,4]
        let tape = T64::new();
        let x = Tensor::from_f64(&[2], &[1.0, 2.0], true);
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&sq).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn gradient_accumulates_across_consumers() {
        // x + x must receive the same gradient as 2*x.
        let tape = T64::new();
        let x = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0], true);
        let y = tape.add(&x, &x).unwrap();
        let loss = tape.sum(&y).unwrap();
        tape.backward(&loss).unwrap();
        let g_add = x.grad().unwrap();

        let tape2 = T64::new();
        let x2 = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0], true);
        let y2 = tape2.mul_scalar(&x2, 2.0).unwrap();
        let loss2 = tape2.sum(&y2).unwrap();
        tape2.backward(&loss2).unwrap();
        assert_eq!(g_add, x2.grad().unwrap());
    }

    #[test]
    fn second_backward_is_an_error() {
        let tape = T64::new();
        let x = Tensor::from_f64(&[1], &[2.0], true);
        let loss = tape.mul(&x, &x).unwrap();
        tape.backward(&loss).unwrap();
        assert!(tape.backward(&loss).is_err());
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let tape = T64::new();
        let x = Tensor::from_f64(&[2], &[1.0, 2.0], true);
        let y = tape.mul(&x, &x).unwrap();
        assert!(tape.backward(&y).is_err());
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let tape = T64::new();
        let x = Tensor::from_f64(&[3], &[-3.0, 0.0, 3.0], false);
        let r = tape.relu(&x).unwrap();
        assert_eq!(r.data(), vec![0.0, 0.0, 3.0]);
        let s = tape.sigmoid(&Tensor::from_f64(&[1], &[0.0], false)).unwrap();
        assert!((s.item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn concat_channel_count() {
        let tape = T64::new();
        let a = Tensor::zeros(&[1, 2, 3, 3], false);
        let b = Tensor::zeros(&[1, 3, 3, 3], false);
        let c = tape.concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), vec![1, 5, 3, 3]);
        let bad = Tensor::zeros(&[1, 3, 4, 3], false);
        assert!(tape.concat_channels(&a, &bad).is_err());
    }

    #[test]
    fn elementwise_shape_mismatch_errors() {
        let tape = T64::new();
        let a = Tensor::zeros(&[2, 2], false);
        let b = Tensor::zeros(&[4], false);
        assert!(tape.add(&a, &b).is_err());
    }

    #[test]
    fn detach_cuts_history() {
        let tape = T64::new();
        let x = Tensor::from_f64(&[2], &[1.0, 2.0], true);
        let y = tape.mul(&x, &x).unwrap();
        let z = y.detach();
        let loss = tape.sum(&tape.mul(&z, &z).unwrap()).unwrap();
        tape.backward(&loss).unwrap();
        assert!(x.grad().is_none());
    }

    #[test]
    fn finite_forward_outputs_from_finite_inputs() {
        let tape = T64::new();
        let x = Tensor::from_f64(&[4], &[1e300, -1e300, 0.5, 2.0], false);
        // sigmoid saturates but stays finite
        let s = tape.sigmoid(&x).unwrap();
        assert!(s.data().iter().all(|v| v.is_finite()));
    }
}
