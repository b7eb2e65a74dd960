use std::cell::Cell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::graph::OpRecord;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Element precision of a tensor. Data is held as `f64` in memory; `F32`
/// tensors are quantized through `f32` after every operation so their
/// forward semantics match single-precision arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn widest(self, other: Precision) -> Precision {
        if self == Precision::F64 || other == Precision::F64 {
            Precision::F64
        } else {
            Precision::F32
        }
    }
}

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) precision: Precision,
    pub(crate) requires_grad: bool,
    pub(crate) op: Option<OpRecord>,
    /// Set once `backward` has run with this node as root.
    pub(crate) consumed: Cell<bool>,
}

/// Dense row-major tensor, cheaply clonable (shared immutable buffer).
///
/// A tensor is a node in a dynamically built computation graph: results of
/// operations on tracked tensors remember their inputs so that
/// [`crate::graph::backward`] can replay the graph in reverse. Leaves created
/// with [`Tensor::param`] mark trainable parameters; everything else is
/// treated as constant data.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

impl Tensor {
    pub(crate) fn from_node(node: Node) -> Tensor {
        Tensor(Rc::new(node))
    }

    fn new_leaf(
        shape: Vec<usize>,
        data: Vec<f64>,
        precision: Precision,
        requires_grad: bool,
    ) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "tensor shape {shape:?} has a zero extent"
            )));
        }
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, buffer holds {}",
                shape,
                numel,
                data.len()
            )));
        }
        let data = match precision {
            Precision::F64 => data,
            Precision::F32 => data.into_iter().map(|v| v as f32 as f64).collect(),
        };
        Ok(Tensor::from_node(Node {
            id: fresh_id(),
            shape,
            data,
            precision,
            requires_grad,
            op: None,
            consumed: Cell::new(false),
        }))
    }

    /// Constant tensor from a flat row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::new_leaf(shape.to_vec(), data, Precision::F64, false)
    }

    /// Trainable leaf tensor (participates in gradient computation).
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::new_leaf(shape.to_vec(), data, Precision::F64, true)
    }

    pub fn with_precision(shape: &[usize], data: Vec<f64>, precision: Precision) -> Result<Tensor> {
        Tensor::new_leaf(shape.to_vec(), data, precision, false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; numel]).expect("zeros: shape/buffer agree")
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![1.0; numel]).expect("ones: shape/buffer agree")
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![value; numel]).expect("full: shape/buffer agree")
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![value]).expect("scalar")
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn precision(&self) -> Precision {
        self.0.precision
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }

    /// Whether this tensor is connected to the gradient graph.
    pub(crate) fn tracked(&self) -> bool {
        self.0.requires_grad || self.0.op.is_some()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Dimension(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    /// Copy of this tensor's value, detached from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::from_vec(self.shape(), self.data().to_vec()).expect("detach preserves shape")
    }

    /// Detached copy marked as a trainable leaf.
    pub fn to_param(&self) -> Tensor {
        Tensor::param(self.shape(), self.data().to_vec()).expect("to_param preserves shape")
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Builds an op result. Output precision is the widest input precision;
    /// the graph record is attached only when some input is tracked.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[&Tensor],
        record: impl FnOnce() -> OpRecord,
    ) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        debug_assert_eq!(numel, data.len(), "op produced mismatched buffer");
        let precision = inputs
            .iter()
            .fold(Precision::F32, |p, t| p.widest(t.precision()));
        let data = match precision {
            Precision::F64 => data,
            Precision::F32 => data.into_iter().map(|v| v as f32 as f64).collect(),
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "operation produced a non-finite value".to_string(),
            ));
        }
        let tracked = inputs.iter().any(|t| t.tracked());
        Ok(Tensor::from_node(Node {
            id: fresh_id(),
            shape,
            data,
            precision,
            requires_grad: false,
            op: if tracked { Some(record()) } else { None },
            consumed: Cell::new(false),
        }))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, precision={:?}, requires_grad={}",
            self.shape(),
            self.precision(),
            self.requires_grad()
        )?;
        if self.numel() <= 8 {
            write!(f, ", data={:?}", self.data())?;
        }
        write!(f, ")")
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_buffer_mismatch_rejected() {
        let err = Tensor::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert_eq!(err.category(), "dimension");
    }

    #[test]
    fn f32_precision_quantizes() {
        let t = Tensor::with_precision(&[1], vec![0.1], Precision::F32).unwrap();
        assert_eq!(t.data()[0], 0.1f32 as f64);
        assert_ne!(t.data()[0], 0.1f64);
    }

    #[test]
    fn strides_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[5]), vec![1]);
    }
}
