use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

/// Errors raised at operation boundaries.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite result produced by {op}")]
    NonFinite { op: &'static str },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("tensor is not registered on a tape")]
    NotOnTape,
    #[error("operands belong to different tapes")]
    TapeMismatch,
    #[error("row index {index} out of range for {rows} rows in {op}")]
    RowOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("invalid tensor data: shape {shape:?} implies {expected} entries, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Recorded operation kinds. Input fields are node indices into the tape.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    /// Differentiable input or constant lifted onto the tape.
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Matmul(usize, usize),
    Transpose(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    /// Softmax over the last axis, computed with max-subtraction.
    Softmax(usize),
    /// Sum of all entries, producing a rank-0 scalar.
    Sum(usize),
    /// Column sums: [m, n] -> [n].
    SumAxis0(usize),
    /// Row sums, keeping the axis: [m, n] -> [m, 1].
    SumAxis1(usize),
    /// Repeat a row vector: [n] -> [m, n].
    BroadcastRows(usize),
    /// Repeat a column: [m, 1] -> [m, n].
    BroadcastCols(usize),
    /// Fill a shape with a scalar: [] -> shape.
    BroadcastScalar(usize),
    /// Gather rows by index: [m, n] -> [k, n].
    SelectRows(usize, Rc<Vec<usize>>),
    /// Scatter-add rows into a zero matrix: [k, n] -> [rows, n].
    ScatterRows(usize, Rc<Vec<usize>>),
    /// Elementwise max(x, c).
    MaxScalar(usize, f64),
}

pub(crate) struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
    pub value: Rc<Vec<f64>>,
}

#[derive(Default)]
pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
}

/// Recording tape for one computation. Cloning a `Tape` clones the handle,
/// not the recording.
#[derive(Clone, Default)]
pub struct Tape {
    pub(crate) inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a tensor as a differentiable leaf and return the tracked handle.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        let id = self.push(Op::Leaf, t.shape.clone(), Rc::clone(&t.data));
        Tensor {
            shape: t.shape.clone(),
            data: Rc::clone(&t.data),
            node: Some(NodeRef {
                tape: Rc::clone(&self.inner),
                id,
            }),
        }
    }

    pub(crate) fn push(&self, op: Op, shape: Vec<usize>, value: Rc<Vec<f64>>) -> usize {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { op, shape, value });
        id
    }

    /// Drop every node with index >= `len`. Handles created before the cut
    /// stay valid; data of truncated nodes survives through outstanding `Rc`s.
    pub(crate) fn truncate(&self, len: usize) {
        self.inner.borrow_mut().nodes.truncate(len);
    }

    pub(crate) fn op_of(&self, id: usize) -> Op {
        self.inner.borrow().nodes[id].op.clone()
    }

    pub(crate) fn tensor_for(&self, id: usize) -> Tensor {
        let inner = self.inner.borrow();
        let node = &inner.nodes[id];
        Tensor {
            shape: node.shape.clone(),
            data: Rc::clone(&node.value),
            node: Some(NodeRef {
                tape: Rc::clone(&self.inner),
                id,
            }),
        }
    }
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub tape: Rc<RefCell<TapeInner>>,
    pub id: usize,
}

/// Dense row-major f64 tensor, optionally registered on a tape.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) node: Option<NodeRef>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "from_vec" });
        }
        Ok(Self {
            shape,
            data: Rc::new(data),
            node: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: Rc::new(vec![v]),
            node: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: Rc::new(vec![0.0; n]),
            node: None,
        }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: Rc::new(vec![v; n]),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// Extract the single entry of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    pub fn is_on_tape(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    /// Copy of this tensor with no tape attachment.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    /// Rows/cols view of a rank-1 or rank-2 tensor: rank-1 counts as one row.
    pub(crate) fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }

    /// The tape shared by `self` and `other`, if any; errors when the two
    /// operands are registered on different tapes.
    pub(crate) fn common_tape(&self, other: &Tensor) -> Result<Option<Tape>> {
        match (&self.node, &other.node) {
            (Some(a), Some(b)) => {
                if !Rc::ptr_eq(&a.tape, &b.tape) {
                    return Err(TensorError::TapeMismatch);
                }
                Ok(Some(Tape {
                    inner: Rc::clone(&a.tape),
                }))
            }
            (Some(a), None) => Ok(Some(Tape {
                inner: Rc::clone(&a.tape),
            })),
            (None, Some(b)) => Ok(Some(Tape {
                inner: Rc::clone(&b.tape),
            })),
            (None, None) => Ok(None),
        }
    }

    pub(crate) fn tape(&self) -> Option<Tape> {
        self.node.as_ref().map(|n| Tape {
            inner: Rc::clone(&n.tape),
        })
    }

    /// Node id of this tensor on `tape`, lifting untracked tensors as leaves.
    pub(crate) fn id_on(&self, tape: &Tape) -> usize {
        match &self.node {
            Some(n) => n.id,
            None => tape.push(Op::Leaf, self.shape.clone(), Rc::clone(&self.data)),
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("on_tape", &self.node.is_some())
            .finish()
    }
}
