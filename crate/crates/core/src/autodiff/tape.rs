use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{matmul_kernel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operations the tape knows how to differentiate.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    /// Mean cross-entropy of column-wise softmax over `C x N` logits;
    /// `None` targets are skipped.
    SoftmaxCrossEntropy { targets: Vec<Option<usize>> },
    Mean,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::SoftmaxCrossEntropy { .. } => "softmax-cross-entropy",
            Primitive::Mean => "mean",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul => Some(2),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses the parameter-free primitives by name.
impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "matmul" => Primitive::MatMul,
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "sigmoid" => Primitive::Sigmoid,
            "tanh" => Primitive::Tanh,
            "relu" => Primitive::Relu,
            "mean" => Primitive::Mean,
            other => return Err(Error::UnsupportedOp(other.to_string())),
        })
    }
}

#[derive(Debug, Clone)]
enum Origin {
    Leaf,
    Constant,
    Op {
        prim: Primitive,
        inputs: Vec<Var>,
        /// Softmax probabilities for the fused loss.
        cache: Option<Tensor>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    origin: Origin,
    needs_grad: bool,
}

/// Append-only record of eagerly evaluated operations.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the loss does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like it.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            Tensor::zeros(tape.value(v).shape().to_vec()).expect("recorded tensors have valid shapes")
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    crate::activations::sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, origin: Origin, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            origin,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Origin::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Origin::Constant, false)
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Contract(format!("variable {} is not on this tape", v.0)))
        }
    }

    /// Evaluate `prim` on `inputs` and record it.
    pub fn record(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        for &v in inputs {
            self.check_var(v)?;
        }
        match prim.arity() {
            Some(n) if n != inputs.len() => {
                return Err(Error::Contract(format!(
                    "{prim} takes {n} inputs, got {}",
                    inputs.len()
                )))
            }
            None if inputs.is_empty() => return Err(Error::Contract(format!("{prim} needs inputs"))),
            _ => {}
        }
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let mut cache = None;
        let value = match &prim {
            Primitive::MatMul => val(0).matmul(val(1))?,
            Primitive::Add => val(0).add(val(1))?,
            Primitive::Sub => val(0).sub(val(1))?,
            Primitive::Mul => val(0).mul(val(1))?,
            Primitive::Sigmoid => val(0).map(sigmoid)?,
            Primitive::Tanh => val(0).map(f64::tanh)?,
            Primitive::Relu => val(0).map(|x| x.max(0.0))?,
            Primitive::Concat { axis } => {
                let parts: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                Tensor::concat(&parts, *axis)?
            }
            Primitive::Slice { axis, start, len } => val(0).slice(*axis, *start, *len)?,
            Primitive::SoftmaxCrossEntropy { targets } => {
                let (loss, probs) = softmax_xent(val(0), targets)?;
                cache = Some(probs);
                Tensor::scalar(loss)?
            }
            Primitive::Mean => {
                let x = val(0);
                Tensor::scalar(x.sum() / x.len() as f64)?
            }
        };
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let origin = Origin::Op {
            prim,
            inputs: inputs.to_vec(),
            cache,
        };
        Ok(self.push(value, origin, needs_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Primitive::Mul, &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.record(Primitive::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(Primitive::Tanh, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Primitive::Relu, &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.record(Primitive::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.record(Primitive::Slice { axis, start, len }, &[a])
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Result<Var> {
        self.record(Primitive::SoftmaxCrossEntropy { targets }, &[logits])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(Primitive::Mean, &[a])
    }

    /// Reverse sweep from a scalar `loss`. The tape is left untouched, so
    /// repeated sweeps give identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check_var(loss)?;
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Origin::Op { prim, inputs, cache } = &node.origin {
                let contributions = self.adjoints(prim, inputs, cache.as_ref(), &node.value, &g)?;
                for (input, contrib) in inputs.iter().zip(contributions) {
                    let Some(contrib) = contrib else { continue };
                    if !self.nodes[input.0].needs_grad {
                        continue;
                    }
                    let slot = &mut grads[input.0];
                    *slot = Some(match slot.take() {
                        None => contrib,
                        Some(prev) => accumulate(prev, &contrib),
                    });
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn adjoints(
        &self,
        prim: &Primitive,
        inputs: &[Var],
        cache: Option<&Tensor>,
        out: &Tensor,
        g: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let wants = |i: usize| self.nodes[inputs[i].0].needs_grad;
        let zip = |a: &Tensor, b: &Tensor, f: &dyn Fn(f64, f64) -> f64| {
            Tensor::from_parts(
                a.shape().to_vec(),
                a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
            )
        };
        Ok(match prim {
            Primitive::MatMul => {
                let (a, b) = (val(0), val(1));
                let (m, k) = (a.rows(), a.cols());
                let n = b.cols();
                let da = wants(0).then(|| {
                    // G (m x n) . B^T (n x k)
                    let bt = b.transpose().expect("matrix");
                    Tensor::from_parts(vec![m, k], matmul_kernel(g.data(), bt.data(), m, n, k))
                });
                let db = wants(1).then(|| {
                    let at = a.transpose().expect("matrix");
                    Tensor::from_parts(vec![k, n], matmul_kernel(at.data(), g.data(), k, m, n))
                });
                vec![da, db]
            }
            Primitive::Add => vec![wants(0).then(|| g.clone()), wants(1).then(|| g.clone())],
            Primitive::Sub => vec![
                wants(0).then(|| g.clone()),
                wants(1).then(|| Tensor::from_parts(g.shape().to_vec(), g.data().iter().map(|v| -v).collect())),
            ],
            Primitive::Mul => vec![
                wants(0).then(|| zip(g, val(1), &|a, b| a * b)),
                wants(1).then(|| zip(g, val(0), &|a, b| a * b)),
            ],
            Primitive::Sigmoid => vec![Some(zip(g, out, &|a, y| a * y * (1.0 - y)))],
            Primitive::Tanh => vec![Some(zip(g, out, &|a, y| a * (1.0 - y * y)))],
            Primitive::Relu => vec![Some(zip(g, val(0), &|a, x| if x > 0.0 { a } else { 0.0 }))],
            Primitive::Concat { axis } => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(inputs.len());
                for i in 0..inputs.len() {
                    let extent = if *axis == 0 { val(i).rows() } else { val(i).cols() };
                    res.push(if wants(i) { Some(g.slice(*axis, offset, extent)?) } else { None });
                    offset += extent;
                }
                res
            }
            Primitive::Slice { axis, start, len } => {
                let x = val(0);
                let (r, c) = (x.rows(), x.cols());
                let mut data = vec![0.0; r * c];
                let gd = g.data();
                if *axis == 0 {
                    data[start * c..(start + len) * c].copy_from_slice(gd);
                } else {
                    for i in 0..r {
                        data[i * c + start..i * c + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
                    }
                }
                vec![Some(Tensor::from_parts(vec![r, c], data))]
            }
            Primitive::SoftmaxCrossEntropy { targets } => {
                let probs = cache.expect("softmax cache recorded with the node");
                let upstream = g.data()[0];
                let (c, n) = (probs.rows(), probs.cols());
                let count = targets.iter().filter(|t| t.is_some()).count() as f64;
                let mut data = vec![0.0; c * n];
                for (j, target) in targets.iter().enumerate() {
                    let Some(target) = *target else { continue };
                    for i in 0..c {
                        let onehot = if i == target { 1.0 } else { 0.0 };
                        data[i * n + j] = upstream * (probs.data()[i * n + j] - onehot) / count;
                    }
                }
                vec![Some(Tensor::from_parts(vec![c, n], data))]
            }
            Primitive::Mean => {
                let x = val(0);
                let v = g.data()[0] / x.len() as f64;
                vec![Some(Tensor::from_parts(x.shape().to_vec(), vec![v; x.len()]))]
            }
        })
    }
}

fn accumulate(mut acc: Tensor, add: &Tensor) -> Tensor {
    for (a, b) in acc.data_mut().iter_mut().zip(add.data()) {
        *a += b;
    }
    acc
}

/// Compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    carry: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

/// Mean cross-entropy of column-wise softmax over `C x N` logits, skipping
/// `None` targets.
pub fn cross_entropy(logits: &Tensor, targets: &[Option<usize>]) -> Result<f64> {
    softmax_xent(logits, targets).map(|(loss, _)| loss)
}

/// Returns `(mean loss, probabilities)` for `C x N` logits; `None` targets
/// and their columns are ignored.
fn softmax_xent(logits: &Tensor, targets: &[Option<usize>]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 {
        return Err(Error::Dimension("softmax-cross-entropy expects C x N logits".into()));
    }
    let (c, n) = (logits.rows(), logits.cols());
    if targets.len() != n {
        return Err(Error::Dimension(format!("{} targets for {n} columns", targets.len())));
    }
    let mut probs = vec![0.0; c * n];
    let mut total = Neumaier::default();
    let mut count = 0usize;
    let d = logits.data();
    for j in 0..n {
        let col = |i: usize| d[i * n + j];
        let max = (0..c).map(col).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..c).map(|i| (col(i) - max).exp()).sum();
        let log_z = max + sum.ln();
        for i in 0..c {
            probs[i * n + j] = (col(i) - log_z).exp();
        }
        if let Some(t) = targets[j] {
            if t >= c {
                return Err(Error::Data(format!("target {t} out of range for {c} classes")));
            }
            total.add((max - col(t)) + sum.ln());
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Data("no valid targets".into()));
    }
    Ok((total.value() / count as f64, Tensor::from_parts(vec![c, n], probs)))
}
