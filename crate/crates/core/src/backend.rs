//! Evaluation strategy shared by the cell equations: [`Eager`] computes plain
//! tensors, [`Tape`] records them for differentiation.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub trait Backend {
    type Value: Clone;

    fn constant(&mut self, value: Tensor) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn tanh(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn concat(&mut self, parts: &[Self::Value], axis: usize) -> Result<Self::Value>;
    fn slice(&mut self, a: &Self::Value, axis: usize, start: usize, len: usize) -> Result<Self::Value>;

    /// `1 - a`.
    fn one_minus(&mut self, a: &Self::Value) -> Result<Self::Value> {
        let ones = Tensor::ones(self.value(a).shape().to_vec())?;
        let ones = self.constant(ones);
        self.sub(&ones, a)
    }

    /// Repeats an `H x 1` column across `cols` columns.
    fn broadcast_cols(&mut self, column: &Self::Value, cols: usize) -> Result<Self::Value> {
        if self.value(column).cols() == cols {
            return Ok(column.clone());
        }
        let ones = self.constant(Tensor::ones([1, cols])?);
        self.matmul(column, &ones)
    }

    /// `w.x + bias`, with `bias` an `H x 1` column broadcast over the batch.
    fn affine(&mut self, w: &Self::Value, x: &Self::Value, bias: &Self::Value) -> Result<Self::Value> {
        let wx = self.matmul(w, x)?;
        let cols = self.value(&wx).cols();
        let b = self.broadcast_cols(bias, cols)?;
        self.add(&wx, &b)
    }

    /// `w_x.x + w_h.h + bias`.
    fn gate_pre(
        &mut self,
        w_x: &Self::Value,
        x: &Self::Value,
        w_h: &Self::Value,
        h: &Self::Value,
        bias: &Self::Value,
    ) -> Result<Self::Value> {
        let a = self.affine(w_x, x, bias)?;
        let b = self.matmul(w_h, h)?;
        self.add(&a, &b)
    }

    /// `g * a + (1 - g) * b`.
    fn blend(&mut self, g: &Self::Value, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        let ga = self.mul(g, a)?;
        let keep = self.one_minus(g)?;
        let kb = self.mul(&keep, b)?;
        self.add(&ga, &kb)
    }
}

/// Direct evaluation on tensors.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Backend for Eager {
    type Value = Tensor;

    fn constant(&mut self, value: Tensor) -> Tensor {
        value
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.matmul(b)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.sub(b)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.mul(b)
    }

    fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor> {
        a.map(crate::activations::sigmoid)
    }

    fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        a.map(f64::tanh)
    }

    fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        a.map(crate::activations::relu)
    }

    fn concat(&mut self, parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat(&refs, axis)
    }

    fn slice(&mut self, a: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        a.slice(axis, start, len)
    }
}

impl Backend for Tape {
    type Value = Var;

    fn constant(&mut self, value: Tensor) -> Var {
        Tape::constant(self, value)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        Tape::value(self, *v)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::matmul(self, *a, *b)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::add(self, *a, *b)
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::sub(self, *a, *b)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::mul(self, *a, *b)
    }

    fn sigmoid(&mut self, a: &Var) -> Result<Var> {
        Tape::sigmoid(self, *a)
    }

    fn tanh(&mut self, a: &Var) -> Result<Var> {
        Tape::tanh(self, *a)
    }

    fn relu(&mut self, a: &Var) -> Result<Var> {
        Tape::relu(self, *a)
    }

    fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        Tape::concat(self, parts, axis)
    }

    fn slice(&mut self, a: &Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        Tape::slice(self, *a, axis, start, len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eager_and_tape_agree() {
        let w = Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.1], vec![-0.2]]).unwrap();

        let mut e = Eager;
        let eager = e.affine(&w, &x, &b).unwrap();
        let eager = e.sigmoid(&eager).unwrap();

        let mut tape = Tape::new();
        let (wv, xv, bv) = (tape.leaf(w), tape.constant(x), tape.leaf(b));
        let pre = Backend::affine(&mut tape, &wv, &xv, &bv).unwrap();
        let out = Backend::sigmoid(&mut tape, &pre).unwrap();
        assert_eq!(tape.value(out), &eager);
        assert_eq!(eager.shape(), &[2, 3]);
    }

    #[test]
    fn blend_limits() {
        let mut e = Eager;
        let a = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let b = Tensor::vector(vec![-3.0, 4.0]).unwrap();
        let one = Tensor::ones([2]).unwrap();
        let zero = Tensor::zeros([2]).unwrap();
        assert_eq!(e.blend(&one, &a, &b).unwrap(), a);
        assert_eq!(e.blend(&zero, &a, &b).unwrap(), b);
    }
}
