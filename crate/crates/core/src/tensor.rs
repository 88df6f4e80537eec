//! Dense row-major `f64` arrays of rank 1 to 3, plus the seeded generator
//! every stochastic routine draws from.

use std::fmt;

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{dim_err, Error, Result};

pub const MAX_RANK: usize = 3;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Right-hand side of an elementwise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

impl<'a> From<&'a Tensor> for Operand<'a> {
    fn from(t: &'a Tensor) -> Self {
        Operand::Tensor(t)
    }
}

impl From<f64> for Operand<'_> {
    fn from(v: f64) -> Self {
        Operand::Scalar(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EwiseOp {
    Add,
    Sub,
    Mul,
    /// `scale * a + b`
    Affine { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    Uniform { lo: f64, hi: f64 },
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    ScaledUniform { fan_in: usize },
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return dim_err(format!("rank must be 1..={MAX_RANK}, got shape {shape:?}"));
    }
    if shape.contains(&0) {
        return dim_err(format!("dimensions must be positive, got {shape:?}"));
    }
    Ok(shape.iter().product())
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what} produced non-finite value {bad}")));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if n != data.len() {
            return dim_err(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            ));
        }
        check_finite(&data, "construction")?;
        Ok(Self { shape, data })
    }

    /// Internal constructor for results of kernels that cannot leave the
    /// finite domain (or whose callers check it).
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("fill value {value} is not finite")));
        }
        Ok(Self {
            shape,
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(vec![n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return dim_err("ragged rows");
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.rank() >= 2 {
            self.shape[1]
        } else {
            1
        }
    }

    /// Element at a 2-D index; rank-1 tensors are read as columns.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if n != self.data.len() {
            return dim_err(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            ));
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    fn as_matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => dim_err(format!("expected a matrix, got shape {other:?}")),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.as_matrix_dims()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self::from_parts(vec![c, r], out))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (m, k) = self.as_matrix_dims()?;
        let (k2, n) = other.as_matrix_dims()?;
        if k != k2 {
            return dim_err(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, other.shape
            ));
        }
        let out = matmul_kernel(&self.data, &other.data, m, k, n);
        check_finite(&out, "matmul")?;
        Ok(Self::from_parts(vec![m, n], out))
    }

    pub fn ewise<'a>(&self, op: EwiseOp, rhs: impl Into<Operand<'a>>) -> Result<Self> {
        let f: Box<dyn Fn(f64, f64) -> f64> = match op {
            EwiseOp::Add => Box::new(|a, b| a + b),
            EwiseOp::Sub => Box::new(|a, b| a - b),
            EwiseOp::Mul => Box::new(|a, b| a * b),
            EwiseOp::Affine { scale } => Box::new(move |a, b| scale * a + b),
        };
        let data: Vec<f64> = match rhs.into() {
            Operand::Scalar(s) => self.data.iter().map(|&a| f(a, s)).collect(),
            Operand::Tensor(t) => {
                if t.shape != self.shape {
                    return dim_err(format!(
                        "elementwise shapes differ: {:?} vs {:?}",
                        self.shape, t.shape
                    ));
                }
                self.data.iter().zip(&t.data).map(|(&a, &b)| f(a, b)).collect()
            }
        };
        check_finite(&data, "elementwise op")?;
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Self> {
        self.ewise(EwiseOp::Add, rhs)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Self> {
        self.ewise(EwiseOp::Sub, rhs)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Self> {
        self.ewise(EwiseOp::Mul, rhs)
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        self.ewise(EwiseOp::Mul, s)
    }

    /// Applies `f` to every element; the result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        check_finite(&data, "map")?;
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return dim_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Slice `len` entries starting at `start` along `axis` (rank 2 only).
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let (r, c) = self.as_matrix_dims()?;
        let extent = if axis == 0 { r } else { c };
        if axis > 1 || len == 0 || start + len > extent {
            return dim_err(format!(
                "slice axis {axis} [{start}, {}) out of {:?}",
                start + len,
                self.shape
            ));
        }
        let out = if axis == 0 {
            self.data[start * c..(start + len) * c].to_vec()
        } else {
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
            }
            out
        };
        let shape = if axis == 0 { vec![len, c] } else { vec![r, len] };
        Ok(Self::from_parts(shape, out))
    }

    /// Concatenate matrices along `axis`.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        let (_, c0) = first.as_matrix_dims()?;
        let (r0, _) = first.as_matrix_dims()?;
        match axis {
            0 => {
                let mut rows = 0;
                let mut data = Vec::new();
                for p in parts {
                    let (r, c) = p.as_matrix_dims()?;
                    if c != c0 {
                        return dim_err("concat axis 0: column counts differ");
                    }
                    rows += r;
                    data.extend_from_slice(&p.data);
                }
                Ok(Self::from_parts(vec![rows, c0], data))
            }
            1 => {
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let (r, c) = p.as_matrix_dims()?;
                    if r != r0 {
                        return dim_err("concat axis 1: row counts differ");
                    }
                    widths.push(c);
                }
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(r0 * total);
                for i in 0..r0 {
                    for (p, &w) in parts.iter().zip(&widths) {
                        data.extend_from_slice(&p.data[i * w..(i + 1) * w]);
                    }
                }
                Ok(Self::from_parts(vec![r0, total], data))
            }
            _ => dim_err(format!("concat axis {axis} unsupported")),
        }
    }

    pub fn rand_init(rng: &mut Rng, shape: impl Into<Vec<usize>>, scheme: InitScheme) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        let (lo, hi) = match scheme {
            InitScheme::Uniform { lo, hi } => (lo, hi),
            InitScheme::ScaledUniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (-bound, bound)
            }
        };
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::Domain(format!("invalid init interval [{lo}, {hi}]")));
        }
        let data = (0..n).map(|_| rng.uniform(lo, hi)).collect();
        Ok(Self::from_parts(shape, data))
    }
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// 17 significant digits: enough to round-trip any `f64` exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Serialize for Tensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::{Error as _, SerializeStruct};
        let data: Vec<serde_json::Number> = self
            .data
            .iter()
            .map(|&v| format_f64(v).parse::<serde_json::Number>())
            .collect::<std::result::Result<_, _>>()
            .map_err(S::Error::custom)?;
        let mut s = serializer.serialize_struct("Tensor", 2)?;
        s.serialize_field("shape", &self.shape)?;
        s.serialize_field("data", &data)?;
        s.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl<'de> Deserialize<'de> for Tensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = RawTensor::deserialize(deserializer)?;
        Tensor::new(raw.shape, raw.data).map_err(D::Error::custom)
    }
}

/// Seeded, platform-independent generator (ChaCha8).
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent generator for a named sub-stream of this seed.
    pub fn derive(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.inner.random_range(lo..hi)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + std * z
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(Tensor::identity(2).unwrap().matmul(&a).unwrap(), a);
    }

    #[test]
    fn row_times_column() {
        let out = m(&[&[1.0, 2.0]]).matmul(&m(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data(), &[11.0]);
    }

    #[test]
    fn zero_annihilates() {
        let mut rng = Rng::new(3);
        let b = Tensor::rand_init(&mut rng, [3, 4], InitScheme::Uniform { lo: -1.0, hi: 1.0 }).unwrap();
        let out = Tensor::zeros([2, 3]).unwrap().matmul(&b).unwrap();
        assert_eq!(out, Tensor::zeros([2, 4]).unwrap());
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros([2, 3]).unwrap();
        assert!(matches!(a.matmul(&a), Err(Error::Dimension(_))));
        let v = Tensor::zeros([3]).unwrap();
        assert!(matches!(a.matmul(&v), Err(Error::Dimension(_))));
    }

    #[test]
    fn elementwise_examples() {
        let a = Tensor::vector(vec![0.5, 0.5]).unwrap();
        let b = Tensor::vector(vec![0.2, 0.8]).unwrap();
        assert_eq!(a.mul(&b).unwrap().data(), &[0.1, 0.4]);
        let x = Tensor::vector(vec![1.5, -2.0, 7.25]).unwrap();
        assert_eq!(x.add(&Tensor::zeros([3]).unwrap()).unwrap(), x);
        assert_eq!(x.mul(&Tensor::ones([3]).unwrap()).unwrap(), x);
        let one_minus = x.ewise(EwiseOp::Affine { scale: -1.0 }, 1.0).unwrap();
        assert_eq!(one_minus.data(), &[-0.5, 3.0, -6.25]);
        assert!(matches!(x.add(&a), Err(Error::Dimension(_))));
    }

    #[test]
    fn non_finite_results_are_errors() {
        let big = Tensor::vector(vec![1e308]).unwrap();
        assert!(matches!(big.scale(10.0), Err(Error::Numeric(_))));
        assert!(Tensor::new([1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn invalid_shapes() {
        assert!(Tensor::zeros([0]).is_err());
        assert!(Tensor::zeros([1, 1, 1, 1]).is_err());
        assert!(Tensor::new([2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn rand_init_is_deterministic() {
        let scheme = InitScheme::Uniform { lo: -1.0, hi: 1.0 };
        let a = Tensor::rand_init(&mut Rng::new(7), [2, 2], scheme).unwrap();
        let b = Tensor::rand_init(&mut Rng::new(7), [2, 2], scheme).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn scaled_uniform_bounds() {
        let t = Tensor::rand_init(&mut Rng::new(1), [50, 40], InitScheme::ScaledUniform { fan_in: 4 }).unwrap();
        assert!(t.data().iter().all(|v| (-0.5..=0.5).contains(v)));
    }

    #[test]
    fn degenerate_uniform_is_zero() {
        let t = Tensor::rand_init(&mut Rng::new(1), [3], InitScheme::Uniform { lo: 0.0, hi: 0.0 }).unwrap();
        assert_eq!(t, Tensor::zeros([3]).unwrap());
    }

    #[test]
    fn slice_and_concat_invert() {
        let a = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let left = a.slice(1, 0, 1).unwrap();
        let right = a.slice(1, 1, 2).unwrap();
        assert_eq!(Tensor::concat(&[&left, &right], 1).unwrap(), a);
        let top = a.slice(0, 0, 1).unwrap();
        let bottom = a.slice(0, 1, 1).unwrap();
        assert_eq!(Tensor::concat(&[&top, &bottom], 0).unwrap(), a);
        assert!(a.slice(1, 2, 2).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = Rng::new(99);
        let t = Tensor::rand_init(&mut rng, [3, 2], InitScheme::Uniform { lo: -3.0, hi: 3.0 }).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.starts_with("{\"shape\":[3,2],\"data\":["));
        let back: Tensor = serde_json::from_str(&s).unwrap();
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn derived_streams_differ_but_repeat() {
        let base = Rng::new(5);
        let mut a = base.derive(1);
        let mut b = base.derive(1);
        let mut c = base.derive(2);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_eq!(x, y);
        assert_ne!(x, z);
    }
}
