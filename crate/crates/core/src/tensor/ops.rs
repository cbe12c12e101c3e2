use super::{numel, Result, Tensor, TensorError};

#[derive(Clone, Copy)]
enum Bcast {
    Same,
    LhsScalar,
    RhsScalar,
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Bcast, Vec<usize>)> {
    if a.shape() == b.shape() {
        Ok((Bcast::Same, a.shape().to_vec()))
    } else if a.numel() == 1 {
        Ok((Bcast::LhsScalar, b.shape().to_vec()))
    } else if b.numel() == 1 {
        Ok((Bcast::RhsScalar, a.shape().to_vec()))
    } else {
        Err(TensorError::Shape { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() })
    }
}

/// Reduces a full-size gradient to a parent's size (sums for a scalar operand).
fn reduce_to(g: Vec<f64>, scalar: bool) -> Vec<f64> {
    if scalar {
        vec![g.iter().sum()]
    } else {
        g
    }
}

impl Tensor {
    /// Elementwise binary op with partial derivatives `(d/da, d/db)` given `(a, b)`.
    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        df: fn(f64, f64) -> (f64, f64),
    ) -> Result<Tensor> {
        let (mode, shape) = broadcast(op, self, other)?;
        let a = self.to_vec();
        let b = other.to_vec();
        let n = numel(&shape);
        let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        let out: Vec<f64> = (0..n).map(|i| f(at(&a, i), at(&b, i))).collect();
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            out,
            shape,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
                let mut ga = if need_a { Some(vec![0.0; g.len()]) } else { None };
                let mut gb = if need_b { Some(vec![0.0; g.len()]) } else { None };
                for i in 0..g.len() {
                    let (da, db) = df(at(&a, i), at(&b, i));
                    if let Some(ga) = ga.as_mut() {
                        ga[i] = g[i] * da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[i] = g[i] * db;
                    }
                }
                vec![
                    ga.map(|v| reduce_to(v, matches!(mode, Bcast::LhsScalar))),
                    gb.map(|v| reduce_to(v, matches!(mode, Bcast::RhsScalar))),
                ]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _| (1.0, -1.0))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "div", |a, b| a / b, |a, b| (1.0 / b, -a / (b * b)))
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub(crate) fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
        let x = self.to_vec();
        let y: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let y_saved = y.clone();
        Tensor::from_op(
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().zip(&x).zip(&y_saved).map(|((g, &x), &y)| g * df(x, y)).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(move |x| if x > 0.0 { x } else { slope * x }, move |x, _| if x > 0.0 { 1.0 } else { slope })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn log(&self) -> Tensor {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![s], vec![], vec![self.clone()], Box::new(move |g| vec![Some(vec![g[0]; n])]))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum();
        let inv = 1.0 / n.max(1) as f64;
        Tensor::from_op(vec![s * inv], vec![], vec![self.clone()], Box::new(move |g| vec![Some(vec![g[0] * inv; n])]))
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(TensorError::Shape { op: "reshape", lhs: self.shape().to_vec(), rhs: shape.to_vec() });
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], Box::new(|g| vec![Some(g.to_vec())])))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(TensorError::Invalid(format!("slice {start}..{end} on axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let width = end - start;
        let src = self.data();
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            out.extend_from_slice(&src[base..base + width * inner]);
        }
        drop(src);
        let mut out_shape = shape.clone();
        out_shape[axis] = width;
        let total = self.numel();
        Ok(Tensor::from_op(
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![0.0; total];
                for o in 0..outer {
                    let base = (o * len + start) * inner;
                    gi[base..base + width * inner].copy_from_slice(&g[o * width * inner..(o + 1) * width * inner]);
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose2d(&self) -> Result<Tensor> {
        let &[r, c] = self.shape() else {
            return Err(TensorError::Invalid(format!("transpose2d needs 2-D input, got {:?}", self.shape())));
        };
        let src = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            out,
            vec![c, r],
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gi[i * c + j] = g[j * r + i];
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Gathers rows of a 2-D tensor. Rows may repeat.
    pub fn index_select(&self, rows: &[usize]) -> Result<Tensor> {
        let &[r, c] = self.shape() else {
            return Err(TensorError::Invalid(format!("index_select needs 2-D input, got {:?}", self.shape())));
        };
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(TensorError::Invalid(format!("row {bad} out of range for {r} rows")));
        }
        let src = self.data();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        drop(src);
        let rows = rows.to_vec();
        Ok(Tensor::from_op(
            out,
            vec![rows.len(), c],
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![0.0; r * c];
                for (k, &i) in rows.iter().enumerate() {
                    for j in 0..c {
                        gi[i * c + j] += g[k * c + j];
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }
}
