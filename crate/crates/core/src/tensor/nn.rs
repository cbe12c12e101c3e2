use super::{Result, Tensor, TensorError};

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    // Row/column strides of the logical operand given its stored layout.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices hold at least m*k, k*n and m*n elements and the
    // strides above address exactly those ranges.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

fn dims4(t: &Tensor, op: &str) -> Result<[usize; 4]> {
    match t.shape() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        s => Err(TensorError::Invalid(format!("{op} needs NCHW input, got {s:?}"))),
    }
}

/// Splits `shape` around `axis` into (outer, len, inner).
fn axis_split(shape: &[usize], axis: usize, op: &str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::Invalid(format!("{op}: axis {axis} out of range for {shape:?}")));
    }
    Ok((shape[..axis].iter().product(), shape[axis], shape[axis + 1..].iter().product()))
}

/// 3x3 neighbourhoods of one `c x h x w` image as a `(c*9) x (h*w)` matrix,
/// zero padded by one pixel.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let img = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ch * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &img[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back onto the image.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, x: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let img = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ch * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut img[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(TensorError::Shape { op: "matmul", lhs: self.shape().to_vec(), rhs: other.shape().to_vec() });
        };
        if k != k2 {
            return Err(TensorError::Shape { op: "matmul", lhs: self.shape().to_vec(), rhs: other.shape().to_vec() });
        }
        let a = self.to_vec();
        let b = other.to_vec();
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &a, false, &b, false, 0.0, &mut out);
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ga = need_a.then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, &b, true, 0.0, &mut ga);
                    ga
                });
                let gb = need_b.then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, &a, true, g, false, 0.0, &mut gb);
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Adds `bias [m]` to every row of a `[n, m]` tensor.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let &[rows, m] = self.shape() else {
            return Err(TensorError::Shape { op: "add_row_bias", lhs: self.shape().to_vec(), rhs: bias.shape().to_vec() });
        };
        if bias.numel() != m {
            return Err(TensorError::Shape { op: "add_row_bias", lhs: self.shape().to_vec(), rhs: bias.shape().to_vec() });
        }
        let b = bias.to_vec();
        let mut out = self.to_vec();
        for r in 0..rows {
            out[r * m..(r + 1) * m].iter_mut().zip(&b).for_each(|(o, b)| *o += b);
        }
        Ok(Tensor::from_op(
            out,
            vec![rows, m],
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                let mut gb = vec![0.0; m];
                for r in 0..rows {
                    gb.iter_mut().zip(&g[r * m..(r + 1) * m]).for_each(|(a, b)| *a += b);
                }
                vec![Some(g.to_vec()), Some(gb)]
            }),
        ))
    }

    /// 3x3 convolution, stride 1, zero padding 1. `self` is `[n, c, h, w]`,
    /// `weight` is `[o, c, 3, 3]`, `bias` is `[o]`.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let [n, c, h, w] = dims4(self, "conv2d")?;
        let [o, c2, kh, kw] = dims4(weight, "conv2d weight")?;
        if c != c2 || kh != 3 || kw != 3 || w < 2 {
            return Err(TensorError::Shape { op: "conv2d", lhs: self.shape().to_vec(), rhs: weight.shape().to_vec() });
        }
        if let Some(b) = bias {
            if b.numel() != o {
                return Err(TensorError::Shape { op: "conv2d bias", lhs: vec![o], rhs: b.shape().to_vec() });
            }
        }
        let hw = h * w;
        let k = c * 9;
        let x = self.to_vec();
        let wt = weight.to_vec();
        let b = bias.map(|b| b.to_vec());
        let mut cols = vec![0.0; n * k * hw];
        let mut out = vec![0.0; n * o * hw];
        for i in 0..n {
            let col = &mut cols[i * k * hw..(i + 1) * k * hw];
            im2col(&x[i * c * hw..(i + 1) * c * hw], c, h, w, col);
            let dst = &mut out[i * o * hw..(i + 1) * o * hw];
            if let Some(b) = &b {
                for (oc, &bv) in b.iter().enumerate() {
                    dst[oc * hw..(oc + 1) * hw].fill(bv);
                }
            }
            gemm(o, k, hw, &wt, false, col, false, if b.is_some() { 1.0 } else { 0.0 }, dst);
        }
        let need_x = self.requires_grad();
        let need_w = weight.requires_grad();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let has_bias = bias.is_some();
        Ok(Tensor::from_op(
            out,
            vec![n, o, h, w],
            parents,
            Box::new(move |g| {
                let mut gx = need_x.then(|| vec![0.0; n * c * hw]);
                let mut gw = need_w.then(|| vec![0.0; o * k]);
                let mut gcol = vec![0.0; k * hw];
                for i in 0..n {
                    let gi = &g[i * o * hw..(i + 1) * o * hw];
                    let col = &cols[i * k * hw..(i + 1) * k * hw];
                    if let Some(gw) = gw.as_mut() {
                        gemm(o, hw, k, gi, false, col, true, 1.0, gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(k, o, hw, &wt, true, gi, false, 0.0, &mut gcol);
                        col2im(&gcol, c, h, w, &mut gx[i * c * hw..(i + 1) * c * hw]);
                    }
                }
                let mut grads = vec![gx, gw];
                if has_bias {
                    let mut gb = vec![0.0; o];
                    for i in 0..n {
                        for (oc, acc) in gb.iter_mut().enumerate() {
                            *acc += g[(i * o + oc) * hw..(i * o + oc + 1) * hw].iter().sum::<f64>();
                        }
                    }
                    grads.push(Some(gb));
                }
                grads
            }),
        ))
    }

    /// Nearest-neighbour 2x upsampling of `[n, c, h, w]`.
    pub fn upsample2x(&self) -> Result<Tensor> {
        let [n, c, h, w] = dims4(self, "upsample2x")?;
        let planes = n * c;
        let (h2, w2) = (2 * h, 2 * w);
        let x = self.data();
        let mut out = vec![0.0; planes * h2 * w2];
        for p in 0..planes {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(p * h2 + y) * w2 + xx] = x[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            out,
            vec![n, c, h2, w2],
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![0.0; planes * h * w];
                for p in 0..planes {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            gi[(p * h + y / 2) * w + xx / 2] += g[(p * h2 + y) * w2 + xx];
                        }
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Nearest-neighbour 2x downsampling of `[n, c, h, w]`: keeps the
    /// top-left pixel of every 2x2 block. `h` and `w` must be even.
    pub fn downsample2x(&self) -> Result<Tensor> {
        let [n, c, h, w] = dims4(self, "downsample2x")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::Invalid(format!("downsample2x needs even sides, got {h}x{w}")));
        }
        let planes = n * c;
        let (h2, w2) = (h / 2, w / 2);
        let x = self.data();
        let mut out = vec![0.0; planes * h2 * w2];
        for p in 0..planes {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(p * h2 + y) * w2 + xx] = x[(p * h + 2 * y) * w + 2 * xx];
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            out,
            vec![n, c, h2, w2],
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![0.0; planes * h * w];
                for p in 0..planes {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            gi[(p * h + 2 * y) * w + 2 * xx] = g[(p * h2 + y) * w2 + xx];
                        }
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_split(self.shape(), axis, "softmax")?;
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    y[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    y[at(j)] /= z;
                }
            }
        }
        drop(x);
        let ys = y.clone();
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * ys[at(j)]).sum();
                        for j in 0..len {
                            gi[at(j)] = ys[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// `x - logsumexp(x)` along `axis`, computed stably.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_split(self.shape(), axis, "log_softmax")?;
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..len).map(|j| (x[at(j)] - max).exp()).sum::<f64>().ln();
                for j in 0..len {
                    y[at(j)] = x[at(j)] - lse;
                }
            }
        }
        drop(x);
        let ys = y.clone();
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let total: f64 = (0..len).map(|j| g[at(j)]).sum();
                        for j in 0..len {
                            gi[at(j)] = g[at(j)] - ys[at(j)].exp() * total;
                        }
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Scales every vector along `axis` to unit Euclidean length. Norms below
    /// 1e-12 are clamped to avoid division by zero.
    pub fn l2_normalize(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_split(self.shape(), axis, "l2_normalize")?;
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        let mut norms = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let nrm = (0..len).map(|j| x[at(j)] * x[at(j)]).sum::<f64>().sqrt().max(1e-12);
                norms[o * inner + i] = nrm;
                for j in 0..len {
                    y[at(j)] = x[at(j)] / nrm;
                }
            }
        }
        drop(x);
        let ys = y.clone();
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let nrm = norms[o * inner + i];
                        let dot: f64 = (0..len).map(|j| g[at(j)] * ys[at(j)]).sum();
                        for j in 0..len {
                            gi[at(j)] = (g[at(j)] - ys[at(j)] * dot) / nrm;
                        }
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_conv_is_identity() {
        let x = Tensor::new((0..2 * 5 * 4).map(|v| v as f64 * 0.3 - 2.0).collect(), &[1, 2, 5, 4]).unwrap();
        let mut k = vec![0.0; 2 * 2 * 9];
        k[4] = 1.0; // out 0 <- in 0 center
        k[3 * 9 + 4] = 1.0; // out 1 <- in 1 center
        let w = Tensor::new(k, &[2, 2, 3, 3]).unwrap();
        assert_eq!(x.conv2d(&w, None).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (c, h, w, o) = (2, 4, 5, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 7 % 11) as f64) * 0.1 - 0.5).collect();
        let wt: Vec<f64> = (0..o * c * 9).map(|i| ((i * 5 % 13) as f64) * 0.05 - 0.3).collect();
        let b = vec![0.1, -0.2, 0.3];
        let y = Tensor::new(x.clone(), &[1, c, h, w])
            .unwrap()
            .conv2d(&Tensor::new(wt.clone(), &[o, c, 3, 3]).unwrap(), Some(&Tensor::new(b.clone(), &[o]).unwrap()))
            .unwrap()
            .to_vec();
        for oc in 0..o {
            for yy in 0..h {
                for xx in 0..w {
                    let mut s = b[oc];
                    for ic in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (yy as isize + ky - 1, xx as isize + kx - 1);
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    s += wt[((oc * c + ic) * 3 + ky as usize) * 3 + kx as usize]
                                        * x[(ic * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    assert!((s - y[(oc * h + yy) * w + xx]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn uniform_softmax() {
        let x = Tensor::new(vec![0.7; 5], &[1, 5]).unwrap();
        for v in x.softmax(1).unwrap().to_vec() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let ls = x.log_softmax(1).unwrap().to_vec();
        assert!((ls[0] + 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matmul_values() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = Tensor::new(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[3, 2]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![4.0, 5.0, 10.0, 11.0]);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn resampling_round_trip() {
        let x = Tensor::new((0..8).map(f64::from).collect(), &[1, 2, 2, 2]).unwrap();
        let up = x.upsample2x().unwrap();
        assert_eq!(up.shape(), &[1, 2, 4, 4]);
        assert_eq!(up.downsample2x().unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn normalized_rows_have_unit_length() {
        let x = Tensor::new(vec![3.0, 4.0, 0.0, 2.0], &[2, 2]).unwrap();
        assert_eq!(x.l2_normalize(1).unwrap().to_vec(), vec![0.6, 0.8, 0.0, 1.0]);
    }
}
