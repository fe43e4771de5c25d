//! Differentiable operations.
//!
//! Each op validates shapes, computes the forward value eagerly, and
//! registers a backward rule closing over whatever the rule needs.
//! Backward rules read parent values through the graph, so stored values
//! must not be mutated between a forward pass and its backward sweep
//! (optimizers run between steps, never inside one).

use super::{shape_len, Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// `out += a(m×k) · b(k×n)`, row-major.
fn mm_acc<F: Real>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == F::zero() {
                continue;
            }
            let brow = &b[l * n..l * n + n];
            let orow = &mut out[i * n..i * n + n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * *bv;
            }
        }
    }
}

/// `out += a(m×k) · b(n×k)ᵀ`.
fn mm_nt_acc<F: Real>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..i * k + k];
        for j in 0..n {
            let brow = &b[j * k..j * k + k];
            let mut acc = F::zero();
            for (av, bv) in arow.iter().zip(brow) {
                acc += *av * *bv;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out += a(k×m)ᵀ · b(k×n)`.
fn mm_tn_acc<F: Real>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for l in 0..k {
        let arow = &a[l * m..l * m + m];
        let brow = &b[l * n..l * n + n];
        for i in 0..m {
            let av = arow[i];
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[i * n..i * n + n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * *bv;
            }
        }
    }
}

fn require_rank<F: Real>(t: &Tensor<F>, rank: usize, op: &'static str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// Lane decomposition of a rank-1/rank-2 tensor along `axis`:
/// `(lanes, lane_len, index(lane, t))` where index is `lane*len + t`
/// for contiguous lanes and `t*lanes + lane` for strided ones.
fn lanes_for(shape: &[usize], axis: usize) -> (usize, usize, bool) {
    match (shape.len(), axis) {
        (1, 0) => (1, shape[0], true),
        (2, 1) => (shape[0], shape[1], true),
        (2, 0) => (shape[1], shape[0], false),
        _ => unreachable!("validated by caller"),
    }
}

#[inline]
fn lane_index(contiguous: bool, lanes: usize, lane_len: usize, lane: usize, t: usize) -> usize {
    if contiguous {
        lane * lane_len + t
    } else {
        let _ = lane_len;
        t * lanes + lane
    }
}

impl<F: Real> Tensor<F> {
    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        require_rank(self, 2, "matmul")?;
        require_rank(rhs, 2, "matmul")?;
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (rhs.shape()[0], rhs.shape()[1]);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: {:?} × {:?}", self.shape(), rhs.shape()),
            ));
        }
        let mut out = vec![F::zero(); m * n];
        mm_acc(m, k, n, &self.data(), &rhs.data(), &mut out);
        Ok(Tensor::op(
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, ps| {
                let (a, b) = (&ps[0], &ps[1]);
                if a.requires_grad() {
                    let bd = b.data();
                    a.accum_grad_with(|ga| mm_nt_acc(m, n, k, g, &bd, ga));
                }
                if b.requires_grad() {
                    let ad = a.data();
                    b.accum_grad_with(|gb| mm_tn_acc(k, m, n, &ad, g, gb));
                }
            }),
        ))
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Tensor<F>> {
        require_rank(self, 2, "transpose")?;
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let d = self.data();
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        drop(d);
        Ok(Tensor::op(
            vec![n, m],
            out,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|gx| {
                    for j in 0..n {
                        for i in 0..m {
                            gx[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }),
        ))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(), rhs.shape()),
            ));
        }
        let out: Vec<F> = self.data().iter().zip(rhs.data().iter()).map(|(a, b)| *a + *b).collect();
        Ok(Tensor::op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, ps| {
                ps[0].accum_grad(g);
                ps[1].accum_grad(g);
            }),
        ))
    }

    /// Add a rank-1 bias to every row of a rank-2 tensor.
    pub fn add_bias(&self, bias: &Tensor<F>) -> Result<Tensor<F>> {
        require_rank(self, 2, "add_bias")?;
        require_rank(bias, 1, "add_bias")?;
        let (m, n) = (self.shape()[0], self.shape()[1]);
        if bias.shape()[0] != n {
            return Err(Error::shape(
                "add_bias",
                format!("rows of {:?} vs bias {:?}", self.shape(), bias.shape()),
            ));
        }
        let b = bias.data();
        let out: Vec<F> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| *x + b[i % n])
            .collect();
        drop(b);
        Ok(Tensor::op(
            vec![m, n],
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad(g);
                ps[1].accum_grad_with(|gb| {
                    for r in 0..m {
                        for c in 0..n {
                            gb[c] += g[r * n + c];
                        }
                    }
                });
            }),
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: F) -> Tensor<F> {
        let out: Vec<F> = self.data().iter().map(|x| *x * c).collect();
        Tensor::op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|gx| {
                    for (gi, ui) in gx.iter_mut().zip(g) {
                        *gi += c * *ui;
                    }
                });
            }),
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", self.shape(), rhs.shape()),
            ));
        }
        let out: Vec<F> = self.data().iter().zip(rhs.data().iter()).map(|(a, b)| *a * *b).collect();
        Ok(Tensor::op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, ps| {
                let (a, b) = (&ps[0], &ps[1]);
                if a.requires_grad() {
                    let bd = b.data();
                    a.accum_grad_with(|ga| {
                        for ((gi, ui), bi) in ga.iter_mut().zip(g).zip(bd.iter()) {
                            *gi += *ui * *bi;
                        }
                    });
                }
                if b.requires_grad() {
                    let ad = a.data();
                    b.accum_grad_with(|gb| {
                        for ((gi, ui), ai) in gb.iter_mut().zip(g).zip(ad.iter()) {
                            *gi += *ui * *ai;
                        }
                    });
                }
            }),
        ))
    }

    pub fn relu(&self) -> Tensor<F> {
        let out: Vec<F> = self.data().iter().map(|x| x.max(F::zero())).collect();
        Tensor::op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(|g, ps| {
                let xd = ps[0].data();
                ps[0].accum_grad_with(|gx| {
                    for ((gi, ui), xi) in gx.iter_mut().zip(g).zip(xd.iter()) {
                        if *xi > F::zero() {
                            *gi += *ui;
                        }
                    }
                });
            }),
        )
    }

    /// Softmax along `axis`, stabilized by max subtraction. Every slice
    /// along the axis sums to 1.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<F>> {
        if self.rank() == 0 || self.rank() > 2 || axis >= self.rank() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} invalid for shape {:?}", self.shape()),
            ));
        }
        let (lanes, lane_len, contiguous) = lanes_for(self.shape(), axis);
        let x = self.data();
        let mut out = vec![F::zero(); x.len()];
        for lane in 0..lanes {
            let mut mx = F::neg_infinity();
            for t in 0..lane_len {
                mx = mx.max(x[lane_index(contiguous, lanes, lane_len, lane, t)]);
            }
            let mut denom = F::zero();
            for t in 0..lane_len {
                let i = lane_index(contiguous, lanes, lane_len, lane, t);
                let e = (x[i] - mx).exp();
                out[i] = e;
                denom += e;
            }
            for t in 0..lane_len {
                let i = lane_index(contiguous, lanes, lane_len, lane, t);
                out[i] /= denom;
            }
        }
        drop(x);
        let saved = out.clone();
        Ok(Tensor::op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|gx| {
                    for lane in 0..lanes {
                        let mut dot = F::zero();
                        for t in 0..lane_len {
                            let i = lane_index(contiguous, lanes, lane_len, lane, t);
                            dot += g[i] * saved[i];
                        }
                        for t in 0..lane_len {
                            let i = lane_index(contiguous, lanes, lane_len, lane, t);
                            gx[i] += saved[i] * (g[i] - dot);
                        }
                    }
                });
            }),
        ))
    }

    /// Per-row normalization to zero mean and unit (population) variance,
    /// followed by the learned affine `gamma * xhat + beta`.
    pub fn layer_norm(&self, gamma: &Tensor<F>, beta: &Tensor<F>, eps: f64) -> Result<Tensor<F>> {
        if eps <= 0.0 {
            return Err(Error::contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let d = match self.rank() {
            1 => self.shape()[0],
            2 => self.shape()[1],
            _ => {
                return Err(Error::shape(
                    "layer_norm",
                    format!("expected rank 1 or 2, got {:?}", self.shape()),
                ))
            }
        };
        require_rank(gamma, 1, "layer_norm")?;
        require_rank(beta, 1, "layer_norm")?;
        if gamma.shape()[0] != d || beta.shape()[0] != d {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "input {:?} vs gamma {:?} / beta {:?}",
                    self.shape(),
                    gamma.shape(),
                    beta.shape()
                ),
            ));
        }
        let rows = self.len() / d;
        let eps = F::from_f64c(eps);
        let x = self.data();
        let gm = gamma.data();
        let bt = beta.data();
        let mut out = vec![F::zero(); x.len()];
        let mut xhat = vec![F::zero(); x.len()];
        let mut inv_std = vec![F::zero(); rows];
        let nf = F::from_f64c(d as f64);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mut mean = F::zero();
            for v in row {
                mean += *v;
            }
            mean /= nf;
            let mut var = F::zero();
            for v in row {
                let c = *v - mean;
                var += c * c;
            }
            var /= nf;
            let inv = (var + eps).sqrt().recip();
            inv_std[r] = inv;
            for c in 0..d {
                let xh = (row[c] - mean) * inv;
                xhat[r * d + c] = xh;
                out[r * d + c] = gm[c] * xh + bt[c];
            }
        }
        drop((x, gm, bt));
        Ok(Tensor::op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, ps| {
                let (x, gamma, beta) = (&ps[0], &ps[1], &ps[2]);
                beta.accum_grad_with(|gb| {
                    for r in 0..rows {
                        for c in 0..d {
                            gb[c] += g[r * d + c];
                        }
                    }
                });
                gamma.accum_grad_with(|gg| {
                    for r in 0..rows {
                        for c in 0..d {
                            gg[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                });
                if x.requires_grad() {
                    let gm = gamma.data();
                    x.accum_grad_with(|gx| {
                        for r in 0..rows {
                            let mut mean_dxh = F::zero();
                            let mut mean_dxh_xh = F::zero();
                            for c in 0..d {
                                let dxh = g[r * d + c] * gm[c];
                                mean_dxh += dxh;
                                mean_dxh_xh += dxh * xhat[r * d + c];
                            }
                            mean_dxh /= nf;
                            mean_dxh_xh /= nf;
                            for c in 0..d {
                                let dxh = g[r * d + c] * gm[c];
                                gx[r * d + c] +=
                                    inv_std[r] * (dxh - mean_dxh - xhat[r * d + c] * mean_dxh_xh);
                            }
                        }
                    });
                }
            }),
        ))
    }

    /// Concatenate along `axis`. All inputs must share rank and agree on
    /// every non-axis dimension.
    pub fn concat(tensors: &[&Tensor<F>], axis: usize) -> Result<Tensor<F>> {
        if tensors.is_empty() {
            return Err(Error::contract("concat of zero tensors".to_string()));
        }
        let rank = tensors[0].rank();
        if !(rank == 1 || rank == 2) || axis >= rank {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} invalid for shape {:?}", tensors[0].shape()),
            ));
        }
        for t in tensors {
            if t.rank() != rank {
                return Err(Error::shape(
                    "concat",
                    format!("mixed ranks: {:?} vs {:?}", tensors[0].shape(), t.shape()),
                ));
            }
            for a in 0..rank {
                if a != axis && t.shape()[a] != tensors[0].shape()[a] {
                    return Err(Error::shape(
                        "concat",
                        format!(
                            "non-axis dimension mismatch: {:?} vs {:?}",
                            tensors[0].shape(),
                            t.shape()
                        ),
                    ));
                }
            }
        }
        let parts: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = parts.iter().sum();
        let mut shape = tensors[0].shape().to_vec();
        shape[axis] = total;
        let mut out = vec![F::zero(); shape_len(&shape)];
        if rank == 1 || axis == 0 {
            // Contiguous blocks, in input order.
            let mut at = 0;
            for t in tensors {
                let d = t.data();
                out[at..at + d.len()].copy_from_slice(&d);
                at += d.len();
            }
        } else {
            // axis == 1 on rank 2: each row interleaves the inputs' rows.
            let m = shape[0];
            for r in 0..m {
                let mut at = r * total;
                for (t, w) in tensors.iter().zip(&parts) {
                    let d = t.data();
                    out[at..at + w].copy_from_slice(&d[r * w..(r + 1) * w]);
                    at += w;
                }
            }
        }
        let parents: Vec<Tensor<F>> = tensors.iter().map(|t| (*t).clone()).collect();
        let m = if rank == 2 { tensors[0].shape()[0] } else { 1 };
        Ok(Tensor::op(
            shape,
            out,
            parents,
            Box::new(move |g, ps| {
                if rank == 1 || axis == 0 {
                    let mut at = 0;
                    for p in ps {
                        let n = p.len();
                        p.accum_grad(&g[at..at + n]);
                        at += n;
                    }
                } else {
                    let mut col = 0;
                    for (p, w) in ps.iter().zip(&parts) {
                        p.accum_grad_with(|gp| {
                            for r in 0..m {
                                for c in 0..*w {
                                    gp[r * w + c] += g[r * total + col + c];
                                }
                            }
                        });
                        col += w;
                    }
                }
            }),
        ))
    }

    /// Extract row `i` of a rank-2 tensor as a rank-1 tensor.
    pub fn row(&self, i: usize) -> Result<Tensor<F>> {
        require_rank(self, 2, "row")?;
        let (m, n) = (self.shape()[0], self.shape()[1]);
        if i >= m {
            return Err(Error::contract(format!("row {i} out of range for {m} rows")));
        }
        let out = self.data()[i * n..(i + 1) * n].to_vec();
        Ok(Tensor::op(
            vec![n],
            out,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|gx| {
                    for c in 0..n {
                        gx[i * n + c] += g[c];
                    }
                });
            }),
        ))
    }

    /// Gather rows of an embedding table. Gradients scatter-add back into
    /// the looked-up rows.
    pub fn embedding_lookup(table: &Tensor<F>, ids: &[u32]) -> Result<Tensor<F>> {
        require_rank(table, 2, "embedding_lookup")?;
        let (v, d) = (table.shape()[0], table.shape()[1]);
        for &id in ids {
            if id as usize >= v {
                return Err(Error::VocabIndex { id, size: v });
            }
        }
        let td = table.data();
        let mut out = vec![F::zero(); ids.len() * d];
        for (r, &id) in ids.iter().enumerate() {
            let src = &td[id as usize * d..(id as usize + 1) * d];
            out[r * d..(r + 1) * d].copy_from_slice(src);
        }
        drop(td);
        let ids: Vec<u32> = ids.to_vec();
        Ok(Tensor::op(
            vec![ids.len(), d],
            out,
            vec![table.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id as usize * d..(id as usize + 1) * d];
                        for (o, ui) in dst.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o += *ui;
                        }
                    }
                });
            }),
        ))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; in eval
    /// mode the input is returned unchanged.
    pub fn dropout(&self, p: f64, training: bool, rng: &mut SplitMix64) -> Result<Tensor<F>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout p must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let mask: Vec<bool> = (0..self.len()).map(|_| rng.next_f64() >= p).collect();
        self.apply_dropout_mask(&mask, p)
    }

    /// Deterministic half of dropout; exposed so gradients can be checked
    /// against finite differences under a fixed mask.
    pub fn apply_dropout_mask(&self, mask: &[bool], p: f64) -> Result<Tensor<F>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout p must be in [0, 1), got {p}")));
        }
        if mask.len() != self.len() {
            return Err(Error::shape(
                "apply_dropout_mask",
                format!("mask length {} vs tensor length {}", mask.len(), self.len()),
            ));
        }
        let keep = F::from_f64c(1.0 / (1.0 - p));
        let out: Vec<F> = self
            .data()
            .iter()
            .zip(mask)
            .map(|(x, m)| if *m { *x * keep } else { F::zero() })
            .collect();
        let mask: Vec<bool> = mask.to_vec();
        Ok(Tensor::op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|gx| {
                    for ((gi, ui), m) in gx.iter_mut().zip(g).zip(&mask) {
                        if *m {
                            *gi += *ui * keep;
                        }
                    }
                });
            }),
        ))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum_all(&self) -> Tensor<F> {
        let mut acc = F::zero();
        for v in self.data().iter() {
            acc += *v;
        }
        Tensor::op(
            vec![],
            vec![acc],
            vec![self.clone()],
            Box::new(|g, ps| {
                let u = g[0];
                ps[0].accum_grad_with(|gx| {
                    for gi in gx.iter_mut() {
                        *gi += u;
                    }
                });
            }),
        )
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean_all(&self) -> Tensor<F> {
        let n = F::from_f64c(self.len() as f64);
        let mut acc = F::zero();
        for v in self.data().iter() {
            acc += *v;
        }
        Tensor::op(
            vec![],
            vec![acc / n],
            vec![self.clone()],
            Box::new(move |g, ps| {
                let u = g[0] / n;
                ps[0].accum_grad_with(|gx| {
                    for gi in gx.iter_mut() {
                        *gi += u;
                    }
                });
            }),
        )
    }

    /// Pack rank-0 tensors into a rank-1 tensor.
    pub fn stack_scalars(scalars: &[Tensor<F>]) -> Result<Tensor<F>> {
        if scalars.is_empty() {
            return Err(Error::contract("stack_scalars of zero tensors".to_string()));
        }
        let mut out = Vec::with_capacity(scalars.len());
        for s in scalars {
            out.push(s.item()?);
        }
        let parents: Vec<Tensor<F>> = scalars.to_vec();
        Ok(Tensor::op(
            vec![scalars.len()],
            out,
            parents,
            Box::new(|g, ps| {
                for (i, p) in ps.iter().enumerate() {
                    p.accum_grad(&g[i..i + 1]);
                }
            }),
        ))
    }

    /// Cosine similarity of two rank-1 tensors as a rank-0 tensor.
    /// A zero-norm input yields 0 with zero gradient (the eval-path
    /// scorer reports the degenerate case explicitly).
    pub fn cosine(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        require_rank(self, 1, "cosine")?;
        require_rank(rhs, 1, "cosine")?;
        if self.shape() != rhs.shape() {
            return Err(Error::shape(
                "cosine",
                format!("{:?} vs {:?}", self.shape(), rhs.shape()),
            ));
        }
        let (mut s, mut uu, mut vv) = (F::zero(), F::zero(), F::zero());
        {
            let u = self.data();
            let v = rhs.data();
            for (a, b) in u.iter().zip(v.iter()) {
                s += *a * *b;
                uu += *a * *a;
                vv += *b * *b;
            }
        }
        let degenerate = uu == F::zero() || vv == F::zero();
        let value = if degenerate {
            F::zero()
        } else {
            s / (uu.sqrt() * vv.sqrt())
        };
        Ok(Tensor::op(
            vec![],
            vec![value],
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, ps| {
                if degenerate {
                    return;
                }
                let upstream = g[0];
                let (u, v) = (&ps[0], &ps[1]);
                let (nu, nv) = (uu.sqrt(), vv.sqrt());
                let inv = (nu * nv).recip();
                if u.requires_grad() {
                    let ud = u.data();
                    let vd = v.data();
                    u.accum_grad_with(|gu| {
                        for ((gi, a), b) in gu.iter_mut().zip(ud.iter()).zip(vd.iter()) {
                            *gi += upstream * (*b * inv - value * *a / uu);
                        }
                    });
                }
                if v.requires_grad() {
                    let ud = u.data();
                    let vd = v.data();
                    v.accum_grad_with(|gv| {
                        for ((gi, b), a) in gv.iter_mut().zip(vd.iter()).zip(ud.iter()) {
                            *gi += upstream * (*a * inv - value * *b / vv);
                        }
                    });
                }
            }),
        ))
    }

    /// `-log softmax(logits)[target]`, computed via a stable
    /// log-sum-exp. Gradient is `softmax(logits) - onehot(target)`.
    pub fn softmax_cross_entropy(&self, target: usize) -> Result<Tensor<F>> {
        require_rank(self, 1, "softmax_cross_entropy")?;
        let n = self.shape()[0];
        if target >= n {
            return Err(Error::contract(format!(
                "target {target} out of range for {n} candidates"
            )));
        }
        let z = self.data();
        let mut mx = F::neg_infinity();
        for v in z.iter() {
            mx = mx.max(*v);
        }
        let mut denom = F::zero();
        let mut probs = vec![F::zero(); n];
        for (i, v) in z.iter().enumerate() {
            let e = (*v - mx).exp();
            probs[i] = e;
            denom += e;
        }
        for p in probs.iter_mut() {
            *p /= denom;
        }
        let loss = denom.ln() + mx - z[target];
        drop(z);
        Ok(Tensor::op(
            vec![],
            vec![loss],
            vec![self.clone()],
            Box::new(move |g, ps| {
                let upstream = g[0];
                ps[0].accum_grad_with(|gz| {
                    for (i, gi) in gz.iter_mut().enumerate() {
                        let indicator = if i == target { F::one() } else { F::zero() };
                        *gi += upstream * (probs[i] - indicator);
                    }
                });
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::<f64>::from_vec(vec![rows, cols], vals.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let eye = t2(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let c = a.matmul(&eye).unwrap();
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_row_sums() {
        let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let ones = t2(2, 1, &[1.0, 1.0]);
        let c = a.matmul(&ones).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.to_vec(), vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t2(2, 3, &[0.0; 6]);
        let b = t2(2, 2, &[0.0; 4]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let x = Tensor::<f64>::from_vec(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = x.softmax(0).unwrap();
        for v in y.to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let big = Tensor::<f64>::from_vec(vec![2], vec![1000.0, 1000.0]).unwrap();
        let y = big.softmax(0).unwrap();
        assert_eq!(y.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t2(2, 3, &[0.3, -1.0, 2.0, 5.0, 5.0, -5.0]);
        let y = x.softmax(1).unwrap();
        let d = y.to_vec();
        for r in 0..2 {
            let s: f64 = d[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(d[r * 3..(r + 1) * 3].iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn layer_norm_constant_row_collapses_to_beta() {
        let x = Tensor::<f64>::from_vec(vec![3], vec![5.0, 5.0, 5.0]).unwrap();
        let gamma = Tensor::<f64>::from_vec(vec![3], vec![1.0; 3]).unwrap();
        let beta = Tensor::<f64>::from_vec(vec![3], vec![0.0; 3]).unwrap();
        let y = x.layer_norm(&gamma, &beta, 1e-5).unwrap();
        for v in y.to_vec() {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        // Population variance: mean 2, var 1 -> [-1, 1] (up to eps).
        let x = Tensor::<f64>::from_vec(vec![2], vec![1.0, 3.0]).unwrap();
        let gamma = Tensor::<f64>::from_vec(vec![2], vec![1.0; 2]).unwrap();
        let beta = Tensor::<f64>::from_vec(vec![2], vec![0.0; 2]).unwrap();
        let y = x.layer_norm(&gamma, &beta, 1e-12).unwrap();
        let d = y.to_vec();
        assert!((d[0] + 1.0).abs() < 1e-5);
        assert!((d[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn relu_values() {
        let x = Tensor::<f64>::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(x.relu().to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let x = Tensor::<f64>::from_vec(vec![4], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let mut rng = SplitMix64::new(1);
        let y = x.dropout(0.1, false, &mut rng).unwrap();
        assert_eq!(y.id(), x.id(), "eval-mode dropout returns the input node");
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn dropout_train_scales_survivors() {
        let x = Tensor::<f64>::from_vec(vec![1000], vec![1.0; 1000]).unwrap();
        let mut rng = SplitMix64::new(2);
        let y = x.dropout(0.25, true, &mut rng).unwrap();
        let d = y.to_vec();
        let scale = 1.0 / 0.75;
        assert!(d.iter().all(|v| *v == 0.0 || (*v - scale).abs() < 1e-12));
        let kept = d.iter().filter(|v| **v != 0.0).count();
        assert!((600..900).contains(&kept), "kept {kept} of 1000 at p=0.25");
    }

    #[test]
    fn concat_last_axis_shapes() {
        let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = t2(2, 3, &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]);
    }

    #[test]
    fn concat_then_slicing_recovers_inputs() {
        let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = t2(2, 1, &[9.0, 8.0]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        let d = c.to_vec();
        // Slice the concatenated buffer back apart.
        let a_back: Vec<f64> = (0..2).flat_map(|r| d[r * 3..r * 3 + 2].to_vec()).collect();
        let b_back: Vec<f64> = (0..2).map(|r| d[r * 3 + 2]).collect();
        assert_eq!(a_back, a.to_vec());
        assert_eq!(b_back, b.to_vec());
    }

    #[test]
    fn embedding_lookup_and_oov() {
        let table = t2(3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let e = Tensor::embedding_lookup(&table, &[2, 0]).unwrap();
        assert_eq!(e.to_vec(), vec![4.0, 5.0, 0.0, 1.0]);
        let err = Tensor::embedding_lookup(&table, &[3]).unwrap_err();
        assert!(matches!(err, Error::VocabIndex { id: 3, size: 3 }));
    }

    #[test]
    fn cosine_basic_identities() {
        let v = Tensor::<f64>::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let w = v.scale(2.0);
        let neg = v.scale(-1.0);
        assert!((v.cosine(&v).unwrap().item().unwrap() - 1.0).abs() < 1e-12);
        assert!((v.cosine(&w).unwrap().item().unwrap() - 1.0).abs() < 1e-12);
        assert!((v.cosine(&neg).unwrap().item().unwrap() + 1.0).abs() < 1e-12);
        let zero = Tensor::<f64>::from_vec(vec![3], vec![0.0; 3]).unwrap();
        assert_eq!(v.cosine(&zero).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_n() {
        let z = Tensor::<f64>::from_vec(vec![4], vec![0.7; 4]).unwrap();
        let loss = z.softmax_cross_entropy(1).unwrap().item().unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn stack_scalars_roundtrip() {
        let a = Tensor::<f64>::scalar(1.5);
        let b = Tensor::<f64>::scalar(-2.5);
        let s = Tensor::stack_scalars(&[a, b]).unwrap();
        assert_eq!(s.to_vec(), vec![1.5, -2.5]);
    }

    #[test]
    fn transpose_values() {
        let a = t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = a.transpose().unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}
