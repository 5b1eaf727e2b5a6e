//! Matrix multiplication with broadcast batching, on top of a dgemm kernel.

use super::par::{par_ranges, SendPtr};
use super::{Graph, Tensor};
use crate::error::{Error, Result};

/// C[m,n] (+)= A[m,k] · B[k,n], with arbitrary operand strides. `c` is
/// contiguous row-major. Rows of the output are split across threads when
/// the product is large; every element is still produced by one fixed
/// sequential dot-product, so results do not depend on thread count.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let flops = 2 * m * k * n;
    let a_ptr = a.as_ptr();
    let b_ptr = b.as_ptr();
    let c_ptr = SendPtr::new(c.as_mut_ptr());
    let a_addr = a_ptr as usize;
    let b_addr = b_ptr as usize;
    par_ranges(m, if flops >= 1 << 21 { 16 } else { m }, |lo, hi| {
        let rows = hi - lo;
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                1.0,
                (a_addr as *const f64).offset(lo as isize * rsa),
                rsa,
                csa,
                b_addr as *const f64,
                rsb,
                csb,
                beta,
                c_ptr.get().add(lo * n),
                n as isize,
                1,
            );
        }
    });
}

/// Shape analysis for a (possibly batched, possibly broadcast) matmul.
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Broadcast leading dims of the output.
    pub batch_dims: Vec<usize>,
    /// Element offset step into A for each output batch index (0 = broadcast).
    a_batch_offsets: Vec<usize>,
    b_batch_offsets: Vec<usize>,
    /// True when the operand has one matrix per output batch (no broadcast).
    a_unshared: bool,
    b_unshared: bool,
}

impl MatmulPlan {
    pub fn new(a_shape: &[usize], b_shape: &[usize]) -> Result<Self> {
        let err = || Error::Dimension {
            op: "matmul",
            lhs: a_shape.to_vec(),
            rhs: b_shape.to_vec(),
        };
        if a_shape.len() < 2 || b_shape.len() < 2 {
            return Err(err());
        }
        let m = a_shape[a_shape.len() - 2];
        let k = a_shape[a_shape.len() - 1];
        let kb = b_shape[b_shape.len() - 2];
        let n = b_shape[b_shape.len() - 1];
        if k != kb {
            return Err(err());
        }
        let la = &a_shape[..a_shape.len() - 2];
        let lb = &b_shape[..b_shape.len() - 2];
        let rank = la.len().max(lb.len());
        let mut batch_dims = vec![0usize; rank];
        let dim_of = |dims: &[usize], i: usize| -> usize {
            // right-aligned broadcast
            if i + dims.len() >= rank {
                dims[i + dims.len() - rank]
            } else {
                1
            }
        };
        for i in 0..rank {
            let da = dim_of(la, i);
            let db = dim_of(lb, i);
            if da != db && da != 1 && db != 1 {
                return Err(err());
            }
            batch_dims[i] = da.max(db);
        }
        let batch_total: usize = batch_dims.iter().product();

        // per-output-batch element offsets into each operand
        let offsets = |dims: &[usize], mat: usize| -> Vec<usize> {
            let mut out = Vec::with_capacity(batch_total);
            for flat in 0..batch_total {
                let mut rem = flat;
                let mut idx = vec![0usize; rank];
                for d in (0..rank).rev() {
                    idx[d] = rem % batch_dims[d];
                    rem /= batch_dims[d];
                }
                let mut off = 0usize;
                let mut stride = mat;
                for d in (0..rank).rev() {
                    let dd = dim_of(dims, d);
                    if dd != 1 {
                        off += idx[d] * stride;
                        stride *= dd;
                    }
                }
                out.push(off);
            }
            out
        };
        let a_batch_offsets = offsets(la, m * k);
        let b_batch_offsets = offsets(lb, k * n);
        let a_unshared = la.iter().product::<usize>() == batch_total || batch_total == 1;
        let b_unshared = lb.iter().product::<usize>() == batch_total || batch_total == 1;
        Ok(MatmulPlan {
            m,
            k,
            n,
            batch_dims,
            a_batch_offsets,
            b_batch_offsets,
            a_unshared,
            b_unshared,
        })
    }

    pub fn batch_total(&self) -> usize {
        self.a_batch_offsets.len()
    }

    pub fn out_shape(&self) -> Vec<usize> {
        let mut s = self.batch_dims.clone();
        s.push(self.m);
        s.push(self.n);
        s
    }

    fn single_b(&self) -> bool {
        self.b_batch_offsets.iter().all(|&o| o == 0)
    }

    /// Threshold for `par_ranges` over batches: split only when the total
    /// work is large enough to beat the thread spawn cost.
    fn batch_par_min(&self) -> usize {
        let flops = 2 * self.batch_total() * self.m * self.k * self.n;
        if flops >= 1 << 21 {
            1
        } else {
            usize::MAX
        }
    }

    pub fn forward(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let (m, k, n) = (self.m, self.k, self.n);
        let batches = self.batch_total();
        let mut out = super::uninit_vec(batches * m * n);
        if self.single_b() {
            // one big gemm over all stacked A rows
            gemm(
                batches * m,
                k,
                n,
                a,
                k as isize,
                1,
                b,
                n as isize,
                1,
                0.0,
                &mut out,
            );
            return out;
        }
        let out_ptr = SendPtr::new(out.as_mut_ptr());
        let a_addr = a.as_ptr() as usize;
        let b_addr = b.as_ptr() as usize;
        par_ranges(batches, self.batch_par_min(), |lo, hi| {
            for bi in lo..hi {
                let a_off = self.a_batch_offsets[bi];
                let b_off = self.b_batch_offsets[bi];
                unsafe {
                    matrixmultiply::dgemm(
                        m,
                        k,
                        n,
                        1.0,
                        (a_addr as *const f64).add(a_off),
                        k as isize,
                        1,
                        (b_addr as *const f64).add(b_off),
                        n as isize,
                        1,
                        0.0,
                        out_ptr.get().add(bi * m * n),
                        n as isize,
                        1,
                    );
                }
            }
        });
        out
    }

    /// dA (+)= dC · Bᵀ, reduced over batch dims where A was broadcast.
    /// `beta` 0 writes a fresh buffer, 1 accumulates into an existing slot.
    pub fn grad_a_into(&self, dc: &[f64], b: &[f64], da: &mut [f64], beta: f64) {
        let (m, k, n) = (self.m, self.k, self.n);
        let batches = self.batch_total();
        if self.single_b() && self.a_unshared {
            // all batches share B: one gemm over stacked rows
            gemm(batches * m, n, k, dc, n as isize, 1, b, 1, n as isize, beta, da);
            return;
        }
        if self.a_unshared {
            let da_ptr = SendPtr::new(da.as_mut_ptr());
            let dc_addr = dc.as_ptr() as usize;
            let b_addr = b.as_ptr() as usize;
            par_ranges(batches, self.batch_par_min(), |lo, hi| {
                for bi in lo..hi {
                    unsafe {
                        matrixmultiply::dgemm(
                            m,
                            n,
                            k,
                            1.0,
                            (dc_addr as *const f64).add(bi * m * n),
                            n as isize,
                            1,
                            (b_addr as *const f64).add(self.b_batch_offsets[bi]),
                            1,
                            n as isize,
                            beta,
                            da_ptr.get().add(self.a_batch_offsets[bi]),
                            k as isize,
                            1,
                        );
                    }
                }
            });
        } else {
            // broadcast A: accumulate sequentially in batch order
            if beta == 0.0 {
                da.fill(0.0);
            }
            for bi in 0..batches {
                let a_off = self.a_batch_offsets[bi];
                gemm(
                    m,
                    n,
                    k,
                    &dc[bi * m * n..],
                    n as isize,
                    1,
                    &b[self.b_batch_offsets[bi]..],
                    1,
                    n as isize,
                    1.0,
                    &mut da[a_off..],
                );
            }
        }
    }

    /// dB (+)= Aᵀ · dC, reduced over batch dims where B was broadcast.
    pub fn grad_b_into(&self, dc: &[f64], a: &[f64], db: &mut [f64], beta: f64) {
        let (m, k, n) = (self.m, self.k, self.n);
        let batches = self.batch_total();
        if self.single_b() {
            // dB = Aᵀ(stacked) · dC(stacked): a single gemm accumulates every
            // batch in one fixed-order reduction.
            gemm(k, batches * m, n, a, 1, k as isize, dc, n as isize, 1, beta, db);
            return;
        }
        if self.b_unshared {
            let db_ptr = SendPtr::new(db.as_mut_ptr());
            let dc_addr = dc.as_ptr() as usize;
            let a_addr = a.as_ptr() as usize;
            par_ranges(batches, self.batch_par_min(), |lo, hi| {
                for bi in lo..hi {
                    unsafe {
                        matrixmultiply::dgemm(
                            k,
                            m,
                            n,
                            1.0,
                            (a_addr as *const f64).add(self.a_batch_offsets[bi]),
                            1,
                            k as isize,
                            (dc_addr as *const f64).add(bi * m * n),
                            n as isize,
                            1,
                            beta,
                            db_ptr.get().add(self.b_batch_offsets[bi]),
                            n as isize,
                            1,
                        );
                    }
                }
            });
        } else {
            if beta == 0.0 {
                db.fill(0.0);
            }
            for bi in 0..batches {
                let b_off = self.b_batch_offsets[bi];
                gemm(
                    k,
                    m,
                    n,
                    &a[self.a_batch_offsets[bi]..],
                    1,
                    k as isize,
                    &dc[bi * m * n..],
                    n as isize,
                    1,
                    1.0,
                    &mut db[b_off..],
                );
            }
        }
    }
}

impl Graph {
    /// Batched matrix product; leading dimensions broadcast.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let plan = MatmulPlan::new(a.shape(), b.shape())?;
        let data = plan.forward(a.data(), b.data());
        let shape = plan.out_shape();
        let (a_cl, b_cl) = (a.clone(), b.clone());
        Ok(self.emit(&[a, b], shape, data, move || {
            Box::new(move |g, store| {
                store.accumulate_make(
                    &a_cl,
                    || {
                        let mut da = super::uninit_vec(a_cl.numel());
                        plan.grad_a_into(g, b_cl.data(), &mut da, 0.0);
                        da
                    },
                    |da| plan.grad_a_into(g, b_cl.data(), da, 1.0),
                );
                store.accumulate_make(
                    &b_cl,
                    || {
                        let mut db = super::uninit_vec(b_cl.numel());
                        plan.grad_b_into(g, a_cl.data(), &mut db, 0.0);
                        db
                    },
                    |db| plan.grad_b_into(g, a_cl.data(), db, 1.0),
                );
            })
        }))
    }

    /// Fused affine map over the last dimension: y = x·W + bias, with W
    /// stored [in, out]. One record; the bias lands in the gemm's beta pass.
    pub fn linear(&mut self, x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (w_in, w_out) = match w.shape() {
            [i, o] => (*i, *o),
            _ => {
                return Err(Error::Dimension {
                    op: "linear",
                    lhs: x.shape().to_vec(),
                    rhs: w.shape().to_vec(),
                })
            }
        };
        if x.shape().last() != Some(&w_in) || bias.shape() != [w_out] {
            return Err(Error::Dimension {
                op: "linear",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let rows = x.numel() / w_in.max(1);
        let mut out_shape = x.shape().to_vec();
        *out_shape.last_mut().unwrap() = w_out;
        let mut data = super::uninit_vec(rows * w_out);
        {
            let bd = bias.data();
            let out = SendPtr::new(data.as_mut_ptr());
            par_ranges(rows, (1 << 14) / w_out.max(1), |lo, hi| {
                for r in lo..hi {
                    unsafe {
                        std::ptr::copy_nonoverlapping(
                            bd.as_ptr(),
                            out.get().add(r * w_out),
                            w_out,
                        );
                    }
                }
            });
        }
        gemm(
            rows,
            w_in,
            w_out,
            x.data(),
            w_in as isize,
            1,
            w.data(),
            w_out as isize,
            1,
            1.0,
            &mut data,
        );
        let (x_cl, w_cl, b_cl) = (x.clone(), w.clone(), bias.clone());
        Ok(self.emit(&[x, w, bias], out_shape, data, move || {
            Box::new(move |g, store| {
                let dx_gemm = |dx: &mut [f64], beta: f64| {
                    // dx (+)= g · Wᵀ
                    gemm(
                        rows,
                        w_out,
                        w_in,
                        g,
                        w_out as isize,
                        1,
                        w_cl.data(),
                        1,
                        w_out as isize,
                        beta,
                        dx,
                    );
                };
                store.accumulate_make(
                    &x_cl,
                    || {
                        let mut dx = super::uninit_vec(x_cl.numel());
                        dx_gemm(&mut dx, 0.0);
                        dx
                    },
                    |dx| dx_gemm(dx, 1.0),
                );
                let dw_gemm = |dw: &mut [f64], beta: f64| {
                    // dW (+)= xᵀ · g
                    gemm(
                        w_in,
                        rows,
                        w_out,
                        x_cl.data(),
                        1,
                        w_in as isize,
                        g,
                        w_out as isize,
                        1,
                        beta,
                        dw,
                    );
                };
                store.accumulate_make(
                    &w_cl,
                    || {
                        let mut dw = super::uninit_vec(w_cl.numel());
                        dw_gemm(&mut dw, 0.0);
                        dw
                    },
                    |dw| dw_gemm(dw, 1.0),
                );
                store.accumulate(&b_cl, |db| {
                    for r in 0..rows {
                        let row = &g[r * w_out..(r + 1) * w_out];
                        for (d, gi) in db.iter_mut().zip(row) {
                            *d += gi;
                        }
                    }
                });
            })
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::constant(shape, data)
    }

    #[test]
    fn identity_times_matrix() {
        let mut g = Graph::inference();
        let i2 = t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let m = t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let c = g.matmul(&i2, &m).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn hand_expanded_row_times_column() {
        let mut g = Graph::inference();
        let a = t(vec![1, 2], vec![1.0, 2.0]);
        let b = t(vec![2, 1], vec![3.0, 4.0]);
        let c = g.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::inference();
        let a = t(vec![2, 3], vec![0.0; 6]);
        let b = t(vec![2, 2], vec![0.0; 4]);
        match g.matmul(&a, &b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn gradient_of_sum_matches_analytic() {
        // d/dA sum(A·B) at A=[[1,1]], B=[[2],[5]] → [[2,5]]
        let mut g = Graph::recording();
        let a = Tensor::param(vec![1, 2], vec![1.0, 1.0]);
        let b = Tensor::param(vec![2, 1], vec![2.0, 5.0]);
        let c = g.matmul(&a, &b).unwrap();
        let s = g.sum_all(&c);
        let grads = g.backward(&s).unwrap();
        assert_eq!(grads.get(&a).unwrap(), &[2.0, 5.0]);
        assert_eq!(grads.get(&b).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn batched_broadcasts_leading_dims() {
        // A: [2,1,2] stack of row vectors, B: [2,2] shared
        let mut g = Graph::inference();
        let a = t(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let c = g.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn batched_both_sides() {
        let mut g = Graph::inference();
        // two 2x2 matrices times two 2x1 vectors
        let a = t(vec![2, 2, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0]);
        let b = t(vec![2, 2, 1], vec![5.0, 7.0, 1.0, 1.0]);
        let c = g.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 1]);
        assert_eq!(c.data(), &[5.0, 7.0, 2.0, 2.0]);
    }

    #[test]
    fn batched_gradients_reduce_over_broadcast() {
        // B shared across a batch of 3: dB accumulates all batches
        let mut g = Graph::recording();
        let a = Tensor::param(vec![3, 1, 2], vec![1.0; 6]);
        let b = Tensor::param(vec![2, 1], vec![1.0, 1.0]);
        let c = g.matmul(&a, &b).unwrap();
        let s = g.sum_all(&c);
        let grads = g.backward(&s).unwrap();
        assert_eq!(grads.get(&b).unwrap(), &[3.0, 3.0]);
        assert_eq!(grads.get(&a).unwrap(), &[1.0; 6]);
    }
}
