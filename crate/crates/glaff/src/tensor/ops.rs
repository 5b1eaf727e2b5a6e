//! Operation implementations and their backward rules.

use super::par::{par_ranges, SendPtr};
use super::{Graph, Tensor};
use crate::error::{Error, Result};

const PAR_MIN: usize = 1 << 16;

/// How a (possibly broadcast) input maps into output coordinates.
enum IndexMap {
    /// Input is a trailing block of the output: in = out % numel. Covers
    /// identical shapes, scalars, and suffix broadcast like a bias vector.
    Modulo(usize),
    /// General right-aligned broadcast (e.g. [b,1,c] against [b,n,c]).
    Strided {
        out_dims: Vec<usize>,
        in_strides: Vec<usize>,
    },
}

impl IndexMap {
    fn build(out_shape: &[usize], in_shape: &[usize]) -> IndexMap {
        let suffix_ok = in_shape.len() <= out_shape.len()
            && in_shape
                .iter()
                .rev()
                .zip(out_shape.iter().rev())
                .all(|(i, o)| i == o);
        if suffix_ok {
            return IndexMap::Modulo(in_shape.iter().product::<usize>().max(1));
        }
        let rank = out_shape.len();
        let pad = rank - in_shape.len();
        let mut in_strides = vec![0usize; rank];
        let mut stride = 1usize;
        for d in (0..rank).rev() {
            let dim = if d < pad { 1 } else { in_shape[d - pad] };
            if dim != 1 {
                in_strides[d] = stride;
                stride *= dim;
            }
        }
        IndexMap::Strided {
            out_dims: out_shape.to_vec(),
            in_strides,
        }
    }

    fn apply(&self, flat: usize) -> usize {
        match self {
            IndexMap::Modulo(n) => flat % n,
            IndexMap::Strided {
                out_dims,
                in_strides,
            } => {
                let mut rem = flat;
                let mut idx = 0usize;
                for d in (0..out_dims.len()).rev() {
                    let coord = rem % out_dims[d];
                    rem /= out_dims[d];
                    idx += coord * in_strides[d];
                }
                idx
            }
        }
    }

}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        let da = if d + a.len() >= rank {
            a[d + a.len() - rank]
        } else {
            1
        };
        let db = if d + b.len() >= rank {
            b[d + b.len() - rank]
        } else {
            1
        };
        if da != db && da != 1 && db != 1 {
            return Err(Error::Dimension {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        out[d] = da.max(db);
    }
    Ok(out)
}

/// Write (not add) a full-size operand's gradient into a fresh buffer:
/// dst[i] = df(this_i, other_i, g_i). Only valid when `this` covers the
/// output one-to-one.
fn backward_side_assign(
    dst: &mut [f64],
    g: &[f64],
    this: &Tensor,
    other: &Tensor,
    other_map: &IndexMap,
    df: impl Fn(f64, f64, f64) -> f64 + Copy + Sync,
) {
    let numel = g.len();
    let (td, od) = (this.data(), other.data());
    let out = SendPtr::new(dst.as_mut_ptr());
    match other_map {
        IndexMap::Modulo(no) if *no == numel => {
            par_ranges(numel, PAR_MIN, |lo, hi| {
                let d = out.get();
                for i in lo..hi {
                    unsafe {
                        *d.add(i) = df(td[i], od[i], g[i]);
                    }
                }
            });
        }
        IndexMap::Modulo(no) => {
            let no = *no;
            par_ranges(numel / no.max(1), (PAR_MIN / no.max(1)).max(1), |lo, hi| {
                let d = out.get();
                for r in lo..hi {
                    let base = r * no;
                    for j in 0..no {
                        let i = base + j;
                        unsafe {
                            *d.add(i) = df(td[i], od[j], g[i]);
                        }
                    }
                }
            });
        }
        IndexMap::Strided { .. } => {
            for i in 0..numel {
                dst[i] = df(td[i], od[other_map.apply(i)], g[i]);
            }
        }
    }
}

/// Accumulate one operand's gradient: dst[map(i)] += df(this_i, other_i, g_i).
/// Parallel when this operand covers the output one-to-one; sequential (fixed
/// order) when the map reduces over broadcast positions.
fn backward_side(
    dst: &mut [f64],
    g: &[f64],
    this: &Tensor,
    other: &Tensor,
    this_map: &IndexMap,
    other_map: &IndexMap,
    df: impl Fn(f64, f64, f64) -> f64 + Copy + Sync,
) {
    let numel = g.len();
    let (td, od) = (this.data(), other.data());
    match (this_map, other_map) {
        (IndexMap::Modulo(nt), IndexMap::Modulo(no)) if *nt == numel => {
            let no = *no;
            let out = SendPtr::new(dst.as_mut_ptr());
            if no == numel {
                par_ranges(numel, PAR_MIN, |lo, hi| {
                    let d = out.get();
                    for i in lo..hi {
                        unsafe {
                            *d.add(i) += df(td[i], od[i], g[i]);
                        }
                    }
                });
            } else {
                let rows = numel / no.max(1);
                par_ranges(rows, (PAR_MIN / no.max(1)).max(1), |lo, hi| {
                    let d = out.get();
                    for r in lo..hi {
                        let base = r * no;
                        for j in 0..no {
                            let i = base + j;
                            unsafe {
                                *d.add(i) += df(td[i], od[j], g[i]);
                            }
                        }
                    }
                });
            }
        }
        (IndexMap::Modulo(nt), IndexMap::Modulo(no)) if *no == numel => {
            // reduction over leading rows against a full-size other operand
            let nt = *nt;
            for r in 0..numel / nt.max(1) {
                let base = r * nt;
                for j in 0..nt {
                    dst[j] += df(td[j], od[base + j], g[base + j]);
                }
            }
        }
        (IndexMap::Modulo(nt), IndexMap::Modulo(no)) => {
            let (nt, no) = (*nt, *no);
            for r in 0..numel / nt.max(1) {
                let base = r * nt;
                for j in 0..nt {
                    let i = base + j;
                    dst[j] += df(td[j], od[i % no], g[i]);
                }
            }
        }
        _ => {
            for i in 0..numel {
                let ti = this_map.apply(i);
                dst[ti] += df(td[ti], od[other_map.apply(i)], g[i]);
            }
        }
    }
}

impl Graph {
    fn binary<F, Da, Db>(
        &mut self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: F,
        dfda: Da,
        dfdb: Db,
    ) -> Result<Tensor>
    where
        F: Fn(f64, f64) -> f64 + Copy + Sync,
        Da: Fn(f64, f64, f64) -> f64 + Copy + Sync + 'static,
        Db: Fn(f64, f64, f64) -> f64 + Copy + Sync + 'static,
    {
        let out_shape = broadcast_shape(op, a.shape(), b.shape())?;
        let numel: usize = out_shape.iter().product();
        let a_map = IndexMap::build(&out_shape, a.shape());
        let b_map = IndexMap::build(&out_shape, b.shape());
        let mut data = super::uninit_vec(numel);
        match (&a_map, &b_map) {
            (IndexMap::Modulo(na), IndexMap::Modulo(nb)) if *na == numel && *nb == numel => {
                let (ad, bd) = (a.data(), b.data());
                let out = SendPtr::new(data.as_mut_ptr());
                par_ranges(numel, PAR_MIN, |lo, hi| {
                    let dst = out.get();
                    for i in lo..hi {
                        unsafe {
                            *dst.add(i) = f(ad[i], bd[i]);
                        }
                    }
                });
            }
            // full-size lhs against a trailing block (bias-add shape)
            (IndexMap::Modulo(na), IndexMap::Modulo(nb)) if *na == numel => {
                let nb = *nb;
                let (ad, bd) = (a.data(), b.data());
                let out = SendPtr::new(data.as_mut_ptr());
                par_ranges(numel / nb, (PAR_MIN / nb.max(1)).max(1), |lo, hi| {
                    let dst = out.get();
                    for r in lo..hi {
                        let base = r * nb;
                        for j in 0..nb {
                            unsafe {
                                *dst.add(base + j) = f(ad[base + j], bd[j]);
                            }
                        }
                    }
                });
            }
            (IndexMap::Modulo(na), IndexMap::Modulo(nb)) if *nb == numel => {
                let na = *na;
                let (ad, bd) = (a.data(), b.data());
                let out = SendPtr::new(data.as_mut_ptr());
                par_ranges(numel / na, (PAR_MIN / na.max(1)).max(1), |lo, hi| {
                    let dst = out.get();
                    for r in lo..hi {
                        let base = r * na;
                        for j in 0..na {
                            unsafe {
                                *dst.add(base + j) = f(ad[j], bd[base + j]);
                            }
                        }
                    }
                });
            }
            _ => {
                let (ad, bd) = (a.data(), b.data());
                for (i, slot) in data.iter_mut().enumerate() {
                    *slot = f(ad[a_map.apply(i)], bd[b_map.apply(i)]);
                }
            }
        }
        let (a_cl, b_cl) = (a.clone(), b.clone());
        Ok(self.emit(&[a, b], out_shape, data, move || {
            Box::new(move |g, store| {
                let full_a = matches!(&a_map, IndexMap::Modulo(n) if *n == g.len());
                if full_a {
                    store.accumulate_make(
                        &a_cl,
                        || {
                            let mut da = super::uninit_vec(g.len());
                            backward_side_assign(&mut da, g, &a_cl, &b_cl, &b_map, dfda);
                            da
                        },
                        |da| backward_side(da, g, &a_cl, &b_cl, &a_map, &b_map, dfda),
                    );
                } else {
                    store.accumulate(&a_cl, |da| {
                        backward_side(da, g, &a_cl, &b_cl, &a_map, &b_map, dfda);
                    });
                }
                let full_b = matches!(&b_map, IndexMap::Modulo(n) if *n == g.len());
                let flip = move |x: f64, y: f64, gr: f64| dfdb(y, x, gr);
                if full_b {
                    store.accumulate_make(
                        &b_cl,
                        || {
                            let mut db = super::uninit_vec(g.len());
                            backward_side_assign(&mut db, g, &b_cl, &a_cl, &a_map, flip);
                            db
                        },
                        |db| backward_side(db, g, &b_cl, &a_cl, &b_map, &a_map, flip),
                    );
                } else {
                    store.accumulate(&b_cl, |db| {
                        backward_side(db, g, &b_cl, &a_cl, &b_map, &a_map, flip);
                    });
                }
            })
        }))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("add", a, b, |x, y| x + y, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("sub", a, b, |x, y| x - y, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("mul", a, b, |x, y| x * y, |_, y, g| g * y, |x, _, g| g * x)
    }

    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(
            "div",
            a,
            b,
            |x, y| x / y,
            |_, y, g| g / y,
            |x, y, g| -g * x / (y * y),
        )
    }

    pub fn mul_scalar(&mut self, a: &Tensor, c: f64) -> Tensor {
        let data = a.data().iter().map(|&x| c * x).collect();
        let a_cl = a.clone();
        self.emit(&[a], a.shape().to_vec(), data, move || {
            Box::new(move |g, store| {
                store.accumulate(&a_cl, |da| {
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += c * gi;
                    }
                });
            })
        })
    }

    pub fn add_scalar(&mut self, a: &Tensor, c: f64) -> Tensor {
        let data = a.data().iter().map(|&x| x + c).collect();
        let a_cl = a.clone();
        self.emit(&[a], a.shape().to_vec(), data, move || {
            Box::new(move |g, store| {
                store.accumulate(&a_cl, |da| {
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                });
            })
        })
    }

    /// Exact GELU: x · Φ(x) with Φ the standard normal CDF via erf.
    pub fn gelu(&mut self, a: &Tensor) -> Tensor {
        let n = a.numel();
        let mut data = super::uninit_vec(n);
        {
            let ad = a.data();
            let out = SendPtr::new(data.as_mut_ptr());
            par_ranges(n, PAR_MIN / 4, |lo, hi| {
                let dst = out.get();
                for (i, &x) in ad[lo..hi].iter().enumerate() {
                    let phi = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                    unsafe {
                        *dst.add(lo + i) = x * phi;
                    }
                }
            });
        }
        let a_cl = a.clone();
        self.emit(&[a], a.shape().to_vec(), data, move || {
            Box::new(move |g, store| {
                let run = |da: &mut [f64], assign: bool| {
                    let ad = a_cl.data();
                    let inv_sqrt_2pi = 0.398_942_280_401_432_7;
                    let slot = SendPtr::new(da.as_mut_ptr());
                    par_ranges(g.len(), PAR_MIN / 4, |lo, hi| {
                        let dst = slot.get();
                        for i in lo..hi {
                            let x = ad[i];
                            let phi = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                            let pdf = inv_sqrt_2pi * (-0.5 * x * x).exp();
                            let v = g[i] * (phi + x * pdf);
                            unsafe {
                                if assign {
                                    *dst.add(i) = v;
                                } else {
                                    *dst.add(i) += v;
                                }
                            }
                        }
                    });
                };
                store.accumulate_make(
                    &a_cl,
                    || {
                        let mut da = super::uninit_vec(g.len());
                        run(&mut da, true);
                        da
                    },
                    |da| run(da, false),
                );
            })
        })
    }

    /// Inverted dropout as one fused op: zero with probability p, scale
    /// survivors by 1/(1-p). The mask is a pure function of the stream
    /// position, so the backward pass replays it instead of storing it.
    pub fn dropout_mask(&mut self, x: &Tensor, p: f64, rng: &mut crate::rng::DetRng) -> Tensor {
        let n = x.numel();
        let scale = 1.0 / (1.0 - p);
        let start = rng.clone();
        let mut data = super::uninit_vec(n);
        {
            let xd = x.data();
            let out = SendPtr::new(data.as_mut_ptr());
            par_ranges(n, PAR_MIN / 2, |lo, hi| {
                let mut stream = start.jumped(lo as u64);
                let dst = unsafe { std::slice::from_raw_parts_mut(out.get().add(lo), hi - lo) };
                for (d, &xv) in dst.iter_mut().zip(&xd[lo..hi]) {
                    let u = stream.unit_f64();
                    *d = if u < p { 0.0 } else { xv * scale };
                }
            });
        }
        rng.advance(n as u64);
        let x_cl = x.clone();
        self.emit(&[x], x.shape().to_vec(), data, move || {
            Box::new(move |g, store| {
                let run = |dx: &mut [f64], assign: bool| {
                    let slot = SendPtr::new(dx.as_mut_ptr());
                    par_ranges(g.len(), PAR_MIN / 2, |lo, hi| {
                        let mut stream = start.jumped(lo as u64);
                        let dst = unsafe {
                            std::slice::from_raw_parts_mut(slot.get().add(lo), hi - lo)
                        };
                        for (d, &gv) in dst.iter_mut().zip(&g[lo..hi]) {
                            let u = stream.unit_f64();
                            let v = if u < p { 0.0 } else { gv * scale };
                            if assign {
                                *d = v;
                            } else {
                                *d += v;
                            }
                        }
                    });
                };
                store.accumulate_make(
                    &x_cl,
                    || {
                        let mut dx = super::uninit_vec(g.len());
                        run(&mut dx, true);
                        dx
                    },
                    |dx| run(dx, false),
                );
            })
        })
    }

    /// Elementwise square root; inputs must be non-negative.
    pub fn sqrt(&mut self, a: &Tensor) -> Tensor {
        let data: Vec<f64> = a.data().iter().map(|&x| x.sqrt()).collect();
        let a_cl = a.clone();
        let saved = data.clone();
        self.emit(&[a], a.shape().to_vec(), data, move || {
            Box::new(move |g, store| {
                store.accumulate(&a_cl, |da| {
                    for i in 0..g.len() {
                        da[i] += g[i] * 0.5 / saved[i];
                    }
                });
            })
        })
    }

    /// Numerically stabilized softmax over the last dimension. Rows sum to 1.
    pub fn softmax_lastdim(&mut self, a: &Tensor) -> Result<Tensor> {
        let shape = a.shape().to_vec();
        let k = *shape.last().ok_or_else(|| {
            Error::Usage("softmax requires at least one dimension".into())
        })?;
        if k == 0 {
            return Err(Error::Data("softmax over empty slice".into()));
        }
        let slices = a.numel() / k;
        let mut data = super::uninit_vec(a.numel());
        let nan_seen = std::sync::atomic::AtomicBool::new(false);
        {
            let ad = a.data();
            let out = SendPtr::new(data.as_mut_ptr());
            par_ranges(slices, PAR_MIN / k.max(1), |lo, hi| {
                let dst_base = out.get();
                for s in lo..hi {
                    let row = &ad[s * k..(s + 1) * k];
                    // NaN never compares greater, so it leaves mx untouched;
                    // it then propagates through exp into the row sum where
                    // one check per slice catches it.
                    let mut mx = f64::NEG_INFINITY;
                    for &v in row {
                        if v > mx {
                            mx = v;
                        }
                    }
                    let dst =
                        unsafe { std::slice::from_raw_parts_mut(dst_base.add(s * k), k) };
                    let mut sum = 0.0;
                    for (d, &v) in dst.iter_mut().zip(row) {
                        let e = (v - mx).exp();
                        *d = e;
                        sum += e;
                    }
                    if sum.is_nan() {
                        nan_seen.store(true, std::sync::atomic::Ordering::Relaxed);
                    }
                    let inv = 1.0 / sum;
                    for d in dst.iter_mut() {
                        *d *= inv;
                    }
                }
            });
        }
        if nan_seen.into_inner() {
            return Err(Error::Data("NaN input to softmax".into()));
        }
        let a_cl = a.clone();
        Ok(self.emit_with_out(&[a], shape, data, move |out| {
            let y_out = out.clone();
            Box::new(move |g, store| {
                let y_saved = y_out.data();
                let run = |da: &mut [f64], assign: bool| {
                    let slot = SendPtr::new(da.as_mut_ptr());
                    par_ranges(slices, PAR_MIN / k.max(1), |lo, hi| {
                        let base = slot.get();
                        for s in lo..hi {
                            let y = &y_saved[s * k..(s + 1) * k];
                            let gr = &g[s * k..(s + 1) * k];
                            let dot: f64 = y.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                            let dst =
                                unsafe { std::slice::from_raw_parts_mut(base.add(s * k), k) };
                            for j in 0..k {
                                let v = y[j] * (gr[j] - dot);
                                if assign {
                                    dst[j] = v;
                                } else {
                                    dst[j] += v;
                                }
                            }
                        }
                    });
                };
                store.accumulate_make(
                    &a_cl,
                    || {
                        let mut da = super::uninit_vec(g.len());
                        run(&mut da, true);
                        da
                    },
                    |da| run(da, false),
                );
            })
        }))
    }

    /// Layer normalization over the last dimension, population variance.
    pub fn layer_norm(
        &mut self,
        x: &Tensor,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<Tensor> {
        let d = *x.shape().last().unwrap_or(&0);
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(Error::Domain(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let slices = x.numel() / d;
        let mut data = super::uninit_vec(x.numel());
        let mut xhat = super::uninit_vec(x.numel());
        let mut inv_std = super::uninit_vec(slices);
        {
            let xd = x.data();
            let (gd, bd) = (gain.data(), bias.data());
            let out = SendPtr::new(data.as_mut_ptr());
            let xh = SendPtr::new(xhat.as_mut_ptr());
            let invs = SendPtr::new(inv_std.as_mut_ptr());
            par_ranges(slices, PAR_MIN / d.max(1), |lo, hi| {
                for s in lo..hi {
                    let row = &xd[s * d..(s + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
                        / d as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    unsafe {
                        *invs.get().add(s) = inv;
                    }
                    for j in 0..d {
                        let h = (row[j] - mean) * inv;
                        unsafe {
                            *xh.get().add(s * d + j) = h;
                            *out.get().add(s * d + j) = h * gd[j] + bd[j];
                        }
                    }
                }
            });
        }
        let (x_cl, g_cl, b_cl) = (x.clone(), gain.clone(), bias.clone());
        Ok(self.emit(&[x, gain, bias], x.shape().to_vec(), data, move || {
            Box::new(move |g, store| {
                store.accumulate(&g_cl, |dgain| {
                    for s in 0..slices {
                        for j in 0..d {
                            dgain[j] += g[s * d + j] * xhat[s * d + j];
                        }
                    }
                });
                store.accumulate(&b_cl, |dbias| {
                    for s in 0..slices {
                        for j in 0..d {
                            dbias[j] += g[s * d + j];
                        }
                    }
                });
                let run_dx = |dx: &mut [f64], assign: bool| {
                    let gd = g_cl.data();
                    let slot = SendPtr::new(dx.as_mut_ptr());
                    par_ranges(slices, PAR_MIN / d.max(1), |lo, hi| {
                        let base_ptr = slot.get();
                        for s in lo..hi {
                            let base = s * d;
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for j in 0..d {
                                let dh = g[base + j] * gd[j];
                                m1 += dh;
                                m2 += dh * xhat[base + j];
                            }
                            m1 /= d as f64;
                            m2 /= d as f64;
                            let inv = inv_std[s];
                            let dst = unsafe {
                                std::slice::from_raw_parts_mut(base_ptr.add(base), d)
                            };
                            for j in 0..d {
                                let dh = g[base + j] * gd[j];
                                let v = inv * (dh - m1 - xhat[base + j] * m2);
                                if assign {
                                    dst[j] = v;
                                } else {
                                    dst[j] += v;
                                }
                            }
                        }
                    });
                };
                store.accumulate_make(
                    &x_cl,
                    || {
                        let mut dx = super::uninit_vec(g.len());
                        run_dx(&mut dx, true);
                        dx
                    },
                    |dx| run_dx(dx, false),
                );
            })
        }))
    }

    pub fn sum_all(&mut self, a: &Tensor) -> Tensor {
        let total: f64 = a.data().iter().sum();
        let a_cl = a.clone();
        self.emit(&[a], vec![], vec![total], move || {
            Box::new(move |g, store| {
                let gv = g[0];
                store.accumulate(&a_cl, |da| {
                    for d in da.iter_mut() {
                        *d += gv;
                    }
                });
            })
        })
    }

    pub fn mean_all(&mut self, a: &Tensor) -> Tensor {
        let n = a.numel() as f64;
        let total: f64 = a.data().iter().sum::<f64>() / n;
        let a_cl = a.clone();
        self.emit(&[a], vec![], vec![total], move || {
            Box::new(move |g, store| {
                let gv = g[0] / n;
                store.accumulate(&a_cl, |da| {
                    for d in da.iter_mut() {
                        *d += gv;
                    }
                });
            })
        })
    }

    /// Mean over axis 1 of a [b, n, c] tensor → [b, 1, c].
    pub fn mean_axis1(&mut self, a: &Tensor) -> Result<Tensor> {
        let (b, n, c) = expect_3d("mean_axis1", a)?;
        let mut data = vec![0.0; b * c];
        let ad = a.data();
        for bi in 0..b {
            for i in 0..n {
                for ch in 0..c {
                    data[bi * c + ch] += ad[(bi * n + i) * c + ch];
                }
            }
        }
        let inv = 1.0 / n as f64;
        for v in data.iter_mut() {
            *v *= inv;
        }
        let a_cl = a.clone();
        Ok(self.emit(&[a], vec![b, 1, c], data, move || {
            Box::new(move |g, store| {
                store.accumulate(&a_cl, |da| {
                    for bi in 0..b {
                        for i in 0..n {
                            for ch in 0..c {
                                da[(bi * n + i) * c + ch] += g[bi * c + ch] * inv;
                            }
                        }
                    }
                });
            })
        }))
    }

    pub fn transpose_last2(&mut self, a: &Tensor) -> Result<Tensor> {
        let shape = a.shape();
        if shape.len() < 2 {
            return Err(Error::Usage(format!(
                "transpose_last2 needs rank >= 2, got {shape:?}"
            )));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batches = a.numel() / (r * c);
        let mut out_shape = shape.to_vec();
        let len = out_shape.len();
        out_shape.swap(len - 2, len - 1);
        let mut data = super::uninit_vec(a.numel());
        let ad = a.data();
        for bi in 0..batches {
            let base = bi * r * c;
            for i in 0..r {
                for j in 0..c {
                    data[base + j * r + i] = ad[base + i * c + j];
                }
            }
        }
        let a_cl = a.clone();
        Ok(self.emit(&[a], out_shape, data, move || {
            Box::new(move |g, store| {
                store.accumulate(&a_cl, |da| {
                    for bi in 0..batches {
                        let base = bi * r * c;
                        for i in 0..r {
                            for j in 0..c {
                                da[base + i * c + j] += g[base + j * r + i];
                            }
                        }
                    }
                });
            })
        }))
    }

    pub fn reshape(&mut self, a: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != a.numel() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: a.shape().to_vec(),
                rhs: shape,
            });
        }
        let a_cl = a.clone();
        Ok(self.emit(&[a], shape, a.data().to_vec(), move || {
            Box::new(move |g, store| {
                store.accumulate(&a_cl, |da| {
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                });
            })
        }))
    }

    /// Columns [start, start+len) of the last dimension.
    pub fn slice_lastdim(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let k = *a.shape().last().unwrap_or(&0);
        if start + len > k {
            return Err(Error::Usage(format!(
                "slice [{start}, {}) out of bounds for last dim {k}",
                start + len
            )));
        }
        let rows = a.numel() / k.max(1);
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let mut data = super::uninit_vec(rows * len);
        let ad = a.data();
        for r in 0..rows {
            data[r * len..(r + 1) * len]
                .copy_from_slice(&ad[r * k + start..r * k + start + len]);
        }
        let a_cl = a.clone();
        Ok(self.emit(&[a], shape, data, move || {
            Box::new(move |g, store| {
                store.accumulate(&a_cl, |da| {
                    for r in 0..rows {
                        for j in 0..len {
                            da[r * k + start + j] += g[r * len + j];
                        }
                    }
                });
            })
        }))
    }

    /// Regroup [b, n, H·dh] into [b·H, n, dh] so every attention head sits in
    /// its own batch slot. Inverse of [`Graph::merge_heads`].
    pub fn split_heads(&mut self, x: &Tensor, heads: usize) -> Result<Tensor> {
        let (b, n, d) = match x.shape() {
            [b, n, d] if heads > 0 && d % heads == 0 => (*b, *n, *d),
            other => {
                return Err(Error::Dimension {
                    op: "split_heads",
                    lhs: other.to_vec(),
                    rhs: vec![heads],
                })
            }
        };
        let dh = d / heads;
        let mut data = super::uninit_vec(x.numel());
        let xd = x.data();
        for bi in 0..b {
            for h in 0..heads {
                for i in 0..n {
                    let src = (bi * n + i) * d + h * dh;
                    let dst = ((bi * heads + h) * n + i) * dh;
                    data[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
        let x_cl = x.clone();
        Ok(self.emit(&[x], vec![b * heads, n, dh], data, move || {
            Box::new(move |g, store| {
                store.accumulate(&x_cl, |dx| {
                    for bi in 0..b {
                        for h in 0..heads {
                            for i in 0..n {
                                let dst = (bi * n + i) * d + h * dh;
                                let src = ((bi * heads + h) * n + i) * dh;
                                for j in 0..dh {
                                    dx[dst + j] += g[src + j];
                                }
                            }
                        }
                    }
                });
            })
        }))
    }

    /// Regroup [b·H, n, dh] back into [b, n, H·dh].
    pub fn merge_heads(&mut self, x: &Tensor, heads: usize) -> Result<Tensor> {
        let (bh, n, dh) = match x.shape() {
            [bh, n, dh] if heads > 0 && bh % heads == 0 => (*bh, *n, *dh),
            other => {
                return Err(Error::Dimension {
                    op: "merge_heads",
                    lhs: other.to_vec(),
                    rhs: vec![heads],
                })
            }
        };
        let b = bh / heads;
        let d = heads * dh;
        let mut data = super::uninit_vec(x.numel());
        let xd = x.data();
        for bi in 0..b {
            for h in 0..heads {
                for i in 0..n {
                    let src = ((bi * heads + h) * n + i) * dh;
                    let dst = (bi * n + i) * d + h * dh;
                    data[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
        let x_cl = x.clone();
        Ok(self.emit(&[x], vec![b, n, d], data, move || {
            Box::new(move |g, store| {
                store.accumulate(&x_cl, |dx| {
                    for bi in 0..b {
                        for h in 0..heads {
                            for i in 0..n {
                                let dst = ((bi * heads + h) * n + i) * dh;
                                let src = (bi * n + i) * d + h * dh;
                                for j in 0..dh {
                                    dx[dst + j] += g[src + j];
                                }
                            }
                        }
                    }
                });
            })
        }))
    }

    /// Concatenate along the last dimension.
    pub fn concat_lastdim(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let lead = &first.shape()[..first.shape().len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            if p.shape().len() != first.shape().len()
                || &p.shape()[..p.shape().len() - 1] != lead
            {
                return Err(Error::Dimension {
                    op: "concat_lastdim",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            widths.push(*p.shape().last().unwrap());
        }
        let total_w: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut shape = first.shape().to_vec();
        *shape.last_mut().unwrap() = total_w;
        let mut data = super::uninit_vec(rows * total_w);
        let mut col = 0usize;
        for (p, w) in parts.iter().zip(&widths) {
            let pd = p.data();
            for r in 0..rows {
                data[r * total_w + col..r * total_w + col + w]
                    .copy_from_slice(&pd[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        Ok(self.emit(parts, shape, data, move || {
            Box::new(move |g, store| {
                let mut col = 0usize;
                for (p, w) in owned.iter().zip(&widths) {
                    let w = *w;
                    store.accumulate(p, |dp| {
                        for r in 0..rows {
                            for j in 0..w {
                                dp[r * w + j] += g[r * total_w + col + j];
                            }
                        }
                    });
                    col += w;
                }
            })
        }))
    }
}

fn expect_3d(op: &'static str, a: &Tensor) -> Result<(usize, usize, usize)> {
    match a.shape() {
        [b, n, c] => Ok((*b, *n, *c)),
        other => Err(Error::Usage(format!("{op} expects [b,n,c], got {other:?}"))),
    }
}

/// Stable argsort by value (ties keep original order); error on NaN.
fn argsort_checked(values: &[f64]) -> Result<Vec<u32>> {
    let mut order: Vec<u32> = (0..values.len() as u32).collect();
    order.sort_by(|&i, &j| values[i as usize].total_cmp(&values[j as usize]));
    if let Some(&last) = order.last() {
        if values[last as usize].is_nan() {
            return Err(Error::Data("NaN in sort-based statistic input".into()));
        }
    }
    Ok(order)
}

/// Lower median: index floor((n-1)/2) of the stable-sorted values; the
/// gradient target is the first original occurrence of the selected value.
fn median_lower_kernel(values: &[f64]) -> Result<(f64, u32)> {
    if values.is_empty() {
        return Err(Error::Data("median of empty input".into()));
    }
    let order = argsort_checked(values)?;
    let sel = order[(values.len() - 1) / 2] as usize;
    let value = values[sel];
    let first = values
        .iter()
        .position(|&v| v == value)
        .unwrap_or(sel) as u32;
    Ok((value, first))
}

/// Linear-interpolation quantile: r = (n-1)q, value = s[i] + f·(s[i+1]-s[i]).
/// Gradient routes to the contributing sorted elements with weights (1-f), f.
fn quantile_kernel(values: &[f64], q: f64) -> Result<(f64, u32, u32, f64)> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile q={q} outside [0, 1]")));
    }
    if values.is_empty() {
        return Err(Error::Data("quantile of empty input".into()));
    }
    let order = argsort_checked(values)?;
    let n = values.len();
    let r = (n - 1) as f64 * q;
    let i = r.floor() as usize;
    let f = r - i as f64;
    let lo = order[i] as usize;
    if f > 0.0 {
        let hi = order[i + 1] as usize;
        let value = values[lo] + f * (values[hi] - values[lo]);
        Ok((value, lo as u32, hi as u32, f))
    } else {
        Ok((values[lo], lo as u32, lo as u32, 0.0))
    }
}

impl Graph {
    /// Per-(sample, channel) lower median over axis 1: [b,n,c] → [b,1,c].
    pub fn median_lower_axis1(&mut self, a: &Tensor) -> Result<Tensor> {
        let (b, n, c) = expect_3d("median_lower_axis1", a)?;
        let ad = a.data();
        let mut data = vec![0.0; b * c];
        let mut grad_idx = vec![0u32; b * c];
        let mut column = vec![0.0; n];
        for bi in 0..b {
            for ch in 0..c {
                for i in 0..n {
                    column[i] = ad[(bi * n + i) * c + ch];
                }
                let (v, idx) = median_lower_kernel(&column)?;
                data[bi * c + ch] = v;
                grad_idx[bi * c + ch] = idx;
            }
        }
        let a_cl = a.clone();
        Ok(self.emit(&[a], vec![b, 1, c], data, move || {
            Box::new(move |g, store| {
                store.accumulate(&a_cl, |da| {
                    for bi in 0..b {
                        for ch in 0..c {
                            let i = grad_idx[bi * c + ch] as usize;
                            da[(bi * n + i) * c + ch] += g[bi * c + ch];
                        }
                    }
                });
            })
        }))
    }

    /// Per-(sample, channel) interpolated quantile over axis 1.
    pub fn quantile_axis1(&mut self, a: &Tensor, q: f64) -> Result<Tensor> {
        let (b, n, c) = expect_3d("quantile_axis1", a)?;
        let ad = a.data();
        let mut data = vec![0.0; b * c];
        let mut lo_idx = vec![0u32; b * c];
        let mut hi_idx = vec![0u32; b * c];
        let mut fracs = vec![0.0f64; b * c];
        let mut column = vec![0.0; n];
        for bi in 0..b {
            for ch in 0..c {
                for i in 0..n {
                    column[i] = ad[(bi * n + i) * c + ch];
                }
                let (v, lo, hi, f) = quantile_kernel(&column, q)?;
                let s = bi * c + ch;
                data[s] = v;
                lo_idx[s] = lo;
                hi_idx[s] = hi;
                fracs[s] = f;
            }
        }
        let a_cl = a.clone();
        Ok(self.emit(&[a], vec![b, 1, c], data, move || {
            Box::new(move |g, store| {
                store.accumulate(&a_cl, |da| {
                    for bi in 0..b {
                        for ch in 0..c {
                            let s = bi * c + ch;
                            let f = fracs[s];
                            let gv = g[s];
                            da[(bi * n + lo_idx[s] as usize) * c + ch] += (1.0 - f) * gv;
                            if f > 0.0 {
                                da[(bi * n + hi_idx[s] as usize) * c + ch] += f * gv;
                            }
                        }
                    }
                });
            })
        }))
    }

    /// Lower median of a vector, as a scalar tensor.
    pub fn median_lower(&mut self, v: &Tensor) -> Result<Tensor> {
        let (value, idx) = median_lower_kernel(v.data())?;
        let v_cl = v.clone();
        Ok(self.emit(&[v], vec![], vec![value], move || {
            Box::new(move |g, store| {
                store.accumulate(&v_cl, |dv| {
                    dv[idx as usize] += g[0];
                });
            })
        }))
    }

    /// Interpolated quantile of a vector, as a scalar tensor.
    pub fn quantile_interp(&mut self, v: &Tensor, q: f64) -> Result<Tensor> {
        let (value, lo, hi, f) = quantile_kernel(v.data(), q)?;
        let v_cl = v.clone();
        Ok(self.emit(&[v], vec![], vec![value], move || {
            Box::new(move |g, store| {
                store.accumulate(&v_cl, |dv| {
                    dv[lo as usize] += (1.0 - f) * g[0];
                    if f > 0.0 {
                        dv[hi as usize] += f * g[0];
                    }
                });
            })
        }))
    }
}
