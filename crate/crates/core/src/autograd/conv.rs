//! 2-D convolution via im2col and GEMM.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], wshape: &[usize], stride: usize, pad: usize) -> Option<Self> {
        let (cin, h, w) = (x[1], x[2], x[3]);
        let (cout, wcin, k, k2) = (wshape[0], wshape[1], wshape[2], wshape[3]);
        if wcin != cin || k != k2 || stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(ConvGeom {
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// 1×1 convolutions with unit stride read the input directly.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let p = g.pixels();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let p = g.pixels();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let n = x.shape()[0];
    let (rows, p) = (g.rows(), g.pixels());
    let mut out = Tensor::zeros(&[n, g.cout, g.oh, g.ow]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * p] };
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;
    for s in 0..n {
        let xs = &x.data()[s * in_per..(s + 1) * in_per];
        let cols_ref: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(g, xs, &mut cols);
            &cols
        };
        let os = &mut out.data_mut()[s * out_per..(s + 1) * out_per];
        if let Some(b) = b {
            for (o, &bias) in os.chunks_mut(p).zip(b.data()) {
                o.fill(bias);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.cout,
            rows,
            p,
            T::one(),
            w.data(),
            rows as isize,
            1,
            cols_ref,
            p as isize,
            1,
            beta,
            os,
            p as isize,
            1,
        );
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_dx, need_dw, need_db) = need;
    let n = x.shape()[0];
    let (rows, p) = (g.rows(), g.pixels());
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(w.shape()));
    let mut db = need_db.then(|| Tensor::zeros(&[g.cout]));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * p] };
    let mut dcols = if need_dx && !g.is_pointwise() { vec![T::zero(); rows * p] } else { Vec::new() };
    for s in 0..n {
        let xs = &x.data()[s * in_per..(s + 1) * in_per];
        let gs = &gout.data()[s * out_per..(s + 1) * out_per];
        if let Some(db) = db.as_mut() {
            for (d, row) in db.data_mut().iter_mut().zip(gs.chunks(p)) {
                *d += row.iter().copied().sum();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let cols_ref: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(g, xs, &mut cols);
                &cols
            };
            // dW[cout, rows] += gout[cout, p] · cols[rows, p]^T
            T::gemm(
                g.cout,
                p,
                rows,
                T::one(),
                gs,
                p as isize,
                1,
                cols_ref,
                1,
                p as isize,
                T::one(),
                dw.data_mut(),
                rows as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx.data_mut()[s * in_per..(s + 1) * in_per];
            // dcols[rows, p] = W[cout, rows]^T · gout[cout, p]
            if g.is_pointwise() {
                T::gemm(
                    rows,
                    g.cout,
                    p,
                    T::one(),
                    w.data(),
                    1,
                    rows as isize,
                    gs,
                    p as isize,
                    1,
                    T::zero(),
                    dxs,
                    p as isize,
                    1,
                );
            } else {
                T::gemm(
                    rows,
                    g.cout,
                    p,
                    T::one(),
                    w.data(),
                    1,
                    rows as isize,
                    gs,
                    p as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    p as isize,
                    1,
                );
                col2im(g, &dcols, dxs);
            }
        }
    }
    ConvGrads { dx, dw, db }
}
