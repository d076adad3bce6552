//! Raw convolution kernels: im2col lowering followed by a dense matrix product.

use super::value::Dims;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Dims,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.input.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// 1×1, stride 1, unpadded: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn output(&self) -> Dims {
        Dims::new(self.input.n, self.c_out, self.oh, self.ow)
    }
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c` where the row/column
/// strides select transposition.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut().take(m * n) {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the callers size `a` as m*k, `b` as k*n, and `c` as m*n with the
    // strides passed here, so every index the kernel touches is in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &ConvGeometry, x: &[f64], col: &mut [f64]) {
    let (h, w) = (g.input.h as isize, g.input.w as isize);
    let p = g.positions();
    for ci in 0..g.input.c {
        let plane = &x[ci * g.input.plane()..(ci + 1) * g.input.plane()];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oi * g.ow..(oi + 1) * g.ow];
                    if ii < 0 || ii >= h {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[ii as usize * g.input.w..(ii as usize + 1) * g.input.w];
                    for (oj, o) in out_row.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *o = if jj < 0 || jj >= w { 0.0 } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeometry, col: &[f64], dx: &mut [f64]) {
    let (h, w) = (g.input.h as isize, g.input.w as isize);
    let p = g.positions();
    for ci in 0..g.input.c {
        let plane = &mut dx[ci * g.input.plane()..(ci + 1) * g.input.plane()];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= h {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.input.w..(ii as usize + 1) * g.input.w];
                    for oj in 0..g.ow {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < w {
                            dst[jj as usize] += src[oi * g.ow + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `weight` is (c_out, c_in, kh, kw), `bias` has c_out entries.
pub fn conv2d_forward(g: &ConvGeometry, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let k = g.patch();
    let p = g.positions();
    let in_per = g.input.c * g.input.plane();
    let out_per = g.c_out * p;
    let mut out = vec![0.0; g.input.n * out_per];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
    for n in 0..g.input.n {
        let xn = &x[n * in_per..(n + 1) * in_per];
        let on = &mut out[n * out_per..(n + 1) * out_per];
        for (co, row) in on.chunks_mut(p).enumerate() {
            row.fill(bias[co]);
        }
        let cols: &[f64] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut col);
            &col
        };
        gemm(g.c_out, k, p, weight, (k as isize, 1), cols, (p as isize, 1), 1.0, on);
    }
    out
}

pub struct ConvGrads {
    pub input: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Adjoint of [`conv2d_forward`] given the upstream gradient `dout`.
pub fn conv2d_backward(g: &ConvGeometry, x: &[f64], weight: &[f64], dout: &[f64]) -> ConvGrads {
    let k = g.patch();
    let p = g.positions();
    let in_per = g.input.c * g.input.plane();
    let out_per = g.c_out * p;
    let mut dx = vec![0.0; g.input.n * in_per];
    let mut dw = vec![0.0; g.c_out * k];
    let mut db = vec![0.0; g.c_out];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
    let mut dcol = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
    for n in 0..g.input.n {
        let xn = &x[n * in_per..(n + 1) * in_per];
        let dn = &dout[n * out_per..(n + 1) * out_per];
        for (co, row) in dn.chunks(p).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
        let cols: &[f64] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut col);
            &col
        };
        // dW += dout (c_out x p) * cols^T (p x k)
        gemm(g.c_out, p, k, dn, (p as isize, 1), cols, (1, p as isize), 1.0, &mut dw);
        // dcols = W^T (k x c_out) * dout (c_out x p)
        let dxn = &mut dx[n * in_per..(n + 1) * in_per];
        if g.is_pointwise() {
            gemm(k, g.c_out, p, weight, (1, k as isize), dn, (p as isize, 1), 0.0, dxn);
        } else {
            gemm(k, g.c_out, p, weight, (1, k as isize), dn, (p as isize, 1), 0.0, &mut dcol);
            col2im(g, &dcol, dxn);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}
