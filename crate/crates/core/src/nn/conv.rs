//! Circular convolutions via im2col and dense matrix products.

use crate::error::{Error, Result};
use crate::nn::Act;
use crate::par;
use crate::tensor::Tensor;

/// Source index of every kernel tap at every spatial position:
/// `src[tap * sites + p]` is the site read by tap `tap` at output `p`.
pub(crate) struct Gather {
    pub taps: usize,
    pub sites: usize,
    src: Vec<u32>,
}

impl Gather {
    pub fn new(extents: &[usize], k: usize) -> Gather {
        let d = extents.len();
        let sites: usize = extents.iter().product();
        let taps = k.pow(d as u32);
        let r = (k / 2) as isize;
        let mut src = Vec::with_capacity(taps * sites);
        for tap in 0..taps {
            let mut off = vec![0isize; d];
            let mut rem = tap;
            for a in (0..d).rev() {
                off[a] = (rem % k) as isize - r;
                rem /= k;
            }
            for p in 0..sites {
                let mut prem = p;
                let mut coords = vec![0usize; d];
                for a in (0..d).rev() {
                    coords[a] = prem % extents[a];
                    prem /= extents[a];
                }
                let mut s = 0usize;
                for a in 0..d {
                    let l = extents[a] as isize;
                    s = s * extents[a] + (coords[a] as isize + off[a]).rem_euclid(l) as usize;
                }
                src.push(s as u32);
            }
        }
        Gather { taps, sites, src }
    }
}

struct SendPtr(*mut f64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl SendPtr {
    fn get(&self) -> *mut f64 {
        self.0
    }
}

/// `C = A·B + beta·C` for row-major strided operands; `A` is `m×k`, `B` is
/// `k×n`. Columns of `C` are split across workers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    const MIN_COLS: usize = 128;
    let parts = par::workers().min(n / MIN_COLS).max(1);
    let width = n.div_ceil(parts);
    let cp = SendPtr(c.as_mut_ptr());
    let run = |i: usize| {
        let j0 = i * width;
        let cols = width.min(n - j0);
        // SAFETY: each part writes a disjoint column range of C, and every
        // offset stays inside the slices whose extents the caller fixed.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                cols,
                1.0,
                a.as_ptr(),
                rsa as isize,
                csa as isize,
                b.as_ptr().add(j0 * csb),
                rsb as isize,
                csb as isize,
                beta,
                cp.get().add(j0 * csc),
                rsc as isize,
                csc as isize,
            );
        }
    };
    if parts == 1 {
        run(0);
    } else {
        par::map_indexed(parts, run);
    }
}

/// `[cin·taps, batch·sites]` patch matrix.
fn im2col(x: &Act, g: &Gather) -> Vec<f64> {
    let (cin, bs, s) = (x.c, x.n(), g.sites);
    let mut col = vec![0.0; cin * g.taps * bs];
    for ci in 0..cin {
        let xc = x.channel(ci);
        for tap in 0..g.taps {
            let row = &mut col[(ci * g.taps + tap) * bs..(ci * g.taps + tap + 1) * bs];
            let src = &g.src[tap * s..(tap + 1) * s];
            for b in 0..x.b {
                let xb = &xc[b * s..(b + 1) * s];
                for (o, &q) in row[b * s..(b + 1) * s].iter_mut().zip(src) {
                    *o = xb[q as usize];
                }
            }
        }
    }
    col
}

pub(crate) fn conv_fwd(x: &Act, w: &[f64], bias: Option<&[f64]>, cout: usize, g: &Gather) -> Act {
    let bs = x.n();
    let kdim = x.c * g.taps;
    let mut out = Act::zeros(cout, x.b, x.s);
    if g.taps == 1 {
        gemm(cout, kdim, bs, w, (kdim, 1), &x.data, (bs, 1), 0.0, &mut out.data, (bs, 1));
    } else {
        let col = im2col(x, g);
        gemm(cout, kdim, bs, w, (kdim, 1), &col, (bs, 1), 0.0, &mut out.data, (bs, 1));
    }
    if let Some(bias) = bias {
        for (co, &b) in bias.iter().enumerate() {
            out.channel_mut(co).iter_mut().for_each(|v| *v += b);
        }
    }
    out
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub(crate) fn conv_bwd(
    x: &Act,
    w: &[f64],
    dout: &Act,
    g: &Gather,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) -> Act {
    let bs = x.n();
    let cout = dout.c;
    let kdim = x.c * g.taps;
    if let Some(db) = db {
        for (co, d) in db.iter_mut().enumerate() {
            *d += dout.channel(co).iter().sum::<f64>();
        }
    }
    let col;
    let colref: &[f64] = if g.taps == 1 {
        &x.data
    } else {
        col = im2col(x, g);
        &col
    };
    // dW += dout · colᵀ
    gemm(cout, bs, kdim, &dout.data, (bs, 1), colref, (1, bs), 1.0, dw, (kdim, 1));
    // dcol = Wᵀ · dout
    let mut dcol = vec![0.0; kdim * bs];
    gemm(kdim, cout, bs, w, (1, kdim), &dout.data, (bs, 1), 0.0, &mut dcol, (bs, 1));
    if g.taps == 1 {
        return Act {
            c: x.c,
            b: x.b,
            s: x.s,
            data: dcol,
        };
    }
    let s = g.sites;
    let mut din = Act::zeros(x.c, x.b, x.s);
    for ci in 0..x.c {
        let dc = din.channel_mut(ci);
        for tap in 0..g.taps {
            let row = &dcol[(ci * g.taps + tap) * bs..(ci * g.taps + tap + 1) * bs];
            let src = &g.src[tap * s..(tap + 1) * s];
            for b in 0..x.b {
                let db = &mut dc[b * s..(b + 1) * s];
                for (&v, &q) in row[b * s..(b + 1) * s].iter().zip(src) {
                    db[q as usize] += v;
                }
            }
        }
    }
    din
}

fn conv_shapes(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    let d = input.rank().checked_sub(2).filter(|&d| d >= 1).ok_or_else(|| {
        Error::ShapeMismatch(format!("input {:?} needs [batch, channels, extents…]", input.dims()))
    })?;
    let wd = weight.dims();
    if wd.len() != d + 2 || wd[1] != input.dims()[1] {
        return Err(Error::ShapeMismatch(format!(
            "weight {wd:?} does not fit input {:?}",
            input.dims()
        )));
    }
    let k = wd[2];
    if k.is_multiple_of(2) || wd[2..].iter().any(|&x| x != k) {
        return Err(Error::ShapeMismatch(format!("kernel {wd:?} must be odd and cubic")));
    }
    Ok((d, wd[0], k))
}

/// Circular cross-correlation of `input` (`[batch, c_in, extents…]`) with
/// `weight` (`[c_out, c_in, k, …]`).
pub fn conv_forward(input: &Tensor, weight: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let (_, cout, k) = conv_shapes(input, weight)?;
    if bias.is_some_and(|b| b.len() != cout) {
        return Err(Error::ShapeMismatch("bias length differs from output channels".into()));
    }
    let ext = &input.dims()[2..];
    let x = Act::from_tensor(input);
    let out = conv_fwd(&x, weight.data(), bias, cout, &Gather::new(ext, k));
    Ok(out.to_tensor(ext))
}

/// Gradients of a circular convolution: `(d input, d weight, d bias)`.
pub fn conv_backward(input: &Tensor, weight: &Tensor, dout: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (_, cout, k) = conv_shapes(input, weight)?;
    let ext = &input.dims()[2..];
    let mut want = vec![input.dims()[0], cout];
    want.extend(ext);
    if dout.dims() != want.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {:?}, expected {want:?}",
            dout.dims()
        )));
    }
    let x = Act::from_tensor(input);
    let dy = Act::from_tensor(dout);
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; cout];
    let din = conv_bwd(&x, weight.data(), &dy, &Gather::new(ext, k), &mut dw, Some(&mut db));
    Ok((din.to_tensor(ext), Tensor::new(weight.dims().to_vec(), dw)?, db))
}
