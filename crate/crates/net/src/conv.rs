//! 3×3, stride-1 convolution with edge-replicated borders, lowered to GEMM.

use crate::tensor::Tensor;

/// `c = alpha·op(a)·op(b) + beta·c`, with `op(a)` m×k and `op(b)` k×n, all
/// row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], trans_a: bool, b: &[f64], trans_b: bool, beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major blocks whose lengths are checked by the caller.
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

/// Rows are `(channel, ky, kx)`, columns are output pixels.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = (y + ky).saturating_sub(1).min(h - 1);
                    let src = &plane[sy * w..(sy + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = src[0];
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = src[w - 1];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto their source pixels.
fn col2im_add(cols: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = (y + ky).saturating_sub(1).min(h - 1);
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy * w..(sy + 1) * w];
                    match kx {
                        0 => {
                            dst[0] += src[0];
                            for (d, s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                            dst[w - 1] += src[w - 1];
                        }
                    }
                }
            }
        }
    }
}

/// `x: (n, ci, h, w)`, `weight: (co, ci, 3, 3)`, `bias: (1, co, 1, 1)`.
pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let [n, ci, h, w] = x.shape();
    let co = weight.shape()[0];
    let hw = h * w;
    let mut out = vec![0.0; n * co * hw];
    let mut cols = vec![0.0; ci * 9 * hw];
    for s in 0..n {
        im2col(&x.data()[s * ci * hw..(s + 1) * ci * hw], ci, h, w, &mut cols);
        let o = &mut out[s * co * hw..(s + 1) * co * hw];
        for (oc, chunk) in o.chunks_mut(hw).enumerate() {
            chunk.fill(bias.data()[oc]);
        }
        gemm(co, ci * 9, hw, weight.data(), false, &cols, false, 1.0, o);
    }
    Tensor::new([n, co, h, w], out).expect("shape by construction")
}

/// Gradients `(dx, dweight, dbias)` given the output gradient.
pub fn conv2d_backward(x: &Tensor, weight: &Tensor, dout: &[f64], need_dx: bool) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let [n, ci, h, w] = x.shape();
    let co = weight.shape()[0];
    let hw = h * w;
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; co];
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut cols = vec![0.0; ci * 9 * hw];
    let mut dcols = vec![0.0; ci * 9 * hw];
    for s in 0..n {
        let g = &dout[s * co * hw..(s + 1) * co * hw];
        for (oc, chunk) in g.chunks(hw).enumerate() {
            db[oc] += chunk.iter().sum::<f64>();
        }
        im2col(&x.data()[s * ci * hw..(s + 1) * ci * hw], ci, h, w, &mut cols);
        gemm(co, hw, ci * 9, g, false, &cols, true, 1.0, &mut dw);
        if let Some(dx) = dx.as_mut() {
            gemm(ci * 9, co, hw, weight.data(), true, g, false, 0.0, &mut dcols);
            col2im_add(&dcols, ci, h, w, &mut dx[s * ci * hw..(s + 1) * ci * hw]);
        }
    }
    (dx, dw, db)
}
