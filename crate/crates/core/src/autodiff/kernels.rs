//! Raw forward kernels. These do no shape checking beyond debug asserts;
//! callers in `tape` validate shapes first.

/// Geometry of a 3×3, stride-1, zero-padded ("same") convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
}

/// `a [m×k] · b [k×n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

#[inline]
fn shifted(i: usize, k: usize, n: usize) -> Option<usize> {
    // input row feeding output row `i` through kernel tap `k` (0..3)
    let s = i + k;
    if s == 0 || s > n {
        None
    } else {
        Some(s - 1)
    }
}

/// `y[b,o,i,j] = Σ_{c,ki,kj} w[o,c,ki,kj] · x[b,c,i+ki−1,j+kj−1]`.
pub fn conv3x3(x: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let ConvDims {
        batch,
        c_in,
        c_out,
        height: h,
        width: wd,
    } = d;
    let plane = h * wd;
    let mut y = vec![0.0; batch * c_out * plane];
    for b in 0..batch {
        for o in 0..c_out {
            let yo = &mut y[(b * c_out + o) * plane..(b * c_out + o + 1) * plane];
            for c in 0..c_in {
                let xc = &x[(b * c_in + c) * plane..(b * c_in + c + 1) * plane];
                let wk = &w[(o * c_in + c) * 9..(o * c_in + c + 1) * 9];
                for ki in 0..3 {
                    for kj in 0..3 {
                        let wv = wk[ki * 3 + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        for i in 0..h {
                            let Some(si) = shifted(i, ki, h) else { continue };
                            for j in 0..wd {
                                if let Some(sj) = shifted(j, kj, wd) {
                                    yo[i * wd + j] += wv * xc[si * wd + sj];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Adjoint of [`conv3x3`] in `x`: maps `g [B,Co,H,W]` to `[B,Ci,H,W]`.
pub fn conv3x3_input_grad(g: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let ConvDims {
        batch,
        c_in,
        c_out,
        height: h,
        width: wd,
    } = d;
    let plane = h * wd;
    let mut gx = vec![0.0; batch * c_in * plane];
    for b in 0..batch {
        for o in 0..c_out {
            let go = &g[(b * c_out + o) * plane..(b * c_out + o + 1) * plane];
            for c in 0..c_in {
                let gxc = &mut gx[(b * c_in + c) * plane..(b * c_in + c + 1) * plane];
                let wk = &w[(o * c_in + c) * 9..(o * c_in + c + 1) * 9];
                for ki in 0..3 {
                    for kj in 0..3 {
                        let wv = wk[ki * 3 + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        for i in 0..h {
                            let Some(si) = shifted(i, ki, h) else { continue };
                            for j in 0..wd {
                                if let Some(sj) = shifted(j, kj, wd) {
                                    gxc[si * wd + sj] += wv * go[i * wd + j];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Adjoint of [`conv3x3`] in `w`: correlates `x` with `g`, giving `[Co,Ci,3,3]`.
pub fn conv3x3_weight_grad(x: &[f64], g: &[f64], d: ConvDims) -> Vec<f64> {
    let ConvDims {
        batch,
        c_in,
        c_out,
        height: h,
        width: wd,
    } = d;
    let plane = h * wd;
    let mut gw = vec![0.0; c_out * c_in * 9];
    for b in 0..batch {
        for o in 0..c_out {
            let go = &g[(b * c_out + o) * plane..(b * c_out + o + 1) * plane];
            for c in 0..c_in {
                let xc = &x[(b * c_in + c) * plane..(b * c_in + c + 1) * plane];
                let gk = &mut gw[(o * c_in + c) * 9..(o * c_in + c + 1) * 9];
                for ki in 0..3 {
                    for kj in 0..3 {
                        let mut acc = 0.0;
                        for i in 0..h {
                            let Some(si) = shifted(i, ki, h) else { continue };
                            for j in 0..wd {
                                if let Some(sj) = shifted(j, kj, wd) {
                                    acc += go[i * wd + j] * xc[si * wd + sj];
                                }
                            }
                        }
                        gk[ki * 3 + kj] += acc;
                    }
                }
            }
        }
    }
    gw
}

/// 2×2 stride-2 average pooling over `planes` planes of `h × w`; a trailing
/// odd row or column is dropped.
pub fn avg_pool2(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let xp = &x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let s = xp[2 * i * w + 2 * j]
                    + xp[2 * i * w + 2 * j + 1]
                    + xp[(2 * i + 1) * w + 2 * j]
                    + xp[(2 * i + 1) * w + 2 * j + 1];
                y[p * oh * ow + i * ow + j] = 0.25 * s;
            }
        }
    }
    y
}

/// Adjoint of [`avg_pool2`]: spreads each pooled value over its window / 4.
pub fn avg_pool2_adjoint(g: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut x = vec![0.0; planes * h * w];
    for p in 0..planes {
        let xp = &mut x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let v = 0.25 * g[p * oh * ow + i * ow + j];
                xp[2 * i * w + 2 * j] = v;
                xp[2 * i * w + 2 * j + 1] = v;
                xp[(2 * i + 1) * w + 2 * j] = v;
                xp[(2 * i + 1) * w + 2 * j + 1] = v;
            }
        }
    }
    x
}
