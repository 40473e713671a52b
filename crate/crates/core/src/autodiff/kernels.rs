//! Raw loops behind the spatial ops. Layouts are `[C, H, W]` for feature
//! maps and `[C_out, C_in, kH, kW]` for kernels.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    /// Output columns `ox` whose input column `ox + kx - pad_w` is in range.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize, usize) {
        let lo = self.pad_w.saturating_sub(kx);
        let hi = (self.w + self.pad_w).saturating_sub(kx).min(self.ow);
        let ix0 = lo + kx - self.pad_w;
        (lo, hi.max(lo), ix0)
    }

    #[inline]
    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy + ky).checked_sub(self.pad_h)?;
        (iy < self.h).then_some(iy)
    }
}

pub(crate) fn conv2d_forward(x: &[f64], k: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let mut out = vec![0.0; g.c_out * g.oh * g.ow];
    for co in 0..g.c_out {
        let out_c = &mut out[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
        for ci in 0..g.c_in {
            let x_c = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = k[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (lo, hi, ix0) = g.col_range(kx);
                    let n = hi - lo;
                    for oy in 0..g.oh {
                        let Some(iy) = g.input_row(oy, ky) else { continue };
                        let dst = &mut out_c[oy * g.ow + lo..oy * g.ow + lo + n];
                        let src = &x_c[iy * g.w + ix0..iy * g.w + ix0 + n];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_grad_input(dy: &[f64], k: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let mut dx = vec![0.0; g.c_in * g.h * g.w];
    for co in 0..g.c_out {
        let dy_c = &dy[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
        for ci in 0..g.c_in {
            let dx_c = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = k[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (lo, hi, ix0) = g.col_range(kx);
                    let n = hi - lo;
                    for oy in 0..g.oh {
                        let Some(iy) = g.input_row(oy, ky) else { continue };
                        let src = &dy_c[oy * g.ow + lo..oy * g.ow + lo + n];
                        let dst = &mut dx_c[iy * g.w + ix0..iy * g.w + ix0 + n];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn conv2d_grad_kernel(dy: &[f64], x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let mut dk = vec![0.0; g.c_out * g.c_in * g.kh * g.kw];
    for co in 0..g.c_out {
        let dy_c = &dy[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
        for ci in 0..g.c_in {
            let x_c = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let (lo, hi, ix0) = g.col_range(kx);
                    let n = hi - lo;
                    let mut acc = 0.0;
                    for oy in 0..g.oh {
                        let Some(iy) = g.input_row(oy, ky) else { continue };
                        let a = &dy_c[oy * g.ow + lo..oy * g.ow + lo + n];
                        let b = &x_c[iy * g.w + ix0..iy * g.w + ix0 + n];
                        acc += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
                    }
                    dk[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    }
    dk
}

/// 2×2 max pooling; returns values and the flat input index of each max.
/// Ties go to the first cell in row-major order within the window.
pub(crate) fn maxpool2(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let src = &x[ch * h * w + (oy / 2) * w..ch * h * w + (oy / 2) * w + w];
            let dst = &mut out[ch * oh * ow + oy * ow..ch * oh * ow + (oy + 1) * ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_grad(dy: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                dx[ch * h * w + (oy / 2) * w + ox / 2] += dy[ch * oh * ow + oy * ow + ox];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry(c_in: usize, h: usize, w: usize, c_out: usize, k: usize, same: bool) -> ConvGeometry {
        let pad = if same { k / 2 } else { 0 };
        ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            kh: k,
            kw: k,
            pad_h: pad,
            pad_w: pad,
            oh: h + 2 * pad - k + 1,
            ow: w + 2 * pad - k + 1,
        }
    }

    fn naive(x: &[f64], k: &[f64], g: &ConvGeometry) -> Vec<f64> {
        let mut out = vec![0.0; g.c_out * g.oh * g.ow];
        for co in 0..g.c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = oy as isize + ky as isize - g.pad_h as isize;
                                let ix = ox as isize + kx as isize - g.pad_w as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += k[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx]
                                    * x[(ci * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    out[(co * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_naive_loops() {
        for (same, k) in [(true, 3), (false, 3), (true, 5), (true, 1), (false, 5)] {
            let g = geometry(2, 7, 6, 3, k, same);
            let x: Vec<f64> = (0..2 * 42).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
            let kv: Vec<f64> = (0..3 * 2 * k * k).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
            assert_eq!(conv2d_forward(&x, &kv, &g), naive(&x, &kv, &g));
        }
    }

    #[test]
    fn pool_tie_breaks_first() {
        let (v, a) = maxpool2(&[2.0, 2.0, 2.0, 2.0], 1, 2, 2);
        assert_eq!(v, vec![2.0]);
        assert_eq!(a, vec![0]);
        let (v, a) = maxpool2(&[1.0, 2.0, 3.0, 4.0], 1, 2, 2);
        assert_eq!((v, a), (vec![4.0], vec![3]));
    }
}
