//! Strided 3D convolution and its transpose on cubic single-sample tensors.
//!
//! Tensors are channel-major `[c][z][y][x]` with x fastest. Both layer kinds
//! pair a low-resolution grid (conv output / transposed input) with a
//! high-resolution grid through one list of `(low, high)` positions per
//! kernel tap. Weights are `[low channel][high channel][tap]` in both cases,
//! so three gather/scatter kernels cover every pass.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Transposed,
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_size: usize,
    pub out_size: usize,
    /// Per tap, the `(low, high)` position pairs that fall inside the grid.
    pairs: Vec<Vec<(u32, u32)>>,
}

impl ConvLayer {
    pub fn conv(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        in_size: usize,
    ) -> Result<Self> {
        let span = in_size + 2 * pad;
        if span < kernel || (span - kernel) % stride != 0 {
            return Err(Error::Architecture(format!(
                "conv kernel {kernel} stride {stride} pad {pad} does not tile input {in_size}"
            )));
        }
        let out_size = (span - kernel) / stride + 1;
        Ok(Self::build(LayerKind::Conv, in_ch, out_ch, kernel, stride, pad, in_size, out_size))
    }

    pub fn transposed(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        in_size: usize,
    ) -> Result<Self> {
        let full = (in_size - 1) * stride + kernel;
        if in_size == 0 || full < 2 * pad + 1 {
            return Err(Error::Architecture(format!(
                "transposed kernel {kernel} stride {stride} pad {pad} on input {in_size}"
            )));
        }
        let out_size = full - 2 * pad;
        Ok(Self::build(LayerKind::Transposed, in_ch, out_ch, kernel, stride, pad, in_size, out_size))
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        kind: LayerKind,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        in_size: usize,
        out_size: usize,
    ) -> Self {
        let (low, high) = match kind {
            LayerKind::Conv => (out_size, in_size),
            LayerKind::Transposed => (in_size, out_size),
        };
        let mut pairs = vec![Vec::new(); kernel * kernel * kernel];
        for kz in 0..kernel {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let tap = kx + kernel * (ky + kernel * kz);
                    for pz in 0..low {
                        for py in 0..low {
                            for px in 0..low {
                                let h = |p: usize, k: usize| (p * stride + k).checked_sub(pad);
                                let (Some(hx), Some(hy), Some(hz)) = (h(px, kx), h(py, ky), h(pz, kz))
                                else {
                                    continue;
                                };
                                if hx < high && hy < high && hz < high {
                                    let p = px + low * (py + low * pz);
                                    pairs[tap].push((p as u32, (hx + high * (hy + high * hz)) as u32));
                                }
                            }
                        }
                    }
                }
            }
        }
        ConvLayer { kind, in_ch, out_ch, kernel, stride, pad, in_size, out_size, pairs }
    }

    pub fn taps(&self) -> usize {
        self.kernel * self.kernel * self.kernel
    }

    pub fn in_len(&self) -> usize {
        self.in_ch * self.in_size.pow(3)
    }

    pub fn out_len(&self) -> usize {
        self.out_ch * self.out_size.pow(3)
    }

    pub fn weight_len(&self) -> usize {
        self.in_ch * self.out_ch * self.taps()
    }

    pub fn bias_len(&self) -> usize {
        self.out_ch
    }

    /// (low channels, low positions, high channels, high positions)
    fn dims(&self) -> (usize, usize, usize, usize) {
        let (i, o) = (self.in_size.pow(3), self.out_size.pow(3));
        match self.kind {
            LayerKind::Conv => (self.out_ch, o, self.in_ch, i),
            LayerKind::Transposed => (self.in_ch, i, self.out_ch, o),
        }
    }

    /// `low[l][p] += Σ w[l][h][t] · high[h][q]` over pairs `(p, q)` of tap `t`.
    fn gather(&self, w: &[f64], high: &[f64], low: &mut [f64]) {
        let (lc, ln, hc, hn) = self.dims();
        let taps = self.taps();
        for l in 0..lc {
            let dst = &mut low[l * ln..(l + 1) * ln];
            for h in 0..hc {
                let src = &high[h * hn..(h + 1) * hn];
                let wr = &w[(l * hc + h) * taps..(l * hc + h + 1) * taps];
                for (&wv, pairs) in wr.iter().zip(&self.pairs) {
                    for &(p, q) in pairs {
                        dst[p as usize] += wv * src[q as usize];
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::gather`]: `high[h][q] += Σ w[l][h][t] · low[l][p]`.
    fn scatter(&self, w: &[f64], low: &[f64], high: &mut [f64]) {
        let (lc, ln, hc, hn) = self.dims();
        let taps = self.taps();
        for l in 0..lc {
            let src = &low[l * ln..(l + 1) * ln];
            for h in 0..hc {
                let dst = &mut high[h * hn..(h + 1) * hn];
                let wr = &w[(l * hc + h) * taps..(l * hc + h + 1) * taps];
                for (&wv, pairs) in wr.iter().zip(&self.pairs) {
                    for &(p, q) in pairs {
                        dst[q as usize] += wv * src[p as usize];
                    }
                }
            }
        }
    }

    /// `dw[l][h][t] += Σ low[l][p] · high[h][q]`.
    fn weight_grad(&self, low: &[f64], high: &[f64], dw: &mut [f64]) {
        let (lc, ln, hc, hn) = self.dims();
        let taps = self.taps();
        for l in 0..lc {
            let a = &low[l * ln..(l + 1) * ln];
            for h in 0..hc {
                let b = &high[h * hn..(h + 1) * hn];
                let gr = &mut dw[(l * hc + h) * taps..(l * hc + h + 1) * taps];
                for (g, pairs) in gr.iter_mut().zip(&self.pairs) {
                    *g += pairs.iter().map(|&(p, q)| a[p as usize] * b[q as usize]).sum::<f64>();
                }
            }
        }
    }

    pub fn forward(&self, w: &[f64], b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_len() {
            return Err(Error::Shape { expected: self.in_len(), actual: x.len() });
        }
        debug_assert_eq!(w.len(), self.weight_len());
        let n = self.out_size.pow(3);
        let mut y: Vec<f64> = b.iter().flat_map(|&v| std::iter::repeat(v).take(n)).collect();
        match self.kind {
            LayerKind::Conv => self.gather(w, x, &mut y),
            LayerKind::Transposed => self.scatter(w, x, &mut y),
        }
        Ok(y)
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&self, w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(dy.len(), self.out_len());
        let out_n = self.out_size.pow(3);
        for o in 0..self.out_ch {
            db[o] += dy[o * out_n..(o + 1) * out_n].iter().sum::<f64>();
        }
        let mut dx = vec![0.0; self.in_len()];
        match self.kind {
            LayerKind::Conv => {
                self.weight_grad(dy, x, dw);
                self.scatter(w, dy, &mut dx);
            }
            LayerKind::Transposed => {
                self.weight_grad(x, dy, dw);
                self.gather(w, dy, &mut dx);
            }
        }
        dx
    }

    /// Bound on the operator 2-norm of the linear part: every input element
    /// feeds at most `ceil(kernel/stride)³` outputs per tap group, so the
    /// norm is at most `sqrt(that) · ‖W‖_F`.
    pub fn operator_norm_bound(&self, w: &[f64]) -> f64 {
        let overlap = self.kernel.div_ceil(self.stride).pow(3) as f64;
        let fro = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        overlap.sqrt() * fro
    }
}
