//! 2-D convolution over [`FeatureGrid`]s, weights laid out `[out, kh, kw, in]`.

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::nn::param::{HasParams, Param};
use crate::nn::spec::{LayerKind, LayerSpec, Padding};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: LayerSpec,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new(name: &str, spec: LayerSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        if spec.kind != LayerKind::Conv2d {
            return Err(Error::Config(format!("{name}: expected conv2d spec")));
        }
        let (kh, kw) = spec.kernel;
        let weight = Param::xavier(
            format!("{name}.weight"),
            vec![spec.out_channels, kh, kw, spec.in_channels],
            spec.trainable,
            seed,
        );
        let bias = Param::zeros(format!("{name}.bias"), vec![spec.out_channels], spec.trainable);
        Ok(Conv2d { spec, weight, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.spec.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.spec.out_channels
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.spec.output_hw(h, w)
    }

    fn pads(&self) -> (isize, isize) {
        match self.spec.padding {
            Padding::Valid => (0, 0),
            Padding::Same => (
                (self.spec.kernel.0 as isize - 1) / 2,
                (self.spec.kernel.1 as isize - 1) / 2,
            ),
        }
    }

    /// Copies the receptive field of output cell `(oy, ox)` into `buf`
    /// (`[kh, kw, in]` order, zeros outside the input).
    fn gather(&self, x: &FeatureGrid, oy: usize, ox: usize, buf: &mut [f64]) {
        let ic = self.spec.in_channels;
        let (kh, kw) = self.spec.kernel;
        let (pt, pl) = self.pads();
        let iy0 = (oy * self.spec.stride.0) as isize - pt;
        let ix0 = (ox * self.spec.stride.1) as isize - pl;
        let row = kw * ic;
        let inside = ix0 >= 0 && ix0 + kw as isize <= x.width as isize;
        for ky in 0..kh {
            let dst = &mut buf[ky * row..(ky + 1) * row];
            let iy = iy0 + ky as isize;
            if iy < 0 || iy >= x.height as isize {
                dst.fill(0.0);
            } else if inside {
                let at = (iy as usize * x.width + ix0 as usize) * ic;
                dst.copy_from_slice(&x.values[at..at + row]);
            } else {
                for kx in 0..kw {
                    let ix = ix0 + kx as isize;
                    let d = &mut dst[kx * ic..(kx + 1) * ic];
                    if ix < 0 || ix >= x.width as isize {
                        d.fill(0.0);
                    } else {
                        d.copy_from_slice(x.cell(iy as usize, ix as usize));
                    }
                }
            }
        }
    }

    /// Adds `buf` (a receptive field) back into `grad` at output cell `(oy, ox)`.
    fn scatter(&self, grad: &mut FeatureGrid, oy: usize, ox: usize, buf: &[f64]) {
        let ic = self.spec.in_channels;
        let (kh, kw) = self.spec.kernel;
        let (pt, pl) = self.pads();
        let iy0 = (oy * self.spec.stride.0) as isize - pt;
        let ix0 = (ox * self.spec.stride.1) as isize - pl;
        for ky in 0..kh {
            let iy = iy0 + ky as isize;
            if iy < 0 || iy >= grad.height as isize {
                continue;
            }
            for kx in 0..kw {
                let ix = ix0 + kx as isize;
                if ix < 0 || ix >= grad.width as isize {
                    continue;
                }
                let at = (iy as usize * grad.width + ix as usize) * ic;
                let src = &buf[(ky * kw + kx) * ic..][..ic];
                for (g, v) in grad.values[at..at + ic].iter_mut().zip(src) {
                    *g += v;
                }
            }
        }
    }

    pub fn forward(&self, x: &FeatureGrid) -> Result<FeatureGrid> {
        let ic = self.spec.in_channels;
        if x.channels != ic {
            return Err(Error::shape("conv2d input channels", ic, x.channels));
        }
        let (oh, ow) = self.output_hw(x.height, x.width)?;
        let oc = self.spec.out_channels;
        let (kh, kw) = self.spec.kernel;
        let taps = kh * kw * ic;
        let w = &self.weight.value;
        let mut buf = vec![0.0; taps];
        let mut out = FeatureGrid::zeros(oh, ow, oc);
        for oy in 0..oh {
            for ox in 0..ow {
                self.gather(x, oy, ox, &mut buf);
                let base = (oy * ow + ox) * oc;
                for (c, o) in out.values[base..base + oc].iter_mut().enumerate() {
                    *o = self.bias.value[c] + dot(&w[c * taps..(c + 1) * taps], &buf);
                }
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients (if trainable) and returns the input
    /// gradient when `want_input_grad` is set.
    pub fn backward(
        &mut self,
        x: &FeatureGrid,
        grad_out: &FeatureGrid,
        want_input_grad: bool,
    ) -> Option<FeatureGrid> {
        let ic = self.spec.in_channels;
        let oc = self.spec.out_channels;
        let (kh, kw) = self.spec.kernel;
        let taps = kh * kw * ic;
        let (oh, ow) = (grad_out.height, grad_out.width);
        let trainable = self.spec.trainable;
        let mut grad_in = want_input_grad.then(|| FeatureGrid::zeros(x.height, x.width, ic));
        if !trainable && grad_in.is_none() {
            return None;
        }
        let mut buf = vec![0.0; taps];
        let mut dbuf = vec![0.0; taps];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.cell(oy, ox);
                if g.iter().all(|v| *v == 0.0) {
                    continue;
                }
                if trainable {
                    for (b, gv) in self.bias.grad.iter_mut().zip(g) {
                        *b += gv;
                    }
                    self.gather(x, oy, ox, &mut buf);
                }
                dbuf.fill(0.0);
                for (c, &go) in g.iter().enumerate().take(oc) {
                    if go == 0.0 {
                        continue;
                    }
                    let range = c * taps..(c + 1) * taps;
                    if trainable {
                        for (gwv, xv) in self.weight.grad[range.clone()].iter_mut().zip(&buf) {
                            *gwv += go * xv;
                        }
                    }
                    if grad_in.is_some() {
                        for (d, wv) in dbuf.iter_mut().zip(&self.weight.value[range]) {
                            *d += go * wv;
                        }
                    }
                }
                if let Some(gi) = grad_in.as_mut() {
                    self.scatter(gi, oy, ox, &dbuf);
                }
            }
        }
        grad_in
    }
}

impl HasParams for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    for (x, y) in ra.iter().zip(rb) {
        acc[0] += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}
