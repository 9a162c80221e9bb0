//! Layers with explicit forward caches and backward passes. Activations are
//! flat `N x C x S` buffers (`S = H * W`, or 1 for vectors).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;

/// A named trainable tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self { name: name.into(), shape, value, grad }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![v; n])
    }

    pub fn normal(name: impl Into<String>, shape: Vec<usize>, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        Self::new(name, shape, (0..n).map(|_| T::lit(dist.sample(rng))).collect())
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero padding 1, no bias.

#[derive(Debug, Clone)]
pub struct Conv3x3<T> {
    pub in_c: usize,
    pub out_c: usize,
    /// `out_c x (in_c * 9)`.
    pub weight: Param<T>,
    input: Vec<T>,
    dims: (usize, usize, usize),
    cols: Vec<T>,
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    let z = T::zero();
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(z);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = z;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = z;
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Conv3x3<T> {
    pub fn new(name: &str, in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / (in_c * 9) as f64).sqrt();
        Self {
            in_c,
            out_c,
            weight: Param::normal(format!("{name}.weight"), vec![out_c, in_c, 3, 3], std, rng),
            input: Vec::new(),
            dims: (0, 0, 0),
            cols: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &[T], n: usize, h: usize, w: usize) -> Vec<T> {
        let (ic, oc, hw) = (self.in_c, self.out_c, h * w);
        let k = ic * 9;
        self.input.clear();
        self.input.extend_from_slice(x);
        self.dims = (n, h, w);
        self.cols.resize(k * hw, T::zero());
        let mut out = vec![T::zero(); n * oc * hw];
        for s in 0..n {
            im2col(&x[s * ic * hw..(s + 1) * ic * hw], ic, h, w, &mut self.cols);
            let o = &mut out[s * oc * hw..(s + 1) * oc * hw];
            for co in 0..oc {
                let dst = &mut o[co * hw..(co + 1) * hw];
                let wrow = &self.weight.value[co * k..(co + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    if wv == T::zero() {
                        continue;
                    }
                    let src = &self.cols[kk * hw..(kk + 1) * hw];
                    dst.iter_mut().zip(src).for_each(|(d, &c)| *d += wv * c);
                }
            }
        }
        out
    }

    /// Accumulates weight gradients; returns the input gradient if asked.
    pub fn backward(&mut self, dout: &[T], need_dx: bool) -> Option<Vec<T>> {
        let (n, h, w) = self.dims;
        let (ic, oc, hw) = (self.in_c, self.out_c, h * w);
        let k = ic * 9;
        let mut dx = if need_dx { vec![T::zero(); n * ic * hw] } else { Vec::new() };
        let mut dcols = if need_dx { vec![T::zero(); k * hw] } else { Vec::new() };
        for s in 0..n {
            im2col(&self.input[s * ic * hw..(s + 1) * ic * hw], ic, h, w, &mut self.cols);
            let d = &dout[s * oc * hw..(s + 1) * oc * hw];
            for co in 0..oc {
                let drow = &d[co * hw..(co + 1) * hw];
                let g = &mut self.weight.grad[co * k..(co + 1) * k];
                for (kk, gv) in g.iter_mut().enumerate() {
                    let src = &self.cols[kk * hw..(kk + 1) * hw];
                    *gv += src.iter().zip(drow).fold(T::zero(), |a, (&c, &dv)| a + c * dv);
                }
            }
            if need_dx {
                dcols.iter_mut().for_each(|v| *v = T::zero());
                for co in 0..oc {
                    let drow = &d[co * hw..(co + 1) * hw];
                    let wrow = &self.weight.value[co * k..(co + 1) * k];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        let dst = &mut dcols[kk * hw..(kk + 1) * hw];
                        dst.iter_mut().zip(drow).for_each(|(dc, &dv)| *dc += wv * dv);
                    }
                }
                col2im(&dcols, ic, h, w, &mut dx[s * ic * hw..(s + 1) * ic * hw]);
            }
        }
        need_dx.then_some(dx)
    }

    pub fn clear_cache(&mut self) {
        self.input = Vec::new();
        self.cols = Vec::new();
    }
}

// ---------------------------------------------------------------------------
// Batch normalisation over N and the spatial extent, per channel.

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    dims: (usize, usize),
    batch_stats: bool,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], T::one()),
            beta: Param::filled(format!("{name}.beta"), vec![channels], T::zero()),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            xhat: Vec::new(),
            inv_std: Vec::new(),
            dims: (0, 0),
            batch_stats: false,
        }
    }

    /// `batch_stats`: normalise with this batch's statistics and update the
    /// running averages; otherwise use the running averages.
    pub fn forward(&mut self, x: &[T], n: usize, s: usize, batch_stats: bool) -> Vec<T> {
        let c = self.channels;
        self.dims = (n, s);
        self.batch_stats = batch_stats;
        let eps = T::lit(BN_EPS);
        let mut out = vec![T::zero(); x.len()];
        self.xhat.resize(x.len(), T::zero());
        self.inv_std.resize(c, T::zero());
        let m = n * s;
        for ch in 0..c {
            let (mean, var) = if batch_stats {
                let mut sum = T::zero();
                for i in 0..n {
                    sum += x[(i * c + ch) * s..(i * c + ch + 1) * s].iter().copied().sum::<T>();
                }
                let mean = sum / T::from_usize_lossy(m);
                let mut sq = T::zero();
                for i in 0..n {
                    sq += x[(i * c + ch) * s..(i * c + ch + 1) * s].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
                }
                let var = sq / T::from_usize_lossy(m);
                let mom = T::lit(BN_MOMENTUM);
                let unbiased = if m > 1 { sq / T::from_usize_lossy(m - 1) } else { var };
                self.running_mean[ch] = (T::one() - mom) * self.running_mean[ch] + mom * mean;
                self.running_var[ch] = (T::one() - mom) * self.running_var[ch] + mom * unbiased;
                (mean, var)
            } else {
                (self.running_mean[ch], self.running_var[ch])
            };
            let inv = T::one() / (var + eps).sqrt();
            self.inv_std[ch] = inv;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for i in 0..n {
                let r = (i * c + ch) * s..(i * c + ch + 1) * s;
                for ((o, xh), &v) in out[r.clone()].iter_mut().zip(&mut self.xhat[r.clone()]).zip(&x[r]) {
                    *xh = (v - mean) * inv;
                    *o = g * *xh + b;
                }
            }
        }
        out
    }

    pub fn backward(&mut self, dout: &[T]) -> Vec<T> {
        let (n, s) = self.dims;
        let c = self.channels;
        let m = T::from_usize_lossy(n * s);
        let mut dx = vec![T::zero(); dout.len()];
        for ch in 0..c {
            let (mut sum_d, mut sum_dx) = (T::zero(), T::zero());
            for i in 0..n {
                let r = (i * c + ch) * s..(i * c + ch + 1) * s;
                for (&d, &xh) in dout[r.clone()].iter().zip(&self.xhat[r]) {
                    sum_d += d;
                    sum_dx += d * xh;
                }
            }
            self.gamma.grad[ch] += sum_dx;
            self.beta.grad[ch] += sum_d;
            let g = self.gamma.value[ch];
            let inv = self.inv_std[ch];
            for i in 0..n {
                let r = (i * c + ch) * s..(i * c + ch + 1) * s;
                for ((o, &d), &xh) in dx[r.clone()].iter_mut().zip(&dout[r.clone()]).zip(&self.xhat[r]) {
                    *o = if self.batch_stats {
                        g * inv * (d - (sum_d + xh * sum_dx) / m)
                    } else {
                        g * inv * d
                    };
                }
            }
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.xhat = Vec::new();
    }
}

// ---------------------------------------------------------------------------

/// In-place ReLU; returns the active mask.
pub fn relu_forward<T: Scalar>(x: &mut [T], mask: &mut Vec<bool>) {
    mask.clear();
    mask.extend(x.iter().map(|&v| v > T::zero()));
    for (v, &m) in x.iter_mut().zip(mask.iter()) {
        if !m {
            *v = T::zero();
        }
    }
}

pub fn relu_backward<T: Scalar>(d: &mut [T], mask: &[bool]) {
    for (v, &m) in d.iter_mut().zip(mask) {
        if !m {
            *v = T::zero();
        }
    }
}

/// 2x2 max-pool, stride 2; odd trailing rows/columns are dropped. The first
/// maximum in scan order wins ties and receives the gradient.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Vec<u32>,
    in_dims: (usize, usize, usize, usize),
}

impl MaxPool2 {
    pub fn out_size(h: usize, w: usize) -> (usize, usize) {
        (h / 2, w / 2)
    }

    pub fn forward<T: Scalar>(&mut self, x: &[T], n: usize, c: usize, h: usize, w: usize) -> Vec<T> {
        let (oh, ow) = Self::out_size(h, w);
        self.in_dims = (n, c, h, w);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        self.argmax.clear();
        for p in 0..n * c {
            let plane = &x[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = 2 * oy * w + 2 * ox;
                    let mut best = base;
                    for off in [1, w, w + 1] {
                        if plane[base + off] > plane[best] {
                            best = base + off;
                        }
                    }
                    out.push(plane[best]);
                    self.argmax.push(best as u32);
                }
            }
        }
        out
    }

    pub fn backward<T: Scalar>(&self, dout: &[T]) -> Vec<T> {
        let (n, c, h, w) = self.in_dims;
        let (oh, ow) = Self::out_size(h, w);
        let mut dx = vec![T::zero(); n * c * h * w];
        for p in 0..n * c {
            for k in 0..oh * ow {
                let i = p * oh * ow + k;
                dx[p * h * w + self.argmax[i] as usize] += dout[i];
            }
        }
        dx
    }

    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }
}

// ---------------------------------------------------------------------------

/// `y = W x + b`, `W` is `out x in`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Vec<T>,
    n: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            inputs,
            outputs,
            weight: Param::normal(format!("{name}.weight"), vec![outputs, inputs], std, rng),
            bias: Param::filled(format!("{name}.bias"), vec![outputs], T::zero()),
            input: Vec::new(),
            n: 0,
        }
    }

    pub fn forward(&mut self, x: &[T], n: usize) -> Vec<T> {
        let (i_n, o_n) = (self.inputs, self.outputs);
        self.input.clear();
        self.input.extend_from_slice(x);
        self.n = n;
        let mut out = Vec::with_capacity(n * o_n);
        for s in 0..n {
            let xs = &x[s * i_n..(s + 1) * i_n];
            for o in 0..o_n {
                let wr = &self.weight.value[o * i_n..(o + 1) * i_n];
                out.push(self.bias.value[o] + wr.iter().zip(xs).fold(T::zero(), |a, (&w, &v)| a + w * v));
            }
        }
        out
    }

    pub fn backward(&mut self, dout: &[T]) -> Vec<T> {
        let (i_n, o_n) = (self.inputs, self.outputs);
        let mut dx = vec![T::zero(); self.n * i_n];
        for s in 0..self.n {
            let xs = &self.input[s * i_n..(s + 1) * i_n];
            let dxs = &mut dx[s * i_n..(s + 1) * i_n];
            for o in 0..o_n {
                let d = dout[s * o_n + o];
                self.bias.grad[o] += d;
                let gw = &mut self.weight.grad[o * i_n..(o + 1) * i_n];
                gw.iter_mut().zip(xs).for_each(|(g, &v)| *g += d * v);
                let wr = &self.weight.value[o * i_n..(o + 1) * i_n];
                dxs.iter_mut().zip(wr).for_each(|(g, &w)| *g += d * w);
            }
        }
        dx
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone, Default)]
pub struct Dropout {
    pub rate: f64,
    mask: Vec<bool>,
    active: bool,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        Self { rate, mask: Vec::new(), active: false }
    }

    pub fn forward<T: Scalar>(&mut self, x: &mut [T], train: bool, rng: &mut ChaCha8Rng) {
        self.active = train && self.rate > 0.0;
        if !self.active {
            return;
        }
        let keep = T::lit(1.0 / (1.0 - self.rate));
        self.mask.clear();
        for v in x.iter_mut() {
            let k = rng.random::<f64>() >= self.rate;
            self.mask.push(k);
            *v = if k { *v * keep } else { T::zero() };
        }
    }

    pub fn backward<T: Scalar>(&self, d: &mut [T]) {
        if !self.active {
            return;
        }
        let keep = T::lit(1.0 / (1.0 - self.rate));
        for (v, &k) in d.iter_mut().zip(&self.mask) {
            *v = if k { *v * keep } else { T::zero() };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, h, w) = (2, 3, 4);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..c * 9 * h * w).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, c, h, w, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, c, h, w, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn maxpool_first_index_wins_ties() {
        let mut p = MaxPool2::default();
        let x = [1.0f64, 1.0, 1.0, 1.0];
        assert_eq!(p.forward(&x, 1, 1, 2, 2), vec![1.0]);
        assert_eq!(p.backward(&[2.0]), vec![2.0, 0.0, 0.0, 0.0]);
    }
}
