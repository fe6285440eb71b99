//! Minimal f64 neural-network layers with explicit forward/backward passes.
//!
//! The conversion models are small enough that a hand-written CPU stack is
//! the right tool: it keeps runs bit-reproducible, makes the
//! finite-difference gradient checks direct, and avoids dragging a tensor
//! framework into the build. Layers cache what their backward pass needs, so
//! the calling order is strictly forward-then-backward per sample.

use rand::Rng;

use crate::rng::{standard_normal, SeededRng};

/// Dense feature map with channel-major layout `(C, X, Y, Z)`, z fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Feat {
    pub ch: usize,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub data: Vec<f64>,
}

impl Feat {
    pub fn zeros(ch: usize, nx: usize, ny: usize, nz: usize) -> Self {
        Self {
            ch,
            nx,
            ny,
            nz,
            data: vec![0.0; ch * nx * ny * nz],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        ((c * self.nx + x) * self.ny + y) * self.nz + z
    }

    pub fn spatial_len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.spatial_len();
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// A learnable tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(n: usize) -> Self {
        Self {
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn randn(n: usize, std: f64, rng: &mut SeededRng) -> Self {
        Self {
            value: (0..n).map(|_| std * standard_normal(rng)).collect(),
            grad: vec![0.0; n],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Visitor over all parameters of a module, in a fixed order.
pub trait HasParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }
}

// ---------------------------------------------------------------------------
// 3-D convolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Weights laid out `(out, in, kx, ky, kz)`.
    pub weight: Param,
    pub bias: Param,
    input: Option<Feat>,
}

impl Conv3d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let fan_in = (in_ch * kernel * kernel * kernel) as f64;
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight: Param::randn(
                out_ch * in_ch * kernel * kernel * kernel,
                (2.0 / fan_in).sqrt(),
                rng,
            ),
            bias: Param::zeros(out_ch),
            input: None,
        }
    }

    fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    #[inline]
    fn widx(&self, o: usize, i: usize, kx: usize, ky: usize, kz: usize) -> usize {
        (((o * self.in_ch + i) * self.kernel + kx) * self.kernel + ky) * self.kernel + kz
    }

    pub fn forward(&mut self, x: &Feat) -> Feat {
        assert_eq!(x.ch, self.in_ch, "conv3d: channel mismatch");
        let (ox, oy, oz) = (
            self.out_size(x.nx),
            self.out_size(x.ny),
            self.out_size(x.nz),
        );
        let mut out = Feat::zeros(self.out_ch, ox, oy, oz);
        let k = self.kernel;
        let s = self.stride;
        let p = self.pad as i64;
        for o in 0..self.out_ch {
            let b = self.bias.value[o];
            out.channel_mut(o).iter_mut().for_each(|v| *v = b);
            for i in 0..self.in_ch {
                for kx in 0..k {
                    for ky in 0..k {
                        for kz in 0..k {
                            let w = self.weight.value[self.widx(o, i, kx, ky, kz)];
                            if w == 0.0 {
                                continue;
                            }
                            for vx in 0..ox {
                                let ix = (vx * s) as i64 + kx as i64 - p;
                                if ix < 0 || ix >= x.nx as i64 {
                                    continue;
                                }
                                for vy in 0..oy {
                                    let iy = (vy * s) as i64 + ky as i64 - p;
                                    if iy < 0 || iy >= x.ny as i64 {
                                        continue;
                                    }
                                    let obase = out.idx(o, vx, vy, 0);
                                    let ibase = x.idx(i, ix as usize, iy as usize, 0);
                                    for vz in 0..oz {
                                        let iz = (vz * s) as i64 + kz as i64 - p;
                                        if iz < 0 || iz >= x.nz as i64 {
                                            continue;
                                        }
                                        out.data[obase + vz] +=
                                            w * x.data[ibase + iz as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, dy: &Feat) -> Feat {
        let x = self.input.take().expect("conv3d backward before forward");
        let mut dx = Feat::zeros(x.ch, x.nx, x.ny, x.nz);
        let k = self.kernel;
        let s = self.stride;
        let p = self.pad as i64;
        for o in 0..self.out_ch {
            let dyc = dy.channel(o);
            self.bias.grad[o] += dyc.iter().sum::<f64>();
            for i in 0..self.in_ch {
                for kx in 0..k {
                    for ky in 0..k {
                        for kz in 0..k {
                            let wi = self.widx(o, i, kx, ky, kz);
                            let w = self.weight.value[wi];
                            let mut dw = 0.0;
                            for vx in 0..dy.nx {
                                let ix = (vx * s) as i64 + kx as i64 - p;
                                if ix < 0 || ix >= x.nx as i64 {
                                    continue;
                                }
                                for vy in 0..dy.ny {
                                    let iy = (vy * s) as i64 + ky as i64 - p;
                                    if iy < 0 || iy >= x.ny as i64 {
                                        continue;
                                    }
                                    let obase = dy.idx(o, vx, vy, 0);
                                    let ibase = x.idx(i, ix as usize, iy as usize, 0);
                                    for vz in 0..dy.nz {
                                        let iz = (vz * s) as i64 + kz as i64 - p;
                                        if iz < 0 || iz >= x.nz as i64 {
                                            continue;
                                        }
                                        let g = dy.data[obase + vz];
                                        dw += g * x.data[ibase + iz as usize];
                                        dx.data[ibase + iz as usize] += g * w;
                                    }
                                }
                            }
                            self.weight.grad[wi] += dw;
                        }
                    }
                }
            }
        }
        dx
    }
}

impl HasParams for Conv3d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// Instance normalization (per channel over spatial dims)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNorm3d {
    pub channels: usize,
    pub eps: f64,
    pub gamma: Param,
    pub beta: Param,
    cache: Option<(Feat, Vec<f64>)>, // normalized x-hat, inv_std per channel
}

impl InstanceNorm3d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            eps: 1e-5,
            gamma: Param {
                value: vec![1.0; channels],
                grad: vec![0.0; channels],
            },
            beta: Param::zeros(channels),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Feat) -> Feat {
        assert_eq!(x.ch, self.channels);
        let n = x.spatial_len() as f64;
        let mut out = x.clone();
        let mut xhat = Feat::zeros(x.ch, x.nx, x.ny, x.nz);
        let mut inv_stds = vec![0.0; x.ch];
        for c in 0..x.ch {
            let xc = x.channel(c);
            let mean = xc.iter().sum::<f64>() / n;
            let var = xc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv_std = 1.0 / (var + self.eps).sqrt();
            inv_stds[c] = inv_std;
            let g = self.gamma.value[c];
            let b = self.beta.value[c];
            let xh = xhat.channel_mut(c);
            for (j, (&v, o)) in xc.iter().zip(out.channel_mut(c)).enumerate() {
                let h = (v - mean) * inv_std;
                xh[j] = h;
                *o = g * h + b;
            }
        }
        self.cache = Some((xhat, inv_stds));
        out
    }

    pub fn backward(&mut self, dy: &Feat) -> Feat {
        let (xhat, inv_stds) = self.cache.take().expect("instance norm backward before forward");
        let n = dy.spatial_len() as f64;
        let mut dx = Feat::zeros(dy.ch, dy.nx, dy.ny, dy.nz);
        for c in 0..dy.ch {
            let dyc = dy.channel(c);
            let xh = xhat.channel(c);
            let g = self.gamma.value[c];
            let sum_dy: f64 = dyc.iter().sum();
            let sum_dy_xh: f64 = dyc.iter().zip(xh).map(|(a, b)| a * b).sum();
            self.beta.grad[c] += sum_dy;
            self.gamma.grad[c] += sum_dy_xh;
            let k = g * inv_stds[c] / n;
            for (j, d) in dx.channel_mut(c).iter_mut().enumerate() {
                *d = k * (n * dyc[j] - sum_dy - xh[j] * sum_dy_xh);
            }
        }
        dx
    }
}

impl HasParams for InstanceNorm3d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub kind: Activation,
    input: Option<Feat>,
}

impl Act {
    pub fn new(kind: Activation) -> Self {
        Self { kind, input: None }
    }

    pub fn forward(&mut self, x: &Feat) -> Feat {
        let mut out = x.clone();
        match self.kind {
            Activation::LeakyRelu(a) => out
                .data
                .iter_mut()
                .for_each(|v| *v = if *v >= 0.0 { *v } else { a * *v }),
            Activation::Relu => out.data.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => out.data.iter_mut().for_each(|v| *v = v.tanh()),
        }
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, dy: &Feat) -> Feat {
        let x = self.input.take().expect("activation backward before forward");
        let mut dx = dy.clone();
        match self.kind {
            Activation::LeakyRelu(a) => {
                for (d, &v) in dx.data.iter_mut().zip(&x.data) {
                    if v < 0.0 {
                        *d *= a;
                    }
                }
            }
            Activation::Relu => {
                for (d, &v) in dx.data.iter_mut().zip(&x.data) {
                    if v < 0.0 {
                        *d = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (d, &v) in dx.data.iter_mut().zip(&x.data) {
                    let t = v.tanh();
                    *d *= 1.0 - t * t;
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling to an explicit target shape
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpsampleNearest {
    in_shape: Option<(usize, usize, usize)>,
}

impl UpsampleNearest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Feat, target: (usize, usize, usize)) -> Feat {
        let (tx, ty, tz) = target;
        let mut out = Feat::zeros(x.ch, tx, ty, tz);
        for c in 0..x.ch {
            for ox in 0..tx {
                let ix = ox * x.nx / tx;
                for oy in 0..ty {
                    let iy = oy * x.ny / ty;
                    for oz in 0..tz {
                        let iz = oz * x.nz / tz;
                        let oi = out.idx(c, ox, oy, oz);
                        out.data[oi] = x.data[x.idx(c, ix, iy, iz)];
                    }
                }
            }
        }
        self.in_shape = Some((x.nx, x.ny, x.nz));
        out
    }

    pub fn backward(&mut self, dy: &Feat) -> Feat {
        let (nx, ny, nz) = self.in_shape.take().expect("upsample backward before forward");
        let mut dx = Feat::zeros(dy.ch, nx, ny, nz);
        for c in 0..dy.ch {
            for ox in 0..dy.nx {
                let ix = ox * nx / dy.nx;
                for oy in 0..dy.ny {
                    let iy = oy * ny / dy.ny;
                    for oz in 0..dy.nz {
                        let iz = oz * nz / dy.nz;
                        let di = dx.idx(c, ix, iy, iz);
                        dx.data[di] += dy.data[dy.idx(c, ox, oy, oz)];
                    }
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Dense layer and 1-D sequence layers for the temporal encoder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Param, // (out, in)
    pub bias: Param,
    input: Option<Vec<f64>>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: Param::randn(out_dim * in_dim, (1.0 / in_dim as f64).sqrt(), rng),
            bias: Param::zeros(out_dim),
            input: None,
        }
    }

    /// All-zero weights and biases (used for identity-initialized FiLM heads).
    pub fn zeroed(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: Param::zeros(out_dim * in_dim),
            bias: Param::zeros(out_dim),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim);
        let mut out = self.bias.value.clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weight.value[o * self.in_dim..(o + 1) * self.in_dim];
            *out_v += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        self.input = Some(x.to_vec());
        out
    }

    pub fn backward(&mut self, dy: &[f64]) -> Vec<f64> {
        let x = self.input.take().expect("linear backward before forward");
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            self.bias.grad[o] += g;
            let row = &self.weight.value[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut self.weight.grad[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

impl HasParams for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Sequence tensor `(channels, time)`, time fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq {
    pub ch: usize,
    pub t: usize,
    pub data: Vec<f64>,
}

impl Seq {
    pub fn zeros(ch: usize, t: usize) -> Self {
        Self {
            ch,
            t,
            data: vec![0.0; ch * t],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, t: usize) -> usize {
        c * self.t + t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub pad: usize,
    pub weight: Param, // (out, in, k)
    pub bias: Param,
    input: Option<Seq>,
}

impl Conv1d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, pad: usize, rng: &mut SeededRng) -> Self {
        let fan_in = (in_ch * kernel) as f64;
        Self {
            in_ch,
            out_ch,
            kernel,
            pad,
            weight: Param::randn(out_ch * in_ch * kernel, (2.0 / fan_in).sqrt(), rng),
            bias: Param::zeros(out_ch),
            input: None,
        }
    }

    fn out_len(&self, t: usize) -> usize {
        t + 2 * self.pad - self.kernel + 1
    }

    pub fn forward(&mut self, x: &Seq) -> Seq {
        assert_eq!(x.ch, self.in_ch);
        let ot = self.out_len(x.t);
        let mut out = Seq::zeros(self.out_ch, ot);
        for o in 0..self.out_ch {
            for t in 0..ot {
                let mut acc = self.bias.value[o];
                for i in 0..self.in_ch {
                    for k in 0..self.kernel {
                        let src = t as i64 + k as i64 - self.pad as i64;
                        if src >= 0 && src < x.t as i64 {
                            acc += self.weight.value[(o * self.in_ch + i) * self.kernel + k]
                                * x.data[x.idx(i, src as usize)];
                        }
                    }
                }
                let oi = out.idx(o, t);
                out.data[oi] = acc;
            }
        }
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, dy: &Seq) -> Seq {
        let x = self.input.take().expect("conv1d backward before forward");
        let mut dx = Seq::zeros(x.ch, x.t);
        for o in 0..self.out_ch {
            for t in 0..dy.t {
                let g = dy.data[dy.idx(o, t)];
                self.bias.grad[o] += g;
                for i in 0..self.in_ch {
                    for k in 0..self.kernel {
                        let src = t as i64 + k as i64 - self.pad as i64;
                        if src >= 0 && src < x.t as i64 {
                            let wi = (o * self.in_ch + i) * self.kernel + k;
                            self.weight.grad[wi] += g * x.data[x.idx(i, src as usize)];
                            let di = dx.idx(i, src as usize);
                            dx.data[di] += g * self.weight.value[wi];
                        }
                    }
                }
            }
        }
        dx
    }
}

impl HasParams for Conv1d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// LSTM over a (time, features) sequence
// ---------------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
struct LstmStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub input_size: usize,
    pub hidden: usize,
    /// Input weights `(4H, input)`, gate order `i, f, g, o`.
    pub w_x: Param,
    /// Recurrent weights `(4H, H)`.
    pub w_h: Param,
    pub bias: Param, // 4H
    steps: Vec<LstmStep>,
}

impl Lstm {
    pub fn new(input_size: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        Self {
            input_size,
            hidden,
            w_x: Param::randn(4 * hidden * input_size, (1.0 / input_size as f64).sqrt(), rng),
            w_h: Param::randn(4 * hidden * hidden, (1.0 / hidden as f64).sqrt(), rng),
            bias: Param::zeros(4 * hidden),
            steps: Vec::new(),
        }
    }

    /// Run over `seq` (rows are time steps); returns hidden states `(H, T)`.
    pub fn forward(&mut self, seq: &ndarray::Array2<f64>) -> Seq {
        let t_len = seq.nrows();
        assert_eq!(seq.ncols(), self.input_size);
        let h = self.hidden;
        self.steps.clear();
        let mut hidden_seq = Seq::zeros(h, t_len);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for t in 0..t_len {
            let x: Vec<f64> = seq.row(t).to_vec();
            let mut z = self.bias.value.clone();
            for gate in 0..4 * h {
                let wx = &self.w_x.value[gate * self.input_size..(gate + 1) * self.input_size];
                let wh = &self.w_h.value[gate * h..(gate + 1) * h];
                z[gate] += wx.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
                    + wh.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
            }
            let i: Vec<f64> = (0..h).map(|j| sigmoid(z[j])).collect();
            let f: Vec<f64> = (0..h).map(|j| sigmoid(z[h + j])).collect();
            let g: Vec<f64> = (0..h).map(|j| z[2 * h + j].tanh()).collect();
            let o: Vec<f64> = (0..h).map(|j| sigmoid(z[3 * h + j])).collect();
            let c: Vec<f64> = (0..h).map(|j| f[j] * c_prev[j] + i[j] * g[j]).collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h_new: Vec<f64> = (0..h).map(|j| o[j] * tanh_c[j]).collect();
            for j in 0..h {
                let hi = hidden_seq.idx(j, t);
                hidden_seq.data[hi] = h_new[j];
            }
            self.steps.push(LstmStep {
                x,
                h_prev: h_prev.clone(),
                c_prev: c_prev.clone(),
                i,
                f,
                g,
                o,
                tanh_c,
            });
            h_prev = h_new;
            c_prev = c;
        }
        hidden_seq
    }

    /// Backpropagate through time; `dh_seq` is the gradient on the hidden
    /// state sequence. Returns the gradient on the input sequence.
    pub fn backward(&mut self, dh_seq: &Seq) -> ndarray::Array2<f64> {
        let h = self.hidden;
        let t_len = dh_seq.t;
        let mut dx_seq = ndarray::Array2::zeros((t_len, self.input_size));
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for t in (0..t_len).rev() {
            let step = &self.steps[t];
            let mut dz = vec![0.0; 4 * h];
            for j in 0..h {
                let dh = dh_seq.data[dh_seq.idx(j, t)] + dh_next[j];
                let do_ = dh * step.tanh_c[j];
                let dc = dc_next[j] + dh * step.o[j] * (1.0 - step.tanh_c[j] * step.tanh_c[j]);
                let di = dc * step.g[j];
                let df = dc * step.c_prev[j];
                let dg = dc * step.i[j];
                dc_next[j] = dc * step.f[j];
                dz[j] = di * step.i[j] * (1.0 - step.i[j]);
                dz[h + j] = df * step.f[j] * (1.0 - step.f[j]);
                dz[2 * h + j] = dg * (1.0 - step.g[j] * step.g[j]);
                dz[3 * h + j] = do_ * step.o[j] * (1.0 - step.o[j]);
            }
            let mut dh_prev = vec![0.0; h];
            for gate in 0..4 * h {
                let gz = dz[gate];
                if gz == 0.0 {
                    continue;
                }
                self.bias.grad[gate] += gz;
                let wx_row = gate * self.input_size;
                for i in 0..self.input_size {
                    self.w_x.grad[wx_row + i] += gz * step.x[i];
                    dx_seq[[t, i]] += gz * self.w_x.value[wx_row + i];
                }
                let wh_row = gate * h;
                for j in 0..h {
                    self.w_h.grad[wh_row + j] += gz * step.h_prev[j];
                    dh_prev[j] += gz * self.w_h.value[wh_row + j];
                }
            }
            dh_next = dh_prev;
        }
        self.steps.clear();
        dx_seq
    }
}

impl HasParams for Lstm {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w_x);
        f(&mut self.w_h);
        f(&mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update to every parameter of `module`; moment buffers are
    /// keyed by visit order, which is fixed per module type.
    pub fn step(&mut self, module: &mut dyn HasParams) {
        self.step += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.lr;
        let eps = self.eps;
        let mut idx = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        module.visit_params(&mut |p| {
            if idx == m.len() {
                m.push(vec![0.0; p.value.len()]);
                v.push(vec![0.0; p.value.len()]);
            }
            let mi = &mut m[idx];
            let vi = &mut v[idx];
            for j in 0..p.value.len() {
                let g = p.grad[j];
                mi[j] = b1 * mi[j] + (1.0 - b1) * g;
                vi[j] = b2 * vi[j] + (1.0 - b2) * g * g;
                let mh = mi[j] / bc1;
                let vh = vi[j] / bc2;
                p.value[j] -= lr * mh / (vh.sqrt() + eps);
            }
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn rand_feat(ch: usize, nx: usize, ny: usize, nz: usize, rng: &mut SeededRng) -> Feat {
        let mut f = Feat::zeros(ch, nx, ny, nz);
        f.data.iter_mut().for_each(|v| *v = standard_normal(rng));
        f
    }

    /// Central-difference check of dLoss/dparam for an arbitrary module.
    /// The loss is 0.5 * sum(out^2) so dLoss/dout = out.
    fn grad_check_conv3d(stride: usize, pad: usize) {
        let mut rng = rng_from(11, stride as u64);
        let mut conv = Conv3d::new(2, 3, 3, stride, pad, &mut rng);
        let x = rand_feat(2, 5, 4, 6, &mut rng);

        let y = conv.forward(&x);
        let dy = y.clone();
        conv.zero_grads();
        conv.forward(&x);
        let dx = conv.backward(&dy);

        // Parameter gradients.
        let loss = |conv: &mut Conv3d, x: &Feat| -> f64 {
            let y = conv.forward(x);
            0.5 * y.data.iter().map(|v| v * v).sum::<f64>()
        };
        let h = 1e-6;
        let mut rng2 = rng_from(13, 0);
        for _ in 0..10 {
            let j = (rng2.gen::<u64>() as usize) % conv.weight.value.len();
            let orig = conv.weight.value[j];
            conv.weight.value[j] = orig + h;
            let lp = loss(&mut conv, &x);
            conv.weight.value[j] = orig - h;
            let lm = loss(&mut conv, &x);
            conv.weight.value[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = conv.weight.grad[j];
            assert!(
                (fd - an).abs() <= 1e-5 * fd.abs().max(1e-6),
                "conv3d weight grad: fd={fd} an={an}"
            );
        }
        // Input gradient at a few positions.
        let mut x2 = x.clone();
        for j in [0usize, 7, 23] {
            let orig = x2.data[j];
            x2.data[j] = orig + h;
            let lp = loss(&mut conv, &x2);
            x2.data[j] = orig - h;
            let lm = loss(&mut conv, &x2);
            x2.data[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - dx.data[j]).abs() <= 1e-5 * fd.abs().max(1e-6),
                "conv3d input grad: fd={fd} an={}",
                dx.data[j]
            );
        }
    }

    #[test]
    fn conv3d_gradients_match_finite_differences() {
        grad_check_conv3d(1, 1);
        grad_check_conv3d(2, 1);
    }

    #[test]
    fn instance_norm_gradients_match_finite_differences() {
        let mut rng = rng_from(21, 0);
        let mut norm = InstanceNorm3d::new(3);
        let x = rand_feat(3, 4, 3, 2, &mut rng);
        let loss = |norm: &mut InstanceNorm3d, x: &Feat| -> f64 {
            let y = norm.forward(x);
            // Weighted loss so gradients are not symmetric.
            y.data.iter().enumerate().map(|(i, v)| (i as f64 % 5.0) * v * v).sum::<f64>()
        };
        norm.zero_grads();
        let y = norm.forward(&x);
        let dy = Feat {
            data: y
                .data
                .iter()
                .enumerate()
                .map(|(i, v)| 2.0 * (i as f64 % 5.0) * v)
                .collect(),
            ..y.clone()
        };
        norm.forward(&x);
        let dx = norm.backward(&dy);
        let h = 1e-6;
        for j in [0usize, 5, 17] {
            let mut x2 = x.clone();
            x2.data[j] += h;
            let lp = loss(&mut norm, &x2);
            x2.data[j] -= 2.0 * h;
            let lm = loss(&mut norm, &x2);
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - dx.data[j]).abs() <= 1e-4 * fd.abs().max(1e-5),
                "IN input grad: fd={fd} an={}",
                dx.data[j]
            );
        }
        for j in 0..3 {
            let orig = norm.gamma.value[j];
            norm.gamma.value[j] = orig + h;
            let lp = loss(&mut norm, &x);
            norm.gamma.value[j] = orig - h;
            let lm = loss(&mut norm, &x);
            norm.gamma.value[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - norm.gamma.grad[j]).abs() <= 1e-5 * fd.abs().max(1e-6),
                "IN gamma grad: fd={fd} an={}",
                norm.gamma.grad[j]
            );
        }
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = rng_from(31, 0);
        let mut lstm = Lstm::new(3, 4, &mut rng);
        let t_len = 6;
        let mut seq = ndarray::Array2::zeros((t_len, 3));
        seq.iter_mut().for_each(|v| *v = standard_normal(&mut rng));

        let loss = |lstm: &mut Lstm, seq: &ndarray::Array2<f64>| -> f64 {
            let h = lstm.forward(seq);
            0.5 * h.data.iter().map(|v| v * v).sum::<f64>()
        };
        lstm.zero_grads();
        let hseq = lstm.forward(&seq);
        let dh = hseq.clone();
        lstm.forward(&seq);
        let dx = lstm.backward(&dh);

        let h = 1e-6;
        let mut rng2 = rng_from(5, 0);
        for _ in 0..8 {
            let j = (rng2.gen::<u64>() as usize) % lstm.w_h.value.len();
            let orig = lstm.w_h.value[j];
            lstm.w_h.value[j] = orig + h;
            let lp = loss(&mut lstm, &seq);
            lstm.w_h.value[j] = orig - h;
            let lm = loss(&mut lstm, &seq);
            lstm.w_h.value[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - lstm.w_h.grad[j]).abs() <= 1e-5 * fd.abs().max(1e-6),
                "lstm w_h grad: fd={fd} an={}",
                lstm.w_h.grad[j]
            );
        }
        for j in [0usize, 7, 11] {
            let mut s2 = seq.clone();
            let flat = s2.as_slice_mut().unwrap();
            let orig = flat[j];
            flat[j] = orig + h;
            let lp = loss(&mut lstm, &s2);
            s2.as_slice_mut().unwrap()[j] = orig - h;
            let lm = loss(&mut lstm, &s2);
            let fd = (lp - lm) / (2.0 * h);
            let an = dx.as_slice().unwrap()[j];
            assert!(
                (fd - an).abs() <= 1e-5 * fd.abs().max(1e-6),
                "lstm input grad: fd={fd} an={an}"
            );
        }
    }

    #[test]
    fn conv1d_and_linear_gradients_match_finite_differences() {
        let mut rng = rng_from(41, 0);
        let mut conv = Conv1d::new(2, 3, 3, 1, &mut rng);
        let mut seq = Seq::zeros(2, 7);
        seq.data.iter_mut().for_each(|v| *v = standard_normal(&mut rng));
        conv.zero_grads();
        let y = conv.forward(&seq);
        let dy = y.clone();
        conv.forward(&seq);
        conv.backward(&dy);
        let h = 1e-6;
        for j in [0usize, 5, 11] {
            let orig = conv.weight.value[j];
            let mut eval = |w: f64, conv: &mut Conv1d| -> f64 {
                conv.weight.value[j] = w;
                let y = conv.forward(&seq);
                0.5 * y.data.iter().map(|v| v * v).sum::<f64>()
            };
            let lp = eval(orig + h, &mut conv);
            let lm = eval(orig - h, &mut conv);
            conv.weight.value[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - conv.weight.grad[j]).abs() <= 1e-5 * fd.abs().max(1e-6),
                "conv1d grad: fd={fd} an={}",
                conv.weight.grad[j]
            );
        }

        let mut lin = Linear::new(4, 3, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| standard_normal(&mut rng)).collect();
        lin.zero_grads();
        let y = lin.forward(&x);
        let dx = lin.backward(&y);
        for j in 0..4 {
            let mut x2 = x.clone();
            x2[j] += h;
            let yp = lin.forward(&x2);
            let lp = 0.5 * yp.iter().map(|v| v * v).sum::<f64>();
            x2[j] -= 2.0 * h;
            let ym = lin.forward(&x2);
            let lm = 0.5 * ym.iter().map(|v| v * v).sum::<f64>();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - dx[j]).abs() <= 1e-6 * fd.abs().max(1e-6));
        }
    }

    #[test]
    fn upsample_round_trip_shapes_and_gradient_flow() {
        let mut rng = rng_from(51, 0);
        let x = rand_feat(2, 2, 3, 1, &mut rng);
        let mut up = UpsampleNearest::new();
        let y = up.forward(&x, (4, 6, 2));
        assert_eq!((y.nx, y.ny, y.nz), (4, 6, 2));
        // Every input voxel is replicated 2x2x2, so backward of ones = 8.
        let dy = Feat {
            data: vec![1.0; y.data.len()],
            ..y
        };
        let dx = up.backward(&dy);
        assert!(dx.data.iter().all(|&v| v == 8.0));
    }

    #[test]
    fn adam_reduces_a_quadratic() {
        struct Quad {
            p: Param,
        }
        impl HasParams for Quad {
            fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
                f(&mut self.p);
            }
        }
        let mut q = Quad {
            p: Param {
                value: vec![3.0, -2.0],
                grad: vec![0.0, 0.0],
            },
        };
        let mut adam = Adam::new(0.05, 0.9, 0.999);
        for _ in 0..600 {
            q.p.grad = q.p.value.clone(); // d/dx of 0.5 x^2
            adam.step(&mut q);
        }
        assert!(q.p.value.iter().all(|v| v.abs() < 1e-2), "{:?}", q.p.value);
    }
}
