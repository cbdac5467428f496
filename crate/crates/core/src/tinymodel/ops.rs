//! Layer primitives on zero-padded channel volumes.
//!
//! Each channel of an activation is stored as a `(d0+2) x (d1+2) x (d2+2)` block, x fastest,
//! with a one-voxel halo that is kept at zero. A 3x3x3 convolution then reduces to one
//! contiguous axpy per (output channel, input channel, tap) over the flat range that
//! excludes the outermost planes; the halo positions it touches are re-zeroed afterwards.

use num_traits::Float;
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub dims: [usize; 3],
}

impl Shape {
    pub fn new(dims: [usize; 3]) -> Self {
        Shape { dims }
    }

    pub fn padded(&self) -> [usize; 3] {
        [self.dims[0] + 2, self.dims[1] + 2, self.dims[2] + 2]
    }

    pub fn len(&self) -> usize {
        let p = self.padded();
        p[0] * p[1] * p[2]
    }

    pub fn interior_len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    fn strides(&self) -> (usize, usize) {
        let p = self.padded();
        (p[0], p[0] * p[1])
    }

    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        let (s1, s2) = self.strides();
        (k + 1) * s2 + (j + 1) * s1 + i + 1
    }

    pub fn half(&self) -> Shape {
        Shape::new([self.dims[0] / 2, self.dims[1] / 2, self.dims[2] / 2])
    }

    pub fn double(&self) -> Shape {
        Shape::new([self.dims[0] * 2, self.dims[1] * 2, self.dims[2] * 2])
    }

    /// Flat range covering every interior voxel and every 3x3x3 neighbour read stays in bounds.
    fn conv_range(&self) -> (usize, usize) {
        let (s1, s2) = self.strides();
        let lo = s2 + s1 + 1;
        (lo, self.len() - lo)
    }

    fn taps(&self, k3: bool) -> Vec<isize> {
        if !k3 {
            return vec![0];
        }
        let (s1, s2) = self.strides();
        let mut out = Vec::with_capacity(27);
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    out.push(dz * s2 as isize + dy * s1 as isize + dx);
                }
            }
        }
        out
    }
}

/// Channel-major stack of padded volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct Act<T> {
    pub shape: Shape,
    pub ch: usize,
    pub data: Vec<T>,
}

impl<T: Float + Send + Sync> Act<T> {
    pub fn zeros(shape: Shape, ch: usize) -> Self {
        Act {
            shape,
            ch,
            data: vec![T::zero(); ch * shape.len()],
        }
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.shape.len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Dense interior values of channel `c`, x fastest.
    pub fn interior(&self, c: usize) -> Vec<T> {
        let [d0, d1, d2] = self.shape.dims;
        let ch = self.channel(c);
        let mut out = Vec::with_capacity(self.shape.interior_len());
        for k in 0..d2 {
            for j in 0..d1 {
                let start = self.shape.idx(0, j, k);
                out.extend_from_slice(&ch[start..start + d0]);
            }
        }
        out
    }

    pub fn set_interior(&mut self, c: usize, values: &[T]) {
        let [d0, d1, d2] = self.shape.dims;
        let n = self.shape.len();
        let shape = self.shape;
        let ch = &mut self.data[c * n..(c + 1) * n];
        let mut src = values.chunks_exact(d0);
        for k in 0..d2 {
            for j in 0..d1 {
                let start = shape.idx(0, j, k);
                ch[start..start + d0].copy_from_slice(src.next().expect("interior length"));
            }
        }
    }

    pub fn add_assign(&mut self, other: &Act<T>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }
}

fn zero_halo<T: Float>(buf: &mut [T], shape: Shape) {
    let p = shape.padded();
    for k in 0..p[2] {
        for j in 0..p[1] {
            let row = &mut buf[(k * p[1] + j) * p[0]..(k * p[1] + j + 1) * p[0]];
            if k == 0 || k == p[2] - 1 || j == 0 || j == p[1] - 1 {
                row.fill(T::zero());
            } else {
                row[0] = T::zero();
                row[p[0] - 1] = T::zero();
            }
        }
    }
}

fn axpy<T: Float>(y: &mut [T], x: &[T], a: T) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * *xi;
    }
}

/// Eight-lane dot product; the fixed lane order keeps results deterministic.
fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] = lanes[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    lanes.iter().fold(T::zero(), |s, v| s + *v) + tail
}

fn shifted(range: (usize, usize), off: isize) -> std::ops::Range<usize> {
    (range.0 as isize + off) as usize..(range.1 as isize + off) as usize
}

/// `w` is laid out `[cout][cin][tap]`, taps ordered z, y, x from -1 to 1.
pub fn conv_forward<T: Float + Send + Sync>(inp: &Act<T>, w: &[T], b: &[T], cout: usize, k3: bool) -> Act<T> {
    let shape = inp.shape;
    let taps = shape.taps(k3);
    let nt = taps.len();
    let range = shape.conv_range();
    let len = shape.len();
    let mut out = Act::zeros(shape, cout);
    out.data.par_chunks_mut(len).enumerate().for_each(|(co, o)| {
        o[range.0..range.1].fill(b[co]);
        for ci in 0..inp.ch {
            let src = inp.channel(ci);
            for (t, &off) in taps.iter().enumerate() {
                axpy(&mut o[range.0..range.1], &src[shifted(range, off)], w[(co * inp.ch + ci) * nt + t]);
            }
        }
        zero_halo(o, shape);
    });
    out
}

/// Accumulates weight and bias gradients into `gw`, `gb`; returns the input gradient.
pub fn conv_backward<T: Float + Send + Sync>(
    inp: &Act<T>,
    w: &[T],
    g_out: &Act<T>,
    k3: bool,
    gw: &mut [T],
    gb: &mut [T],
) -> Act<T> {
    let shape = inp.shape;
    let taps = shape.taps(k3);
    let nt = taps.len();
    let range = shape.conv_range();
    let len = shape.len();
    let cin = inp.ch;
    gw.par_chunks_mut(cin * nt)
        .zip(gb.par_iter_mut())
        .enumerate()
        .for_each(|(co, (gwc, gbc))| {
            let go = g_out.channel(co);
            *gbc = *gbc + go.iter().fold(T::zero(), |s, v| s + *v);
            for ci in 0..cin {
                let src = inp.channel(ci);
                for (t, &off) in taps.iter().enumerate() {
                    let g = &mut gwc[ci * nt + t];
                    *g = *g + dot(&go[range.0..range.1], &src[shifted(range, off)]);
                }
            }
        });
    let mut g_in = Act::zeros(shape, cin);
    g_in.data.par_chunks_mut(len).enumerate().for_each(|(ci, gi)| {
        for co in 0..g_out.ch {
            let go = g_out.channel(co);
            for (t, &off) in taps.iter().enumerate() {
                axpy(&mut gi[shifted(range, off)], &go[range.0..range.1], w[(co * cin + ci) * nt + t]);
            }
        }
        zero_halo(gi, shape);
    });
    g_in
}

pub fn relu_in_place<T: Float>(a: &mut Act<T>) {
    for v in &mut a.data {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Zero the gradient wherever the ReLU output was not positive.
pub fn relu_backward<T: Float>(out: &Act<T>, g: &mut Act<T>) {
    for (gv, o) in g.data.iter_mut().zip(&out.data) {
        if !(*o > T::zero()) {
            *gv = T::zero();
        }
    }
}

/// 2x2x2 max pooling; returns the winning padded index per output voxel (first wins ties).
pub fn maxpool_forward<T: Float + Send + Sync>(inp: &Act<T>) -> (Act<T>, Vec<u32>) {
    let si = inp.shape;
    let so = si.half();
    let mut out = Act::zeros(so, inp.ch);
    let mut arg = vec![0u32; inp.ch * so.interior_len()];
    let [d0, d1, d2] = so.dims;
    for c in 0..inp.ch {
        let src = inp.channel(c);
        let mut n = c * so.interior_len();
        for k in 0..d2 {
            for j in 0..d1 {
                for i in 0..d0 {
                    let mut best = si.idx(2 * i, 2 * j, 2 * k);
                    for (a, b, e) in [(1, 0, 0), (0, 1, 0), (1, 1, 0), (0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1)] {
                        let q = si.idx(2 * i + a, 2 * j + b, 2 * k + e);
                        if src[q] > src[best] {
                            best = q;
                        }
                    }
                    out.data[c * so.len() + so.idx(i, j, k)] = src[best];
                    arg[n] = best as u32;
                    n += 1;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Float + Send + Sync>(in_shape: Shape, arg: &[u32], g_out: &Act<T>) -> Act<T> {
    let so = g_out.shape;
    let mut g_in = Act::zeros(in_shape, g_out.ch);
    let [d0, d1, d2] = so.dims;
    for c in 0..g_out.ch {
        let go = g_out.channel(c);
        let mut n = c * so.interior_len();
        for k in 0..d2 {
            for j in 0..d1 {
                for i in 0..d0 {
                    let q = c * in_shape.len() + arg[n] as usize;
                    g_in.data[q] = g_in.data[q] + go[so.idx(i, j, k)];
                    n += 1;
                }
            }
        }
    }
    g_in
}

/// Source indices and weights along one axis for x2 upsampling with voxel-centre alignment.
fn stencil(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let x = (o as f64 + 0.5) / 2.0 - 0.5;
            let f = x.floor();
            let t = x - f;
            let clamp = |v: f64| v.max(0.0).min((n - 1) as f64) as usize;
            (clamp(f), clamp(f + 1.0), t)
        })
        .collect()
}

fn upsample_axis<T: Float>(src: &[T], dims: [usize; 3], axis: usize) -> (Vec<T>, [usize; 3]) {
    let mut od = dims;
    od[axis] *= 2;
    let st = stencil(dims[axis]);
    let mut out = Vec::with_capacity(od[0] * od[1] * od[2]);
    for k in 0..od[2] {
        for j in 0..od[1] {
            for i in 0..od[0] {
                let o = [i, j, k];
                let (a, b, t) = st[o[axis]];
                let mut p = o;
                p[axis] = a;
                let va = src[(p[2] * dims[1] + p[1]) * dims[0] + p[0]];
                p[axis] = b;
                let vb = src[(p[2] * dims[1] + p[1]) * dims[0] + p[0]];
                let t = T::from(t).expect("float");
                out.push(va * (T::one() - t) + vb * t);
            }
        }
    }
    (out, od)
}

fn upsample_axis_adjoint<T: Float>(g: &[T], in_dims: [usize; 3], axis: usize) -> Vec<T> {
    let mut od = in_dims;
    od[axis] *= 2;
    let st = stencil(in_dims[axis]);
    let mut out = vec![T::zero(); in_dims[0] * in_dims[1] * in_dims[2]];
    let mut n = 0;
    for k in 0..od[2] {
        for j in 0..od[1] {
            for i in 0..od[0] {
                let o = [i, j, k];
                let (a, b, t) = st[o[axis]];
                let t = T::from(t).expect("float");
                let mut p = o;
                p[axis] = a;
                let qa = (p[2] * in_dims[1] + p[1]) * in_dims[0] + p[0];
                out[qa] = out[qa] + g[n] * (T::one() - t);
                p[axis] = b;
                let qb = (p[2] * in_dims[1] + p[1]) * in_dims[0] + p[0];
                out[qb] = out[qb] + g[n] * t;
                n += 1;
            }
        }
    }
    out
}

/// Separable trilinear x2 upsampling.
pub fn upsample_forward<T: Float + Send + Sync>(inp: &Act<T>) -> Act<T> {
    let mut out = Act::zeros(inp.shape.double(), inp.ch);
    for c in 0..inp.ch {
        let mut v = inp.interior(c);
        let mut d = inp.shape.dims;
        for axis in 0..3 {
            (v, d) = upsample_axis(&v, d, axis);
        }
        out.set_interior(c, &v);
    }
    out
}

pub fn upsample_backward<T: Float + Send + Sync>(in_shape: Shape, g_out: &Act<T>) -> Act<T> {
    let mut g_in = Act::zeros(in_shape, g_out.ch);
    for c in 0..g_out.ch {
        let mut v = g_out.interior(c);
        for axis in (0..3).rev() {
            // Shape seen by the forward pass along `axis`: earlier axes already doubled.
            let mut d = in_shape.dims;
            for a in 0..axis {
                d[a] *= 2;
            }
            v = upsample_axis_adjoint(&v, d, axis);
        }
        g_in.set_interior(c, &v);
    }
    g_in
}

pub fn concat<T: Float + Send + Sync>(a: &Act<T>, b: &Act<T>) -> Act<T> {
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Act {
        shape: a.shape,
        ch: a.ch + b.ch,
        data,
    }
}

pub fn split<T: Float + Send + Sync>(g: &Act<T>, first: usize) -> (Act<T>, Act<T>) {
    let n = first * g.shape.len();
    (
        Act {
            shape: g.shape,
            ch: first,
            data: g.data[..n].to_vec(),
        },
        Act {
            shape: g.shape,
            ch: g.ch - first,
            data: g.data[n..].to_vec(),
        },
    )
}
