//! Dense → GRU → dense network over a flat parameter vector, with the forward
//! pass cached for backpropagation through time.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub input: usize,
    pub row: usize,
    pub hidden: usize,
    pub output: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Offsets {
    pub start: usize,
    pub w_in: usize,
    pub b_in: usize,
    pub w_z: usize,
    pub w_r: usize,
    pub w_n: usize,
    pub u_z: usize,
    pub u_r: usize,
    pub u_n: usize,
    pub b_z: usize,
    pub b_r: usize,
    pub b_n: usize,
    pub w_d: usize,
    pub b_d: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub total: usize,
}

impl Shape {
    pub(crate) fn offsets(&self) -> Offsets {
        let (i, h, o) = (self.input, self.hidden, self.output);
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        Offsets {
            start: take(self.row),
            w_in: take(h * i),
            b_in: take(h),
            w_z: take(h * h),
            w_r: take(h * h),
            w_n: take(h * h),
            u_z: take(h * h),
            u_r: take(h * h),
            u_n: take(h * h),
            b_z: take(h),
            b_r: take(h),
            b_n: take(h),
            w_d: take(h * h),
            b_d: take(h),
            w_o: take(o * h),
            b_o: take(o),
            total: at,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.offsets().total
    }

    /// Uniform(±1/√fan_in) weights, zero biases and start vector.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let off = self.offsets();
        let mut p = vec![0.0; off.total];
        let h = self.hidden;
        let mut fill = |at: usize, len: usize, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for w in &mut p[at..at + len] {
                *w = rng.random_range(-a..a);
            }
        };
        fill(off.w_in, h * self.input, self.input);
        for at in [off.w_z, off.w_r, off.w_n, off.u_z, off.u_r, off.u_n, off.w_d] {
            fill(at, h * h, h);
        }
        fill(off.w_o, self.output * h, h);
        p
    }
}

/// `out = W x + b` for a row-major `rows × x.len()` matrix.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * n..(r + 1) * n];
        *o = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W x`.
fn add_matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += w[r * n..(r + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ g`.
fn add_matvec_t(w: &[f64], g: &[f64], out: &mut [f64]) {
    let n = out.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(&w[r * n..(r + 1) * n]) {
            *o += a * gr;
        }
    }
}

/// `G += g xᵀ`.
fn add_outer(gw: &mut [f64], g: &[f64], x: &[f64]) {
    let n = x.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        for (o, xi) in gw[r * n..(r + 1) * n].iter_mut().zip(x) {
            *o += gr * xi;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    super::loss::logistic(x)
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    pub n: Vec<f64>,
    pub h: Vec<f64>,
    pub d: Vec<f64>,
    pub o: Vec<f64>,
}

pub(crate) struct Network<'a> {
    pub shape: Shape,
    pub off: Offsets,
    pub p: &'a [f64],
}

impl<'a> Network<'a> {
    pub fn new(shape: Shape, p: &'a [f64]) -> Self {
        let off = shape.offsets();
        assert_eq!(p.len(), off.total, "parameter vector length");
        Network { shape, off, p }
    }

    fn block(&self, at: usize, len: usize) -> &'a [f64] {
        &self.p[at..at + len]
    }

    /// Input vector for a step: the previous encoded row (or the learned
    /// start vector) followed by the context.
    pub fn input(&self, prev_row: Option<&[f64]>, context: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.shape.input);
        x.extend_from_slice(prev_row.unwrap_or_else(|| self.block(self.off.start, self.shape.row)));
        x.extend_from_slice(context);
        x
    }

    pub fn step(&self, x: Vec<f64>, h_prev: &[f64]) -> StepCache {
        let (h, i, o_dim) = (self.shape.hidden, self.shape.input, self.shape.output);
        let off = &self.off;
        debug_assert_eq!(x.len(), i);

        let mut a = vec![0.0; h];
        affine(self.block(off.w_in, h * i), self.block(off.b_in, h), &x, &mut a);
        a.iter_mut().for_each(|v| *v = v.tanh());

        let mut z = vec![0.0; h];
        affine(self.block(off.w_z, h * h), self.block(off.b_z, h), &a, &mut z);
        add_matvec(self.block(off.u_z, h * h), h_prev, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut r = vec![0.0; h];
        affine(self.block(off.w_r, h * h), self.block(off.b_r, h), &a, &mut r);
        add_matvec(self.block(off.u_r, h * h), h_prev, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut q = vec![0.0; h];
        add_matvec(self.block(off.u_n, h * h), h_prev, &mut q);
        let mut n = vec![0.0; h];
        affine(self.block(off.w_n, h * h), self.block(off.b_n, h), &a, &mut n);
        for k in 0..h {
            n[k] = (n[k] + r[k] * q[k]).tanh();
        }

        let hn: Vec<f64> = (0..h).map(|k| (1.0 - z[k]) * n[k] + z[k] * h_prev[k]).collect();

        let mut d = vec![0.0; h];
        affine(self.block(off.w_d, h * h), self.block(off.b_d, h), &hn, &mut d);
        d.iter_mut().for_each(|v| *v = v.tanh());

        let mut o = vec![0.0; o_dim];
        affine(self.block(off.w_o, o_dim * h), self.block(off.b_o, o_dim), &d, &mut o);

        StepCache {
            x,
            a,
            h_prev: h_prev.to_vec(),
            z,
            r,
            q,
            n,
            h: hn,
            d,
            o,
        }
    }

    /// Backpropagates one step. `go` is dL/do, `gh` the gradient flowing into
    /// this step's hidden state from later steps; returns the gradient for the
    /// previous hidden state.
    pub fn backward_step(
        &self,
        c: &StepCache,
        go: &[f64],
        gh_next: &[f64],
        first: bool,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let (h, i, o_dim) = (self.shape.hidden, self.shape.input, self.shape.output);
        let off = &self.off;

        add_outer(&mut grad[off.w_o..off.w_o + o_dim * h], go, &c.d);
        for (g, v) in grad[off.b_o..off.b_o + o_dim].iter_mut().zip(go) {
            *g += v;
        }
        let mut gd = vec![0.0; h];
        add_matvec_t(self.block(off.w_o, o_dim * h), go, &mut gd);
        let gdpre: Vec<f64> = (0..h).map(|k| gd[k] * (1.0 - c.d[k] * c.d[k])).collect();
        add_outer(&mut grad[off.w_d..off.w_d + h * h], &gdpre, &c.h);
        for (g, v) in grad[off.b_d..off.b_d + h].iter_mut().zip(&gdpre) {
            *g += v;
        }
        let mut gh = gh_next.to_vec();
        add_matvec_t(self.block(off.w_d, h * h), &gdpre, &mut gh);

        let mut gh_prev: Vec<f64> = (0..h).map(|k| gh[k] * c.z[k]).collect();
        let mut gnpre = vec![0.0; h];
        let mut gzpre = vec![0.0; h];
        let mut grpre = vec![0.0; h];
        let mut gq = vec![0.0; h];
        for k in 0..h {
            let gn = gh[k] * (1.0 - c.z[k]);
            let gz = gh[k] * (c.h_prev[k] - c.n[k]);
            gnpre[k] = gn * (1.0 - c.n[k] * c.n[k]);
            let gr = gnpre[k] * c.q[k];
            gq[k] = gnpre[k] * c.r[k];
            gzpre[k] = gz * c.z[k] * (1.0 - c.z[k]);
            grpre[k] = gr * c.r[k] * (1.0 - c.r[k]);
        }

        let mut ga = vec![0.0; h];
        for (w, u, b, g) in [
            (off.w_z, off.u_z, off.b_z, &gzpre),
            (off.w_r, off.u_r, off.b_r, &grpre),
            (off.w_n, off.u_n, off.b_n, &gnpre),
        ] {
            add_outer(&mut grad[w..w + h * h], g, &c.a);
            add_matvec_t(self.block(w, h * h), g, &mut ga);
            for (gb, v) in grad[b..b + h].iter_mut().zip(g.iter()) {
                *gb += v;
            }
            // the candidate gate sees h_prev through r ⊙ (U_n h_prev)
            let through = if u == off.u_n { &gq } else { g };
            add_outer(&mut grad[u..u + h * h], through, &c.h_prev);
            add_matvec_t(self.block(u, h * h), through, &mut gh_prev);
        }

        let gapre: Vec<f64> = (0..h).map(|k| ga[k] * (1.0 - c.a[k] * c.a[k])).collect();
        add_outer(&mut grad[off.w_in..off.w_in + h * i], &gapre, &c.x);
        for (g, v) in grad[off.b_in..off.b_in + h].iter_mut().zip(&gapre) {
            *g += v;
        }
        if first {
            let mut gx = vec![0.0; i];
            add_matvec_t(self.block(off.w_in, h * i), &gapre, &mut gx);
            let row = self.shape.row;
            for (g, v) in grad[off.start..off.start + row].iter_mut().zip(&gx[..row]) {
                *g += v;
            }
        }
        gh_prev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn offsets_tile_the_vector() {
        let s = Shape {
            input: 7,
            row: 5,
            hidden: 3,
            output: 4,
        };
        let off = s.offsets();
        assert_eq!(off.total, 5 + 3 * 7 + 3 + 7 * 9 + 3 * 3 + 3 + 4 * 3 + 4);
        assert_eq!(off.b_o + 4, off.total);
    }

    #[test]
    fn step_outputs_are_finite_and_bounded() {
        let s = Shape {
            input: 6,
            row: 4,
            hidden: 5,
            output: 3,
        };
        let p = s.init(&mut ChaCha8Rng::seed_from_u64(3));
        let net = Network::new(s, &p);
        let c = net.step(net.input(None, &[0.5, -1.0]), &[0.0; 5]);
        assert!(c.h.iter().all(|v| v.abs() < 1.0));
        assert!(c.o.iter().all(|v| v.is_finite()));
    }
}
