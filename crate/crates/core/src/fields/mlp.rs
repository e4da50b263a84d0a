//! Fully connected ReLU networks whose parameters live in a slice of a
//! shared flat parameter vector.
//!
//! Layer `l` stores its weights row-major as an `in x out` matrix followed
//! by `out` biases, so a batch evaluates as `Y = X W + b`.

use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    widths: Vec<usize>,
    offset: usize,
}

/// Layer inputs recorded during a batched forward pass; `values[0]` is the
/// network input and the last entry is the linear output.
#[derive(Debug, Clone)]
pub struct MlpActivations<R> {
    pub rows: usize,
    pub values: Vec<Vec<R>>,
}

impl<R> MlpActivations<R> {
    pub fn input(&self) -> &[R] {
        &self.values[0]
    }

    pub fn output(&self) -> &[R] {
        self.values.last().expect("at least input and output")
    }
}

impl Mlp {
    /// `widths = [input, hidden..., output]`; parameters start at `offset`.
    pub fn new(widths: Vec<usize>, offset: usize) -> Self {
        assert!(widths.len() >= 2 && widths.iter().all(|&w| w > 0), "invalid widths {widths:?}");
        Self { widths, offset }
    }

    pub fn param_count_for(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        Self::param_count_for(&self.widths)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    /// `(weights, biases)` ranges of layer `l` within the flat vector.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start = self.offset + Self::param_count_for(&self.widths[..=l]);
        let (i, o) = (self.widths[l], self.widths[l + 1]);
        (start..start + i * o, start + i * o..start + i * o + o)
    }

    pub fn forward<R: Real>(&self, theta: &[R], input: Vec<R>, rows: usize) -> MlpActivations<R> {
        assert_eq!(input.len(), rows * self.input_dim(), "input shape");
        let mut values = Vec::with_capacity(self.widths.len());
        values.push(input);
        for l in 0..self.layer_count() {
            let (wr, br) = self.layer_ranges(l);
            let (i, o) = (self.widths[l], self.widths[l + 1]);
            let bias = &theta[br];
            let mut out = Vec::with_capacity(rows * o);
            for _ in 0..rows {
                out.extend_from_slice(bias);
            }
            let x = values.last().unwrap();
            if o <= NARROW {
                narrow_forward(rows, i, o, x, &theta[wr], &mut out);
            } else {
                R::gemm(rows, i, o, R::one(), x, (i as isize, 1), &theta[wr], (o as isize, 1), R::one(), &mut out, (o as isize, 1));
            }
            if l + 1 < self.layer_count() {
                for v in &mut out {
                    *v = v.max(R::zero());
                }
            }
            values.push(out);
        }
        MlpActivations { rows, values }
    }

    /// Reverse pass. Accumulates parameter gradients into `grad` (the full
    /// flat gradient) and returns the input gradient when requested.
    pub fn backward<R: Real>(
        &self,
        theta: &[R],
        acts: &MlpActivations<R>,
        g_out: Vec<R>,
        grad: &mut [R],
        want_input_grad: bool,
    ) -> Option<Vec<R>> {
        let rows = acts.rows;
        assert_eq!(g_out.len(), rows * self.output_dim(), "output cotangent shape");
        let mut g = g_out;
        for l in (0..self.layer_count()).rev() {
            let (wr, br) = self.layer_ranges(l);
            let (i, o) = (self.widths[l], self.widths[l + 1]);
            let x = &acts.values[l];
            // dW += X^T G
            if o <= NARROW {
                narrow_weight_grad(rows, i, o, x, &g, &mut grad[wr.clone()]);
            } else {
                R::gemm(i, rows, o, R::one(), x, (1, i as isize), &g, (o as isize, 1), R::one(), &mut grad[wr.clone()], (o as isize, 1));
            }
            let gb = &mut grad[br];
            for row in g.chunks_exact(o) {
                for (acc, &v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            if l == 0 && !want_input_grad {
                return None;
            }
            // dX = G W^T
            let mut gx = vec![R::zero(); rows * i];
            if o <= NARROW {
                narrow_input_grad(rows, i, o, &g, &theta[wr], &mut gx);
            } else {
                R::gemm(rows, o, i, R::one(), &g, (o as isize, 1), &theta[wr], (1, o as isize), R::zero(), &mut gx, (i as isize, 1));
            }
            if l > 0 {
                for (gv, &xv) in gx.iter_mut().zip(x) {
                    if xv <= R::zero() {
                        *gv = R::zero();
                    }
                }
            }
            g = gx;
        }
        Some(g)
    }
}

/// Output widths up to this use the loops below; packed GEMM kernels are
/// inefficient for them.
const NARROW: usize = 8;

/// Column-major copy of an `i x o` row-major matrix.
fn transpose<R: Real>(i: usize, o: usize, w: &[R]) -> Vec<R> {
    let mut t = vec![R::zero(); i * o];
    for k in 0..i {
        for c in 0..o {
            t[c * i + k] = w[k * o + c];
        }
    }
    t
}

/// Dot product with a fixed 8-lane accumulation order.
fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut lanes = [R::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..8 {
            lanes[j] += x[j] * y[j];
        }
    }
    for (j, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        lanes[j] += *x * *y;
    }
    lanes.iter().fold(R::zero(), |s, &v| s + v)
}

/// `out += X W` for narrow `W`.
fn narrow_forward<R: Real>(rows: usize, i: usize, o: usize, x: &[R], w: &[R], out: &mut [R]) {
    let wt = transpose(i, o, w);
    for r in 0..rows {
        let xr = &x[r * i..(r + 1) * i];
        for c in 0..o {
            out[r * o + c] += dot(xr, &wt[c * i..(c + 1) * i]);
        }
    }
}

/// `dW += X^T G` for narrow `G`.
fn narrow_weight_grad<R: Real>(rows: usize, i: usize, o: usize, x: &[R], g: &[R], dw: &mut [R]) {
    let mut acc = vec![R::zero(); o * i];
    for r in 0..rows {
        let xr = &x[r * i..(r + 1) * i];
        for c in 0..o {
            let gv = g[r * o + c];
            if gv != R::zero() {
                for (a, &xv) in acc[c * i..(c + 1) * i].iter_mut().zip(xr) {
                    *a += gv * xv;
                }
            }
        }
    }
    for k in 0..i {
        for c in 0..o {
            dw[k * o + c] += acc[c * i + k];
        }
    }
}

/// `gx = G W^T` for narrow `G`.
fn narrow_input_grad<R: Real>(rows: usize, i: usize, o: usize, g: &[R], w: &[R], gx: &mut [R]) {
    let wt = transpose(i, o, w);
    for r in 0..rows {
        let out = &mut gx[r * i..(r + 1) * i];
        for c in 0..o {
            let gv = g[r * o + c];
            if gv != R::zero() {
                for (v, &wv) in out.iter_mut().zip(&wt[c * i..(c + 1) * i]) {
                    *v += gv * wv;
                }
            }
        }
    }
}
