use crate::real::Real;

/// Frequency encoding applied independently to each input component:
/// `[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionalEncoding {
    pub num_frequencies: usize,
    pub include_input: bool,
}

impl PositionalEncoding {
    pub const fn new(num_frequencies: usize, include_input: bool) -> Self {
        Self { num_frequencies, include_input }
    }

    fn per_component(&self) -> usize {
        2 * self.num_frequencies + usize::from(self.include_input)
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * self.per_component()
    }

    /// Encodes `x` into `out`, which must hold `output_dim(x.len())` values.
    pub fn encode_into<R: Real>(&self, x: &[R], out: &mut [R]) {
        let per = self.per_component();
        debug_assert_eq!(out.len(), x.len() * per);
        for (c, &xc) in x.iter().enumerate() {
            let block = &mut out[c * per..(c + 1) * per];
            let mut j = 0;
            if self.include_input {
                block[0] = xc;
                j = 1;
            }
            let mut freq = R::PI();
            for _ in 0..self.num_frequencies {
                let (s, co) = (freq * xc).sin_cos();
                block[j] = s;
                block[j + 1] = co;
                j += 2;
                freq = freq + freq;
            }
        }
    }

    pub fn encode<R: Real>(&self, x: &[R]) -> Vec<R> {
        let mut out = vec![R::zero(); self.output_dim(x.len())];
        self.encode_into(x, &mut out);
        out
    }

    /// Accumulates the input gradient given the gradient of the encoding.
    pub fn backward_into<R: Real>(&self, x: &[R], g_out: &[R], g_in: &mut [R]) {
        let per = self.per_component();
        for (c, &xc) in x.iter().enumerate() {
            let block = &g_out[c * per..(c + 1) * per];
            let mut acc = R::zero();
            let mut j = 0;
            if self.include_input {
                acc += block[0];
                j = 1;
            }
            let mut freq = R::PI();
            for _ in 0..self.num_frequencies {
                let (s, co) = (freq * xc).sin_cos();
                acc += freq * (co * block[j] - s * block[j + 1]);
                j += 2;
                freq = freq + freq;
            }
            g_in[c] += acc;
        }
    }
}

impl PositionalEncoding {
    /// Same as [`backward_into`](Self::backward_into) but reads sines and
    /// cosines from the forward encoding instead of recomputing them.
    pub fn backward_from_encoding<R: Real>(&self, encoded: &[R], g_out: &[R], g_in: &mut [R]) {
        let per = self.per_component();
        let skip = usize::from(self.include_input);
        for (c, gi) in g_in.iter_mut().enumerate() {
            let block = &g_out[c * per..(c + 1) * per];
            let enc = &encoded[c * per..(c + 1) * per];
            let mut acc = if self.include_input { block[0] } else { R::zero() };
            let mut freq = R::PI();
            for f in 0..self.num_frequencies {
                let j = skip + 2 * f;
                acc += freq * (enc[j + 1] * block[j] - enc[j] * block[j + 1]);
                freq = freq + freq;
            }
            *gi += acc;
        }
    }
}
