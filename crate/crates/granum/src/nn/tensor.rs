//! Dense (batch, channel, z, y, x) tensors in f64.
//!
//! f64 throughout: the gradient acceptance check compares reverse-mode
//! gradients against central finite differences at 1e-3 relative error,
//! which f32 activation noise would wash out.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    /// (n, c, z, y, x)
    pub shape: [usize; 5],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<f64>) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor { shape, data }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn spatial(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    /// Offset of channel plane (n, c).
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> usize {
        (n * self.shape[1] + c) * self.spatial()
    }

    /// Extract one sample as an (1, c, z, y, x) tensor.
    pub fn sample(&self, n: usize) -> Tensor {
        let per = self.shape[1] * self.spatial();
        let mut shape = self.shape;
        shape[0] = 1;
        Tensor::from_vec(shape, self.data[n * per..(n + 1) * per].to_vec())
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.shape[0], b.shape[0]);
        assert_eq!(a.shape[2..], b.shape[2..]);
        let (n, ca, cb) = (a.shape[0], a.shape[1], b.shape[1]);
        let sp = a.spatial();
        let mut out = Tensor::zeros([n, ca + cb, a.shape[2], a.shape[3], a.shape[4]]);
        for ni in 0..n {
            let dst = out.plane(ni, 0);
            out.data[dst..dst + ca * sp]
                .copy_from_slice(&a.data[a.plane(ni, 0)..a.plane(ni, 0) + ca * sp]);
            let dst = out.plane(ni, ca);
            out.data[dst..dst + cb * sp]
                .copy_from_slice(&b.data[b.plane(ni, 0)..b.plane(ni, 0) + cb * sp]);
        }
        out
    }

    /// Split a gradient of a channel concatenation back into the two parts.
    pub fn split_channels(&self, ca: usize) -> (Tensor, Tensor) {
        let n = self.shape[0];
        let cb = self.shape[1] - ca;
        let sp = self.spatial();
        let mut a = Tensor::zeros([n, ca, self.shape[2], self.shape[3], self.shape[4]]);
        let mut b = Tensor::zeros([n, cb, self.shape[2], self.shape[3], self.shape[4]]);
        for ni in 0..n {
            let src = self.plane(ni, 0);
            a.data[ni * ca * sp..(ni + 1) * ca * sp]
                .copy_from_slice(&self.data[src..src + ca * sp]);
            let src = self.plane(ni, ca);
            b.data[ni * cb * sp..(ni + 1) * cb * sp]
                .copy_from_slice(&self.data[src..src + cb * sp]);
        }
        (a, b)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (d, s) in self.data.iter_mut().zip(&other.data) {
            *d += s;
        }
    }
}

/// dst += w * src, fixed order (vectorizes; no fp reassociation needed).
#[inline]
pub fn axpy(dst: &mut [f64], src: &[f64], w: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}

/// Dot product with four fixed-order partial sums so the compiler can keep
/// independent accumulators; deterministic for a given input length.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
