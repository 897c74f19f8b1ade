/// Dense `[n, c, h, w]` activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * c * h * w);
        Self { n, c, h, w, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n, self.c, self.h, self.w)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let len = self.plane_len();
        let start = (n * self.c + c) * len;
        &self.data[start..start + len]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let len = self.plane_len();
        let start = (n * self.c + c) * len;
        &mut self.data[start..start + len]
    }
}
