//! Strided matrix products and the im2col/col2im pair that lowers
//! convolutions onto them.

/// A read-only strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    /// Row-major `rows × cols`.
    pub fn rm(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c ← beta·c + a·b` with `c` row-major `a.rows × b.cols`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    assert!(a.span() <= a.data.len() && b.span() <= b.data.len());
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the asserts above bound every index touched through the given
    // strides by the slice lengths, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry linking a "big" plane set `[channels, big_h, big_w]` to a
/// "small" grid `small_h × small_w` via
/// `big = small·stride + kernel_offset − padding`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Patch {
    pub channels: usize,
    pub big_h: usize,
    pub big_w: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Patch {
    pub fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.small_h * self.small_w
    }

    #[inline]
    fn map(&self, small: usize, off: usize, big_len: usize) -> Option<usize> {
        (small * self.stride + off).checked_sub(self.padding).filter(|&v| v < big_len)
    }

    /// Gathers `big` into `cols` (`rows() × cols()`, row-major).
    pub fn im2col(&self, big: &[f64], cols: &mut [f64]) {
        let (p, plane) = (self.cols(), self.big_h * self.big_w);
        for c in 0..self.channels {
            let src = &big[c * plane..][..plane];
            for kh in 0..self.k {
                for kw in 0..self.k {
                    let row = &mut cols[((c * self.k + kh) * self.k + kw) * p..][..p];
                    for sh in 0..self.small_h {
                        let out = &mut row[sh * self.small_w..][..self.small_w];
                        match self.map(sh, kh, self.big_h) {
                            None => out.iter_mut().for_each(|v| *v = 0.0),
                            Some(bh) => {
                                let line = &src[bh * self.big_w..][..self.big_w];
                                for (sw, o) in out.iter_mut().enumerate() {
                                    *o = self.map(sw, kw, self.big_w).map_or(0.0, |bw| line[bw]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back onto `big`; the adjoint of [`Patch::im2col`].
    pub fn col2im(&self, cols: &[f64], big: &mut [f64]) {
        let (p, plane) = (self.cols(), self.big_h * self.big_w);
        for c in 0..self.channels {
            let dst = &mut big[c * plane..][..plane];
            for kh in 0..self.k {
                for kw in 0..self.k {
                    let row = &cols[((c * self.k + kh) * self.k + kw) * p..][..p];
                    for sh in 0..self.small_h {
                        let Some(bh) = self.map(sh, kh, self.big_h) else { continue };
                        let src = &row[sh * self.small_w..][..self.small_w];
                        let line = &mut dst[bh * self.big_w..][..self.big_w];
                        for (sw, &v) in src.iter().enumerate() {
                            if let Some(bw) = self.map(sw, kw, self.big_w) {
                                line[bw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn gemm_with_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(Mat::rm(&a, 2, 2), Mat::rm(&b, 2, 2), 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(Mat::rm(&a, 2, 2).t(), Mat::rm(&b, 2, 2), 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(Mat::rm(&a, 2, 2), Mat::rm(&b, 2, 2).t(), 1.0, &mut c);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Patch {
            channels: 2,
            big_h: 5,
            big_w: 6,
            small_h: 3,
            small_w: 3,
            k: 3,
            stride: 2,
            padding: 1,
        };
        let big: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let cols_in: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; g.rows() * g.cols()];
        g.im2col(&big, &mut cols);
        let mut back = vec![0.0; 60];
        g.col2im(&cols_in, &mut back);
        let lhs: f64 = cols.iter().zip(&cols_in).map(|(a, b)| a * b).sum();
        let rhs: f64 = big.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
