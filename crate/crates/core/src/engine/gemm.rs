use crate::tensor::Float;

/// Strided matrix view: `ptr[r * rs + c * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [Float],
    pub rs: isize,
    pub cs: isize,
}

impl<'a> View<'a> {
    pub fn rows(data: &'a [Float], cols: usize) -> Self {
        View {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a row-major `[rows, cols]` matrix.
    pub fn transposed(data: &'a [Float], cols: usize) -> Self {
        View {
            data,
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c[m, n] = beta * c + a[m, k] * b[k, n]`, `c` row-major and dense.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View, b: View, beta: Float, c: &mut [Float]) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // Bounds for the strided reads.
    let last_a = (m as isize - 1) * a.rs + (k as isize - 1) * a.cs;
    let last_b = (k as isize - 1) * b.rs + (n as isize - 1) * b.cs;
    assert!(last_a >= 0 && (last_a as usize) < a.data.len());
    assert!(last_b >= 0 && (last_b as usize) < b.data.len());
    // SAFETY: every index touched by the kernel lies in [0, last] for the
    // respective operand, checked above; c is dense with m*n elements.
    unsafe {
        #[cfg(not(feature = "f32"))]
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        #[cfg(feature = "f32")]
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[Float], b: &[Float]) -> Vec<Float> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_product() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<Float> = (0..m * k).map(|i| i as Float * 0.5 - 2.0).collect();
        let b: Vec<Float> = (0..k * n).map(|i| (i as Float).sin()).collect();
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, View::rows(&a, k), View::rows(&b, n), 0.0, &mut c);
        let want = naive(m, k, n, &a, &b);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_view_and_accumulate() {
        // a stored as [k, m], used as a^T.
        let (m, k, n) = (2, 3, 2);
        let at: Vec<Float> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let a: Vec<Float> = vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0];
        let b: Vec<Float> = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = vec![1.0; m * n];
        gemm(m, k, n, View::transposed(&at, m), View::rows(&b, n), 1.0, &mut c);
        let want = naive(m, k, n, &a, &b);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }
}
