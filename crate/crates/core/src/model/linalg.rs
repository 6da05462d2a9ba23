//! Thin safe wrapper over `matrixmultiply::dgemm`.

#[derive(Debug, Clone, Copy)]
pub(crate) struct Strides {
    row: usize,
    col: usize,
}

impl Strides {
    /// Row-major matrix with `cols` columns.
    pub(crate) fn row_major(cols: usize) -> Self {
        Self { row: cols, col: 1 }
    }

    /// Transpose of a row-major matrix whose rows have length `cols`.
    pub(crate) fn transposed(cols: usize) -> Self {
        Self { row: 1, col: cols }
    }

    fn max_index(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row + (cols - 1) * self.col + 1
        }
    }
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n` row-major.
pub(crate) fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= sa.max_index(m, k), "gemm: lhs too short");
    assert!(b.len() >= sb.max_index(k, n), "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is a unique borrow disjoint from `a` and `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.row as isize,
            sa.col as isize,
            b.as_ptr(),
            sb.row as isize,
            sb.col as isize,
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

    #[test]
    fn matches_naive_product() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [1.0; 4];
        gemm(
            (2, 3, 2),
            &a,
            Strides::row_major(3),
            &b,
            Strides::row_major(2),
            1.0,
            &mut c,
        );
        assert_eq!(c, [59.0, 65.0, 140.0, 155.0]);
        // a^T (3x2) times a (2x3)
        let mut d = [0.0; 9];
        gemm(
            (3, 2, 3),
            &a,
            Strides::transposed(3),
            &a,
            Strides::row_major(3),
            0.0,
            &mut d,
        );
        assert_eq!(d, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }
}
