use crate::Scalar;

/// Row-major `C = alpha * op(A) * op(B) + beta * C`.
///
/// `op(A)` is `m x k`; when `trans_a` is set, `a` holds the `k x m` matrix.
/// Likewise `op(B)` is `k x n` and `b` holds `n x k` when `trans_b` is set.
/// With `beta == 0` the previous contents of `c` are ignored.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    gemm_strided(m, k, n, alpha, (a, rsa, csa), (b, rsb, csb), beta, (c, n));
}

/// [`gemm`] on strided views: `(data, row stride, column stride)` for the
/// operands and `(data, row stride)` for the output.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: (&[T], usize, usize),
    b: (&[T], usize, usize),
    beta: T,
    c: (&mut [T], usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| {
        (rows.max(1) - 1) * rs + (cols.max(1) - 1) * cs
    };
    if k > 0 {
        assert!(last(m, k, a.1, a.2) < a.0.len(), "gemm: lhs too short");
        assert!(last(k, n, b.1, b.2) < b.0.len(), "gemm: rhs too short");
    }
    assert!(last(m, n, c.1, 1) < c.0.len(), "gemm: output too short");
    // SAFETY: the asserts above bound every index touched by the kernel, and
    // `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.0.as_mut_ptr(),
            c.1 as isize,
            1,
        );
    }
}
