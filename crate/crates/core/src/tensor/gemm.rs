/// Row-major operand view for [`gemm`]: `trans` reads the stored matrix as its
/// transpose without copying.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub trans: bool,
}

impl<'a> Mat<'a> {
    pub fn n(data: &'a [f64]) -> Self {
        Mat { data, trans: false }
    }

    pub fn t(data: &'a [f64]) -> Self {
        Mat { data, trans: true }
    }
}

/// `c = a · b + beta · c` with `a: m×k`, `b: k×n`, `c: m×n`, all row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat, b: Mat, beta: f64, c: &mut [f64]) {
    assert_eq!(a.data.len(), m * k);
    assert_eq!(b.data.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a.trans { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b.trans { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above pin every buffer to exactly the extent that
    // the strides address.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
