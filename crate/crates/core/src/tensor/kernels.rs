// Row-major matrix kernels. All of them accumulate into `out`.

// Products below this many multiply-adds stay on the plain loops.
const BLOCKED_MIN: usize = 4096;

/// `out += a · b` with explicit row/column strides for both operands.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, out: &mut [f64]) {
    if m * k * n >= BLOCKED_MIN {
        // SAFETY: every stride pair addresses within the slices, whose
        // lengths the callers assert.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 1.0, out.as_mut_ptr(), n as isize, 1,
            );
        }
        return;
    }
    for i in 0..m {
        for p in 0..k {
            let av = a[(i as isize * rsa + p as isize * csa) as usize];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[(p as isize * rsb + j as isize * csb) as usize];
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    gemm(m, k, n, a, k as isize, 1, b, n as isize, 1, out);
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= n * k && out.len() >= m * n);
    gemm(m, k, n, a, k as isize, 1, b, 1, k as isize, out);
}

/// out[m×n] += a[k×m]ᵀ · b[k×n]
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    assert!(a.len() >= k * m && b.len() >= k * n && out.len() >= m * n);
    gemm(m, k, n, a, 1, m as isize, b, n as isize, 1, out);
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
