//! Dense matrix kernels behind the convolutions.
//!
//! Every output element is accumulated over the inner dimension in index order
//! into a fresh accumulator that is then added to `c`, so the result does not
//! depend on blocking or on which instruction set is picked at runtime.

const MR: usize = 4;
const NR: usize = 8;

/// Strided read-only view; element `(i, k)` lives at `i * rs + k * cs`.
#[derive(Clone, Copy)]
pub(super) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

/// `c[m x n] += a[m x kd] * b[kd x n]` with `b` and `c` row-major.
#[allow(clippy::too_many_arguments)]
pub(super) fn gemm(m: usize, n: usize, kd: usize, a: View, b: &[f64], ldb: usize, c: &mut [f64], ldc: usize) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected on this CPU.
            unsafe { gemm_avx2(m, n, kd, a, b, ldb, c, ldc) };
            return;
        }
    }
    gemm_body(m, n, kd, a, b, ldb, c, ldc);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_avx2(m: usize, n: usize, kd: usize, a: View, b: &[f64], ldb: usize, c: &mut [f64], ldc: usize) {
    gemm_body(m, n, kd, a, b, ldb, c, ldc);
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_body(m: usize, n: usize, kd: usize, a: View, b: &[f64], ldb: usize, c: &mut [f64], ldc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= (m - 1) * ldc + n);
    if kd > 0 {
        assert!(b.len() >= (kd - 1) * ldb + n);
        assert!(a.data.len() > (m - 1) * a.rs + (kd - 1) * a.cs);
    }
    let full_m = m - m % MR;
    let full_n = n - n % NR;
    let mut i = 0;
    while i < full_m {
        let mut j = 0;
        while j < full_n {
            micro(kd, a, i, b, ldb, j, c, ldc);
            j += NR;
        }
        for r in i..i + MR {
            edge(r, full_n..n, kd, a, b, ldb, c, ldc);
        }
        i += MR;
    }
    for r in full_m..m {
        edge(r, 0..n, kd, a, b, ldb, c, ldc);
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn micro(kd: usize, a: View, i0: usize, b: &[f64], ldb: usize, j0: usize, c: &mut [f64], ldc: usize) {
    let mut acc = [[0.0f64; NR]; MR];
    let ai: [usize; MR] = std::array::from_fn(|r| (i0 + r) * a.rs);
    for k in 0..kd {
        // SAFETY: gemm_body checked that every index touched here is in bounds.
        let (brow, avs) = unsafe {
            let brow = &*(b.as_ptr().add(k * ldb + j0) as *const [f64; NR]);
            let off = k * a.cs;
            let avs: [f64; MR] = std::array::from_fn(|r| *a.data.get_unchecked(ai[r] + off));
            (brow, avs)
        };
        for r in 0..MR {
            for j in 0..NR {
                acc[r][j] += avs[r] * brow[j];
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        let cr = &mut c[(i0 + r) * ldc + j0..(i0 + r) * ldc + j0 + NR];
        for (cv, &v) in cr.iter_mut().zip(row) {
            *cv += v;
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn edge(r: usize, cols: std::ops::Range<usize>, kd: usize, a: View, b: &[f64], ldb: usize, c: &mut [f64], ldc: usize) {
    for j in cols {
        let mut acc = 0.0;
        for k in 0..kd {
            acc += a.data[r * a.rs + k * a.cs] * b[k * ldb + j];
        }
        c[r * ldc + j] += acc;
    }
}
