use crate::linalg::{axpy, Matrix};

/// `A · B` for `A: m×k`, `B: k×n`. Each output is a single accumulator updated
/// with a fused multiply-add over `k` in ascending order, so every kernel
/// below returns bit-identical results on any CPU and rows never interact.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows(), "matmul inner dimensions");
    let (m, k) = a.shape();
    let n = b.cols();
    let mut out = Matrix::zeros(m, n);
    let (src, dst) = (a.as_slice(), b.as_slice());
    let o = out.as_mut_slice();
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::is_x86_feature_detected as has;
        if has!("fma") {
            if has!("avx512f") {
                // SAFETY: the features were detected at runtime.
                unsafe { x86::kernel_avx512(src, dst, o, (m, k, n)) };
                return out;
            }
            if has!("avx2") {
                // SAFETY: the features were detected at runtime.
                unsafe { x86::kernel_avx2(src, dst, o, (m, k, n)) };
                return out;
            }
        }
    }
    tiled::<4, 8>(src, dst, o, m, k, n);
    out
}

/// Row-at-a-time `out += a_ik · b_k` skipping exact zeros. Adding `0·b` to
/// a finite accumulator never changes it, so this agrees with the tiles.
#[cfg(test)]
fn matmul_rows(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &v) in a[i * k..(i + 1) * k].iter().enumerate() {
            if v != 0.0 {
                for (o, &x) in out_row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o = v.mul_add(x, *o);
                }
            }
        }
    }
}

/// One `R×C` output tile from packed operands: `ap[p]` holds column `p` of
/// the row block and `bp[p]` row `p` of the column panel.
type Micro<const R: usize, const C: usize> = unsafe fn(&[[f64; R]], &[[f64; C]]) -> [[f64; C]; R];

fn micro<const R: usize, const C: usize>(ap: &[[f64; R]], bp: &[[f64; C]]) -> [[f64; C]; R] {
    let mut acc = [[0.0f64; C]; R];
    for (av, bv) in ap.iter().zip(bp) {
        for (acc_row, &x) in acc.iter_mut().zip(av) {
            for (o, &y) in acc_row.iter_mut().zip(bv) {
                *o = x.mul_add(y, *o);
            }
        }
    }
    acc
}

/// Packs A into `R`-row blocks and B into `C`-column panels, zero-padded at
/// the edges, then fills each tile with `tile`. Padded rows and columns are
/// computed and dropped.
///
/// # Safety
/// `tile` must be callable on the running CPU.
#[inline(always)]
unsafe fn packed<const R: usize, const C: usize>(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    (m, k, n): (usize, usize, usize),
    tile: Micro<R, C>,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // Inner indices that are zero in every row of A only add exact zeros
    // (ReLU leaves many), so they are dropped from both packed operands.
    let mut live = vec![false; k];
    for arow in a.chunks_exact(k) {
        for (l, &v) in live.iter_mut().zip(arow) {
            *l |= v != 0.0;
        }
    }
    let live: Vec<usize> = (0..k).filter(|&p| live[p]).collect();
    let kk = live.len();
    if kk == 0 {
        return;
    }
    let panels = n.div_ceil(C);
    let mut bp = vec![[0.0f64; C]; panels * kk];
    for (q, &p) in live.iter().enumerate() {
        for (jt, chunk) in b[p * n..(p + 1) * n].chunks(C).enumerate() {
            bp[jt * kk + q][..chunk.len()].copy_from_slice(chunk);
        }
    }
    let mut ap = vec![[0.0f64; R]; kk];
    for (blk, arows) in a.chunks(R * k).enumerate() {
        let rows = arows.len() / k;
        for (r, arow) in arows.chunks_exact(k).enumerate() {
            for (dst, &p) in ap.iter_mut().zip(&live) {
                dst[r] = arow[p];
            }
        }
        for dst in &mut ap {
            dst[rows..].fill(0.0);
        }
        let out_rows = &mut out[blk * R * n..(blk * R + rows) * n];
        for (jt, panel) in bp.chunks_exact(kk).enumerate() {
            let acc = tile(&ap, panel);
            let j0 = jt * C;
            let w = C.min(n - j0);
            for (orow, acc_row) in out_rows.chunks_exact_mut(n).zip(&acc) {
                orow[j0..j0 + w].copy_from_slice(&acc_row[..w]);
            }
        }
    }
}

fn tiled<const R: usize, const C: usize>(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    // SAFETY: `micro` is safe code.
    unsafe { packed::<R, C>(a, b, out, (m, k, n), micro::<R, C>) }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    #[target_feature(enable = "avx512f,fma")]
    pub unsafe fn micro_x16<const R: usize>(ap: &[[f64; R]], bp: &[[f64; 16]]) -> [[f64; 16]; R] {
        let mut acc = [[_mm512_setzero_pd(); 2]; R];
        for (av, bv) in ap.iter().zip(bp) {
            let b0 = _mm512_loadu_pd(bv.as_ptr());
            let b1 = _mm512_loadu_pd(bv.as_ptr().add(8));
            for (acc_row, &x) in acc.iter_mut().zip(av) {
                let x = _mm512_set1_pd(x);
                acc_row[0] = _mm512_fmadd_pd(x, b0, acc_row[0]);
                acc_row[1] = _mm512_fmadd_pd(x, b1, acc_row[1]);
            }
        }
        let mut out = [[0.0; 16]; R];
        for (o, v) in out.iter_mut().zip(&acc) {
            _mm512_storeu_pd(o.as_mut_ptr(), v[0]);
            _mm512_storeu_pd(o.as_mut_ptr().add(8), v[1]);
        }
        out
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn micro_6x8(ap: &[[f64; 6]], bp: &[[f64; 8]]) -> [[f64; 8]; 6] {
        let mut acc = [[_mm256_setzero_pd(); 2]; 6];
        for (av, bv) in ap.iter().zip(bp) {
            let b0 = _mm256_loadu_pd(bv.as_ptr());
            let b1 = _mm256_loadu_pd(bv.as_ptr().add(4));
            for (acc_row, &x) in acc.iter_mut().zip(av) {
                let x = _mm256_set1_pd(x);
                acc_row[0] = _mm256_fmadd_pd(x, b0, acc_row[0]);
                acc_row[1] = _mm256_fmadd_pd(x, b1, acc_row[1]);
            }
        }
        let mut out = [[0.0; 8]; 6];
        for (o, v) in out.iter_mut().zip(&acc) {
            _mm256_storeu_pd(o.as_mut_ptr(), v[0]);
            _mm256_storeu_pd(o.as_mut_ptr().add(4), v[1]);
        }
        out
    }

    #[target_feature(enable = "avx512f,fma")]
    pub unsafe fn kernel_avx512(a: &[f64], b: &[f64], out: &mut [f64], dims: (usize, usize, usize)) {
        super::packed::<8, 16>(a, b, out, dims, micro_x16::<8>)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn kernel_avx2(a: &[f64], b: &[f64], out: &mut [f64], dims: (usize, usize, usize)) {
        super::packed::<6, 8>(a, b, out, dims, micro_6x8)
    }
}

/// `Aᵀ · B` for `A: m×k`, `B: m×n`. Each output sums over rows in ascending order.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows(), b.rows(), "matmul_tn row counts");
    let (m, k) = a.shape();
    let mut out = Matrix::zeros(k, b.cols());
    for i in 0..m {
        let a_row = a.row(i);
        let b_row = b.row(i);
        for p in 0..k {
            let v = a_row[p];
            if v != 0.0 {
                axpy(v, b_row, out.row_mut(p));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_naive_loops() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![-1.0, 0.5, 3.0]]);
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![2.0, -1.0], vec![0.0, 4.0]]);
        let c = matmul(&a, &b);
        assert_eq!(c, Matrix::from_rows(&[vec![5.0, -2.0], vec![0.0, 11.5]]));
        let d = matmul_tn(&a, &Matrix::from_rows(&[vec![1.0], vec![2.0]]));
        assert_eq!(d, Matrix::from_rows(&[vec![-1.0], vec![3.0], vec![6.0]]));
    }

    #[test]
    fn every_kernel_matches_the_row_loop_bitwise() {
        let mut seed = 7u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (seed >> 11) as f64 / (1u64 << 53) as f64;
            if u < 0.3 {
                0.0
            } else {
                (u - 0.6) * 3.0
            }
        };
        let shapes = [(1, 1, 8), (5, 3, 9), (13, 17, 24), (4, 64, 64), (9, 7, 33), (7, 5, 3), (100, 128, 4), (2, 3, 1), (3, 0, 16), (3, 0, 2), (17, 33, 130), (6, 5, 8), (0, 4, 4)];
        for (&(m, k, n), dead) in shapes.iter().flat_map(|s| [(s, false), (s, true)]) {
            let mut a = Matrix::from_vec(m, k, (0..m * k).map(|_| next()).collect());
            if dead {
                // Whole zero columns, as dead ReLU units leave.
                for (idx, v) in a.as_mut_slice().iter_mut().enumerate() {
                    if idx % k.max(1) % 4 == 2 || k == 1 {
                        *v = 0.0;
                    }
                }
            }
            let b = Matrix::from_vec(k, n, (0..k * n).map(|_| next()).collect());
            let mut want = Matrix::zeros(m, n);
            matmul_rows(a.as_slice(), b.as_slice(), want.as_mut_slice(), m, k, n);
            let got = matmul(&a, &b);
            let mut results = vec![got];
            let mut plain = Matrix::zeros(m, n);
            tiled::<4, 8>(a.as_slice(), b.as_slice(), plain.as_mut_slice(), m, k, n);
            results.push(plain);
            #[cfg(target_arch = "x86_64")]
            {
                use std::arch::is_x86_feature_detected as has;
                if has!("fma") && has!("avx2") {
                    let mut c = Matrix::zeros(m, n);
                    unsafe { x86::kernel_avx2(a.as_slice(), b.as_slice(), c.as_mut_slice(), (m, k, n)) };
                    results.push(c);
                }
                if has!("fma") && has!("avx512f") {
                    let mut c = Matrix::zeros(m, n);
                    unsafe { x86::kernel_avx512(a.as_slice(), b.as_slice(), c.as_mut_slice(), (m, k, n)) };
                    results.push(c);
                }
            }
            for (which, r) in results.iter().enumerate() {
                for (x, y) in want.as_slice().iter().zip(r.as_slice()) {
                    assert_eq!(x.to_bits(), y.to_bits(), "kernel {which} on {m}x{k}x{n}");
                }
            }
        }
    }
}
