// Matrix kernels. All of them accumulate each output element strictly in
// index order of the reduction dimension, so results are bit-reproducible.

const TILE_R: usize = 4;
const TILE_C: usize = 8;

/// `out[r][c] += Σ_p a(r, p) · b[p][c]` for `r < rows`, `p < red`, `c < cols`.
/// Full 4×8 tiles keep their accumulators in registers for the whole
/// reduction; edges use a scalar loop with the same summation order.
#[inline(always)]
fn gemm_acc<A: Fn(usize, usize) -> f64>(rows: usize, red: usize, cols: usize, a: A, b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(b.len(), red * cols);
    debug_assert_eq!(out.len(), rows * cols);
    let full_r = rows - rows % TILE_R;
    let full_c = cols - cols % TILE_C;
    for r0 in (0..full_r).step_by(TILE_R) {
        for c0 in (0..full_c).step_by(TILE_C) {
            let mut acc = [[0.0; TILE_C]; TILE_R];
            for (i, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(r0 + i) * cols + c0..][..TILE_C]);
            }
            for p in 0..red {
                let bp: &[f64; TILE_C] = b[p * cols + c0..][..TILE_C].try_into().expect("tile width");
                let x = [a(r0, p), a(r0 + 1, p), a(r0 + 2, p), a(r0 + 3, p)];
                for (row, &xv) in acc.iter_mut().zip(&x) {
                    for (v, &bv) in row.iter_mut().zip(bp) {
                        *v += xv * bv;
                    }
                }
            }
            for (i, row) in acc.iter().enumerate() {
                out[(r0 + i) * cols + c0..][..TILE_C].copy_from_slice(row);
            }
        }
    }
    let edge = |r: usize, c: usize, out: &mut [f64]| {
        let mut v = out[r * cols + c];
        for p in 0..red {
            v += a(r, p) * b[p * cols + c];
        }
        out[r * cols + c] = v;
    };
    for r in 0..full_r {
        for c in full_c..cols {
            edge(r, c, out);
        }
    }
    for r in full_r..rows {
        for c in 0..cols {
            edge(r, c, out);
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    out.fill(0.0);
    gemm_acc(m, k, n, |i, p| a[i * k + p], b, out);
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
pub(crate) fn matmul_tn_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    gemm_acc(k, m, n, |p, i| a[i * k + p], g, out);
}

pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_nt_acc(g: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(g.len(), m * n);
    let bt = transpose(b, k, n);
    gemm_acc(m, n, k, |i, j| g[i * n + j], &bt, out);
}
