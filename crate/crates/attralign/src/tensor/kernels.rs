//! Raw matrix kernels. Storage is f32; every inner reduction accumulates in
//! f64. Each output element is produced by exactly one sequential loop, so
//! results are bit-identical regardless of how callers partition the rows.

/// out[m,n] = a[m,k] · b[k,n]
pub fn matmul_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let aik = aik as f64;
            let brow = &b[kk * n..(kk + 1) * n];
            for (slot, &bv) in acc.iter_mut().zip(brow) {
                *slot += aik * bv as f64;
            }
        }
        let orow = &mut out[i * n..(i + 1) * n];
        for (o, &v) in orow.iter_mut().zip(acc.iter()) {
            *o = v as f32;
        }
    }
}

/// out[m,n] = a[m,k] · b[n,k]ᵀ  (rows of `b` are dotted against rows of `a`)
pub fn matmul_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut sum = 0.0f64;
            for (&av, &bv) in arow.iter().zip(brow) {
                sum += av as f64 * bv as f64;
            }
            *o = sum as f32;
        }
    }
}

/// out[k,n] += a[m,k]ᵀ · b[m,n], accumulated in a caller-provided f64 buffer.
///
/// Used for weight gradients: the f64 buffer spans the whole output so the
/// accumulation across the m axis stays in 64-bit until the final store.
pub fn matmul_tn_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, acc: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(acc.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let av = av as f64;
            let crow = &mut acc[kk * n..(kk + 1) * n];
            for (slot, &bv) in crow.iter_mut().zip(brow) {
                *slot += av * bv as f64;
            }
        }
    }
}

/// Add `src` (f64) into `dst` (f32) elementwise.
pub fn add_f64_into_f32(dst: &mut [f32], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (*d as f64 + s) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_nn_identity() {
        let a = [1.0, 0.0, 0.0, 1.0];
        let b = [3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0f32; 4];
        matmul_nn(&a, &b, 2, 2, 2, &mut out);
        assert_eq!(out, b);
    }

    #[test]
    fn matmul_nn_hand_case() {
        // [[1,2]] x [[3],[4]] = [[11]]
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        let mut out = [0.0f32; 1];
        matmul_nn(&a, &b, 1, 2, 1, &mut out);
        assert_eq!(out[0], 11.0);
    }

    #[test]
    fn nt_matches_nn_with_transposed_b() {
        let a: Vec<f32> = (0..6).map(|i| i as f32 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f32> = (0..12).map(|i| (i as f32).sin()).collect(); // 3x4
        let mut bt = vec![0.0f32; 12]; // 4x3
        for r in 0..3 {
            for c in 0..4 {
                bt[c * 3 + r] = b[r * 4 + c];
            }
        }
        let mut out_nn = vec![0.0f32; 8];
        let mut out_nt = vec![0.0f32; 8];
        matmul_nn(&a, &b, 2, 3, 4, &mut out_nn);
        matmul_nt(&a, &bt, 2, 3, 4, &mut out_nt);
        for (x, y) in out_nn.iter().zip(&out_nt) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn tn_accumulates_transpose_product() {
        let a = [1.0f32, 2.0, 3.0, 4.0]; // 2x2
        let b = [5.0f32, 6.0, 7.0, 8.0]; // 2x2
        let mut acc = vec![0.0f64; 4];
        matmul_tn_acc(&a, &b, 2, 2, 2, &mut acc);
        // aT·b = [[1,3],[2,4]]·[[5,6],[7,8]] = [[26,30],[38,44]]
        assert_eq!(acc, vec![26.0, 30.0, 38.0, 44.0]);
    }
}
