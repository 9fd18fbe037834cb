// Raw kernels over row-major f64 buffers. Shapes are validated by callers.

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * shape[i + 1];
    }
    st
}

/// General `out[m,n] += a · b` with explicit element strides
/// (row stride, column stride) for each operand.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], (rsa, csa): (usize, usize), b: &[f64], (rsb, csb): (usize, usize), out: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    // SAFETY: the asserts above bound every index reachable through the
    // given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// out[m,n] += a[m,k] · b[k,n]
pub fn mm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(m, k, n, a, (k, 1), b, (n, 1), out);
}

/// out[m,n] += a[m,k] · b[n,k]ᵀ
pub fn mm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(m, k, n, a, (k, 1), b, (1, k), out);
}

/// out[m,n] += a[k,m]ᵀ · b[k,n]
pub fn mm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(m, k, n, a, (1, m), b, (n, 1), out);
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax along one axis, using max subtraction.
pub fn softmax_in_place(data: &mut [f64], shape: &[usize], axis: usize) {
    let (outer, len, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for t in 0..len {
                max = max.max(data[base + t * inner]);
            }
            let mut sum = 0.0;
            for t in 0..len {
                let e = (data[base + t * inner] - max).exp();
                data[base + t * inner] = e;
                sum += e;
            }
            for t in 0..len {
                data[base + t * inner] /= sum;
            }
        }
    }
}

/// Gathers `src` (shape `shape`) into the axis order given by `perm`.
pub fn permute(src: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() || rank == 0 {
        out.extend_from_slice(src);
        return (out, out_shape);
    }
    // Walk output rows; the innermost output axis is a strided run in `src`.
    let last = rank - 1;
    let (run, step) = (out_shape[last], src_strides[last]);
    let mut idx = vec![0usize; last];
    let mut offset = 0usize;
    for _ in 0..src.len() / run {
        if step == 1 {
            out.extend_from_slice(&src[offset..offset + run]);
        } else {
            out.extend((0..run).map(|j| src[offset + j * step]));
        }
        for d in (0..last).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_transposes_matrix() {
        let (out, shape) = permute(&[1., 2., 3., 4., 5., 6.], &[2, 3], &[1, 0]);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(out, vec![1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn permute_roundtrips_through_inverse() {
        let src: Vec<f64> = (0..24).map(f64::from).collect();
        let perm = [2, 0, 3, 1];
        let (out, shape) = permute(&src, &[2, 3, 2, 2], &perm);
        let (back, back_shape) = permute(&out, &shape, &inverse_permutation(&perm));
        assert_eq!(back_shape, vec![2, 3, 2, 2]);
        assert_eq!(back, src);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = [1., 2., 3., 4., 5., 6.]; // [2,3]
        let b = [7., 8., 9., 10., 11., 12.]; // [3,2]
        let mut nn = vec![0.; 4];
        mm_nn(&a, &b, &mut nn, 2, 3, 2);
        assert_eq!(nn, vec![58., 64., 139., 154.]);
        let (bt, _) = permute(&b, &[3, 2], &[1, 0]);
        let mut nt = vec![0.; 4];
        mm_nt(&a, &bt, &mut nt, 2, 3, 2);
        assert_eq!(nt, nn);
        let (at, _) = permute(&a, &[2, 3], &[1, 0]);
        let mut tn = vec![0.; 4];
        mm_tn(&at, &b, &mut tn, 2, 3, 2);
        assert_eq!(tn, nn);
    }
}
