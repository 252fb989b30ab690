//! Dense loops shared by forward and backward rules.

use crate::tensor::Scalar;

/// `c += op(a) · op(b)` with `c: [m, p]` row-major. `a` holds `[m, k]`
/// row-major, or `[k, m]` when `a_t` is set; likewise `b` holds `[k, p]` or
/// `[p, k]` when `b_t` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc<T: Scalar>(
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    m: usize,
    k: usize,
    p: usize,
) {
    assert!(a.len() >= m * k && b.len() >= k * p && c.len() >= m * p);
    if m == 0 || p == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (p as isize, 1)
    };
    // SAFETY: the assertion above bounds every strided index.
    unsafe {
        T::gemm_raw(
            m,
            k,
            p,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            c.as_mut_ptr(),
            p as isize,
            1,
        );
    }
}

/// Sum `grad` (shaped `out`) down to `shape` over broadcast axes.
pub(crate) fn reduce_broadcast<T: Scalar>(grad: &[T], out: &[usize], shape: &[usize]) -> Vec<T> {
    let numel: usize = shape.iter().product();
    if out == shape {
        return grad.to_vec();
    }
    let mut acc = vec![T::zero(); numel];
    // Trailing-suffix fast path: shape equals the last dims of out.
    if shape.len() <= out.len() && out[out.len() - shape.len()..] == *shape {
        for chunk in grad.chunks(numel.max(1)) {
            for (a, &g) in acc.iter_mut().zip(chunk) {
                *a += g;
            }
        }
        return acc;
    }
    let offsets = crate::tensor::broadcast_offsets(shape, out);
    for (g, off) in grad.iter().zip(offsets) {
        acc[off] += *g;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_small() {
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm_acc(&a, false, &b, false, &mut c, 2, 2, 2);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn reduce_sums_broadcast_axes() {
        let g = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(reduce_broadcast(&g, &[2, 3], &[3]), vec![5.0, 7.0, 9.0]);
        assert_eq!(reduce_broadcast(&g, &[2, 3], &[2, 1]), vec![6.0, 15.0]);
    }
}
