//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::C64;

/// Thin SVD `a = u diag(s) v^H` with singular values sorted in nonincreasing
/// order. Tall matrices are reduced by QR first, wide ones by transposition.
pub(crate) struct ThinSvd {
    pub u: DMatrix<C64>,
    pub s: Vec<f64>,
    pub v: DMatrix<C64>,
}

pub(crate) fn thin_svd(a: &DMatrix<C64>) -> ThinSvd {
    let (m, n) = a.shape();
    if m < n {
        let t = thin_svd(&a.adjoint());
        return ThinSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let qr = a.clone().qr();
    let (q, r) = qr.unpack();
    let svd = r.svd(true, true);
    let u_r = svd.u.expect("requested u");
    let v_t = svd.v_t.expect("requested v_t");
    let u_full = q * u_r;
    let v_full = v_t.adjoint();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(m, n, |r, c| u_full[(r, order[c])]);
    let v = DMatrix::from_fn(n, n, |r, c| v_full[(r, order[c])]);
    ThinSvd { u, s, v }
}

fn norm1(a: &DMatrix<C64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn sign_vec(y: &DVector<C64>) -> DVector<C64> {
    y.map(|v| {
        let r = v.norm();
        if r == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            v / r
        }
    })
}

/// Hager-Higham estimate of the 1-norm condition number of `a`.
///
/// Returns `None` when `a` is exactly singular.
pub(crate) fn condition_estimate_1(a: &DMatrix<C64>) -> Option<f64> {
    let n = a.nrows();
    let lu = a.clone().lu();
    let lu_h = a.adjoint().lu();
    if !lu.is_invertible() || !lu_h.is_invertible() {
        return None;
    }
    let solve = |b: &DVector<C64>| lu.solve(b);
    let solve_h = |b: &DVector<C64>| lu_h.solve(b);

    let mut x = DVector::from_element(n, C64::new(1.0 / n as f64, 0.0));
    let mut est = 0.0f64;
    let mut last_j = usize::MAX;
    for _ in 0..5 {
        let y = solve(&x)?;
        est = est.max(y.iter().map(|v| v.norm()).sum());
        let z = solve_h(&sign_vec(&y))?;
        let (j, zmax) = z
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        let ztx = z.dotc(&x).re;
        if zmax <= ztx || j == last_j {
            break;
        }
        x = DVector::zeros(n);
        x[j] = C64::new(1.0, 0.0);
        last_j = j;
    }
    // alternating probe guards against the classic failure cases
    if n > 1 {
        let b = DVector::from_fn(n, |i, _| {
            let sgn = if i % 2 == 0 { 1.0 } else { -1.0 };
            C64::new(sgn * (1.0 + i as f64 / (n - 1) as f64), 0.0)
        });
        let y = solve(&b)?;
        let alt = 2.0 * y.iter().map(|v| v.norm()).sum::<f64>() / (3.0 * n as f64);
        est = est.max(alt);
    }
    Some(norm1(a) * est)
}
