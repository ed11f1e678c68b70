//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Seeded generator used everywhere randomness is needed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix with i.i.d. standard-normal entries, filled row by row.
pub fn randn<R: rand::Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Mat::from_row_slice(rows, cols, &data)
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn frob_inner(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn diag(v: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_column_slice(v))
}

/// `m · diag(v)`: scales column j of `m` by `v[j]`.
pub fn scale_cols(m: &Mat, v: &[f64]) -> Mat {
    let mut out = m.clone();
    for (j, s) in v.iter().enumerate() {
        out.column_mut(j).scale_mut(*s);
    }
    out
}

/// `diag(v) · m`: scales row i of `m` by `v[i]`.
pub fn scale_rows(m: &Mat, v: &[f64]) -> Mat {
    let mut out = m.clone();
    for (i, s) in v.iter().enumerate() {
        out.row_mut(i).scale_mut(*s);
    }
    out
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Mat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * aij));
        }
    }
    out
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Flip each column so that its first entry with magnitude above 1e-12 is positive.
/// Returns the applied signs.
pub fn fix_column_signs(m: &mut Mat) -> Vec<f64> {
    let mut signs = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let lead = m.column(j).iter().copied().find(|v| v.abs() > 1e-12).unwrap_or(1.0);
        let s = if lead < 0.0 { -1.0 } else { 1.0 };
        if s < 0.0 {
            m.column_mut(j).neg_mut();
        }
        signs.push(s);
    }
    signs
}

/// Compact SVD `m = u · diag(s) · vᵀ` with descending singular values and the
/// first significant entry of every left singular vector positive.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

pub fn svd(m: &Mat) -> Svd {
    // nalgebra's iteration does not terminate on non-finite input.
    assert!(is_finite(m), "SVD of a non-finite matrix");
    let dec = m.clone().svd(true, true);
    let u0 = dec.u.expect("u requested");
    let v0 = dec.v_t.expect("v_t requested").transpose();
    let s0 = dec.singular_values;
    let mut order: Vec<usize> = (0..s0.len()).collect();
    order.sort_by(|&a, &b| s0[b].total_cmp(&s0[a]));
    let mut u = Mat::zeros(u0.nrows(), order.len());
    let mut v = Mat::zeros(v0.nrows(), order.len());
    let mut s = Vec::with_capacity(order.len());
    for (k, &j) in order.iter().enumerate() {
        u.set_column(k, &u0.column(j));
        v.set_column(k, &v0.column(j));
        s.push(s0[j]);
    }
    let signs = fix_column_signs(&mut u);
    for (k, sg) in signs.iter().enumerate() {
        if *sg < 0.0 {
            v.column_mut(k).neg_mut();
        }
    }
    Svd { u, s, v }
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Descending singular values; all NaN when `m` has a non-finite entry.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if !is_finite(m) {
        return vec![f64::NAN; m.nrows().min(m.ncols())];
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Orthonormal basis of the complement of the column span of the orthonormal `q`.
pub fn orth_complement(q: &Mat) -> Mat {
    let n = q.nrows();
    let k = q.ncols();
    if k >= n {
        return Mat::zeros(n, 0);
    }
    let proj = Mat::identity(n, n) - q * q.transpose();
    let eig = SymmetricEigen::new(symmetrize(&proj));
    let mut cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    cols.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = Mat::zeros(n, cols.len());
    for (c, &i) in cols.iter().enumerate() {
        out.set_column(c, &eig.eigenvectors.column(i));
    }
    fix_column_signs(&mut out);
    out
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian with the diagonal of R made positive.
pub fn random_orthogonal<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Mat {
    let g = randn(n, n, rng);
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let signs: Vec<f64> = (0..n).map(|i| if r[(i, i)] < 0.0 { -1.0 } else { 1.0 }).collect();
    scale_cols(&q, &signs)
}

/// Moore-Penrose pseudoinverse, dropping singular values below `rel_cutoff · σ_max`.
pub fn pinv(m: &Mat, rel_cutoff: f64) -> Mat {
    let d = svd(m);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let inv: Vec<f64> =
        d.s.iter().map(|&s| if s > rel_cutoff * smax && s > 0.0 { 1.0 / s } else { 0.0 }).collect();
    scale_cols(&d.v, &inv) * d.u.transpose()
}

/// Ratio of largest to smallest singular value (infinite when singular).
pub fn condition_number(m: &Mat) -> f64 {
    if !is_finite(m) {
        return f64::INFINITY;
    }
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Solve `a · x = b` for square `a`.
pub fn solve(a: &Mat, b: &Mat) -> Option<Mat> {
    a.clone().lu().solve(b)
}

pub fn to_row_major(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_row_major(rows: &[Vec<f64>]) -> Option<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Some(Mat::from_row_slice(nrows, ncols, &flat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_reconstructs_and_orders() {
        let mut r = rng(3);
        let m = randn(4, 6, &mut r);
        let d = svd(&m);
        assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        let rec = scale_cols(&d.u, &d.s) * d.v.transpose();
        assert!(max_abs_diff(&rec, &m) < 1e-12);
        for j in 0..d.u.ncols() {
            let lead = d.u.column(j).iter().copied().find(|v| v.abs() > 1e-12).unwrap();
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn complement_is_orthonormal() {
        let mut r = rng(5);
        let q = random_orthogonal(5, &mut r).columns(0, 2).into_owned();
        let c = orth_complement(&q);
        assert_eq!(c.shape(), (5, 3));
        let full = Mat::from_fn(5, 5, |i, j| if j < 2 { q[(i, j)] } else { c[(i, j - 2)] });
        assert!(max_abs_diff(&(full.transpose() * &full), &Mat::identity(5, 5)) < 1e-10);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let q = random_orthogonal(6, &mut rng(9));
        assert!(max_abs_diff(&(q.transpose() * &q), &Mat::identity(6, 6)) < 1e-12);
    }

    #[test]
    fn kron_matches_definition() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Mat::identity(2, 2);
        let k = kron(&a, &b);
        assert_eq!(k[(0, 2)], 2.0);
        assert_eq!(k[(3, 1)], 3.0);
        assert_eq!(k[(3, 3)], 4.0);
        assert_eq!(k[(0, 1)], 0.0);
    }

    #[test]
    fn pinv_inverts_full_rank() {
        let m = randn(3, 3, &mut rng(1));
        let p = pinv(&m, 1e-10);
        assert!(max_abs_diff(&(p * &m), &Mat::identity(3, 3)) < 1e-10);
    }
}
