//! Dense linear-algebra helpers shared by identification and control.
//!
//! Everything here works on `nalgebra` dynamic matrices. Singular vectors are
//! returned sorted by decreasing singular value and sign-normalized so that the
//! largest-magnitude entry of each vector is real and positive; this makes every
//! downstream result reproducible bit for bit.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{KronicError, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Singular values (descending) and the matching right singular vectors as columns.
#[derive(Debug, Clone)]
pub struct RightSvd {
    pub singular_values: Vec<f64>,
    pub v: CMatrix,
}

impl RightSvd {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn sigma_min(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(0.0)
    }

    /// Right singular vector belonging to the smallest singular value.
    pub fn smallest(&self) -> CVector {
        self.v.column(self.v.ncols() - 1).into_owned()
    }
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Rotate `v` so that its largest-magnitude entry is real and positive.
/// Ties resolve to the lowest index.
pub fn normalize_phase(v: &mut CVector) {
    let mut best = 0;
    let mut best_abs = -1.0;
    for (i, z) in v.iter().enumerate() {
        let a = z.norm();
        if a > best_abs * (1.0 + 1e-12) {
            best = i;
            best_abs = a;
        }
    }
    if best_abs > 0.0 {
        let phase = v[best].conj() / best_abs;
        v.iter_mut().for_each(|z| *z *= phase);
    }
}

/// Full set of right singular vectors of `m` (p columns for an m x p input),
/// including the null-space directions when m < p.
pub fn right_svd(m: &CMatrix) -> Result<RightSvd> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Err(KronicError::DimensionMismatch(
            "matrix has no columns".into(),
        ));
    }
    // Tall inputs are compressed to their R factor first; short inputs are padded
    // with zero rows so the decomposition yields all p right singular vectors.
    let square = if rows > cols {
        m.clone().qr().r()
    } else if rows < cols {
        let mut padded = CMatrix::zeros(cols, cols);
        padded.rows_mut(0, rows).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = square
        .try_svd(false, true, f64::EPSILON, 0)
        .ok_or_else(|| KronicError::Eigensolver("SVD did not converge".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| KronicError::Eigensolver("SVD returned no right vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut v = CMatrix::zeros(cols, order.len());
    let mut sv = Vec::with_capacity(order.len());
    for (j, &k) in order.iter().enumerate() {
        let mut col: CVector = v_t.row(k).adjoint().into_owned();
        normalize_phase(&mut col);
        v.set_column(j, &col);
        sv.push(svd.singular_values[k]);
    }
    Ok(RightSvd {
        singular_values: sv,
        v,
    })
}

/// Moore-Penrose pseudoinverse with singular values below `rcond * sigma_max` dropped.
pub fn pinv(m: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| KronicError::Eigensolver("SVD did not converge".into()))?;
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Err(KronicError::DegenerateData("matrix is identically zero".into()));
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rcond * smax {
            out += v_t.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    Ok(out)
}

/// Eigenpairs of a real square matrix. Eigenvectors come from the right null
/// space of `K - lambda I`; clusters of (numerically) repeated eigenvalues take
/// successive smallest singular vectors so that independent directions are kept.
pub fn eigenpairs(k: &DMatrix<f64>) -> Result<Vec<(Complex64, CVector)>> {
    if !k.is_square() {
        return Err(KronicError::DimensionMismatch(format!(
            "eigenproblem needs a square matrix, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    let n = k.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(KronicError::Eigensolver("matrix has non-finite entries".into()));
    }
    let eig = k
        .clone()
        .try_schur(f64::EPSILON, 0)
        .ok_or_else(|| KronicError::Eigensolver("Schur iteration did not converge".into()))?
        .complex_eigenvalues();
    let scale = k.norm().max(1.0);
    let kc = to_complex(k);
    let mut out: Vec<(Complex64, CVector)> = Vec::with_capacity(n);
    for (i, &lambda) in eig.iter().enumerate() {
        let multiplicity_before = eig
            .iter()
            .take(i)
            .filter(|&&mu| (mu - lambda).norm() <= 1e-8 * scale)
            .count();
        let shifted = &kc - CMatrix::identity(n, n) * lambda;
        let svd = right_svd(&shifted)?;
        let col = n - 1 - multiplicity_before.min(n - 1);
        let mut v: CVector = svd.v.column(col).into_owned();
        let norm = v.norm();
        if norm > 0.0 {
            v /= Complex64::new(norm, 0.0);
        }
        normalize_phase(&mut v);
        out.push((lambda, v));
    }
    Ok(out)
}

/// Ordered real Schur decomposition `H = Z T Z^T` with the blocks whose
/// eigenvalues satisfy `select` moved to the leading positions.
/// Returns `(Z, T, k)` where the first `k` columns of `Z` span the selected
/// invariant subspace.
pub fn ordered_real_schur(
    h: &DMatrix<f64>,
    select: impl Fn(Complex64) -> bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    let n = h.nrows();
    let schur = nalgebra::linalg::Schur::try_new(h.clone(), f64::EPSILON, 0)
        .ok_or_else(|| KronicError::Eigensolver("real Schur iteration did not converge".into()))?;
    let (mut z, mut t) = schur.unpack();

    for i in 0..n.saturating_sub(1) {
        let small = f64::EPSILON * (t[(i, i)].abs() + t[(i + 1, i + 1)].abs());
        if t[(i + 1, i)].abs() <= small {
            t[(i + 1, i)] = 0.0;
        }
    }
    for j in 0..n {
        for i in (j + 2)..n {
            t[(i, j)] = 0.0;
        }
    }

    // Block structure; 2x2 blocks with a real spectrum are split.
    let mut blocks: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            if split_real_block(&mut t, &mut z, i) {
                blocks.push(1);
                blocks.push(1);
            } else {
                blocks.push(2);
            }
            i += 2;
        } else {
            blocks.push(1);
            i += 1;
        }
    }

    let block_selected = |t: &DMatrix<f64>, start: usize, size: usize| -> bool {
        block_eigenvalues(t, start, size).into_iter().all(&select)
    };

    // Bubble every selected block to the front, preserving relative order.
    let mut insert_pos = 0usize; // block index
    let mut idx = 0usize;
    while idx < blocks.len() {
        let start: usize = blocks[..idx].iter().sum();
        if block_selected(&t, start, blocks[idx]) {
            let mut j = idx;
            while j > insert_pos {
                let s: usize = blocks[..j - 1].iter().sum();
                let p = blocks[j - 1];
                let q = blocks[j];
                swap_blocks(&mut t, &mut z, s, p, q)?;
                blocks.swap(j - 1, j);
                j -= 1;
            }
            insert_pos += 1;
        }
        idx += 1;
    }
    let k: usize = blocks[..insert_pos].iter().sum();
    Ok((z, t, k))
}

fn block_eigenvalues(t: &DMatrix<f64>, start: usize, size: usize) -> Vec<Complex64> {
    if size == 1 {
        return vec![Complex64::new(t[(start, start)], 0.0)];
    }
    let (a, b, c, d) = (
        t[(start, start)],
        t[(start, start + 1)],
        t[(start + 1, start)],
        t[(start + 1, start + 1)],
    );
    let half_tr = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc >= 0.0 {
        let r = disc.sqrt();
        vec![Complex64::new(half_tr + r, 0.0), Complex64::new(half_tr - r, 0.0)]
    } else {
        let r = (-disc).sqrt();
        vec![Complex64::new(half_tr, r), Complex64::new(half_tr, -r)]
    }
}

/// Triangularize a 2x2 diagonal block with real eigenvalues by a Givens rotation.
/// Returns false (and leaves the block alone) when the eigenvalues are complex.
fn split_real_block(t: &mut DMatrix<f64>, z: &mut DMatrix<f64>, i: usize) -> bool {
    let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc < 0.0 {
        return false;
    }
    let half_tr = 0.5 * (a + d);
    let lambda = half_tr + disc.sqrt();
    // eigenvector of [[a,b],[c,d]] for lambda
    let (mut x, mut y) = if (lambda - a).abs() + b.abs() > (lambda - d).abs() + c.abs() {
        (b, lambda - a)
    } else {
        (lambda - d, c)
    };
    let nrm = x.hypot(y);
    if nrm == 0.0 {
        return false;
    }
    x /= nrm;
    y /= nrm;
    let g = nalgebra::Matrix2::new(x, -y, y, x);
    apply_orthogonal(t, z, i, &DMatrix::from_column_slice(2, 2, g.as_slice()));
    t[(i + 1, i)] = 0.0;
    true
}

/// T <- G^T T G on rows/cols [s, s+k), Z <- Z G.
fn apply_orthogonal(t: &mut DMatrix<f64>, z: &mut DMatrix<f64>, s: usize, g: &DMatrix<f64>) {
    let k = g.nrows();
    let n = t.nrows();
    let rows = g.transpose() * t.view((s, 0), (k, n));
    t.view_mut((s, 0), (k, n)).copy_from(&rows);
    let cols = t.view((0, s), (n, k)) * g;
    t.view_mut((0, s), (n, k)).copy_from(&cols);
    let zc = z.view((0, s), (n, k)) * g;
    z.view_mut((0, s), (n, k)).copy_from(&zc);
}

/// Swap adjacent diagonal blocks of sizes `p` (at `s`) and `q` (at `s + p`).
fn swap_blocks(
    t: &mut DMatrix<f64>,
    z: &mut DMatrix<f64>,
    s: usize,
    p: usize,
    q: usize,
) -> Result<()> {
    let t11 = t.view((s, s), (p, p)).into_owned();
    let t22 = t.view((s + p, s + p), (q, q)).into_owned();
    let t12 = t.view((s, s + p), (p, q)).into_owned();
    // T11 X - X T22 = T12, vectorized column-major.
    let dim = p * q;
    let mut kron = DMatrix::<f64>::zeros(dim, dim);
    for col in 0..q {
        for row in 0..p {
            let r = col * p + row;
            for k in 0..p {
                kron[(r, col * p + k)] += t11[(row, k)];
            }
            for k in 0..q {
                kron[(r, k * p + row)] -= t22[(k, col)];
            }
        }
    }
    let rhs = DVector::from_column_slice(t12.as_slice());
    let x = kron
        .lu()
        .solve(&rhs)
        .ok_or_else(|| KronicError::Eigensolver("block swap with shared eigenvalues".into()))?;
    let x = DMatrix::from_column_slice(p, q, x.as_slice());

    let m = p + q;
    let mut basis = DMatrix::<f64>::zeros(m, q + m);
    basis.view_mut((0, 0), (p, q)).copy_from(&(-x));
    basis
        .view_mut((p, 0), (q, q))
        .copy_from(&DMatrix::identity(q, q));
    basis
        .view_mut((0, q), (m, m))
        .copy_from(&DMatrix::identity(m, m));
    let g = basis.qr().q();
    let g = g.columns(0, m).into_owned();
    apply_orthogonal(t, z, s, &g);
    for j in 0..q {
        for i in q..m {
            t[(s + i, s + j)] = 0.0;
        }
    }
    Ok(())
}

/// Popov-Belevitch-Hautus test: true if `[A - lambda I, B]` loses rank.
pub fn pbh_rank_deficient(a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: Complex64, tol: f64) -> Result<bool> {
    let n = a.nrows();
    let mut m = CMatrix::zeros(n, n + b.ncols());
    m.view_mut((0, 0), (n, n))
        .copy_from(&(to_complex(a) - CMatrix::identity(n, n) * lambda));
    m.view_mut((0, n), (n, b.ncols())).copy_from(&to_complex(b));
    // singular values of the n x (n+q) block via its adjoint (tall)
    let svd = right_svd(&m.adjoint())?;
    let scale = a.norm().max(b.norm()).max(1.0);
    Ok(svd.sigma_min() <= tol * scale)
}

/// Solve `A^T X + X A + Q = 0` for X by Kronecker vectorization (small sizes only).
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let kron = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let x = kron
        .lu()
        .solve(&rhs)
        .ok_or_else(|| KronicError::Eigensolver("singular Lyapunov operator".into()))?;
    Ok(DMatrix::from_column_slice(n, n, x.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn svd_handles_short_matrices() {
        let m = to_complex(&DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]));
        let svd = right_svd(&m).unwrap();
        assert_eq!(svd.singular_values.len(), 3);
        assert_relative_eq!(svd.sigma_max(), 1.0, epsilon = 1e-14);
        assert!(svd.sigma_min() < 1e-14);
        assert!(svd.smallest()[0].norm() < 1e-14);
    }

    #[test]
    fn phase_normalization_makes_peak_positive() {
        let mut v = CVector::from_vec(vec![
            Complex64::new(0.1, 0.0),
            Complex64::new(0.0, -2.0),
        ]);
        normalize_phase(&mut v);
        assert_relative_eq!(v[1].re, 2.0, epsilon = 1e-14);
        assert!(v[1].im.abs() < 1e-14);
    }

    #[test]
    fn pinv_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let p = pinv(&m, 1e-10).unwrap();
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(p[(1, 1)], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn eigenpairs_of_rotation_generator() {
        let k = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let pairs = eigenpairs(&k).unwrap();
        for (lambda, v) in pairs {
            assert_relative_eq!(lambda.norm(), 1.0, epsilon = 1e-12);
            let kv = to_complex(&k) * &v;
            assert!((kv - v * lambda).norm() < 1e-12);
        }
    }

    #[test]
    fn repeated_eigenvalues_get_independent_vectors() {
        let k = DMatrix::<f64>::identity(3, 3) * 2.0;
        let pairs = eigenpairs(&k).unwrap();
        let mut basis = CMatrix::zeros(3, 3);
        for (j, (_, v)) in pairs.iter().enumerate() {
            basis.set_column(j, v);
        }
        assert!(basis.determinant().norm() > 0.5);
    }

    #[test]
    fn ordered_schur_moves_stable_block_first() {
        let h = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 2.0, 0.0, 1.0, //
                0.0, 3.0, 1.0, 0.0, //
                0.0, 0.0, -1.0, 5.0, //
                0.0, 0.0, -5.0, -1.0,
            ],
        );
        let (z, t, k) = ordered_real_schur(&h, |l| l.re < 0.0).unwrap();
        assert_eq!(k, 2);
        assert!((&z * &t * z.transpose() - &h).norm() < 1e-12);
        assert!((z.transpose() * &z - DMatrix::identity(4, 4)).norm() < 1e-12);
        let lead = block_eigenvalues(&t, 0, 2);
        assert!(lead.iter().all(|l| l.re < 0.0));
        assert!(t[(2, 1)].abs() < 1e-14 && t[(3, 0)].abs() < 1e-14 && t[(3, 1)].abs() < 1e-14);
    }

    #[test]
    fn lyapunov_scalar() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let q = DMatrix::from_element(1, 1, 2.0);
        let x = solve_lyapunov(&a, &q).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-14);
    }
}
