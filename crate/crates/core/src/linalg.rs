//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn cmat(rows: usize, cols: usize, data: &[C64]) -> CMatrix {
    CMatrix::from_row_slice(rows, cols, data)
}

/// Real-valued matrix literal, row major.
pub fn rmat(rows: usize, cols: usize, data: &[f64]) -> CMatrix {
    CMatrix::from_row_iterator(rows, cols, data.iter().map(|&x| c(x, 0.0)))
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

/// Standard Kronecker product: `a` occupies the high-order index bits.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Kronecker product in little-endian qubit order: `ops[0]` acts on the
/// least significant index bit.
pub fn kron_le(ops: &[&CMatrix]) -> CMatrix {
    let mut out = CMatrix::identity(1, 1);
    for op in ops {
        out = op.kronecker(&out);
    }
    out
}

pub fn dagger(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// `max |U†U − I|`.
pub fn unitarity_error(u: &CMatrix) -> f64 {
    if !u.is_square() {
        return f64::INFINITY;
    }
    max_abs_diff(&(u.adjoint() * u), &identity(u.nrows()))
}

pub fn hermiticity_error(m: &CMatrix) -> f64 {
    max_abs_diff(m, &m.adjoint())
}

pub fn trace(m: &CMatrix) -> C64 {
    m.trace()
}

/// Distance between two operators after removing the best global phase.
pub fn phase_insensitive_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let overlap = (b.adjoint() * a).trace();
    let phase = if overlap.norm() > 1e-300 {
        overlap / overlap.norm()
    } else {
        ONE
    };
    max_abs_diff(a, &(b * phase))
}

/// Hermitian eigendecomposition; eigenvalues ascending.
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let herm = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// Apply `f` to the eigenvalues of a Hermitian matrix.
pub fn hermitian_map(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = eigh(m);
    let d = CMatrix::from_diagonal(&CVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| c(f(v), 0.0)),
    ));
    &vecs * d * vecs.adjoint()
}

pub fn is_power_of_two(n: usize) -> Option<usize> {
    if n == 0 || n & (n - 1) != 0 {
        None
    } else {
        Some(n.trailing_zeros() as usize)
    }
}

/// Row-major `(re, im)` pairs, the on-disk matrix layout.
pub fn to_pairs(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|k| [m[(r, k)].re, m[(r, k)].im]).collect())
        .collect()
}

pub fn from_pairs(rows: &[Vec<[f64; 2]>]) -> CMatrix {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    CMatrix::from_fn(n, m, |r, k| c(rows[r][k][0], rows[r][k][1]))
}

/// Haar-random unitary: QR of a complex Gaussian matrix with the phases
/// of `R`'s diagonal moved into `Q`.
pub fn haar_unitary<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    use rand_distr::{Distribution, StandardNormal};
    let z = CMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(re, im) / 2f64.sqrt()
    });
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..dim {
            q[(i, j)] *= ph;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_le_puts_first_operator_on_low_bit() {
        let x = rmat(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let id = identity(2);
        // X on qubit 0: |00> (index 0) -> |01> in little-endian, i.e. index 1.
        let m = kron_le(&[&x, &id]);
        assert_eq!(m[(1, 0)], ONE);
        assert_eq!(m[(2, 0)], ZERO);
    }

    #[test]
    fn rmat_is_row_major() {
        let m = rmat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m[(0, 1)], c(2.0, 0.0));
        assert_eq!(m[(1, 0)], c(3.0, 0.0));
    }

    #[test]
    fn eigh_sorts_and_reconstructs() {
        let m = cmat(2, 2, &[c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)]);
        let (vals, vecs) = eigh(&m);
        assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
        let d = CMatrix::from_diagonal(&CVector::from_vec(vals.iter().map(|&v| c(v, 0.0)).collect()));
        assert!(max_abs_diff(&(&vecs * d * vecs.adjoint()), &m) < 1e-12);
    }
}
