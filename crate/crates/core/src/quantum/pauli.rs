use std::fmt;

use serde::{Deserialize, Serialize};

use super::gates;
use crate::error::{Error, Result};
use crate::linalg::{c, is_power_of_two, CMatrix, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> CMatrix {
        match self {
            Pauli::I => gates::id2(),
            Pauli::X => gates::x(),
            Pauli::Y => gates::y(),
            Pauli::Z => gates::z(),
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn letter(self) -> char {
        ['I', 'X', 'Y', 'Z'][self.index()]
    }
}

/// Tensor product of single-qubit Paulis; `factors[k]` acts on qubit `k`.
///
/// The basis index is `Σ_k p_k 4^k`. Labels are printed with the highest
/// qubit first so that lexicographic label order (`II, IX, …, ZZ`) equals
/// index order and the label reads like the Kronecker product it denotes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliString {
    pub factors: Vec<Pauli>,
}

impl PauliString {
    pub fn from_index(index: usize, n_qubits: usize) -> Self {
        let factors = (0..n_qubits)
            .map(|k| Pauli::ALL[(index >> (2 * k)) & 3])
            .collect();
        PauliString { factors }
    }

    pub fn index(&self) -> usize {
        self.factors
            .iter()
            .enumerate()
            .map(|(k, p)| p.index() << (2 * k))
            .sum()
    }

    pub fn n_qubits(&self) -> usize {
        self.factors.len()
    }

    /// Parse a label such as `"XZ"` (Z on qubit 0, X on qubit 1).
    pub fn from_label(label: &str) -> Result<Self> {
        let factors = label
            .chars()
            .rev()
            .map(|ch| match ch {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                _ => Err(Error::InvalidParameter(format!("bad Pauli label `{label}`"))),
            })
            .collect::<Result<_>>()?;
        Ok(PauliString { factors })
    }

    pub fn label(&self) -> String {
        self.factors.iter().rev().map(|p| p.letter()).collect()
    }

    pub fn matrix(&self) -> CMatrix {
        let mut out = CMatrix::identity(1, 1);
        for p in &self.factors {
            out = p.matrix().kronecker(&out);
        }
        out
    }

    /// All `4^n` strings in index order.
    pub fn basis(n_qubits: usize) -> Vec<PauliString> {
        (0..1usize << (2 * n_qubits))
            .map(|i| PauliString::from_index(i, n_qubits))
            .collect()
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Coefficients `c_α = Tr(P_α† m) / 2^n`, indexed by [`PauliString::index`].
pub fn pauli_expansion(m: &CMatrix) -> Result<Vec<C64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let dim = m.nrows();
    let n = is_power_of_two(dim).ok_or(Error::NotPowerOfTwo(dim))?;
    let norm = c(1.0 / dim as f64, 0.0);
    Ok(PauliString::basis(n)
        .iter()
        .map(|p| pauli_overlap(p, m) * norm)
        .collect())
}

/// `Tr(P† m)` without forming `P`: every Pauli string is a signed,
/// phased permutation.
fn pauli_overlap(p: &PauliString, m: &CMatrix) -> C64 {
    let dim = m.nrows();
    let mut total = C64::new(0.0, 0.0);
    for col in 0..dim {
        // P|col> = phase |row>
        let mut row = col;
        let mut phase = C64::new(1.0, 0.0);
        for (k, f) in p.factors.iter().enumerate() {
            let bit = (col >> k) & 1;
            match f {
                Pauli::I => {}
                Pauli::X => row ^= 1 << k,
                Pauli::Y => {
                    row ^= 1 << k;
                    phase *= if bit == 0 { c(0.0, 1.0) } else { c(0.0, -1.0) };
                }
                Pauli::Z => {
                    if bit == 1 {
                        phase = -phase;
                    }
                }
            }
        }
        // Tr(P† m) = Σ_col <col|P† m|col> = Σ_col conj(phase) m[row, col]
        total += phase.conj() * m[(row, col)];
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, max_abs_diff};
    use crate::quantum::gates;

    #[test]
    fn labels_follow_kronecker_order() {
        let p = PauliString::from_label("XZ").unwrap();
        assert_eq!(p.factors, vec![Pauli::Z, Pauli::X]);
        assert!(max_abs_diff(&p.matrix(), &gates::x().kronecker(&gates::z())) < 1e-15);
        assert_eq!(PauliString::from_index(p.index(), 2), p);
        let labels: Vec<String> = PauliString::basis(2).iter().take(5).map(|p| p.label()).collect();
        assert_eq!(labels, ["II", "IX", "IY", "IZ", "XI"]);
    }

    #[test]
    fn strings_square_to_identity_and_are_orthogonal() {
        let basis = PauliString::basis(2);
        for a in &basis {
            let ma = a.matrix();
            assert!(max_abs_diff(&(&ma * &ma), &identity(4)) < 1e-15);
            for b in &basis {
                let ip = (ma.adjoint() * b.matrix()).trace();
                let expect = if a == b { 4.0 } else { 0.0 };
                assert!((ip - c(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn expansion_of_identity_and_zz() {
        let coeffs = pauli_expansion(&identity(4)).unwrap();
        assert!((coeffs[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!(coeffs[1..].iter().all(|z| z.norm() < 1e-15));

        let zz = PauliString::from_label("ZZ").unwrap();
        let coeffs = pauli_expansion(&zz.matrix()).unwrap();
        for (i, z) in coeffs.iter().enumerate() {
            let expect = if i == zz.index() { 1.0 } else { 0.0 };
            assert!((z - c(expect, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn expansion_of_cz_by_hand() {
        // diag(1,1,1,-1) = (II + IZ + ZI - ZZ)/2
        let coeffs = pauli_expansion(&gates::cz()).unwrap();
        let expected = [("II", 0.5), ("IZ", 0.5), ("ZI", 0.5), ("ZZ", -0.5)];
        for p in PauliString::basis(2) {
            let want = expected
                .iter()
                .find(|(l, _)| *l == p.label())
                .map_or(0.0, |e| e.1);
            assert!((coeffs[p.index()] - c(want, 0.0)).norm() < 1e-15, "{p}");
        }
    }

    #[test]
    fn expansion_reconstructs_and_rejects_bad_dims() {
        let m = CMatrix::from_fn(4, 4, |r, k| c((r * 3 + k) as f64, (r as f64) - (k as f64) * 0.5));
        let coeffs = pauli_expansion(&m).unwrap();
        let mut rebuilt = CMatrix::zeros(4, 4);
        for p in PauliString::basis(2) {
            rebuilt += p.matrix() * coeffs[p.index()];
        }
        assert!(max_abs_diff(&rebuilt, &m) < 1e-10);
        assert!(matches!(pauli_expansion(&CMatrix::zeros(3, 3)), Err(Error::NotPowerOfTwo(3))));
    }
}
