use crate::error::{Error, Result};
use crate::linalg::{identity, is_power_of_two, max_abs_diff, CMatrix};

const TP_TOLERANCE: f64 = 1e-10;

/// A trace-preserving map in Kraus form, `ρ → Σ K_i ρ K_i†`.
#[derive(Clone, Debug)]
pub struct KrausChannel {
    operators: Vec<CMatrix>,
}

impl KrausChannel {
    pub fn new(operators: Vec<CMatrix>) -> Result<Self> {
        let first = operators.first().ok_or(Error::EmptySelection)?;
        let dim = first.nrows();
        is_power_of_two(dim).ok_or(Error::NotPowerOfTwo(dim))?;
        for k in &operators {
            if k.nrows() != dim || k.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: k.nrows().max(k.ncols()),
                });
            }
        }
        let sum = operators
            .iter()
            .fold(CMatrix::zeros(dim, dim), |acc, k| acc + k.adjoint() * k);
        let err = max_abs_diff(&sum, &identity(dim));
        if err > TP_TOLERANCE {
            return Err(Error::NotTracePreserving(err));
        }
        Ok(KrausChannel { operators })
    }

    pub fn identity(n_qubits: usize) -> Self {
        KrausChannel {
            operators: vec![identity(1 << n_qubits)],
        }
    }

    /// Single unitary as a channel.
    pub fn unitary(u: CMatrix) -> Result<Self> {
        Self::new(vec![u])
    }

    pub fn operators(&self) -> &[CMatrix] {
        &self.operators
    }

    pub fn dim(&self) -> usize {
        self.operators[0].nrows()
    }

    pub fn n_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &KrausChannel) -> Result<KrausChannel> {
        let mut ops = Vec::with_capacity(self.operators.len() * first.operators.len());
        for a in &self.operators {
            for b in &first.operators {
                ops.push(a * b);
            }
        }
        KrausChannel::new(ops)
    }

    /// Apply to a bare density matrix of matching dimension.
    pub fn apply_to_matrix(&self, rho: &CMatrix) -> CMatrix {
        self.operators
            .iter()
            .fold(CMatrix::zeros(rho.nrows(), rho.ncols()), |acc, k| {
                acc + k * rho * k.adjoint()
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::quantum::gates;

    #[test]
    fn rejects_non_trace_preserving() {
        let k = gates::x() * c(0.9, 0.0);
        assert!(matches!(KrausChannel::new(vec![k]), Err(Error::NotTracePreserving(_))));
    }

    #[test]
    fn dephasing_half_on_plus_gives_maximally_mixed() {
        let half = c(0.5f64.sqrt(), 0.0);
        let ch = KrausChannel::new(vec![gates::id2() * half, gates::z() * half]).unwrap();
        let plus = CMatrix::from_element(2, 2, c(0.5, 0.0));
        let out = ch.apply_to_matrix(&plus);
        assert!(max_abs_diff(&out, &(identity(2) * c(0.5, 0.0))) < 1e-15);
    }
}
