use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gates, KrausChannel, QubitId};
use crate::error::{Error, Result};
use crate::linalg::{c, eigh, hermitian_map, identity, unitarity_error, CMatrix, CVector, C64, ONE, ZERO};

const UNITARY_TOLERANCE: f64 = 1e-10;
const INPUT_TOLERANCE: f64 = 1e-10;

/// Readout basis. X and Y readout apply a basis-mapping pulse before a
/// Z detection: `Ry(−π/2)` for X (so `|+⟩` reads 0) and `Rx(−π/2)` for Y
/// (so `|−i⟩` reads 0 and `|+i⟩` reads 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    /// Pulse mapping this basis onto Z before detection.
    pub fn readout_rotation(self) -> CMatrix {
        match self {
            Basis::X => gates::ry(-FRAC_PI_2),
            Basis::Y => gates::rx(-FRAC_PI_2),
            Basis::Z => gates::id2(),
        }
    }

    /// Projector onto the eigenstate that reads out as `outcome`.
    pub fn projector(self, outcome: u8) -> CMatrix {
        let v = self.readout_rotation();
        let mut p = CMatrix::zeros(2, 2);
        p[(outcome as usize, outcome as usize)] = ONE;
        v.adjoint() * p * v
    }
}

#[derive(Clone, Debug)]
enum Repr {
    Pure(CVector),
    Mixed(CMatrix),
}

/// State of an ordered set of qubits.
///
/// Qubits are kept in ascending [`QubitId`] order; qubit `k` in that order is
/// bit `k` of a basis index. A state starts as a vector and is promoted to a
/// density matrix the first time a non-unitary map touches it.
#[derive(Clone, Debug)]
pub struct QuantumState {
    qubits: Vec<QubitId>,
    repr: Repr,
}

impl QuantumState {
    /// `|0…0⟩` on the given qubits.
    pub fn zero(qubits: &[QubitId]) -> Result<Self> {
        Self::basis_state(qubits, &vec![0; qubits.len()])
    }

    /// Computational basis state; `bits[k]` belongs to `qubits[k]`.
    pub fn basis_state(qubits: &[QubitId], bits: &[u8]) -> Result<Self> {
        if bits.len() != qubits.len() {
            return Err(Error::DimensionMismatch {
                expected: qubits.len(),
                got: bits.len(),
            });
        }
        let index = bits
            .iter()
            .enumerate()
            .map(|(k, &b)| ((b & 1) as usize) << k)
            .sum::<usize>();
        let mut amps = CVector::zeros(1 << qubits.len());
        amps[index] = ONE;
        Self::from_amplitudes(qubits, amps)
    }

    /// Amplitudes indexed little-endian with respect to `qubits` as given.
    pub fn from_amplitudes(qubits: &[QubitId], amps: CVector) -> Result<Self> {
        check_distinct(qubits)?;
        if amps.len() != 1 << qubits.len() {
            return Err(Error::DimensionMismatch {
                expected: 1 << qubits.len(),
                got: amps.len(),
            });
        }
        let norm = amps.norm();
        if (norm - 1.0).abs() > INPUT_TOLERANCE {
            return Err(Error::InvalidState(format!("vector norm {norm}")));
        }
        let (sorted, perm) = sort_order(qubits);
        let amps = permute_vector(&amps, &perm);
        Ok(QuantumState {
            qubits: sorted,
            repr: Repr::Pure(amps),
        })
    }

    pub fn from_density(qubits: &[QubitId], rho: CMatrix) -> Result<Self> {
        check_distinct(qubits)?;
        let dim = 1 << qubits.len();
        if rho.nrows() != dim || rho.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: rho.nrows(),
            });
        }
        let (sorted, perm) = sort_order(qubits);
        let state = QuantumState {
            qubits: sorted,
            repr: Repr::Mixed(permute_matrix(&rho, &perm)),
        };
        state.check_invariants(INPUT_TOLERANCE, 1e-10)?;
        Ok(state)
    }

    /// Maximally mixed state.
    pub fn maximally_mixed(qubits: &[QubitId]) -> Result<Self> {
        let dim = 1 << qubits.len();
        Self::from_density(qubits, identity(dim) * c(1.0 / dim as f64, 0.0))
    }

    /// Convex combination of states over the same qubits.
    pub fn mixture(parts: &[(f64, QuantumState)]) -> Result<Self> {
        let (_, first) = parts.first().ok_or(Error::EmptySelection)?;
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if total <= 0.0 {
            return Err(Error::InvalidState("mixture with zero total weight".into()));
        }
        let dim = first.dim();
        let mut rho = CMatrix::zeros(dim, dim);
        for (w, s) in parts {
            if s.qubits != first.qubits {
                return Err(Error::InvalidState("mixture over different qubit sets".into()));
            }
            rho += s.density_matrix() * c(w / total, 0.0);
        }
        Ok(QuantumState {
            qubits: first.qubits.clone(),
            repr: Repr::Mixed(rho),
        })
    }

    pub fn qubits(&self) -> &[QubitId] {
        &self.qubits
    }

    pub fn n_qubits(&self) -> usize {
        self.qubits.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.qubits.len()
    }

    pub fn contains(&self, q: QubitId) -> bool {
        self.qubits.binary_search(&q).is_ok()
    }

    pub fn is_pure_repr(&self) -> bool {
        matches!(self.repr, Repr::Pure(_))
    }

    pub fn amplitudes(&self) -> Option<&CVector> {
        match &self.repr {
            Repr::Pure(v) => Some(v),
            Repr::Mixed(_) => None,
        }
    }

    pub fn density_matrix(&self) -> CMatrix {
        match &self.repr {
            Repr::Pure(v) => v * v.adjoint(),
            Repr::Mixed(m) => m.clone(),
        }
    }

    /// One-way promotion to the density representation.
    pub fn promote(&mut self) {
        if let Repr::Pure(v) = &self.repr {
            self.repr = Repr::Mixed(v * v.adjoint());
        }
    }

    pub fn position(&self, q: QubitId) -> Result<usize> {
        self.qubits.binary_search(&q).map_err(|_| Error::UnknownQubit(q))
    }

    fn positions(&self, targets: &[QubitId]) -> Result<Vec<usize>> {
        check_distinct(targets)?;
        targets.iter().map(|&q| self.position(q)).collect()
    }

    /// Apply `u` to `targets`; `targets[0]` is the low bit of `u`'s index.
    pub fn apply_unitary(&mut self, u: &CMatrix, targets: &[QubitId]) -> Result<()> {
        let err = unitarity_error(u);
        if err > UNITARY_TOLERANCE {
            return Err(Error::NotUnitary(err));
        }
        let pos = self.positions(targets)?;
        check_dim(u, pos.len())?;
        match &mut self.repr {
            Repr::Pure(v) => apply_to_vector(v.as_mut_slice(), &pos, u),
            Repr::Mixed(m) => conjugate(m, &pos, u),
        }
        Ok(())
    }

    /// `ρ → Σ K ρ K†` on `targets`; promotes to density form unless the
    /// channel has a single operator.
    pub fn apply_channel(&mut self, ch: &KrausChannel, targets: &[QubitId]) -> Result<()> {
        let pos = self.positions(targets)?;
        if ch.n_qubits() != pos.len() {
            return Err(Error::DimensionMismatch {
                expected: 1 << pos.len(),
                got: ch.dim(),
            });
        }
        if let [only] = ch.operators() {
            return self.apply_unitary(only, targets);
        }
        self.promote();
        let Repr::Mixed(rho) = &mut self.repr else { unreachable!() };
        let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
        for k in ch.operators() {
            let mut term = rho.clone();
            conjugate(&mut term, &pos, k);
            out += term;
        }
        *rho = out;
        Ok(())
    }

    /// Probability of reading 0 on `target` in `basis`.
    pub fn probability_of_zero(&self, target: QubitId, basis: Basis) -> Result<f64> {
        let reduced = self.partial_trace(&[target])?.density_matrix();
        let p = basis.projector(0);
        Ok((p * reduced).trace().re.clamp(0.0, 1.0))
    }

    /// Projective measurement; the target keeps the eigenstate it was
    /// projected onto.
    pub fn measure<R: Rng + ?Sized>(
        &mut self,
        target: QubitId,
        basis: Basis,
        rng: &mut R,
    ) -> Result<u8> {
        let p0 = self.probability_of_zero(target, basis)?;
        let outcome = u8::from(rng.random::<f64>() >= p0);
        let (_, post) = self.project(target, basis, outcome)?;
        *self = post;
        Ok(outcome)
    }

    /// Forced outcome: `(probability, normalized post-measurement state)`.
    pub fn project(&self, target: QubitId, basis: Basis, outcome: u8) -> Result<(f64, QuantumState)> {
        self.apply_branch(&basis.projector(outcome & 1), &[target])
    }

    /// Apply one operator of an instrument (`ρ → KρK†`) and renormalize.
    /// Returns the branch weight `Tr(KρK†)` and the post-branch state.
    pub fn apply_branch(&self, op: &CMatrix, targets: &[QubitId]) -> Result<(f64, QuantumState)> {
        let pos = self.positions(targets)?;
        check_dim(op, pos.len())?;
        let mut repr = self.repr.clone();
        let weight = match &mut repr {
            Repr::Pure(v) => {
                apply_to_vector(v.as_mut_slice(), &pos, op);
                let p = v.norm_squared();
                if p > 0.0 {
                    *v /= c(p.sqrt(), 0.0);
                }
                p
            }
            Repr::Mixed(m) => {
                conjugate(m, &pos, op);
                let p = m.trace().re;
                if p > 0.0 {
                    *m /= c(p, 0.0);
                }
                p
            }
        };
        if weight <= 0.0 {
            return Err(Error::InvalidState(format!(
                "branch on {} has zero probability",
                targets.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(",")
            )));
        }
        Ok((
            weight,
            QuantumState {
                qubits: self.qubits.clone(),
                repr,
            },
        ))
    }

    /// Apply a single-qubit POVM effect to `target`, then discard it.
    /// Returns `(Tr(Eρ), normalized state of the remaining qubits)`; the
    /// state is `None` when the effect has zero weight or nothing remains.
    pub fn measure_effect_and_discard(
        &self,
        target: QubitId,
        effect: &CMatrix,
    ) -> Result<(f64, Option<QuantumState>)> {
        check_dim(effect, 1)?;
        let t = self.position(target)?;
        let rest: Vec<QubitId> = self.qubits.iter().copied().filter(|&q| q != target).collect();
        let rest_dim = 1usize << rest.len();
        let rho = self.density_matrix();
        let expand = |a: usize, s: usize| -> usize {
            let low = a & ((1 << t) - 1);
            let high = (a >> t) << (t + 1);
            high | (s << t) | low
        };
        let mut out = CMatrix::zeros(rest_dim, rest_dim);
        for a in 0..rest_dim {
            for b in 0..rest_dim {
                let mut acc = ZERO;
                for s in 0..2 {
                    for u in 0..2 {
                        // Tr_t[(E ⊗ I) ρ]_{ab} = Σ_{s,u} E_{s u} ρ_{(u,a),(s,b)}
                        acc += effect[(s, u)] * rho[(expand(a, u), expand(b, s))];
                    }
                }
                out[(a, b)] = acc;
            }
        }
        let weight = out.trace().re;
        if weight <= 1e-300 || rest.is_empty() {
            return Ok((weight.max(0.0), None));
        }
        out /= c(weight, 0.0);
        Ok((
            weight,
            Some(QuantumState {
                qubits: rest,
                repr: Repr::Mixed(out),
            }),
        ))
    }

    /// Reduced state on `keep` (always density form).
    pub fn partial_trace(&self, keep: &[QubitId]) -> Result<QuantumState> {
        if keep.is_empty() {
            return Err(Error::EmptySelection);
        }
        let mut kept_pos = self.positions(keep)?;
        kept_pos.sort_unstable();
        let kept: Vec<QubitId> = kept_pos.iter().map(|&p| self.qubits[p]).collect();
        let traced: Vec<usize> = (0..self.n_qubits()).filter(|p| !kept_pos.contains(p)).collect();
        let kd = 1usize << kept_pos.len();
        let td = 1usize << traced.len();
        let index = |a: usize, t: usize| -> usize {
            let mut i = 0;
            for (j, &p) in kept_pos.iter().enumerate() {
                i |= ((a >> j) & 1) << p;
            }
            for (j, &p) in traced.iter().enumerate() {
                i |= ((t >> j) & 1) << p;
            }
            i
        };
        let mut out = CMatrix::zeros(kd, kd);
        match &self.repr {
            Repr::Pure(v) => {
                for t in 0..td {
                    for a in 0..kd {
                        let va = v[index(a, t)];
                        if va == ZERO {
                            continue;
                        }
                        for b in 0..kd {
                            out[(a, b)] += va * v[index(b, t)].conj();
                        }
                    }
                }
            }
            Repr::Mixed(m) => {
                for a in 0..kd {
                    for b in 0..kd {
                        out[(a, b)] = (0..td).map(|t| m[(index(a, t), index(b, t))]).sum();
                    }
                }
            }
        }
        Ok(QuantumState {
            qubits: kept,
            repr: Repr::Mixed(out),
        })
    }

    /// Trace out `drop`, keeping everything else.
    pub fn trace_out(&self, drop: &[QubitId]) -> Result<QuantumState> {
        for &q in drop {
            self.position(q)?;
        }
        let keep: Vec<QubitId> = self.qubits.iter().copied().filter(|q| !drop.contains(q)).collect();
        self.partial_trace(&keep)
    }

    /// Product state `self ⊗ other`, re-sorted into canonical order.
    pub fn tensor(&self, other: &QuantumState) -> Result<QuantumState> {
        for &q in &other.qubits {
            if self.contains(q) {
                return Err(Error::QubitAlreadyPresent(q));
            }
        }
        // other's qubits occupy the high bits before sorting
        let qubits: Vec<QubitId> = self.qubits.iter().chain(other.qubits.iter()).copied().collect();
        let (sorted, perm) = sort_order(&qubits);
        let repr = match (&self.repr, &other.repr) {
            (Repr::Pure(a), Repr::Pure(b)) => Repr::Pure(permute_vector(&b.kronecker(a), &perm)),
            _ => {
                let m = other.density_matrix().kronecker(&self.density_matrix());
                Repr::Mixed(permute_matrix(&m, &perm))
            }
        };
        Ok(QuantumState { qubits: sorted, repr })
    }

    /// Rename `from` to `to` (which must not be present), re-sorting.
    pub fn relabel(&mut self, from: QubitId, to: QubitId) -> Result<()> {
        let p = self.position(from)?;
        if self.contains(to) {
            return Err(Error::QubitAlreadyPresent(to));
        }
        let mut qubits = self.qubits.clone();
        qubits[p] = to;
        let (sorted, perm) = sort_order(&qubits);
        self.repr = match &self.repr {
            Repr::Pure(v) => Repr::Pure(permute_vector(v, &perm)),
            Repr::Mixed(m) => Repr::Mixed(permute_matrix(m, &perm)),
        };
        self.qubits = sorted;
        Ok(())
    }

    pub fn trace(&self) -> f64 {
        match &self.repr {
            Repr::Pure(v) => v.norm_squared(),
            Repr::Mixed(m) => m.trace().re,
        }
    }

    /// Fidelity to a pure reference over the same qubits: `⟨ψ|ρ|ψ⟩`.
    pub fn fidelity_to_pure(&self, reference: &QuantumState) -> Result<f64> {
        if reference.qubits != self.qubits {
            return Err(Error::InvalidState("fidelity over different qubit sets".into()));
        }
        let psi = reference
            .amplitudes()
            .ok_or_else(|| Error::InvalidState("reference state is not pure".into()))?;
        Ok(match &self.repr {
            Repr::Pure(v) => psi.dotc(v).norm_sqr(),
            Repr::Mixed(m) => (psi.adjoint() * m * psi)[(0, 0)].re,
        })
    }

    /// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`.
    pub fn fidelity(&self, other: &QuantumState) -> Result<f64> {
        if other.qubits != self.qubits {
            return Err(Error::InvalidState("fidelity over different qubit sets".into()));
        }
        if other.is_pure_repr() {
            return self.fidelity_to_pure(other);
        }
        if self.is_pure_repr() {
            return other.fidelity_to_pure(self);
        }
        let sqrt_rho = hermitian_map(&self.density_matrix(), |x| x.max(0.0).sqrt());
        let inner = &sqrt_rho * other.density_matrix() * &sqrt_rho;
        let (vals, _) = eigh(&inner);
        let s: f64 = vals.iter().map(|&v| v.max(0.0).sqrt()).sum();
        Ok(s * s)
    }

    /// Check the representation invariants: unit norm / unit trace,
    /// Hermiticity and eigenvalues above `-eig_tol`.
    pub fn check_invariants(&self, tol: f64, eig_tol: f64) -> Result<()> {
        match &self.repr {
            Repr::Pure(v) => {
                let n = v.norm();
                if (n - 1.0).abs() > tol {
                    return Err(Error::InvalidState(format!("vector norm {n}")));
                }
            }
            Repr::Mixed(m) => {
                let herm = crate::linalg::hermiticity_error(m);
                if herm > tol {
                    return Err(Error::InvalidState(format!("not Hermitian ({herm:.2e})")));
                }
                let tr = m.trace();
                if (tr - ONE).norm() > tol {
                    return Err(Error::InvalidState(format!("trace {tr}")));
                }
                let (vals, _) = eigh(m);
                if vals[0] < -eig_tol {
                    return Err(Error::InvalidState(format!("negative eigenvalue {}", vals[0])));
                }
            }
        }
        Ok(())
    }
}

fn check_distinct(qubits: &[QubitId]) -> Result<()> {
    for (i, q) in qubits.iter().enumerate() {
        if qubits[..i].contains(q) {
            return Err(Error::DuplicateQubit(*q));
        }
    }
    Ok(())
}

fn check_dim(m: &CMatrix, n_targets: usize) -> Result<()> {
    let want = 1usize << n_targets;
    if m.nrows() != want || m.ncols() != want {
        return Err(Error::DimensionMismatch {
            expected: want,
            got: m.nrows(),
        });
    }
    Ok(())
}

/// Sorted qubit list plus `perm[new_position] = old_position`.
fn sort_order(qubits: &[QubitId]) -> (Vec<QubitId>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..qubits.len()).collect();
    perm.sort_by_key(|&i| qubits[i]);
    (perm.iter().map(|&i| qubits[i]).collect(), perm)
}

fn permuted_index(old: usize, perm: &[usize]) -> usize {
    perm.iter()
        .enumerate()
        .map(|(new, &oldp)| ((old >> oldp) & 1) << new)
        .sum()
}

fn permute_vector(v: &CVector, perm: &[usize]) -> CVector {
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return v.clone();
    }
    let mut out = CVector::zeros(v.len());
    for i in 0..v.len() {
        out[permuted_index(i, perm)] = v[i];
    }
    out
}

fn permute_matrix(m: &CMatrix, perm: &[usize]) -> CMatrix {
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return m.clone();
    }
    let map: Vec<usize> = (0..m.nrows()).map(|i| permuted_index(i, perm)).collect();
    let mut out = CMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(map[i], map[j])] = m[(i, j)];
        }
    }
    out
}

/// `v ← (op on positions) v`, with `positions[0]` the low bit of `op`.
fn apply_to_vector(v: &mut [C64], positions: &[usize], op: &CMatrix) {
    let k = positions.len();
    let sub = 1usize << k;
    let mask: usize = positions.iter().map(|&p| 1 << p).sum();
    let offsets: Vec<usize> = (0..sub)
        .map(|s| (0..k).map(|j| ((s >> j) & 1) << positions[j]).sum())
        .collect();
    let mut buf = vec![ZERO; sub];
    for base in 0..v.len() {
        if base & mask != 0 {
            continue;
        }
        for s in 0..sub {
            buf[s] = v[base | offsets[s]];
        }
        for r in 0..sub {
            let mut acc = ZERO;
            for s in 0..sub {
                acc += op[(r, s)] * buf[s];
            }
            v[base | offsets[r]] = acc;
        }
    }
}

/// `m ← op m op†` with `op` embedded on `positions`.
fn conjugate(m: &mut CMatrix, positions: &[usize], op: &CMatrix) {
    let dim = m.nrows();
    for col in 0..dim {
        apply_to_vector(m.column_mut(col).as_mut_slice(), positions, op);
    }
    // right multiplication by op† acts on rows with conj(op)
    let conj_op = op.map(|z| z.conj());
    let mut t = m.transpose();
    for col in 0..dim {
        apply_to_vector(t.column_mut(col).as_mut_slice(), positions, &conj_op);
    }
    *m = t.transpose();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron_le, max_abs_diff};
    use crate::quantum::{ModuleId, QubitRole};
    use crate::rng;

    fn q(i: u8) -> QubitId {
        QubitId::new(ModuleId::ALICE, QubitRole::Circuit, i)
    }

    fn amps(state: &QuantumState) -> Vec<C64> {
        state.amplitudes().unwrap().iter().copied().collect()
    }

    fn close(a: &[C64], b: &[C64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).norm() < 1e-12)
    }

    #[test]
    fn x_flips_zero() {
        let mut s = QuantumState::zero(&[q(0)]).unwrap();
        s.apply_unitary(&gates::x(), &[q(0)]).unwrap();
        assert!(close(&amps(&s), &[ZERO, ONE]));
    }

    #[test]
    fn hadamard_pair_gives_uniform_superposition() {
        let mut s = QuantumState::zero(&[q(0), q(1)]).unwrap();
        s.apply_unitary(&kron_le(&[&gates::h(), &gates::h()]), &[q(0), q(1)]).unwrap();
        assert!(close(&amps(&s), &[c(0.5, 0.0); 4]));
    }

    #[test]
    fn cz_flips_sign_of_one_one() {
        let mut s = QuantumState::zero(&[q(0), q(1)]).unwrap();
        s.apply_unitary(&gates::h(), &[q(0)]).unwrap();
        s.apply_unitary(&gates::h(), &[q(1)]).unwrap();
        s.apply_unitary(&gates::cz(), &[q(0), q(1)]).unwrap();
        let h = c(0.5, 0.0);
        assert!(close(&amps(&s), &[h, h, h, -h]));
    }

    #[test]
    fn little_endian_first_qubit_is_low_bit() {
        let s = QuantumState::basis_state(&[q(0), q(1)], &[1, 0]).unwrap();
        assert_eq!(amps(&s)[1], ONE);
        // given out of order, the state is re-sorted
        let s = QuantumState::basis_state(&[q(1), q(0)], &[1, 0]).unwrap();
        assert_eq!(s.qubits(), &[q(0), q(1)]);
        assert_eq!(amps(&s)[2], ONE);
    }

    #[test]
    fn rejects_bad_targets_and_non_unitary() {
        let mut s = QuantumState::zero(&[q(0), q(1)]).unwrap();
        assert!(matches!(s.apply_unitary(&gates::cz(), &[q(0), q(0)]), Err(Error::DuplicateQubit(_))));
        assert!(matches!(s.apply_unitary(&gates::x(), &[q(5)]), Err(Error::UnknownQubit(_))));
        let bad = gates::x() * c(2.0, 0.0);
        assert!(matches!(s.apply_unitary(&bad, &[q(0)]), Err(Error::NotUnitary(_))));
    }

    #[test]
    fn channel_promotes_and_depolarizes_fully() {
        let mut s = QuantumState::zero(&[q(0)]).unwrap();
        let quarter = c(0.5, 0.0);
        let full = KrausChannel::new(vec![
            gates::id2() * quarter,
            gates::x() * quarter,
            gates::y() * quarter,
            gates::z() * quarter,
        ])
        .unwrap();
        s.apply_channel(&full, &[q(0)]).unwrap();
        assert!(!s.is_pure_repr());
        assert!(max_abs_diff(&s.density_matrix(), &(identity(2) * c(0.5, 0.0))) < 1e-15);
        // identity channel leaves it alone
        let before = s.density_matrix();
        s.apply_channel(&KrausChannel::identity(1), &[q(0)]).unwrap();
        assert!(max_abs_diff(&s.density_matrix(), &before) < 1e-15);
    }

    #[test]
    fn measurement_examples() {
        let mut r = rng::stream(7, 0);
        let mut one = QuantumState::basis_state(&[q(0)], &[1]).unwrap();
        assert_eq!(one.measure(q(0), Basis::Z, &mut r).unwrap(), 1);
        assert!(close(&amps(&one), &[ZERO, ONE]));

        let h = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let plus = QuantumState::from_amplitudes(&[q(0)], CVector::from_vec(vec![h, h])).unwrap();
        for _ in 0..20 {
            let mut s = plus.clone();
            assert_eq!(s.measure(q(0), Basis::X, &mut r).unwrap(), 0);
            assert!(s.fidelity_to_pure(&plus).unwrap() > 1.0 - 1e-12);
        }
    }

    #[test]
    fn y_readout_convention() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus_i = QuantumState::from_amplitudes(&[q(0)], CVector::from_vec(vec![c(h, 0.0), c(0.0, h)])).unwrap();
        assert!(plus_i.probability_of_zero(q(0), Basis::Y).unwrap() < 1e-15);
    }

    #[test]
    fn partial_trace_examples() {
        let s = QuantumState::zero(&[q(0), q(1)]).unwrap();
        let r = s.partial_trace(&[q(0)]).unwrap().density_matrix();
        assert!(max_abs_diff(&r, &crate::linalg::rmat(2, 2, &[1.0, 0.0, 0.0, 0.0])) < 1e-15);

        // (|00> + |01> + |10>)/√3, trace out qubit index 2 (the second listed)
        let t = 1.0 / 3f64.sqrt();
        let s = QuantumState::from_amplitudes(
            &[q(0), q(1)],
            CVector::from_vec(vec![c(t, 0.0), c(t, 0.0), c(t, 0.0), ZERO]),
        )
        .unwrap();
        // bit strings written q(0) q(1): "00","10","01" -> keep q(0)
        let r = s.partial_trace(&[q(0)]).unwrap().density_matrix();
        let want = crate::linalg::rmat(2, 2, &[2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert!(max_abs_diff(&r, &want) < 1e-12);

        assert!(matches!(s.partial_trace(&[]), Err(Error::EmptySelection)));
        let all = s.partial_trace(&[q(1), q(0)]).unwrap();
        assert!(max_abs_diff(&all.density_matrix(), &s.density_matrix()) < 1e-15);
    }

    #[test]
    fn tensor_and_relabel_keep_canonical_order() {
        let a = QuantumState::basis_state(&[q(2)], &[1]).unwrap();
        let b = QuantumState::basis_state(&[q(0)], &[0]).unwrap();
        let mut ab = a.tensor(&b).unwrap();
        assert_eq!(ab.qubits(), &[q(0), q(2)]);
        assert_eq!(amps(&ab)[2], ONE);
        ab.relabel(q(2), q(1)).unwrap();
        assert_eq!(ab.qubits(), &[q(0), q(1)]);
        assert!(ab.relabel(q(0), q(1)).is_err());
    }

    #[test]
    fn effect_and_discard_matches_projection() {
        // Bell-like state: measuring one qubit in Z with the ideal effect
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = QuantumState::from_amplitudes(
            &[q(0), q(1)],
            CVector::from_vec(vec![c(h, 0.0), ZERO, ZERO, c(h, 0.0)]),
        )
        .unwrap();
        let (w, rest) = s.measure_effect_and_discard(q(0), &Basis::Z.projector(1)).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
        let rest = rest.unwrap();
        assert_eq!(rest.qubits(), &[q(1)]);
        assert!((rest.density_matrix()[(1, 1)].re - 1.0).abs() < 1e-15);
    }
}
