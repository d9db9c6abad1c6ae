//! Noise channels, SPAM POVMs, noisy Bell pairs and the per-module noise
//! model. All times are in microseconds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, identity, CMatrix};
use crate::quantum::{gates, KrausChannel, PauliString, QuantumState, QubitId, QubitRole};

fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) || value.is_nan() {
        return Err(Error::InvalidProbability { name, value });
    }
    Ok(())
}

/// Readout with asymmetric misassignment: `eps0` is the chance that `|0⟩`
/// reads 1, `eps1` the chance that `|1⟩` reads 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpamPovm {
    pub eps0: f64,
    pub eps1: f64,
}

impl SpamPovm {
    pub const IDEAL: SpamPovm = SpamPovm { eps0: 0.0, eps1: 0.0 };

    pub fn new(eps0: f64, eps1: f64) -> Result<Self> {
        let p = SpamPovm { eps0, eps1 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("eps0", self.eps0)?;
        check_probability("eps1", self.eps1)
    }

    /// `M₀ = (1−ε₀)|0⟩⟨0| + ε₁|1⟩⟨1|`, `M₁ = ε₀|0⟩⟨0| + (1−ε₁)|1⟩⟨1|`.
    pub fn effect(&self, outcome: u8) -> CMatrix {
        let (d0, d1) = if outcome == 0 {
            (1.0 - self.eps0, self.eps1)
        } else {
            (self.eps0, 1.0 - self.eps1)
        };
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = c(d0, 0.0);
        m[(1, 1)] = c(d1, 0.0);
        m
    }

    /// Probability of reading `outcome` given the ideal bit `ideal`.
    pub fn flip_table(&self, ideal: u8, outcome: u8) -> f64 {
        match (ideal, outcome) {
            (0, 0) => 1.0 - self.eps0,
            (0, _) => self.eps0,
            (_, 0) => self.eps1,
            _ => 1.0 - self.eps1,
        }
    }
}

impl Default for SpamPovm {
    fn default() -> Self {
        SpamPovm::IDEAL
    }
}

/// `(Tr M₀ρ, Tr M₁ρ)` for the Z readout of `target`.
pub fn povm_outcome_probabilities(
    state: &QuantumState,
    target: QubitId,
    spam: &SpamPovm,
) -> Result<(f64, f64)> {
    let rho = state.partial_trace(&[target])?.density_matrix();
    let p0 = (spam.effect(0) * &rho).trace().re;
    Ok((p0, 1.0 - p0))
}

/// `ρ → (1−p)ρ + p·I/2ⁿ` in Kraus form.
pub fn depolarizing_channel(p: f64, n_qubits: usize) -> Result<KrausChannel> {
    check_probability("depolarizing", p)?;
    if !(1..=2).contains(&n_qubits) {
        return Err(Error::InvalidParameter(format!(
            "depolarizing channel on {n_qubits} qubits"
        )));
    }
    if p == 0.0 {
        return Ok(KrausChannel::identity(n_qubits));
    }
    let d2 = (1usize << (2 * n_qubits)) as f64;
    let mut ops = Vec::with_capacity(d2 as usize);
    for s in PauliString::basis(n_qubits) {
        let w = if s.index() == 0 { 1.0 - p + p / d2 } else { p / d2 };
        ops.push(s.matrix() * c(w.sqrt(), 0.0));
    }
    KrausChannel::new(ops)
}

/// `ρ → (1−p)ρ + p ZρZ`.
pub fn dephasing_channel(p: f64) -> Result<KrausChannel> {
    check_probability("dephasing", p)?;
    if p == 0.0 {
        return Ok(KrausChannel::identity(1));
    }
    KrausChannel::new(vec![
        identity(2) * c((1.0 - p).sqrt(), 0.0),
        gates::z() * c(p.sqrt(), 0.0),
    ])
}

/// Dephasing that multiplies the off-diagonal elements by `coherence`.
pub fn coherence_decay_channel(coherence: f64) -> Result<KrausChannel> {
    dephasing_channel(((1.0 - coherence) / 2.0).clamp(0.0, 1.0))
}

/// Misidentification probability of a fluorescence readout lasting
/// `duration`: the base error plus decay of the shelved level.
pub fn detection_error(duration: f64, base: f64, lifetime: f64) -> f64 {
    let decay = if duration > 0.0 {
        1.0 - (-duration / lifetime).exp()
    } else {
        0.0
    };
    (base + decay).min(1.0)
}

/// Imperfect Ψ⁺ pair: `(1−p)[(1−q/2)Ψ⁺ + (q/2)Ψ⁻] + p·I/4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellNoise {
    pub werner_p: f64,
    #[serde(default)]
    pub dephasing_q: f64,
}

impl BellNoise {
    pub const IDEAL: BellNoise = BellNoise {
        werner_p: 0.0,
        dephasing_q: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        check_probability("werner_p", self.werner_p)?;
        check_probability("dephasing_q", self.dephasing_q)
    }

    /// Closed-form `⟨Ψ⁺|ρ|Ψ⁺⟩`.
    pub fn fidelity(&self) -> f64 {
        (1.0 - self.werner_p) * (1.0 - self.dephasing_q / 2.0) + self.werner_p / 4.0
    }

    pub fn density_matrix(&self) -> CMatrix {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = crate::linalg::rmat(4, 1, &[0.0, h, h, 0.0]);
        let minus = crate::linalg::rmat(4, 1, &[0.0, h, -h, 0.0]);
        let w = 1.0 - self.werner_p;
        let q = self.dephasing_q / 2.0;
        (&plus * plus.adjoint()) * c(w * (1.0 - q), 0.0)
            + (&minus * minus.adjoint()) * c(w * q, 0.0)
            + identity(4) * c(self.werner_p / 4.0, 0.0)
    }
}

/// Ideal `|Ψ⁺⟩ = (|01⟩ + |10⟩)/√2` on a pair of qubits.
pub fn bell_psi_plus(pair: [QubitId; 2]) -> Result<QuantumState> {
    let h = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let z = c(0.0, 0.0);
    QuantumState::from_amplitudes(&pair, crate::linalg::CVector::from_vec(vec![z, h, h, z]))
}

/// The noisy pair as a state; stays a vector when the noise is zero.
pub fn noisy_bell_state(bn: &BellNoise, pair: [QubitId; 2]) -> Result<QuantumState> {
    bn.validate()?;
    if bn.werner_p == 0.0 && bn.dephasing_q == 0.0 {
        return bell_psi_plus(pair);
    }
    QuantumState::from_density(&pair, bn.density_matrix())
}

/// Readout errors of the three qubit roles of one module.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleSpam {
    pub network: SpamPovm,
    pub circuit: SpamPovm,
    pub auxiliary: SpamPovm,
}

impl RoleSpam {
    pub const IDEAL: RoleSpam = RoleSpam {
        network: SpamPovm::IDEAL,
        circuit: SpamPovm::IDEAL,
        auxiliary: SpamPovm::IDEAL,
    };

    pub fn for_role(&self, role: QubitRole) -> SpamPovm {
        match role {
            QubitRole::Network => self.network,
            QubitRole::Circuit => self.circuit,
            QubitRole::Auxiliary => self.auxiliary,
        }
    }
}

/// Error parameters of one module.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleNoise {
    pub spam: RoleSpam,
    /// Two-qubit depolarizing probability after each local CZ.
    pub local_cz_depolarizing: f64,
    /// Error per circuit/auxiliary transfer; applied as one-qubit
    /// depolarizing with probability `2·transfer_error`.
    pub transfer_error: f64,
    /// One-qubit depolarizing after each single-qubit gate, including the
    /// basis-mapping pulse of a network readout.
    pub rotation_depolarizing: f64,
    /// Markovian dephasing rate of the stored circuit qubit (1/µs).
    pub memory_dephasing_rate: f64,
    /// Standard deviation of a quasi-static frequency offset of the stored
    /// circuit qubit (rad/µs), redrawn per entanglement campaign.
    #[serde(default)]
    pub memory_detuning_std: f64,
    /// Fluorescence detection error of the network qubit excluding decay.
    pub detection_base: f64,
    /// Mid-circuit readout duration (µs).
    pub detection_duration: f64,
    /// Lifetime of the shelved network-qubit level (µs).
    pub upper_state_lifetime: f64,
}

impl ModuleNoise {
    pub fn ideal() -> Self {
        ModuleNoise {
            spam: RoleSpam::IDEAL,
            local_cz_depolarizing: 0.0,
            transfer_error: 0.0,
            rotation_depolarizing: 0.0,
            memory_dephasing_rate: 0.0,
            memory_detuning_std: 0.0,
            detection_base: 0.0,
            detection_duration: 0.0,
            upper_state_lifetime: 390_000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in [self.spam.network, self.spam.circuit, self.spam.auxiliary] {
            s.validate()?;
        }
        check_probability("local_cz_depolarizing", self.local_cz_depolarizing)?;
        check_probability("transfer_error", self.transfer_error)?;
        check_probability("2*transfer_error", 2.0 * self.transfer_error)?;
        check_probability("rotation_depolarizing", self.rotation_depolarizing)?;
        check_probability("detection_base", self.detection_base)?;
        for (name, v) in [
            ("memory_dephasing_rate", self.memory_dephasing_rate),
            ("memory_detuning_std", self.memory_detuning_std),
            ("detection_duration", self.detection_duration),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.upper_state_lifetime > 0.0) {
            return Err(Error::Config("upper_state_lifetime must be positive".into()));
        }
        Ok(())
    }

    /// Readout POVM of the network qubit after the basis-mapping pulse.
    /// The shelved level (outcome 1) additionally decays during detection.
    pub fn network_readout(&self) -> SpamPovm {
        SpamPovm {
            eps0: self.detection_base,
            eps1: detection_error(self.detection_duration, self.detection_base, self.upper_state_lifetime),
        }
    }

    pub fn local_cz_channel(&self) -> Result<KrausChannel> {
        depolarizing_channel(self.local_cz_depolarizing, 2)
    }

    pub fn transfer_channel(&self) -> Result<KrausChannel> {
        depolarizing_channel(2.0 * self.transfer_error, 1)
    }

    pub fn rotation_channel(&self) -> Result<KrausChannel> {
        depolarizing_channel(self.rotation_depolarizing, 1)
    }

    /// Markovian memory dephasing over `duration`.
    pub fn memory_channel(&self, duration: f64) -> Result<KrausChannel> {
        coherence_decay_channel((-self.memory_dephasing_rate * duration).exp())
    }
}

/// Noise of the whole two-module setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub alice: ModuleNoise,
    pub bob: ModuleNoise,
    pub bell: BellNoise,
}

impl NoiseModel {
    pub fn ideal() -> Self {
        NoiseModel {
            alice: ModuleNoise::ideal(),
            bob: ModuleNoise::ideal(),
            bell: BellNoise::IDEAL,
        }
    }

    /// Measured readout errors with every other parameter zero.
    pub fn spam_only() -> Self {
        let mut m = Self::ideal();
        m.alice.spam = RoleSpam {
            network: SpamPovm { eps0: 2.6e-3, eps1: 7.8e-3 },
            circuit: SpamPovm { eps0: 8.5e-3, eps1: 6.4e-3 },
            auxiliary: SpamPovm { eps0: 4.7e-3, eps1: 3.6e-3 },
        };
        m.bob.spam = RoleSpam {
            network: SpamPovm { eps0: 6.5e-3, eps1: 4.5e-3 },
            circuit: SpamPovm { eps0: 6.0e-3, eps1: 7.5e-3 },
            auxiliary: SpamPovm { eps0: 3.2e-3, eps1: 5.3e-3 },
        };
        m.alice.detection_base = 6.6e-4;
        m.bob.detection_base = 5.51e-4;
        m
    }

    /// Profile tuned to reproduce the measured teleported-gate and Grover
    /// figures.
    pub fn calibrated() -> Self {
        let mut m = Self::spam_only();
        for module in [&mut m.alice, &mut m.bob] {
            module.local_cz_depolarizing = CALIBRATED_LOCAL_CZ;
            module.transfer_error = CALIBRATED_TRANSFER;
            module.rotation_depolarizing = CALIBRATED_ROTATION;
            module.memory_dephasing_rate = CALIBRATED_MEMORY_RATE;
            module.detection_duration = CALIBRATED_DETECTION_DURATION;
        }
        m.bell = BellNoise {
            werner_p: CALIBRATED_WERNER,
            dephasing_q: CALIBRATED_BELL_DEPHASING,
        };
        m
    }

    pub fn module(&self, index: u8) -> Result<&ModuleNoise> {
        match index {
            0 => Ok(&self.alice),
            1 => Ok(&self.bob),
            n => Err(Error::InvalidParameter(format!("no noise entry for module {n}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.alice.validate()?;
        self.bob.validate()?;
        self.bell.validate()
    }
}

const CALIBRATED_LOCAL_CZ: f64 = 0.04;
const CALIBRATED_TRANSFER: f64 = 2e-3;
const CALIBRATED_ROTATION: f64 = 2e-3;
const CALIBRATED_MEMORY_RATE: f64 = 4e-7;
const CALIBRATED_DETECTION_DURATION: f64 = 20.0;
const CALIBRATED_WERNER: f64 = 0.115;
const CALIBRATED_BELL_DEPHASING: f64 = 0.02;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, CVector};
    use crate::quantum::ModuleId;

    fn q0() -> QubitId {
        QubitId::circuit(ModuleId::ALICE)
    }

    #[test]
    fn povm_examples() {
        let zero = QuantumState::zero(&[q0()]).unwrap();
        assert_eq!(povm_outcome_probabilities(&zero, q0(), &SpamPovm::IDEAL).unwrap(), (1.0, 0.0));
        let alice_c = NoiseModel::spam_only().alice.spam.circuit;
        let (p0, p1) = povm_outcome_probabilities(&zero, q0(), &alice_c).unwrap();
        assert!((p0 - 0.9915).abs() < 1e-12 && (p1 - 0.0085).abs() < 1e-12);
        let h = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let plus = QuantumState::from_amplitudes(&[q0()], CVector::from_vec(vec![h, h])).unwrap();
        let (p0, _) = povm_outcome_probabilities(&plus, q0(), &SpamPovm::new(0.01, 0.01).unwrap()).unwrap();
        assert!((p0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn povm_effects_sum_to_identity_and_are_psd() {
        for &(e0, e1) in &[(0.0, 0.0), (0.3, 0.9), (1.0, 1.0), (0.5, 0.0)] {
            let s = SpamPovm::new(e0, e1).unwrap();
            assert_eq!(s.effect(0) + s.effect(1), identity(2));
            for o in 0..2 {
                let m = s.effect(o);
                assert!(m[(0, 0)].re >= 0.0 && m[(1, 1)].re >= 0.0);
            }
        }
        assert!(SpamPovm::new(1.2, 0.0).is_err());
    }

    #[test]
    fn depolarizing_limits() {
        assert_eq!(depolarizing_channel(0.0, 2).unwrap().operators().len(), 1);
        let full = depolarizing_channel(1.0, 1).unwrap();
        let rho = crate::linalg::rmat(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(max_abs_diff(&full.apply_to_matrix(&rho), &(identity(2) * c(0.5, 0.0))) < 1e-15);
        assert!(depolarizing_channel(-0.1, 1).is_err());
        assert!(depolarizing_channel(0.1, 3).is_err());
    }

    #[test]
    fn detection_error_examples() {
        assert_eq!(detection_error(0.0, 0.0, 390_000.0), 0.0);
        let d = detection_error(390_000.0, 0.0, 390_000.0);
        assert!((d - (1.0 - (-1f64).exp())).abs() < 1e-15);
        assert!((detection_error(1e-9, 5.51e-4, 390_000.0) - 5.51e-4).abs() < 1e-12);
    }

    #[test]
    fn bell_noise_examples_and_monotonicity() {
        let pair = [QubitId::network(ModuleId::ALICE), QubitId::network(ModuleId::BOB)];
        let ideal = bell_psi_plus(pair).unwrap();
        let fid = |bn: BellNoise| noisy_bell_state(&bn, pair).unwrap().fidelity_to_pure(&ideal).unwrap();
        assert!((fid(BellNoise::IDEAL) - 1.0).abs() < 1e-15);
        assert!((fid(BellNoise { werner_p: 1.0, dephasing_q: 0.0 }) - 0.25).abs() < 1e-15);
        assert!((fid(BellNoise { werner_p: 0.04, dephasing_q: 0.0 }) - 0.97).abs() < 1e-15);
        for i in 0..=10 {
            for j in 0..10 {
                let a = BellNoise { werner_p: i as f64 / 10.0, dephasing_q: j as f64 / 10.0 };
                let b = BellNoise { werner_p: a.werner_p, dephasing_q: a.dephasing_q + 0.1 };
                let f = fid(a);
                assert!((f - a.fidelity()).abs() < 1e-14);
                assert!(fid(b) <= f + 1e-15);
                if i < 10 {
                    let c2 = BellNoise { werner_p: a.werner_p + 0.1, ..a };
                    assert!(fid(c2) <= f + 1e-15);
                }
            }
        }
    }

    #[test]
    fn calibrated_profile_is_valid() {
        NoiseModel::calibrated().validate().unwrap();
        NoiseModel::ideal().validate().unwrap();
    }
}
