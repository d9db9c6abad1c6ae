//! One module as an agent: hyperfine transfers, the local CZ, dynamical
//! decoupling of the stored circuit qubit, mid-circuit network readout and
//! a classical bit channel to the peer.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender, TryRecvError};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::noise::ModuleNoise;
use crate::quantum::{gates, Basis, KrausChannel, ModuleId, QuantumState, QubitId, QubitRole};
use crate::rng::SimRng;

/// Phases of one Knill block, a five-pulse composite π rotation.
pub const KNILL_PHASES: [f64; 5] = [FRAC_PI_6, 0.0, FRAC_PI_2, 0.0, FRAC_PI_6];

/// Phases of a full decoupling cycle: four Knill blocks with phase offsets
/// 0, π/2, 0, π/2. The cycle multiplies to the identity up to phase.
pub fn kdd_phases() -> Vec<f64> {
    [0.0, FRAC_PI_2, 0.0, FRAC_PI_2]
        .iter()
        .flat_map(|offset| KNILL_PHASES.iter().map(move |p| p + offset))
        .collect()
}

/// Product of the equatorial π pulses with the given phases, first pulse
/// applied first.
pub fn pulse_product(phases: &[f64]) -> CMatrix {
    phases
        .iter()
        .fold(gates::id2(), |acc, &phi| gates::equatorial_pi(phi) * acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdConfig {
    pub enabled: bool,
    /// Time between decoupling pulses (µs).
    pub interpulse_delay: f64,
}

impl Default for DdConfig {
    fn default() -> Self {
        DdConfig {
            enabled: true,
            interpulse_delay: 1500.0,
        }
    }
}

/// Decoupling progress of one module's circuit qubit.
#[derive(Clone, Debug)]
pub struct DdState {
    sequence: Vec<f64>,
    enabled: bool,
    interpulse_delay: f64,
    applied: usize,
    total_applied: u64,
    since_last: f64,
    toggled_time: f64,
}

impl DdState {
    pub fn new(cfg: &DdConfig) -> Result<Self> {
        if cfg.enabled && !(cfg.interpulse_delay > 0.0 && cfg.interpulse_delay.is_finite()) {
            return Err(Error::Config("interpulse_delay must be positive".into()));
        }
        Ok(DdState {
            sequence: kdd_phases(),
            enabled: cfg.enabled,
            interpulse_delay: cfg.interpulse_delay,
            applied: 0,
            total_applied: 0,
            since_last: 0.0,
            toggled_time: 0.0,
        })
    }

    pub fn sequence(&self) -> &[f64] {
        &self.sequence
    }

    /// Pulses applied in the current, unfinished cycle.
    pub fn applied(&self) -> usize {
        self.applied
    }

    pub fn total_applied(&self) -> u64 {
        self.total_applied
    }

    /// Parity of the pulses applied in the current cycle.
    pub fn pending_x_parity(&self) -> u8 {
        (self.applied % 2) as u8
    }
}

/// How random memory and readout effects are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseResolution {
    /// Draw from the agent's generator (one trajectory).
    Sampled,
    /// Average exactly over the random variable.
    Averaged,
}

/// Which step of the transfer / CZ / transfer-back sequence comes next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GatePhase {
    Idle,
    Transferred,
    CzDone,
}

/// Timestamped protocol step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub module: String,
    pub step: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// Render events as one JSON object per line.
pub fn events_to_jsonl(events: &[Event]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalLinkConfig {
    /// One-way latency added to the receiver's clock (µs).
    pub latency: f64,
    /// Give up waiting for the peer after this long (µs).
    pub timeout: f64,
}

impl Default for ClassicalLinkConfig {
    fn default() -> Self {
        ClassicalLinkConfig {
            latency: 1.0,
            timeout: 1e6,
        }
    }
}

/// One end of a full-duplex, ordered bit channel.
#[derive(Debug)]
pub struct BitLink {
    tx: Sender<u8>,
    rx: Receiver<u8>,
    cfg: ClassicalLinkConfig,
    blocking: bool,
    drop_outgoing: bool,
    sent: u64,
    received: u64,
}

/// Connected endpoints. Non-blocking endpoints fail immediately when no
/// bit is queued, which suits a single-threaded scheduler.
pub fn bit_link_pair(cfg: ClassicalLinkConfig, blocking: bool) -> (BitLink, BitLink) {
    let (tx_ab, rx_ab) = crossbeam_channel::unbounded();
    let (tx_ba, rx_ba) = crossbeam_channel::unbounded();
    let end = |tx, rx| BitLink {
        tx,
        rx,
        cfg,
        blocking,
        drop_outgoing: false,
        sent: 0,
        received: 0,
    };
    (end(tx_ab, rx_ba), end(tx_ba, rx_ab))
}

impl BitLink {
    /// Fault injection: silently lose every bit sent from this end.
    pub fn set_drop_outgoing(&mut self, drop: bool) {
        self.drop_outgoing = drop;
    }

    pub fn latency(&self) -> f64 {
        self.cfg.latency
    }

    pub fn send_bit(&mut self, bit: u8) -> Result<()> {
        self.sent += 1;
        if self.drop_outgoing {
            return Ok(());
        }
        self.tx
            .send(bit & 1)
            .map_err(|_| Error::Link("peer endpoint closed".into()))
    }

    pub fn recv_bit(&mut self) -> Result<u8> {
        let timeout = self.cfg.timeout;
        let got = if self.blocking {
            self.rx
                .recv_timeout(Duration::from_micros(timeout.max(0.0) as u64))
                .map_err(|e| match e {
                    RecvTimeoutError::Timeout => Error::Link(format!(
                        "no bit from peer within {timeout} us (message {})",
                        self.received + 1
                    )),
                    RecvTimeoutError::Disconnected => Error::Link("peer terminated".into()),
                })?
        } else {
            self.rx.try_recv().map_err(|e| match e {
                TryRecvError::Empty => Error::Link(format!(
                    "no bit from peer within {timeout} us (message {})",
                    self.received + 1
                )),
                TryRecvError::Disconnected => Error::Link("peer terminated".into()),
            })?
        };
        self.received += 1;
        Ok(got)
    }

    /// `(sent, received)` counts.
    pub fn counts(&self) -> (u64, u64) {
        (self.sent, self.received)
    }
}

/// Result of finishing an interrupted decoupling cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DdCompletion {
    /// Z left on the network qubit by the interrupted cycle; flips its readout.
    pub z_correction: u8,
    pub pulses_applied: usize,
    pub was_interrupted: bool,
}

/// One trapped-ion module with a network, a circuit and an auxiliary qubit.
#[derive(Debug)]
pub struct ModuleAgent {
    module: ModuleId,
    noise: ModuleNoise,
    dd: DdState,
    data_role: QubitRole,
    network_live: bool,
    phase: GatePhase,
    clock: f64,
    rng: SimRng,
    detuning: f64,
    events: Vec<Event>,
    link: Option<BitLink>,
    transfer_ch: KrausChannel,
    cz_ch: KrausChannel,
    rotation_ch: KrausChannel,
}

impl ModuleAgent {
    pub fn new(module: ModuleId, noise: ModuleNoise, dd: &DdConfig, rng: SimRng) -> Result<Self> {
        noise.validate()?;
        Ok(ModuleAgent {
            module,
            dd: DdState::new(dd)?,
            data_role: QubitRole::Circuit,
            network_live: false,
            phase: GatePhase::Idle,
            clock: 0.0,
            rng,
            detuning: 0.0,
            events: Vec::new(),
            link: None,
            transfer_ch: noise.transfer_channel()?,
            cz_ch: noise.local_cz_channel()?,
            rotation_ch: noise.rotation_channel()?,
            noise,
        })
    }

    pub fn module(&self) -> ModuleId {
        self.module
    }

    pub fn noise(&self) -> &ModuleNoise {
        &self.noise
    }

    pub fn network(&self) -> QubitId {
        QubitId::network(self.module)
    }

    pub fn circuit(&self) -> QubitId {
        QubitId::circuit(self.module)
    }

    pub fn auxiliary(&self) -> QubitId {
        QubitId::auxiliary(self.module)
    }

    /// Qubit currently holding this module's data.
    pub fn data_qubit(&self) -> QubitId {
        QubitId::new(self.module, self.data_role, 0)
    }

    pub fn phase(&self) -> GatePhase {
        self.phase
    }

    pub fn dd(&self) -> &DdState {
        &self.dd
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn advance_clock(&mut self, dt: f64) {
        self.clock += dt;
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    pub fn connect(&mut self, link: BitLink) {
        self.link = Some(link);
    }

    pub fn link_mut(&mut self) -> Result<&mut BitLink> {
        self.link
            .as_mut()
            .ok_or_else(|| Error::Link(format!("{} has no classical link", self.module)))
    }

    pub fn log(&mut self, step: &str, detail: impl Into<String>) {
        self.events.push(Event {
            time: self.clock,
            module: self.module.name(),
            step: step.to_string(),
            detail: detail.into(),
        });
    }

    fn order_error(&self, detail: &str) -> Error {
        Error::ProtocolOrder {
            module: self.module.name(),
            detail: detail.to_string(),
        }
    }

    /// Mark the network qubit as holding half of a fresh pair.
    pub fn attach_network(&mut self) -> Result<()> {
        if self.network_live {
            return Err(self.order_error("network qubit already holds a pair"));
        }
        self.network_live = true;
        Ok(())
    }

    /// Move the data from the circuit to the auxiliary qubit.
    pub fn transfer_circuit_to_aux(&mut self, st: &mut QuantumState) -> Result<()> {
        if self.data_role != QubitRole::Circuit {
            return Err(self.order_error("transfer from empty circuit qubit"));
        }
        if self.phase != GatePhase::Idle {
            return Err(self.order_error("transfer to auxiliary out of order"));
        }
        st.relabel(self.circuit(), self.auxiliary())?;
        st.apply_channel(&self.transfer_ch, &[self.auxiliary()])?;
        self.data_role = QubitRole::Auxiliary;
        self.phase = GatePhase::Transferred;
        self.log("transfer", "circuit->auxiliary");
        Ok(())
    }

    /// Move the data back from the auxiliary to the circuit qubit.
    pub fn transfer_aux_to_circuit(&mut self, st: &mut QuantumState) -> Result<()> {
        if self.data_role != QubitRole::Auxiliary {
            return Err(self.order_error("transfer from empty auxiliary qubit"));
        }
        if self.phase != GatePhase::CzDone {
            return Err(self.order_error("transfer back before the local CZ"));
        }
        st.relabel(self.auxiliary(), self.circuit())?;
        st.apply_channel(&self.transfer_ch, &[self.circuit()])?;
        self.data_role = QubitRole::Circuit;
        self.phase = GatePhase::Idle;
        self.log("transfer", "auxiliary->circuit");
        Ok(())
    }

    /// CZ between the network and auxiliary qubits, then depolarizing.
    pub fn local_cz(&mut self, st: &mut QuantumState) -> Result<()> {
        if self.data_role != QubitRole::Auxiliary || self.phase != GatePhase::Transferred {
            return Err(self.order_error("local CZ requires the data on the auxiliary qubit"));
        }
        if !self.network_live {
            return Err(self.order_error("local CZ requires a live network qubit"));
        }
        let pair = [self.network(), self.auxiliary()];
        st.apply_unitary(&gates::cz(), &pair)?;
        st.apply_channel(&self.cz_ch, &pair)?;
        self.phase = GatePhase::CzDone;
        self.log("local_cz", "");
        Ok(())
    }

    /// Single-qubit gate on `target` followed by the rotation error.
    pub fn apply_gate(&mut self, st: &mut QuantumState, u: &CMatrix, target: QubitId) -> Result<()> {
        if target.module != self.module {
            return Err(self.order_error("gate on another module's qubit"));
        }
        st.apply_unitary(u, &[target])?;
        st.apply_channel(&self.rotation_ch, &[target])
    }

    /// CZ between two of this module's qubits, followed by depolarizing.
    pub fn apply_local_cz_between(&mut self, st: &mut QuantumState, a: QubitId, b: QubitId) -> Result<()> {
        if a.module != self.module || b.module != self.module {
            return Err(self.order_error("local CZ across modules"));
        }
        st.apply_unitary(&gates::cz(), &[a, b])?;
        st.apply_channel(&self.cz_ch, &[a, b])
    }

    /// Start storing: draw a fresh quasi-static offset and restart the
    /// decoupling timer.
    pub fn begin_storage(&mut self, resolution: NoiseResolution) -> Result<()> {
        self.dd.since_last = 0.0;
        self.dd.toggled_time = 0.0;
        self.detuning = 0.0;
        if resolution == NoiseResolution::Sampled && self.noise.memory_detuning_std > 0.0 {
            let normal = Normal::new(0.0, self.noise.memory_detuning_std)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            self.detuning = normal.sample(&mut self.rng);
        }
        Ok(())
    }

    fn evolve_memory(&mut self, st: &mut QuantumState, dt: f64, resolution: NoiseResolution) -> Result<()> {
        if dt <= 0.0 {
            return Ok(());
        }
        let q = self.circuit();
        if self.noise.memory_dephasing_rate > 0.0 {
            st.apply_channel(&self.noise.memory_channel(dt)?, &[q])?;
        }
        match resolution {
            NoiseResolution::Sampled => {
                if self.detuning != 0.0 {
                    st.apply_unitary(&gates::rz(self.detuning * dt), &[q])?;
                }
            }
            NoiseResolution::Averaged => {
                let sign = if self.dd.total_applied.is_multiple_of(2) { 1.0 } else { -1.0 };
                self.dd.toggled_time += sign * dt;
            }
        }
        Ok(())
    }

    fn dd_pulse(&mut self, st: &mut QuantumState) -> Result<()> {
        let phi = self.dd.sequence[self.dd.applied];
        st.apply_unitary(&gates::equatorial_pi(phi), &[self.circuit()])?;
        self.dd.applied = (self.dd.applied + 1) % self.dd.sequence.len();
        self.dd.total_applied += 1;
        Ok(())
    }

    /// Let the stored circuit qubit idle for `elapsed`, applying memory
    /// noise and a decoupling pulse at every inter-pulse boundary crossed.
    /// Returns the number of pulses applied.
    pub fn dd_tick(&mut self, st: &mut QuantumState, elapsed: f64, resolution: NoiseResolution) -> Result<u64> {
        if self.data_role != QubitRole::Circuit {
            return Err(self.order_error("storage requires the data on the circuit qubit"));
        }
        let before = self.dd.total_applied;
        let mut remaining = elapsed;
        if self.dd.enabled {
            loop {
                let to_next = self.dd.interpulse_delay - self.dd.since_last;
                if remaining + 1e-9 >= to_next {
                    self.evolve_memory(st, to_next, resolution)?;
                    self.dd_pulse(st)?;
                    self.dd.since_last = 0.0;
                    remaining -= to_next;
                } else {
                    self.evolve_memory(st, remaining, resolution)?;
                    self.dd.since_last += remaining;
                    break;
                }
            }
        } else {
            self.evolve_memory(st, remaining, resolution)?;
        }
        self.clock += elapsed;
        Ok(self.dd.total_applied - before)
    }

    /// End of storage: in averaged mode the Gaussian average of the
    /// quasi-static phase is applied as a dephasing channel.
    pub fn end_storage(&mut self, st: &mut QuantumState, resolution: NoiseResolution) -> Result<()> {
        if resolution == NoiseResolution::Averaged && self.noise.memory_detuning_std > 0.0 {
            let s = self.noise.memory_detuning_std * self.dd.toggled_time;
            let ch = crate::noise::coherence_decay_channel((-0.5 * s * s).exp())?;
            st.apply_channel(&ch, &[self.circuit()])?;
        }
        self.dd.toggled_time = 0.0;
        Ok(())
    }

    /// Idle through a whole campaign of length `elapsed`.
    pub fn store_during(&mut self, st: &mut QuantumState, elapsed: f64, resolution: NoiseResolution) -> Result<u64> {
        self.begin_storage(resolution)?;
        let n = self.dd_tick(st, elapsed, resolution)?;
        self.end_storage(st, resolution)?;
        self.log(
            "memory",
            format!("{elapsed} us, {n} pulses, cycle position {}", self.dd.applied),
        );
        Ok(n)
    }

    /// Apply the rest of an interrupted cycle back to back. Each equatorial
    /// π pulse `P` on the data satisfies `CZ·(P⊗I) = (P⊗I)·CZ·(Z⊗I)` with
    /// the `Z` landing on the network qubit, so after the full cycle the
    /// network qubit carries `Z^k` for the `k` pulses applied before the
    /// gate. That flips its equatorial readout, and the returned bit must
    /// be XORed into the reported outcome.
    pub fn complete_dd_with_cz_propagation(&mut self, st: &mut QuantumState) -> Result<DdCompletion> {
        if self.data_role != QubitRole::Circuit {
            return Err(self.order_error("decoupling completion requires the data on the circuit qubit"));
        }
        let pending = self.dd.applied;
        if pending == 0 {
            self.log("dd_complete", "no interrupted sequence");
            return Ok(DdCompletion {
                z_correction: 0,
                pulses_applied: 0,
                was_interrupted: false,
            });
        }
        let z_correction = self.dd.pending_x_parity();
        let remaining = self.dd.sequence.len() - pending;
        for _ in 0..remaining {
            self.dd_pulse(st)?;
        }
        self.dd.since_last = 0.0;
        self.log("dd_complete", format!("{remaining} pulses, network Z {z_correction}"));
        Ok(DdCompletion {
            z_correction,
            pulses_applied: remaining,
            was_interrupted: true,
        })
    }

    /// Weight and post-readout state for a forced network-qubit outcome.
    /// The network qubit is removed from the returned state.
    pub fn network_readout_branch(
        &self,
        st: &QuantumState,
        basis: Basis,
        outcome: u8,
    ) -> Result<(f64, Option<QuantumState>)> {
        let n = self.network();
        let mut rotated = st.clone();
        rotated.apply_unitary(&basis.readout_rotation(), &[n])?;
        rotated.apply_channel(&self.rotation_ch, &[n])?;
        rotated.measure_effect_and_discard(n, &self.noise.network_readout().effect(outcome))
    }

    /// Mid-circuit readout of the network qubit in `basis`; the circuit
    /// qubit is not touched. The network qubit is reset (removed).
    pub fn measure_network(&mut self, st: &mut QuantumState, basis: Basis) -> Result<u8> {
        if !self.network_live {
            return Err(self.order_error("network readout without a live network qubit"));
        }
        let (w0, post0) = self.network_readout_branch(st, basis, 0)?;
        let outcome = u8::from(self.rng.random::<f64>() >= w0);
        let post = if outcome == 0 {
            post0
        } else {
            self.network_readout_branch(st, basis, 1)?.1
        };
        self.finish_network_readout(st, post, basis, outcome)?;
        Ok(outcome)
    }

    /// Commit a network readout whose branch was chosen by the caller.
    pub fn finish_network_readout(
        &mut self,
        st: &mut QuantumState,
        post: Option<QuantumState>,
        basis: Basis,
        outcome: u8,
    ) -> Result<()> {
        *st = post.ok_or_else(|| Error::InvalidState("readout branch left no state".into()))?;
        self.release_network(format!("{basis:?} -> {outcome}"));
        Ok(())
    }

    /// Book-keeping for a network readout whose state update was done by
    /// the caller (for example when summing over outcomes).
    pub fn release_network(&mut self, detail: impl Into<String>) {
        self.network_live = false;
        self.clock += self.noise.detection_duration;
        self.log("measure_network", detail);
    }

    /// Final readout of `target` in `basis` with the role's SPAM POVM. The
    /// qubit stays in the state after a Lüders update.
    pub fn readout(
        &mut self,
        st: &mut QuantumState,
        target: QubitId,
        basis: Basis,
        spam: &crate::noise::SpamPovm,
    ) -> Result<u8> {
        let v = basis.readout_rotation();
        let mut rotated = st.clone();
        rotated.apply_unitary(&v, &[target])?;
        let sqrt_effect = |o: u8| spam.effect(o).map(|z| z.sqrt());
        let (w0, post0) = rotated.apply_branch(&sqrt_effect(0), &[target]).unwrap_or((0.0, rotated.clone()));
        let outcome = u8::from(self.rng.random::<f64>() >= w0);
        let mut post = if outcome == 0 {
            post0
        } else {
            rotated.apply_branch(&sqrt_effect(1), &[target])?.1
        };
        post.apply_unitary(&v.adjoint(), &[target])?;
        *st = post;
        self.log("readout", format!("{target} {basis:?} -> {outcome}"));
        Ok(outcome)
    }

    pub fn send_bit(&mut self, bit: u8) -> Result<()> {
        self.link_mut()?.send_bit(bit)?;
        self.log("send_bit", bit.to_string());
        Ok(())
    }

    pub fn recv_bit(&mut self) -> Result<u8> {
        let result = self.link_mut().and_then(|l| {
            let latency = l.latency();
            l.recv_bit().map(|b| (b, latency))
        });
        match result {
            Ok((bit, latency)) => {
                self.clock += latency;
                self.log("recv_bit", bit.to_string());
                Ok(bit)
            }
            Err(e) => {
                self.log("recv_bit", format!("failed: {e}"));
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, kron_le, max_abs_diff, phase_insensitive_distance, CVector};
    use crate::noise::NoiseModel;
    use crate::rng;

    fn agent(module: ModuleId, noise: ModuleNoise, dd: DdConfig) -> ModuleAgent {
        ModuleAgent::new(module, noise, &dd, rng::module_stream(5, module.0)).unwrap()
    }

    fn random_qubit_state(q: QubitId, seed: u64) -> QuantumState {
        let mut r = rng::stream(seed, 99);
        let a = c(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5);
        let b = c(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5);
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        QuantumState::from_amplitudes(&[q], CVector::from_vec(vec![a / n, b / n])).unwrap()
    }

    #[test]
    fn knill_block_is_a_composite_pi_pulse_and_kdd_cycle_is_identity() {
        let block = pulse_product(&KNILL_PHASES);
        // a single block is a π rotation about an equatorial axis, not the identity
        assert!(block[(0, 0)].norm() < 1e-12 && block[(1, 1)].norm() < 1e-12);
        let cycle = pulse_product(&kdd_phases());
        assert_eq!(kdd_phases().len(), 20);
        assert!(phase_insensitive_distance(&cycle, &gates::id2()) < 1e-12);
    }

    #[test]
    fn equatorial_pulse_propagates_through_cz() {
        for phi in kdd_phases() {
            let p = gates::equatorial_pi(phi);
            let lhs = kron_le(&[&p, &gates::id2()]) * gates::cz();
            let rhs = gates::cz() * kron_le(&[&p, &gates::z()]);
            assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
        }
    }

    #[test]
    fn transfer_round_trip_is_identity_without_noise() {
        let mut a = agent(ModuleId::ALICE, ModuleNoise::ideal(), DdConfig::default());
        let start = random_qubit_state(a.circuit(), 1);
        let mut st = start.clone();
        a.transfer_circuit_to_aux(&mut st).unwrap();
        assert_eq!(st.qubits(), &[a.auxiliary()]);
        a.phase = GatePhase::CzDone;
        a.transfer_aux_to_circuit(&mut st).unwrap();
        assert!(st.fidelity_to_pure(&start).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn protocol_order_is_enforced() {
        type Step = fn(&mut ModuleAgent, &mut QuantumState) -> Result<()>;
        let steps: [(&str, Step); 3] = [
            ("in", ModuleAgent::transfer_circuit_to_aux),
            ("cz", ModuleAgent::local_cz),
            ("out", ModuleAgent::transfer_aux_to_circuit),
        ];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for perm in perms {
            let mut a = agent(ModuleId::ALICE, ModuleNoise::ideal(), DdConfig::default());
            let mut st = QuantumState::zero(&[a.network(), a.circuit()]).unwrap();
            a.attach_network().unwrap();
            let results: Vec<bool> = perm.iter().map(|&i| (steps[i].1)(&mut a, &mut st).is_ok()).collect();
            let all_ok = results.iter().all(|&ok| ok);
            assert_eq!(all_ok, perm == [0, 1, 2], "order {perm:?}");
        }
        let mut a = agent(ModuleId::ALICE, ModuleNoise::ideal(), DdConfig::default());
        let mut st = QuantumState::zero(&[a.network(), a.circuit()]).unwrap();
        a.attach_network().unwrap();
        assert!(matches!(a.local_cz(&mut st), Err(Error::ProtocolOrder { .. })));
    }

    #[test]
    fn local_cz_noiseless_phases() {
        for bits in [[0u8, 0], [0, 1], [1, 0], [1, 1]] {
            let mut a = agent(ModuleId::BOB, ModuleNoise::ideal(), DdConfig::default());
            let mut st = QuantumState::basis_state(&[a.network(), a.circuit()], &bits).unwrap();
            a.attach_network().unwrap();
            a.transfer_circuit_to_aux(&mut st).unwrap();
            a.local_cz(&mut st).unwrap();
            let amps = st.amplitudes().unwrap();
            let idx = bits[0] as usize | (bits[1] as usize) << 1;
            let want = if bits == [1, 1] { -1.0 } else { 1.0 };
            assert!((amps[idx] - c(want, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn full_dd_cycle_without_noise_is_identity() {
        let cfg = DdConfig { enabled: true, interpulse_delay: 10.0 };
        let mut a = agent(ModuleId::ALICE, ModuleNoise::ideal(), cfg);
        let start = random_qubit_state(a.circuit(), 2);
        let mut st = start.clone();
        let n = a.store_during(&mut st, 200.0, NoiseResolution::Sampled).unwrap();
        assert_eq!(n, 20);
        assert_eq!(a.dd().applied(), 0);
        assert!(st.fidelity_to_pure(&start).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn interrupted_dd_reports_parity() {
        let cfg = DdConfig { enabled: true, interpulse_delay: 10.0 };
        for k in 0..20u64 {
            let mut a = agent(ModuleId::ALICE, ModuleNoise::ideal(), cfg);
            let mut st = random_qubit_state(a.circuit(), 3);
            a.store_during(&mut st, 10.0 * k as f64 + 5.0, NoiseResolution::Averaged).unwrap();
            let done = a.complete_dd_with_cz_propagation(&mut st).unwrap();
            assert_eq!(done.z_correction, (k % 2) as u8);
            assert_eq!(done.was_interrupted, k != 0);
            assert_eq!(a.dd().applied(), 0);
        }
    }

    #[test]
    fn network_readout_leaves_circuit_qubit_untouched() {
        let noise = NoiseModel::calibrated().alice;
        let mut a = agent(ModuleId::ALICE, noise, DdConfig::default());
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let data = random_qubit_state(a.circuit(), 4);
        let net = QuantumState::from_amplitudes(&[a.network()], CVector::from_vec(vec![c(h, 0.0), c(h, 0.0)])).unwrap();
        let mut st = data.tensor(&net).unwrap();
        a.attach_network().unwrap();
        let before = st.partial_trace(&[a.circuit()]).unwrap().density_matrix();
        a.measure_network(&mut st, Basis::Y).unwrap();
        assert!(max_abs_diff(&before, &st.density_matrix()) < 1e-12);
    }

    #[test]
    fn network_readout_flip_probability_matches_detection_error() {
        let mut noise = ModuleNoise::ideal();
        noise.detection_base = 6.6e-4;
        noise.detection_duration = 300.0;
        let a = agent(ModuleId::ALICE, noise, DdConfig::default());
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // |+> reads 0 in X, |-> reads 1
        for (sign, ideal) in [(1.0, 0u8), (-1.0, 1u8)] {
            let st = QuantumState::from_amplitudes(&[a.network()], CVector::from_vec(vec![c(h, 0.0), c(sign * h, 0.0)])).unwrap();
            let (w_wrong, _) = a.network_readout_branch(&st, Basis::X, 1 - ideal).unwrap();
            let want = if ideal == 0 {
                noise.detection_base
            } else {
                crate::noise::detection_error(300.0, 6.6e-4, noise.upper_state_lifetime)
            };
            assert!((w_wrong - want).abs() < 1e-12);
        }
    }

    #[test]
    fn bit_link_exchange_and_drop() {
        let (mut a, mut b) = bit_link_pair(ClassicalLinkConfig::default(), false);
        a.send_bit(0).unwrap();
        b.send_bit(1).unwrap();
        assert_eq!(b.recv_bit().unwrap(), 0);
        assert_eq!(a.recv_bit().unwrap(), 1);
        a.set_drop_outgoing(true);
        a.send_bit(1).unwrap();
        assert!(matches!(b.recv_bit(), Err(Error::Link(_))));
    }

    #[test]
    fn bit_link_blocking_full_duplex() {
        let cfg = ClassicalLinkConfig { latency: 1.0, timeout: 2e5 };
        let (mut a, mut b) = bit_link_pair(cfg, true);
        let (ra, rb) = std::thread::scope(|s| {
            let ha = s.spawn(move || {
                a.send_bit(1).unwrap();
                a.recv_bit().unwrap()
            });
            let hb = s.spawn(move || {
                b.send_bit(0).unwrap();
                b.recv_bit().unwrap()
            });
            (ha.join().unwrap(), hb.join().unwrap())
        });
        assert_eq!((ra, rb), (0, 1));
    }
}
