//! Teleported CZ between the circuit qubits of two modules, and a small
//! executor that runs gate programs on the two module agents either with a
//! deterministic single-threaded scheduler or as two concurrent actors.
//!
//! One teleported CZ consumes one heralded Ψ⁺ pair and two classical bits:
//! each module moves its data to the auxiliary qubit, applies a local CZ
//! with its network qubit and moves the data back. Alice reads her network
//! qubit in X, Bob in Y; after exchanging the bits, Alice applies `S†` if
//! the parity is 0 and `S` otherwise, Bob the opposite.

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::{generate_entanglement, AttemptSchedule};
use crate::linalg::{kron_le, CMatrix};
use crate::noise::NoiseModel;
use crate::quantum::{gates, Basis, ModuleId, QuantumState, QubitId};
use crate::rng::{self, SimRng};
use crate::runtime::{
    bit_link_pair, ClassicalLinkConfig, DdConfig, Event, ModuleAgent, NoiseResolution,
};

/// Readout bases and conditional corrections of the teleported CZ.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedForwardRule;

impl FeedForwardRule {
    pub const BASIS_ALICE: Basis = Basis::X;
    pub const BASIS_BOB: Basis = Basis::Y;

    pub fn basis(side: usize) -> Basis {
        if side == 0 {
            Self::BASIS_ALICE
        } else {
            Self::BASIS_BOB
        }
    }

    pub fn u_alice(parity: u8) -> CMatrix {
        if parity & 1 == 0 {
            gates::sdg()
        } else {
            gates::s()
        }
    }

    pub fn u_bob(parity: u8) -> CMatrix {
        if parity & 1 == 0 {
            gates::s()
        } else {
            gates::sdg()
        }
    }

    pub fn correction(side: usize, parity: u8) -> CMatrix {
        if side == 0 {
            Self::u_alice(parity)
        } else {
            Self::u_bob(parity)
        }
    }
}

/// Map induced on the two circuit qubits (Alice low bit) by the ideal
/// protocol when the readouts give `(m_a, m_b)`, rescaled to unit norm.
/// Built from plain matrix algebra, independent of the agents.
pub fn branch_oracle(m_a: u8, m_b: u8) -> CMatrix {
    // qubit order: C_A, C_B, N_A, N_B (little-endian)
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let psi_plus = crate::linalg::rmat(4, 1, &[0.0, h, h, 0.0]);
    let mut embed = CMatrix::zeros(16, 4);
    for c_idx in 0..4 {
        for n_idx in 0..4 {
            embed[(c_idx | (n_idx << 2), c_idx)] = psi_plus[(n_idx, 0)];
        }
    }
    let id = gates::id2();
    let cz_a = embed_two(&gates::cz(), 0, 2);
    let cz_b = embed_two(&gates::cz(), 1, 3);
    let bra = |basis: Basis, o: u8| {
        let mut row = CMatrix::zeros(1, 2);
        row[(0, o as usize)] = crate::linalg::ONE;
        row * basis.readout_rotation()
    };
    let readout = kron_le(&[&id, &id, &bra(Basis::X, m_a), &bra(Basis::Y, m_b)]);
    let parity = m_a ^ m_b;
    let ff = kron_le(&[&FeedForwardRule::u_alice(parity), &FeedForwardRule::u_bob(parity)]);
    let k = ff * readout * cz_b * cz_a * embed;
    let norm = (k.adjoint() * &k).trace().re / 4.0;
    k / crate::linalg::c(norm.sqrt(), 0.0)
}

/// Probability of branch `(m_a, m_b)` for circuit input `psi` (4 amplitudes).
pub fn branch_probability(m_a: u8, m_b: u8, psi: &crate::linalg::CVector) -> f64 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut full = crate::linalg::CVector::zeros(16);
    for c_idx in 0..4 {
        full[c_idx | (1 << 2)] = psi[c_idx] * h;
        full[c_idx | (2 << 2)] = psi[c_idx] * h;
    }
    let u = embed_two(&gates::cz(), 1, 3) * embed_two(&gates::cz(), 0, 2);
    let id = gates::id2();
    let proj = |basis: Basis, o: u8| basis.projector(o);
    let p = kron_le(&[&id, &id, &proj(Basis::X, m_a), &proj(Basis::Y, m_b)]);
    let out = p * u * full;
    out.norm_squared()
}

fn embed_two(u: &CMatrix, a: usize, b: usize) -> CMatrix {
    // u acts on (a low, b high) within 4 qubits
    let mut m = CMatrix::zeros(16, 16);
    for col in 0..16 {
        let sub_in = ((col >> a) & 1) | (((col >> b) & 1) << 1);
        let rest = col & !(1 << a) & !(1 << b);
        for sub_out in 0..4 {
            let row = rest | ((sub_out & 1) << a) | (((sub_out >> 1) & 1) << b);
            m[(row, col)] = u[(sub_out, sub_in)];
        }
    }
    m
}

/// Settings of the teleported gate that are not noise parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub schedule: AttemptSchedule,
    #[serde(default)]
    pub dd: DdConfig,
    #[serde(default)]
    pub classical_link: ClassicalLinkConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            schedule: AttemptSchedule::benchmark_182(),
            dd: DdConfig::default(),
            classical_link: ClassicalLinkConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerMode {
    /// Both agents stepped in turn on one thread.
    #[default]
    Sequential,
    /// One thread per agent, rendezvous through the link and bit channel.
    Threaded,
}

/// How the mid-circuit readouts are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutcomeMode {
    /// Drawn from each agent's generator.
    Sampled,
    /// Every teleported gate uses the given `(m_a, m_b)`.
    Forced(u8, u8),
    /// Exact sum over all readout outcomes and over the Gaussian memory
    /// phase; sequential scheduler only.
    Averaged,
}

/// Per-gate record of one teleported CZ.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub attempts: u64,
    pub elapsed: f64,
    pub dd_pulses_applied: [u64; 2],
    pub z_corrections: [u8; 2],
    /// Readout bits; absent when outcomes were summed over.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<[u8; 2]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resources {
    pub bell_pairs: u64,
    pub classical_bits: u64,
}

/// A gate-level program over the circuit qubits of both modules.
#[derive(Clone, Debug)]
pub enum Instruction {
    /// Single-qubit gate followed by the owner's rotation error.
    Gate { target: QubitId, matrix: CMatrix },
    /// CZ inside one module.
    LocalCz(QubitId, QubitId),
    /// CZ between Alice's and Bob's circuit qubits by teleportation.
    TeleportedCz,
    /// Readout of a qubit in a basis with the SPAM error of its role.
    Measure { qubit: QubitId, basis: Basis },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Herald,
    Store,
    TransferIn,
    LocalCz,
    TransferOut,
    CompleteDd,
    MeasureSend,
    RecvCorrect,
    AverageBranches,
    Instr(usize),
}

fn owner(step: Step, program: &[Instruction]) -> Option<usize> {
    match step {
        Step::Instr(i) => Some(match &program[i] {
            Instruction::Gate { target, .. } => target.module.0 as usize,
            Instruction::LocalCz(a, _) => a.module.0 as usize,
            Instruction::Measure { qubit, .. } => qubit.module.0 as usize,
            Instruction::TeleportedCz => unreachable!("expanded"),
        }),
        _ => None,
    }
}

fn expand(program: &[Instruction], averaged: bool) -> Vec<Step> {
    let mut steps = Vec::new();
    for (i, ins) in program.iter().enumerate() {
        match ins {
            Instruction::TeleportedCz => {
                steps.extend([
                    Step::Herald,
                    Step::Store,
                    Step::TransferIn,
                    Step::LocalCz,
                    Step::TransferOut,
                    Step::CompleteDd,
                ]);
                if averaged {
                    steps.push(Step::AverageBranches);
                } else {
                    steps.extend([Step::MeasureSend, Step::RecvCorrect]);
                }
            }
            _ => steps.push(Step::Instr(i)),
        }
    }
    steps
}

/// Everything the agents share: the joint state and the entanglement link.
#[derive(Debug)]
struct Shared {
    state: QuantumState,
    link_rng: SimRng,
    schedule: AttemptSchedule,
    noise: NoiseModel,
    resolution: NoiseResolution,
    forced: Option<(u8, u8)>,
    branch_weight: f64,
    current: GateRecord,
    gates: Vec<GateRecord>,
    outcomes: Vec<(QubitId, u8)>,
    resources: Resources,
}

#[derive(Clone, Copy, Debug, Default)]
struct Scratch {
    z: u8,
    m: u8,
    peer: u8,
}

fn act(
    me: usize,
    agent: &mut ModuleAgent,
    scratch: &mut Scratch,
    step: Step,
    program: &[Instruction],
    sh: &mut Shared,
) -> Result<()> {
    match step {
        Step::Herald => {
            if me == 0 {
                let pair = [QubitId::network(ModuleId::ALICE), QubitId::network(ModuleId::BOB)];
                let rec = generate_entanglement(&sh.schedule, &sh.noise.bell, pair, &mut sh.link_rng)?;
                sh.state = sh.state.tensor(&rec.state)?;
                sh.current = GateRecord {
                    attempts: rec.attempts,
                    elapsed: rec.elapsed,
                    ..GateRecord::default()
                };
                sh.resources.bell_pairs += 1;
                agent.log("herald", format!("{} attempts, {} us", rec.attempts, rec.elapsed));
            }
            agent.attach_network()
        }
        Step::Store => {
            let n = agent.store_during(&mut sh.state, sh.current.elapsed, sh.resolution)?;
            sh.current.dd_pulses_applied[me] = n;
            Ok(())
        }
        Step::TransferIn => agent.transfer_circuit_to_aux(&mut sh.state),
        Step::LocalCz => agent.local_cz(&mut sh.state),
        Step::TransferOut => agent.transfer_aux_to_circuit(&mut sh.state),
        Step::CompleteDd => {
            let done = agent.complete_dd_with_cz_propagation(&mut sh.state)?;
            scratch.z = done.z_correction;
            sh.current.z_corrections[me] = done.z_correction;
            Ok(())
        }
        Step::MeasureSend => {
            let basis = FeedForwardRule::basis(me);
            let m = match sh.forced {
                None => agent.measure_network(&mut sh.state, basis)?,
                Some(forced) => {
                    let o = if me == 0 { forced.0 } else { forced.1 };
                    let (w, post) = agent.network_readout_branch(&sh.state, basis, o)?;
                    if w <= 0.0 {
                        return Err(Error::InvalidState(format!("forced readout {o} has zero weight")));
                    }
                    sh.branch_weight *= w;
                    agent.finish_network_readout(&mut sh.state, post, basis, o)?;
                    o
                }
            };
            // the decoupling Z sits on this network qubit, so it relabels the outcome
            scratch.m = m ^ scratch.z;
            let ms = sh.current.measurements.get_or_insert([0, 0]);
            ms[me] = m;
            agent.send_bit(scratch.m)?;
            sh.resources.classical_bits += 1;
            Ok(())
        }
        Step::RecvCorrect => {
            let parity = scratch.m ^ scratch.peer;
            let u = FeedForwardRule::correction(me, parity);
            let target = agent.circuit();
            agent.apply_gate(&mut sh.state, &u, target)?;
            agent.log("feed_forward", format!("parity {parity}"));
            if me == 1 {
                sh.gates.push(std::mem::take(&mut sh.current));
            }
            Ok(())
        }
        Step::AverageBranches => unreachable!("handled by the sequential scheduler"),
        Step::Instr(i) => match &program[i] {
            Instruction::Gate { target, matrix } => agent.apply_gate(&mut sh.state, matrix, *target),
            Instruction::LocalCz(a, b) => agent.apply_local_cz_between(&mut sh.state, *a, *b),
            Instruction::Measure { qubit, basis } => {
                if sh.resolution == NoiseResolution::Averaged {
                    return Err(Error::InvalidParameter(
                        "readout instructions need sampled outcomes".into(),
                    ));
                }
                let spam = sh.noise.module(qubit.module.0)?.spam.for_role(qubit.role);
                let o = agent.readout(&mut sh.state, *qubit, *basis, &spam)?;
                sh.outcomes.push((*qubit, o));
                Ok(())
            }
            Instruction::TeleportedCz => unreachable!("expanded"),
        },
    }
}

/// Exact sum over the four readout outcomes of one teleported CZ.
fn average_branches(agents: &mut [ModuleAgent; 2], scratch: &[Scratch; 2], sh: &mut Shared) -> Result<()> {
    let mut parts = Vec::with_capacity(4);
    for m_a in 0..2u8 {
        let (w_a, post_a) = agents[0].network_readout_branch(&sh.state, FeedForwardRule::BASIS_ALICE, m_a)?;
        let Some(post_a) = post_a else { continue };
        for m_b in 0..2u8 {
            let (w_b, post_b) = agents[1].network_readout_branch(&post_a, FeedForwardRule::BASIS_BOB, m_b)?;
            let Some(mut st) = post_b else { continue };
            let sent = [m_a ^ scratch[0].z, m_b ^ scratch[1].z];
            for me in 0..2 {
                let parity = sent[me] ^ sent[1 - me];
                let target = agents[me].circuit();
                let u = FeedForwardRule::correction(me, parity);
                st.apply_unitary(&u, &[target])?;
                st.apply_channel(&agents[me].noise().rotation_channel()?, &[target])?;
            }
            parts.push((w_a * w_b, st));
        }
    }
    sh.state = QuantumState::mixture(&parts)?;
    for (me, agent) in agents.iter_mut().enumerate() {
        agent.release_network(format!("{:?} summed over outcomes", FeedForwardRule::basis(me)));
        agent.log("feed_forward", "summed over outcomes");
    }
    sh.resources.classical_bits += 2;
    sh.gates.push(std::mem::take(&mut sh.current));
    Ok(())
}

/// Result of running a program.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: QuantumState,
    pub outcomes: Vec<(QubitId, u8)>,
    pub gates: Vec<GateRecord>,
    pub resources: Resources,
    /// Product of forced-branch weights (1 for sampled runs).
    pub branch_weight: f64,
    pub events: Vec<Event>,
}

/// Two module agents plus the entanglement link, seeded from one master
/// seed: agent `i` draws from module stream `i`, the link from its own.
#[derive(Debug)]
pub struct Session {
    agents: [ModuleAgent; 2],
    link_rng: SimRng,
    noise: NoiseModel,
    config: ProtocolConfig,
    scheduler: SchedulerMode,
}

impl Session {
    pub fn new(noise: &NoiseModel, config: &ProtocolConfig, seed: u64, scheduler: SchedulerMode) -> Result<Self> {
        noise.validate()?;
        config.schedule.validate()?;
        let mut alice = ModuleAgent::new(ModuleId::ALICE, noise.alice, &config.dd, rng::module_stream(seed, 0))?;
        let mut bob = ModuleAgent::new(ModuleId::BOB, noise.bob, &config.dd, rng::module_stream(seed, 1))?;
        let (la, lb) = bit_link_pair(config.classical_link, scheduler == SchedulerMode::Threaded);
        alice.connect(la);
        bob.connect(lb);
        Ok(Session {
            agents: [alice, bob],
            link_rng: rng::stream(seed, rng::streams::LINK),
            noise: noise.clone(),
            config: *config,
            scheduler,
        })
    }

    pub fn agents_mut(&mut self) -> &mut [ModuleAgent; 2] {
        &mut self.agents
    }

    pub fn circuit_qubits() -> [QubitId; 2] {
        [QubitId::circuit(ModuleId::ALICE), QubitId::circuit(ModuleId::BOB)]
    }

    /// Run `program` on `input` (a state over the circuit qubits).
    pub fn run(&mut self, program: &[Instruction], input: QuantumState, mode: OutcomeMode) -> Result<RunOutput> {
        let averaged = mode == OutcomeMode::Averaged;
        if averaged && self.scheduler == SchedulerMode::Threaded {
            return Err(Error::InvalidParameter(
                "outcome averaging needs the sequential scheduler".into(),
            ));
        }
        let steps = expand(program, averaged);
        let link_rng = self.link_rng.clone();
        let mut shared = Shared {
            state: input,
            link_rng,
            schedule: self.config.schedule,
            noise: self.noise.clone(),
            resolution: if averaged {
                NoiseResolution::Averaged
            } else {
                NoiseResolution::Sampled
            },
            forced: match mode {
                OutcomeMode::Forced(a, b) => Some((a & 1, b & 1)),
                _ => None,
            },
            branch_weight: 1.0,
            current: GateRecord::default(),
            gates: Vec::new(),
            outcomes: Vec::new(),
            resources: Resources::default(),
        };
        shared = match self.scheduler {
            SchedulerMode::Sequential => run_sequential(&mut self.agents, shared, &steps, program)?,
            SchedulerMode::Threaded => run_threaded(&mut self.agents, shared, &steps, program)?,
        };
        self.link_rng = shared.link_rng.clone();
        let mut events: Vec<Event> = self.agents.iter_mut().flat_map(|a| a.take_events()).collect();
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(RunOutput {
            state: shared.state,
            outcomes: shared.outcomes,
            gates: shared.gates,
            resources: shared.resources,
            branch_weight: shared.branch_weight,
            events,
        })
    }

    /// One teleported CZ on the circuit qubits held in `state`. On failure
    /// (for example an exhausted attempt budget) `state` is left untouched.
    pub fn teleported_cz(&mut self, state: &mut QuantumState, mode: OutcomeMode) -> Result<GateRecord> {
        let out = self.run(&[Instruction::TeleportedCz], state.clone(), mode)?;
        *state = out.state;
        Ok(out.gates.into_iter().next().unwrap_or_default())
    }
}

fn run_sequential(
    agents: &mut [ModuleAgent; 2],
    mut sh: Shared,
    steps: &[Step],
    program: &[Instruction],
) -> Result<Shared> {
    let mut scratch = [Scratch::default(); 2];
    for &step in steps {
        if step == Step::AverageBranches {
            average_branches(agents, &scratch, &mut sh)?;
            continue;
        }
        let only = owner(step, program);
        for me in 0..2 {
            if only.is_some_and(|o| o != me) {
                continue;
            }
            if step == Step::RecvCorrect {
                scratch[me].peer = agents[me].recv_bit()?;
            }
            act(me, &mut agents[me], &mut scratch[me], step, program, &mut sh)?;
        }
    }
    Ok(sh)
}

struct TurnState {
    shared: Shared,
    turn: usize,
    aborted: bool,
}

/// Two threads, one per agent. A turn counter makes both agents touch the
/// shared state in the same order as the sequential scheduler, so results
/// are bit-identical.
fn run_threaded(
    agents: &mut [ModuleAgent; 2],
    sh: Shared,
    steps: &[Step],
    program: &[Instruction],
) -> Result<Shared> {
    let gate = (
        Mutex::new(TurnState {
            shared: sh,
            turn: 0,
            aborted: false,
        }),
        Condvar::new(),
    );
    let [alice, bob] = agents;
    let results: Vec<Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = [(0usize, alice), (1usize, bob)]
            .into_iter()
            .map(|(me, agent)| {
                let gate = &gate;
                s.spawn(move || worker(me, agent, gate, steps, program))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Link("agent thread panicked".into()))))
            .collect()
    });
    let mut first_err = None;
    for r in results {
        if let Err(e) = r {
            let is_abort = matches!(&e, Error::Link(m) if m == PEER_ABORTED);
            if first_err.is_none() || (!is_abort && matches!(&first_err, Some(Error::Link(m)) if m == PEER_ABORTED)) {
                first_err = Some(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let ts = gate.0.into_inner().map_err(|_| Error::Link("state lock poisoned".into()))?;
    Ok(ts.shared)
}

const PEER_ABORTED: &str = "peer agent aborted";

fn worker(
    me: usize,
    agent: &mut ModuleAgent,
    gate: &(Mutex<TurnState>, Condvar),
    steps: &[Step],
    program: &[Instruction],
) -> Result<()> {
    let (lock, cv) = gate;
    let abort = |e: Error| {
        if let Ok(mut g) = lock.lock() {
            g.aborted = true;
        }
        cv.notify_all();
        Err(e)
    };
    let mut scratch = Scratch::default();
    let mut slot = 0usize;
    for &step in steps {
        let only = owner(step, program);
        for side in 0..2 {
            if only.is_some_and(|o| o != side) {
                continue;
            }
            let my_turn = slot;
            slot += 1;
            if side != me {
                continue;
            }
            if step == Step::RecvCorrect {
                match agent.recv_bit() {
                    Ok(b) => scratch.peer = b,
                    Err(e) => return abort(e),
                }
            }
            let mut g = lock.lock().map_err(|_| Error::Link("state lock poisoned".into()))?;
            while g.turn != my_turn && !g.aborted {
                g = cv.wait(g).map_err(|_| Error::Link("state lock poisoned".into()))?;
            }
            if g.aborted {
                return Err(Error::Link(PEER_ABORTED.into()));
            }
            let r = act(me, agent, &mut scratch, step, program, &mut g.shared);
            match r {
                Ok(()) => {
                    g.turn += 1;
                    drop(g);
                    cv.notify_all();
                }
                Err(e) => {
                    g.aborted = true;
                    drop(g);
                    cv.notify_all();
                    return Err(e);
                }
            }
        }
    }
    Ok(())
}

/// The sixteen product inputs `R_i ⊗ R_j |00⟩` used for tomography, as
/// single-qubit states in the order `|0⟩, |1⟩, |+i⟩-like, |+⟩-like`.
pub fn tomographic_product_inputs() -> Vec<QuantumState> {
    let [qa, qb] = Session::circuit_qubits();
    let rots = crate::tomography::rotation_set();
    let mut out = Vec::with_capacity(16);
    for rb in &rots {
        for ra in &rots {
            let mut st = QuantumState::zero(&[qa, qb]).expect("two distinct qubits");
            st.apply_unitary(ra, &[qa]).expect("unitary");
            st.apply_unitary(rb, &[qb]).expect("unitary");
            out.push(st);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, phase_insensitive_distance};
    use crate::runtime::DdConfig;

    fn ideal_session(seed: u64, scheduler: SchedulerMode) -> Session {
        let cfg = ProtocolConfig {
            schedule: AttemptSchedule {
                attempt_duration: 1.0,
                attempts_per_block: 200,
                recool_duration: 300.0,
                success_prob: 2e-3,
                max_attempts: None,
            },
            dd: DdConfig { enabled: true, interpulse_delay: 97.0 },
            classical_link: ClassicalLinkConfig::default(),
        };
        Session::new(&NoiseModel::ideal(), &cfg, seed, scheduler).unwrap()
    }

    fn cz_of(st: &QuantumState) -> QuantumState {
        let mut out = st.clone();
        out.apply_unitary(&gates::cz(), &Session::circuit_qubits()).unwrap();
        out
    }

    #[test]
    fn oracle_branches_are_cz() {
        for m_a in 0..2 {
            for m_b in 0..2 {
                let k = branch_oracle(m_a, m_b);
                assert!(phase_insensitive_distance(&k, &gates::cz()) < 1e-12, "branch {m_a}{m_b}");
            }
        }
    }

    #[test]
    fn branches_are_equally_likely() {
        for st in tomographic_product_inputs() {
            let psi = st.amplitudes().unwrap().clone();
            for m_a in 0..2 {
                for m_b in 0..2 {
                    assert!((branch_probability(m_a, m_b, &psi) - 0.25).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn flipped_bit_gives_joint_phase_flip() {
        // Bob applies the correction for the wrong parity
        let k = branch_oracle(0, 0);
        let wrong = kron_le(&[&gates::id2(), &(FeedForwardRule::u_bob(1) * FeedForwardRule::u_bob(0).adjoint())])
            * kron_le(&[&(FeedForwardRule::u_alice(1) * FeedForwardRule::u_alice(0).adjoint()), &gates::id2()])
            * k;
        let zz = kron_le(&[&gates::z(), &gates::z()]);
        assert!(phase_insensitive_distance(&wrong, &(&zz * gates::cz())) < 1e-12);
        assert!(max_abs_diff(&(&zz * gates::cz()), &(gates::cz() * &zz)) < 1e-15);
    }

    #[test]
    fn teleported_cz_matches_cz_for_all_forced_branches() {
        let mut s = ideal_session(11, SchedulerMode::Sequential);
        for input in tomographic_product_inputs() {
            let want = cz_of(&input);
            for m_a in 0..2 {
                for m_b in 0..2 {
                    let mut st = input.clone();
                    s.teleported_cz(&mut st, OutcomeMode::Forced(m_a, m_b)).unwrap();
                    assert!(st.fidelity_to_pure(&want).unwrap() > 1.0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn sampled_and_averaged_noiseless_runs_are_cz() {
        let mut s = ideal_session(12, SchedulerMode::Sequential);
        for input in tomographic_product_inputs() {
            let want = cz_of(&input);
            for mode in [OutcomeMode::Sampled, OutcomeMode::Averaged] {
                let mut st = input.clone();
                s.teleported_cz(&mut st, mode).unwrap();
                assert!(st.fidelity(&want).unwrap() > 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn resources_per_gate() {
        let mut s = ideal_session(13, SchedulerMode::Sequential);
        let input = QuantumState::zero(&Session::circuit_qubits()).unwrap();
        let out = s.run(&[Instruction::TeleportedCz, Instruction::TeleportedCz], input, OutcomeMode::Sampled).unwrap();
        assert_eq!(out.resources, Resources { bell_pairs: 2, classical_bits: 4 });
        assert_eq!(out.gates.len(), 2);
    }

    #[test]
    fn threaded_scheduler_is_bit_identical() {
        let noise = NoiseModel::calibrated();
        let cfg = ProtocolConfig::default();
        let program = [
            Instruction::Gate { target: Session::circuit_qubits()[0], matrix: gates::h() },
            Instruction::TeleportedCz,
            Instruction::Gate { target: Session::circuit_qubits()[1], matrix: gates::h() },
            Instruction::TeleportedCz,
            Instruction::Measure { qubit: Session::circuit_qubits()[0], basis: Basis::Z },
            Instruction::Measure { qubit: Session::circuit_qubits()[1], basis: Basis::X },
        ];
        let run = |mode| {
            let mut s = Session::new(&noise, &cfg, 77, mode).unwrap();
            let mut all = Vec::new();
            for _ in 0..5 {
                let input = QuantumState::zero(&Session::circuit_qubits()).unwrap();
                let out = s.run(&program, input, OutcomeMode::Sampled).unwrap();
                all.push((out.state.density_matrix(), out.outcomes, out.gates, out.events));
            }
            all
        };
        let a = run(SchedulerMode::Sequential);
        let b = run(SchedulerMode::Threaded);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0.as_slice(), y.0.as_slice());
            assert_eq!(x.1, y.1);
            assert_eq!(x.2, y.2);
            assert_eq!(x.3, y.3);
        }
    }

    #[test]
    fn dropped_bit_surfaces_as_timeout() {
        for scheduler in [SchedulerMode::Sequential, SchedulerMode::Threaded] {
            let mut cfg = ProtocolConfig::default();
            cfg.classical_link.timeout = 2e4;
            let mut s = Session::new(&NoiseModel::ideal(), &cfg, 3, scheduler).unwrap();
            s.agents_mut()[0].link_mut().unwrap().set_drop_outgoing(true);
            let mut st = QuantumState::zero(&Session::circuit_qubits()).unwrap();
            let before = st.density_matrix();
            let err = s.teleported_cz(&mut st, OutcomeMode::Sampled).unwrap_err();
            assert!(matches!(err, Error::Link(ref m) if m.contains("no bit from peer")), "{err}");
            assert_eq!(st.density_matrix(), before);
        }
    }

    #[test]
    fn failed_campaign_leaves_state_untouched() {
        let mut cfg = ProtocolConfig::default();
        cfg.schedule.success_prob = 1e-12;
        cfg.schedule.max_attempts = Some(10);
        let mut s = Session::new(&NoiseModel::ideal(), &cfg, 4, SchedulerMode::Sequential).unwrap();
        let mut st = tomographic_product_inputs()[7].clone();
        let before = st.density_matrix();
        assert!(matches!(s.teleported_cz(&mut st, OutcomeMode::Sampled), Err(Error::CampaignFailed { .. })));
        assert_eq!(st.density_matrix(), before);
    }
}
