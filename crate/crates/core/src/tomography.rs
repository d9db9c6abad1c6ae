//! Two-qubit process and state tomography.
//!
//! Inputs are prepared as `R_i ⊗ R_j |00⟩` and every measurement setting
//! applies `R_k† ⊗ R_l†` before a Z readout, with `R` from
//! [`rotation_set`]. The readout of each qubit is the SPAM-deformed POVM
//! `{M₀, M₁}`, so the effect measured for outcome `o` in setting `k` is
//! `R_k M_o R_k†`.
//!
//! Channels are reconstructed as Choi matrices
//! `J = Σ_ij |i⟩⟨j| ⊗ ℰ(|i⟩⟨j|)` (input factor first) by a diluted
//! iterative maximum-likelihood ascent that keeps `J` positive and trace
//! preserving at every step.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, eigh, hermitian_map, hermiticity_error, identity, kron, kron_le, CMatrix, C64, ONE, ZERO};
use crate::noise::SpamPovm;
use crate::quantum::{gates, pauli_expansion, KrausChannel, PauliString, QuantumState};

pub const N_SETTINGS: usize = 16;
pub const N_INPUTS: usize = 16;
pub const N_OUTCOMES: usize = 4;

/// `{I, σx, (I − iσy)/√2, (I + iσx)/√2}`; applied to `|0⟩` they give
/// `|0⟩, |1⟩, |+⟩, |+i⟩`.
pub fn rotation_set() -> [CMatrix; 4] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let minus_i = c(0.0, -1.0);
    let plus_i = c(0.0, 1.0);
    [
        gates::id2(),
        gates::x(),
        (gates::id2() + gates::y() * minus_i) * c(h, 0.0),
        (gates::id2() + gates::x() * plus_i) * c(h, 0.0),
    ]
}

/// Sixteen product inputs as density matrices; index `a + 4b` with `a`
/// the rotation on the low qubit.
pub fn input_states() -> Vec<CMatrix> {
    let rots = rotation_set();
    let zero = crate::linalg::rmat(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let one_qubit: Vec<CMatrix> = rots.iter().map(|r| r * &zero * r.adjoint()).collect();
    let mut out = Vec::with_capacity(N_INPUTS);
    for b in 0..4 {
        for a in 0..4 {
            out.push(kron_le(&[&one_qubit[a], &one_qubit[b]]));
        }
    }
    out
}

/// Effects of all settings: `effects[k][o]` for setting `k = a + 4b` and
/// outcome `o = o_low + 2·o_high`.
pub fn measurement_effects(povm: &[SpamPovm; 2]) -> Vec<[CMatrix; N_OUTCOMES]> {
    let rots = rotation_set();
    let single = |q: usize, k: usize, o: u8| &rots[k] * povm[q].effect(o) * rots[k].adjoint();
    let mut out = Vec::with_capacity(N_SETTINGS);
    for b in 0..4 {
        for a in 0..4 {
            let e = |o: usize| kron_le(&[&single(0, a, (o & 1) as u8), &single(1, b, (o >> 1) as u8)]);
            out.push([e(0), e(1), e(2), e(3)]);
        }
    }
    out
}

/// Shot count and readout model of a tomography run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographySettings {
    pub shots_per_setting: u64,
    /// Readout POVM of the low and high qubit.
    pub povm: [SpamPovm; 2],
}

impl TomographySettings {
    pub fn ideal(shots_per_setting: u64) -> Self {
        TomographySettings {
            shots_per_setting,
            povm: [SpamPovm::IDEAL, SpamPovm::IDEAL],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Process,
    State,
}

/// Outcome counts keyed by (input, setting).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub kind: RecordKind,
    pub shots_per_setting: u64,
    pub entries: Vec<RecordEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub input: usize,
    pub setting: usize,
    pub counts: [u64; N_OUTCOMES],
}

impl MeasurementRecord {
    fn n_inputs(&self) -> usize {
        match self.kind {
            RecordKind::Process => N_INPUTS,
            RecordKind::State => 1,
        }
    }

    /// Counts as a dense table indexed `input·16 + setting`, checking that
    /// every cell appears exactly once and sums to the shot count.
    pub fn table(&self) -> Result<Vec<[f64; N_OUTCOMES]>> {
        let n = self.n_inputs() * N_SETTINGS;
        let mut table = vec![None; n];
        for e in &self.entries {
            if e.input >= self.n_inputs() || e.setting >= N_SETTINGS {
                return Err(Error::IncompleteRecords(format!(
                    "entry ({}, {}) out of range",
                    e.input, e.setting
                )));
            }
            let total: u64 = e.counts.iter().sum();
            if total != self.shots_per_setting {
                return Err(Error::IncompleteRecords(format!(
                    "entry ({}, {}) has {total} shots, expected {}",
                    e.input, e.setting, self.shots_per_setting
                )));
            }
            let slot = &mut table[e.input * N_SETTINGS + e.setting];
            if slot.is_some() {
                return Err(Error::IncompleteRecords(format!("duplicate entry ({}, {})", e.input, e.setting)));
            }
            *slot = Some(e.counts.map(|x| x as f64));
        }
        table
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                v.ok_or_else(|| {
                    Error::IncompleteRecords(format!("missing entry ({}, {})", k / N_SETTINGS, k % N_SETTINGS))
                })
            })
            .collect()
    }

    pub fn from_counts(kind: RecordKind, shots_per_setting: u64, counts: Vec<[u64; N_OUTCOMES]>) -> Self {
        let entries = counts
            .into_iter()
            .enumerate()
            .map(|(k, counts)| RecordEntry {
                input: k / N_SETTINGS,
                setting: k % N_SETTINGS,
                counts,
            })
            .collect();
        MeasurementRecord {
            kind,
            shots_per_setting,
            entries,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Outcome probabilities `Tr(E ρ_out)` for every (input, setting).
pub fn outcome_probabilities(outputs: &[CMatrix], effects: &[[CMatrix; N_OUTCOMES]]) -> Vec<[f64; N_OUTCOMES]> {
    let mut out = Vec::with_capacity(outputs.len() * effects.len());
    for rho in outputs {
        for e in effects {
            let mut p = [0.0; N_OUTCOMES];
            for (o, eff) in e.iter().enumerate() {
                p[o] = trace_product(eff, rho).re.max(0.0);
            }
            let s: f64 = p.iter().sum();
            if s > 0.0 {
                p.iter_mut().for_each(|x| *x /= s);
            }
            out.push(p);
        }
    }
    out
}

fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Multinomial draw of `shots` over four outcomes.
pub fn sample_multinomial<R: Rng + ?Sized>(probs: &[f64; N_OUTCOMES], shots: u64, rng: &mut R) -> [u64; N_OUTCOMES] {
    let mut counts = [0u64; N_OUTCOMES];
    let mut left = shots;
    let mut mass = 1.0;
    for o in 0..N_OUTCOMES - 1 {
        if left == 0 {
            break;
        }
        let p = if mass > 0.0 { (probs[o] / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = Binomial::new(left, p).map(|b| b.sample(rng)).unwrap_or(0);
        counts[o] = k;
        left -= k;
        mass -= probs[o];
    }
    counts[N_OUTCOMES - 1] = left;
    counts
}

/// Sample a full process record from a black-box channel acting on a
/// two-qubit state.
pub fn simulate_qpt_records<F, R>(process: F, settings: &TomographySettings, rng: &mut R) -> Result<MeasurementRecord>
where
    F: Fn(&CMatrix) -> Result<CMatrix>,
    R: Rng + ?Sized,
{
    let outputs = input_states().iter().map(&process).collect::<Result<Vec<_>>>()?;
    let probs = outcome_probabilities(&outputs, &measurement_effects(&settings.povm));
    Ok(records_from_probabilities(RecordKind::Process, &probs, settings.shots_per_setting, rng))
}

/// Sample a state record from a two-qubit density matrix.
pub fn simulate_qst_records<R: Rng + ?Sized>(
    rho: &CMatrix,
    settings: &TomographySettings,
    rng: &mut R,
) -> MeasurementRecord {
    let probs = outcome_probabilities(std::slice::from_ref(rho), &measurement_effects(&settings.povm));
    records_from_probabilities(RecordKind::State, &probs, settings.shots_per_setting, rng)
}

pub fn records_from_probabilities<R: Rng + ?Sized>(
    kind: RecordKind,
    probs: &[[f64; N_OUTCOMES]],
    shots: u64,
    rng: &mut R,
) -> MeasurementRecord {
    let counts = probs.iter().map(|p| sample_multinomial(p, shots, rng)).collect();
    MeasurementRecord::from_counts(kind, shots, counts)
}

/// Process matrix over the two-qubit Pauli basis, `ℰ(ρ) = Σ χ_ab P_a ρ P_b†`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessMatrix {
    pub chi: CMatrix,
}

/// Columns `|P_a⟩⟩ = Σ_i |i⟩ ⊗ P_a|i⟩`.
fn pauli_vec_basis() -> CMatrix {
    let basis = PauliString::basis(2);
    let mut v = CMatrix::zeros(16, 16);
    for (col, p) in basis.iter().enumerate() {
        let m = p.matrix();
        for i in 0..4 {
            for x in 0..4 {
                v[(i * 4 + x, col)] = m[(x, i)];
            }
        }
    }
    v
}

impl ProcessMatrix {
    pub fn from_choi(j: &CMatrix) -> Self {
        let v = pauli_vec_basis();
        ProcessMatrix {
            chi: v.adjoint() * j * &v / c(16.0, 0.0),
        }
    }

    pub fn choi(&self) -> CMatrix {
        let v = pauli_vec_basis();
        &v * &self.chi * v.adjoint()
    }

    pub fn from_unitary(u: &CMatrix) -> Result<Self> {
        let coeffs = pauli_expansion(u)?;
        let col = CMatrix::from_column_slice(16, 1, &coeffs);
        Ok(ProcessMatrix {
            chi: &col * col.adjoint(),
        })
    }

    pub fn from_channel(ch: &KrausChannel) -> Result<Self> {
        Ok(Self::from_choi(&choi_of(|rho| Ok(ch.apply_to_matrix(rho)))?))
    }

    /// `F_pro = c†χc` with `c` the Pauli coefficients of the target.
    pub fn process_fidelity(&self, target: &CMatrix) -> Result<f64> {
        let coeffs = pauli_expansion(target)?;
        let col = CMatrix::from_column_slice(16, 1, &coeffs);
        Ok((col.adjoint() * &self.chi * &col)[(0, 0)].re)
    }

    /// `(d·F_pro + 1)/(d + 1)` with `d = 4`.
    pub fn average_gate_fidelity(&self, target: &CMatrix) -> Result<f64> {
        Ok(((4.0 * self.process_fidelity(target)? + 1.0) / 5.0).clamp(0.0, 1.0))
    }

    /// Hermitian, positive, trace preserving and `χ_II,II ≤ 1`.
    pub fn check_invariants(&self) -> Result<()> {
        let herm = hermiticity_error(&self.chi);
        if herm > 1e-10 {
            return Err(Error::InvalidState(format!("χ not Hermitian ({herm:.2e})")));
        }
        let (vals, _) = eigh(&self.chi);
        if vals[0] < -1e-8 {
            return Err(Error::InvalidState(format!("χ has eigenvalue {}", vals[0])));
        }
        let basis: Vec<CMatrix> = PauliString::basis(2).iter().map(|p| p.matrix()).collect();
        let mut sum = CMatrix::zeros(4, 4);
        for a in 0..16 {
            for b in 0..16 {
                let w = self.chi[(a, b)];
                if w.norm() > 0.0 {
                    sum += basis[b].adjoint() * &basis[a] * w;
                }
            }
        }
        let tp = crate::linalg::max_abs_diff(&sum, &identity(4));
        if tp > 1e-8 {
            return Err(Error::NotTracePreserving(tp));
        }
        if self.chi[(0, 0)].re > 1.0 + 1e-10 {
            return Err(Error::InvalidState("χ_II,II exceeds 1".into()));
        }
        Ok(())
    }

    pub fn labels() -> Vec<String> {
        PauliString::basis(2).iter().map(|p| p.label()).collect()
    }
}

/// Choi matrix of a map given as a function on 4×4 matrices.
pub fn choi_of<F>(map: F) -> Result<CMatrix>
where
    F: Fn(&CMatrix) -> Result<CMatrix>,
{
    let mut j = CMatrix::zeros(16, 16);
    for i in 0..4 {
        for k in 0..4 {
            let mut unit = CMatrix::zeros(4, 4);
            unit[(i, k)] = ONE;
            let out = map(&unit)?;
            for x in 0..4 {
                for y in 0..4 {
                    j[(i * 4 + x, k * 4 + y)] = out[(x, y)];
                }
            }
        }
    }
    Ok(j)
}

/// Choi matrix of a linear map known only on the sixteen tomographic
/// inputs (`outputs[k]` is the image of `input_states()[k]`), by expanding
/// each matrix unit in that basis.
pub fn choi_from_outputs(outputs: &[CMatrix]) -> Result<CMatrix> {
    if outputs.len() != N_INPUTS {
        return Err(Error::IncompleteRecords(format!("{} outputs, expected {N_INPUTS}", outputs.len())));
    }
    let inputs = input_states();
    let a = CMatrix::from_fn(16, N_INPUTS, |r, k| inputs[k][(r / 4, r % 4)]);
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::InvalidState("tomographic inputs do not span".into()))?;
    choi_of(|unit| {
        let mut out = CMatrix::zeros(4, 4);
        for r in 0..16 {
            let w = unit[(r / 4, r % 4)];
            if w.norm() == 0.0 {
                continue;
            }
            for (k, o) in outputs.iter().enumerate() {
                out += o * (inv[(k, r)] * w);
            }
        }
        Ok(out)
    })
}

/// Options of the diluted maximum-likelihood iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleOptions {
    /// Step weight ε in `I + εR`; halved whenever a step would lower the
    /// likelihood.
    pub dilution: f64,
    /// Stop when the per-shot log-likelihood gain falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            dilution: 0.1,
            tolerance: 1e-10,
            max_iterations: 50_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Mean log-likelihood per shot at the estimate.
    pub log_likelihood: f64,
    pub last_gain: f64,
    pub final_dilution: f64,
}

#[derive(Clone, Debug)]
pub struct ProcessEstimate {
    pub choi: CMatrix,
    pub chi: ProcessMatrix,
    pub diagnostics: MleDiagnostics,
}

/// Precomputed likelihood data. `freqs[k][o]` are normalized so that the
/// whole table sums to one.
struct ProcessProblem {
    inputs_t: Vec<CMatrix>,
    effects: Vec<[CMatrix; N_OUTCOMES]>,
    freqs: Vec<[f64; N_OUTCOMES]>,
    scale: f64,
}

impl ProcessProblem {
    fn new(weights: &[[f64; N_OUTCOMES]], povm: &[SpamPovm; 2]) -> Result<Self> {
        if weights.len() != N_INPUTS * N_SETTINGS {
            return Err(Error::IncompleteRecords(format!(
                "{} cells, expected {}",
                weights.len(),
                N_INPUTS * N_SETTINGS
            )));
        }
        let total: f64 = weights.iter().flat_map(|w| w.iter()).sum();
        if !(total > 0.0) {
            return Err(Error::IncompleteRecords("no counts".into()));
        }
        Ok(ProcessProblem {
            inputs_t: input_states().iter().map(|r| r.transpose()).collect(),
            effects: measurement_effects(povm),
            freqs: weights.iter().map(|w| w.map(|x| x / total)).collect(),
            scale: (N_INPUTS * N_SETTINGS) as f64,
        })
    }

    /// `M_i[x, y] = Σ_ab J[(a,x),(b,y)] ρᵀ_i[b,a]`, so that
    /// `p = Tr(J (ρᵀ ⊗ E)) = Σ_xy M_i[x,y] E[y,x]`.
    fn reduced(&self, j: &CMatrix) -> Vec<CMatrix> {
        self.inputs_t
            .iter()
            .map(|rt| {
                let mut m = CMatrix::zeros(4, 4);
                for a in 0..4 {
                    for b in 0..4 {
                        let w = rt[(b, a)];
                        if w == ZERO {
                            continue;
                        }
                        for x in 0..4 {
                            for y in 0..4 {
                                m[(x, y)] += j[(a * 4 + x, b * 4 + y)] * w;
                            }
                        }
                    }
                }
                m
            })
            .collect()
    }

    fn probabilities(&self, j: &CMatrix) -> Vec<[f64; N_OUTCOMES]> {
        let reduced = self.reduced(j);
        let mut out = Vec::with_capacity(self.freqs.len());
        for m in &reduced {
            for e in &self.effects {
                let mut p = [0.0; N_OUTCOMES];
                for o in 0..N_OUTCOMES {
                    p[o] = trace_product(m, &e[o]).re;
                }
                out.push(p);
            }
        }
        out
    }

    fn log_likelihood(&self, probs: &[[f64; N_OUTCOMES]]) -> f64 {
        let mut ll = 0.0;
        for (f, p) in self.freqs.iter().zip(probs) {
            for o in 0..N_OUTCOMES {
                if f[o] > 0.0 {
                    ll += f[o] * p[o].max(1e-300).ln();
                }
            }
        }
        ll
    }

    /// `R = Σ (f/p) (ρᵀ ⊗ E)` times the number of cells, so that a unit
    /// dilution is a large step whatever the shot count.
    fn gradient(&self, probs: &[[f64; N_OUTCOMES]]) -> CMatrix {
        let mut r = CMatrix::zeros(16, 16);
        for (i, rt) in self.inputs_t.iter().enumerate() {
            let mut acc = CMatrix::zeros(4, 4);
            for (s, e) in self.effects.iter().enumerate() {
                let k = i * N_SETTINGS + s;
                for o in 0..N_OUTCOMES {
                    let f = self.freqs[k][o];
                    if f > 0.0 {
                        acc += &e[o] * c(f / probs[k][o].max(1e-300), 0.0);
                    }
                }
            }
            r += kron(rt, &acc);
        }
        r * c(self.scale, 0.0)
    }
}

/// `Tr_out` of a 16×16 Choi matrix.
fn trace_output(j: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(4, 4);
    for a in 0..4 {
        for b in 0..4 {
            out[(a, b)] = (0..4).map(|x| j[(a * 4 + x, b * 4 + x)]).sum();
        }
    }
    out
}

fn dilute_step(j: &CMatrix, r: &CMatrix, eps: f64) -> CMatrix {
    let step = identity(16) + r * c(eps, 0.0);
    let raw = &step * j * step.adjoint();
    let lambda = trace_output(&raw);
    let inv_sqrt = hermitian_map(&lambda, |x| if x > 1e-300 { 1.0 / x.sqrt() } else { 0.0 });
    let n = kron(&inv_sqrt, &identity(4));
    let out = &n * raw * &n;
    (&out + out.adjoint()) * c(0.5, 0.0)
}

/// Maximum-likelihood Choi matrix from outcome weights (counts or exact
/// probabilities), starting from `start` or the completely depolarizing
/// channel.
pub fn mle_process(
    weights: &[[f64; N_OUTCOMES]],
    povm: &[SpamPovm; 2],
    options: &MleOptions,
    start: Option<&CMatrix>,
) -> Result<ProcessEstimate> {
    let problem = ProcessProblem::new(weights, povm)?;
    let mut j = start.cloned().unwrap_or_else(|| identity(16) / c(4.0, 0.0));
    let mut probs = problem.probabilities(&j);
    let mut ll = problem.log_likelihood(&probs);
    let mut eps = options.dilution;
    let mut diag = MleDiagnostics {
        iterations: 0,
        converged: false,
        log_likelihood: ll,
        last_gain: f64::INFINITY,
        final_dilution: eps,
    };
    while diag.iterations < options.max_iterations {
        diag.iterations += 1;
        let r = problem.gradient(&probs);
        let mut accepted = None;
        while eps > 1e-12 {
            let candidate = dilute_step(&j, &r, eps);
            let cand_probs = problem.probabilities(&candidate);
            let cand_ll = problem.log_likelihood(&cand_probs);
            if cand_ll >= ll - 1e-15 {
                accepted = Some((candidate, cand_probs, cand_ll));
                break;
            }
            eps *= 0.5;
        }
        let Some((nj, np, nll)) = accepted else {
            diag.last_gain = 0.0;
            diag.converged = true;
            break;
        };
        debug_assert!(nll >= ll - 1e-12, "log-likelihood decreased");
        let gain = nll - ll;
        j = nj;
        probs = np;
        ll = nll;
        diag.last_gain = gain;
        if gain.abs() < options.tolerance {
            diag.converged = true;
            break;
        }
    }
    diag.log_likelihood = ll;
    diag.final_dilution = eps;
    let chi = ProcessMatrix::from_choi(&j);
    Ok(ProcessEstimate { choi: j, chi, diagnostics: diag })
}

/// Maximum-likelihood process estimate from a record.
pub fn mle_reconstruct(records: &MeasurementRecord, settings: &TomographySettings) -> Result<ProcessEstimate> {
    if records.kind != RecordKind::Process {
        return Err(Error::IncompleteRecords("not a process record".into()));
    }
    mle_process(&records.table()?, &settings.povm, &MleOptions::default(), None)
}

/// Spread of the average gate fidelity over multinomial resamples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub fidelities: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Resample every setting's counts from its observed frequencies, re-run
/// the estimator (warm-started at the original estimate) and report the
/// standard deviation of the resulting average gate fidelities. Resample
/// `r` draws from its own stream, so results do not depend on threading.
pub fn bootstrap(
    records: &MeasurementRecord,
    settings: &TomographySettings,
    target: &CMatrix,
    resamples: usize,
    seed: u64,
    estimate: Option<&ProcessEstimate>,
) -> Result<BootstrapResult> {
    if resamples < 2 {
        return Err(Error::InvalidParameter("need at least two resamples".into()));
    }
    let table = records.table()?;
    let owned;
    let est = match estimate {
        Some(e) => e,
        None => {
            owned = mle_reconstruct(records, settings)?;
            &owned
        }
    };
    let shots = records.shots_per_setting;
    let one = |r: usize| -> Result<f64> {
        let mut rng = crate::rng::bootstrap_stream(seed, r as u64);
        let resampled: Vec<[f64; N_OUTCOMES]> = table
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                let p = row.map(|x| x / total);
                sample_multinomial(&p, shots, &mut rng).map(|x| x as f64)
            })
            .collect();
        let e = mle_process(&resampled, &settings.povm, &MleOptions::default(), Some(&est.choi))?;
        e.chi.average_gate_fidelity(target)
    };
    let fidelities = collect_indexed(resamples, one)?;
    let (mean, std) = mean_std(&fidelities);
    Ok(BootstrapResult { fidelities, mean, std })
}

#[cfg(feature = "parallel")]
fn collect_indexed<F>(n: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn collect_indexed<F>(n: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<f64>,
{
    (0..n).map(f).collect()
}

#[derive(Clone, Debug)]
pub struct StateEstimate {
    pub rho: CMatrix,
    pub diagnostics: MleDiagnostics,
}

/// Diluted `RρR` maximum-likelihood state estimate from 16 settings.
pub fn mle_state(weights: &[[f64; N_OUTCOMES]], povm: &[SpamPovm; 2], options: &MleOptions) -> Result<StateEstimate> {
    if weights.len() != N_SETTINGS {
        return Err(Error::IncompleteRecords(format!("{} settings, expected {N_SETTINGS}", weights.len())));
    }
    let total: f64 = weights.iter().flat_map(|w| w.iter()).sum();
    if !(total > 0.0) {
        return Err(Error::IncompleteRecords("no counts".into()));
    }
    let freqs: Vec<[f64; N_OUTCOMES]> = weights.iter().map(|w| w.map(|x| x / total)).collect();
    let effects = measurement_effects(povm);
    let probs_of = |rho: &CMatrix| -> Vec<[f64; N_OUTCOMES]> {
        effects
            .iter()
            .map(|e| {
                let mut p = [0.0; N_OUTCOMES];
                for o in 0..N_OUTCOMES {
                    p[o] = trace_product(&e[o], rho).re;
                }
                p
            })
            .collect()
    };
    let ll_of = |probs: &[[f64; N_OUTCOMES]]| -> f64 {
        freqs
            .iter()
            .zip(probs)
            .flat_map(|(f, p)| (0..N_OUTCOMES).filter(|&o| f[o] > 0.0).map(move |o| f[o] * p[o].max(1e-300).ln()))
            .sum()
    };
    let mut rho = identity(4) / c(4.0, 0.0);
    let mut probs = probs_of(&rho);
    let mut ll = ll_of(&probs);
    let mut eps = options.dilution;
    let mut diag = MleDiagnostics {
        iterations: 0,
        converged: false,
        log_likelihood: ll,
        last_gain: f64::INFINITY,
        final_dilution: eps,
    };
    while diag.iterations < options.max_iterations {
        diag.iterations += 1;
        let mut r = CMatrix::zeros(4, 4);
        for (k, e) in effects.iter().enumerate() {
            for o in 0..N_OUTCOMES {
                if freqs[k][o] > 0.0 {
                    r += &e[o] * c(freqs[k][o] / probs[k][o].max(1e-300), 0.0);
                }
            }
        }
        r *= c(N_SETTINGS as f64, 0.0);
        let mut accepted = None;
        while eps > 1e-12 {
            let step = identity(4) + &r * c(eps, 0.0);
            let mut cand = &step * &rho * step.adjoint();
            let tr = cand.trace();
            cand /= tr;
            cand = (&cand + cand.adjoint()) * c(0.5, 0.0);
            let cp = probs_of(&cand);
            let cll = ll_of(&cp);
            if cll >= ll - 1e-15 {
                accepted = Some((cand, cp, cll));
                break;
            }
            eps *= 0.5;
        }
        let Some((nr, np, nll)) = accepted else {
            diag.converged = true;
            diag.last_gain = 0.0;
            break;
        };
        let gain = nll - ll;
        rho = nr;
        probs = np;
        ll = nll;
        diag.last_gain = gain;
        if gain.abs() < options.tolerance {
            diag.converged = true;
            break;
        }
    }
    diag.log_likelihood = ll;
    diag.final_dilution = eps;
    Ok(StateEstimate { rho, diagnostics: diag })
}

/// State estimate from a record plus its fidelity to `|Ψ⁺⟩`.
pub fn state_tomography(records: &MeasurementRecord, settings: &TomographySettings) -> Result<(StateEstimate, f64)> {
    if records.kind != RecordKind::State {
        return Err(Error::IncompleteRecords("not a state record".into()));
    }
    let est = mle_state(&records.table()?, &settings.povm, &MleOptions::default())?;
    let f = psi_plus_fidelity(&est.rho);
    Ok((est, f))
}

/// `⟨Ψ⁺|ρ|Ψ⁺⟩` for a two-qubit density matrix.
pub fn psi_plus_fidelity(rho: &CMatrix) -> f64 {
    0.5 * (rho[(1, 1)] + rho[(2, 2)] + rho[(1, 2)] + rho[(2, 1)]).re
}

/// Output states of `channel` for all tomographic inputs, via
/// [`QuantumState`] so the same code path serves simulated protocols.
pub fn outputs_of<F>(inputs: &[QuantumState], channel: F) -> Result<Vec<CMatrix>>
where
    F: FnMut(&QuantumState) -> Result<QuantumState>,
{
    inputs.iter().map(channel).map(|r| r.map(|s| s.density_matrix())).collect()
}
