//! Experiment configuration, the named experiments and their result payloads.
//!
//! Model time is in microseconds everywhere except the composite-pulse scan,
//! which uses kHz and ms like the pulse simulation itself.
//!
//! Seeds: an experiment run with master seed `S` derives every generator
//! from `S` through [`rng`] streams and trial families. A batch gives
//! experiment `i` (its index in [`ExperimentKind::ALL`]) the master seed
//! drawn from stream `BATCH_BASE + i` of `S`, so a batch result for one
//! experiment equals a single run with that derived seed.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::calibration::{self, PhaseSearch, RbmConfig, RbmResult, RbmVariant, ScanPoint};
use crate::compiler::{self, CircuitIR};
use crate::error::{Error, Result};
use crate::linalg::{to_pairs, CMatrix};
use crate::link::generate_entanglement;
use crate::noise::{NoiseModel, SpamPovm};
use crate::protocol::{
    tomographic_product_inputs, GateRecord, Instruction, OutcomeMode, ProtocolConfig, Resources, SchedulerMode,
    Session,
};
use crate::quantum::{gates, ModuleId, QubitId};
use crate::rng::{self, families};
use crate::runtime::{Event, NoiseResolution};
use crate::tomography::{
    self, choi_from_outputs, MleDiagnostics, MleOptions, ProcessMatrix, RecordKind, TomographySettings,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TeleportedCz,
    Iswap,
    Swap,
    Grover,
    Bell,
    Memory,
    Rbm,
    CompositePulse,
    Entanglement,
    ErrorBudget,
    Circuit,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 11] = [
        ExperimentKind::TeleportedCz,
        ExperimentKind::Iswap,
        ExperimentKind::Swap,
        ExperimentKind::Grover,
        ExperimentKind::Bell,
        ExperimentKind::Memory,
        ExperimentKind::Rbm,
        ExperimentKind::CompositePulse,
        ExperimentKind::Entanglement,
        ExperimentKind::ErrorBudget,
        ExperimentKind::Circuit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TeleportedCz => "teleported-cz",
            ExperimentKind::Iswap => "iswap",
            ExperimentKind::Swap => "swap",
            ExperimentKind::Grover => "grover",
            ExperimentKind::Bell => "bell",
            ExperimentKind::Memory => "memory",
            ExperimentKind::Rbm => "rbm",
            ExperimentKind::CompositePulse => "composite-pulse",
            ExperimentKind::Entanglement => "entanglement",
            ExperimentKind::ErrorBudget => "error-budget",
            ExperimentKind::Circuit => "circuit",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseProfile {
    Ideal,
    SpamOnly,
    #[default]
    Calibrated,
}

/// A named profile or a full parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Profile(NoiseProfile),
    Custom(Box<NoiseModel>),
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Profile(NoiseProfile::Calibrated)
    }
}

impl NoiseSpec {
    pub fn model(&self) -> NoiseModel {
        match self {
            NoiseSpec::Profile(NoiseProfile::Ideal) => NoiseModel::ideal(),
            NoiseSpec::Profile(NoiseProfile::SpamOnly) => NoiseModel::spam_only(),
            NoiseSpec::Profile(NoiseProfile::Calibrated) => NoiseModel::calibrated(),
            NoiseSpec::Custom(m) => (**m).clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographyConfig {
    pub shots_per_setting: u64,
    /// Resamples for the fidelity error bar; below 2 disables it.
    pub bootstrap_resamples: usize,
    /// Entanglement campaigns averaged into the simulated channel.
    pub herald_samples: usize,
    pub mle: MleOptions,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        TomographyConfig {
            shots_per_setting: 500,
            bootstrap_resamples: 20,
            herald_samples: 8,
            mle: MleOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroverConfig {
    pub shots: u64,
    /// Marked states, Bob's bit first.
    pub marked: Vec<String>,
}

impl Default for GroverConfig {
    fn default() -> Self {
        GroverConfig {
            shots: 500,
            marked: ["00", "01", "10", "11"].map(String::from).to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BellConfig {
    pub shots_per_setting: u64,
}

impl Default for BellConfig {
    fn default() -> Self {
        BellConfig { shots_per_setting: 500 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    /// Fixed storage time (µs); unset means one entanglement campaign per
    /// herald sample.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub storage_time: Option<f64>,
}

/// Benchmarking run; the injected errors come from Alice's noise entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbmExperimentConfig {
    pub lengths: Vec<usize>,
    pub sequences_per_length: usize,
    pub shots_per_sequence: u64,
}

impl Default for RbmExperimentConfig {
    fn default() -> Self {
        RbmExperimentConfig {
            lengths: vec![2, 10, 25, 50, 100, 200, 400],
            sequences_per_length: 2000,
            shots_per_sequence: 1,
        }
    }
}

/// Rabi-ratio scan of the composite transfer pulse (kHz).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompositeScanConfig {
    pub rabi_t0: f64,
    pub detuning: f64,
    pub ratios: Vec<f64>,
    pub search: PhaseSearch,
    /// Phase (in turns) the scan reports its closest optimum to.
    pub reference_phi2_turns: f64,
}

impl Default for CompositeScanConfig {
    fn default() -> Self {
        CompositeScanConfig {
            rabi_t0: 50.0,
            detuning: 15.0,
            ratios: (0..=60).map(|k| (1150 + 5 * k) as f64 / 1000.0).collect(),
            search: PhaseSearch::default(),
            reference_phi2_turns: 0.231,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntanglementConfig {
    pub campaigns: usize,
    /// Histogram bins, each one re-cooling block wide; the last collects
    /// the tail.
    pub histogram_blocks: usize,
}

impl Default for EntanglementConfig {
    fn default() -> Self {
        EntanglementConfig {
            campaigns: 10_000,
            histogram_blocks: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorBudgetConfig {
    /// Allowed `|simulated − Σ rows|` in average gate infidelity.
    pub linearity_tolerance: f64,
}

impl Default for ErrorBudgetConfig {
    fn default() -> Self {
        ErrorBudgetConfig {
            linearity_tolerance: 0.02,
        }
    }
}

/// A user circuit in the text IR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub shots: u64,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        CircuitConfig { source: None, shots: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub scheduler: SchedulerMode,
    #[serde(default)]
    pub tomography: TomographyConfig,
    #[serde(default)]
    pub grover: GroverConfig,
    #[serde(default)]
    pub bell: BellConfig,
    #[serde(default)]
    pub memory: MemoryConfig,
    #[serde(default)]
    pub rbm: RbmExperimentConfig,
    #[serde(default)]
    pub composite_pulse: CompositeScanConfig,
    #[serde(default)]
    pub entanglement: EntanglementConfig,
    #[serde(default)]
    pub error_budget: ErrorBudgetConfig,
    #[serde(default)]
    pub circuit: CircuitConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            schema_version: SCHEMA_VERSION,
            noise: NoiseSpec::default(),
            protocol: ProtocolConfig::default(),
            scheduler: SchedulerMode::default(),
            tomography: TomographyConfig::default(),
            grover: GroverConfig::default(),
            bell: BellConfig::default(),
            memory: MemoryConfig::default(),
            rbm: RbmExperimentConfig::default(),
            composite_pulse: CompositeScanConfig::default(),
            entanglement: EntanglementConfig::default(),
            error_budget: ErrorBudgetConfig::default(),
            circuit: CircuitConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// JSON for `.json` files, TOML otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.noise.model().validate().map_err(cfg_err)?;
        self.protocol.schedule.validate().map_err(cfg_err)?;
        let positive = [
            ("tomography.shots_per_setting", self.tomography.shots_per_setting),
            ("tomography.herald_samples", self.tomography.herald_samples as u64),
            ("grover.shots", self.grover.shots),
            ("bell.shots_per_setting", self.bell.shots_per_setting),
            ("entanglement.campaigns", self.entanglement.campaigns as u64),
            ("entanglement.histogram_blocks", self.entanglement.histogram_blocks as u64),
            ("circuit.shots", self.circuit.shots),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for m in &self.grover.marked {
            compiler::parse_bits(m).map_err(cfg_err)?;
        }
        if let Some(t) = self.memory.storage_time {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config("memory.storage_time must be finite and non-negative".into()));
            }
        }
        self.rbm_config(RbmVariant::Plain { gate_error: 0.0 }).validate().map_err(cfg_err)?;
        let cp = &self.composite_pulse;
        if !(cp.rabi_t0 > 0.0 && cp.detuning >= 0.0) || cp.ratios.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("composite_pulse needs positive Rabi rates".into()));
        }
        if let Some(src) = &self.circuit.source {
            CircuitIR::parse(src).map_err(cfg_err)?;
        }
        Ok(())
    }

    /// Every noise parameter zero.
    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseSpec::Profile(NoiseProfile::Ideal);
        self
    }

    /// Replace every shot count.
    pub fn with_shots(mut self, shots: u64) -> Self {
        self.tomography.shots_per_setting = shots;
        self.grover.shots = shots;
        self.bell.shots_per_setting = shots;
        self.circuit.shots = shots;
        self
    }

    fn rbm_config(&self, variant: RbmVariant) -> RbmConfig {
        RbmConfig {
            variant,
            lengths: self.rbm.lengths.clone(),
            sequences_per_length: self.rbm.sequences_per_length,
            shots_per_sequence: self.rbm.shots_per_sequence,
            spam: self.noise.model().alice.spam.circuit,
        }
    }
}

/// Complex matrix as separate real and imaginary parts, rows outermost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn new(m: &CMatrix, labels: Option<Vec<String>>) -> Self {
        let pairs = to_pairs(m);
        MatrixJson {
            labels,
            re: pairs.iter().map(|r| r.iter().map(|p| p[0]).collect()).collect(),
            im: pairs.iter().map(|r| r.iter().map(|p| p[1]).collect()).collect(),
        }
    }

    fn chi(p: &ProcessMatrix) -> Self {
        Self::new(&p.chi, Some(ProcessMatrix::labels()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HeraldSummary {
    pub campaigns: usize,
    pub mean_attempts: f64,
    pub min_attempts: u64,
    pub max_attempts: u64,
    pub mean_elapsed_us: f64,
    /// Mean decoupling pulses per campaign, Alice then Bob.
    pub mean_dd_pulses: [f64; 2],
}

impl HeraldSummary {
    fn of(gates: &[GateRecord]) -> Self {
        if gates.is_empty() {
            return Self::default();
        }
        let n = gates.len() as f64;
        HeraldSummary {
            campaigns: gates.len(),
            mean_attempts: gates.iter().map(|g| g.attempts as f64).sum::<f64>() / n,
            min_attempts: gates.iter().map(|g| g.attempts).min().unwrap_or(0),
            max_attempts: gates.iter().map(|g| g.attempts).max().unwrap_or(0),
            mean_elapsed_us: gates.iter().map(|g| g.elapsed).sum::<f64>() / n,
            mean_dd_pulses: [0, 1].map(|i| gates.iter().map(|g| g.dd_pulses_applied[i] as f64).sum::<f64>() / n),
        }
    }
}

/// Event counts per protocol step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub total: usize,
    pub by_step: BTreeMap<String, usize>,
    /// Model time of the last event (µs).
    pub span_us: f64,
}

impl EventSummary {
    fn add(&mut self, events: &[Event]) {
        self.total += events.len();
        for e in events {
            *self.by_step.entry(e.step.clone()).or_default() += 1;
            self.span_us = self.span_us.max(e.time);
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FidelityReport {
    pub average_gate_fidelity: f64,
    pub process_fidelity: f64,
    /// Standard deviation over bootstrap resamples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_mean: Option<f64>,
    /// Fidelity of the simulated channel itself, without shot noise.
    pub exact_average_gate_fidelity: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct QptPayload {
    pub target: String,
    pub shots_per_setting: u64,
    pub fidelity: FidelityReport,
    pub chi_estimate: MatrixJson,
    pub chi_exact: MatrixJson,
    pub mle: MleDiagnostics,
    pub herald: HeraldSummary,
    pub resources_per_run: Resources,
    pub events: EventSummary,
    pub records: tomography::MeasurementRecord,
}

#[derive(Clone, Debug, Serialize)]
pub struct GroverMarked {
    pub marked: String,
    pub histogram: BTreeMap<String, u64>,
    pub success_probability: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GroverPayload {
    pub shots: u64,
    pub per_marked: Vec<GroverMarked>,
    pub mean_success: f64,
    pub herald: HeraldSummary,
    pub resources: Resources,
    pub events: EventSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct BellPayload {
    pub shots_per_setting: u64,
    pub rho_estimate: MatrixJson,
    pub fidelity_estimate: f64,
    pub fidelity_exact: f64,
    pub mle: MleDiagnostics,
    pub herald: HeraldSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct RbmPayload {
    pub plain: RbmResult,
    pub interleaved: RbmResult,
    /// `(1 − p_interleaved/p_plain)/2`.
    pub transfer_error_estimate: f64,
    pub transfer_error_configured: f64,
    pub gate_error_configured: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompositePayload {
    pub rabi_t0_khz: f64,
    pub detuning_khz: f64,
    pub scan: Vec<ScanPoint>,
    /// Feasible scan point whose optimal phase is closest to the reference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closest: Option<ScanPoint>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EntanglementPayload {
    pub campaigns: usize,
    pub success_prob: f64,
    pub mean_attempts: f64,
    pub std_attempts: f64,
    pub expected_mean_attempts: f64,
    pub mean_elapsed_us: f64,
    pub empirical_rate_per_s: f64,
    pub model_rate_per_s: f64,
    pub herald_fidelity: f64,
    /// Campaign counts per re-cooling block.
    pub block_histogram: Vec<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BudgetRow {
    pub mechanism: String,
    /// Occurrences per teleported gate.
    pub occurrences: u32,
    pub infidelity: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorBudget {
    pub rows: Vec<BudgetRow>,
    pub sum_of_rows: f64,
    pub simulated_infidelity: f64,
    pub linearity_tolerance: f64,
    pub within_tolerance: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CircuitPayload {
    pub circuit: String,
    pub nonlocal_cz_count: usize,
    pub shots: u64,
    pub histogram: BTreeMap<String, u64>,
    pub herald: HeraldSummary,
    pub resources: Resources,
    pub events: EventSummary,
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Qpt(Box<QptPayload>),
    Grover(GroverPayload),
    Bell(BellPayload),
    Rbm(RbmPayload),
    Composite(CompositePayload),
    Entanglement(EntanglementPayload),
    ErrorBudget(ErrorBudget),
    Circuit(CircuitPayload),
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub config: Config,
    /// False when an iterative estimator hit its iteration cap.
    pub converged: bool,
    pub payload: Payload,
}

impl RunResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The payload alone, for byte comparisons.
    pub fn payload_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.payload)?)
    }
}

/// Master seed of experiment `index` in a batch.
pub fn batch_seed(seed: u64, index: usize) -> u64 {
    rng::stream(seed, rng::streams::BATCH_BASE + index as u64).next_u64()
}

pub fn run(kind: ExperimentKind, cfg: &Config, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let noise = cfg.noise.model();
    let (payload, converged) = match kind {
        ExperimentKind::TeleportedCz => qpt(cfg, &noise, &[Instruction::TeleportedCz], &gates::cz(), "CZ", seed)?,
        ExperimentKind::Iswap => {
            let program = compiler::iswap_circuit()?.to_instructions()?;
            qpt(cfg, &noise, &program, &gates::iswap(), "iSWAP", seed)?
        }
        ExperimentKind::Swap => {
            let program = compiler::swap_circuit()?.to_instructions()?;
            qpt(cfg, &noise, &program, &gates::swap(), "SWAP", seed)?
        }
        ExperimentKind::Memory => memory_qpt(cfg, &noise, seed)?,
        ExperimentKind::Grover => (Payload::Grover(grover(cfg, &noise, seed)?), true),
        ExperimentKind::Bell => bell(cfg, &noise, seed)?,
        ExperimentKind::Rbm => (Payload::Rbm(rbm(cfg, &noise, seed)?), true),
        ExperimentKind::CompositePulse => (Payload::Composite(composite(cfg)?), true),
        ExperimentKind::Entanglement => (Payload::Entanglement(entanglement(cfg, &noise, seed)?), true),
        ExperimentKind::ErrorBudget => (Payload::ErrorBudget(error_budget(cfg, &noise, seed)?), true),
        ExperimentKind::Circuit => (Payload::Circuit(circuit(cfg, &noise, seed)?), true),
    };
    Ok(RunResult {
        schema_version: SCHEMA_VERSION,
        experiment: kind,
        seed,
        config: cfg.clone(),
        converged,
        payload,
    })
}

/// Independent experiments in parallel, each on its batch seed.
pub fn run_batch(kinds: &[ExperimentKind], cfg: &Config, seed: u64) -> Vec<Result<RunResult>> {
    par_map(kinds.len(), |i| {
        let index = ExperimentKind::ALL.iter().position(|k| *k == kinds[i]).unwrap_or(i);
        run(kinds[i], cfg, batch_seed(seed, index))
    })
}

#[cfg(feature = "parallel")]
fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// A protocol program as a channel on the circuit qubits: readout outcomes
/// and quasi-static phases summed exactly, entanglement campaigns averaged
/// over `samples` herald draws shared by all inputs.
pub struct ProtocolChannel {
    /// Images of the sixteen tomographic inputs.
    pub outputs: Vec<CMatrix>,
    pub gates: Vec<GateRecord>,
    pub resources: Resources,
    pub events: EventSummary,
}

impl ProtocolChannel {
    pub fn process(&self) -> Result<ProcessMatrix> {
        Ok(ProcessMatrix::from_choi(&choi_from_outputs(&self.outputs)?))
    }
}

pub fn protocol_channel(
    noise: &NoiseModel,
    protocol: &ProtocolConfig,
    program: &[Instruction],
    samples: usize,
    seed: u64,
) -> Result<ProtocolChannel> {
    let keep = Session::circuit_qubits();
    let inputs = tomographic_product_inputs();
    let runs = par_map(samples, |s| -> Result<_> {
        let session_seed = rng::derive_seed(seed, families::HERALD, s as u64);
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut first = None;
        for input in &inputs {
            let mut session = Session::new(noise, protocol, session_seed, SchedulerMode::Sequential)?;
            let out = session.run(program, input.clone(), OutcomeMode::Averaged)?;
            outputs.push(out.state.partial_trace(&keep)?.density_matrix());
            if first.is_none() {
                first = Some((out.gates, out.resources, out.events));
            }
        }
        Ok((outputs, first.unwrap_or_default()))
    });
    let mut outputs = vec![CMatrix::zeros(4, 4); inputs.len()];
    let mut gates = Vec::new();
    let mut resources = Resources::default();
    let mut events = EventSummary::default();
    let w = 1.0 / samples as f64;
    for r in runs {
        let (outs, (g, res, ev)) = r?;
        for (acc, o) in outputs.iter_mut().zip(outs) {
            *acc += o * crate::linalg::c(w, 0.0);
        }
        gates.extend(g);
        resources = res;
        events.add(&ev);
    }
    Ok(ProtocolChannel {
        outputs,
        gates,
        resources,
        events,
    })
}

fn circuit_povm(noise: &NoiseModel) -> [SpamPovm; 2] {
    [noise.alice.spam.circuit, noise.bob.spam.circuit]
}

fn qpt(
    cfg: &Config,
    noise: &NoiseModel,
    program: &[Instruction],
    target: &CMatrix,
    label: &str,
    seed: u64,
) -> Result<(Payload, bool)> {
    let ch = protocol_channel(noise, &cfg.protocol, program, cfg.tomography.herald_samples, seed)?;
    let p = qpt_payload(cfg, noise, &ch, target, label, seed)?;
    let converged = p.mle.converged;
    Ok((Payload::Qpt(Box::new(p)), converged))
}

fn qpt_payload(
    cfg: &Config,
    noise: &NoiseModel,
    ch: &ProtocolChannel,
    target: &CMatrix,
    label: &str,
    seed: u64,
) -> Result<QptPayload> {
    let tc = &cfg.tomography;
    let settings = TomographySettings {
        shots_per_setting: tc.shots_per_setting,
        povm: circuit_povm(noise),
    };
    let probs = tomography::outcome_probabilities(&ch.outputs, &tomography::measurement_effects(&settings.povm));
    let mut r = rng::stream(seed, rng::streams::TOMOGRAPHY);
    let records = tomography::records_from_probabilities(RecordKind::Process, &probs, tc.shots_per_setting, &mut r);
    let est = tomography::mle_process(&records.table()?, &settings.povm, &tc.mle, None)?;
    let boot = if tc.bootstrap_resamples >= 2 {
        Some(tomography::bootstrap(
            &records,
            &settings,
            target,
            tc.bootstrap_resamples,
            rng::derive_seed(seed, families::BOOTSTRAP, 0),
            Some(&est),
        )?)
    } else {
        None
    };
    let exact = ch.process()?;
    Ok(QptPayload {
        target: label.to_string(),
        shots_per_setting: tc.shots_per_setting,
        fidelity: FidelityReport {
            average_gate_fidelity: est.chi.average_gate_fidelity(target)?,
            process_fidelity: est.chi.process_fidelity(target)?,
            bootstrap_std: boot.as_ref().map(|b| b.std),
            bootstrap_mean: boot.as_ref().map(|b| b.mean),
            exact_average_gate_fidelity: exact.average_gate_fidelity(target)?,
        },
        chi_estimate: MatrixJson::chi(&est.chi),
        chi_exact: MatrixJson::chi(&exact),
        mle: est.diagnostics,
        herald: HeraldSummary::of(&ch.gates),
        resources_per_run: ch.resources,
        events: ch.events.clone(),
        records,
    })
}

/// Exact teleported-CZ channel under `noise`.
pub fn teleported_cz_channel(
    noise: &NoiseModel,
    protocol: &ProtocolConfig,
    herald_samples: usize,
    seed: u64,
) -> Result<ProtocolChannel> {
    protocol_channel(noise, protocol, &[Instruction::TeleportedCz], herald_samples, seed)
}

/// Both circuit qubits stored under decoupling for one campaign (or a
/// fixed time); the interrupted cycle is completed so the ideal map is the
/// identity.
fn memory_qpt(cfg: &Config, noise: &NoiseModel, seed: u64) -> Result<(Payload, bool)> {
    let inputs = tomographic_product_inputs();
    let keep = Session::circuit_qubits();
    let samples = cfg.tomography.herald_samples;
    let runs = par_map(samples, |s| -> Result<_> {
        let session_seed = rng::derive_seed(seed, families::HERALD, s as u64);
        let elapsed = match cfg.memory.storage_time {
            Some(t) => t,
            None => {
                let mut r = rng::stream(session_seed, rng::streams::LINK);
                let n = cfg.protocol.schedule.sample_attempts(&mut r);
                cfg.protocol.schedule.elapsed_for(n)
            }
        };
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut record = GateRecord {
            elapsed,
            ..GateRecord::default()
        };
        let mut events = Vec::new();
        for (k, input) in inputs.iter().enumerate() {
            let mut session = Session::new(noise, &cfg.protocol, session_seed, SchedulerMode::Sequential)?;
            let mut st = input.clone();
            for (i, agent) in session.agents_mut().iter_mut().enumerate() {
                let n = agent.store_during(&mut st, elapsed, NoiseResolution::Averaged)?;
                agent.complete_dd_with_cz_propagation(&mut st)?;
                record.dd_pulses_applied[i] = n;
                if k == 0 {
                    events.extend(agent.take_events());
                }
            }
            outputs.push(st.partial_trace(&keep)?.density_matrix());
        }
        Ok((outputs, record, events))
    });
    let mut ch = ProtocolChannel {
        outputs: vec![CMatrix::zeros(4, 4); inputs.len()],
        gates: Vec::new(),
        resources: Resources::default(),
        events: EventSummary::default(),
    };
    let w = crate::linalg::c(1.0 / samples as f64, 0.0);
    for r in runs {
        let (outs, rec, ev) = r?;
        for (acc, o) in ch.outputs.iter_mut().zip(outs) {
            *acc += o * w;
        }
        ch.gates.push(rec);
        ch.events.add(&ev);
    }
    let p = qpt_payload(cfg, noise, &ch, &crate::linalg::identity(4), "identity", seed)?;
    let converged = p.mle.converged;
    Ok((Payload::Qpt(Box::new(p)), converged))
}

type ShotSummary = (BTreeMap<String, u64>, Vec<GateRecord>, Resources, EventSummary);

/// Single-shot histogram of `circuit`: one session per `stream`, shots run
/// back to back on it.
fn histogram(
    cfg: &Config,
    noise: &NoiseModel,
    circuit: &CircuitIR,
    shots: u64,
    seed: u64,
    stream: u64,
) -> Result<ShotSummary> {
    let program = circuit.to_instructions()?;
    let session_seed = rng::derive_seed(seed, families::SHOTS, stream);
    let mut session = Session::new(noise, &cfg.protocol, session_seed, cfg.scheduler)?;
    let mut hist = BTreeMap::new();
    let mut gates = Vec::new();
    let mut resources = Resources::default();
    let mut events = EventSummary::default();
    for shot in 0..shots {
        let input = crate::quantum::QuantumState::zero(&Session::circuit_qubits())?;
        let out = session.run(&program, input, OutcomeMode::Sampled)?;
        let key = if out.outcomes.is_empty() {
            String::new()
        } else {
            compiler::format_bits(compiler::outcome_bits(&out.outcomes))
        };
        *hist.entry(key).or_insert(0) += 1;
        resources.bell_pairs += out.resources.bell_pairs;
        resources.classical_bits += out.resources.classical_bits;
        gates.extend(out.gates);
        if shot == 0 {
            events.add(&out.events);
        }
    }
    Ok((hist, gates, resources, events))
}

fn grover(cfg: &Config, noise: &NoiseModel, seed: u64) -> Result<GroverPayload> {
    let marked = &cfg.grover.marked;
    let runs = par_map(marked.len(), |i| -> Result<_> {
        let circuit = compiler::grover_circuit(&marked[i])?;
        histogram(cfg, noise, &circuit, cfg.grover.shots, seed, i as u64)
    });
    let mut per_marked = Vec::new();
    let mut gates = Vec::new();
    let mut resources = Resources::default();
    let mut events = EventSummary::default();
    for (m, r) in marked.iter().zip(runs) {
        let (hist, g, res, ev) = r?;
        let hits = hist.get(m.as_str()).copied().unwrap_or(0);
        per_marked.push(GroverMarked {
            marked: m.clone(),
            success_probability: hits as f64 / cfg.grover.shots as f64,
            histogram: hist,
        });
        gates.extend(g);
        resources.bell_pairs += res.bell_pairs;
        resources.classical_bits += res.classical_bits;
        events.add_summary(&ev);
    }
    let mean_success = per_marked.iter().map(|m| m.success_probability).sum::<f64>() / per_marked.len().max(1) as f64;
    Ok(GroverPayload {
        shots: cfg.grover.shots,
        per_marked,
        mean_success,
        herald: HeraldSummary::of(&gates),
        resources,
        events,
    })
}

impl EventSummary {
    fn add_summary(&mut self, other: &EventSummary) {
        self.total += other.total;
        for (k, v) in &other.by_step {
            *self.by_step.entry(k.clone()).or_default() += v;
        }
        self.span_us = self.span_us.max(other.span_us);
    }
}

/// State tomography of freshly heralded network-qubit pairs.
fn bell(cfg: &Config, noise: &NoiseModel, seed: u64) -> Result<(Payload, bool)> {
    let pair = [QubitId::network(ModuleId::ALICE), QubitId::network(ModuleId::BOB)];
    let mut link = rng::stream(seed, rng::streams::LINK);
    let rec = generate_entanglement(&cfg.protocol.schedule, &noise.bell, pair, &mut link)?;
    let rho = rec.state.density_matrix();
    let settings = TomographySettings {
        shots_per_setting: cfg.bell.shots_per_setting,
        povm: [noise.alice.spam.network, noise.bob.spam.network],
    };
    let mut r = rng::stream(seed, rng::streams::TOMOGRAPHY);
    let records = tomography::simulate_qst_records(&rho, &settings, &mut r);
    let est = tomography::mle_state(&records.table()?, &settings.povm, &cfg.tomography.mle)?;
    let converged = est.diagnostics.converged;
    let gate = GateRecord {
        attempts: rec.attempts,
        elapsed: rec.elapsed,
        ..GateRecord::default()
    };
    Ok((
        Payload::Bell(BellPayload {
            shots_per_setting: settings.shots_per_setting,
            fidelity_estimate: tomography::psi_plus_fidelity(&est.rho),
            fidelity_exact: tomography::psi_plus_fidelity(&rho),
            rho_estimate: MatrixJson::new(&est.rho, None),
            mle: est.diagnostics,
            herald: HeraldSummary::of(&[gate]),
        }),
        converged,
    ))
}

/// Plain and transfer-interleaved benchmarking with the rotation and
/// transfer errors of Alice's module.
fn rbm(cfg: &Config, noise: &NoiseModel, seed: u64) -> Result<RbmPayload> {
    let gate_error = noise.alice.rotation_depolarizing / 2.0;
    let transfer_error = noise.alice.transfer_error;
    let plain = calibration::run_rbm(
        &cfg.rbm_config(RbmVariant::Plain { gate_error }),
        rng::derive_seed(seed, families::PART, 0),
    )?;
    let interleaved = calibration::run_rbm(
        &cfg.rbm_config(RbmVariant::InterleavedTransfer {
            gate_error,
            transfer_error,
        }),
        rng::derive_seed(seed, families::PART, 1),
    )?;
    let ratio = if plain.p > 0.0 { interleaved.p / plain.p } else { 0.0 };
    Ok(RbmPayload {
        transfer_error_estimate: (1.0 - ratio) / 2.0,
        transfer_error_configured: transfer_error,
        gate_error_configured: gate_error,
        plain,
        interleaved,
    })
}

fn composite(cfg: &Config) -> Result<CompositePayload> {
    let cp = &cfg.composite_pulse;
    let scan = calibration::scan_ratios(cp.rabi_t0, cp.detuning, &cp.ratios, &cp.search)?;
    let reference = cp.reference_phi2_turns * std::f64::consts::TAU;
    let closest = scan
        .iter()
        .filter(|pt| pt.optimum.feasible && !pt.optimum.degenerate)
        .min_by(|a, b| (a.optimum.phi2 - reference).abs().total_cmp(&(b.optimum.phi2 - reference).abs()))
        .copied();
    Ok(CompositePayload {
        rabi_t0_khz: cp.rabi_t0,
        detuning_khz: cp.detuning,
        scan,
        closest,
    })
}

fn entanglement(cfg: &Config, noise: &NoiseModel, seed: u64) -> Result<EntanglementPayload> {
    let sched = &cfg.protocol.schedule;
    let pair = [QubitId::network(ModuleId::ALICE), QubitId::network(ModuleId::BOB)];
    let mut r = rng::stream(seed, rng::streams::LINK);
    let nb = cfg.entanglement.histogram_blocks;
    let mut hist = vec![0u64; nb];
    let (mut sum, mut sum2, mut elapsed) = (0.0, 0.0, 0.0);
    let reference = crate::noise::bell_psi_plus(pair)?;
    let mut fidelity = None;
    for _ in 0..cfg.entanglement.campaigns {
        let rec = generate_entanglement(sched, &noise.bell, pair, &mut r)?;
        let a = rec.attempts as f64;
        sum += a;
        sum2 += a * a;
        elapsed += rec.elapsed;
        let block = ((rec.attempts - 1) / sched.attempts_per_block) as usize;
        hist[block.min(nb - 1)] += 1;
        if fidelity.is_none() {
            fidelity = Some(rec.state.fidelity_to_pure(&reference)?);
        }
    }
    let n = cfg.entanglement.campaigns as f64;
    let mean = sum / n;
    Ok(EntanglementPayload {
        campaigns: cfg.entanglement.campaigns,
        success_prob: sched.success_prob,
        mean_attempts: mean,
        std_attempts: ((sum2 / n - mean * mean) * n / (n - 1.0).max(1.0)).max(0.0).sqrt(),
        expected_mean_attempts: 1.0 / sched.success_prob,
        mean_elapsed_us: elapsed / n,
        empirical_rate_per_s: 1e6 * n / elapsed,
        model_rate_per_s: 1e6 * sched.mean_rate(),
        herald_fidelity: fidelity.unwrap_or(0.0),
        block_histogram: hist,
    })
}

/// The noise model with only the parameters of one mechanism kept.
fn isolate(noise: &NoiseModel, keep: &dyn Fn(&NoiseModel, &mut NoiseModel)) -> NoiseModel {
    let mut m = NoiseModel::ideal();
    keep(noise, &mut m);
    m
}

type Mechanism = (&'static str, u32, Box<dyn Fn(&NoiseModel, &mut NoiseModel)>);

fn mechanisms() -> Vec<Mechanism> {
    vec![
        ("bell_state", 1, Box::new(|n: &NoiseModel, m: &mut NoiseModel| m.bell = n.bell)),
        (
            "local_cz",
            2,
            Box::new(|n, m| {
                m.alice.local_cz_depolarizing = n.alice.local_cz_depolarizing;
                m.bob.local_cz_depolarizing = n.bob.local_cz_depolarizing;
            }),
        ),
        (
            "transfer",
            4,
            Box::new(|n, m| {
                m.alice.transfer_error = n.alice.transfer_error;
                m.bob.transfer_error = n.bob.transfer_error;
            }),
        ),
        (
            "mid_circuit_measurement",
            2,
            Box::new(|n, m| {
                for (src, dst) in [(&n.alice, &mut m.alice), (&n.bob, &mut m.bob)] {
                    dst.detection_base = src.detection_base;
                    dst.detection_duration = src.detection_duration;
                    dst.upper_state_lifetime = src.upper_state_lifetime;
                    dst.rotation_depolarizing = 0.0;
                }
            }),
        ),
        (
            "memory_dephasing",
            2,
            Box::new(|n, m| {
                for (src, dst) in [(&n.alice, &mut m.alice), (&n.bob, &mut m.bob)] {
                    dst.memory_dephasing_rate = src.memory_dephasing_rate;
                    dst.memory_detuning_std = src.memory_detuning_std;
                }
            }),
        ),
        (
            "single_qubit_rotations",
            4,
            Box::new(|n, m| {
                m.alice.rotation_depolarizing = n.alice.rotation_depolarizing;
                m.bob.rotation_depolarizing = n.bob.rotation_depolarizing;
            }),
        ),
    ]
}

/// First-order budget: each mechanism alone through the exact teleported
/// CZ channel, against all of them together.
pub fn error_budget(cfg: &Config, noise: &NoiseModel, seed: u64) -> Result<ErrorBudget> {
    let samples = cfg.tomography.herald_samples;
    let cz = gates::cz();
    let infidelity = |m: &NoiseModel| -> Result<f64> {
        let ch = teleported_cz_channel(m, &cfg.protocol, samples, seed)?;
        Ok(1.0 - ch.process()?.average_gate_fidelity(&cz)?)
    };
    let mut rows = Vec::new();
    for (name, occurrences, keep) in mechanisms() {
        rows.push(BudgetRow {
            mechanism: name.to_string(),
            occurrences,
            infidelity: infidelity(&isolate(noise, keep.as_ref()))?.max(0.0),
        });
    }
    let sum_of_rows = rows.iter().map(|r| r.infidelity).sum::<f64>();
    let simulated = infidelity(noise)?.max(0.0);
    let tol = cfg.error_budget.linearity_tolerance;
    Ok(ErrorBudget {
        rows,
        sum_of_rows,
        simulated_infidelity: simulated,
        linearity_tolerance: tol,
        within_tolerance: (simulated - sum_of_rows).abs() <= tol,
    })
}

fn circuit(cfg: &Config, noise: &NoiseModel, seed: u64) -> Result<CircuitPayload> {
    let src = cfg
        .circuit
        .source
        .as_deref()
        .ok_or_else(|| Error::Config("circuit experiment needs circuit.source".into()))?;
    let ir = CircuitIR::parse(src)?;
    let (histogram, gates, resources, events) = histogram(cfg, noise, &ir, cfg.circuit.shots, seed, 0)?;
    Ok(CircuitPayload {
        circuit: ir.to_text(),
        nonlocal_cz_count: ir.nonlocal_cz_count(),
        shots: cfg.circuit.shots,
        histogram,
        herald: HeraldSummary::of(&gates),
        resources,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!(matches!("nope".parse::<ExperimentKind>(), Err(Error::UnknownExperiment(_))));
    }

    #[test]
    fn config_defaults_and_versioning() {
        let cfg = Config::from_toml_str("schema_version = 1\n").unwrap();
        assert_eq!(cfg, Config::default());
        assert!(matches!(Config::from_toml_str("schema_version = 2\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml_str("schema_version = 1\nbogus = 3\n"), Err(Error::Config(_))));
        let cfg = Config::from_toml_str("schema_version = 1\nnoise = \"ideal\"\n").unwrap();
        assert_eq!(cfg.noise.model(), NoiseModel::ideal());
        let json = serde_json::to_string(&Config::default()).unwrap();
        assert_eq!(Config::from_json_str(&json).unwrap(), Config::default());
    }

    #[test]
    fn custom_noise_round_trips_through_toml() {
        let mut cfg = Config::default();
        cfg.noise = NoiseSpec::Custom(Box::new(NoiseModel::spam_only()));
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(Config::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn noiseless_budget_is_zero() {
        let mut cfg = Config::default().noiseless();
        cfg.tomography.herald_samples = 1;
        let b = error_budget(&cfg, &NoiseModel::ideal(), 1).unwrap();
        assert!(b.rows.iter().all(|r| r.infidelity < 1e-12));
        assert!(b.simulated_infidelity < 1e-12 && b.within_tolerance);
    }
}
