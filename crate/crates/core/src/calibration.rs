//! Physics-level calibration tools: the three-pulse composite sequence
//! that moves population on one hyperfine transition while leaving a
//! near-degenerate neighbour untouched, and single-qubit randomized
//! benchmarking (plain and with interleaved circuit/auxiliary transfers).
//!
//! Pulse frequencies are in kHz and times in ms.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use nalgebra::{Matrix4, Vector4};

use crate::linalg::{c, phase_insensitive_distance, CMatrix, C64};
use crate::noise::{depolarizing_channel, SpamPovm};
use crate::quantum::{gates, KrausChannel};
use crate::rng;

/// Three pulses resonant with the wanted transition `T0`, each lasting
/// the 2π time of the drive on the unwanted transition `T1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositePulseConfig {
    /// Rabi frequency on the resonant transition (kHz).
    pub rabi_t0: f64,
    /// Rabi frequency of the same drive on the unwanted transition (kHz).
    pub rabi_t1: f64,
    /// Offset of the unwanted transition from the drive (kHz).
    #[serde(default = "default_detuning")]
    pub detuning: f64,
    pub phases: [f64; 3],
    /// Duration of each pulse (ms).
    pub pulse_duration: f64,
}

fn default_detuning() -> f64 {
    15.0
}

impl CompositePulseConfig {
    pub fn new(rabi_t0: f64, rabi_t1: f64, detuning: f64, phi2: f64) -> Self {
        CompositePulseConfig {
            rabi_t0,
            rabi_t1,
            detuning,
            phases: [0.0, phi2, 0.0],
            pulse_duration: 1.0 / rabi_t1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rabi_t0", self.rabi_t0), ("rabi_t1", self.rabi_t1)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.detuning.is_finite() {
            return Err(Error::InvalidParameter("detuning must be finite".into()));
        }
        if (self.pulse_duration * self.rabi_t1 - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "pulse duration {} ms is not the 2π time 1/{} kHz",
                self.pulse_duration, self.rabi_t1
            )));
        }
        if self.phases[0] != 0.0 || self.phases[2] != 0.0 {
            return Err(Error::InvalidParameter("outer pulse phases must be 0".into()));
        }
        Ok(())
    }
}

/// Square pulse on a two-level system: Rabi frequency `rabi` (kHz) with
/// drive phase `phi`, detuning `detuning` (kHz), duration `t` (ms).
pub fn rabi_pulse(rabi: f64, detuning: f64, phi: f64, t: f64) -> CMatrix {
    let omega = TAU * rabi;
    let delta = TAU * detuning;
    let g = omega.hypot(delta);
    if g == 0.0 {
        return gates::id2();
    }
    let (nx, ny, nz) = (omega * phi.cos() / g, omega * phi.sin() / g, delta / g);
    let (s, co) = (g * t / 2.0).sin_cos();
    let i = c(0.0, 1.0);
    crate::linalg::cmat(
        2,
        2,
        &[
            c(co, 0.0) - i * s * nz,
            -i * s * C64::new(nx, -ny),
            -i * s * C64::new(nx, ny),
            c(co, 0.0) + i * s * nz,
        ],
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseOutcome {
    /// `1 − P(|0⟩ → |1⟩)` on the resonant transition.
    pub transfer_error_t0: f64,
    /// `P(|0⟩ → |1⟩)` on the detuned transition.
    pub leakage_t1: f64,
}

fn transition_probability(u: &CMatrix) -> f64 {
    u[(1, 0)].norm_sqr()
}

/// Propagate both transitions, as independent two-level systems, through
/// the three pulses.
pub fn simulate_composite_pulse(cfg: &CompositePulseConfig) -> PulseOutcome {
    let t = cfg.pulse_duration;
    let mut u0 = gates::id2();
    let mut u1 = gates::id2();
    for &phi in &cfg.phases {
        u0 = rabi_pulse(cfg.rabi_t0, 0.0, phi, t) * u0;
        u1 = rabi_pulse(cfg.rabi_t1, cfg.detuning, phi, t) * u1;
    }
    PulseOutcome {
        transfer_error_t0: 1.0 - transition_probability(&u0),
        leakage_t1: transition_probability(&u1),
    }
}

/// Baseline: one resonant π pulse on `T0` with the same drive.
pub fn naive_pi_pulse(rabi_t0: f64, rabi_t1: f64, detuning: f64) -> PulseOutcome {
    let t = 0.5 / rabi_t0;
    PulseOutcome {
        transfer_error_t0: 1.0 - transition_probability(&rabi_pulse(rabi_t0, 0.0, 0.0, t)),
        leakage_t1: transition_probability(&rabi_pulse(rabi_t1, detuning, 0.0, t)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSearch {
    /// Transfer-error ceiling on `T0`.
    pub threshold: f64,
    pub grid_points: usize,
    /// Start of the grid as a fraction of one grid step.
    pub grid_offset: f64,
}

impl Default for PhaseSearch {
    fn default() -> Self {
        PhaseSearch {
            threshold: 1e-3,
            grid_points: 4096,
            grid_offset: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseOptimum {
    /// Middle-pulse phase in `[0, π]`.
    pub phi2: f64,
    pub outcome: PulseOutcome,
    /// The transfer-error ceiling is met.
    pub feasible: bool,
    /// Equal Rabi rates at zero detuning: the two transitions cannot be
    /// told apart.
    pub degenerate: bool,
}

/// Minimize the leakage on `T1` over the middle phase subject to the
/// transfer-error ceiling: a uniform grid, then golden-section refinement
/// of the best feasible cell on the penalized cost. If nothing is feasible
/// the smallest-transfer-error point is returned with `feasible = false`.
pub fn optimize_phase(rabi_t0: f64, rabi_t1: f64, detuning: f64, search: &PhaseSearch) -> Result<PhaseOptimum> {
    CompositePulseConfig::new(rabi_t0, rabi_t1, detuning, 0.0).validate()?;
    if search.grid_points < 8 {
        return Err(Error::InvalidParameter("phase grid needs at least 8 points".into()));
    }
    let degenerate = detuning == 0.0 && (rabi_t0 - rabi_t1).abs() <= 1e-12 * rabi_t0;
    let eval = |phi: f64| simulate_composite_pulse(&CompositePulseConfig::new(rabi_t0, rabi_t1, detuning, phi));
    let cost = |o: &PulseOutcome| {
        if o.transfer_error_t0 <= search.threshold {
            o.leakage_t1
        } else {
            1.0 + o.transfer_error_t0
        }
    };
    let step = TAU / search.grid_points as f64;
    let grid: Vec<(f64, PulseOutcome)> = (0..search.grid_points)
        .map(|k| {
            let phi = (k as f64 + search.grid_offset) * step;
            (phi, eval(phi))
        })
        .collect();
    let (best_phi, best) = grid
        .iter()
        .min_by(|a, b| cost(&a.1).total_cmp(&cost(&b.1)))
        .copied()
        .expect("non-empty grid");
    let f = |phi: f64| cost(&eval(phi));
    let phi = golden_section(f, best_phi - step, best_phi + step, 1e-12);
    let refined = eval(phi);
    let (phi, outcome) = if cost(&refined) <= cost(&best) {
        (phi, refined)
    } else {
        (best_phi, best)
    };
    // both populations are unchanged under φ₂ → −φ₂; report the
    // representative in [0, π]
    let phi = phi.rem_euclid(TAU);
    Ok(PhaseOptimum {
        phi2: if phi > PI { TAU - phi } else { phi },
        outcome,
        feasible: outcome.transfer_error_t0 <= search.threshold,
        degenerate,
    })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while (b - a).abs() > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    (a + b) / 2.0
}

/// One row of a Rabi-ratio scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    /// `rabi_t1 / rabi_t0`.
    pub ratio: f64,
    pub optimum: PhaseOptimum,
    pub naive: PulseOutcome,
}

/// Optimize the middle phase for each ratio `rabi_t1 / rabi_t0` at fixed
/// `rabi_t0`.
pub fn scan_ratios(rabi_t0: f64, detuning: f64, ratios: &[f64], search: &PhaseSearch) -> Result<Vec<ScanPoint>> {
    ratios
        .iter()
        .map(|&ratio| {
            let rabi_t1 = ratio * rabi_t0;
            Ok(ScanPoint {
                ratio,
                optimum: optimize_phase(rabi_t0, rabi_t1, detuning, search)?,
                naive: naive_pi_pulse(rabi_t0, rabi_t1, detuning),
            })
        })
        .collect()
}

/// The 24 single-qubit Cliffords (modulo phase), generated from H and S.
#[derive(Clone, Debug)]
pub struct CliffordGroup {
    elements: Vec<CMatrix>,
    table: Vec<Vec<usize>>,
    inverse: Vec<usize>,
}

impl CliffordGroup {
    pub fn new() -> Self {
        let mut elements = vec![gates::id2()];
        let gens = [gates::h(), gates::s()];
        let mut frontier = 0;
        while frontier < elements.len() {
            let g = elements[frontier].clone();
            for h in &gens {
                let cand = h * &g;
                if !elements.iter().any(|e| phase_insensitive_distance(&cand, e) < 1e-9) {
                    elements.push(cand);
                }
            }
            frontier += 1;
        }
        let find = |m: &CMatrix| {
            elements
                .iter()
                .position(|e| phase_insensitive_distance(m, e) < 1e-9)
                .expect("group is closed")
        };
        let table: Vec<Vec<usize>> = elements
            .iter()
            .map(|a| elements.iter().map(|b| find(&(a * b))).collect())
            .collect();
        let inverse = (0..elements.len())
            .map(|a| (0..elements.len()).find(|&b| table[a][b] == 0).expect("inverse exists"))
            .collect();
        CliffordGroup {
            elements,
            table,
            inverse,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, k: usize) -> &CMatrix {
        &self.elements[k]
    }

    /// Index of `a·b`.
    pub fn compose(&self, a: usize, b: usize) -> usize {
        self.table[a][b]
    }

    pub fn inverse(&self, a: usize) -> usize {
        self.inverse[a]
    }
}

impl Default for CliffordGroup {
    fn default() -> Self {
        Self::new()
    }
}

/// What a benchmarking sequence interleaves with its Cliffords.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RbmVariant {
    /// Depolarizing error `ε` (average gate infidelity) after each Clifford.
    Plain { gate_error: f64 },
    /// Cliffords alternate between the circuit and the auxiliary qubit,
    /// with a transfer of average infidelity `transfer_error` between them
    /// and `gate_error` after each Clifford.
    InterleavedTransfer { gate_error: f64, transfer_error: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbmConfig {
    pub variant: RbmVariant,
    pub lengths: Vec<usize>,
    pub sequences_per_length: usize,
    /// Single-shot readouts per random sequence.
    #[serde(default = "default_shots")]
    pub shots_per_sequence: u64,
    #[serde(default)]
    pub spam: SpamPovm,
}

fn default_shots() -> u64 {
    1
}

impl RbmConfig {
    pub fn validate(&self) -> Result<()> {
        let mut distinct = self.lengths.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::InvalidParameter("benchmarking needs at least two sequence lengths".into()));
        }
        if self.sequences_per_length == 0 || self.shots_per_sequence == 0 {
            return Err(Error::InvalidParameter("need at least one sequence and one shot".into()));
        }
        self.spam.validate()?;
        let (g, t) = match self.variant {
            RbmVariant::Plain { gate_error } => (gate_error, 0.0),
            RbmVariant::InterleavedTransfer { gate_error, transfer_error } => (gate_error, transfer_error),
        };
        for (name, v) in [("gate_error", g), ("transfer_error", t)] {
            if !(0.0..=0.5).contains(&v) {
                return Err(Error::InvalidProbability { name, value: v });
            }
        }
        Ok(())
    }
}

/// One length's survival statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub length: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbmResult {
    pub points: Vec<SurvivalPoint>,
    pub b: f64,
    pub p: f64,
    /// `(1 − p)/2`.
    pub epsilon: f64,
    /// `mean − fit` per length.
    pub residuals: Vec<f64>,
    /// Survival grows with length somewhere or the fit sits on `p = 0`.
    pub flagged: bool,
}

/// Single-qubit depolarizing channel with average infidelity `eps`.
fn infidelity_channel(eps: f64) -> Result<KrausChannel> {
    depolarizing_channel(2.0 * eps, 1)
}

/// Pauli transfer matrix `R_ij = ½ Tr(P_i E(P_j))` of a one-qubit map.
fn ptm(map: impl Fn(&CMatrix) -> CMatrix) -> Matrix4<f64> {
    let paulis = [gates::id2(), gates::x(), gates::y(), gates::z()];
    Matrix4::from_fn(|i, j| 0.5 * (&paulis[i] * map(&paulis[j])).trace().re)
}

/// Per-element transfer matrices (Clifford, then its errors) and the
/// readout functional, so a sequence is a chain of 4×4 real products.
struct RbmModel {
    elements: Vec<Matrix4<f64>>,
    readout: Vector4<f64>,
}

impl RbmModel {
    fn new(group: &CliffordGroup, noise: &[KrausChannel], spam: &SpamPovm) -> Self {
        let noise_ptm = noise
            .iter()
            .fold(Matrix4::identity(), |acc, ch| ptm(|m| ch.apply_to_matrix(m)) * acc);
        let elements = (0..group.len())
            .map(|k| {
                let u = group.element(k);
                noise_ptm * ptm(|m| u * m * u.adjoint())
            })
            .collect();
        let m0 = spam.effect(0);
        let paulis = [gates::id2(), gates::x(), gates::y(), gates::z()];
        // Tr(M₀ ρ) for ρ = ½ Σ r_i P_i
        let readout = Vector4::from_fn(|i, _| 0.5 * (&m0 * &paulis[i]).trace().re);
        RbmModel { elements, readout }
    }

    /// Exact survival of one random sequence of `m` Cliffords plus the
    /// recovery element, starting from `|0⟩`.
    fn survival<R: Rng + ?Sized>(&self, group: &CliffordGroup, m: usize, rng: &mut R) -> f64 {
        let mut r = Vector4::new(1.0, 0.0, 0.0, 1.0);
        let mut net = 0usize;
        for _ in 0..m {
            let k = rng.random_range(0..group.len());
            r = self.elements[k] * r;
            net = group.compose(k, net);
        }
        r = self.elements[group.inverse(net)] * r;
        self.readout.dot(&r).clamp(0.0, 1.0)
    }
}

/// Random sequences for every length, each seeded from its own trial
/// stream, read out with `shots_per_sequence` single shots each.
pub fn run_rbm(cfg: &RbmConfig, seed: u64) -> Result<RbmResult> {
    cfg.validate()?;
    let group = CliffordGroup::new();
    let noise = match cfg.variant {
        RbmVariant::Plain { gate_error } => vec![infidelity_channel(gate_error)?],
        RbmVariant::InterleavedTransfer { gate_error, transfer_error } => {
            vec![infidelity_channel(gate_error)?, infidelity_channel(transfer_error)?]
        }
    };
    let model = RbmModel::new(&group, &noise, &cfg.spam);
    let mut points = Vec::with_capacity(cfg.lengths.len());
    for (li, &m) in cfg.lengths.iter().enumerate() {
        let trial = |s: usize| -> f64 {
            let index = (li * cfg.sequences_per_length + s) as u64;
            let mut r = rng::trial_stream(seed, rng::families::RBM, index);
            let surv = model.survival(&group, m, &mut r);
            let k = Binomial::new(cfg.shots_per_sequence, surv).map(|b| b.sample(&mut r)).unwrap_or(0);
            k as f64 / cfg.shots_per_sequence as f64
        };
        let values = map_trials(cfg.sequences_per_length, trial);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        points.push(SurvivalPoint {
            length: m,
            mean,
            stderr: (var / n).sqrt(),
        });
    }
    fit_rbm(points)
}

#[cfg(feature = "parallel")]
fn map_trials(n: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> Vec<f64> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_trials(n: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    (0..n).map(f).collect()
}

/// Least-squares fit of `S(m) = 1/2 + B p^m`: for fixed `p` the best `B`
/// is linear, leaving a one-dimensional search over `p ∈ [0, 1]`.
pub fn fit_rbm(points: Vec<SurvivalPoint>) -> Result<RbmResult> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter("fit needs at least two lengths".into()));
    }
    let b_of = |p: f64| {
        let (mut num, mut den) = (0.0, 0.0);
        for pt in &points {
            let x = p.powi(pt.length as i32);
            num += (pt.mean - 0.5) * x;
            den += x * x;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };
    let sse = |p: f64| {
        let b = b_of(p);
        points
            .iter()
            .map(|pt| (pt.mean - 0.5 - b * p.powi(pt.length as i32)).powi(2))
            .sum::<f64>()
    };
    let n = 2000;
    let best = (0..=n)
        .map(|k| k as f64 / n as f64)
        .min_by(|a, b| sse(*a).total_cmp(&sse(*b)))
        .unwrap();
    let lo = (best - 1.0 / n as f64).max(0.0);
    let hi = (best + 1.0 / n as f64).min(1.0);
    let p = golden_section(sse, lo, hi, 1e-14).clamp(0.0, 1.0);
    let b = b_of(p);
    let residuals: Vec<f64> = points
        .iter()
        .map(|pt| pt.mean - 0.5 - b * p.powi(pt.length as i32))
        .collect();
    let mut sorted = points.clone();
    sorted.sort_by_key(|pt| pt.length);
    let rising = sorted
        .windows(2)
        .any(|w| w[1].mean > w[0].mean + 3.0 * (w[0].stderr.hypot(w[1].stderr)).max(1e-12));
    Ok(RbmResult {
        points,
        b,
        p,
        epsilon: (1.0 - p) / 2.0,
        residuals,
        flagged: rising || p <= 0.0,
    })
}

/// Exhaustive closure check of the Clifford table against matrix products.
pub fn check_clifford_closure(group: &CliffordGroup) -> Result<()> {
    for a in 0..group.len() {
        for b in 0..group.len() {
            let prod = group.element(a) * group.element(b);
            let d = phase_insensitive_distance(&prod, group.element(group.compose(a, b)));
            if d > 1e-9 {
                return Err(Error::InvalidState(format!("clifford product {a}·{b} not closed")));
            }
        }
        let id = group.element(a) * group.element(group.inverse(a));
        if phase_insensitive_distance(&id, &gates::id2()) > 1e-9 {
            return Err(Error::InvalidState(format!("bad inverse of clifford {a}")));
        }
    }
    Ok(())
}

/// Leakage of one detuned pulse of area `2π·rabi·t` from the Rabi formula.
pub fn rabi_formula(rabi: f64, detuning: f64, t: f64) -> f64 {
    let g = rabi.hypot(detuning);
    (rabi / g).powi(2) * (PI * g * t).sin().powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clifford_group_is_closed() {
        let g = CliffordGroup::new();
        assert_eq!(g.len(), 24);
        check_clifford_closure(&g).unwrap();
    }

    #[test]
    fn rabi_pulse_matches_formula() {
        for (rabi, det, t) in [(50.0, 15.0, 0.013), (20.0, 0.0, 0.02), (10.0, 40.0, 0.07)] {
            let p = transition_probability(&rabi_pulse(rabi, det, 0.3, t));
            assert!((p - rabi_formula(rabi, det, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn leakage_vanishes_at_large_detuning() {
        let near = simulate_composite_pulse(&CompositePulseConfig::new(40.0, 50.0, 15.0, 1.0));
        let far = simulate_composite_pulse(&CompositePulseConfig::new(40.0, 50.0, 1e6, 1.0));
        assert!(far.leakage_t1 < 1e-6);
        assert!(near.leakage_t1 > far.leakage_t1);
        let naive = naive_pi_pulse(40.0, 50.0, 15.0);
        assert!(naive.transfer_error_t0 < 1e-15);
        assert!(naive.leakage_t1 > 0.0);
    }

    #[test]
    fn degenerate_problem_is_flagged() {
        let opt = optimize_phase(30.0, 30.0, 0.0, &PhaseSearch::default()).unwrap();
        assert!(opt.degenerate);
        assert!(!opt.feasible);
    }

    #[test]
    fn rbm_fit_recovers_synthetic_decay() {
        let points = [2usize, 10, 50, 100, 200]
            .iter()
            .map(|&m| SurvivalPoint {
                length: m,
                mean: 0.5 + 0.48 * 0.99f64.powi(m as i32),
                stderr: 0.0,
            })
            .collect();
        let r = fit_rbm(points).unwrap();
        assert!((r.p - 0.99).abs() < 1e-9);
        assert!((r.b - 0.48).abs() < 1e-7);
        assert!(!r.flagged);
    }

    #[test]
    fn noiseless_rbm_survival_is_flat() {
        let cfg = RbmConfig {
            variant: RbmVariant::Plain { gate_error: 0.0 },
            lengths: vec![1, 5, 20],
            sequences_per_length: 50,
            shots_per_sequence: 1,
            spam: SpamPovm::new(0.02, 0.0).unwrap(),
        };
        let group = CliffordGroup::new();
        let model = RbmModel::new(&group, &[infidelity_channel(0.0).unwrap()], &cfg.spam);
        let mut r = rng::stream(1, 0);
        for m in [1, 7, 30] {
            assert!((model.survival(&group, m, &mut r) - 0.98).abs() < 1e-12);
        }
        let res = run_rbm(&cfg, 3).unwrap();
        assert!(res.p > 0.999);
    }

    #[test]
    fn optimum_is_constrained_local_minimum_and_reproducible() {
        let search = PhaseSearch::default();
        let opt = optimize_phase(50.0, 65.0, 15.0, &search).unwrap();
        assert!(opt.feasible && !opt.degenerate);
        let penalized = |phi: f64| {
            let o = simulate_composite_pulse(&CompositePulseConfig::new(50.0, 65.0, 15.0, phi));
            if o.transfer_error_t0 <= search.threshold {
                o.leakage_t1
            } else {
                1.0 + o.transfer_error_t0
            }
        };
        let here = penalized(opt.phi2);
        assert!(penalized(opt.phi2 + 1e-3) >= here && penalized(opt.phi2 - 1e-3) >= here);
        let shifted = optimize_phase(50.0, 65.0, 15.0, &PhaseSearch { grid_offset: 0.37, ..search }).unwrap();
        assert!((shifted.phi2 - opt.phi2).abs() < 1e-4);
        assert!(opt.outcome.leakage_t1 < naive_pi_pulse(50.0, 65.0, 15.0).leakage_t1);
    }

    #[test]
    fn mirrored_phase_gives_same_populations() {
        let a = simulate_composite_pulse(&CompositePulseConfig::new(50.0, 64.0, 15.0, 1.3));
        let b = simulate_composite_pulse(&CompositePulseConfig::new(50.0, 64.0, 15.0, TAU - 1.3));
        assert!((a.leakage_t1 - b.leakage_t1).abs() < 1e-12);
        assert!((a.transfer_error_t0 - b.transfer_error_t0).abs() < 1e-12);
    }

    #[test]
    fn interleaved_transfer_rbm_recovers_transfer_error() {
        let cfg = RbmConfig {
            variant: RbmVariant::InterleavedTransfer {
                gate_error: 0.0,
                transfer_error: 5e-3,
            },
            lengths: vec![2, 20, 50, 100, 200],
            sequences_per_length: 4000,
            shots_per_sequence: 1,
            spam: SpamPovm::new(0.01, 0.02).unwrap(),
        };
        let res = run_rbm(&cfg, 11).unwrap();
        assert!((res.epsilon - 5e-3).abs() / 5e-3 < 0.1, "{}", res.epsilon);
    }
}
