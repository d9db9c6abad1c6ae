//! Circuit IR for two modules, two-qubit synthesis into at most three
//! CZ layers, and the standard distributed circuits.
//!
//! Text form, one op per line (`#` starts a comment):
//!
//! ```text
//! rx <angle> <qubit>        # also ry, rz; angle in radians or pi
//!                           # forms like -pi/2, 0.25*pi
//! cz <qubit> <qubit>        # CZ inside one module
//! nlcz <qubit> <qubit>      # teleported CZ between two circuit qubits
//! measure <qubit> <x|y|z>
//! ```
//!
//! Qubits are written `alice.circuit.0`, `bob.c`, and so on.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, identity, kron_le, phase_insensitive_distance, unitarity_error, CMatrix, C64, ONE, ZERO};
use crate::protocol::{Instruction, OutcomeMode, Session};
use crate::quantum::gates::{self, Axis};
use crate::quantum::{Basis, ModuleId, QuantumState, QubitId, QubitRole};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Rotation { axis: Axis, angle: f64, qubit: QubitId },
    LocalCz { a: QubitId, b: QubitId },
    NonlocalCz { a: QubitId, b: QubitId },
    Measure { qubit: QubitId, basis: Basis },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CircuitIR {
    pub ops: Vec<Op>,
}

fn low() -> QubitId {
    QubitId::circuit(ModuleId::ALICE)
}

fn high() -> QubitId {
    QubitId::circuit(ModuleId::BOB)
}

fn is_data_qubit(q: QubitId) -> bool {
    q.role == QubitRole::Circuit && q.index == 0 && q.module.0 < 2
}

impl CircuitIR {
    pub fn new(ops: Vec<Op>) -> Result<Self> {
        let ir = CircuitIR { ops };
        ir.validate()?;
        Ok(ir)
    }

    /// Every op addresses the two circuit qubits; local CZs stay inside a
    /// module and nonlocal ones span both.
    pub fn validate(&self) -> Result<()> {
        let bad = |i: usize, msg: String| Err(Error::InvalidParameter(format!("op {i}: {msg}")));
        for (i, op) in self.ops.iter().enumerate() {
            match *op {
                Op::Rotation { angle, qubit, .. } => {
                    if !angle.is_finite() {
                        return bad(i, "non-finite angle".into());
                    }
                    if !is_data_qubit(qubit) {
                        return bad(i, format!("{qubit} is not a circuit qubit"));
                    }
                }
                Op::Measure { qubit, .. } => {
                    if !is_data_qubit(qubit) {
                        return bad(i, format!("{qubit} is not a circuit qubit"));
                    }
                }
                Op::LocalCz { a, b } => {
                    if a.module != b.module {
                        return bad(i, format!("{a} and {b} are in different modules; use nlcz"));
                    }
                    return bad(i, "each module holds a single circuit qubit".into());
                }
                Op::NonlocalCz { a, b } => {
                    if !is_data_qubit(a) || !is_data_qubit(b) || a.module == b.module {
                        return bad(i, format!("nonlocal CZ needs circuit qubits of two modules, got {a} {b}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn nonlocal_cz_count(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, Op::NonlocalCz { .. })).count()
    }

    /// Unitary of the gate part on (Alice low, Bob high); readouts are
    /// skipped.
    pub fn unitary(&self) -> Result<CMatrix> {
        self.validate()?;
        let mut u = identity(4);
        for op in &self.ops {
            let step = match *op {
                Op::Rotation { axis, angle, qubit } => embed_single(&gates::rotation(axis, angle), qubit),
                Op::NonlocalCz { .. } => gates::cz(),
                Op::LocalCz { .. } | Op::Measure { .. } => continue,
            };
            u = step * u;
        }
        Ok(u)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for op in &self.ops {
            let _ = match op {
                Op::Rotation { axis, angle, qubit } => {
                    writeln!(out, "r{} {angle:?} {qubit}", axis_name(*axis))
                }
                Op::LocalCz { a, b } => writeln!(out, "cz {a} {b}"),
                Op::NonlocalCz { a, b } => writeln!(out, "nlcz {a} {b}"),
                Op::Measure { qubit, basis } => writeln!(out, "measure {qubit} {}", basis_name(*basis)),
            };
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut ops = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line, msg };
            let words: Vec<&str> = content.split_whitespace().collect();
            let qubit = |w: &str| w.parse::<QubitId>().map_err(|e| err(e.to_string()));
            let arity = |k: usize| {
                if words.len() == k + 1 {
                    Ok(())
                } else {
                    Err(err(format!("`{}` takes {k} arguments", words[0])))
                }
            };
            let op = match words[0].to_ascii_lowercase().as_str() {
                name @ ("rx" | "ry" | "rz") => {
                    arity(2)?;
                    let axis = match name {
                        "rx" => Axis::X,
                        "ry" => Axis::Y,
                        _ => Axis::Z,
                    };
                    let angle = parse_angle(words[1]).ok_or_else(|| err(format!("bad angle `{}`", words[1])))?;
                    Op::Rotation {
                        axis,
                        angle,
                        qubit: qubit(words[2])?,
                    }
                }
                "cz" => {
                    arity(2)?;
                    Op::LocalCz {
                        a: qubit(words[1])?,
                        b: qubit(words[2])?,
                    }
                }
                "nlcz" => {
                    arity(2)?;
                    Op::NonlocalCz {
                        a: qubit(words[1])?,
                        b: qubit(words[2])?,
                    }
                }
                "measure" => {
                    arity(2)?;
                    let basis = match words[2].to_ascii_lowercase().as_str() {
                        "x" => Basis::X,
                        "y" => Basis::Y,
                        "z" => Basis::Z,
                        other => return Err(err(format!("unknown basis `{other}`"))),
                    };
                    Op::Measure {
                        qubit: qubit(words[1])?,
                        basis,
                    }
                }
                other => return Err(err(format!("unknown op `{other}`"))),
            };
            ops.push(op);
        }
        let ir = CircuitIR { ops };
        ir.validate()?;
        Ok(ir)
    }

    /// Runtime program. Runs of rotations on one qubit with nothing else
    /// touching it in between are fused into one gate.
    pub fn to_instructions(&self) -> Result<Vec<Instruction>> {
        self.validate()?;
        let mut out: Vec<Instruction> = Vec::new();
        let mut pending: [Option<CMatrix>; 2] = [None, None];
        let slot = |q: QubitId| q.module.0 as usize;
        let flush = |pending: &mut [Option<CMatrix>; 2], k: usize, out: &mut Vec<Instruction>| {
            if let Some(m) = pending[k].take() {
                let target = if k == 0 { low() } else { high() };
                out.push(Instruction::Gate { target, matrix: m });
            }
        };
        for op in &self.ops {
            match *op {
                Op::Rotation { axis, angle, qubit } => {
                    let k = slot(qubit);
                    let r = gates::rotation(axis, angle);
                    pending[k] = Some(match pending[k].take() {
                        Some(m) => r * m,
                        None => r,
                    });
                }
                Op::NonlocalCz { .. } => {
                    flush(&mut pending, 0, &mut out);
                    flush(&mut pending, 1, &mut out);
                    out.push(Instruction::TeleportedCz);
                }
                Op::LocalCz { a, b } => {
                    flush(&mut pending, slot(a), &mut out);
                    flush(&mut pending, slot(b), &mut out);
                    out.push(Instruction::LocalCz(a, b));
                }
                Op::Measure { qubit, basis } => {
                    flush(&mut pending, slot(qubit), &mut out);
                    out.push(Instruction::Measure { qubit, basis });
                }
            }
        }
        flush(&mut pending, 0, &mut out);
        flush(&mut pending, 1, &mut out);
        Ok(out)
    }
}

fn axis_name(a: Axis) -> &'static str {
    match a {
        Axis::X => "x",
        Axis::Y => "y",
        Axis::Z => "z",
    }
}

fn basis_name(b: Basis) -> &'static str {
    match b {
        Basis::X => "x",
        Basis::Y => "y",
        Basis::Z => "z",
    }
}

/// `1.5`, `pi`, `-pi/2`, `0.25*pi`, `3pi/4`.
fn parse_angle(s: &str) -> Option<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (num, den) = match body.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().ok()?),
        None => (body, 1.0),
    };
    let coeff = num.strip_suffix("pi")?.trim_end_matches('*');
    let coeff = if coeff.is_empty() { 1.0 } else { coeff.parse::<f64>().ok()? };
    let v = coeff * PI / den;
    Some(if neg { -v } else { v })
}

fn embed_single(u: &CMatrix, q: QubitId) -> CMatrix {
    if q.module == ModuleId::ALICE {
        kron_le(&[u, &gates::id2()])
    } else {
        kron_le(&[&gates::id2(), u])
    }
}

/// `U = e^{iφ} Rz(α) Ry(β) Rz(γ)`; returns `(α, β, γ, φ)`.
pub fn zyz_angles(u: &CMatrix) -> (f64, f64, f64, f64) {
    let det = u[(0, 0)] * u[(1, 1)] - u[(0, 1)] * u[(1, 0)];
    let phase = det.arg() / 2.0;
    let v = u * c(0.0, -phase).exp();
    let beta = 2.0 * v[(1, 0)].norm().atan2(v[(0, 0)].norm());
    let sum = if v[(1, 1)].norm() > 1e-12 { 2.0 * v[(1, 1)].arg() } else { 0.0 };
    let diff = if v[(1, 0)].norm() > 1e-12 { 2.0 * v[(1, 0)].arg() } else { 0.0 };
    let (sum, diff) = if v[(1, 1)].norm() <= 1e-12 {
        (diff, diff)
    } else if v[(1, 0)].norm() <= 1e-12 {
        (sum, sum)
    } else {
        (sum, diff)
    };
    let alpha = (sum + diff) / 2.0;
    let gamma = (sum - diff) / 2.0;
    // v may differ from Rz Ry Rz by −1; absorb it in the phase
    let rebuilt = gates::rz(alpha) * gates::ry(beta) * gates::rz(gamma);
    let overlap = (rebuilt.adjoint() * &v).trace();
    let phase = if overlap.re < 0.0 { phase + PI } else { phase };
    (alpha, beta, gamma, phase)
}

fn single_qubit_ops(u: &CMatrix, qubit: QubitId) -> Vec<Op> {
    let (alpha, beta, gamma, _) = zyz_angles(u);
    [(Axis::Z, gamma), (Axis::Y, beta), (Axis::Z, alpha)]
        .into_iter()
        .filter(|(_, a)| a.abs() > 1e-14)
        .map(|(axis, angle)| Op::Rotation { axis, angle, qubit })
        .collect()
}

/// Split `k = A ⊗ B` (A on the low qubit) into unitary factors.
pub fn factor_local(k: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    let (mut best, mut idx) = (0.0, (0, 0));
    for r in 0..4 {
        for col in 0..4 {
            if k[(r, col)].norm() > best {
                best = k[(r, col)].norm();
                idx = (r, col);
            }
        }
    }
    let (bi, ai, bj, aj) = (idx.0 >> 1, idx.0 & 1, idx.1 >> 1, idx.1 & 1);
    let mut a = CMatrix::from_fn(2, 2, |i, j| k[(2 * bi + i, 2 * bj + j)]);
    let scale = (a.adjoint() * &a)[(0, 0)].re.sqrt();
    a /= c(scale, 0.0);
    let pivot = a[(ai, aj)];
    let b = CMatrix::from_fn(2, 2, |i, j| k[(2 * i + ai, 2 * j + aj)] / pivot);
    let err = crate::linalg::max_abs_diff(&kron_le(&[&a, &b]), k);
    if err > 1e-8 {
        return Err(Error::InvalidState(format!("operator is not a product (error {err:.2e})")));
    }
    Ok((a, b))
}

fn magic_basis() -> CMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (o, i) = (c(h, 0.0), c(0.0, h));
    crate::linalg::cmat(
        4,
        4,
        &[o, ZERO, ZERO, i, ZERO, i, o, ZERO, ZERO, i, -o, ZERO, o, ZERO, ZERO, -i],
    )
}

/// `u / det(u)^{1/4}` written in the magic basis.
fn magic_form(u: &CMatrix) -> CMatrix {
    let det = u.determinant();
    let u = u * c(0.0, -det.arg() / 4.0).exp();
    let b = magic_basis();
    b.adjoint() * u * b
}

/// Real orthogonal `O` (det +1) and eigenvalues with `m = O Λ Oᵀ`, for a
/// complex symmetric unitary `m`. Real and imaginary parts commute, so a
/// generic real combination shares their eigenvectors.
fn orthogonal_eigen(m: &CMatrix) -> Result<(DMatrix<f64>, Vec<C64>)> {
    let re = m.map(|z| z.re);
    let im = m.map(|z| z.im);
    for t in [0.6180339887498949, std::f64::consts::SQRT_2, std::f64::consts::E, 0.1234567891011] {
        let eig = (&re + &im * t).symmetric_eigen();
        let mut o = eig.eigenvectors;
        if o.determinant() < 0.0 {
            o.column_mut(0).neg_mut();
        }
        let oc = o.map(|x| c(x, 0.0));
        let d = oc.transpose() * m * &oc;
        let mut off = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    off = off.max(d[(i, j)].norm());
                }
            }
        }
        if off < 1e-9 {
            return Ok((o, (0..4).map(|i| d[(i, i)]).collect()));
        }
    }
    Err(Error::InvalidState("magic-basis diagonalization failed".into()))
}

/// Canonical interaction coefficients `(a, b, c)` with
/// `u ≅ exp(i(a XX + b YY + c ZZ))` up to single-qubit gates, each reduced
/// to `(−π/4, π/4]`.
fn raw_coordinates(u: &CMatrix) -> Result<[f64; 3]> {
    let ub = magic_form(u);
    let m = ub.transpose() * &ub;
    let (_, lam) = orthogonal_eigen(&m)?;
    let th: Vec<f64> = lam.iter().map(|z| z.arg() / 2.0).collect();
    let reduce = |x: f64| {
        let mut y = x.rem_euclid(FRAC_PI_2);
        if y > FRAC_PI_4 + 1e-12 {
            y -= FRAC_PI_2;
        }
        y
    };
    Ok([
        reduce((th[0] + th[2]) / 2.0),
        reduce((th[1] + th[2]) / 2.0),
        reduce((th[0] + th[1]) / 2.0),
    ])
}

/// Weyl-chamber representative `π/4 ≥ a ≥ b ≥ |c|`.
pub fn canonical_coordinates(u: &CMatrix) -> Result<[f64; 3]> {
    check_two_qubit_unitary(u)?;
    let raw = raw_coordinates(u)?;
    let sign = raw.iter().fold(1.0, |s, x| if *x < 0.0 { -s } else { s });
    let mut abs = raw.map(f64::abs);
    abs.sort_by(|x, y| y.total_cmp(x));
    // a = π/4 makes the sign of c a local choice
    let c3 = if (abs[0] - FRAC_PI_4).abs() < 1e-12 { abs[2] } else { sign * abs[2] };
    Ok([abs[0], abs[1], c3])
}

fn check_two_qubit_unitary(u: &CMatrix) -> Result<()> {
    if u.nrows() != 4 || u.ncols() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: u.nrows().max(u.ncols()),
        });
    }
    let err = unitarity_error(u);
    if err > 1e-10 {
        return Err(Error::NotUnitary(err));
    }
    Ok(())
}

/// Local `(k1, k2)` with `u ∝ k1 · v · k2`, if `u` and `v` are locally
/// equivalent.
fn match_locals(u: &CMatrix, v: &CMatrix) -> Result<Option<(CMatrix, CMatrix)>> {
    let b = magic_basis();
    let ub = magic_form(u);
    let (ou, lu) = orthogonal_eigen(&(ub.transpose() * &ub))?;
    for s in [ONE, c(0.0, 1.0)] {
        let vb = magic_form(v) * s;
        let (ov, lv) = orthogonal_eigen(&(vb.transpose() * &vb))?;
        let mut used = [false; 4];
        let mut perm = [0usize; 4];
        let mut ok = true;
        for i in 0..4 {
            let best = (0..4)
                .filter(|&j| !used[j])
                .min_by(|&x, &y| (lv[x] - lu[i]).norm().total_cmp(&(lv[y] - lu[i]).norm()))
                .unwrap();
            if (lv[best] - lu[i]).norm() > 1e-6 {
                ok = false;
                break;
            }
            used[best] = true;
            perm[i] = best;
        }
        if !ok {
            continue;
        }
        let mut ovp = DMatrix::<f64>::from_fn(4, 4, |r, col| ov[(r, perm[col])]);
        if ovp.determinant() < 0.0 {
            ovp.column_mut(0).neg_mut();
        }
        let ou_c = ou.map(|x| c(x, 0.0));
        let ov_c = ovp.map(|x| c(x, 0.0));
        let au = &ub * &ou_c;
        let av = &vb * &ov_c;
        let Some(av_inv) = av.try_inverse() else { continue };
        let q = (au * av_inv).map(|z| c(z.re, 0.0));
        let r = &ov_c * ou_c.transpose();
        let k1 = &b * q * b.adjoint();
        let k2 = &b * r * b.adjoint();
        return Ok(Some((k1, k2)));
    }
    Ok(None)
}

/// Fixed two-qubit skeleton: local layers (low, high) interleaved with CZs.
enum Piece {
    Local(CMatrix, CMatrix),
    Cz,
}

fn template(count: usize, coords: [f64; 3]) -> Vec<Piece> {
    let id = gates::id2;
    let h = gates::h;
    let [a, b, cc] = coords;
    match count {
        0 => vec![],
        1 => vec![Piece::Cz],
        2 => {
            // the nonzero pair of coefficients
            let mut nz: Vec<f64> = coords.into_iter().filter(|x| x.abs() > 1e-9).collect();
            nz.resize(2, 0.0);
            vec![
                Piece::Cz,
                Piece::Local(gates::rx(2.0 * nz[0]), gates::rx(2.0 * nz[1])),
                Piece::Cz,
            ]
        }
        _ => {
            // CNOT(high→low) · (Rz ⊗ Ry) · CNOT(low→high) · (I ⊗ Ry) · CNOT(high→low)
            let (t1, t2, t3) = (FRAC_PI_2 - 2.0 * cc, 2.0 * a - FRAC_PI_2, FRAC_PI_2 - 2.0 * b);
            vec![
                Piece::Local(h(), id()),
                Piece::Cz,
                Piece::Local(h(), id()),
                Piece::Local(id(), gates::ry(t3)),
                Piece::Local(id(), h()),
                Piece::Cz,
                Piece::Local(id(), h()),
                Piece::Local(gates::rz(t1), gates::ry(t2)),
                Piece::Local(h(), id()),
                Piece::Cz,
                Piece::Local(h(), id()),
            ]
        }
    }
}

fn template_matrix(pieces: &[Piece]) -> CMatrix {
    pieces.iter().fold(identity(4), |acc, p| {
        let m = match p {
            Piece::Local(a, b) => kron_le(&[a, b]),
            Piece::Cz => gates::cz(),
        };
        m * acc
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub circuit: CircuitIR,
    pub cz_count: usize,
    /// Max-norm distance of the rebuilt unitary to the target after
    /// removing the global phase.
    pub residual: f64,
}

/// Minimal number of CZs for `coords`: none for local gates, one for the
/// CZ class, two when one coefficient vanishes, otherwise three.
fn cz_count_of(coords: [f64; 3]) -> usize {
    let tol = 1e-9;
    let zero = coords.iter().filter(|x| x.abs() < tol).count();
    let quarter = coords.iter().filter(|x| (x.abs() - FRAC_PI_4).abs() < tol).count();
    match (zero, quarter) {
        (3, _) => 0,
        (2, 1) => 1,
        (z, _) if z >= 1 => 2,
        _ => 3,
    }
}

/// Circuit of single-qubit rotations and nonlocal CZs (Alice's circuit
/// qubit low, Bob's high) reproducing `u` up to global phase.
pub fn decompose_two_qubit(u: &CMatrix) -> Result<DecompositionResult> {
    check_two_qubit_unitary(u)?;
    let coords = raw_coordinates(u)?;
    let cz_count = cz_count_of(coords);
    let mut pieces = template(cz_count, coords);
    let t = template_matrix(&pieces);
    let (k1, k2) = match_locals(u, &t)?
        .ok_or_else(|| Error::InvalidState("no local equivalence with the CZ template".into()))?;
    let (a2, b2) = factor_local(&k2)?;
    let (a1, b1) = factor_local(&k1)?;
    pieces.insert(0, Piece::Local(a2, b2));
    pieces.push(Piece::Local(a1, b1));

    let mut ops = Vec::new();
    let (mut acc_a, mut acc_b) = (gates::id2(), gates::id2());
    for p in pieces {
        match p {
            Piece::Local(a, b) => {
                acc_a = a * acc_a;
                acc_b = b * acc_b;
            }
            Piece::Cz => {
                ops.extend(single_qubit_ops(&acc_a, low()));
                ops.extend(single_qubit_ops(&acc_b, high()));
                ops.push(Op::NonlocalCz { a: low(), b: high() });
                acc_a = gates::id2();
                acc_b = gates::id2();
            }
        }
    }
    ops.extend(single_qubit_ops(&acc_a, low()));
    ops.extend(single_qubit_ops(&acc_b, high()));
    let circuit = CircuitIR::new(ops)?;
    let residual = phase_insensitive_distance(&circuit.unitary()?, u);
    Ok(DecompositionResult {
        circuit,
        cz_count,
        residual,
    })
}

/// Parse a two-bit string printed Bob first (`"10"` = Bob 1, Alice 0).
pub fn parse_bits(s: &str) -> Result<[u8; 2]> {
    let b: Vec<u8> = s
        .chars()
        .map(|ch| match ch {
            '0' => Ok(0),
            '1' => Ok(1),
            _ => Err(Error::InvalidParameter(format!("bad bit string `{s}`"))),
        })
        .collect::<Result<_>>()?;
    if b.len() != 2 {
        return Err(Error::InvalidParameter(format!("bad bit string `{s}`")));
    }
    Ok([b[1], b[0]])
}

pub fn format_bits(bits: [u8; 2]) -> String {
    format!("{}{}", bits[1], bits[0])
}

/// Two-qubit Grover search for `marked` (Bob's bit first): Hadamards,
/// an oracle built from one nonlocal CZ conjugated by X on the qubits
/// whose marked bit is 0, the diffusion block and Z readout of both.
pub fn grover_circuit(marked: &str) -> Result<CircuitIR> {
    let bits = parse_bits(marked)?;
    let qs = [low(), high()];
    let rot = |axis, angle, qubit| Op::Rotation { axis, angle, qubit };
    // H = i·Ry(π/2)Rz(π), X = i·Rx(π)
    let hadamards = |ops: &mut Vec<Op>| {
        for q in qs {
            ops.push(rot(Axis::Z, PI, q));
            ops.push(rot(Axis::Y, FRAC_PI_2, q));
        }
    };
    let xs = |ops: &mut Vec<Op>, which: [bool; 2]| {
        for (q, on) in qs.into_iter().zip(which) {
            if on {
                ops.push(rot(Axis::X, PI, q));
            }
        }
    };
    let nlcz = Op::NonlocalCz { a: low(), b: high() };
    let flip = [bits[0] == 0, bits[1] == 0];
    let mut ops = Vec::new();
    hadamards(&mut ops);
    xs(&mut ops, flip);
    ops.push(nlcz);
    xs(&mut ops, flip);
    hadamards(&mut ops);
    xs(&mut ops, [true, true]);
    ops.push(nlcz);
    xs(&mut ops, [true, true]);
    hadamards(&mut ops);
    for q in qs {
        ops.push(Op::Measure { qubit: q, basis: Basis::Z });
    }
    CircuitIR::new(ops)
}

/// iSWAP as a circuit of rotations and two nonlocal CZs.
pub fn iswap_circuit() -> Result<CircuitIR> {
    Ok(decompose_two_qubit(&gates::iswap())?.circuit)
}

/// SWAP as a circuit of rotations and three nonlocal CZs.
pub fn swap_circuit() -> Result<CircuitIR> {
    Ok(decompose_two_qubit(&gates::swap())?.circuit)
}

/// One shot of `circuit` on `|00⟩`. Returns the final state and the
/// readout results in circuit order.
pub fn execute(circuit: &CircuitIR, session: &mut Session) -> Result<(QuantumState, Vec<(QubitId, u8)>)> {
    let program = circuit.to_instructions()?;
    let input = QuantumState::zero(&Session::circuit_qubits())?;
    let out = session.run(&program, input, OutcomeMode::Sampled)?;
    Ok((out.state, out.outcomes))
}

/// Final two-bit outcome of a shot (Alice low); qubits read more than
/// once keep their last result.
pub fn outcome_bits(outcomes: &[(QubitId, u8)]) -> [u8; 2] {
    let mut bits = [0u8; 2];
    for (q, o) in outcomes {
        bits[q.module.0 as usize & 1] = *o;
    }
    bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::noise::NoiseModel;
    use crate::protocol::{ProtocolConfig, SchedulerMode};
    use crate::rng;

    /// `tr γ` with `γ = ũ (Y⊗Y) ũᵀ (Y⊗Y)`, `ũ = u/det(u)^{1/4}`.
    fn gamma_trace(u: &CMatrix) -> C64 {
        let det = u.determinant();
        let u = u * c(0.0, -det.arg() / 4.0).exp();
        let yy = kron_le(&[&gates::y(), &gates::y()]);
        (&u * &yy * u.transpose() * &yy).trace()
    }

    #[test]
    fn zyz_round_trip() {
        let mut r = rng::stream(5, 0);
        for _ in 0..200 {
            let u = crate::linalg::haar_unitary(2, &mut r);
            let (a, b, g, ph) = zyz_angles(&u);
            let rebuilt = gates::rz(a) * gates::ry(b) * gates::rz(g) * c(0.0, ph).exp();
            assert!(max_abs_diff(&rebuilt, &u) < 1e-10);
        }
        for u in [gates::x(), gates::z(), gates::h(), gates::id2()] {
            let (a, b, g, ph) = zyz_angles(&u);
            let rebuilt = gates::rz(a) * gates::ry(b) * gates::rz(g) * c(0.0, ph).exp();
            assert!(max_abs_diff(&rebuilt, &u) < 1e-12);
        }
    }

    #[test]
    fn canonical_gates() {
        let cases = [
            (kron_le(&[&gates::h(), &gates::s()]), 0),
            (gates::cz(), 1),
            (gates::cnot_low_control(), 1),
            (gates::iswap(), 2),
            (gates::swap(), 3),
        ];
        for (u, n) in cases {
            let d = decompose_two_qubit(&u).unwrap();
            assert_eq!(d.cz_count, n);
            assert_eq!(d.circuit.nonlocal_cz_count(), n);
            assert!(d.residual < 1e-8, "residual {}", d.residual);
        }
        let swap = canonical_coordinates(&gates::swap()).unwrap();
        for x in swap {
            assert!((x - FRAC_PI_4).abs() < 1e-9);
        }
    }

    #[test]
    fn random_unitaries_match_invariant_count() {
        let mut r = rng::stream(6, 0);
        for _ in 0..200 {
            let u = crate::linalg::haar_unitary(4, &mut r);
            let d = decompose_two_qubit(&u).unwrap();
            assert!(d.residual < 1e-8);
            // generic unitaries have complex tr γ and need three CZs
            assert!(gamma_trace(&u).im.abs() > 1e-9);
            assert_eq!(d.cz_count, 3);
            let before = canonical_coordinates(&u).unwrap();
            let after = canonical_coordinates(&d.circuit.unitary().unwrap()).unwrap();
            for k in 0..3 {
                assert!((before[k] - after[k]).abs() < 1e-8);
            }
        }
        // two-CZ class: tr γ real
        for _ in 0..50 {
            let a = crate::linalg::haar_unitary(2, &mut r);
            let b = crate::linalg::haar_unitary(2, &mut r);
            let mid = gates::cz() * kron_le(&[&gates::rx(0.7), &gates::rx(-0.3)]) * gates::cz();
            let u = kron_le(&[&a, &b]) * mid;
            assert!(gamma_trace(&u).im.abs() < 1e-9);
            let d = decompose_two_qubit(&u).unwrap();
            assert_eq!(d.cz_count, 2);
            assert!(d.residual < 1e-8);
        }
    }

    #[test]
    fn rejects_non_unitary() {
        let m = gates::cz() * c(1.1, 0.0);
        assert!(matches!(decompose_two_qubit(&m), Err(Error::NotUnitary(_))));
    }

    #[test]
    fn text_round_trip() {
        let g = grover_circuit("01").unwrap();
        let back = CircuitIR::parse(&g.to_text()).unwrap();
        assert_eq!(back, g);
        let text = "# comment\nrx pi/2 alice.c\nry -0.25*pi bob.circuit.0\nnlcz alice.c bob.c\nmeasure bob.c y\n";
        let ir = CircuitIR::parse(text).unwrap();
        assert_eq!(ir.ops.len(), 4);
        assert_eq!(ir.ops[1], Op::Rotation { axis: Axis::Y, angle: -0.25 * PI, qubit: high() });
        assert!(matches!(CircuitIR::parse("nlcz alice.c alice.c"), Err(Error::InvalidParameter(_))));
        assert!(matches!(CircuitIR::parse("rx x alice.c"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(CircuitIR::parse("\nfoo"), Err(Error::Parse { line: 2, .. })));
    }

    fn ideal_session(seed: u64) -> Session {
        Session::new(&NoiseModel::ideal(), &ProtocolConfig::default(), seed, SchedulerMode::Sequential).unwrap()
    }

    #[test]
    fn grover_is_exact_without_noise() {
        let mut s = ideal_session(9);
        for marked in ["00", "01", "10", "11"] {
            let g = grover_circuit(marked).unwrap();
            assert_eq!(g.nonlocal_cz_count(), 2);
            for _ in 0..5 {
                let (_, outcomes) = execute(&g, &mut s).unwrap();
                assert_eq!(format_bits(outcome_bits(&outcomes)), marked);
            }
        }
        assert!(grover_circuit("2").is_err());
    }

    #[test]
    fn distributed_swap_and_iswap_examples() {
        let mut s = ideal_session(10);
        // |10⟩: Bob 1, Alice 0
        let mut swap = swap_circuit().unwrap();
        swap.ops.push(Op::Measure { qubit: low(), basis: Basis::Z });
        swap.ops.push(Op::Measure { qubit: high(), basis: Basis::Z });
        let prog = swap.to_instructions().unwrap();
        let input = QuantumState::basis_state(&Session::circuit_qubits(), &[0, 1]).unwrap();
        let out = s.run(&prog, input.clone(), OutcomeMode::Sampled).unwrap();
        assert_eq!(format_bits(outcome_bits(&out.outcomes)), "01");

        let iswap = iswap_circuit().unwrap();
        let out = s.run(&iswap.to_instructions().unwrap(), input.clone(), OutcomeMode::Sampled).unwrap();
        let mut want = input;
        want.apply_unitary(&gates::iswap(), &Session::circuit_qubits()).unwrap();
        assert!(out.state.fidelity(&want).unwrap() > 1.0 - 1e-9);
    }
}
