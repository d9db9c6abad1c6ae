use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Index of a module on the network. `0` is Alice, `1` is Bob.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModuleId(pub u8);

impl ModuleId {
    pub const ALICE: ModuleId = ModuleId(0);
    pub const BOB: ModuleId = ModuleId(1);

    pub fn name(self) -> String {
        match self.0 {
            0 => "alice".into(),
            1 => "bob".into(),
            n => format!("m{n}"),
        }
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ModuleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "alice" | "a" => Ok(ModuleId::ALICE),
            "bob" | "b" => Ok(ModuleId::BOB),
            other => other
                .strip_prefix('m')
                .and_then(|n| n.parse().ok())
                .map(ModuleId)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown module `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QubitRole {
    Network,
    Circuit,
    Auxiliary,
}

impl QubitRole {
    fn as_str(self) -> &'static str {
        match self {
            QubitRole::Network => "network",
            QubitRole::Circuit => "circuit",
            QubitRole::Auxiliary => "auxiliary",
        }
    }
}

/// A qubit address. The derived ordering (module, role, index) is the
/// canonical order of qubits inside every [`super::QuantumState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QubitId {
    pub module: ModuleId,
    pub role: QubitRole,
    pub index: u8,
}

impl QubitId {
    pub const fn new(module: ModuleId, role: QubitRole, index: u8) -> Self {
        QubitId { module, role, index }
    }

    pub const fn network(module: ModuleId) -> Self {
        Self::new(module, QubitRole::Network, 0)
    }

    pub const fn circuit(module: ModuleId) -> Self {
        Self::new(module, QubitRole::Circuit, 0)
    }

    pub const fn auxiliary(module: ModuleId) -> Self {
        Self::new(module, QubitRole::Auxiliary, 0)
    }

    /// Same module and index, different role.
    pub const fn with_role(self, role: QubitRole) -> Self {
        Self::new(self.module, role, self.index)
    }
}

impl fmt::Display for QubitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.module, self.role.as_str(), self.index)
    }
}

impl FromStr for QubitId {
    type Err = Error;

    /// `alice.circuit.0`; the index may be omitted and role abbreviated
    /// to its first letter (`bob.c`).
    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::InvalidParameter(format!("bad qubit address `{s}`"));
        let mut parts = s.split('.');
        let module: ModuleId = parts.next().ok_or_else(bad)?.parse()?;
        let role = match parts.next().ok_or_else(bad)?.to_ascii_lowercase().as_str() {
            "network" | "n" => QubitRole::Network,
            "circuit" | "c" => QubitRole::Circuit,
            "auxiliary" | "aux" | "x" => QubitRole::Auxiliary,
            _ => return Err(bad()),
        };
        let index = match parts.next() {
            Some(i) => i.parse().map_err(|_| bad())?,
            None => 0,
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(QubitId::new(module, role, index))
    }
}

impl Serialize for QubitId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QubitId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
