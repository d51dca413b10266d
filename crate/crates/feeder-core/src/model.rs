//! Shared domain types: node identifiers, conductor impedance data,
//! per-unit bases and complex phasor quantities used by every other module.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Complex quantity alias used throughout: impedances in ohms or per-unit,
/// powers in MVA or per-unit, voltages in per-unit.
pub type Complex = Complex64;

/// Line-to-line voltage base of the feeder head, kV.
pub const VOLTAGE_BASE_KV: f64 = 12.47;

/// Three-phase system power base, MVA.
pub const POWER_BASE_MVA: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown conductor class '{0}'")]
    UnknownConductor(String),
    #[error("conductor library I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("conductor library JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("conductor '{name}' has negative impedance ({r1} + j{x1} ohm/mile)")]
    NegativeImpedance { name: String, r1: f64, x1: f64 },
}

/// Dense node index, 0..N-1 within one feeder dataset.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Phase configuration of a feeder section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phases {
    ThreePhase,
    A,
    B,
    C,
}

impl Phases {
    /// Parse the CSV phase code: `ABC`/`3` for three-phase, `A`/`B`/`C` single phase.
    pub fn parse(code: &str) -> Option<Self> {
        match code.trim().to_ascii_uppercase().as_str() {
            "ABC" | "3" | "THREE" | "THREE_PHASE" => Some(Phases::ThreePhase),
            "A" => Some(Phases::A),
            "B" => Some(Phases::B),
            "C" => Some(Phases::C),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Phases::ThreePhase => "ABC",
            Phases::A => "A",
            Phases::B => "B",
            Phases::C => "C",
        }
    }
}

/// Positive-sequence impedance of one conductor class, ohms per mile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductorSpec {
    pub name: String,
    pub r1_ohm_per_mile: f64,
    pub x1_ohm_per_mile: f64,
}

impl ConductorSpec {
    pub fn new(name: &str, r1: f64, x1: f64) -> Self {
        Self {
            name: name.to_string(),
            r1_ohm_per_mile: r1,
            x1_ohm_per_mile: x1,
        }
    }

    pub fn impedance_per_mile(&self) -> Complex {
        Complex::new(self.r1_ohm_per_mile, self.x1_ohm_per_mile)
    }
}

/// The default conductor classes shipped with the toolkit.
pub fn builtin_conductor_library() -> Vec<ConductorSpec> {
    vec![
        ConductorSpec::new("Type A", 1.91, 0.37),
        ConductorSpec::new("Type B", 0.63, 0.38),
        ConductorSpec::new("Type C", 0.25, 0.21),
        ConductorSpec::new("Type D", 0.23, 0.31),
        ConductorSpec::new("Busbar", 0.0, 0.0),
    ]
}

/// Conductor class lookup table. Users may replace the builtin data with a
/// JSON file of `{name, r1_ohm_per_mile, x1_ohm_per_mile}` entries.
#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct ConductorLibrary {
    specs: Vec<ConductorSpec>,
    #[serde(skip)]
    by_name: HashMap<String, usize>,
}

impl Default for ConductorLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ConductorLibrary {
    pub fn new(specs: Vec<ConductorSpec>) -> Result<Self, ModelError> {
        for s in &specs {
            if s.r1_ohm_per_mile < 0.0 || s.x1_ohm_per_mile < 0.0 {
                return Err(ModelError::NegativeImpedance {
                    name: s.name.clone(),
                    r1: s.r1_ohm_per_mile,
                    x1: s.x1_ohm_per_mile,
                });
            }
        }
        let by_name = specs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        Ok(Self { specs, by_name })
    }

    pub fn builtin() -> Self {
        Self::new(builtin_conductor_library()).expect("builtin library is valid")
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let specs: Vec<ConductorSpec> = serde_json::from_str(&text)?;
        Self::new(specs)
    }

    pub fn get(&self, name: &str) -> Result<&ConductorSpec, ModelError> {
        self.by_name
            .get(name)
            .map(|&i| &self.specs[i])
            .ok_or_else(|| ModelError::UnknownConductor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn specs(&self) -> &[ConductorSpec] {
        &self.specs
    }
}

/// One feeder section: an edge from `from` to `to` in the direction of power
/// flow, with an optional lateral load served from this section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionRecord {
    pub from: NodeId,
    pub to: NodeId,
    /// Conductor class name, resolved against a [`ConductorLibrary`].
    pub conductor: String,
    pub length_miles: f64,
    pub phases: Phases,
    /// Lateral load in MVA (re = MW, im = Mvar), `None` for no-load sections.
    #[serde(default)]
    pub load_mva: Option<Complex>,
}

impl SectionRecord {
    pub fn is_loaded(&self) -> bool {
        self.load_mva.is_some()
    }
}

/// Series impedance of a section in ohms: `(r1 + j x1) * length`.
pub fn section_impedance(
    section: &SectionRecord,
    library: &ConductorLibrary,
) -> Result<Complex, ModelError> {
    let spec = library.get(&section.conductor)?;
    Ok(spec.impedance_per_mile() * section.length_miles)
}

/// Per-unit base set for the feeder. All sweep arithmetic runs in per-unit on
/// these bases; conversions round-trip exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBases {
    pub voltage_kv: f64,
    pub power_mva: f64,
}

impl Default for PerUnitBases {
    fn default() -> Self {
        Self {
            voltage_kv: VOLTAGE_BASE_KV,
            power_mva: POWER_BASE_MVA,
        }
    }
}

impl PerUnitBases {
    /// Impedance base in ohms: `kV^2 / MVA`.
    pub fn impedance_base_ohms(&self) -> f64 {
        self.voltage_kv * self.voltage_kv / self.power_mva
    }

    pub fn impedance_to_pu(&self, z_ohms: Complex) -> Complex {
        z_ohms / self.impedance_base_ohms()
    }

    pub fn impedance_to_ohms(&self, z_pu: Complex) -> Complex {
        z_pu * self.impedance_base_ohms()
    }

    pub fn power_to_pu(&self, s_mva: Complex) -> Complex {
        s_mva / self.power_mva
    }

    pub fn power_to_mva(&self, s_pu: Complex) -> Complex {
        s_pu * self.power_mva
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_library_matches_shipped_data() {
        let lib = builtin_conductor_library();
        assert_eq!(lib.len(), 5);
        let a = &lib[0];
        assert_eq!(a.name, "Type A");
        assert_eq!(a.r1_ohm_per_mile, 1.91);
        assert_eq!(a.x1_ohm_per_mile, 0.37);
        let busbar = lib.iter().find(|c| c.name == "Busbar").unwrap();
        assert_eq!(busbar.r1_ohm_per_mile, 0.0);
        assert_eq!(busbar.x1_ohm_per_mile, 0.0);
    }

    #[test]
    fn section_impedance_scales_with_length() {
        let lib = ConductorLibrary::builtin();
        let mk = |len: f64| SectionRecord {
            from: NodeId(0),
            to: NodeId(1),
            conductor: "Type A".into(),
            length_miles: len,
            phases: Phases::ThreePhase,
            load_mva: None,
        };
        let z1 = section_impedance(&mk(1.0), &lib).unwrap();
        assert_eq!(z1, Complex::new(1.91, 0.37));
        let z2 = section_impedance(&mk(2.0), &lib).unwrap();
        assert!((z2 - z1 * 2.0).norm() < 1e-15);
    }

    #[test]
    fn half_mile_type_c() {
        let lib = ConductorLibrary::builtin();
        let s = SectionRecord {
            from: NodeId(0),
            to: NodeId(1),
            conductor: "Type C".into(),
            length_miles: 0.5,
            phases: Phases::A,
            load_mva: None,
        };
        let z = section_impedance(&s, &lib).unwrap();
        assert!((z - Complex::new(0.125, 0.105)).norm() < 1e-12);
    }

    #[test]
    fn busbar_is_zero_at_any_length() {
        let lib = ConductorLibrary::builtin();
        let s = SectionRecord {
            from: NodeId(0),
            to: NodeId(1),
            conductor: "Busbar".into(),
            length_miles: 3.7,
            phases: Phases::ThreePhase,
            load_mva: None,
        };
        assert_eq!(section_impedance(&s, &lib).unwrap(), Complex::new(0.0, 0.0));
    }

    #[test]
    fn unknown_conductor_names_the_class() {
        let lib = ConductorLibrary::builtin();
        let s = SectionRecord {
            from: NodeId(0),
            to: NodeId(1),
            conductor: "Type Z".into(),
            length_miles: 1.0,
            phases: Phases::ThreePhase,
            load_mva: None,
        };
        let err = section_impedance(&s, &lib).unwrap_err();
        assert!(err.to_string().contains("Type Z"));
    }

    #[test]
    fn per_unit_round_trip() {
        let bases = PerUnitBases::default();
        let z = Complex::new(1.91, 0.37);
        let back = bases.impedance_to_ohms(bases.impedance_to_pu(z));
        assert!((back - z).norm() / z.norm() < 1e-12);
        let s = Complex::new(3.63, 1.2);
        let back = bases.power_to_mva(bases.power_to_pu(s));
        assert!((back - s).norm() / s.norm() < 1e-12);
    }

    #[test]
    fn library_json_round_trip() {
        let lib = ConductorLibrary::builtin();
        let json = serde_json::to_string(&lib).unwrap();
        let parsed: Vec<ConductorSpec> = serde_json::from_str(&json).unwrap();
        let rebuilt = ConductorLibrary::new(parsed).unwrap();
        assert_eq!(rebuilt.specs(), lib.specs());
        assert!(rebuilt.contains("Type D"));
    }
}
