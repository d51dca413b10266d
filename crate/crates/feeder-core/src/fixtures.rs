//! Deterministic synthetic-feeder generator. Real feeder data is
//! confidential, so tests and examples run against generated datasets that
//! match published statistics: node/section/loaded-section counts, head MVA
//! at 1.02 pu, and the load-pocket split along the trunk.

use crate::ingest::FeederDataset;
use crate::model::{Complex, ConductorLibrary, NodeId, Phases, SectionRecord};
use crate::powerflow::{sweep_voltage_drops, PowerflowError, SweepOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("infeasible fixture spec: {0}")]
    Infeasible(String),
    #[error("fixture calibration failed: {0}")]
    Calibration(String),
    #[error(transparent)]
    Powerflow(#[from] PowerflowError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Shape and loading targets for a generated feeder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub name: String,
    pub node_count: usize,
    pub section_count: usize,
    pub loaded_section_count: usize,
    /// Apparent power drawn at the head under a 1.02 pu sweep, MVA.
    pub target_head_mva: f64,
    /// Load share of each pocket along the trunk, root to leaf; sums to 1.
    pub target_pocket_fractions: Vec<f64>,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            name: "feederA-synth".into(),
            node_count: 478,
            section_count: 485,
            loaded_section_count: 90,
            target_head_mva: 3.63,
            target_pocket_fractions: vec![0.19, 0.35, 0.46],
            seed: 42,
        }
    }
}

/// Ground truth emitted next to the CSV; test oracle for pocket
/// identification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub name: String,
    pub seed: u64,
    pub node_count: usize,
    pub section_count: usize,
    pub loaded_section_count: usize,
    pub target_head_mva: f64,
    pub achieved_head_mva: f64,
    pub min_voltage_pu: f64,
    pub pockets: Vec<ManifestPocket>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPocket {
    pub index: usize,
    pub fraction: f64,
    pub total_load_mva: f64,
    /// Trunk nodes the pocket's laterals attach to.
    pub anchor_nodes: Vec<usize>,
    /// Nodes carrying the pocket's loads.
    pub load_nodes: Vec<usize>,
}

const HEAD_VOLTAGE_PU: f64 = 1.02;
const LOAD_POWER_FACTOR: f64 = 0.95;

/// Generate a feeder matching the spec. Same spec and seed produce an
/// identical dataset; the sweep-calibration loop is part of the fixed
/// construction.
pub fn generate_fixture(spec: &FixtureSpec) -> Result<FeederDataset, FixtureError> {
    generate_fixture_with_manifest(spec).map(|(d, _)| d)
}

pub fn generate_fixture_with_manifest(
    spec: &FixtureSpec,
) -> Result<(FeederDataset, FixtureManifest), FixtureError> {
    validate_spec(spec)?;
    let pockets = spec.target_pocket_fractions.len();

    let parallel_paths = spec.section_count - (spec.node_count - 1);
    let chain_interior = 2usize;
    let trunk_len = (spec.node_count / 8).max(5 * pockets + 8);
    let lateral_nodes = spec.loaded_section_count;
    let reserved = trunk_len + lateral_nodes + chain_interior * parallel_paths;
    if reserved > spec.node_count {
        return Err(FixtureError::Infeasible(format!(
            "node budget: {} trunk + {} laterals + {} parallel-chain interiors exceed {} nodes",
            trunk_len,
            lateral_nodes,
            chain_interior * parallel_paths,
            spec.node_count
        )));
    }
    let filler_nodes = spec.node_count - reserved;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Trunk: nodes 0..trunk_len-1 in a three-phase chain. The run from the
    // substation to the first load cluster is the long express portion of
    // the feeder; it carries the full feeder current, so it dominates the
    // first segment's series impedance without touching pocket geometry.
    let mut trunk_lengths: Vec<f64> = (0..trunk_len - 1)
        .map(|_| rng.gen_range(0.06..0.16))
        .collect();
    let express_end = if pockets == 1 {
        ((trunk_len - 1) as f64 * 0.70) as usize
    } else {
        ((trunk_len - 1) as f64 * 0.42) as usize
    }
    .saturating_sub(3);
    for l in trunk_lengths.iter_mut().take(express_end) {
        *l *= 1.9;
    }

    // Pocket clusters: anchors around evenly spread trunk positions.
    let center_pos = |i: usize| -> usize {
        let frac = if pockets == 1 {
            0.70
        } else {
            0.42 + 0.48 * i as f64 / (pockets - 1) as f64
        };
        ((trunk_len - 1) as f64 * frac).round() as usize
    };
    let mut lateral_counts: Vec<usize> = spec
        .target_pocket_fractions
        .iter()
        .map(|f| ((f * spec.loaded_section_count as f64).round() as usize).max(1))
        .collect();
    // Largest-remainder style fixup to hit the exact lateral total.
    loop {
        let total: usize = lateral_counts.iter().sum();
        if total == spec.loaded_section_count {
            break;
        }
        let idx = if total < spec.loaded_section_count {
            // grow the largest pocket
            (0..pockets).max_by_key(|&i| lateral_counts[i]).unwrap()
        } else {
            (0..pockets)
                .filter(|&i| lateral_counts[i] > 1)
                .max_by_key(|&i| lateral_counts[i])
                .unwrap()
        };
        if total < spec.loaded_section_count {
            lateral_counts[idx] += 1;
        } else {
            lateral_counts[idx] -= 1;
        }
    }

    let mut laterals: Vec<Lateral> = Vec::with_capacity(spec.loaded_section_count);
    let mut next_node = trunk_len;
    for (pocket, &count) in lateral_counts.iter().enumerate() {
        let center = center_pos(pocket);
        for j in 0..count {
            let offset = (j % 5) as isize - 2;
            let anchor = (center as isize + offset).clamp(1, trunk_len as isize - 2) as usize;
            let (conductor, phases) = match rng.gen_range(0..100) {
                0..=29 => ("Type A", Phases::A),
                30..=54 => ("Type B", Phases::B),
                55..=79 => ("Type A", Phases::C),
                _ => ("Type C", Phases::ThreePhase),
            };
            laterals.push(Lateral {
                anchor,
                node: next_node,
                conductor,
                length: rng.gen_range(0.015..0.05),
                phases,
                weight: rng.gen_range(0.85..1.15),
                pocket,
            });
            next_node += 1;
        }
    }

    // Parallel chains shadow trunk sections away from the clusters and the
    // trunk tail; their series impedance equals the shadowed section's, so
    // the mean-collapsed trunk impedance is unchanged.
    let mut cluster_spans: Vec<(usize, usize)> = (0..pockets)
        .map(|i| {
            let c = center_pos(i) as isize;
            (((c - 3).max(0)) as usize, ((c + 3) as usize).min(trunk_len - 2))
        })
        .collect();
    cluster_spans.sort_unstable();
    let eligible: Vec<usize> = (1..trunk_len.saturating_sub(3))
        .filter(|&s| !cluster_spans.iter().any(|&(a, b)| s >= a && s <= b))
        .collect();
    if parallel_paths > 0 && eligible.len() < parallel_paths {
        return Err(FixtureError::Infeasible(format!(
            "cannot place {} parallel paths on {} eligible trunk sections",
            parallel_paths,
            eligible.len()
        )));
    }
    let mut chains: Vec<Chain> = Vec::with_capacity(parallel_paths);
    for c in 0..parallel_paths {
        let pick = eligible[c * eligible.len() / parallel_paths.max(1)];
        chains.push(Chain {
            split: pick,
            merge: pick + 1,
            interiors: [next_node, next_node + 1],
            section_length: trunk_lengths[pick],
        });
        next_node += 2;
    }

    // Unloaded filler branches hanging off the trunk (never the last node).
    let mut fillers: Vec<Filler> = Vec::new();
    let mut remaining = filler_nodes;
    while remaining > 0 {
        let anchor = rng.gen_range(0..trunk_len - 1);
        let len = rng.gen_range(1..=5usize.min(remaining));
        let mut nodes = Vec::with_capacity(len);
        let mut conductors = Vec::with_capacity(len);
        let mut lengths = Vec::with_capacity(len);
        for _ in 0..len {
            nodes.push(next_node);
            next_node += 1;
            conductors.push(match rng.gen_range(0..3) {
                0 => "Type B",
                1 => "Type C",
                _ => "Type D",
            });
            lengths.push(rng.gen_range(0.02..0.30));
        }
        fillers.push(Filler {
            anchor,
            nodes,
            conductors,
            lengths,
        });
        remaining -= len;
    }
    debug_assert_eq!(next_node, spec.node_count);

    // Loads: pocket totals split by the drawn per-lateral weights; the
    // overall scale is calibrated against the sweep below.
    let mut scale = 1.0f64;
    let mut dataset = None;
    let mut achieved = 0.0;
    let mut min_v = 0.0;
    let mut length_scale = 1.0f64;
    'outer: for _attempt in 0..10 {
        for _pass in 0..6 {
            let total_mva = spec.target_head_mva * scale;
            let d = assemble(
                spec,
                &trunk_lengths,
                length_scale,
                &laterals,
                &lateral_counts,
                &chains,
                &fillers,
                total_mva,
            );
            let sol = sweep_voltage_drops(&d, HEAD_VOLTAGE_PU, &SweepOptions::default())?;
            achieved = sol.head_power_mva.norm();
            min_v = sol.min_voltage_pu();
            scale *= spec.target_head_mva / achieved;
            dataset = Some(d);
        }
        if min_v >= 0.952 {
            break 'outer;
        }
        // Head-room guard: shrink every section until the far end clears
        // 0.95 pu with margin, then recalibrate.
        length_scale *= 0.9;
    }
    let dataset = dataset.expect("at least one calibration pass ran");
    if min_v < 0.95 {
        return Err(FixtureError::Calibration(format!(
            "minimum node voltage {min_v:.4} pu stayed below 0.95"
        )));
    }
    if (achieved - spec.target_head_mva).abs() / spec.target_head_mva > 0.01 {
        return Err(FixtureError::Calibration(format!(
            "head draw {achieved:.4} MVA missed target {} by more than 1%",
            spec.target_head_mva
        )));
    }

    let manifest = FixtureManifest {
        name: spec.name.clone(),
        seed: spec.seed,
        node_count: dataset.node_count,
        section_count: dataset.sections.len(),
        loaded_section_count: dataset.loaded_section_count(),
        target_head_mva: spec.target_head_mva,
        achieved_head_mva: achieved,
        min_voltage_pu: min_v,
        pockets: (0..pockets)
            .map(|p| {
                let members: Vec<&Lateral> =
                    laterals.iter().filter(|l| l.pocket == p).collect();
                let mut anchor_nodes: Vec<usize> =
                    members.iter().map(|l| l.anchor).collect();
                anchor_nodes.sort_unstable();
                anchor_nodes.dedup();
                let total: f64 = dataset
                    .sections
                    .iter()
                    .filter(|s| members.iter().any(|l| l.node == s.to.index()))
                    .filter_map(|s| s.load_mva)
                    .map(|s| s.norm())
                    .sum();
                ManifestPocket {
                    index: p,
                    fraction: spec.target_pocket_fractions[p],
                    total_load_mva: total,
                    anchor_nodes,
                    load_nodes: members.iter().map(|l| l.node).collect(),
                }
            })
            .collect(),
    };
    Ok((dataset, manifest))
}

struct Lateral {
    anchor: usize,
    node: usize,
    conductor: &'static str,
    length: f64,
    phases: Phases,
    weight: f64,
    pocket: usize,
}

struct Chain {
    split: usize,
    merge: usize,
    interiors: [usize; 2],
    section_length: f64,
}

struct Filler {
    anchor: usize,
    nodes: Vec<usize>,
    conductors: Vec<&'static str>,
    lengths: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    spec: &FixtureSpec,
    trunk_lengths: &[f64],
    length_scale: f64,
    laterals: &[Lateral],
    lateral_counts: &[usize],
    chains: &[Chain],
    fillers: &[Filler],
    total_mva: f64,
) -> FeederDataset {
    let trunk_len = trunk_lengths.len() + 1;
    let mut sections: Vec<SectionRecord> = Vec::with_capacity(spec.section_count);
    for (i, &l) in trunk_lengths.iter().enumerate() {
        sections.push(SectionRecord {
            from: NodeId(i),
            to: NodeId(i + 1),
            conductor: "Type C".into(),
            length_miles: l * length_scale,
            phases: Phases::ThreePhase,
            load_mva: None,
        });
    }
    // Per-pocket weight normalization keeps each pocket total exact.
    let mut weight_sum = vec![0.0f64; lateral_counts.len()];
    for l in laterals {
        weight_sum[l.pocket] += l.weight;
    }
    let q_factor = (1.0 - LOAD_POWER_FACTOR * LOAD_POWER_FACTOR).sqrt();
    for l in laterals {
        let pocket_total = total_mva * spec.target_pocket_fractions[l.pocket];
        let s = pocket_total * l.weight / weight_sum[l.pocket];
        sections.push(SectionRecord {
            from: NodeId(l.anchor),
            to: NodeId(l.node),
            conductor: l.conductor.into(),
            length_miles: l.length * length_scale,
            phases: l.phases,
            load_mva: Some(Complex::new(s * LOAD_POWER_FACTOR, s * q_factor)),
        });
    }
    for c in chains {
        // Power-of-two fractions keep the chain length bit-equal to the
        // shadowed section, so the mean-collapsed impedance is unchanged and
        // the trunk tie-break stays on the direct route.
        let total = c.section_length * length_scale;
        let legs = [total * 0.25, total * 0.25, total * 0.5];
        let path = [c.split, c.interiors[0], c.interiors[1], c.merge];
        for (w, leg) in path.windows(2).zip(legs) {
            sections.push(SectionRecord {
                from: NodeId(w[0]),
                to: NodeId(w[1]),
                conductor: "Type C".into(),
                length_miles: leg,
                phases: Phases::ThreePhase,
                load_mva: None,
            });
        }
    }
    for f in fillers {
        let mut prev = f.anchor;
        for (i, &n) in f.nodes.iter().enumerate() {
            sections.push(SectionRecord {
                from: NodeId(prev),
                to: NodeId(n),
                conductor: f.conductors[i].into(),
                length_miles: f.lengths[i] * length_scale,
                phases: Phases::ThreePhase,
                load_mva: None,
            });
            prev = n;
        }
    }
    sections.sort_by_key(|s| (s.from, s.to, s.conductor.clone()));
    let _ = trunk_len;
    FeederDataset {
        name: spec.name.clone(),
        sections,
        node_count: spec.node_count,
        root: NodeId(0),
        external_ids: (0..spec.node_count).map(|i| i.to_string()).collect(),
        library: ConductorLibrary::builtin(),
    }
}

fn validate_spec(spec: &FixtureSpec) -> Result<(), FixtureError> {
    if spec.node_count < 8 {
        return Err(FixtureError::Infeasible("need at least 8 nodes".into()));
    }
    if spec.section_count < spec.node_count - 1 {
        return Err(FixtureError::Infeasible(format!(
            "{} sections cannot connect {} nodes",
            spec.section_count, spec.node_count
        )));
    }
    if spec.loaded_section_count == 0 || spec.loaded_section_count > spec.section_count {
        return Err(FixtureError::Infeasible(
            "loaded section count out of range".into(),
        ));
    }
    if spec.target_pocket_fractions.is_empty() {
        return Err(FixtureError::Infeasible("no pocket fractions".into()));
    }
    if spec
        .target_pocket_fractions
        .iter()
        .any(|&f| f <= 0.0 || f > 1.0)
    {
        return Err(FixtureError::Infeasible(
            "pocket fractions must lie in (0, 1]".into(),
        ));
    }
    let sum: f64 = spec.target_pocket_fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(FixtureError::Infeasible(format!(
            "pocket fractions sum to {sum}, expected 1"
        )));
    }
    if spec.loaded_section_count < spec.target_pocket_fractions.len() {
        return Err(FixtureError::Infeasible(
            "fewer loaded sections than pockets".into(),
        ));
    }
    if spec.target_head_mva <= 0.0 {
        return Err(FixtureError::Infeasible("head MVA must be positive".into()));
    }
    Ok(())
}

/// Write the dataset in the standard section-CSV schema.
pub fn write_fixture_csv(dataset: &FeederDataset, path: &Path) -> Result<(), FixtureError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", crate::ingest::SECTION_CSV_HEADER)?;
    for s in &dataset.sections {
        let (kw, kvar) = match s.load_mva {
            Some(l) => (
                format!("{:.6}", l.re * 1000.0),
                format!("{:.6}", l.im * 1000.0),
            ),
            None => (String::new(), String::new()),
        };
        writeln!(
            f,
            "{},{},{},{:.6},{},{},{}",
            dataset.external_ids[s.from.index()],
            dataset.external_ids[s.to.index()],
            s.conductor,
            s.length_miles,
            s.phases.code(),
            kw,
            kvar
        )?;
    }
    Ok(())
}

pub fn write_manifest(manifest: &FixtureManifest, path: &Path) -> Result<(), FixtureError> {
    let text = serde_json::to_string_pretty(manifest).expect("serializable") + "\n";
    std::fs::write(path, text)?;
    Ok(())
}
