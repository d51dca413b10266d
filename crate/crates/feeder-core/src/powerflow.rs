//! Positive-sequence voltage-drop calculation along the feeder: radial-path
//! impedance equivalencing, the parallel-path mean rule, and the iterative
//! backward/forward Kirchhoff sweep with constant-power loads.

use crate::ingest::FeederDataset;
use crate::model::{Complex, ConductorLibrary, NodeId, PerUnitBases, SectionRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PowerflowError {
    #[error("equivalent impedance of an empty path is undefined")]
    EmptyPath,
    #[error("parallel equivalent of an empty path list is undefined")]
    EmptyParallel,
    #[error("sweep did not converge after {iterations} iterations (last mismatch {mismatch:.3e} pu)")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("section {section} has negative resistance")]
    NegativeResistance { section: usize },
    #[error("feeder is not radial after parallel-path reduction: {0}")]
    NotRadial(String),
    #[error("unsupported mesh structure: {0}")]
    UnsupportedMesh(String),
    #[error("head voltage must be positive (got {0})")]
    BadHeadVoltage(f64),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// How the impedance of loaded sections enters the radial-path equivalent.
/// The default divides their sum by the loaded-section count; the summing
/// alternative is available behind this switch but is not the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LoadedTermRule {
    #[default]
    Mean,
    Sum,
}

/// Radial-path equivalent over pre-resolved `(impedance, loaded)` parts; the
/// `SectionRecord` front end is [`equivalent_impedance`].
pub fn equivalent_impedance_parts<I>(
    parts: I,
    rule: LoadedTermRule,
) -> Result<Complex, PowerflowError>
where
    I: IntoIterator<Item = (Complex, bool)>,
{
    let mut no_load_sum = Complex::new(0.0, 0.0);
    let mut loaded_sum = Complex::new(0.0, 0.0);
    let mut loaded_count = 0usize;
    let mut any = false;
    for (z, loaded) in parts {
        any = true;
        if loaded {
            loaded_sum += z;
            loaded_count += 1;
        } else {
            no_load_sum += z;
        }
    }
    if !any {
        return Err(PowerflowError::EmptyPath);
    }
    let loaded_term = match (rule, loaded_count) {
        (_, 0) => Complex::new(0.0, 0.0),
        (LoadedTermRule::Mean, h2) => loaded_sum / h2 as f64,
        (LoadedTermRule::Sum, _) => loaded_sum,
    };
    Ok(no_load_sum + loaded_term)
}

/// Equivalent impedance of a radial path: the no-load section impedances sum,
/// the loaded section impedances contribute their mean (zero when the path
/// carries no loaded section).
pub fn equivalent_impedance(
    path: &[SectionRecord],
    library: &ConductorLibrary,
) -> Result<Complex, PowerflowError> {
    equivalent_impedance_with(path, library, LoadedTermRule::Mean)
}

pub fn equivalent_impedance_with(
    path: &[SectionRecord],
    library: &ConductorLibrary,
    rule: LoadedTermRule,
) -> Result<Complex, PowerflowError> {
    let parts: Result<Vec<(Complex, bool)>, PowerflowError> = path
        .iter()
        .map(|s| Ok((crate::model::section_impedance(s, library)?, s.is_loaded())))
        .collect();
    equivalent_impedance_parts(parts?, rule)
}

/// Equivalent of parallel paths: the arithmetic mean of the per-path
/// equivalents.
pub fn parallel_equivalent(paths: &[Complex]) -> Result<Complex, PowerflowError> {
    if paths.is_empty() {
        return Err(PowerflowError::EmptyParallel);
    }
    Ok(paths.iter().sum::<Complex>() / paths.len() as f64)
}

/// One link of a parallel chain; `end` is the chain-interior node the link
/// reaches (the merge node for the final link).
#[derive(Debug, Clone)]
pub struct ChainLink {
    pub z_ohms: Complex,
    pub loaded: bool,
    pub end: NodeId,
    pub kind: ElementKind,
}

/// One of the parallel routes between a split node and a merge node.
#[derive(Debug, Clone)]
pub struct ChainPath {
    pub links: Vec<ChainLink>,
    /// Radial-path equivalent of the chain.
    pub equivalent_ohms: Complex,
    /// Plain series sum, used to interpolate interior node voltages.
    pub series_ohms: Complex,
}

#[derive(Debug, Clone)]
pub enum ElementKind {
    /// A single dataset section (by index).
    Section(usize),
    /// Parallel chains replaced by the mean of their equivalents.
    Parallel(Vec<ChainPath>),
}

/// A directed edge of the radial tree that remains after parallel paths are
/// collapsed.
#[derive(Debug, Clone)]
pub struct TreeElement {
    pub from: NodeId,
    pub to: NodeId,
    pub impedance_ohms: Complex,
    pub kind: ElementKind,
}

/// The feeder reduced to a rooted radial tree. Loads on chain-interior nodes
/// are lumped at the chain's merge node.
#[derive(Debug, Clone)]
pub struct CollapsedFeeder {
    pub root: NodeId,
    pub node_count: usize,
    pub elements: Vec<TreeElement>,
    /// Lumped load per original node, MVA.
    pub node_load_mva: Vec<Complex>,
    /// Nodes that remain in the tree (root plus element to-nodes).
    pub retained: Vec<bool>,
    /// Outgoing element indices per node.
    pub children: Vec<Vec<usize>>,
    /// Incoming element index per node.
    pub parent_element: Vec<Option<usize>>,
}

struct WorkEdge {
    from: NodeId,
    to: NodeId,
    z: Complex,
    loaded: bool,
    kind: ElementKind,
    alive: bool,
}

/// Collapse every parallel subgraph to a single equivalent edge via the
/// radial-path equivalent of each route and the mean rule across routes.
/// Nested diamonds reduce from the inside out.
pub fn collapse_parallel_paths(
    dataset: &FeederDataset,
    rule: LoadedTermRule,
) -> Result<CollapsedFeeder, PowerflowError> {
    let n = dataset.node_count;
    let root = dataset.root;
    let mut node_load = dataset.node_loads_mva();
    let mut retained = vec![true; n];

    let mut edges: Vec<WorkEdge> = Vec::with_capacity(dataset.sections.len());
    for (i, s) in dataset.sections.iter().enumerate() {
        let z = dataset.section_impedance_ohms(i)?;
        edges.push(WorkEdge {
            from: s.from,
            to: s.to,
            z,
            loaded: s.is_loaded(),
            kind: ElementKind::Section(i),
            alive: true,
        });
    }

    loop {
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            if e.alive {
                incoming[e.to.index()].push(i);
                outgoing[e.from.index()].push(i);
            }
        }

        let merge_nodes: Vec<usize> = (0..n).filter(|&v| incoming[v].len() >= 2).collect();
        if merge_nodes.is_empty() {
            break;
        }

        let mut collapsed_one = false;
        'merges: for &m in &merge_nodes {
            // Trace each incoming edge back through simple interior nodes.
            let mut chains: Vec<Vec<usize>> = Vec::new();
            let mut starts: Vec<usize> = Vec::new();
            for &e0 in &incoming[m] {
                let mut chain = vec![e0];
                let mut cur = edges[e0].from.index();
                while cur != root.index()
                    && incoming[cur].len() == 1
                    && outgoing[cur].len() == 1
                {
                    let e = incoming[cur][0];
                    chain.push(e);
                    cur = edges[e].from.index();
                }
                chain.reverse();
                starts.push(cur);
                chains.push(chain);
            }
            if starts.iter().any(|&s| s != starts[0]) {
                continue 'merges; // inner structure must reduce first
            }
            let split = NodeId(starts[0]);

            let mut chain_paths = Vec::with_capacity(chains.len());
            for chain in &chains {
                let mut links = Vec::with_capacity(chain.len());
                let mut series = Complex::new(0.0, 0.0);
                for &e in chain {
                    series += edges[e].z;
                    links.push(ChainLink {
                        z_ohms: edges[e].z,
                        loaded: edges[e].loaded,
                        end: edges[e].to,
                        kind: edges[e].kind.clone(),
                    });
                }
                let equivalent =
                    equivalent_impedance_parts(links.iter().map(|l| (l.z_ohms, l.loaded)), rule)?;
                chain_paths.push(ChainPath {
                    links,
                    equivalent_ohms: equivalent,
                    series_ohms: series,
                });
            }
            let mean = parallel_equivalent(
                &chain_paths
                    .iter()
                    .map(|c| c.equivalent_ohms)
                    .collect::<Vec<_>>(),
            )
            .expect("at least two chains");

            for chain in &chains {
                for &e in chain {
                    edges[e].alive = false;
                    let interior = edges[e].to;
                    if interior.index() != m {
                        retained[interior.index()] = false;
                        let l = node_load[interior.index()];
                        node_load[interior.index()] = Complex::new(0.0, 0.0);
                        node_load[m] += l;
                    }
                }
            }
            edges.push(WorkEdge {
                from: split,
                to: NodeId(m),
                z: mean,
                loaded: false,
                kind: ElementKind::Parallel(chain_paths),
                alive: true,
            });
            collapsed_one = true;
            break;
        }
        if !collapsed_one {
            return Err(PowerflowError::UnsupportedMesh(format!(
                "merge nodes {:?} do not reduce to parallel chains from a common split",
                merge_nodes
            )));
        }
    }

    let elements: Vec<TreeElement> = edges
        .into_iter()
        .filter(|e| e.alive)
        .map(|e| TreeElement {
            from: e.from,
            to: e.to,
            impedance_ohms: e.z,
            kind: e.kind,
        })
        .collect();

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut parent_element: Vec<Option<usize>> = vec![None; n];
    for (i, e) in elements.iter().enumerate() {
        children[e.from.index()].push(i);
        if parent_element[e.to.index()].is_some() {
            return Err(PowerflowError::NotRadial(format!(
                "node {} is fed by more than one element",
                e.to
            )));
        }
        parent_element[e.to.index()] = Some(i);
    }
    if parent_element[root.index()].is_some() {
        return Err(PowerflowError::NotRadial(format!(
            "root {} has an incoming element",
            root
        )));
    }
    for v in 0..n {
        if retained[v] && v != root.index() && parent_element[v].is_none() {
            return Err(PowerflowError::NotRadial(format!(
                "node {} is unreachable from the root",
                v
            )));
        }
    }

    Ok(CollapsedFeeder {
        root,
        node_count: n,
        elements,
        node_load_mva: node_load,
        retained,
        children,
        parent_element,
    })
}

/// Converged sweep result. Voltages are per-unit; chain-interior node
/// voltages are interpolated along their own series impedance between the
/// solved split and merge voltages, and chain section currents share the
/// branch current equally across parallel routes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSolution {
    pub node_voltage: Vec<Complex>,
    pub section_current: Vec<Complex>,
    pub head_power_mva: Complex,
    pub iterations: usize,
    pub converged: bool,
    pub head_voltage_pu: f64,
}

impl SweepSolution {
    pub fn min_voltage_pu(&self) -> f64 {
        self.node_voltage
            .iter()
            .map(|v| v.norm())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub tolerance_pu: f64,
    pub max_iterations: usize,
    pub loaded_term_rule: LoadedTermRule,
    pub bases: PerUnitBases,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            tolerance_pu: 1e-8,
            max_iterations: 100,
            loaded_term_rule: LoadedTermRule::Mean,
            bases: PerUnitBases::default(),
        }
    }
}

/// Backward/forward Kirchhoff sweep at a fixed head voltage. Loads are
/// constant power, re-evaluated at the present voltage estimate each
/// iteration; iteration stops when the largest voltage change between
/// successive iterations falls below the tolerance.
pub fn sweep_voltage_drops(
    dataset: &FeederDataset,
    head_v_pu: f64,
    options: &SweepOptions,
) -> Result<SweepSolution, PowerflowError> {
    if head_v_pu <= 0.0 {
        return Err(PowerflowError::BadHeadVoltage(head_v_pu));
    }
    let collapsed = collapse_parallel_paths(dataset, options.loaded_term_rule)?;
    sweep_collapsed(&collapsed, head_v_pu, options, dataset.sections.len())
}

fn sweep_collapsed(
    feeder: &CollapsedFeeder,
    head_v_pu: f64,
    options: &SweepOptions,
    section_count: usize,
) -> Result<SweepSolution, PowerflowError> {
    let z_base = options.bases.impedance_base_ohms();
    for (i, e) in feeder.elements.iter().enumerate() {
        if e.impedance_ohms.re < 0.0 {
            return Err(PowerflowError::NegativeResistance { section: i });
        }
    }

    // Topological element order, parent before child.
    let mut topo: Vec<usize> = Vec::with_capacity(feeder.elements.len());
    let mut stack: Vec<usize> = feeder.children[feeder.root.index()].clone();
    stack.reverse();
    while let Some(e) = stack.pop() {
        topo.push(e);
        let to = feeder.elements[e].to.index();
        for &c in feeder.children[to].iter().rev() {
            stack.push(c);
        }
    }
    if topo.len() != feeder.elements.len() {
        return Err(PowerflowError::NotRadial(
            "element order does not cover the tree".into(),
        ));
    }

    let s_pu: Vec<Complex> = feeder
        .node_load_mva
        .iter()
        .map(|s| options.bases.power_to_pu(*s))
        .collect();

    let head = Complex::new(head_v_pu, 0.0);
    let mut v = vec![head; feeder.node_count];
    let mut elem_current = vec![Complex::new(0.0, 0.0); feeder.elements.len()];
    let mut converged = false;
    let mut iterations = 0;
    let mut mismatch = f64::INFINITY;

    while iterations < options.max_iterations {
        iterations += 1;
        // Backward: accumulate load currents leaf to root.
        for &e in topo.iter().rev() {
            let to = feeder.elements[e].to.index();
            let mut i = (s_pu[to] / v[to]).conj();
            for &c in &feeder.children[to] {
                i += elem_current[c];
            }
            elem_current[e] = i;
        }
        // Forward: apply voltage drops root to leaf.
        mismatch = 0.0;
        for &e in &topo {
            let el = &feeder.elements[e];
            let z_pu = el.impedance_ohms / z_base;
            let new_v = v[el.from.index()] - z_pu * elem_current[e];
            mismatch = mismatch.max((new_v - v[el.to.index()]).norm());
            v[el.to.index()] = new_v;
        }
        if mismatch < options.tolerance_pu {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(PowerflowError::NonConvergence {
            iterations,
            mismatch,
        });
    }

    // Interior chain voltages, interpolated along each route.
    let mut v_full = v.clone();
    for el in &feeder.elements {
        fill_chain_voltages(
            &el.kind,
            v_full[el.from.index()],
            v_full[el.to.index()],
            &mut v_full,
        );
    }

    // Per-section currents: tree sections carry their element current; each
    // parallel route shares the branch current equally.
    let mut section_current = vec![Complex::new(0.0, 0.0); section_count];
    for (e, el) in feeder.elements.iter().enumerate() {
        distribute_current(&el.kind, elem_current[e], &mut section_current);
    }

    let head_current: Complex = feeder.children[feeder.root.index()]
        .iter()
        .map(|&c| elem_current[c])
        .sum();
    let head_power_pu = head * head_current.conj();

    Ok(SweepSolution {
        node_voltage: v_full,
        section_current,
        head_power_mva: options.bases.power_to_mva(head_power_pu),
        iterations,
        converged,
        head_voltage_pu: head_v_pu,
    })
}

fn fill_chain_voltages(kind: &ElementKind, v_from: Complex, v_to: Complex, v: &mut [Complex]) {
    if let ElementKind::Parallel(chains) = kind {
        for chain in chains {
            let total = chain.series_ohms;
            let mut cumulative = Complex::new(0.0, 0.0);
            let mut link_from = v_from;
            for (i, link) in chain.links.iter().enumerate() {
                cumulative += link.z_ohms;
                let link_to = if i + 1 == chain.links.len() {
                    v_to
                } else if total.norm() < 1e-15 {
                    v_from
                } else {
                    v_from + (v_to - v_from) * (cumulative / total)
                };
                if i + 1 != chain.links.len() {
                    v[link.end.index()] = link_to;
                }
                fill_chain_voltages(&link.kind, link_from, link_to, v);
                link_from = link_to;
            }
        }
    }
}

fn distribute_current(kind: &ElementKind, current: Complex, out: &mut [Complex]) {
    match kind {
        ElementKind::Section(i) => out[*i] = current,
        ElementKind::Parallel(chains) => {
            let share = current / chains.len() as f64;
            for chain in chains {
                for link in &chain.links {
                    distribute_current(&link.kind, share, out);
                }
            }
        }
    }
}

/// Shunt reactive injection (MVA) at the root that cancels the feeder's net
/// reactive draw, so the upstream source holds the head at the target
/// voltage at unity power factor. With the fixed head source of the
/// reduction stage this equals the imaginary part of the head power.
pub fn head_reactive_compensation(solution: &SweepSolution, _target_v_pu: f64) -> Complex {
    Complex::new(0.0, solution.head_power_mva.im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Phases;

    fn section(
        from: usize,
        to: usize,
        conductor: &str,
        length: f64,
        load: Option<(f64, f64)>,
    ) -> SectionRecord {
        SectionRecord {
            from: NodeId(from),
            to: NodeId(to),
            conductor: conductor.into(),
            length_miles: length,
            phases: Phases::ThreePhase,
            load_mva: load.map(|(p, q)| Complex::new(p, q)),
        }
    }

    fn dataset(sections: Vec<SectionRecord>) -> FeederDataset {
        let node_count = sections
            .iter()
            .flat_map(|s| [s.from.index(), s.to.index()])
            .max()
            .unwrap()
            + 1;
        FeederDataset {
            name: "test".into(),
            sections,
            node_count,
            root: NodeId(0),
            external_ids: (0..node_count).map(|i| i.to_string()).collect(),
            library: ConductorLibrary::builtin(),
        }
    }

    fn ohm_section(from: usize, to: usize, r: f64, loaded: bool) -> SectionRecord {
        // Type A is 1.91 + j0.37 per mile; scale length to hit the wanted R.
        section(
            from,
            to,
            "Type A",
            r / 1.91,
            if loaded { Some((0.1, 0.0)) } else { None },
        )
    }

    #[test]
    fn equivalent_of_no_load_path_is_series_sum() {
        let lib = ConductorLibrary::builtin();
        let path = vec![ohm_section(0, 1, 1.0, false), ohm_section(1, 2, 2.0, false)];
        let z = equivalent_impedance(&path, &lib).unwrap();
        assert!((z.re - 3.0).abs() < 1e-12);
    }

    #[test]
    fn equivalent_of_loaded_only_path_is_mean() {
        let lib = ConductorLibrary::builtin();
        let path = vec![ohm_section(0, 1, 2.0, true), ohm_section(1, 2, 4.0, true)];
        let z = equivalent_impedance(&path, &lib).unwrap();
        assert!((z.re - 3.0).abs() < 1e-12);
    }

    #[test]
    fn equivalent_mixes_sum_and_mean_terms() {
        let lib = ConductorLibrary::builtin();
        // 1 mile Type A no-load plus two loaded Type A stretches of 2 and 4 R.
        let path = vec![
            section(0, 1, "Type A", 1.0, None),
            ohm_section(1, 2, 2.0, true),
            ohm_section(2, 3, 4.0, true),
        ];
        let z = equivalent_impedance(&path, &lib).unwrap();
        let expected = Complex::new(1.91, 0.37)
            + (Complex::new(1.91, 0.37) * (2.0 / 1.91) + Complex::new(1.91, 0.37) * (4.0 / 1.91))
                / 2.0;
        assert!((z - expected).norm() < 1e-12);
    }

    #[test]
    fn sum_rule_adds_loaded_sections() {
        let lib = ConductorLibrary::builtin();
        let path = vec![ohm_section(0, 1, 2.0, true), ohm_section(1, 2, 4.0, true)];
        let z = equivalent_impedance_with(&path, &lib, LoadedTermRule::Sum).unwrap();
        assert!((z.re - 6.0).abs() < 1e-12);
    }

    #[test]
    fn empty_path_is_an_error() {
        let lib = ConductorLibrary::builtin();
        assert!(matches!(
            equivalent_impedance(&[], &lib),
            Err(PowerflowError::EmptyPath)
        ));
    }

    #[test]
    fn parallel_equivalent_is_arithmetic_mean() {
        let z = parallel_equivalent(&[Complex::new(2.0, 0.0), Complex::new(4.0, 0.0)]).unwrap();
        assert!((z - Complex::new(3.0, 0.0)).norm() < 1e-15);
        let z = parallel_equivalent(&[Complex::new(5.0, 1.0)]).unwrap();
        assert!((z - Complex::new(5.0, 1.0)).norm() < 1e-15);
        let z = parallel_equivalent(&[
            Complex::new(1.0, 1.0),
            Complex::new(2.0, 2.0),
            Complex::new(3.0, 3.0),
        ])
        .unwrap();
        assert!((z - Complex::new(2.0, 2.0)).norm() < 1e-15);
        assert!(matches!(
            parallel_equivalent(&[]),
            Err(PowerflowError::EmptyParallel)
        ));
    }

    #[test]
    fn zero_load_feeder_stays_at_head_voltage() {
        let d = dataset(vec![
            section(0, 1, "Type A", 0.4, None),
            section(1, 2, "Type B", 0.3, None),
        ]);
        let sol = sweep_voltage_drops(&d, 1.02, &SweepOptions::default()).unwrap();
        for v in &sol.node_voltage {
            assert!((v - Complex::new(1.02, 0.0)).norm() < 1e-12);
        }
        assert!(sol.head_power_mva.norm() < 1e-12);
    }

    /// Closed-form two-bus solution used as an independent oracle: with the
    /// head fixed, |V2|^2 solves a quadratic derived from S = V2 I*.
    fn two_bus_voltage(head: f64, z_pu: Complex, s_pu: Complex) -> f64 {
        let (p, q) = (s_pu.re, s_pu.im);
        let (r, x) = (z_pu.re, z_pu.im);
        let b = 2.0 * (p * r + q * x) - head * head;
        let c = (p * p + q * q) * z_pu.norm_sqr();
        let disc = b * b - 4.0 * c;
        assert!(disc >= 0.0, "two-bus case must be feasible");
        (( -b + disc.sqrt()) / 2.0).sqrt()
    }

    #[test]
    fn sweep_matches_two_bus_closed_form() {
        let bases = PerUnitBases::default();
        let d = dataset(vec![section(0, 1, "Type A", 0.8, Some((2.0, 0.8)))]);
        let sol = sweep_voltage_drops(&d, 1.02, &SweepOptions::default()).unwrap();
        let z_pu = Complex::new(1.91, 0.37) * 0.8 / bases.impedance_base_ohms();
        let s_pu = Complex::new(0.2, 0.08);
        let expected = two_bus_voltage(1.02, z_pu, s_pu);
        assert!(
            (sol.node_voltage[1].norm() - expected).abs() < 1e-6,
            "got {} vs closed form {}",
            sol.node_voltage[1].norm(),
            expected
        );
    }

    #[test]
    fn power_balance_holds() {
        let d = dataset(vec![
            section(0, 1, "Type C", 0.5, Some((1.0, 0.3))),
            section(1, 2, "Type D", 0.4, Some((0.8, 0.25))),
            section(1, 3, "Type B", 0.3, Some((0.5, 0.1))),
        ]);
        let sol = sweep_voltage_drops(&d, 1.02, &SweepOptions::default()).unwrap();
        let bases = PerUnitBases::default();
        let loads: Complex = d.total_load_mva();
        let mut losses = Complex::new(0.0, 0.0);
        for (i, _) in d.sections.iter().enumerate() {
            let z = d.section_impedance_ohms(i).unwrap() / bases.impedance_base_ohms();
            let i_pu = sol.section_current[i];
            losses += z * i_pu * i_pu.conj();
        }
        let rhs = loads + bases.power_to_mva(losses);
        assert!(
            (sol.head_power_mva - rhs).norm() < 1e-7 * 10.0,
            "balance violated: {} vs {}",
            sol.head_power_mva,
            rhs
        );
    }

    #[test]
    fn voltage_is_monotone_on_lagging_radial_path() {
        let d = dataset(vec![
            section(0, 1, "Type C", 0.5, Some((0.5, 0.2))),
            section(1, 2, "Type C", 0.5, Some((0.5, 0.2))),
            section(2, 3, "Type C", 0.5, Some((0.5, 0.2))),
        ]);
        let sol = sweep_voltage_drops(&d, 1.02, &SweepOptions::default()).unwrap();
        for w in sol.node_voltage.windows(2) {
            assert!(w[1].norm() <= w[0].norm() + 1e-12);
        }
    }

    #[test]
    fn diamond_collapses_to_mean_of_routes() {
        // 0 -> 1, then parallel routes 1->2->3 and 1->4->3, load at 3.
        let d = dataset(vec![
            section(0, 1, "Type C", 0.4, None),
            section(1, 2, "Type A", 0.2, None),
            section(2, 3, "Type A", 0.2, None),
            section(1, 4, "Type B", 0.3, None),
            section(4, 3, "Type B", 0.3, None),
            section(3, 5, "Busbar", 0.0, Some((1.0, 0.3))),
        ]);
        let collapsed = collapse_parallel_paths(&d, LoadedTermRule::Mean).unwrap();
        assert!(!collapsed.retained[2]);
        assert!(!collapsed.retained[4]);
        let diamond = collapsed
            .elements
            .iter()
            .find(|e| matches!(e.kind, ElementKind::Parallel(_)))
            .unwrap();
        let z_a = Complex::new(1.91, 0.37) * 0.4;
        let z_b = Complex::new(0.63, 0.38) * 0.6;
        assert!((diamond.impedance_ohms - (z_a + z_b) / 2.0).norm() < 1e-12);

        let sol = sweep_voltage_drops(&d, 1.02, &SweepOptions::default()).unwrap();
        assert!(sol.converged);
        // Parallel routes split the branch current equally.
        assert!((sol.section_current[1] - sol.section_current[3]).norm() < 1e-12);
        // Interior voltages are interpolated between split and merge.
        let v1 = sol.node_voltage[1].norm();
        let v3 = sol.node_voltage[3].norm();
        let v2 = sol.node_voltage[2].norm();
        assert!(v2 <= v1 + 1e-12 && v2 >= v3 - 1e-12);
    }

    #[test]
    fn radial_chain_equivalent_tracks_full_sweep_within_five_percent() {
        // A chain dominated by no-load impedance with short loaded stubs at
        // the end: the lumped equivalent is the stated approximation.
        let mut sections = Vec::new();
        for i in 0..9 {
            sections.push(section(i, i + 1, "Type C", 0.3, None));
        }
        for i in 9..12 {
            sections.push(section(i, i + 1, "Type C", 0.05, Some((0.4, 0.13))));
        }
        let d = dataset(sections);
        let sol = sweep_voltage_drops(&d, 1.02, &SweepOptions::default()).unwrap();
        let full_drop = 1.02 - sol.node_voltage.last().unwrap().norm();

        let lib = ConductorLibrary::builtin();
        let z_eq = equivalent_impedance(&d.sections, &lib).unwrap();
        let bases = PerUnitBases::default();
        let z_pu = z_eq / bases.impedance_base_ohms();
        let s_pu = bases.power_to_pu(d.total_load_mva());
        let lumped = two_bus_voltage(1.02, z_pu, s_pu);
        let lumped_drop = 1.02 - lumped;
        let err = (lumped_drop - full_drop).abs() / full_drop;
        assert!(err < 0.05, "equivalent drop error {err:.3} exceeds 5%");
    }

    #[test]
    fn non_convergence_reports_mismatch() {
        // An absurd load on a long weak line cannot converge.
        let d = dataset(vec![section(0, 1, "Type A", 5.0, Some((50.0, 20.0)))]);
        let err = sweep_voltage_drops(&d, 1.02, &SweepOptions::default()).unwrap_err();
        assert!(matches!(err, PowerflowError::NonConvergence { .. }));
    }

    #[test]
    fn compensation_cancels_reactive_draw() {
        let d = dataset(vec![section(0, 1, "Type C", 0.4, Some((1.0, 0.4)))]);
        let sol = sweep_voltage_drops(&d, 1.02, &SweepOptions::default()).unwrap();
        let comp = head_reactive_compensation(&sol, 1.02);
        assert!((comp.im - sol.head_power_mva.im).abs() < 1e-12);
        assert_eq!(comp.re, 0.0);
        // Zero-load feeder needs no compensation.
        let empty = dataset(vec![section(0, 1, "Type C", 0.4, None)]);
        let sol0 = sweep_voltage_drops(&empty, 1.02, &SweepOptions::default()).unwrap();
        assert!(head_reactive_compensation(&sol0, 1.02).norm() < 1e-12);
    }
}
