//! Feeder data ingest: parse section/load CSV files, re-index node
//! identifiers densely, build the sparse symmetric adjacency matrix, and
//! validate the topology before any electrical calculation runs.

use crate::model::{Complex, ConductorLibrary, NodeId, Phases, SectionRecord};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open '{path}': {source}")]
    Open {
        path: String,
        source: std::io::Error,
    },
    #[error("row {row}: missing column '{column}'")]
    MissingColumn { row: usize, column: String },
    #[error("row {row}: non-numeric {column} '{value}'")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: unknown phase code '{value}'")]
    BadPhase { row: usize, value: String },
    #[error("row {row}: unknown conductor class '{value}'")]
    UnknownConductor { row: usize, value: String },
    #[error("row {row}: duplicate section {from}->{to} with conductor '{conductor}'")]
    DuplicateSection {
        row: usize,
        from: String,
        to: String,
        conductor: String,
    },
    #[error("row {row}: section endpoints must differ (both '{id}')")]
    SelfLoop { row: usize, id: String },
    #[error("row {row}: negative length {value}")]
    NegativeLength { row: usize, value: f64 },
    #[error("row {row}: nonzero length requires a conductor with impedance data; zero length only for zero-impedance classes")]
    ZeroLengthNonBusbar { row: usize },
    #[error("row {row}: load must have nonnegative active power (got {value} kW)")]
    NegativeLoad { row: usize, value: f64 },
    #[error("row {row}: CSV error: {source}")]
    Csv { row: usize, source: csv::Error },
    #[error("dataset has no sections")]
    Empty,
    #[error("explicit root '{0}' not present in the dataset")]
    RootNotFound(String),
    #[error("cannot infer a root: every node appears as a to-node")]
    NoRootCandidate,
}

/// A parsed feeder dataset with dense 0-based node ids. `external_ids[i]`
/// holds the original identifier of node `i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederDataset {
    pub name: String,
    pub sections: Vec<SectionRecord>,
    pub node_count: usize,
    pub root: NodeId,
    pub external_ids: Vec<String>,
    #[serde(skip)]
    pub library: ConductorLibrary,
}

impl FeederDataset {
    pub fn loaded_section_count(&self) -> usize {
        self.sections.iter().filter(|s| s.is_loaded()).count()
    }

    /// Count of distinct undirected node pairs spanned by sections.
    pub fn distinct_section_pairs(&self) -> usize {
        self.sections
            .iter()
            .map(|s| ordered_pair(s.from, s.to))
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Total lateral load in MVA.
    pub fn total_load_mva(&self) -> Complex {
        self.sections
            .iter()
            .filter_map(|s| s.load_mva)
            .sum::<Complex>()
    }

    /// Aggregate load attached at each node (loads attach to a section's
    /// to-node).
    pub fn node_loads_mva(&self) -> Vec<Complex> {
        let mut loads = vec![Complex::new(0.0, 0.0); self.node_count];
        for s in &self.sections {
            if let Some(l) = s.load_mva {
                loads[s.to.index()] += l;
            }
        }
        loads
    }

    pub fn section_impedance_ohms(&self, index: usize) -> Result<Complex, crate::model::ModelError> {
        crate::model::section_impedance(&self.sections[index], &self.library)
    }
}

fn ordered_pair(a: NodeId, b: NodeId) -> (usize, usize) {
    let (a, b) = (a.index(), b.index());
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Sparse symmetric node adjacency: entry (a, b) is set exactly when a
/// section between a and b exists, together with the mirrored (b, a).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjacencyMatrix {
    n: usize,
    rows: Vec<BTreeSet<usize>>,
}

impl AdjacencyMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rows: vec![BTreeSet::new(); n],
        }
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn insert(&mut self, a: NodeId, b: NodeId) {
        self.rows[a.index()].insert(b.index());
        self.rows[b.index()].insert(a.index());
    }

    pub fn contains(&self, a: NodeId, b: NodeId) -> bool {
        self.rows[a.index()].contains(&b.index())
    }

    pub fn neighbors(&self, a: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.rows[a.index()].iter().map(|&i| NodeId(i))
    }

    pub fn degree(&self, a: NodeId) -> usize {
        self.rows[a.index()].len()
    }

    /// Number of stored directed entries; twice the undirected pair count.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    pub fn undirected_pair_count(&self) -> usize {
        self.nnz() / 2
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows.iter().enumerate().all(|(a, row)| {
            row.iter()
                .all(|&b| self.rows[b].contains(&a))
        })
    }
}

/// CSV header expected by [`parse_sections`].
pub const SECTION_CSV_HEADER: &str = "from_id,to_id,conductor,length_miles,phases,load_kw,load_kvar";

struct RawRow {
    row: usize,
    from: String,
    to: String,
    conductor: String,
    length: f64,
    phases: Phases,
    load: Option<Complex>,
}

/// Parse a section CSV into a dataset with dense node ids.
///
/// Node ids are re-indexed by sorting the external identifiers (numerically
/// when every id parses as an integer, lexicographically otherwise) so the
/// result does not depend on row order. The root is `explicit_root` when
/// given, otherwise the unique node that never appears as a to-node; ties go
/// to the lowest dense index.
pub fn parse_sections(
    path: &Path,
    library: ConductorLibrary,
    explicit_root: Option<&str>,
) -> Result<FeederDataset, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Open {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "feeder".to_string());
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|source| IngestError::Csv { row: 1, source })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = [
        "from_id",
        "to_id",
        "conductor",
        "length_miles",
        "phases",
        "load_kw",
        "load_kvar",
    ];
    let mut idx = HashMap::new();
    for c in required {
        match col(c) {
            Some(i) => {
                idx.insert(c, i);
            }
            None => {
                return Err(IngestError::MissingColumn {
                    row: 1,
                    column: c.to_string(),
                })
            }
        }
    }

    let mut raw_rows: Vec<RawRow> = Vec::new();
    let mut seen: BTreeSet<(String, String, String)> = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // header is row 1
        let record = record.map_err(|source| IngestError::Csv { row, source })?;
        let field = |c: &str| -> Result<&str, IngestError> {
            record
                .get(idx[c])
                .ok_or_else(|| IngestError::MissingColumn {
                    row,
                    column: c.to_string(),
                })
        };
        let from = field("from_id")?.to_string();
        let to = field("to_id")?.to_string();
        if from == to {
            return Err(IngestError::SelfLoop { row, id: from });
        }
        let conductor = field("conductor")?.to_string();
        if !library.contains(&conductor) {
            return Err(IngestError::UnknownConductor {
                row,
                value: conductor,
            });
        }
        let length_str = field("length_miles")?;
        let length: f64 = length_str.parse().map_err(|_| IngestError::BadNumber {
            row,
            column: "length_miles".to_string(),
            value: length_str.to_string(),
        })?;
        if length < 0.0 {
            return Err(IngestError::NegativeLength { row, value: length });
        }
        if length == 0.0 {
            let spec = library.get(&conductor).expect("checked above");
            if spec.impedance_per_mile().norm() > 0.0 {
                return Err(IngestError::ZeroLengthNonBusbar { row });
            }
        }
        let phase_str = field("phases")?;
        let phases = Phases::parse(phase_str).ok_or_else(|| IngestError::BadPhase {
            row,
            value: phase_str.to_string(),
        })?;
        let parse_opt = |c: &str| -> Result<Option<f64>, IngestError> {
            let v = field(c)?;
            if v.is_empty() {
                return Ok(None);
            }
            v.parse().map(Some).map_err(|_| IngestError::BadNumber {
                row,
                column: c.to_string(),
                value: v.to_string(),
            })
        };
        let kw = parse_opt("load_kw")?;
        let kvar = parse_opt("load_kvar")?;
        let load = match (kw, kvar) {
            (None, None) => None,
            (kw, kvar) => {
                let kw = kw.unwrap_or(0.0);
                if kw < 0.0 {
                    return Err(IngestError::NegativeLoad { row, value: kw });
                }
                Some(Complex::new(kw / 1000.0, kvar.unwrap_or(0.0) / 1000.0))
            }
        };
        let key = (from.clone(), to.clone(), conductor.clone());
        if !seen.insert(key) {
            return Err(IngestError::DuplicateSection {
                row,
                from,
                to,
                conductor,
            });
        }
        raw_rows.push(RawRow {
            row,
            from,
            to,
            conductor,
            length,
            phases,
            load,
        });
    }
    if raw_rows.is_empty() {
        return Err(IngestError::Empty);
    }

    // Dense re-indexing, independent of row order.
    let mut ids: BTreeSet<String> = BTreeSet::new();
    for r in &raw_rows {
        ids.insert(r.from.clone());
        ids.insert(r.to.clone());
    }
    let mut external_ids: Vec<String> = ids.into_iter().collect();
    if external_ids.iter().all(|s| s.parse::<u64>().is_ok()) {
        external_ids.sort_by_key(|s| s.parse::<u64>().unwrap());
    }
    let index: BTreeMap<&str, usize> = external_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let mut sections = Vec::with_capacity(raw_rows.len());
    let mut is_to_node = vec![false; external_ids.len()];
    for r in &raw_rows {
        let from = NodeId(index[r.from.as_str()]);
        let to = NodeId(index[r.to.as_str()]);
        is_to_node[to.index()] = true;
        sections.push(SectionRecord {
            from,
            to,
            conductor: r.conductor.clone(),
            length_miles: r.length,
            phases: r.phases,
            load_mva: r.load,
        });
        let _ = r.row;
    }
    // Keep sections in a canonical order so downstream results do not depend
    // on input row order either.
    sections.sort_by_key(|s| (s.from, s.to, s.conductor.clone()));

    let root = match explicit_root {
        Some(ext) => NodeId(
            *index
                .get(ext)
                .ok_or_else(|| IngestError::RootNotFound(ext.to_string()))?,
        ),
        None => {
            let candidate = is_to_node.iter().position(|&t| !t);
            NodeId(candidate.ok_or(IngestError::NoRootCandidate)?)
        }
    };

    Ok(FeederDataset {
        name,
        sections,
        node_count: external_ids.len(),
        root,
        external_ids,
        library,
    })
}

/// Populate the N x N logical adjacency matrix from the dataset's sections.
pub fn build_adjacency(dataset: &FeederDataset) -> AdjacencyMatrix {
    let mut m = AdjacencyMatrix::new(dataset.node_count);
    for s in &dataset.sections {
        m.insert(s.from, s.to);
    }
    m
}

/// Findings from topology validation. Parallel paths are flagged, not
/// rejected; the dataset is accepted iff every node is reachable from the
/// root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dataset: String,
    pub node_count: usize,
    pub section_count: usize,
    pub loaded_section_count: usize,
    pub root: NodeId,
    /// Nodes with no path from the root over the undirected adjacency.
    pub unreachable_nodes: Vec<NodeId>,
    /// Merge nodes where two or more directed paths join (parallel paths).
    pub parallel_merge_nodes: Vec<NodeId>,
    /// Loads on sections whose to-node is unreachable from the root.
    pub orphan_load_sections: Vec<usize>,
    pub accepted: bool,
}

pub fn validate_topology(dataset: &FeederDataset) -> ValidationReport {
    let adjacency = build_adjacency(dataset);
    let n = dataset.node_count;

    let mut reached = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    reached[dataset.root.index()] = true;
    queue.push_back(dataset.root);
    while let Some(v) = queue.pop_front() {
        for w in adjacency.neighbors(v) {
            if !reached[w.index()] {
                reached[w.index()] = true;
                queue.push_back(w);
            }
        }
    }
    let unreachable_nodes: Vec<NodeId> = (0..n)
        .filter(|&i| !reached[i])
        .map(NodeId)
        .collect();

    // A node fed by more than one distinct section marks a parallel path.
    let mut indegree = vec![0usize; n];
    for s in &dataset.sections {
        indegree[s.to.index()] += 1;
    }
    let parallel_merge_nodes: Vec<NodeId> = (0..n)
        .filter(|&i| indegree[i] >= 2)
        .map(NodeId)
        .collect();

    let orphan_load_sections: Vec<usize> = dataset
        .sections
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_loaded() && !reached[s.to.index()])
        .map(|(i, _)| i)
        .collect();

    ValidationReport {
        dataset: dataset.name.clone(),
        node_count: n,
        section_count: dataset.sections.len(),
        loaded_section_count: dataset.loaded_section_count(),
        root: dataset.root,
        accepted: unreachable_nodes.is_empty(),
        unreachable_nodes,
        parallel_merge_nodes,
        orphan_load_sections,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{}", SECTION_CSV_HEADER).unwrap();
        write!(f, "{}", body).unwrap();
        f
    }

    fn parse(body: &str) -> Result<FeederDataset, IngestError> {
        let f = write_csv(body);
        parse_sections(f.path(), ConductorLibrary::builtin(), None)
    }

    #[test]
    fn parses_path_graph() {
        let d = parse("1,2,Type A,0.5,ABC,,\n2,3,Type B,0.3,A,100,30\n").unwrap();
        assert_eq!(d.node_count, 3);
        assert_eq!(d.sections.len(), 2);
        assert_eq!(d.loaded_section_count(), 1);
        assert_eq!(d.root, NodeId(0));
        assert_eq!(d.external_ids, vec!["1", "2", "3"]);
        let load = d.sections.iter().find_map(|s| s.load_mva).unwrap();
        assert!((load - Complex::new(0.1, 0.03)).norm() < 1e-12);
    }

    #[test]
    fn unknown_conductor_reports_row() {
        let err = parse("1,2,Type A,0.5,ABC,,\n2,3,Mystery,0.3,A,,\n").unwrap_err();
        match err {
            IngestError::UnknownConductor { row, value } => {
                assert_eq!(row, 3);
                assert_eq!(value, "Mystery");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_length_reports_row() {
        let err = parse("1,2,Type A,abc,ABC,,\n").unwrap_err();
        assert!(matches!(err, IngestError::BadNumber { row: 2, .. }));
    }

    #[test]
    fn duplicate_section_rejected() {
        let err = parse("1,2,Type A,0.5,ABC,,\n1,2,Type A,0.4,ABC,,\n").unwrap_err();
        assert!(matches!(err, IngestError::DuplicateSection { row: 3, .. }));
    }

    #[test]
    fn parallel_sections_with_distinct_conductors_are_kept() {
        let d = parse("1,2,Type A,0.5,ABC,,\n1,2,Type B,0.5,ABC,,\n").unwrap();
        assert_eq!(d.sections.len(), 2);
        assert_eq!(d.distinct_section_pairs(), 1);
        let adj = build_adjacency(&d);
        assert_eq!(adj.undirected_pair_count(), 1);
    }

    #[test]
    fn adjacency_is_symmetric_and_counts_pairs() {
        let d = parse("1,2,Type A,0.5,ABC,,\n2,3,Type B,0.3,A,,\n").unwrap();
        let adj = build_adjacency(&d);
        assert!(adj.is_symmetric());
        assert_eq!(adj.undirected_pair_count(), 2);
        assert!(adj.contains(NodeId(0), NodeId(1)));
        assert!(adj.contains(NodeId(1), NodeId(0)));
        assert!(!adj.contains(NodeId(0), NodeId(2)));
    }

    #[test]
    fn row_reordering_gives_identical_dataset() {
        let a = parse("1,2,Type A,0.5,ABC,,\n2,3,Type B,0.3,A,100,30\n").unwrap();
        let b = parse("2,3,Type B,0.3,A,100,30\n1,2,Type A,0.5,ABC,,\n").unwrap();
        assert_eq!(a.external_ids, b.external_ids);
        assert_eq!(a.root, b.root);
        assert_eq!(a.sections, b.sections);
    }

    #[test]
    fn validate_path_graph_is_accepted() {
        let d = parse("1,2,Type A,0.5,ABC,,\n2,3,Type B,0.3,A,,\n").unwrap();
        let report = validate_topology(&d);
        assert!(report.accepted);
        assert!(report.unreachable_nodes.is_empty());
        assert!(report.parallel_merge_nodes.is_empty());
    }

    #[test]
    fn validate_flags_disjoint_component() {
        let d = parse("1,2,Type A,0.5,ABC,,\n5,6,Type B,0.3,A,,\n").unwrap();
        let report = validate_topology(&d);
        assert!(!report.accepted);
        assert_eq!(report.unreachable_nodes.len(), 2);
    }

    #[test]
    fn validate_flags_diamond_merge_node() {
        let d = parse(
            "0,1,Type A,0.5,ABC,,\n0,2,Type B,0.5,ABC,,\n1,3,Type C,0.2,ABC,,\n2,3,Type D,0.2,ABC,,\n",
        )
        .unwrap();
        let report = validate_topology(&d);
        assert!(report.accepted);
        assert_eq!(report.parallel_merge_nodes, vec![NodeId(3)]);
    }

    #[test]
    fn explicit_root_overrides_inference() {
        let f = write_csv("1,2,Type A,0.5,ABC,,\n2,3,Type B,0.3,A,,\n");
        let d = parse_sections(f.path(), ConductorLibrary::builtin(), Some("2")).unwrap();
        assert_eq!(d.root, NodeId(1));
        let err = parse_sections(f.path(), ConductorLibrary::builtin(), Some("9")).unwrap_err();
        assert!(matches!(err, IngestError::RootNotFound(_)));
    }

    #[test]
    fn empty_section_list_is_rejected() {
        let err = parse("").unwrap_err();
        assert!(matches!(err, IngestError::Empty));
    }
}
