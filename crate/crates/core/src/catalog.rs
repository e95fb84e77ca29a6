//! Catalog ingestion and validation.
//!
//! Catalog files are UTF-8 JSON lines, one item per line:
//!
//! ```text
//! {"id":"t1","title":"Teardrop","artist":"Massive Attack","genre_id":"trip hop",
//!  "features":{"audio":[0.1,0.7],"tags":["downtempo"]},"popularity":12}
//! ```
//!
//! Loading never yields a partial catalog: either every line validates or a
//! [`ValidationReport`] lists every violation found.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::{
    combined_distance, CalibrationMap, CriterionKind, CriterionSpec, DistanceConfig, DistanceError,
    GENRE_KEY,
};

/// A per-item feature: a dense vector or a tag set.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Feature {
    Vector(Vec<f64>),
    Tags(BTreeSet<String>),
}

impl Feature {
    fn kind_name(&self) -> &'static str {
        match self {
            Feature::Vector(_) => "numeric vector",
            Feature::Tags(_) => "tag set",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Item {
    pub id: String,
    pub title: String,
    pub artist: String,
    pub genre_id: String,
    pub features: BTreeMap<String, Feature>,
    /// Prior play or citation count. Carried for display only; never scored.
    pub popularity: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawItem {
    id: String,
    title: String,
    artist: String,
    genre_id: String,
    features: BTreeMap<String, Vec<serde_json::Value>>,
    #[serde(default)]
    popularity: u64,
}

// ---------------------------------------------------------------------------
// Validation report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IssueCode {
    EmptyCatalog,
    InvalidUtf8,
    MalformedRecord,
    InvalidField,
    DuplicateId,
    DimensionMismatch,
    FeatureKind,
    MissingFeature,
    UnresolvableGenre,
    InvalidConfig,
}

impl IssueCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            IssueCode::EmptyCatalog => "empty-catalog",
            IssueCode::InvalidUtf8 => "invalid-utf8",
            IssueCode::MalformedRecord => "malformed-record",
            IssueCode::InvalidField => "invalid-field",
            IssueCode::DuplicateId => "duplicate-id",
            IssueCode::DimensionMismatch => "dimension-mismatch",
            IssueCode::FeatureKind => "feature-kind",
            IssueCode::MissingFeature => "missing-feature",
            IssueCode::UnresolvableGenre => "unresolvable-genre",
            IssueCode::InvalidConfig => "invalid-config",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub code: IssueCode,
    /// 1-based line number in the source, when the issue is tied to a line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.code.as_str())?;
        if let Some(line) = self.line {
            write!(f, " line {line}")?;
        }
        if let Some(id) = &self.item_id {
            write!(f, " item `{id}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    fn push(
        &mut self,
        code: IssueCode,
        line: Option<usize>,
        item_id: Option<&str>,
        message: impl Into<String>,
    ) {
        self.issues.push(ValidationIssue {
            code,
            line,
            item_id: item_id.map(str::to_owned),
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, code: IssueCode) -> bool {
        self.issues.iter().any(|i| i.code == code)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        write!(f, "{} issue(s)", self.issues.len())
    }
}

impl std::error::Error for ValidationReport {}

// ---------------------------------------------------------------------------
// Genre graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("empty genre graph")]
    Empty,
    #[error("line {line}: invalid UTF-8")]
    InvalidUtf8 { line: usize },
    #[error("line {line}: expected `node` or `nodeA<TAB>nodeB`")]
    Malformed { line: usize },
    #[error("{}self-loop on `{node}`", fmt_line(.line))]
    SelfLoop { line: Option<usize>, node: String },
    #[error("{}edge references unknown node `{node}`", fmt_line(.line))]
    UnknownNode { line: Option<usize>, node: String },
}

fn fmt_line(line: &Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

const UNREACHABLE: u32 = u32::MAX;

/// Undirected, unweighted genre proximity graph with precomputed hop counts.
#[derive(Debug, Clone)]
pub struct GenreGraph {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    edges: BTreeSet<(usize, usize)>,
    hops: Vec<Vec<u32>>,
    diameter: u32,
}

impl PartialEq for GenreGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

impl GenreGraph {
    /// Builds the graph; every edge endpoint must appear in `nodes`.
    pub fn new(nodes: Vec<String>, edges: Vec<(String, String)>) -> Result<Self, GraphError> {
        let nodes: Vec<String> = nodes
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        let index: HashMap<String, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let mut edge_set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop {
                    line: None,
                    node: a,
                });
            }
            let lookup = |n: &String| {
                index
                    .get(n)
                    .copied()
                    .ok_or_else(|| GraphError::UnknownNode {
                        line: None,
                        node: n.clone(),
                    })
            };
            let (i, j) = (lookup(&a)?, lookup(&b)?);
            edge_set.insert((i.min(j), i.max(j)));
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(i, j) in &edge_set {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        let hops: Vec<Vec<u32>> = (0..nodes.len()).map(|s| bfs(&adjacency, s)).collect();
        let diameter = largest_component_diameter(&hops);
        Ok(Self {
            nodes,
            index,
            edges: edge_set,
            hops,
            diameter,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges
            .iter()
            .map(|&(i, j)| (self.nodes[i].as_str(), self.nodes[j].as_str()))
    }

    pub fn contains(&self, node: &str) -> bool {
        self.index.contains_key(node)
    }

    pub fn index_of(&self, node: &str) -> Option<usize> {
        self.index.get(node).copied()
    }

    /// Shortest-path hop count, `None` across components.
    pub fn hops_between(&self, i: usize, j: usize) -> Option<u32> {
        let h = self.hops[i][j];
        (h != UNREACHABLE).then_some(h)
    }

    /// Max eccentricity over the largest connected component.
    pub fn diameter(&self) -> u32 {
        self.diameter
    }

    /// Serializes into the edge-list format read by [`load_genre_graph`].
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for node in &self.nodes {
            writeln!(out, "{node}")?;
        }
        for (a, b) in self.edges() {
            writeln!(out, "{a}\t{b}")?;
        }
        Ok(())
    }
}

fn bfs(adjacency: &[Vec<usize>], source: usize) -> Vec<u32> {
    let mut dist = vec![UNREACHABLE; adjacency.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if dist[v] == UNREACHABLE {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

fn largest_component_diameter(hops: &[Vec<u32>]) -> u32 {
    let n = hops.len();
    let mut seen = vec![false; n];
    // (size, diameter); ties on size keep the larger diameter
    let mut best = (0usize, 0u32);
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&v| hops[s][v] != UNREACHABLE).collect();
        let mut diameter = 0;
        for &u in &members {
            seen[u] = true;
            for &v in &members {
                diameter = diameter.max(hops[u][v]);
            }
        }
        best = best.max((members.len(), diameter));
    }
    best.1
}

/// Reads the tab-separated edge list.
///
/// Blank lines and lines starting with `#` are skipped. A line holding a
/// single name declares a node (isolated nodes are allowed); `a<TAB>b`
/// declares an edge. When the file declares any node explicitly, every edge
/// endpoint must be declared somewhere in the file.
pub fn load_genre_graph<R: Read>(mut source: R) -> Result<GenreGraph, GraphError> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|_| GraphError::InvalidUtf8 { line: 1 })?;
    let mut declared = BTreeSet::new();
    let mut edges = Vec::new();
    for (n, raw) in bytes.split(|b| *b == b'\n').enumerate() {
        let line_no = n + 1;
        let line =
            std::str::from_utf8(raw).map_err(|_| GraphError::InvalidUtf8 { line: line_no })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        match fields.as_slice() {
            [node] if !node.is_empty() => {
                declared.insert(node.to_string());
            }
            [a, b] if !a.is_empty() && !b.is_empty() => {
                if a == b {
                    return Err(GraphError::SelfLoop {
                        line: Some(line_no),
                        node: a.to_string(),
                    });
                }
                edges.push((line_no, a.to_string(), b.to_string()));
            }
            _ => return Err(GraphError::Malformed { line: line_no }),
        }
    }
    let mut nodes = declared.clone();
    for (line, a, b) in &edges {
        for node in [a, b] {
            if !declared.is_empty() && !declared.contains(node) {
                return Err(GraphError::UnknownNode {
                    line: Some(*line),
                    node: node.clone(),
                });
            }
            nodes.insert(node.clone());
        }
    }
    GenreGraph::new(
        nodes.into_iter().collect(),
        edges.into_iter().map(|(_, a, b)| (a, b)).collect(),
    )
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

/// Validated, immutable set of items with the distance configuration used to
/// compare them.
#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<Item>,
    index: HashMap<String, usize>,
    config: DistanceConfig,
    genre_graph: Option<GenreGraph>,
}

impl Catalog {
    /// Validates programmatically built items.
    pub fn new(
        items: Vec<Item>,
        config: DistanceConfig,
        genre_graph: Option<GenreGraph>,
    ) -> Result<Self, ValidationReport> {
        let mut report = ValidationReport::default();
        let lines: Vec<Option<usize>> = vec![None; items.len()];
        validate_items(&items, &lines, &config, genre_graph.as_ref(), &mut report);
        finish(items, config, genre_graph, report)
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn config(&self) -> &DistanceConfig {
        &self.config
    }

    pub fn criteria(&self) -> &[CriterionSpec] {
        &self.config.criteria
    }

    pub fn calibration(&self) -> Option<&CalibrationMap> {
        self.config.calibration.as_ref()
    }

    pub fn genre_graph(&self) -> Option<&GenreGraph> {
        self.genre_graph.as_ref()
    }

    /// Combined (calibrated) distance between two catalog items.
    pub fn distance(&self, a: &Item, b: &Item) -> Result<f64, DistanceError> {
        combined_distance(
            a,
            b,
            &self.config.criteria,
            self.genre_graph.as_ref(),
            self.config.calibration.as_ref(),
        )
    }

    /// Writes items back out as catalog lines.
    pub fn write_items<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for item in &self.items {
            serde_json::to_writer(&mut out, item)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn finish(
    items: Vec<Item>,
    config: DistanceConfig,
    genre_graph: Option<GenreGraph>,
    mut report: ValidationReport,
) -> Result<Catalog, ValidationReport> {
    if items.is_empty() && report.is_empty() {
        report.push(IssueCode::EmptyCatalog, None, None, "empty catalog");
    }
    if !report.is_empty() {
        return Err(report);
    }
    let index = items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.id.clone(), i))
        .collect();
    Ok(Catalog {
        items,
        index,
        config,
        genre_graph,
    })
}

fn expected_kinds(config: &DistanceConfig) -> HashMap<&str, bool> {
    // feature key -> expects a vector
    config
        .criteria
        .iter()
        .filter(|c| c.kind != CriterionKind::GraphShortestPath)
        .map(|c| {
            let is_vector = matches!(
                c.kind,
                CriterionKind::VectorCosine | CriterionKind::VectorEuclidean
            );
            (c.feature_key.as_str(), is_vector)
        })
        .collect()
}

fn convert_feature(
    values: Vec<serde_json::Value>,
    expect_vector: Option<bool>,
) -> Result<Feature, String> {
    if values.is_empty() {
        return Ok(match expect_vector {
            Some(true) => Feature::Vector(Vec::new()),
            _ => Feature::Tags(BTreeSet::new()),
        });
    }
    if values.iter().all(|v| v.is_number()) {
        let mut out = Vec::with_capacity(values.len());
        for v in &values {
            match v.as_f64() {
                Some(x) if x.is_finite() => out.push(x),
                _ => return Err(format!("non-finite number {v}")),
            }
        }
        Ok(Feature::Vector(out))
    } else if values.iter().all(|v| v.is_string()) {
        Ok(Feature::Tags(
            values
                .into_iter()
                .filter_map(|v| match v {
                    serde_json::Value::String(s) => Some(s),
                    _ => None,
                })
                .collect(),
        ))
    } else {
        Err("feature arrays must hold only numbers or only strings".into())
    }
}

fn parse_line(
    line: &str,
    line_no: usize,
    expected: &HashMap<&str, bool>,
    report: &mut ValidationReport,
) -> Option<Item> {
    let raw: RawItem = match serde_json::from_str(line) {
        Ok(raw) => raw,
        Err(e) => {
            // best effort at naming the record
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|id| id.as_str().map(str::to_owned)));
            report.push(
                IssueCode::MalformedRecord,
                Some(line_no),
                id.as_deref(),
                e.to_string(),
            );
            return None;
        }
    };
    let mut ok = true;
    if raw.id.trim().is_empty() {
        report.push(IssueCode::InvalidField, Some(line_no), None, "empty id");
        ok = false;
    }
    let mut features = BTreeMap::new();
    for (key, values) in raw.features {
        if key == GENRE_KEY {
            report.push(
                IssueCode::InvalidField,
                Some(line_no),
                Some(&raw.id),
                format!("feature key `{GENRE_KEY}` is reserved"),
            );
            ok = false;
            continue;
        }
        match convert_feature(values, expected.get(key.as_str()).copied()) {
            Ok(f) => {
                features.insert(key, f);
            }
            Err(msg) => {
                report.push(
                    IssueCode::InvalidField,
                    Some(line_no),
                    Some(&raw.id),
                    format!("feature `{key}`: {msg}"),
                );
                ok = false;
            }
        }
    }
    ok.then_some(Item {
        id: raw.id,
        title: raw.title,
        artist: raw.artist,
        genre_id: raw.genre_id,
        features,
        popularity: raw.popularity,
    })
}

fn validate_items(
    items: &[Item],
    lines: &[Option<usize>],
    config: &DistanceConfig,
    graph: Option<&GenreGraph>,
    report: &mut ValidationReport,
) {
    if let Err(e) = config.validate(graph) {
        report.push(IssueCode::InvalidConfig, None, None, e.to_string());
    }
    let expected = expected_kinds(config);
    let graph_needed = config
        .criteria
        .iter()
        .any(|c| c.kind == CriterionKind::GraphShortestPath);

    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    // feature key -> (first kind, vector dim, first item id)
    let mut shapes: HashMap<&str, (&'static str, usize, &str)> = HashMap::new();
    for (pos, (item, &line)) in items.iter().zip(lines).enumerate() {
        let id = item.id.as_str();
        if let Some(&prev) = first_seen.get(id) {
            let at = lines[prev]
                .map(|l| format!(" (first seen on line {l})"))
                .unwrap_or_default();
            report.push(
                IssueCode::DuplicateId,
                line,
                Some(id),
                format!("duplicate id `{id}`{at}"),
            );
        } else {
            first_seen.insert(id, pos);
        }

        for (key, feature) in &item.features {
            let dim = match feature {
                Feature::Vector(v) => v.len(),
                Feature::Tags(_) => 0,
            };
            match shapes.get(key.as_str()) {
                None => {
                    shapes.insert(key, (feature.kind_name(), dim, id));
                }
                Some(&(kind, _, first)) if kind != feature.kind_name() => report.push(
                    IssueCode::FeatureKind,
                    line,
                    Some(id),
                    format!(
                        "feature `{key}` is a {} but item `{first}` has a {kind}",
                        feature.kind_name()
                    ),
                ),
                Some(&(_, first_dim, first))
                    if matches!(feature, Feature::Vector(_)) && first_dim != dim =>
                {
                    report.push(
                        IssueCode::DimensionMismatch,
                        line,
                        Some(id),
                        format!(
                            "feature `{key}` has dimension {dim}, item `{first}` has {first_dim}"
                        ),
                    )
                }
                _ => {}
            }
        }

        for (key, &want_vector) in &expected {
            match item.features.get(*key) {
                None => report.push(
                    IssueCode::MissingFeature,
                    line,
                    Some(id),
                    format!("missing feature `{key}`"),
                ),
                Some(f) if matches!(f, Feature::Vector(_)) != want_vector => report.push(
                    IssueCode::FeatureKind,
                    line,
                    Some(id),
                    format!(
                        "feature `{key}` must be a {}",
                        if want_vector {
                            "numeric vector"
                        } else {
                            "tag set"
                        }
                    ),
                ),
                _ => {}
            }
        }

        if graph_needed {
            if let Some(g) = graph {
                if !g.contains(&item.genre_id) {
                    report.push(
                        IssueCode::UnresolvableGenre,
                        line,
                        Some(id),
                        format!("genre `{}` is not in the genre graph", item.genre_id),
                    );
                }
            }
        }
    }
}

/// Reads and validates a catalog file.
pub fn load_catalog<R: Read>(
    mut source: R,
    config: DistanceConfig,
    genre_graph: Option<GenreGraph>,
) -> Result<Catalog, ValidationReport> {
    let mut report = ValidationReport::default();
    let mut bytes = Vec::new();
    if let Err(e) = source.read_to_end(&mut bytes) {
        report.push(
            IssueCode::MalformedRecord,
            None,
            None,
            format!("read error: {e}"),
        );
        return Err(report);
    }
    let expected = expected_kinds(&config);
    let mut items = Vec::new();
    let mut lines = Vec::new();
    let mut saw_record = false;
    for (n, raw) in bytes.split(|b| *b == b'\n').enumerate() {
        let line_no = n + 1;
        let Ok(line) = std::str::from_utf8(raw) else {
            saw_record = true;
            report.push(
                IssueCode::InvalidUtf8,
                Some(line_no),
                None,
                "line is not valid UTF-8",
            );
            continue;
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        saw_record = true;
        if let Some(item) = parse_line(line, line_no, &expected, &mut report) {
            items.push(item);
            lines.push(Some(line_no));
        }
    }
    if !saw_record {
        report.push(IssueCode::EmptyCatalog, None, None, "empty catalog");
        return Err(report);
    }
    validate_items(&items, &lines, &config, genre_graph.as_ref(), &mut report);
    finish(items, config, genre_graph, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cos_config(key: &str) -> DistanceConfig {
        DistanceConfig::single(CriterionSpec::new(
            "c",
            CriterionKind::VectorCosine,
            1.0,
            key,
        ))
    }

    fn line(id: &str, v: &[f64]) -> String {
        format!(
            r#"{{"id":"{id}","title":"T {id}","artist":"A","genre_id":"g","features":{{"v":{:?}}}}}"#,
            v
        )
    }

    #[test]
    fn empty_stream_is_reported() {
        let report = load_catalog("".as_bytes(), cos_config("v"), None).unwrap_err();
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].code, IssueCode::EmptyCatalog);
        assert_eq!(report.issues[0].message, "empty catalog");
        assert!(load_catalog("\n  \n".as_bytes(), cos_config("v"), None).is_err());
    }

    #[test]
    fn duplicate_id_names_the_line() {
        let src = [
            line("a", &[1.0, 0.0]),
            line("b", &[0.0, 1.0]),
            line("a", &[1.0, 1.0]),
        ]
        .join("\n");
        let report = load_catalog(src.as_bytes(), cos_config("v"), None).unwrap_err();
        assert_eq!(report.issues.len(), 1, "{report}");
        let issue = &report.issues[0];
        assert_eq!(issue.code, IssueCode::DuplicateId);
        assert_eq!(issue.line, Some(3));
        assert_eq!(issue.item_id.as_deref(), Some("a"));
        assert!(issue.message.contains("line 1"), "{}", issue.message);
    }

    #[test]
    fn every_violation_is_listed() {
        let src = [
            line("a", &[1.0, 0.0]),
            line("b", &[1.0, 0.0, 3.0]),
            "{not json".to_string(),
            r#"{"id":"c","title":"","artist":"","genre_id":"g","features":{"v":[1,2]},"extra":1}"#
                .to_string(),
            r#"{"id":"d","title":"","artist":"","genre_id":"g","features":{}}"#.to_string(),
            r#"{"id":"e","title":"","artist":"","genre_id":"g","features":{"v":[1,"x"]}}"#
                .to_string(),
            r#"{"id":"f","title":"","artist":"","genre_id":"g","features":{"v":["x"]}}"#
                .to_string(),
        ]
        .join("\n");
        let report = load_catalog(src.as_bytes(), cos_config("v"), None).unwrap_err();
        let codes: Vec<(IssueCode, Option<usize>)> =
            report.issues.iter().map(|i| (i.code, i.line)).collect();
        assert!(
            codes.contains(&(IssueCode::DimensionMismatch, Some(2))),
            "{report}"
        );
        assert!(codes.contains(&(IssueCode::MalformedRecord, Some(3))));
        assert!(codes.contains(&(IssueCode::MalformedRecord, Some(4))));
        assert!(codes.contains(&(IssueCode::MissingFeature, Some(5))));
        assert!(codes.contains(&(IssueCode::InvalidField, Some(6))));
        assert!(codes.contains(&(IssueCode::FeatureKind, Some(7))));
    }

    #[test]
    fn invalid_utf8_is_coded() {
        let mut src = line("a", &[1.0]).into_bytes();
        src.extend_from_slice(b"\n\xff\xfe\n");
        let report = load_catalog(src.as_slice(), cos_config("v"), None).unwrap_err();
        assert_eq!(report.issues[0].code, IssueCode::InvalidUtf8);
        assert_eq!(report.issues[0].line, Some(2));
    }

    #[test]
    fn unresolvable_genre() {
        let graph = load_genre_graph("x\ty\n".as_bytes()).unwrap();
        let cfg = DistanceConfig::single(CriterionSpec::new(
            "g",
            CriterionKind::GraphShortestPath,
            1.0,
            GENRE_KEY,
        ));
        let src = line("a", &[1.0]);
        let report = load_catalog(src.as_bytes(), cfg, Some(graph)).unwrap_err();
        assert_eq!(report.issues[0].code, IssueCode::UnresolvableGenre);
    }

    #[test]
    fn genre_graph_loading() {
        assert_eq!(
            load_genre_graph("".as_bytes()).unwrap_err(),
            GraphError::Empty
        );
        assert_eq!(
            load_genre_graph("# only\n\n".as_bytes()).unwrap_err(),
            GraphError::Empty
        );
        let path = load_genre_graph("a\tb\nb\tc\n".as_bytes()).unwrap();
        assert_eq!(path.diameter(), 2);
        assert_eq!(
            load_genre_graph("a\tb\nc\tc\n".as_bytes()).unwrap_err(),
            GraphError::SelfLoop {
                line: Some(2),
                node: "c".into()
            }
        );
        assert_eq!(
            load_genre_graph("a\nb\na\tb\nb\tz\n".as_bytes()).unwrap_err(),
            GraphError::UnknownNode {
                line: Some(4),
                node: "z".into()
            }
        );
        assert_eq!(
            load_genre_graph("a\tb\tc\n".as_bytes()).unwrap_err(),
            GraphError::Malformed { line: 1 }
        );
        let with_isolated =
            load_genre_graph("# genres\na\nb\nc\nlone\na\tb\nb\tc\n".as_bytes()).unwrap();
        assert_eq!(with_isolated.nodes().len(), 4);
        assert_eq!(with_isolated.diameter(), 2);
        let lone_idx = with_isolated.index_of("lone").unwrap();
        assert_eq!(with_isolated.hops_between(0, lone_idx), None);
    }

    #[test]
    fn diameter_uses_largest_component() {
        // component 1: star with 4 leaves (5 nodes, diameter 2); component 2: path of 4 (diameter 3)
        let src = "h\tl1\nh\tl2\nh\tl3\nh\tl4\np1\tp2\np2\tp3\np3\tp4\n";
        let g = load_genre_graph(src.as_bytes()).unwrap();
        assert_eq!(g.diameter(), 2);
    }

    #[test]
    fn graph_round_trip() {
        let g = load_genre_graph("a\nb\nc\nd\na\tb\nb\tc\n".as_bytes()).unwrap();
        let mut out = Vec::new();
        g.write_tsv(&mut out).unwrap();
        assert_eq!(load_genre_graph(out.as_slice()).unwrap(), g);
    }

    #[test]
    fn popularity_defaults_to_zero() {
        let cat = load_catalog(line("a", &[1.0, 0.0]).as_bytes(), cos_config("v"), None).unwrap();
        assert_eq!(cat.get("a").unwrap().popularity, 0);
    }

    #[test]
    fn empty_array_follows_the_criterion_kind() {
        let tags_cfg = DistanceConfig::single(CriterionSpec::new(
            "t",
            CriterionKind::CategoricalOverlap,
            1.0,
            "t",
        ));
        let src = r#"{"id":"a","title":"","artist":"","genre_id":"g","features":{"t":[]}}"#;
        let cat = load_catalog(src.as_bytes(), tags_cfg, None).unwrap();
        assert_eq!(
            cat.get("a").unwrap().features["t"],
            Feature::Tags(BTreeSet::new())
        );
    }

    fn arb_catalog_lines() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            (
                proptest::collection::vec(-1e6f64..1e6, 3),
                proptest::collection::btree_set("[a-z]{1,6}", 0..4),
                "[ -~]{0,12}",
                0u64..1000,
            ),
            1..20,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (v, tags, title, pop))| {
                    serde_json::json!({
                        "id": format!("item-{i}"),
                        "title": title,
                        "artist": "x",
                        "genre_id": "g",
                        "features": {"v": v, "tags": tags},
                        "popularity": pop,
                    })
                    .to_string()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn load_write_load_is_identity(lines in arb_catalog_lines()) {
            let cfg = DistanceConfig {
                criteria: vec![
                    CriterionSpec::new("c", CriterionKind::VectorEuclidean, 1.0, "v"),
                    CriterionSpec::new("t", CriterionKind::CategoricalOverlap, 1.0, "tags"),
                ],
                calibration: None,
            };
            let first = load_catalog(lines.join("\n").as_bytes(), cfg.clone(), None).unwrap();
            let mut out = Vec::new();
            first.write_items(&mut out).unwrap();
            let second = load_catalog(out.as_slice(), cfg, None).unwrap();
            prop_assert_eq!(first.items(), second.items());
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            match load_catalog(bytes.as_slice(), cos_config("v"), None) {
                Ok(cat) => prop_assert!(!cat.is_empty()),
                Err(report) => prop_assert!(!report.issues.is_empty()),
            }
            let _ = load_genre_graph(bytes.as_slice());
        }
    }
}
