//! Directed graph data model, ingestion and preprocessing.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DlsmError, Result};

/// Binary directed graph with contiguous node indices.
///
/// `edges` is kept sorted and duplicate free. Self-loops may be present until [`preprocess`]
/// has been applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectedGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    attributes: Option<Array2<f64>>,
    labels: Vec<String>,
}

impl DirectedGraph {
    /// Builds a graph over nodes `0..n` labelled by their index.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let labels = (0..n).map(|i| i.to_string()).collect();
        Self::with_labels(labels, edges)
    }

    pub fn with_labels(labels: Vec<String>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(DlsmError::EmptyGraph("no nodes".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n {
                return Err(DlsmError::OutOfRange { index: i, n });
            }
            if j >= n {
                return Err(DlsmError::OutOfRange { index: j, n });
            }
            set.insert((i, j));
        }
        Ok(DirectedGraph { n, edges: set.into_iter().collect(), attributes: None, labels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    /// Original label → contiguous index.
    pub fn id_map(&self) -> HashMap<&str, usize> {
        self.labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect()
    }

    pub fn attributes(&self) -> Option<&Array2<f64>> {
        self.attributes.as_ref()
    }

    pub fn set_attributes(&mut self, x: Array2<f64>) -> Result<()> {
        if x.nrows() != self.n {
            return Err(DlsmError::Shape {
                op: "set_attributes",
                detail: format!("{} attribute rows for {} nodes", x.nrows(), self.n),
            });
        }
        self.attributes = Some(x);
        Ok(())
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i, j)).is_ok()
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(i, _) in &self.edges {
            d[i] += 1;
        }
        d
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(_, j) in &self.edges {
            d[j] += 1;
        }
        d
    }

    /// Out-neighbour lists, each sorted ascending.
    pub fn out_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
        }
        adj
    }

    /// Same node set, different edge set; attributes and labels are kept.
    pub fn with_edge_subset(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Self::with_labels(self.labels.clone(), edges)?;
        g.attributes = self.attributes.clone();
        Ok(g)
    }

    /// Adds the reverse of every edge.
    pub fn symmetrized(&self) -> Self {
        let mut set: BTreeSet<(usize, usize)> = self.edges.iter().copied().collect();
        set.extend(self.edges.iter().map(|&(i, j)| (j, i)));
        DirectedGraph {
            n: self.n,
            edges: set.into_iter().collect(),
            attributes: self.attributes.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(DlsmError::Shape { op: "permuted", detail: format!("permutation of length {}", perm.len()) });
        }
        let mut labels = vec![String::new(); self.n];
        for (i, &p) in perm.iter().enumerate() {
            labels[p] = self.labels[i].clone();
        }
        let mut g = Self::with_labels(labels, self.edges.iter().map(|&(i, j)| (perm[i], perm[j])))?;
        if let Some(x) = &self.attributes {
            let mut y = Array2::zeros(x.raw_dim());
            for (i, &p) in perm.iter().enumerate() {
                y.row_mut(p).assign(&x.row(i));
            }
            g.attributes = Some(y);
        }
        Ok(g)
    }
}

/// Reads a whitespace separated edge list. Labels are arbitrary strings, indexed in order of
/// first appearance. With `directed == false` every edge is inserted in both directions.
pub fn load_edge_list(path: impl AsRef<Path>, directed: bool) -> Result<DirectedGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DlsmError::io(path, e))?;
    parse_edge_list(&text, directed).map_err(|e| match e {
        DlsmError::Parse { line, msg, .. } => DlsmError::Parse { path: path.to_path_buf(), line, msg },
        DlsmError::EmptyGraph(msg) => DlsmError::EmptyGraph(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_edge_list(text: &str, directed: bool) -> Result<DirectedGraph> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut edges = Vec::new();
    let mut intern = |s: &str| -> usize {
        if let Some(&i) = index.get(s) {
            return i;
        }
        let i = labels.len();
        labels.push(s.to_string());
        index.insert(s.to_string(), i);
        i
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(DlsmError::Parse {
                path: Default::default(),
                line: lineno + 1,
                msg: format!("expected two node labels, got `{line}`"),
            });
        };
        let (i, j) = (intern(a), intern(b));
        edges.push((i, j));
        if !directed {
            edges.push((j, i));
        }
    }
    if labels.is_empty() {
        return Err(DlsmError::EmptyGraph("edge list contains no edges".into()));
    }
    DirectedGraph::with_labels(labels, edges)
}

/// Attaches a dense attribute table (CSV: label, then numeric columns) to `g`.
pub fn load_attributes(g: &mut DirectedGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => DlsmError::io(path, io),
            other => DlsmError::Parse { path: path.to_path_buf(), line: 0, msg: format!("{other:?}") },
        })?;
    let ids = g.id_map();
    let mut rows: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut width = None;
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(k + 1);
        let parse_err = |msg: String| DlsmError::Parse { path: path.to_path_buf(), line, msg };
        let label = rec.get(0).ok_or_else(|| parse_err("missing label".into()))?.trim();
        let values = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|_| parse_err(format!("non-numeric value `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(parse_err("ragged attribute row".into()));
        }
        // rows for nodes dropped by preprocessing are ignored
        if let Some(&i) = ids.get(label) {
            rows.insert(i, values);
        }
    }
    let p = width.unwrap_or(0);
    if p == 0 {
        return Err(DlsmError::Parse { path: path.to_path_buf(), line: 0, msg: "no attribute columns".into() });
    }
    let mut x = Array2::zeros((g.n(), p));
    for i in 0..g.n() {
        let row = rows.get(&i).ok_or_else(|| DlsmError::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("no attributes for node `{}`", g.label(i)),
        })?;
        for (c, v) in row.iter().enumerate() {
            x[[i, c]] = *v;
        }
    }
    g.set_attributes(x)
}

/// Drops self-loops and nodes left with no incident edge, then re-compacts indices
/// (relative order of surviving nodes is kept).
pub fn preprocess(g: &DirectedGraph) -> Result<DirectedGraph> {
    let edges: Vec<_> = g.edges.iter().copied().filter(|&(i, j)| i != j).collect();
    let mut keep = vec![false; g.n];
    for &(i, j) in &edges {
        keep[i] = true;
        keep[j] = true;
    }
    let mut remap = vec![usize::MAX; g.n];
    let mut labels = Vec::new();
    for i in 0..g.n {
        if keep[i] {
            remap[i] = labels.len();
            labels.push(g.labels[i].clone());
        }
    }
    if labels.is_empty() {
        return Err(DlsmError::EmptyGraph("no edges remain after removing loops and isolated nodes".into()));
    }
    let mut out = DirectedGraph::with_labels(labels, edges.iter().map(|&(i, j)| (remap[i], remap[j])))?;
    if let Some(x) = &g.attributes {
        let kept: Vec<usize> = (0..g.n).filter(|&i| keep[i]).collect();
        out.attributes = Some(x.select(ndarray::Axis(0), &kept));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_triangle() {
        let g = parse_edge_list("0 1\n1 2\n2 0", true).unwrap();
        assert_eq!((g.n(), g.m()), (3, 3));
    }

    #[test]
    fn collapses_duplicates_and_skips_comments() {
        let g = parse_edge_list("# header\n0 1\n\n0 1\n", true).unwrap();
        assert_eq!(g.m(), 1);
    }

    #[test]
    fn labels_follow_first_appearance() {
        let g = parse_edge_list("b a\nc b\n", true).unwrap();
        assert_eq!(g.labels(), &["b", "a", "c"]);
        assert!(g.has_edge(0, 1));
        assert!(g.has_edge(2, 0));
    }

    #[test]
    fn undirected_input_is_symmetrized() {
        let g = parse_edge_list("x y\n", false).unwrap();
        assert_eq!(g.m(), 2);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse_edge_list("0 1\n2\n", true) {
            Err(DlsmError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_edge_list("0 1 2\n", true), Err(DlsmError::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_edge_list("# nothing\n", true), Err(DlsmError::EmptyGraph(_))));
    }

    #[test]
    fn preprocess_removes_loops() {
        let g = DirectedGraph::from_edges(3, [(0, 0), (0, 1)]).unwrap();
        let p = preprocess(&g).unwrap();
        assert_eq!(p.n(), 2);
        assert_eq!(p.edges(), &[(0, 1)]);
    }

    #[test]
    fn preprocess_removes_isolates_and_recompacts() {
        let g = DirectedGraph::from_edges(4, [(0, 3)]).unwrap();
        let p = preprocess(&g).unwrap();
        assert_eq!(p.n(), 2);
        assert_eq!(p.edges(), &[(0, 1)]);
        assert_eq!(p.labels(), &["0", "3"]);
    }

    #[test]
    fn preprocess_of_only_loops_is_empty() {
        let g = DirectedGraph::from_edges(2, [(0, 0), (1, 1)]).unwrap();
        assert!(matches!(preprocess(&g), Err(DlsmError::EmptyGraph(_))));
    }

    #[test]
    fn attribute_rows_follow_preprocessing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "a,1.0,2.0\nb,3.0,4.0\nc,5.0,6.0\n").unwrap();
        let mut g = parse_edge_list("a c\n", true).unwrap();
        load_attributes(&mut g, &path).unwrap();
        let x = g.attributes().unwrap();
        assert_eq!(x.shape(), &[2, 2]);
        assert_eq!(x[[1, 1]], 6.0);
    }

    #[test]
    fn missing_attribute_row_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "a,1.0\n").unwrap();
        let mut g = parse_edge_list("a c\n", true).unwrap();
        assert!(matches!(load_attributes(&mut g, &path), Err(DlsmError::Parse { .. })));
    }
}
