//! Descriptive statistics of a directed graph.

use serde::{Deserialize, Serialize};

use crate::error::{DlsmError, Result};
use crate::graph::DirectedGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    #[serde(rename = "|V|")]
    pub n: usize,
    #[serde(rename = "|E|")]
    pub m: usize,
    #[serde(rename = "CC")]
    pub cc: f64,
    #[serde(rename = "d_max^out")]
    pub d_max_out: usize,
    #[serde(rename = "d_max^in")]
    pub d_max_in: usize,
    #[serde(rename = "d_avg")]
    pub d_avg: f64,
    #[serde(rename = "ED")]
    pub ed: f64,
    #[serde(rename = "RR")]
    pub rr: f64,
}

pub fn descriptive_stats(g: &DirectedGraph) -> Result<GraphStats> {
    let n = g.n();
    if n < 2 {
        return Err(DlsmError::UndefinedDensity(n));
    }
    let m = g.m();
    let out = g.out_degrees();
    let inn = g.in_degrees();
    let reciprocal = g.edges().iter().filter(|&&(i, j)| g.has_edge(j, i)).count();
    Ok(GraphStats {
        n,
        m,
        cc: directed_clustering(g),
        d_max_out: out.iter().copied().max().unwrap_or(0),
        d_max_in: inn.iter().copied().max().unwrap_or(0),
        d_avg: m as f64 / n as f64,
        ed: m as f64 / (n as f64 * (n - 1) as f64),
        rr: if m == 0 { 0.0 } else { reciprocal as f64 / m as f64 },
    })
}

/// Mean over nodes of the binary directed clustering coefficient
///
/// `C_i = [(A + Aᵀ)³]_ii / (2 [d_i^tot (d_i^tot − 1) − 2 d_i^↔])`
///
/// where `d^tot` is in- plus out-degree and `d^↔` counts reciprocated neighbours.
/// Nodes whose denominator vanishes contribute 0.
pub fn directed_clustering(g: &DirectedGraph) -> f64 {
    let n = g.n();
    // symmetric weights S = A + Aᵀ, stored as adjacency lists with multiplicity 1 or 2
    let mut sym: Vec<Vec<(usize, u32)>> = vec![Vec::new(); n];
    {
        let mut w = std::collections::HashMap::<(usize, usize), u32>::new();
        for &(i, j) in g.edges() {
            if i == j {
                continue;
            }
            *w.entry((i, j)).or_default() += 1;
            *w.entry((j, i)).or_default() += 1;
        }
        for ((i, j), c) in w {
            sym[i].push((j, c));
        }
        for row in &mut sym {
            row.sort_unstable();
        }
    }
    let out = g.out_degrees();
    let inn = g.in_degrees();
    let mut marker = vec![0u32; n];
    let mut total = 0.0;
    for i in 0..n {
        let d_tot = (out[i] + inn[i]) as f64;
        let d_recip = sym[i].iter().filter(|&&(_, c)| c == 2).count() as f64;
        let denom = 2.0 * (d_tot * (d_tot - 1.0) - 2.0 * d_recip);
        if denom <= 0.0 {
            continue;
        }
        for &(k, c) in &sym[i] {
            marker[k] = c;
        }
        let mut cycles = 0u64;
        for &(j, sij) in &sym[i] {
            for &(k, sjk) in &sym[j] {
                let ski = marker[k];
                if ski != 0 {
                    cycles += (sij * sjk * ski) as u64;
                }
            }
        }
        for &(k, _) in &sym[i] {
            marker[k] = 0;
        }
        total += cycles as f64 / denom;
    }
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reciprocal_pair() {
        let g = DirectedGraph::from_edges(2, [(0, 1), (1, 0)]).unwrap();
        let s = descriptive_stats(&g).unwrap();
        assert_eq!(s.ed, 1.0);
        assert_eq!(s.rr, 1.0);
        assert_eq!(s.d_avg, 1.0);
    }

    #[test]
    fn three_cycle() {
        let g = DirectedGraph::from_edges(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        let s = descriptive_stats(&g).unwrap();
        assert_eq!(s.ed, 0.5);
        assert_eq!(s.rr, 0.0);
        assert_eq!(s.d_avg, 1.0);
        assert_eq!((s.d_max_out, s.d_max_in), (1, 1));
        // each node: S³_ii = 2 (two directions round the triangle), d_tot = 2, no reciprocity
        // => C_i = 2 / (2 * 2) = 0.5
        assert!((s.cc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn complete_digraph_has_unit_clustering() {
        let e: Vec<_> = (0..5).flat_map(|i| (0..5).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
        let g = DirectedGraph::from_edges(5, e).unwrap();
        let s = descriptive_stats(&g).unwrap();
        assert!((s.cc - 1.0).abs() < 1e-12);
        assert_eq!(s.rr, 1.0);
    }

    #[test]
    fn clustering_matches_dense_formula() {
        // brute force with dense matrices on a small irregular digraph
        let edges = [(0, 1), (1, 2), (2, 0), (0, 2), (3, 0), (3, 1), (1, 3), (4, 3), (2, 4)];
        let g = DirectedGraph::from_edges(5, edges).unwrap();
        let n = 5;
        let mut a = vec![vec![0.0; n]; n];
        for &(i, j) in &edges {
            a[i][j] = 1.0;
        }
        let s: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[i][j] + a[j][i]).collect()).collect();
        let mut expect = 0.0;
        for i in 0..n {
            let mut cube = 0.0;
            for j in 0..n {
                for k in 0..n {
                    cube += s[i][j] * s[j][k] * s[k][i];
                }
            }
            let dt: f64 = (0..n).map(|j| a[i][j] + a[j][i]).sum();
            let dr: f64 = (0..n).map(|j| a[i][j] * a[j][i]).sum();
            let den = 2.0 * (dt * (dt - 1.0) - 2.0 * dr);
            if den > 0.0 {
                expect += cube / den;
            }
        }
        expect /= n as f64;
        assert!((directed_clustering(&g) - expect).abs() < 1e-12);
    }

    #[test]
    fn single_node_density_undefined() {
        let g = DirectedGraph::from_edges(1, []).unwrap();
        assert!(matches!(descriptive_stats(&g), Err(DlsmError::UndefinedDensity(1))));
    }

    #[test]
    fn json_uses_table_column_names() {
        let g = DirectedGraph::from_edges(2, [(0, 1), (1, 0)]).unwrap();
        let v = serde_json::to_value(descriptive_stats(&g).unwrap()).unwrap();
        for key in ["|V|", "|E|", "CC", "d_max^out", "d_max^in", "d_avg", "ED", "RR"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
