//! Link prediction, community detection and degree-heterogeneity diagnostics on trained
//! models. All evaluation runs on posterior means, so reports are deterministic.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use ndarray::Axis;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::config::Mode;
use crate::decoder::{edge_logit, standard_layout, Betas, OutputLatents};
use crate::error::{DlsmError, Result};
use crate::graph::DirectedGraph;
use crate::metrics::{auc, average_precision, spearman};
use crate::rng::indexed_substream;
use crate::special::sigmoid;
use crate::split::EdgeSplit;
use crate::trainer::TrainedModel;

/// Tie-breaking rule recorded in every report that carries an AP value.
pub const AP_TIE_BREAKING: &str = "stable input order (positives listed before negatives)";

/// Number of K-means restarts; the lowest-inertia run wins.
pub const KMEANS_RESTARTS: usize = 10;

/// Edge probabilities for `pairs` from final-layer latents. Unlike [`reconstruct`] these are
/// not clamped, so saturated pairs still rank by their logits as far as `f64` resolves them.
pub fn score_pairs(out: &OutputLatents, b: Betas, mode: Mode, undirected: bool, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let n = out.z.nrows();
    let out = standard_layout(out);
    pairs
        .iter()
        .map(|&(i, j)| {
            for k in [i, j] {
                if k >= n {
                    return Err(DlsmError::OutOfRange { index: k, n });
                }
            }
            if i == j {
                return Err(DlsmError::SelfLoop(i));
            }
            Ok(sigmoid(edge_logit(&out, i, j, b, mode, undirected)))
        })
        .collect()
}

/// Posterior-mean edge probabilities of a trained model.
pub fn score_edges(tm: &TrainedModel, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let f = tm.model.posterior_means(&tm.context())?;
    let cfg = tm.config();
    score_pairs(&f.output, tm.model.betas(), cfg.mode, cfg.undirected, pairs)
}

/// Tabulated distribution diagnostics for node random factors and degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    /// `(degree, fraction of nodes)`.
    pub out_degree_pdd: Vec<(f64, f64)>,
    pub in_degree_pdd: Vec<(f64, f64)>,
    /// `(bin centre, fraction of nodes)` for `1/‖γ_i‖` and `1/‖δ_j‖`.
    pub gamma_recip_pdd: Vec<(f64, f64)>,
    pub delta_recip_pdd: Vec<(f64, f64)>,
    /// `(t, P(X ≥ t))` for `‖γ_i‖` and `‖δ_j‖`.
    pub gamma_ccd: Vec<(f64, f64)>,
    pub delta_ccd: Vec<(f64, f64)>,
    pub out_degree_ccd: Vec<(f64, f64)>,
    pub in_degree_ccd: Vec<(f64, f64)>,
    /// Spearman correlation of out-degree with `1/‖γ_i‖`.
    pub spearman_out_gamma: Option<f64>,
    /// Spearman correlation of in-degree with `1/‖δ_j‖`.
    pub spearman_in_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub method: String,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub ap_tie_breaking: Option<String>,
    pub accuracy: Option<f64>,
    pub k: Option<usize>,
    pub evaluated_pairs: Option<usize>,
    pub seed: u64,
    pub split_id: String,
    pub config_hash: String,
    pub factor_distributions: Option<FactorReport>,
}

impl EvalReport {
    fn empty(tm: &TrainedModel, task: &str) -> Self {
        EvalReport {
            task: task.into(),
            method: tm.config().mode.method_name().into(),
            auc: None,
            ap: None,
            ap_tie_breaking: None,
            accuracy: None,
            k: None,
            evaluated_pairs: None,
            seed: tm.config().seed,
            split_id: tm.split_id.clone(),
            config_hash: tm.config_hash.clone(),
            factor_distributions: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// AUC and AP over `test_pos ∪ test_neg`.
pub fn link_prediction_eval(tm: &TrainedModel, split: &EdgeSplit) -> Result<EvalReport> {
    if split.id() != tm.split_id {
        return Err(DlsmError::Invariant(format!(
            "model was trained on split {} but evaluation was given split {}",
            tm.split_id,
            split.id()
        )));
    }
    let (pairs, labels) = split.test_pairs();
    let scores = score_edges(tm, &pairs)?;
    let mut r = EvalReport::empty(tm, "lp");
    r.auc = Some(auc(&scores, &labels)?);
    r.ap = Some(average_precision(&scores, &labels)?);
    r.ap_tie_breaking = Some(AP_TIE_BREAKING.into());
    r.evaluated_pairs = Some(pairs.len());
    Ok(r)
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// One Lloyd run from k-means++ seeds; returns labels and inertia.
fn lloyd(x: &Mat, k: usize, rng: &mut crate::rng::Rng) -> (Vec<usize>, f64) {
    let n = x.nrows();
    let mut centres = Mat::zeros((k, x.ncols()));
    centres.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centres.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    idx = i;
                    break;
                }
                t -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centres.row_mut(c).assign(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centres.row(c)));
        }
    }
    let mut labels = vec![0usize; n];
    for iter in 0..300 {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .map(|c| (sq_dist(x.row(i), centres.row(c)), c))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap()
                .1;
            if best != labels[i] || iter == 0 {
                changed |= best != labels[i];
                labels[i] = best;
            }
        }
        let mut sums = Mat::zeros(centres.raw_dim());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(labels[i]);
            row += &x.row(i);
            counts[labels[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centres.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
        if !changed && iter > 0 {
            break;
        }
    }
    let inertia = (0..n).map(|i| sq_dist(x.row(i), centres.row(labels[i]))).sum();
    (labels, inertia)
}

/// K-means with k-means++ seeding; best of [`KMEANS_RESTARTS`] runs by inertia, each run
/// seeded from its own substream of `seed`.
pub fn kmeans(x: &Mat, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 1 {
        return Err(DlsmError::Domain("k must be at least 1".into()));
    }
    if k > x.nrows() {
        return Err(DlsmError::Domain(format!("k = {k} exceeds the {} points", x.nrows())));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..KMEANS_RESTARTS {
        let mut rng = indexed_substream(seed, "kmeans", r as u64);
        let (labels, inertia) = lloyd(x, k, &mut rng);
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((labels, inertia));
        }
    }
    Ok(best.unwrap().0)
}

/// Fraction of points matched under the best one-to-one mapping of predicted to true labels.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(DlsmError::Domain("label vectors must be non-empty and of equal length".into()));
    }
    let index = |v: &[usize]| -> HashMap<usize, usize> {
        let mut m = HashMap::new();
        for &x in v {
            let next = m.len();
            m.entry(x).or_insert(next);
        }
        m
    };
    let (pi, ti) = (index(pred), index(truth));
    let size = pi.len().max(ti.len());
    let mut table = Matrix::new(size, size, 0i64);
    for (p, t) in pred.iter().zip(truth) {
        table[(pi[p], ti[t])] += 1;
    }
    let (matched, _) = kuhn_munkres(&table);
    Ok(matched as f64 / pred.len() as f64)
}

/// Reads `label community` lines; nodes absent from the file get `None`.
pub fn load_truth(path: impl AsRef<Path>, g: &DirectedGraph) -> Result<Vec<Option<usize>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DlsmError::io(path, e))?;
    let ids = g.id_map();
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = vec![None; g.n()];
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(node), Some(class)) = (parts.next(), parts.next()) else {
            return Err(DlsmError::Parse { path: path.into(), line: ln + 1, msg: "expected `node community`".into() });
        };
        if let Some(&i) = ids.get(node) {
            let next = classes.len();
            out[i] = Some(*classes.entry(class.to_string()).or_insert(next));
        }
    }
    Ok(out)
}

/// K-means on posterior-mean output positions of the labelled nodes, scored by
/// [`clustering_accuracy`]. `k` defaults to the number of true classes.
pub fn community_detection_eval(tm: &TrainedModel, truth: &[Option<usize>], k: Option<usize>) -> Result<EvalReport> {
    if truth.len() != tm.train_graph.n() {
        return Err(DlsmError::Shape { op: "community_detection_eval", detail: "truth length differs from node count".into() });
    }
    let f = tm.model.posterior_means(&tm.context())?;
    let keep: Vec<usize> = (0..truth.len()).filter(|&i| truth[i].is_some()).collect();
    if keep.is_empty() {
        return Err(DlsmError::UndefinedMetric("no labelled nodes".into()));
    }
    let labels: Vec<usize> = keep.iter().map(|&i| truth[i].unwrap()).collect();
    let k = k.unwrap_or_else(|| labels.iter().collect::<std::collections::BTreeSet<_>>().len());
    let x = f.output.z.select(Axis(0), &keep);
    let pred = kmeans(&x, k, tm.config().seed)?;
    let mut r = EvalReport::empty(tm, "cd");
    r.accuracy = Some(clustering_accuracy(&pred, &labels)?);
    r.k = Some(k);
    Ok(r)
}

/// Exact-value distribution of integer data.
pub fn discrete_pdd(values: &[usize]) -> Vec<(f64, f64)> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts.into_iter().map(|(v, c)| (v as f64, c as f64 / values.len() as f64)).collect()
}

/// Equal-width histogram with `bins` bins, as `(centre, fraction)`. Constant data gives a
/// single bin.
pub fn binned_pdd(values: &[f64], bins: usize) -> Vec<(f64, f64)> {
    if values.is_empty() {
        return vec![];
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![(lo, 1.0)];
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[(((v - lo) / w) as usize).min(bins - 1)] += 1;
    }
    counts.iter().enumerate().map(|(b, &c)| (lo + (b as f64 + 0.5) * w, c as f64 / values.len() as f64)).collect()
}

/// Complementary cumulative distribution `P(X ≥ t)` at each distinct value `t`.
pub fn ccd(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < v.len() {
        out.push((v[i], (v.len() - i) as f64 / n));
        let t = v[i];
        while i < v.len() && v[i] == t {
            i += 1;
        }
    }
    out
}

const PDD_BINS: usize = 30;

/// Degree and node-random-factor distributions. Degrees are taken from `g` (usually the
/// full graph); factors are posterior means at the output layer.
pub fn degree_factor_report(tm: &TrainedModel, g: &DirectedGraph) -> Result<FactorReport> {
    let f = tm.model.posterior_means(&tm.context())?;
    if g.n() != f.output.z.nrows() {
        return Err(DlsmError::Shape { op: "degree_factor_report", detail: "graph and model node counts differ".into() });
    }
    let norms = |m: &Mat| -> Vec<f64> { m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect() };
    let gn = norms(&f.output.gamma);
    let dn = norms(&f.output.delta);
    let recip = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| 1.0 / x).collect() };
    let (out_deg, in_deg) = (g.out_degrees(), g.in_degrees());
    let as_f = |v: &[usize]| -> Vec<f64> { v.iter().map(|&x| x as f64).collect() };
    Ok(FactorReport {
        out_degree_pdd: discrete_pdd(&out_deg),
        in_degree_pdd: discrete_pdd(&in_deg),
        gamma_recip_pdd: binned_pdd(&recip(&gn), PDD_BINS),
        delta_recip_pdd: binned_pdd(&recip(&dn), PDD_BINS),
        gamma_ccd: ccd(&gn),
        delta_ccd: ccd(&dn),
        out_degree_ccd: ccd(&as_f(&out_deg)),
        in_degree_ccd: ccd(&as_f(&in_deg)),
        spearman_out_gamma: spearman(&as_f(&out_deg), &recip(&gn)).ok(),
        spearman_in_delta: spearman(&as_f(&in_deg), &recip(&dn)).ok(),
    })
}

pub fn factors_eval(tm: &TrainedModel, g: &DirectedGraph) -> Result<EvalReport> {
    let mut r = EvalReport::empty(tm, "factors");
    r.factor_distributions = Some(degree_factor_report(tm, g)?);
    Ok(r)
}

/// Writes each series of a [`FactorReport`] as a two-column CSV in `dir`.
pub fn write_factor_series(report: &FactorReport, dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| DlsmError::io(dir, e))?;
    let series: [(&str, &str, &Vec<(f64, f64)>); 8] = [
        ("pdd_out_degree.csv", "degree,fraction", &report.out_degree_pdd),
        ("pdd_in_degree.csv", "degree,fraction", &report.in_degree_pdd),
        ("pdd_gamma_reciprocal.csv", "inv_gamma_norm,fraction", &report.gamma_recip_pdd),
        ("pdd_delta_reciprocal.csv", "inv_delta_norm,fraction", &report.delta_recip_pdd),
        ("ccd_gamma.csv", "gamma_norm,ccd", &report.gamma_ccd),
        ("ccd_delta.csv", "delta_norm,ccd", &report.delta_ccd),
        ("ccd_out_degree.csv", "degree,ccd", &report.out_degree_ccd),
        ("ccd_in_degree.csv", "degree,ccd", &report.in_degree_ccd),
    ];
    let mut written = Vec::new();
    for (name, header, rows) in series {
        let path = dir.join(name);
        let mut text = format!("{header}\n");
        for (a, b) in rows {
            text.push_str(&format!("{a},{b}\n"));
        }
        fs::write(&path, text).map_err(|e| DlsmError::io(&path, e))?;
        written.push(name.to_string());
    }
    Ok(written)
}

/// CSV of node label, output-layer `z`, `γ`, `δ` (posterior means) and hard memberships of
/// every decoder layer.
pub fn export_embeddings(tm: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = tm.model.posterior_means(&tm.context())?;
    let d = f.output.z.ncols();
    let mut header = vec!["label".to_string()];
    for name in ["z", "gamma", "delta"] {
        header.extend((0..d).map(|k| format!("{name}_{k}")));
    }
    for (l, layer) in f.layers.iter().enumerate() {
        header.extend((0..layer.s.ncols()).map(|g| format!("s{}_{g}", l + 1)));
    }
    let hard: Vec<_> = f.layers.iter().map(|l| l.hard_memberships()).collect();
    let file = fs::File::create(path).map_err(|e| DlsmError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(&header)?;
    for i in 0..f.output.z.nrows() {
        let mut row = vec![tm.train_graph.label(i).to_string()];
        for m in [&f.output.z, &f.output.gamma, &f.output.delta] {
            row.extend(m.row(i).iter().map(|x| x.to_string()));
        }
        for h in &hard {
            row.extend(h.row(i).iter().map(|&b| (b as u8).to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| DlsmError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn accuracy_cases() {
        assert_eq!(clustering_accuracy(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&[5, 5, 2, 2], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&[1, 1, 1, 0], &[0, 0, 1, 1]).unwrap(), 0.75);
        // more predicted clusters than classes
        assert_eq!(clustering_accuracy(&[0, 1, 2, 2], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(clustering_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn kmeans_separates_far_clouds() {
        let x = Mat::from_shape_fn((20, 2), |(i, j)| if i < 10 { (i * j) as f64 * 0.01 } else { 100.0 + (i + j) as f64 * 0.01 });
        let l = kmeans(&x, 2, 1).unwrap();
        assert!(l[..10].iter().all(|&a| a == l[0]) && l[10..].iter().all(|&a| a == l[10]) && l[0] != l[10]);
        assert_eq!(kmeans(&x, 2, 1).unwrap(), l);
        let all = kmeans(&x, 20, 4).unwrap();
        let distinct: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(distinct.len(), 20);
        assert!(kmeans(&x, 0, 1).is_err());
    }

    #[test]
    fn kmeans_duplicates_are_stable() {
        let x = array![[1.0, 1.0], [1.0, 1.0], [5.0, 5.0], [5.0, 5.0]];
        let l = kmeans(&x, 2, 9).unwrap();
        assert_eq!(l[0], l[1]);
        assert_eq!(l[2], l[3]);
    }

    #[test]
    fn distributions() {
        assert_eq!(discrete_pdd(&[3, 3, 3]), vec![(3.0, 1.0)]);
        assert_eq!(binned_pdd(&[2.0, 2.0], 10), vec![(2.0, 1.0)]);
        let c = ccd(&[1.0, 2.0, 2.0, 5.0]);
        assert_eq!(c, vec![(1.0, 1.0), (2.0, 0.75), (5.0, 0.25)]);
        let total: f64 = binned_pdd(&[0.1, 0.5, 0.9, 3.0], 5).iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scoring_rejects_bad_pairs() {
        let out = OutputLatents { z: Mat::zeros((3, 2)), gamma: Mat::ones((3, 2)), delta: Mat::ones((3, 2)) };
        let b = Betas { bias: 0.0, out: 1.0, inn: 1.0 };
        assert!(matches!(score_pairs(&out, b, Mode::Distance, false, &[(1, 1)]), Err(DlsmError::SelfLoop(1))));
        assert!(matches!(score_pairs(&out, b, Mode::Distance, false, &[(0, 3)]), Err(DlsmError::OutOfRange { .. })));
        let s = score_pairs(&out, b, Mode::Distance, false, &[(0, 1), (2, 0)]).unwrap();
        assert!(s.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}
