//! Brute-force references for the ranking and clustering metrics.

/// Pairwise comparison oracle: positives beating negatives, ties counted half.
pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut total) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                total += 1.0;
                wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
            }
        }
    }
    wins / total
}

/// Rank-by-rank oracle: each item's position is the number of items ahead of it (strictly
/// higher score, or equal score earlier in the input).
pub fn ap_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let ahead = |k: usize, i: usize| scores[i] > scores[k] || (scores[i] == scores[k] && i < k);
    let mut sum = 0.0;
    let mut pos = 0.0;
    for k in 0..scores.len() {
        if !labels[k] {
            continue;
        }
        pos += 1.0;
        let rank = 1 + (0..scores.len()).filter(|&i| ahead(k, i)).count();
        let hits = 1 + (0..scores.len()).filter(|&i| labels[i] && ahead(k, i)).count();
        sum += hits as f64 / rank as f64;
    }
    sum / pos
}

pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, k - 1);
            out.push(q);
        }
    }
    out
}

pub fn accuracy_oracle(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    permutations(k)
        .iter()
        .map(|map| pred.iter().zip(truth).filter(|&(&p, &t)| map[p] == t).count())
        .max()
        .unwrap() as f64
        / pred.len() as f64
}
