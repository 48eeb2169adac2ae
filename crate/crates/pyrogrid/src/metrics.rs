//! BCE, AUROC (rank-based, average ranks for ties) and IOU, plus the
//! evaluation table used by the report writer.

use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("shape mismatch: target has {target} elements, prediction {pred}")]
    ShapeMismatch { target: usize, pred: usize },
    #[error("length mismatch: {targets} targets vs {scores} scores")]
    LengthMismatch { targets: usize, scores: usize },
}

/// Pixel-mean negated binary cross-entropy; predictions clipped at 1e-7.
pub fn bce(target: &[f64], pred: &[f64]) -> Result<f64, MetricsError> {
    if target.len() != pred.len() {
        return Err(MetricsError::ShapeMismatch {
            target: target.len(),
            pred: pred.len(),
        });
    }
    let mut s = 0.0;
    for (t, p) in target.iter().zip(pred) {
        let pc = p.clamp(1e-7, 1.0 - 1e-7);
        s -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
    }
    Ok(s / target.len() as f64)
}

/// AUROC via the Mann-Whitney rank statistic with average ranks for ties.
/// Returns (value, degenerate): degenerate is true (value 0.5) when one
/// class is empty.
pub fn auroc(targets: &[f64], scores: &[f64]) -> Result<(f64, bool), MetricsError> {
    if targets.len() != scores.len() {
        return Err(MetricsError::LengthMismatch {
            targets: targets.len(),
            scores: scores.len(),
        });
    }
    let n_pos = targets.iter().filter(|t| **t > 0.5).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok((0.5, true));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied group gets the average rank
        let avg = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let r_pos: f64 = targets
        .iter()
        .zip(&ranks)
        .filter(|(t, _)| **t > 0.5)
        .map(|(_, r)| r)
        .sum();
    let np = n_pos as f64;
    let auc = (r_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64);
    Ok((auc, false))
}

/// Intersection-over-union after binarizing `pred` at `threshold`.
/// Both sets empty is defined as 1.0.
pub fn iou(target: &[f64], pred: &[f64], threshold: f64) -> Result<f64, MetricsError> {
    if target.len() != pred.len() {
        return Err(MetricsError::ShapeMismatch {
            target: target.len(),
            pred: pred.len(),
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (t, p) in target.iter().zip(pred) {
        let a = *t > 0.5;
        let b = *p > threshold;
        if a && b {
            inter += 1;
        }
        if a || b {
            union += 1;
        }
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// One evaluation row: a (method, agent, horizon) cell of the report.
#[derive(Clone, Debug)]
pub struct MetricRow {
    pub method: String,
    pub agent: usize,
    pub horizon: usize,
    pub bce: f64,
    pub auroc: f64,
    pub iou: f64,
}

#[derive(Clone, Debug, Default)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    /// Per-method average over agents and horizons.
    pub fn method_average(&self, method: &str) -> Option<(f64, f64, f64)> {
        let rows: Vec<&MetricRow> = self.rows.iter().filter(|r| r.method == method).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some((
            rows.iter().map(|r| r.bce).sum::<f64>() / n,
            rows.iter().map(|r| r.auroc).sum::<f64>() / n,
            rows.iter().map(|r| r.iou).sum::<f64>() / n,
        ))
    }

    pub fn methods(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,agent,horizon,bce,auroc,iou\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.9},{:.9},{:.9}",
                r.method, r.agent, r.horizon, r.bce, r.auroc, r.iou
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Option<MetricTable> {
        let mut table = MetricTable::default();
        for line in text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return None;
            }
            table.push(MetricRow {
                method: f[0].to_string(),
                agent: f[1].parse().ok()?,
                horizon: f[2].parse().ok()?,
                bce: f[3].parse().ok()?,
                auroc: f[4].parse().ok()?,
                iou: f[5].parse().ok()?,
            });
        }
        Some(table)
    }

    /// Aligned plain-text table: one block per method, averaged row last.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<28} {:>6} {:>8} {:>10} {:>10} {:>10}",
            "method", "agent", "horizon", "bce", "auroc", "iou"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<28} {:>6} {:>8} {:>10.4} {:>9.1}% {:>9.1}%",
                r.method,
                r.agent,
                r.horizon,
                r.bce,
                100.0 * r.auroc,
                100.0 * r.iou
            );
        }
        for m in self.methods() {
            if let Some((b, a, i)) = self.method_average(&m) {
                let _ = writeln!(
                    s,
                    "{:<28} {:>6} {:>8} {:>10.4} {:>9.1}% {:>9.1}%",
                    m,
                    "avg",
                    "avg",
                    b,
                    100.0 * a,
                    100.0 * i
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_half_is_ln2() {
        let t = vec![1.0, 0.0, 1.0];
        let p = vec![0.5; 3];
        assert!((bce(&t, &p).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_hand_case() {
        // target [[1,0]], pred [[0.9,0.1]] -> -(ln0.9+ln0.9)/2
        let v = bce(&[1.0, 0.0], &[0.9, 0.1]).unwrap();
        let want = -(0.9f64.ln() + 0.9f64.ln()) / 2.0;
        assert!((v - want).abs() < 1e-12);
        assert!((v - 0.1054).abs() < 1e-4);
    }

    #[test]
    fn bce_perfect_is_tiny() {
        let t = vec![1.0, 0.0, 0.0, 1.0];
        assert!(bce(&t, &t).unwrap() < 1e-5);
    }

    #[test]
    fn auroc_all_ties_is_half() {
        let (v, d) = auroc(&[1.0, 0.0, 1.0, 0.0], &[0.3; 4]).unwrap();
        assert_eq!(v, 0.5);
        assert!(!d);
    }

    #[test]
    fn auroc_perfect_ranking() {
        let (v, _) = auroc(&[1.0, 0.0], &[0.9, 0.1]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn auroc_degenerate_labels() {
        let (v, d) = auroc(&[1.0, 1.0], &[0.9, 0.1]).unwrap();
        assert_eq!(v, 0.5);
        assert!(d);
    }

    /// O(n^2) pairwise oracle, ties count one half.
    fn auroc_bruteforce(targets: &[f64], scores: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, ti) in targets.iter().enumerate() {
            if *ti <= 0.5 {
                continue;
            }
            for (j, tj) in targets.iter().enumerate() {
                if *tj > 0.5 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = 50;
            let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
            // quantized scores to force ties
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..10) as f64) / 10.0).collect();
            if targets.iter().all(|t| *t > 0.5) || targets.iter().all(|t| *t <= 0.5) {
                continue;
            }
            let (fast, _) = auroc(&targets, &scores).unwrap();
            let slow = auroc_bruteforce(&targets, &scores);
            assert!((fast - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_cases() {
        // exact match
        let t = vec![1.0, 0.0, 1.0, 0.0];
        assert_eq!(iou(&t, &t, 0.5).unwrap(), 1.0);
        // disjoint
        assert_eq!(iou(&[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap(), 0.0);
        // 2 true positives, 2 misses, 2 false positives -> 2/6
        let target = vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let pred = vec![0.9, 0.9, 0.1, 0.1, 0.9, 0.9, 0.1, 0.1];
        assert!((iou(&target, &pred, 0.5).unwrap() - 2.0 / 6.0).abs() < 1e-12);
        // both empty
        assert_eq!(iou(&[0.0, 0.0], &[0.1, 0.2], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn iou_symmetric_in_binarized_args() {
        let a = vec![1.0, 0.0, 1.0, 1.0, 0.0];
        let b = vec![0.9, 0.8, 0.1, 0.7, 0.2];
        let ab = iou(&a, &b, 0.5).unwrap();
        let bin_b: Vec<f64> = b.iter().map(|x| if *x > 0.5 { 1.0 } else { 0.0 }).collect();
        let ba = iou(&bin_b, &a, 0.5).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn auroc_invariant_under_monotone_transform() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let targets: Vec<f64> = (0..40).map(|_| rng.gen_range(0..2) as f64).collect();
        let scores: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let (a, _) = auroc(&targets, &scores).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s + 1.0).exp()).collect();
        let (b, _) = auroc(&targets, &transformed).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn table_csv_roundtrip() {
        let mut t = MetricTable::default();
        t.push(MetricRow {
            method: "proposed".into(),
            agent: 0,
            horizon: 1,
            bce: 0.5,
            auroc: 0.9,
            iou: 0.1,
        });
        let parsed = MetricTable::from_csv(&t.to_csv()).unwrap();
        assert_eq!(parsed.rows.len(), 1);
        assert_eq!(parsed.rows[0].method, "proposed");
        assert_eq!(parsed.rows[0].auroc, 0.9);
    }
}
