//! ROC-AUC (frame and video level), accuracy, and the cross-method grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{score_samples, Sample};
use crate::optim::{train, TrainConfig};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub groups: Option<Vec<u32>>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Self {
        ScoredSet {
            scores,
            labels,
            groups: None,
        }
    }

    pub fn with_groups(mut self, groups: Vec<u32>) -> Self {
        self.groups = Some(groups);
        self
    }

    fn check(&self) -> Result<()> {
        if self.scores.len() != self.labels.len() {
            return Err(Error::shape(
                "scored set",
                format!("{} scores", self.scores.len()),
                format!("{} labels", self.labels.len()),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y > 1) {
            return Err(Error::InvalidLabel(bad));
        }
        if let Some(g) = &self.groups {
            if g.len() != self.scores.len() {
                return Err(Error::shape(
                    "scored set",
                    format!("{} scores", self.scores.len()),
                    format!("{} groups", g.len()),
                ));
            }
        }
        Ok(())
    }
}

/// Mann–Whitney AUC with midranks for ties: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn roc_auc(s: &ScoredSet) -> Result<f64> {
    s.check()?;
    let n_pos = s.labels.iter().filter(|&&y| y == 1).count();
    let n_neg = s.labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(format!("{n_pos} positives and {n_neg} negatives")));
    }
    if s.scores.iter().any(|x| x.is_nan()) {
        return Err(Error::Config("NaN score".into()));
    }

    let mut idx: Vec<usize> = (0..s.scores.len()).collect();
    idx.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));

    // Sum of doubled midranks of positives keeps everything integral until the end.
    let mut pos_rank_sum2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && s.scores[idx[j + 1]] == s.scores[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share midrank (i+j+2)/2
        let mid2 = (i + j + 2) as u128;
        let pos_in_group = idx[i..=j].iter().filter(|&&k| s.labels[k] == 1).count() as u128;
        pos_rank_sum2 += mid2 * pos_in_group;
        i = j + 1;
    }
    let n_pos_u = n_pos as u128;
    let u2 = pos_rank_sum2 - n_pos_u * (n_pos_u + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Fraction of items where `(score ≥ threshold)` agrees with the label.
pub fn accuracy(s: &ScoredSet, threshold: f64) -> Result<f64> {
    s.check()?;
    if s.scores.is_empty() {
        return Err(Error::EmptyDataset("accuracy of empty set".into()));
    }
    let correct = s
        .scores
        .iter()
        .zip(&s.labels)
        .filter(|(&p, &y)| (p >= threshold) == (y == 1))
        .count();
    Ok(correct as f64 / s.scores.len() as f64)
}

/// Per-group mean scores with their (uniform) labels, ordered by group id.
pub fn group_means(s: &ScoredSet) -> Result<(Vec<f64>, Vec<u8>)> {
    s.check()?;
    let groups = s.groups.as_ref().ok_or(Error::MissingGroups)?;
    let mut acc: BTreeMap<u32, (f64, usize, u8)> = BTreeMap::new();
    for ((&g, &score), &y) in groups.iter().zip(&s.scores).zip(&s.labels) {
        let e = acc.entry(g).or_insert((0.0, 0, y));
        if e.2 != y {
            return Err(Error::MixedGroup(g));
        }
        e.0 += score;
        e.1 += 1;
    }
    Ok(acc.values().map(|&(sum, n, y)| (sum / n as f64, y)).unzip())
}

/// AUC over per-video mean frame scores.
pub fn video_auc(s: &ScoredSet) -> Result<f64> {
    let (scores, labels) = group_means(s)?;
    roc_auc(&ScoredSet::new(scores, labels))
}

/// Train/val/test splits of one manipulation method.
#[derive(Clone, Debug)]
pub struct MethodSplits {
    pub tag: u8,
    pub name: String,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridResult {
    pub methods: Vec<String>,
    /// `auc[train][test]`
    pub auc: Vec<Vec<f64>>,
}

/// Training seed used for row `tag` of a grid built from `base`.
pub fn grid_row_seed(base: u64, tag: u8) -> u64 {
    derive_seed(base, 0x6772_6964_0000 + tag as u64)
}

fn grid_row(row: &MethodSplits, all: &[MethodSplits], tc: &TrainConfig) -> Result<Vec<f64>> {
    let mut cell = *tc;
    cell.seed = grid_row_seed(tc.seed, row.tag);
    let ck = train(&row.train, &row.val, &cell)?;
    all.iter()
        .map(|col| {
            let scores = score_samples(&ck.params, &col.test, &tc.model)?;
            roc_auc(&ScoredSet::new(scores, col.test.iter().map(|s| s.y).collect()))
        })
        .collect()
}

/// Train on each method, test on every method's test split.
pub fn cross_grid(datasets: &[MethodSplits], tc: &TrainConfig) -> Result<GridResult> {
    cross_grid_with_threads(datasets, tc, 1)
}

/// [`cross_grid`] with rows trained on up to `threads` workers. Each row owns
/// its derived seed, so the result does not depend on the thread count.
pub fn cross_grid_with_threads(datasets: &[MethodSplits], tc: &TrainConfig, threads: usize) -> Result<GridResult> {
    if datasets.is_empty() {
        return Err(Error::EmptyDataset("no methods for the grid".into()));
    }
    let rows: Vec<Vec<f64>> = if threads <= 1 {
        datasets
            .iter()
            .map(|r| grid_row(r, datasets, tc))
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| {
            datasets
                .par_iter()
                .map(|r| grid_row(r, datasets, tc))
                .collect::<Result<_>>()
        })?
    };
    Ok(GridResult {
        methods: datasets.iter().map(|d| d.name.clone()).collect(),
        auc: rows,
    })
}

impl GridResult {
    pub fn get(&self, train: &str, test: &str) -> Option<f64> {
        let r = self.methods.iter().position(|m| m == train)?;
        let c = self.methods.iter().position(|m| m == test)?;
        Some(self.auc[r][c])
    }

    /// Rows are training methods, columns test methods.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train");
        for m in &self.methods {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for (m, row) in self.methods.iter().zip(&self.auc) {
            out.push_str(m);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Heatmap with a linear ramp from AUC 0.5 (light) to 1.0 (dark).
    pub fn to_svg(&self) -> String {
        const CELL: usize = 72;
        const MARGIN: usize = 80;
        let n = self.methods.len();
        let size = MARGIN + n * CELL + 16;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}" font-family="sans-serif">"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="13">test method</text>"#,
            MARGIN + n * CELL / 2
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{y}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {y})">train method</text>"#,
            y = MARGIN + n * CELL / 2
        );
        for (j, m) in self.methods.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
                MARGIN + j * CELL + CELL / 2,
                MARGIN - 10,
                xml_escape(m)
            );
        }
        for (i, (m, row)) in self.methods.iter().zip(&self.auc).enumerate() {
            let y = MARGIN + i * CELL;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end" font-size="12">{}</text>"#,
                MARGIN - 8,
                y + CELL / 2 + 4,
                xml_escape(m)
            );
            for (j, &v) in row.iter().enumerate() {
                let x = MARGIN + j * CELL;
                let t = ((v - 0.5) / 0.5).clamp(0.0, 1.0);
                let (r, g, b) = ramp(t);
                let ink = if t > 0.55 { "#ffffff" } else { "#000000" };
                let _ = writeln!(
                    s,
                    r##"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#{r:02x}{g:02x}{b:02x}" stroke="#ffffff"/>"##
                );
                let _ = writeln!(
                    s,
                    r#"<text class="cell-label" x="{}" y="{}" text-anchor="middle" font-size="13" fill="{ink}">{v:.3}</text>"#,
                    x + CELL / 2,
                    y + CELL / 2 + 5
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn ramp(t: f64) -> (u8, u8, u8) {
    let lo = (0xf7 as f64, 0xfb as f64, 0xff as f64);
    let hi = (0x08 as f64, 0x30 as f64, 0x6b as f64);
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    (mix(lo.0, hi.0), mix(lo.1, hi.1), mix(lo.2, hi.2))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n²) pairwise oracle.
    pub(crate) fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi == 1 && yj == 0 {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        let s = ScoredSet::new(vec![0.1, 0.2, 0.8, 0.9], vec![0, 0, 1, 1]);
        assert_eq!(roc_auc(&s).unwrap(), 1.0);
        let s = ScoredSet::new(vec![0.4; 6], vec![0, 1, 0, 1, 1, 0]);
        assert_eq!(roc_auc(&s).unwrap(), 0.5);
        let s = ScoredSet::new(vec![0.1, 0.4, 0.35, 0.8], vec![0, 0, 1, 1]);
        assert_eq!(roc_auc(&s).unwrap(), 0.75);
        assert!(matches!(
            roc_auc(&ScoredSet::new(vec![0.1, 0.2], vec![1, 1])),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn auc_matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let n = rng.random_range(2..=50);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let levels = rng.random_range(1..=n);
            let scores: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
                .collect();
            let fast = roc_auc(&ScoredSet::new(scores.clone(), labels.clone())).unwrap();
            assert!((fast - brute_auc(&scores, &labels)).abs() <= 1e-12);
        }
    }

    #[test]
    fn accuracy_examples() {
        let s = ScoredSet::new(vec![0.9, 0.1, 0.7, 0.2], vec![1, 0, 1, 0]);
        assert_eq!(accuracy(&s, 0.5).unwrap(), 1.0);
        let flipped = ScoredSet::new(s.scores.clone(), vec![0, 1, 0, 1]);
        assert_eq!(accuracy(&flipped, 0.5).unwrap(), 0.0);
        let s = ScoredSet::new(vec![0.9, 0.6, 0.3, 0.2], vec![1, 0, 0, 0]);
        assert_eq!(accuracy(&s, 0.5).unwrap(), 0.75);
        let f = ScoredSet::new(s.scores.clone(), vec![0, 1, 1, 1]);
        assert_eq!(accuracy(&f, 0.5).unwrap(), 0.25);
    }

    #[test]
    fn video_auc_examples() {
        let s = ScoredSet::new(vec![0.2, 0.4, 0.9, 0.1], vec![0, 0, 1, 1]).with_groups(vec![0, 0, 1, 1]);
        let (means, labels) = group_means(&s).unwrap();
        assert!((means[0] - 0.3).abs() < 1e-15);
        assert_eq!(labels, vec![0, 1]);
        assert_eq!(video_auc(&s).unwrap(), 1.0);

        let mixed = ScoredSet::new(vec![0.2, 0.4], vec![0, 1]).with_groups(vec![3, 3]);
        assert!(matches!(video_auc(&mixed), Err(Error::MixedGroup(3))));
        assert!(matches!(
            video_auc(&ScoredSet::new(vec![0.2, 0.4], vec![0, 1])),
            Err(Error::MissingGroups)
        ));
    }

    #[test]
    fn video_auc_matches_group_mean_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n_groups = rng.random_range(2..12u32);
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            let mut groups = Vec::new();
            let mut oracle_scores = Vec::new();
            let mut oracle_labels = Vec::new();
            for g in 0..n_groups {
                let y = if g < 2 { g as u8 } else { rng.random_range(0..2) };
                let k = rng.random_range(1..6);
                let frames: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
                oracle_scores.push(frames.iter().sum::<f64>() / k as f64);
                oracle_labels.push(y);
                for f in frames {
                    scores.push(f);
                    labels.push(y);
                    groups.push(g * 10);
                }
            }
            // shuffle frame order, aggregation must not care
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut rng);
            let s = ScoredSet::new(
                idx.iter().map(|&i| scores[i]).collect(),
                idx.iter().map(|&i| labels[i]).collect(),
            )
            .with_groups(idx.iter().map(|&i| groups[i]).collect());
            let got = video_auc(&s).unwrap();
            assert!((got - brute_auc(&oracle_scores, &oracle_labels)).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn auc_invariant_to_monotone_maps(
            scores in prop::collection::vec(-3.0f64..3.0, 4..40),
            flips in prop::collection::vec(any::<bool>(), 40),
            a in 0.1f64..10.0, b in -5.0f64..5.0,
        ) {
            let mut labels: Vec<u8> = flips[..scores.len()].iter().map(|&f| f as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let base = roc_auc(&ScoredSet::new(scores.clone(), labels.clone())).unwrap();
            let exp: Vec<f64> = scores.iter().map(|x| x.exp()).collect();
            let aff: Vec<f64> = scores.iter().map(|x| a * x + b).collect();
            prop_assert_eq!(roc_auc(&ScoredSet::new(exp, labels.clone())).unwrap(), base);
            prop_assert_eq!(roc_auc(&ScoredSet::new(aff, labels.clone())).unwrap(), base);

            let inv: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
            let other = roc_auc(&ScoredSet::new(scores.clone(), inv)).unwrap();
            prop_assert!((base + other - 1.0).abs() <= 1e-12);

            let singles = ScoredSet::new(scores.clone(), labels.clone())
                .with_groups((0..scores.len() as u32).collect());
            prop_assert_eq!(video_auc(&singles).unwrap(), base);
        }
    }

    #[test]
    fn csv_and_svg_shapes() {
        let g = GridResult {
            methods: vec!["A".into(), "B".into()],
            auc: vec![vec![0.9, 0.6], vec![0.55, 0.8]],
        };
        let csv = g.to_csv();
        assert_eq!(csv, "train,A,B\nA,0.9,0.6\nB,0.55,0.8\n");
        let svg = g.to_svg();
        assert_eq!(svg.matches("class=\"cell\"").count(), 4);
        assert_eq!(svg.matches("class=\"cell-label\"").count(), 4);
        assert!(svg.contains(">0.550<"));
        assert_eq!(g.get("B", "A"), Some(0.55));
    }
}
