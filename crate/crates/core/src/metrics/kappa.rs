use std::collections::HashMap;
use std::hash::Hash;

use num_rational::Ratio;
use serde::Serialize;

use super::MetricsError;
use crate::corpus::{AnnotationOutcome, EmotionLabel};

/// Cohen's kappa with chance agreement from the product of the two raters'
/// marginals.
///
/// Computed from integer counts as `(agree*n - S) / (n^2 - S)` where
/// `S = sum_c count_a(c) * count_b(c)`. When chance agreement is 1 the result
/// is 1.0 if the raters agree everywhere and an error otherwise.
pub fn cohen_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = a.len() as i128;
    let mut agree = 0i128;
    let mut marg: HashMap<&T, (i128, i128)> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        agree += i128::from(x == y);
        marg.entry(x).or_default().0 += 1;
        marg.entry(y).or_default().1 += 1;
    }
    let s: i128 = marg.values().map(|(ca, cb)| ca * cb).sum();
    let den = n * n - s;
    if den == 0 {
        return if agree == n {
            Ok(1.0)
        } else {
            Err(MetricsError::DegenerateMarginals)
        };
    }
    Ok((agree * n - s) as f64 / den as f64)
}

/// Per-item category counts `n_ij`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RatingMatrix {
    categories: usize,
    rows: Vec<Vec<u32>>,
}

impl RatingMatrix {
    pub fn new(categories: usize, rows: Vec<Vec<u32>>) -> Result<Self, MetricsError> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != categories {
                return Err(MetricsError::RaggedMatrix {
                    row: i,
                    found: r.len(),
                    expected: categories,
                });
            }
        }
        Ok(Self { categories, rows })
    }

    /// Four-quadrant matrix from per-item label lists.
    pub fn from_labels<'a, I>(items: I) -> Self
    where
        I: IntoIterator<Item = &'a [EmotionLabel]>,
    {
        let rows = items
            .into_iter()
            .map(|labels| {
                let mut r = vec![0; 4];
                for l in labels {
                    r[l.index()] += 1;
                }
                r
            })
            .collect();
        Self {
            categories: 4,
            rows,
        }
    }

    /// Four-quadrant matrix from annotation rows; NEI outcomes are not counted.
    pub fn from_outcomes(rows: &[Vec<AnnotationOutcome>]) -> Self {
        let labels: Vec<Vec<EmotionLabel>> = rows
            .iter()
            .map(|r| r.iter().filter_map(|o| o.label()).collect())
            .collect();
        Self::from_labels(labels.iter().map(Vec::as_slice))
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Matrix built from the given row indices, repeats allowed.
    pub fn resample(&self, indices: &[usize]) -> Self {
        Self {
            categories: self.categories,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

/// Fleiss' kappa, evaluated exactly in rationals.
///
/// `P_i = sum_j n_ij (n_ij - 1) / (n_i (n_i - 1))`, `P_bar` is their mean,
/// `p_j` is the share of all ratings in category `j` and `P_e = sum_j p_j^2`.
pub fn fleiss_kappa(matrix: &RatingMatrix) -> Result<f64, MetricsError> {
    if matrix.is_empty() {
        return Err(MetricsError::Empty);
    }
    // agreeing ordered pairs, grouped by raters per item
    let mut by_n: HashMap<i128, i128> = HashMap::new();
    let mut totals = vec![0i128; matrix.categories];
    for (i, row) in matrix.rows.iter().enumerate() {
        let n: u32 = row.iter().sum();
        if n < 2 {
            return Err(MetricsError::TooFewRatings { row: i, raters: n });
        }
        let pairs: i128 = row
            .iter()
            .map(|&c| i128::from(c) * (i128::from(c) - 1))
            .sum();
        *by_n.entry(i128::from(n)).or_default() += pairs;
        for (t, &c) in totals.iter_mut().zip(row) {
            *t += i128::from(c);
        }
    }
    let mut groups: Vec<_> = by_n.into_iter().collect();
    groups.sort_unstable();
    let sum_p: Ratio<i128> = groups
        .into_iter()
        .map(|(n, pairs)| Ratio::new(pairs, n * (n - 1)))
        .fold(Ratio::from_integer(0), |acc, x| acc + x);
    let p_bar = sum_p / Ratio::from_integer(matrix.len() as i128);
    let all: i128 = totals.iter().sum();
    let p_e = Ratio::new(totals.iter().map(|t| t * t).sum::<i128>(), all * all);
    let one = Ratio::from_integer(1);
    if p_e == one {
        return if p_bar == one {
            Ok(1.0)
        } else {
            Err(MetricsError::DegenerateMarginals)
        };
    }
    let k = (p_bar - p_e) / (one - p_e);
    Ok(*k.numer() as f64 / *k.denom() as f64)
}
