//! Intra-class correlation from a two-way ANOVA over a complete
//! subjects-by-raters matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IccVariant {
    /// One-way random effects, single rater.
    Icc1_1,
    /// Two-way random effects, absolute agreement, single rater.
    Icc2_1,
    /// Two-way mixed effects, consistency, single rater.
    Icc3_1,
}

impl Default for IccVariant {
    fn default() -> Self {
        IccVariant::Icc2_1
    }
}

pub struct AnovaMeanSquares {
    pub ms_rows: f64,
    pub ms_cols: f64,
    pub ms_error: f64,
    pub n_subjects: usize,
    pub n_raters: usize,
}

/// Mean squares via the computational sums-of-squares formulas. `ratings` is
/// subjects x raters, complete.
pub fn anova_mean_squares(ratings: &[Vec<f64>]) -> Result<AnovaMeanSquares> {
    let n = ratings.len();
    if n < 2 {
        return Err(Error::IccUndefined("need at least 2 subjects".into()));
    }
    let k = ratings[0].len();
    if k < 2 {
        return Err(Error::IccUndefined("need at least 2 raters".into()));
    }
    if ratings.iter().any(|r| r.len() != k) {
        return Err(Error::IccUndefined("ragged ratings matrix (missing cells)".into()));
    }
    let nf = n as f64;
    let kf = k as f64;
    let mut total = 0.0;
    let mut total_sq = 0.0;
    let mut row_totals = vec![0.0; n];
    let mut col_totals = vec![0.0; k];
    for (i, row) in ratings.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::IccUndefined(format!("non-finite rating at ({i}, {j})")));
            }
            total += x;
            total_sq += x * x;
            row_totals[i] += x;
            col_totals[j] += x;
        }
    }
    let correction = total * total / (nf * kf);
    let ss_total = total_sq - correction;
    let ss_rows = row_totals.iter().map(|t| t * t).sum::<f64>() / kf - correction;
    let ss_cols = col_totals.iter().map(|t| t * t).sum::<f64>() / nf - correction;
    let ss_error = ss_total - ss_rows - ss_cols;
    if ss_total <= 0.0 {
        return Err(Error::IccUndefined("zero total variance".into()));
    }
    Ok(AnovaMeanSquares {
        ms_rows: ss_rows / (nf - 1.0),
        ms_cols: ss_cols / (kf - 1.0),
        ms_error: ss_error / ((nf - 1.0) * (kf - 1.0)),
        n_subjects: n,
        n_raters: k,
    })
}

/// Single-rater intra-class correlation of the requested form.
pub fn icc(ratings: &[Vec<f64>], variant: IccVariant) -> Result<f64> {
    let ms = anova_mean_squares(ratings)?;
    // Perfect agreement: every rater column identical. Rater and error
    // variances are exactly zero, so every variant reduces to exactly 1.
    if ratings.iter().all(|row| row.iter().all(|&x| x == row[0])) {
        return Ok(1.0);
    }
    let (n, k) = (ms.n_subjects as f64, ms.n_raters as f64);
    let value = match variant {
        IccVariant::Icc1_1 => {
            // Within-subject mean square pools rater and error terms.
            let ms_within = (ms.ms_cols * (k - 1.0) + ms.ms_error * (n - 1.0) * (k - 1.0))
                / (n * (k - 1.0));
            (ms.ms_rows - ms_within) / (ms.ms_rows + (k - 1.0) * ms_within)
        }
        IccVariant::Icc2_1 => {
            (ms.ms_rows - ms.ms_error)
                / (ms.ms_rows + (k - 1.0) * ms.ms_error + (k / n) * (ms.ms_cols - ms.ms_error))
        }
        IccVariant::Icc3_1 => (ms.ms_rows - ms.ms_error) / (ms.ms_rows + (k - 1.0) * ms.ms_error),
    };
    Ok(value)
}

/// Parses `subject,rater,value` records into a complete matrix. Subjects and
/// raters are keyed by first appearance.
pub fn ratings_from_records(records: &[(String, String, f64)]) -> Result<Vec<Vec<f64>>> {
    let mut subjects: Vec<&str> = Vec::new();
    let mut raters: Vec<&str> = Vec::new();
    for (s, r, _) in records {
        if !subjects.iter().any(|x| x == s) {
            subjects.push(s);
        }
        if !raters.iter().any(|x| x == r) {
            raters.push(r);
        }
    }
    let mut matrix = vec![vec![f64::NAN; raters.len()]; subjects.len()];
    for (s, r, v) in records {
        let i = subjects.iter().position(|x| x == s).unwrap();
        let j = raters.iter().position(|x| x == r).unwrap();
        matrix[i][j] = *v;
    }
    for (i, row) in matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if v.is_nan() {
                return Err(Error::IccUndefined(format!(
                    "missing cell: subject {} rater {}",
                    subjects[i], raters[j]
                )));
            }
        }
    }
    Ok(matrix)
}
