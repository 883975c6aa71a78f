//! Fake acoustic model: an `A x A` row-stochastic matrix whose row `i` is the
//! average class posterior over frames aligned to class `i`.
//!
//! File format: an `A=<n>` header followed by `n` rows of `n` numbers.

use std::io::{BufRead, BufReader, Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::LatgenError;

/// Per-frame class posteriors, `T` rows of length `A`.
pub type Posteriors = Vec<Vec<f64>>;

pub const SMOOTHING: f64 = 1e-6;
const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FakeAcousticModel {
    rows: Vec<Vec<f64>>,
}

fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn smooth(mut row: Vec<f64>) -> Vec<f64> {
    for v in row.iter_mut() {
        *v += SMOOTHING;
    }
    normalize(&mut row);
    row
}

/// Mixes `row` with the unit vector of class `i` just enough for the
/// diagonal to be the row maximum. Returns the mixing weight.
fn diagonal_guard(row: &mut [f64], i: usize) -> f64 {
    let d = row[i];
    let m = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(0.0, f64::max);
    if d >= m {
        return 0.0;
    }
    let lambda = ((m - d) / (1.0 + m - d) * (1.0 + 1e-12)).min(1.0);
    for (j, v) in row.iter_mut().enumerate() {
        *v = (1.0 - lambda) * *v + if j == i { lambda } else { 0.0 };
    }
    lambda
}

impl FakeAcousticModel {
    pub fn identity(num_classes: usize) -> Self {
        Self {
            rows: (0..num_classes)
                .map(|i| (0..num_classes).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    /// Validates and wraps explicit rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, LatgenError> {
        let fam = Self { rows };
        fam.validate()?;
        Ok(fam)
    }

    /// Each class keeps `1 - leak` and leaks `leak` to `partner(i)`.
    pub fn leaky(num_classes: usize, leak: f64, partner: impl Fn(usize) -> usize) -> Result<Self, LatgenError> {
        let mut rows = vec![vec![0.0; num_classes]; num_classes];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] += 1.0 - leak;
            let p = partner(i);
            if p >= num_classes {
                return Err(LatgenError::InvalidClass {
                    class: p as u32,
                    num_classes,
                });
            }
            row[p] += leak;
        }
        Self::from_rows(rows)
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, class: u32) -> Option<&[f64]> {
        self.rows.get(class as usize).map(Vec::as_slice)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Square shape, non-negative entries, rows summing to one.
    pub fn validate(&self) -> Result<(), LatgenError> {
        let a = self.rows.len();
        if a == 0 {
            return Err(LatgenError::InvalidModel("empty acoustic model".into()));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != a {
                return Err(LatgenError::InvalidModel(format!("row {i} has {} entries, expected {a}", row.len())));
            }
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(LatgenError::InvalidModel(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(LatgenError::InvalidModel(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// True when every diagonal entry is its row maximum.
    pub fn diagonal_dominant(&self) -> bool {
        self.rows
            .iter()
            .enumerate()
            .all(|(i, r)| r.iter().all(|&v| v <= r[i]))
    }

    /// Row `i` is the mean posterior over frames aligned to class `i`, then
    /// smoothed by adding `SMOOTHING` and renormalizing. A class that is never
    /// aligned gets a smoothed unit row. Rows whose diagonal is not the
    /// maximum are mixed with the unit row until it is.
    pub fn estimate(
        alignments: &[(String, Vec<u32>)],
        posteriors: &[Posteriors],
        num_classes: usize,
    ) -> Result<Self, LatgenError> {
        if alignments.is_empty() {
            return Err(LatgenError::EmptyInput);
        }
        if alignments.len() != posteriors.len() {
            return Err(LatgenError::InvalidModel(format!(
                "{} alignments but {} posterior matrices",
                alignments.len(),
                posteriors.len()
            )));
        }
        let mut sums = vec![vec![0.0; num_classes]; num_classes];
        let mut counts = vec![0usize; num_classes];
        for ((utt, ali), post) in alignments.iter().zip(posteriors) {
            if ali.len() != post.len() {
                return Err(LatgenError::FrameCountMismatch {
                    utterance: utt.clone(),
                    frames: ali.len(),
                    posteriors: post.len(),
                });
            }
            for (&c, row) in ali.iter().zip(post) {
                let ci = c as usize;
                if ci >= num_classes {
                    return Err(LatgenError::InvalidClass { class: c, num_classes });
                }
                if row.len() != num_classes {
                    return Err(LatgenError::InvalidModel(format!(
                        "utterance {utt}: posterior row of length {}, expected {num_classes}",
                        row.len()
                    )));
                }
                for (s, &p) in sums[ci].iter_mut().zip(row) {
                    *s += p;
                }
                counts[ci] += 1;
            }
        }
        let mut rows = Vec::with_capacity(num_classes);
        for (i, (sum, n)) in sums.into_iter().zip(counts).enumerate() {
            let mean = if n == 0 {
                (0..num_classes).map(|j| if i == j { 1.0 } else { 0.0 }).collect()
            } else {
                sum.into_iter().map(|s| s / n as f64).collect()
            };
            let mut row = smooth(mean);
            let lambda = diagonal_guard(&mut row, i);
            if lambda > 0.0 {
                log::warn!("class {i}: diagonal below row maximum, mixed with unit row (weight {lambda:.4})");
            }
            rows.push(row);
        }
        Self::from_rows(rows)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), LatgenError> {
        let mut buf = format!("A={}\n", self.rows.len());
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            buf.push_str(&cells.join(" "));
            buf.push('\n');
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, LatgenError> {
        let err = |line: usize, message: String| LatgenError::Parse { line, message };
        let mut size = None;
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let ln = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            match size {
                None => {
                    let a = line
                        .trim()
                        .strip_prefix("A=")
                        .ok_or_else(|| err(ln, "expected A=<n> header".into()))?;
                    size = Some(a.parse::<usize>().map_err(|_| err(ln, format!("invalid class count {a:?}")))?);
                }
                Some(a) => {
                    let row = line
                        .split_whitespace()
                        .map(|v| v.parse::<f64>().map_err(|_| err(ln, format!("invalid number {v:?}"))))
                        .collect::<Result<Vec<f64>, _>>()?;
                    if row.len() != a {
                        return Err(err(ln, format!("{} entries, expected {a}", row.len())));
                    }
                    if rows.len() == a {
                        return Err(err(ln, "more rows than classes".into()));
                    }
                    rows.push(row);
                }
            }
        }
        let a = size.ok_or_else(|| err(0, "missing A=<n> header".into()))?;
        if rows.len() != a {
            return Err(err(0, format!("{} rows, expected {a}", rows.len())));
        }
        Self::from_rows(rows).map_err(|e| err(0, e.to_string()))
    }
}

/// Posterior rows for a frame alignment. Without `kappa` each frame gets its
/// class row verbatim. With `kappa` the row is redrawn from a Dirichlet
/// distribution with concentration `kappa * row`, whose mean is the row.
pub fn synthesize_posteriors<R: Rng + ?Sized>(
    fali: &[u32],
    fam: &FakeAcousticModel,
    rng: &mut R,
    kappa: Option<f64>,
) -> Result<Posteriors, LatgenError> {
    if let Some(k) = kappa {
        if !(k > 0.0 && k.is_finite()) {
            return Err(LatgenError::InvalidModel(format!("concentration must be positive, got {k}")));
        }
    }
    fali.iter()
        .map(|&c| {
            let row = fam.row(c).ok_or(LatgenError::InvalidClass {
                class: c,
                num_classes: fam.num_classes(),
            })?;
            Ok(match kappa {
                None => row.to_vec(),
                Some(k) => dirichlet_around(row, k, rng),
            })
        })
        .collect()
}

fn dirichlet_around<R: Rng + ?Sized>(row: &[f64], kappa: f64, rng: &mut R) -> Vec<f64> {
    let mut draw: Vec<f64> = row
        .iter()
        .map(|&p| {
            let alpha = kappa * p;
            if alpha > 0.0 {
                Gamma::new(alpha, 1.0).map_or(0.0, |g| g.sample(rng))
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = draw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return row.to_vec();
    }
    normalize(&mut draw);
    draw
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_hot_posteriors_give_identity() {
        let ali = vec![("u".to_string(), vec![0, 1, 1, 2])];
        let post = vec![ali[0].1.iter().map(|&c| (0..3).map(|j| f64::from(u8::from(j == c))).collect()).collect()];
        let fam = FakeAcousticModel::estimate(&ali, &post, 3).unwrap();
        for (i, row) in fam.rows().iter().enumerate() {
            assert!((row[i] - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn unaligned_class_gets_unit_row() {
        let ali = vec![("u".to_string(), vec![0, 0])];
        let post = vec![vec![vec![0.5, 0.5, 0.0], vec![0.5, 0.5, 0.0]]];
        let fam = FakeAcousticModel::estimate(&ali, &post, 3).unwrap();
        assert!(fam.row(2).unwrap()[2] > 0.99);
        assert!(fam.diagonal_dominant());
    }

    #[test]
    fn guard_restores_diagonal_maximum() {
        let ali = vec![("u".to_string(), vec![0])];
        let post = vec![vec![vec![0.2, 0.7, 0.1]]];
        let fam = FakeAcousticModel::estimate(&ali, &post, 3).unwrap();
        let r = fam.row(0).unwrap();
        assert!(r[0] >= r[1] && r[0] >= r[2]);
        assert!((r[0] - r[1]).abs() < 1e-9);
        fam.validate().unwrap();
    }

    #[test]
    fn frame_mismatch_is_reported() {
        let ali = vec![("u".to_string(), vec![0, 0])];
        let post = vec![vec![vec![1.0, 0.0]]];
        assert!(matches!(
            FakeAcousticModel::estimate(&ali, &post, 2),
            Err(LatgenError::FrameCountMismatch { frames: 2, posteriors: 1, .. })
        ));
    }

    #[test]
    fn file_round_trip_is_exact() {
        let fam = FakeAcousticModel::leaky(4, 0.3, |i| i ^ 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let post = synthesize_posteriors(&[0, 1, 2, 3, 3], &fam, &mut rng, Some(20.0)).unwrap();
        let ali = vec![("u".to_string(), vec![0, 1, 2, 3, 3])];
        let est = FakeAcousticModel::estimate(&ali, &[post], 4).unwrap();
        let mut buf = Vec::new();
        est.write(&mut buf).unwrap();
        assert_eq!(FakeAcousticModel::read(buf.as_slice()).unwrap(), est);
        assert!(FakeAcousticModel::read(&b"A=2\n1 0\n"[..]).is_err());
        assert!(FakeAcousticModel::read(&b"A=2\n1 0\n0.5 0.6\n"[..]).is_err());
    }

    #[test]
    fn perturbed_rows_stay_normalized() {
        let fam = FakeAcousticModel::leaky(6, 0.25, |i| (i + 1) % 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fali: Vec<u32> = (0..500).map(|t| t % 6).collect();
        for row in synthesize_posteriors(&fali, &fam, &mut rng, Some(0.5)).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}
