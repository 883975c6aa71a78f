//! Per-class run-length distributions estimated from frame alignments.
//!
//! File format: one `class: len:prob len:prob ...` line per class with data
//! and a `*: ...` line for the global fallback.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use rand::Rng;

use crate::LatgenError;

/// Normalized distribution over positive run lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    probs: BTreeMap<u32, f64>,
}

impl Histogram {
    /// Normalizes positive weights over lengths `>= 1`.
    pub fn from_weights(weights: BTreeMap<u32, f64>) -> Result<Self, LatgenError> {
        let total: f64 = weights.values().sum();
        if weights.is_empty() || weights.contains_key(&0) || weights.values().any(|&w| !(w >= 0.0)) || !(total > 0.0) {
            return Err(LatgenError::InvalidModel("duration weights must be non-negative over lengths >= 1".into()));
        }
        Ok(Self {
            probs: weights.into_iter().map(|(k, w)| (k, w / total)).collect(),
        })
    }

    /// All mass on one length.
    pub fn point(len: u32) -> Self {
        Self {
            probs: BTreeMap::from([(len.max(1), 1.0)]),
        }
    }

    pub fn probs(&self) -> &BTreeMap<u32, f64> {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().map(|(&k, &p)| f64::from(k) * p).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (&len, &p) in &self.probs {
            acc += p;
            if u < acc {
                return len;
            }
        }
        *self.probs.keys().next_back().expect("non-empty histogram")
    }
}

/// Maximal runs of equal values as `(value, length)`.
pub fn runs(frames: &[u32]) -> Vec<(u32, u32)> {
    let mut out: Vec<(u32, u32)> = Vec::new();
    for &c in frames {
        match out.last_mut() {
            Some((v, n)) if *v == c => *n += 1,
            _ => out.push((c, 1)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DurationModel {
    per_class: Vec<Option<Histogram>>,
    fallback: Histogram,
}

fn smoothed(counts: &BTreeMap<u32, f64>) -> Histogram {
    Histogram::from_weights(counts.iter().map(|(&k, &c)| (k, c + 1.0)).collect()).expect("counts are positive")
}

impl DurationModel {
    pub fn new(per_class: Vec<Option<Histogram>>, fallback: Histogram) -> Self {
        Self { per_class, fallback }
    }

    /// Run-length histograms per class with add-one smoothing over the
    /// observed lengths. Classes never observed use the pooled histogram.
    pub fn estimate(alignments: &[Vec<u32>], num_classes: usize) -> Result<Self, LatgenError> {
        let mut counts: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); num_classes];
        let mut pooled: BTreeMap<u32, f64> = BTreeMap::new();
        for ali in alignments {
            for (class, len) in runs(ali) {
                let c = counts.get_mut(class as usize).ok_or(LatgenError::InvalidClass { class, num_classes })?;
                *c.entry(len).or_default() += 1.0;
                *pooled.entry(len).or_default() += 1.0;
            }
        }
        if pooled.is_empty() {
            return Err(LatgenError::EmptyInput);
        }
        Ok(Self {
            per_class: counts.iter().map(|c| (!c.is_empty()).then(|| smoothed(c))).collect(),
            fallback: smoothed(&pooled),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    /// Histogram used for `class` (the fallback when it has none).
    pub fn histogram(&self, class: u32) -> &Histogram {
        self.per_class
            .get(class as usize)
            .and_then(Option::as_ref)
            .unwrap_or(&self.fallback)
    }

    pub fn has_class(&self, class: u32) -> bool {
        self.per_class.get(class as usize).is_some_and(Option::is_some)
    }

    pub fn fallback(&self) -> &Histogram {
        &self.fallback
    }

    pub fn sample<R: Rng + ?Sized>(&self, class: u32, rng: &mut R) -> u32 {
        self.histogram(class).sample(rng)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), LatgenError> {
        let line = |key: String, h: &Histogram| {
            let parts: Vec<String> = h.probs.iter().map(|(k, p)| format!("{k}:{p}")).collect();
            format!("{key}: {}\n", parts.join(" "))
        };
        let mut buf = format!("A={}\n", self.per_class.len());
        for (c, h) in self.per_class.iter().enumerate() {
            if let Some(h) = h {
                buf.push_str(&line(c.to_string(), h));
            }
        }
        buf.push_str(&line("*".into(), &self.fallback));
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, LatgenError> {
        let err = |line: usize, message: String| LatgenError::Parse { line, message };
        let mut per_class: Option<Vec<Option<Histogram>>> = None;
        let mut fallback = None;
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let ln = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(a) = line.strip_prefix("A=") {
                let a: usize = a.trim().parse().map_err(|_| err(ln, format!("invalid class count {a:?}")))?;
                per_class = Some(vec![None; a]);
                continue;
            }
            let (key, body) = line.split_once(':').ok_or_else(|| err(ln, "expected class: len:prob ...".into()))?;
            let mut weights = BTreeMap::new();
            for item in body.split_whitespace() {
                let (l, p) = item.split_once(':').ok_or_else(|| err(ln, format!("invalid entry {item:?}")))?;
                let l: u32 = l.parse().map_err(|_| err(ln, format!("invalid length {l:?}")))?;
                let p: f64 = p.parse().map_err(|_| err(ln, format!("invalid probability {p:?}")))?;
                weights.insert(l, p);
            }
            // Stored values are already normalized; keep them bit-exact.
            Histogram::from_weights(weights.clone()).map_err(|e| err(ln, e.to_string()))?;
            let h = Histogram { probs: weights };
            if key.trim() == "*" {
                fallback = Some(h);
            } else {
                let table = per_class.as_mut().ok_or_else(|| err(ln, "missing A=<n> header".into()))?;
                let c: usize = key.trim().parse().map_err(|_| err(ln, format!("invalid class {key:?}")))?;
                let slot = table.get_mut(c).ok_or_else(|| err(ln, format!("class {c} out of range")))?;
                *slot = Some(h);
            }
        }
        Ok(Self {
            per_class: per_class.ok_or_else(|| err(0, "missing A=<n> header".into()))?,
            fallback: fallback.ok_or_else(|| err(0, "missing fallback line".into()))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counts_runs_per_class() {
        let m = DurationModel::estimate(&[vec![1, 1, 1, 2, 2]], 4).unwrap();
        assert_eq!(m.histogram(1).probs(), &BTreeMap::from([(3, 1.0)]));
        assert_eq!(m.histogram(2).probs(), &BTreeMap::from([(2, 1.0)]));
        assert!(!m.has_class(0));
        assert_eq!(m.histogram(0), m.fallback());
        assert_eq!(m.fallback().probs(), &BTreeMap::from([(2, 0.5), (3, 0.5)]));
    }

    #[test]
    fn add_one_smoothing_over_observed_lengths() {
        let m = DurationModel::estimate(&[vec![0, 0, 1, 0, 1, 0, 0]], 2).unwrap();
        // Class 0 runs: 2, 1, 2 -> counts {1:1, 2:2} -> smoothed {1:2, 2:3}.
        let h = m.histogram(0).probs();
        assert!((h[&1] - 0.4).abs() < 1e-15 && (h[&2] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(DurationModel::estimate(&[], 3), Err(LatgenError::EmptyInput)));
        assert!(matches!(DurationModel::estimate(&[vec![5]], 3), Err(LatgenError::InvalidClass { .. })));
    }

    #[test]
    fn file_round_trip_is_exact() {
        let m = DurationModel::estimate(&[vec![0, 0, 0, 1, 2, 2, 0, 1, 1, 1, 1]], 5).unwrap();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(DurationModel::read(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn sampling_follows_the_histogram() {
        let h = Histogram::from_weights(BTreeMap::from([(1, 1.0), (4, 3.0)])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 20_000;
        let fours = (0..n).filter(|_| h.sample(&mut rng) == 4).count();
        assert!((fours as f64 / n as f64 - 0.75).abs() < 0.02);
    }
}
