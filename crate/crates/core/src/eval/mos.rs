//! Mean opinion score with a normal-approximation 95% interval.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Rating {
    pub sample_id: String,
    pub rater_id: String,
    pub rating: u8,
}

/// Mean and `1.96·s/√n` half-width, `s` the sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MosStat {
    pub mean: f64,
    pub std: f64,
    pub half_width: f64,
    pub n: usize,
}

impl fmt::Display for MosStat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.half_width)
    }
}

pub fn mos_stat(ratings: &[f64]) -> Option<MosStat> {
    let n = ratings.len();
    if n == 0 {
        return None;
    }
    let mean = ratings.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (ratings.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(MosStat {
        mean,
        std,
        half_width: 1.96 * std / (n as f64).sqrt(),
        n,
    })
}

/// Parses `sample_id,rater_id,rating` rows. A first line whose rating field
/// is not a number is taken as a header.
pub fn parse_ratings(text: &str) -> Result<Vec<Rating>> {
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let row_err = |d: String| Error::Input(format!("line {line_no}: {d}"));
        if fields.len() != 3 {
            return Err(row_err(format!("expected 3 fields, got {}", fields.len())));
        }
        let rating = match fields[2].parse::<i64>() {
            Ok(r) => r,
            Err(_) if rows.is_empty() && fields[2].parse::<f64>().is_err() && i == 0 => continue,
            Err(_) => return Err(row_err(format!("rating {:?} is not an integer", fields[2]))),
        };
        if !(1..=5).contains(&rating) {
            return Err(row_err(format!("rating {rating} outside 1..=5")));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(row_err("empty sample or rater id".into()));
        }
        if !seen.insert((fields[0].to_string(), fields[1].to_string())) {
            return Err(row_err(format!(
                "duplicate rating of {} by {}",
                fields[0], fields[1]
            )));
        }
        rows.push(Rating {
            sample_id: fields[0].to_string(),
            rater_id: fields[1].to_string(),
            rating: rating as u8,
        });
    }
    if rows.is_empty() {
        return Err(Error::Input("no ratings".into()));
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MosReport {
    pub overall: MosStat,
    pub per_sample: Vec<(String, MosStat)>,
    pub raters: usize,
}

impl MosReport {
    pub fn from_ratings(rows: &[Rating]) -> Result<Self> {
        let all: Vec<f64> = rows.iter().map(|r| r.rating as f64).collect();
        let overall = mos_stat(&all).ok_or_else(|| Error::Input("no ratings".into()))?;
        let mut by_sample: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in rows {
            by_sample
                .entry(&r.sample_id)
                .or_default()
                .push(r.rating as f64);
        }
        let per_sample = by_sample
            .into_iter()
            .map(|(id, v)| (id.to_string(), mos_stat(&v).unwrap()))
            .collect();
        let raters = rows
            .iter()
            .map(|r| &r.rater_id)
            .collect::<HashSet<_>>()
            .len();
        Ok(Self {
            overall,
            per_sample,
            raters,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_ratings(&parse_ratings(&text)?)
    }
}

impl fmt::Display for MosReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "MOS {} (n={} ratings, {} samples, {} raters)",
            self.overall,
            self.overall.n,
            self.per_sample.len(),
            self.raters
        )?;
        for (id, s) in &self.per_sample {
            writeln!(f, "  {id}: {s} (n={})", s.n)?;
        }
        Ok(())
    }
}
