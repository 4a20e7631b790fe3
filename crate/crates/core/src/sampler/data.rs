use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Observations split into `g` non-empty groups.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedData {
    labels: Vec<String>,
    groups: Vec<Vec<f64>>,
}

impl GroupedData {
    pub fn new(labels: Vec<String>, groups: Vec<Vec<f64>>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Input("data has no groups".into()));
        }
        if labels.len() != groups.len() {
            return Err(Error::Dimension(format!("{} labels for {} groups", labels.len(), groups.len())));
        }
        for (label, ys) in labels.iter().zip(&groups) {
            if ys.is_empty() {
                return Err(Error::Input(format!("group '{label}' is empty")));
            }
            if let Some(y) = ys.iter().find(|y| !y.is_finite()) {
                return Err(Error::Input(format!("group '{label}' holds non-finite value {y}")));
            }
        }
        Ok(Self { labels, groups })
    }

    /// Groups labelled `0..g−1`.
    pub fn from_groups(groups: Vec<Vec<f64>>) -> Result<Self> {
        let labels = (0..groups.len()).map(|j| j.to_string()).collect();
        Self::new(labels, groups)
    }

    /// Reads a `group,value` CSV; groups are numbered in order of first appearance.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || headers[0].trim() != "group" || headers[1].trim() != "value" {
            return Err(Error::Input(format!(
                "{} must have header 'group,value', found '{}'",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut groups: Vec<Vec<f64>> = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let label = rec[0].trim().to_string();
            let value: f64 = rec[1].trim().parse().map_err(|_| {
                Error::Input(format!("{} row {}: cannot parse value '{}'", path.display(), row + 2, &rec[1]))
            })?;
            let j = *index.entry(label.clone()).or_insert_with(|| {
                labels.push(label);
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[j].push(value);
        }
        Self::new(labels, groups)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["group", "value"])?;
        for (label, ys) in self.labels.iter().zip(&self.groups) {
            for y in ys {
                w.write_record([label.as_str(), &y.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, j: usize) -> &[f64] {
        &self.groups[j]
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn n_obs(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.groups.iter().flatten().copied()
    }

    pub fn mean(&self) -> f64 {
        self.values().sum::<f64>() / self.n_obs() as f64
    }

    /// Adds `N(0, sd²)` noise to every value, for discrete responses.
    pub fn jitter<R: Rng + ?Sized>(&mut self, sd: f64, rng: &mut R) -> Result<()> {
        let noise = Normal::new(0.0, sd).map_err(|_| Error::Domain(format!("jitter sd {sd} is invalid")))?;
        for ys in &mut self.groups {
            for y in ys.iter_mut() {
                *y += noise.sample(rng);
            }
        }
        Ok(())
    }
}
