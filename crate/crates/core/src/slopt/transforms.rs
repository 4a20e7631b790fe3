use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::alm::{alm_solve, AlmConfig, TransformResult};
use crate::error::{Error, Result};
use crate::sampler::ChainRecord;

/// Per-draw transforms plus, once aligned, one permutation per draw.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransformTable {
    pub results: Vec<TransformResult>,
    /// `perm[h]` is the template label assigned to latent measure `h`.
    pub permutations: Option<Vec<Vec<usize>>>,
}

/// Solves every draw. Draws are split into chunks processed in parallel; within
/// a chunk each solve warm-starts from the previous draw's `Q`.
pub fn postprocess_chain(chain: &ChainRecord, cfg: &AlmConfig, chunk: usize) -> Result<TransformTable> {
    if chain.is_empty() {
        return Err(Error::Input("chain has no draws".into()));
    }
    cfg.validate()?;
    let chunk = chunk.max(1);
    let parts: Vec<Result<Vec<TransformResult>>> = chain
        .draws
        .par_chunks(chunk)
        .map(|draws| {
            let mut out: Vec<TransformResult> = Vec::with_capacity(draws.len());
            for draw in draws {
                let corm = draw.corm()?;
                let lambda = draw.loadings()?;
                let warm = out.last().map(|r| &r.q).filter(|q| q.nrows() == draw.n_latent());
                let mut res = alm_solve(&corm, &lambda, cfg, warm)?;
                if !res.success && warm.is_some() {
                    let cold = alm_solve(&corm, &lambda, cfg, None)?;
                    if cold.success || cold.loss < res.loss {
                        res = cold;
                    }
                }
                out.push(res);
            }
            Ok(out)
        })
        .collect();
    let mut results = Vec::with_capacity(chain.len());
    for p in parts {
        results.extend(p?);
    }
    Ok(TransformTable {
        results,
        permutations: None,
    })
}

impl TransformTable {
    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    pub fn success_rate(&self) -> f64 {
        self.results.iter().filter(|r| r.success).count() as f64 / self.len().max(1) as f64
    }

    pub fn max_det_dev(&self) -> f64 {
        self.results.iter().map(|r| r.max_det_dev).fold(0.0, f64::max)
    }

    fn n_latent(&self) -> Result<usize> {
        let h = self.results.first().map_or(0, |r| r.q.nrows());
        if self.results.iter().any(|r| r.q.nrows() != h) {
            return Err(Error::Dimension("transforms change size across draws".into()));
        }
        Ok(h)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let h = self.n_latent()?;
        let mut header = vec!["draw".to_string()];
        for r in 0..h {
            header.extend((0..h).map(|c| format!("q_{r}_{c}")));
        }
        header.extend(
            ["loss", "loss_identity", "max_violation", "max_det_dev", "converged", "success", "outer_iterations", "inner_iterations"]
                .map(String::from),
        );
        if let Some(perms) = &self.permutations {
            if perms.len() != self.len() || perms.iter().any(|p| p.len() != h) {
                return Err(Error::Dimension("permutations do not match the transforms".into()));
            }
            header.extend((0..h).map(|c| format!("perm_{c}")));
        }
        let io = |e| Error::io("transforms.csv", e);
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for (d, r) in self.results.iter().enumerate() {
            let mut row = vec![d.to_string()];
            for i in 0..h {
                row.extend((0..h).map(|c| r.q[(i, c)].to_string()));
            }
            row.push(r.loss.to_string());
            row.push(r.loss_identity.to_string());
            row.push(r.max_violation.to_string());
            row.push(r.max_det_dev.to_string());
            row.push(u8::from(r.converged).to_string());
            row.push(u8::from(r.success).to_string());
            row.push(r.outer_iterations.to_string());
            row.push(r.inner_iterations.to_string());
            if let Some(perms) = &self.permutations {
                row.extend(perms[d].iter().map(usize::to_string));
            }
            writeln!(out, "{}", row.join(",")).map_err(io)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run `postprocess` first to produce transforms.csv".into(),
            });
        }
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        let nq = header.iter().filter(|n| n.starts_with("q_")).count();
        let h = (nq as f64).sqrt().round() as usize;
        let has_perm = header.iter().any(|n| n.starts_with("perm_"));
        if h * h != nq || header.len() != 1 + nq + 8 + if has_perm { h } else { 0 } {
            return Err(Error::Input(format!("{} header has unexpected layout", path.display())));
        }
        let bad = |row: usize| Error::Input(format!("{} row {} is malformed", path.display(), row + 2));
        let mut results = Vec::new();
        let mut perms = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(row));
            let u = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(row));
            let qv = (0..nq).map(|i| f(1 + i)).collect::<Result<Vec<_>>>()?;
            let b = 1 + nq;
            results.push(TransformResult {
                q: DMatrix::from_row_slice(h, h, &qv),
                loss: f(b)?,
                loss_identity: f(b + 1)?,
                max_violation: f(b + 2)?,
                max_det_dev: f(b + 3)?,
                converged: u(b + 4)? == 1,
                success: u(b + 5)? == 1,
                outer_iterations: u(b + 6)?,
                inner_iterations: u(b + 7)?,
            });
            if has_perm {
                perms.push((0..h).map(|i| u(b + 8 + i)).collect::<Result<Vec<_>>>()?);
            }
        }
        Ok(Self {
            results,
            permutations: has_perm.then_some(perms),
        })
    }
}
