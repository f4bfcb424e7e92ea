//! PSNR evaluation and the Mean/Median/Min/Max report.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::Example;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

/// Reported in place of +inf for a perfect reconstruction.
pub const PSNR_CAP: f64 = 99.0;

/// `10 log10(1 / MSE)` on predictions clamped to `[0, 1]`, capped at
/// [`PSNR_CAP`].
pub fn psnr(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
    target.expect_shape(pred.shape(), "psnr target")?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.clamp(0.0, 1.0) as f64 - t as f64;
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sum / pred.data().len() as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub scores: Vec<ImageScore>,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

const ROWS: [&str; 4] = ["Mean", "Median", "Min", "Max"];

impl EvalReport {
    pub fn from_scores(scores: Vec<ImageScore>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::config("evaluation set is empty"));
        }
        let mut sorted: Vec<f64> = scores.iter().map(|s| s.psnr).collect();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Ok(EvalReport {
            mean: sorted.iter().sum::<f64>() / n as f64,
            median,
            min: sorted[0],
            max: sorted[n - 1],
            scores,
        })
    }

    pub fn statistics(&self) -> [(&'static str, f64); 4] {
        [
            (ROWS[0], self.mean),
            (ROWS[1], self.median),
            (ROWS[2], self.min),
            (ROWS[3], self.max),
        ]
    }

    /// Writes `statistic,psnr_db` rows followed by `image:<id>,psnr_db` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Format(format!("writing report: {e}"));
        wr.write_record(["statistic", "psnr_db"]).map_err(err)?;
        for (name, v) in self.statistics() {
            wr.write_record([name.to_string(), format!("{v:?}")])
                .map_err(err)?;
        }
        for s in &self.scores {
            wr.write_record([format!("image:{}", s.id), format!("{:?}", s.psnr)])
                .map_err(err)?;
        }
        wr.flush()
            .map_err(|e| Error::Format(format!("writing report: {e}")))?;
        Ok(())
    }

    /// Parses [`write_csv`](Self::write_csv) output. Per-image rows rebuild
    /// the report; the stored statistics must agree with them.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut stats = Vec::new();
        let mut scores = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let line = i as u64 + 2;
            let bad = |m: String| Error::Format(format!("report line {line}: {m}"));
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let (Some(key), Some(val)) = (rec.get(0), rec.get(1)) else {
                return Err(bad("expected two fields".into()));
            };
            let v: f64 = val
                .trim()
                .parse()
                .map_err(|_| bad(format!("psnr_db {val:?} is not a number")))?;
            match key.strip_prefix("image:") {
                Some(id) => scores.push(ImageScore {
                    id: id.to_string(),
                    psnr: v,
                }),
                None => stats.push((key.to_string(), v)),
            }
        }
        let report = Self::from_scores(scores)?;
        for (name, v) in report.statistics() {
            match stats.iter().find(|(k, _)| k == name) {
                Some((_, stored)) if *stored == v => {}
                Some((_, stored)) => {
                    return Err(Error::Format(format!(
                        "{name} row says {stored} but per-image scores give {v}"
                    )))
                }
                None => return Err(Error::Format(format!("report has no {name} row"))),
            }
        }
        Ok(report)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "+--------+-----------+")?;
        writeln!(f, "| PSNR   |        dB |")?;
        writeln!(f, "+--------+-----------+")?;
        for (name, v) in self.statistics() {
            writeln!(f, "| {name:<6} | {v:>9.3} |")?;
        }
        write!(f, "+--------+-----------+ ({} images)", self.scores.len())
    }
}

/// Full-image predictions scored against their targets.
pub fn evaluate(params: &ModelParams<f32>, examples: &[Example]) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(examples.len());
    for ex in examples {
        let pred = params.forward_full(&ex.input)?;
        scores.push(ImageScore {
            id: ex.id.clone(),
            psnr: psnr(&pred, &ex.target)?,
        });
    }
    EvalReport::from_scores(scores)
}
