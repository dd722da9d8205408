use std::io;

use super::StopError;
use crate::search_space::ArchParams;

/// Softmax mass of each operation averaged over all compound edges.
pub fn magnitude(arch: &ArchParams) -> Vec<f64> {
    let mut m = vec![0.0; arch.num_ops()];
    let mix = arch.mixture_weights();
    for row in &mix {
        for (acc, w) in m.iter_mut().zip(row) {
            *acc += w;
        }
    }
    let n = mix.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Magnitude vectors for epochs `1..=T`, columns in op-set order.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeTrace {
    op_names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl MagnitudeTrace {
    pub fn new(op_names: Vec<String>) -> Self {
        Self {
            op_names,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(op_names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, StopError> {
        let mut t = Self::new(op_names);
        for r in rows {
            t.push(r)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<(), StopError> {
        if row.len() != self.op_names.len() {
            return Err(StopError::Domain(format!(
                "magnitude row has {} entries, expected {}",
                row.len(),
                self.op_names.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn op_names(&self) -> &[String] {
        &self.op_names
    }

    pub fn num_ops(&self) -> usize {
        self.op_names.len()
    }

    /// Number of recorded epochs.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Row for a 1-based epoch.
    pub fn at(&self, epoch: usize) -> Option<&[f64]> {
        epoch
            .checked_sub(1)
            .and_then(|i| self.rows.get(i))
            .map(Vec::as_slice)
    }

    pub fn op_index(&self, op: &str) -> Result<usize, StopError> {
        self.op_names
            .iter()
            .position(|n| n == op)
            .ok_or_else(|| StopError::Domain(format!("unknown operation {op:?} in trace")))
    }

    /// Largest `|Σ_o m(t,o) − 1|` over the trace.
    pub fn max_normalization_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["epoch".to_string()];
        header.extend(self.op_names.iter().cloned());
        out.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            out.write_record(
                std::iter::once((i + 1).to_string()).chain(r.iter().map(|v| v.to_string())),
            )?;
        }
        out.flush()?;
        Ok(())
    }

    /// Parses the CSV layout written by [`MagnitudeTrace::write_csv`]; epochs
    /// must run 1, 2, ... without gaps.
    pub fn read_csv<R: io::Read>(r: R) -> Result<Self, StopError> {
        let bad = |e: csv::Error| StopError::Domain(format!("magnitude csv: {e}"));
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(bad)?.clone();
        if header.get(0) != Some("epoch") {
            return Err(StopError::Domain(
                "magnitude csv must start with an epoch column".into(),
            ));
        }
        let mut trace = Self::new(header.iter().skip(1).map(str::to_string).collect());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(bad)?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| StopError::Domain(format!("magnitude csv value {s:?}: {e}")))
            };
            let epoch: usize = rec[0]
                .parse()
                .map_err(|_| StopError::Domain(format!("bad epoch {:?}", &rec[0])))?;
            if epoch != i + 1 {
                return Err(StopError::Domain(format!(
                    "magnitude csv epoch {epoch} out of sequence"
                )));
            }
            trace.push(rec.iter().skip(1).map(parse).collect::<Result<_, _>>()?)?;
        }
        Ok(trace)
    }
}
