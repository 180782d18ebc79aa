use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::StudyDesign;
use crate::ode::DoseEvent;

const COLUMNS: [&str; 5] = ["ID", "TIME", "Y", "AMT", "EVID"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("duplicate observation for subject {id} at t = {time}")]
    Duplicate { id: u64, time: f64 },
    #[error("non-finite value for subject {id} at t = {time}")]
    NonFinite { id: u64, time: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationRow {
    pub id: u64,
    pub time: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    pub design: Option<StudyDesign>,
}

/// One subject's observations and doses, time-sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: u64,
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub doses: Vec<DoseEvent>,
}

/// Long-format observations plus per-subject dosing. Rows are kept sorted
/// by (id, time); `(id, time)` pairs are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    rows: Vec<ObservationRow>,
    doses: BTreeMap<u64, Vec<DoseEvent>>,
    pub meta: DatasetMeta,
}

impl TrialDataset {
    pub fn new(
        mut rows: Vec<ObservationRow>,
        mut doses: BTreeMap<u64, Vec<DoseEvent>>,
        meta: DatasetMeta,
    ) -> Result<Self, DatasetError> {
        rows.sort_by(|a, b| a.id.cmp(&b.id).then(a.time.total_cmp(&b.time)));
        for r in &rows {
            if !(r.time.is_finite() && r.y.is_finite()) {
                return Err(DatasetError::NonFinite { id: r.id, time: r.time });
            }
        }
        if let Some(w) = rows.windows(2).find(|w| w[0].id == w[1].id && w[0].time == w[1].time) {
            return Err(DatasetError::Duplicate { id: w[0].id, time: w[0].time });
        }
        for (id, list) in doses.iter_mut() {
            if list.iter().any(|d| !(d.time.is_finite() && d.amount.is_finite())) {
                return Err(DatasetError::NonFinite { id: *id, time: f64::NAN });
            }
            list.sort_by(|a, b| a.time.total_cmp(&b.time));
        }
        doses.retain(|_, v| !v.is_empty());
        Ok(Self { rows, doses, meta })
    }

    pub fn rows(&self) -> &[ObservationRow] {
        &self.rows
    }

    pub fn n_observations(&self) -> usize {
        self.rows.len()
    }

    pub fn subject_ids(&self) -> Vec<u64> {
        let ids: BTreeSet<u64> = self.rows.iter().map(|r| r.id).chain(self.doses.keys().copied()).collect();
        ids.into_iter().collect()
    }

    /// Subjects sorted by id.
    pub fn subjects(&self) -> Vec<Subject> {
        self.subject_ids()
            .into_iter()
            .map(|id| {
                let (times, y) = self.rows.iter().filter(|r| r.id == id).map(|r| (r.time, r.y)).unzip();
                Subject { id, times, y, doses: self.doses.get(&id).cloned().unwrap_or_default() }
            })
            .collect()
    }

    /// Writes `ID,TIME,Y,AMT,EVID` with unused fields left empty. At equal times the observation row
    /// precedes the dose row, since observations record the pre-dose state.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DatasetError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(COLUMNS)?;
        for subj in self.subjects() {
            let mut events: Vec<(f64, u8, [String; 5])> = Vec::new();
            for (t, y) in subj.times.iter().zip(&subj.y) {
                events.push((*t, 0, [subj.id.to_string(), t.to_string(), y.to_string(), String::new(), "0".into()]));
            }
            for d in &subj.doses {
                events.push((
                    d.time,
                    1,
                    [subj.id.to_string(), d.time.to_string(), String::new(), d.amount.to_string(), "1".into()],
                ));
            }
            events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (_, _, rec) in events {
                out.write_record(&rec)?;
            }
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads the long format; unused fields may be empty or `.`. Dose rows get target compartment 0; the model
    /// re-targets them when simulating.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        let mut idx = [0usize; 5];
        for (k, col) in COLUMNS.iter().enumerate() {
            idx[k] = headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(col))
                .ok_or_else(|| DatasetError::MissingColumn((*col).to_string()))?;
        }
        let mut rows = Vec::new();
        let mut doses: BTreeMap<u64, Vec<DoseEvent>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let field = |k: usize| rec.get(idx[k]).unwrap_or("");
            let num = |k: usize| -> Result<f64, DatasetError> {
                field(k).parse::<f64>().map_err(|e| DatasetError::Parse {
                    line,
                    message: format!("{}: {:?}: {e}", COLUMNS[k], field(k)),
                })
            };
            let id: u64 = field(0)
                .parse()
                .map_err(|e| DatasetError::Parse { line, message: format!("ID: {:?}: {e}", field(0)) })?;
            let time = num(1)?;
            match field(4) {
                "0" => rows.push(ObservationRow { id, time, y: num(2)? }),
                "1" => doses.entry(id).or_default().push(DoseEvent { time, amount: num(3)?, target: 0 }),
                other => {
                    return Err(DatasetError::Parse { line, message: format!("EVID must be 0 or 1, got {other:?}") })
                }
            }
        }
        Self::new(rows, doses, DatasetMeta::default())
    }
}
