//! Ensemble reports: CSV tables with fixed headers and a versioned JSON summary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const RECORD_HEADERS: [&str; 7] = ["experiment", "config_hash", "seed", "epsilon", "key", "metric", "value"];
pub const VERDICT_HEADERS: [&str; 7] = ["criterion", "name", "check", "passed", "value", "tolerance", "config_hash"];

/// Acceptance criteria.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criterion {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    C7,
    C8,
    C9,
    C10,
}

impl Criterion {
    pub const ALL: [Criterion; 10] = [Self::C1, Self::C2, Self::C3, Self::C4, Self::C5, Self::C6, Self::C7, Self::C8, Self::C9, Self::C10];

    pub fn name(&self) -> &'static str {
        match self {
            Self::C1 => "corrector residual suite",
            Self::C2 => "closed-form effective coefficient",
            Self::C3 => "CLT variance oracle",
            Self::C4 => "zero-limit degeneracies",
            Self::C5 => "Z cancellation",
            Self::C6 => "initial-layer decay",
            Self::C7 => "homogenization rate",
            Self::C8 => "normalization boundedness",
            Self::C9 => "law test",
            Self::C10 => "Lambda-variant arbitration",
        }
    }

    pub fn id(&self) -> String {
        format!("{self:?}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: Criterion,
    pub check: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub experiment: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub key: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub key: String,
    pub epsilon: Option<f64>,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub ci: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub key: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
}

/// A named CSV table beyond the record table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub schema_version: u32,
    pub experiment: String,
    pub provenance: Vec<Provenance>,
    pub records: Vec<Record>,
    pub aggregates: Vec<Aggregate>,
    pub fits: Vec<RateFit>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<Table>,
}

impl EnsembleReport {
    pub fn new(experiment: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.into(),
            provenance: vec![Provenance { config_hash: config_hash.into(), seed, crate_version: env!("CARGO_PKG_VERSION").into() }],
            records: Vec::new(),
            aggregates: Vec::new(),
            fits: Vec::new(),
            verdicts: Vec::new(),
            notes: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn config_hash(&self) -> &str {
        &self.provenance[0].config_hash
    }

    pub fn record(&mut self, seed: Option<u64>, epsilon: Option<f64>, key: &str, metric: &str, value: f64) {
        let config_hash = self.config_hash().to_string();
        self.records.push(Record { experiment: self.experiment.clone(), config_hash, seed, epsilon, key: key.into(), metric: metric.into(), value });
    }

    pub fn verdict(&mut self, criterion: Criterion, check: &str, passed: bool, value: f64, tolerance: &str) {
        let config_hash = self.config_hash().to_string();
        self.verdicts.push(Verdict { criterion, check: check.into(), passed, value, tolerance: tolerance.into(), config_hash });
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    /// Pass state per criterion present in the report.
    pub fn criteria(&self) -> Vec<(Criterion, bool)> {
        let mut out: Vec<(Criterion, bool)> = Vec::new();
        for c in Criterion::ALL {
            let vs: Vec<&Verdict> = self.verdicts.iter().filter(|v| v.criterion == c).collect();
            if !vs.is_empty() {
                out.push((c, vs.iter().all(|v| v.passed)));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s).map_err(|e| Error::Config(format!("report: {e}")))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("report schema {} (expected {SCHEMA_VERSION})", r.schema_version)));
        }
        Ok(r)
    }

    fn records_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(RECORD_HEADERS).map_err(csv_err)?;
        for r in &self.records {
            let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
            let eps = r.epsilon.map(|e| e.to_string()).unwrap_or_default();
            w.write_record([r.experiment.as_str(), &r.config_hash, &seed, &eps, &r.key, &r.metric, &r.value.to_string()]).map_err(csv_err)?;
        }
        finish(w)
    }

    fn verdicts_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(VERDICT_HEADERS).map_err(csv_err)?;
        for v in &self.verdicts {
            w.write_record([v.criterion.id().as_str(), v.criterion.name(), &v.check, &v.passed.to_string(), &v.value.to_string(), &v.tolerance, &v.config_hash]).map_err(csv_err)?;
        }
        finish(w)
    }

    fn table_csv(&self, t: &Table) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut headers = t.headers.clone();
        headers.push("config_hash".into());
        w.write_record(&headers).map_err(csv_err)?;
        for row in &t.rows {
            let mut row = row.clone();
            row.push(self.config_hash().into());
            w.write_record(&row).map_err(csv_err)?;
        }
        finish(w)
    }

    /// Write `<experiment>.json`, `<experiment>.csv`, `<experiment>_verdicts.csv`
    /// and one CSV per extra table.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = vec![
            (dir.join(format!("{}.json", self.experiment)), self.to_json()),
            (dir.join(format!("{}.csv", self.experiment)), self.records_csv()?),
            (dir.join(format!("{}_verdicts.csv", self.experiment)), self.verdicts_csv()?),
        ];
        for t in &self.tables {
            files.push((dir.join(format!("{}_{}.csv", self.experiment, t.name)), self.table_csv(t)?));
        }
        for (p, s) in &files {
            std::fs::write(p, s)?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }

    /// Concatenate several summaries.
    pub fn merge(reports: &[EnsembleReport]) -> EnsembleReport {
        let mut out = EnsembleReport {
            schema_version: SCHEMA_VERSION,
            experiment: "merged".into(),
            provenance: Vec::new(),
            records: Vec::new(),
            aggregates: Vec::new(),
            fits: Vec::new(),
            verdicts: Vec::new(),
            notes: Vec::new(),
            tables: Vec::new(),
        };
        for r in reports {
            for p in &r.provenance {
                if !out.provenance.contains(p) {
                    out.provenance.push(p.clone());
                }
            }
            out.records.extend(r.records.iter().cloned());
            out.aggregates.extend(r.aggregates.iter().cloned());
            out.fits.extend(r.fits.iter().cloned());
            out.verdicts.extend(r.verdicts.iter().cloned());
            out.notes.extend(r.notes.iter().map(|n| format!("{}: {n}", r.experiment)));
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}
