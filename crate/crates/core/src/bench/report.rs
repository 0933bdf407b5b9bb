use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Where a report came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub profile: String,
    pub seed: u64,
    /// `simulated` for the virtual device; reserved for measured backends.
    pub backend: String,
}

impl Environment {
    pub fn simulated(profile: &str, seed: u64) -> Self {
        Environment { profile: profile.to_string(), seed, backend: "simulated".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport<R> {
    pub suite: String,
    pub environment: Environment,
    pub rows: Vec<R>,
    /// Scalar results derived from the rows.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub summary: BTreeMap<String, f64>,
}

/// A report row with a fixed CSV layout.
pub trait CsvRow {
    fn header() -> Vec<&'static str>;
    fn record(&self) -> Vec<String>;
}

impl<R> BenchReport<R> {
    pub fn new(suite: &str, environment: Environment, rows: Vec<R>) -> Self {
        BenchReport { suite: suite.to_string(), environment, rows, summary: BTreeMap::new() }
    }
}

impl<R: CsvRow> BenchReport<R> {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(R::header())?;
        for row in &self.rows {
            wtr.write_record(row.record())?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("in-memory csv");
        String::from_utf8(out).expect("csv is utf-8")
    }
}

impl<R: Serialize> BenchReport<R> {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
