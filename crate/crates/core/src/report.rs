//! Average / maximum / minimum tables: one row per test kind, one column per database.

use std::collections::HashMap;
use std::str::FromStr;

use serde_json::{json, Map, Value};

use crate::model::{test_matrix, DatabaseId, TestKind};
use crate::store::{AggregateStats, ResultStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?} (expected csv or json)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Average,
    Maximum,
    Minimum,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [Statistic::Average, Statistic::Maximum, Statistic::Minimum];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Average => "average",
            Statistic::Maximum => "maximum",
            Statistic::Minimum => "minimum",
        }
    }
}

/// Snapshot of the three tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Databases in order of first appearance in the log.
    pub columns: Vec<DatabaseId>,
    cells: HashMap<(DatabaseId, TestKind), AggregateStats>,
}

impl Report {
    pub fn from_store(store: &ResultStore) -> Self {
        let mut columns = store.databases_in_log_order();
        let cells: HashMap<_, _> = store
            .aggregates()
            .into_iter()
            .map(|a| ((a.database_id.clone(), a.test_kind), a))
            .collect();
        // Databases with only failed trials have nothing to show.
        columns.retain(|db| cells.keys().any(|(d, _)| d == db));
        Self { columns, cells }
    }

    pub fn cell(&self, stat: Statistic, db: &DatabaseId, kind: TestKind) -> Option<Value> {
        let a = self.cells.get(&(db.clone(), kind))?;
        Some(match stat {
            Statistic::Average => json!(a.mean_ms),
            Statistic::Maximum => json!(a.max_ms),
            Statistic::Minimum => json!(a.min_ms),
        })
    }

    fn cell_text(&self, stat: Statistic, db: &DatabaseId, kind: TestKind) -> String {
        match self.cells.get(&(db.clone(), kind)) {
            None => String::new(),
            Some(a) => match stat {
                Statistic::Average => format!("{:.1}", a.mean_ms),
                Statistic::Maximum => a.max_ms.to_string(),
                Statistic::Minimum => a.min_ms.to_string(),
            },
        }
    }

    /// One RFC 4180 document: `table,test_kind,<db>...`, average rows first, then maximum, then minimum.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        let mut header = vec!["table".to_string(), "test_kind".to_string()];
        header.extend(self.columns.iter().map(ToString::to_string));
        w.write_record(&header).expect("in-memory write");
        for stat in Statistic::ALL {
            for kind in test_matrix() {
                let mut row = vec![stat.name().to_string(), kind.to_string()];
                row.extend(self.columns.iter().map(|db| self.cell_text(stat, db, kind)));
                w.write_record(&row).expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// `{"columns": [...], "average": [{"test_kind": .., "<db>": value|null}], "maximum": .., "minimum": ..}`
    pub fn to_json(&self) -> Value {
        let mut out = Map::new();
        out.insert("columns".into(), json!(self.columns));
        for stat in Statistic::ALL {
            let rows: Vec<Value> = test_matrix()
                .into_iter()
                .map(|kind| {
                    let mut row = Map::new();
                    row.insert("test_kind".into(), json!(kind));
                    for db in &self.columns {
                        row.insert(
                            db.to_string(),
                            self.cell(stat, db, kind).unwrap_or(Value::Null),
                        );
                    }
                    Value::Object(row)
                })
                .collect();
            out.insert(stat.name().into(), Value::Array(rows));
        }
        Value::Object(out)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(&self.to_json()).expect("serializes");
                s.push('\n');
                s
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::StoreOptions;
    use crate::trial::{Outcome, TrialResult};
    use chrono::Utc;

    fn add(store: &ResultStore, id: &str, db: &str, kind: TestKind, ms: u64) {
        store
            .append(TrialResult {
                trial_id: id.into(),
                run_id: "r".into(),
                database_id: DatabaseId::new(db).unwrap(),
                test_kind: kind,
                elapsed_ms: ms,
                started_at: Utc::now(),
                location: None,
                outcome: Outcome::Success,
                cache_hit: false,
            })
            .unwrap();
    }

    #[test]
    fn empty_report_has_blank_rows() {
        let store = ResultStore::in_memory(StoreOptions::default());
        let csv = Report::from_store(&store).to_csv();
        let lines: Vec<&str> = csv.split("\r\n").filter(|l| !l.is_empty()).collect();
        assert_eq!(lines.len(), 19);
        assert_eq!(lines[0], "table,test_kind");
        assert_eq!(lines[1], "average,upload_small");
    }

    #[test]
    fn columns_follow_log_order() {
        let store = ResultStore::in_memory(StoreOptions::default());
        add(&store, "1", "zeta", TestKind::UPLOAD_SMALL, 10);
        add(&store, "2", "alpha", TestKind::UPLOAD_SMALL, 20);
        add(&store, "3", "zeta", TestKind::UPLOAD_SMALL, 15);
        let r = Report::from_store(&store);
        assert_eq!(r.columns, vec![DatabaseId::new("zeta").unwrap(), DatabaseId::new("alpha").unwrap()]);
        let csv = r.to_csv();
        assert!(csv.contains("average,upload_small,12.5,20.0\r\n"), "{csv}");
        assert!(csv.contains("maximum,upload_small,15,20\r\n"));
        assert!(csv.contains("minimum,upload_small,10,20\r\n"));
        assert!(csv.contains("average,upload_large,,\r\n"));
        let j = r.to_json();
        assert_eq!(j["average"][0]["zeta"], 12.5);
        assert!(j["average"][1]["zeta"].is_null());
        assert_eq!(j["minimum"][0]["alpha"], 20);
    }

    #[test]
    fn format_parsing() {
        assert_eq!("csv".parse::<ReportFormat>(), Ok(ReportFormat::Csv));
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
