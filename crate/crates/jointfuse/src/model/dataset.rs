//! In-memory dataset: one survival record per subject plus that subject's
//! longitudinal rows. Mirrors the two-file CSV layout (`long.csv`,
//! `surv.csv`) used by the command-line tool.

use std::collections::HashMap;
use std::path::Path;

use super::ModelError;

/// One longitudinal visit row: time, covariates, and an optional value per
/// marker (None = empty cell, the marker was not measured at this visit).
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerSeries {
    pub time: f64,
    pub covariates: Vec<f64>,
    pub values: Vec<Option<f64>>,
}

/// One subject: survival outcome, baseline covariates, visit rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub id: String,
    pub event_time: f64,
    /// 0 = censored; 1..=causes = event by cause.
    pub status: usize,
    /// Aligned with `Dataset::surv_covariates`.
    pub covariates: Vec<f64>,
    pub rows: Vec<MarkerSeries>,
}

/// Full dataset with column-name metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub marker_names: Vec<String>,
    /// Covariate columns available on longitudinal rows.
    pub long_covariates: Vec<String>,
    /// Covariate columns available on survival records.
    pub surv_covariates: Vec<String>,
    pub subjects: Vec<SubjectData>,
    /// Longitudinal rows discarded because their time exceeded the
    /// subject's event time.
    pub dropped_post_event_rows: usize,
}

impl Dataset {
    /// Assembles a dataset, dropping (and counting) longitudinal rows dated
    /// after their subject's event time.
    pub fn new(
        marker_names: Vec<String>,
        long_covariates: Vec<String>,
        surv_covariates: Vec<String>,
        mut subjects: Vec<SubjectData>,
    ) -> Dataset {
        let mut dropped = 0;
        for s in &mut subjects {
            let before = s.rows.len();
            let cutoff = s.event_time;
            s.rows.retain(|r| r.time <= cutoff);
            dropped += before - s.rows.len();
        }
        Dataset {
            marker_names,
            long_covariates,
            surv_covariates,
            subjects,
            dropped_post_event_rows: dropped,
        }
    }

    /// Dataset with the right shape but no subjects (prior-only runs).
    pub fn empty(marker_names: Vec<String>) -> Dataset {
        Dataset {
            marker_names,
            long_covariates: vec![],
            surv_covariates: vec![],
            subjects: vec![],
            dropped_post_event_rows: 0,
        }
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Largest observed event time among subjects with an event (any cause);
    /// None when nobody had an event.
    pub fn max_observed_event_time(&self) -> Option<f64> {
        self.subjects
            .iter()
            .filter(|s| s.status > 0)
            .map(|s| s.event_time)
            .fold(None, |acc, t| Some(acc.map_or(t, |a: f64| a.max(t))))
    }

    /// Reads `long.csv` and `surv.csv` from a directory. Both files need
    /// headers; `long.csv` needs `id` and `time` columns, `surv.csv` needs
    /// `id`, `time`, and `status`. Columns listed in `marker_names` are the
    /// marker values; all other non-reserved columns become covariates.
    /// Empty cells are missing marker values (markers) or NaN (covariates).
    pub fn from_dir(dir: &Path, marker_names: &[String]) -> Result<Dataset, ModelError> {
        let long_path = dir.join("long.csv");
        let surv_path = dir.join("surv.csv");
        let mut surv = csv::Reader::from_path(&surv_path)
            .map_err(|e| ModelError::Data(format!("{}: {e}", surv_path.display())))?;
        let surv_headers: Vec<String> = surv
            .headers()
            .map_err(|e| ModelError::Data(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let need = |hs: &[String], name: &str, table: &str| -> Result<usize, ModelError> {
            hs.iter()
                .position(|h| h == name)
                .ok_or_else(|| ModelError::MissingColumn {
                    table: table.into(),
                    column: name.into(),
                })
        };
        let s_id = need(&surv_headers, "id", "surv.csv")?;
        let s_time = need(&surv_headers, "time", "surv.csv")?;
        let s_status = need(&surv_headers, "status", "surv.csv")?;
        let surv_cov_idx: Vec<usize> = (0..surv_headers.len())
            .filter(|&i| i != s_id && i != s_time && i != s_status)
            .collect();
        let surv_covariates: Vec<String> = surv_cov_idx
            .iter()
            .map(|&i| surv_headers[i].clone())
            .collect();

        let mut subjects = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (line, rec) in surv.records().enumerate() {
            let rec = rec.map_err(|e| ModelError::Data(e.to_string()))?;
            let id = rec.get(s_id).unwrap_or("").to_string();
            if id.is_empty() {
                return Err(ModelError::Data(format!(
                    "surv.csv record {}: empty id",
                    line + 2
                )));
            }
            if index.contains_key(&id) {
                return Err(ModelError::Data(format!(
                    "surv.csv: duplicate subject id `{id}`"
                )));
            }
            let event_time = parse_f64(rec.get(s_time), "surv.csv", "time", &id)?;
            let status_raw = parse_f64(rec.get(s_status), "surv.csv", "status", &id)?;
            if status_raw < 0.0 || status_raw.fract() != 0.0 {
                return Err(ModelError::InvalidSubject {
                    subject: id,
                    message: format!("status must be a nonnegative integer, got {status_raw}"),
                });
            }
            let covariates = surv_cov_idx
                .iter()
                .map(|&i| parse_opt_f64(rec.get(i)))
                .collect();
            index.insert(id.clone(), subjects.len());
            subjects.push(SubjectData {
                id,
                event_time,
                status: status_raw as usize,
                covariates,
                rows: vec![],
            });
        }

        let mut long = csv::Reader::from_path(&long_path)
            .map_err(|e| ModelError::Data(format!("{}: {e}", long_path.display())))?;
        let long_headers: Vec<String> = long
            .headers()
            .map_err(|e| ModelError::Data(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let l_id = need(&long_headers, "id", "long.csv")?;
        let l_time = need(&long_headers, "time", "long.csv")?;
        for name in marker_names {
            need(&long_headers, name, "long.csv")?;
        }
        let marker_idx: Vec<usize> = marker_names
            .iter()
            .map(|m| long_headers.iter().position(|h| h == m).unwrap())
            .collect();
        let long_cov_idx: Vec<usize> = (0..long_headers.len())
            .filter(|&i| i != l_id && i != l_time && !marker_idx.contains(&i))
            .collect();
        let long_covariates: Vec<String> = long_cov_idx
            .iter()
            .map(|&i| long_headers[i].clone())
            .collect();

        for rec in long.records() {
            let rec = rec.map_err(|e| ModelError::Data(e.to_string()))?;
            let id = rec.get(l_id).unwrap_or("");
            let Some(&subject_pos) = index.get(id) else {
                return Err(ModelError::Data(format!(
                    "long.csv: subject `{id}` has no surv.csv record"
                )));
            };
            let time = parse_f64(rec.get(l_time), "long.csv", "time", id)?;
            let covariates = long_cov_idx
                .iter()
                .map(|&i| parse_opt_f64(rec.get(i)))
                .collect();
            let values = marker_idx
                .iter()
                .map(|&i| match rec.get(i) {
                    None | Some("") => None,
                    Some(v) => v.trim().parse::<f64>().ok(),
                })
                .collect();
            subjects[subject_pos].rows.push(MarkerSeries {
                time,
                covariates,
                values,
            });
        }

        Ok(Dataset::new(
            marker_names.to_vec(),
            long_covariates,
            surv_covariates,
            subjects,
        ))
    }
}

impl Dataset {
    /// Writes `long.csv` and `surv.csv` into a directory. Inverse of
    /// `from_dir`: floats use the shortest round-trip representation, missing
    /// marker values become empty cells.
    pub fn write_dir(&self, dir: &Path) -> Result<(), ModelError> {
        let io_err = |p: &Path, e: csv::Error| ModelError::Data(format!("{}: {e}", p.display()));
        let surv_path = dir.join("surv.csv");
        let mut surv = csv::Writer::from_path(&surv_path).map_err(|e| io_err(&surv_path, e))?;
        let mut header = vec!["id".to_string(), "time".into(), "status".into()];
        header.extend(self.surv_covariates.iter().cloned());
        surv.write_record(&header).map_err(|e| io_err(&surv_path, e))?;
        for s in &self.subjects {
            let mut rec = vec![s.id.clone(), s.event_time.to_string(), s.status.to_string()];
            rec.extend(s.covariates.iter().map(f64::to_string));
            surv.write_record(&rec).map_err(|e| io_err(&surv_path, e))?;
        }
        surv.flush()
            .map_err(|e| ModelError::Data(format!("{}: {e}", surv_path.display())))?;

        let long_path = dir.join("long.csv");
        let mut long = csv::Writer::from_path(&long_path).map_err(|e| io_err(&long_path, e))?;
        let mut header = vec!["id".to_string(), "time".into()];
        header.extend(self.marker_names.iter().cloned());
        header.extend(self.long_covariates.iter().cloned());
        long.write_record(&header).map_err(|e| io_err(&long_path, e))?;
        for s in &self.subjects {
            for row in &s.rows {
                let mut rec = vec![s.id.clone(), row.time.to_string()];
                rec.extend(
                    row.values
                        .iter()
                        .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
                );
                rec.extend(row.covariates.iter().map(f64::to_string));
                long.write_record(&rec).map_err(|e| io_err(&long_path, e))?;
            }
        }
        long.flush()
            .map_err(|e| ModelError::Data(format!("{}: {e}", long_path.display())))
    }
}

fn parse_f64(
    field: Option<&str>,
    table: &str,
    column: &str,
    subject: &str,
) -> Result<f64, ModelError> {
    let raw = field.unwrap_or("").trim();
    raw.parse::<f64>().map_err(|_| ModelError::InvalidSubject {
        subject: subject.to_string(),
        message: format!("{table}: cannot parse {column} value `{raw}`"),
    })
}

fn parse_opt_f64(field: Option<&str>) -> f64 {
    match field.map(str::trim) {
        None | Some("") => f64::NAN,
        Some(v) => v.parse::<f64>().unwrap_or(f64::NAN),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_pair(dir: &Path, long: &str, surv: &str) {
        let mut f = std::fs::File::create(dir.join("long.csv")).unwrap();
        f.write_all(long.as_bytes()).unwrap();
        let mut f = std::fs::File::create(dir.join("surv.csv")).unwrap();
        f.write_all(surv.as_bytes()).unwrap();
    }

    #[test]
    fn reads_two_file_layout_and_drops_post_event_rows() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(
            dir.path(),
            "id,time,y,x1\n\
             a,0.0,1.5,1\n\
             a,0.5,2.0,1\n\
             a,1.5,9.9,1\n\
             b,0.0,,0\n\
             b,0.2,0.7,0\n",
            "id,time,status,w1\n\
             a,1.0,1,0.3\n\
             b,2.0,0,-0.1\n",
        );
        let data = Dataset::from_dir(dir.path(), &["y".into()]).unwrap();
        assert_eq!(data.n_subjects(), 2);
        assert_eq!(data.dropped_post_event_rows, 1);
        assert_eq!(data.long_covariates, vec!["x1".to_string()]);
        assert_eq!(data.surv_covariates, vec!["w1".to_string()]);
        let a = &data.subjects[0];
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.status, 1);
        // Missing marker cell stays None.
        let b = &data.subjects[1];
        assert_eq!(b.rows[0].values[0], None);
        assert_eq!(b.rows[1].values[0], Some(0.7));
        assert_eq!(data.max_observed_event_time(), Some(1.0));
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let data = Dataset::new(
            vec!["y".into(), "counts".into()],
            vec!["x1".into()],
            vec!["w1".into()],
            vec![
                SubjectData {
                    id: "1".into(),
                    event_time: 1.0 / 3.0,
                    status: 1,
                    covariates: vec![0.1 + 0.2],
                    rows: vec![
                        MarkerSeries {
                            time: 0.0,
                            covariates: vec![1.0],
                            values: vec![Some(2.0f64.sqrt()), None],
                        },
                        MarkerSeries {
                            time: 0.2,
                            covariates: vec![1.0],
                            values: vec![None, Some(3.0)],
                        },
                    ],
                },
                SubjectData {
                    id: "2".into(),
                    event_time: 2.0,
                    status: 0,
                    covariates: vec![-7.25e-12],
                    rows: vec![],
                },
            ],
        );
        data.write_dir(dir.path()).unwrap();
        let back = Dataset::from_dir(dir.path(), &data.marker_names).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn missing_required_columns_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "id,time,y\n", "id,time\n");
        let err = Dataset::from_dir(dir.path(), &["y".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("status"), "{msg}");
    }

    #[test]
    fn long_rows_without_survival_record_fail() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(
            dir.path(),
            "id,time,y\nzzz,0.0,1.0\n",
            "id,time,status\naaa,1.0,1\n",
        );
        let err = Dataset::from_dir(dir.path(), &["y".into()]).unwrap_err();
        assert!(err.to_string().contains("zzz"));
    }
}
