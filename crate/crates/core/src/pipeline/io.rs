use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Context, LoggedSample, StratifiedDataset};
use crate::error::{OpeError, Result};

use super::ClassificationDataset;

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    /// Zero-based column index.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
}

impl Default for LabelColumn {
    fn default() -> Self {
        LabelColumn::Name("label".into())
    }
}

pub fn load_csv_dataset(path: &Path, label: &LabelColumn, has_header: bool) -> Result<ClassificationDataset> {
    parse_csv_dataset(File::open(path)?, label, has_header)
}

/// Parses comma-separated rows. Labels are remapped to `0..l` in order of
/// first appearance; errors carry the 1-based line number.
pub fn parse_csv_dataset<R: Read>(reader: R, label: &LabelColumn, has_header: bool) -> Result<ClassificationDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let label_idx = match label {
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => {
            if !has_header {
                return Err(OpeError::Config(format!(
                    "label column '{name}' given by name but the file has no header"
                )));
            }
            let headers = rdr.headers()?;
            headers.iter().position(|h| h == name).ok_or_else(|| OpeError::Parse {
                row: 1,
                message: format!("no column named '{name}'"),
            })?
        }
    };

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut lookup: HashMap<String, usize> = HashMap::new();
    let mut width = None;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(OpeError::Parse {
                row: line,
                message: format!("expected {w} fields, found {}", record.len()),
            });
        }
        if label_idx >= w {
            return Err(OpeError::Parse {
                row: line,
                message: format!("label column {label_idx} out of range for {w} fields"),
            });
        }
        let mut row = Vec::with_capacity(w - 1);
        for (j, field) in record.iter().enumerate() {
            if j == label_idx {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| OpeError::Parse {
                row: line,
                message: format!("column {j}: not a number: '{field}'"),
            })?;
            if !v.is_finite() {
                return Err(OpeError::Parse {
                    row: line,
                    message: format!("column {j}: non-finite value"),
                });
            }
            row.push(v);
        }
        let raw = &record[label_idx];
        let next = names.len();
        let id = *lookup.entry(raw.to_string()).or_insert_with(|| {
            names.push(raw.to_string());
            next
        });
        features.push(row);
        labels.push(id);
    }
    if labels.is_empty() {
        return Err(OpeError::Parse {
            row: 1,
            message: "no data rows".into(),
        });
    }
    ClassificationDataset::with_names(features, labels, names)
}

/// Writes `x_0,…,x_{d−1},label` with a header row.
pub fn write_classification_csv<W: Write>(writer: W, data: &ClassificationDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x_{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (x, &y) in data.features().iter().zip(data.labels()) {
        let mut rec: Vec<String> = x.iter().map(f64::to_string).collect();
        rec.push(data.label_names()[y].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes logged samples as `k,s_0,…,s_{d−1},a,r` lines with a 1-based `k`.
pub fn write_bandit_records<W: Write>(writer: W, data: &StratifiedDataset) -> Result<()> {
    let d = data.dim().unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["k".to_string()];
    header.extend((0..d).map(|j| format!("s_{j}")));
    header.push("a".into());
    header.push("r".into());
    w.write_record(&header)?;
    for s in data.iter() {
        let mut rec = vec![(s.logger + 1).to_string()];
        rec.extend(s.context.features.iter().map(f64::to_string));
        rec.push(s.action.to_string());
        rec.push(s.reward.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the format of [`write_bandit_records`]. Contexts are numbered by row.
pub fn read_bandit_records<R: Read>(reader: R) -> Result<StratifiedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let w = header.len();
    if w < 3 || &header[0] != "k" || &header[w - 2] != "a" || &header[w - 1] != "r" {
        return Err(OpeError::Parse {
            row: 1,
            message: "expected header k,s_0,…,a,r".into(),
        });
    }
    let mut samples = Vec::new();
    let mut strata = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        let bad = |m: String| OpeError::Parse { row: line, message: m };
        let k: usize = record[0].parse().map_err(|_| bad(format!("bad stratum '{}'", &record[0])))?;
        if k == 0 {
            return Err(bad("strata are numbered from 1".into()));
        }
        let features = (1..w - 2)
            .map(|j| record[j].parse::<f64>().map_err(|_| bad(format!("bad feature '{}'", &record[j]))))
            .collect::<Result<Vec<_>>>()?;
        let action: usize = record[w - 2].parse().map_err(|_| bad(format!("bad action '{}'", &record[w - 2])))?;
        let reward: f64 = record[w - 1].parse().map_err(|_| bad(format!("bad reward '{}'", &record[w - 1])))?;
        strata = strata.max(k);
        samples.push(LoggedSample {
            logger: k - 1,
            context: Context::new(i, features),
            action,
            reward,
        });
    }
    StratifiedDataset::from_samples(strata, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_remapped_by_first_appearance() {
        let d = parse_csv_dataset("1.0,2.0,a\n3.0,4.0,b\n5.0,6.0,a\n".as_bytes(), &LabelColumn::Index(2), false)
            .unwrap();
        assert_eq!(d.num_classes(), 2);
        assert_eq!(d.labels(), &[0, 1, 0]);
        assert_eq!(d.features()[1], vec![3.0, 4.0]);
        assert_eq!(d.label_names(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn trailing_newline_does_not_matter() {
        let label = LabelColumn::Name("y".into());
        let a = parse_csv_dataset("x,y\n1,p\n2,q".as_bytes(), &label, true).unwrap();
        let b = parse_csv_dataset("x,y\n1,p\n2,q\n".as_bytes(), &label, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors_point_at_the_row() {
        let label = LabelColumn::Index(1);
        assert!(parse_csv_dataset("".as_bytes(), &label, false).is_err());
        match parse_csv_dataset("1,a\n2,b\nx,a\n".as_bytes(), &label, false) {
            Err(OpeError::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        match parse_csv_dataset("1,a\n2,b,3\n".as_bytes(), &label, false) {
            Err(OpeError::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_csv_dataset("x,y\n1,a\n".as_bytes(), &LabelColumn::Name("z".into()), true).is_err());
        assert!(parse_csv_dataset("1,a\n".as_bytes(), &LabelColumn::Name("y".into()), false).is_err());
    }

    #[test]
    fn bandit_records_round_trip() {
        let s = |k, x: f64, a, r| LoggedSample {
            logger: k,
            context: Context::new(0, vec![x, -x]),
            action: a,
            reward: r,
        };
        let d = StratifiedDataset::from_samples(2, vec![s(0, 0.1, 1, 1.0), s(1, 2.5, 0, 0.0), s(1, 1e-7, 2, 1.0)])
            .unwrap();
        let mut buf = Vec::new();
        write_bandit_records(&mut buf, &d).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,s_0,s_1,a,r\n1,0.1,-0.1,1,1\n"));
        let back = read_bandit_records(buf.as_slice()).unwrap();
        assert_eq!(back.sizes(), d.sizes());
        for (a, b) in back.iter().zip(d.iter()) {
            assert_eq!(a.context.features, b.context.features);
            assert_eq!((a.logger, a.action, a.reward), (b.logger, b.action, b.reward));
        }
    }
}
