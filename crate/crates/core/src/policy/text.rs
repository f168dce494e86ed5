//! Plain-text matrix format shared by policies and fitted models.
//!
//! ```text
//! <tag> <A> <d> <param>
//! <row for action 0: d+1 whitespace-separated reals>
//! ...
//! <row for action A-1>
//! ```
//!
//! `param` is the temperature, mixture weight or reward bound depending on the tag.

use std::fmt::Write as _;

use crate::error::{OpeError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRecord {
    pub tag: String,
    pub param: f64,
    pub rows: Vec<Vec<f64>>,
}

impl MatrixRecord {
    pub fn new(tag: &str, param: f64, rows: Vec<Vec<f64>>) -> Self {
        Self {
            tag: tag.to_string(),
            param,
            rows,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len().saturating_sub(1))
    }

    pub fn expect_tag(&self, tag: &str) -> Result<()> {
        if self.tag != tag {
            return Err(OpeError::Parse {
                row: 1,
                message: format!("expected tag '{tag}', found '{}'", self.tag),
            });
        }
        Ok(())
    }

    /// `{:?}` on f64 prints the shortest representation that round-trips.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {} {:?}\n",
            self.tag,
            self.num_actions(),
            self.dim(),
            self.param
        );
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(OpeError::Parse {
            row: 1,
            message: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(OpeError::Parse {
                row: 1,
                message: format!("header needs 4 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str| OpeError::Parse {
            row: 1,
            message: format!("bad {what} in header"),
        };
        let num_actions: usize = fields[1].parse().map_err(|_| bad("action count"))?;
        let dim: usize = fields[2].parse().map_err(|_| bad("dimension"))?;
        let param: f64 = fields[3].parse().map_err(|_| bad("parameter"))?;

        let mut rows = Vec::with_capacity(num_actions);
        for (i, line) in lines {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| OpeError::Parse {
                        row: i + 1,
                        message: format!("not a number: '{t}'"),
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() != dim + 1 {
                return Err(OpeError::Parse {
                    row: i + 1,
                    message: format!("expected {} values, found {}", dim + 1, row.len()),
                });
            }
            rows.push(row);
        }
        if rows.len() != num_actions {
            return Err(OpeError::Parse {
                row: 1,
                message: format!("header declares {num_actions} rows, found {}", rows.len()),
            });
        }
        Ok(Self {
            tag: fields[0].to_string(),
            param,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_ragged_rows() {
        assert!(MatrixRecord::parse("softmax 2 1 1.0\n0 1\n0\n").is_err());
        assert!(MatrixRecord::parse("softmax 2 1 1.0\n0 1\n").is_err());
        assert!(MatrixRecord::parse("softmax 1 1 1.0\n0 x\n").is_err());
        assert!(MatrixRecord::parse("").is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..5),
                           param in 0.0f64..10.0) {
            let rec = MatrixRecord::new("greedy", param, rows);
            let back = MatrixRecord::parse(&rec.to_text()).unwrap();
            prop_assert_eq!(rec, back);
        }
    }
}
