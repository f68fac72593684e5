//! Text formats: signal CSV, float formatting and JSON number helpers.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{Mat, SignalMatrix};

/// Formats with 17 significant digits, which round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON number for `x`. serde_json writes the shortest text that parses
/// back to the same `f64`. Non-finite values have no JSON representation
/// and are rejected.
pub fn json_number(x: f64) -> Result<serde_json::Number> {
    serde_json::Number::from_f64(x).ok_or_else(|| Error::Numerical(format!("cannot serialize non-finite value {x}")))
}

/// `N` rows of `K` comma-separated floats, no header.
pub fn signals_to_csv(x: &SignalMatrix) -> String {
    let mut s = String::with_capacity(x.rows() * x.cols() * 24);
    for i in 0..x.rows() {
        for (j, v) in x.row(i).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

pub fn parse_signals(text: &str) -> Result<SignalMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("bad float {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no signal rows".into(),
        });
    }
    Mat::from_rows(&rows)
}

pub fn load_signals(path: impl AsRef<Path>) -> Result<SignalMatrix> {
    parse_signals(&std::fs::read_to_string(path)?)
}

pub fn save_signals(path: impl AsRef<Path>, x: &SignalMatrix) -> Result<()> {
    std::fs::write(path, signals_to_csv(x))?;
    Ok(())
}
