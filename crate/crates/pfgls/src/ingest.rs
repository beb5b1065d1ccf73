//! Long-form delimited panel files.

use std::collections::HashMap;
use std::path::Path;

use pfgls_core::panel::LongRecord;
use pfgls_core::PanelData;

use crate::error::{CliError, Result};

/// Column names of a long-form file.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap {
    pub unit: String,
    pub time: String,
    pub y: String,
    pub x: Vec<String>,
    /// Per-row weight column; must be constant within each unit.
    pub weights: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub panel: PanelData,
    /// One weight per unit, in the panel's unit order.
    pub weights: Option<Vec<f64>>,
}

/// Picks the candidate delimiter that occurs most often in the header line;
/// comma wins ties and header lines without any candidate.
pub fn detect_delimiter(header: &str) -> u8 {
    [b',', b'\t', b';']
        .into_iter()
        .map(|d| (header.bytes().filter(|b| *b == d).count(), d))
        .fold((0, b','), |best, c| if c.0 > best.0 { c } else { best })
        .1
}

pub fn read_long_csv(path: &Path, columns: &ColumnMap) -> Result<Ingested> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    parse_long_csv(&text, columns).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_long_csv(text: &str, columns: &ColumnMap) -> Result<Ingested> {
    let header_line = text.lines().next().unwrap_or("");
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(header_line))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| CliError::Data(format!("unreadable header: {e}")))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("column {name:?} not found; header has {:?}", headers.iter().collect::<Vec<_>>())))
    };
    if columns.x.is_empty() {
        return Err(CliError::Config("at least one regressor column is required".into()));
    }
    let unit_col = find(&columns.unit)?;
    let time_col = find(&columns.time)?;
    let y_col = find(&columns.y)?;
    let x_cols = columns.x.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let w_col = columns.weights.as_deref().map(find).transpose()?;

    let mut records = Vec::new();
    let mut unit_weight: HashMap<String, (f64, usize)> = HashMap::new();
    for (k, rec) in reader.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        let field = |col: usize| rec.get(col).unwrap_or("");
        let number = |col: usize| -> Result<f64> {
            let raw = field(col);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Data(format!(
                    "row {row}: column {:?} value {raw:?} is not a finite number",
                    &headers[col]
                ))),
            }
        };
        let unit = field(unit_col).to_string();
        if let Some(wc) = w_col {
            let w = number(wc)?;
            if !(w > 0.0) {
                return Err(CliError::Data(format!("row {row}: weight {w} must be positive")));
            }
            match unit_weight.get(&unit) {
                Some(&(prev, first_row)) if prev != w => {
                    return Err(CliError::Data(format!(
                        "row {row}: weight {w} for unit {unit:?} differs from {prev} at row {first_row}"
                    )))
                }
                Some(_) => {}
                None => {
                    unit_weight.insert(unit.clone(), (w, row));
                }
            }
        }
        records.push(LongRecord {
            unit,
            time: field(time_col).to_string(),
            y: number(y_col)?,
            x: x_cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>>>()?,
        });
    }
    let panel = PanelData::from_long(&records)?;
    let weights = w_col.map(|_| {
        panel
            .unit_labels()
            .expect("labelled panel")
            .iter()
            .map(|u| unit_weight[u].0)
            .collect()
    });
    Ok(Ingested { panel, weights })
}

/// Long-form CSV (`unit,time,y,x1..xd`) using the panel's labels, or
/// 1-based indices when it has none.
pub fn panel_to_csv(panel: &PanelData) -> String {
    let (n, t_len, d) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let units: Vec<String> = panel
        .unit_labels()
        .map(|l| l.to_vec())
        .unwrap_or_else(|| (1..=n).map(|i| i.to_string()).collect());
    let times: Vec<String> = panel
        .time_labels()
        .map(|l| l.to_vec())
        .unwrap_or_else(|| (1..=t_len).map(|t| t.to_string()).collect());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
    header.extend((1..=d).map(|k| if d == 1 { "x".to_string() } else { format!("x{k}") }));
    w.write_record(&header).expect("in-memory write");
    for i in 0..n {
        for t in 0..t_len {
            let mut row = vec![units[i].clone(), times[t].clone(), format!("{:?}", panel.y(i, t))];
            row.extend((0..d).map(|k| format!("{:?}", panel.x(i, t, k))));
            w.write_record(&row).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
