//! CSV records and text reports.

use kdvf_core::series::TimeSeries;
use std::fmt::Write as _;

/// Fixed 17-significant-digit rendering used in every numeric output.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Ordered `# key = value` metadata block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meta {
    pub entries: Vec<(String, String)>,
}

impl Meta {
    pub fn text(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn num(&mut self, key: &str, value: f64) {
        self.entries.push((key.to_string(), num(value)));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn render_csv(meta: &Meta, series: &TimeSeries) -> String {
    let mut s = String::new();
    s.push_str("# kdvf closed-loop record\n");
    for (k, v) in &meta.entries {
        let _ = writeln!(s, "# {k} = {v}");
    }
    s.push_str(&series.columns.join(","));
    s.push('\n');
    for row in &series.rows {
        let line: Vec<String> = row.iter().map(|v| num(*v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Splits a rendered record into metadata pairs, column names and rows.
pub fn parse_csv(text: &str) -> Result<(Meta, Vec<String>, Vec<Vec<f64>>), String> {
    let mut meta = Meta::default();
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once(" = ") {
                meta.text(k.trim(), v.trim());
            }
            continue;
        }
        match &columns {
            None => columns = Some(line.split(',').map(str::to_string).collect()),
            Some(cols) => {
                let row = line
                    .split(',')
                    .map(|t| t.parse::<f64>().map_err(|_| format!("line {}: bad number \"{t}\"", i + 1)))
                    .collect::<Result<Vec<_>, _>>()?;
                if row.len() != cols.len() {
                    return Err(format!("line {}: {} fields, header has {}", i + 1, row.len(), cols.len()));
                }
                rows.push(row);
            }
        }
    }
    Ok((meta, columns.ok_or("missing column header")?, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, -0.0, 1.0 / 3.0, 6.02e23, -1.2345678901234567e-300, f64::MIN_POSITIVE] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(num(1.5), "1.5000000000000000e0");
    }

    #[test]
    fn csv_round_trip() {
        let mut ts = TimeSeries::new(&["t", "a"]);
        ts.push(vec![0.0, 1.0 / 3.0]);
        ts.push(vec![0.1, -2.5e-9]);
        let mut m = Meta::default();
        m.text("scenario.name", "x");
        m.num("grid.L", 1.5);
        let text = render_csv(&m, &ts);
        let (m2, cols, rows) = parse_csv(&text).unwrap();
        assert_eq!(m2, m);
        assert_eq!(cols, vec!["t", "a"]);
        assert_eq!(rows, ts.rows);
        assert!(parse_csv("t,a\n1,2,3\n").is_err());
    }
}
