//! Numeric tables backing every CSV the crate writes.
//!
//! Cells are `Option<f64>`; `None` renders as an empty field. Numbers use the
//! shortest representation that round-trips, so output is byte-stable.

/// Version of the CSV layouts; bump when columns change.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Option<f64>>>,
}

pub fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Option<f64>>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn header(&self) -> String {
        self.columns.join(",")
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&c| cell(c)).collect::<Vec<_>>().join(","))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in self.csv_rows() {
            out.push_str(&r);
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Cell-wise statistic over equally shaped tables; a cell is `None` if it is
/// missing in any input.
pub fn cellwise(tables: &[&Table], stat: impl Fn(&[f64]) -> f64) -> Vec<Vec<Option<f64>>> {
    let Some(first) = tables.first() else {
        return Vec::new();
    };
    (0..first.rows.len())
        .map(|i| {
            (0..first.columns.len())
                .map(|j| {
                    let vals: Option<Vec<f64>> = tables
                        .iter()
                        .map(|t| t.rows.get(i).and_then(|r| r[j]))
                        .collect();
                    vals.map(|v| stat(&v))
                })
                .collect()
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for a single value.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
