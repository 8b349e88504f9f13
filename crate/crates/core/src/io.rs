//! Plain-text numeric tables (CSV) for exported data.
//!
//! Values are written as `{:.16e}`, i.e. 17 significant digits, which
//! round-trips every finite `f64` exactly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::analytic::AnalyticLine;
use crate::benchmarking::RbData;
use crate::dynamics::{Spectrum, Spectrum2d, SpectrumLines, TimeSeries};
use crate::error::{Error, Result};
use crate::grape::{PiecewiseControl, RobustnessMap};
use crate::magnetometer::ResponsePoint;

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::DimensionMismatch {
                expected: self.header.len(),
                got: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            out.write_record(row.iter().map(|&v| format_value(v))).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(r);
        let header: Vec<String> = input.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in input.records() {
            let rec = rec.map_err(csv_err)?;
            let row = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("not a number: '{s}'")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_writer(File::create(path)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(File::open(path)?)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

impl From<&TimeSeries> for Table {
    fn from(ts: &TimeSeries) -> Self {
        Table {
            header: vec!["t_s".into(), "value".into()],
            rows: ts.samples.iter().enumerate().map(|(k, &v)| vec![ts.time(k), v]).collect(),
        }
    }
}

impl From<&Spectrum> for Table {
    fn from(s: &Spectrum) -> Self {
        Table {
            header: ["freq_hz", "re", "im", "abs"].map(String::from).to_vec(),
            rows: s
                .freqs
                .iter()
                .zip(&s.values)
                .map(|(&f, v)| vec![f, v.re, v.im, v.norm()])
                .collect(),
        }
    }
}

/// Row-major |S(F1, F2)|: the header holds the F2 axis after a corner cell,
/// and each row starts with its F1 value.
impl From<&Spectrum2d> for Table {
    fn from(s: &Spectrum2d) -> Self {
        let mut header = vec!["f1_hz\\f2_hz".to_string()];
        header.extend(s.f2.iter().map(|&f| format_value(f)));
        Table {
            header,
            rows: (0..s.n1)
                .map(|i| {
                    let mut row = vec![s.f1[i]];
                    row.extend((0..s.n2).map(|j| s.at(i, j).norm()));
                    row
                })
                .collect(),
        }
    }
}

impl From<&SpectrumLines> for Table {
    fn from(s: &SpectrumLines) -> Self {
        Table {
            header: ["freq_hz", "re", "im", "abs"].map(String::from).to_vec(),
            rows: s
                .lines
                .iter()
                .map(|l| vec![l.freq, l.amplitude.re, l.amplitude.im, l.amplitude.norm()])
                .collect(),
        }
    }
}

impl From<&[AnalyticLine]> for Table {
    fn from(lines: &[AnalyticLine]) -> Self {
        Table {
            header: ["freq_hz", "weight", "k_a", "f_upper", "m_upper", "f_lower", "m_lower"]
                .map(String::from)
                .to_vec(),
            rows: lines
                .iter()
                .map(|l| vec![l.freq, l.weight, l.k_a, l.f_upper, l.m_upper, l.f_lower, l.m_lower])
                .collect(),
        }
    }
}

impl From<&RbData> for Table {
    fn from(d: &RbData) -> Self {
        Table {
            header: ["m", "mean", "sem"].map(String::from).to_vec(),
            rows: d
                .lengths
                .iter()
                .zip(d.mean.iter().zip(&d.sem))
                .map(|(&m, (&mu, &se))| vec![m as f64, mu, se])
                .collect(),
        }
    }
}

impl From<&[ResponsePoint]> for Table {
    fn from(points: &[ResponsePoint]) -> Self {
        Table {
            header: ["freq_hz", "bz_t", "ax", "phix", "ay", "phiy", "converged"]
                .map(String::from)
                .to_vec(),
            rows: points
                .iter()
                .map(|p| vec![p.freq, p.bias_bz, p.ax, p.phix, p.ay, p.phiy, p.converged as u8 as f64])
                .collect(),
        }
    }
}

impl From<&PiecewiseControl> for Table {
    fn from(c: &PiecewiseControl) -> Self {
        Table {
            header: ["t_start_s", "duration_s", "bx_t", "by_t", "bz_t"].map(String::from).to_vec(),
            rows: c
                .amplitudes
                .iter()
                .enumerate()
                .map(|(k, b)| vec![k as f64 * c.piece_duration, c.piece_duration, b[0], b[1], b[2]])
                .collect(),
        }
    }
}

impl From<&RobustnessMap> for Table {
    fn from(m: &RobustnessMap) -> Self {
        let mut rows = Vec::new();
        for (i, &a) in m.amplitude_scales.iter().enumerate() {
            for (j, &d) in m.duration_scales.iter().enumerate() {
                rows.push(vec![a, d, m.fidelity[i][j]]);
            }
        }
        Table {
            header: ["amplitude_scale", "duration_scale", "fidelity"].map(String::from).to_vec(),
            rows,
        }
    }
}

/// Rebuild a piecewise control from a table written by `From<&PiecewiseControl>`.
pub fn control_from_table(table: &Table, bounds: [f64; 3]) -> Result<PiecewiseControl> {
    let col = |n: &str| {
        table
            .column(n)
            .ok_or_else(|| Error::InvalidArgument(format!("missing column '{n}'")))
    };
    let dur = col("duration_s")?;
    let (bx, by, bz) = (col("bx_t")?, col("by_t")?, col("bz_t")?);
    let first = *dur.first().ok_or_else(|| Error::InvalidArgument("empty control table".into()))?;
    if dur.iter().any(|&d| d != first) {
        return Err(Error::InvalidArgument("control pieces must share one duration".into()));
    }
    let c = PiecewiseControl {
        piece_duration: first,
        amplitudes: (0..dur.len()).map(|k| [bx[k], by[k], bz[k]]).collect(),
        bounds,
    };
    c.validate()?;
    Ok(c)
}
