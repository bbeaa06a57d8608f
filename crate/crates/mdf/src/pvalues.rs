//! Test batteries and generalized p-values.
//!
//! A battery is the observed input: one p-value per test, each in [0, 1],
//! with unique ids. The generalized p-value of test m is the budget level at
//! which that test is first rejected, i.e. the inverse of its size function
//! at the ordinary p-value. Thresholding generalized p-values at a common
//! alpha reproduces per-test threshold decisions exactly.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sizefam::SizeFamily;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub id: String,
    pub p: f64,
    /// Originating test statistic, carried through for provenance only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestBattery {
    records: Vec<TestRecord>,
}

impl TestBattery {
    pub fn new(records: Vec<TestRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyBattery);
        }
        let mut seen = BTreeSet::new();
        for r in &records {
            if !(0.0..=1.0).contains(&r.p) || r.p.is_nan() {
                return Err(Error::Domain(format!(
                    "p-value for '{}' out of [0,1]: {}",
                    r.id, r.p
                )));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::IdMismatch(format!("duplicate test id '{}'", r.id)));
            }
        }
        Ok(TestBattery { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TestRecord] {
        &self.records
    }

    pub fn pvalues(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.p).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    /// Read a battery from CSV with header `id,p` (optional third column
    /// `z`). Malformed rows are rejected with their line number.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .trim(csv::Trim::All)
            .from_reader(reader);

        let headers = rdr
            .headers()
            .map_err(|e| Error::CsvParse {
                line: 1,
                msg: e.to_string(),
            })?
            .clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 2
            || cols[0] != "id"
            || cols[1] != "p"
            || (cols.len() == 3 && cols[2] != "z")
            || cols.len() > 3
        {
            return Err(Error::CsvParse {
                line: 1,
                msg: format!(
                    "expected header 'id,p' or 'id,p,z', found '{}'",
                    cols.join(",")
                ),
            });
        }
        let has_z = cols.len() == 3;

        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| Error::CsvParse {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line());
            let id = row.get(0).unwrap_or("").to_string();
            if id.is_empty() {
                return Err(Error::CsvParse {
                    line,
                    msg: "empty test id".into(),
                });
            }
            let p: f64 = row
                .get(1)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::CsvParse {
                    line,
                    msg: format!("p-value '{}' is not a number", row.get(1).unwrap_or("")),
                })?;
            let z = if has_z {
                let raw = row.get(2).unwrap_or("");
                if raw.is_empty() {
                    None
                } else {
                    Some(raw.parse().map_err(|_| Error::CsvParse {
                        line,
                        msg: format!("z-value '{raw}' is not a number"),
                    })?)
                }
            } else {
                None
            };
            records.push(TestRecord { id, p, z });
        }
        if records.is_empty() {
            return Err(Error::CsvParse {
                line: 1,
                msg: "no data rows after the header".into(),
            });
        }
        TestBattery::new(records)
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        TestBattery::from_csv_reader(file)
    }
}

/// Uniformize a discrete test's p-value: with `p_minus` the next achievable
/// level strictly below `p` and `u` an auxiliary Uniform(0,1) draw, returns
/// p_minus + u * (p - p_minus). Exactly Uniform(0,1) under the null.
pub fn randomized_pvalue(p_minus: f64, p: f64, u: f64) -> Result<f64> {
    for (name, v) in [("p_minus", p_minus), ("p", p), ("u", u)] {
        if !(0.0..=1.0).contains(&v) || v.is_nan() {
            return Err(Error::Domain(format!("{name} out of [0,1]: {v}")));
        }
    }
    if p_minus > p {
        return Err(Error::Domain(format!(
            "p_minus = {p_minus} exceeds p = {p}"
        )));
    }
    Ok(p_minus + u * (p - p_minus))
}

/// Generalized p-values for a battery under a size family, plus the ordering
/// used by the step procedures.
///
/// The working representation is `ln_surv[m] = ln(1 - alpha_m)`, computed
/// directly from the ordinary p-value without ever forming 1 - alpha_m; for
/// a geometric size function it stays exact even when alpha_m is so close
/// to 1 that `alphas[m]` rounds to 1.0. Every ordering and threshold
/// decision uses `ln_surv`; `alphas` is the same value on the plain scale
/// for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedPValues {
    /// alphas[m] = budget level at which test m is first rejected.
    pub alphas: Vec<f64>,
    /// ln(1 - alphas[m]) at full precision; decreasing in alphas[m].
    pub ln_surv: Vec<f64>,
    /// antirank[j] = index of the test with the (j+1)-th smallest alpha.
    pub antirank: Vec<usize>,
}

impl GeneralizedPValues {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// j-th smallest generalized p-value, 0-based.
    pub fn ordered(&self, j: usize) -> f64 {
        self.alphas[self.antirank[j]]
    }

    /// Log-survival of the j-th smallest generalized p-value, 0-based;
    /// nonincreasing in j.
    pub fn ordered_ln_surv(&self, j: usize) -> f64 {
        self.ln_surv[self.antirank[j]]
    }
}

/// Indices sorted by value, ascending; ties keep ascending original index.
pub fn anti_ranks(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // Stable sort preserves original order within ties.
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    idx
}

pub fn generalized_pvalues(
    battery: &TestBattery,
    family: &SizeFamily,
) -> Result<GeneralizedPValues> {
    if battery.len() != family.len() {
        return Err(Error::LengthMismatch {
            battery: battery.len(),
            family: family.len(),
        });
    }
    let ln_surv = battery
        .records()
        .iter()
        .enumerate()
        .map(|(m, r)| family.member(m).invert_ln_surv(r.p))
        .collect::<Result<Vec<f64>>>()?;
    let alphas: Vec<f64> = ln_surv.iter().map(|&ls| -ls.exp_m1()).collect();
    // Ascending in alpha = descending in log-survival, refined past the
    // point where alphas saturate at 1.0; stable sort keeps index ties.
    let mut antirank: Vec<usize> = (0..ln_surv.len()).collect();
    antirank.sort_by(|&a, &b| ln_surv[b].partial_cmp(&ln_surv[a]).unwrap());
    Ok(GeneralizedPValues {
        alphas,
        ln_surv,
        antirank,
    })
}
