//! Operating-point and frequency grids, admittance sample generation and the
//! CSV interchange format.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ibr::{AdmittanceModel, IbrError, InverterParams, OperatingPoint};

/// Column header of the sample CSV, in order.
pub const CSV_HEADER: [&str; 13] = [
    "ibr", "V", "P", "Q", "f_hz", "g_dd", "b_dd", "g_dq", "b_dq", "g_qd", "b_qd", "g_qq", "b_qq",
];

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("{ibr} at {op}{}: {source}", .f.map(|f| format!(", {f} Hz")).unwrap_or_default())]
    Model {
        ibr: String,
        op: OperatingPoint,
        f: Option<f64>,
        #[source]
        source: IbrError,
    },
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown role `{other}` (expected train or test)")),
        }
    }
}

/// Sampling grid over voltage, active and reactive power, and frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub v_values: Vec<f64>,
    pub p_step: f64,
    pub q_step: f64,
    /// Hz
    pub f_min: f64,
    /// Hz
    pub f_max: f64,
    pub n_freq: usize,
    pub role: Role,
}

impl GridSpec {
    /// 39 operating points x 100 frequencies.
    pub fn training() -> Self {
        Self {
            v_values: vec![0.9, 1.0, 1.1],
            p_step: 0.5,
            q_step: 0.5,
            f_min: 1.0,
            f_max: 200.0,
            n_freq: 100,
            role: Role::Train,
        }
    }

    /// 243 operating points x 200 frequencies.
    pub fn testing() -> Self {
        Self {
            p_step: 0.2,
            q_step: 0.2,
            n_freq: 200,
            role: Role::Test,
            ..Self::training()
        }
    }

    pub fn for_role(role: Role) -> Self {
        match role {
            Role::Train => Self::training(),
            Role::Test => Self::testing(),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: String| Err(DatasetError::InvalidGrid(msg));
        if self.v_values.is_empty() {
            return bad("no voltage values".into());
        }
        if let Some(v) = self
            .v_values
            .iter()
            .find(|v| OperatingPoint::new(**v, 0.0, 0.0).is_err())
        {
            return bad(format!("voltage {v} outside [0.9, 1.1]"));
        }
        for (name, step) in [("p_step", self.p_step), ("q_step", self.q_step)] {
            steps_over_range(step).ok_or_else(|| {
                DatasetError::InvalidGrid(format!(
                    "{name} = {step} must divide [-1, 1] into whole steps"
                ))
            })?;
        }
        if !(self.f_min.is_finite()
            && self.f_min > 0.0
            && self.f_max.is_finite()
            && self.f_max > self.f_min)
        {
            return bad(format!(
                "frequency range [{}, {}] must satisfy 0 < f_min < f_max",
                self.f_min, self.f_max
            ));
        }
        if self.n_freq < 2 {
            return bad(format!("n_freq = {} must be at least 2", self.n_freq));
        }
        Ok(())
    }
}

/// Number of steps `n` with `n * step = 2`, if `step` divides [-1, 1].
fn steps_over_range(step: f64) -> Option<usize> {
    if !(step.is_finite() && step > 0.0 && step <= 2.0) {
        return None;
    }
    let n = (2.0 / step).round();
    ((n * step - 2.0).abs() <= GRID_TOL).then_some(n as usize)
}

/// Values `(2k - n) / n` for `k = 0..=n`, from integers so that decimal
/// grid values come out as the nearest `f64`.
fn axis(step: f64) -> Vec<f64> {
    let n = steps_over_range(step).unwrap_or(1) as i64;
    (0..=n).map(|k| (2 * k - n) as f64 / n as f64).collect()
}

/// Feasible operating points, V outer, P middle, Q inner, each ascending.
pub fn operating_points(spec: &GridSpec) -> Vec<OperatingPoint> {
    let (ps, qs) = (axis(spec.p_step), axis(spec.q_step));
    let mut ops = Vec::with_capacity(spec.v_values.len() * ps.len() * qs.len());
    for &v in &spec.v_values {
        for &p in &ps {
            for &q in &qs {
                if let Ok(op) = OperatingPoint::new(v, p, q) {
                    if op.is_feasible() {
                        ops.push(op);
                    }
                }
            }
        }
    }
    ops
}

/// Log-spaced frequencies in Hz with exact endpoints.
pub fn frequency_grid(spec: &GridSpec) -> Vec<f64> {
    log_space(spec.f_min, spec.f_max, spec.n_freq)
}

/// `n` points evenly spaced in log10 between `lo` and `hi`, endpoints exact.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    let last = n.saturating_sub(1);
    (0..n)
        .map(|k| match k {
            0 => lo,
            k if k == last => hi,
            k => 10f64.powf(a + k as f64 * (b - a) / last as f64),
        })
        .collect()
}

/// One operating point and frequency with the real and imaginary parts of
/// the four admittance entries, in CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceSample {
    pub ibr: String,
    pub v: f64,
    pub p: f64,
    pub q: f64,
    /// Hz
    pub f: f64,
    /// `[g_dd, b_dd, g_dq, b_dq, g_qd, b_qd, g_qq, b_qq]`
    pub y: [f64; 8],
}

impl AdmittanceSample {
    pub fn ydd(&self) -> Complex64 {
        Complex64::new(self.y[0], self.y[1])
    }

    pub fn inputs(&self) -> [f64; 4] {
        [self.v, self.p, self.q, self.f]
    }

    pub fn op(&self) -> (f64, f64, f64) {
        (self.v, self.p, self.q)
    }
}

/// Samples of one inverter at one operating point over `freqs`.
pub fn sample_profile(
    params: &InverterParams,
    op: &OperatingPoint,
    freqs: &[f64],
) -> Result<Vec<AdmittanceSample>, DatasetError> {
    let model_err = |f, source| DatasetError::Model {
        ibr: params.name.clone(),
        op: *op,
        f,
        source,
    };
    let model = AdmittanceModel::new(params, op).map_err(|e| model_err(None, e))?;
    freqs
        .iter()
        .map(|&f| {
            let y = model.at(f).map_err(|e| model_err(Some(f), e))?;
            if !y.is_finite() {
                return Err(model_err(Some(f), IbrError::InvalidFrequency(f)));
            }
            Ok(AdmittanceSample {
                ibr: params.name.clone(),
                v: op.v,
                p: op.p,
                q: op.q,
                f,
                y: y.conductance_susceptance(),
            })
        })
        .collect()
}

/// Every (inverter, operating point, frequency) sample, ordered in that
/// nesting. Operating points are evaluated in parallel; the output order
/// does not depend on scheduling.
pub fn generate(
    ibrs: &[InverterParams],
    spec: &GridSpec,
) -> Result<Vec<AdmittanceSample>, DatasetError> {
    spec.validate()?;
    let ops = operating_points(spec);
    let freqs = frequency_grid(spec);
    let mut out = Vec::with_capacity(ibrs.len() * ops.len() * freqs.len());
    for params in ibrs {
        let blocks: Vec<Vec<AdmittanceSample>> = ops
            .par_iter()
            .map(|op| sample_profile(params, op, &freqs))
            .collect::<Result<_, _>>()?;
        out.extend(blocks.into_iter().flatten());
    }
    Ok(out)
}

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<W: Write>(writer: W, samples: &[AdmittanceSample]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER).map_err(csv_io)?;
    let mut record = Vec::with_capacity(CSV_HEADER.len());
    for s in samples {
        record.clear();
        record.push(s.ibr.clone());
        record.extend(s.inputs().iter().chain(&s.y).map(|x| fmt_float(*x)));
        w.write_record(&record).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_path(path: &Path, samples: &[AdmittanceSample]) -> Result<(), DatasetError> {
    write_csv(BufWriter::new(File::create(path)?), samples)
}

fn csv_io(e: csv::Error) -> DatasetError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(e) => DatasetError::Io(e),
        other => DatasetError::Parse {
            line,
            reason: format!("{other:?}"),
        },
    }
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<AdmittanceSample>, DatasetError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = r.records();
    match records.next() {
        None => {
            return Err(DatasetError::Parse {
                line: 1,
                reason: "missing header".into(),
            })
        }
        Some(header) => {
            let header = header.map_err(csv_io)?;
            if header.iter().ne(CSV_HEADER) {
                return Err(DatasetError::Parse {
                    line: 1,
                    reason: format!("header must be `{}`", CSV_HEADER.join(",")),
                });
            }
        }
    }
    let mut out = Vec::new();
    for record in records {
        let record = record.map_err(csv_io)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != CSV_HEADER.len() {
            return Err(DatasetError::Parse {
                line,
                reason: format!(
                    "expected {} fields, found {}",
                    CSV_HEADER.len(),
                    record.len()
                ),
            });
        }
        let mut nums = [0.0; 12];
        for (k, slot) in nums.iter_mut().enumerate() {
            let field = &record[k + 1];
            *slot = field.trim().parse().map_err(|_| DatasetError::Parse {
                line,
                reason: format!("column `{}`: `{field}` is not a number", CSV_HEADER[k + 1]),
            })?;
        }
        let mut y = [0.0; 8];
        y.copy_from_slice(&nums[4..]);
        out.push(AdmittanceSample {
            ibr: record[0].to_string(),
            v: nums[0],
            p: nums[1],
            q: nums[2],
            f: nums[3],
            y,
        });
    }
    Ok(out)
}

pub fn read_csv_path(path: &Path) -> Result<Vec<AdmittanceSample>, DatasetError> {
    read_csv(io::BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ibr::Catalog;

    #[test]
    fn default_grids_have_expected_sizes() {
        assert_eq!(operating_points(&GridSpec::training()).len(), 39);
        assert_eq!(operating_points(&GridSpec::testing()).len(), 243);
        assert_eq!(frequency_grid(&GridSpec::training()).len(), 100);
        assert_eq!(frequency_grid(&GridSpec::testing()).len(), 200);
    }

    #[test]
    fn operating_point_order_and_filter() {
        let ops = operating_points(&GridSpec::training());
        let first: Vec<_> = ops.iter().take(4).map(|o| (o.v, o.p, o.q)).collect();
        assert_eq!(
            first,
            [
                (0.9, -1.0, 0.0),
                (0.9, -0.5, -0.5),
                (0.9, -0.5, 0.0),
                (0.9, -0.5, 0.5)
            ]
        );
        assert!(ops.iter().all(|o| o.is_feasible()));
        let test = operating_points(&GridSpec::testing());
        assert!(test.iter().any(|o| (o.p, o.q) == (0.6, 0.8)));
        assert!(!test.iter().any(|o| (o.p, o.q) == (1.0, 0.2)));
    }

    #[test]
    fn frequency_grid_endpoints_and_ratio() {
        let mut spec = GridSpec::training();
        spec.n_freq = 2;
        assert_eq!(frequency_grid(&spec), [1.0, 200.0]);
        spec.n_freq = 3;
        spec.f_max = 100.0;
        let f = frequency_grid(&spec);
        assert_eq!((f[0], f[2]), (1.0, 100.0));
        assert!((f[1] - 10.0).abs() < 1e-12);

        let f = frequency_grid(&GridSpec::training());
        assert_eq!((f[0], f[99]), (1.0, 200.0));
        let r0 = f[1] / f[0];
        assert!(f.windows(2).all(|w| (w[1] / w[0] - r0).abs() < 1e-12));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = GridSpec::training();
        spec.p_step = 0.3;
        assert!(spec.validate().is_err());
        let mut spec = GridSpec::training();
        spec.f_min = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = GridSpec::training();
        spec.n_freq = 1;
        assert!(spec.validate().is_err());
        assert!(generate(&[], &GridSpec::training()).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cat = Catalog::canonical();
        let spec = GridSpec {
            v_values: vec![1.0],
            p_step: 1.0,
            q_step: 1.0,
            n_freq: 20,
            ..GridSpec::training()
        };
        let samples = generate(&[cat.get("GFMI2").unwrap().clone()], &spec).unwrap();
        assert_eq!(samples.len(), 5 * 20);
        let mut buf = Vec::new();
        write_csv(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("ibr,V,P,Q,f_hz,g_dd,b_dd,g_dq,b_dq,g_qd,b_qd,g_qq,b_qq\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), samples);
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let header = CSV_HEADER.join(",");
        let good = "X,1,0,0,1,1,2,3,4,5,6,7,8";
        let short = "X,1,0,0,1,1,2,3,4,5,6,7";
        let err = read_csv(format!("{header}\n{good}\n{short}\n").as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 3, .. }), "{err}");
        let err = read_csv(format!("{header}\n{good}\nX,1,0,0,1,1,2,3,4,5,6,7,abc\n").as_bytes())
            .unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 3, .. }), "{err}");
        assert!(read_csv(format!("{header}\n").as_bytes())
            .unwrap()
            .is_empty());
        assert!(read_csv("ibr,V\n".as_bytes()).is_err());
    }
}
