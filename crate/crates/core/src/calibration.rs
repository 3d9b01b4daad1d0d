//! Empirical fisheye correction: a per-camera quadratic map from the value a
//! detector reports (fisheye space) to the true value (Euclidean space), fitted
//! separately for bearing and range.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{wrap_angle, RangeBearing};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("need at least 3 samples with 3 distinct raw values, got {pairs} samples / {distinct} distinct")]
    TooFewSamples { pairs: usize, distinct: usize },
    #[error("bearing sample {0} lies outside (-pi, pi)")]
    BearingOutOfRange(f64),
    #[error("non-finite sample value")]
    NonFinite,
    #[error("design matrix is rank deficient")]
    DegenerateDesign,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    Bearing,
    Range,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quantity::Bearing => "bearing",
            Quantity::Range => "range",
        })
    }
}

impl FromStr for Quantity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bearing" => Ok(Quantity::Bearing),
            "range" => Ok(Quantity::Range),
            other => Err(format!("unknown quantity `{other}` (expected bearing|range)")),
        }
    }
}

/// `y = c0 + c1·x + c2·x²`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticMap {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl QuadraticMap {
    pub const IDENTITY: QuadraticMap = QuadraticMap {
        c0: 0.0,
        c1: 1.0,
        c2: 0.0,
    };

    pub fn new(c0: f64, c1: f64, c2: f64) -> Self {
        Self { c0, c1, c2 }
    }

    pub fn is_finite(&self) -> bool {
        self.c0.is_finite() && self.c1.is_finite() && self.c2.is_finite()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.c0 + x * (self.c1 + x * self.c2)
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.c1 + 2.0 * self.c2 * x
    }

    /// Evaluates the map for a given quantity. Bearings are wrapped into
    /// `(-PI, PI]`; negative ranges are clamped to zero and flagged.
    pub fn apply(&self, raw: f64, quantity: Quantity) -> Mapped {
        let y = self.eval(raw);
        match quantity {
            Quantity::Bearing => Mapped {
                value: wrap_angle(y),
                out_of_domain: false,
            },
            Quantity::Range => {
                let out_of_domain = raw < 0.0 || y < 0.0;
                Mapped {
                    value: if y < 0.0 { 0.0 } else { y },
                    out_of_domain,
                }
            }
        }
    }

    /// True when the map is strictly monotone on `[lo, hi]`.
    pub fn is_monotone_on(&self, lo: f64, hi: f64) -> bool {
        let (a, b) = (self.slope(lo), self.slope(hi));
        (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0)
    }
}

/// Result of [`QuadraticMap::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mapped {
    pub value: f64,
    /// Set when a range input or output was negative.
    pub out_of_domain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSamples {
    pub quantity: Quantity,
    /// `(raw, truth)` pairs
    pub pairs: Vec<(f64, f64)>,
}

impl CalibrationSamples {
    pub fn new(quantity: Quantity, pairs: Vec<(f64, f64)>) -> Result<Self, CalibrationError> {
        let s = Self { quantity, pairs };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self
            .pairs
            .iter()
            .any(|(r, t)| !r.is_finite() || !t.is_finite())
        {
            return Err(CalibrationError::NonFinite);
        }
        let distinct: BTreeSet<u64> = self.pairs.iter().map(|(r, _)| r.to_bits()).collect();
        if self.pairs.len() < 3 || distinct.len() < 3 {
            return Err(CalibrationError::TooFewSamples {
                pairs: self.pairs.len(),
                distinct: distinct.len(),
            });
        }
        if self.quantity == Quantity::Bearing {
            for &(r, t) in &self.pairs {
                for v in [r, t] {
                    if v <= -PI || v >= PI {
                        return Err(CalibrationError::BearingOutOfRange(v));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFit {
    pub map: QuadraticMap,
    pub residual_rms: f64,
    /// Diagonal of `(XᵀX)⁻¹`; multiply by the noise variance for coefficient variances.
    pub unscaled_variances: [f64; 3],
    pub samples: usize,
}

impl QuadraticFit {
    /// Standard errors using the residual-based noise estimate `RSS / (n - 3)`.
    pub fn std_errors(&self) -> Option<[f64; 3]> {
        if self.samples <= 3 {
            return None;
        }
        let rss = self.residual_rms * self.residual_rms * self.samples as f64;
        let s2 = rss / (self.samples - 3) as f64;
        Some(self.unscaled_variances.map(|v| (v * s2).sqrt()))
    }
}

const RANK_TOL: f64 = 1e-12;

/// Least-squares quadratic via Householder QR of the Vandermonde matrix.
pub fn fit_quadratic(samples: &CalibrationSamples) -> Result<QuadraticFit, CalibrationError> {
    samples.validate()?;
    let n = samples.pairs.len();
    let design = DMatrix::from_fn(n, 3, |i, j| samples.pairs[i].0.powi(j as i32));
    let truth = DVector::from_iterator(n, samples.pairs.iter().map(|p| p.1));

    let col_norms: Vec<f64> = (0..3).map(|j| design.column(j).norm()).collect();
    let qr = design.clone().qr();
    let r = qr.r();
    for j in 0..3 {
        if col_norms[j] == 0.0 || r[(j, j)].abs() <= RANK_TOL * col_norms[j] {
            return Err(CalibrationError::DegenerateDesign);
        }
    }
    let qty = qr.q().transpose() * &truth;
    let coeffs = r
        .solve_upper_triangular(&qty)
        .ok_or(CalibrationError::DegenerateDesign)?;

    let resid = &truth - &design * &coeffs;
    let residual_rms = (resid.norm_squared() / n as f64).sqrt();

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(3, 3))
        .ok_or(CalibrationError::DegenerateDesign)?;
    let cov = &r_inv * r_inv.transpose();

    let map = QuadraticMap::new(coeffs[0], coeffs[1], coeffs[2]);
    if !map.is_finite() {
        return Err(CalibrationError::DegenerateDesign);
    }
    Ok(QuadraticFit {
        map,
        residual_rms,
        unscaled_variances: [cov[(0, 0)], cov[(1, 1)], cov[(2, 2)]],
        samples: n,
    })
}

/// Bearing is always corrected; range only when a range map exists.
pub fn correct_range_bearing(
    rb: RangeBearing,
    bearing_map: &QuadraticMap,
    range_map: Option<&QuadraticMap>,
) -> RangeBearing {
    let bearing = bearing_map.apply(rb.bearing, Quantity::Bearing).value;
    let range = match range_map {
        Some(m) => m.apply(rb.range, Quantity::Range).value,
        None => rb.range,
    };
    RangeBearing { range, bearing }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRecord {
    pub camera_id: String,
    pub quantity: Quantity,
    pub map: QuadraticMap,
}

/// Calibration file: one `camera_id quantity c0 c1 c2` record per line, `#` comments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationTable {
    pub records: Vec<CalibrationRecord>,
}

impl CalibrationTable {
    pub fn parse(text: &str) -> Result<Self, CalibrationError> {
        let mut records = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CalibrationError::Parse { line: idx + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", fields.len())));
            }
            let quantity = fields[1].parse::<Quantity>().map_err(err)?;
            let mut c = [0.0; 3];
            for (k, f) in fields[2..].iter().enumerate() {
                c[k] = f
                    .parse::<f64>()
                    .map_err(|e| CalibrationError::Parse {
                        line: idx + 1,
                        msg: format!("coefficient `{f}`: {e}"),
                    })?;
            }
            let map = QuadraticMap::new(c[0], c[1], c[2]);
            if !map.is_finite() {
                return Err(err("coefficients must be finite".into()));
            }
            records.push(CalibrationRecord {
                camera_id: fields[0].to_string(),
                quantity,
                map,
            });
        }
        Ok(Self { records })
    }

    /// Last record wins for a repeated `(camera, quantity)`.
    pub fn get(&self, camera_id: &str, quantity: Quantity) -> Option<&QuadraticMap> {
        self.records
            .iter()
            .rev()
            .find(|r| r.camera_id == camera_id && r.quantity == quantity)
            .map(|r| &r.map)
    }

    pub fn upsert(&mut self, camera_id: &str, quantity: Quantity, map: QuadraticMap) {
        self.records
            .retain(|r| !(r.camera_id == camera_id && r.quantity == quantity));
        self.records.push(CalibrationRecord {
            camera_id: camera_id.to_string(),
            quantity,
            map,
        });
    }
}

impl fmt::Display for CalibrationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# camera_id quantity c0 c1 c2")?;
        for r in &self.records {
            writeln!(
                f,
                "{} {} {} {} {}",
                r.camera_id, r.quantity, r.map.c0, r.map.c1, r.map.c2
            )?;
        }
        Ok(())
    }
}

/// Reads `raw,truth` CSV rows. A non-numeric first line is treated as a header.
pub fn parse_pairs_csv(text: &str) -> Result<Vec<(f64, f64)>, CalibrationError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (fields.len() == 2)
            .then(|| Some((fields[0].parse::<f64>().ok()?, fields[1].parse::<f64>().ok()?)))
            .flatten();
        match parsed {
            Some(p) => out.push(p),
            None if idx == 0 && out.is_empty() => continue,
            None => {
                return Err(CalibrationError::Parse {
                    line: idx + 1,
                    msg: format!("expected `raw,truth`, got `{line}`"),
                })
            }
        }
    }
    Ok(out)
}
