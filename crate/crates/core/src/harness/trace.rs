//! Fitting process dynamics to a recorded time series.
//!
//! Each candidate family is fitted by linear least squares on one-step
//! transitions. The winner is picked by BIC so that a richer family only wins
//! when it explains noticeably more of the data.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

use super::config::{DynamicsSpec, NonlinearitySpec};

pub const MIN_ROWS: usize = 10;

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

/// Residual sums are floored at this fraction of the target energy, so exact
/// fits of different families tie and the penalty term decides.
const RSS_FLOOR: f64 = 1e-18;

/// A time-stamped multivariate series.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSource {
    pub timestamps: Vec<f64>,
    /// One row per timestamp.
    pub values: Vec<Vec<f64>>,
}

impl TraceSource {
    /// Header row required; first column is the timestamp.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let width = r.headers()?.len();
        if width < 2 {
            return Err(Error::Trace("need a timestamp column and at least one value column".into()));
        }
        let mut timestamps = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let nums = rec
                .iter()
                .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::Trace(format!("line {line}: non-numeric or non-finite cell")))?;
            if nums.len() != width {
                return Err(Error::Trace(format!("line {line}: expected {width} cells, found {}", nums.len())));
            }
            timestamps.push(nums[0]);
            values.push(nums[1..].to_vec());
        }
        let source = Self { timestamps, values };
        source.validate()?;
        Ok(source)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() < MIN_ROWS {
            return Err(Error::Trace(format!("need at least {MIN_ROWS} rows, found {}", self.values.len())));
        }
        if let Some(k) = self.timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Trace(format!("timestamps must increase strictly (row {})", k + 2)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Linear,
    Tanh,
    Cubic,
    /// Pooled scalar autoregression, used when the linear design is singular.
    ScalarAr1,
}

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub kind: FitKind,
    pub rss: f64,
    pub parameters: usize,
    pub bic: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceFit {
    pub dynamics: DynamicsSpec,
    pub kind: FitKind,
    pub rows: usize,
    pub dim: usize,
    pub rss: f64,
    pub rms_residual: f64,
    /// Largest one-step residual norm; doubles as the disturbance bound.
    pub max_residual: f64,
    pub candidates: Vec<Candidate>,
    pub warnings: Vec<String>,
}

struct Fitted {
    kind: FitKind,
    a: DMatrix<f64>,
    nonlinearity: NonlinearitySpec,
    parameters: usize,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Least squares `design * coef = target`; `None` when the design is singular.
fn solve(design: &DMatrix<f64>, target: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let svd = design.clone().svd(true, true);
    let top = svd.singular_values.max();
    if !(top > 0.0) || svd.singular_values.min() < top * RANK_TOL {
        return None;
    }
    svd.solve(target, top * RANK_TOL).ok()
}

/// Family with `f = G tanh(x)` (`tanh = true`) or no nonlinearity.
fn fit_joint(x: &DMatrix<f64>, y: &DMatrix<f64>, tanh: bool) -> Option<Fitted> {
    let (n, d) = x.shape();
    let design = if tanh {
        let mut m = DMatrix::zeros(n, 2 * d);
        m.columns_mut(0, d).copy_from(x);
        m.columns_mut(d, d).copy_from(&x.map(f64::tanh));
        m
    } else {
        x.clone()
    };
    let coef = solve(&design, y)?;
    // rows of coef are regressors, columns are outputs
    let a = coef.rows(0, d).transpose();
    let (kind, nonlinearity) = if tanh {
        (FitKind::Tanh, NonlinearitySpec::Tanh { gain: to_rows(&coef.rows(d, d).transpose()) })
    } else {
        (FitKind::Linear, NonlinearitySpec::Zero)
    };
    Some(Fitted { kind, a, nonlinearity, parameters: coef.len() })
}

/// Family with `f = -c * x^3` elementwise: one regression per output.
fn fit_cubic(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<Fitted> {
    let (n, d) = x.shape();
    let mut a = DMatrix::zeros(d, d);
    let mut coef = vec![0.0; d];
    for i in 0..d {
        let mut design = DMatrix::zeros(n, d + 1);
        design.columns_mut(0, d).copy_from(x);
        design.set_column(d, &x.column(i).map(|v| -v * v * v));
        let sol = solve(&design, &y.columns(i, 1).into_owned())?;
        for j in 0..d {
            a[(i, j)] = sol[(j, 0)];
        }
        coef[i] = sol[(d, 0)];
    }
    Some(Fitted { kind: FitKind::Cubic, a, nonlinearity: NonlinearitySpec::Cubic { coef }, parameters: d * (d + 1) })
}

/// `x' = a x` with one shared coefficient; an all-zero input gives `a = 1`.
fn fit_scalar_ar1(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Fitted {
    let den = x.norm_squared();
    let a = if den > 0.0 { x.dot(y) / den } else { 1.0 };
    let d = x.ncols();
    Fitted { kind: FitKind::ScalarAr1, a: DMatrix::identity(d, d) * a, nonlinearity: NonlinearitySpec::Zero, parameters: 1 }
}

fn predict(f: &Fitted, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x * f.a.transpose();
    match &f.nonlinearity {
        NonlinearitySpec::Zero => {}
        NonlinearitySpec::Tanh { gain } => {
            let d = x.ncols();
            let g = DMatrix::from_fn(d, d, |i, j| gain[i][j]);
            out += x.map(f64::tanh) * g.transpose();
        }
        NonlinearitySpec::Cubic { coef } => {
            for (i, c) in coef.iter().enumerate() {
                let cubed = x.column(i).map(|v| v * v * v);
                out.column_mut(i).axpy(-c, &cubed, 1.0);
            }
        }
    }
    out
}

/// Fits every family and keeps the one with the lowest BIC. Ties go to the
/// earlier (simpler) family.
pub fn fit_trace(source: &TraceSource) -> Result<TraceFit> {
    source.validate()?;
    let d = source.dim();
    if d == 0 || source.values.iter().any(|r| r.len() != d) {
        return Err(Error::Trace("rows must share a nonzero width".into()));
    }
    let n = source.values.len() - 1;
    let x = DMatrix::from_fn(n, d, |t, j| source.values[t][j]);
    let y = DMatrix::from_fn(n, d, |t, j| source.values[t + 1][j]);
    let floor = RSS_FLOOR * y.norm_squared().max(f64::MIN_POSITIVE);
    let mut warnings = Vec::new();

    let mut fits = Vec::new();
    match fit_joint(&x, &y, false) {
        Some(f) => fits.push(f),
        None => {
            let msg = "linear design is rank deficient; falling back to a pooled scalar AR(1)".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
            fits.push(fit_scalar_ar1(&x, &y));
        }
    }
    fits.extend(fit_joint(&x, &y, true));
    fits.extend(fit_cubic(&x, &y));

    if source.values.windows(2).all(|w| w[0] == w[1]) {
        warnings.push(
            "constant trace: an identity map and a zero map with a constant offset fit equally; kept the identity".into(),
        );
    }

    let samples = (n * d) as f64;
    let mut best: Option<(f64, usize)> = None;
    let mut candidates = Vec::with_capacity(fits.len());
    for (k, f) in fits.iter().enumerate() {
        let rss = (y.clone() - predict(f, &x)).norm_squared();
        let bic = samples * (rss.max(floor) / samples).ln() + f.parameters as f64 * samples.ln();
        if best.is_none_or(|(b, _)| bic < b) {
            best = Some((bic, k));
        }
        candidates.push(Candidate { kind: f.kind, rss, parameters: f.parameters, bic });
    }
    let (_, k) = best.ok_or_else(|| Error::Trace("no candidate family could be fitted".into()))?;
    let chosen = &fits[k];
    let residual = y - predict(chosen, &x);
    let max_residual = residual.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let rss = residual.norm_squared();
    Ok(TraceFit {
        dynamics: DynamicsSpec {
            a: to_rows(&chosen.a),
            nonlinearity: chosen.nonlinearity.clone(),
            disturbance_bound: max_residual,
        },
        kind: chosen.kind,
        rows: source.values.len(),
        dim: d,
        rss,
        rms_residual: (rss / n as f64).sqrt(),
        max_residual,
        candidates,
        warnings,
    })
}

/// Convenience for tests and the CLI: one step of a fitted model.
pub fn step(spec: &DynamicsSpec, state: &[f64]) -> Vec<f64> {
    let x = DMatrix::from_row_slice(1, state.len(), state);
    let d = state.len();
    let fitted = Fitted {
        kind: FitKind::Linear,
        a: DMatrix::from_fn(d, d, |i, j| spec.a[i][j]),
        nonlinearity: spec.nonlinearity.clone(),
        parameters: 0,
    };
    let out: DVector<f64> = predict(&fitted, &x).row(0).transpose();
    out.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(spec: &DynamicsSpec, x0: &[f64], rows: usize, noise: f64, seed: u64) -> TraceSource {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = x0.to_vec();
        let mut values = Vec::with_capacity(rows);
        for _ in 0..rows {
            values.push(x.clone());
            x = step(spec, &x).into_iter().map(|v| v + noise * rng.random_range(-1.0..1.0)).collect();
        }
        TraceSource { timestamps: (0..rows).map(|t| t as f64).collect(), values }
    }

    fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn recovers_noiseless_linear_map() {
        let spec = DynamicsSpec {
            a: vec![vec![0.9, 0.2], vec![-0.3, 0.7]],
            nonlinearity: NonlinearitySpec::Zero,
            disturbance_bound: 0.0,
        };
        let src = series(&spec, &[1.0, -2.0], 40, 0.0, 0);
        let fit = fit_trace(&src).unwrap();
        assert_eq!(fit.kind, FitKind::Linear);
        assert!(max_abs_diff(&fit.dynamics.a, &spec.a) < 1e-8, "{:?}", fit.dynamics.a);
        assert!(fit.max_residual < 1e-8);
    }

    #[test]
    fn constant_trace_prefers_identity() {
        let src = TraceSource { timestamps: (0..12).map(f64::from).collect(), values: vec![vec![2.5]; 12] };
        let fit = fit_trace(&src).unwrap();
        assert_eq!(fit.kind, FitKind::Linear);
        assert!((fit.dynamics.a[0][0] - 1.0).abs() < 1e-12);
        assert!(fit.warnings.iter().any(|w| w.contains("constant")));
    }

    #[test]
    fn tanh_driven_trace_selects_tanh() {
        let spec = DynamicsSpec {
            a: vec![vec![0.5]],
            nonlinearity: NonlinearitySpec::Tanh { gain: vec![vec![1.2]] },
            disturbance_bound: 0.0,
        };
        let src = series(&spec, &[2.0], 200, 0.5, 3);
        let fit = fit_trace(&src).unwrap();
        assert_eq!(fit.kind, FitKind::Tanh);
        let linear = fit.candidates.iter().find(|c| c.kind == FitKind::Linear).unwrap();
        assert!(fit.rss < linear.rss);
    }

    #[test]
    fn zero_trace_falls_back_to_scalar_ar1() {
        let src = TraceSource { timestamps: (0..10).map(f64::from).collect(), values: vec![vec![0.0, 0.0]; 10] };
        let fit = fit_trace(&src).unwrap();
        assert_eq!(fit.kind, FitKind::ScalarAr1);
        assert!(fit.warnings.iter().any(|w| w.contains("rank deficient")));
    }

    #[test]
    fn rejects_short_or_unordered_input() {
        let short = "t,x\n0,1\n1,2\n";
        assert!(matches!(TraceSource::from_reader(short.as_bytes()), Err(Error::Trace(_))));
        let mut text = String::from("t,x\n");
        for t in 0..12 {
            text += &format!("{},{}\n", if t == 5 { 3 } else { t }, t);
        }
        let err = TraceSource::from_reader(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("increase"), "{err}");
        let bad = "t,x\n0,1\n1,abc\n";
        assert!(TraceSource::from_reader(bad.as_bytes()).unwrap_err().to_string().contains("line 3"));
    }

    #[test]
    fn parses_csv_with_header() {
        let mut text = String::from("time,a,b\n");
        for t in 0..10 {
            text += &format!("{t},{},{}\n", t as f64 * 0.5, 1.0);
        }
        let src = TraceSource::from_reader(text.as_bytes()).unwrap();
        assert_eq!(src.dim(), 2);
        assert_eq!(src.values[4], vec![2.0, 1.0]);
    }
}
