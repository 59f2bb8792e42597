//! Correlation, Fisher-z averaging, Bonferroni thresholds, and fold confidence intervals.

use std::fmt;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::metrics::MetricTable;

/// Largest |r| fed to the Fisher transform when correlations are clamped.
pub const FISHER_CLAMP: f64 = 1.0 - 1e-6;

/// A mean with a 95% confidence half-width. A NaN half-width means the
/// interval is undefined (single observation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    pub halfwidth: f64,
}

impl MeanCi {
    pub fn point(mean: f64) -> Self {
        Self {
            mean,
            halfwidth: f64::NAN,
        }
    }
}

impl fmt::Display for MeanCi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.halfwidth.is_nan() {
            write!(f, "{:.3}", self.mean)
        } else {
            write!(f, "{:.3} ± {:.3}", self.mean, self.halfwidth)
        }
    }
}

impl FromStr for MeanCi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Csv(format!("bad number '{t}': {e}")))
        };
        match s.split_once('±') {
            Some((m, h)) => Ok(Self {
                mean: parse(m)?,
                halfwidth: parse(h)?,
            }),
            None => Ok(Self::point(parse(s)?)),
        }
    }
}

fn students_t(dof: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// Two-tailed p-value from the t statistic with n-2 degrees of freedom.
    pub p: f64,
    pub n: usize,
}

fn variance_sum(v: &[f64], mean: f64) -> f64 {
    v.iter().map(|x| (x - mean).powi(2)).sum()
}

/// Pearson correlation and its two-tailed p-value.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::Size(format!(
            "pearson inputs differ in length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "pearson needs at least 3 points, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx = variance_sum(xs, mx);
    let syy = variance_sum(ys, my);
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * ((nf - 2.0) / (1.0 - r * r)).sqrt();
        (2.0 * (1.0 - students_t(nf - 2.0).cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(Correlation { r, p, n })
}

/// `tanh(mean(atanh(r_i)))`.
pub fn fisher_composite(rs: &[f64]) -> Result<f64> {
    if rs.is_empty() {
        return Err(Error::InsufficientData("no correlations to combine".into()));
    }
    if let Some(&bad) = rs.iter().find(|r| r.is_nan() || r.abs() >= 1.0) {
        return Err(Error::TransformDomain(bad.abs()));
    }
    let z = rs.iter().map(|r| r.atanh()).sum::<f64>() / rs.len() as f64;
    Ok(z.tanh())
}

pub fn bonferroni_threshold(alpha: f64, tests: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if tests == 0 {
        return Err(Error::Domain("number of tests must be >= 1".into()));
    }
    Ok(alpha / tests as f64)
}

/// Mean and `t(0.975, k-1) · s / sqrt(k)` over `k >= 2` values.
pub fn ci95(values: &[f64]) -> Result<MeanCi> {
    let k = values.len();
    if k < 2 {
        return Err(Error::InsufficientData(format!(
            "confidence interval needs at least 2 values, got {k}"
        )));
    }
    let kf = k as f64;
    let mean = values.iter().sum::<f64>() / kf;
    let sd = (variance_sum(values, mean) / (kf - 1.0)).sqrt();
    let t = students_t(kf - 1.0).inverse_cdf(0.975);
    Ok(MeanCi {
        mean,
        halfwidth: t * sd / kf.sqrt(),
    })
}

/// [`ci95`] that degrades to a point estimate for a single value.
pub fn ci95_or_point(values: &[f64]) -> Result<MeanCi> {
    match values {
        [] => Err(Error::InsufficientData("no values".into())),
        [v] => Ok(MeanCi::point(*v)),
        _ => ci95(values),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub train_domain: String,
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

impl CorrelationRow {
    pub fn significant(&self, threshold: f64) -> bool {
        self.p < threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelateOptions {
    /// Keep the `ds_y == ds_x` point in every row.
    pub include_self: bool,
    pub alpha: f64,
}

impl Default for CorrelateOptions {
    fn default() -> Self {
        Self {
            include_self: true,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub metric: String,
    pub rows: Vec<CorrelationRow>,
    pub composite: f64,
    /// Bonferroni threshold for the row p-values.
    pub threshold: f64,
    /// Whether any |r| had to be clamped before the Fisher transform.
    pub clamped: bool,
}

/// Fisher composite with |r| clamped to [`FISHER_CLAMP`]; returns whether clamping happened.
pub fn clamped_fisher_composite(rs: &[f64]) -> Result<(f64, bool)> {
    let mut clamped = false;
    let safe: Vec<f64> = rs
        .iter()
        .map(|&r| {
            if r.abs() > FISHER_CLAMP {
                clamped = true;
                r.clamp(-FISHER_CLAMP, FISHER_CLAMP)
            } else {
                r
            }
        })
        .collect();
    if clamped {
        log::warn!("correlation of magnitude 1 clamped to ±{FISHER_CLAMP} before Fisher transform");
    }
    Ok((fisher_composite(&safe)?, clamped))
}

/// One correlation per training domain between the fold-mean metric and
/// fold-mean MAE across test domains, plus the Fisher composite.
pub fn correlate_metric_vs_mae(
    metric: &MetricTable,
    mae: &MetricTable,
    opts: CorrelateOptions,
) -> Result<CorrelationReport> {
    if metric.domains() != mae.domains() || metric.fold_count() != mae.fold_count() {
        return Err(Error::Coverage {
            what: "matching (train, test, fold) grid".into(),
            missing: vec![format!(
                "metric grid {}x{}x{} vs MAE grid {}x{}x{}",
                metric.domains().len(),
                metric.domains().len(),
                metric.fold_count(),
                mae.domains().len(),
                mae.domains().len(),
                mae.fold_count()
            )],
        });
    }
    let m = metric.fold_mean();
    let e = mae.fold_mean();
    let domains = metric.domains();
    let mut rows = Vec::with_capacity(domains.len());
    for (x, name) in domains.iter().enumerate() {
        let keep = |y: &usize| opts.include_self || *y != x;
        let xs: Vec<f64> = (0..domains.len()).filter(keep).map(|y| m[x][y]).collect();
        let ys: Vec<f64> = (0..domains.len()).filter(keep).map(|y| e[x][y]).collect();
        let c = pearson(&xs, &ys).map_err(|err| match err {
            Error::UndefinedCorrelation(msg) => {
                Error::UndefinedCorrelation(format!("train domain {name}: {msg}"))
            }
            other => other,
        })?;
        rows.push(CorrelationRow {
            train_domain: name.clone(),
            r: c.r,
            p: c.p,
            n: c.n,
        });
    }
    let rs: Vec<f64> = rows.iter().map(|r| r.r).collect();
    let (composite, clamped) = clamped_fisher_composite(&rs)?;
    Ok(CorrelationReport {
        metric: metric.kind().to_string(),
        rows,
        composite,
        threshold: bonferroni_threshold(opts.alpha, domains.len())?,
        clamped,
    })
}

/// Table of r, p, and significance per training domain for several metrics, with a composite row.
pub fn correlation_table_csv(reports: &[CorrelationReport]) -> Result<String> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InsufficientData("no correlation reports".into()))?;
    let mut out = String::from("train_domain");
    for rep in reports {
        if rep.rows.len() != first.rows.len() {
            return Err(Error::Coverage {
                what: "equal row sets across metrics".into(),
                missing: vec![rep.metric.clone()],
            });
        }
        out.push_str(&format!(",{0}_r,{0}_p,{0}_significant", rep.metric));
    }
    out.push('\n');
    for (i, row) in first.rows.iter().enumerate() {
        out.push_str(&row.train_domain);
        for rep in reports {
            let r = &rep.rows[i];
            out.push_str(&format!(
                ",{:.6},{:.6e},{}",
                r.r,
                r.p,
                r.significant(rep.threshold)
            ));
        }
        out.push('\n');
    }
    out.push_str("Composite");
    for rep in reports {
        out.push_str(&format!(",{:.6},,", rep.composite));
    }
    out.push('\n');
    Ok(out)
}
