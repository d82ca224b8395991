//! Correlation and error metrics between ground-truth and predicted quality
//! scores, plus the combined MAE + PLCC training objective.
//!
//! Conventions:
//! * variances and covariances use the population (1/n) normalization;
//! * SROCC is the Pearson correlation of average ranks, which reduces to
//!   `1 - 6 ΣD² / (n(n² - 1))` when neither vector has ties;
//! * KROCC is `2P / (n(n - 1))` where `P` is concordant minus discordant pairs;
//!   pairs tied in either vector count as neither but stay in the denominator.

use std::fmt;

use crate::error::{Error, Result};

fn check_pair(y: &[f64], yhat: &[f64], min_len: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch(y.len(), yhat.len()));
    }
    if y.len() < min_len {
        return Err(Error::DegenerateInput(format!(
            "need at least {min_len} samples, got {}",
            y.len()
        )));
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson linear correlation coefficient.
pub fn plcc(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 2)?;
    if is_constant(y) || is_constant(yhat) {
        return Err(Error::DegenerateInput("PLCC of a constant vector".into()));
    }
    let (my, mp) = (mean(y), mean(yhat));
    let (mut cov, mut vy, mut vp) = (0.0, 0.0, 0.0);
    for (&a, &b) in y.iter().zip(yhat) {
        cov += (a - my) * (b - mp);
        vy += (a - my) * (a - my);
        vp += (b - mp) * (b - mp);
    }
    Ok((cov / (vy * vp).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman rank-order correlation coefficient.
pub fn srocc(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 2)?;
    if is_constant(y) || is_constant(yhat) {
        return Err(Error::DegenerateInput("SROCC of a constant vector".into()));
    }
    plcc(&average_ranks(y), &average_ranks(yhat))
}

/// Kendall rank-order correlation, O(n log n).
pub fn krocc(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 2)?;
    let n = y.len();
    let n0 = (n * (n - 1) / 2) as i64;

    let mut pairs: Vec<(f64, f64)> = y.iter().copied().zip(yhat.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    // pairs tied in y, and tied in both
    let (mut tied_y, mut tied_both) = (0i64, 0i64);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        tied_y += ((j - i) * (j - i - 1) / 2) as i64;
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && pairs[l].1 == pairs[k].1 {
                l += 1;
            }
            tied_both += ((l - k) * (l - k - 1) / 2) as i64;
            k = l;
        }
        i = j;
    }

    // discordant pairs = inversions of yhat in this order (strict)
    let mut second: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = second.clone();
    let swaps = merge_count(&mut second, &mut buf) as i64;

    let mut tied_yhat = 0i64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && second[j] == second[i] {
            j += 1;
        }
        tied_yhat += ((j - i) * (j - i - 1) / 2) as i64;
        i = j;
    }

    let untied = n0 - tied_y - tied_yhat + tied_both;
    if untied == 0 {
        return Err(Error::DegenerateInput("KROCC: every pair is tied".into()));
    }
    let p = untied - 2 * swaps;
    Ok(p as f64 / n0 as f64)
}

/// Stable merge sort of `v`, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 1)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 1)?;
    Ok((y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64)
        .sqrt())
}

/// All metrics for one prediction set. Correlations are `None` when they are
/// undefined, e.g. for a constant prediction vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub n: usize,
    pub plcc: Option<f64>,
    pub srocc: Option<f64>,
    pub krocc: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
}

impl MetricsReport {
    pub fn compute(y: &[f64], yhat: &[f64]) -> Result<Self> {
        check_pair(y, yhat, 1)?;
        let ok = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::DegenerateInput(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            n: y.len(),
            plcc: ok(plcc(y, yhat))?,
            srocc: ok(srocc(y, yhat))?,
            krocc: ok(krocc(y, yhat))?,
            mae: mae(y, yhat)?,
            rmse: rmse(y, yhat)?,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.plcc.is_none() || self.srocc.is_none() || self.krocc.is_none()
    }

    /// Header matching [`MetricsReport::csv_row`].
    pub const CSV_HEADER: &'static str = "n,plcc,srocc,krocc,mae,rmse";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        format!(
            "{},{},{},{},{:.6},{:.6}",
            self.n,
            opt(self.plcc),
            opt(self.srocc),
            opt(self.krocc),
            self.mae,
            self.rmse
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| {
            v.map_or_else(|| "n/a (degenerate)".to_string(), |v| format!("{v:.4}"))
        };
        writeln!(f, "n     {}", self.n)?;
        writeln!(f, "PLCC  {}", opt(self.plcc))?;
        writeln!(f, "SROCC {}", opt(self.srocc))?;
        writeln!(f, "KROCC {}", opt(self.krocc))?;
        writeln!(f, "MAE   {:.4}", self.mae)?;
        write!(f, "RMSE  {:.4}", self.rmse)
    }
}

/// Weights of the combined objective `lambda1 * MAE + lambda2 * (1 - PLCC)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 10.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0)
            || (self.lambda1 == 0.0 && self.lambda2 == 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be >= 0 and not both 0, got ({}, {})",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Added under the square root of the PLCC-loss denominator so a constant
/// prediction vector still has a finite loss and gradient.
pub const PLCC_LOSS_EPS: f64 = 1e-12;

/// Combined loss and its gradient with respect to each prediction.
///
/// The MAE term uses the subgradient `sign(yhat_i - y_i)`, zero at equality.
pub fn combined_loss(y: &[f64], yhat: &[f64], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    check_pair(y, yhat, 2)?;
    if is_constant(y) {
        return Err(Error::DegenerateInput(
            "combined loss with constant ground truth".into(),
        ));
    }
    let n = y.len() as f64;
    let (my, mp) = (mean(y), mean(yhat));
    let (mut cov, mut vy, mut vp) = (0.0, 0.0, 0.0);
    for (&a, &b) in y.iter().zip(yhat) {
        cov += (a - my) * (b - mp);
        vy += (a - my) * (a - my);
        vp += (b - mp) * (b - mp);
    }
    cov /= n;
    vy /= n;
    vp /= n;
    let denom = (vy * vp + PLCC_LOSS_EPS).sqrt();
    let r = cov / denom;

    let mae = mae(y, yhat)?;
    let loss = cfg.lambda1 * mae + cfg.lambda2 * (1.0 - r);

    let grad = y
        .iter()
        .zip(yhat)
        .map(|(&a, &b)| {
            let sign = if b > a {
                1.0
            } else if b < a {
                -1.0
            } else {
                0.0
            };
            let dr = (a - my) / (n * denom) - cov * vy * (b - mp) / (n * denom.powi(3));
            cfg.lambda1 * sign / n - cfg.lambda2 * dr
        })
        .collect();
    Ok((loss, grad))
}
