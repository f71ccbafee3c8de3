//! Two-feature logistic confidence calibrator over the top-2 retrieval
//! scores, with calibration (Brier, ECE), selective-prediction and
//! separation metrics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocols::QueryOutcome;
use crate::seed::rng_for;

pub const DEFAULT_LAMBDA: f64 = 1e-2;
pub const DEFAULT_BINS: usize = 15;
pub const DEFAULT_TAUS: [f64; 4] = [0.70, 0.80, 0.90, 0.95];
const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 200;

/// Mean that is exact for constant input.
fn stable_mean(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = xs.clone();
    let Some(first) = it.next() else {
        return f64::NAN;
    };
    let n = xs.clone().count() as f64;
    first + xs.map(|x| x - first).sum::<f64>() / n
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One calibration example: top-2 scores and whether top-1 was correct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub s1: f64,
    pub s2: f64,
    pub y: bool,
}

impl From<&QueryOutcome> for Example {
    fn from(o: &QueryOutcome) -> Self {
        Self {
            s1: o.top_scores.0,
            s2: o.top_scores.1,
            y: o.top1_correct(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub w: [f64; 2],
    pub b: f64,
    pub l2_lambda: f64,
}

/// Mean cross-entropy + λ‖w‖² at `theta = (w1, w2, b)` over standardized
/// features, with its gradient.
pub fn objective(x: &[[f64; 2]], y: &[bool], lambda: f64, theta: [f64; 3]) -> (f64, [f64; 3]) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut g = [0.0; 3];
    for (xi, &yi) in x.iter().zip(y) {
        let z = theta[0] * xi[0] + theta[1] * xi[1] + theta[2];
        // log(1 + e^z) - y z, computed stably.
        let softplus = if z > 0.0 {
            z + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p()
        };
        loss += softplus - if yi { z } else { 0.0 };
        let r = sigmoid(z) - if yi { 1.0 } else { 0.0 };
        g[0] += r * xi[0];
        g[1] += r * xi[1];
        g[2] += r;
    }
    loss = loss / n + lambda * (theta[0] * theta[0] + theta[1] * theta[1]);
    g[0] = g[0] / n + 2.0 * lambda * theta[0];
    g[1] = g[1] / n + 2.0 * lambda * theta[1];
    g[2] /= n;
    (loss, g)
}

fn hessian(x: &[[f64; 2]], lambda: f64, theta: [f64; 3]) -> [[f64; 3]; 3] {
    let n = x.len() as f64;
    let mut h = [[0.0; 3]; 3];
    for xi in x {
        let p = sigmoid(theta[0] * xi[0] + theta[1] * xi[1] + theta[2]);
        let w = p * (1.0 - p);
        let v = [xi[0], xi[1], 1.0];
        for a in 0..3 {
            for b in 0..3 {
                h[a][b] += w * v[a] * v[b];
            }
        }
    }
    for row in &mut h {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    h[0][0] += 2.0 * lambda;
    h[1][1] += 2.0 * lambda;
    h
}

/// Solves `h d = g` by Gaussian elimination with partial pivoting.
fn solve3(mut h: [[f64; 3]; 3], mut g: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| h[a][col].abs().total_cmp(&h[b][col].abs()))?;
        if h[piv][col].abs() < 1e-300 {
            return None;
        }
        h.swap(col, piv);
        g.swap(col, piv);
        for r in col + 1..3 {
            let f = h[r][col] / h[col][col];
            for c in col..3 {
                h[r][c] -= f * h[col][c];
            }
            g[r] -= f * g[col];
        }
    }
    let mut d = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| h[r][c] * d[c]).sum();
        d[r] = (g[r] - s) / h[r][r];
    }
    d.iter().all(|v| v.is_finite()).then_some(d)
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn pop_mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mu = stable_mean(v.clone());
    let n = v.clone().count() as f64;
    let sd = (v.map(|x| (x - mu) * (x - mu)).sum::<f64>() / n).sqrt();
    (mu, if sd > 1e-12 { sd } else { 1.0 })
}

impl Calibrator {
    /// Fits standardization and logistic weights on `data` by damped Newton
    /// iterations until the gradient norm is at most 1e-8.
    pub fn fit(data: &[Example], l2_lambda: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        let positives = data.iter().filter(|e| e.y).count();
        if positives == 0 || positives == data.len() {
            return Err(Error::SingleClass(u8::from(positives > 0)));
        }
        let (m1, s1) = pop_mean_sd(data.iter().map(|e| e.s1));
        let (m2, s2) = pop_mean_sd(data.iter().map(|e| e.s2));
        let x: Vec<[f64; 2]> = data
            .iter()
            .map(|e| [(e.s1 - m1) / s1, (e.s2 - m2) / s2])
            .collect();
        let y: Vec<bool> = data.iter().map(|e| e.y).collect();
        let mut theta = [0.0; 3];
        let (mut loss, mut grad) = objective(&x, &y, l2_lambda, theta);
        for _ in 0..MAX_NEWTON {
            if norm3(&grad) <= GRAD_TOL {
                break;
            }
            let dir = solve3(hessian(&x, l2_lambda, theta), grad).unwrap_or(grad);
            let slope = -(dir[0] * grad[0] + dir[1] * grad[1] + dir[2] * grad[2]);
            let mut step = 1.0;
            let mut accepted = false;
            while step > 1e-12 {
                let cand = [
                    theta[0] - step * dir[0],
                    theta[1] - step * dir[1],
                    theta[2] - step * dir[2],
                ];
                let (l, g) = objective(&x, &y, l2_lambda, cand);
                if l <= loss + 1e-4 * step * slope || (l <= loss && norm3(&g) < norm3(&grad)) {
                    theta = cand;
                    loss = l;
                    grad = g;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok(Self {
            mu: [m1, m2],
            sigma: [s1, s2],
            w: [theta[0], theta[1]],
            b: theta[2],
            l2_lambda,
        })
    }

    pub fn logit(&self, s1: f64, s2: f64) -> f64 {
        self.w[0] * (s1 - self.mu[0]) / self.sigma[0]
            + self.w[1] * (s2 - self.mu[1]) / self.sigma[1]
            + self.b
    }

    /// P(top-1 correct).
    pub fn predict(&self, s1: f64, s2: f64) -> f64 {
        sigmoid(self.logit(s1, s2))
    }
}

fn check(p: &[f64], y: &[bool]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::EmptyInput);
    }
    if p.len() != y.len() {
        return Err(Error::InsufficientData(format!(
            "{} confidences for {} labels",
            p.len(),
            y.len()
        )));
    }
    Ok(())
}

fn yf(y: bool) -> f64 {
    if y {
        1.0
    } else {
        0.0
    }
}

pub fn brier(p: &[f64], y: &[bool]) -> Result<f64> {
    check(p, y)?;
    Ok(p.iter()
        .zip(y)
        .map(|(&pi, &yi)| (pi - yf(yi)).powi(2))
        .sum::<f64>()
        / p.len() as f64)
}

/// Expected calibration error over `bins` equal-width, right-closed bins
/// ((i/B, (i+1)/B], with 0 in the first bin).
pub fn ece(p: &[f64], y: &[bool], bins: usize) -> Result<f64> {
    check(p, y)?;
    if bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, &pi) in p.iter().enumerate() {
        let b = ((pi * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        members[b].push(i);
    }
    let n = p.len() as f64;
    Ok(members
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let acc = m.iter().filter(|&&i| y[i]).count() as f64 / m.len() as f64;
            let conf = stable_mean(m.iter().map(|&i| p[i]));
            m.len() as f64 / n * (acc - conf).abs()
        })
        .sum())
}

/// (Coverage@τ, Err@τ); the error is NaN when nothing is covered.
pub fn selective(p: &[f64], y: &[bool], tau: f64) -> Result<(f64, f64)> {
    check(p, y)?;
    let covered: Vec<usize> = (0..p.len()).filter(|&i| p[i] >= tau).collect();
    let coverage = covered.len() as f64 / p.len() as f64;
    let error = if covered.is_empty() {
        f64::NAN
    } else {
        covered.iter().filter(|&&i| !y[i]).count() as f64 / covered.len() as f64
    };
    Ok((coverage, error))
}

/// (c̄_{y=1}, c̄_{y=0}, Δ).
pub fn separation(p: &[f64], y: &[bool]) -> Result<(f64, f64, f64)> {
    check(p, y)?;
    let ones = y.iter().filter(|&&v| v).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::SingleClass(u8::from(ones > 0)));
    }
    let c1 = stable_mean(p.iter().zip(y).filter(|(_, &v)| v).map(|(&x, _)| x));
    let c0 = stable_mean(p.iter().zip(y).filter(|(_, &v)| !v).map(|(&x, _)| x));
    Ok((c1, c0, c1 - c0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivePoint {
    pub tau: f64,
    pub coverage: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub n: usize,
    pub acc_at_half: f64,
    pub brier: f64,
    pub ece: f64,
    pub conf_mean: f64,
    pub conf_mean_y1: f64,
    pub conf_mean_y0: f64,
    pub delta: f64,
    pub selective: Vec<SelectivePoint>,
}

pub fn report(p: &[f64], y: &[bool], bins: usize, taus: &[f64]) -> Result<ConfidenceReport> {
    check(p, y)?;
    let (c1, c0, delta) = separation(p, y)?;
    let acc = p
        .iter()
        .zip(y)
        .filter(|(&pi, &yi)| (pi >= 0.5) == yi)
        .count() as f64
        / p.len() as f64;
    Ok(ConfidenceReport {
        n: p.len(),
        acc_at_half: acc,
        brier: brier(p, y)?,
        ece: ece(p, y, bins)?,
        conf_mean: stable_mean(p.iter().copied()),
        conf_mean_y1: c1,
        conf_mean_y0: c0,
        delta,
        selective: taus
            .iter()
            .map(|&tau| {
                let (coverage, error) = selective(p, y, tau)?;
                Ok(SelectivePoint {
                    tau,
                    coverage,
                    error,
                })
            })
            .collect::<Result<_>>()?,
    })
}

/// Subject-disjoint split stratified by each subject's majority top-1
/// outcome. `calibration_fraction` of each stratum's subjects go to the
/// calibration set.
pub fn split_calibration(
    outcomes: &[QueryOutcome],
    calibration_fraction: f64,
    seed: u64,
) -> Result<(Vec<QueryOutcome>, Vec<QueryOutcome>)> {
    if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
        return Err(Error::Config(
            "calibration fraction must lie in (0, 1)".into(),
        ));
    }
    let mut by_subject: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for o in outcomes {
        let e = by_subject.entry(&o.query_subject_id).or_default();
        e.0 += 1;
        e.1 += usize::from(o.top1_correct());
    }
    let mut strata: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (s, (n, correct)) in &by_subject {
        strata[usize::from(2 * correct > *n)].push(s);
    }
    if strata.iter().any(|s| s.len() < 2) {
        return Err(Error::InsufficientData(format!(
            "stratified split needs >= 2 subjects per stratum, got {} correct-majority and {} incorrect-majority",
            strata[1].len(),
            strata[0].len()
        )));
    }
    let mut calibration = std::collections::HashSet::new();
    for (label, subjects) in strata.iter_mut().enumerate() {
        let mut rng = rng_for(seed, &[label as u64]);
        subjects.shuffle(&mut rng);
        let take = ((subjects.len() as f64 * calibration_fraction).round() as usize)
            .clamp(1, subjects.len() - 1);
        calibration.extend(subjects[..take].iter().copied());
    }
    let (cal, eval): (Vec<_>, Vec<_>) = outcomes
        .iter()
        .cloned()
        .partition(|o| calibration.contains(o.query_subject_id.as_str()));
    Ok((cal, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRun {
    pub calibrator: Calibrator,
    pub n_calibration: usize,
    pub n_evaluation: usize,
    pub report: ConfidenceReport,
}

/// Split, fit on the calibration half, report on the evaluation half.
/// Queries without a mate are left out.
pub fn run_confidence(
    outcomes: &[QueryOutcome],
    calibration_fraction: f64,
    seed: u64,
    l2_lambda: f64,
    bins: usize,
    taus: &[f64],
) -> Result<ConfidenceRun> {
    let with_mate: Vec<QueryOutcome> = outcomes.iter().filter(|o| o.has_mate).cloned().collect();
    let (cal, eval) = split_calibration(&with_mate, calibration_fraction, seed)?;
    let train: Vec<Example> = cal.iter().map(Example::from).collect();
    let calibrator = Calibrator::fit(&train, l2_lambda)?;
    let test: Vec<Example> = eval.iter().map(Example::from).collect();
    let p: Vec<f64> = test
        .iter()
        .map(|e| calibrator.predict(e.s1, e.s2))
        .collect();
    let y: Vec<bool> = test.iter().map(|e| e.y).collect();
    Ok(ConfidenceRun {
        report: report(&p, &y, bins, taus)?,
        n_calibration: cal.len(),
        n_evaluation: eval.len(),
        calibrator,
    })
}
