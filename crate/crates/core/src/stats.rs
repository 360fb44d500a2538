//! Saturated 2x3 linear probability models with run-clustered covariance.
//!
//! Coefficients: b0 intercept (1-step/No-nudge), b1 4-step, b2 Toward,
//! b3 Away, b4 4-step x Toward, b5 4-step x Away.

use nalgebra::{DMatrix, Matrix6, SMatrix, SVector, Vector6};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};
use std::collections::HashMap;
use thiserror::Error;

use crate::domain::{BasePrompt, Nudge, PromptSetting};

pub const K: usize = 6;
pub const Z_975: f64 = 1.959964;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("outcome has {y} rows but design has {design}")]
    DimensionMismatch { y: usize, design: usize },
    #[error("design cell {0} has no rows")]
    RankDeficient(String),
    #[error("row {0} is both Toward and Away")]
    InvalidDesign(usize),
    #[error("need at least two clusters, found {0}")]
    TooFewClusters(usize),
    #[error("CR1 needs more rows than coefficients, got {0}")]
    NoResidualDf(usize),
    #[error("outcome value at row {0} is not finite")]
    NonFinite(usize),
    #[error("p-value {0} is outside [0, 1]")]
    InvalidP(f64),
    #[error("alpha {0} is outside (0, 1)")]
    InvalidAlpha(f64),
    #[error("contrast compares a cell with itself")]
    SameCell,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignRow {
    pub base_4step: bool,
    pub toward: bool,
    pub away: bool,
    pub cluster: String,
}

impl DesignRow {
    pub fn new(setting: PromptSetting, cluster: impl Into<String>) -> Self {
        DesignRow {
            base_4step: setting.base == BasePrompt::FourStep,
            toward: setting.nudge == Nudge::Toward,
            away: setting.nudge == Nudge::Away,
            cluster: cluster.into(),
        }
    }

    pub fn setting(&self) -> PromptSetting {
        let base = if self.base_4step { BasePrompt::FourStep } else { BasePrompt::OneStep };
        let nudge = match (self.toward, self.away) {
            (true, _) => Nudge::Toward,
            (_, true) => Nudge::Away,
            _ => Nudge::NoNudge,
        };
        PromptSetting::new(base, nudge)
    }

    pub fn x(&self) -> [f64; K] {
        design_vector(self.setting())
    }
}

/// Regressor vector of a design cell.
pub fn design_vector(setting: PromptSetting) -> [f64; K] {
    let b = f64::from(u8::from(setting.base == BasePrompt::FourStep));
    let t = f64::from(u8::from(setting.nudge == Nudge::Toward));
    let a = f64::from(u8::from(setting.nudge == Nudge::Away));
    [1.0, b, t, a, b * t, b * a]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Correction {
    CR0,
    #[default]
    CR1,
}

/// Reference distribution for tests: normal / chi-square, or t / F with
/// G - 1 denominator degrees of freedom.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    #[default]
    Normal,
    T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpmFit {
    pub outcome_name: String,
    pub beta: [f64; K],
    pub vcov: [[f64; K]; K],
    pub n_obs: usize,
    pub n_clusters: usize,
    pub correction: Correction,
    pub residuals: Vec<f64>,
    /// Cells whose outcome is identically zero.
    pub zero_cells: Vec<PromptSetting>,
}

impl LpmFit {
    pub fn beta_vec(&self) -> Vector6<f64> {
        Vector6::from_row_slice(&self.beta)
    }

    pub fn vcov_matrix(&self) -> Matrix6<f64> {
        Matrix6::from_fn(|i, j| self.vcov[i][j])
    }

    pub fn cell_mean(&self, setting: PromptSetting) -> f64 {
        design_vector(setting).iter().zip(&self.beta).map(|(x, b)| x * b).sum()
    }

    pub fn is_constant(&self) -> bool {
        self.zero_cells.len() == K || self.residuals.iter().all(|r| *r == 0.0)
    }
}

pub fn fit_lpm(
    outcome_name: &str,
    y: &[f64],
    design: &[DesignRow],
    correction: Correction,
) -> Result<LpmFit, StatsError> {
    if y.len() != design.len() {
        return Err(StatsError::DimensionMismatch { y: y.len(), design: design.len() });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let mut cell_rows = [0usize; K];
    let mut cell_sum = [0f64; K];
    for (i, d) in design.iter().enumerate() {
        if d.toward && d.away {
            return Err(StatsError::InvalidDesign(i));
        }
        let c = d.setting().ordinal();
        cell_rows[c] += 1;
        cell_sum[c] += y[i].abs();
    }
    if let Some(empty) = PromptSetting::ALL.iter().find(|s| cell_rows[s.ordinal()] == 0) {
        return Err(StatsError::RankDeficient(empty.label()));
    }

    let mut clusters: HashMap<&str, usize> = HashMap::new();
    for d in design {
        let next = clusters.len();
        clusters.entry(d.cluster.as_str()).or_insert(next);
    }
    let g = clusters.len();
    if g < 2 {
        return Err(StatsError::TooFewClusters(g));
    }
    if correction == Correction::CR1 && y.len() <= K {
        return Err(StatsError::NoResidualDf(y.len()));
    }

    let n = y.len();
    let mut xtx = Matrix6::<f64>::zeros();
    let mut xty = Vector6::<f64>::zeros();
    let rows: Vec<Vector6<f64>> = design.iter().map(|d| Vector6::from_row_slice(&d.x())).collect();
    for (x, yi) in rows.iter().zip(y) {
        xtx += x * x.transpose();
        xty += x * *yi;
    }
    let chol = xtx
        .cholesky()
        .ok_or_else(|| StatsError::RankDeficient("X'X is singular".into()))?;
    let bread = chol.inverse();
    let beta = bread * xty;

    let residuals: Vec<f64> = rows.iter().zip(y).map(|(x, yi)| yi - x.dot(&beta)).collect();
    let mut scores = vec![Vector6::<f64>::zeros(); g];
    for ((x, u), d) in rows.iter().zip(&residuals).zip(design) {
        scores[clusters[d.cluster.as_str()]] += x * *u;
    }
    let mut meat = Matrix6::<f64>::zeros();
    for s in &scores {
        meat += s * s.transpose();
    }
    let mut v = bread * meat * bread;
    if correction == Correction::CR1 {
        let (g, n, k) = (g as f64, n as f64, K as f64);
        v *= g / (g - 1.0) * (n - 1.0) / (n - k);
    }
    let v = (v + v.transpose()) * 0.5;

    Ok(LpmFit {
        outcome_name: outcome_name.into(),
        beta: std::array::from_fn(|i| beta[i]),
        vcov: std::array::from_fn(|i| std::array::from_fn(|j| v[(i, j)])),
        n_obs: n,
        n_clusters: g,
        correction,
        residuals,
        zero_cells: PromptSetting::ALL
            .into_iter()
            .filter(|s| cell_sum[s.ordinal()] == 0.0)
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AmeKind {
    FourStep,
    Toward,
    Away,
}

impl AmeKind {
    pub const ALL: [AmeKind; 3] = [AmeKind::FourStep, AmeKind::Toward, AmeKind::Away];

    pub fn contrast(self) -> [f64; K] {
        match self {
            AmeKind::FourStep => [0.0, 1.0, 0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0],
            AmeKind::Toward => [0.0, 0.0, 1.0, 0.0, 0.5, 0.0],
            AmeKind::Away => [0.0, 0.0, 0.0, 1.0, 0.0, 0.5],
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            AmeKind::FourStep => "4step",
            AmeKind::Toward => "toward",
            AmeKind::Away => "away",
        }
    }

    pub fn parse(s: &str) -> Option<AmeKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "4step" | "4-step" | "fourstep" => Some(AmeKind::FourStep),
            "toward" => Some(AmeKind::Toward),
            "away" => Some(AmeKind::Away),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub contrast: [f64; K],
}

fn critical(fit: &LpmFit, reference: Reference) -> f64 {
    match reference {
        Reference::Normal => Z_975,
        Reference::T => StudentsT::new(0.0, 1.0, (fit.n_clusters - 1) as f64)
            .expect("df >= 1")
            .inverse_cdf(0.975),
    }
}

fn two_sided_p(z: f64, fit: &LpmFit, reference: Reference) -> f64 {
    let tail = match reference {
        Reference::Normal => Normal::standard().sf(z.abs()),
        Reference::T => StudentsT::new(0.0, 1.0, (fit.n_clusters - 1) as f64)
            .expect("df >= 1")
            .sf(z.abs()),
    };
    (2.0 * tail).clamp(0.0, 1.0)
}

pub fn linear_contrast(fit: &LpmFit, c: [f64; K], reference: Reference) -> EffectEstimate {
    let cv = Vector6::from_row_slice(&c);
    let estimate = cv.dot(&fit.beta_vec());
    let var = (cv.transpose() * fit.vcov_matrix() * cv)[(0, 0)];
    let se = var.max(0.0).sqrt();
    let p_value = if se > 0.0 {
        two_sided_p(estimate / se, fit, reference)
    } else if estimate.abs() < 1e-12 {
        1.0
    } else {
        0.0
    };
    let half = critical(fit, reference) * se;
    EffectEstimate { estimate, se, ci_low: estimate - half, ci_high: estimate + half, p_value, contrast: c }
}

pub fn ame(fit: &LpmFit, which: AmeKind) -> EffectEstimate {
    linear_contrast(fit, which.contrast(), Reference::Normal)
}

pub fn ame_with(fit: &LpmFit, which: AmeKind, reference: Reference) -> EffectEstimate {
    linear_contrast(fit, which.contrast(), reference)
}

/// Mean of cell `a` minus mean of cell `b`.
pub fn cell_contrast(fit: &LpmFit, a: PromptSetting, b: PromptSetting) -> Result<EffectEstimate, StatsError> {
    cell_contrast_with(fit, a, b, Reference::Normal)
}

pub fn cell_contrast_with(
    fit: &LpmFit,
    a: PromptSetting,
    b: PromptSetting,
    reference: Reference,
) -> Result<EffectEstimate, StatsError> {
    if a == b {
        return Err(StatsError::SameCell);
    }
    let (xa, xb) = (design_vector(a), design_vector(b));
    Ok(linear_contrast(fit, std::array::from_fn(|i| xa[i] - xb[i]), reference))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub stat: f64,
    pub df: usize,
    /// Rank of the tested covariance block; below `df` the generalized
    /// inverse was used.
    pub rank: usize,
    pub p_value: f64,
    pub singular: bool,
}

/// Joint test that b1..b5 are all zero.
pub fn wald_omnibus(fit: &LpmFit) -> TestResult {
    wald_omnibus_with(fit, Reference::Normal)
}

pub fn wald_omnibus_with(fit: &LpmFit, reference: Reference) -> TestResult {
    let b = SVector::<f64, 5>::from_fn(|i, _| fit.beta[i + 1]);
    let v = SMatrix::<f64, 5, 5>::from_fn(|i, j| fit.vcov[i + 1][j + 1]);
    let eig = v.symmetric_eigen();
    let largest = eig.eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let tol = largest * 5.0 * f64::EPSILON * 1e3;
    let mut stat = 0.0;
    let mut rank = 0;
    for (i, lambda) in eig.eigenvalues.iter().enumerate() {
        if *lambda > tol && *lambda > 0.0 {
            rank += 1;
            let proj = eig.eigenvectors.column(i).dot(&b);
            stat += proj * proj / lambda;
        }
    }
    let p_value = if rank == 0 {
        1.0
    } else {
        match reference {
            Reference::Normal => ChiSquared::new(rank as f64).expect("df > 0").sf(stat),
            Reference::T => FisherSnedecor::new(rank as f64, (fit.n_clusters - 1) as f64)
                .expect("df > 0")
                .sf(stat / rank as f64),
        }
    };
    TestResult { stat, df: 5, rank, p_value: p_value.clamp(0.0, 1.0), singular: rank < 5 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    pub rejected: Vec<bool>,
    pub q_values: Vec<f64>,
}

/// Benjamini-Hochberg step-up procedure.
pub fn bh_fdr(p_values: &[f64], alpha: f64) -> Result<BhResult, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha(alpha));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidP(*p));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));

    let cutoff = (1..=m)
        .rev()
        .find(|&k| p_values[order[k - 1]] <= k as f64 * alpha / m as f64)
        .unwrap_or(0);
    let mut rejected = vec![false; m];
    for &i in &order[..cutoff] {
        rejected[i] = true;
    }

    let mut q_values = vec![0.0; m];
    let mut running = 1.0f64;
    for k in (1..=m).rev() {
        let i = order[k - 1];
        running = running.min(p_values[i] * m as f64 / k as f64);
        q_values[i] = running;
    }
    Ok(BhResult { rejected, q_values })
}

/// Design rows for a list of (setting, run id) pairs.
pub fn design_rows<'a>(rows: impl IntoIterator<Item = (PromptSetting, &'a str)>) -> Vec<DesignRow> {
    rows.into_iter().map(|(s, c)| DesignRow::new(s, c)).collect()
}

pub(crate) fn column_f64(col: &[u8]) -> Vec<f64> {
    col.iter().map(|v| f64::from(*v)).collect()
}

/// Dense X for callers that want it, one row per observation.
pub fn design_matrix(design: &[DesignRow]) -> DMatrix<f64> {
    DMatrix::from_fn(design.len(), K, |i, j| design[i].x()[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{cell_counts, synthesize_matrix_from_counts, table3_counts, Layout};

    fn table3_fits() -> Vec<LpmFit> {
        let m = synthesize_matrix_from_counts(&table3_counts(), &Layout::balanced(15, 5), 1).unwrap();
        let design = design_rows(m.rows.iter().map(|r| (r.setting, r.run_id.as_str())));
        m.columns
            .iter()
            .map(|c| fit_lpm(c, &column_f64(&m.column(c).unwrap()), &design, Correction::CR1).unwrap())
            .collect()
    }

    fn fit_for<'a>(fits: &'a [LpmFit], code: &str) -> &'a LpmFit {
        fits.iter().find(|f| f.outcome_name == code).unwrap()
    }

    fn balanced_design(per_cell: usize, runs: usize) -> Vec<DesignRow> {
        let mut d = Vec::new();
        for s in PromptSetting::ALL {
            for i in 0..per_cell {
                d.push(DesignRow::new(s, format!("{}-{}", s.slug(), i % runs)));
            }
        }
        d
    }

    #[test]
    fn agile_intercept_is_reference_cell_mean() {
        let fits = table3_fits();
        let agile = fit_for(&fits, "Agile");
        assert!((agile.beta[0] - 41.0 / 75.0).abs() < 1e-12);
        assert!((ame(agile, AmeKind::FourStep).estimate - (94.0 - 114.0) / 225.0).abs() < 1e-12);
    }

    #[test]
    fn saturation_identity_for_every_code() {
        let m = synthesize_matrix_from_counts(&table3_counts(), &Layout::balanced(15, 5), 1).unwrap();
        for fit in table3_fits() {
            let cc = cell_counts(&m, &fit.outcome_name).unwrap();
            for s in PromptSetting::ALL {
                let c = cc.get(s);
                assert!((fit.cell_mean(s) - c.count as f64 / c.denominator as f64).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ame_equals_cell_mean_arithmetic() {
        for fit in table3_fits() {
            let mu = |b, n| fit.cell_mean(PromptSetting::new(b, n));
            use BasePrompt::*;
            use Nudge::*;
            let four = (mu(FourStep, Toward) + mu(FourStep, Away) + mu(FourStep, NoNudge)
                - mu(OneStep, Toward) - mu(OneStep, Away) - mu(OneStep, NoNudge))
                / 3.0;
            let toward = (mu(FourStep, Toward) - mu(FourStep, NoNudge) + mu(OneStep, Toward) - mu(OneStep, NoNudge)) / 2.0;
            let away = (mu(FourStep, Away) - mu(FourStep, NoNudge) + mu(OneStep, Away) - mu(OneStep, NoNudge)) / 2.0;
            assert!((ame(&fit, AmeKind::FourStep).estimate - four).abs() < 1e-12);
            assert!((ame(&fit, AmeKind::Toward).estimate - toward).abs() < 1e-12);
            assert!((ame(&fit, AmeKind::Away).estimate - away).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_outcome() {
        let d = balanced_design(4, 2);
        let fit = fit_lpm("z", &vec![0.0; d.len()], &d, Correction::CR1).unwrap();
        assert!(fit.beta.iter().all(|b| *b == 0.0));
        assert!(fit.vcov.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(fit.zero_cells.len(), 6);
        let w = wald_omnibus(&fit);
        assert_eq!((w.rank, w.p_value, w.singular), (0, 1.0, true));
        let e = ame(&fit, AmeKind::Toward);
        assert_eq!((e.estimate, e.se, e.p_value), (0.0, 0.0, 1.0));
    }

    #[test]
    fn symmetric_cells_give_null_effects() {
        let d = balanced_design(6, 3);
        let y: Vec<f64> = (0..d.len()).map(|i| if i % 6 < 2 { 1.0 } else { 0.0 }).collect();
        let fit = fit_lpm("s", &y, &d, Correction::CR1).unwrap();
        for k in AmeKind::ALL {
            assert!(ame(&fit, k).estimate.abs() < 1e-12);
        }
        let w = wald_omnibus(&fit);
        assert!(w.stat < 1e-12 && w.p_value > 0.999, "{w:?}");
    }

    #[test]
    fn shifted_cell_is_detected() {
        let d = balanced_design(10, 5);
        let y: Vec<f64> = d
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let noise = ((i * 7919) % 13) as f64 * 1e-3;
                noise + if r.setting() == PromptSetting::ALL[0] { 0.5 } else { 0.0 }
            })
            .collect();
        let w = wald_omnibus(&fit_lpm("s", &y, &d, Correction::CR1).unwrap());
        assert!(w.p_value < 0.001, "{w:?}");
        assert_eq!(w.rank, 5);
    }

    #[test]
    fn errors() {
        let d = balanced_design(2, 2);
        assert!(matches!(fit_lpm("e", &[0.0], &d, Correction::CR1), Err(StatsError::DimensionMismatch { .. })));
        let partial: Vec<_> = d.iter().filter(|r| r.setting() != PromptSetting::REFERENCE).cloned().collect();
        assert!(matches!(
            fit_lpm("e", &vec![0.0; partial.len()], &partial, Correction::CR1),
            Err(StatsError::RankDeficient(_))
        ));
        let fit = fit_lpm("e", &vec![0.0; d.len()], &d, Correction::CR1).unwrap();
        assert!(matches!(cell_contrast(&fit, PromptSetting::ALL[1], PromptSetting::ALL[1]), Err(StatsError::SameCell)));
        let one_each = balanced_design(1, 1);
        assert!(matches!(fit_lpm("e", &[0.0; 6], &one_each, Correction::CR1), Err(StatsError::NoResidualDf(6))));
        assert!(fit_lpm("e", &[0.0; 6], &one_each, Correction::CR0).is_ok());
    }

    #[test]
    fn cr0_and_cr1_differ_by_factor() {
        let d = balanced_design(5, 5);
        let y: Vec<f64> = (0..d.len()).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
        let f0 = fit_lpm("c", &y, &d, Correction::CR0).unwrap();
        let f1 = fit_lpm("c", &y, &d, Correction::CR1).unwrap();
        let (g, n) = (f0.n_clusters as f64, f0.n_obs as f64);
        let factor = g / (g - 1.0) * (n - 1.0) / (n - 6.0);
        for i in 0..K {
            for j in 0..K {
                assert!((f1.vcov[i][j] - factor * f0.vcov[i][j]).abs() < 1e-14);
            }
        }
        let z = ame(&f1, AmeKind::Toward);
        let t = ame_with(&f1, AmeKind::Toward, Reference::T);
        assert!(t.ci_high - t.ci_low > z.ci_high - z.ci_low);
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh_fdr(&[0.04], 0.05).unwrap().rejected, [true]);
        assert_eq!(bh_fdr(&[0.01, 0.02, 0.04], 0.05).unwrap().rejected, [true, true, true]);
        assert_eq!(bh_fdr(&[0.04, 0.90], 0.05).unwrap().rejected, [false, false]);
        let r = bh_fdr(&[0.03, 0.01, 0.04, 0.5], 0.05).unwrap();
        assert_eq!(r.q_values, [0.04 * 4.0 / 3.0, 0.04, 0.04 * 4.0 / 3.0, 0.5]);
        assert!(matches!(bh_fdr(&[1.2], 0.05), Err(StatsError::InvalidP(_))));
        assert!(matches!(bh_fdr(&[0.2], 1.0), Err(StatsError::InvalidAlpha(_))));
        assert_eq!(bh_fdr(&[], 0.05).unwrap().rejected, Vec::<bool>::new());
    }
}
