//! Retrospective consultation-mode metrics: dose agreement (MAPE and two RMSE
//! readings), dose statistics, and Pearson dose–MAP correlation.

use crate::algorithms::PcqlAgent;
use crate::domain::OfflineDataset;
use crate::error::{Error, Result};

/// Default denominator guard for [`mape`], in dose units.
pub const MAPE_EPSILON: f64 = 1e-8;

fn check_aligned(recommended: &[f64], actual: &[f64]) -> Result<()> {
    if recommended.len() != actual.len() {
        return Err(Error::Data(format!(
            "dose series length mismatch: {} recommended vs {} actual",
            recommended.len(),
            actual.len()
        )));
    }
    if recommended.is_empty() {
        return Err(Error::Data("dose series are empty".into()));
    }
    Ok(())
}

/// Mean absolute percentage error over all terms:
/// `(1/N)·Σ |y − y*| / max(ε, y*) · 100`.
pub fn mape(recommended: &[f64], actual: &[f64], epsilon: f64) -> Result<f64> {
    check_aligned(recommended, actual)?;
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("mape epsilon must be > 0, got {epsilon}")));
    }
    let sum: f64 = recommended
        .iter()
        .zip(actual)
        .map(|(y, y_star)| (y - y_star).abs() / y_star.max(epsilon))
        .sum();
    Ok(sum / recommended.len() as f64 * 100.0)
}

/// Mean of per-term `sqrt((y − y*)²)`, i.e. the mean absolute error. Reported
/// under this name because it is the headline dose-error formula of the
/// evaluation protocol; see [`rmse_conventional`] for the textbook quantity.
pub fn rmse_paper(recommended: &[f64], actual: &[f64]) -> Result<f64> {
    check_aligned(recommended, actual)?;
    let sum: f64 = recommended.iter().zip(actual).map(|(y, y_star)| (y - y_star).abs()).sum();
    Ok(sum / recommended.len() as f64)
}

/// Conventional root-mean-square error `sqrt(mean (y − y*)²)`.
pub fn rmse_conventional(recommended: &[f64], actual: &[f64]) -> Result<f64> {
    check_aligned(recommended, actual)?;
    let sum: f64 = recommended.iter().zip(actual).map(|(y, y_star)| (y - y_star).powi(2)).sum();
    Ok((sum / recommended.len() as f64).sqrt())
}

/// Pearson correlation coefficient; errors on zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Data(format!(
            "pearson needs two equal-length series of at least 2 points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Numeric("pearson undefined: a series has zero variance".into()));
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// The agent's recommended physical dose at every logged state, in dataset
/// order — the consultation-mode series.
pub fn recommended_doses(agent: &PcqlAgent, test: &OfflineDataset) -> Result<Vec<f64>> {
    test.transitions().map(|tr| agent.recommend_dose(&tr.state)).collect()
}

/// The dataset's recorded physical doses, in the same order.
pub fn behavior_doses(test: &OfflineDataset) -> Vec<f64> {
    test.transitions().map(|tr| tr.action.physical_dose(test.meta.p_max)).collect()
}

/// Per-step MAP readings aligned with the dose series.
pub fn map_series(test: &OfflineDataset) -> Vec<f64> {
    test.transitions().map(|tr| tr.state.vitals_now.map).collect()
}

/// Mean physical dose the agent recommends across all test steps.
pub fn mean_dose(agent: &PcqlAgent, test: &OfflineDataset) -> Result<f64> {
    let doses = recommended_doses(agent, test)?;
    Ok(doses.iter().sum::<f64>() / doses.len() as f64)
}

/// Mean recorded physical dose in the dataset.
pub fn mean_behavior_dose(test: &OfflineDataset) -> f64 {
    let doses = behavior_doses(test);
    doses.iter().sum::<f64>() / doses.len() as f64
}

/// Pearson between per-step MAP and per-step dose, for the agent's
/// recommendations and for the recorded doses, pooled over test steps.
pub fn correlation_comparison(agent: &PcqlAgent, test: &OfflineDataset) -> Result<(f64, f64)> {
    let maps = map_series(test);
    let rho_policy = pearson(&maps, &recommended_doses(agent, test)?)?;
    let rho_behavior = pearson(&maps, &behavior_doses(test))?;
    Ok((rho_policy, rho_behavior))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mape_zero_iff_identical_and_single_term_cases() {
        let a = vec![4.0, 2.5, 1.0];
        assert_eq!(mape(&a, &a, MAPE_EPSILON).unwrap(), 0.0);
        // single-term hand value: |110 - 100| / 100 = 10%
        assert!((mape(&[110.0], &[100.0], MAPE_EPSILON).unwrap() - 10.0).abs() < 1e-12);
        // epsilon guards the zero denominator: |1 - 0| / max(0.5, 0) = 2 -> 200%
        assert!((mape(&[1.0], &[0.0], 0.5).unwrap() - 200.0).abs() < 1e-12);
        assert!(mape(&a, &a[..2], MAPE_EPSILON).is_err());
        assert!(mape(&a, &a, 0.0).is_err());
    }

    #[test]
    fn rmse_paper_is_the_mean_absolute_error() {
        assert_eq!(rmse_paper(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(rmse_paper(&[5.0], &[5.0]).unwrap(), 0.0);
        // homogeneity: doubling the gap doubles the value
        let base = rmse_paper(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
        assert_eq!(rmse_paper(&[0.0, 4.0], &[2.0, 2.0]).unwrap(), 2.0 * base);
    }

    #[test]
    fn rmse_conventional_differs_from_the_mean_absolute_error() {
        // gaps {0, 2}: MAE = 1, RMSE = sqrt(2)
        let r = rmse_conventional(&[2.0, 4.0], &[2.0, 2.0]).unwrap();
        assert!((r - 2.0_f64.sqrt()).abs() < 1e-12);
        assert_eq!(rmse_conventional(&[7.0], &[7.0]).unwrap(), 0.0);
    }

    #[test]
    fn pearson_hand_cases() {
        let x = vec![1.0, 2.0, 3.0];
        let y_lin: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y_lin).unwrap() - 1.0).abs() < 1e-12);
        let y_neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y_neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(pearson(&x, &[5.0, 5.0, 5.0]).is_err()); // zero variance
        assert!(pearson(&x, &x[..2]).is_err());
    }
}
