use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{apply_topology, Grid};
use crate::nn::Prediction;
use crate::scenario::Sample;

fn check_shapes(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction",
            expected: y.len(),
            got: y_hat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptySelection("metric input"));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_shapes(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Mean absolute percentage error over the top decile of `|y|`.
///
/// The threshold is the `ceil(n/10)`-th largest `|y|`; every entry at or
/// above it is kept, zeros excluded. `None` when nothing is left.
pub fn mape90(y: &[f64], y_hat: &[f64]) -> Result<Option<f64>> {
    check_shapes(y, y_hat)?;
    let mut mags: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let k = (y.len() as f64 * 0.1).ceil() as usize;
    let threshold = mags[y.len() - k.max(1)];
    let (sum, n) = y
        .iter()
        .zip(y_hat)
        .filter(|(t, _)| t.abs() >= threshold && **t != 0.0)
        .fold((0.0, 0usize), |(s, n), (t, p)| (s + ((t - p) / t).abs(), n + 1));
    Ok((n > 0).then(|| sum / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableMetrics {
    pub mae: f64,
    pub mape90: Option<f64>,
    pub count: usize,
}

impl VariableMetrics {
    fn of(y: &[f64], y_hat: &[f64]) -> Result<Self> {
        Ok(VariableMetrics {
            mae: mae(y, y_hat)?,
            mape90: mape90(y, y_hat)?,
            count: y.len(),
        })
    }
}

/// Accuracy on θ at connected line extremities (headline) plus breakdowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub mape90: Option<f64>,
    pub theta_line: VariableMetrics,
    /// Energized-bus angles, only for bus-level predictors.
    pub theta_bus: Option<VariableMetrics>,
    /// Origin-side flows on connected lines.
    pub p_or: VariableMetrics,
}

pub fn metric_report(predictions: &[Prediction], samples: &[Sample], grid: &Grid) -> Result<MetricReport> {
    if predictions.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions",
            expected: samples.len(),
            got: predictions.len(),
        });
    }
    let l = grid.n_lines();
    let (mut lt, mut lp) = (Vec::new(), Vec::new());
    let (mut ft, mut fp) = (Vec::new(), Vec::new());
    let (mut bt, mut bp) = (Vec::new(), Vec::new());
    let mut all_bus = true;
    for (pred, s) in predictions.iter().zip(samples) {
        for k in 0..l {
            if s.tau.line_status[k] {
                lt.extend([s.theta_line[k], s.theta_line[l + k]]);
                lp.extend([pred.theta_line[k], pred.theta_line[l + k]]);
                ft.push(s.flows.p_or[k]);
                fp.push(pred.flows.p_or[k]);
            }
        }
        match &pred.theta_bus {
            Some(theta) if all_bus => {
                let bg = apply_topology(grid, &s.tau)?;
                bt.extend(bg.from_slots(&s.theta_bus));
                bp.extend_from_slice(theta);
            }
            _ => all_bus = false,
        }
    }
    let theta_line = VariableMetrics::of(&lt, &lp)?;
    Ok(MetricReport {
        mae: theta_line.mae,
        mape90: theta_line.mape90,
        theta_line,
        theta_bus: if all_bus {
            Some(VariableMetrics::of(&bt, &bp)?)
        } else {
            None
        },
        p_or: VariableMetrics::of(&ft, &fp)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!((mae(&[1.0, 2.0, 3.0], &[1.1, 1.8, 3.3]).unwrap() - 0.2).abs() < 1e-12);
        assert!(matches!(mae(&[], &[]), Err(Error::EmptySelection(_))));
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mape90_examples() {
        let y: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(mape90(&y, &y).unwrap(), Some(0.0));
        let mut y_hat = y.clone();
        y_hat[9] = 11.0;
        assert!((mape90(&y, &y_hat).unwrap().unwrap() - 0.1).abs() < 1e-12);
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let y_hat2: Vec<f64> = y_hat.iter().map(|v| 2.0 * v).collect();
        assert!((mape90(&y2, &y_hat2).unwrap().unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mape90_all_zero_is_undefined() {
        assert_eq!(mape90(&[0.0; 5], &[1.0; 5]).unwrap(), None);
    }

    #[test]
    fn mape90_keeps_ties_at_threshold() {
        let y = [1.0, 5.0, 5.0];
        let y_hat = [1.0, 4.0, 6.0];
        assert!((mape90(&y, &y_hat).unwrap().unwrap() - 0.2).abs() < 1e-12);
    }
}
