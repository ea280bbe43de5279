//! Schedule differences in basis points of the order size.

use amm_exec_core::Schedule;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, FieldError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// `(1/(N+1)) sum |a_n - b_n|` in bps of the order size.
    pub mean_abs_diff: f64,
    /// `max |a_n - b_n|` in bps of the order size.
    pub max_abs_diff: f64,
    pub per_step: Vec<f64>,
}

pub fn compare_schedules(a: &Schedule, b: &Schedule, order_size: f64) -> Result<ComparisonReport, CliError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CliError::Validation(vec![FieldError::new(
            "schedules",
            format!("cannot compare schedules of lengths {} and {}", a.len(), b.len()),
        )]));
    }
    if !(order_size != 0.0 && order_size.is_finite()) {
        return Err(CliError::Validation(vec![FieldError::new(
            "order_size",
            format!("differences are in bps of a nonzero order size, got {order_size}"),
        )]));
    }
    let scale = 1e4 / order_size.abs();
    let per_step: Vec<f64> = a.trades.iter().zip(&b.trades).map(|(x, y)| (x - y).abs() * scale).collect();
    Ok(ComparisonReport {
        mean_abs_diff: per_step.iter().sum::<f64>() / per_step.len() as f64,
        max_abs_diff: per_step.iter().cloned().fold(0.0, f64::max),
        per_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_schedules_do_not_differ() {
        let s = Schedule::new(vec![0.3, 0.2, 0.5]);
        let r = compare_schedules(&s, &s, 1.0).unwrap();
        assert_eq!((r.mean_abs_diff, r.max_abs_diff), (0.0, 0.0));
    }

    #[test]
    fn differences_are_in_bps_of_the_order() {
        let a = Schedule::new(vec![0.5, 0.5]);
        let b = Schedule::new(vec![0.4, 0.6]);
        let r = compare_schedules(&a, &b, 2.0).unwrap();
        assert!((r.max_abs_diff - 500.0).abs() < 1e-9);
        assert!((r.mean_abs_diff - 500.0).abs() < 1e-9);
        assert!(compare_schedules(&a, &Schedule::new(vec![1.0]), 1.0).is_err());
        assert!(compare_schedules(&a, &b, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn report_is_symmetric_and_ordered(
            a in prop::collection::vec(-1.0f64..1.0, 1..20),
            seed in prop::collection::vec(-1.0f64..1.0, 20),
        ) {
            let b: Vec<f64> = a.iter().zip(&seed).map(|(x, s)| x + s).collect();
            let (a, b) = (Schedule::new(a), Schedule::new(b));
            let ab = compare_schedules(&a, &b, 1.0).unwrap();
            let ba = compare_schedules(&b, &a, 1.0).unwrap();
            prop_assert_eq!(&ab, &ba);
            prop_assert!(ab.max_abs_diff >= ab.mean_abs_diff && ab.mean_abs_diff >= 0.0);
        }
    }
}
