use super::{select_model, Family, FitConfig};
use crate::error::FitError;
use crate::loss::LossHistory;

const RELATIVE_FLOOR: f64 = 1e-12;

/// Mean relative error of forecasting `horizon` iterations past every prefix
/// of at least `min_history` records.
///
/// Each prefix is fitted on its own, then the fitted curve is compared with
/// the recorded loss at `k_last + horizon`. Prefixes whose fit fails are
/// skipped; if none succeed the last fit error is returned.
pub fn backtest_error(
    history: &LossHistory,
    cfg: &FitConfig,
    horizon: u64,
    hint: Option<Family>,
) -> Result<f64, FitError> {
    let need = cfg.min_history + horizon as usize + 1;
    if history.len() < need {
        return Err(FitError::InsufficientHistory {
            have: history.len(),
            need,
        });
    }
    let records = history.records();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut last_err = FitError::NoModel;
    for n in cfg.min_history..=records.len() {
        let target_k = records[n - 1].iteration + horizon;
        let Ok(idx) = records.binary_search_by_key(&target_k, |r| r.iteration) else {
            continue;
        };
        let actual = records[idx].loss;
        match select_model(&history.prefix(n), cfg, hint) {
            Ok(model) => {
                let predicted = model.predict_loss_at(target_k as f64);
                total += (predicted - actual).abs() / actual.abs().max(RELATIVE_FLOOR);
                count += 1;
            }
            Err(e) => last_err = e,
        }
    }
    if count == 0 {
        Err(last_err)
    } else {
        Ok(total / count as f64)
    }
}
