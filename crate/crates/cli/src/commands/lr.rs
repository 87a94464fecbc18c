use longtail_core::train_utils::{lr_at, LrConfig};
use serde::{Deserialize, Serialize};

use crate::{CliResult, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrPoint {
    pub iteration: u64,
    pub epoch: u64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrReport {
    pub iters_per_epoch: u64,
    pub config: LrConfig,
    /// Every iteration where the rate changes, starting at 0.
    pub changes: Vec<LrPoint>,
    /// Rates at explicitly requested iterations.
    pub queries: Vec<LrPoint>,
}

/// Change points of the schedule up to `max_epoch`, plus any queried
/// iterations.
pub fn lr_schedule(iters_per_epoch: u64, queries: &[u64], cfg: &LrConfig) -> CliResult<Outcome> {
    let point = |it: u64| -> CliResult<LrPoint> {
        Ok(LrPoint {
            iteration: it,
            epoch: it / iters_per_epoch.max(1),
            lr: lr_at(it, iters_per_epoch, cfg)?,
        })
    };
    let mut candidates = vec![0, cfg.warmup_iters];
    candidates.extend(cfg.decay_epochs.iter().map(|e| e * iters_per_epoch));
    candidates.sort_unstable();
    candidates.dedup();
    let end = cfg.max_epoch * iters_per_epoch;
    let mut changes: Vec<LrPoint> = Vec::new();
    for it in candidates.into_iter().filter(|&it| it < end.max(1)) {
        let p = point(it)?;
        if changes.last().is_none_or(|l| l.lr != p.lr) {
            changes.push(p);
        }
    }
    let queries = queries
        .iter()
        .map(|&it| point(it))
        .collect::<CliResult<Vec<_>>>()?;

    let mut text = format!(
        "{iters_per_epoch} iterations per epoch, {} epochs\n",
        cfg.max_epoch
    );
    for p in &changes {
        text += &format!(
            "  from iteration {:>8} (epoch {:>3}): {}\n",
            p.iteration, p.epoch, p.lr
        );
    }
    for p in &queries {
        text += &format!(
            "  at iteration {:>8} (epoch {:>3}): {}\n",
            p.iteration, p.epoch, p.lr
        );
    }
    let report = LrReport {
        iters_per_epoch,
        config: cfg.clone(),
        changes,
        queries,
    };
    Ok(Outcome::new(&report, text.trim_end().to_string()))
}
