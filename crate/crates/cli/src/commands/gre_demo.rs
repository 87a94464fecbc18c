use std::path::{Path, PathBuf};

use longtail_core::gre_fpn::{
    assign_level, baseline_extract, gradcheck, gre_extract, selector_reduction_gap,
    GradCheckReport, GreParams, Pyramid, Tensor4, CANONICAL_SIZE, DEFAULT_K0,
};
use longtail_core::train_utils::{ParamEntry, ParamSnapshot};
use longtail_core::{BBox, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, Stream};
use crate::config::GreDemoConfig;
use crate::{read_file, CliError, CliResult, Outcome};

#[derive(Debug, Clone)]
pub struct GreDemoArgs {
    pub pyramid: PathBuf,
    pub rois: PathBuf,
    pub params: PathBuf,
    /// Writes the GRE output as a snapshot with one `output` entry.
    pub dump: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoiFile {
    rois: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorStats {
    pub shape: [usize; 4],
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl TensorStats {
    fn of(t: &Tensor4) -> Self {
        let d = t.data();
        let (min, max) = d
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let mean = if d.is_empty() {
            0.0
        } else {
            d.iter().sum::<f64>() / d.len() as f64
        };
        TensorStats {
            shape: t.dims(),
            min,
            max,
            mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreDemoReport {
    pub seed: u64,
    pub levels: usize,
    pub channels: usize,
    pub rois: usize,
    /// Level each RoI is assigned to by the single-level extractor.
    pub assigned_levels: Vec<usize>,
    pub gre: TensorStats,
    pub baseline: TensorStats,
    pub selector_reduction_gap: f64,
    pub gradcheck: GradCheckReport,
    pub tolerance: f64,
    pub passed: bool,
}

fn load_rois(path: &Path) -> CliResult<Vec<BBox>> {
    let file: RoiFile = serde_json::from_str(&read_file(path)?).map_err(|e| Error::Format {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(file
        .rois
        .iter()
        .map(|&[x1, y1, x2, y2]| BBox::new(x1, y1, x2, y2))
        .collect::<longtail_core::Result<_>>()?)
}

/// Runs both extractors, the selector reduction and a finite-difference
/// gradient check against a seeded random upstream gradient.
pub fn gre_demo(args: &GreDemoArgs, cfg: &GreDemoConfig, seed: u64) -> CliResult<Outcome> {
    if !(cfg.eps.is_finite() && cfg.eps > 0.0) {
        return Err(CliError::Config(format!(
            "eps {} must be positive",
            cfg.eps
        )));
    }
    let pyr = Pyramid::from_snapshot(&ParamSnapshot::load(&args.pyramid)?)?;
    let params = GreParams::from_snapshot(&ParamSnapshot::load(&args.params)?)?;
    let rois = load_rois(&args.rois)?;

    let gre = gre_extract(&pyr, &rois, &cfg.roi_align, &params)?;
    let baseline = baseline_extract(&pyr, &rois, &cfg.roi_align, DEFAULT_K0)?;
    let gap = selector_reduction_gap(&pyr, &rois, &cfg.roi_align)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Upstream, 0));
    let upstream = Tensor4::from_fn(gre.dims(), |_, _, _, _| rng.random_range(-1.0..1.0));
    let check = gradcheck(&pyr, &rois, &cfg.roi_align, &params, &upstream, cfg.eps)?;

    if let Some(path) = &args.dump {
        let snap = ParamSnapshot::new(vec![ParamEntry {
            name: "output".into(),
            shape: gre.dims().to_vec(),
            values: gre.data().to_vec(),
        }])?;
        snap.save(path, true)?;
    }

    let grad_ok = check.max_rel_error <= cfg.tolerance;
    let gap_ok = gap <= cfg.reduction_tolerance;
    let report = GreDemoReport {
        seed,
        levels: pyr.num_levels(),
        channels: pyr.channels(),
        rois: rois.len(),
        assigned_levels: rois
            .iter()
            .map(|r| assign_level(r, DEFAULT_K0, CANONICAL_SIZE, pyr.num_levels()))
            .collect(),
        gre: TensorStats::of(&gre),
        baseline: TensorStats::of(&baseline),
        selector_reduction_gap: gap,
        gradcheck: check,
        tolerance: cfg.tolerance,
        passed: grad_ok && gap_ok,
    };
    let s = &report.gre;
    let summary = format!(
        "{} levels x {} channels, {} RoIs\n\
         GRE output {:?}: min {:.6} max {:.6} mean {:.6}\n\
         selector reduction max diff {:.3e}\n\
         gradient check: {} entries, max relative error {:.3e} (tolerance {:.1e}) {}",
        report.levels,
        report.channels,
        report.rois,
        s.shape,
        s.min,
        s.max,
        s.mean,
        gap,
        check.checked,
        check.max_rel_error,
        cfg.tolerance,
        if report.passed { "ok" } else { "FAILED" }
    );
    let deferred = if !grad_ok {
        Some(CliError::Check(format!(
            "gradient relative error {:.3e} exceeds {:.1e}",
            check.max_rel_error, cfg.tolerance
        )))
    } else if !gap_ok {
        Some(CliError::Check(format!(
            "selector reduction differs by {gap:.3e}"
        )))
    } else {
        None
    };
    Ok(Outcome::new(&report, summary).with_deferred(deferred))
}
