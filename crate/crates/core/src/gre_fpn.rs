//! RoI feature extraction over a feature pyramid.
//!
//! Two extractors are provided:
//!
//! - [`baseline_extract`]: the usual FPN scheme, each RoI pooled from the
//!   single level chosen by [`assign_level`];
//! - [`gre_extract`]: the global RoI extractor, each RoI pooled from *every*
//!   level, the pooled maps concatenated along channels and mixed by a 1x1
//!   convolution `(C_out, L*C)` plus bias.
//!
//! [`gre_gradients`] returns the analytic gradients of `<upstream, output>`
//! with respect to the convolution weights, bias and pyramid features, so
//! the level weighting can be learned.
//!
//! RoI-Align uses pixel-center alignment (box coordinates divided by the
//! stride, minus half a cell) and clamps sample points to the feature map,
//! which keeps constant maps constant for any box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::BBox;
use crate::train_utils::{ParamEntry, ParamSnapshot};

/// Snapshot entry holding the per-level strides.
pub const STRIDES_ENTRY: &str = "strides";
/// Snapshot entries for the GRE convolution.
pub const WEIGHT_ENTRY: &str = "weight";
pub const BIAS_ENTRY: &str = "bias";

fn level_entry(i: usize) -> String {
    format!("level{i}")
}

fn required<'a>(snap: &'a ParamSnapshot, name: &str) -> Result<&'a ParamEntry> {
    snap.get(name)
        .ok_or_else(|| Error::InvalidInput(format!("snapshot has no `{name}` entry")))
}

pub const CANONICAL_SIZE: f64 = 224.0;
pub const DEFAULT_K0: usize = 2;

/// Dense `(N, C, H, W)` array in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::InvalidInput(format!(
                "tensor {:?} needs {n} values, got {}",
                dims,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "tensor contains non-finite values".into(),
            ));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for h in 0..dims[2] {
                    for w in 0..dims[3] {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(n, c, h, w)]
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        assert_eq!(self.dims, other.dims, "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    /// Shape `(1, C, H, W)`.
    pub features: Tensor4,
    pub stride: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    levels: Vec<PyramidLevel>,
}

impl Pyramid {
    pub fn new(levels: Vec<PyramidLevel>) -> Result<Self> {
        let Some(first) = levels.first() else {
            return Err(Error::InvalidConfig("pyramid has no levels".into()));
        };
        let c = first.features.dims[1];
        for (i, l) in levels.iter().enumerate() {
            let [n, ci, h, w] = l.features.dims;
            if n != 1 || ci != c || h == 0 || w == 0 {
                return Err(Error::InvalidConfig(format!(
                    "level {i} has shape {:?}, expected (1, {c}, H>0, W>0)",
                    l.features.dims
                )));
            }
            if !(l.stride.is_finite() && l.stride > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "level {i} stride {}",
                    l.stride
                )));
            }
        }
        if levels.windows(2).any(|w| w[0].stride >= w[1].stride) {
            return Err(Error::InvalidConfig(
                "strides must be strictly ascending".into(),
            ));
        }
        Ok(Pyramid { levels })
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn channels(&self) -> usize {
        self.levels[0].features.dims[1]
    }

    /// Pyramid with the same shapes and strides and the given level data.
    pub fn with_data(&self, data: Vec<Vec<f64>>) -> Result<Self> {
        if data.len() != self.levels.len() {
            return Err(Error::InvalidInput("level count mismatch".into()));
        }
        let levels = self
            .levels
            .iter()
            .zip(data)
            .map(|(l, d)| {
                Ok(PyramidLevel {
                    features: Tensor4::new(l.features.dims, d)?,
                    stride: l.stride,
                })
            })
            .collect::<Result<_>>()?;
        Pyramid::new(levels)
    }
}

impl Pyramid {
    /// Reads entries `level0..levelN` of shape `(1, C, H, W)` and a
    /// `strides` entry with one value per level.
    pub fn from_snapshot(snap: &ParamSnapshot) -> Result<Self> {
        let strides = &required(snap, STRIDES_ENTRY)?.values;
        let levels = strides
            .iter()
            .enumerate()
            .map(|(i, &stride)| {
                let e = required(snap, &level_entry(i))?;
                let dims: [usize; 4] = e.shape.as_slice().try_into().map_err(|_| {
                    Error::InvalidInput(format!(
                        "`{}` has shape {:?}, expected 4-D",
                        e.name, e.shape
                    ))
                })?;
                Ok(PyramidLevel {
                    features: Tensor4::new(dims, e.values.clone())?,
                    stride,
                })
            })
            .collect::<Result<_>>()?;
        Pyramid::new(levels)
    }

    pub fn to_snapshot(&self) -> Result<ParamSnapshot> {
        let mut entries: Vec<ParamEntry> = self
            .levels
            .iter()
            .enumerate()
            .map(|(i, l)| ParamEntry {
                name: level_entry(i),
                shape: l.features.dims.to_vec(),
                values: l.features.data.clone(),
            })
            .collect();
        entries.push(ParamEntry {
            name: STRIDES_ENTRY.into(),
            shape: vec![self.levels.len()],
            values: self.levels.iter().map(|l| l.stride).collect(),
        });
        ParamSnapshot::new(entries)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoiAlignConfig {
    /// `(height, width)` of the pooled map.
    pub out_size: (usize, usize),
    pub samples_per_bin: usize,
}

impl Default for RoiAlignConfig {
    fn default() -> Self {
        RoiAlignConfig {
            out_size: (7, 7),
            samples_per_bin: 2,
        }
    }
}

impl RoiAlignConfig {
    fn validate(&self) -> Result<()> {
        if self.out_size.0 == 0 || self.out_size.1 == 0 || self.samples_per_bin == 0 {
            return Err(Error::InvalidInput(format!(
                "out_size {:?} and samples_per_bin {} must be positive",
                self.out_size, self.samples_per_bin
            )));
        }
        Ok(())
    }

    fn bins(&self) -> usize {
        self.out_size.0 * self.out_size.1
    }
}

/// Bilinear taps `(spatial offset, weight)` for every output bin of one
/// RoI on one level. Weights already include the `1 / samples^2` average.
/// RoI-Align is linear in the features, so the same taps give both the
/// forward gather and the backward scatter.
struct SamplePlan {
    taps: Vec<Vec<(usize, f64)>>,
}

fn axis_taps(pos: f64, len: usize) -> [(usize, f64); 2] {
    let p = pos.clamp(0.0, (len - 1) as f64);
    let lo = p.floor() as usize;
    let hi = (lo + 1).min(len - 1);
    let frac = p - lo as f64;
    [(lo, 1.0 - frac), (hi, frac)]
}

fn plan(fh: usize, fw: usize, stride: f64, roi: &BBox, cfg: &RoiAlignConfig) -> SamplePlan {
    let (oh, ow) = cfg.out_size;
    let s = cfg.samples_per_bin;
    let x0 = roi.x1 / stride - 0.5;
    let y0 = roi.y1 / stride - 0.5;
    let bin_w = roi.width() / stride / ow as f64;
    let bin_h = roi.height() / stride / oh as f64;
    let norm = 1.0 / (s * s) as f64;

    let mut taps = Vec::with_capacity(oh * ow);
    for by in 0..oh {
        for bx in 0..ow {
            let mut bin = Vec::with_capacity(4 * s * s);
            for iy in 0..s {
                let y = y0 + by as f64 * bin_h + (iy as f64 + 0.5) * bin_h / s as f64;
                let ty = axis_taps(y, fh);
                for ix in 0..s {
                    let x = x0 + bx as f64 * bin_w + (ix as f64 + 0.5) * bin_w / s as f64;
                    let tx = axis_taps(x, fw);
                    for &(yy, wy) in &ty {
                        for &(xx, wx) in &tx {
                            bin.push((yy * fw + xx, wy * wx * norm));
                        }
                    }
                }
            }
            taps.push(bin);
        }
    }
    SamplePlan { taps }
}

/// Pools `(C, h*w)` from a `(1, C, H, W)` level into `out`.
fn gather(level: &Tensor4, p: &SamplePlan, out: &mut [f64]) {
    let [_, c, h, w] = level.dims;
    let plane = h * w;
    let bins = p.taps.len();
    for ch in 0..c {
        let src = &level.data[ch * plane..(ch + 1) * plane];
        for (b, taps) in p.taps.iter().enumerate() {
            out[ch * bins + b] = taps.iter().map(|&(i, wt)| wt * src[i]).sum();
        }
    }
}

/// Bilinear RoI-Align of one box on one `(1, C, H, W)` level.
pub fn roi_align(
    level: &Tensor4,
    stride: f64,
    roi: &BBox,
    cfg: &RoiAlignConfig,
) -> Result<Tensor4> {
    cfg.validate()?;
    roi.validate()?;
    let [n, c, h, w] = level.dims;
    if n != 1 || h == 0 || w == 0 {
        return Err(Error::InvalidInput(format!(
            "roi_align expects a (1, C, H>0, W>0) level, got {:?}",
            level.dims
        )));
    }
    let p = plan(h, w, stride, roi, cfg);
    let mut out = vec![0.0; c * cfg.bins()];
    gather(level, &p, &mut out);
    Ok(Tensor4 {
        dims: [1, c, cfg.out_size.0, cfg.out_size.1],
        data: out,
    })
}

/// `clamp(floor(k0 + log2(sqrt(area) / canonical)), 0, n_levels - 1)`.
pub fn assign_level(roi: &BBox, k0: usize, canonical: f64, n_levels: usize) -> usize {
    let k = (k0 as f64 + (roi.area().sqrt() / canonical).log2()).floor();
    k.clamp(0.0, n_levels.saturating_sub(1) as f64) as usize
}

fn check_rois(rois: &[BBox]) -> Result<()> {
    rois.iter().try_for_each(BBox::validate)
}

fn assemble(per_roi: Vec<Vec<f64>>, c: usize, cfg: &RoiAlignConfig) -> Tensor4 {
    let n = per_roi.len();
    Tensor4 {
        dims: [n, c, cfg.out_size.0, cfg.out_size.1],
        data: per_roi.into_iter().flatten().collect(),
    }
}

/// Single-level extraction: each RoI pooled from its assigned level.
pub fn baseline_extract(
    pyr: &Pyramid,
    rois: &[BBox],
    cfg: &RoiAlignConfig,
    k0: usize,
) -> Result<Tensor4> {
    baseline_extract_with(Execution::default(), pyr, rois, cfg, k0)
}

pub fn baseline_extract_with(
    exec: Execution,
    pyr: &Pyramid,
    rois: &[BBox],
    cfg: &RoiAlignConfig,
    k0: usize,
) -> Result<Tensor4> {
    cfg.validate()?;
    check_rois(rois)?;
    let c = pyr.channels();
    let per_roi = exec.map(rois, |roi| {
        let lvl = &pyr.levels[assign_level(roi, k0, CANONICAL_SIZE, pyr.num_levels())];
        let [_, _, h, w] = lvl.features.dims;
        let mut out = vec![0.0; c * cfg.bins()];
        gather(&lvl.features, &plan(h, w, lvl.stride, roi, cfg), &mut out);
        out
    });
    Ok(assemble(per_roi, c, cfg))
}

/// 1x1 convolution mixing the concatenated `L*C` pooled channels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreParams {
    c_out: usize,
    c_in: usize,
    /// Row-major `(c_out, c_in)`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl GreParams {
    pub fn new(c_out: usize, c_in: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if c_out == 0 || c_in == 0 {
            return Err(Error::InvalidConfig(
                "GRE conv needs positive channel counts".into(),
            ));
        }
        if weights.len() != c_out * c_in || bias.len() != c_out {
            return Err(Error::InvalidConfig(format!(
                "GRE conv ({c_out}, {c_in}) needs {} weights and {c_out} biases, got {} and {}",
                c_out * c_in,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "GRE params contain non-finite values".into(),
            ));
        }
        Ok(GreParams {
            c_out,
            c_in,
            weights,
            bias,
        })
    }

    /// Weights that copy the `channels` channels of level `level` and ignore
    /// all other levels.
    pub fn selector(level: usize, n_levels: usize, channels: usize) -> Result<Self> {
        if level >= n_levels {
            return Err(Error::InvalidConfig(format!(
                "level {level} out of range for {n_levels} levels"
            )));
        }
        let c_in = n_levels * channels;
        let mut w = vec![0.0; channels * c_in];
        for c in 0..channels {
            w[c * c_in + level * channels + c] = 1.0;
        }
        GreParams::new(channels, c_in, w, vec![0.0; channels])
    }

    /// Reads a `weight` entry of shape `(C_out, L*C)` and a `bias` entry of
    /// length `C_out`.
    pub fn from_snapshot(snap: &ParamSnapshot) -> Result<Self> {
        let w = required(snap, WEIGHT_ENTRY)?;
        let b = required(snap, BIAS_ENTRY)?;
        let &[c_out, c_in] = w.shape.as_slice() else {
            return Err(Error::InvalidInput(format!(
                "`weight` has shape {:?}, expected 2-D",
                w.shape
            )));
        };
        GreParams::new(c_out, c_in, w.values.clone(), b.values.clone())
    }

    pub fn to_snapshot(&self) -> Result<ParamSnapshot> {
        ParamSnapshot::new(vec![
            ParamEntry {
                name: WEIGHT_ENTRY.into(),
                shape: vec![self.c_out, self.c_in],
                values: self.weights.clone(),
            },
            ParamEntry {
                name: BIAS_ENTRY.into(),
                shape: vec![self.c_out],
                values: self.bias.clone(),
            },
        ])
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn check(&self, pyr: &Pyramid) -> Result<()> {
        let need = pyr.num_levels() * pyr.channels();
        if self.c_in != need {
            return Err(Error::InvalidConfig(format!(
                "GRE conv expects {} input channels, pyramid provides {need}",
                self.c_in
            )));
        }
        Ok(())
    }
}

struct RoiPlans {
    plans: Vec<SamplePlan>,
}

fn roi_plans(pyr: &Pyramid, roi: &BBox, cfg: &RoiAlignConfig) -> RoiPlans {
    RoiPlans {
        plans: pyr
            .levels
            .iter()
            .map(|l| {
                let [_, _, h, w] = l.features.dims;
                plan(h, w, l.stride, roi, cfg)
            })
            .collect(),
    }
}

/// Concatenated `(L*C, bins)` pooled features of one RoI.
fn pool_all(pyr: &Pyramid, plans: &RoiPlans, bins: usize) -> Vec<f64> {
    let c = pyr.channels();
    let mut pooled = vec![0.0; pyr.num_levels() * c * bins];
    for (l, (lvl, p)) in pyr.levels.iter().zip(&plans.plans).enumerate() {
        gather(
            &lvl.features,
            p,
            &mut pooled[l * c * bins..(l + 1) * c * bins],
        );
    }
    pooled
}

fn conv1x1(params: &GreParams, pooled: &[f64], bins: usize) -> Vec<f64> {
    let mut out = vec![0.0; params.c_out * bins];
    for o in 0..params.c_out {
        let row = &params.weights[o * params.c_in..(o + 1) * params.c_in];
        for b in 0..bins {
            let mut acc = params.bias[o];
            for (k, &wk) in row.iter().enumerate() {
                acc += wk * pooled[k * bins + b];
            }
            out[o * bins + b] = acc;
        }
    }
    out
}

/// Global RoI extraction; output `(N, C_out, h, w)`.
pub fn gre_extract(
    pyr: &Pyramid,
    rois: &[BBox],
    cfg: &RoiAlignConfig,
    params: &GreParams,
) -> Result<Tensor4> {
    gre_extract_with(Execution::default(), pyr, rois, cfg, params)
}

pub fn gre_extract_with(
    exec: Execution,
    pyr: &Pyramid,
    rois: &[BBox],
    cfg: &RoiAlignConfig,
    params: &GreParams,
) -> Result<Tensor4> {
    cfg.validate()?;
    check_rois(rois)?;
    params.check(pyr)?;
    let bins = cfg.bins();
    let per_roi = exec.map(rois, |roi| {
        let pooled = pool_all(pyr, &roi_plans(pyr, roi, cfg), bins);
        conv1x1(params, &pooled, bins)
    });
    Ok(assemble(per_roi, params.c_out, cfg))
}

/// Largest difference, over every level `j` and RoI, between GRE with the
/// level-`j` selector and plain RoI-Align on level `j`.
pub fn selector_reduction_gap(pyr: &Pyramid, rois: &[BBox], cfg: &RoiAlignConfig) -> Result<f64> {
    let c = pyr.channels();
    let per = c * cfg.bins();
    let mut gap: f64 = 0.0;
    for (j, lvl) in pyr.levels.iter().enumerate() {
        let params = GreParams::selector(j, pyr.num_levels(), c)?;
        let gre = gre_extract(pyr, rois, cfg, &params)?;
        for (n, roi) in rois.iter().enumerate() {
            let direct = roi_align(&lvl.features, lvl.stride, roi, cfg)?;
            let got = &gre.data[n * per..(n + 1) * per];
            for (a, b) in got.iter().zip(&direct.data) {
                gap = gap.max((a - b).abs());
            }
        }
    }
    Ok(gap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreGradients {
    /// Row-major `(c_out, c_in)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// One tensor per pyramid level, same shapes as the features.
    pub pyramid: Vec<Tensor4>,
}

struct RoiGrad {
    weights: Vec<f64>,
    bias: Vec<f64>,
    /// `(level, flat offset, value)` scatter contributions.
    features: Vec<(usize, usize, f64)>,
}

/// Gradients of `<upstream, gre_extract(...)>`.
pub fn gre_gradients(
    pyr: &Pyramid,
    rois: &[BBox],
    cfg: &RoiAlignConfig,
    params: &GreParams,
    upstream: &Tensor4,
) -> Result<GreGradients> {
    gre_gradients_with(Execution::default(), pyr, rois, cfg, params, upstream)
}

pub fn gre_gradients_with(
    exec: Execution,
    pyr: &Pyramid,
    rois: &[BBox],
    cfg: &RoiAlignConfig,
    params: &GreParams,
    upstream: &Tensor4,
) -> Result<GreGradients> {
    cfg.validate()?;
    check_rois(rois)?;
    params.check(pyr)?;
    let bins = cfg.bins();
    let expect = [rois.len(), params.c_out, cfg.out_size.0, cfg.out_size.1];
    if upstream.dims != expect {
        return Err(Error::InvalidInput(format!(
            "upstream gradient has shape {:?}, expected {:?}",
            upstream.dims, expect
        )));
    }
    let c = pyr.channels();
    let (c_out, c_in) = (params.c_out, params.c_in);
    let per_roi = exec.map_range(rois.len(), |n| {
        let plans = roi_plans(pyr, &rois[n], cfg);
        let pooled = pool_all(pyr, &plans, bins);
        let up = &upstream.data[n * c_out * bins..(n + 1) * c_out * bins];

        let mut gw = vec![0.0; c_out * c_in];
        let mut gb = vec![0.0; c_out];
        for o in 0..c_out {
            let up_o = &up[o * bins..(o + 1) * bins];
            gb[o] = up_o.iter().sum();
            for k in 0..c_in {
                let pk = &pooled[k * bins..(k + 1) * bins];
                gw[o * c_in + k] = up_o.iter().zip(pk).map(|(u, p)| u * p).sum();
            }
        }

        let mut features = Vec::new();
        for (l, p) in plans.plans.iter().enumerate() {
            let [_, _, h, w] = pyr.levels[l].features.dims;
            let plane = h * w;
            for ch in 0..c {
                let k = l * c + ch;
                for (b, taps) in p.taps.iter().enumerate() {
                    let g: f64 = (0..c_out)
                        .map(|o| params.weights[o * c_in + k] * up[o * bins + b])
                        .sum();
                    if g != 0.0 {
                        for &(i, wt) in taps {
                            features.push((l, ch * plane + i, g * wt));
                        }
                    }
                }
            }
        }
        RoiGrad {
            weights: gw,
            bias: gb,
            features,
        }
    });

    let mut grads = GreGradients {
        weights: vec![0.0; c_out * c_in],
        bias: vec![0.0; c_out],
        pyramid: pyr
            .levels
            .iter()
            .map(|l| Tensor4::zeros(l.features.dims))
            .collect(),
    };
    for g in per_roi {
        for (a, b) in grads.weights.iter_mut().zip(&g.weights) {
            *a += b;
        }
        for (a, b) in grads.bias.iter_mut().zip(&g.bias) {
            *a += b;
        }
        for (l, i, v) in g.features {
            grads.pyramid[l].data[i] += v;
        }
    }
    Ok(grads)
}

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Relative error with unit floor on the magnitude, so entries whose true
/// gradient is (near) zero are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Checks [`gre_gradients`] against central finite differences of the
/// scalar loss `<upstream, gre_extract(...)>` for every weight, bias and
/// pyramid entry.
pub fn gradcheck(
    pyr: &Pyramid,
    rois: &[BBox],
    cfg: &RoiAlignConfig,
    params: &GreParams,
    upstream: &Tensor4,
    eps: f64,
) -> Result<GradCheckReport> {
    let analytic = gre_gradients(pyr, rois, cfg, params, upstream)?;
    let loss = |p: &Pyramid, g: &GreParams| -> Result<f64> {
        let out = gre_extract(p, rois, cfg, g)?;
        Ok(out
            .data
            .iter()
            .zip(&upstream.data)
            .map(|(a, b)| a * b)
            .sum())
    };
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
    };
    let mut record = |a: f64, n: f64| {
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(relative_error(a, n));
        report.max_abs_error = report.max_abs_error.max((a - n).abs());
    };

    for i in 0..params.weights.len() {
        let mut plus = params.clone();
        plus.weights[i] += eps;
        let mut minus = params.clone();
        minus.weights[i] -= eps;
        let n = (loss(pyr, &plus)? - loss(pyr, &minus)?) / (2.0 * eps);
        record(analytic.weights[i], n);
    }
    for i in 0..params.bias.len() {
        let mut plus = params.clone();
        plus.bias[i] += eps;
        let mut minus = params.clone();
        minus.bias[i] -= eps;
        let n = (loss(pyr, &plus)? - loss(pyr, &minus)?) / (2.0 * eps);
        record(analytic.bias[i], n);
    }
    let mut work = pyr.clone();
    for l in 0..pyr.levels.len() {
        for i in 0..pyr.levels[l].features.data.len() {
            let orig = work.levels[l].features.data[i];
            work.levels[l].features.data[i] = orig + eps;
            let lp = loss(&work, params)?;
            work.levels[l].features.data[i] = orig - eps;
            let lm = loss(&work, params)?;
            work.levels[l].features.data[i] = orig;
            record(analytic.pyramid[l].data[i], (lp - lm) / (2.0 * eps));
        }
    }
    Ok(report)
}
