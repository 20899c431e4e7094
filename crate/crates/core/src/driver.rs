//! Two-resolution accelerated pipeline.
//!
//! Frames are processed in groups. In each group the low-resolution rung is
//! always fully searched. The first `train_count` high-resolution frames are
//! fully searched too and, together with their low-resolution depth maps,
//! calibrate a fresh inference model. The remaining high-resolution frames are
//! searched with model-backed early termination of the 4-way split.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::frame_io::{prepare_rung, Dims, FrameBuffer, FrameSource};
use crate::neighborhood::{DepthIndex, DepthMap, Ladder, NeighborhoodSpec};
use crate::rdo::{block_depth, encode_frame, BlockRect, FrameEncoding, FullSearch, RdoConfig, SearchStats, Terminator};
use crate::trainer::{calibrate, collect_samples, CalibrationConfig, InferenceModel};
use crate::{Error, Result};

/// Model-backed early termination for one high-resolution frame.
pub struct EarlyTerminator<'a> {
    model: Option<&'a InferenceModel>,
    lo_index: &'a DepthIndex,
    ladder: Ladder,
}

impl<'a> EarlyTerminator<'a> {
    pub fn new(model: Option<&'a InferenceModel>, lo_index: &'a DepthIndex, ladder: Ladder) -> Self {
        EarlyTerminator { model, lo_index, ladder }
    }

    /// Estimator value for `rect` with the margin trained for its depth.
    pub fn estimate(&self, rect: &BlockRect) -> Option<f64> {
        let model = self.model?;
        let depth = block_depth(rect);
        let dm = model.depth(depth)?;
        let region = self.ladder.colocate(rect, self.lo_index.dims());
        self.lo_index.mean(&region, &NeighborhoodSpec { margin: dm.margin, depth }).ok()
    }
}

impl Terminator for EarlyTerminator<'_> {
    fn should_terminate(&self, rect: &BlockRect) -> bool {
        let Some(model) = self.model else { return false };
        let Some(dm) = model.depth(block_depth(rect)) else { return false };
        if !dm.enabled || !rect.is_square() {
            return false;
        }
        self.estimate(rect).is_some_and(|x2| x2 < dm.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSchedule {
    pub group_size: usize,
    pub train_count: usize,
}

impl Default for GroupSchedule {
    fn default() -> Self {
        GroupSchedule { group_size: 50, train_count: 5 }
    }
}

impl GroupSchedule {
    /// `train_count == group_size` is accepted and disables acceleration.
    pub fn validate(&self) -> Result<()> {
        if self.train_count == 0 || self.train_count > self.group_size {
            return Err(Error::Config(format!(
                "need 0 < train ({}) <= group ({})",
                self.train_count, self.group_size
            )));
        }
        Ok(())
    }

    pub fn group_count(&self, frames: usize) -> usize {
        frames.div_ceil(self.group_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverOptions {
    pub rdo: RdoConfig,
    pub schedule: GroupSchedule,
    pub calibration: CalibrationConfig,
    /// Also run a full search on the accelerated frames for comparison.
    pub reference: bool,
    /// Replace every trained threshold (e.g. `Some(0.0)` disables termination
    /// while keeping the rest of the pipeline).
    pub tau_override: Option<f64>,
}

impl DriverOptions {
    pub fn new(qp: u8, epsilon: f64) -> Self {
        DriverOptions {
            rdo: RdoConfig::for_qp(qp),
            schedule: GroupSchedule::default(),
            calibration: CalibrationConfig::with_epsilon(epsilon),
            reference: false,
            tau_override: None,
        }
    }
}

/// Everything produced for one group of frames at one QP.
#[derive(Debug, Clone)]
pub struct GroupOutcome {
    pub hi: Vec<FrameEncoding>,
    pub lo: Vec<FrameEncoding>,
    pub lo_maps: Vec<DepthMap>,
    /// Full-search results for every frame (training frames share `hi`).
    pub reference: Option<Vec<FrameEncoding>>,
    pub model: InferenceModel,
    /// Leading frames that were fully searched and used for calibration.
    pub trained_frames: usize,
    pub sample_count: usize,
    pub timing: PassTiming,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PassTiming {
    pub hi: Duration,
    pub lo: Duration,
    pub reference: Duration,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn encode_all(frames: &[FrameBuffer], cfg: &RdoConfig) -> Result<Vec<FrameEncoding>> {
    frames.par_iter().map(|f| encode_frame(f, cfg, &FullSearch)).collect()
}

/// Encodes one group. `hi` and `lo` are padded frames of the two rungs.
pub fn encode_group(hi: &[FrameBuffer], lo: &[FrameBuffer], ladder: &Ladder, opts: &DriverOptions) -> Result<GroupOutcome> {
    opts.schedule.validate()?;
    opts.rdo.validate()?;
    if hi.len() != lo.len() {
        return Err(Error::Input(format!("{} high-resolution frames but {} low-resolution", hi.len(), lo.len())));
    }
    if hi.is_empty() {
        return Err(Error::Input("empty group".into()));
    }
    let cfg = &opts.rdo;
    let train = opts.schedule.train_count.min(hi.len());

    let ((lo_pass, lo_time), (train_pass, train_time)) =
        rayon::join(|| timed(|| encode_all(lo, cfg)), || timed(|| encode_all(&hi[..train], cfg)));
    let lo_pass = lo_pass?;
    let mut hi_pass = train_pass?;
    let lo_maps: Vec<DepthMap> =
        lo.iter().zip(&lo_pass).map(|(f, e)| e.depthmap(f.width(), f.height())).collect();

    let trees: Vec<_> = hi_pass.iter().map(|e| e.trees.clone()).collect();
    let samples = collect_samples(&trees, &lo_maps[..train], ladder)?;
    let mut model = calibrate(&samples, &opts.calibration)?;
    if let Some(tau) = opts.tau_override {
        model = model.with_tau(tau);
    }

    let (accelerated, accel_time) = timed(|| {
        hi[train..]
            .par_iter()
            .zip(&lo_maps[train..])
            .map(|(frame, map)| {
                let index = DepthIndex::new(map);
                encode_frame(frame, cfg, &EarlyTerminator::new(Some(&model), &index, *ladder))
            })
            .collect::<Result<Vec<_>>>()
    });
    hi_pass.extend(accelerated?);

    let mut reference_time = train_time;
    let reference = if opts.reference {
        let (rest, t) = timed(|| encode_all(&hi[train..], cfg));
        reference_time += t;
        let mut all = hi_pass[..train].to_vec();
        all.extend(rest?);
        Some(all)
    } else {
        None
    };

    Ok(GroupOutcome {
        hi: hi_pass,
        lo: lo_pass,
        lo_maps,
        reference,
        model,
        trained_frames: train,
        sample_count: samples.len(),
        timing: PassTiming { hi: train_time + accel_time, lo: lo_time, reference: reference_time },
    })
}

/// Totals for one encoding pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PassStats {
    pub nodes: u64,
    pub cost: f64,
    pub wall_ms: f64,
}

impl PassStats {
    fn add(&mut self, enc: &FrameEncoding) {
        self.nodes += enc.stats.nodes;
        self.cost += enc.cost;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub index: usize,
    pub first_frame: usize,
    pub frame_count: usize,
    pub trained_frames: usize,
    pub sample_count: usize,
    pub model: InferenceModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub accelerated: bool,
    pub nodes: u64,
    pub cost: f64,
    pub reference_nodes: Option<u64>,
    pub reference_cost: Option<f64>,
    pub lo_nodes: u64,
    pub lo_cost: f64,
    /// FNV-1a digest of the low-resolution depth map.
    pub lo_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpReport {
    pub qp: u8,
    pub accelerated: PassStats,
    pub reference: Option<PassStats>,
    pub low: PassStats,
    /// Terminations fired, by block depth.
    pub fired: [u64; 5],
    pub pruned_nodes: u64,
    pub groups: Vec<GroupReport>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub hi: Dims,
    pub lo: Dims,
    pub frames: usize,
    pub epsilon: f64,
    pub schedule: GroupSchedule,
    pub split_bits: f64,
    pub header_bits: f64,
    pub per_qp: Vec<QpReport>,
}

/// Options for a full ladder run over a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderOptions {
    pub hi: Dims,
    pub lo: Dims,
    pub qps: Vec<u8>,
    pub calibration: CalibrationConfig,
    pub schedule: GroupSchedule,
    pub reference: bool,
    pub split_bits: f64,
    pub header_bits: f64,
    pub tau_override: Option<f64>,
    /// Stop after this many source frames.
    pub max_frames: Option<usize>,
}

impl LadderOptions {
    pub fn new(hi: Dims, lo: Dims) -> Self {
        LadderOptions {
            hi,
            lo,
            qps: vec![22, 27, 32, 37],
            calibration: CalibrationConfig::default(),
            schedule: GroupSchedule::default(),
            reference: false,
            split_bits: RdoConfig::DEFAULT_SPLIT_BITS,
            header_bits: RdoConfig::DEFAULT_HEADER_BITS,
            tau_override: None,
            max_frames: None,
        }
    }

    pub fn driver_options(&self, qp: u8) -> DriverOptions {
        DriverOptions {
            rdo: RdoConfig { split_bits: self.split_bits, header_bits: self.header_bits, ..RdoConfig::for_qp(qp) },
            schedule: self.schedule,
            calibration: self.calibration,
            reference: self.reference,
            tau_override: self.tau_override,
        }
    }
}

/// Receives every group's full output during [`run_ladder`].
pub trait RunObserver {
    fn on_group(&mut self, qp: u8, first_frame: usize, outcome: &GroupOutcome) -> Result<()>;
}

impl RunObserver for () {
    fn on_group(&mut self, _: u8, _: usize, _: &GroupOutcome) -> Result<()> {
        Ok(())
    }
}

pub fn depthmap_digest(map: &DepthMap) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in (map.width() as u32).to_le_bytes().iter().chain(&(map.height() as u32).to_le_bytes()).chain(map.depths()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Runs the accelerated ladder for every QP over `source`.
pub fn run_ladder(
    source: &mut dyn FrameSource,
    opts: &LadderOptions,
    observer: &mut dyn RunObserver,
) -> Result<RunReport> {
    opts.schedule.validate()?;
    opts.calibration.validate()?;
    if opts.qps.is_empty() {
        return Err(Error::Config("no QPs requested".into()));
    }
    let ladder = Ladder::new(opts.hi, opts.lo)?;
    let src = source.header();
    if src.width < opts.hi.width || src.height < opts.hi.height {
        return Err(Error::InvalidArgument(format!("source {} is smaller than the high rung {}", src.dims(), opts.hi)));
    }

    let mut per_qp: Vec<QpReport> = opts
        .qps
        .iter()
        .map(|&qp| QpReport {
            qp,
            accelerated: PassStats::default(),
            reference: opts.reference.then(PassStats::default),
            low: PassStats::default(),
            fired: [0; 5],
            pruned_nodes: 0,
            groups: Vec::new(),
            frames: Vec::new(),
        })
        .collect();

    let limit = opts.max_frames.unwrap_or(usize::MAX);
    let mut first = 0;
    let mut group_index = 0;
    while first < limit {
        let mut hi = Vec::new();
        let mut lo = Vec::new();
        let want = opts.schedule.group_size.min(limit - first);
        while hi.len() < want {
            let Some(frame) = source.next() else { break };
            let frame = frame?;
            hi.push(prepare_rung(&frame, opts.hi)?);
            lo.push(prepare_rung(&frame, opts.lo)?);
        }
        if hi.is_empty() {
            break;
        }
        for (&qp, report) in opts.qps.iter().zip(per_qp.iter_mut()) {
            let outcome = encode_group(&hi, &lo, &ladder, &opts.driver_options(qp))?;
            record_group(report, group_index, first, &outcome);
            observer.on_group(qp, first, &outcome)?;
        }
        first += hi.len();
        group_index += 1;
    }
    if first == 0 {
        return Err(Error::Input("source produced no frames".into()));
    }

    Ok(RunReport {
        hi: opts.hi,
        lo: opts.lo,
        frames: first,
        epsilon: opts.calibration.epsilon,
        schedule: opts.schedule,
        split_bits: opts.split_bits,
        header_bits: opts.header_bits,
        per_qp,
    })
}

fn record_group(report: &mut QpReport, index: usize, first: usize, outcome: &GroupOutcome) {
    let trained = outcome.trained_frames;
    for (k, enc) in outcome.hi.iter().enumerate() {
        report.accelerated.add(enc);
        merge_fired(report, &enc.stats);
        let lo = &outcome.lo[k];
        report.low.add(lo);
        let reference = outcome.reference.as_ref().map(|r| &r[k]);
        if let (Some(stats), Some(r)) = (report.reference.as_mut(), reference) {
            stats.add(r);
        }
        report.frames.push(FrameRecord {
            index: first + k,
            accelerated: k >= trained,
            nodes: enc.stats.nodes,
            cost: enc.cost,
            reference_nodes: reference.map(|r| r.stats.nodes),
            reference_cost: reference.map(|r| r.cost),
            lo_nodes: lo.stats.nodes,
            lo_cost: lo.cost,
            lo_digest: depthmap_digest(&outcome.lo_maps[k]),
        });
    }
    report.accelerated.wall_ms += outcome.timing.hi.as_secs_f64() * 1e3;
    report.low.wall_ms += outcome.timing.lo.as_secs_f64() * 1e3;
    if let Some(r) = report.reference.as_mut() {
        r.wall_ms += outcome.timing.reference.as_secs_f64() * 1e3;
    }
    report.groups.push(GroupReport {
        index,
        first_frame: first,
        frame_count: outcome.hi.len(),
        trained_frames: trained,
        sample_count: outcome.sample_count,
        model: outcome.model.clone(),
    });
}

fn merge_fired(report: &mut QpReport, stats: &SearchStats) {
    report.pruned_nodes += stats.pruned_nodes;
    for (a, b) in report.fired.iter_mut().zip(stats.fired) {
        *a += b;
    }
}
