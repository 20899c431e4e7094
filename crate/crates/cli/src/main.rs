//! `qtree-ladder`: two-resolution accelerated partition search.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qtree_core::driver::{run_ladder, GroupOutcome, GroupSchedule, LadderOptions, RunObserver, RunReport};
use qtree_core::frame_io::{prepare_rung, read_y4m, write_depthmap, Chroma, Y4mWriter};
use qtree_core::metrics::{bd_psnr, bd_rate, summarize, RdPoint, Summary};
use qtree_core::neighborhood::Ladder;
use qtree_core::rdo::{encode_frame, FullSearch};
use qtree_core::sim::{
    best_radius, bias_variance_sweep, cross_resolution_link, default_params, estimator_moments, sample_field,
    FieldParams, LinkFunction, DEFAULT_RADII,
};
use qtree_core::synth::{ClipPreset, SynthClip};
use qtree_core::trainer::{calibrate, collect_samples, CalibrationConfig, RateDenominator};
use qtree_core::{Dims, FrameSource, RdoConfig};

#[derive(Parser)]
#[command(name = "qtree-ladder", version, about = "Accelerated quadtree partition search for two-rung encoding ladders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a sequence on both rungs and write a JSON run report.
    Encode(EncodeArgs),
    /// Write per-frame depth maps of both rungs for one QP.
    DumpDepthmaps(DumpArgs),
    /// Calibrate a model from the leading frames and save it as TOML.
    TrainOnly(TrainArgs),
    /// Run the synthetic estimator simulations.
    Simulate(SimulateArgs),
    /// BD-rate and BD-PSNR between two rate,psnr CSV curves.
    Bd(BdArgs),
    /// Write a procedural test clip as Y4M.
    SynthClip(SynthArgs),
}

#[derive(Args)]
struct LadderArgs {
    #[arg(long)]
    input: PathBuf,
    /// High-resolution rung, WxH.
    #[arg(long)]
    hi: Dims,
    /// Low-resolution rung, WxH.
    #[arg(long)]
    lo: Dims,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 50)]
    group: usize,
    #[arg(long, default_value_t = 5)]
    train: usize,
    #[arg(long, default_value_t = RdoConfig::DEFAULT_SPLIT_BITS)]
    split_bits: f64,
    #[arg(long, default_value_t = RdoConfig::DEFAULT_HEADER_BITS)]
    header_bits: f64,
    /// Depths with fewer calibration samples get no early termination.
    #[arg(long, default_value_t = 50)]
    min_samples: usize,
    #[arg(long, value_enum, default_value_t = Denominator::Joint)]
    denominator: Denominator,
    /// Replace every trained threshold (0 disables termination).
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_frames: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Denominator {
    Joint,
    Conditional,
}

impl LadderArgs {
    fn options(&self, qps: Vec<u8>, reference: bool) -> LadderOptions {
        let mut o = LadderOptions::new(self.hi, self.lo);
        o.qps = qps;
        o.calibration = CalibrationConfig {
            epsilon: self.epsilon,
            min_samples: self.min_samples,
            denominator: match self.denominator {
                Denominator::Joint => RateDenominator::Joint,
                Denominator::Conditional => RateDenominator::Conditional,
            },
        };
        o.schedule = GroupSchedule { group_size: self.group, train_count: self.train };
        o.reference = reference;
        o.split_bits = self.split_bits;
        o.header_bits = self.header_bits;
        o.tau_override = self.tau;
        o.max_frames = self.max_frames;
        o
    }
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    ladder: LadderArgs,
    #[arg(long, value_delimiter = ',', default_value = "22,27,32,37")]
    qp: Vec<u8>,
    #[arg(long)]
    report: PathBuf,
    /// Also run full search on accelerated frames and report the deltas.
    #[arg(long)]
    reference: bool,
    /// Directory for each group's calibrated model (TOML).
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    ladder: LadderArgs,
    #[arg(long, default_value_t = 32)]
    qp: u8,
    /// Output directory; receives hi.qldp and lo.qldp.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    hi: Dims,
    #[arg(long)]
    lo: Dims,
    #[arg(long, default_value_t = 32)]
    qp: u8,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 5)]
    train: usize,
    #[arg(long, default_value_t = 50)]
    min_samples: usize,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimPreset {
    Moments,
    BiasSweep,
    Link,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    preset: SimPreset,
    #[arg(long, default_value_t = 10_000)]
    replications: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// JSON output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the main table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BdArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "court")]
    preset: ClipPreset,
    #[arg(long, default_value = "960x540")]
    size: Dims,
    #[arg(long, default_value_t = 150)]
    frames: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn open_input(path: &Path) -> Result<Box<dyn FrameSource>> {
    let (_, reader) = read_y4m(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Box::new(reader))
}

#[derive(Serialize)]
struct EncodeReport {
    run: RunReport,
    summary: Option<Summary>,
}

struct ModelSink {
    dir: Option<PathBuf>,
}

impl RunObserver for ModelSink {
    fn on_group(&mut self, qp: u8, first: usize, outcome: &GroupOutcome) -> qtree_core::Result<()> {
        if let Some(dir) = &self.dir {
            outcome.model.save(dir.join(format!("qp{qp}_frame{first:05}.toml")))?;
        }
        Ok(())
    }
}

fn encode(args: EncodeArgs) -> Result<()> {
    let opts = args.ladder.options(args.qp, args.reference);
    if let Some(dir) = &args.models {
        std::fs::create_dir_all(dir)?;
    }
    let mut source = open_input(&args.ladder.input)?;
    let run = run_ladder(source.as_mut(), &opts, &mut ModelSink { dir: args.models })?;
    let summary = if args.reference { Some(summarize(&run)?) } else { None };
    for q in &run.per_qp {
        println!(
            "qp {:>2}: nodes {:>12} cost {:>16.1} fired {:?}",
            q.qp, q.accelerated.nodes, q.accelerated.cost, q.fired
        );
    }
    if let Some(s) = &summary {
        println!("node delta {:+.2}%  cost delta {:+.3}%", s.delta_t_proxy * 100.0, s.delta_cost * 100.0);
    }
    write_json(Some(&args.report), &EncodeReport { run, summary })
}

struct DepthDump {
    hi: BufWriter<File>,
    lo: BufWriter<File>,
    hi_dims: Dims,
}

impl RunObserver for DepthDump {
    fn on_group(&mut self, _: u8, first: usize, outcome: &GroupOutcome) -> qtree_core::Result<()> {
        let padded = self.hi_dims.padded();
        for (k, (enc, lo)) in outcome.hi.iter().zip(&outcome.lo_maps).enumerate() {
            let index = (first + k) as u32;
            write_depthmap(&mut self.hi, &enc.depthmap(padded.width, padded.height), index)?;
            write_depthmap(&mut self.lo, lo, index)?;
        }
        Ok(())
    }
}

fn dump_depthmaps(args: DumpArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let opts = args.ladder.options(vec![args.qp], false);
    let mut dump = DepthDump {
        hi: BufWriter::new(File::create(args.out.join("hi.qldp"))?),
        lo: BufWriter::new(File::create(args.out.join("lo.qldp"))?),
        hi_dims: args.ladder.hi,
    };
    let mut source = open_input(&args.ladder.input)?;
    let run = run_ladder(source.as_mut(), &opts, &mut dump)?;
    dump.hi.flush()?;
    dump.lo.flush()?;
    println!("wrote {} frames to {}", run.frames, args.out.display());
    Ok(())
}

fn train_only(args: TrainArgs) -> Result<()> {
    if args.train == 0 {
        bail!("--train must be at least 1");
    }
    let ladder = Ladder::new(args.hi, args.lo)?;
    let cfg = RdoConfig::for_qp(args.qp);
    let (_, reader) = read_y4m(&args.input)?;
    let mut trees = Vec::new();
    let mut maps = Vec::new();
    for frame in reader.take(args.train) {
        let frame = frame?;
        let hi = prepare_rung(&frame, args.hi)?;
        let lo = prepare_rung(&frame, args.lo)?;
        trees.push(encode_frame(&hi, &cfg, &FullSearch)?.trees);
        maps.push(encode_frame(&lo, &cfg, &FullSearch)?.depthmap(lo.width(), lo.height()));
    }
    let samples = collect_samples(&trees, &maps, &ladder)?;
    let calibration =
        CalibrationConfig { min_samples: args.min_samples, ..CalibrationConfig::with_epsilon(args.epsilon) };
    let model = calibrate(&samples, &calibration)?;
    model.save(&args.model)?;
    for d in &model.depths {
        println!(
            "depth {}: margin {:>3} tau {:.1} enabled {:<5} type1 {:.3} type2 {:.3} samples {}",
            d.depth, d.margin, d.tau, d.enabled, d.type1_rate, d.type2_rate, d.sample_count
        );
    }
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MomentsRow {
    mu0: f64,
    beta_x: f64,
    beta_y: f64,
    sigma2: f64,
    radius: usize,
    n: usize,
    empirical_mean: f64,
    predicted_mean: f64,
    mean_se: f64,
    empirical_sd: f64,
    predicted_sd: f64,
    sd_se: f64,
    bias_bound: f64,
    within_4se: bool,
}

#[derive(Serialize)]
struct LinkCsvRow {
    dx: i64,
    dy: i64,
    distance: f64,
    ex1: f64,
    ex2: f64,
    predicted_ex1: f64,
    discrepancy: f64,
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let (params, g) = default_params();
    match args.preset {
        SimPreset::Moments => {
            let configs = [
                (FieldParams { mu0: 0.0, beta: [0.3, 0.1], sigma2: 0.1 }, 1),
                (params, 3),
                (FieldParams { mu0: -1.0, beta: [0.0, 0.4], sigma2: 0.3 }, 2),
                (FieldParams { mu0: 0.5, beta: [0.2, -0.2], sigma2: 0.0 }, 4),
                (FieldParams { mu0: 2.5, beta: [1.0, 0.0], sigma2: 0.5 }, 5),
            ];
            let mut rows = Vec::new();
            for (i, (p, r)) in configs.iter().enumerate() {
                let field = sample_field(p, *r, args.seed + i as u64)?;
                let rep = estimator_moments(&field, &g, *r, args.replications, args.seed + 100 + i as u64)?;
                rows.push(MomentsRow {
                    mu0: p.mu0,
                    beta_x: p.beta[0],
                    beta_y: p.beta[1],
                    sigma2: p.sigma2,
                    radius: *r,
                    n: rep.n,
                    empirical_mean: rep.empirical_mean,
                    predicted_mean: rep.predicted_mean,
                    mean_se: rep.mean_se,
                    empirical_sd: rep.empirical_sd,
                    predicted_sd: rep.predicted_sd,
                    sd_se: rep.sd_se,
                    bias_bound: rep.bias_bound,
                    within_4se: rep.moments_within(4.0),
                });
            }
            if let Some(p) = &args.csv {
                write_csv(p, &rows)?;
            }
            write_json(args.out.as_deref(), &rows)
        }
        SimPreset::BiasSweep => {
            let rows = bias_variance_sweep(&params, &g, &DEFAULT_RADII, args.replications, args.seed)?;
            if let Some(p) = &args.csv {
                write_csv(p, &rows)?;
            }
            #[derive(Serialize)]
            struct Sweep<'a> {
                params: FieldParams,
                link: LinkFunction,
                best_radius: Option<usize>,
                rows: &'a [qtree_core::sim::SweepRow],
            }
            write_json(args.out.as_deref(), &Sweep { params, link: g, best_radius: best_radius(&rows), rows: &rows })
        }
        SimPreset::Link => {
            let field = sample_field(&params, 8, args.seed)?;
            let g2 = LinkFunction::logistic(0.3, 1.2);
            let offsets: Vec<(i64, i64)> = (0..=8).map(|k| (k, 0)).chain((1..=8).map(|k| (k, k))).collect();
            let report = cross_resolution_link(&field, &g, &g2, &offsets, args.replications, args.seed + 1)?;
            if let Some(p) = &args.csv {
                let rows: Vec<_> = report
                    .rows
                    .iter()
                    .map(|r| LinkCsvRow {
                        dx: r.offset.0,
                        dy: r.offset.1,
                        distance: r.distance,
                        ex1: r.ex1,
                        ex2: r.ex2,
                        predicted_ex1: r.predicted_ex1,
                        discrepancy: r.discrepancy,
                    })
                    .collect();
                write_csv(p, &rows)?;
            }
            write_json(args.out.as_deref(), &report)
        }
    }
}

fn read_curve(path: &Path) -> Result<Vec<RdPoint>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let points = r.deserialize().collect::<std::result::Result<Vec<RdPoint>, _>>()?;
    Ok(points)
}

fn bd(args: BdArgs) -> Result<()> {
    let reference = read_curve(&args.reference)?;
    let test = read_curve(&args.test)?;
    #[derive(Serialize)]
    struct Bd {
        bd_rate_percent: f64,
        bd_psnr_db: f64,
    }
    write_json(None, &Bd { bd_rate_percent: bd_rate(&reference, &test)?, bd_psnr_db: bd_psnr(&reference, &test)? })
}

fn synth_clip(args: SynthArgs) -> Result<()> {
    let clip = SynthClip::new(args.preset, args.size, args.frames, args.seed)?;
    let mut w = Y4mWriter::create(&args.out, args.size, (30, 1), Chroma::Yuv420)?;
    for frame in clip {
        w.write_frame(&frame?)?;
    }
    w.finish()?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Encode(a) => encode(a),
        Command::DumpDepthmaps(a) => dump_depthmaps(a),
        Command::TrainOnly(a) => train_only(a),
        Command::Simulate(a) => simulate(a),
        Command::Bd(a) => bd(a),
        Command::SynthClip(a) => synth_clip(a),
    }
}
