//! The `flowerkit` command line.
//!
//! Exit codes: `0` success, `1` rejected request (bad flags, bad values,
//! missing inputs), `2` failure while running (I/O, corrupt files, failed
//! checks).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use flowerkit_core::dataset::{gen_dataset_with, Family, FamilyParams, Split, TrajectoryDataset};
use flowerkit_core::diff::OpKind;
use flowerkit_core::flower::{block_ids, count_params, extract_displacements, param_specs, FlowerConfig, FlowerParams};
use flowerkit_core::grid::Boundary;
use flowerkit_core::train::{
    displacement_alignment, evaluate, rollout, rollout_score, train_loop, weighted_displacement, Clock, Persistence,
};

use crate::bench::{linear_fit, run_bench};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::netcheck::{interpolate_dot_test, network_gradcheck, NetCheck};
use crate::parallel::Pool;
use crate::render::{overlay_arrows, render_field};
use crate::report::{kv_lines, table, Report, Value};
use crate::store::{load_checkpoint, load_dataset, save_checkpoint, save_dataset, Checkpoint};
use crate::suites::{run_suite, Suite};

#[derive(Parser, Debug)]
#[command(name = "flowerkit", version, about = "Warp-based neural PDE surrogates: data, training, checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a trajectory dataset from a reference solver.
    GenData(GenDataArgs),
    /// Train a network from a run configuration file.
    Train(TrainArgs),
    /// Next-step VRMSE of a checkpoint against persistence.
    Eval(EvalArgs),
    /// Autoregressive rollout VRMSE of a checkpoint against persistence.
    Rollout(RolloutArgs),
    /// Finite-difference check of every network gradient.
    Gradcheck(GradcheckArgs),
    /// Run a reference-solver property suite.
    Oracle(OracleArgs),
    /// Render a frame (optionally with displacement arrows) as PPM.
    Render(RenderArgs),
    /// Count learnable parameters of a configuration.
    CountParams(CountParamsArgs),
    /// Time a warp layer and the network across resolutions.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Also write the report as structured text to this path.
    #[arg(long, value_name = "PATH")]
    pub out_jsonish: Option<PathBuf>,
    /// Print this command's flags as structured text and exit.
    #[arg(long)]
    pub help_json_ish: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// U-Net levels.
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    /// Lift width c_0.
    #[arg(long, default_value_t = 32)]
    pub c_lift: usize,
    /// Warp heads per block.
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Normalisation groups per block.
    #[arg(long, default_value_t = 4)]
    pub groups: usize,
    /// Spatial dimension.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Physical channels per frame.
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Boundary rule: periodic, clamp or reflect.
    #[arg(long, default_value = "periodic")]
    pub bc: String,
    /// Predict the increment over the last input frame.
    #[arg(long)]
    pub residual: bool,
}

impl ModelArgs {
    fn config(&self) -> Result<FlowerConfig> {
        let cfg = FlowerConfig {
            bc: parse_bc(&self.bc)?,
            residual: self.residual,
            ..FlowerConfig::next_step(self.dim, self.channels, self.levels, self.c_lift, self.heads, self.groups)
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// advection_const | advection_var | burgers_1d | burgers_2d_axis | kinetic_stream.
    #[arg(long)]
    pub family: String,
    /// Output dataset file.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of trajectories.
    #[arg(long, default_value_t = 200)]
    pub n_traj: usize,
    /// Frames per trajectory (at least 5).
    #[arg(long, default_value_t = 24)]
    pub frames: usize,
    /// Grid shape, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub shape: Vec<usize>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Time between frames.
    #[arg(long, default_value_t = 0.05)]
    pub dt: f64,
    /// Advection velocity or Burgers direction, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub velocity: Vec<f64>,
    /// Initial-condition amplitude.
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Amplitude of the variable part of the advection velocity.
    #[arg(long, default_value_t = 0.5)]
    pub swirl: f64,
    /// Highest wavenumber per axis of the initial condition.
    #[arg(long, default_value_t = 4)]
    pub modes: usize,
    /// Velocity nodes of kinetic_stream.
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Streaming speed of kinetic_stream.
    #[arg(long, default_value_t = 0.5)]
    pub speed: f64,
    /// Integrator steps per frame.
    #[arg(long, default_value_t = 4)]
    pub substeps: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run configuration file (key = value).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the configured epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Split of an unsplit dataset to score: train, valid, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Windows scored per trajectory (default: all).
    #[arg(long)]
    pub windows_per_traj: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Split of an unsplit dataset: train, valid, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Autoregressive steps.
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Report per-step errors of this trajectory only.
    #[arg(long)]
    pub traj: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// U-Net levels.
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    /// Lift width c_0.
    #[arg(long, default_value_t = 8)]
    pub c_lift: usize,
    /// Warp heads per block.
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    /// Normalisation groups per block.
    #[arg(long, default_value_t = 4)]
    pub groups: usize,
    /// Physical channels per frame.
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Grid shape, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16,16")]
    pub shape: Vec<usize>,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Probed entries per tensor (0: all).
    #[arg(long, default_value_t = 0)]
    pub max_entries: usize,
    /// Seed of the parameters and inputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replace every warp by its pointwise value map.
    #[arg(long)]
    pub pointwise: bool,
    /// Corrupt the adjoint of this op (harness self-test).
    #[arg(long, hide = true)]
    pub corrupt_adjoint: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    /// characteristics | taylor | conv | kinetic | rays | eikonal | all.
    #[arg(long)]
    pub suite: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Output PPM path.
    #[arg(long)]
    pub out: PathBuf,
    /// Trajectory index.
    #[arg(long, default_value_t = 0)]
    pub traj: usize,
    /// Frame index within the trajectory.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Channel to draw.
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
    /// Pixels per cell.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Checkpoint whose displacements are overlaid (needs --frame >= 3).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Block whose displacements are drawn.
    #[arg(long, default_value = "enc0")]
    pub block: String,
    /// Head to draw, or `all` for the value-weighted average.
    #[arg(long, default_value = "all")]
    pub head: String,
    /// One arrow every this many cells.
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    /// Arrow length multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub gain: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct CountParamsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Side lengths, comma separated (each a multiple of 2^(levels-1)).
    #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
    pub resolutions: Vec<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Untimed iterations per resolution.
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Timed iterations per resolution (median reported).
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    /// Skip the full-network timing.
    #[arg(long)]
    pub no_forward: bool,
    /// Seed of the weights and inputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn parse_bc(s: &str) -> Result<Boundary> {
    Boundary::parse(s).ok_or_else(|| usage(format!("unknown boundary rule `{s}`")))
}

struct Wall(Instant);

impl Clock for Wall {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Structured description of a command's flags (for `--help-json-ish`).
pub fn flag_dump(cmd: &clap::Command) -> Value {
    let flags = cmd
        .get_arguments()
        .filter(|a| !a.is_hide_set() && a.get_long().is_some())
        .map(|a| {
            let takes_value = a.get_action().takes_values();
            Value::Map(vec![
                ("flag".into(), format!("--{}", a.get_long().unwrap_or_default()).into()),
                ("help".into(), a.get_help().map(|h| h.to_string()).unwrap_or_default().into()),
                ("takes_value".into(), takes_value.into()),
                ("required".into(), a.is_required_set().into()),
                (
                    "default".into(),
                    Value::List(
                        a.get_default_values()
                            .iter()
                            .map(|v| v.to_string_lossy().into_owned().into())
                            .collect(),
                    ),
                ),
            ])
        })
        .collect();
    Value::Map(vec![
        ("command".into(), cmd.get_name().to_string().into()),
        ("about".into(), cmd.get_about().map(|h| h.to_string()).unwrap_or_default().into()),
        ("flags".into(), Value::List(flags)),
    ])
}

fn help_json_ish(args: &[OsString]) -> Option<String> {
    if !args.iter().any(|a| a == "--help-json-ish") {
        return None;
    }
    let root = Cli::command();
    let sub = args
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find_map(|a| root.find_subcommand(a).cloned());
    Some(match sub {
        Some(c) => flag_dump(&c).to_text(),
        None => Value::List(root.get_subcommands().map(flag_dump).collect()).to_text(),
    })
}

/// Parses `args` (including the program name), runs the command, writes
/// the report to `out` and returns the exit code.
pub fn run(args: Vec<OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if let Some(text) = help_json_ish(&args) {
        let _ = out.write_all(text.as_bytes());
        return 0;
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(rendered.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(rendered.as_bytes());
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn finish(common: &Common, report: &Report, code: i32) -> Result<i32> {
    if let Some(p) = &common.out_jsonish {
        std::fs::write(p, report.to_jsonish())?;
    }
    Ok(code)
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::GenData(a) => cmd_gen_data(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Rollout(a) => cmd_rollout(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Oracle(a) => cmd_oracle(&a, out),
        Command::Render(a) => cmd_render(&a, out),
        Command::CountParams(a) => cmd_count_params(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
    }
}

fn sci(x: f64) -> String {
    format!("{x:.4e}")
}

pub fn cmd_gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<i32> {
    let family = Family::parse(&a.family).ok_or_else(|| usage(format!("unknown family `{}`", a.family)))?;
    let params = FamilyParams {
        velocity: a.velocity.clone(),
        amplitude: a.amplitude,
        swirl: a.swirl,
        dt: a.dt,
        modes: a.modes,
        heads: a.heads,
        speed: a.speed,
        substeps: a.substeps,
    };
    let t0 = Instant::now();
    let ds = gen_dataset_with(&Pool::from_env(), family, &params, a.n_traj, a.frames, &a.shape, a.seed)?;
    let digest = save_dataset(&a.out, &ds)?;
    let secs = t0.elapsed().as_secs_f64();
    write!(
        out,
        "{}",
        kv_lines(&[
            ("family", family.name().into()),
            ("trajectories", ds.n_traj().to_string()),
            ("frames", ds.n_frames().to_string()),
            ("channels", ds.channels().to_string()),
            ("shape", format!("{:?}", ds.geom().shape())),
            ("seed", a.seed.to_string()),
            ("digest", digest.clone()),
            ("seconds", format!("{secs:.2}")),
            ("written", a.out.display().to_string()),
        ])
    )?;
    let mut r = Report::new("gen-data");
    r.set("family", family.name());
    r.set("n_traj", ds.n_traj());
    r.set("frames", ds.n_frames());
    r.set("seed", a.seed);
    r.set("digest", digest);
    r.set("path", a.out.display().to_string());
    finish(&a.common, &r, 0)
}

/// Train/valid/test partition of a dataset file: an unsplit file is split
/// 80/10/10; a pre-split file is used as-is for the requested role.
fn partition(ds: TrajectoryDataset) -> (TrajectoryDataset, TrajectoryDataset, TrajectoryDataset) {
    ds.split_train_valid_test()
}

fn select_split(ds: TrajectoryDataset, split: &str) -> Result<TrajectoryDataset> {
    let want = Split::parse(split).ok_or_else(|| usage(format!("unknown split `{split}`")))?;
    if ds.split != Split::All || want == Split::All {
        return Ok(ds);
    }
    let (tr, va, te) = partition(ds);
    Ok(match want {
        Split::Train => tr,
        Split::Valid => va,
        _ => te,
    })
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let mut rc = RunConfig::load(&a.config)?;
    if let Some(e) = a.epochs {
        rc.epochs = e;
    }
    if let Some(s) = a.seed {
        rc.seed = s;
    }
    let ds = load_dataset(&rc.dataset)?;
    if ds.split != Split::All {
        return Err(usage("train needs an unsplit dataset (split = all)"));
    }
    let (train, valid, _) = partition(ds);
    let cfg = rc.flower_config(train.geom().dim(), train.channels());
    let init = FlowerParams::<f32>::init(&cfg, rc.seed)?;
    std::fs::create_dir_all(&rc.out_dir)?;
    std::fs::write(rc.out_dir.join("config.txt"), rc.to_text())?;
    let mut log = std::fs::File::create(rc.out_dir.join("train_log.txt"))?;
    writeln!(
        out,
        "training {} parameters on {} trajectories ({} validation)",
        count_params(&cfg),
        train.n_traj(),
        valid.n_traj()
    )?;
    let pool = Pool::from_env();
    let mut io_err = None;
    let result = train_loop(
        init,
        &train,
        &valid,
        &rc.train_config(),
        &pool,
        &Wall(Instant::now()),
        &mut |r| {
            let line = r.to_line();
            if let Err(e) = writeln!(out, "{line}").and_then(|_| writeln!(log, "{line}")) {
                io_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let last = result.records.last().cloned();
    let mut extra = std::collections::BTreeMap::new();
    extra.insert("epochs".into(), rc.epochs.to_string());
    extra.insert("seed".into(), rc.seed.to_string());
    if let Some(l) = &last {
        extra.insert("valid_vrmse".into(), l.valid_vrmse.to_string());
    }
    let ck_path = rc.out_dir.join("final.flw");
    save_checkpoint(
        &ck_path,
        &Checkpoint {
            model: result.model,
            optim: Some(result.optim),
            extra,
        },
    )?;
    writeln!(out, "checkpoint: {}", ck_path.display())?;
    let mut r = Report::new("train");
    r.set("checkpoint", ck_path.display().to_string());
    r.set("epochs", rc.epochs);
    if let Some(l) = last {
        r.set("final_train_loss", l.train_loss);
        r.set("final_valid_vrmse", l.valid_vrmse);
    }
    finish(&a.common, &r, 0)
}

/// The advection velocity recorded in a constant-advection dataset.
fn advection_velocity(ds: &TrajectoryDataset) -> Option<Vec<f64>> {
    if ds.family != Family::AdvectionConst {
        return None;
    }
    let v = ds.coefficients.iter().find(|(k, _)| k == "velocity")?;
    v.1.split(',').map(|x| x.trim().parse().ok()).collect()
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = select_split(load_dataset(&a.data)?, &a.split)?;
    let pool = Pool::from_env();
    let model = evaluate(&pool, &ck.model, &ds, a.windows_per_traj)?;
    let persistence = evaluate(&pool, &Persistence { channels: ds.channels() }, &ds, a.windows_per_traj)?;
    let mut pairs = vec![
        ("split", ds.split.name().to_string()),
        ("trajectories", ds.n_traj().to_string()),
        ("model vrmse", sci(model)),
        ("persistence vrmse", sci(persistence)),
        ("ratio", format!("{:.4}", model / persistence)),
    ];
    let mut r = Report::new("eval");
    r.set("model_vrmse", model);
    r.set("persistence_vrmse", persistence);
    r.set("ratio", model / persistence);
    if let Some(v) = advection_velocity(&ds) {
        // a pullback reads upstream, so its displacement points along -v
        let reference: Vec<f64> = v.iter().map(|x| -x).collect();
        for block in ["enc0", "bot"] {
            if block_ids(ck.model.params.config()).iter().any(|b| b == block) {
                let cos = displacement_alignment(&pool, &ck.model, &ds, block, &reference)?;
                r.set(&format!("alignment_{block}"), cos);
                pairs.push((if block == "enc0" { "alignment enc0" } else { "alignment bot" }, format!("{cos:.4}")));
            }
        }
    }
    write!(out, "{}", kv_lines(&pairs))?;
    finish(&a.common, &r, 0)
}

pub fn cmd_rollout(a: &RolloutArgs, out: &mut dyn Write) -> Result<i32> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = select_split(load_dataset(&a.data)?, &a.split)?;
    let persist = Persistence { channels: ds.channels() };
    let mut r = Report::new("rollout");
    r.set("steps", a.steps);
    if let Some(i) = a.traj {
        if i >= ds.n_traj() {
            return Err(usage(format!("trajectory {i} out of range (split has {})", ds.n_traj())));
        }
        let m = rollout(&ck.model, &ds, i, 0, a.steps)?;
        let p = rollout(&persist, &ds, i, 0, a.steps)?;
        let rows: Vec<Vec<String>> = (0..a.steps)
            .map(|k| vec![(k + 1).to_string(), sci(m.vrmse[k]), sci(p.vrmse[k])])
            .collect();
        write!(out, "{}", table(&["step", "model", "persistence"], &rows))?;
        writeln!(out, "mean  {}  {}", sci(m.mean()), sci(p.mean()))?;
        r.set("model_vrmse", Value::List(m.vrmse.iter().map(|&x| x.into()).collect()));
        r.set("persistence_vrmse", Value::List(p.vrmse.iter().map(|&x| x.into()).collect()));
        r.set("model_mean", m.mean());
        r.set("persistence_mean", p.mean());
    } else {
        let pool = Pool::from_env();
        let m = rollout_score(&pool, &ck.model, &ds, a.steps)?;
        let p = rollout_score(&pool, &persist, &ds, a.steps)?;
        write!(
            out,
            "{}",
            kv_lines(&[
                ("trajectories", ds.n_traj().to_string()),
                ("steps", a.steps.to_string()),
                ("model mean vrmse", sci(m)),
                ("persistence mean vrmse", sci(p)),
                ("ratio", format!("{:.4}", m / p)),
            ])
        )?;
        r.set("model_mean", m);
        r.set("persistence_mean", p);
        r.set("ratio", m / p);
    }
    finish(&a.common, &r, 0)
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let dim = a.shape.len();
    let cfg = FlowerConfig::next_step(dim, a.channels, a.levels, a.c_lift, a.heads, a.groups);
    cfg.check_shape(&a.shape)?;
    let n_params = count_params(&cfg);
    if n_params > 50_000 {
        return Err(usage(format!("{n_params} parameters exceed the 50000 budget of the f64 check")));
    }
    let fault = match &a.corrupt_adjoint {
        Some(name) => Some(OpKind::parse(name).ok_or_else(|| usage(format!("unknown op `{name}`")))?),
        None => None,
    };
    let check = NetCheck {
        seed: a.seed,
        max_entries: a.max_entries,
        warp: !a.pointwise,
        fault,
        ..NetCheck::new(cfg.clone(), &a.shape)
    };
    let t0 = Instant::now();
    let rep = network_gradcheck(&check)?;
    let rows: Vec<Vec<String>> = rep
        .groups
        .iter()
        .map(|g| {
            vec![
                g.name.clone(),
                sci(g.group_rel),
                sci(g.worst_rel),
                g.compared.to_string(),
                g.kink_skipped.to_string(),
                if g.group_rel <= a.tolerance { "ok" } else { "FAIL" }.to_string(),
            ]
        })
        .collect();
    write!(
        out,
        "{}",
        table(&["group", "rel error", "worst entry", "compared", "kink skips", ""], &rows)
    )?;
    let failing: Vec<&str> = rep
        .groups
        .iter()
        .filter(|g| !(g.group_rel <= a.tolerance))
        .map(|g| g.name.as_str())
        .collect();
    let dot = interpolate_dot_test(&a.shape, 3, 64, Boundary::Periodic, a.seed)?;
    writeln!(out, "parameters: {n_params}")?;
    writeln!(out, "interpolation dot test: rel {}", sci(dot.rel))?;
    writeln!(out, "seconds: {:.2}", t0.elapsed().as_secs_f64())?;
    let mut r = Report::new("gradcheck");
    r.set("parameters", n_params);
    r.set("tolerance", a.tolerance);
    r.set(
        "groups",
        Value::Map(rep.groups.iter().map(|g| (g.name.clone(), g.group_rel.into())).collect()),
    );
    r.set("interpolate_dot_rel", dot.rel);
    r.set("failing", Value::List(failing.iter().map(|&s| s.into()).collect()));
    if failing.is_empty() {
        writeln!(out, "all groups within {:e}", a.tolerance)?;
        finish(&a.common, &r, 0)
    } else {
        let op = fault.map(|k| format!(" (corrupted op: {})", k.name())).unwrap_or_default();
        writeln!(out, "FAILED: worst group {}{op}", failing[0])?;
        finish(&a.common, &r, 2)
    }
}

pub fn cmd_oracle(a: &OracleArgs, out: &mut dyn Write) -> Result<i32> {
    let suites: Vec<Suite> = if a.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![Suite::parse(&a.suite).ok_or_else(|| usage(format!("unknown suite `{}`", a.suite)))?]
    };
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    let mut entries = Vec::new();
    for s in suites {
        for c in run_suite(s)? {
            let ok = c.passed();
            rows.push(vec![
                s.name().to_string(),
                c.name.clone(),
                format!("{:.4e}", c.value),
                c.bound.describe(),
                if ok { "ok" } else { "FAIL" }.to_string(),
            ]);
            if !ok {
                failed.push(format!("{}: {}", s.name(), c.name));
            }
            entries.push(Value::Map(vec![
                ("suite".into(), s.name().into()),
                ("check".into(), c.name.clone().into()),
                ("value".into(), c.value.into()),
                ("bound".into(), c.bound.describe().into()),
                ("passed".into(), ok.into()),
            ]));
        }
    }
    write!(out, "{}", table(&["suite", "check", "value", "bound", ""], &rows))?;
    let mut r = Report::new("oracle");
    r.set("checks", Value::List(entries));
    r.set("failed", Value::List(failed.iter().map(|s| s.clone().into()).collect()));
    if failed.is_empty() {
        finish(&a.common, &r, 0)
    } else {
        writeln!(out, "failed checks:")?;
        for f in &failed {
            writeln!(out, "  {f}")?;
        }
        finish(&a.common, &r, 2)
    }
}

pub fn cmd_render(a: &RenderArgs, out: &mut dyn Write) -> Result<i32> {
    let ds = load_dataset(&a.data)?;
    if a.traj >= ds.n_traj() || a.frame >= ds.n_frames() {
        return Err(usage(format!(
            "frame ({}, {}) outside {} trajectories x {} frames",
            a.traj,
            a.frame,
            ds.n_traj(),
            ds.n_frames()
        )));
    }
    if a.channel >= ds.channels() {
        return Err(usage(format!("channel {} does not exist ({} channels)", a.channel, ds.channels())));
    }
    if a.scale == 0 {
        return Err(usage("--scale must be positive"));
    }
    let frame = ds.frame(a.traj, a.frame);
    let mut img = render_field(&frame, a.channel, a.scale)
        .ok_or_else(|| usage(format!("cannot render a {}D field", ds.geom().dim())))?;
    if let Some(ck_path) = &a.checkpoint {
        let ck = load_checkpoint(ck_path)?;
        let history = ck.model.params.config().frames;
        if a.frame + 1 < history {
            return Err(usage(format!("overlay needs --frame >= {}", history - 1)));
        }
        let x = ds.stack(a.traj, a.frame + 1 - history, history)?;
        let x = ck.model.norm.forward(&x);
        let disp = extract_displacements(&x, &ck.model.params, &a.block)?;
        let field: Vec<f64> = if a.head == "all" {
            weighted_displacement(&ck.model, &a.block, &disp)?
        } else {
            let h: usize = a.head.parse().map_err(|_| usage(format!("bad head `{}`", a.head)))?;
            if h >= disp.heads() {
                return Err(usage(format!("head {h} does not exist ({} heads)", disp.heads())));
            }
            (0..disp.dim()).flat_map(|ax| disp.component(h, ax).iter().map(|v| *v as f64)).collect()
        };
        // coarser levels are drawn with proportionally larger cells
        let ratio = ds.geom().shape()[0] / disp.geom().shape()[0];
        overlay_arrows(&mut img, disp.geom(), &field, a.stride, a.scale * ratio, a.gain);
    }
    let bytes = img.to_ppm();
    std::fs::write(&a.out, &bytes)?;
    let digest = crate::container::hex(&sha2_digest(&bytes));
    write!(
        out,
        "{}",
        kv_lines(&[
            ("size", format!("{}x{}", img.width, img.height)),
            ("sha256", digest.clone()),
            ("written", a.out.display().to_string()),
        ])
    )?;
    let mut r = Report::new("render");
    r.set("width", img.width);
    r.set("height", img.height);
    r.set("sha256", digest);
    finish(&a.common, &r, 0)
}

fn sha2_digest(bytes: &[u8]) -> Vec<u8> {
    use sha2::Digest;
    sha2::Sha256::digest(bytes).to_vec()
}

/// Parameter count per top-level group (`lift`, `enc0`, ..., `proj`).
pub fn param_groups(cfg: &FlowerConfig) -> Vec<(String, usize)> {
    let mut groups: Vec<(String, usize)> = Vec::new();
    for s in param_specs(cfg) {
        let g = s.name.split('.').next().unwrap_or("").to_string();
        let n: usize = s.shape.iter().product();
        match groups.iter_mut().find(|(k, _)| *k == g) {
            Some(e) => e.1 += n,
            None => groups.push((g, n)),
        }
    }
    groups
}

pub fn cmd_count_params(a: &CountParamsArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.model.config()?;
    let groups = param_groups(&cfg);
    let total = count_params(&cfg);
    let mut rows: Vec<Vec<String>> = groups.iter().map(|(g, n)| vec![g.clone(), n.to_string()]).collect();
    rows.push(vec!["total".into(), total.to_string()]);
    write!(out, "{}", table(&["group", "parameters"], &rows))?;
    let mut r = Report::new("count-params");
    r.set("groups", Value::Map(groups.into_iter().map(|(g, n)| (g, n.into())).collect()));
    r.set("total", total);
    finish(&a.common, &r, 0)
}

pub fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.model.config()?;
    let shapes: Vec<Vec<usize>> = a.resolutions.iter().map(|&n| vec![n; cfg.dim]).collect();
    for s in &shapes {
        cfg.check_shape(s)?;
    }
    let rows = run_bench(&cfg, &shapes, a.warmup, a.iters, a.seed, !a.no_forward)?;
    let text_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{:?}", r.shape),
                r.pixels.to_string(),
                format!("{:.3}", r.selfwarp_secs * 1e3),
                format!("{:.2}", r.selfwarp_sps()),
                if a.no_forward { "-".into() } else { format!("{:.3}", r.forward_secs * 1e3) },
                if a.no_forward { "-".into() } else { format!("{:.2}", r.forward_sps()) },
            ]
        })
        .collect();
    write!(
        out,
        "{}",
        table(
            &["shape", "pixels", "selfwarp ms", "selfwarp/s", "forward ms", "forward/s"],
            &text_rows
        )
    )?;
    let mut rep = Report::new("bench");
    rep.set(
        "rows",
        Value::List(
            rows.iter()
                .map(|r| {
                    Value::Map(vec![
                        ("pixels".into(), r.pixels.into()),
                        ("selfwarp_secs".into(), r.selfwarp_secs.into()),
                        ("forward_secs".into(), r.forward_secs.into()),
                    ])
                })
                .collect(),
        ),
    );
    if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r.pixels as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.selfwarp_secs).collect();
        let fit = linear_fit(&x, &ys);
        writeln!(out, "selfwarp linear fit: R^2 = {:.4}", fit.r2)?;
        rep.set("selfwarp_r2", fit.r2);
        if !a.no_forward {
            let yf: Vec<f64> = rows.iter().map(|r| r.forward_secs).collect();
            let fit = linear_fit(&x, &yf);
            writeln!(out, "forward linear fit:  R^2 = {:.4}", fit.r2)?;
            rep.set("forward_r2", fit.r2);
        }
    }
    finish(&a.common, &rep, 0)
}

/// Entry point used by the binary.
pub fn main_with_env() -> i32 {
    let args: Vec<OsString> = std::env::args_os().collect();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}
