//! `keytrack` command line: track, train, eval, gen-pairs, synth,
//! synth-pairs, convert and rerun.
//!
//! Every command resolves its flags (defaults, then `--config`, then
//! explicit flags) into a [`Job`], executes it, and writes a
//! [`RunManifest`] next to its outputs. `keytrack rerun --manifest m.json`
//! executes the recorded job again and reproduces the outputs bitwise.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{compare_runs, EvalError, Run, DEFAULT_DIST_THRESHOLD};
use crate::matcher::{fit_matcher, generate_pairs, weights_file, MatcherError, PairDataset, TrainConfig};
use crate::providers::posetrack::convert_posetrack;
use crate::providers::sequence_file::{load_sequence, load_tracked, save_sequence, save_tracked};
use crate::providers::synth::{synth_pair_benchmark, PairBenchConfig, SynthConfig, SynthSuite};
use crate::providers::{ProviderError, ReplayEstimator, ReplayNoise, DEFAULT_CONTAINMENT_FLOOR};
use crate::skeleton::SkeletonTopology;
use crate::tracking::{run_replay, to_tracked_sequence, KeyframeMode, TrackError, TrackerConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID_INPUT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

fn provider_code(e: &ProviderError) -> i32 {
    match e {
        ProviderError::InvalidConfig(_) => EXIT_CONFIG,
        _ => EXIT_INVALID_INPUT,
    }
}

fn matcher_code(e: &MatcherError) -> i32 {
    match e {
        MatcherError::InvalidConfig(_) => EXIT_CONFIG,
        _ => EXIT_INVALID_INPUT,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Provider(e) => provider_code(e),
            CliError::Matcher(e) => matcher_code(e),
            CliError::Track(TrackError::MatcherUnavailable | TrackError::InvalidConfig(_)) => EXIT_CONFIG,
            CliError::Track(TrackError::Provider { source, .. }) => provider_code(source),
            CliError::Track(TrackError::Matcher(e)) => matcher_code(e),
            CliError::Eval(_) | CliError::Io { .. } => EXIT_INVALID_INPUT,
            CliError::Usage(_) => EXIT_CONFIG,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "keytrack", version, about = "Online multi-person pose tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track a sequence file with replayed detections and estimates.
    Track(TrackArgs),
    /// Train the pose matcher on a pair file.
    Train(TrainArgs),
    /// Score tracked outputs against ground truth.
    Eval(EvalArgs),
    /// Mine training pairs from annotated sequences.
    GenPairs(GenPairsArgs),
    /// Generate synthetic sequences from a suite or single config.
    Synth(SynthArgs),
    /// Build the synthetic hard-pair matching benchmark.
    SynthPairs(SynthPairsArgs),
    /// Convert a PoseTrack-style annotation file to a sequence file.
    Convert(ConvertArgs),
    /// Re-execute the job recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with tracker config keys; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub keyframe_interval: Option<usize>,
    #[arg(long)]
    pub mode: Option<KeyframeMode>,
    #[arg(long)]
    pub tau_s: Option<f64>,
    #[arg(long)]
    pub tau_o: Option<f64>,
    #[arg(long)]
    pub match_threshold: Option<f64>,
    #[arg(long)]
    pub max_lost_frames: Option<usize>,
    /// Spatial-consistency association only.
    #[arg(long)]
    pub disable_gcn: bool,
    /// Only frame 0 may create identities.
    #[arg(long)]
    pub restrict_new_ids: bool,
    /// Seed for the replay estimator noise.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub score_jitter: Option<f64>,
    #[arg(long)]
    pub containment_floor: Option<f64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV of per-epoch mean loss; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
    /// Topology file; defaults to the bundled 15-joint skeleton.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// JSON file with training config keys; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lr_decay_epochs: Option<Vec<usize>>,
    #[arg(long)]
    pub lr_decay_factor: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth sequence files, in run order.
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    /// `NAME=pred1.json,pred2.json,...`, one prediction per gt file.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_DIST_THRESHOLD)]
    pub dist_threshold: f64,
    /// Report base path; `.json`, `.csv` and `.txt` are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenPairsArgs {
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// A suite (`{name, sequences: [...]}`) or a single generator config.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthPairsArgs {
    /// Benchmark config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the input file stem.
    #[arg(long)]
    pub seq_id: Option<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the new manifest; defaults to overwriting the old one.
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackJob {
    pub input: PathBuf,
    pub weights: Option<PathBuf>,
    pub out: PathBuf,
    pub tracker: TrackerConfig,
    pub noise: ReplayNoise,
    pub containment_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub pairs: PathBuf,
    pub out: PathBuf,
    pub loss_curve: PathBuf,
    pub topology: Option<PathBuf>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub name: String,
    pub predictions: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub gt: Vec<PathBuf>,
    pub runs: Vec<RunSpec>,
    pub dist_threshold: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenPairsJob {
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthJob {
    /// The suite itself rather than its path, so reruns do not depend on
    /// the config file staying put.
    pub suite: SynthSuite,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPairsJob {
    pub bench: PairBenchConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvertJob {
    pub input: PathBuf,
    pub out: PathBuf,
    pub seq_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    Track(TrackJob),
    Train(TrainJob),
    Eval(EvalJob),
    GenPairs(GenPairsJob),
    Synth(SynthJob),
    SynthPairs(SynthPairsJob),
    Convert(ConvertJob),
}

/// Wall-clock seconds. `framework_s` is tracking time minus the time
/// spent inside the (simulated) estimator and detector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_s: f64,
    pub io_s: f64,
    pub association_s: f64,
    pub matching_s: f64,
    pub estimator_s: f64,
    pub detector_s: f64,
    pub framework_s: f64,
    pub frames: usize,
    /// Frames per second of the whole loop including replay providers.
    pub loop_fps: Option<f64>,
    /// Frames per second excluding estimator and detector time.
    pub framework_fps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub job: Job,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Not part of the reproducibility contract.
    pub timings: Timings,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Provider(ProviderError::Parse { line: e.line(), column: e.column(), msg: e.to_string() })
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| {
        CliError::Provider(ProviderError::Parse {
            line: e.line(),
            column: e.column(),
            msg: format!("{}: {e}", path.display()),
        })
    })
}

fn appended(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl TrackArgs {
    pub fn resolve(&self) -> Result<TrackJob, CliError> {
        let mut tracker: TrackerConfig = match &self.config {
            Some(p) => parse_json(p)?,
            None => TrackerConfig::default(),
        };
        if let Some(v) = self.keyframe_interval {
            tracker.keyframe_interval = v;
        }
        if let Some(v) = self.mode {
            tracker.mode = v;
        }
        if let Some(v) = self.tau_s {
            tracker.tau_s = v;
        }
        if let Some(v) = self.tau_o {
            tracker.tau_o = v;
        }
        if let Some(v) = self.match_threshold {
            tracker.match_threshold = Some(v);
        }
        if let Some(v) = self.max_lost_frames {
            tracker.max_lost_frames = Some(v);
        }
        if self.disable_gcn {
            tracker.pose_matching = false;
        }
        if self.restrict_new_ids {
            tracker.restrict_new_ids = true;
        }
        tracker.validate()?;
        let noise = ReplayNoise {
            coord_sigma: self.noise_sigma.unwrap_or(0.0),
            score_jitter: self.score_jitter.unwrap_or(0.0),
            seed: self.seed.unwrap_or(0),
        };
        if !(noise.coord_sigma >= 0.0 && noise.score_jitter >= 0.0) {
            return Err(CliError::Usage("noise parameters must be non-negative".into()));
        }
        Ok(TrackJob {
            input: self.input.clone(),
            weights: self.weights.clone(),
            out: self.out.clone(),
            tracker,
            noise,
            containment_floor: self.containment_floor.unwrap_or(DEFAULT_CONTAINMENT_FLOOR),
        })
    }
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainJob, CliError> {
        let mut c: TrainConfig = match &self.config {
            Some(p) => parse_json(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        set!(batch_size, epochs, lr, lr_decay_epochs, lr_decay_factor, weight_decay, momentum, margin, hidden, seed);
        c.validate()?;
        Ok(TrainJob {
            pairs: self.pairs.clone(),
            out: self.out.clone(),
            loss_curve: self.loss_curve.clone().unwrap_or_else(|| appended(&self.out, ".loss.csv")),
            topology: self.topology.clone(),
            train: c,
        })
    }
}

impl EvalArgs {
    pub fn resolve(&self) -> Result<EvalJob, CliError> {
        let runs = self
            .runs
            .iter()
            .map(|r| {
                let (name, files) = r
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("--run expects NAME=FILE[,FILE...], got '{r}'")))?;
                Ok(RunSpec {
                    name: name.to_string(),
                    predictions: files.split(',').filter(|s| !s.is_empty()).map(PathBuf::from).collect(),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        if !(self.dist_threshold > 0.0 && self.dist_threshold.is_finite()) {
            return Err(CliError::Usage("--dist-threshold must be positive".into()));
        }
        Ok(EvalJob { gt: self.gt.clone(), runs, dist_threshold: self.dist_threshold, out: self.out.clone() })
    }
}

fn load_suite(path: &Path) -> Result<SynthSuite, CliError> {
    let text = read(path)?;
    if let Ok(suite) = SynthSuite::parse(&text) {
        return Ok(suite);
    }
    let single: SynthConfig = serde_json::from_str(&text).map_err(|e| {
        CliError::Provider(ProviderError::Parse { line: e.line(), column: e.column(), msg: e.to_string() })
    })?;
    Ok(SynthSuite { name: single.seq_id.clone(), sequences: vec![single] })
}

impl Command {
    /// Resolves flags into a job plus an explicit manifest path, if given.
    pub fn resolve(&self) -> Result<(Job, Option<PathBuf>), CliError> {
        Ok(match self {
            Command::Track(a) => (Job::Track(a.resolve()?), a.manifest.clone()),
            Command::Train(a) => (Job::Train(a.resolve()?), a.manifest.clone()),
            Command::Eval(a) => (Job::Eval(a.resolve()?), a.manifest.clone()),
            Command::GenPairs(a) => (
                Job::GenPairs(GenPairsJob { inputs: a.inputs.clone(), out: a.out.clone() }),
                a.manifest.clone(),
            ),
            Command::Synth(a) => (
                Job::Synth(SynthJob { suite: load_suite(&a.config)?, out_dir: a.out_dir.clone() }),
                a.manifest.clone(),
            ),
            Command::SynthPairs(a) => {
                let mut bench: PairBenchConfig = match &a.config {
                    Some(p) => parse_json(p)?,
                    None => PairBenchConfig::default(),
                };
                if let Some(seed) = a.seed {
                    bench.seed = seed;
                }
                bench.validate()?;
                (Job::SynthPairs(SynthPairsJob { bench, out: a.out.clone() }), a.manifest.clone())
            }
            Command::Convert(a) => {
                let seq_id = match &a.seq_id {
                    Some(s) => s.clone(),
                    None => a
                        .input
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "sequence".into()),
                };
                (Job::Convert(ConvertJob { input: a.input.clone(), out: a.out.clone(), seq_id }), a.manifest.clone())
            }
            Command::Rerun(a) => {
                let m = RunManifest::load(&a.manifest)?;
                (m.job, Some(a.manifest_out.clone().unwrap_or_else(|| a.manifest.clone())))
            }
        })
    }
}

/// What a job did, for the manifest and the console.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timings: Timings,
    pub summary: String,
}

impl Job {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Job::Track(j) => Some(j.noise.seed),
            Job::Train(j) => Some(j.train.seed),
            Job::Synth(j) => j.suite.sequences.first().map(|s| s.seed),
            Job::SynthPairs(j) => Some(j.bench.seed),
            _ => None,
        }
    }

    pub fn default_manifest_path(&self) -> PathBuf {
        match self {
            Job::Track(j) => appended(&j.out, ".manifest.json"),
            Job::Train(j) => appended(&j.out, ".manifest.json"),
            Job::Eval(j) => appended(&j.out, ".manifest.json"),
            Job::GenPairs(j) => appended(&j.out, ".manifest.json"),
            Job::Synth(j) => j.out_dir.join("manifest.json"),
            Job::SynthPairs(j) => appended(&j.out, ".manifest.json"),
            Job::Convert(j) => appended(&j.out, ".manifest.json"),
        }
    }

    pub fn execute(&self) -> Result<Outcome, CliError> {
        let started = Instant::now();
        let mut o = match self {
            Job::Track(j) => exec_track(j)?,
            Job::Train(j) => exec_train(j)?,
            Job::Eval(j) => exec_eval(j)?,
            Job::GenPairs(j) => exec_gen_pairs(j)?,
            Job::Synth(j) => exec_synth(j)?,
            Job::SynthPairs(j) => exec_synth_pairs(j)?,
            Job::Convert(j) => exec_convert(j)?,
        };
        o.timings.total_s = started.elapsed().as_secs_f64();
        Ok(o)
    }
}

fn exec_track(j: &TrackJob) -> Result<Outcome, CliError> {
    let t_io = Instant::now();
    let seq = load_sequence(&j.input)?;
    let matcher = match (&j.weights, j.tracker.pose_matching) {
        (Some(w), true) => Some(weights_file::load(w)?),
        _ => None,
    };
    let mut io = t_io.elapsed();
    let estimator = ReplayEstimator::new(&seq).with_noise(j.noise).with_containment_floor(j.containment_floor);
    let (results, et) = run_replay(&seq, &j.tracker, matcher.as_ref(), &estimator)?;
    let tracked = to_tracked_sequence(&seq, &results);
    let t_io = Instant::now();
    save_tracked(&tracked, &j.out)?;
    io += t_io.elapsed();

    let frames = results.len();
    let loop_s = et.total.as_secs_f64();
    let framework_s = (et.total.saturating_sub(et.estimator + et.detector)).as_secs_f64();
    let fps = |s: f64| (s > 0.0).then(|| frames as f64 / s);
    let ids: std::collections::BTreeSet<u64> = results.iter().flat_map(|r| r.new_ids.iter().copied()).collect();
    let keyframes = results.iter().filter(|r| r.keyframe).count();
    let mut inputs = vec![j.input.clone()];
    inputs.extend(j.weights.clone().filter(|_| j.tracker.pose_matching));
    Ok(Outcome {
        inputs,
        outputs: vec![j.out.clone()],
        timings: Timings {
            io_s: io.as_secs_f64(),
            association_s: et.association.as_secs_f64(),
            matching_s: et.matching.as_secs_f64(),
            estimator_s: et.estimator.as_secs_f64(),
            detector_s: et.detector.as_secs_f64(),
            framework_s,
            frames,
            loop_fps: fps(loop_s),
            framework_fps: fps(framework_s),
            ..Default::default()
        },
        summary: format!(
            "tracked {} frames, {} keyframes, {} identities -> {}",
            frames,
            keyframes,
            ids.len(),
            j.out.display()
        ),
    })
}

fn exec_train(j: &TrainJob) -> Result<Outcome, CliError> {
    let t_io = Instant::now();
    let dataset = PairDataset::load(&j.pairs)?;
    let topology = match &j.topology {
        Some(p) => SkeletonTopology::parse(&read(p)?).map_err(MatcherError::from)?,
        None => SkeletonTopology::posetrack15(),
    };
    let mut io = t_io.elapsed();
    let (matcher, curve) = fit_matcher(&dataset, &j.train, &topology)?;
    let t_io = Instant::now();
    weights_file::save(&matcher, &j.out)?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in curve.iter().enumerate() {
        csv.push_str(&format!("{e},{l:e}\n"));
    }
    write(&j.loss_curve, &csv)?;
    io += t_io.elapsed();
    let mut inputs = vec![j.pairs.clone()];
    inputs.extend(j.topology.clone());
    Ok(Outcome {
        inputs,
        outputs: vec![j.out.clone(), j.loss_curve.clone()],
        timings: Timings { io_s: io.as_secs_f64(), ..Default::default() },
        summary: format!(
            "trained {} epochs on {} pairs, final loss {}, threshold {:.6} -> {}",
            curve.len(),
            dataset.len(),
            curve.last().map_or("-".to_string(), |l| format!("{l:.6}")),
            matcher.threshold,
            j.out.display()
        ),
    })
}

fn exec_eval(j: &EvalJob) -> Result<Outcome, CliError> {
    let t_io = Instant::now();
    let gt = j.gt.iter().map(|p| load_sequence(p)).collect::<Result<Vec<_>, _>>()?;
    let preds = j
        .runs
        .iter()
        .map(|r| r.predictions.iter().map(|p| load_tracked(p)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    let mut io = t_io.elapsed();
    let runs: Vec<Run<'_>> =
        j.runs.iter().zip(&preds).map(|(r, p)| Run { name: r.name.clone(), sequences: p }).collect();
    let report = compare_runs(&gt, &runs, j.dist_threshold)?;
    let t_io = Instant::now();
    let outs = [
        (j.out.with_extension("json"), report.to_json()),
        (j.out.with_extension("csv"), report.to_csv()),
        (j.out.with_extension("txt"), report.to_text()),
    ];
    for (p, text) in &outs {
        write(p, text)?;
    }
    io += t_io.elapsed();
    let mut inputs = j.gt.clone();
    inputs.extend(j.runs.iter().flat_map(|r| r.predictions.iter().cloned()));
    Ok(Outcome {
        inputs,
        outputs: outs.iter().map(|(p, _)| p.clone()).collect(),
        timings: Timings { io_s: io.as_secs_f64(), ..Default::default() },
        summary: report.to_text(),
    })
}

fn exec_gen_pairs(j: &GenPairsJob) -> Result<Outcome, CliError> {
    let seqs = j.inputs.iter().map(|p| load_sequence(p)).collect::<Result<Vec<_>, _>>()?;
    let ds = generate_pairs(&seqs);
    ds.save(&j.out)?;
    let c = ds.counts();
    Ok(Outcome {
        inputs: j.inputs.clone(),
        outputs: vec![j.out.clone()],
        summary: format!(
            "{} pairs: {} positive, {} hard negative, {} other negative -> {}",
            ds.len(),
            c.positive,
            c.hard_negative,
            c.other_negative,
            j.out.display()
        ),
        ..Default::default()
    })
}

fn exec_synth(j: &SynthJob) -> Result<Outcome, CliError> {
    let mut outputs = Vec::new();
    for cfg in &j.suite.sequences {
        if cfg.seq_id.is_empty() || cfg.seq_id.contains(['/', '\\']) {
            return Err(CliError::Usage(format!("seq_id '{}' is not a usable file name", cfg.seq_id)));
        }
        if outputs.iter().any(|p: &PathBuf| p.file_stem().is_some_and(|s| s == cfg.seq_id.as_str())) {
            return Err(CliError::Usage(format!("duplicate seq_id '{}'", cfg.seq_id)));
        }
        let seq = crate::providers::synth::synth_sequence(cfg)?;
        let path = j.out_dir.join(format!("{}.json", cfg.seq_id));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        }
        save_sequence(&seq, &path)?;
        outputs.push(path);
    }
    Ok(Outcome {
        summary: format!("wrote {} sequences to {}", outputs.len(), j.out_dir.display()),
        outputs,
        ..Default::default()
    })
}

fn exec_synth_pairs(j: &SynthPairsJob) -> Result<Outcome, CliError> {
    let ds = synth_pair_benchmark(&j.bench)?;
    ds.save(&j.out)?;
    let c = ds.counts();
    Ok(Outcome {
        outputs: vec![j.out.clone()],
        summary: format!(
            "{} pairs: {} positive, {} hard negative -> {}",
            ds.len(),
            c.positive,
            c.hard_negative,
            j.out.display()
        ),
        ..Default::default()
    })
}

fn exec_convert(j: &ConvertJob) -> Result<Outcome, CliError> {
    let seq = convert_posetrack(&read(&j.input)?, &j.seq_id)?;
    save_sequence(&seq, &j.out)?;
    Ok(Outcome {
        inputs: vec![j.input.clone()],
        outputs: vec![j.out.clone()],
        summary: format!("converted {} frames -> {}", seq.len(), j.out.display()),
        ..Default::default()
    })
}

/// Executes a job and writes its manifest.
pub fn run_job(job: Job, manifest_path: Option<PathBuf>) -> Result<(RunManifest, Outcome), CliError> {
    let outcome = job.execute()?;
    let manifest = RunManifest {
        tool: "keytrack".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: job.seed(),
        inputs: outcome.inputs.clone(),
        outputs: outcome.outputs.clone(),
        timings: outcome.timings.clone(),
        job,
    };
    let path = manifest_path.unwrap_or_else(|| manifest.job.default_manifest_path());
    write(&path, &manifest.to_json())?;
    Ok((manifest, outcome))
}

/// Parses `argv` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = cli.command.resolve().and_then(|(job, manifest)| run_job(job, manifest));
    match result {
        Ok((_, outcome)) => {
            println!("{}", outcome.summary.trim_end());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Track(TrackError::MatcherUnavailable)) {
                eprintln!("hint: pass --weights FILE or --disable-gcn");
            }
            e.exit_code()
        }
    }
}
