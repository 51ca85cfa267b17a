use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use scorelab::analytic::{gen_dirac, gen_grid25, gen_swiss_roll, grid25_means, GaussianMixture};
use scorelab::check::{run_checks, CheckOptions};
use scorelab::io::{read_points_csv, write_points_csv};
use scorelab::metrics::{energy_distance, mean_nearest_mode_distance, mode_coverage, ModeReport};
use scorelab::nn::{read_checkpoint, ScoreNet};
use scorelab::noisetrace::{comparison_rows, write_comparison_csv};
use scorelab::sampler::{run_sampler, ChainState, SampleRunConfig, StepInfo};
use scorelab::schedule::{geometric_schedule, sigma1_from_data, NoiseSchedule};
use scorelab::svg::{self, Series};
use scorelab::training::{train as run_training, HybridConfig, TrainConfig};
use scorelab::ScoreModel;

use crate::manifest::Run;
use crate::resolve::{Resolver, Source};
use crate::{
    CheckArgs, Common, DataArgs, EvalArgs, Failure, SampleArgs, ScheduleArgs, TraceArgs, TrainArgs,
};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn resolver(defaults: Value, paper: &'static [&'static str], common: &Common) -> Result<Resolver, Failure> {
    let mut r = Resolver::new(defaults, paper);
    r.load_config(common.config.as_deref())?;
    r.flag("out", common.out.as_ref());
    Ok(r)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn read_points(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let f = File::open(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(read_points_csv(BufReader::new(f))?)
}

fn write_points(path: &Path, points: &[Vec<f64>]) -> Result<(), Failure> {
    let mut w = create(path)?;
    write_points_csv(&mut w, points)?;
    w.flush()?;
    Ok(())
}

fn print_json(v: &Value) {
    // A closed pipe (e.g. `| head`) is not an error.
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(v).expect("json values print"));
}

fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("config serializes")
}

fn xy(points: &[Vec<f64>]) -> Vec<(f64, f64)> {
    points.iter().map(|p| (p[0], p.get(1).copied().unwrap_or(0.0))).collect()
}

// ---------------------------------------------------------------------------------------------

pub fn schedule(a: ScheduleArgs) -> Result<(), Failure> {
    let run = Run::start("schedule");
    let mut r = resolver(
        json!({"sigma1": 50.0, "sigmaL": 0.01, "L": 232, "out": null}),
        &["sigma1", "sigmaL", "L"],
        &a.common,
    )?;
    r.flag("sigma1", a.sigma1);
    r.flag("sigmaL", a.sigma_l);
    r.flag("L", a.levels);
    let out: Option<PathBuf> = r.block("out")?;
    r.take("out");
    let schedule: NoiseSchedule = r.block_root()?;
    let doc = to_value(&schedule);
    print_json(&doc);
    if let Some(dir) = out {
        let mut run = run;
        let path = run.output(dir.join("schedule.json"));
        std::fs::create_dir_all(&dir)?;
        std::fs::write(&path, serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
        let (config, prov) = r.finish(json!({"sigma1": schedule.sigma1(), "sigmaL": schedule.sigma_l(), "L": schedule.len()}));
        run.write(&dir, None, config, prov, None)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------------------------

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TraceConfig {
    sigma1: f64,
    #[serde(rename = "sigmaL")]
    sigma_l: f64,
    #[serde(rename = "L")]
    levels: usize,
    eta: Vec<f64>,
    nsigma: Vec<usize>,
    v0: Option<f64>,
    svg: bool,
    out: PathBuf,
}

pub fn trace(a: TraceArgs) -> Result<(), Failure> {
    let mut run = Run::start("trace");
    let mut r = resolver(
        json!({
            "sigma1": 50.0, "sigmaL": 0.01, "L": 232,
            "eta": [0.05, 0.1, 0.2], "nsigma": [1, 2, 5],
            "v0": null, "svg": false, "out": "runs/trace"
        }),
        &["sigma1", "sigmaL", "L"],
        &a.common,
    )?;
    r.flag("sigma1", a.sigma1);
    r.flag("sigmaL", a.sigma_l);
    r.flag("L", a.levels);
    r.flag("eta", a.eta);
    r.flag("nsigma", a.nsigma);
    r.flag("v0", a.v0);
    r.flag("svg", a.svg.then_some(true));
    let cfg: TraceConfig = r.block_root()?;
    let schedule = geometric_schedule(cfg.sigma1, cfg.sigma_l, cfg.levels)?;

    let mut summary = Vec::new();
    let mut curves = Vec::new();
    for &eta in &cfg.eta {
        for &n in &cfg.nsigma {
            let rows = comparison_rows(&schedule, eta, n, cfg.v0)?;
            let path = run.output(cfg.out.join(format!("trace_eta{eta}_nsigma{n}.csv")));
            let mut w = create(&path)?;
            write_comparison_csv(&mut w, &rows)?;
            w.flush()?;
            let last = rows.last().expect("schedule is non-empty");
            let max_cas_dev = rows.iter().map(|r| (r.v_cas - r.sigma_t).abs()).fold(0.0, f64::max);
            summary.push(json!({
                "eta": eta, "nsigma": n, "csv": path,
                "final_v_als": last.v_als, "final_v_cas": last.v_cas, "sigma_L": last.sigma_t,
                "max_abs_cas_minus_sigma": max_cas_dev,
            }));
            curves.push((format!("eta {eta}, n_sigma {n}"), rows.iter().map(|r| (r.level as f64, r.diff)).collect::<Vec<_>>()));
        }
    }
    if cfg.svg {
        let series: Vec<Series> = curves
            .iter()
            .enumerate()
            .map(|(i, (label, pts))| Series { label, color: PALETTE[i % PALETTE.len()], points: pts.clone() })
            .collect();
        let path = run.output(cfg.out.join("trace.svg"));
        std::fs::write(&path, svg::polyline("ALS minus CAS noise level (log10)", &series, true))?;
    }
    let summary = Value::Array(summary);
    print_json(&summary);
    let (config, prov) = r.finish(to_value(&cfg));
    run.write(&cfg.out, None, config, prov, Some(summary))?;
    Ok(())
}

// ---------------------------------------------------------------------------------------------

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum DatasetSpec {
    Grid25 { n: usize, spacing: f64, tau: f64, seed: u64 },
    SwissRoll { n: usize, noise: f64, seed: u64 },
    Dirac { n: usize, x0: Vec<f64> },
    Csv { path: PathBuf },
}

fn dataset_defaults(kind: &str) -> Result<Value, Failure> {
    Ok(match kind {
        "grid25" => json!({"kind": "grid25", "n": 10000, "spacing": 2.0, "tau": 0.05, "seed": 1}),
        "swiss-roll" => json!({"kind": "swiss-roll", "n": 10000, "noise": 0.1, "seed": 1}),
        "dirac" => json!({"kind": "dirac", "n": 1, "x0": [1.0, -2.0]}),
        other => return Err(Failure::Config(format!("unknown dataset kind {other:?}"))),
    })
}

impl DatasetSpec {
    fn load(&self) -> Result<Vec<Vec<f64>>, Failure> {
        Ok(match self {
            DatasetSpec::Grid25 { n, spacing, tau, seed } => gen_grid25(*n, *spacing, *tau, *seed)?.points,
            DatasetSpec::SwissRoll { n, noise, seed } => gen_swiss_roll(*n, *noise, *seed)?.points,
            DatasetSpec::Dirac { n, x0 } => gen_dirac(*n, x0.clone())?.points,
            DatasetSpec::Csv { path } => read_points(path)?,
        })
    }
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct DataConfig {
    dataset: DatasetSpec,
    svg: bool,
    out: PathBuf,
}

pub fn data(a: DataArgs) -> Result<(), Failure> {
    let mut run = Run::start("data");
    let mut r = resolver(
        json!({"dataset": dataset_defaults("grid25")?, "svg": false, "out": "runs/data"}),
        &[],
        &a.common,
    )?;
    if let Some(kind) = &a.kind {
        if r.value("dataset.kind").and_then(Value::as_str) != Some(kind.as_str()) {
            r.fill("dataset", dataset_defaults(kind)?);
            r.flag("dataset.kind", Some(kind));
        }
    }
    r.flag("dataset.n", a.n);
    r.flag("dataset.spacing", a.spacing);
    r.flag("dataset.tau", a.tau);
    r.flag("dataset.noise", a.noise);
    r.flag("dataset.seed", a.common.seed);
    r.flag("svg", a.svg.then_some(true));
    let cfg: DataConfig = r.block_root()?;
    let points = cfg.dataset.load()?;
    let path = run.output(cfg.out.join("data.csv"));
    write_points(&path, &points)?;
    if cfg.svg {
        let p = run.output(cfg.out.join("data.svg"));
        std::fs::write(&p, svg::scatter("data", &[Series { label: "data", color: PALETTE[0], points: xy(&points) }]))?;
    }
    let summary = json!({"points": points.len(), "csv": path});
    print_json(&summary);
    let seed = match &cfg.dataset {
        DatasetSpec::Grid25 { seed, .. } | DatasetSpec::SwissRoll { seed, .. } => Some(*seed),
        _ => None,
    };
    let (config, prov) = r.finish(to_value(&cfg));
    run.write(&cfg.out, seed, config, prov, Some(summary))?;
    Ok(())
}

// ---------------------------------------------------------------------------------------------

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSpec {
    /// `null` derives it from the data (largest pairwise distance).
    sigma1: Option<f64>,
    #[serde(rename = "sigmaL")]
    sigma_l: f64,
    #[serde(rename = "L")]
    levels: usize,
}

#[derive(Serialize)]
struct TrainDoc {
    dataset: DatasetSpec,
    schedule: ScheduleSpec,
    trainer: Value,
    svg: bool,
    out: PathBuf,
}

const TRAIN_PAPER_KEYS: &[&str] = &[
    "schedule.sigma1",
    "trainer.batch_size",
    "trainer.score_optimizer.beta1",
    "trainer.score_optimizer.beta2",
    "trainer.ema_decay",
    "trainer.checkpoint_every",
    "trainer.hybrid.lambda",
    "trainer.hybrid.n_d",
    "trainer.hybrid.disc_optimizer.beta1",
    "trainer.hybrid.disc_optimizer.beta2",
];

pub const DEFAULT_TRAIN_SEED: u64 = 7;

fn trainer_defaults() -> Value {
    let placeholder = geometric_schedule(1.0, 1.0, 1).expect("valid schedule");
    let mut cfg = TrainConfig::new(placeholder);
    cfg.seed = DEFAULT_TRAIN_SEED;
    let mut v = to_value(&cfg);
    v.as_object_mut().expect("object").remove("schedule");
    v
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut run = Run::start("train");
    let mut r = resolver(
        json!({
            "dataset": dataset_defaults("grid25")?,
            "schedule": {"sigma1": null, "sigmaL": 0.01, "L": 20},
            "trainer": trainer_defaults(),
            "svg": false,
            "out": "runs/train",
        }),
        TRAIN_PAPER_KEYS,
        &a.common,
    )?;
    r.check_top_level(&["dataset", "schedule", "trainer", "svg", "out"])?;
    if let Some(path) = &a.data {
        r.flag("dataset", Some(json!({"kind": "csv", "path": path})));
    }
    r.flag("schedule.sigma1", a.sigma1);
    r.flag("schedule.sigmaL", a.sigma_l);
    r.flag("schedule.L", a.levels);
    r.flag("trainer.iterations", a.iterations);
    r.flag("trainer.batch_size", a.batch_size);
    r.flag("trainer.score_optimizer.lr", a.lr);
    r.flag("trainer.conditioning", a.conditioning.as_ref());
    r.flag("trainer.seed", a.common.seed);
    if a.hybrid && r.value("trainer.hybrid").is_none_or(Value::is_null) {
        r.fill("trainer.hybrid", to_value(&HybridConfig::default()));
    }
    r.flag("trainer.hybrid.lambda", a.lambda);
    r.flag("trainer.hybrid.n_d", a.n_d);
    r.flag("svg", a.svg.then_some(true));

    let dataset: DatasetSpec = r.block("dataset")?;
    let sched_spec: ScheduleSpec = r.block("schedule")?;
    let out: PathBuf = r.block("out")?;
    let svg_on: bool = r.block("svg")?;
    let points = dataset.load()?;
    let sigma1 = match sched_spec.sigma1 {
        Some(s) => s,
        None => {
            let s = sigma1_from_data(&points)?;
            r.derive("schedule.sigma1", json!(s), "schedule.sigma1");
            s
        }
    };
    let schedule = geometric_schedule(sigma1, sched_spec.sigma_l, sched_spec.levels)?;
    let mut trainer_v = r.value("trainer").cloned().unwrap_or(json!({}));
    trainer_v["schedule"] = to_value(&schedule);
    let mut cfg: TrainConfig =
        serde_json::from_value(trainer_v).map_err(|e| Failure::Config(format!("trainer: {e}")))?;
    cfg.validate()?;
    // Left unset, checkpoints follow the output directory, also when replaying a manifest.
    let explicit_ckpt_dir = cfg.checkpoint_dir.clone();
    if cfg.checkpoint_dir.is_none() {
        cfg.checkpoint_dir = Some(out.join("checkpoints"));
    }

    let data_path = run.output(out.join("data.csv"));
    write_points(&data_path, &points)?;
    eprintln!(
        "training {} iterations on {} points, {} levels ({:.4} .. {}){}",
        cfg.iterations,
        points.len(),
        schedule.len(),
        schedule.sigma1(),
        schedule.sigma_l(),
        if cfg.hybrid.is_some() { ", adversarial" } else { "" }
    );
    let (_, report) = run_training(&cfg, &points)?;
    let loss_path = run.output(out.join("losses.csv"));
    let mut w = create(&loss_path)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    for p in &report.checkpoints {
        run.output(p.clone());
    }
    if let Some(p) = &report.final_checkpoint {
        run.output(p.clone());
    }
    if svg_on {
        let dsm: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.iteration as f64, r.dsm_loss)).collect();
        let mut series = vec![Series { label: "dsm", color: PALETTE[0], points: dsm }];
        let d: Vec<(f64, f64)> =
            report.rows.iter().filter_map(|r| r.d_loss.map(|l| (r.iteration as f64, l))).collect();
        if !d.is_empty() {
            series.push(Series { label: "discriminator", color: PALETTE[1], points: d });
        }
        let p = run.output(out.join("losses.svg"));
        std::fs::write(&p, svg::polyline("training losses", &series, false))?;
    }

    let summary = json!({
        "final_checkpoint": report.final_checkpoint,
        "final_dsm_loss": report.rows.last().map(|r| r.dsm_loss),
        "train_secs": report.wall_clock_secs,
        "schedule": to_value(&schedule),
    });
    print_json(&summary);
    let mut trainer_doc = to_value(&cfg);
    trainer_doc.as_object_mut().expect("object").remove("schedule");
    trainer_doc["checkpoint_dir"] = to_value(&explicit_ckpt_dir);
    let doc = TrainDoc {
        dataset,
        schedule: ScheduleSpec { sigma1: Some(sigma1), sigma_l: sched_spec.sigma_l, levels: sched_spec.levels },
        trainer: trainer_doc,
        svg: svg_on,
        out: out.clone(),
    };
    let (config, prov) = r.finish(to_value(&doc));
    run.write(&out, Some(cfg.seed), config, prov, Some(summary))?;
    Ok(())
}

// ---------------------------------------------------------------------------------------------

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum ModelSpec {
    Checkpoint {
        path: Option<PathBuf>,
        #[serde(default = "yes")]
        use_ema: bool,
    },
    /// Optimal score of the 25-Gaussian grid.
    Grid25 { spacing: f64, tau: f64 },
    /// Optimal score of a point mass.
    Dirac { x0: Vec<f64> },
}

fn yes() -> bool {
    true
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TrajectorySpec {
    /// Record every k-th update; `null` disables the dump.
    every: Option<usize>,
    /// Number of leading chains recorded.
    chains: usize,
}

#[derive(Serialize)]
struct SampleDoc {
    model: ModelSpec,
    schedule: NoiseSchedule,
    sampler: SampleRunConfig,
    data: Option<PathBuf>,
    trajectory: TrajectorySpec,
    svg: bool,
    out: PathBuf,
}

pub fn sample(a: SampleArgs) -> Result<(), Failure> {
    let mut run = Run::start("sample");
    let mut r = resolver(
        json!({
            "model": {"kind": "checkpoint", "path": null, "use_ema": true},
            "schedule": null,
            "sampler": {
                "variant": "cas", "eta": 0.5, "n_sigma": 1, "denoise_final": true,
                "init": "pure-noise", "sigma0": null, "chains": 2600, "seed": 11
            },
            "data": null,
            "trajectory": {"every": null, "chains": 100},
            "svg": false,
            "out": "runs/sample",
        }),
        &[],
        &a.common,
    )?;
    r.check_top_level(&["model", "schedule", "sampler", "data", "trajectory", "svg", "out"])?;
    if let Some(p) = &a.checkpoint {
        if r.value("model.kind").and_then(Value::as_str) == Some("checkpoint") {
            r.flag("model.path", Some(p));
        } else {
            r.flag("model", Some(json!({"kind": "checkpoint", "path": p})));
        }
    }
    r.flag("sampler.variant", a.variant.as_ref());
    r.flag("sampler.eta", a.eta);
    r.flag("sampler.epsilon", a.epsilon);
    r.flag("sampler.n_sigma", a.nsigma);
    r.flag("sampler.chains", a.chains);
    r.flag("sampler.init", a.init.as_ref());
    r.flag("sampler.seed", a.common.seed);
    r.flag("sampler.denoise_final", a.no_denoise.then_some(false));
    r.flag("data", a.data.as_ref());
    r.flag("trajectory.every", a.trajectory_every);
    r.flag("svg", a.svg.then_some(true));

    let model_spec: ModelSpec = r.block("model")?;
    let explicit: Option<NoiseSchedule> = r.block("schedule")?;
    let (model, schedule): (Box<dyn ScoreModel>, NoiseSchedule) = match &model_spec {
        ModelSpec::Checkpoint { path, use_ema } => {
            let path = path.as_ref().ok_or_else(|| Failure::Config("model.path (or --checkpoint) is required".into()))?;
            let ckpt = read_checkpoint(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let net = ScoreNet::from_mlp(ckpt.to_mlp(*use_ema)?, ckpt.header.conditioning)?;
            let schedule = match explicit {
                Some(s) => s,
                None => {
                    let s = ckpt.header.schedule.clone().ok_or_else(|| {
                        Failure::Config("checkpoint records no schedule; give one in the config".into())
                    })?;
                    r.derive("schedule", to_value(&s), "model.path");
                    s
                }
            };
            (Box::new(net), schedule)
        }
        ModelSpec::Grid25 { spacing, tau } => {
            let s = explicit.ok_or_else(|| Failure::Config("analytic models need a schedule".into()))?;
            (Box::new(GaussianMixture::grid25(*spacing, *tau)?), s)
        }
        ModelSpec::Dirac { x0 } => {
            let s = explicit.ok_or_else(|| Failure::Config("analytic models need a schedule".into()))?;
            (Box::new(GaussianMixture::dirac(x0.clone())?), s)
        }
    };

    let given = |src: Option<Source>| matches!(src, Some(Source::Flag | Source::Config));
    let eps_set = r.value("sampler.epsilon").is_some_and(|v| !v.is_null());
    if eps_set {
        if given(r.source_of("sampler.eta")) && r.value("sampler.eta").is_some_and(|v| !v.is_null()) {
            return Err(Failure::Config("give either sampler.eta or sampler.epsilon, not both".into()));
        }
    } else {
        let eta = r
            .value("sampler.eta")
            .and_then(Value::as_f64)
            .ok_or_else(|| Failure::Config("sampler.eta or sampler.epsilon is required".into()))?;
        let sl = schedule.sigma_l();
        r.derive("sampler.epsilon", json!(eta * sl * sl), "sampler.eta");
    }
    r.take("sampler.eta");
    let sampler: SampleRunConfig = r.block("sampler")?;
    let data_path: Option<PathBuf> = r.block("data")?;
    let trajectory: TrajectorySpec = r.block("trajectory")?;
    let out: PathBuf = r.block("out")?;
    let svg_on: bool = r.block("svg")?;
    let data = data_path.as_deref().map(read_points).transpose()?;

    let mut traj_rows: Vec<String> = Vec::new();
    let mut observe = |info: &StepInfo, chains: &[ChainState]| {
        if let Some(k) = trajectory.every {
            if k > 0 && info.step % k == 0 {
                for c in chains.iter().take(trajectory.chains) {
                    let coords: Vec<String> = c.x.iter().map(f64::to_string).collect();
                    traj_rows.push(format!("{},{},{},{},{}", info.step, info.level, info.sigma, c.chain, coords.join(",")));
                }
            }
        }
    };
    let output = run_sampler(model.as_ref(), &schedule, &sampler, data.as_deref(), Some(&mut observe))?;

    let samples_path = run.output(out.join("samples.csv"));
    write_points(&samples_path, &output.samples)?;
    if let Some(d) = &output.denoised {
        write_points(&run.output(out.join("denoised.csv")), d)?;
    }
    if trajectory.every.is_some() {
        let path = run.output(out.join("trajectory.csv"));
        let mut w = create(&path)?;
        let coords: Vec<String> = (0..model.dim()).map(|i| format!("x{i}")).collect();
        writeln!(w, "step,level,sigma,chain,{}", coords.join(","))?;
        for row in &traj_rows {
            writeln!(w, "{row}")?;
        }
        w.flush()?;
    }
    if svg_on && model.dim() >= 2 {
        let mut series = vec![Series { label: "samples", color: PALETTE[0], points: xy(&output.samples) }];
        if let Some(d) = &output.denoised {
            series.push(Series { label: "denoised", color: PALETTE[1], points: xy(d) });
        }
        let p = run.output(out.join("samples.svg"));
        std::fs::write(&p, svg::scatter("samples", &series))?;
    }

    let summary = json!({
        "samples": samples_path,
        "chains": output.samples.len(),
        "levels_visited": output.schedule.len(),
        "sigma0": output.sigma0,
    });
    print_json(&summary);
    let doc = SampleDoc { model: model_spec, schedule, sampler, data: data_path, trajectory, svg: svg_on, out: out.clone() };
    let (config, prov) = r.finish(to_value(&doc));
    run.write(&out, Some(doc.sampler.seed), config, prov, Some(summary))?;
    Ok(())
}

// ---------------------------------------------------------------------------------------------

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    samples: Option<PathBuf>,
    /// Points for the energy distance; `null` draws `reference_n` from the grid.
    reference: Option<PathBuf>,
    reference_n: usize,
    spacing: f64,
    tau: f64,
    threshold: Option<f64>,
    seed: u64,
    out: PathBuf,
}

#[derive(Serialize)]
struct EvalReport {
    modes: ModeReport,
    mean_nearest_mode_distance: f64,
    energy_distance: f64,
    samples: usize,
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let mut run = Run::start("eval");
    let mut r = resolver(
        json!({
            "samples": null, "reference": null, "reference_n": 5000,
            "spacing": 2.0, "tau": 0.05, "threshold": null, "seed": 1, "out": "runs/eval"
        }),
        &[],
        &a.common,
    )?;
    r.flag("samples", a.samples.as_ref());
    r.flag("reference", a.reference.as_ref());
    r.flag("spacing", a.spacing);
    r.flag("tau", a.tau);
    r.flag("threshold", a.threshold);
    r.flag("seed", a.common.seed);
    if r.value("threshold").is_none_or(Value::is_null) {
        let tau = r.value("tau").and_then(Value::as_f64).unwrap_or(0.05);
        r.fill("threshold", json!(3.0 * tau));
    }
    let cfg: EvalConfig = r.block_root()?;
    let samples_path = cfg.samples.as_ref().ok_or_else(|| Failure::Config("samples (or --samples) is required".into()))?;
    let samples = read_points(samples_path)?;
    let centers = grid25_means(cfg.spacing);
    let threshold = cfg.threshold.expect("filled above");
    let modes = mode_coverage(&samples, &centers, threshold)?;
    let reference = match &cfg.reference {
        Some(p) => read_points(p)?,
        None => gen_grid25(cfg.reference_n, cfg.spacing, cfg.tau, cfg.seed)?.points,
    };
    let report = EvalReport {
        mean_nearest_mode_distance: mean_nearest_mode_distance(&samples, &centers)?,
        energy_distance: energy_distance(&samples, &reference)?,
        samples: samples.len(),
        modes,
    };
    let json_path = run.output(cfg.out.join("eval.json"));
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(&json_path, serde_json::to_string_pretty(&report).expect("json") + "\n")?;
    let csv_path = run.output(cfg.out.join("modes.csv"));
    std::fs::write(&csv_path, format!("{}\n{}\n", ModeReport::CSV_HEADER, report.modes.csv_row()))?;
    let summary = to_value(&report);
    print_json(&summary);
    let (config, prov) = r.finish(to_value(&cfg));
    run.write(&cfg.out, Some(cfg.seed), config, prov, Some(summary))?;
    Ok(())
}

// ---------------------------------------------------------------------------------------------

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct CheckConfig {
    seed: u64,
    chains: usize,
    beta_factor: f64,
    out: Option<PathBuf>,
}

pub fn check(a: CheckArgs) -> Result<(), Failure> {
    let mut run = Run::start("check");
    let d = CheckOptions::default();
    let mut r = resolver(
        json!({"seed": d.seed, "chains": d.chains, "beta_factor": d.beta_factor, "out": null}),
        &[],
        &a.common,
    )?;
    r.flag("seed", a.common.seed);
    r.flag("chains", a.chains);
    r.flag("beta_factor", a.corrupt_beta);
    let cfg: CheckConfig = r.block_root()?;
    let report = run_checks(&CheckOptions { seed: cfg.seed, chains: cfg.chains, beta_factor: cfg.beta_factor })?;
    for c in &report.checks {
        eprintln!(
            "{} {:<40} measured {:.3e} tolerance {:.1e}  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance,
            c.detail
        );
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    let doc = json!({"all_passed": failed == 0, "failed": failed, "checks": report.checks});
    print_json(&doc);
    if let Some(dir) = &cfg.out {
        let path = run.output(dir.join("check.json"));
        std::fs::create_dir_all(dir)?;
        std::fs::write(&path, serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
        let (config, prov) = r.finish(to_value(&cfg));
        run.write(dir, Some(cfg.seed), config, prov, Some(json!({"failed": failed})))?;
    }
    if failed > 0 {
        return Err(Failure::ChecksFailed(failed));
    }
    Ok(())
}
