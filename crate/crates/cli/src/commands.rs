use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use graspldm::config::{Dtype, RunConfig};
use graspldm::dataset::{desk_suite, generate_dataset, read_dataset, write_dataset, Dataset, ObjectEntry, RegionLabel};
use graspldm::diffusion::{SamplerConfig, SamplerKind};
use graspldm::eval::{label_precision, success_rate, GraspOracle};
use graspldm::geom::RigidTransform;
use graspldm::io::write_atomic;
use graspldm::numerics::read_manifest;
use graspldm::pipeline::{load_stage, save_stage, train_stage, Generator, Stage, Start};
use graspldm::Scalar;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Command, ModelArgs};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { config, out, suite, id_prefix } => gen_data(config.as_deref(), &out, suite.as_deref(), &id_prefix),
        Command::Train { stage, config, data, out, vae, resume } => {
            let stage: Stage = stage.parse()?;
            // Without --config, reuse the config of the run being continued,
            // else that of the VAE the latent stage builds on.
            let cfg = match (&config, resume.as_ref().or(vae.as_ref())) {
                (Some(p), _) => load_config(Some(p))?,
                (None, Some(dir)) => {
                    let mut cfg = RunConfig::from_value(&read_manifest(dir)?.config)?;
                    cfg.apply_env()?;
                    cfg
                }
                (None, None) => load_config(None)?,
            };
            match cfg.dtype {
                Dtype::F32 => train::<f32>(stage, &cfg, &data, &out, vae.as_deref(), resume.as_deref()),
                Dtype::F64 => train::<f64>(stage, &cfg, &data, &out, vae.as_deref(), resume.as_deref()),
            }
        }
        Command::Sample { model, object, n, task, dump_trajectory, every, rotate, out } => {
            let task = task.map(|t| t.parse::<RegionLabel>()).transpose()?;
            let req = SampleRequest { object, n, task, dump_trajectory, every, rotate, out };
            match checkpoint_dtype(&model.checkpoint)? {
                Dtype::F32 => sample::<f32>(&model, &req),
                Dtype::F64 => sample::<f64>(&model, &req),
            }
        }
        Command::Eval { model, n, labels, jobs, out_json, out_csv } => match checkpoint_dtype(&model.checkpoint)? {
            Dtype::F32 => evaluate::<f32>(&model, n, labels, jobs, &out_json, &out_csv),
            Dtype::F64 => evaluate::<f64>(&model, n, labels, jobs, &out_json, &out_csv),
        },
        Command::Bench { checkpoint, data, object, samplers, batch, repeats, out } => {
            let specs = samplers.iter().map(|s| parse_sampler_spec(s)).collect::<Result<Vec<_>>>()?;
            if repeats == 0 {
                bail!("--repeats must be at least 1");
            }
            let req = BenchRequest { object, specs, batch, repeats, out };
            match checkpoint_dtype(&checkpoint)? {
                Dtype::F32 => bench::<f32>(&checkpoint, &data, &req),
                Dtype::F64 => bench::<f64>(&checkpoint, &data, &req),
            }
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => {
            let mut cfg = RunConfig::default();
            cfg.apply_env()?;
            Ok(cfg)
        }
    }
}

fn checkpoint_dtype(dir: &Path) -> Result<Dtype> {
    let manifest = read_manifest(dir).with_context(|| format!("reading checkpoint {}", dir.display()))?;
    match manifest.dtype.as_str() {
        "f32" => Ok(Dtype::F32),
        "f64" => Ok(Dtype::F64),
        other => bail!("unsupported checkpoint dtype `{other}`"),
    }
}

/// Concatenates datasets, rejecting duplicate object ids.
fn load_data(paths: &[PathBuf]) -> Result<Dataset> {
    let mut all = Dataset::default();
    for p in paths {
        let ds = read_dataset(p).with_context(|| format!("reading dataset {}", p.display()))?;
        for o in ds.objects {
            if all.get(&o.id).is_some() {
                bail!("object id `{}` appears in more than one dataset", o.id);
            }
            all.objects.push(o);
        }
    }
    Ok(all)
}

fn gen_data(config: Option<&Path>, out: &Path, suite: Option<&str>, prefix: &str) -> Result<()> {
    let cfg = load_config(config)?;
    let mut dc = cfg.dataset.clone();
    match suite {
        Some("desk-train") => dc.objects = desk_suite().0,
        Some("desk-held-out") => dc.objects = desk_suite().1,
        _ => {}
    }
    let mut ds = generate_dataset(&dc, cfg.seed)?;
    for o in &mut ds.objects {
        o.id = format!("{prefix}{}", o.id);
        for g in &mut o.grasps {
            g.object_id.clone_from(&o.id);
        }
    }
    write_dataset(out, &ds)?;
    println!("{} objects, {} grasps -> {}", ds.len(), ds.num_grasps(), out.display());
    Ok(())
}

fn train<T: Scalar>(
    stage: Stage,
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    vae: Option<&Path>,
    resume: Option<&Path>,
) -> Result<()> {
    let ds = read_dataset(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let start = match resume {
        Some(dir) => {
            let (prev, _, ck) = load_stage::<T>(dir)?;
            if prev != stage {
                bail!("cannot resume a {} checkpoint as stage {}", prev.name(), stage.name());
            }
            Start::Resume(ck)
        }
        None => Start::Fresh,
    };
    let vae_params = match (stage.is_diffusion(), vae, &start) {
        (true, Some(dir), _) => {
            let (prev, _, ck) = load_stage::<T>(dir)?;
            if prev != Stage::Vae {
                bail!("--vae must point at a vae checkpoint, got {}", prev.name());
            }
            Some(ck.params)
        }
        (true, None, Start::Fresh) => bail!("stage {} needs a VAE checkpoint (--vae)", stage.name()),
        _ => None,
    };
    let t0 = Instant::now();
    let outcome = train_stage(stage, cfg, &ds, vae_params.as_ref(), start)?;
    save_stage(out, stage, cfg, &outcome)?;
    let last = outcome.metrics.last().map(|m| m.loss).unwrap_or(f64::NAN);
    info!("{} trained in {:.1}s, final loss {last:.5}", stage.name(), t0.elapsed().as_secs_f64());
    println!("{} checkpoint -> {}", stage.name(), out.display());
    Ok(())
}

fn sampler_config(gen_cfg: &RunConfig, args: &ModelArgs) -> Result<SamplerConfig> {
    let mut s = gen_cfg.sampler.clone();
    if let Some(kind) = &args.sampler {
        s.kind = kind.parse()?;
    }
    if let Some(steps) = args.steps {
        s.steps = steps;
    }
    if let Some(eta) = args.eta {
        s.eta = eta;
    }
    s.validate(gen_cfg.diffusion.timesteps)?;
    Ok(s)
}

fn seed_of(cfg: &RunConfig) -> Result<u64> {
    let mut cfg = cfg.clone();
    cfg.apply_env()?;
    Ok(cfg.seed)
}

/// Sampling generator for object `index`; independent of how objects are
/// scheduled over workers.
fn object_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn find_object<'a>(ds: &'a Dataset, id: &str) -> Result<(usize, &'a ObjectEntry)> {
    ds.objects
        .iter()
        .enumerate()
        .find(|(_, o)| o.id == id)
        .ok_or_else(|| anyhow!("object `{id}` not found in the dataset"))
}

fn poses7(poses: &[RigidTransform<f64>]) -> Vec<[f64; 7]> {
    poses.iter().map(|g| g.to_array7()).collect()
}

struct SampleRequest {
    object: String,
    n: usize,
    task: Option<RegionLabel>,
    dump_trajectory: Option<PathBuf>,
    every: usize,
    rotate: bool,
    out: PathBuf,
}

#[derive(Serialize)]
struct PoseFile<'a> {
    object_id: &'a str,
    stage: &'a str,
    sampler: &'a SamplerConfig,
    task: Option<RegionLabel>,
    poses: Vec<[f64; 7]>,
}

#[derive(Serialize)]
struct TrajectoryStep {
    t: usize,
    poses: Vec<[f64; 7]>,
}

#[derive(Serialize)]
struct TrajectoryFile<'a> {
    object_id: &'a str,
    sampler: &'a SamplerConfig,
    steps: Vec<TrajectoryStep>,
}

fn sample<T: Scalar>(args: &ModelArgs, req: &SampleRequest) -> Result<()> {
    if req.n == 0 {
        bail!("--n must be positive");
    }
    let gen = Generator::<T>::from_checkpoint(&args.checkpoint)?;
    if req.task.is_some() && !gen.is_task_conditional() {
        bail!("--task needs a task-ldm checkpoint, this one is {}", gen.stage.name());
    }
    let sampler = sampler_config(&gen.config, args)?;
    let ds = load_data(&args.data)?;
    let (index, entry) = find_object(&ds, &req.object)?;
    let mut rng = object_rng(seed_of(&gen.config)?, index);
    let poses = match &req.dump_trajectory {
        None => gen.generate(&entry.cloud, req.n, &sampler, req.task, req.rotate, &mut rng)?,
        Some(path) => {
            if gen.net.is_none() {
                bail!("--dump-trajectory needs a diffusion checkpoint");
            }
            let (poses, traj) =
                gen.generate_with_trajectory(&entry.cloud, req.n, &sampler, req.task, req.rotate, req.every.max(1), &mut rng)?;
            let file = TrajectoryFile {
                object_id: &entry.id,
                sampler: &sampler,
                steps: traj.into_iter().map(|(t, p)| TrajectoryStep { t, poses: poses7(&p) }).collect(),
            };
            write_atomic(path, serde_json::to_string(&file)?.as_bytes())?;
            poses
        }
    };
    let file = PoseFile { object_id: &entry.id, stage: gen.stage.name(), sampler: &sampler, task: req.task, poses: poses7(&poses) };
    write_atomic(&req.out, serde_json::to_string(&file)?.as_bytes())?;
    println!("{} poses for {} -> {}", poses.len(), entry.id, req.out.display());
    Ok(())
}

/// Generates grasps for every object, spreading objects over `jobs`
/// threads. Results are ordered by object position regardless of `jobs`.
fn generate_all<T: Scalar>(
    gen: &Generator<T>,
    objects: &[&ObjectEntry],
    jobs: usize,
    seed: u64,
    generate: impl Fn(&Generator<T>, &ObjectEntry, &mut ChaCha8Rng) -> graspldm::Result<Vec<RigidTransform<f64>>> + Sync,
) -> Result<Vec<Vec<RigidTransform<f64>>>> {
    let jobs = jobs.clamp(1, objects.len().max(1));
    let mut slots: Vec<Option<graspldm::Result<Vec<RigidTransform<f64>>>>> = (0..objects.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                let generate = &generate;
                s.spawn(move || {
                    (w..objects.len())
                        .step_by(jobs)
                        .map(|i| (i, generate(gen, objects[i], &mut object_rng(seed, i))))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    Ok(slots.into_iter().map(|r| r.expect("every object is scheduled")).collect::<graspldm::Result<Vec<_>>>()?)
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    checkpoint: String,
    stage: &'a str,
    sampler: &'a SamplerConfig,
    grasps_per_object: usize,
    #[serde(flatten)]
    success: &'a graspldm::eval::SuccessSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    label_precision: Option<graspldm::eval::PrecisionSummary>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    object_id: &'a str,
    index: usize,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    tx: f64,
    ty: f64,
    tz: f64,
    success: bool,
    failure_reason: &'a str,
}

fn evaluate<T: Scalar>(
    args: &ModelArgs,
    n: Option<usize>,
    labels: bool,
    jobs: usize,
    out_json: &Path,
    out_csv: &Path,
) -> Result<()> {
    let gen = Generator::<T>::from_checkpoint(&args.checkpoint)?;
    let cfg = &gen.config;
    let sampler = sampler_config(cfg, args)?;
    let n = n.unwrap_or(cfg.eval.grasps_per_object);
    if n == 0 {
        bail!("grasps per object must be positive");
    }
    let ds = load_data(&args.data)?;
    let objects: Vec<&ObjectEntry> = ds.objects.iter().collect();
    let seed = seed_of(cfg)?;
    let rotate = cfg.eval.rotate;
    let t0 = Instant::now();
    let grasps = generate_all(&gen, &objects, jobs, seed, |g, e, rng| g.generate(&e.cloud, n, &sampler, None, rotate, rng))?;
    let mut it = grasps.into_iter();
    let summary = success_rate(&objects, &cfg.dataset.gripper, |_| Ok(it.next().expect("one batch per object")))?;
    info!("evaluated {} objects in {:.1}s", objects.len(), t0.elapsed().as_secs_f64());

    let precision = if labels {
        let task = gen.is_task_conditional();
        // Labels are requested object by object, so this part stays sequential.
        let mut rng = object_rng(seed, objects.len());
        Some(label_precision(&objects, &cfg.dataset.gripper, |e, l| {
            gen.generate(&e.cloud, n, &sampler, task.then_some(l), rotate, &mut rng)
        })?)
    } else {
        None
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    for o in &summary.outcomes {
        let [qw, qx, qy, qz, tx, ty, tz] = o.pose;
        w.serialize(CsvRow {
            object_id: &o.object_id,
            index: o.index,
            qw,
            qx,
            qy,
            qz,
            tx,
            ty,
            tz,
            success: o.success,
            failure_reason: o.failure_reason.map(|r| r.name()).unwrap_or(""),
        })?;
    }
    write_atomic(out_csv, &w.into_inner().map_err(|e| anyhow!("csv: {e}"))?)?;
    let doc = EvalSummary {
        checkpoint: args.checkpoint.display().to_string(),
        stage: gen.stage.name(),
        sampler: &sampler,
        grasps_per_object: n,
        success: &summary,
        label_precision: precision,
    };
    write_atomic(out_json, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    println!("median success {:.3} (iqr {:.3}) over {} objects", summary.median, summary.iqr, objects.len());
    if let Some(p) = &doc.label_precision {
        println!("label precision {:.3}", p.mean);
    }
    Ok(())
}

fn parse_sampler_spec(s: &str) -> Result<SamplerConfig> {
    let (kind, steps) = s.split_once(':').ok_or_else(|| anyhow!("sampler `{s}` is not `kind:steps`"))?;
    let kind: SamplerKind = kind.parse()?;
    let steps: usize = steps.parse().with_context(|| format!("steps in `{s}`"))?;
    Ok(SamplerConfig { kind, steps, ..SamplerConfig::default() })
}

struct BenchRequest {
    object: Option<String>,
    specs: Vec<SamplerConfig>,
    batch: Vec<usize>,
    repeats: usize,
    out: PathBuf,
}

#[derive(Serialize)]
struct BenchRow {
    sampler: &'static str,
    steps: usize,
    batch: usize,
    mean_s: f64,
    sd_s: f64,
    success_rate: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn bench<T: Scalar>(checkpoint: &Path, data: &[PathBuf], req: &BenchRequest) -> Result<()> {
    let gen = Generator::<T>::from_checkpoint(checkpoint)?;
    if gen.net.is_none() {
        bail!("bench needs a diffusion checkpoint");
    }
    let ds = load_data(data)?;
    let (index, entry) = match &req.object {
        Some(id) => find_object(&ds, id)?,
        None => (0, ds.objects.first().ok_or_else(|| anyhow!("dataset is empty"))?),
    };
    let oracle = GraspOracle::new(&gen.config.dataset.gripper)?;
    let mut rng = object_rng(seed_of(&gen.config)?, index);
    let mut w = csv::Writer::from_writer(Vec::new());
    for spec in &req.specs {
        // DDPM always walks the full chain.
        let steps = match spec.kind {
            SamplerKind::Ddpm => gen.schedule.timesteps(),
            SamplerKind::Ddim => spec.steps,
        };
        spec.validate(gen.schedule.timesteps())?;
        for &b in &req.batch {
            if b == 0 {
                bail!("batch sizes must be positive");
            }
            let mut times = Vec::with_capacity(req.repeats);
            let (mut ok, mut total) = (0usize, 0usize);
            for _ in 0..req.repeats {
                let t0 = Instant::now();
                let poses = gen.generate(&entry.cloud, b, spec, None, false, &mut rng)?;
                times.push(t0.elapsed().as_secs_f64());
                ok += poses.iter().filter(|g| oracle.evaluate(&entry.object, g).success).count();
                total += poses.len();
            }
            let (mean_s, sd_s) = mean_sd(&times);
            let kind = match spec.kind {
                SamplerKind::Ddpm => "ddpm",
                SamplerKind::Ddim => "ddim",
            };
            info!("{kind}-{steps} batch {b}: {mean_s:.3}s ± {sd_s:.3}");
            w.serialize(BenchRow { sampler: kind, steps, batch: b, mean_s, sd_s, success_rate: ok as f64 / total as f64 })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| anyhow!("csv: {e}"))?;
    write_atomic(&req.out, &bytes)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}
