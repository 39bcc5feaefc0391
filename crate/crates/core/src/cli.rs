//! Command-line surface. Each command loads the run configuration, applies
//! flag overrides, validates, and runs one pipeline.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anchor::{self, CategoryId, PseudoColor};
use crate::checkpoint::{Checkpoint, Model, ModelKind, Provenance};
use crate::config::{Purpose, RunConfig};
use crate::dataset::{self, paired_batch, write_array, ArrayData, Dataset, Manifest, RawArray, Split, SplitName};
use crate::dsm;
use crate::error::{Error, Result};
use crate::flow::{self, FlowModel};
use crate::latent::{train_linear_autoencoder, CodecKind, LatentCodec};
use crate::metrics::{self, kv_line, Bandwidth};
use crate::ppm::{read_ppm, write_ppm, Rgb8Image};
use crate::sampler::{self, Direction, Solver};
use crate::task::{TaskGeometry, TaskKind, VOID_COLOR};
use crate::training::write_log;

#[derive(Debug, Parser)]
#[command(name = "flowseg", version, about = "Bidirectional rectified-flow segmentation and synthesis on toy tasks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML). Missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training steps for `train`; solver steps for inference commands.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true, value_parser = parse_solver)]
    pub solver: Option<Solver>,
    #[arg(long, global = true, value_parser = parse_direction)]
    pub direction: Option<Direction>,
    #[arg(long = "beta-prime", global = true)]
    pub beta_prime: Option<f64>,
    /// Output directory (the dataset directory for `generate`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long = "print-config", global = true)]
    pub print_config: bool,
}

fn parse_solver(s: &str) -> std::result::Result<Solver, String> {
    match s {
        "euler" => Ok(Solver::Euler),
        "rk45" => Ok(Solver::Rk45),
        _ => Err(format!("expected euler or rk45, got {s:?}")),
    }
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    match s {
        "forward" => Ok(Direction::Forward),
        "reverse" => Ok(Direction::Reverse),
        _ => Err(format!("expected forward or reverse, got {s:?}")),
    }
}

#[derive(Debug, Args, Clone)]
pub struct InputArgs {
    /// Dataset split to read samples from.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Number of leading samples; 0 means the whole split.
    #[arg(long, default_value_t = 0)]
    pub count: usize,
    /// A single PPM image (segment) or pseudo mask (synthesize) instead of a split.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the configured dataset and its manifest.
    Generate,
    /// Train the configured model and write a checkpoint plus training log.
    Train,
    /// Map images to category layouts with the forward flow (or the diffusion sampler).
    Segment(InputArgs),
    /// Map layouts to images with the reverse flow.
    Synthesize(InputArgs),
    /// Report segmentation (and, for point tasks, distribution) metrics.
    Eval {
        /// Split to evaluate; defaults to `eval.split` from the config.
        #[arg(long)]
        split: Option<String>,
    },
    /// Record every solver state of one solve.
    DumpTrajectory(InputArgs),
    /// Print a checkpoint's header.
    Inspect {
        /// Checkpoint path; defaults to the configured checkpoint.
        path: Option<PathBuf>,
    },
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Print shapes, counts and verified checksums.
    Inspect {
        /// Manifest path; defaults to `<paths.data>/manifest.toml`.
        manifest: Option<PathBuf>,
    },
}

impl Cli {
    fn purpose(&self) -> Purpose {
        match &self.command {
            Some(Command::Train) => Purpose::Train,
            Some(Command::Segment(_)) => Purpose::Segment,
            Some(Command::Synthesize(_)) => Purpose::Synthesize,
            _ => Purpose::Any,
        }
    }

    /// Config file plus flag overrides.
    pub fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.global.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let g = &self.global;
        if let Some(s) = g.seed {
            cfg.seed = s;
        }
        if let Some(n) = g.steps {
            match self.command {
                Some(Command::Train) => cfg.train.steps = n,
                _ => {
                    cfg.solve.steps = n;
                    cfg.dsm.sample_steps = n;
                }
            }
        }
        if let Some(s) = g.solver {
            cfg.solve.solver = s;
        }
        match (g.direction, &self.command) {
            (Some(d), _) => cfg.solve.direction = d,
            (None, Some(Command::Synthesize(_))) => cfg.solve.direction = Direction::Reverse,
            (None, Some(Command::Segment(_))) => cfg.solve.direction = Direction::Forward,
            _ => {}
        }
        if let Some(b) = g.beta_prime {
            cfg.synth.beta_prime = Some(b);
        }
        if let Some(o) = &g.out {
            match self.command {
                Some(Command::Generate) => cfg.paths.data = o.clone(),
                _ => cfg.paths.out = o.clone(),
            }
        }
        Ok(cfg)
    }
}

/// Runs the parsed command, writing human output to `out`.
pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> Result<()> {
    let cfg = cli.effective_config()?;
    if cli.global.print_config {
        write!(out, "{}", cfg.to_toml())?;
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Error::InvalidArgument("no command given (see --help)".into()));
    };
    cfg.validate(cli.purpose())?;
    let line = match command {
        Command::Generate => cmd_generate(&cfg)?,
        Command::Train => cmd_train(&cfg)?,
        Command::Segment(a) => cmd_segment(&cfg, a)?,
        Command::Synthesize(a) => cmd_synthesize(&cfg, a)?,
        Command::Eval { split } => cmd_eval(&cfg, split.as_deref())?,
        Command::DumpTrajectory(a) => cmd_dump_trajectory(&cfg, a)?,
        Command::Inspect { path } => cmd_inspect(&cfg, path.as_deref())?,
        Command::Dataset {
            command: DatasetCommand::Inspect { manifest },
        } => cmd_dataset_inspect(&cfg, manifest.as_deref())?,
    };
    write!(out, "{line}")?;
    if !line.ends_with('\n') {
        writeln!(out)?;
    }
    Ok(())
}

/// One JSON line describing a failure.
pub fn error_line(e: &Error) -> String {
    let mut v = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    if let Error::Validation(p) = e {
        v["problems"] = serde_json::json!(p);
    }
    v.to_string()
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<String> {
    let d = dataset::generate(&cfg.task_spec(), cfg.seed, cfg.splits)?;
    let m = dataset::save(&d, &cfg.paths.data)?;
    Ok(kv_line(&[
        ("dataset", cfg.paths.data.display().to_string()),
        ("task", format!("{:?}", cfg.task).to_lowercase()),
        ("seed", m.seed.to_string()),
        ("train", m.splits.train.to_string()),
        ("val", m.splits.val.to_string()),
        ("test", m.splits.test.to_string()),
    ]))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = dataset::load(&cfg.manifest_path())?;
    if d.spec != cfg.task_spec() {
        return Err(Error::InvalidArgument(format!(
            "dataset at {} was generated for a different task spec",
            cfg.paths.data.display()
        )));
    }
    Ok(d)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let data = load_dataset(cfg)?;
    let geometry = data.spec.geometry()?;
    let tc = cfg.train_config();
    let provenance = Provenance {
        config_hash: cfg.hash(),
        steps: tc.steps,
        seed: cfg.seed,
    };
    let mut extra = Vec::new();
    let (ck, log) = match cfg.mode {
        ModelKind::Flow => {
            let codec = match cfg.codec.kind {
                CodecKind::Identity => LatentCodec::identity(geometry.sample_dim()),
                CodecKind::LinearAutoencoder => {
                    let (codec, mse) = fit_codec(cfg, &data, &geometry)?;
                    extra.push(("codec_mse", format!("{mse:.6e}")));
                    codec
                }
            };
            let arch = cfg.architecture(codec.latent_shape(geometry.data_shape()));
            let outcome = flow::train(&data, codec, arch, &tc)?;
            (Checkpoint::flow(outcome.model, provenance), outcome.log)
        }
        ModelKind::Dsm => {
            let arch = cfg.architecture(geometry.data_shape());
            let outcome = dsm::train_dsm(&data, arch, cfg.dsm.schedule()?, cfg.dsm.variance, &tc)?;
            (Checkpoint::dsm(outcome.model, provenance), outcome.log)
        }
    };
    fs::create_dir_all(&cfg.paths.out)?;
    let path = cfg.checkpoint_path();
    ck.save(&path, cfg.checkpoint_dtype)?;
    fs::write(cfg.paths.out.join("train_log.jsonl"), write_log(&log))?;
    fs::write(cfg.paths.out.join("config.toml"), cfg.to_toml())?;
    let mut pairs = vec![("checkpoint", path.display().to_string()), ("steps", tc.steps.to_string())];
    if let Some(last) = log.last() {
        pairs.push(("loss", format!("{:.6e}", last.loss)));
        if let Some(m) = last.miou_1 {
            pairs.push(("miou_1", format!("{m:.6}")));
        }
        if let Some(m) = last.miou_25 {
            pairs.push(("miou_25", format!("{m:.6}")));
        }
    }
    pairs.extend(extra);
    Ok(kv_line(&pairs))
}

/// Fits the linear codec on train images together with their exact pseudo masks.
fn fit_codec(cfg: &RunConfig, data: &Dataset, geometry: &TaskGeometry) -> Result<(LatentCodec, f64)> {
    let idx: Vec<usize> = (0..data.train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let identity = LatentCodec::identity(geometry.sample_dim());
    let pairs = paired_batch(&data.train, SplitName::Train, &idx, geometry, &identity, None, &mut rng)?;
    let stacked = ndarray::concatenate(Axis(0), &[pairs.z0.view(), pairs.z1.view()]).map_err(|e| Error::Shape(e.to_string()))?;
    train_linear_autoencoder(stacked.view(), &cfg.autoencoder())
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    Checkpoint::load(&cfg.checkpoint_path())
}

fn select_split(data: &Dataset, args: &InputArgs) -> Result<Split> {
    let name: SplitName = args.split.parse()?;
    let s = data.split(name);
    Ok(if args.count == 0 { s.clone() } else { s.head(args.count) })
}

fn read_image(path: &Path, geometry: &TaskGeometry) -> Result<Vec<f64>> {
    let img = read_ppm(&mut BufReader::new(fs::File::open(path)?))?;
    if geometry.kind != TaskKind::Image || img.width != geometry.width || img.height != geometry.height {
        return Err(Error::Shape(format!(
            "{}x{} PPM does not match the {}x{} task",
            img.width, img.height, geometry.width, geometry.height
        )));
    }
    Ok(img.colors().into_iter().map(|c| geometry.normalize(c)).collect())
}

fn labels_array(geometry: &TaskGeometry, labels: &[CategoryId]) -> Result<RawArray> {
    let n = labels.len() / geometry.pixels();
    let shape = match geometry.kind {
        TaskKind::Point => vec![n],
        TaskKind::Image => vec![n, geometry.height, geometry.width],
    };
    RawArray::new(shape, ArrayData::U32(labels.iter().map(|c| c.0).collect()))
}

fn write_raw(path: &Path, a: &RawArray) -> Result<()> {
    let mut bytes = Vec::new();
    write_array(&mut bytes, a)?;
    fs::write(path, bytes)?;
    Ok(())
}

fn mask_image(geometry: &TaskGeometry, layout: &[CategoryId]) -> Result<Rgb8Image> {
    let mut colors = Vec::with_capacity(layout.len() * 3);
    for &c in layout {
        if c.is_void() {
            colors.extend([VOID_COLOR; 3]);
        } else {
            colors.extend(anchor::encode(c, &geometry.anchors)?.0);
        }
    }
    Rgb8Image::from_colors(geometry.width, geometry.height, &colors)
}

fn save_ppm(path: &Path, img: &Rgb8Image) -> Result<()> {
    let mut bytes = Vec::new();
    write_ppm(&mut bytes, img)?;
    fs::write(path, bytes)?;
    Ok(())
}

fn segment_with(cfg: &RunConfig, model: &Model, images: &Array2<f64>) -> Result<Vec<CategoryId>> {
    match model {
        Model::Flow(m) => sampler::segment(m, images.view(), &cfg.solve),
        Model::Dsm(m) => dsm::dsm_segment(m, images.view(), cfg.dsm.sample_steps, cfg.dsm.sampler, cfg.seed),
    }
}

pub fn cmd_segment(cfg: &RunConfig, args: &InputArgs) -> Result<String> {
    let ck = load_checkpoint(cfg)?;
    let geometry = ck.model.geometry().clone();
    let (images, truth) = match &args.input {
        Some(p) => {
            let row = read_image(p, &geometry)?;
            (Array2::from_shape_vec((1, row.len()), row).expect("one row"), None)
        }
        None => {
            let s = select_split(&load_dataset(cfg)?, args)?;
            (s.images, Some(s.layouts))
        }
    };
    let labels = segment_with(cfg, &ck.model, &images)?;
    let dir = cfg.paths.out.join("segment");
    fs::create_dir_all(&dir)?;
    write_raw(&dir.join("labels.bin"), &labels_array(&geometry, &labels)?)?;
    if geometry.kind == TaskKind::Image {
        for (i, layout) in labels.chunks_exact(geometry.pixels()).enumerate() {
            save_ppm(&dir.join(format!("mask_{i:04}.ppm")), &mask_image(&geometry, layout)?)?;
        }
    }
    let mut pairs = vec![("samples", images.nrows().to_string()), ("output", dir.display().to_string())];
    if let Some(gt) = truth {
        let r = metrics::miou(&labels, &gt, geometry.anchors.num_categories() as usize, CategoryId::VOID)?;
        fs::write(dir.join("metrics.csv"), r.to_csv())?;
        pairs.push(("miou", format!("{:.6}", r.miou)));
        pairs.push(("accuracy", format!("{:.6}", r.accuracy)));
    }
    let line = kv_line(&pairs);
    fs::write(dir.join("summary.txt"), format!("{line}\n"))?;
    Ok(line)
}

fn flow_model(ck: Checkpoint, what: &str) -> Result<FlowModel> {
    match ck.model {
        Model::Flow(m) => Ok(m),
        Model::Dsm(_) => Err(Error::InvalidArgument(format!("{what} needs a flow checkpoint"))),
    }
}

fn read_layout(path: &Path, geometry: &TaskGeometry) -> Result<Vec<CategoryId>> {
    let img = read_ppm(&mut BufReader::new(fs::File::open(path)?))?;
    if geometry.kind != TaskKind::Image || img.width != geometry.width || img.height != geometry.height {
        return Err(Error::Shape("pseudo mask does not match the task geometry".into()));
    }
    Ok(img
        .colors()
        .chunks_exact(3)
        .map(|px| {
            if px.iter().all(|&c| c == VOID_COLOR) {
                CategoryId::VOID
            } else {
                anchor::decode(&PseudoColor([px[0], px[1], px[2]]), &geometry.anchors)
            }
        })
        .collect())
}

pub fn cmd_synthesize(cfg: &RunConfig, args: &InputArgs) -> Result<String> {
    let model = flow_model(load_checkpoint(cfg)?, "synthesis")?;
    let geometry = model.geometry.clone();
    let layouts = match &args.input {
        Some(p) => read_layout(p, &geometry)?,
        None => {
            let count = if args.count == 0 { cfg.synth.count } else { args.count };
            select_split(&load_dataset(cfg)?, &InputArgs { count, ..args.clone() })?.layouts
        }
    };
    let images = sampler::synthesize(&model, &layouts, cfg.synth.beta_prime, cfg.seed, &cfg.solve)?;
    let back = sampler::segment(&model, images.view(), &cfg.solve.with_direction(Direction::Forward))?;
    let agreement = metrics::agreement(&back, &layouts, CategoryId::VOID)?;
    let dir = cfg.paths.out.join("synthesize");
    fs::create_dir_all(&dir)?;
    let colors: Vec<f32> = images.iter().map(|&v| geometry.denormalize(v) as f32).collect();
    let n = images.nrows();
    let shape = match geometry.kind {
        TaskKind::Point => vec![n, geometry.num_channels()],
        TaskKind::Image => vec![n, geometry.height, geometry.width, geometry.num_channels()],
    };
    write_raw(&dir.join("images.bin"), &RawArray::new(shape, ArrayData::F32(colors.clone()))?)?;
    if geometry.kind == TaskKind::Image {
        for (i, c) in colors.chunks_exact(geometry.sample_dim()).enumerate() {
            let c: Vec<f64> = c.iter().map(|&v| f64::from(v)).collect();
            save_ppm(&dir.join(format!("image_{i:04}.ppm")), &Rgb8Image::from_colors(geometry.width, geometry.height, &c)?)?;
        }
    }
    let line = kv_line(&[
        ("samples", n.to_string()),
        ("beta_prime", format!("{}", cfg.synth.beta_prime.unwrap_or(model.beta))),
        ("round_trip_agreement", format!("{agreement:.6}")),
        ("output", dir.display().to_string()),
    ]);
    fs::write(dir.join("summary.txt"), format!("{line}\n"))?;
    Ok(line)
}

pub fn cmd_eval(cfg: &RunConfig, split: Option<&str>) -> Result<String> {
    let ck = load_checkpoint(cfg)?;
    let data = load_dataset(cfg)?;
    let name: SplitName = match split {
        Some(s) => s.parse()?,
        None => cfg.eval.split,
    };
    let s = if name == SplitName::Val {
        flow::eval_split(&data, &cfg.train_config())
    } else {
        data.split(name).clone()
    };
    let geometry = ck.model.geometry().clone();
    let k = geometry.anchors.num_categories() as usize;
    let mut pairs = vec![("split", name.as_str().to_string()), ("samples", s.len().to_string())];
    let mut csv;
    match &ck.model {
        Model::Flow(m) => {
            pairs.push(("miou_1", format!("{:.6}", flow::eval_miou(m, &s, 1)?)));
            pairs.push(("miou_25", format!("{:.6}", flow::eval_miou(m, &s, 25)?)));
            let pred = sampler::segment(m, s.images.view(), &cfg.solve.with_direction(Direction::Forward))?;
            let r = metrics::miou(&pred, &s.layouts, k, CategoryId::VOID)?;
            pairs.push(("miou_configured", format!("{:.6}", r.miou)));
            csv = r.to_csv();
            if geometry.kind == TaskKind::Point && cfg.eval.mmd_samples >= 2 {
                let _ = writeln!(csv, "\nclass,mmd,null_q95,p_value");
                for line in point_mmd(cfg, m, &data, &s)? {
                    csv.push_str(&line);
                }
            }
        }
        Model::Dsm(m) => {
            pairs.push(("miou_1", format!("{:.6}", dsm::eval_miou(m, &s, 1, dsm::SamplerMode::Ddim, cfg.seed)?)));
            pairs.push(("miou_25", format!("{:.6}", dsm::eval_miou(m, &s, 25.min(m.schedule.steps()), dsm::SamplerMode::Ddim, cfg.seed)?)));
            let r = metrics::miou(&segment_with(cfg, &ck.model, &s.images)?, &s.layouts, k, CategoryId::VOID)?;
            pairs.push(("miou_configured", format!("{:.6}", r.miou)));
            csv = r.to_csv();
        }
    }
    let dir = cfg.paths.out.join("eval");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("metrics.csv"), csv)?;
    let line = kv_line(&pairs);
    fs::write(dir.join("summary.txt"), format!("{line}\n"))?;
    Ok(line)
}

/// Per-category two-sample statistic between reverse-flow samples and real
/// samples of that category.
fn point_mmd(cfg: &RunConfig, m: &FlowModel, data: &Dataset, real: &Split) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for c in 0..m.geometry.anchors.num_categories() {
        let idx: Vec<usize> = (0..real.len()).filter(|&i| real.layouts[i] == CategoryId(c)).take(cfg.eval.mmd_samples).collect();
        if idx.len() < 2 {
            continue;
        }
        let real_c = real.images.select(Axis(0), &idx);
        let layouts = vec![CategoryId(c); cfg.eval.mmd_samples];
        let synth = sampler::synthesize(m, &layouts, cfg.synth.beta_prime, cfg.seed.wrapping_add(u64::from(c)), &cfg.solve.with_direction(Direction::Reverse))?;
        let bandwidth = match cfg.eval.bandwidth {
            Bandwidth::Median => {
                let ref_idx: Vec<usize> = (0..data.train.len()).filter(|&i| data.train.layouts[i] == CategoryId(c)).collect();
                Bandwidth::Fixed(metrics::median_heuristic(data.train.images.select(Axis(0), &ref_idx).view())?)
            }
            b => b,
        };
        let r = metrics::mmd_permutation_test(synth.view(), real_c.view(), bandwidth, cfg.eval.permutations, cfg.seed)?;
        lines.push(format!(
            "{c},{:.6e},{},{}\n",
            r.statistic,
            r.null_q95.map(|v| format!("{v:.6e}")).unwrap_or_default(),
            r.p_value.map(|v| format!("{v:.4}")).unwrap_or_default()
        ));
    }
    Ok(lines)
}

pub fn cmd_dump_trajectory(cfg: &RunConfig, args: &InputArgs) -> Result<String> {
    let model = flow_model(load_checkpoint(cfg)?, "trajectory capture")?;
    let count = if args.count == 0 { 8 } else { args.count };
    let split = select_split(&load_dataset(cfg)?, &InputArgs { count, ..args.clone() })?;
    let mut solve = cfg.solve;
    solve.capture_trajectory = true;
    let start = match solve.direction {
        Direction::Forward => model.codec.encode(split.images.view())?,
        Direction::Reverse => {
            let beta = cfg.synth.beta_prime.unwrap_or(model.beta);
            let pert = anchor::PerturbationConfig::new(beta, &model.geometry.anchors)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut masks = Array2::zeros(split.images.dim());
            for i in 0..split.len() {
                let (v, _) = model.geometry.render_mask(split.layout(i), Some((&pert, &mut rng)))?;
                masks.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
            }
            model.codec.encode(masks.view())?
        }
    };
    let sol = sampler::solve(&model.net, start.view(), &solve)?;
    let traj = sol.trajectory.expect("capture requested");
    let (n, d) = start.dim();
    let values: Vec<f64> = traj.states.iter().flat_map(|s| s.z.iter().copied()).collect();
    let dir = cfg.paths.out.join("trajectory");
    fs::create_dir_all(&dir)?;
    write_raw(&dir.join("states.bin"), &RawArray::new(vec![traj.states.len(), n, d], ArrayData::F64(values))?)?;
    let index: String = traj.times().iter().enumerate().map(|(i, t)| format!("{i} {t:?}\n")).collect();
    fs::write(dir.join("times.txt"), index)?;
    Ok(kv_line(&[
        ("states", traj.states.len().to_string()),
        ("samples", n.to_string()),
        ("dim", d.to_string()),
        ("evaluations", sol.evaluations.to_string()),
        ("output", dir.display().to_string()),
    ]))
}

pub fn cmd_inspect(cfg: &RunConfig, path: Option<&Path>) -> Result<String> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| cfg.checkpoint_path());
    let bytes = fs::read(&path)?;
    let (header, _) = Checkpoint::read_header(&bytes)?;
    // full parse verifies the payload checksum
    Checkpoint::from_bytes(&bytes)?;
    let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    Ok(format!("# {}\n# checksum ok\n{text}", path.display()))
}

pub fn cmd_dataset_inspect(cfg: &RunConfig, manifest: Option<&Path>) -> Result<String> {
    let path = manifest.map(Path::to_path_buf).unwrap_or_else(|| cfg.manifest_path());
    let m = Manifest::from_toml(&fs::read_to_string(&path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = kv_line(&[
        ("manifest", path.display().to_string()),
        ("format_version", m.format_version.to_string()),
        ("seed", m.seed.to_string()),
        ("train", m.splits.train.to_string()),
        ("val", m.splits.val.to_string()),
        ("test", m.splits.test.to_string()),
    ]);
    out.push('\n');
    for f in &m.files {
        let a = dataset::read_verified(base, f)?;
        out.push_str(&kv_line(&[
            ("split", f.split.as_str().to_string()),
            ("role", f.role.clone()),
            ("path", f.path.display().to_string()),
            ("dtype", a.data.dtype_name().to_string()),
            ("shape", format!("{:?}", a.shape)),
            ("sha256", f.sha256.clone()),
            ("checksum", "ok".to_string()),
        ]));
        out.push('\n');
    }
    Ok(out)
}
