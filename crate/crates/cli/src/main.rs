use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deepcontrast::dataset::{training_samples, DatasetManifest, Split};
use deepcontrast::eval::{evaluate_with, summary_table};
use deepcontrast::gradsuite::run_suite;
use deepcontrast::pipeline::{predict_image, refine, segment};
use deepcontrast::train::{alternate_train, TrainState};
use deepcontrast::{build_network, BinaryMask, Error, Network, RgbImage, RunConfig, SaliencyMap};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "deepcontrast", version, about = "Two-stream deep contrast saliency detection")]
struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set train.alternations=2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 lets the pool decide).
    #[arg(long, global = true, env = "DCL_NUM_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one image and write labels, a text sidecar and a boundary overlay.
    Superpixels {
        image: PathBuf,
        #[arg(short, long, default_value_t = 200)]
        k: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train on the `train` split of a manifest.
    Train {
        manifest: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Continue from `out/checkpoint` and `out/state.json`.
        #[arg(long)]
        resume: bool,
    },
    /// Write saliency maps for images.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Also write the CRF-refined map.
        #[arg(long)]
        crf: bool,
        /// Also write the two stream maps.
        #[arg(long)]
        debug: bool,
        /// Also write float blobs next to every PNG.
        #[arg(long)]
        blobs: bool,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Refine an existing map with the dense CRF.
    Refine {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        crf: CrfFlags,
    },
    /// Score maps against ground truths with matching file names.
    Evaluate {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Row label in the summary table.
        #[arg(long, default_value = "maps")]
        name: String,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        conv_instances: usize,
    },
    /// Print the effective configuration as JSON.
    Config {
        /// Start from the narrow-network synthetic preset instead of the defaults.
        #[arg(long)]
        synthetic: bool,
    },
    /// Write a synthetic corpus with a manifest.
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(short, long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 81)]
        width: usize,
        #[arg(long, default_value_t = 81)]
        height: usize,
    },
}

#[derive(Args)]
struct CrfFlags {
    #[arg(long)]
    w_appearance: Option<f64>,
    #[arg(long)]
    w_smoothness: Option<f64>,
    #[arg(long)]
    sigma_alpha: Option<f64>,
    #[arg(long)]
    sigma_beta: Option<f64>,
    #[arg(long)]
    sigma_gamma: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Usage(String),
    GradCheck(usize),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Usage(_) => "usage",
            CliError::GradCheck(_) => "gradcheck",
        }
    }

    fn exit_code(&self) -> u8 {
        match self.category() {
            "usage" | "argument" => 2,
            "config" => 3,
            "io" => 4,
            "dataset" => 5,
            "checkpoint" => 6,
            "numeric" => 7,
            "shape" => 8,
            "gradcheck" => 9,
            _ => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Usage(m) => m.clone(),
            CliError::GradCheck(n) => format!("{n} gradient checks failed"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": { "category": e.category(), "message": e.message() } });
            eprintln!("{line}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let synthetic = matches!(cli.command, Command::Config { synthetic: true });
    let config = load_config(cli.config.as_deref(), &cli.overrides, cli.seed, synthetic)?;
    match cli.command {
        Command::Superpixels { image, k, out } => cmd_superpixels(&image, k, &out, &config),
        Command::Train { manifest, out, resume } => cmd_train(&manifest, &config, &out, resume),
        Command::Predict {
            checkpoint,
            out,
            crf,
            debug,
            blobs,
            images,
        } => cmd_predict(&checkpoint, &images, &out, &config, Outputs { crf, debug, blobs }),
        Command::Refine { image, map, out, crf } => cmd_refine(&image, &map, &out, config, &crf),
        Command::Evaluate { maps, gts, out, name } => cmd_evaluate(&maps, &gts, &out, &name, &config),
        Command::Gradcheck { conv_instances } => cmd_gradcheck(config.seed, conv_instances),
        Command::Config { .. } => {
            println!("{}", config.to_json());
            Ok(())
        }
        Command::Synth { out, n, width, height } => {
            let m = deepcontrast::synth::write_corpus(&out, n, width, height, config.seed)?;
            println!("{}", m.display());
            Ok(())
        }
    }
}

/// File values, then `--set` overrides, then `--seed`.
fn load_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>, synthetic: bool) -> CliResult<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
        }
        None if synthetic => serde_json::to_value(RunConfig::synthetic()).expect("config serializes"),
        None => serde_json::to_value(RunConfig::default()).expect("config serializes"),
    };
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut doc, key, value)?;
    }
    if let Some(s) = seed {
        set_path(&mut doc, "seed", Value::from(s))?;
    }
    let config: RunConfig = serde_json::from_value(doc).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let mut cur = doc;
    for part in key.split('.') {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("{key}: {part} is not inside an object")))?;
        cur = obj.entry(part).or_insert(Value::Null);
    }
    *cur = value;
    Ok(())
}

fn cmd_superpixels(image: &Path, k: usize, out: &Path, config: &RunConfig) -> CliResult<()> {
    let img = RgbImage::load(image)?;
    let run = RunConfig {
        scales: vec![k],
        ..config.clone()
    };
    let seg = segment(&img, &run)?.remove(0);
    fs::create_dir_all(out).map_err(io_err(out))?;
    seg.save_label_png(&out.join("labels.png"))?;
    let side = out.join("labels.txt");
    fs::write(&side, seg.sidecar()).map_err(io_err(&side))?;
    seg.boundary_overlay(&img)?.save(&out.join("overlay.png"))?;
    println!("requested {k} segments, produced {}", seg.k);
    Ok(())
}

fn write_atomic(path: &Path, text: &str) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn save_checkpoint(net: &Network, config: &RunConfig, out: &Path) -> CliResult<()> {
    let staging = out.join("checkpoint.tmp");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    net.save(&staging)?;
    config.save(&staging.join("run.json"))?;
    let dest = out.join("checkpoint");
    if dest.exists() {
        fs::remove_dir_all(&dest).map_err(io_err(&dest))?;
    }
    fs::rename(&staging, &dest).map_err(io_err(&dest))
}

fn loss_log(state: &TrainState) -> String {
    let mut s = String::from("epoch,phase,loss,train_max_f\n");
    for r in &state.trace {
        let f = r.train_max_f.map(|f| f.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{:?},{},{f}", r.epoch, r.phase, r.loss);
    }
    s
}

fn cmd_train(manifest: &Path, config: &RunConfig, out: &Path, resume: bool) -> CliResult<()> {
    let m = DatasetManifest::load(manifest)?;
    let samples = training_samples(&m, Split::Train, config)?;
    if samples.is_empty() {
        return Err(Error::Dataset(format!("{}: no train entries", manifest.display())).into());
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let state_path = out.join("state.json");
    let (mut net, mut state) = if resume {
        let net = Network::load(&out.join("checkpoint"))?;
        let text = fs::read_to_string(&state_path).map_err(io_err(&state_path))?;
        let state: TrainState =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", state_path.display())))?;
        if net.config != config.network {
            return Err(Error::Checkpoint("checkpoint network differs from the configured one".into()).into());
        }
        (net, state)
    } else {
        let net = build_network(&config.network, config.seed)?;
        save_checkpoint(&net, config, out)?;
        (net, TrainState::default())
    };
    config.save(&out.join("run.json"))?;
    let persist = |net: &Network, state: &TrainState| -> deepcontrast::Result<()> {
        let to_core = |e: CliError| match e {
            CliError::Core(e) => e,
            other => Error::InvalidArgument(other.message()),
        };
        save_checkpoint(net, config, out).map_err(to_core)?;
        write_atomic(&state_path, &serde_json::to_string_pretty(state).expect("state serializes")).map_err(to_core)?;
        write_atomic(&out.join("loss.csv"), &loss_log(state)).map_err(to_core)
    };
    persist(&net, &state)?;
    alternate_train(&mut net, &samples, &config.train, &mut state, persist)?;
    if let Some(f) = state.trace.iter().rev().find_map(|r| r.train_max_f) {
        println!("trained {} epochs, last train maxF {f:.4}", state.completed_epochs);
    } else {
        println!("trained {} epochs", state.completed_epochs);
    }
    Ok(())
}

struct Outputs {
    crf: bool,
    debug: bool,
    blobs: bool,
}

fn write_map(map: &SaliencyMap, dir: &Path, name: &str, blob: bool) -> CliResult<()> {
    map.save(&dir.join(format!("{name}.png")))?;
    if blob {
        map.save_blob(&dir.join(format!("{name}.bin")))?;
    }
    Ok(())
}

fn stem(path: &Path) -> CliResult<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::Usage(format!("{}: no file name", path.display())))
}

fn cmd_predict(checkpoint: &Path, images: &[PathBuf], out: &Path, config: &RunConfig, o: Outputs) -> CliResult<()> {
    let net = Network::load(checkpoint)?;
    let run = RunConfig {
        network: net.config.clone(),
        ..config.clone()
    };
    fs::create_dir_all(out).map_err(io_err(out))?;
    let results = deepcontrast::par::map_slice(images, |path| -> CliResult<()> {
        let name = stem(path)?;
        let img = RgbImage::load(path)?;
        let p = predict_image(&net, &img, &run)?;
        write_map(&p.fused, out, &name, o.blobs)?;
        if o.crf {
            write_map(&refine(&p.fused, &img, &run)?, out, &format!("{name}_crf"), o.blobs)?;
        }
        if o.debug {
            write_map(&p.s1, out, &format!("{name}_s1"), o.blobs)?;
            write_map(&p.s2, out, &format!("{name}_s2"), o.blobs)?;
        }
        Ok(())
    });
    results.into_iter().collect::<CliResult<Vec<()>>>()?;
    println!("wrote {} maps to {}", images.len(), out.display());
    Ok(())
}

fn cmd_refine(image: &Path, map: &Path, out: &Path, mut config: RunConfig, f: &CrfFlags) -> CliResult<()> {
    let c = &mut config.crf;
    c.w_appearance = f.w_appearance.unwrap_or(c.w_appearance);
    c.w_smoothness = f.w_smoothness.unwrap_or(c.w_smoothness);
    c.sigma_alpha = f.sigma_alpha.unwrap_or(c.sigma_alpha);
    c.sigma_beta = f.sigma_beta.unwrap_or(c.sigma_beta);
    c.sigma_gamma = f.sigma_gamma.unwrap_or(c.sigma_gamma);
    c.iterations = f.iterations.unwrap_or(c.iterations);
    config.crf.validate()?;
    let img = RgbImage::load(image)?;
    let s = SaliencyMap::load(map)?;
    let refined = refine(&s, &img, &config)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    refined.save(out)?;
    Ok(())
}

fn image_files(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let mut v = Vec::new();
    for e in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = e.map_err(io_err(dir))?.path();
        let ext = p.extension().and_then(|x| x.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "pgm" | "ppm" | "pnm")) {
            v.push((stem(&p)?, p));
        }
    }
    v.sort();
    Ok(v)
}

fn cmd_evaluate(maps: &Path, gts: &Path, out: &Path, name: &str, config: &RunConfig) -> CliResult<()> {
    let map_files = image_files(maps)?;
    let gt_files: std::collections::BTreeMap<String, PathBuf> = image_files(gts)?.into_iter().collect();
    let mut pairs = Vec::new();
    for (stem, path) in &map_files {
        match gt_files.get(stem) {
            Some(g) => pairs.push((path.clone(), g.clone())),
            None => log::warn!("{}: no ground truth, skipped", path.display()),
        }
    }
    for (stem, g) in &gt_files {
        if !map_files.iter().any(|(s, _)| s == stem) {
            log::warn!("{}: no map, skipped", g.display());
        }
    }
    if pairs.is_empty() {
        return Err(Error::Dataset("no map matches a ground truth".into()).into());
    }
    let loaded = deepcontrast::par::map_slice(&pairs, |(m, g)| -> CliResult<(SaliencyMap, BinaryMask)> {
        Ok((SaliencyMap::load(m)?, BinaryMask::load_with_threshold(g, config.eval.gt_threshold)?))
    });
    let (ms, gs): (Vec<_>, Vec<_>) = loaded.into_iter().collect::<CliResult<Vec<_>>>()?.into_iter().unzip();
    let report = evaluate_with(&ms, &gs, &config.eval)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    report.write_csv(&out.join("curve.csv"))?;
    let mut per = String::from("image,max_f,adaptive_precision,adaptive_recall,adaptive_f,mae\n");
    for ((path, _), m) in pairs.iter().zip(&report.per_image) {
        let f = m.max_f.map(|v| v.to_string()).unwrap_or_default();
        let (p, r, af) = m
            .adaptive
            .map(|(p, r, f)| (p.to_string(), r.to_string(), f.to_string()))
            .unwrap_or_default();
        let _ = writeln!(per, "{},{f},{p},{r},{af},{}", stem(path)?, m.mae);
    }
    let per_path = out.join("per_image.csv");
    fs::write(&per_path, per).map_err(io_err(&per_path))?;
    let table = summary_table(&[(name, &report)]);
    let table_path = out.join("summary.txt");
    fs::write(&table_path, &table).map_err(io_err(&table_path))?;
    print!("{table}");
    Ok(())
}

fn cmd_gradcheck(seed: u64, conv_instances: usize) -> CliResult<()> {
    let suite = run_suite(seed, conv_instances)?;
    let mut failed = 0;
    for e in &suite {
        let r = &e.report;
        println!(
            "{} {:<28} max rel err {:.3e} (tol {:.0e}, {} coords, worst {}[{}])",
            if e.passed() { "PASS" } else { "FAIL" },
            e.name,
            r.max_rel_err,
            e.tolerance,
            r.checked,
            r.worst_block,
            r.worst_index
        );
        failed += !e.passed() as usize;
    }
    if failed > 0 {
        return Err(CliError::GradCheck(failed));
    }
    Ok(())
}
