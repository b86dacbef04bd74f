use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use image::RgbImage;

use chromahint_core::bench::{run_benchmark, BenchConfig, Colorizer, GrayColorizer, LevinColorizer, NetworkColorizer};
use chromahint_core::colorspace::{build_gamut, QuantizedGamut};
use chromahint_core::hints::{GlobalHints, PointEdit};
use chromahint_core::levin::LevinConfig;
use chromahint_core::model::{load_checkpoint, Network, Variant};
use chromahint_core::pipeline::{
    evaluate, ingest_dataset, load_split, load_train_config, prepare_eval_image, train_from_manifest, write_synthetic_dataset,
    DatasetManifest, Split, SynthConfig, TrainConfig, TrainOptions,
};
use chromahint_service::{encode_png, AppState, Prepared, ServiceConfig};

use crate::{
    BenchArgs, ColorizeArgs, DataArgs, EvalArgs, GamutArg, IngestArgs, MakeDatasetArgs, MakeGamutArgs, ServeArgs, SplitArg, TrainArgs,
};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn has_image_extension(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn load_gamut(arg: &GamutArg) -> Result<QuantizedGamut> {
    match &arg.gamut {
        None => Ok(QuantizedGamut::reference()),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(QuantizedGamut::from_json(&text)?)
        }
    }
}

fn load_network(path: &Path, gamut: &QuantizedGamut) -> Result<Network> {
    let (net, manifest, _) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    if manifest.gamut_hash != gamut.hash() {
        bail!("{} was trained with a different gamut", path.display());
    }
    Ok(net)
}

/// Accepts a manifest JSON or an image directory to ingest now.
fn open_dataset(path: &Path) -> Result<DatasetManifest> {
    if path.is_file() {
        return Ok(DatasetManifest::load(path)?);
    }
    let manifest = ingest_dataset(path)?;
    log::info!(
        "ingested {}: {} train, {} val, {} test, {} skipped",
        path.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test),
        manifest.skipped.total()
    );
    Ok(manifest)
}

fn load_images(data: &DataArgs) -> Result<Vec<RgbImage>> {
    let manifest = open_dataset(&data.dataset)?;
    let splits = match data.split {
        SplitArg::All => vec![Split::Train, Split::Val, Split::Test],
        SplitArg::One(s) => vec![s],
    };
    let mut images = Vec::new();
    for split in splits {
        let (loaded, failed) = load_split(&manifest, split);
        for name in failed {
            log::warn!("could not read {name}");
        }
        images.extend(loaded.into_iter().map(|(_, img)| img));
    }
    if data.limit > 0 {
        images.truncate(data.limit);
    }
    if data.size > 0 {
        images = images.iter().map(|img| prepare_eval_image(img, data.size)).collect();
    }
    if images.is_empty() {
        bail!("no images selected from {}", data.dataset.display());
    }
    Ok(images)
}

pub fn make_gamut(args: MakeGamutArgs) -> Result<()> {
    let gamut = build_gamut(args.grid_step, args.ab_min, args.ab_max)?;
    std::fs::write(&args.out, gamut.to_json()).with_context(|| format!("writing {}", args.out.display()))?;
    println!("Q={}", gamut.q());
    Ok(())
}

pub fn make_dataset(args: MakeDatasetArgs) -> Result<()> {
    let n = write_synthetic_dataset(&args.out, &SynthConfig { count: args.count, size: args.size, seed: args.seed })?;
    println!("wrote {n} images to {}", args.out.display());
    Ok(())
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    let manifest = ingest_dataset(&args.dataset)?;
    let out = args.out.unwrap_or_else(|| args.dataset.join("manifest.json"));
    manifest.save(&out)?;
    let s = &manifest.skipped;
    println!(
        "train {} val {} test {} | skipped: {} corrupt, {} grayscale, {} too small | {}",
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test),
        s.corrupt.len(),
        s.grayscale.len(),
        s.too_small.len(),
        manifest.content_hash
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => load_train_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    let gamut = load_gamut(&args.gamut)?;
    let manifest = open_dataset(&args.dataset)?;
    std::fs::create_dir_all(&args.out)?;
    let opts = TrainOptions { out_dir: Some(args.out.clone()), resume: args.resume, log_every: args.log_every, dataset_hash: None };
    let outcome = train_from_manifest(&manifest, &gamut, &cfg, &opts)?;
    if let Some(last) = outcome.trace.last() {
        println!("step {}: huber {:.4} cross-entropy {:.4}", last.step, last.huber, last.cross_entropy);
    }
    if let Some(path) = outcome.checkpoint {
        println!("checkpoint {} ({})", path.display(), outcome.network.weights_hash());
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let gamut = load_gamut(&args.gamut)?;
    let net = load_network(&args.ckpt, &gamut)?;
    let images = load_images(&args.data)?;
    let summary = evaluate(&images, &net, &gamut, args.mode)?;
    println!("{} {}: {:.3} ± {:.3} dB over {} images", summary.variant, summary.mode, summary.psnr_mean, summary.psnr_stderr, summary.images);
    if let Some(path) = args.json {
        std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(())
}

pub fn bench(args: BenchArgs) -> Result<()> {
    let gamut = load_gamut(&args.gamut)?;
    let mut methods: Vec<Box<dyn Colorizer>> = Vec::new();
    for name in &args.methods {
        match name.as_str() {
            "gray" => methods.push(Box::new(GrayColorizer)),
            "levin" => methods.push(Box::new(LevinColorizer(LevinConfig::default()))),
            "network" | "network_local" => {
                let ckpt = args.ckpt.as_ref().ok_or_else(|| anyhow!("method {name} needs --ckpt"))?;
                let net = load_network(ckpt, &gamut)?;
                if net.variant() != Variant::Local {
                    bail!("the network method needs a local-variant checkpoint");
                }
                methods.push(Box::new(NetworkColorizer(net)));
            }
            other => bail!("unknown method {other:?} (expected gray, levin or network)"),
        }
    }
    let images = load_images(&args.data)?;
    let cfg = BenchConfig { point_counts: args.points, samplers: args.samplers, trials_per_image: args.trials, seed: args.seed, ..BenchConfig::default() };
    let refs: Vec<&dyn Colorizer> = methods.iter().map(|m| m.as_ref()).collect();
    let report = run_benchmark(&images, &refs, &cfg)?;
    for (method, short) in &report.short_counts {
        if *short > 0 {
            log::warn!("{method}: max-error sampling ran out of room on {short} images");
        }
    }
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(out) = args.out {
        std::fs::write(&out, &csv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn colorize_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && has_image_extension(p))
        .collect();
    files.sort();
    Ok(files)
}

fn colorize_one(path: &Path, net: &Network, edits: &[PointEdit], working_side: u32) -> Result<RgbImage> {
    let img = image::open(path)?;
    let prepared = Prepared::new(&img, working_side)?;
    Ok(match net.variant() {
        Variant::Local => prepared.colorize_local(net, edits)?,
        Variant::Global if edits.is_empty() => prepared.colorize_global(net, &GlobalHints::none(net.config.q))?,
        Variant::Global => bail!("points need a local-variant checkpoint"),
    })
}

pub fn colorize(args: ColorizeArgs) -> Result<()> {
    let gamut = load_gamut(&args.gamut)?;
    let net = load_network(&args.ckpt, &gamut)?;
    let points: HashMap<String, Vec<PointEdit>> = match &args.points {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?,
        None => HashMap::new(),
    };
    let inputs = colorize_inputs(&args.input)?;
    if inputs.is_empty() {
        bail!("no images found in {}", args.input.display());
    }
    std::fs::create_dir_all(&args.out)?;
    let mut failed = 0;
    for path in &inputs {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let edits = points.get(&name).map(Vec::as_slice).unwrap_or(&[]);
        let out = args.out.join(Path::new(&name).with_extension("png"));
        match colorize_one(path, &net, edits, args.working_side).and_then(|img| Ok(std::fs::write(&out, encode_png(&img)?)?)) {
            Ok(()) => log::info!("{name} -> {}", out.display()),
            Err(e) => {
                eprintln!("{name}: {e:#}");
                failed += 1;
            }
        }
    }
    for key in points.keys() {
        if !inputs.iter().any(|p| p.file_name().is_some_and(|n| n.to_string_lossy() == key.as_str())) {
            log::warn!("points file names {key}, which is not among the inputs");
        }
    }
    if failed > 0 {
        bail!("{failed} of {} images failed", inputs.len());
    }
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let gamut = load_gamut(&args.gamut)?;
    let local = load_network(&args.ckpt, &gamut)?;
    let global = args.global_ckpt.as_deref().map(|p| load_network(p, &gamut)).transpose()?;
    let config = ServiceConfig { working_side: args.working_side, max_side: args.max_side, ..ServiceConfig::default() };
    let state = Arc::new(AppState::new(local, global, gamut, config)?);
    let runtime = tokio::runtime::Runtime::new()?;
    log::info!("listening on {}", args.addr);
    runtime.block_on(chromahint_service::serve(state, args.addr))?;
    Ok(())
}
