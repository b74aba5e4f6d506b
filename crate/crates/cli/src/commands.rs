use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use camlab::cam::{gradcam, gradcam_pp, save_heatmap, CamMethod};
use camlab::data::{
    augment_chain, load_dataset, manifest_csv, parse_manifest_csv, preprocess, read_netpbm, scan_dataset,
    stratified_split, synth_dataset, write_dataset, write_netpbm, LabeledDataset, ManifestRow, Subset,
};
use camlab::gradcheck::run_suite;
use camlab::metrics::{confusion, report};
use camlab::nn::{preset, read_weights, save_weights, Model, ModelSpec};
use camlab::optim::{evaluate, train_with_progress, LR_RANGE};
use camlab::rng::Rng;
use camlab::{Error, Result};

use crate::config::RunConfig;
use crate::{ConfigArgs, MethodArg};

/// 1 for usage and configuration problems, 2 for data and format errors.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownPreset { .. } | Error::InvalidRatios(_) => 1,
        _ => 2,
    }
}

fn resolve(args: &ConfigArgs, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.merge_file(path)?;
    }
    for o in &args.overrides {
        cfg.assign(o)?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// `run.txt`: command, inputs, resolved configuration and artifacts.
fn write_run_manifest(
    path: &Path,
    command: &str,
    inputs: &[(&str, String)],
    cfg: &RunConfig,
    artifacts: &[(&str, &Path)],
) -> Result<()> {
    let mut text = format!("command={command}\n");
    for (k, v) in inputs {
        writeln!(text, "input.{k}={v}").expect("write to String");
    }
    text.push_str(&cfg.render());
    for (k, p) in artifacts {
        writeln!(text, "artifact.{k}={}", p.display()).expect("write to String");
    }
    write_text(path, &text)
}

fn flag<T: ToString>(key: &'static str, v: Option<T>) -> (&'static str, Option<String>) {
    (key, v.map(|x| x.to_string()))
}

pub fn synth(out: &Path, n: Option<usize>, size: Option<usize>, seed: Option<u64>, args: &ConfigArgs) -> Result<ExitCode> {
    let cfg = resolve(
        args,
        &[
            flag("synth.n_per_class", n),
            flag("synth.image_size", size),
            flag("synth.seed", seed),
        ],
    )?;
    let (n, size) = (cfg.usize("synth.n_per_class")?, cfg.usize("synth.image_size")?);
    if n == 0 || size == 0 {
        return Err(Error::Config("synth needs n >= 1 and size >= 1".into()));
    }
    let mut ds = synth_dataset(n, size, cfg.u64("synth.seed")?);
    write_dataset(&mut ds, out)?;
    write_run_manifest(&out.join("run.txt"), "synth", &[], &cfg, &[("corpus", out)])?;
    println!("wrote {} images in {} classes to {}", ds.len(), ds.num_classes(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn relative(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned()
}

pub fn split(data: &Path, seed: Option<u64>, out: Option<PathBuf>, args: &ConfigArgs) -> Result<ExitCode> {
    let cfg = resolve(args, &[flag("split.seed", seed)])?;
    let listing = scan_dataset(data)?;
    let manifest = stratified_split(
        &listing.labels,
        listing.class_names.len(),
        cfg.ratios()?,
        cfg.u64("split.seed")?,
    )?;
    let paths: Vec<String> = listing.files.iter().map(|p| relative(data, p)).collect();
    let out = out.unwrap_or_else(|| data.join("split.csv"));
    write_text(&out, &manifest_csv(&manifest, &paths, &listing.labels))?;
    write_run_manifest(
        &out.with_extension("run.txt"),
        "split",
        &[("data", data.display().to_string())],
        &cfg,
        &[("manifest", &out)],
    )?;
    for (name, c) in listing.class_names.iter().zip(&manifest.per_class) {
        println!("{name}: train {} val {} test {}", c.train, c.val, c.test);
    }
    println!(
        "total: train {} val {} test {} -> {}",
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn augment(data: &Path, out: &Path, seed: Option<u64>, size: usize, args: &ConfigArgs) -> Result<ExitCode> {
    let cfg = resolve(args, &[flag("augment.seed", seed)])?;
    let aug = cfg.augment()?;
    let ds = load_dataset(data, size)?;
    let mut written = 0;
    for (i, it) in ds.items.iter().enumerate() {
        let mut rng = Rng::derived(aug.seed, &[i as u64]);
        let img = augment_chain(&it.image, &aug, &mut rng);
        let src = it.source.as_deref().expect("loaded from disk");
        let target = out.join(relative(data, src));
        if let Some(parent) = target.parent() {
            create_dir(parent)?;
        }
        write_netpbm(&img.to_u8(), target.with_extension("pgm"))?;
        written += 1;
    }
    write_run_manifest(
        &out.join("run.txt"),
        "augment",
        &[("data", data.display().to_string()), ("size", size.to_string())],
        &cfg,
        &[("corpus", out)],
    )?;
    println!("wrote {written} augmented images to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

/// Loads the corpus and splits it according to a manifest whose paths must
/// match the corpus listing.
fn load_split(data: &Path, manifest: &Path, size: usize) -> Result<(LabeledDataset, Vec<ManifestRow>)> {
    let text = read_text(manifest).map_err(|e| match e {
        Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => Error::Config(format!(
            "split manifest {} not found; run `camlab split --data {}` first or pass --manifest",
            path.display(),
            data.display()
        )),
        other => other,
    })?;
    let rows = parse_manifest_csv(&text)?;
    let ds = load_dataset(data, size)?;
    let paths = ds.relative_paths(data);
    for r in &rows {
        if paths.get(r.index) != Some(&r.path) || ds.items[r.index].label != r.label {
            return Err(Error::Config(format!(
                "manifest row {} ({}) does not match the corpus under {}",
                r.index,
                r.path,
                data.display()
            )));
        }
    }
    Ok((ds, rows))
}

fn subset_of(ds: &LabeledDataset, rows: &[ManifestRow], which: Subset) -> LabeledDataset {
    let idx: Vec<usize> = rows.iter().filter(|r| r.subset == which).map(|r| r.index).collect();
    ds.subset(&idx)
}

fn square_grey_size(spec: &ModelSpec) -> Result<usize> {
    match spec.input_shape {
        (1, h, w) if h == w => Ok(h),
        (c, h, w) => Err(Error::Config(format!(
            "model input {c}x{h}x{w}: the image pipeline produces square greyscale inputs (1xSxS)"
        ))),
    }
}

pub struct TrainFlags {
    pub preset: Option<String>,
    pub spec: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub optimizer: Option<String>,
    pub no_augment: bool,
}

pub fn train(data: &Path, manifest: Option<PathBuf>, f: &TrainFlags, out: &Path, args: &ConfigArgs) -> Result<ExitCode> {
    let cfg = resolve(
        args,
        &[
            flag("model.preset", f.preset.clone()),
            flag("model.spec_file", f.spec.as_ref().map(|p| p.display().to_string())),
            flag("train.seed", f.seed),
            flag("train.epochs", f.epochs),
            flag("train.learning_rate", f.lr),
            flag("train.batch_size", f.batch_size),
            flag("train.optimizer", f.optimizer.clone()),
            flag("train.augment", f.no_augment.then_some(false)),
        ],
    )?;
    let tc = cfg.train()?;
    if tc.learning_rate < LR_RANGE.0 || tc.learning_rate > LR_RANGE.1 {
        eprintln!(
            "warning: learning rate {} is outside the tuning range [{}, {}]",
            tc.learning_rate, LR_RANGE.0, LR_RANGE.1
        );
    }
    let base = match cfg.get("model.spec_file") {
        "" => preset(cfg.get("model.preset"))?,
        file => read_text(Path::new(file))?.parse::<ModelSpec>()?,
    };
    let manifest = manifest.unwrap_or_else(|| data.join("split.csv"));
    let (ds, rows) = load_split(data, &manifest, square_grey_size(&base)?)?;
    let spec = base.with_classes(&ds.class_names);
    let mut model = Model::build(spec, cfg.init_seed()?)?;
    let (train_set, val_set) = (subset_of(&ds, &rows, Subset::Train), subset_of(&ds, &rows, Subset::Val));
    eprintln!(
        "training {} parameters on {} images (val {}), {} epochs",
        model.param_count(),
        train_set.len(),
        val_set.len(),
        tc.epochs
    );
    let mut report = train_with_progress(&mut model, &train_set, &val_set, &tc, |e| {
        eprintln!(
            "epoch {:>3}  train_loss {:.4}  train_acc {:.4}  val_loss {:.4}  val_acc {:.4}  {:.1}s",
            e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc, e.seconds
        );
    })?;
    create_dir(out)?;
    let weights = out.join("weights.camf");
    let report_path = out.join("report.csv");
    save_weights(&model, &weights)?;
    report.weights_path = Some(weights.clone());
    write_text(&report_path, &report.to_csv())?;
    write_run_manifest(
        &out.join("run.txt"),
        "train",
        &[
            ("data", data.display().to_string()),
            ("manifest", manifest.display().to_string()),
            ("model_spec", model.spec().canonical()),
            ("init_seed", cfg.init_seed()?.to_string()),
        ],
        &cfg,
        &[("weights", &weights), ("report", &report_path)],
    )?;
    println!("weights: {}\nreport: {}", weights.display(), report_path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(
    weights: &Path,
    data: &Path,
    manifest: Option<PathBuf>,
    split: &str,
    out: &Path,
    args: &ConfigArgs,
) -> Result<ExitCode> {
    let cfg = resolve(args, &[])?;
    let which = Subset::parse(split)
        .ok_or_else(|| Error::Config(format!("--split must be train, val or test, got `{split}`")))?;
    let model = read_weights(weights)?;
    let manifest = manifest.unwrap_or_else(|| data.join("split.csv"));
    let (ds, rows) = load_split(data, &manifest, square_grey_size(model.spec())?)?;
    if ds.class_names != model.spec().class_names {
        return Err(Error::Config(format!(
            "corpus classes {:?} differ from the model's {:?}",
            ds.class_names,
            model.spec().class_names
        )));
    }
    let set = subset_of(&ds, &rows, which);
    let ev = evaluate(&model, &set, cfg.usize("train.batch_size")?.max(1))?;
    let mut cm = confusion(&ev.predictions, &set.labels(), set.num_classes())?;
    cm.class_names = set.class_names.clone();
    let metrics = report(&cm);
    let name = weights.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    create_dir(out)?;
    let (csv, table, cm_path) = (out.join("metrics.csv"), out.join("metrics.txt"), out.join("confusion.txt"));
    write_text(&csv, &metrics.to_csv())?;
    write_text(&table, &metrics.to_table(&name))?;
    write_text(&cm_path, &cm.to_table())?;
    write_run_manifest(
        &out.join("run.txt"),
        "eval",
        &[
            ("weights", weights.display().to_string()),
            ("data", data.display().to_string()),
            ("manifest", manifest.display().to_string()),
            ("split", which.as_str().to_string()),
        ],
        &cfg,
        &[("metrics_csv", &csv), ("metrics_table", &table), ("confusion", &cm_path)],
    )?;
    print!("{}\n{}", metrics.to_table(&name), cm.to_table());
    println!("loss {:.4} on {} {} images", ev.loss, set.len(), which.as_str());
    Ok(ExitCode::SUCCESS)
}

fn parse_class(spec: &ModelSpec, text: &str) -> Result<usize> {
    let k = spec.num_classes();
    if let Ok(i) = text.parse::<usize>() {
        return if i < k {
            Ok(i)
        } else {
            Err(Error::ClassOutOfRange { value: i, classes: k })
        };
    }
    spec.class_names
        .iter()
        .position(|n| n == text)
        .ok_or_else(|| Error::Config(format!("unknown class `{text}` (classes: {})", spec.class_names.join(", "))))
}

pub fn explain(
    weights: &Path,
    image: &Path,
    method: Option<MethodArg>,
    class: Option<&str>,
    out: &Path,
    args: &ConfigArgs,
) -> Result<ExitCode> {
    let method_flag = method.map(|m| match m {
        MethodArg::Gradcam => "gradcam",
        MethodArg::GradcamPp => "gradcam_pp",
        MethodArg::Both => "both",
    });
    let cfg = resolve(args, &[flag("cam.method", method_flag), flag("cam.class", class)])?;
    let cam = cfg.cam()?;
    let methods = match cfg.get("cam.method") {
        "gradcam" => vec![CamMethod::GradCam],
        "gradcam_pp" => vec![CamMethod::GradCamPlusPlus],
        "both" => vec![CamMethod::GradCam, CamMethod::GradCamPlusPlus],
        other => {
            return Err(Error::Config(format!(
                "cam.method must be gradcam, gradcam_pp or both, got `{other}`"
            )))
        }
    };
    let mut model = read_weights(weights)?;
    let base = preprocess(&read_netpbm(image)?, square_grey_size(model.spec())?);
    let x = base.to_tensor();
    let probs = model.predict(&x.clone().reshape(&[1, 1, base.height(), base.width()])?)?;
    let predicted = probs.argmax_rows()[0];
    let target = match cfg.get("cam.class") {
        "predicted" => predicted,
        c => parse_class(model.spec(), c)?,
    };
    let stem = image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let class_name = model.spec().class_names[target].clone();
    let mut artifacts = Vec::new();
    for m in methods {
        let (_, heatmap) = match m {
            CamMethod::GradCam => gradcam(&mut model, &x, target, &cam)?,
            CamMethod::GradCamPlusPlus => gradcam_pp(&mut model, &x, target, &cam)?,
        };
        let (pgm, ppm) = save_heatmap(out, &stem, m.name(), &class_name, &heatmap, &base)?;
        artifacts.push((m.name(), pgm, ppm));
    }
    let labelled: Vec<(String, &Path)> = artifacts
        .iter()
        .flat_map(|(m, pgm, ppm)| [(format!("{m}_map"), pgm.as_path()), (format!("{m}_overlay"), ppm.as_path())])
        .collect();
    let refs: Vec<(&str, &Path)> = labelled.iter().map(|(k, p)| (k.as_str(), *p)).collect();
    write_run_manifest(
        &out.join("run.txt"),
        "explain",
        &[
            ("weights", weights.display().to_string()),
            ("image", image.display().to_string()),
        ],
        &cfg,
        &refs,
    )?;
    println!(
        "predicted: {} (p={:.4}); explained class: {}",
        model.spec().class_names[predicted],
        probs.data()[predicted],
        class_name
    );
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(seed: u64, out: &Path) -> Result<ExitCode> {
    let outcomes = run_suite(seed)?;
    let mut text = String::new();
    for o in &outcomes {
        writeln!(
            text,
            "{} {:<40} max_rel_err {:.3e} (tol {:.0e}) checked {} excluded {} {:.2}s",
            if o.passed() { "PASS" } else { "FAIL" },
            o.name,
            o.max_rel_error,
            o.tolerance,
            o.checked,
            o.excluded,
            o.seconds
        )
        .expect("write to String");
    }
    print!("{text}");
    create_dir(out)?;
    let log = out.join("gradcheck.txt");
    write_text(&log, &text)?;
    write_run_manifest(
        &out.join("run.txt"),
        "gradcheck",
        &[("seed", seed.to_string())],
        &RunConfig::default(),
        &[("log", &log)],
    )?;
    if outcomes.iter().all(|o| o.passed()) {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(3))
    }
}
