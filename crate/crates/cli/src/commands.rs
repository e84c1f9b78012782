//! Subcommand implementations.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rfn_core::annotation::{read_results, write_results, ScoredQuad};
use rfn_core::config::RunConfig;
use rfn_core::evalkit::{format_matched_counts_csv, format_pr_csv, parse_pr_csv, write_text, EvalImage};
use rfn_core::geometry::Point;
use rfn_core::synthdata::{list_dataset, write_dataset};
use rfn_model::checkpoint;
use rfn_model::data::load_labelled;
use rfn_model::eval::{evaluate, score};
use rfn_model::infer::{detect_image, InferConfig};
use rfn_model::model::Rfn;
use rfn_model::train::{format_loss_csv, train as train_model};
use tch::Device;

use crate::args::{ConfigArgs, EvalArgs, InferArgs, PlotArgs, SynthArgs, TrainArgs};
use crate::draw::{overlay, pr_chart};
use crate::failure::{CmdResult, Failure};
use crate::report::format_report;

pub const DATA_ENV: &str = "RFN_DATA_DIR";
pub const CONFIG_ECHO: &str = "config.echo";
pub const LOSS_CSV: &str = "loss.csv";
pub const CHECKPOINT: &str = "model.ckpt";
pub const REPORT: &str = "report.txt";
pub const PR_CSV: &str = "pr.csv";
pub const COUNTS_CSV: &str = "matched_counts.csv";

/// Preset, then file, then `--set` pairs.
pub fn resolve_config(args: &ConfigArgs) -> CmdResult<RunConfig> {
    let mut cfg = RunConfig::preset(args.preset.as_deref().unwrap_or("desk"))?;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text, path)?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

/// Explicit flag, then a configured path that differs from the built-in
/// default, then `$RFN_DATA_DIR/<split>`, then the built-in default.
fn data_dir(flag: Option<&PathBuf>, configured: &str, default: &str, split: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.clone();
    }
    if configured == default {
        if let Some(root) = std::env::var_os(DATA_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(root).join(split);
        }
    }
    PathBuf::from(configured)
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_echo(dir: &Path, cfg: &RunConfig) -> CmdResult {
    Ok(write_text(dir.join(CONFIG_ECHO), &cfg.serialize())?)
}

pub fn synth(a: &SynthArgs) -> CmdResult {
    let mut cfg = resolve_config(&a.cfg)?;
    if let Some(n) = a.n {
        cfg.synth_n = n;
    }
    if let Some(s) = a.seed {
        cfg.synth_seed = s;
    }
    cfg.validate()?;
    if cfg.synth_n == 0 {
        return Err(Failure::config("--n must be at least 1"));
    }
    let defaults = RunConfig::default();
    let out = data_dir(a.out.as_ref(), &cfg.data_train, &defaults.data_train, "train");
    let entries = write_dataset(&out, cfg.synth_n, cfg.synth_seed, &cfg.synth_config())?;
    write_echo(&out, &cfg)?;
    let boxes: usize = entries.iter().map(|e| e.instances).sum();
    println!("wrote {} images with {boxes} text instances to {}", entries.len(), out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> CmdResult {
    let mut cfg = resolve_config(&a.cfg)?;
    if let Some(e) = a.epochs {
        cfg.train_epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train_seed = s;
    }
    if let Some(v) = a.sff {
        cfg.toggle_sff = v;
    }
    if let Some(v) = a.apr {
        cfg.toggle_apr = v;
    }
    if let Some(v) = a.rescore {
        cfg.toggle_rescore = v;
    }
    if a.deterministic {
        cfg.train_deterministic = true;
    }
    if let Some(d) = &a.run_dir {
        cfg.run_dir = d.display().to_string();
    }
    cfg.validate()?;
    let defaults = RunConfig::default();
    let data = data_dir(a.data.as_ref(), &cfg.data_train, &defaults.data_train, "train");
    if !data.is_dir() {
        return Err(Failure::runtime(format!("missing dataset: {} is not a directory", data.display())));
    }
    cfg.data_train = data.display().to_string();
    let run = PathBuf::from(&cfg.run_dir);
    create_dir(&run)?;
    write_echo(&run, &cfg)?;

    let loss_path = run.join(LOSS_CSV);
    let mut log_file = fs::File::create(&loss_path).map_err(|e| Failure::runtime(format!("{}: {e}", loss_path.display())))?;
    let _ = log_file.write_all(format_loss_csv(&[]).as_bytes());
    let mut on_epoch = |l: &rfn_model::train::EpochLog| {
        let row = format_loss_csv(std::slice::from_ref(l));
        let _ = log_file.write_all(row.lines().nth(1).map(|r| format!("{r}\n")).unwrap_or_default().as_bytes());
    };
    let outcome = train_model(&cfg, &data, &mut on_epoch)?;
    write_text(&loss_path, &format_loss_csv(&outcome.logs))?;
    let ckpt = run.join(CHECKPOINT);
    checkpoint::save(&outcome.model, &cfg, &ckpt)?;
    if let Some(last) = outcome.logs.last() {
        println!("final total loss {:.6} after {} epochs", last.total, last.epoch);
    }
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

/// Loads a checkpoint; with explicit configuration arguments the stored
/// architecture must match them and their non-architecture values are used.
fn load_checkpoint(path: &Path, cfg_args: &ConfigArgs) -> CmdResult<(Rfn, RunConfig)> {
    if cfg_args.is_empty() {
        Ok(checkpoint::load(path, None, Device::Cpu)?)
    } else {
        let cfg = resolve_config(cfg_args)?;
        cfg.validate()?;
        let (model, _) = checkpoint::load(path, Some(&cfg), Device::Cpu)?;
        Ok((model, cfg))
    }
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let (report, images, cfg) = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let (model, mut cfg) = load_checkpoint(ckpt, &a.cfg)?;
            if let Some(t) = a.iou {
                cfg.eval_iou = t;
            }
            cfg.validate()?;
            let data = data_dir(a.data.as_ref(), &cfg.data_test, &RunConfig::default().data_test, "test");
            let set = load_labelled(&data, cfg.image_height, cfg.image_width)?;
            let rep = evaluate(&model, &set, &InferConfig::from_run(&cfg), cfg.eval_iou)?;
            (rep, set.len(), cfg)
        }
        (None, Some(pred_dir)) => {
            let mut cfg = resolve_config(&a.cfg)?;
            if let Some(t) = a.iou {
                cfg.eval_iou = t;
            }
            cfg.validate()?;
            let data = data_dir(a.data.as_ref(), &cfg.data_test, &RunConfig::default().data_test, "test");
            let mut pairs: Vec<EvalImage> = Vec::new();
            for item in list_dataset(&data)? {
                let res = pred_dir.join(format!("res_{}.txt", item.stem));
                let preds = if res.exists() {
                    read_results(&res)?
                } else {
                    log::warn!("no result file for {}; counting it as empty", item.stem);
                    Vec::new()
                };
                pairs.push((preds, item.annotations()?));
            }
            let n = pairs.len();
            (score(&pairs, cfg.eval_iou)?, n, cfg)
        }
        (None, None) => return Err(Failure::config("either --checkpoint or --predictions is required")),
    };
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.run_dir).join("eval"));
    create_dir(&out)?;
    write_echo(&out, &cfg)?;
    let text = format_report(&report, images);
    write_text(out.join(REPORT), &text)?;
    write_text(out.join(PR_CSV), &format_pr_csv(&report.pr_curve))?;
    write_text(out.join(COUNTS_CSV), &format_matched_counts_csv(&report.matched_counts))?;
    print!("{text}");
    Ok(())
}

fn collect_images(input: &Path) -> CmdResult<Vec<PathBuf>> {
    if input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| Failure::runtime(format!("{}: {e}", input.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        v.sort();
        Ok(v)
    } else if input.exists() {
        Ok(vec![input.to_path_buf()])
    } else {
        Err(Failure::runtime(format!("{} does not exist", input.display())))
    }
}

fn detect_any_size(model: &Rfn, img: &image::RgbImage, cfg: &InferConfig) -> CmdResult<Vec<ScoredQuad>> {
    let (h, w) = (model.config.height as u32, model.config.width as u32);
    let resized;
    let input = if img.dimensions() == (w, h) {
        img
    } else {
        resized = image::imageops::resize(img, w, h, FilterType::Triangle);
        &resized
    };
    let sx = img.width() as f64 / w as f64;
    let sy = img.height() as f64 / h as f64;
    detect_image(model, input, cfg)?
        .into_iter()
        .map(|d| {
            let quad = d.quad.map(|p| Point::new(p.x * sx, p.y * sy))?;
            Ok(ScoredQuad { quad, score: d.overall_score })
        })
        .collect::<Result<_, rfn_core::Error>>()
        .map_err(Failure::from)
}

pub fn infer(a: &InferArgs) -> CmdResult {
    let (model, cfg) = load_checkpoint(&a.checkpoint, &a.cfg)?;
    let icfg = InferConfig::from_run(&cfg);
    let inputs = collect_images(&a.input)?;
    if inputs.is_empty() {
        return Err(Failure::runtime(format!("no images under {}", a.input.display())));
    }
    create_dir(&a.out)?;
    let mut done = 0usize;
    for path in &inputs {
        let img = match image::open(path) {
            Ok(i) => i.to_rgb8(),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let dets = detect_any_size(&model, &img, &icfg).map_err(|f| f.context(format!("detecting in {}", path.display())))?;
        write_results(&dets, a.out.join(format!("res_{stem}.txt")))?;
        if a.overlay {
            let p = a.out.join(format!("{stem}_overlay.png"));
            overlay(&img, &dets).save(&p).map_err(|e| Failure::runtime(format!("{}: {e}", p.display())))?;
        }
        log::info!("{}: {} detections", path.display(), dets.len());
        done += 1;
    }
    if done == 0 {
        return Err(Failure::runtime("no input image could be read"));
    }
    println!("processed {done} of {} images into {}", inputs.len(), a.out.display());
    Ok(())
}

pub fn plot_pr(a: &PlotArgs) -> CmdResult {
    if a.width < 160 || a.height < 120 {
        return Err(Failure::config("plot must be at least 160x120"));
    }
    let mut curves = Vec::with_capacity(a.csv.len());
    for spec in &a.csv {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let label = p.parent().and_then(|d| d.file_name()).unwrap_or_default().to_string_lossy().into_owned();
                (label, p)
            }
        };
        let text = fs::read_to_string(&path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
        let pts = parse_pr_csv(&text).map_err(|e| Failure::from(e).context(path.display().to_string()))?;
        curves.push((label, pts));
    }
    let img = pr_chart(&curves, a.title.as_deref().unwrap_or("Precision-Recall"), a.width, a.height);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    img.save(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
