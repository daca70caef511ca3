use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use smt_core::bench::{
    cost_rows_csv, flops_estimate, measure_runtime, memory_estimate, param_count, CostReport, CostRow, RuntimeReport,
};
use smt_core::model::{read_header, Checkpoint};
use smt_core::patching::{patch_scores, select_top_m, selection_overlay};
use smt_core::saliency::{SaliencyOperator, SaliencyParams};
use smt_core::signal::{load_image, save_gray16, save_rgb8, to_luminance, LuminanceImage};
use smt_core::training::{evaluate, make_synthetic_dataset, train, Dataset, RunConfig, SaliencyCache};

use crate::config::resolve;
use crate::{Cli, CliError, Command};

type CmdResult = Result<(), CliError>;

pub(crate) fn dispatch(cli: &Cli) -> CmdResult {
    let mut cfg = resolve(cli.global.config.as_deref(), &cli.global.overrides)?;
    if let Some(seed) = cli.global.seed {
        cfg.train.seed = seed;
        cfg.data.synthetic.seed = seed;
    }
    let out = &cli.global.out;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_json(
        &out.join("resolved_config.json"),
        &json!({ "invocation": cli.command, "config": cfg }),
    )?;
    match &cli.command {
        Command::Saliency { input } => saliency(&cfg, input, out),
        Command::Select {
            input,
            m,
            patch_size,
            overlay,
            dim,
        } => select(&cfg, input, *m, *patch_size, *overlay, *dim, out),
        Command::Train => train_cmd(&cfg, out),
        Command::Eval { checkpoint, data } => eval_cmd(&cfg, checkpoint, data.as_deref(), out),
        Command::Bench {
            s,
            batch,
            element_bytes,
            runtime_batch,
            repeats,
            skip_runtime,
        } => bench(
            &cfg,
            &BenchArgs {
                s: s.clone(),
                batch: *batch,
                element_bytes: *element_bytes,
                runtime_batch: *runtime_batch,
                repeats: *repeats,
                skip_runtime: *skip_runtime,
            },
            out,
        ),
        Command::Describe { checkpoint } => describe(checkpoint, out),
        Command::MakeDataset { per_class, size } => make_dataset(&cfg, *per_class, *size, out),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(smt_core::SmtError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::user(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn stem(input: &Path) -> Result<String, CliError> {
    input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::user(format!("cannot derive a file name from {}", input.display())))
}

fn compute_saliency(params: SaliencyParams, lum: &LuminanceImage) -> Result<smt_core::saliency::SaliencyMap, CliError> {
    Ok(SaliencyOperator::new(params, lum.height(), lum.width())?.compute(lum)?)
}

fn saliency(cfg: &RunConfig, input: &Path, out: &Path) -> CmdResult {
    let img = load_image(input)?;
    let map = compute_saliency(cfg.saliency, &to_luminance(&img))?;
    let (lo, hi) = map.values().min_max();
    let span = hi - lo;
    let norm = map
        .values()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })?;
    let name = stem(input)?;
    save_gray16(out.join(format!("{name}.saliency.png")), &norm)?;
    let (ar, ac) = map.argmax();
    write_json(
        &out.join(format!("{name}.saliency.json")),
        &json!({
            "input": input,
            "height": map.height(),
            "width": map.width(),
            "params": map.params,
            "min": lo,
            "max": hi,
            "encoding": "png16 = round(65535 * (value - min) / (max - min))",
            "argmax": [ar, ac],
        }),
    )?;
    eprintln!("saliency range [{lo:.6e}, {hi:.6e}], argmax ({ar}, {ac})");
    Ok(())
}

fn select(
    cfg: &RunConfig,
    input: &Path,
    m: Option<usize>,
    patch_size: Option<usize>,
    overlay: bool,
    dim: f64,
    out: &Path,
) -> CmdResult {
    if !(0.0..=1.0).contains(&dim) {
        return Err(CliError::user(format!("--dim must be in [0, 1], got {dim}")));
    }
    let img = load_image(input)?;
    let p = patch_size.unwrap_or(cfg.model.patch_size);
    let map = compute_saliency(cfg.saliency, &to_luminance(&img))?;
    let scores = patch_scores(&map, p)?;
    let m = match m {
        Some(m) => m,
        None => cfg.selection.resolve_m(scores.grid.num_patches())?,
    };
    let sel = select_top_m(&scores, m)?.in_order(cfg.selection.order);
    let name = stem(input)?;
    write_json(&out.join(format!("{name}.selection.json")), &sel.to_document())?;
    if overlay {
        save_rgb8(out.join(format!("{name}.overlay.png")), &selection_overlay(&img, &sel, dim)?)?;
    }
    eprintln!("selected {} of {} patches", sel.m(), scores.grid.num_patches());
    Ok(())
}

fn load_or_generate(folder: Option<&Path>, cfg: &RunConfig, per_class: usize, seed: u64) -> Result<Dataset, CliError> {
    Ok(match folder {
        Some(root) => Dataset::from_folder(root)?,
        None => make_synthetic_dataset(per_class, cfg.model.input_size, seed)?,
    })
}

fn synthetic_eval_seed(cfg: &RunConfig) -> u64 {
    cfg.data.synthetic.seed.wrapping_add(1)
}

fn train_cmd(cfg: &RunConfig, out: &Path) -> CmdResult {
    let syn = cfg.data.synthetic;
    let train_set = load_or_generate(cfg.data.train.as_deref(), cfg, syn.train_per_class, syn.seed)?;
    let eval_set = match (&cfg.data.eval, &cfg.data.train) {
        (Some(p), _) => Some(Dataset::from_folder(p)?),
        (None, None) if syn.eval_per_class > 0 => Some(make_synthetic_dataset(
            syn.eval_per_class,
            cfg.model.input_size,
            synthetic_eval_seed(cfg),
        )?),
        _ => None,
    };
    eprintln!(
        "training on {} images ({} eval), {} epochs",
        train_set.len(),
        eval_set.as_ref().map_or(0, Dataset::len),
        cfg.train.epochs
    );
    let outcome = train(cfg, &train_set, eval_set.as_ref(), Some(out))?;
    let last = outcome.metrics.epochs.last().expect("at least one epoch");
    let summary = json!({
        "total_steps": outcome.total_steps,
        "final_loss": outcome.metrics.steps.last().map(|s| s.loss),
        "final_train_acc": last.train_acc,
        "final_eval_acc": last.eval_acc,
        "best_step": outcome.best.header.step,
        "best": outcome.best.header.extra,
    });
    write_json(&out.join("summary.json"), &summary)?;
    eprintln!(
        "done: train_acc {:.4}, eval_acc {}",
        last.train_acc,
        last.eval_acc.map_or("n/a".to_string(), |a| format!("{a:.4}"))
    );
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, checkpoint: &Path, data: Option<&Path>, out: &Path) -> CmdResult {
    let ckpt = Checkpoint::load(checkpoint)?;
    let folder: Option<PathBuf> = data.map(Path::to_path_buf).or_else(|| cfg.data.eval.clone());
    let (dataset, cache) = match &folder {
        Some(root) => {
            let cache_dir = cfg.data.cache_dir.clone().unwrap_or_else(|| root.join(".saliency_cache"));
            (Dataset::from_folder(root)?, Some(SaliencyCache::new(cache_dir)?))
        }
        None => {
            let n = cfg.data.synthetic.eval_per_class.max(1);
            let d = make_synthetic_dataset(n, ckpt.header.model.input_size, synthetic_eval_seed(cfg))?;
            (d, cfg.data.cache_dir.clone().map(SaliencyCache::new).transpose()?)
        }
    };
    let acc = evaluate(&ckpt, &dataset, cache)?;
    write_json(
        &out.join("eval.json"),
        &json!({
            "checkpoint": checkpoint,
            "data": folder.as_ref().map_or(Value::from("synthetic"), |p| json!(p)),
            "num_images": dataset.len(),
            "top1": acc,
        }),
    )?;
    eprintln!("top-1 accuracy {acc:.4} on {} images", dataset.len());
    Ok(())
}

struct BenchArgs {
    s: Vec<usize>,
    batch: usize,
    element_bytes: u64,
    runtime_batch: usize,
    repeats: usize,
    skip_runtime: bool,
}

#[derive(Serialize)]
struct BenchEntry {
    s: usize,
    flops: CostReport,
    memory: CostReport,
    runtime: Option<RuntimeReport>,
}

fn bench(cfg: &RunConfig, args: &BenchArgs, out: &Path) -> CmdResult {
    let model = cfg.model;
    let n = model.num_patches();
    let lengths = if args.s.is_empty() {
        [1, 2, 3, 4].iter().map(|k| (k * n).div_ceil(4)).collect()
    } else {
        args.s.clone()
    };
    let mut entries = Vec::with_capacity(lengths.len());
    for &s in &lengths {
        let flops = flops_estimate(&model, s, args.batch)?;
        let memory = memory_estimate(&model, s, args.batch, args.element_bytes)?;
        let runtime = if args.skip_runtime {
            None
        } else {
            eprintln!("timing s = {s}");
            Some(measure_runtime(&model, s, args.runtime_batch, args.repeats, cfg.train.seed)?)
        };
        entries.push(BenchEntry {
            s,
            flops,
            memory,
            runtime,
        });
    }
    let rows: Vec<CostRow> = entries
        .iter()
        .map(|e| CostRow {
            s: e.s,
            flops: e.flops.total,
            mem_estimate: e.memory.total,
            runtime_ms: e.runtime.as_ref().map(|r| r.forward.median_ms),
        })
        .collect();
    write_json(
        &out.join("bench.json"),
        &json!({ "model": model, "params": param_count(&model), "entries": entries }),
    )?;
    let csv_path = out.join("bench.csv");
    fs::write(&csv_path, cost_rows_csv(&rows)).map_err(|e| io_err(&csv_path, e))?;
    for r in &rows {
        eprintln!(
            "s={:>4} flops={:.3e} mem={:.3e} B runtime={}",
            r.s,
            r.flops as f64,
            r.mem_estimate as f64,
            r.runtime_ms.map_or("-".to_string(), |t| format!("{t:.3} ms"))
        );
    }
    Ok(())
}

fn describe(checkpoint: &Path, out: &Path) -> CmdResult {
    let header = read_header(checkpoint)?;
    let text = serde_json::to_string_pretty(&header).map_err(|e| CliError::user(e.to_string()))?;
    println!("{text}");
    write_json(&out.join("describe.json"), &header)
}

fn make_dataset(cfg: &RunConfig, per_class: usize, size: Option<usize>, out: &Path) -> CmdResult {
    let size = size.unwrap_or(cfg.model.input_size);
    let ds = make_synthetic_dataset(per_class, size, cfg.data.synthetic.seed)?;
    ds.save_to_folder(out)?;
    eprintln!("wrote {} images to {}", ds.len(), out.display());
    Ok(())
}
