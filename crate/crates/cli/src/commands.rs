use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use fgru_core::analysis::{self, AnalysisOptions};
use fgru_core::arch::{norm_differences, Model, Variant};
use fgru_core::data::cabc::{self, CabcGenerator, CabcParams, Control, Difficulty};
use fgru_core::data::pathfinder::{self, PathfinderGenerator, PathfinderParams};
use fgru_core::data::{audit_dataset, default_split, generate_dataset, Generator, Split};
use fgru_core::plot::heatmap_grid;
use fgru_core::tensor::Tensor;
use fgru_core::train::{self, init_seed, straining_sweep, sweep as run_sweep, train_seed, DifficultyData};
use serde_json::json;

use crate::settings::{architecture, load_split, named_path, train_config, RunSpec};

fn write_json(path: PathBuf, value: &serde_json::Value) -> Result<()> {
    std::fs::write(&path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn path_length(difficulty: &str) -> Result<usize> {
    let d: Difficulty = difficulty.parse()?;
    Ok(pathfinder::LENGTHS[Difficulty::ALL.iter().position(|&x| x == d).unwrap()])
}

/// Train/val counts: explicit `data.count`, else the per-task default.
fn counts(spec: &mut RunSpec, default_total: usize, segmentation_preset: (usize, usize), segmentation: bool) -> Result<(usize, usize)> {
    if spec.config.contains("data.count") || !segmentation {
        return Ok(default_split(spec.resolve("data.count", default_total)?));
    }
    let (t, v) = segmentation_preset;
    Ok((spec.resolve("data.train_count", t)?, spec.resolve("data.val_count", v)?))
}

pub fn generate(mut spec: RunSpec) -> Result<()> {
    let seed = spec.seed()?;
    let workers = spec.workers()?;
    let kind: String = spec.resolve("data.kind", "cabc".to_string())?;
    let task: String = spec.resolve("data.task", "classification".to_string())?;
    let segmentation = match task.as_str() {
        "classification" => false,
        "segmentation" => true,
        other => bail!("unknown task {other:?}"),
    };
    let size: usize = spec.resolve("data.size", 128)?;
    let control: Control = spec.resolve::<String>("data.control", "none".into())?.parse()?;
    let generator: Box<dyn Generator> = match kind.as_str() {
        "cabc" => {
            let difficulty: Difficulty = spec.resolve::<String>("data.difficulty", "hard".into())?.parse()?;
            let preset = CabcParams::segmentation(seed);
            let (train_count, val_count) = counts(&mut spec, 45_000, (preset.train_count, preset.val_count), segmentation)?;
            let task = if segmentation { cabc::Task::Segmentation } else { cabc::Task::Classification };
            let p = CabcParams { difficulty, control, task, image_size: size, seed, train_count, val_count };
            Box::new(CabcGenerator::new(p)?)
        }
        "pathfinder" => {
            if control != Control::None {
                bail!("controls apply to cABC only");
            }
            let default_len = path_length(&spec.resolve::<String>("data.difficulty", "hard".into())?)?;
            let length = spec.resolve("data.length", default_len)?;
            let preset = PathfinderParams::segmentation(seed);
            let (train_count, val_count) = counts(&mut spec, 60_000, (preset.train_count, preset.val_count), segmentation)?;
            let task = if segmentation { pathfinder::Task::Segmentation } else { pathfinder::Task::Classification };
            let p = PathfinderParams { task, train_count, val_count, ..PathfinderParams::new(length, 0, seed).with_size(size) };
            Box::new(PathfinderGenerator::new(p)?)
        }
        other => bail!("unknown dataset kind {other:?} (cabc or pathfinder)"),
    };
    spec.snapshot()?;
    let (n_train, n_val) = generator.counts();
    eprintln!("generating {kind}: {n_train} train + {n_val} val images at {size}px");
    let manifest = generate_dataset(generator.as_ref(), &spec.out, workers)?;
    let audit = audit_dataset(&spec.out).context("self-audit of the generated dataset failed")?;
    write_json(spec.out.join("audit.json"), &serde_json::to_value(&audit)?)?;
    println!("{}", spec.out.display());
    println!("digest {}", manifest.digest);
    println!(
        "audit ok: {} files, {} same / {} different{}",
        audit.files,
        audit.same,
        audit.different,
        audit.control.as_deref().filter(|c| *c != "none").map(|c| format!(", {c} control holds")).unwrap_or_default()
    );
    Ok(())
}

fn limits(spec: &mut RunSpec) -> Result<(usize, usize)> {
    Ok((spec.resolve("data.train_limit", 0)?, spec.resolve("data.val_limit", 0)?))
}

pub fn train(mut spec: RunSpec) -> Result<()> {
    let root: PathBuf = spec.require("data.path")?;
    let (tl, vl) = limits(&mut spec)?;
    let (tr, va) = (load_split(&root, Split::Train, tl)?, load_split(&root, Split::Val, vl)?);
    let arch = architecture(&mut spec, tr.size, tr.segmentation)?;
    let cfg = train_config(&mut spec)?;
    let lr: f64 = spec.resolve("train.lr", cfg.learning_rates[0])?;
    let run: u64 = spec.resolve("train.run", 0)?;
    spec.snapshot()?;
    let mut model = Model::<f32>::new(arch, init_seed(cfg.seed, run))?;
    let r = train::train(&mut model, &tr, &va, &cfg, lr, train_seed(cfg.seed, run), Some(&spec.out))?;
    for e in &r.epochs {
        println!(
            "epoch {:>3}  train loss {:.4}  metric {:.4}  val loss {:.4}  metric {:.4}{}",
            e.epoch,
            e.train_loss,
            e.train_metric,
            e.val_loss,
            e.val_metric,
            if e.val_loss_improved { " *" } else { "" }
        );
    }
    println!("best val metric {:.4} at epoch {} ({:?})", r.best_val_metric, r.best_epoch, r.stop);
    Ok(())
}

pub fn sweep(mut spec: RunSpec) -> Result<()> {
    let workers = spec.workers()?;
    let sets: Vec<String> = spec.config.get_list("data.sets")?.unwrap_or_default();
    if sets.is_empty() {
        bail!("sweep: give at least one --data directory");
    }
    let variants: Vec<Variant> = spec
        .resolve::<String>("model.variants", "tdh".into())?
        .split(',')
        .map(|v| v.trim().parse())
        .collect::<std::result::Result<_, _>>()?;
    let (tl, vl) = limits(&mut spec)?;
    let mut loaded = Vec::new();
    for s in &sets {
        let (name, root) = named_path(s);
        loaded.push((name, load_split(&root, Split::Train, tl)?, load_split(&root, Split::Val, vl)?));
    }
    let first = &loaded[0].1;
    if loaded.iter().any(|(_, t, _)| t.size != first.size || t.segmentation != first.segmentation) {
        bail!("sweep datasets must share image size and task");
    }
    spec.config.set_default("model.variant", variants[0].name());
    let base = architecture(&mut spec, first.size, first.segmentation)?;
    let cfg = train_config(&mut spec)?;
    spec.snapshot()?;

    if loaded.len() == 1 && variants.len() == 1 {
        let arch = fgru_core::arch::ArchitectureConfig { variant: variants[0], ..base };
        let (_, tr, va) = &loaded[0];
        let sw = run_sweep::<f32>(&arch, tr, va, &cfg, Some(&spec.out), workers)?;
        for c in &sw.cells {
            match (&c.result, &c.error) {
                (Some(r), _) => println!("lr {:e} seed {}: {:.4} after {} epochs", c.lr, c.seed, r.best_val_metric, r.epochs.len()),
                (None, e) => println!("lr {:e} seed {}: failed: {}", c.lr, c.seed, e.as_deref().unwrap_or("?")),
            }
        }
        match sw.best_cell() {
            Some(b) => println!("best: lr {:e} seed {} -> {:.4}", b.lr, b.seed, sw.best_metric().unwrap()),
            None => bail!("every run in the sweep failed"),
        }
        return Ok(());
    }

    let data: Vec<DifficultyData> = loaded.iter().map(|(n, t, v)| DifficultyData { name: n.clone(), train: t, val: v }).collect();
    let table = straining_sweep::<f32>(&base, &variants, &data, &cfg, Some(&spec.out), workers)?;
    print!("{}", table.to_csv());
    Ok(())
}

pub fn eval(mut spec: RunSpec) -> Result<()> {
    let ckpt: PathBuf = spec.require("model.checkpoint")?;
    let root: PathBuf = spec.require("data.path")?;
    let split: Split = spec.resolve::<String>("data.split", "val".into())?.parse()?;
    let limit = spec.resolve("data.limit", 0)?;
    let batch = spec.resolve("eval.batch", 64usize)?;
    spec.snapshot()?;
    let mut model = Model::<f32>::load(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let data = load_split(&root, split, limit)?;
    let ev = train::evaluate(&mut model, &data, batch)?;
    analysis::write_model_scores(&spec.out.join("scores.csv"), &ev.scores)?;
    write_json(
        spec.out.join("evaluation.json"),
        &json!({ "task": ev.task, "images": ev.images, "loss": ev.loss, "metric": ev.metric, "image_f1": ev.image_f1 }),
    )?;
    let what = match ev.task {
        fgru_core::arch::Task::Classification => "accuracy",
        fgru_core::arch::Task::Segmentation => "pixel f1",
    };
    println!("{what} {:.4} on {} images (loss {:.4})", ev.metric, ev.images, ev.loss);
    Ok(())
}

pub fn trace(mut spec: RunSpec) -> Result<()> {
    let ckpt: PathBuf = spec.require("model.checkpoint")?;
    let root: PathBuf = spec.require("data.path")?;
    let split: Split = spec.resolve::<String>("data.split", "val".into())?.parse()?;
    let positions: Vec<usize> = {
        spec.config.set_default("trace.images", "0");
        spec.config.get_list("trace.images")?.expect("just set")
    };
    let mut model = Model::<f32>::load(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let zoom = spec.resolve("trace.zoom", (256 / model.cfg.image_size).max(1))?;
    spec.snapshot()?;
    let data = load_split(&root, split, 0)?;
    if let Some(&p) = positions.iter().find(|&&p| p >= data.len()) {
        bail!("image position {p} is outside the {} split ({} images)", split.dir(), data.len());
    }
    if data.size != model.cfg.image_size {
        bail!("checkpoint expects {}px images, dataset has {}px", model.cfg.image_size, data.size);
    }
    let steps = model.cfg.effective_timesteps();
    if steps < 2 {
        eprintln!("warning: the model runs a single timestep; the trace has one empty panel");
    }
    let (x, _) = data.batch::<f32>(&positions);
    let (logits, tr) = model.predict_traced(&x, true)?;
    let tr = tr.expect("trace requested");
    let states = spec.out.join("states");
    std::fs::create_dir_all(&states)?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut records = Vec::new();
    for (b, &p) in positions.iter().enumerate() {
        let image_id = format!("{:06}", data.indices[p]);
        for (t, h) in tr.h1.iter().enumerate() {
            let (_, c, s, _) = h.dims4().expect("4-d state");
            Tensor::new(&[1, c, s, s], h.image(b).to_vec())?.save(&states.join(format!("{image_id}_t{t}.bin")))?;
        }
        let panels = norm_differences(&tr.h1, b);
        let per = logits.len() / positions.len();
        records.push(json!({
            "position": p,
            "image_id": image_id,
            "logits": logits.data()[b * per..(b + 1) * per].iter().map(|&v| v as f64).collect::<Vec<_>>(),
            "panels": panels,
        }));
        labels.push(image_id);
        rows.push(panels);
    }
    write_json(
        spec.out.join("trace.json"),
        &json!({ "timesteps": steps, "image_size": data.size, "split": split, "images": records }),
    )?;
    let png = spec.out.join("trace.png");
    heatmap_grid("CHANGE IN STATE NORM", &labels, &rows, data.size, zoom).save(&png)?;
    println!("{} ({} images x {} panels)", png.display(), rows.len(), rows[0].len());
    Ok(())
}

pub fn analyze(mut spec: RunSpec) -> Result<()> {
    let trials_path: PathBuf = spec.require("analyze.trials")?;
    let models: Vec<String> = spec.config.get_list("analyze.models")?.unwrap_or_default();
    let d = AnalysisOptions::default();
    let opts = AnalysisOptions {
        repeats: spec.resolve("analyze.repeats", d.repeats)?,
        percentile: spec.resolve("analyze.percentile", d.percentile)?,
        bootstrap_iters: spec.resolve("analyze.bootstrap_iters", d.bootstrap_iters)?,
        seed: spec.seed()?,
    };
    spec.snapshot()?;
    let trials = analysis::read_trials(&trials_path)?;
    let mut scored = Vec::new();
    for m in &models {
        let (name, path) = named_path(m);
        let name = name.trim_end_matches(".csv").to_owned();
        scored.push((name, analysis::read_model_scores(&path)?));
    }
    let report = analysis::analyze(&trials, &scored, &opts)?;
    report.write(&spec.out)?;
    print!("{}", report.to_text());
    Ok(())
}
