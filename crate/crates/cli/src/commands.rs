use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use dit::analysis::{conformance_table, count_flops, count_params, LATENT_DOWNSAMPLE};
use dit::diffcore::TensorFile;
use dit::eval::{
    reference_stats, scaling_sweep, variant_sweep, write_sweep_csv, write_variant_csv,
    CheckpointSource, EvalProtocol, SweepModel, SweepRecord,
};
use dit::model::{BlockVariant, DiT, DiTConfig};
use dit::sampler::{self, CountingDenoiser, SampleRequest};
use dit::schedule::DiffusionSchedule;
use dit::trainer::{check_model_gradients, toy_dataset, Checkpoint, ToyDataset, Trainer};

use crate::config::{
    model_config, model_from_name, parse_grid_entry, resolved, toy_train_defaults, DataSection,
    Document, FlopsSection, GradCheckSection, GridEntry, SampleSection, ScheduleSection,
    SweepSection, Weights,
};
use crate::run::Run;
use crate::{parse_variant, Common};

fn to_json<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("config serialises")
}

fn dataset(model: &DiTConfig, data: &DataSection) -> Result<ToyDataset> {
    let classes = data.num_classes.unwrap_or(model.num_classes);
    Ok(toy_dataset(
        classes,
        model.input,
        model.channels,
        data.seed,
    )?)
}

/// Recorded paths are absolute so a manifest reruns from any directory.
fn absolute(p: PathBuf) -> Result<PathBuf> {
    std::path::absolute(&p).with_context(|| format!("bad path {}", p.display()))
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len().max(1) as f64;
    xs.sum::<f64>() / n
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// `mini` or a named size such as `S/4`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<BlockVariant>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    ema_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the toy data stream.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from this checkpoint; its model and settings are kept.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ResumeSection {
    ckpt: Option<PathBuf>,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let doc = Document::load(args.common.config.as_deref())?;
    let mut run = Run::start("train", args.common.out.as_deref())?;
    let outcome = train_in(&mut run, &doc, &args);
    run.finish(outcome).map(drop)
}

fn train_in(run: &mut Run, doc: &Document, args: &TrainArgs) -> Result<()> {
    let mut resume = doc.section("resume", ResumeSection::default())?;
    if args.resume.is_some() {
        resume.ckpt = args.resume.clone();
    }
    resume.ckpt = resume.ckpt.map(absolute).transpose()?;
    let ckpt = match &resume.ckpt {
        Some(p) => {
            Some(Checkpoint::load(p).with_context(|| format!("cannot load {}", p.display()))?)
        }
        None => None,
    };
    let model = match &ckpt {
        Some(c) => {
            if args.model.is_some() || args.variant.is_some() {
                log::warn!("--model/--variant are ignored when resuming");
            }
            c.model.clone()
        }
        None => model_config(doc, args.model.as_deref(), args.variant)?,
    };
    let base = ckpt
        .as_ref()
        .map_or_else(toy_train_defaults, |c| c.train.clone());
    let mut train = doc.section("train", base)?;
    train.steps = args.steps.unwrap_or(train.steps);
    train.batch_size = args.batch_size.unwrap_or(train.batch_size);
    train.lr = args.lr.unwrap_or(train.lr);
    train.ema_decay = args.ema_decay.unwrap_or(train.ema_decay);
    train.seed = args.seed.unwrap_or(train.seed);
    train.checkpoint_every = args.checkpoint_every.unwrap_or(train.checkpoint_every);
    let mut data = doc.section("data", DataSection::default())?;
    data.seed = args.data_seed.unwrap_or(data.seed);

    run.set_config(resolved(&[
        ("model", to_json(&model)),
        ("data", to_json(&data)),
        ("train", to_json(&train)),
        ("resume", to_json(&resume)),
    ]));
    run.seed("train", train.seed);
    run.seed("data", data.seed);

    let ds = dataset(&model, &data)?;
    let mut trainer = match ckpt {
        Some(c) => {
            if c.train.batch_size != train.batch_size || c.train.seed != train.seed {
                log::warn!("batch size or seed differ from the checkpoint; the resumed run will not replay the original");
            }
            Trainer::from_checkpoint(
                Checkpoint {
                    train: train.clone(),
                    ..c
                },
                ds,
            )?
        }
        None => Trainer::new(model.clone(), train.clone(), ds)?,
    };
    let loss = run.artifact("loss.csv");
    let final_path = run.artifact("final.ditt");
    let first = trainer.step;
    log::info!(
        "training {} params from step {first} to {}",
        trainer.params.num_params(),
        train.steps
    );
    let log = trainer.run_until(train.steps, Some(&run.dir))?;
    trainer.checkpoint().save(&final_path)?;
    debug_assert!(loss.exists());

    let w = 100.min(log.len());
    if w > 0 {
        let head = mean(log[..w].iter().map(|r| r.l_simple));
        let tail = mean(log[log.len() - w..].iter().map(|r| r.l_simple));
        println!(
            "steps {}..{}: mean L_simple {head:.4} (first {w}) -> {tail:.4} (last {w})",
            first + 1,
            trainer.step
        );
    }
    println!("checkpoint: {}", final_path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Class labels cycled over the samples (comma separated); omit for
    /// unconditional samples.
    #[arg(long, value_delimiter = ',')]
    class: Option<Vec<usize>>,
    #[arg(long)]
    cfg_scale: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample with the raw weights instead of the EMA.
    #[arg(long)]
    raw: bool,
    /// Clamp predicted images to [-1, 1] at every step.
    #[arg(long)]
    clip: bool,
    /// Images per row of the preview.
    #[arg(long)]
    cols: Option<usize>,
}

pub fn sample(args: SampleArgs) -> Result<()> {
    let doc = Document::load(args.common.config.as_deref())?;
    let mut run = Run::start("sample", args.common.out.as_deref())?;
    let outcome = sample_in(&mut run, &doc, &args);
    run.finish(outcome).map(drop)
}

fn sample_in(run: &mut Run, doc: &Document, args: &SampleArgs) -> Result<()> {
    let mut s = doc.section("sample", SampleSection::default())?;
    if args.ckpt.is_some() {
        s.ckpt = args.ckpt.clone();
    }
    if let Some(c) = &args.class {
        s.class = c.clone();
    }
    s.cfg_scale = args.cfg_scale.unwrap_or(s.cfg_scale);
    s.steps = args.steps.unwrap_or(s.steps);
    s.count = args.count.unwrap_or(s.count);
    s.seed = args.seed.unwrap_or(s.seed);
    s.cols = args.cols.unwrap_or(s.cols);
    if args.raw {
        s.weights = Weights::Raw;
    }
    s.clip_denoised |= args.clip;
    s.ckpt = s.ckpt.map(absolute).transpose()?;
    run.set_config(resolved(&[("sample", to_json(&s))]));
    run.seed("sample", s.seed);

    let Some(path) = &s.ckpt else {
        bail!("no checkpoint given: pass --ckpt PATH or set [sample] ckpt");
    };
    let ckpt = Checkpoint::load(path).with_context(|| format!("cannot load {}", path.display()))?;
    let schedule = ckpt.train.schedule()?;
    let params = match s.weights {
        Weights::Ema => ckpt.ema,
        Weights::Raw => ckpt.params,
    };
    let model = CountingDenoiser::new(DiT {
        config: ckpt.model,
        params,
    });
    let mut request = SampleRequest {
        clip_denoised: s.clip_denoised,
        chunk_size: s.chunk_size,
        ..SampleRequest::new(s.count, s.steps, s.seed).with_guidance(s.cfg_scale)
    };
    if !s.class.is_empty() {
        request = request.with_labels((0..s.count).map(|i| s.class[i % s.class.len()]).collect());
    }
    let x = sampler::sample(&model, &schedule, &request)?;
    let evaluations = model.evaluations();

    let tensors = run.artifact("samples.ditt");
    let preview = run.artifact("samples.ppm");
    let mut file = TensorFile::new();
    file.metadata = json!({
        "format": "dit-samples-v1",
        "checkpoint_step": ckpt.step,
        "labels": request.labels,
        "cfg_scale": s.cfg_scale,
        "steps": s.steps,
        "seed": s.seed,
        "network_evaluations": evaluations,
    })
    .to_string();
    file.insert("samples", x.clone());
    file.save(&tensors)?;
    sampler::write_ppm(&preview, &x, s.cols)?;
    let per = evaluations as f64 / (s.count * s.steps) as f64;
    println!(
        "{} samples, {} steps: {evaluations} network evaluations ({per} per image per step)",
        s.count, s.steps
    );
    println!("samples: {}", tensors.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    #[command(flatten)]
    common: Common,
    /// `mini` or a named size such as `XL/2`.
    #[arg(long)]
    model: Option<String>,
    /// Image edge in pixels; the latent edge is this divided by 8.
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<BlockVariant>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

pub fn flops(args: FlopsArgs) -> Result<()> {
    let doc = Document::load(args.common.config.as_deref())?;
    let mut run = Run::start("flops", args.common.out.as_deref())?;
    let outcome = flops_in(&mut run, &doc, &args);
    run.finish(outcome).map(drop)
}

fn flops_in(run: &mut Run, doc: &Document, args: &FlopsArgs) -> Result<()> {
    let mut f = doc.section("flops", FlopsSection::default())?;
    if let Some(m) = &args.model {
        f.model = m.clone();
    }
    f.image_size = args.image_size.unwrap_or(f.image_size);
    f.variant = args.variant.unwrap_or(f.variant);
    run.set_config(resolved(&[("flops", to_json(&f))]));

    if f.image_size == 0 || f.image_size % LATENT_DOWNSAMPLE != 0 {
        bail!(
            "image size {} is not a positive multiple of {LATENT_DOWNSAMPLE}",
            f.image_size
        );
    }
    let input = f.image_size / LATENT_DOWNSAMPLE;
    let config = model_from_name(&f.model)?
        .with_variant(f.variant)
        .with_input(input);
    config.validate()?;
    let report = count_flops(&config, input);
    let params = count_params(&config);

    let (name, text) = match args.format {
        Format::Text => {
            let mut s = format!(
                "DiT-{} {}: {2}×{2} image, {3}×{3} latent, {4} tokens\n",
                f.model,
                f.variant,
                f.image_size,
                input,
                config.tokens(),
            );
            for (component, n) in report.components() {
                writeln!(s, "{component:<24}{:>12.4} Gflops", n as f64 / 1e9)?;
            }
            writeln!(s, "{:<24}{:>12.4} Gflops", "total", report.gflops())?;
            writeln!(s, "{:<24}{:>12.3} M", "parameters", params.millions())?;
            ("flops.txt", s)
        }
        Format::Csv => {
            let mut s = String::from("component,flops,gflops\n");
            for (component, n) in report.components() {
                writeln!(s, "{component},{n},{}", n as f64 / 1e9)?;
            }
            writeln!(s, "total,{},{}", report.total, report.gflops())?;
            ("flops.csv", s)
        }
        Format::Json => {
            let v = json!({
                "model": f.model,
                "variant": f.variant,
                "image_size": f.image_size,
                "input": input,
                "tokens": config.tokens(),
                "gflops": report.gflops(),
                "flops": report,
                "params": params,
            });
            ("flops.json", serde_json::to_string_pretty(&v)? + "\n")
        }
    };
    fs::write(run.artifact(name), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct ConformanceArgs {
    #[command(flatten)]
    common: Common,
}

pub fn conformance(args: ConformanceArgs) -> Result<()> {
    let mut run = Run::start("conformance", args.common.out.as_deref())?;
    let outcome = conformance_in(&mut run);
    run.finish(outcome).map(drop)
}

fn conformance_in(run: &mut Run) -> Result<()> {
    run.set_config(json!({}));
    let rows = conformance_table();
    let mut csv = String::from(
        "table,model,variant,image_size,reference_gflops,gflops,gflop_error,reference_params_m,params_m,param_error,result\n",
    );
    println!(
        "{:<8} {:<9} {:<16} {:>5} {:>10} {:>10} {:>9} {:>9}  result",
        "table", "model", "variant", "image", "ref Gflop", "Gflops", "ref M", "M"
    );
    for r in &rows {
        let table = match r.kind {
            dit::analysis::ReferenceKind::ModelTable => "sizes",
            dit::analysis::ReferenceKind::DetailsTable => "details",
        };
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            csv,
            "{table},{},{},{},{},{},{},{},{},{},{verdict}",
            r.model,
            r.variant,
            r.image_size,
            r.reference_gflops,
            r.gflops,
            r.gflop_error,
            opt(r.reference_params_m),
            r.params_m,
            opt(r.param_error)
        )?;
        println!(
            "{table:<8} {:<9} {:<16} {:>5} {:>10.2} {:>10.2} {:>9} {:>9.1}  {verdict}",
            r.model,
            r.variant.name(),
            r.image_size,
            r.reference_gflops,
            r.gflops,
            r.reference_params_m
                .map_or("-".into(), |m| format!("{m:.0}")),
            r.params_m
        );
    }
    fs::write(run.artifact("conformance.csv"), csv)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        bail!("{failed} of {} conformance rows failed", rows.len());
    }
    println!("all {} rows PASS", rows.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[command(flatten)]
    common: Common,
    /// Variants to check (repeatable); all four by default.
    #[arg(long, value_parser = parse_variant)]
    variant: Vec<BlockVariant>,
    #[arg(long)]
    seed: Option<u64>,
    /// Coordinates probed per parameter tensor.
    #[arg(long)]
    coords: Option<usize>,
}

pub fn gradcheck(args: GradCheckArgs) -> Result<()> {
    let doc = Document::load(args.common.config.as_deref())?;
    let mut run = Run::start("gradcheck", args.common.out.as_deref())?;
    let outcome = gradcheck_in(&mut run, &doc, &args);
    run.finish(outcome).map(drop)
}

fn gradcheck_in(run: &mut Run, doc: &Document, args: &GradCheckArgs) -> Result<()> {
    let model = model_config(doc, None, None)?;
    let mut g = doc.section("gradcheck", GradCheckSection::default())?;
    if !args.variant.is_empty() {
        g.variants = args.variant.clone();
    }
    g.seed = args.seed.unwrap_or(g.seed);
    g.coords_per_tensor = args.coords.unwrap_or(g.coords_per_tensor);
    run.set_config(resolved(&[
        ("model", to_json(&model)),
        ("gradcheck", to_json(&g)),
    ]));
    run.seed("gradcheck", g.seed);

    let mut csv =
        String::from("variant,max_rel_error,coordinates,worst_index,analytic,numeric,result\n");
    let mut worst: f64 = 0.0;
    for &v in &g.variants {
        let r = check_model_gradients(&model.clone().with_variant(v), &g.options())?;
        let verdict = if r.max_rel_error < g.tolerance {
            "PASS"
        } else {
            "FAIL"
        };
        worst = worst.max(r.max_rel_error);
        println!(
            "{:<16} max rel error {:.3e} over {} coordinates  {verdict}",
            v.name(),
            r.max_rel_error,
            r.coordinates_checked
        );
        writeln!(
            csv,
            "{},{:e},{},{},{:e},{:e},{verdict}",
            v.name(),
            r.max_rel_error,
            r.coordinates_checked,
            r.worst_index,
            r.analytic,
            r.numeric
        )?;
    }
    fs::write(run.artifact("gradcheck.csv"), csv)?;
    if worst >= g.tolerance {
        bail!(
            "gradient check failed: max relative error {worst:.3e} ≥ {:e}",
            g.tolerance
        );
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    #[command(flatten)]
    common: Common,
    /// Respaced step count (the full schedule by default).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    t_max: Option<usize>,
}

pub fn schedule(args: ScheduleArgs) -> Result<()> {
    let doc = Document::load(args.common.config.as_deref())?;
    let mut run = Run::start("schedule", args.common.out.as_deref())?;
    let outcome = schedule_in(&mut run, &doc, &args);
    run.finish(outcome).map(drop)
}

fn schedule_in(run: &mut Run, doc: &Document, args: &ScheduleArgs) -> Result<()> {
    let mut s = doc.section("schedule", ScheduleSection::default())?;
    if let Some(t) = args.t_max {
        s.t_max = t;
        s.steps = s.steps.min(t);
    }
    s.steps = args.steps.unwrap_or(s.steps);
    run.set_config(resolved(&[("schedule", to_json(&s))]));
    let full = DiffusionSchedule::linear(s.t_max, s.beta_start, s.beta_end)?;
    let csv = full.respace(s.steps)?.to_csv();
    let path = run.artifact("schedule.csv");
    fs::write(&path, csv)?;
    println!("{} of {} steps: {}", s.steps, s.t_max, path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate as NAME=PATH (repeatable).
    #[arg(long, value_parser = parse_grid_entry)]
    grid: Vec<GridEntry>,
    /// Sampling step counts (comma separated).
    #[arg(long, value_delimiter = ',')]
    steps_list: Option<Vec<usize>>,
    /// Samples per evaluation.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cfg_scale: Option<f64>,
    /// Also train every block variant under `[model]`/`[train]` and evaluate it.
    #[arg(long)]
    variants: bool,
    /// Training steps for `--variants`.
    #[arg(long)]
    train_steps: Option<u64>,
    #[arg(long)]
    reference_count: Option<usize>,
    /// Directory caching reference statistics.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let doc = Document::load(args.common.config.as_deref())?;
    let mut run = Run::start("sweep", args.common.out.as_deref())?;
    let outcome = sweep_in(&mut run, &doc, &args);
    run.finish(outcome).map(drop)
}

fn sweep_in(run: &mut Run, doc: &Document, args: &SweepArgs) -> Result<()> {
    let model = model_config(doc, None, None)?;
    let data = doc.section("data", DataSection::default())?;
    let mut train = doc.section("train", toy_train_defaults())?;
    if let Some(n) = args.train_steps {
        train.steps = n;
    }
    let mut protocol = doc.section("eval", EvalProtocol::default())?;
    if let Some(s) = &args.steps_list {
        protocol.step_counts = s.clone();
    }
    protocol.sample_count = args.count.unwrap_or(protocol.sample_count);
    protocol.seed = args.seed.unwrap_or(protocol.seed);
    protocol.guidance_scale = args.cfg_scale.unwrap_or(protocol.guidance_scale);
    let mut sw = doc.section("sweep", SweepSection::default())?;
    sw.grid.extend(args.grid.iter().cloned());
    for e in &mut sw.grid {
        e.ckpt = absolute(std::mem::take(&mut e.ckpt))?;
    }
    sw.variants |= args.variants;
    sw.reference_count = args.reference_count.unwrap_or(sw.reference_count);
    if args.cache_dir.is_some() {
        sw.cache_dir = args.cache_dir.clone();
    }
    let mut sections = vec![
        ("model", to_json(&model)),
        ("data", to_json(&data)),
        ("eval", to_json(&protocol)),
        ("sweep", to_json(&sw)),
    ];
    if sw.variants {
        sections.push(("train", to_json(&train)));
        run.seed("train", train.seed);
    }
    run.set_config(resolved(&sections));
    run.seed("data", data.seed);
    run.seed("sample", protocol.seed);
    run.seed("extractor", protocol.extractor_seed);

    if sw.grid.is_empty() && !sw.variants {
        bail!("nothing to evaluate: pass --grid NAME=PATH or --variants");
    }
    let ds = dataset(&model, &data)?;
    let mut models: Vec<SweepModel> = sw
        .grid
        .iter()
        .map(|e| SweepModel {
            name: e.name.clone(),
            source: CheckpointSource::Path(e.ckpt.clone()),
        })
        .collect();
    if sw.variants {
        let runs = variant_sweep(
            &model,
            &BlockVariant::ALL,
            &train,
            &ds,
            None,
            Some(&run.dir.join("variants")),
        )?;
        let records: Vec<_> = runs.iter().map(|r| r.record.clone()).collect();
        write_variant_csv(run.artifact("variants.csv"), &records)?;
        for r in runs {
            println!(
                "{:<16} L_simple {} -> {}  {}",
                r.record.variant,
                r.record
                    .initial_l_simple
                    .map_or("-".into(), |x| format!("{x:.4}")),
                r.record
                    .final_l_simple
                    .map_or("-".into(), |x| format!("{x:.4}")),
                r.record.status
            );
            if let Some(c) = r.checkpoint {
                models.push(SweepModel {
                    name: r.record.variant,
                    source: CheckpointSource::Loaded(Box::new(c)),
                });
            }
        }
    }
    let reference = reference_stats(
        &ds,
        sw.reference_count,
        protocol.extractor_seed,
        sw.cache_dir.as_deref(),
    )?;
    let records = scaling_sweep(&models, &protocol, &reference)?;
    write_sweep_csv(run.artifact("sweep.csv"), &records)?;
    fs::write(run.artifact("plot.json"), plot_data(&records)? + "\n")?;
    for r in &records {
        match r.metric {
            Some(m) => println!(
                "{:<16} {:>5} steps {:>10.3e} Tflops  metric {m:.4}",
                r.model, r.num_steps, r.sampling_tflops
            ),
            None => println!("{:<16} {:>5} steps  {}", r.model, r.num_steps, r.status),
        }
    }
    Ok(())
}

/// Metric against sampling compute, one series per model.
fn plot_data(records: &[SweepRecord]) -> Result<String> {
    let mut series: Vec<(String, Vec<Value>)> = Vec::new();
    for r in records.iter().filter(|r| r.metric.is_some()) {
        let point = json!({
            "num_steps": r.num_steps,
            "sampling_tflops": r.sampling_tflops,
            "metric": r.metric,
        });
        match series.iter_mut().find(|(m, _)| *m == r.model) {
            Some((_, pts)) => pts.push(point),
            None => series.push((r.model.clone(), vec![point])),
        }
    }
    let v: Vec<Value> = series
        .into_iter()
        .map(|(model, points)| json!({"model": model, "points": points}))
        .collect();
    Ok(serde_json::to_string_pretty(&json!({
        "x": "sampling_tflops",
        "y": "metric",
        "series": v,
    }))?)
}
