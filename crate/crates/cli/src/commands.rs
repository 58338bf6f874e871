use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use vwerc::context_fields::argmax;
use vwerc::corpus::{
    build_vocab, corpus_stats, generate_synthetic, load_corpus, load_labels, save_corpus, save_labels, Conversation,
    CorpusStats, LabelMap,
};
use vwerc::training_eval::{
    ablation_run, evaluate, load_checkpoint, save_checkpoint, train as train_model, Checkpoint, MetricsReport,
};
use vwerc::window_gate::GateMode;

use crate::config::{load_synth, RunConfig};
use crate::Shared;

/// Writes through a sibling temporary file so a failed run never leaves a
/// partial artifact under the final name.
/// Creates the directory `path` will be written into.
fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
        }
        _ => Ok(()),
    }
}

fn write_atomic(path: &Path, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    ensure_parent(path)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    f(&tmp)?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_atomic(path, |tmp| {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(tmp, text).with_context(|| format!("writing {}", tmp.display()))
    })
}

fn print_stats(name: &str, stats: &CorpusStats, labels: &LabelMap) {
    println!(
        "{name}: {} conversations, {} utterances",
        stats.conversations, stats.utterances
    );
    let balance: Vec<String> = stats
        .label_counts
        .iter()
        .enumerate()
        .map(|(k, n)| format!("{}={n}", labels.name(k)))
        .collect();
    println!("  labels: {}", balance.join(" "));
    if !stats.window_histogram.is_empty() {
        let hist: Vec<String> = stats
            .window_histogram
            .iter()
            .enumerate()
            .map(|(w, n)| format!("{w}:{n}"))
            .collect();
        println!("  planted windows: {}", hist.join(" "));
    }
}

pub fn gen(shared: &Shared, out: &Path) -> Result<()> {
    let mut synth = load_synth(shared.config.as_deref())?;
    if let Some(seed) = shared.seed {
        synth.seed = seed;
    }
    let corpus = generate_synthetic(&synth, synth.seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, convs) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let path = out.join(format!("{name}.jsonl"));
        write_atomic(&path, |tmp| Ok(save_corpus(convs, &corpus.labels, tmp)?))?;
        print_stats(name, &corpus_stats(convs, corpus.labels.len()), &corpus.labels);
    }
    write_atomic(&out.join("labels.json"), |tmp| Ok(save_labels(&corpus.labels, tmp)?))?;
    Ok(())
}

struct Splits {
    labels: LabelMap,
    train: Vec<Conversation>,
    dev: Vec<Conversation>,
    test: Option<Vec<Conversation>>,
}

fn load_splits(dir: &Path, need_test: bool) -> Result<Splits> {
    let labels = load_labels(dir.join("labels.json")).with_context(|| format!("reading labels in {}", dir.display()))?;
    let read = |name: &str| -> Result<Vec<Conversation>> {
        let path = dir.join(format!("{name}.jsonl"));
        load_corpus(&path, &labels).with_context(|| format!("reading {}", path.display()))
    };
    let train = read("train")?;
    let dev = read("dev")?;
    let test = if need_test { Some(read("test")?) } else { None };
    Ok(Splits {
        labels,
        train,
        dev,
        test,
    })
}

fn resolve(run: &RunConfig, shared: &Shared, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<(PathBuf, PathBuf, usize)> {
    let Some(data) = data.or_else(|| run.paths.data.clone()) else {
        bail!("no data directory: pass --data or set paths.data");
    };
    let Some(out) = out.or_else(|| run.paths.out.clone()) else {
        bail!("no output path: pass --out or set paths.out");
    };
    Ok((data, out, shared.eval_threads.unwrap_or(run.eval_threads).max(1)))
}

fn load_run(shared: &Shared) -> Result<RunConfig> {
    let mut run = RunConfig::load(shared.config.as_deref())?;
    if let Some(seed) = shared.seed {
        run.train.seed = seed;
    }
    run.train.validate()?;
    log::info!("run config: {}", serde_json::to_string(&run)?);
    Ok(run)
}

pub fn train(shared: &Shared, data: Option<PathBuf>, out: Option<PathBuf>, log_path: Option<PathBuf>) -> Result<()> {
    let run = load_run(shared)?;
    let (data, out, threads) = resolve(&run, shared, data, out)?;
    let log_path = log_path.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    // fail before training, not after
    ensure_parent(&out)?;
    ensure_parent(&log_path)?;
    let splits = load_splits(&data, false)?;
    let vocab = build_vocab(&splits.train, run.train.min_count);
    let outcome = train_model(&splits.train, &splits.dev, &vocab, &splits.labels, &run.train, threads)?;

    write_atomic(&log_path, |tmp| {
        let mut f = fs::File::create(tmp)?;
        writeln!(f, "{}", json!({ "config": run }))?;
        for entry in &outcome.log {
            writeln!(f, "{}", serde_json::to_string(entry)?)?;
        }
        Ok(())
    })?;
    let checkpoint = Checkpoint {
        config: run.train.clone(),
        vocab,
        labels: splits.labels,
        model: outcome.model,
    };
    write_atomic(&out, |tmp| Ok(save_checkpoint(&checkpoint, tmp)?))?;
    println!(
        "best epoch {} of {}: dev macro-F1 {:.4}, micro-F1 {:.4}",
        outcome.best_epoch,
        outcome.log.len() - 1,
        outcome.best_dev.macro_f1,
        outcome.best_dev.micro_f1
    );
    Ok(())
}

fn print_report(r: &MetricsReport) {
    println!("{:<12} {:>9} {:>9} {:>9} {:>8}", "label", "precision", "recall", "f1", "support");
    for c in &r.per_class {
        println!(
            "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            c.label, c.precision, c.recall, c.f1, c.support
        );
    }
    println!("micro-F1 {:.4}  macro-F1 {:.4}  weighted-F1 {:.4}", r.micro_f1, r.macro_f1, r.weighted_f1);
    if let (Some(sel), Some(hit)) = (r.window_selection_accuracy, r.topk_hit_rate) {
        println!("window selection {sel:.4}  top-K hit rate {hit:.4}");
    }
    println!("selected windows {:?}", r.window_histogram);
}

pub fn eval(shared: &Shared, ckpt: &Path, data: &Path, report: &Path, mode: Option<GateMode>) -> Result<()> {
    let ck = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let corpus = load_corpus(data, &ck.labels).with_context(|| format!("reading {}", data.display()))?;
    let threads = shared.eval_threads.unwrap_or(1).max(1);
    let metrics = evaluate(&ck.model, &corpus, &ck.vocab, &ck.labels, mode, threads)?;
    write_json(report, &metrics)?;
    print_report(&metrics);
    Ok(())
}

pub fn ablate(shared: &Shared, data: Option<PathBuf>, out: Option<PathBuf>, seeds: Option<Vec<u64>>) -> Result<()> {
    let run = load_run(shared)?;
    let (data, out, threads) = resolve(&run, shared, data, out)?;
    ensure_parent(&out)?;
    let splits = load_splits(&data, true)?;
    let test = splits.test.expect("requested");
    let vocab = build_vocab(&splits.train, run.train.min_count);
    let seeds = seeds.unwrap_or_else(|| run.ablation.seeds.clone());
    let report = ablation_run(
        &run.ablation.grid,
        &seeds,
        &splits.train,
        &splits.dev,
        &test,
        &vocab,
        &splits.labels,
        &run.train,
        threads,
    )?;
    write_json(&out, &report)?;
    println!("{:<14} {:<10} {:>10} {:>8}", "units", "gate", "macro-F1", "sd");
    for c in &report.cells {
        println!(
            "{:<14} {:<10} {:>10.4} {:>8.4}",
            format!("{:?}", c.variant),
            c.mode.to_string(),
            c.macro_f1_mean,
            c.macro_f1_sd
        );
    }
    Ok(())
}

pub fn inspect(shared: &Shared, ckpt: &Path, data: &Path, n: usize, out: Option<PathBuf>) -> Result<()> {
    let ck = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let corpus = load_corpus(data, &ck.labels).with_context(|| format!("reading {}", data.display()))?;
    let all: Vec<(usize, usize)> = corpus
        .iter()
        .enumerate()
        .flat_map(|(c, conv)| (0..conv.len()).map(move |t| (c, t)))
        .collect();
    if all.is_empty() {
        bail!("{} holds no utterances", data.display());
    }
    let n = n.min(all.len());
    // evenly spaced picks, shifted by the seed
    let offset = shared.seed.unwrap_or(0) as usize % all.len();
    let mut lines = Vec::with_capacity(n);
    for k in 0..n {
        let (c, t) = all[(offset + k * all.len() / n.max(1)) % all.len()];
        let conv = &corpus[c];
        let u = &conv.utterances[t];
        let p = ck.model.predict(conv, t, &ck.vocab)?;
        let fields: Vec<_> = p
            .per_field
            .iter()
            .map(|(w, probs)| {
                json!({
                    "window": w,
                    "prediction": ck.labels.name(argmax(probs)),
                    "probs": probs,
                })
            })
            .collect();
        let record = json!({
            "conversation": conv.id,
            "position": t,
            "speaker": u.speaker,
            "text": u.text,
            "gold": ck.labels.name(u.label),
            "prediction": ck.labels.name(p.label),
            "planted_window": u.planted_window,
            "selected_window": p.selected,
            "active_windows": p.dist.active,
            "q": p.dist.q,
            "scores": p.scores,
            "fields": fields,
        });
        lines.push(serde_json::to_string(&record)?);
    }
    for line in &lines {
        println!("{line}");
    }
    if let Some(out) = out {
        write_atomic(&out, |tmp| Ok(fs::write(tmp, lines.join("\n") + "\n")?))?;
    }
    Ok(())
}
