use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mris_core::config::RunConfig;
use mris_core::datakit::{
    array_save, dataset_load, dataset_save, denormalize_target, generate_synthetic, Dataset, Split,
};
use mris_core::embedding_db::EmbeddingDatabase;
use mris_core::evaluation::{
    downstream_probe, metric_lines, random_neighbor_baseline, recall_at_k, summary_table,
    synthesis_error_report, RecallReport, RECALL_KS,
};
use mris_core::numerics::{load_encoder, save_encoder};
use mris_core::pipeline::{build_database, GroupModel, Preprocess, Synthesizer};
use mris_core::train::train_with;
use mris_core::{MrisError, RecordId, Result};

pub type Handler = fn(&RunConfig) -> Result<()>;

pub fn with_threads(cfg: &RunConfig, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    if cfg.threads == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| MrisError::Config(format!("cannot start {} threads: {e}", cfg.threads)))?
        .install(f)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MrisError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| MrisError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| MrisError::io(path, e))
}

fn snapshot(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    write_text(&dir.join(format!("{command}.config")), &cfg.to_text())
}

fn group_path(cfg: &RunConfig, stem: &str, group: usize, ext: &str) -> PathBuf {
    cfg.run_dir.join(format!("{stem}_g{group}.{ext}"))
}

/// Per-group preprocessing, one entry per target row band.
fn group_preps(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<Preprocess>> {
    let base = cfg.preprocess();
    Ok(cfg
        .groups
        .ranges(ds.shape.height)?
        .into_iter()
        .map(|r| base.with_rows(Some(r)))
        .collect())
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    let syn = generate_synthetic(&cfg.generator)?;
    dataset_save(&syn.dataset, &cfg.data_dir)?;
    snapshot(&cfg.data_dir, "generate", cfg)?;
    let counts: Vec<usize> = Split::ALL
        .iter()
        .map(|&s| syn.dataset.subjects_in(s).len())
        .collect();
    log::info!(
        "wrote {} samples ({} train_db / {} downstream / {} test subjects) to {}",
        syn.dataset.samples.len(),
        counts[0],
        counts[1],
        counts[2],
        cfg.data_dir.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let ds = dataset_load(&cfg.data_dir)?;
    create_dir(&cfg.run_dir)?;
    let mut history = String::from(
        "group,epoch,loss,loss_per_term,active_fraction,query_lr,target_lr,batches,samples\n",
    );
    for (g, prep) in group_preps(cfg, &ds)?.iter().enumerate() {
        log::info!("training group {g} ({} epochs)", cfg.train.epochs);
        let every = (cfg.train.epochs / 10).max(1);
        let model = train_with(&ds, prep, &cfg.train, |log| {
            if log.epoch % every == 0 || log.epoch + 1 == cfg.train.epochs {
                log::info!(
                    "group {g} epoch {}: loss {:.6} ({:.1}% active)",
                    log.epoch,
                    log.loss,
                    100.0 * log.active_fraction
                );
            }
        })?;
        for h in &model.history {
            let _ = writeln!(
                history,
                "{g},{},{},{},{},{},{},{},{}",
                h.epoch,
                h.loss,
                h.loss_per_term,
                h.active_fraction,
                h.query_lr,
                h.target_lr,
                h.batches,
                h.samples
            );
        }
        save_encoder(&model.query, &group_path(cfg, "query", g, "mrse"))?;
        save_encoder(&model.target, &group_path(cfg, "target", g, "mrse"))?;
    }
    write_text(&cfg.run_dir.join("history.csv"), &history)?;
    snapshot(&cfg.run_dir, "train", cfg)
}

pub fn embed(cfg: &RunConfig) -> Result<()> {
    let ds = dataset_load(&cfg.data_dir)?;
    let samples = ds.samples_in(Split::TrainDb);
    for (g, prep) in group_preps(cfg, &ds)?.iter().enumerate() {
        let encoder = load_encoder(&group_path(cfg, "target", g, "mrse"))?;
        let rows: Vec<String> = samples
            .par_iter()
            .map(|s| {
                let e = encoder.embed(&prep.target_input(s, ds.shape)?)?;
                let values: Vec<String> = e.iter().map(f64::to_string).collect();
                Ok(format!("{},{},{}", s.id.subject, s.id.timepoint, values.join(",")))
            })
            .collect::<Result<_>>()?;
        let mut text = String::from("subject,timepoint,embedding...\n");
        for r in rows {
            text.push_str(&r);
            text.push('\n');
        }
        write_text(&group_path(cfg, "embeddings", g, "csv"), &text)?;
        log::info!("group {g}: embedded {} targets", samples.len());
    }
    snapshot(&cfg.run_dir, "embed", cfg)
}

fn parse_embeddings(path: &Path) -> Result<Vec<(RecordId, Vec<f64>)>> {
    let text = read_text(path)?;
    let bad = |n: usize, why: &str| MrisError::format(path, format!("line {}: {why}", n + 1));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let subject = fields.next().ok_or_else(|| bad(n, "missing subject"))?;
        let timepoint = fields
            .next()
            .and_then(|t| t.parse::<u32>().ok())
            .ok_or_else(|| bad(n, "bad timepoint"))?;
        let values = fields
            .map(|v| v.parse::<f64>().map_err(|_| bad(n, "bad embedding value")))
            .collect::<Result<Vec<_>>>()?;
        out.push((RecordId::new(subject, timepoint), values));
    }
    Ok(out)
}

pub fn index(cfg: &RunConfig) -> Result<()> {
    let ds = dataset_load(&cfg.data_dir)?;
    let by_id: std::collections::HashMap<&RecordId, _> =
        ds.samples.iter().map(|s| (&s.id, s)).collect();
    for (g, prep) in group_preps(cfg, &ds)?.iter().enumerate() {
        let shape = prep.group_shape(ds.shape)?;
        let mut db = EmbeddingDatabase::new();
        for (id, emb) in parse_embeddings(&group_path(cfg, "embeddings", g, "csv"))? {
            let sample = by_id
                .get(&id)
                .ok_or_else(|| MrisError::MissingId(format!("{id} is not in the dataset")))?;
            let target: Vec<f32> =
                prep.target_input(sample, ds.shape)?.iter().map(|&v| v as f32).collect();
            db.insert(id, &emb, &target, shape)?;
        }
        db.save(&group_path(cfg, "db", g, "mrdb"))?;
        log::info!("group {g}: indexed {} records", db.len());
    }
    snapshot(&cfg.run_dir, "index", cfg)
}

fn load_synthesizer(cfg: &RunConfig, ds: &Dataset) -> Result<Synthesizer> {
    let groups = group_preps(cfg, ds)?
        .into_iter()
        .enumerate()
        .map(|(g, prep)| {
            Ok(GroupModel {
                prep,
                query: load_encoder(&group_path(cfg, "query", g, "mrse"))?,
                db: EmbeddingDatabase::load(&group_path(cfg, "db", g, "mrdb"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Synthesizer::new(ds.shape, groups, cfg.synthesis)
}

pub fn synthesize(cfg: &RunConfig) -> Result<()> {
    let ds = dataset_load(&cfg.data_dir)?;
    let synth = load_synthesizer(cfg, &ds)?;
    let out_dir = cfg.run_dir.join("synth");
    create_dir(&out_dir)?;
    let samples = ds.samples_in(Split::Test);
    let results = samples
        .par_iter()
        .map(|s| synth.synthesize(s))
        .collect::<Result<Vec<_>>>()?;
    let ranges = cfg.groups.ranges(ds.shape.height)?;
    for (s, r) in samples.iter().zip(&results) {
        let stem = format!("{}_t{}", s.id.subject, s.id.timepoint);
        let image: Vec<f32> = denormalize_target(&r.image).iter().map(|&v| v as f32).collect();
        array_save(&out_dir.join(format!("{stem}.bin")), &image)?;
        let mut report = format!(
            "# query {}\n# shape {}x{}\n# k {}\n",
            s.id, ds.shape.height, ds.shape.width, cfg.synthesis.k
        );
        for ((part, rows), g) in r.parts.iter().zip(&ranges).zip(0..) {
            let _ = writeln!(report, "# group {g} rows {}-{}", rows.start, rows.end);
            report.push_str(&part.report());
        }
        write_text(&out_dir.join(format!("{stem}.txt")), &report)?;
    }
    log::info!("synthesized {} images into {}", results.len(), out_dir.display());
    snapshot(&out_dir, "synthesize", cfg)
}

fn recall_lines(out: &mut String, prefix: &str, r: &RecallReport) {
    for (k, v) in &r.recall {
        let _ = writeln!(out, "{prefix}recall_at_{k},all,{v:.4}");
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let ds = dataset_load(&cfg.data_dir)?;
    let synth = load_synthesizer(cfg, &ds)?;
    let test = ds.baseline_samples(Split::Test);
    if test.is_empty() {
        return Err(MrisError::Empty("test split"));
    }

    let mut recalls = Vec::new();
    for (g, model) in synth.groups.iter().enumerate() {
        let target = load_encoder(&group_path(cfg, "target", g, "mrse"))?;
        let db = build_database(&target, &test, &model.prep, ds.shape)?;
        recalls.push(recall_at_k(&test, &model.query, &model.prep, &db, &RECALL_KS)?);
    }

    let strata: Vec<u8> = ds
        .samples
        .iter()
        .map(|s| s.stratum)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let errors = synthesis_error_report(&test, &synth, &strata)?;
    let baseline = random_neighbor_baseline(&test, &synth, &strata, cfg.baseline_seed)?;

    let down = ds.samples_in(Split::Downstream);
    let probe = if down.is_empty() {
        log::warn!("downstream split is empty; skipping the probe");
        None
    } else {
        let classes = strata.last().map_or(0, |&m| m as usize + 1);
        Some(downstream_probe(&down, &ds.samples_in(Split::Test), &synth, classes, &cfg.probe)?)
    };

    let single = (recalls.len() == 1).then(|| &recalls[0]);
    let mut metrics = metric_lines(single, Some(&errors), Some(&baseline), probe.as_ref());
    let mut table = summary_table(single, Some(&errors), Some(&baseline), probe.as_ref());
    if single.is_none() {
        let mut extra = String::new();
        let mut head = String::new();
        for (g, r) in recalls.iter().enumerate() {
            recall_lines(&mut extra, &format!("g{g}_"), r);
            let _ = writeln!(head, "Retrieval, group {g} ({} queries)", r.queries);
            for (k, v) in &r.recall {
                let _ = writeln!(head, "  R@{k:<3} {v:7.2}%");
            }
        }
        let header_end = metrics.find('\n').map_or(0, |i| i + 1);
        metrics.insert_str(header_end, &extra);
        table.insert_str(0, &head);
    }
    write_text(&cfg.run_dir.join("metrics.csv"), &metrics)?;
    write_text(&cfg.run_dir.join("report.txt"), &table)?;
    snapshot(&cfg.run_dir, "evaluate", cfg)?;
    print!("{table}");
    Ok(())
}
