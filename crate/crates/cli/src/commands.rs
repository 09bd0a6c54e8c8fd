use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use indexmap::IndexMap;
use serde::Serialize;
use tpot_core::catalog::{Catalog, Level, Target};
use tpot_core::embedding::{BackendDescriptor, EmbeddingBackend};
use tpot_core::experiment::{
    aggregate_predictions, comparison_table, run_experiment, Featurizer, Metric, MetricReport,
    ModelKind, PredictionSet,
};
use tpot_core::models::{Checkpoint, Head, HeadKind};
use tpot_core::synthetic::{generate, SyntheticConfig};
use tpot_core::textprep::{corpus_stats, load_dataset, write_dataset};
use tpot_core::tpot::{CatalogEmbeddings, RelevanceRecord};
use tpot_core::{Error, Result};

use crate::config::RunConfig;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

pub fn checkpoint_path(dir: &Path, fold: usize, target: &str) -> PathBuf {
    dir.join(format!("fold{fold:02}")).join(format!("{target}.ckpt"))
}

fn report_stem(model: ModelKind, level: Level) -> String {
    format!("{model}_{level}")
}

pub fn stats(cfg: &RunConfig) -> Result<()> {
    let records = load_dataset(cfg.dataset()?)?;
    let catalog = cfg.catalog()?;
    let backend = cfg.backend(&catalog)?;
    let stats = corpus_stats(&records, &backend)?;
    print!("{}", stats.to_table());
    cfg.create_out()?;
    let path = cfg.out.join("stats.json");
    let mut json = serde_json::to_string_pretty(&stats)?;
    json.push('\n');
    write_file(&path, json.as_bytes())
}

/// Loads a catalog archive when given, checking it against the backend;
/// otherwise embeds the catalog through the (cached) backend.
fn catalog_embeddings<B: EmbeddingBackend + ?Sized>(
    archive: Option<&Path>,
    catalog: &Catalog,
    backend: &B,
) -> Result<CatalogEmbeddings> {
    match archive {
        Some(p) => CatalogEmbeddings::load(p, Some(backend.descriptor())),
        None => CatalogEmbeddings::embed(catalog, backend),
    }
}

pub fn embed_catalog(cfg: &RunConfig, archive: Option<&Path>) -> Result<()> {
    let catalog = cfg.catalog()?;
    let backend = cfg.backend(&catalog)?;
    let items = CatalogEmbeddings::embed(&catalog, &backend)?;
    cfg.create_out()?;
    let path = archive
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out.join("catalog_embeddings.bin"));
    items.save(&path)?;
    println!(
        "wrote {} item embeddings from {} to {}",
        items.statements().len() + items.reverses().len(),
        items.backend.name,
        path.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, archive: Option<&Path>) -> Result<()> {
    let records = load_dataset(cfg.dataset()?)?;
    let catalog = cfg.catalog()?;
    let backend = cfg.backend(&catalog)?;
    let items = match cfg.model.uses_tpot() {
        true => Some(catalog_embeddings(archive, &catalog, &backend)?),
        false => None,
    };
    cfg.create_out()?;
    let dir = cfg.out.join("checkpoints");

    // workers hand finished heads to one writer thread
    let (tx, rx) = mpsc::channel::<(usize, String, Checkpoint)>();
    let writer = {
        let dir = dir.clone();
        std::thread::spawn(move || -> Result<usize> {
            let mut n = 0;
            for (fold, target, ck) in rx {
                let path = checkpoint_path(&dir, fold, &target);
                let parent = path.parent().expect("checkpoint has a fold directory");
                std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
                ck.save(&path)?;
                n += 1;
            }
            Ok(n)
        })
    };
    let sink = move |fold: usize, target: &str, ck: &Checkpoint| -> Result<()> {
        tx.send((fold, target.to_string(), ck.clone()))
            .map_err(|_| Error::Contract("checkpoint writer stopped".into()))
    };
    let result = run_experiment(
        &records,
        &catalog,
        &backend,
        items.as_ref(),
        cfg.model,
        cfg.level,
        &cfg.experiment,
        Some(&sink),
    );
    drop(sink);
    let written = writer
        .join()
        .map_err(|_| Error::Contract("checkpoint writer panicked".into()))??;
    let output = result?;
    let plans = serde_json::to_string_pretty(&output.folds)?;
    write_file(&cfg.out.join("folds.json"), plans.as_bytes())?;
    println!("wrote {written} checkpoints to {}", dir.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, archive: Option<&Path>) -> Result<MetricReport> {
    let records = load_dataset(cfg.dataset()?)?;
    let catalog = cfg.catalog()?;
    let backend = cfg.backend(&catalog)?;
    let items = match cfg.model.uses_tpot() {
        true => Some(catalog_embeddings(archive, &catalog, &backend)?),
        false => None,
    };
    let output = run_experiment(
        &records,
        &catalog,
        &backend,
        items.as_ref(),
        cfg.model,
        cfg.level,
        &cfg.experiment,
        None,
    )?;
    cfg.create_out()?;
    let stem = report_stem(cfg.model, cfg.level);
    output.report.save(cfg.out.join(format!("report_{stem}.json")))?;
    let table = output.report.to_table();
    write_file(&cfg.out.join(format!("report_{stem}.txt")), table.as_bytes())?;
    if cfg.experiment.dump_relevance {
        write_jsonl(&cfg.out.join(format!("relevance_{stem}.jsonl")), &output.relevance)?;
    }
    print!("{table}");
    Ok(output.report)
}

#[derive(Serialize)]
struct PredictionLine {
    author_id: String,
    #[serde(flatten)]
    scores: PredictionSet,
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    n_sentences_used: IndexMap<String, usize>,
}

fn expected_kind(model: ModelKind) -> HeadKind {
    match model {
        ModelKind::Baseline => HeadKind::Constant,
        ModelKind::M1 | ModelKind::M2 => HeadKind::Regression,
        ModelKind::M3 => HeadKind::Ordinal,
    }
}

fn load_head(
    dir: &Path,
    fold: usize,
    name: &str,
    model: ModelKind,
    backend: &BackendDescriptor,
) -> Result<Checkpoint> {
    let path = checkpoint_path(dir, fold, name);
    let ck = Checkpoint::load(&path).map_err(|e| match e {
        Error::MissingArtifact(_) => Error::MissingArtifact(format!(
            "no checkpoint for fold {fold}, target {name} ({})",
            path.display()
        )),
        other => other,
    })?;
    if ck.header.kind != expected_kind(model) {
        return Err(Error::Contract(format!(
            "{} holds a {:?} head, model {model} needs {:?}",
            path.display(),
            ck.header.kind,
            expected_kind(model)
        )));
    }
    if let Some(b) = &ck.header.backend {
        if b != backend {
            return Err(Error::Contract(format!(
                "{} was trained with backend {} (dim {}), predicting with {} (dim {})",
                path.display(),
                b.name,
                b.dim,
                backend.name,
                backend.dim
            )));
        }
    }
    Ok(ck)
}

pub fn predict(
    cfg: &RunConfig,
    archive: Option<&Path>,
    checkpoints: Option<&Path>,
    fold: usize,
) -> Result<()> {
    cfg.model.check_level(cfg.level)?;
    let records = load_dataset(cfg.dataset()?)?;
    if records.is_empty() {
        return Err(Error::Validation("no records".into()));
    }
    let catalog = cfg.catalog()?;
    let backend = cfg.backend(&catalog)?;
    let dir = checkpoints
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out.join("checkpoints"));
    let targets: Vec<Target> = catalog.targets(cfg.level).collect();
    let heads = targets
        .iter()
        .map(|&t| load_head(&dir, fold, &catalog.target_name(t), cfg.model, backend.descriptor()))
        .collect::<Result<Vec<_>>>()?;

    let items = match cfg.model.uses_tpot() {
        true => Some(catalog_embeddings(archive, &catalog, &backend)?),
        false => None,
    };
    let featurizer = Featurizer {
        backend: &backend,
        catalog: &catalog,
        items: items.as_ref(),
        delta: cfg.experiment.delta,
    };
    let corpus = featurizer.prepare(&records, cfg.model)?;

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(targets.len());
    let mut relevance: Vec<RelevanceRecord> = Vec::new();
    for (&target, ck) in targets.iter().zip(&heads) {
        let feats = featurizer.features(&corpus, cfg.model, target, true)?;
        let preds: Vec<f64> = match ck.header.kind {
            HeadKind::Constant => vec![ck.params[0]; records.len()],
            HeadKind::Regression => {
                let h = ck.regression()?;
                feats.rows.iter().map(|x| h.predict(x).clamp(1.0, 5.0)).collect()
            }
            HeadKind::Ordinal => {
                let h = ck.ordinal()?;
                feats.rows.iter().map(|x| h.predict(x)).collect()
            }
        };
        columns.push(preds);
        relevance.extend(feats.relevance);
    }

    let mut lines = Vec::with_capacity(records.len());
    for (a, record) in records.iter().enumerate() {
        let row: Vec<Option<f64>> = columns.iter().map(|c| Some(c[a])).collect();
        let n_sentences_used = relevance
            .iter()
            .filter(|r| r.author_id == record.author_id)
            .map(|r| (r.target.clone(), r.n_used))
            .collect();
        lines.push(PredictionLine {
            author_id: record.author_id.clone(),
            scores: aggregate_predictions(cfg.level, &row, &catalog)?,
            n_sentences_used,
        });
    }
    let degenerate = relevance.iter().filter(|r| r.n_used == 0).count();
    if degenerate > 0 {
        log::warn!("{degenerate} (author, target) pairs had no relevant sentence");
    }

    cfg.create_out()?;
    let stem = report_stem(cfg.model, cfg.level);
    let path = cfg.out.join(format!("predictions_{stem}.jsonl"));
    write_jsonl(&path, &lines)?;
    if cfg.experiment.dump_relevance {
        write_jsonl(&cfg.out.join(format!("relevance_predict_{stem}.jsonl")), &relevance)?;
    }
    println!("wrote {} predictions to {}", lines.len(), path.display());
    Ok(())
}

pub fn synth(cfg: &RunConfig, authors: usize) -> Result<()> {
    let catalog = cfg.catalog()?;
    let corpus = generate(
        &catalog,
        &SyntheticConfig {
            authors,
            seed: cfg.experiment.seed,
            ..SyntheticConfig::default()
        },
    )?;
    cfg.create_out()?;
    let data = cfg.out.join("synthetic.jsonl");
    let topics = cfg.out.join("topics.json");
    write_dataset(&data, &corpus.records)?;
    corpus.registry.save(&topics)?;
    println!(
        "wrote {} essays to {} and topics to {}",
        corpus.records.len(),
        data.display(),
        topics.display()
    );
    Ok(())
}

pub fn compare(reports: &[PathBuf], metric: Metric) -> Result<()> {
    let loaded = reports
        .iter()
        .map(MetricReport::load)
        .collect::<Result<Vec<_>>>()?;
    let table = comparison_table(&loaded, metric)?;
    let mut out = std::io::stdout().lock();
    out.write_all(table.as_bytes())
        .map_err(|e| io_err(Path::new("<stdout>"), e))
}
