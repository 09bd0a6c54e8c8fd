use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use serde::Deserialize;
use tpot_core::catalog::{load_catalog, Catalog, Level};
use tpot_core::embedding::{
    CachedBackend, DeterministicBackend, EmbeddingBackend, EmbeddingCache, HttpBackend,
    TopicRegistry, DEFAULT_DIM,
};
use tpot_core::experiment::{ExperimentConfig, FoldStrategy, ModelKind};
use tpot_core::{Error, Result};

pub const CACHE_ENV: &str = "TPOT_CACHE_DIR";

/// Flags shared by every command. Unset flags fall back to the config file,
/// then to built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON Lines dataset of essays
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Item catalog JSON (defaults to the bundled BFI-2 catalog)
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    /// Embedding backend: `test:<seed>[:<topics.json>]` or `http:<url>`
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Vector size of the test backend
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Relevance threshold in [0, 1)
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Accuracy tolerance
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Master seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// baseline | m1 | m2 | m3
    #[arg(long, global = true)]
    pub model: Option<ModelKind>,
    /// trait | facet | item
    #[arg(long, global = true)]
    pub level: Option<Level>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Write per-sentence relevance as JSON Lines
    #[arg(long, global = true)]
    pub dump_relevance: bool,
    /// resample | rotate
    #[arg(long, global = true)]
    pub strategy: Option<FoldStrategy>,
    /// JSON file with defaults for any of the above
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<PathBuf>,
    catalog: Option<PathBuf>,
    backend: Option<String>,
    dim: Option<usize>,
    delta: Option<f64>,
    epsilon: Option<f64>,
    folds: Option<usize>,
    seed: Option<u64>,
    model: Option<ModelKind>,
    level: Option<Level>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    strategy: Option<FoldStrategy>,
    hidden: Option<usize>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    patience: Option<usize>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub backend: String,
    pub dim: usize,
    pub model: ModelKind,
    pub level: Level,
    pub out: PathBuf,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<FileConfig>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let mut experiment = ExperimentConfig::default();
        macro_rules! pick {
            ($field:ident, $target:expr) => {
                if let Some(v) = args.$field.clone().or(file.$field.clone()) {
                    $target = v;
                }
            };
        }
        pick!(delta, experiment.delta);
        pick!(epsilon, experiment.epsilon);
        pick!(folds, experiment.folds);
        pick!(seed, experiment.seed);
        pick!(jobs, experiment.jobs);
        pick!(strategy, experiment.strategy);
        pick!(hidden, experiment.train.hidden);
        pick!(learning_rate, experiment.train.learning_rate);
        pick!(epochs, experiment.train.epochs);
        if let Some(v) = file.batch_size {
            experiment.train.batch_size = v;
        }
        if let Some(v) = file.patience {
            experiment.train.patience = v;
        }
        experiment.dump_relevance = args.dump_relevance;
        experiment.validate()?;

        let config = Self {
            dataset: args.dataset.clone().or(file.dataset),
            catalog: args.catalog.clone().or(file.catalog),
            backend: args
                .backend
                .clone()
                .or(file.backend)
                .unwrap_or_else(|| "test:0".into()),
            dim: args.dim.or(file.dim).unwrap_or(DEFAULT_DIM),
            model: args.model.or(file.model).unwrap_or(ModelKind::M2),
            level: args.level.or(file.level).unwrap_or(Level::Trait),
            out: args.out.clone().or(file.out).unwrap_or_else(|| "out".into()),
            experiment,
        };
        for path in config.dataset.iter().chain(&config.catalog) {
            if !path.exists() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
        }
        Ok(config)
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("--dataset is required".into()))
    }

    pub fn catalog(&self) -> Result<Catalog> {
        match &self.catalog {
            Some(p) => load_catalog(p),
            None => Ok(Catalog::bundled()),
        }
    }

    pub fn create_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", self.out.display())))
    }

    fn cache_dir(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out.join("cache"))
    }

    /// The configured backend behind the on-disk embedding cache.
    pub fn backend(&self, catalog: &Catalog) -> Result<CachedBackend<Arc<dyn EmbeddingBackend>>> {
        let inner: Arc<dyn EmbeddingBackend> = if let Some(rest) = self.backend.strip_prefix("test:") {
            let (seed, topics) = match rest.split_once(':') {
                Some((s, t)) => (s, Some(t)),
                None => (rest, None),
            };
            let seed: u64 = seed
                .parse()
                .map_err(|_| Error::Config(format!("bad test backend seed '{seed}'")))?;
            if self.dim < 2 {
                return Err(Error::Config("--dim must be at least 2".into()));
            }
            let mut b = DeterministicBackend::new(seed, self.dim).with_catalog(catalog);
            if let Some(t) = topics {
                b = b.with_registry(&TopicRegistry::load(t)?);
            }
            Arc::new(b)
        } else if let Some(url) = self.backend.strip_prefix("http:") {
            // accept both `http:host:port` and `http:http://host:port`
            let url = if url.starts_with("http://") || url.starts_with("https://") {
                url.to_string()
            } else {
                format!("http://{}", url.trim_start_matches('/'))
            };
            Arc::new(HttpBackend::connect(&url)?)
        } else {
            return Err(Error::Config(format!(
                "unknown backend '{}'; expected test:<seed> or http:<url>",
                self.backend
            )));
        };
        let dir = self.cache_dir();
        std::fs::create_dir_all(&dir)
            .map_err(|e| Error::Config(format!("cannot create cache {}: {e}", dir.display())))?;
        let cache = EmbeddingCache::open(dir.join("embeddings.cache"))?;
        Ok(CachedBackend::new(inner, Arc::new(cache)))
    }
}
