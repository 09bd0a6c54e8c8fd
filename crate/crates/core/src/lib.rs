//! Targeted preselection of texts (TPoT) for Big Five personality scoring.
//!
//! An author's sentences are compared against BFI-2 survey-item sentences,
//! weighted by semantic relevance and pooled into a document embedding that
//! feeds small regression or ordinal heads. The crate also carries the
//! ground-truth scoring rules, a rule-based sentence splitter, embedding
//! backends with an on-disk cache, and a cross-validation harness.
//!
//! ```
//! use tpot_core::catalog::Catalog;
//! use tpot_core::embedding::{embed_batch, DeterministicBackend};
//! use tpot_core::tpot::{tpot_document_embedding, CatalogEmbeddings};
//!
//! let catalog = Catalog::bundled();
//! let backend = DeterministicBackend::new(7, 64).with_catalog(&catalog);
//! let items = CatalogEmbeddings::embed(&catalog, &backend).unwrap();
//! let anxiety = items.target(&catalog, catalog.target_by_name("N_Anx").unwrap());
//! let worry = catalog.items()[18].statement.clone();
//! let sentences = embed_batch(&backend, &[worry, "The bus was late.".to_string()]).unwrap();
//! let doc = tpot_document_embedding(&sentences, &anxiety, 0.2).unwrap();
//! assert_eq!(doc.n_sentences_used, 1);
//! ```

pub mod catalog;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod models;
pub mod synthetic;
pub mod textprep;
pub mod tpot;

pub use error::{Error, Result};
