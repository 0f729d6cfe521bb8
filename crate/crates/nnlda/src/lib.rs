//! Topic modeling with document-specific Dirichlet priors.
//!
//! The library trains latent Dirichlet allocation variants by variational EM
//! and differs from plain LDA in where the document prior comes from:
//!
//! * `lda` / `lda-opt`: a single shared Dirichlet parameter, fixed or learned.
//! * `dmr`: a log-linear map from side information (categorical metadata such
//!   as product or rating columns) to the Dirichlet parameter.
//! * `nnlda`: a small feed-forward network mapping side information to the
//!   Dirichlet parameter, trained jointly with the topics.
//!
//! Modules follow the pipeline: [`corpus`] builds bag-of-words corpora from
//! CSV files or the synthetic generator, [`numerics`] supplies the special
//! functions, [`neural_prior`] holds the prior network and its optimizer,
//! [`inference`] runs variational EM, and [`evaluation`] measures perplexity,
//! grouping quality, classification lift, and comment generation.

pub mod corpus;
pub mod evaluation;
pub mod inference;
pub mod neural_prior;
pub mod numerics;

/// Errors surfaced by corpus construction, training, and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("model file parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
