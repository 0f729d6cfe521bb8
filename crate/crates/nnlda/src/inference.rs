//! Variational EM for the LDA family.
//!
//! The variational family factorizes per document into a Dirichlet over the
//! topic mixture (parameter eta) and one categorical per distinct word
//! (parameters phi). The E-step runs coordinate ascent on (phi, eta) to a
//! mean-change tolerance; the M-step re-estimates the topic-word matrix in
//! closed form and pushes the prior parameters uphill on the Dirichlet term
//! of the bound, by whatever route the prior kind allows (no-op for fixed
//! priors, gradient ascent for the shared and log-linear priors, Adam
//! minibatches for the network prior).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, SideSchema, Vocabulary};
use crate::neural_prior::{adam_step, AdamState, PriorGrads, PriorNet, ALPHA_FLOOR};
use crate::numerics::{digamma_raw, lgamma_raw, log_sum_exp};
use crate::{Error, Result};

/// Floor on topic-word probabilities (applied before renormalizing).
pub const BETA_FLOOR: f64 = 1e-12;

/// Cap on log-linear prior logits so exp stays finite.
const LOGIT_CAP: f64 = 300.0;

/// Which prior family a model was trained with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorKind {
    /// Fixed symmetric Dirichlet parameter.
    #[serde(rename = "lda")]
    Lda,
    /// Shared Dirichlet parameter optimized by gradient ascent.
    #[serde(rename = "lda-opt")]
    LdaOpt,
    /// Log-linear map from side features to the Dirichlet parameter.
    #[serde(rename = "dmr")]
    Dmr,
    /// Feed-forward network from side features to the Dirichlet parameter.
    #[serde(rename = "nnlda")]
    NnLda,
}

impl PriorKind {
    pub fn is_side_conditioned(self) -> bool {
        matches!(self, PriorKind::Dmr | PriorKind::NnLda)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PriorKind::Lda => "lda",
            PriorKind::LdaOpt => "lda-opt",
            PriorKind::Dmr => "dmr",
            PriorKind::NnLda => "nnlda",
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lda" => Ok(PriorKind::Lda),
            "lda-opt" => Ok(PriorKind::LdaOpt),
            "dmr" => Ok(PriorKind::Dmr),
            "nnlda" => Ok(PriorKind::NnLda),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?}; expected lda, lda-opt, dmr, or nnlda"
            ))),
        }
    }
}

/// Prior parameters, by family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PriorSpec {
    /// One shared Dirichlet parameter for every document.
    Fixed { alpha: Vec<f64> },
    /// alpha_d = exp(lambda [s_d; 1]); rows of lambda are per-topic, the
    /// trailing column is the bias.
    LogLinear { lambda: Vec<Vec<f64>> },
    /// alpha_d produced by a small network, trained with Adam.
    Neural {
        net: PriorNet,
        optimizer: AdamState,
    },
}

impl PriorSpec {
    /// The document-specific Dirichlet parameter for a side vector. Fixed
    /// priors ignore the side vector entirely.
    pub fn prior_of(&self, side: &[f64]) -> Result<Vec<f64>> {
        match self {
            PriorSpec::Fixed { alpha } => Ok(alpha.clone()),
            PriorSpec::LogLinear { lambda } => {
                let q = lambda.first().map_or(1, Vec::len) - 1;
                if side.len() != q {
                    return Err(Error::Dimension(format!(
                        "side vector has {} entries, log-linear prior expects {q}",
                        side.len()
                    )));
                }
                Ok(lambda
                    .iter()
                    .map(|row| {
                        let logit = dot(&row[..q], side) + row[q];
                        logit.clamp(-LOGIT_CAP, LOGIT_CAP).exp()
                    })
                    .collect())
            }
            PriorSpec::Neural { net, .. } => Ok(net.forward(side)?.0),
        }
    }

    pub fn num_topics(&self) -> usize {
        match self {
            PriorSpec::Fixed { alpha } => alpha.len(),
            PriorSpec::LogLinear { lambda } => lambda.len(),
            PriorSpec::Neural { net, .. } => net.num_topics(),
        }
    }
}

/// Per-document variational parameters. `phi` rows align with the
/// document's distinct-word `counts` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DocState {
    pub eta: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
}

/// Variational parameters for a whole corpus, document-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    pub docs: Vec<DocState>,
}

/// One EM round's logged objective value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRound {
    pub round: u32,
    pub elbo: f64,
}

/// Optional initialization from an already-trained model: topic rows plus a
/// shared Dirichlet parameter the prior should start out reproducing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub beta: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
}

/// Training hyperparameters. The defaults are the reference configuration;
/// tests and the CLI override individual fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Stop when |delta ELBO| / |ELBO| drops below this between rounds.
    pub elbo_rel_tol: f64,
    pub max_rounds: u32,
    /// E-step coordinate ascent: mean absolute change in eta below this.
    pub e_step_tol: f64,
    pub e_step_max_iters: u32,
    /// Shared Dirichlet parameter for `lda` (and the starting point for
    /// `lda-opt`).
    pub fixed_alpha: f64,
    /// Hidden width of the network prior.
    pub hidden_dim: usize,
    /// Minibatch size for the network prior's Adam epoch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fixed step for the log-linear prior's full-batch ascent.
    pub dmr_step: f64,
    /// Gaussian prior variance on the log-linear weights.
    pub dmr_sigma2: f64,
    /// Full-batch ascent iterations per EM round for the log-linear prior.
    pub dmr_iters_per_round: u32,
    /// Step and iterations for the shared-alpha ascent of `lda-opt`.
    pub alpha_opt_step: f64,
    pub alpha_opt_iters: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<WarmStart>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            elbo_rel_tol: 1e-4,
            max_rounds: 200,
            e_step_tol: 1e-6,
            e_step_max_iters: 100,
            fixed_alpha: 1.0,
            hidden_dim: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 0.1,
            dmr_step: 1e-3,
            dmr_sigma2: 10.0,
            dmr_iters_per_round: 25,
            alpha_opt_step: 0.05,
            alpha_opt_iters: 20,
            warm_start: None,
        }
    }
}

/// A trained topic model: topics, prior, and everything needed to reproduce
/// or evaluate the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub prior_kind: PriorKind,
    /// K x V topic-word rows, each summing to 1.
    pub beta: Vec<Vec<f64>>,
    pub prior: PriorSpec,
    pub vocabulary: Vocabulary,
    pub side_schema: SideSchema,
    pub training_log: Vec<TrainingRound>,
    pub seed: u64,
    pub config: TrainConfig,
}

impl TopicModel {
    pub fn num_topics(&self) -> usize {
        self.beta.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.beta.first().map_or(0, Vec::len)
    }

    pub fn final_elbo(&self) -> f64 {
        self.training_log.last().map_or(f64::NAN, |r| r.elbo)
    }

    /// Top-n terms per topic by topic-word probability; ties broken by
    /// vocabulary id. Requests beyond the vocabulary are capped with a
    /// warning.
    pub fn top_words(&self, n: usize) -> Vec<Vec<(String, f64)>> {
        let v = self.vocab_size();
        let n = if n > v {
            log::warn!("requested {n} top words but the vocabulary has {v}; capping");
            v
        } else {
            n
        };
        self.beta
            .iter()
            .map(|row| {
                let mut ids: Vec<u32> = (0..v as u32).collect();
                ids.sort_by(|&a, &b| {
                    row[b as usize]
                        .partial_cmp(&row[a as usize])
                        .expect("finite probabilities")
                        .then(a.cmp(&b))
                });
                ids.truncate(n);
                ids.into_iter()
                    .map(|id| {
                        (
                            self.vocabulary.term(id).expect("id in range").to_string(),
                            row[id as usize],
                        )
                    })
                    .collect()
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn validate_alpha(alpha: &[f64]) -> Result<()> {
    for (i, &a) in alpha.iter().enumerate() {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Domain(format!(
                "Dirichlet parameter entry {i} must be positive and finite, got {a}"
            )));
        }
    }
    Ok(())
}

/// The Dirichlet prior term of the per-document bound:
/// lgamma(sum alpha) - sum lgamma(alpha_i) + sum (alpha_i - 1) E[log theta_i],
/// where E[log theta_i] = digamma(eta_i) - digamma(sum eta).
pub fn dirichlet_prior_term(alpha: &[f64], eta: &[f64]) -> f64 {
    let alpha_sum: f64 = alpha.iter().sum();
    let eta_sum: f64 = eta.iter().sum();
    let dig_eta_sum = digamma_raw(eta_sum);
    let mut value = lgamma_raw(alpha_sum);
    for (&a, &e) in alpha.iter().zip(eta) {
        value -= lgamma_raw(a);
        value += (a - 1.0) * (digamma_raw(e) - dig_eta_sum);
    }
    value
}

/// Gradient of [`dirichlet_prior_term`] with respect to alpha. The terms
/// are grouped so the gradient is exactly zero when eta equals alpha,
/// keeping fixed points of the prior update fixed in floating point.
pub fn dirichlet_prior_gradient(alpha: &[f64], eta: &[f64]) -> Vec<f64> {
    let alpha_sum: f64 = alpha.iter().sum();
    let eta_sum: f64 = eta.iter().sum();
    let sum_part = digamma_raw(alpha_sum) - digamma_raw(eta_sum);
    alpha
        .iter()
        .zip(eta)
        .map(|(&a, &e)| sum_part + (digamma_raw(e) - digamma_raw(a)))
        .collect()
}

/// Full per-document bound for given variational parameters.
fn doc_elbo(doc: &Document, alpha: &[f64], beta: &[Vec<f64>], eta: &[f64], phi: &[Vec<f64>]) -> f64 {
    let eta_sum: f64 = eta.iter().sum();
    let dig_eta_sum = digamma_raw(eta_sum);
    let e_log_theta: Vec<f64> = eta.iter().map(|&e| digamma_raw(e) - dig_eta_sum).collect();

    let mut value = dirichlet_prior_term(alpha, eta);
    // Subtract E[log q(theta)].
    value -= lgamma_raw(eta_sum);
    for (&e, &elt) in eta.iter().zip(&e_log_theta) {
        value += lgamma_raw(e) - (e - 1.0) * elt;
    }
    // Word and topic-assignment terms plus the assignment entropy.
    for (&(word, count), phi_w) in doc.counts.iter().zip(phi) {
        let c = count as f64;
        for (i, &p) in phi_w.iter().enumerate() {
            if p > 0.0 {
                value += c * p * (e_log_theta[i] + beta[i][word as usize].ln() - p.ln());
            }
        }
    }
    value
}

/// Coordinate ascent for one document: returns the converged variational
/// parameters and the document's bound value.
///
/// phi updates are computed in log space and normalized with log-sum-exp;
/// eta is alpha plus expected counts. Iteration stops when the mean absolute
/// change in eta falls below `tol` or after `max_iters` sweeps.
pub fn e_step_document(
    doc: &Document,
    alpha: &[f64],
    beta: &[Vec<f64>],
    tol: f64,
    max_iters: u32,
) -> Result<(DocState, f64)> {
    let k = alpha.len();
    if k == 0 || beta.len() != k {
        return Err(Error::Dimension(format!(
            "alpha has {k} topics but beta has {} rows",
            beta.len()
        )));
    }
    validate_alpha(alpha)?;
    let n = doc.num_tokens() as f64;
    if doc.counts.is_empty() {
        return Err(Error::Schema("cannot run the E-step on an empty document".into()));
    }
    for &(word, _) in &doc.counts {
        if beta.iter().any(|row| row.len() <= word as usize) {
            return Err(Error::Dimension(format!(
                "word id {word} outside the topic-word matrix"
            )));
        }
    }

    // Per-distinct-word log beta columns, hoisted out of the sweep loop.
    let log_beta: Vec<Vec<f64>> = doc
        .counts
        .iter()
        .map(|&(word, _)| beta.iter().map(|row| row[word as usize].ln()).collect())
        .collect();

    let mut eta: Vec<f64> = alpha.iter().map(|&a| a + n / k as f64).collect();
    let mut phi = vec![vec![1.0 / k as f64; k]; doc.counts.len()];
    let mut logits = vec![0.0; k];

    for iter in 0..max_iters {
        let dig_eta: Vec<f64> = eta.iter().map(|&e| digamma_raw(e)).collect();
        let mut new_eta = alpha.to_vec();
        for (w, &(_, count)) in doc.counts.iter().enumerate() {
            for i in 0..k {
                logits[i] = log_beta[w][i] + dig_eta[i];
            }
            let norm = log_sum_exp(&logits);
            let c = count as f64;
            for i in 0..k {
                let p = (logits[i] - norm).exp();
                phi[w][i] = p;
                new_eta[i] += c * p;
            }
        }
        if new_eta.iter().any(|e| !e.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite eta during E-step sweep {iter}"
            )));
        }
        let delta: f64 = eta
            .iter()
            .zip(&new_eta)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / k as f64;
        eta = new_eta;
        if delta < tol {
            break;
        }
    }
    let elbo = doc_elbo(doc, alpha, beta, &eta, &phi);
    if !elbo.is_finite() {
        return Err(Error::Numeric("non-finite document bound after E-step".into()));
    }
    Ok((DocState { eta, phi }, elbo))
}

/// Corpus bound for an existing variational state (no coordinate ascent).
pub fn compute_elbo(corpus: &Corpus, model: &TopicModel, state: &VariationalState) -> Result<f64> {
    if state.docs.len() != corpus.num_docs() {
        return Err(Error::Dimension(format!(
            "state covers {} documents, corpus has {}",
            state.docs.len(),
            corpus.num_docs()
        )));
    }
    let mut total = 0.0;
    for (doc, ds) in corpus.docs.iter().zip(&state.docs) {
        let alpha = model.prior.prior_of(&doc.side)?;
        if ds.phi.len() != doc.counts.len() || ds.eta.len() != model.num_topics() {
            return Err(Error::Dimension(
                "variational state does not match the corpus and model shapes".into(),
            ));
        }
        total += doc_elbo(doc, &alpha, &model.beta, &ds.eta, &ds.phi);
    }
    Ok(total)
}

/// Closed-form update of the topic-word matrix from expected counts.
/// Rows with zero responsibility are reset to uniform with a warning;
/// entries are floored at 1e-12 and renormalized.
pub fn m_step_beta(corpus: &Corpus, state: &VariationalState, k: usize) -> Result<Vec<Vec<f64>>> {
    if state.docs.len() != corpus.num_docs() {
        return Err(Error::Dimension(format!(
            "state covers {} documents, corpus has {}",
            state.docs.len(),
            corpus.num_docs()
        )));
    }
    let v = corpus.vocab_size();
    let mut beta = vec![vec![0.0; v]; k];
    for (d, (doc, ds)) in corpus.docs.iter().zip(&state.docs).enumerate() {
        if ds.phi.len() != doc.counts.len() {
            return Err(Error::Dimension(format!(
                "document {d} state has {} phi rows for {} distinct words",
                ds.phi.len(),
                doc.counts.len()
            )));
        }
        for (&(word, count), phi_w) in doc.counts.iter().zip(&ds.phi) {
            if phi_w.len() != k {
                return Err(Error::Dimension(format!(
                    "document {d} phi row has {} topics, expected {k}",
                    phi_w.len()
                )));
            }
            let c = count as f64;
            for (i, &p) in phi_w.iter().enumerate() {
                beta[i][word as usize] += c * p;
            }
        }
    }
    for (i, row) in beta.iter_mut().enumerate() {
        let sum: f64 = row.iter().sum();
        if sum <= 0.0 {
            log::warn!("topic {i} received zero responsibility; resetting to uniform");
            row.fill(1.0 / v as f64);
            continue;
        }
        let mut floored_sum = 0.0;
        for e in row.iter_mut() {
            *e = (*e / sum).max(BETA_FLOOR);
            floored_sum += *e;
        }
        for e in row.iter_mut() {
            *e /= floored_sum;
        }
    }
    Ok(beta)
}

/// One prior update. What happens depends on the prior kind:
///
/// * `lda`: nothing, the prior is fixed.
/// * `lda-opt`: gradient ascent on the shared parameter (mean per-document
///   gradient, fixed step, floored at the alpha floor).
/// * `dmr`: full-batch gradient ascent on the log-linear weights with a
///   Gaussian prior pulling them toward zero.
/// * `nnlda`: one epoch of shuffled minibatches; each minibatch's mean
///   gradient goes through one Adam step. Minibatches with non-finite
///   gradients are skipped with a warning.
pub fn m_step_prior(
    kind: PriorKind,
    prior: &mut PriorSpec,
    corpus: &Corpus,
    state: &VariationalState,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if state.docs.len() != corpus.num_docs() {
        return Err(Error::Dimension(format!(
            "state covers {} documents, corpus has {}",
            state.docs.len(),
            corpus.num_docs()
        )));
    }
    let m = corpus.num_docs() as f64;
    match (kind, prior) {
        (PriorKind::Lda, PriorSpec::Fixed { .. }) => Ok(()),
        (PriorKind::LdaOpt, PriorSpec::Fixed { alpha }) => {
            for _ in 0..config.alpha_opt_iters {
                let mut grad = vec![0.0; alpha.len()];
                for ds in &state.docs {
                    for (g, d) in grad.iter_mut().zip(dirichlet_prior_gradient(alpha, &ds.eta)) {
                        *g += d;
                    }
                }
                for (a, g) in alpha.iter_mut().zip(&grad) {
                    *a = (*a + config.alpha_opt_step * g / m).max(ALPHA_FLOOR);
                }
            }
            Ok(())
        }
        (PriorKind::Dmr, PriorSpec::LogLinear { lambda }) => {
            let q = corpus.side_dim();
            for _ in 0..config.dmr_iters_per_round {
                let mut grad = vec![vec![0.0; q + 1]; lambda.len()];
                for (doc, ds) in corpus.docs.iter().zip(&state.docs) {
                    let alpha = PriorSpec::LogLinear {
                        lambda: lambda.clone(),
                    }
                    .prior_of(&doc.side)?;
                    let g_alpha = dirichlet_prior_gradient(&alpha, &ds.eta);
                    for (i, (&ga, &a)) in g_alpha.iter().zip(&alpha).enumerate() {
                        let chain = ga * a;
                        for (f, &s) in doc.side.iter().enumerate() {
                            grad[i][f] += chain * s;
                        }
                        grad[i][q] += chain;
                    }
                }
                let mut finite = true;
                for (lrow, grow) in lambda.iter_mut().zip(&grad) {
                    for (l, &g) in lrow.iter_mut().zip(grow) {
                        let step = config.dmr_step * (g / m - *l / (config.dmr_sigma2 * m));
                        if !step.is_finite() {
                            finite = false;
                            break;
                        }
                        *l += step;
                    }
                }
                if !finite {
                    log::warn!("skipping a log-linear prior update with non-finite gradient");
                    break;
                }
            }
            Ok(())
        }
        (PriorKind::NnLda, PriorSpec::Neural { net, optimizer }) => {
            let mut order: Vec<usize> = (0..corpus.num_docs()).collect();
            order.shuffle(rng);
            for batch in order.chunks(config.batch_size.max(1)) {
                let mut grads = PriorGrads::zeros_like(net);
                for &d in batch {
                    let doc = &corpus.docs[d];
                    let (alpha, cache) = net.forward(&doc.side)?;
                    let g_alpha = dirichlet_prior_gradient(&alpha, &state.docs[d].eta);
                    // Adam descends, so feed the negated ascent direction.
                    let loss_grad: Vec<f64> = g_alpha.iter().map(|g| -g).collect();
                    grads.add_assign(&net.backward(&cache, &loss_grad)?);
                }
                grads.scale(1.0 / batch.len() as f64);
                if let Some(block) = grads.first_non_finite() {
                    log::warn!("skipping a minibatch with non-finite gradient in block {block}");
                    continue;
                }
                adam_step(net, &grads, optimizer)?;
            }
            Ok(())
        }
        (kind, prior) => Err(Error::Config(format!(
            "prior kind {kind} does not match the prior parameters {}",
            match prior {
                PriorSpec::Fixed { .. } => "fixed",
                PriorSpec::LogLinear { .. } => "log-linear",
                PriorSpec::Neural { .. } => "neural",
            }
        ))),
    }
}

fn init_beta(k: usize, v: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            let mut row: Vec<f64> = (0..v).map(|_| 0.5 + rng.random::<f64>()).collect();
            let sum: f64 = row.iter().sum();
            for e in &mut row {
                *e /= sum;
            }
            row
        })
        .collect()
}

fn validate_warm_beta(beta: &[Vec<f64>], k: usize, v: usize) -> Result<Vec<Vec<f64>>> {
    if beta.len() != k || beta.iter().any(|r| r.len() != v) {
        return Err(Error::Dimension(format!(
            "warm start beta must be {k} x {v}"
        )));
    }
    let mut out = beta.to_vec();
    for row in &mut out {
        if row.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::Domain(
                "warm start beta entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "warm start beta row sums to {sum}, expected 1"
            )));
        }
        if row.iter().any(|&e| e < BETA_FLOOR) {
            let mut floored_sum = 0.0;
            for e in row.iter_mut() {
                *e = e.max(BETA_FLOOR);
                floored_sum += *e;
            }
            for e in row.iter_mut() {
                *e /= floored_sum;
            }
        }
    }
    Ok(out)
}

/// Trains a topic model by variational EM.
///
/// Each round runs a full E-step (logging the corpus bound), checks the
/// relative-change stopping rule, then updates beta and the prior. The
/// returned model's parameters are exactly the ones the final logged bound
/// was computed with. Identical inputs (corpus, topics, kind, seed, config)
/// produce bit-identical training logs.
pub fn train(
    corpus: &Corpus,
    num_topics: usize,
    prior_kind: PriorKind,
    seed: u64,
    config: &TrainConfig,
) -> Result<TopicModel> {
    corpus.validate()?;
    if !(2..=200).contains(&num_topics) {
        return Err(Error::Config(format!(
            "number of topics must be in 2..=200, got {num_topics}"
        )));
    }
    if corpus.num_docs() == 0 {
        return Err(Error::Config("cannot train on an empty corpus".into()));
    }
    let q = corpus.side_dim();
    if prior_kind.is_side_conditioned() && q == 0 {
        return Err(Error::Config(format!(
            "{prior_kind} needs side features, but the corpus has none"
        )));
    }
    if config.elbo_rel_tol <= 0.0 || config.e_step_tol <= 0.0 || config.max_rounds == 0 {
        return Err(Error::Config("tolerances and round limits must be positive".into()));
    }

    let v = corpus.vocab_size();
    let k = num_topics;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beta = match &config.warm_start {
        Some(ws) => validate_warm_beta(&ws.beta, k, v)?,
        None => init_beta(k, v, &mut rng),
    };
    let net_seed: u64 = rng.random();
    let mut prior = match prior_kind {
        PriorKind::Lda | PriorKind::LdaOpt => PriorSpec::Fixed {
            alpha: match &config.warm_start {
                Some(ws) => {
                    validate_alpha(&ws.alpha)?;
                    if ws.alpha.len() != k {
                        return Err(Error::Dimension(format!(
                            "warm start alpha has {} topics, expected {k}",
                            ws.alpha.len()
                        )));
                    }
                    ws.alpha.clone()
                }
                None => vec![config.fixed_alpha; k],
            },
        },
        PriorKind::Dmr => {
            let mut lambda = vec![vec![0.0; q + 1]; k];
            if let Some(ws) = &config.warm_start {
                validate_alpha(&ws.alpha)?;
                for (row, &a) in lambda.iter_mut().zip(&ws.alpha) {
                    row[q] = a.ln();
                }
            }
            PriorSpec::LogLinear { lambda }
        }
        PriorKind::NnLda => {
            let net = match &config.warm_start {
                Some(ws) => PriorNet::constant(q, config.hidden_dim, &ws.alpha, net_seed)?,
                None => PriorNet::init_kaiming(q, config.hidden_dim, k, net_seed)?,
            };
            if net.num_topics() != k {
                return Err(Error::Dimension(format!(
                    "warm start alpha has {} topics, expected {k}",
                    net.num_topics()
                )));
            }
            let mut optimizer = AdamState::new(&net);
            optimizer.lr = config.learning_rate;
            optimizer.weight_decay = config.weight_decay;
            PriorSpec::Neural { net, optimizer }
        }
    };

    let mut training_log: Vec<TrainingRound> = Vec::new();
    let mut prev_elbo: Option<f64> = None;
    for round in 1..=config.max_rounds {
        let mut state = VariationalState {
            docs: Vec::with_capacity(corpus.num_docs()),
        };
        let mut elbo = 0.0;
        for (d, doc) in corpus.docs.iter().enumerate() {
            let alpha = prior.prior_of(&doc.side)?;
            let (ds, doc_bound) = e_step_document(
                doc,
                &alpha,
                &beta,
                config.e_step_tol,
                config.e_step_max_iters,
            )
            .map_err(|e| Error::Numeric(format!("document {d}, round {round}: {e}")))?;
            elbo += doc_bound;
            state.docs.push(ds);
        }
        training_log.push(TrainingRound { round, elbo });
        log::debug!("round {round}: elbo {elbo:.6}");
        if let Some(prev) = prev_elbo {
            if (elbo - prev).abs() / prev.abs().max(f64::MIN_POSITIVE) < config.elbo_rel_tol {
                break;
            }
        }
        prev_elbo = Some(elbo);
        if round == config.max_rounds {
            break;
        }
        beta = m_step_beta(corpus, &state, k)?;
        m_step_prior(prior_kind, &mut prior, corpus, &state, config, &mut rng)?;
    }

    Ok(TopicModel {
        prior_kind,
        beta,
        prior,
        vocabulary: corpus.vocabulary.clone(),
        side_schema: corpus.side_schema.clone(),
        training_log,
        seed,
        config: config.clone(),
    })
}

/// Runs a fresh E-step over a corpus under a trained model, returning the
/// state and total bound.
pub fn infer_state(corpus: &Corpus, model: &TopicModel) -> Result<(VariationalState, f64)> {
    let mut state = VariationalState {
        docs: Vec::with_capacity(corpus.num_docs()),
    };
    let mut elbo = 0.0;
    for (d, doc) in corpus.docs.iter().enumerate() {
        let alpha = model.prior.prior_of(&doc.side)?;
        let (ds, doc_bound) = e_step_document(
            doc,
            &alpha,
            &model.beta,
            model.config.e_step_tol,
            model.config.e_step_max_iters,
        )
        .map_err(|e| Error::Numeric(format!("document {d}: {e}")))?;
        elbo += doc_bound;
        state.docs.push(ds);
    }
    Ok((state, elbo))
}

const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    prior_kind: PriorKind,
    k: usize,
    v: usize,
    q: usize,
    beta: Vec<Vec<f64>>,
    prior: PriorSpec,
    vocabulary: Vocabulary,
    side_schema: SideSchema,
    training_log: Vec<TrainingRound>,
    seed: u64,
    config: TrainConfig,
}

/// Saves a model as versioned, human-inspectable structured text. The
/// numeric payload round-trips losslessly through [`load_model`].
pub fn save_model<P: AsRef<Path>>(model: &TopicModel, path: P) -> Result<()> {
    let file = ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        prior_kind: model.prior_kind,
        k: model.num_topics(),
        v: model.vocab_size(),
        q: model.side_schema.dim(),
        beta: model.beta.clone(),
        prior: model.prior.clone(),
        vocabulary: model.vocabulary.clone(),
        side_schema: model.side_schema.clone(),
        training_log: model.training_log.clone(),
        seed: model.seed,
        config: model.config.clone(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path.as_ref(), text)?;
    Ok(())
}

/// Loads a model saved by [`save_model`], checking the schema version and
/// the declared shapes.
pub fn load_model<P: AsRef<Path>>(path: P) -> Result<TopicModel> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.schema_version != MODEL_SCHEMA_VERSION {
        return Err(Error::Version {
            found: file.schema_version,
            expected: MODEL_SCHEMA_VERSION,
        });
    }
    if file.beta.len() != file.k || file.beta.iter().any(|r| r.len() != file.v) {
        return Err(Error::Dimension(format!(
            "model file declares {} x {} topics but beta is {} x {}",
            file.k,
            file.v,
            file.beta.len(),
            file.beta.first().map_or(0, Vec::len)
        )));
    }
    if file.vocabulary.len() != file.v {
        return Err(Error::Dimension(format!(
            "model file declares vocabulary size {} but lists {} terms",
            file.v,
            file.vocabulary.len()
        )));
    }
    if file.side_schema.dim() != file.q {
        return Err(Error::Dimension(format!(
            "model file declares side dimension {} but the schema has {}",
            file.q,
            file.side_schema.dim()
        )));
    }
    if file.prior.num_topics() != file.k {
        return Err(Error::Dimension(format!(
            "prior covers {} topics but the model declares {}",
            file.prior.num_topics(),
            file.k
        )));
    }
    if file
        .beta
        .iter()
        .flatten()
        .any(|e| !e.is_finite() || *e <= 0.0)
    {
        return Err(Error::Domain(
            "model file beta entries must be finite and positive".into(),
        ));
    }
    Ok(TopicModel {
        prior_kind: file.prior_kind,
        beta: file.beta,
        prior: file.prior,
        vocabulary: file.vocabulary,
        side_schema: file.side_schema,
        training_log: file.training_log,
        seed: file.seed,
        config: file.config,
    })
}
