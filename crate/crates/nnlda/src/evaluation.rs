//! Model evaluation: held-out perplexity, agreement between topics and
//! document groups, rating classification on inferred mixtures, prompted
//! term generation, and paired per-document bound comparisons.

use std::collections::BTreeMap;
use std::path::Path;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::corpus::{split, Corpus, SplitSpec};
use crate::inference::{e_step_document, train, TopicModel};
use crate::numerics::log_sum_exp;
use crate::{Error, Result};

const LOGREG_TOL: f64 = 1e-6;
const LOGREG_MAX_ITERS: u32 = 5000;
const LOGREG_L2: f64 = 1e-4;

/// Per-document bound values from a fresh E-step under a trained model.
pub fn doc_bounds(model: &TopicModel, corpus: &Corpus) -> Result<Vec<f64>> {
    if corpus.vocabulary != model.vocabulary {
        return Err(Error::Schema(
            "corpus must be encoded with the model vocabulary".into(),
        ));
    }
    let mut bounds = Vec::with_capacity(corpus.num_docs());
    for (d, doc) in corpus.docs.iter().enumerate() {
        let alpha = model.prior.prior_of(&doc.side)?;
        let (_, bound) = e_step_document(
            doc,
            &alpha,
            &model.beta,
            model.config.e_step_tol,
            model.config.e_step_max_iters,
        )
        .map_err(|e| Error::Numeric(format!("document {d}: {e}")))?;
        bounds.push(bound);
    }
    Ok(bounds)
}

/// Per-token negative bound over a corpus, in nats: the exponential of this
/// is the usual perplexity. Uses a fresh E-step per document. Lower is
/// better.
pub fn log_perplexity(model: &TopicModel, test: &Corpus) -> Result<f64> {
    let bounds = doc_bounds(model, test)?;
    let tokens = test.total_tokens();
    if tokens == 0 {
        return Err(Error::Schema("corpus has no tokens".into()));
    }
    Ok(-bounds.iter().sum::<f64>() / tokens as f64)
}

/// How well topics line up with annotated document groups.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupingReport {
    /// Sorted group names; rows of `confusion` follow this order.
    pub groups: Vec<String>,
    /// groups x topics counts of documents by argmax mixture component.
    pub confusion: Vec<Vec<u64>>,
    /// For each group, the topic matched to it.
    pub topic_of_group: Vec<usize>,
    /// Global accuracy; with one label per document this equals micro-F1.
    pub micro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// One-to-one matching of rows to columns of a count matrix (rows <=
/// columns) maximizing the matched total. Returns the matched column per
/// row.
fn optimal_assignment(counts: &[Vec<u64>]) -> Vec<usize> {
    let rows = counts.len();
    let cols = counts.first().map_or(0, Vec::len);
    assert!(rows > 0 && rows <= cols, "assignment needs rows <= columns");
    let weights = Matrix::from_rows(counts.iter().map(|r| r.iter().map(|&c| c as i64)))
        .expect("rectangular count matrix");
    let (_, assignment) = kuhn_munkres(&weights);
    assignment
}

/// Infers a mixture per document, reads off the argmax topic, matches
/// groups to topics one-to-one so as to maximize agreement, and reports
/// accuracy plus macro precision/recall/F1 over groups. Every document must
/// carry a group, and there can be at most as many groups as topics.
pub fn grouping_metrics(model: &TopicModel, corpus: &Corpus) -> Result<GroupingReport> {
    if corpus.vocabulary != model.vocabulary {
        return Err(Error::Schema(
            "corpus must be encoded with the model vocabulary".into(),
        ));
    }
    let k = model.num_topics();
    let mut group_ids: BTreeMap<&str, usize> = BTreeMap::new();
    for (d, doc) in corpus.docs.iter().enumerate() {
        match &doc.group {
            Some(g) => {
                let next = group_ids.len();
                group_ids.entry(g).or_insert(next);
            }
            None => {
                return Err(Error::Schema(format!(
                    "document {d} has no group annotation"
                )))
            }
        }
    }
    // BTreeMap iterates sorted; reindex so ids follow name order.
    let groups: Vec<String> = group_ids.keys().map(|g| g.to_string()).collect();
    for (i, g) in groups.iter().enumerate() {
        *group_ids.get_mut(g.as_str()).unwrap() = i;
    }
    if groups.len() > k {
        return Err(Error::Config(format!(
            "corpus has {} groups but the model has only {k} topics",
            groups.len()
        )));
    }

    let mut confusion = vec![vec![0u64; k]; groups.len()];
    for (d, doc) in corpus.docs.iter().enumerate() {
        let alpha = model.prior.prior_of(&doc.side)?;
        let (state, _) = e_step_document(
            doc,
            &alpha,
            &model.beta,
            model.config.e_step_tol,
            model.config.e_step_max_iters,
        )
        .map_err(|e| Error::Numeric(format!("document {d}: {e}")))?;
        let top = state
            .eta
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
            .map(|(i, _)| i)
            .expect("at least one topic");
        let g = group_ids[doc.group.as_deref().unwrap()];
        confusion[g][top] += 1;
    }

    let topic_of_group = optimal_assignment(&confusion);
    let total: u64 = confusion.iter().flatten().sum();
    let mut correct = 0u64;
    let mut macro_precision = 0.0;
    let mut macro_recall = 0.0;
    let mut macro_f1 = 0.0;
    for (g, row) in confusion.iter().enumerate() {
        let t = topic_of_group[g];
        let tp = row[t];
        let actual: u64 = row.iter().sum();
        let predicted: u64 = confusion.iter().map(|r| r[t]).sum();
        correct += tp;
        let p = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let r = if actual > 0 { tp as f64 / actual as f64 } else { 0.0 };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        macro_precision += p;
        macro_recall += r;
        macro_f1 += f1;
    }
    let g = groups.len() as f64;
    Ok(GroupingReport {
        groups,
        confusion,
        topic_of_group,
        micro_f1: correct as f64 / total as f64,
        macro_precision: macro_precision / g,
        macro_recall: macro_recall / g,
        macro_f1: macro_f1 / g,
    })
}

/// Cross-validated label prediction from inferred mixtures.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Sorted distinct labels.
    pub classes: Vec<String>,
    pub num_folds: usize,
    /// Macro-F1 on each fold's test split, over the classes present in it.
    pub per_fold_macro_f1: Vec<f64>,
    pub mean_macro_f1: f64,
}

/// K-fold cross validation: per fold, retrains a topic model with the given
/// model's recipe (prior kind, topic count, and training configuration) on
/// the training split, featurizes both splits as normalized mixture
/// parameters, fits a multinomial logistic regression, and predicts the
/// test split. Reports per-fold macro-F1 and the mean over folds; classes
/// a fold never sees are excluded from that fold's average with a warning.
/// Every document must carry a label.
pub fn classify_ratings(
    model: &TopicModel,
    corpus: &Corpus,
    num_folds: usize,
    seed: u64,
) -> Result<ClassificationReport> {
    let mut class_ids: BTreeMap<&str, usize> = BTreeMap::new();
    for (d, doc) in corpus.docs.iter().enumerate() {
        match &doc.label {
            Some(l) => {
                let next = class_ids.len();
                class_ids.entry(l).or_insert(next);
            }
            None => return Err(Error::Schema(format!("document {d} has no label"))),
        }
    }
    let classes: Vec<String> = class_ids.keys().map(|c| c.to_string()).collect();
    for (i, c) in classes.iter().enumerate() {
        *class_ids.get_mut(c.as_str()).unwrap() = i;
    }
    if classes.len() < 2 {
        return Err(Error::Schema(
            "classification needs at least two distinct labels".into(),
        ));
    }

    let features = |c: &Corpus, m: &TopicModel| -> Result<Vec<Vec<f64>>> {
        c.docs
            .iter()
            .map(|doc| {
                let alpha = m.prior.prior_of(&doc.side)?;
                let (state, _) = e_step_document(
                    doc,
                    &alpha,
                    &m.beta,
                    m.config.e_step_tol,
                    m.config.e_step_max_iters,
                )?;
                let sum: f64 = state.eta.iter().sum();
                Ok(state.eta.iter().map(|e| e / sum).collect())
            })
            .collect()
    };
    let labels = |c: &Corpus| -> Vec<usize> {
        c.docs
            .iter()
            .map(|doc| class_ids[doc.label.as_deref().unwrap()])
            .collect()
    };

    let mut per_fold_macro_f1 = Vec::with_capacity(num_folds);
    for fold in 0..num_folds {
        let (train_split, test_split) = split(
            corpus,
            SplitSpec::Fold {
                fold,
                num_folds,
            },
            seed,
        )?;
        let fold_model = train(
            &train_split,
            model.num_topics(),
            model.prior_kind,
            seed.wrapping_add(fold as u64),
            &model.config,
        )?;
        let train_y = labels(&train_split);
        for (c, class) in classes.iter().enumerate() {
            if !train_y.contains(&c) {
                log::warn!("fold {fold}: label {class:?} absent from the training split");
            }
        }
        let weights = train_logreg(
            &features(&train_split, &fold_model)?,
            &train_y,
            classes.len(),
        )?;
        let mut confusion = vec![vec![0u64; classes.len()]; classes.len()];
        let test_y = labels(&test_split);
        for (x, &y) in features(&test_split, &fold_model)?.iter().zip(&test_y) {
            confusion[y][predict_logreg(&weights, x)] += 1;
        }
        let mut f1_sum = 0.0;
        let mut measured = 0usize;
        for (c, class) in classes.iter().enumerate() {
            let actual: u64 = confusion[c].iter().sum();
            if actual == 0 {
                log::warn!(
                    "fold {fold}: label {class:?} has no test documents; excluded from the fold's average"
                );
                continue;
            }
            let tp = confusion[c][c] as f64;
            let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
            let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let r = tp / actual as f64;
            f1_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            measured += 1;
        }
        per_fold_macro_f1.push(f1_sum / measured as f64);
    }

    let mean_macro_f1 = per_fold_macro_f1.iter().sum::<f64>() / num_folds as f64;
    Ok(ClassificationReport {
        classes,
        num_folds,
        per_fold_macro_f1,
        mean_macro_f1,
    })
}

/// Multinomial logistic regression by plain gradient descent on the mean
/// cross-entropy with an L2 penalty on the weights (not the bias). Returns
/// classes x (dim + 1) weights, bias last.
fn train_logreg(xs: &[Vec<f64>], ys: &[usize], num_classes: usize) -> Result<Vec<Vec<f64>>> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Dimension(
            "features and labels must be non-empty and aligned".into(),
        ));
    }
    let dim = xs[0].len();
    let m = xs.len() as f64;
    let mut weights = vec![vec![0.0; dim + 1]; num_classes];
    let mut lr = 0.5;

    let loss_and_grad = |w: &[Vec<f64>]| {
        let mut loss = 0.0;
        let mut grad = vec![vec![0.0; dim + 1]; num_classes];
        let mut logits = vec![0.0; num_classes];
        for (x, &y) in xs.iter().zip(ys) {
            for (c, wc) in w.iter().enumerate() {
                logits[c] = wc[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + wc[dim];
            }
            let norm = log_sum_exp(&logits);
            loss -= (logits[y] - norm) / m;
            for c in 0..num_classes {
                let p = (logits[c] - norm).exp();
                let err = (p - if c == y { 1.0 } else { 0.0 }) / m;
                for (g, &xv) in grad[c][..dim].iter_mut().zip(x) {
                    *g += err * xv;
                }
                grad[c][dim] += err;
            }
        }
        for (wc, gc) in w.iter().zip(&mut grad) {
            for (wv, gv) in wc[..dim].iter().zip(&mut gc[..dim]) {
                loss += 0.5 * LOGREG_L2 * wv * wv;
                *gv += LOGREG_L2 * wv;
            }
        }
        (loss, grad)
    };

    let (mut loss, mut grad) = loss_and_grad(&weights);
    for _ in 0..LOGREG_MAX_ITERS {
        if grad.iter().flatten().all(|g| g.abs() < LOGREG_TOL) {
            break;
        }
        let candidate: Vec<Vec<f64>> = weights
            .iter()
            .zip(&grad)
            .map(|(wc, gc)| wc.iter().zip(gc).map(|(w, g)| w - lr * g).collect())
            .collect();
        let (new_loss, new_grad) = loss_and_grad(&candidate);
        if !new_loss.is_finite() || new_loss > loss {
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
            continue;
        }
        weights = candidate;
        grad = new_grad;
        loss = new_loss;
    }
    Ok(weights)
}

fn predict_logreg(weights: &[Vec<f64>], x: &[f64]) -> usize {
    let dim = x.len();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, wc) in weights.iter().enumerate() {
        let score = wc[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + wc[dim];
        if score > best_score {
            best_score = score;
            best = c;
        }
    }
    best
}

/// Most probable terms under the prior-mean mixture for a given side
/// configuration: score_j = sum_i (alpha_i / sum alpha) beta[i][j], ranked
/// descending with ties broken by vocabulary id. Requests beyond the
/// vocabulary are capped with a warning.
pub fn generate_comment(
    model: &TopicModel,
    side: &[(String, String)],
    length: usize,
) -> Result<Vec<String>> {
    let encoded = model.side_schema.encode_pairs(side)?;
    let alpha = model.prior.prior_of(&encoded)?;
    let alpha_sum: f64 = alpha.iter().sum();
    let v = model.vocab_size();
    let mut scores = vec![0.0; v];
    for (&a, row) in alpha.iter().zip(&model.beta) {
        let mix = a / alpha_sum;
        for (s, &b) in scores.iter_mut().zip(row) {
            *s += mix * b;
        }
    }
    let length = if length > v {
        log::warn!("requested {length} terms but the vocabulary has {v}; capping");
        v
    } else {
        length
    };
    let mut ids: Vec<u32> = (0..v as u32).collect();
    ids.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    ids.truncate(length);
    Ok(ids
        .into_iter()
        .map(|id| model.vocabulary.term(id).expect("id in range").to_string())
        .collect())
}

/// Mean over documents of the per-token bound advantage of model `a` over
/// model `b`: mean_d (bound_a(d) - bound_b(d)) / tokens(d). Positive means
/// `a` explains the corpus better. Both models must share the vocabulary
/// and topic count.
pub fn elbo_ratio_report(a: &TopicModel, b: &TopicModel, corpus: &Corpus) -> Result<f64> {
    if a.vocabulary != b.vocabulary {
        return Err(Error::Schema(
            "models must share a vocabulary to compare bounds".into(),
        ));
    }
    if a.num_topics() != b.num_topics() {
        return Err(Error::Config(format!(
            "models must have the same number of topics, got {} and {}",
            a.num_topics(),
            b.num_topics()
        )));
    }
    let bounds_a = doc_bounds(a, corpus)?;
    let bounds_b = doc_bounds(b, corpus)?;
    let mut total = 0.0;
    for ((ba, bb), doc) in bounds_a.iter().zip(&bounds_b).zip(&corpus.docs) {
        total += (ba - bb) / doc.num_tokens() as f64;
    }
    Ok(total / corpus.num_docs() as f64)
}

/// Everything one evaluation run produced; sections are filled in by
/// whichever tasks ran.
#[derive(Clone, Debug, Default, Serialize)]
pub struct EvalReport {
    pub log_perplexity: Option<f64>,
    pub grouping: Option<GroupingReport>,
    pub classification: Option<ClassificationReport>,
    /// (side description, generated words) pairs.
    pub comments: Option<Vec<(String, Vec<String>)>>,
    pub elbo_ratio: Option<f64>,
}

impl EvalReport {
    /// Flattens the numeric metrics into CSV rows keyed by model, topic
    /// count, and seed. Comments are word lists, not metrics, and are not
    /// included.
    pub fn rows(&self, model: &str, k: usize, seed: u64) -> Vec<MetricRow> {
        let row = |metric: &str, value: f64| MetricRow {
            model: model.to_string(),
            k,
            seed,
            metric: metric.to_string(),
            value,
        };
        let mut rows = Vec::new();
        if let Some(v) = self.log_perplexity {
            rows.push(row("log_perplexity", v));
        }
        if let Some(g) = &self.grouping {
            rows.push(row("macro_precision", g.macro_precision));
            rows.push(row("macro_recall", g.macro_recall));
            rows.push(row("macro_f1", g.macro_f1));
            rows.push(row("micro_f1", g.micro_f1));
        }
        if let Some(c) = &self.classification {
            rows.push(row("cv_mean_macro_f1", c.mean_macro_f1));
            for (i, f1) in c.per_fold_macro_f1.iter().enumerate() {
                rows.push(row(&format!("cv_fold{i}_macro_f1"), *f1));
            }
        }
        if let Some(v) = self.elbo_ratio {
            rows.push(row("elbo_ratio", v));
        }
        rows
    }
}

/// One metric value in the flat evaluation CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub k: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Writes metric rows as CSV with a `model,k,seed,metric,value` header.
pub fn write_metrics_csv<P: AsRef<Path>>(path: P, rows: &[MetricRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
