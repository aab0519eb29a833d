//! Data behind the topic-document and close-reading views.

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Vocabulary};
use crate::ensemble::{Ensemble, TopicRef};
use crate::error::{Error, Result};
use crate::lda::TopicModel;

pub const DEFAULT_DOC_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDocument {
    pub doc_id: String,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRanking {
    #[serde(rename = "ref")]
    pub topic: TopicRef,
    pub rows: Vec<RankedDocument>,
}

/// Documents with the largest share of `topic`, ties broken by doc id.
pub fn rank_documents(topic: TopicRef, ensemble: &Ensemble, limit: usize) -> Result<DocRanking> {
    ensemble.check(topic)?;
    let model = &ensemble.members[topic.model];
    let theta = model.theta()?;
    let mut order: Vec<usize> = (0..theta.len()).collect();
    order.sort_by(|&a, &b| {
        theta[b][topic.topic]
            .total_cmp(&theta[a][topic.topic])
            .then_with(|| model.doc_ids[a].cmp(&model.doc_ids[b]))
    });
    order.truncate(limit);
    Ok(DocRanking {
        topic,
        rows: order
            .into_iter()
            .map(|d| RankedDocument {
                doc_id: model.doc_ids[d].clone(),
                theta: theta[d].clone(),
            })
            .collect(),
    })
}

/// Which topic a token is coloured with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighlightRule {
    /// `argmax_t theta_dt * phi_tw`.
    #[default]
    Contextual,
    /// `argmax_t phi_tw`, ignoring the document.
    Global,
}

impl std::str::FromStr for HighlightRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contextual" => Ok(HighlightRule::Contextual),
            "global" => Ok(HighlightRule::Global),
            other => Err(Error::invalid(format!("unknown highlight rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighlightSpan {
    pub start: usize,
    pub end: usize,
    pub topic: usize,
    /// Index into the client's categorical palette.
    pub color: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightedDocument {
    pub doc_id: String,
    pub title: String,
    pub raw_text: String,
    pub model_index: usize,
    pub spans: Vec<HighlightSpan>,
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Colours every retained token of `doc` by its most responsible topic.
///
/// Tokens whose term is not in `vocabulary` emit no span.
pub fn highlight(
    doc: &Document,
    model: &TopicModel,
    vocabulary: &Vocabulary,
    rule: HighlightRule,
) -> Result<HighlightedDocument> {
    if model.n_terms() != vocabulary.len() {
        return Err(Error::dimension(format!(
            "model has {} terms, vocabulary {}",
            model.n_terms(),
            vocabulary.len()
        )));
    }
    let doc_theta = match rule {
        HighlightRule::Global => None,
        HighlightRule::Contextual => {
            let theta = model.theta()?;
            let d = model
                .doc_index(&doc.id)
                .ok_or_else(|| Error::invalid(format!("document {:?} is not part of the model", doc.id)))?;
            Some(&theta[d])
        }
    };
    let spans = doc
        .retained_tokens()
        .filter_map(|token| {
            let w = vocabulary.lookup(&token.normalized)?;
            let topic = match doc_theta {
                Some(theta) => argmax((0..model.k()).map(|t| theta[t] * model.phi[t][w])),
                None => argmax((0..model.k()).map(|t| model.phi[t][w])),
            };
            Some(HighlightSpan {
                start: token.span.0,
                end: token.span.1,
                topic,
                color: topic,
            })
        })
        .collect();
    Ok(HighlightedDocument {
        doc_id: doc.id.clone(),
        title: doc.title.clone(),
        raw_text: doc.raw_text.clone(),
        model_index: model.model_id,
        spans,
    })
}
