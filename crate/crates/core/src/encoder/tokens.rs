use serde::{Deserialize, Serialize};

use crate::dataset::{EventId, EventSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Token {
    Event(EventId),
    Sep,
    Cls,
    /// Carries the encoding of a queried future time.
    Query,
}

impl Token {
    /// Row in the combined table of event embeddings followed by the
    /// `[SEP]`, `[CLS]` and query embeddings.
    pub fn table_row(self, num_events: usize) -> usize {
        match self {
            Token::Event(e) => e,
            Token::Sep => num_events,
            Token::Cls => num_events + 1,
            Token::Query => num_events + 2,
        }
    }
}

pub const NUM_SPECIALS: usize = 3;

/// Flattened history `i_1^1 .. [SEP] .. i_k^|s_k| [SEP] [CLS]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    /// 1-based index of the set each token belongs to.
    pub set_index: Vec<usize>,
    pub set_time: Vec<f64>,
    /// Per-token feature vectors; empty when the corpus has no features.
    pub features: Vec<Vec<f64>>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_features(&self) -> bool {
        self.features.first().is_some_and(|f| !f.is_empty())
    }
}

/// Flattens `sets` whose normalized times are `times`.
///
/// Only the most recent `max_sets` sets are kept. When `query_time` is set a
/// query token with index `k+1` and that time is placed before `[CLS]`.
pub fn flatten_history(
    sets: &[EventSet],
    times: &[f64],
    feature_dim: usize,
    max_sets: usize,
    query_time: Option<f64>,
) -> Result<TokenSequence> {
    if sets.is_empty() {
        return Err(Error::invalid("cannot flatten an empty history"));
    }
    if times.len() != sets.len() {
        return Err(Error::Shape {
            op: "flatten_history",
            lhs: vec![sets.len()],
            rhs: vec![times.len()],
        });
    }
    let start = sets.len().saturating_sub(max_sets.max(1));
    let (sets, times) = (&sets[start..], &times[start..]);
    let n_tokens: usize = sets.iter().map(|s| s.items.len() + 1).sum::<usize>() + 2;
    let mut out = TokenSequence {
        tokens: Vec::with_capacity(n_tokens),
        set_index: Vec::with_capacity(n_tokens),
        set_time: Vec::with_capacity(n_tokens),
        features: Vec::with_capacity(n_tokens),
    };
    let zeros = vec![0.0; feature_dim];
    let mut push = |tok: Token, j: usize, t: f64, f: &[f64]| {
        out.tokens.push(tok);
        out.set_index.push(j);
        out.set_time.push(t);
        out.features.push(f.to_vec());
    };
    for (j, (set, &t)) in sets.iter().zip(times).enumerate() {
        let f = match &set.features {
            Some(f) if f.len() == feature_dim => f.as_slice(),
            Some(f) => {
                return Err(Error::Shape {
                    op: "flatten_history features",
                    lhs: vec![feature_dim],
                    rhs: vec![f.len()],
                })
            }
            None => zeros.as_slice(),
        };
        for &e in &set.items {
            push(Token::Event(e), j + 1, t, f);
        }
        push(Token::Sep, j + 1, t, f);
    }
    let k = sets.len();
    let t_k = times[times.len() - 1];
    if let Some(tq) = query_time {
        push(Token::Query, k + 1, tq, &zeros);
    }
    push(Token::Cls, k + 1, t_k, &zeros);
    Ok(out)
}
