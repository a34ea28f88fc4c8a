//! Automatic comment-quality metrics: composite BLEU (sentence and corpus),
//! ROUGE-LCS F1 and METEOR.
//!
//! Composite BLEU here is `BP * (p1 + p2 + p3 + p4) / 4`, the arithmetic mean
//! of the modified n-gram precisions, not the geometric mean of classic
//! BLEU-4. Sentence BLEU replaces a zero match count by `0.1 / denominator`;
//! corpus BLEU pools counts (each sentence contributes at least one to every
//! denominator) and is not smoothed.
//!
//! METEOR aligns in two stages (exact, then Porter stem) plus an optional
//! synonym stage supplied through [`SynonymTable`]. No lexical database is
//! bundled, so the default has no synonym matching.

mod porter;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use porter::stem;

pub const MAX_ORDER: usize = 4;
pub const SMOOTHING_EPSILON: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("candidate or reference is empty")]
    EmptyInput,
    #[error("no sentence pairs to score")]
    EmptyCorpus,
}

/// All four scores in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub s_bleu: f64,
    pub c_bleu: f64,
    pub rouge_lcs_f1: f64,
    pub meteor: f64,
}

impl MetricReport {
    /// Scores aligned `(candidate, reference)` pairs. Empty candidates score
    /// zero on every per-sentence metric.
    pub fn compute<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)]) -> Result<Self, MetricError> {
        if pairs.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        let n = pairs.len() as f64;
        let (mut sb, mut rl, mut mt) = (0.0, 0.0, 0.0);
        for (cand, reference) in pairs {
            sb += sentence_bleu(cand, reference)?;
            if !cand.is_empty() {
                rl += rouge_lcs_f1(cand, reference)?;
                mt += meteor(cand, reference)?;
            } else if reference.is_empty() {
                return Err(MetricError::EmptyReference);
            }
        }
        Ok(Self {
            s_bleu: sb / n,
            c_bleu: corpus_bleu(pairs)?,
            rouge_lcs_f1: rl / n,
            meteor: mt / n,
        })
    }

    /// Percent-scaled table row.
    pub fn display_percent(&self) -> String {
        format!(
            "S-BLEU {:.2}  C-BLEU {:.2}  ROUGE-LCS F1 {:.2}  METEOR {:.2}",
            self.s_bleu * 100.0,
            self.c_bleu * 100.0,
            self.rouge_lcs_f1 * 100.0,
            self.meteor * 100.0
        )
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(AsRef::as_ref).collect())
                .or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the (floored at one) candidate n-gram count.
fn modified_precision<S: AsRef<str>>(cand: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    let total = cand.len().saturating_sub(n - 1);
    (matched, total.max(1))
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len > ref_len {
        1.0
    } else if cand_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

/// Smoothed composite sentence BLEU.
pub fn sentence_bleu<S: AsRef<str>>(cand: &[S], reference: &[S]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let mean = (1..=MAX_ORDER)
        .map(|n| {
            let (m, d) = modified_precision(cand, reference, n);
            if m == 0 {
                SMOOTHING_EPSILON / d as f64
            } else {
                m as f64 / d as f64
            }
        })
        .sum::<f64>()
        / MAX_ORDER as f64;
    Ok(brevity_penalty(cand.len(), reference.len()) * mean)
}

/// Composite BLEU with n-gram counts pooled over the corpus.
pub fn corpus_bleu<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut c_len, mut r_len) = (0, 0);
    for (cand, reference) in pairs {
        if reference.is_empty() {
            return Err(MetricError::EmptyReference);
        }
        c_len += cand.len();
        r_len += reference.len();
        for n in 1..=MAX_ORDER {
            let (m, d) = modified_precision(cand, reference, n);
            matched[n - 1] += m;
            total[n - 1] += d;
        }
    }
    let mean = (0..MAX_ORDER)
        .map(|i| matched[i] as f64 / total[i].max(1) as f64)
        .sum::<f64>()
        / MAX_ORDER as f64;
    Ok(brevity_penalty(c_len, r_len) * mean)
}

/// Longest common subsequence length by dynamic programming.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_lcs_f1<S: AsRef<str>>(cand: &[S], reference: &[S]) -> Result<f64, MetricError> {
    if cand.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let l = lcs_len(cand, reference) as f64;
    let p = l / cand.len() as f64;
    let r = l / reference.len() as f64;
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// Extra matching stage for METEOR, run after exact and stem matching.
pub trait SynonymTable {
    fn are_synonyms(&self, a: &str, b: &str) -> bool;
}

/// The default: no synonymy.
pub struct NoSynonyms;

impl SynonymTable for NoSynonyms {
    fn are_synonyms(&self, _: &str, _: &str) -> bool {
        false
    }
}

type Enumerated = Vec<(usize, String)>;

/// Greedy stage matcher: candidates from the back, each taking the last
/// remaining reference position with an equal key.
fn match_stage(
    hyp: Enumerated,
    reference: Enumerated,
    key: impl Fn(&str) -> String,
    out: &mut Vec<(usize, usize)>,
) -> (Enumerated, Enumerated) {
    let mut positions: HashMap<String, Vec<usize>> = HashMap::new();
    for (j, (_, w)) in reference.iter().enumerate() {
        positions.entry(key(w)).or_default().push(j);
    }
    let mut used_h = vec![false; hyp.len()];
    let mut used_r = vec![false; reference.len()];
    for i in (0..hyp.len()).rev() {
        if let Some(j) = positions.get_mut(&key(&hyp[i].1)).and_then(Vec::pop) {
            used_h[i] = true;
            used_r[j] = true;
            out.push((hyp[i].0, reference[j].0));
        }
    }
    let keep = |v: Enumerated, used: &[bool]| {
        v.into_iter()
            .zip(used)
            .filter(|(_, &u)| !u)
            .map(|(p, _)| p)
            .collect()
    };
    (keep(hyp, &used_h), keep(reference, &used_r))
}

fn synonym_stage(
    hyp: Enumerated,
    mut reference: Enumerated,
    table: &dyn SynonymTable,
    out: &mut Vec<(usize, usize)>,
) {
    for (hi, hw) in hyp.iter().rev() {
        if let Some(j) = reference.iter().position(|(_, rw)| table.are_synonyms(hw, rw)) {
            out.push((*hi, reference[j].0));
            reference.remove(j);
        }
    }
}

fn count_chunks(matches: &[(usize, usize)]) -> usize {
    1 + matches
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// METEOR with exact and stem stages.
pub fn meteor<S: AsRef<str>>(cand: &[S], reference: &[S]) -> Result<f64, MetricError> {
    meteor_with(cand, reference, &NoSynonyms)
}

pub fn meteor_with<S: AsRef<str>>(
    cand: &[S],
    reference: &[S],
    synonyms: &dyn SynonymTable,
) -> Result<f64, MetricError> {
    if cand.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let enumerate = |xs: &[S]| -> Enumerated {
        xs.iter()
            .enumerate()
            .map(|(i, w)| (i, w.as_ref().to_lowercase()))
            .collect()
    };
    let mut matches = Vec::new();
    let (h, r) = match_stage(enumerate(cand), enumerate(reference), str::to_string, &mut matches);
    let (h, r) = match_stage(h, r, stem, &mut matches);
    synonym_stage(h, r, synonyms, &mut matches);
    let m = matches.len();
    if m == 0 {
        return Ok(0.0);
    }
    matches.sort_unstable();
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let frag = count_chunks(&matches) as f64 / m as f64;
    let penalty = 0.5 * frag.powi(3);
    Ok(fmean * (1.0 - penalty))
}
