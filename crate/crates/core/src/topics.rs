//! LDA fitted by collapsed Gibbs sampling.
//!
//! Documents are visited in order of their source id and each document owns
//! its own random stream, so the fit does not depend on input order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::preprocess::TokenSequence;
use crate::{Error, Result};

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn doc_rng(seed: u64, id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(id));
    rng
}

#[derive(Clone, Debug)]
pub struct TopicModelState {
    k: usize,
    alpha: f64,
    beta: f64,
    terms: Vec<String>,
    doc_ids: Vec<String>,
    docs: Vec<Vec<usize>>,
    z: Vec<Vec<usize>>,
    /// M × K, row-major.
    n_dk: Vec<usize>,
    /// K × V, row-major.
    n_kw: Vec<usize>,
    n_k: Vec<usize>,
    rngs: Vec<ChaCha8Rng>,
    visit_order: Vec<usize>,
    sweeps: usize,
}

/// Random topic for every token position, counts built to match.
pub fn gibbs_init(corpus: &[TokenSequence], k: usize, alpha: f64, beta: f64, seed: u64) -> Result<TopicModelState> {
    if k == 0 {
        return Err(Error::Config("number of topics must be at least 1".into()));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Config("Dirichlet priors must be positive".into()));
    }
    let vocab: BTreeSet<&str> = corpus.iter().flat_map(|d| d.tokens.iter().map(String::as_str)).collect();
    if vocab.is_empty() {
        return Err(Error::Input("topic model needs a non-empty vocabulary".into()));
    }
    let terms: Vec<String> = vocab.into_iter().map(str::to_string).collect();
    let index: BTreeMap<&str, usize> = terms.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let v = terms.len();
    let m = corpus.len();

    let mut visit_order: Vec<usize> = (0..m).collect();
    visit_order.sort_by(|&a, &b| corpus[a].source_id.cmp(&corpus[b].source_id).then(a.cmp(&b)));

    let mut state = TopicModelState {
        k,
        alpha,
        beta,
        doc_ids: corpus.iter().map(|d| d.source_id.clone()).collect(),
        docs: corpus
            .iter()
            .map(|d| d.tokens.iter().map(|t| index[t.as_str()]).collect())
            .collect(),
        terms,
        z: Vec::with_capacity(m),
        n_dk: vec![0; m * k],
        n_kw: vec![0; k * v],
        n_k: vec![0; k],
        rngs: corpus.iter().map(|d| doc_rng(seed, &d.source_id)).collect(),
        visit_order,
        sweeps: 0,
    };
    for d in 0..m {
        let rng = &mut state.rngs[d];
        let zd: Vec<usize> = state.docs[d].iter().map(|_| rng.random_range(0..k)).collect();
        for (&w, &t) in state.docs[d].iter().zip(&zd) {
            state.n_dk[d * k + t] += 1;
            state.n_kw[t * v + w] += 1;
            state.n_k[t] += 1;
        }
        state.z.push(zd);
    }
    Ok(state)
}

impl TopicModelState {
    pub fn num_topics(&self) -> usize {
        self.k
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.z
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn doc_topic_count(&self, d: usize, k: usize) -> usize {
        self.n_dk[d * self.k + k]
    }

    pub fn topic_word_count(&self, k: usize, w: usize) -> usize {
        self.n_kw[k * self.terms.len() + w]
    }

    pub fn topic_count(&self, k: usize) -> usize {
        self.n_k[k]
    }

    /// Recount every matrix from `z` and compare with the stored counts.
    pub fn counts_consistent(&self) -> bool {
        let (k, v) = (self.k, self.terms.len());
        let mut n_dk = vec![0; self.docs.len() * k];
        let mut n_kw = vec![0; k * v];
        let mut n_k = vec![0; k];
        for (d, (words, zd)) in self.docs.iter().zip(&self.z).enumerate() {
            for (&w, &t) in words.iter().zip(zd) {
                n_dk[d * k + t] += 1;
                n_kw[t * v + w] += 1;
                n_k[t] += 1;
            }
        }
        n_dk == self.n_dk && n_kw == self.n_kw && n_k == self.n_k
    }

    fn weights_into(&self, d: usize, w: usize, out: &mut [f64]) {
        let v = self.terms.len() as f64;
        for (t, slot) in out.iter_mut().enumerate() {
            *slot = (self.n_dk[d * self.k + t] as f64 + self.alpha)
                * (self.n_kw[t * self.terms.len() + w] as f64 + self.beta)
                / (self.n_k[t] as f64 + v * self.beta);
        }
    }

    fn remove(&mut self, d: usize, w: usize, t: usize) {
        self.n_dk[d * self.k + t] -= 1;
        self.n_kw[t * self.terms.len() + w] -= 1;
        self.n_k[t] -= 1;
    }

    fn add(&mut self, d: usize, w: usize, t: usize) {
        self.n_dk[d * self.k + t] += 1;
        self.n_kw[t * self.terms.len() + w] += 1;
        self.n_k[t] += 1;
    }

    /// Normalised collapsed conditional for the token at `(d, pos)`, with that
    /// token's own assignment excluded from the counts.
    pub fn conditional(&self, d: usize, pos: usize) -> Vec<f64> {
        let mut tmp = self.clone();
        let (w, t) = (self.docs[d][pos], self.z[d][pos]);
        tmp.remove(d, w, t);
        let mut p = vec![0.0; self.k];
        tmp.weights_into(d, w, &mut p);
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }

    /// One sequential-scan pass resampling every `z_dn`.
    pub fn sweep(&mut self) {
        let mut p = vec![0.0; self.k];
        for oi in 0..self.visit_order.len() {
            let d = self.visit_order[oi];
            for pos in 0..self.docs[d].len() {
                let (w, old) = (self.docs[d][pos], self.z[d][pos]);
                self.remove(d, w, old);
                self.weights_into(d, w, &mut p);
                let total: f64 = p.iter().sum();
                let mut u = self.rngs[d].random::<f64>() * total;
                let mut new = self.k - 1;
                for (t, &pt) in p.iter().enumerate() {
                    if u < pt {
                        new = t;
                        break;
                    }
                    u -= pt;
                }
                self.add(d, w, new);
                self.z[d][pos] = new;
            }
        }
        self.sweeps += 1;
    }

    /// Collapsed joint `ln p(w, z | α, β)`.
    pub fn log_likelihood(&self) -> f64 {
        let (k, v) = (self.k as f64, self.terms.len() as f64);
        let (a, b) = (self.alpha, self.beta);
        let mut ll = 0.0;
        for t in 0..self.k {
            ll += ln_gamma(v * b) - v * ln_gamma(b);
            for w in 0..self.terms.len() {
                ll += ln_gamma(self.n_kw[t * self.terms.len() + w] as f64 + b);
            }
            ll -= ln_gamma(self.n_k[t] as f64 + v * b);
        }
        for (d, words) in self.docs.iter().enumerate() {
            ll += ln_gamma(k * a) - k * ln_gamma(a);
            for t in 0..self.k {
                ll += ln_gamma(self.n_dk[d * self.k + t] as f64 + a);
            }
            ll -= ln_gamma(words.len() as f64 + k * a);
        }
        ll
    }

    /// Smoothed point estimates `(φ̂, θ̂)` from the current counts.
    pub fn point_estimates(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (k, v) = (self.k, self.terms.len());
        let phi = (0..k)
            .map(|t| {
                let denom = self.n_k[t] as f64 + v as f64 * self.beta;
                (0..v)
                    .map(|w| (self.n_kw[t * v + w] as f64 + self.beta) / denom)
                    .collect()
            })
            .collect();
        let theta = self
            .docs
            .iter()
            .enumerate()
            .map(|(d, words)| {
                let denom = words.len() as f64 + k as f64 * self.alpha;
                (0..k)
                    .map(|t| (self.n_dk[d * k + t] as f64 + self.alpha) / denom)
                    .collect()
            })
            .collect();
        (phi, theta)
    }

    /// Report from the current state with each topic's `top_n` terms.
    pub fn estimate(&self, top_n: usize) -> TopicReport {
        let (phi, theta) = self.point_estimates();
        TopicReport::from_estimates(&self.terms, phi, theta, top_n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermProb {
    pub term: String,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopicTerms {
    pub id: usize,
    pub top_terms: Vec<TermProb>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopicReport {
    pub topics: Vec<TopicTerms>,
    /// θ̂, one row per document.
    pub doc_topics: Vec<Vec<f64>>,
    /// φ̂, one row per topic over the sampler's vocabulary.
    #[serde(skip)]
    pub phi: Vec<Vec<f64>>,
}

impl TopicReport {
    /// Rank terms by probability, ties broken lexicographically.
    pub fn from_estimates(terms: &[String], phi: Vec<Vec<f64>>, doc_topics: Vec<Vec<f64>>, top_n: usize) -> Self {
        let topics = phi
            .iter()
            .enumerate()
            .map(|(id, row)| {
                let mut order: Vec<usize> = (0..terms.len()).collect();
                order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(terms[a].cmp(&terms[b])));
                TopicTerms {
                    id,
                    top_terms: order
                        .into_iter()
                        .take(top_n)
                        .map(|w| TermProb {
                            term: terms[w].clone(),
                            prob: row[w],
                        })
                        .collect(),
                }
            })
            .collect();
        Self {
            topics,
            doc_topics,
            phi,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One line per topic: `Topic #k<TAB>term, term, …`.
    pub fn summary(&self) -> String {
        let mut out = String::from("Topic\tTop terms\n");
        for t in &self.topics {
            let terms: Vec<&str> = t.top_terms.iter().map(|tp| tp.term.as_str()).collect();
            let _ = writeln!(out, "Topic #{}\t{}", t.id, terms.join(", "));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LdaOptions {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sweeps: usize,
    /// Sweeps discarded before estimates are averaged.
    pub burn_in: usize,
    pub seed: u64,
}

/// Sweeps between retained samples after burn-in.
pub const SAMPLE_LAG: usize = 10;

/// Result of [`fit`]: final state, the log-likelihood every [`SAMPLE_LAG`]
/// sweeps, and running sums of the estimates retained after burn-in.
pub struct LdaFit {
    pub state: TopicModelState,
    pub trace: Vec<(usize, f64)>,
    phi_sum: Vec<Vec<f64>>,
    theta_sum: Vec<Vec<f64>>,
    samples: usize,
}

impl LdaFit {
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Estimates averaged over the retained samples, or taken from the final
    /// state when burn-in consumed every sweep.
    pub fn report(&self, top_n: usize) -> TopicReport {
        if self.samples == 0 {
            return self.state.estimate(top_n);
        }
        let n = self.samples as f64;
        let avg = |m: &[Vec<f64>]| m.iter().map(|r| r.iter().map(|x| x / n).collect()).collect();
        TopicReport::from_estimates(self.state.terms(), avg(&self.phi_sum), avg(&self.theta_sum), top_n)
    }
}

fn accumulate(sum: &mut Vec<Vec<f64>>, m: Vec<Vec<f64>>) {
    if sum.is_empty() {
        *sum = m;
    } else {
        for (a, b) in sum.iter_mut().zip(m) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

pub fn fit(corpus: &[TokenSequence], opts: &LdaOptions) -> Result<LdaFit> {
    let mut state = gibbs_init(corpus, opts.k, opts.alpha, opts.beta, opts.seed)?;
    let mut fit = LdaFit {
        trace: vec![(0, state.log_likelihood())],
        state: state.clone(),
        phi_sum: Vec::new(),
        theta_sum: Vec::new(),
        samples: 0,
    };
    for s in 1..=opts.sweeps {
        state.sweep();
        if s % SAMPLE_LAG == 0 || s == opts.sweeps {
            let ll = state.log_likelihood();
            if !ll.is_finite() {
                return Err(Error::Numerical(format!("log-likelihood not finite after sweep {s}")));
            }
            fit.trace.push((s, ll));
        }
        if s > opts.burn_in && (s - opts.burn_in).is_multiple_of(SAMPLE_LAG) {
            let (phi, theta) = state.point_estimates();
            accumulate(&mut fit.phi_sum, phi);
            accumulate(&mut fit.theta_sum, theta);
            fit.samples += 1;
        }
    }
    fit.state = state;
    Ok(fit)
}

/// Per-reference-topic overlap between term lists under the topic matching
/// that maximises the total overlap. Exhaustive over permutations, so meant
/// for small `K`. Estimated topics beyond the reference count are ignored.
pub fn aligned_overlap(estimated: &[Vec<String>], reference: &[Vec<String>]) -> Vec<usize> {
    let k = reference.len();
    let overlap = |e: &[String], r: &[String]| r.iter().filter(|t| e.contains(t)).count();
    let table: Vec<Vec<usize>> = reference
        .iter()
        .map(|r| estimated.iter().map(|e| overlap(e, r)).collect())
        .collect();
    let mut best: (usize, Vec<usize>) = (0, vec![0; k]);
    let mut used = vec![false; estimated.len()];
    let mut current = Vec::with_capacity(k);
    fn search(
        i: usize,
        table: &[Vec<usize>],
        used: &mut [bool],
        current: &mut Vec<usize>,
        best: &mut (usize, Vec<usize>),
    ) {
        if i == table.len() {
            let total = current.iter().sum();
            if total > best.0 || best.1.is_empty() {
                *best = (total, current.clone());
            }
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                current.push(table[i][j]);
                search(i + 1, table, used, current, best);
                current.pop();
                used[j] = false;
            }
        }
    }
    if estimated.len() >= k {
        search(0, &table, &mut used, &mut current, &mut best);
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_finds_permutation() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let est = vec![s(&["c", "d"]), s(&["a", "x"])];
        let truth = vec![s(&["a", "b"]), s(&["c", "d"])];
        assert_eq!(aligned_overlap(&est, &truth), vec![1, 2]);
    }

    fn seq(id: &str, t: &[&str]) -> TokenSequence {
        TokenSequence::new(id, t.iter().map(|s| s.to_string()).collect())
    }

    fn small() -> Vec<TokenSequence> {
        vec![
            seq("a", &["hen", "egg", "hen", "feed"]),
            seq("b", &["feed", "grain", "feed"]),
            seq("c", &["egg", "hen"]),
        ]
    }

    #[test]
    fn single_topic_is_forced() {
        let mut s = gibbs_init(&small(), 1, 0.1, 0.01, 3).unwrap();
        assert!(s.assignments().iter().flatten().all(|&z| z == 0));
        assert_eq!(s.topic_count(0), 9);
        let before = s.assignments().to_vec();
        s.sweep();
        assert_eq!(s.assignments(), &before[..]);
    }

    #[test]
    fn init_is_seeded_and_consistent() {
        let a = gibbs_init(&small(), 3, 0.1, 0.01, 9).unwrap();
        let b = gibbs_init(&small(), 3, 0.1, 0.01, 9).unwrap();
        assert_eq!(a.assignments(), b.assignments());
        assert!(a.counts_consistent());
    }

    #[test]
    fn empty_vocabulary_errors() {
        assert!(gibbs_init(&[seq("a", &[])], 2, 0.1, 0.01, 0).is_err());
        assert!(gibbs_init(&small(), 0, 0.1, 0.01, 0).is_err());
    }

    #[test]
    fn conditional_matches_hand_oracle() {
        // 2 docs, 2 topics, 3 words with hand-set assignments
        let corpus = vec![seq("d0", &["w0", "w1", "w0"]), seq("d1", &["w2", "w1"])];
        let mut s = gibbs_init(&corpus, 2, 0.5, 0.1, 0).unwrap();
        s.z = vec![vec![0, 1, 0], vec![1, 1]];
        s.n_dk = vec![2, 1, 0, 2];
        s.n_kw = vec![2, 0, 0, 0, 2, 1];
        s.n_k = vec![2, 3];
        assert!(s.counts_consistent());
        // token (d0, pos 0) = w0 currently in topic 0; excluded counts:
        // n_dk(d0) = [1, 1], n_kw(·, w0) = [1, 0], n_k = [1, 3], V = 3
        let w0 = (1.0 + 0.5) * (1.0 + 0.1) / (1.0 + 0.3);
        let w1 = (1.0 + 0.5) * (0.0 + 0.1) / (3.0 + 0.3);
        let p = s.conditional(0, 0);
        assert!((p[0] - w0 / (w0 + w1)).abs() < 1e-12);
        assert!((p[1] - w1 / (w0 + w1)).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prior_only_estimates_are_uniform() {
        let s = gibbs_init(&small(), 2, 0.1, 0.01, 1).unwrap();
        let mut zeroed = s.clone();
        zeroed.n_kw.iter_mut().for_each(|c| *c = 0);
        zeroed.n_k.iter_mut().for_each(|c| *c = 0);
        let r = zeroed.estimate(4);
        for row in &r.phi {
            for &x in row {
                assert!((x - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_normalised_and_positive() {
        let mut s = gibbs_init(&small(), 3, 0.1, 0.01, 5).unwrap();
        for _ in 0..20 {
            s.sweep();
        }
        assert!(s.counts_consistent());
        let r = s.estimate(10);
        for row in r.phi.iter().chain(&r.doc_topics) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&x| x > 0.0));
        }
        assert!(s.log_likelihood().is_finite());
    }

    #[test]
    fn likelihood_invariant_to_topic_relabeling() {
        let mut s = gibbs_init(&small(), 3, 0.1, 0.01, 2).unwrap();
        s.sweep();
        let perm = [2, 0, 1];
        let mut p = s.clone();
        let (k, v) = (3, s.vocab_size());
        for zd in p.z.iter_mut() {
            zd.iter_mut().for_each(|z| *z = perm[*z]);
        }
        for d in 0..s.num_docs() {
            for t in 0..k {
                p.n_dk[d * k + perm[t]] = s.n_dk[d * k + t];
            }
        }
        for t in 0..k {
            p.n_k[perm[t]] = s.n_k[t];
            for w in 0..v {
                p.n_kw[perm[t] * v + w] = s.n_kw[t * v + w];
            }
        }
        assert!(p.counts_consistent());
        assert!((p.log_likelihood() - s.log_likelihood()).abs() < 1e-9);
    }

    #[test]
    fn summary_lists_topics() {
        let s = gibbs_init(&small(), 2, 0.1, 0.01, 1).unwrap();
        let text = s.estimate(3).summary();
        assert!(text.contains("Topic #0") && text.contains("Topic #1"));
    }
}
