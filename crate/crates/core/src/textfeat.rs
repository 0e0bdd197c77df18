//! Attribute vectors for title and paragraph nodes.
//!
//! Two providers share one interface: a hashed TF-IDF vectoriser fit on the
//! corpus, and a lookup into externally computed vectors (e.g. the output of
//! a pretrained encoder) keyed by `<doc_id>/title` and `<doc_id>/p<k>`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{casefold, fnv1a};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot fit TF-IDF on an empty corpus")]
    EmptyCorpus,
    #[error("feature dimension must be > 0")]
    ZeroDim,
    #[error("no external vector for key `{0}`")]
    MissingKey(String),
    #[error("vector file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Lowercased whitespace tokens with leading/trailing punctuation removed.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|raw| {
        let tok = raw.trim_matches(|c: char| !c.is_alphanumeric());
        (!tok.is_empty()).then(|| casefold(tok))
    })
}

pub fn title_key(doc_id: &str) -> String {
    format!("{doc_id}/title")
}

pub fn paragraph_key(doc_id: &str, index: usize) -> String {
    format!("{doc_id}/p{index}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedTfidf {
    pub dim: usize,
    pub n_docs: usize,
    /// Per-term document frequency; ordered so serialisation is stable.
    pub document_frequency: BTreeMap<String, usize>,
}

impl HashedTfidf {
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.document_frequency.get(term).copied().unwrap_or(0);
        ((1.0 + self.n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    pub fn bucket(&self, term: &str) -> usize {
        (fnv1a(term.as_bytes()) % self.dim as u64) as usize
    }

    /// L2-normalised tf·idf accumulated into hash buckets.
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut tf: BTreeMap<String, usize> = BTreeMap::new();
        for tok in tokenize(text) {
            *tf.entry(tok).or_insert(0) += 1;
        }
        let mut v = vec![0.0; self.dim];
        for (term, count) in &tf {
            v[self.bucket(term)] += *count as f64 * self.idf(term);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl ExternalVectors {
    /// Reads `dim <d>` followed by `<key> \t <d space-separated values>` lines.
    pub fn read(r: impl Read) -> Result<Self> {
        let mut out = ExternalVectors::default();
        let mut have_dim = false;
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| FeatureError::Parse { line: line_no, msg };
            let line = line.map_err(|e| err(e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if !have_dim {
                let d = line
                    .strip_prefix("dim ")
                    .and_then(|d| d.trim().parse::<usize>().ok())
                    .filter(|d| *d > 0)
                    .ok_or_else(|| err("first line must be `dim <d>` with d > 0".into()))?;
                out.dim = d;
                have_dim = true;
                continue;
            }
            let (key, values) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `<key>\\t<values>`".into()))?;
            let v = values
                .split_whitespace()
                .map(|x| x.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| err("non-numeric value".into()))?;
            if v.len() != out.dim {
                return Err(err(format!("expected {} values, found {}", out.dim, v.len())));
            }
            out.vectors.insert(key.to_string(), v);
        }
        if !have_dim {
            return Err(FeatureError::Parse { line: 0, msg: "empty vector file".into() });
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureProvider {
    HashedTfidf(HashedTfidf),
    External(ExternalVectors),
}

impl FeatureProvider {
    pub fn dim(&self) -> usize {
        match self {
            FeatureProvider::HashedTfidf(p) => p.dim,
            FeatureProvider::External(p) => p.dim,
        }
    }

    /// Vector for one text unit. The hashed provider reads `text`; the
    /// external provider looks up `key`.
    pub fn embed(&self, key: &str, text: &str) -> Result<Vec<f64>> {
        match self {
            FeatureProvider::HashedTfidf(p) => Ok(p.embed(text)),
            FeatureProvider::External(p) => p
                .vectors
                .get(key)
                .cloned()
                .ok_or_else(|| FeatureError::MissingKey(key.to_string())),
        }
    }
}

/// Fits document frequencies over `corpus`, one entry per document.
pub fn fit_tfidf<S: AsRef<str>>(corpus: &[S], dim: usize) -> Result<FeatureProvider> {
    if dim == 0 {
        return Err(FeatureError::ZeroDim);
    }
    if corpus.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut document_frequency = BTreeMap::new();
    for doc in corpus {
        let mut seen: Vec<String> = tokenize(doc.as_ref()).collect();
        seen.sort_unstable();
        seen.dedup();
        for term in seen {
            *document_frequency.entry(term).or_insert(0) += 1;
        }
    }
    Ok(FeatureProvider::HashedTfidf(HashedTfidf {
        dim,
        n_docs: corpus.len(),
        document_frequency,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tfidf(p: &FeatureProvider) -> &HashedTfidf {
        match p {
            FeatureProvider::HashedTfidf(h) => h,
            _ => unreachable!(),
        }
    }

    #[test]
    fn tokenizer_strips_edges_only() {
        let toks: Vec<_> = tokenize("\"Hello,\" said U.S. Senator-elect (Cruz)... !!").collect();
        assert_eq!(toks, ["hello", "said", "u.s", "senator-elect", "cruz"]);
    }

    #[test]
    fn single_document_idf_is_one() {
        let p = fit_tfidf(&["the senate voted"], 16).unwrap();
        let h = tfidf(&p);
        for term in ["the", "senate", "voted"] {
            assert_eq!(h.idf(term), 1.0);
        }
    }

    #[test]
    fn absent_token_idf() {
        let p = fit_tfidf(&["a b", "b c", "c d"], 16).unwrap();
        assert_relative_eq!(tfidf(&p).idf("zzz"), 4f64.ln() + 1.0);
        assert_relative_eq!(tfidf(&p).idf("b"), (4.0f64 / 3.0).ln() + 1.0);
    }

    #[test]
    fn refit_is_identical() {
        let corpus = ["one two", "two three three"];
        assert_eq!(fit_tfidf(&corpus, 32).unwrap(), fit_tfidf(&corpus, 32).unwrap());
    }

    #[test]
    fn embed_contracts() {
        let p = fit_tfidf(&["alpha beta", "beta gamma"], 8).unwrap();
        assert_eq!(p.embed("k", "").unwrap(), vec![0.0; 8]);
        assert_eq!(p.embed("k", " ... ").unwrap(), vec![0.0; 8]);
        let v = p.embed("k", "alpha gamma unseen").unwrap();
        assert_eq!(v.len(), 8);
        assert_relative_eq!(v.iter().map(|x| x * x).sum::<f64>().sqrt(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_tfidf::<&str>(&[], 4), Err(FeatureError::EmptyCorpus)));
        assert!(matches!(fit_tfidf(&["x"], 0), Err(FeatureError::ZeroDim)));
    }

    #[test]
    fn external_lookup() {
        let file = "dim 4\ndoc1/p0\t0.5 -1 2 0\ndoc1/title\t1 1 1 1\n";
        let p = FeatureProvider::External(ExternalVectors::read(file.as_bytes()).unwrap());
        assert_eq!(p.dim(), 4);
        assert_eq!(p.embed(&paragraph_key("doc1", 0), "ignored").unwrap(), vec![0.5, -1.0, 2.0, 0.0]);
        assert!(matches!(p.embed("doc1/p1", ""), Err(FeatureError::MissingKey(_))));
        assert!(ExternalVectors::read("dim 2\nk\t1 2 3\n".as_bytes()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bag_of_words(words in proptest::collection::vec("[a-z]{1,6}", 0..12), seed in any::<u64>()) {
                let p = fit_tfidf(&["a b c", "d e f g"], 24).unwrap();
                let text = words.join(" ");
                let mut shuffled = words.clone();
                let n = shuffled.len();
                if n > 1 {
                    shuffled.rotate_left((seed as usize) % n);
                    shuffled.swap(0, n - 1);
                }
                let a = p.embed("", &text).unwrap();
                let b = p.embed("", &shuffled.join("  ")).unwrap();
                prop_assert_eq!(a.len(), 24);
                prop_assert_eq!(&a, &b);
                prop_assert!(a.iter().all(|x| x.is_finite()));
            }
        }
    }
}
