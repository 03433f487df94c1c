use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::sequence::{TokenSequence, WordKind};
use crate::error::{Error, Result};

/// Dense token indexing with corpus frequencies. Indices are assigned by
/// descending frequency, ties by token, so the layout is independent of
/// corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let mut pairs: Vec<(String, u64)> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (tok, n) in counts {
            if tok.is_empty() {
                return Err(Error::arg("empty token"));
            }
            if n == 0 {
                return Err(Error::arg(format!("token `{tok}` has zero count")));
            }
            match seen.get(&tok) {
                Some(&i) => pairs[i].1 += n,
                None => {
                    seen.insert(tok.clone(), pairs.len());
                    pairs.push((tok, n));
                }
            }
        }
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let index = pairs
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect();
        let (tokens, counts) = pairs.into_iter().unzip();
        Ok(Vocabulary {
            tokens,
            counts,
            index,
        })
    }

    pub fn build(sequences: &[TokenSequence], kind: WordKind) -> Result<Self> {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for s in sequences {
            for w in s.words(kind) {
                if !w.is_empty() {
                    *counts.entry(w.as_str()).or_default() += 1;
                }
            }
        }
        Vocabulary::from_counts(counts.into_iter().map(|(t, n)| (t.to_string(), n)))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `token <TAB> index <TAB> count` per line.
    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        for (i, (t, n)) in self.tokens.iter().zip(&self.counts).enumerate() {
            writeln!(w, "{t}\t{i}\t{n}")?;
        }
        Ok(())
    }

    pub fn read_tsv(r: impl BufRead) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(i + 1, "expected `token<TAB>index<TAB>count`"));
            }
            let idx: usize = cols[1]
                .parse()
                .map_err(|_| Error::parse(i + 1, "bad index"))?;
            let n: u64 = cols[2]
                .parse()
                .map_err(|_| Error::parse(i + 1, "bad count"))?;
            rows.push((idx, cols[0].to_string(), n));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::Format("vocabulary indices are not dense".into()));
        }
        let v = Vocabulary::from_counts(rows.into_iter().map(|(_, t, n)| (t, n)))?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::checkin::YearMonth;

    fn seq(words: &[&str]) -> TokenSequence {
        TokenSequence {
            entity_id: "u".into(),
            month: YearMonth::new(2010, 3).unwrap(),
            feature_words: words.iter().map(|s| s.to_string()).collect(),
            location_words: words.iter().map(|s| format!("loc-{s}")).collect(),
            coordinates: vec![(0.0, 0.0); words.len()],
        }
    }

    #[test]
    fn counts_and_dense_indices() {
        let seqs = vec![
            seq(&["Bar_Evening", "Food_Noon", "Bar_Evening"]),
            seq(&["Bar_Evening"]),
        ];
        let v = Vocabulary::build(&seqs, WordKind::Feature).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.counts(), &[3, 1]);
        assert_eq!(v.get("Bar_Evening"), Some(0));
        assert_eq!(v.token(1), "Food_Noon");
        assert!(v.tokens().iter().all(|t| !t.is_empty()));
        let loc = Vocabulary::build(&seqs, WordKind::Location).unwrap();
        assert_eq!(loc.get("loc-Food_Noon"), Some(1));
    }

    #[test]
    fn tsv_round_trip() {
        let v = Vocabulary::from_counts([("b".to_string(), 2), ("a".to_string(), 2), ("c".to_string(), 5)])
            .unwrap();
        assert_eq!(v.tokens(), ["c", "a", "b"]);
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf), "c\t0\t5\na\t1\t2\nb\t2\t2\n");
        assert_eq!(Vocabulary::read_tsv(buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn rejects_empty_tokens_and_zero_counts() {
        assert!(Vocabulary::from_counts([(String::new(), 1)]).is_err());
        assert!(Vocabulary::from_counts([("x".to_string(), 0)]).is_err());
    }
}
