use std::collections::{BTreeSet, HashMap};

use super::special;
use crate::error::{Error, Result};

/// Symbol prefixed to every word before merging; a token is word-initial
/// exactly when its string starts with it.
pub const WORD_MARK: char = '\u{2581}';

const HEADER: &str = "antlm-tokenizer v1";

/// Token ids with a parallel word-initial flag per id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub word_starts: Vec<bool>,
}

/// A trained byte-pair-encoding vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

fn merge_pair(symbols: &mut Vec<u32>, a: u32, b: u32, into: u32) {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
            out.push(into);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    *symbols = out;
}

/// Greedy BPE: repeatedly merges the most frequent adjacent pair, breaking
/// ties by the lexicographically smallest `(left, right)` strings, until the
/// vocabulary holds `vocab_size` entries or no pair remains.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Tokenizer> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for text in corpus {
        for word in text.as_ref().split_whitespace() {
            *counts.entry(word).or_default() += 1;
        }
    }
    let mut alphabet: BTreeSet<char> = counts.keys().flat_map(|w| w.chars()).collect();
    alphabet.remove(&WORD_MARK);
    alphabet.insert(WORD_MARK);
    let floor = alphabet.len() + special::ALL.len();
    if vocab_size <= floor {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} must exceed alphabet size {} plus {} special tokens",
            alphabet.len(),
            special::ALL.len()
        )));
    }

    let mut tok = Tokenizer::with_alphabet(alphabet.iter().map(|c| c.to_string()));
    let mut words: Vec<(Vec<u32>, u64)> = counts
        .iter()
        .map(|(w, &c)| (tok.initial_symbols(w), c))
        .collect();
    words.sort();

    while tok.tokens.len() < vocab_size {
        let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += c;
            }
        }
        let best = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&tok.tokens[pa.0 as usize], &tok.tokens[pa.1 as usize]);
                let kb = (&tok.tokens[pb.0 as usize], &tok.tokens[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((a, b), _)) = best else { break };
        let into = tok.add_merge(a, b);
        for (syms, _) in &mut words {
            merge_pair(syms, a, b, into);
        }
    }
    Ok(tok)
}

impl Tokenizer {
    fn with_alphabet(alphabet: impl IntoIterator<Item = String>) -> Self {
        let mut tok = Self {
            tokens: Vec::new(),
            ids: HashMap::new(),
            merges: Vec::new(),
            ranks: HashMap::new(),
        };
        for name in special::NAMES.iter().map(|s| s.to_string()).chain(alphabet) {
            tok.intern(name);
        }
        tok
    }

    fn intern(&mut self, s: String) -> u32 {
        if let Some(&id) = self.ids.get(&s) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.ids.insert(s.clone(), id);
        self.tokens.push(s);
        id
    }

    fn add_merge(&mut self, a: u32, b: u32) -> u32 {
        let (sa, sb) = (
            self.tokens[a as usize].clone(),
            self.tokens[b as usize].clone(),
        );
        let into = self.intern(format!("{sa}{sb}"));
        self.ranks.insert((a, b), (self.merges.len(), into));
        self.merges.push((sa, sb));
        into
    }

    fn initial_symbols(&self, word: &str) -> Vec<u32> {
        std::iter::once(WORD_MARK)
            .chain(word.chars())
            .enumerate()
            .map(|(i, c)| {
                if i > 0 && c == WORD_MARK {
                    return special::UNK;
                }
                self.ids
                    .get(c.encode_utf8(&mut [0; 4]) as &str)
                    .copied()
                    .unwrap_or(special::UNK)
            })
            .collect()
    }

    fn encode_word(&self, word: &str) -> Vec<u32> {
        let mut syms = self.initial_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| {
                    self.ranks
                        .get(&(w[0], w[1]))
                        .map(|&(rank, into)| (rank, w[0], w[1], into))
                })
                .min();
            match best {
                Some((_, a, b, into)) => merge_pair(&mut syms, a, b, into),
                None => return syms,
            }
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    /// Specials count as word starts so that they never join a neighbour.
    pub fn is_word_start(&self, id: u32) -> bool {
        special::ALL.contains(&id)
            || self
                .tokens
                .get(id as usize)
                .is_some_and(|t| t.starts_with(WORD_MARK))
    }

    pub fn vocab_view(&self) -> crate::objectives::VocabView {
        crate::objectives::VocabView::standard(self.vocab_size())
    }

    /// Encodes whitespace-separated words; characters outside the training
    /// alphabet become UNK.
    pub fn encode(&self, text: &str) -> Encoding {
        let mut out = Encoding::default();
        for word in text.split_whitespace() {
            self.push_word(&self.encode_word(word), &mut out);
        }
        out
    }

    fn push_word(&self, ids: &[u32], out: &mut Encoding) {
        for &id in ids {
            out.ids.push(id);
            out.word_starts.push(self.is_word_start(id));
        }
    }

    /// Encodes many documents, caching each distinct word once.
    pub fn encode_documents<S: AsRef<str>>(&self, docs: &[S]) -> Vec<Encoding> {
        let mut cache: HashMap<&str, Vec<u32>> = HashMap::new();
        docs.iter()
            .map(|d| {
                let mut out = Encoding::default();
                for word in d.as_ref().split_whitespace() {
                    let ids = cache.entry(word).or_insert_with(|| self.encode_word(word));
                    self.push_word(ids, &mut out);
                }
                out
            })
            .collect()
    }

    /// Inverse of [`Self::encode`] on text over the training alphabet. PAD
    /// decodes to nothing and DOC to a newline.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let piece = match id {
                special::PAD => continue,
                special::DOC => {
                    out.push('\n');
                    continue;
                }
                special::MASK => special::NAMES[special::MASK as usize],
                _ => match self.tokens.get(id as usize) {
                    Some(t) if !special::ALL.contains(&id) => t.as_str(),
                    _ => special::NAMES[special::UNK as usize],
                },
            };
            let (starts, body) = match piece.strip_prefix(WORD_MARK) {
                Some(rest) => (true, rest),
                None => (special::ALL.contains(&id), piece),
            };
            if starts && !out.is_empty() && !out.ends_with('\n') {
                out.push(' ');
            }
            out.push_str(body);
        }
        out
    }

    /// Versioned text serialization: specials, merges in order, then the
    /// full vocabulary by id.
    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER}\n[specials]\n");
        for name in special::NAMES {
            s.push_str(name);
            s.push('\n');
        }
        s.push_str("[merges]\n");
        for (a, b) in &self.merges {
            s.push_str(&format!("{a} {b}\n"));
        }
        s.push_str("[vocab]\n");
        for (id, t) in self.tokens.iter().enumerate() {
            s.push_str(&format!("{id} {t}\n"));
        }
        s
    }

    /// Parses [`Self::to_text`] output and checks that replaying the merges
    /// over the alphabet reproduces the stored vocabulary.
    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            position: line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(err(1, format!("expected header `{HEADER}`"))),
        }
        let mut section = "";
        let mut specials = Vec::new();
        let mut merges = Vec::new();
        let mut vocab = Vec::new();
        for (n, line) in lines {
            if let Some(name @ ("specials" | "merges" | "vocab")) =
                line.strip_prefix('[').and_then(|l| l.strip_suffix(']'))
            {
                section = name;
                continue;
            }
            match section {
                "specials" => specials.push(line.to_string()),
                "merges" => {
                    let (a, b) = line
                        .split_once(' ')
                        .ok_or_else(|| err(n, "merge line needs two symbols".into()))?;
                    merges.push((a.to_string(), b.to_string()));
                }
                "vocab" => {
                    let (id, tok) = line
                        .split_once(' ')
                        .ok_or_else(|| err(n, "vocab line needs `id token`".into()))?;
                    let id: usize = id.parse().map_err(|_| err(n, format!("bad id `{id}`")))?;
                    if id != vocab.len() {
                        return Err(err(n, format!("expected id {}, found {id}", vocab.len())));
                    }
                    vocab.push(tok.to_string());
                }
                _ => return Err(err(n, "content before the first section".into())),
            }
        }
        if specials != special::NAMES {
            return Err(err(
                2,
                "specials must be [PAD] [DOC] [MASK] [UNK] in order".into(),
            ));
        }
        if vocab.len() < specials.len() || vocab[..specials.len()] != specials[..] {
            return Err(err(0, "vocabulary must begin with the specials".into()));
        }
        let alphabet: Vec<String> = vocab[specials.len()..]
            .iter()
            .take_while(|t| t.chars().count() == 1)
            .cloned()
            .collect();
        let mut tok = Self::with_alphabet(alphabet);
        for (a, b) in &merges {
            let (Some(ia), Some(ib)) = (tok.id(a), tok.id(b)) else {
                return Err(err(0, format!("merge `{a} {b}` uses unknown symbols")));
            };
            tok.add_merge(ia, ib);
        }
        if tok.tokens != vocab {
            return Err(err(
                0,
                "merges do not reproduce the stored vocabulary".into(),
            ));
        }
        Ok(tok)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus() -> Vec<&'static str> {
        vec![
            "the cat sat on the mat",
            "the dog sat on the log",
            "unbelievable story about the cat and the dog",
            "hello world hello there",
        ]
    }

    #[test]
    fn first_merge_by_hand_count() {
        // Pairs: (a,a) x3, (▁,a) x3, (a,b) x1; "a" < "▁" breaks the tie.
        let tok = train_bpe(&["aa aa aab"], 4 + 3 + 1).unwrap();
        assert_eq!(tok.merges()[0], ("a".to_string(), "a".to_string()));
    }

    #[test]
    fn training_is_deterministic() {
        let a = train_bpe(&corpus(), 60).unwrap();
        let b = train_bpe(&corpus(), 60).unwrap();
        assert_eq!(a.merges(), b.merges());
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.vocab_size(), 60);
    }

    #[test]
    fn vocab_too_small() {
        let err = train_bpe(&corpus(), 8).unwrap_err();
        assert!(
            matches!(err, Error::Config(ref m) if m.contains("alphabet")),
            "{err}"
        );
    }

    #[test]
    fn word_starts_mark_word_initial_subwords() {
        let tok = train_bpe(&corpus(), 40).unwrap();
        let enc = tok.encode("unbelievable story");
        assert!(enc.word_starts[0]);
        let starts = enc.word_starts.iter().filter(|&&s| s).count();
        assert_eq!(starts, 2);
        for (&id, &s) in enc.ids.iter().zip(&enc.word_starts) {
            assert_eq!(s, tok.token(id).unwrap().starts_with(WORD_MARK));
        }
    }

    #[test]
    fn round_trips() {
        let tok = train_bpe(&corpus(), 50).unwrap();
        assert_eq!(tok.decode(&tok.encode("hello world").ids), "hello world");
        assert!(tok.encode("").ids.is_empty());
        let unknown = tok.encode("héllo");
        assert!(unknown.ids.contains(&special::UNK));
    }

    #[test]
    fn serialization_round_trip() {
        let tok = train_bpe(&corpus(), 64).unwrap();
        let text = tok.to_text();
        let back = Tokenizer::from_text(&text).unwrap();
        assert_eq!(back, tok);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn corrupted_file_rejected() {
        let tok = train_bpe(&corpus(), 64).unwrap();
        let text = tok.to_text().replacen("[merges]\n", "[merges]\nq z\n", 1);
        assert!(Tokenizer::from_text(&text).is_err());
        assert!(Tokenizer::from_text("not a tokenizer").is_err());
    }

    #[test]
    fn documents_encode_like_single_texts() {
        let tok = train_bpe(&corpus(), 64).unwrap();
        let docs = tok.encode_documents(&corpus());
        for (d, text) in docs.iter().zip(corpus()) {
            assert_eq!(d, &tok.encode(text));
        }
    }

    #[test]
    fn encode_is_deterministic_on_random_strings() {
        use rand::{Rng, SeedableRng};
        let tok = train_bpe(&corpus(), 64).unwrap();
        let chars: Vec<char> = "abcdehlost wxyz".chars().collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let s: String = (0..rng.gen_range(0..30))
                .map(|_| chars[rng.gen_range(0..chars.len())])
                .collect();
            assert_eq!(tok.encode(&s), tok.encode(&s));
        }
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(words in proptest::collection::vec("[a-z.,]{1,9}", 0..8)) {
            let tok = train_bpe(&[corpus().join(" ") + " . , z q x v b k j y f g i p r u"], 80).unwrap();
            let text = words.join(" ");
            prop_assert_eq!(tok.decode(&tok.encode(&text).ids), text);
        }
    }
}
