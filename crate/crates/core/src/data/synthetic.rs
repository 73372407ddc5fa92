//! A small probabilistic English-like grammar with number agreement, used
//! to generate a training corpus and matching minimal pairs.
//!
//! ```text
//! S   -> NP[n] VP[n] "."
//! NP  -> Det[n] (Adj) N[n] (P NP)      PP only on subjects
//! VP  -> Vi[n] | Vt[n] NP
//! ```

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::MinimalPair;

const NOUNS: [(&str, &str); 12] = [
    ("dog", "dogs"),
    ("cat", "cats"),
    ("bird", "birds"),
    ("child", "children"),
    ("teacher", "teachers"),
    ("farmer", "farmers"),
    ("horse", "horses"),
    ("girl", "girls"),
    ("boy", "boys"),
    ("friend", "friends"),
    ("doctor", "doctors"),
    ("king", "kings"),
];
const INTRANSITIVE: [(&str, &str); 6] = [
    ("runs", "run"),
    ("sleeps", "sleep"),
    ("sings", "sing"),
    ("laughs", "laugh"),
    ("waits", "wait"),
    ("smiles", "smile"),
];
const TRANSITIVE: [(&str, &str); 6] = [
    ("sees", "see"),
    ("likes", "like"),
    ("helps", "help"),
    ("finds", "find"),
    ("follows", "follow"),
    ("watches", "watch"),
];
const ADJECTIVES: [&str; 7] = ["big", "small", "old", "young", "happy", "quiet", "red"];
const PREPOSITIONS: [&str; 4] = ["near", "behind", "with", "beside"];
const SINGULAR_DETS: [(&str, u32); 4] = [("the", 10), ("a", 4), ("this", 3), ("that", 3)];
const PLURAL_DETS: [(&str, u32); 4] = [("the", 10), ("these", 4), ("those", 3), ("many", 3)];

pub const PHENOMENA: [&str; 5] = [
    "agreement_simple",
    "agreement_attractor",
    "agreement_transitive",
    "determiner_noun",
    "adjective_order",
];

/// Size and seed of a generated corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrammarConfig {
    /// Approximate corpus size in words and punctuation marks.
    pub target_tokens: usize,
    pub pairs_per_phenomenon: usize,
    pub seed: u64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self {
            target_tokens: 100_000,
            pairs_per_phenomenon: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Number {
    Singular,
    Plural,
}

fn number<R: Rng>(rng: &mut R) -> Number {
    if rng.gen_bool(0.5) {
        Number::Singular
    } else {
        Number::Plural
    }
}

fn pick<'a, R: Rng>(pairs: &[(&'a str, &'a str)], n: Number, rng: &mut R) -> &'a str {
    let (s, p) = pairs[rng.gen_range(0..pairs.len())];
    match n {
        Number::Singular => s,
        Number::Plural => p,
    }
}

fn determiner<R: Rng>(n: Number, rng: &mut R) -> &'static str {
    let table = match n {
        Number::Singular => &SINGULAR_DETS,
        Number::Plural => &PLURAL_DETS,
    };
    table
        .choose_weighted(rng, |(_, w)| *w)
        .expect("nonempty table")
        .0
}

/// A noun phrase as (determiner, optional adjective, noun).
struct NounPhrase {
    det: &'static str,
    adj: Option<&'static str>,
    noun: &'static str,
}

impl NounPhrase {
    fn sample<R: Rng>(n: Number, adj_p: f64, rng: &mut R) -> Self {
        Self {
            det: determiner(n, rng),
            adj: rng
                .gen_bool(adj_p)
                .then(|| *ADJECTIVES.choose(rng).expect("nonempty")),
            noun: pick(&NOUNS, n, rng),
        }
    }

    fn push(&self, out: &mut Vec<&'static str>) {
        out.push(self.det);
        out.extend(self.adj);
        out.push(self.noun);
    }
}

fn sentence<R: Rng>(rng: &mut R) -> Vec<&'static str> {
    let n = number(rng);
    let mut words = Vec::new();
    NounPhrase::sample(n, 0.3, rng).push(&mut words);
    if rng.gen_bool(0.25) {
        words.push(PREPOSITIONS.choose(rng).expect("nonempty"));
        NounPhrase::sample(number(rng), 0.2, rng).push(&mut words);
    }
    if rng.gen_bool(0.5) {
        words.push(pick(&INTRANSITIVE, n, rng));
    } else {
        words.push(pick(&TRANSITIVE, n, rng));
        NounPhrase::sample(number(rng), 0.2, rng).push(&mut words);
    }
    words.push(".");
    words
}

/// Documents of 4 to 9 sentences, one document per line, separated by blank
/// lines.
pub fn generate_corpus(config: &GrammarConfig) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = String::new();
    let mut count = 0;
    while count < config.target_tokens {
        let sentences = rng.gen_range(4..10);
        let mut doc = Vec::new();
        for _ in 0..sentences {
            doc.extend(sentence(&mut rng));
        }
        count += doc.len();
        out.push_str(&doc.join(" "));
        out.push_str("\n\n");
    }
    out
}

fn flip(n: Number) -> Number {
    match n {
        Number::Singular => Number::Plural,
        Number::Plural => Number::Singular,
    }
}

fn verb_form(pairs: &[(&'static str, &'static str)], idx: usize, n: Number) -> &'static str {
    match n {
        Number::Singular => pairs[idx].0,
        Number::Plural => pairs[idx].1,
    }
}

fn one_pair<R: Rng>(phenomenon: &str, rng: &mut R) -> MinimalPair {
    let n = number(rng);
    let subject = NounPhrase {
        det: determiner(n, rng),
        adj: None,
        noun: pick(&NOUNS, n, rng),
    };
    let mut prefix = Vec::new();
    let (good, bad) = match phenomenon {
        "agreement_simple" | "agreement_attractor" => {
            subject.push(&mut prefix);
            if phenomenon == "agreement_attractor" {
                prefix.push(PREPOSITIONS.choose(rng).expect("nonempty"));
                let attractor = NounPhrase {
                    det: "the",
                    adj: None,
                    noun: pick(&NOUNS, flip(n), rng),
                };
                attractor.push(&mut prefix);
            }
            let v = rng.gen_range(0..INTRANSITIVE.len());
            let mut g = prefix.clone();
            let mut b = prefix;
            g.extend([verb_form(&INTRANSITIVE, v, n), "."]);
            b.extend([verb_form(&INTRANSITIVE, v, flip(n)), "."]);
            (g, b)
        }
        "agreement_transitive" => {
            subject.push(&mut prefix);
            let v = rng.gen_range(0..TRANSITIVE.len());
            let mut object = Vec::new();
            NounPhrase::sample(number(rng), 0.0, rng).push(&mut object);
            let mut g = prefix.clone();
            let mut b = prefix;
            g.push(verb_form(&TRANSITIVE, v, n));
            b.push(verb_form(&TRANSITIVE, v, flip(n)));
            g.extend(object.iter().copied().chain(["."]));
            b.extend(object.iter().copied().chain(["."]));
            (g, b)
        }
        "determiner_noun" => {
            let (det, wrong) = match n {
                Number::Singular => *[("this", "these"), ("that", "those")]
                    .choose(rng)
                    .expect("nonempty"),
                Number::Plural => *[("these", "this"), ("those", "that")]
                    .choose(rng)
                    .expect("nonempty"),
            };
            let verb = pick(&INTRANSITIVE, n, rng);
            (
                vec![det, subject.noun, verb, "."],
                vec![wrong, subject.noun, verb, "."],
            )
        }
        _ => {
            let adj = *ADJECTIVES.choose(rng).expect("nonempty");
            let verb = pick(&INTRANSITIVE, n, rng);
            (
                vec![subject.det, adj, subject.noun, verb, "."],
                vec![subject.det, subject.noun, adj, verb, "."],
            )
        }
    };
    MinimalPair {
        phenomenon: phenomenon.to_string(),
        good: good.join(" "),
        bad: bad.join(" "),
    }
}

/// `pairs_per_phenomenon` pairs for each of [`PHENOMENA`], drawn from a
/// generator independent of the corpus one. Both members of a pair have the
/// same number of words.
pub fn generate_pairs(config: &GrammarConfig) -> Vec<MinimalPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    PHENOMENA
        .iter()
        .flat_map(|ph| {
            (0..config.pairs_per_phenomenon)
                .map(|_| one_pair(ph, &mut rng))
                .collect::<Vec<_>>()
        })
        .collect()
}
