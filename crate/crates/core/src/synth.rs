//! Seeded generator for a synthetic Ethiopic-script benchmark corpus.
//!
//! Words are random pseudo-words built from Ethiopic syllables, so the
//! corpus carries no real slurs. Every document mentions one or more
//! targets of the three hate categories. What makes a document hateful is
//! context: a hostile word immediately before a target attacks that
//! target, unless a negation word precedes it; a target followed by a
//! hostile word, or mentioned on its own, is not an attack. Hate documents
//! always add a distractor mention of another category, so neither a
//! keyword lexicon nor a bag of words can tell which target is attacked.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{hash_author, RawPost, Source};
use crate::label::{Label, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Labeled Ethiopic documents to generate.
    pub docs: usize,
    /// Relative class frequencies in class order.
    pub class_weights: [f64; NUM_CLASSES],
    /// Extra posts the filters should remove: Latin-script chatter,
    /// verbatim reposts and posts without any lexicon keyword.
    pub noise_posts: usize,
    /// Chance that a syllable is written with a homophone variant.
    pub homophone_rate: f64,
    pub targets_per_class: usize,
    pub hostile_words: usize,
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            docs: 1200,
            class_weights: [0.25, 0.2, 0.15, 0.4],
            noise_posts: 90,
            homophone_rate: 0.1,
            targets_per_class: 3,
            hostile_words: 3,
            filler_words: 40,
            seed: 0,
        }
    }
}

/// The generated word inventory, in normalized spelling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLexicon {
    pub targets: [Vec<String>; 3],
    pub hostile: Vec<String>,
    pub negation: Vec<String>,
    pub filler: Vec<String>,
}

impl SynthLexicon {
    /// Keyword lexicon for candidate filtering (`surface<TAB>theme`).
    pub fn keyword_tsv(&self) -> String {
        let mut out = String::from("# synthetic keyword lexicon\n");
        let themes = ["hate", "religion", "gender"];
        for (words, theme) in self.targets.iter().zip(themes) {
            for w in words {
                out.push_str(&format!("{w}\t{theme}\n"));
            }
        }
        for w in &self.hostile {
            out.push_str(&format!("{w}\toffensive\n"));
        }
        out
    }

    /// Weighted rule lexicon for the keyword baseline
    /// (`surface<TAB>label<TAB>weight`).
    pub fn rule_tsv(&self) -> String {
        let mut out = String::from("# synthetic rule lexicon\n");
        for (words, label) in self.targets.iter().zip(Label::ALL) {
            for w in words {
                out.push_str(&format!("{w}\t{label}\t1\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub posts: Vec<RawPost>,
    /// Labels of the labeled documents (noise posts have none).
    pub truth: Vec<TruthRecord>,
    pub lexicon: SynthLexicon,
}

/// Canonical consonant rows (first-order codepoints) used to build words.
/// Rows that the normalizer folds away are excluded.
const ROWS: [u32; 24] = [
    0x1200, 0x1208, 0x1218, 0x1228, 0x1230, 0x1238, 0x1240, 0x1260, 0x1270, 0x1278, 0x1290, 0x1298, 0x12A0, 0x12A8,
    0x12C8, 0x12D8, 0x12E8, 0x12F0, 0x1300, 0x1308, 0x1320, 0x1328, 0x1338, 0x1348,
];

/// Canonical row and a homophone row that folds onto it.
const VARIANTS: [(u32, u32); 4] = [(0x1200, 0x1210), (0x1230, 0x1220), (0x12A0, 0x12D0), (0x1338, 0x1340)];

const LATIN_CHATTER: [&str; 6] = [
    "great match today",
    "see you at the game tonight",
    "new phone who dis",
    "traffic is terrible again",
    "happy birthday brother",
    "this song is on repeat",
];

fn syllable(rng: &mut ChaCha8Rng) -> char {
    let row = ROWS.choose(rng).expect("rows");
    char::from_u32(row + rng.random_range(0..7)).expect("ethiopic codepoint")
}

fn make_words(rng: &mut ChaCha8Rng, n: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(2..=3);
        let w: String = (0..len).map(|_| syllable(rng)).collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn spell(word: &str, rate: f64, rng: &mut ChaCha8Rng) -> String {
    word.chars()
        .map(|c| {
            let cp = c as u32;
            let variant = VARIANTS.iter().find(|(canon, _)| (*canon..canon + 7).contains(&cp));
            match variant {
                Some((canon, alt)) if rng.random_bool(rate) => char::from_u32(alt + (cp - canon)).expect("variant"),
                _ => c,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Attack(usize),
    Mention(usize),
    Negated(usize),
    Reversed(usize),
}

impl Segment {
    fn words<'a>(self, lex: &'a SynthLexicon, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
        let target = |c: usize, rng: &mut ChaCha8Rng| lex.targets[c].choose(rng).expect("targets").as_str();
        let hostile = |rng: &mut ChaCha8Rng| lex.hostile.choose(rng).expect("hostile").as_str();
        match self {
            Segment::Attack(c) => vec![hostile(rng), target(c, rng)],
            Segment::Mention(c) => vec![target(c, rng)],
            Segment::Negated(c) => {
                let n = lex.negation.choose(rng).expect("negation").as_str();
                vec![n, hostile(rng), target(c, rng)]
            }
            Segment::Reversed(c) => vec![target(c, rng), hostile(rng)],
        }
    }
}

fn distractor(rng: &mut ChaCha8Rng, class: usize) -> Segment {
    match rng.random_range(0..3) {
        0 => Segment::Mention(class),
        1 => Segment::Negated(class),
        _ => Segment::Reversed(class),
    }
}

fn pick_class(rng: &mut ChaCha8Rng, weights: &[f64; NUM_CLASSES]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    NUM_CLASSES - 1
}

/// Token sequence for one document of class `label`.
fn document(label: Label, lex: &SynthLexicon, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut segments = Vec::new();
    if label == Label::Nonhate {
        for _ in 0..rng.random_range(1..=2) {
            let c = rng.random_range(0..3);
            segments.push(distractor(rng, c));
        }
    } else {
        let c = label.index();
        let d = (c + rng.random_range(1..3)) % 3;
        segments.push(Segment::Attack(c));
        segments.push(distractor(rng, d));
        if rng.random_bool(0.5) {
            segments.swap(0, 1);
        }
    }
    let mut words: Vec<String> = Vec::new();
    let filler = |rng: &mut ChaCha8Rng| lex.filler.choose(rng).expect("filler").clone();
    for _ in 0..rng.random_range(0..3) {
        words.push(filler(rng));
    }
    for (i, seg) in segments.iter().enumerate() {
        if i > 0 {
            // at least one filler keeps segments from touching
            for _ in 0..rng.random_range(1..3) {
                words.push(filler(rng));
            }
        }
        words.extend(seg.words(lex, rng).into_iter().map(String::from));
    }
    for _ in 0..rng.random_range(1..4) {
        words.push(filler(rng));
    }
    words
}

fn render(words: &[String], rate: f64, rng: &mut ChaCha8Rng) -> String {
    let mut text = words.iter().map(|w| spell(w, rate, rng)).collect::<Vec<_>>().join(" ");
    match rng.random_range(0..10) {
        0 => text.push_str(" https://t.co/x1"),
        1 => text.insert_str(0, "@user "),
        2 => text = text.replacen(' ', "፣ ", 1),
        _ => {}
    }
    text.push('።');
    text
}

pub fn generate(config: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut taken = BTreeSet::new();
    let targets = [
        make_words(&mut rng, config.targets_per_class, &mut taken),
        make_words(&mut rng, config.targets_per_class, &mut taken),
        make_words(&mut rng, config.targets_per_class, &mut taken),
    ];
    let lexicon = SynthLexicon {
        targets,
        hostile: make_words(&mut rng, config.hostile_words, &mut taken),
        negation: make_words(&mut rng, 2, &mut taken),
        filler: make_words(&mut rng, config.filler_words, &mut taken),
    };
    let start: DateTime<Utc> = Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap();
    let sources = [Source::Twitter, Source::Facebook, Source::Youtube];
    let post = |i: usize, text: String| RawPost {
        id: format!("syn{i:05}"),
        source: sources[i % 3],
        author_hash: hash_author(&format!("author{}", i % 97)),
        text,
        created_at: start + Duration::minutes(i as i64),
    };

    let mut posts = Vec::with_capacity(config.docs + config.noise_posts);
    let mut truth = Vec::with_capacity(config.docs);
    for i in 0..config.docs {
        let label = Label::ALL[pick_class(&mut rng, &config.class_weights)];
        let words = document(label, &lexicon, &mut rng);
        let p = post(i, render(&words, config.homophone_rate, &mut rng));
        truth.push(TruthRecord {
            id: p.id.clone(),
            label,
        });
        posts.push(p);
    }
    for j in 0..config.noise_posts {
        let i = config.docs + j;
        let text = match j % 3 {
            0 => LATIN_CHATTER[j / 3 % LATIN_CHATTER.len()].to_string(),
            1 if !truth.is_empty() => posts[rng.random_range(0..config.docs)].text.clone(),
            _ => {
                let n = rng.random_range(3..7);
                let words: Vec<String> = (0..n)
                    .map(|_| lexicon.filler.choose(&mut rng).expect("filler").clone())
                    .collect();
                render(&words, config.homophone_rate, &mut rng)
            }
        };
        posts.push(post(i, text));
    }
    SynthCorpus { posts, truth, lexicon }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textnorm::normalized_tokens;

    #[test]
    fn deterministic_and_sized() {
        let c = SynthConfig {
            docs: 200,
            noise_posts: 30,
            ..SynthConfig::default()
        };
        let a = generate(&c);
        assert_eq!(a, generate(&c));
        assert_eq!((a.posts.len(), a.truth.len()), (230, 200));
        assert!(Label::ALL.iter().all(|l| a.truth.iter().any(|t| t.label == *l)));
        assert_ne!(a.posts, generate(&SynthConfig { seed: 1, ..c }).posts);
    }

    #[test]
    fn spelling_variants_normalize_to_lexicon_words() {
        let c = SynthConfig {
            docs: 300,
            homophone_rate: 0.5,
            noise_posts: 0,
            ..SynthConfig::default()
        };
        let corpus = generate(&c);
        let lex = &corpus.lexicon;
        let known: BTreeSet<&str> = lex
            .targets
            .iter()
            .flatten()
            .chain(&lex.hostile)
            .chain(&lex.negation)
            .chain(&lex.filler)
            .map(String::as_str)
            .collect();
        let mut variant_seen = false;
        for p in &corpus.posts {
            let tokens = normalized_tokens(&p.text);
            variant_seen |= p
                .text
                .chars()
                .any(|c| VARIANTS.iter().any(|(_, alt)| (*alt..alt + 7).contains(&(c as u32))));
            for t in &tokens {
                assert!(known.contains(t.as_str()), "{t} in {}", p.text);
            }
        }
        assert!(variant_seen);
    }

    #[test]
    fn hate_documents_attack_their_own_category() {
        let corpus = generate(&SynthConfig::default());
        let lex = &corpus.lexicon;
        for (p, t) in corpus.posts.iter().zip(&corpus.truth) {
            let tokens = normalized_tokens(&p.text);
            let attacked: BTreeSet<usize> = tokens
                .windows(2)
                .enumerate()
                .filter(|(i, w)| lex.hostile.contains(&w[0]) && (*i == 0 || !lex.negation.contains(&tokens[i - 1])))
                .filter_map(|(_, w)| lex.targets.iter().position(|ts| ts.contains(&w[1])))
                .collect();
            let expected: BTreeSet<usize> = match t.label {
                Label::Nonhate => BTreeSet::new(),
                l => [l.index()].into(),
            };
            assert_eq!(attacked, expected, "{}", p.text);
        }
    }
}
