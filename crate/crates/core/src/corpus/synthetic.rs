//! Deterministic synthetic code-search corpus.
//!
//! Each pair is built around a small set of latent concepts. A concept has a
//! natural-language surface form (used in docstrings and queries) and a
//! distinct code surface form (used as identifiers), so aligning the two
//! modalities requires learning the concept mapping rather than copying
//! tokens. Pairs are grouped into topics that share one concept; docs in the
//! same topic are graded `Substitute` for each other's queries.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DocKind, Document, Grade, Judgment, Modality, Query, TrainingPair};
use crate::error::{Error, Result};

const CONCEPTS_PER_PAIR: usize = 4;
const PAIRS_PER_TOPIC: usize = 8;

const NATURAL_CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const CODE_LETTERS: &[u8] = b"bcdfghjklmnpqrstvwxz";

const LIBS: &[&str] = &["np", "os", "re", "math", "json", "itertools"];

const VERBS: &[(&str, &str)] = &[
    ("Return", "get"),
    ("Compute", "calculate"),
    ("Build", "create"),
    ("Update", "modify"),
    ("Collect", "gather"),
    ("Merge", "combine"),
    ("Parse", "read"),
    ("Load", "fetch"),
];

// {0}..{3} are concept identifiers; {lib} a module name; {n} and {m} small
// integer literals.
const CODE_TEMPLATES: &[&str] = &[
    "def {0}({1}, {2}):\n    {3} = {1} + {n}\n    return {lib}.{0}({3}, {2} * {m})\n",
    "def {0}({1}):\n    {2} = []\n    for {3} in {1}:\n        if {3} > {n}:\n            {2}.append({3} - {m})\n    return {2}\n",
    "def {0}({1}, {2}={n}):\n    # bounded loop\n    while {1} < {2}:\n        {1} = {lib}.{3}({1}, {m})\n    return {1}\n",
    "class {0}:\n    def {1}(self, {2}):\n        self.{3} = {2} - {n}\n        return self.{3} * {m}\n",
    "def {0}({1}, {2}):\n    if not {1}:\n        raise ValueError(\"empty input\")\n    {3} = {lib}.{2}({1}[{n}:{m}])\n    return {3}\n",
];

const PASSAGE_TEMPLATES: &[&str] = &[
    "{verb} the {0} {1} for {2} and {3}.",
    "{verb} {0} with {1} using the {2} {3}.",
    "{verb} a {0} from {1}, {2} and {3}.",
];

const QUERY_TEMPLATES: &[&str] = &[
    "how to {verb} {0} {1} with {2} {3}",
    "{verb} {0} and {1} from {2} {3}",
    "{0} {1} {2} {3} {verb}",
];

/// Output of [`generate_synthetic`]. Documents alternate code doc, docstring.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub documents: Vec<Document>,
    pub pairs: Vec<TrainingPair>,
    pub queries: Vec<Query>,
    pub judgments: Vec<Judgment>,
    /// Topic index of each pair, in pair order.
    pub topics: Vec<usize>,
}

fn unique_words(
    rng: &mut ChaCha8Rng,
    n: usize,
    taken: &mut HashSet<String>,
    make: impl Fn(&mut ChaCha8Rng) -> String,
) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = make(rng);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn natural_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*NATURAL_CONSONANTS.choose(rng).unwrap() as char);
        w.push(*VOWELS.choose(rng).unwrap() as char);
    }
    w
}

fn code_word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(3..=5);
    (0..len)
        .map(|_| *CODE_LETTERS.choose(rng).unwrap() as char)
        .collect()
}

fn fill(template: &str, slots: &[&str], extra: &[(&str, String)]) -> String {
    let mut s = template.to_string();
    for (i, v) in slots.iter().enumerate() {
        s = s.replace(&format!("{{{i}}}"), v);
    }
    for (k, v) in extra {
        s = s.replace(&format!("{{{k}}}"), v);
    }
    s
}

/// Generates `n_pairs` code/docstring pairs over `vocab_size` latent concepts.
///
/// Pure function of its arguments.
pub fn generate_synthetic(seed: u64, n_pairs: usize, vocab_size: usize) -> Result<SyntheticCorpus> {
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("n_pairs must be at least 1".into()));
    }
    if vocab_size < 16 {
        return Err(Error::InvalidArgument("vocab_size must be at least 16".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut taken: HashSet<String> = HashSet::new();
    let natural = unique_words(&mut rng, vocab_size, &mut taken, natural_word);
    let code = unique_words(&mut rng, vocab_size, &mut taken, code_word);

    let n_topics = (n_pairs / PAIRS_PER_TOPIC).max(1);
    let topic_core: Vec<usize> = (0..n_topics).map(|t| t % vocab_size).collect();

    let mut documents = Vec::with_capacity(2 * n_pairs);
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut queries = Vec::with_capacity(n_pairs);
    let mut topics = Vec::with_capacity(n_pairs);

    for i in 0..n_pairs {
        let topic = i % n_topics;
        let core = topic_core[topic];
        let others: Vec<usize> = (0..vocab_size).filter(|&c| c != core).collect();
        let mut concepts: Vec<usize> = others
            .choose_multiple(&mut rng, CONCEPTS_PER_PAIR - 1)
            .copied()
            .collect();
        concepts.push(core);

        let mut roles = concepts.clone();
        roles.shuffle(&mut rng);
        let code_slots: Vec<&str> = roles.iter().map(|&c| code[c].as_str()).collect();
        let template = CODE_TEMPLATES.choose(&mut rng).unwrap();
        let lib = LIBS.choose(&mut rng).unwrap().to_string();
        let n = rng.gen_range(0..32).to_string();
        let m = rng.gen_range(0..32).to_string();
        let body = fill(template, &code_slots, &[("lib", lib), ("n", n), ("m", m)]);

        let (verb, synonym) = *VERBS.choose(&mut rng).unwrap();

        let mut order = concepts.clone();
        order.shuffle(&mut rng);
        let words: Vec<&str> = order.iter().map(|&c| natural[c].as_str()).collect();
        let passage = fill(
            PASSAGE_TEMPLATES.choose(&mut rng).unwrap(),
            &words,
            &[("verb", verb.to_string())],
        );

        order.shuffle(&mut rng);
        let words: Vec<&str> = order.iter().map(|&c| natural[c].as_str()).collect();
        let query = fill(
            QUERY_TEMPLATES.choose(&mut rng).unwrap(),
            &words,
            &[("verb", synonym.to_string())],
        );

        let code_id = format!("c{i:05}");
        let passage_id = format!("p{i:05}");
        documents.push(Document {
            id: code_id.clone(),
            modality: Modality::Structured,
            kind: DocKind::Code,
            title: None,
            body,
            lang_tag: Some("python".into()),
            doc_link: None,
            bullets: None,
        });
        documents.push(Document {
            id: passage_id.clone(),
            modality: Modality::Unstructured,
            kind: DocKind::Passage,
            title: None,
            body: passage,
            lang_tag: None,
            doc_link: Some(code_id.clone()),
            bullets: None,
        });
        pairs.push(TrainingPair {
            passage_id,
            doc_id: code_id,
        });
        queries.push(Query {
            id: format!("q{i:05}"),
            text: query,
        });
        topics.push(topic);
    }

    let mut judgments = Vec::with_capacity(n_pairs * n_pairs);
    for (qi, q) in queries.iter().enumerate() {
        for (di, pair) in pairs.iter().enumerate() {
            let grade = if qi == di {
                Grade::Exact
            } else if topics[qi] == topics[di] {
                Grade::Substitute
            } else {
                Grade::Irrelevant
            };
            judgments.push(Judgment {
                query_id: q.id.clone(),
                doc_id: pair.doc_id.clone(),
                grade,
            });
        }
    }

    Ok(SyntheticCorpus {
        documents,
        pairs,
        queries,
        judgments,
        topics,
    })
}
