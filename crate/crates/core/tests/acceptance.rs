//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line, in order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdr_core::corpus::{
    build_pairs, generate_synthetic, load_documents, DocKind, Document, Grade, Judgment, Modality, Split,
    SyntheticCorpus, TrainingPair,
};
use sdr_core::encoder::tokenizer::tokenize_spans;
use sdr_core::encoder::{encode_batch, tokenize, Embedding, EncoderConfig, ModelParams, Vocabulary};
use sdr_core::evalkit::{evaluate, geometry, judgment_map, mrr_at_k, ndcg_at_k, GainScheme, GainTable, GeometryReport, RunRanking};
use sdr_core::masker::{is_sentinel, mask_entities, reconstruct, MaskedExample, SentinelVocab};
use sdr_core::retrieval::{mine_hard_negatives, search, Index};
use sdr_core::structparse::{body_mode, extract_entities};
use sdr_core::trainer::data::{corpus_vocabulary, document_ids, finetune, pretrain, pretrain_items, query_tokens, TrainConfig};
use sdr_core::trainer::{
    batch_loss, grad_check, loss_dr, loss_sda, Batch, FinetuneBatch, FinetuneItem, NegativeMode, PretrainBatch,
    PretrainItem, PretrainOptions, TrainMode,
};

const SEEDS: [u64; 3] = [0, 1, 2];
const N_PAIRS: usize = 256;
const N_HELDOUT: usize = 64;
const CONCEPTS: usize = 16;
const PRETRAIN_STEPS: u64 = 500;
const PRETRAIN_LR: f64 = 2e-3;
const FINETUNE_STEPS: u64 = 200;
const FINETUNE_LR: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- oracles

fn oracle_gain(scheme: GainScheme, g: Grade) -> f64 {
    match (scheme, g) {
        (_, Grade::Exact) => 1.0,
        (GainScheme::FourClass, Grade::Substitute) => 0.1,
        (GainScheme::FourClass, Grade::Complement) => 0.01,
        _ => 0.0,
    }
}

fn oracle_ndcg(ranked: &[String], judged: &HashMap<String, Grade>, scheme: GainScheme, k: usize) -> (f64, bool) {
    let mut dcg = 0.0;
    for (i, d) in ranked.iter().take(k).enumerate() {
        let g = judged.get(d).map_or(0.0, |&g| oracle_gain(scheme, g));
        dcg += g / ((i + 2) as f64).log2();
    }
    let mut ideal: Vec<f64> = judged.values().map(|&g| oracle_gain(scheme, g)).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        (0.0, true)
    } else {
        (dcg / idcg, false)
    }
}

fn oracle_rr(ranked: &[String], judged: &HashMap<String, Grade>, k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .position(|d| judged.get(d) == Some(&Grade::Exact))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// Held-out MRR@10 where row `i` of `queries` is relevant to row `i` of `docs`.
fn paired_mrr10(queries: &[Embedding], docs: &[Embedding]) -> f64 {
    let mut total = 0.0;
    for (i, q) in queries.iter().enumerate() {
        let s: Vec<f64> = docs.iter().map(|d| d.0.iter().zip(&q.0).map(|(a, b)| a * b).sum()).collect();
        let rank = 1 + s
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > s[i] || (v == s[i] && j < i))
            .count();
        if rank <= 10 {
            total += 1.0 / rank as f64;
        }
    }
    total / queries.len() as f64
}

// ---------------------------------------------------------------- shared setup

fn toy_params() -> (ModelParams, PretrainBatch, FinetuneBatch) {
    const MAX_LEN: usize = 24;
    let c = generate_synthetic(3, 4, 16).unwrap();
    let docs: HashMap<&str, &Document> = c.documents.iter().map(|d| (d.id.as_str(), d)).collect();
    let sv = SentinelVocab::default();
    let masked: HashMap<String, MaskedExample> = c
        .documents
        .iter()
        .filter(|d| d.modality == Modality::Structured)
        .map(|d| (d.id.clone(), mask_entities(d, &extract_entities(d).unwrap(), &sv, 100).unwrap()))
        .collect();
    let queries: Vec<Vec<String>> = c.queries.iter().map(|q| query_tokens(&q.text)).collect();
    let vocab = corpus_vocabulary(c.documents.iter(), &queries, 1);
    let items = pretrain_items(&c.pairs, |id| docs.get(id).copied(), &masked, &vocab, MAX_LEN).unwrap();
    let config = EncoderConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 16,
        max_len: MAX_LEN,
        seed: 17,
    };
    let params = ModelParams::init(config, vocab.len()).unwrap();
    let code: Vec<Vec<u32>> = items.iter().map(|i| i.doc.clone()).collect();
    let fin = FinetuneBatch {
        items: c
            .queries
            .iter()
            .enumerate()
            .map(|(i, q)| FinetuneItem {
                query: vocab.encode(&query_tokens(&q.text), MAX_LEN),
                positive: code[i].clone(),
                hard_negatives: vec![code[(i + 1) % code.len()].clone()],
            })
            .collect(),
    };
    (params, PretrainBatch { items }, fin)
}

fn only(sda: bool, mep: bool) -> PretrainOptions {
    PretrainOptions {
        sda,
        mep,
        sda_on_masked: false,
    }
}

/// One seeded corpus, its split, and every model trained on it.
struct SeedRun {
    seed: u64,
    mrr_init: f64,
    mrr_sda: f64,
    mrr_mep: f64,
    geo_init: GeometryReport,
    geo_sda: GeometryReport,
    sda_time: Duration,
    exact_init: f64,
    exact_mep: f64,
    ft_inbatch: f64,
    ft_hard: f64,
}

struct World {
    corpus: SyntheticCorpus,
    vocab: Vocabulary,
    train: Vec<usize>,
    test: Vec<usize>,
    max_len: usize,
}

impl World {
    fn new(seed: u64) -> Self {
        let corpus = generate_synthetic(seed, N_PAIRS, CONCEPTS).unwrap();
        let code_ids: Vec<String> = corpus.pairs.iter().map(|p| p.doc_id.clone()).collect();
        let split = Split::partition(&code_ids, 0, N_HELDOUT, seed).unwrap();
        let held: HashSet<&str> = split.test.iter().map(String::as_str).collect();
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..N_PAIRS).partition(|&i| held.contains(corpus.pairs[i].doc_id.as_str()));
        let q: Vec<Vec<String>> = corpus.queries.iter().map(|q| query_tokens(&q.text)).collect();
        let vocab = corpus_vocabulary(corpus.documents.iter(), &q, 1);
        Self {
            corpus,
            vocab,
            train,
            test,
            max_len: EncoderConfig::default().max_len,
        }
    }

    fn doc(&self, id: &str) -> &Document {
        self.corpus.documents.iter().find(|d| d.id == id).unwrap()
    }

    fn ids(&self, id: &str) -> Vec<u32> {
        document_ids(self.doc(id), &self.vocab, self.max_len)
    }

    fn pairs(&self, which: &[usize]) -> Vec<TrainingPair> {
        which.iter().map(|&i| self.corpus.pairs[i].clone()).collect()
    }

    fn query(&self, i: usize) -> Vec<u32> {
        self.vocab.encode(&query_tokens(&self.corpus.queries[i].text), self.max_len)
    }

    fn items(&self, masked: &HashMap<String, MaskedExample>) -> Vec<PretrainItem> {
        let docs: HashMap<&str, &Document> = self.corpus.documents.iter().map(|d| (d.id.as_str(), d)).collect();
        pretrain_items(&self.pairs(&self.train), |id| docs.get(id).copied(), masked, &self.vocab, self.max_len).unwrap()
    }

    fn held_out(&self, params: &ModelParams) -> (Vec<Embedding>, Vec<Embedding>) {
        let p: Vec<Vec<u32>> = self.test.iter().map(|&i| self.ids(&self.corpus.pairs[i].passage_id)).collect();
        let d: Vec<Vec<u32>> = self.test.iter().map(|&i| self.ids(&self.corpus.pairs[i].doc_id)).collect();
        (encode_batch(params, &p, true).unwrap(), encode_batch(params, &d, true).unwrap())
    }

    fn mrr(&self, params: &ModelParams) -> f64 {
        let (p, d) = self.held_out(params);
        paired_mrr10(&p, &d)
    }

    fn geometry(&self, params: &ModelParams) -> GeometryReport {
        let (p, d) = self.held_out(params);
        let all: Vec<Vec<u32>> = self.corpus.documents.iter().map(|d| self.ids(&d.id)).collect();
        let all = encode_batch(params, &all, true).unwrap();
        geometry(&p.into_iter().zip(d).collect::<Vec<_>>(), &all).unwrap()
    }

    fn query_mrr(&self, params: &ModelParams) -> f64 {
        let q: Vec<Vec<u32>> = self.test.iter().map(|&i| self.query(i)).collect();
        let d: Vec<Vec<u32>> = self.test.iter().map(|&i| self.ids(&self.corpus.pairs[i].doc_id)).collect();
        paired_mrr10(&encode_batch(params, &q, true).unwrap(), &encode_batch(params, &d, true).unwrap())
    }

    fn masked(&self) -> HashMap<String, MaskedExample> {
        let sv = SentinelVocab::default();
        self.corpus
            .documents
            .iter()
            .filter(|d| d.modality == Modality::Structured)
            .map(|d| (d.id.clone(), mask_entities(d, &extract_entities(d).unwrap(), &sv, 100).unwrap()))
            .collect()
    }
}

/// Token-level exact match of greedy decoding against the entity tokens of
/// each target (sentinel positions are not scored).
fn greedy_exact_match(params: &ModelParams, items: &[PretrainItem]) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for it in items.iter().filter(|i| !i.target.is_empty()) {
        let out = params.greedy_decode(&it.masked_source, it.target.len()).unwrap();
        for (j, &t) in it.target.iter().enumerate() {
            if (4..104).contains(&t) {
                continue;
            }
            n += 1;
            if out.get(j) == Some(&t) {
                hit += 1;
            }
        }
    }
    hit as f64 / n as f64
}

fn train_config(seed: u64, steps: u64, lr: f64) -> TrainConfig {
    TrainConfig {
        steps,
        lr,
        seed,
        ..TrainConfig::default()
    }
}

fn seed_run(seed: u64) -> SeedRun {
    let w = World::new(seed);
    let config = EncoderConfig {
        seed,
        ..EncoderConfig::default()
    };
    let init = ModelParams::init(config, w.vocab.len()).unwrap();
    let masked = w.masked();
    let items = w.items(&masked);

    let mut sda = init.clone();
    let t = Instant::now();
    pretrain(&mut sda, &items, only(true, false), &train_config(seed, PRETRAIN_STEPS, PRETRAIN_LR), |_| {}).unwrap();
    let sda_time = t.elapsed();

    let mut mep = init.clone();
    pretrain(&mut mep, &items, only(false, true), &train_config(seed, PRETRAIN_STEPS, PRETRAIN_LR), |_| {}).unwrap();

    // In-batch finetuning first; hard negatives are mined from that checkpoint
    // and both arms continue from it for the same number of steps.
    let code: Vec<Vec<u32>> = w.corpus.pairs.iter().map(|p| w.ids(&p.doc_id)).collect();
    let train_q: Vec<Vec<u32>> = w.train.iter().map(|&i| w.query(i)).collect();
    let plain: Vec<FinetuneItem> = w
        .train
        .iter()
        .enumerate()
        .map(|(k, &i)| FinetuneItem {
            query: train_q[k].clone(),
            positive: code[i].clone(),
            hard_negatives: Vec::new(),
        })
        .collect();
    let mut base = sda.clone();
    finetune(&mut base, &plain, NegativeMode::Inbatch, &train_config(seed, FINETUNE_STEPS, FINETUNE_LR), |_| {}).unwrap();

    let code_emb = encode_batch(&base, &code, true).unwrap();
    let index = Index::from_embeddings(
        w.corpus.pairs.iter().map(|p| p.doc_id.clone()).collect(),
        vec![Modality::Structured; N_PAIRS],
        &code_emb,
        "inbatch",
    )
    .unwrap();
    let train_qe = encode_batch(&base, &train_q, true).unwrap();
    let mut hard = Vec::new();
    for (k, &i) in w.train.iter().enumerate() {
        let positives: HashSet<String> = [w.corpus.pairs[i].doc_id.clone()].into();
        let negs = mine_hard_negatives(&index, &train_qe[k], &positives, 100, 1, seed.wrapping_add(i as u64)).unwrap();
        hard.push(FinetuneItem {
            hard_negatives: negs.iter().map(|n| w.ids(n)).collect(),
            ..plain[k].clone()
        });
    }
    let ft = train_config(seed.wrapping_add(1), FINETUNE_STEPS, FINETUNE_LR);
    let mut a = base.clone();
    finetune(&mut a, &plain, NegativeMode::Inbatch, &ft, |_| {}).unwrap();
    let mut b = base;
    finetune(&mut b, &hard, NegativeMode::InbatchHard, &ft, |_| {}).unwrap();

    SeedRun {
        seed,
        mrr_init: w.mrr(&init),
        mrr_sda: w.mrr(&sda),
        mrr_mep: w.mrr(&mep),
        geo_init: w.geometry(&init),
        geo_sda: w.geometry(&sda),
        sda_time,
        exact_init: greedy_exact_match(&init, &items),
        exact_mep: greedy_exact_match(&mep, &items),
        ft_inbatch: w.query_mrr(&a),
        ft_hard: w.query_mrr(&b),
    }
}

// ---------------------------------------------------------------- criteria

fn gradient_fidelity() -> Outcome {
    let (params, pre, fin) = toy_params();
    let t = Instant::now();
    let cases = [
        ("sda", Batch::Pretrain(pre.clone()), TrainMode::Pretrain(only(true, false))),
        ("mep", Batch::Pretrain(pre), TrainMode::Pretrain(only(false, true))),
        ("dr", Batch::Finetune(fin), TrainMode::Finetune(NegativeMode::InbatchHard)),
    ];
    let mut worst = Vec::new();
    let mut pass = true;
    for (name, batch, mode) in cases {
        let r = grad_check(&params, &batch, mode, 1e-4, 64, 99).unwrap();
        pass &= r.entries.len() == 64 && r.max_rel_error < 1e-4;
        worst.push(format!("{name} {:.2e}", r.max_rel_error));
    }
    let elapsed = t.elapsed();
    pass &= elapsed < Duration::from_secs(60);
    outcome(pass, format!("max rel error {} in {:.1}s", worst.join(", "), elapsed.as_secs_f64()))
}

fn loss_identities() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for b in [2usize, 4, 8, 16] {
        let same = vec![Embedding(vec![0.3, -0.2, 0.5]); b];
        let l = loss_sda(&same, &same).unwrap();
        let err = (l - (b as f64).ln()).abs();
        pass &= err < 1e-9;
        notes.push(format!("B={b} err {err:.1e}"));
    }
    let dr = loss_dr(&[Embedding(vec![1.0])], &[Embedding(vec![1.0])], &[vec![Embedding(vec![-1.0])]], false).unwrap();
    pass &= (dr - 0.126928).abs() <= 1e-6;
    notes.push(format!("dr {dr:.6}"));

    let (params, pre, _) = toy_params();
    let b = Batch::Pretrain(pre);
    let (joint, _) = batch_loss(&params, &b, TrainMode::Pretrain(PretrainOptions::default()), false, false).unwrap();
    let gap = (joint.l_total - (joint.l_sda + joint.l_mep)).abs();
    pass &= gap <= 1e-12;
    notes.push(format!("total gap {gap:.1e}"));
    outcome(pass, notes.join("; "))
}

const PRODUCT_WORDS: &[&str] = &[
    "garden", "fence", "screen", "green", "privacy", "steel", "lamp", "desk", "white", "oak", "chair", "kids",
    "bottle", "water", "travel", "mug", "ceramic", "blue", "pack", "large", "mini", "cable", "usb", "charger",
];

fn random_product(rng: &mut ChaCha8Rng, i: usize) -> Document {
    let pick = |rng: &mut ChaCha8Rng, n: usize| -> Vec<&str> { (0..n).map(|_| *PRODUCT_WORDS.choose(rng).unwrap()).collect() };
    let n_title = rng.gen_range(2..6);
    let title = pick(rng, n_title);
    let n_body = rng.gen_range(3..25);
    let mut body = pick(rng, n_body);
    for w in &title {
        if rng.gen_bool(0.5) {
            let at = rng.gen_range(0..=body.len());
            body.insert(at, w);
        }
    }
    Document {
        id: format!("prod{i}"),
        modality: Modality::Structured,
        kind: DocKind::Product,
        title: Some(title.join(" ")),
        body: body.join(" "),
        lang_tag: None,
        doc_link: None,
        bullets: None,
    }
}

/// Violations of: one sentinel per key, one key per sentinel, and every
/// masked occurrence replaced by its key's sentinel.
fn sentinel_scan(doc: &Document, ex: &MaskedExample, spans: &[sdr_core::structparse::EntitySpan]) -> usize {
    let mut violations = 0;
    let values: HashSet<usize> = ex.mapping.values().copied().collect();
    violations += ex.mapping.len() - values.len();
    let tokens = tokenize_spans(&doc.body, body_mode(doc.kind));
    let sv = SentinelVocab::default();
    for s in spans {
        let Some(&idx) = ex.mapping.get(&s.key) else { continue };
        let pos = tokens.iter().position(|t| t.start == s.start && t.end == s.end);
        match pos {
            Some(p) if ex.source[p] == sv.token(idx) => {}
            _ => violations += 1,
        }
    }
    violations
}

fn masking_correctness() -> Outcome {
    let mut docs: Vec<Document> = (0..75u64)
        .flat_map(|s| generate_synthetic(1000 + s, 100, 64).unwrap().documents)
        .filter(|d| d.modality == Modality::Structured)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for i in 0..2_500 {
        docs.push(random_product(&mut rng, i));
    }
    let sv = SentinelVocab::default();
    let (mut mismatches, mut violations, mut masked_docs) = (0usize, 0usize, 0usize);
    for d in &docs {
        let ents = extract_entities(d).unwrap();
        let ex = mask_entities(d, &ents, &sv, 100).unwrap();
        if !ex.mapping.is_empty() {
            masked_docs += 1;
        }
        if reconstruct(&ex).unwrap() != tokenize(&d.body, body_mode(d.kind)) {
            mismatches += 1;
        }
        violations += sentinel_scan(d, &ex, &ents.spans);
        let sentinels: HashSet<&String> = ex.source.iter().filter(|t| is_sentinel(t)).collect();
        violations += sentinels.len().abs_diff(ex.mapping.len());
    }
    outcome(
        docs.len() == 10_000 && mismatches == 0 && violations == 0,
        format!(
            "{} docs ({masked_docs} with entities): {mismatches} round-trip mismatches, {violations} sentinel violations",
            docs.len()
        ),
    )
}

fn random_fixture(rng: &mut ChaCha8Rng) -> (Vec<(String, Vec<String>)>, Vec<Judgment>) {
    let n_q = rng.gen_range(1..6);
    let mut run = Vec::new();
    let mut judgments = Vec::new();
    for q in 0..n_q {
        let qid = format!("q{q}");
        let n_docs = rng.gen_range(0..160);
        let mut pool: Vec<usize> = (0..200).collect();
        pool.shuffle(rng);
        run.push((qid.clone(), pool[..n_docs].iter().map(|d| format!("d{d}")).collect()));
        let n_judged = rng.gen_range(1..60);
        pool.shuffle(rng);
        for &d in &pool[..n_judged] {
            judgments.push(Judgment {
                query_id: qid.clone(),
                doc_id: format!("d{d}"),
                grade: *Grade::ALL.choose(rng).unwrap(),
            });
        }
    }
    (run, judgments)
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut tally_mismatch = 0;
    for _ in 0..1000 {
        let (rows, js) = random_fixture(&mut rng);
        let mut run = RunRanking::default();
        for (q, d) in &rows {
            run.insert(q.clone(), d.clone()).unwrap();
        }
        let jm = judgment_map(&js);
        let mut by_query: HashMap<&str, HashMap<String, Grade>> = HashMap::new();
        for j in &js {
            by_query.entry(&j.query_id).or_default().insert(j.doc_id.clone(), j.grade);
        }
        let mrr = mrr_at_k(&run, &jm, 100, &[Grade::Exact]).unwrap();
        let mut oracle_mrr = 0.0;
        for (q, d) in &rows {
            let rr = oracle_rr(d, &by_query[q.as_str()], 100);
            worst = worst.max((mrr.per_query[q] - rr).abs());
            oracle_mrr += rr;
        }
        worst = worst.max((mrr.value - oracle_mrr / rows.len() as f64).abs());
        for (scheme, table) in [
            (GainScheme::FourClass, GainTable::four_class()),
            (GainScheme::TwoClass, GainTable::two_class()),
        ] {
            let got = ndcg_at_k(&run, &jm, &table, 100).unwrap();
            let mut mean = 0.0;
            let mut zero = 0;
            for (q, d) in &rows {
                let (v, z) = oracle_ndcg(d, &by_query[q.as_str()], scheme, 100);
                worst = worst.max((got.per_query[q] - v).abs());
                mean += v;
                zero += usize::from(z);
            }
            worst = worst.max((got.value - mean / rows.len() as f64).abs());
            if got.zero_ideal_count != zero {
                tally_mismatch += 1;
            }
            let report = evaluate(&run, &jm, scheme, 100, false).unwrap();
            worst = worst.max((report.ndcg - got.value).abs()).max((report.mrr - mrr.value).abs());
        }
    }

    let mut run = RunRanking::default();
    run.insert("q", vec!["B".into(), "A".into()]).unwrap();
    let jm = judgment_map(&[
        Judgment {
            query_id: "q".into(),
            doc_id: "A".into(),
            grade: Grade::Exact,
        },
        Judgment {
            query_id: "q".into(),
            doc_id: "B".into(),
            grade: Grade::Substitute,
        },
    ]);
    let hand = ndcg_at_k(&run, &jm, &GainTable::four_class(), 100).unwrap().value;
    let hand_ok = (hand - 0.67737).abs() <= 1e-5;
    outcome(
        worst <= 1e-9 && tally_mismatch == 0 && hand_ok,
        format!(
            "1000 fixtures: max |impl - oracle| {worst:.1e}, zero-ideal tally mismatches {tally_mismatch}; \
             hand case {hand:.6} vs expected 0.67737 (|diff| {:.2e}, tolerance 1e-5)",
            (hand - 0.67737).abs()
        ),
    )
}

fn sda_learnability(runs: &[SeedRun]) -> Outcome {
    let r = &runs[0];
    let pass = r.mrr_init <= 0.20 && r.mrr_sda >= 0.90 && r.sda_time < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "seed {}: MRR@10 {:.3} at init -> {:.3} after {PRETRAIN_STEPS} SDA steps ({:.0}s)",
            r.seed,
            r.mrr_init,
            r.mrr_sda,
            r.sda_time.as_secs_f64()
        ),
    )
}

fn ablation_direction(runs: &[SeedRun]) -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for r in runs {
        let mep = r.mrr_mep - r.mrr_init;
        let sda = r.mrr_sda - r.mrr_init;
        pass &= mep.abs() < 0.10 && sda >= 0.50;
        notes.push(format!("seed {}: MEP {mep:+.3}, SDA {sda:+.3}", r.seed));
    }
    outcome(pass, notes.join("; "))
}

fn mep_learnability(runs: &[SeedRun], vocab_size: usize) -> Outcome {
    let r = &runs[0];
    let bound = 10.0 / vocab_size as f64;
    outcome(
        r.exact_mep >= 0.80 && r.exact_init <= bound,
        format!(
            "seed {}: exact match {:.3} at init (bound {bound:.3}) -> {:.3} after {PRETRAIN_STEPS} MEP steps",
            r.seed, r.exact_init, r.exact_mep
        ),
    )
}

fn geometry_direction(runs: &[SeedRun]) -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for r in runs {
        let a = r.geo_sda.alignment < r.geo_init.alignment;
        let u = r.geo_sda.uniformity < r.geo_init.uniformity;
        pass &= a && u;
        notes.push(format!(
            "seed {}: alignment {:.4} -> {:.4}, uniformity {:.3} -> {:.3}",
            r.seed, r.geo_init.alignment, r.geo_sda.alignment, r.geo_init.uniformity, r.geo_sda.uniformity
        ));
    }
    outcome(pass, notes.join("; "))
}

fn hard_negative_pipeline(runs: &[SeedRun]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = 0;
    for case in 0..10_000u64 {
        let n = rng.gen_range(1..250);
        let ids: Vec<String> = (0..n).map(|i| format!("d{i:03}")).collect();
        let embs: Vec<Embedding> = (0..n)
            .map(|_| Embedding((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let index = Index::from_embeddings(ids.clone(), vec![Modality::Structured; n], &embs, "fp").unwrap();
        let q = Embedding((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let n_pos = rng.gen_range(0..4.min(n));
        let positives: HashSet<String> = ids.choose_multiple(&mut rng, n_pos).cloned().collect();
        let want = rng.gen_range(1..6);
        let mined = mine_hard_negatives(&index, &q, &positives, 100, want, case).unwrap();
        let top: HashSet<String> = search(&index, &q, 100).unwrap().into_iter().map(|r| r.doc_id).collect();
        let allowed: HashSet<&String> = top.iter().filter(|d| !positives.contains(*d)).collect();
        let distinct: HashSet<&String> = mined.iter().collect();
        if mined.iter().any(|d| !allowed.contains(d)) || distinct.len() != mined.len() || mined.len() != want.min(allowed.len()) {
            violations += 1;
        }
    }
    let mut deltas: Vec<f64> = runs.iter().map(|r| r.ft_hard - r.ft_inbatch).collect();
    deltas.sort_by(f64::total_cmp);
    let median = deltas[deltas.len() / 2];
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {}: {:.3} vs {:.3}", r.seed, r.ft_hard, r.ft_inbatch))
        .collect();
    outcome(
        violations == 0 && median >= 0.0,
        format!(
            "10000 mining cases, {violations} violations; held-out MRR@10 hard vs in-batch: {}; median change {median:+.3}",
            per_seed.join(", ")
        ),
    )
}

fn real_code_ingestion() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/codesearch_sample.jsonl");
    let docs = load_documents(&path).unwrap();
    let code: Vec<&Document> = docs.iter().filter(|d| d.kind == DocKind::Code).collect();
    let pairs = build_pairs(&docs, 0);
    let sv = SentinelVocab::default();
    let mut failures = 0;
    let mut spans = 0;
    for d in &code {
        match extract_entities(d).and_then(|e| {
            spans += e.spans.len();
            let ex = mask_entities(d, &e, &sv, 100)?;
            Ok(reconstruct(&ex)? == tokenize(&d.body, body_mode(d.kind)))
        }) {
            Ok(true) => {}
            _ => failures += 1,
        }
    }
    println!(
        "  note: full-benchmark scores (code MRR 47.5, product two-class NDCG 82.59, CodeSearch overall 75.2) \
         need full-scale pretrained checkpoints and corpora and are NOT reproduced here"
    );
    outcome(
        code.len() == 1000 && pairs.pairs.len() == 1000 && pairs.skipped.is_empty() && failures == 0,
        format!(
            "{} code records, {} pairs, {} skipped, {spans} entity spans, {failures} extraction/masking failures",
            code.len(),
            pairs.pairs.len(),
            pairs.skipped.len()
        ),
    )
}

// ---------------------------------------------------------------- runner

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    println!(
        "criterion {n:>2} {name}: {} ({}) [{:.1}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        t.elapsed().as_secs_f64()
    );
    o.pass
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut results = BTreeMap::new();
    results.insert(1, run(1, "gradient fidelity", gradient_fidelity));
    results.insert(2, run(2, "loss identities", loss_identities));
    results.insert(3, run(3, "masking correctness", masking_correctness));
    results.insert(4, run(4, "metric oracle", metric_oracle));

    let t = Instant::now();
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| seed_run(s)).collect();
    println!("  trained {} seeds in {:.0}s", runs.len(), t.elapsed().as_secs_f64());
    let vocab_size = World::new(SEEDS[0]).vocab.len();
    results.insert(5, run(5, "SDA learnability", || sda_learnability(&runs)));
    results.insert(6, run(6, "ablation direction", || ablation_direction(&runs)));
    results.insert(7, run(7, "MEP learnability", || mep_learnability(&runs, vocab_size)));
    results.insert(8, run(8, "geometry direction", || geometry_direction(&runs)));
    results.insert(9, run(9, "hard-negative pipeline", || hard_negative_pipeline(&runs)));
    results.insert(10, run(10, "real code ingestion", real_code_ingestion));

    let failed: Vec<_> = results.iter().filter(|(_, &p)| !p).map(|(n, _)| n.to_string()).collect();
    println!(
        "acceptance: {} of {} criteria pass{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {}", failed.join(", "))
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
