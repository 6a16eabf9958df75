use std::fs;

use sdr_core::corpus::{generate_synthetic, Document};
use sdr_core::encoder::{encode_representation, Checkpoint, EncoderConfig, ModelParams};
use sdr_core::evalkit::export_embeddings;
use sdr_core::retrieval::{build_index, search_checked, Index};
use sdr_core::trainer::data::{corpus_vocabulary, document_ids};
use sdr_core::Error;

fn small() -> (Checkpoint, Vec<Document>) {
    let c = generate_synthetic(8, 12, 16).unwrap();
    let vocab = corpus_vocabulary(c.documents.iter(), &[], 1);
    let config = EncoderConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 32,
        max_len: 48,
        seed: 4,
    };
    let params = ModelParams::init(config, vocab.len()).unwrap();
    (Checkpoint::new(params, vocab).unwrap(), c.documents)
}

#[test]
fn index_rows_match_direct_encoding() {
    let (ckpt, docs) = small();
    let refs: Vec<&Document> = docs.iter().collect();
    let fp = ckpt.fingerprint();
    let index = build_index(&ckpt.params, &ckpt.vocab, &fp, &refs, true).unwrap();
    let serial = build_index(&ckpt.params, &ckpt.vocab, &fp, &refs, false).unwrap();
    assert_eq!(index, serial);
    assert_eq!(index.len(), docs.len());
    for (i, d) in docs.iter().enumerate() {
        let direct = encode_representation(&ckpt.params, &document_ids(d, &ckpt.vocab, 48)).unwrap();
        for (a, b) in index.row(i).iter().zip(&direct.0) {
            assert_eq!(*a, *b as f32);
        }
    }
}

#[test]
fn index_file_and_export_round_trip() {
    let (ckpt, docs) = small();
    let refs: Vec<&Document> = docs.iter().collect();
    let index = build_index(&ckpt.params, &ckpt.vocab, &ckpt.fingerprint(), &refs, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.bin");
    index.save(&path).unwrap();
    assert_eq!(&fs::read(&path).unwrap()[..8], b"SDRINDEX");
    assert_eq!(Index::load(&path).unwrap(), index);

    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    export_embeddings(&index, &a).unwrap();
    export_embeddings(&Index::load(&path).unwrap(), &b).unwrap();
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), docs.len());
    assert!(text.lines().all(|l| l.split('\t').count() == 2 + 16));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(Index::from_bytes(&bytes).is_err());
}

#[test]
fn checkpoint_round_trip_and_fingerprint_guard() {
    let (ckpt, docs) = small();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.fingerprint(), ckpt.fingerprint());

    let refs: Vec<&Document> = docs.iter().collect();
    let index = build_index(&ckpt.params, &ckpt.vocab, &ckpt.fingerprint(), &refs, false).unwrap();
    let q = index.embedding(0);
    let hits = search_checked(&index, &q, &ckpt.fingerprint(), 3, false).unwrap();
    assert_eq!(hits.len(), 3);
    assert!(matches!(
        search_checked(&index, &q, "other", 3, false),
        Err(Error::FingerprintMismatch { .. })
    ));
    assert_eq!(search_checked(&index, &q, "other", 3, true).unwrap(), hits);
}
