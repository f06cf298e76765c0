use std::ffi::{CStr, CString};
use std::ptr;

use synfuse::annotate::PosTagSet;
use synfuse::harness::checkpoint::{save_classifier, save_translator};
use synfuse::harness::synthetic::toy_corpus;
use synfuse::harness::{finetune_classifier, read_labeled, train_translator, RunConfig, Tokenizer};
use synfuse::model::ModelConfig;
use synfuse::tokenizer::MergeTable;
use synfuse_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sf_last_error()) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    sf_string_free(s);
    out
}

#[test]
fn bleu_matches_core_and_reports_errors() {
    let hyps = [c("the cat sat on the mat"), c("a b c d")];
    let refs = [c("the cat sat on a mat"), c("a b c d")];
    let hp: Vec<_> = hyps.iter().map(|s| s.as_ptr()).collect();
    let rp: Vec<_> = refs.iter().map(|s| s.as_ptr()).collect();
    let mut score = -1.0;
    assert_eq!(unsafe { sf_bleu(hp.as_ptr(), rp.as_ptr(), 2, &mut score) }, SfStatus::Ok);
    let expected = synfuse::harness::bleu(&["the cat sat on the mat", "a b c d"], &["the cat sat on a mat", "a b c d"]).unwrap();
    assert_eq!(score, expected);
    assert_eq!(last_error(), "");

    assert_eq!(unsafe { sf_bleu(hp.as_ptr(), rp.as_ptr(), 0, &mut score) }, SfStatus::Data);
    assert!(last_error().contains("empty"));
    assert_eq!(unsafe { sf_bleu(ptr::null(), rp.as_ptr(), 2, &mut score) }, SfStatus::NullArgument);
    assert_eq!(unsafe { sf_bleu(hp.as_ptr(), rp.as_ptr(), 2, ptr::null_mut()) }, SfStatus::NullArgument);
}

#[test]
fn invalid_utf8_is_rejected() {
    let bad = [0xffu8, 0xfe, 0];
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sf_merges_learn(bad.as_ptr().cast(), 3, &mut m) }, SfStatus::InvalidUtf8);
    assert!(m.is_null());
}

#[test]
fn merges_learn_segment_save_load() {
    let corpus = c("low low lower\nlowest\n");
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(sf_merges_learn(corpus.as_ptr(), 2, &mut m), SfStatus::Ok);
        assert_eq!(sf_merges_len(m), 2);
        let mut out = ptr::null_mut();
        assert_eq!(sf_merges_segment(m, c("lower low").as_ptr(), &mut out), SfStatus::Ok);
        assert_eq!(take(out), "low e r</w> low</w>");

        let dir = tempfile::tempdir().unwrap();
        let path = c(dir.path().join("m.txt").to_str().unwrap());
        assert_eq!(sf_merges_save(m, path.as_ptr()), SfStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(sf_merges_load(path.as_ptr(), &mut loaded), SfStatus::Ok);
        assert_eq!(sf_merges_len(loaded), 2);
        sf_merges_free(loaded);
        sf_merges_free(m);

        assert_eq!(sf_merges_load(c("/no/such/file").as_ptr(), &mut loaded), SfStatus::Data);
        assert!(last_error().contains("/no/such/file"));
        assert_eq!(sf_merges_len(ptr::null()), 0);
        sf_merges_free(ptr::null_mut());
    }
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sf_merges_learn(c("").as_ptr(), 2, &mut m) }, SfStatus::Data);
}

#[test]
fn translator_handle_matches_core_decode() {
    let pairs = toy_corpus(30, 3);
    let tok = Tokenizer::fit(&pairs, 60, PosTagSet::universal()).unwrap();
    let cfg = RunConfig { steps: 5, warmup: 5, ..RunConfig::default() };
    let model = ModelConfig { layers: 1, ..ModelConfig::toy(0, 0) };
    let out = train_translator(&cfg, tok, &pairs, None, &model, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ckpt");
    save_translator(&out.translator, &path).unwrap();
    let expected = out.translator.translate(&[pairs[0].source.clone()], 20, false).unwrap().remove(0).text;

    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(sf_translator_load(c(path.to_str().unwrap()).as_ptr(), &mut t), SfStatus::Ok);
        let words: Vec<CString> = pairs[0].source.words.iter().map(|w| c(&w.surface)).collect();
        let tags: Vec<CString> = pairs[0].source.words.iter().map(|w| c(out.translator.tokenizer.tagset.tag(w.pos_id))).collect();
        let wp: Vec<_> = words.iter().map(|s| s.as_ptr()).collect();
        let tp: Vec<_> = tags.iter().map(|s| s.as_ptr()).collect();
        let mut s = ptr::null_mut();
        assert_eq!(sf_translator_translate_tagged(t, wp.as_ptr(), tp.as_ptr(), wp.len(), 20, &mut s), SfStatus::Ok);
        assert_eq!(take(s), expected);

        assert_eq!(sf_translator_translate(t, c("the red car").as_ptr(), 20, &mut s), SfStatus::Ok);
        take(s);
        let bad = [c("two words")];
        let bp: Vec<_> = bad.iter().map(|s| s.as_ptr()).collect();
        assert_eq!(sf_translator_translate_tagged(t, bp.as_ptr(), bp.as_ptr(), 1, 20, &mut s), SfStatus::Invalid);
        sf_translator_free(t);

        let mut t = ptr::null_mut();
        assert_eq!(sf_translator_load(c(dir.path().join("missing").to_str().unwrap()).as_ptr(), &mut t), SfStatus::Data);
        assert_eq!(sf_translator_translate(ptr::null(), c("x").as_ptr(), 5, &mut s), SfStatus::NullArgument);
    }
}

#[test]
fn classifier_handle_predicts_like_core() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("cls.tsv");
    std::fs::write(&data, "yes\tthe big dog\nno\tthe cat sleeps\tslowly\nyes\ta big cat\nno\ta dog sleeps\n").unwrap();
    let tagset = PosTagSet::universal();
    let pairs = read_labeled(&data, None, &tagset).unwrap();
    let text: Vec<String> = pairs.iter().map(|p| p.a.text()).collect();
    let tok = Tokenizer::with_merges(MergeTable::learn(&text, 10).unwrap(), &text, tagset);
    let cfg = RunConfig { epochs: 1, ..RunConfig::default() };
    let bert = synfuse::bert::BertConfig { layers: 1, d_model: 8, pos_dim: 8, heads: 2, ffn_width: 16, ..cfg.bert.clone() };
    let (cls, _) = finetune_classifier(&cfg, tok, &pairs, &bert).unwrap();
    let path = dir.path().join("c.ckpt");
    save_classifier(&cls, &path).unwrap();
    let expected = cls.predict(&pairs[1..2]).unwrap().remove(0);

    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(sf_classifier_load(c(path.to_str().unwrap()).as_ptr(), &mut h), SfStatus::Ok);
        assert_eq!(sf_classifier_num_labels(h), 2);
        assert_eq!(CStr::from_ptr(sf_classifier_label(h, 0)).to_str().unwrap(), "no");
        assert!(sf_classifier_label(h, 2).is_null());
        let (mut label, mut probs) = (usize::MAX, [0.0; 2]);
        let (a, b) = (c("the cat sleeps"), c("slowly"));
        assert_eq!(sf_classifier_predict(h, a.as_ptr(), b.as_ptr(), &mut label, probs.as_mut_ptr(), 2), SfStatus::Ok);
        assert_eq!(cls.labels[label], expected.label);
        assert_eq!(probs.to_vec(), expected.probabilities[..2].to_vec());
        assert_eq!(
            sf_classifier_predict(h, a.as_ptr(), ptr::null(), &mut label, probs.as_mut_ptr(), 1),
            SfStatus::BufferTooSmall
        );
        assert_eq!(sf_classifier_predict(h, a.as_ptr(), ptr::null(), &mut label, ptr::null_mut(), 0), SfStatus::Ok);
        sf_classifier_free(h);
    }
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(sf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
