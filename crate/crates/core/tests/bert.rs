mod common;

use common::{param_grad_check, rng};
use rand::Rng;
use synfuse::bert::{
    build_input, identity_fusion_map, BertBatch, BertClassifier, BertConfig, BertFusion, BertInput, BertTrainer,
    LabeledInput, PosFusion, Tagged,
};
use synfuse::tensor::{seeded_rng, Graph, Tensor};

const VOCAB: usize = 20;
const POS: usize = 6;

fn small(pos_dim: usize, fusion: BertFusion) -> BertConfig {
    BertConfig {
        layers: 1,
        d_model: 8,
        heads: 2,
        ffn_width: 16,
        pos_dim,
        fusion,
        dropout: 0.0,
        max_positions: 16,
        ..BertConfig::toy(VOCAB, POS, 3)
    }
}

fn random_inputs(n: usize, seed: u64) -> Vec<BertInput> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let la = r.gen_range(1..5);
            let lb = r.gen_range(0..4);
            let a: Vec<usize> = (0..la).map(|_| r.gen_range(7..VOCAB)).collect();
            let pa: Vec<usize> = (0..la).map(|_| r.gen_range(0..POS)).collect();
            let b: Vec<usize> = (0..lb).map(|_| r.gen_range(7..VOCAB)).collect();
            let pb: Vec<usize> = (0..lb).map(|_| r.gen_range(0..POS)).collect();
            build_input(Tagged { ids: &a, pos_ids: &pa }, Some(Tagged { ids: &b, pos_ids: &pb }), 16).unwrap()
        })
        .collect()
}

fn fused(model: &BertClassifier, inputs: &[BertInput]) -> Tensor {
    let batch = BertBatch::new(inputs).unwrap();
    let mut r = seeded_rng(0);
    let mut g = Graph::inference();
    let ctx = model.ctx(false, &mut r);
    let h = model.fused_embedding(&mut g, &ctx, &batch).unwrap();
    g.value(h).clone()
}

#[test]
fn zero_pos_table_matches_baseline_bit_for_bit() {
    let mut syntax = BertClassifier::new(small(8, BertFusion::Sum), 1).unwrap();
    syntax.zero_and_freeze_pos();
    let baseline = BertClassifier::new(BertConfig { use_pos: false, ..small(8, BertFusion::Sum) }, 1).unwrap();
    let inputs = random_inputs(6, 2);
    assert_eq!(syntax.classify(&inputs).unwrap(), baseline.classify(&inputs).unwrap());
}

#[test]
fn identity_affine_reproduces_zero_pos_sum() {
    let mut sum = BertClassifier::new(small(8, BertFusion::Sum), 3).unwrap();
    sum.zero_and_freeze_pos();
    let mut affine = BertClassifier::new(small(5, BertFusion::ConcatAffine), 3).unwrap();
    let PosFusion::ConcatAffine { map, .. } = affine.pos.clone() else { panic!() };
    affine.store.get_mut(map.weight).value = identity_fusion_map(8, 5);
    affine.store.get_mut(map.bias.unwrap()).value.fill(0.0);
    let inputs = random_inputs(4, 4);
    assert_eq!(fused(&sum, &inputs).data(), fused(&affine, &inputs).data());
    assert_eq!(sum.classify(&inputs).unwrap(), affine.classify(&inputs).unwrap());
}

#[test]
fn sum_fusion_matches_direct_formula() {
    let model = BertClassifier::new(small(8, BertFusion::Sum), 5).unwrap();
    let ids = [9, 12, 7, 15];
    let pos = [1, 4, 0, 2];
    let input = BertInput { ids: ids.to_vec(), pos_ids: pos.to_vec(), segments: vec![0, 0, 1, 1] };
    let out = fused(&model, std::slice::from_ref(&input));
    let table = |id| &model.store.get(id).value;
    let pos_table = model.pos_table().unwrap();
    for m in 0..4 {
        for c in 0..8 {
            let expected = table(model.token_embed).at(ids[m], c)
                + table(pos_table).at(pos[m], c)
                + table(model.segment_embed).at(input.segments[m], c)
                + table(model.position_embed).at(m, c);
            assert!((out.at(m, c) - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn probabilities_lie_on_the_simplex() {
    for fusion in [BertFusion::Sum, BertFusion::ConcatAffine] {
        let pos_dim = if fusion == BertFusion::Sum { 8 } else { 3 };
        let model = BertClassifier::new(small(pos_dim, fusion), 6).unwrap();
        for p in model.classify(&random_inputs(10, 7)).unwrap() {
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn classification_is_deterministic() {
    let model = BertClassifier::new(small(8, BertFusion::Sum), 8).unwrap();
    let inputs = random_inputs(5, 9);
    assert_eq!(model.classify(&inputs).unwrap(), model.classify(&inputs).unwrap());
}

#[test]
fn head_and_pos_table_gradients() {
    for fusion in [BertFusion::Sum, BertFusion::ConcatAffine] {
        let pos_dim = if fusion == BertFusion::Sum { 8 } else { 3 };
        let mut model = BertClassifier::new(small(pos_dim, fusion), 10).unwrap();
        let batch = BertBatch::new(&random_inputs(3, 11)).unwrap();
        let ids = [model.pos_table().unwrap(), model.head.weight, model.head.bias.unwrap()];
        let err = param_grad_check(&mut model, |m| &mut m.store, &ids, |m| {
            let mut r = seeded_rng(0);
            let mut g = Graph::new();
            let mut ctx = m.ctx(false, &mut r);
            let l = m.loss(&mut g, &mut ctx, &batch, &[0, 2, 1]).unwrap();
            (g, l)
        });
        assert!(err < 1e-4, "{fusion:?}: {err}");
    }
}

#[test]
fn finetuning_reduces_loss() {
    let mut model = BertClassifier::new(BertConfig { dropout: 0.1, ..small(8, BertFusion::Sum) }, 12).unwrap();
    let inputs = random_inputs(8, 13);
    let batch: Vec<LabeledInput> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, input)| LabeledInput { input, label: i % 3 })
        .collect();
    let mut trainer = BertTrainer::new(&model, 1e-2, 14);
    let first = trainer.finetune_step(&mut model, &batch).unwrap();
    let mut last = first;
    for _ in 0..60 {
        last = trainer.finetune_step(&mut model, &batch).unwrap();
    }
    assert!(last < first * 0.5, "{first} -> {last}");
}
