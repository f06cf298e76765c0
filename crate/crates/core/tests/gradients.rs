mod common;

use common::{grad_check, project, random, rng};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synfuse::model::attention::{attention, multi_head, HeadWeights, Mask};
use synfuse::tensor::{AttentionLayout, Graph, Tensor};

const SMOOTH: f64 = 1e-6;
const KINKED: f64 = 1e-4;

#[test]
fn matmul_gradient() {
    let mut r = rng(1);
    let err = grad_check(&[random(&[4, 5], &mut r), random(&[5, 3], &mut r)], |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        project(g, y, 11)
    });
    assert!(err < SMOOTH, "{err}");
}

#[test]
fn elementwise_gradients() {
    let mut r = rng(2);
    let (a, b, row) = (random(&[3, 4], &mut r), random(&[3, 4], &mut r), random(&[4], &mut r));
    let err = grad_check(&[a, b, row], |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        let m = g.mul(s, v[1]).unwrap();
        let m = g.scale(m, -1.7);
        let y = g.add_row(m, v[2]).unwrap();
        project(g, y, 12)
    });
    assert!(err < SMOOTH, "{err}");
}

#[test]
fn concat_and_transpose_gradients() {
    let mut r = rng(3);
    let inputs = [random(&[2, 4], &mut r), random(&[2, 1], &mut r), random(&[3, 5], &mut r)];
    let err = grad_check(&inputs, |g, v| {
        let c = g.concat(&[v[0], v[1]], 1).unwrap();
        let rows = g.concat(&[c, v[2]], 0).unwrap();
        let t = g.transpose(rows).unwrap();
        project(g, t, 13)
    });
    assert!(err < SMOOTH, "{err}");
}

#[test]
fn softmax_gradient_both_axes() {
    let mut r = rng(4);
    for axis in [0, 1] {
        let err = grad_check(&[random(&[3, 7], &mut r)], |g, v| {
            let y = g.softmax(v[0], axis).unwrap();
            project(g, y, 14)
        });
        assert!(err < SMOOTH, "axis {axis}: {err}");
    }
}

#[test]
fn layer_norm_gradient() {
    let mut r = rng(5);
    let inputs = [random(&[4, 6], &mut r), random(&[6], &mut r), random(&[6], &mut r)];
    let err = grad_check(&inputs, |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2]).unwrap();
        project(g, y, 15)
    });
    assert!(err < SMOOTH, "{err}");
}

#[test]
fn relu_gradient_away_from_kink() {
    let mut r = rng(6);
    let mut x = random(&[5, 5], &mut r);
    // keep every input at least 1e-2 from zero
    x.data_mut().iter_mut().for_each(|v| {
        if v.abs() < 1e-2 {
            *v += 0.05
        }
    });
    let err = grad_check(&[x], |g, v| {
        let y = g.relu(v[0]);
        project(g, y, 16)
    });
    assert!(err < KINKED, "{err}");
}

#[test]
fn dropout_gradient_with_fixed_mask() {
    let mut r = rng(7);
    let err = grad_check(&[random(&[6, 6], &mut r)], |g, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(99);
        let y = g.dropout(v[0], 0.3, true, &mut mask_rng).unwrap();
        project(g, y, 17)
    });
    assert!(err < SMOOTH, "{err}");
}

#[test]
fn gather_gradient_with_repeats() {
    let mut r = rng(8);
    let err = grad_check(&[random(&[5, 3], &mut r)], |g, v| {
        let y = g.gather(v[0], &[4, 0, 4, 2]).unwrap();
        project(g, y, 18)
    });
    assert!(err < SMOOTH, "{err}");
}

#[test]
fn cross_entropy_gradient() {
    let mut r = rng(9);
    for eps in [0.0, 0.1] {
        let err = grad_check(&[random(&[2, 6], &mut r)], |g, v| g.cross_entropy(v[0], &[3, 5], eps, 0).unwrap());
        assert!(err < SMOOTH, "eps {eps}: {err}");
    }
    // a padded row contributes nothing
    let err = grad_check(&[random(&[3, 6], &mut r)], |g, v| g.cross_entropy(v[0], &[3, 0, 1], 0.1, 0).unwrap());
    assert!(err < SMOOTH, "{err}");
}

#[test]
fn batched_attention_gradient() {
    let mut r = rng(10);
    // 2 sequences, 3 query rows each, 4 key rows, 2 heads of width 3
    let (q, k, v) = (random(&[6, 6], &mut r), random(&[8, 6], &mut r), random(&[8, 6], &mut r));
    let layout = AttentionLayout { batch: 2, q_len: 3, k_len: 4, key_lens: vec![4, 2], causal: false };
    let err = grad_check(&[q, k, v], |g, x| {
        let y = g.attention(x[0], x[1], x[2], 2, layout.clone()).unwrap();
        project(g, y, 19)
    });
    assert!(err < SMOOTH, "{err}");

    let (q, k, v) = (random(&[6, 4], &mut r), random(&[6, 4], &mut r), random(&[6, 4], &mut r));
    let causal = AttentionLayout { batch: 2, q_len: 3, k_len: 3, key_lens: vec![3, 3], causal: true };
    let err = grad_check(&[q, k, v], |g, x| {
        let y = g.attention(x[0], x[1], x[2], 2, causal.clone()).unwrap();
        project(g, y, 20)
    });
    assert!(err < SMOOTH, "{err}");
}

#[test]
fn composed_attention_gradient() {
    let mut r = rng(11);
    let inputs = [
        random(&[4, 6], &mut r),
        random(&[6, 3], &mut r),
        random(&[6, 3], &mut r),
        random(&[6, 3], &mut r),
    ];
    let mask = Mask::causal(4);
    let err = grad_check(&inputs, |g, v| {
        let (a, _) = attention(g, v[0], v[1], v[2], v[3], Some(&mask)).unwrap();
        project(g, a, 21)
    });
    assert!(err < SMOOTH, "{err}");
}

#[test]
fn fused_attention_matches_composed_heads() {
    let mut r = rng(12);
    let (m, d, heads) = (5, 8, 2);
    let p = d / heads;
    let h = random(&[m, d], &mut r);
    let (wq, wk, wv, wo) = (
        random(&[d, d], &mut r),
        random(&[d, d], &mut r),
        random(&[d, d], &mut r),
        random(&[d, d], &mut r),
    );
    let cols = |t: &Tensor, hd: usize| {
        let rows: Vec<Vec<f64>> = (0..d).map(|i| t.row(i)[hd * p..(hd + 1) * p].to_vec()).collect();
        Tensor::from_rows(&rows).unwrap()
    };
    for causal in [false, true] {
        let mut g = Graph::new();
        let hv = g.constant(h.clone());
        let per_head: Vec<HeadWeights> = (0..heads)
            .map(|hd| HeadWeights {
                w_q: g.constant(cols(&wq, hd)),
                w_k: g.constant(cols(&wk, hd)),
                w_v: g.constant(cols(&wv, hd)),
            })
            .collect();
        let wo_v = g.constant(wo.clone());
        let mask = causal.then(|| Mask::causal(m));
        let composed = multi_head(&mut g, hv, hv, &per_head, wo_v, mask.as_ref()).unwrap();

        let (wq_v, wk_v, wv_v) = (g.constant(wq.clone()), g.constant(wk.clone()), g.constant(wv.clone()));
        let q = g.matmul(hv, wq_v).unwrap();
        let k = g.matmul(hv, wk_v).unwrap();
        let v = g.matmul(hv, wv_v).unwrap();
        let layout = AttentionLayout { batch: 1, q_len: m, k_len: m, key_lens: vec![m], causal };
        let fused = g.attention(q, k, v, heads, layout).unwrap();
        let fused = g.matmul(fused, wo_v).unwrap();
        let diff = g.value(composed).max_abs_diff(g.value(fused));
        assert!(diff < 1e-12, "causal={causal}: {diff}");
    }
}

#[test]
fn two_backward_passes_double_leaf_grads() {
    use synfuse::tensor::ParamStore;
    let mut r = rng(13);
    let mut store = ParamStore::new();
    let id = store.add("w", random(&[3, 3], &mut r)).unwrap();
    let x = random(&[2, 3], &mut r);
    let run = |store: &mut ParamStore| {
        let mut g = Graph::new();
        let w = g.param(store, id);
        let xv = g.constant(x.clone());
        let y = g.matmul(xv, w).unwrap();
        let l = project(&mut g, y, 3);
        g.backward(l).unwrap().accumulate(store);
    };
    run(&mut store);
    let once = store.get(id).grad.clone();
    run(&mut store);
    let twice = store.get(id).grad.clone();
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert_eq!(2.0 * a, *b);
    }
}
