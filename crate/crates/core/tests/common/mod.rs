//! Test-only oracles: central finite differences and small random tensors.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synfuse::tensor::{Graph, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Floor on the relative-error denominator. Below it the comparison is
/// absolute error scaled by the floor, which keeps finite-difference noise
/// (~1e-10) on vanishing gradients from reading as a large relative error.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of `f` at `inputs` with central finite
/// differences. Returns the worst relative error over every input element.
///
/// `f` builds a scalar from fresh variables on a fresh graph, so the
/// numeric side never touches the backward pass.
pub fn grad_check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |ts: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        for k in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[k], numeric));
        }
    }
    worst
}

/// `sum(out ⊙ weights)` with fixed random weights, turning any tensor
/// output into a scalar whose gradient touches every element.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Var {
    let w = random(g.shape(out), &mut rng(seed));
    let w = g.constant(w);
    let prod = g.mul(out, w).unwrap();
    g.sum(prod)
}

/// Row-major matrix as nested vectors.
pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// `softmax(QKᵀ/√P)V` evaluated with explicit loops over plain vectors.
/// `allowed[i][j]` false hides key `j` from query `i`.
pub fn direct_attention(h: &Mat, w_k: &Mat, w_q: &Mat, w_v: &Mat, allowed: Option<&Vec<Vec<bool>>>) -> (Mat, Mat) {
    let proj = |w: &Mat| -> Mat {
        h.iter()
            .map(|row| {
                (0..w[0].len())
                    .map(|c| row.iter().enumerate().map(|(r, x)| x * w[r][c]).sum())
                    .collect()
            })
            .collect()
    };
    let (k, q, v) = (proj(w_k), proj(w_q), proj(w_v));
    let p = k[0].len() as f64;
    let m = h.len();
    let mut weights = vec![vec![0.0; m]; m];
    for i in 0..m {
        let mut scores = Vec::with_capacity(m);
        for j in 0..m {
            let ok = allowed.is_none_or(|a| a[i][j]);
            let s: f64 = q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / p.sqrt();
            scores.push(if ok { Some(s) } else { None });
        }
        let max = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().flatten().map(|s| (s - max).exp()).sum();
        for j in 0..m {
            weights[i][j] = scores[j].map_or(0.0, |s| (s - max).exp() / z);
        }
    }
    let a = (0..m)
        .map(|i| {
            (0..v[0].len())
                .map(|c| (0..m).map(|j| weights[i][j] * v[j][c]).sum())
                .collect()
        })
        .collect();
    (a, weights)
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

use synfuse::annotate::FeatureTriple;
use synfuse::model::{Example, ModelConfig};

/// A small model shape that trains in milliseconds.
pub fn tiny_config(vocab: usize, pos_vocab: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        feature_dim: 2,
        layers: 1,
        heads: 2,
        ffn_width: 16,
        ..ModelConfig::toy(vocab, pos_vocab)
    }
}

/// Random parallel examples over ids `7..vocab`, with random features.
pub fn random_examples(n: usize, vocab: usize, pos_vocab: usize, seed: u64) -> Vec<Example> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let m = r.gen_range(1..6);
            let t = r.gen_range(1..6);
            Example {
                source: (0..m).map(|_| r.gen_range(7..vocab)).collect(),
                features: (0..m)
                    .map(|_| FeatureTriple {
                        pos_id: r.gen_range(0..pos_vocab),
                        case_id: r.gen_range(0..2),
                        position_id: r.gen_range(0..4),
                    })
                    .collect(),
                target: (0..t).map(|_| r.gen_range(7..vocab)).collect(),
            }
        })
        .collect()
}

use synfuse::tensor::{ParamId, ParamStore};

/// Finite-difference check over stored parameters. `loss` builds a scalar
/// from the model's current parameters; `store` exposes them for perturbation.
pub fn param_grad_check<M>(
    model: &mut M,
    store: fn(&mut M) -> &mut ParamStore,
    ids: &[ParamId],
    loss: impl Fn(&M) -> (Graph, Var),
) -> f64 {
    let (g, l) = loss(model);
    let grads = g.backward(l).unwrap();
    store(model).zero_grad();
    grads.accumulate(store(model));
    let eval = |m: &M| {
        let (g, l) = loss(m);
        g.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for &id in ids {
        for k in 0..store(model).get(id).value.len() {
            let analytic = store(model).get(id).grad.data()[k];
            let orig = store(model).get(id).value.data()[k];
            store(model).get_mut(id).value.data_mut()[k] = orig + FD_STEP;
            let plus = eval(model);
            store(model).get_mut(id).value.data_mut()[k] = orig - FD_STEP;
            let minus = eval(model);
            store(model).get_mut(id).value.data_mut()[k] = orig;
            worst = worst.max(rel_err(analytic, (plus - minus) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Corpus BLEU-4 written from the definition: every n-gram occurrence is
/// counted by linear scan, clipped against the reference, orders with no
/// candidate n-grams are left out of the geometric mean.
pub fn brute_force_bleu(hyps: &[String], refs: &[String]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let rf: Vec<&str> = rf.split_whitespace().collect();
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let grams: Vec<&[&str]> = h.windows(n).collect();
            total[n - 1] += grams.len();
            let mut seen: Vec<&[&str]> = Vec::new();
            for g in &grams {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let in_hyp = grams.iter().filter(|x| *x == g).count();
                let in_ref = if rf.len() >= n { rf.windows(n).filter(|x| x == g).count() } else { 0 };
                matched[n - 1] += in_hyp.min(in_ref);
            }
        }
    }
    let mut logs = Vec::new();
    for n in 0..4 {
        if total[n] > 0 {
            if matched[n] == 0 {
                return 0.0;
            }
            logs.push((matched[n] as f64 / total[n] as f64).ln());
        }
    }
    if logs.is_empty() || c == 0 {
        return 0.0;
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

/// Random sentence over a small alphabet so n-grams collide often.
pub fn random_sentence(r: &mut ChaCha8Rng, max_len: usize) -> String {
    const WORDS: [&str; 5] = ["a", "b", "c", "d", "the"];
    let n = r.gen_range(0..=max_len);
    (0..n).map(|_| WORDS[r.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}
