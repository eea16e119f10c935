use hetcast_core::hetgnn::{propagate, HetGnn, HetGnnConfig, ModelConfig, RelationTerm};
use hetcast_core::numerics::{ParameterStore, Tape, Tensor};
use hetcast_core::relation::{AdjacencyNorm, Relation, RelationKind, RelationStack};
use hetcast_core::temporal::{Activation, TemporalConfig};
use hetcast_core::training::loss_l2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 4;
const T: usize = 9;

fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
    for i in 0..n {
        data[i * n + i] = 0.0;
    }
    Tensor::new(&[n, n], data).unwrap()
}

fn stack_from(sim: Tensor, cas: Tensor) -> RelationStack {
    RelationStack::new(
        sim.shape()[0],
        AdjacencyNorm::Row,
        vec![
            Relation { kind: RelationKind::Similarity, matrix: sim },
            Relation { kind: RelationKind::Causality, matrix: cas },
        ],
    )
    .unwrap()
}

fn config(model: ModelConfig) -> HetGnnConfig {
    HetGnnConfig {
        n: N,
        window: T,
        temporal: TemporalConfig {
            kernel_sizes: vec![3, 5],
            channels_per_branch: 2,
            activation: Activation::Relu,
        },
        model: ModelConfig { hidden_size: 5, ..model },
        threshold: 0.0,
        norm: AdjacencyNorm::Row,
    }
}

fn build(model: ModelConfig, stack: &RelationStack, seed: u64) -> (HetGnn, ParameterStore) {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = HetGnn::new(config(model), stack, &mut store, &mut rng).unwrap();
    (m, store)
}

fn forecast(model: &HetGnn, store: &ParameterStore, windows: &Tensor) -> Vec<f64> {
    let mut tape = Tape::new();
    let y = model.forward(&mut tape, store, windows).unwrap();
    tape.value(y).data().to_vec()
}

fn random_windows(batch: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..batch * N * T).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(&[batch, N, T], data).unwrap()
}

fn fixture(seed: u64) -> (RelationStack, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stack = stack_from(random_matrix(N, &mut rng), random_matrix(N, &mut rng));
    (stack, random_windows(3, &mut rng))
}

#[test]
fn attention_shift_leaves_forecast_bit_identical() {
    let (stack, windows) = fixture(1);
    let (model, mut store) = build(ModelConfig::default(), &stack, 2);
    let id = store.find("attention.logits").unwrap();
    // Dyadic logits and shift keep `α + c` exact, so the shifted softmax is
    // computed from identical differences.
    store.value_mut(id).data_mut().copy_from_slice(&[0.25, -0.5, 0.5]);
    let before = forecast(&model, &store, &windows);
    for v in store.value_mut(id).data_mut() {
        *v += 0.75;
    }
    assert_eq!(before, forecast(&model, &store, &windows));

    store.value_mut(id).data_mut().copy_from_slice(&[0.3, -0.2, 0.5]);
    let before = forecast(&model, &store, &windows);
    for v in store.value_mut(id).data_mut() {
        *v += 1.37;
    }
    for (a, b) in before.iter().zip(forecast(&model, &store, &windows)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn disabled_relation_does_not_influence_forecast() {
    let (stack, windows) = fixture(3);
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let other = stack_from(random_matrix(N, &mut rng), stack.get(RelationKind::Causality).unwrap().clone());
    let type1 = ModelConfig::default().with_relations(&[RelationKind::Causality]);
    let (a, store) = build(type1.clone(), &stack, 4);
    let b = HetGnn::from_store(config(type1), &other, &store).unwrap();
    assert_eq!(forecast(&a, &store, &windows), forecast(&b, &store, &windows));
}

#[test]
fn zero_adjacencies_decouple_variables() {
    let zeros = stack_from(Tensor::zeros(&[N, N]), Tensor::zeros(&[N, N]));
    let (model, mut store) = build(ModelConfig::default(), &zeros, 5);
    let id = store.find("dynamic.weight").unwrap();
    *store.value_mut(id) = Tensor::zeros(&[N, N]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let windows = random_windows(1, &mut rng);
    let base = forecast(&model, &store, &windows);
    for j in 0..N {
        let mut data = windows.data().to_vec();
        for v in &mut data[j * T..(j + 1) * T] {
            *v += 0.8;
        }
        let moved = forecast(&model, &store, &Tensor::new(&[1, N, T], data).unwrap());
        for i in (0..N).filter(|&i| i != j) {
            assert_eq!(moved[i], base[i], "variable {j} leaked into {i}");
        }
    }
}

fn permute_matrix(m: &Tensor, perm: &[usize]) -> Tensor {
    let n = perm.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = m.data()[perm[i] * n + perm[j]];
        }
    }
    Tensor::new(&[n, n], out).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn joint_permutation_permutes_forecast(seed in 0u64..1000, perm in Just((0..N).collect::<Vec<usize>>()).prop_shuffle()) {
        let (stack, windows) = fixture(seed);
        let (model, store) = build(ModelConfig::default(), &stack, seed + 1);
        let permuted_stack = stack_from(
            permute_matrix(stack.get(RelationKind::Similarity).unwrap(), &perm),
            permute_matrix(stack.get(RelationKind::Causality).unwrap(), &perm),
        );
        let mut permuted_store = store.clone();
        let id = store.find("dynamic.weight").unwrap();
        *permuted_store.value_mut(id) = permute_matrix(store.value(id), &perm);
        let permuted_model = HetGnn::from_store(model.config.clone(), &permuted_stack, &permuted_store).unwrap();

        let batch = windows.shape()[0];
        let mut data = vec![0.0; windows.numel()];
        for b in 0..batch {
            for i in 0..N {
                let src = (b * N + perm[i]) * T;
                data[(b * N + i) * T..(b * N + i + 1) * T].copy_from_slice(&windows.data()[src..src + T]);
            }
        }
        let y = forecast(&model, &store, &windows);
        let yp = forecast(&permuted_model, &permuted_store, &Tensor::new(&[batch, N, T], data).unwrap());
        for b in 0..batch {
            for i in 0..N {
                prop_assert!((yp[b * N + i] - y[b * N + perm[i]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn attention_weights_are_positive_and_normalized(logits in proptest::collection::vec(-30.0f64..30.0, 1..6)) {
        let mut tape = Tape::new();
        let k = logits.len();
        let l = tape.constant(Tensor::new(&[k], logits).unwrap());
        let w = tape.softmax(l);
        let sum: f64 = tape.value(w).data().iter().sum();
        prop_assert!(tape.value(w).data().iter().all(|&v| v > 0.0));
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }
}

/// Dense evaluation of one propagation step without the tape.
fn dense_layer(h: &[f64], n: usize, d: usize, dp: usize, w0: &[f64], adj: &[Vec<f64>], ws: &[Vec<f64>], logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|a| (a - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut out = vec![0.0; n * dp];
    for i in 0..n {
        for c in 0..dp {
            let mut acc = 0.0;
            for k in 0..d {
                acc += h[i * d + k] * w0[k * dp + c];
            }
            for r in 0..adj.len() {
                let mut s = 0.0;
                for j in 0..n {
                    let mut hw = 0.0;
                    for k in 0..d {
                        hw += h[j * d + k] * ws[r][k * dp + c];
                    }
                    s += adj[r][i * n + j] * hw;
                }
                acc += e[r] / z * s;
            }
            out[i * dp + c] = acc.max(0.0);
        }
    }
    out
}

#[test]
fn propagation_matches_dense_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let n = rng.random_range(4..=8);
        let d = rng.random_range(3..=6);
        let dp = rng.random_range(3..=6);
        let r = rng.random_range(1..=3);
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let h = draw(n * d);
        let w0 = draw(d * dp);
        let adj: Vec<Vec<f64>> = (0..r).map(|_| draw(n * n)).collect();
        let ws: Vec<Vec<f64>> = (0..r).map(|_| draw(d * dp)).collect();
        let logits = draw(r);
        let expected = dense_layer(&h, n, d, dp, &w0, &adj, &ws, &logits);

        let mut tape = Tape::new();
        let hv = tape.constant(Tensor::new(&[n, d], h).unwrap());
        let w0v = tape.constant(Tensor::new(&[d, dp], w0).unwrap());
        let terms: Vec<RelationTerm> = (0..r)
            .map(|i| RelationTerm {
                tag: "x",
                adjacency: tape.constant(Tensor::new(&[n, n], adj[i].clone()).unwrap()),
                weight: tape.constant(Tensor::new(&[d, dp], ws[i].clone()).unwrap()),
            })
            .collect();
        let lv = tape.constant(Tensor::new(&[r], logits).unwrap());
        let out = propagate(&mut tape, 0, hv, w0v, &terms, Some(lv), Activation::Relu).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

fn model_loss(model: &HetGnn, store: &ParameterStore, windows: &Tensor, truth: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let y = model.forward(&mut tape, store, windows).unwrap();
    let t = tape.constant(truth.clone());
    let l = loss_l2(&mut tape, y, t).unwrap();
    tape.value(l).item().unwrap()
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let (stack, windows) = fixture(21);
    let (model, mut store) = build(ModelConfig::default(), &stack, 22);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let truth = Tensor::new(&[3, N], (0..3 * N).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let id = store.find("attention.logits").unwrap();
    store.value_mut(id).data_mut().copy_from_slice(&[0.2, -0.4, 0.1]);

    let mut tape = Tape::new();
    let y = model.forward(&mut tape, &store, &windows).unwrap();
    let t = tape.constant(truth.clone());
    let l = loss_l2(&mut tape, y, t).unwrap();
    let grads = tape.backward(l).unwrap();
    store.zero_grads();
    store.accumulate(&grads);

    let eps = 1e-5;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let len = store.value(id).numel();
        for c in [0, len / 2, len - 1] {
            let analytic = store.get(id).grad.as_ref().unwrap().data()[c];
            let orig = store.value(id).data()[c];
            store.value_mut(id).data_mut()[c] = orig + eps;
            let up = model_loss(&model, &store, &windows, &truth);
            store.value_mut(id).data_mut()[c] = orig - eps;
            let down = model_loss(&model, &store, &windows, &truth);
            store.value_mut(id).data_mut()[c] = orig;
            let fd = (up - down) / (2.0 * eps);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
            assert!(rel < 1e-4, "{} [{c}]: analytic {analytic} vs fd {fd}", store.get(id).name);
        }
    }
    let dyn_id = store.find("dynamic.weight").unwrap();
    let g = store.get(dyn_id).grad.as_ref().unwrap();
    assert!(g.data().iter().any(|&v| v != 0.0));
}
