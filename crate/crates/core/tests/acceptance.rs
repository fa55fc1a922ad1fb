//! Acceptance criteria for the toolkit.
//!
//! Every test prints exactly one line of the form
//! `ACCEPTANCE <id> <PASS|FAIL> <title>: <detail>` and then asserts the
//! verdict. Run with `cargo test -p brainpop-core --test acceptance -- --nocapture`
//! to see the lines. The statistical criteria (6, 7, 8) share one protocol:
//! ten cohort seeds, one repetition of 5-fold stratified CV per seed, and
//! small model widths so the whole suite fits a single core.

use std::sync::Arc;
use std::time::Instant;

use brainpop_core::brain::{group_assignment_ratio, AnrGat, AnrGatConfig, BrainGraph, WgatLayer};
use brainpop_core::data::{generate_cohort, Dataset, SyntheticCohortSpec};
use brainpop_core::losses::{reference, similarity_loss, stage1_loss, stage2_loss, LossWeights};
use brainpop_core::pipeline::{load_config, RunDir};
use brainpop_core::population::{
    build_condition_edges, gaussian_affinity, normalized_adjacency, EdgeMode, FusionMode, PopulationModel,
    PopulationModelConfig,
};
use brainpop_core::rng::derive_seed;
use brainpop_core::training::{
    cross_validate, fold_seed, split_seed, stratified_kfold, train_stage1, train_stage2, FoldStats, RunConfig,
    Stage1Config, Stage2Config, Stage2Variant,
};
use brainpop_core::{ParamStore, RowSparse, SeededRng, Tape, Tensor, Var, WeightedEdges};

const SEEDS: u64 = 10;

fn verdict(id: u32, title: &str, pass: bool, detail: impl AsRef<str>) {
    println!(
        "ACCEPTANCE {id} {} {title}: {}",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    assert!(pass, "criterion {id} failed: {}", detail.as_ref());
}

fn random_tensor(rng: &mut SeededRng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.rows(), a.cols(), data).unwrap()
}

fn max_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(0.0, |m, v| m.max(v.abs()))
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

const FD_STEP: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1)`.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Largest central-difference error over every input entry of a
/// tape-built scalar function.
fn fd_check_inputs(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |ins: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars);
        tape.scalar_value(out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()));
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

/// Same check over every entry of every parameter in `store`.
fn fd_check_params(store: &mut ParamStore, loss: &dyn Fn(&ParamStore) -> (Tape, Var)) -> f64 {
    let (mut tape, l) = loss(store);
    tape.backward(l).unwrap();
    store.zero_grad();
    tape.accumulate_param_grads(store).unwrap();
    let analytic: Vec<Vec<f64>> = store
        .iter()
        .map(|p| p.tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.tensor.len()]))
        .collect();
    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let (t, l) = loss(store);
            let up = t.scalar_value(l);
            store.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let (t, l) = loss(store);
            let down = t.scalar_value(l);
            store.get_mut(id).data_mut()[k] = orig;
            worst = worst.max(rel_err(analytic[id.index()][k], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

type OpCase = (&'static str, Vec<(usize, usize)>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>);

/// One case per differentiable operation. Each output is contracted with a
/// fixed random weight matrix so constant-sum outputs (softmax) still get a
/// non-trivial gradient.
fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = SeededRng::new(seed);
    let mut weights = move |r: usize, c: usize| random_tensor(&mut rng, r, c);
    let mut contract = |r: usize, c: usize| {
        let w = weights(r, c);
        move |t: &mut Tape, v: Var| {
            let wv = t.constant(&w);
            let p = t.mul(v, wv).unwrap();
            t.sum(p)
        }
    };
    let mut mask_rng = SeededRng::new(seed ^ 0xABCD);
    let mut mask: Vec<bool> = (0..16).map(|_| mask_rng.bernoulli(0.6)).collect();
    for i in 0..4 {
        mask[i * 4 + i] = true;
    }
    let sparse = {
        let mut r = SeededRng::new(seed ^ 0x5EED);
        let rows = (0..4)
            .map(|_| {
                let cols: Vec<usize> = (0..5).filter(|_| r.bernoulli(0.5)).collect();
                cols.into_iter().map(|j| (j, r.uniform_range(0.1, 1.0))).collect()
            })
            .collect();
        Arc::new(RowSparse::new(5, rows).unwrap())
    };

    macro_rules! case {
        ($name:expr, [$($shape:expr),*], ($r:expr, $c:expr), |$t:ident, $v:ident| $body:expr) => {{
            let k = contract($r, $c);
            (
                $name,
                vec![$($shape),*],
                Box::new(move |$t: &mut Tape, $v: &[Var]| {
                    let out = $body;
                    k($t, out)
                }) as Box<dyn Fn(&mut Tape, &[Var]) -> Var>,
            )
        }};
    }

    vec![
        case!("matmul", [(3, 4), (4, 2)], (3, 2), |t, v| t.matmul(v[0], v[1]).unwrap()),
        case!("sparse_matmul", [(5, 3)], (4, 3), |t, v| t.sparse_matmul(&sparse, v[0]).unwrap()),
        case!("transpose", [(3, 4)], (4, 3), |t, v| t.transpose(v[0])),
        case!("add", [(3, 4), (3, 4)], (3, 4), |t, v| t.add(v[0], v[1]).unwrap()),
        case!("sub", [(3, 4), (3, 4)], (3, 4), |t, v| t.sub(v[0], v[1]).unwrap()),
        case!("mul", [(3, 4), (3, 4)], (3, 4), |t, v| t.mul(v[0], v[1]).unwrap()),
        case!("add_row", [(3, 4), (1, 4)], (3, 4), |t, v| t.add_row(v[0], v[1]).unwrap()),
        case!("mul_col", [(3, 4), (3, 1)], (3, 4), |t, v| t.mul_col(v[0], v[1]).unwrap()),
        case!("scale", [(3, 4)], (3, 4), |t, v| t.scale(v[0], -1.7)),
        case!("add_scalar", [(3, 4)], (3, 4), |t, v| {
            let a = t.add_scalar(v[0], 0.3);
            t.mul(a, a).unwrap()
        }),
        case!("sigmoid", [(3, 4)], (3, 4), |t, v| t.sigmoid(v[0])),
        case!("relu", [(3, 4)], (3, 4), |t, v| t.relu(v[0])),
        case!("leaky_relu", [(3, 4)], (3, 4), |t, v| t.leaky_relu(v[0], 0.2)),
        case!("exp", [(3, 4)], (3, 4), |t, v| t.exp(v[0])),
        case!("tanh", [(3, 4)], (3, 4), |t, v| t.tanh(v[0])),
        case!("outer_add", [(4, 1), (1, 3)], (4, 3), |t, v| t.outer_add(v[0], v[1]).unwrap()),
        case!("softmax_rows", [(3, 5)], (3, 5), |t, v| t.softmax_rows(v[0])),
        case!("masked_softmax_rows", [(4, 4)], (4, 4), |t, v| t
            .masked_softmax_rows(v[0], mask.clone())
            .unwrap()),
        case!("log_softmax_rows", [(3, 5)], (3, 5), |t, v| t.log_softmax_rows(v[0])),
        case!("layer_norm_rows", [(3, 5)], (3, 5), |t, v| t.layer_norm_rows(v[0], 1e-5)),
        case!("hconcat", [(3, 2), (3, 3)], (3, 5), |t, v| t.hconcat(&[v[0], v[1]]).unwrap()),
        case!("vconcat", [(2, 3), (3, 3)], (5, 3), |t, v| t.vconcat(&[v[0], v[1]]).unwrap()),
        case!("mean_rows", [(4, 3)], (1, 3), |t, v| t.mean_rows(v[0])),
        case!("max_rows", [(4, 3)], (1, 3), |t, v| t.max_rows(v[0])),
        case!("sum", [(3, 4)], (1, 1), |t, v| {
            let s = t.sum(v[0]);
            t.mul(s, s).unwrap()
        }),
        case!("mean", [(3, 4)], (1, 1), |t, v| {
            let s = t.mean(v[0]);
            t.mul(s, s).unwrap()
        }),
        case!("gather_rows", [(4, 3)], (5, 3), |t, v| t.gather_rows(v[0], &[3, 0, 0, 2, 1]).unwrap()),
        case!("slice_rows", [(5, 3)], (2, 3), |t, v| t.slice_rows(v[0], 2, 2).unwrap()),
    ]
}

fn tiny_cohort(seed: u64, n: usize, regions: usize) -> Dataset {
    generate_cohort(&SyntheticCohortSpec {
        n_subjects: n,
        regions,
        timepoints: 3 * regions + 8,
        n_sites: 2,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn stage1_composite(seed: u64) -> f64 {
    let ds = tiny_cohort(seed, 8, 8);
    let batch: Vec<&BrainGraph> = ds.brains.iter().take(5).collect();
    let labels: Vec<usize> = batch.iter().map(|b| b.label).collect();
    let mut store = ParamStore::new();
    let model = AnrGat::new(
        AnrGatConfig {
            in_dim: 8,
            hidden1: 4,
            hidden2: 3,
            n_groups: 3,
            ..Default::default()
        },
        &mut store,
        &mut SeededRng::new(seed),
    )
    .unwrap();
    fd_check_params(&mut store, &|s: &ParamStore| {
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, s).unwrap();
        let (mut lg, mut em) = (Vec::new(), Vec::new());
        for b in &batch {
            let pass = model.forward(&mut tape, &p, b).unwrap();
            lg.push(pass.logits);
            em.push(pass.embedding);
        }
        let l = tape.vconcat(&lg).unwrap();
        let e = tape.vconcat(&em).unwrap();
        let loss = stage1_loss(&mut tape, l, e, &labels, LossWeights::default()).unwrap();
        (tape, loss.total)
    })
}

fn stage2_composite(seed: u64, fusion: FusionMode) -> f64 {
    let mut rng = SeededRng::new(seed);
    let n = 7;
    let features = random_tensor(&mut rng, n, 4);
    let pheno = random_tensor(&mut rng, n, 3);
    let affinity = gaussian_affinity(&features, 2.0).unwrap();
    let cats: Vec<Vec<usize>> = vec![(0..n).map(|i| i % 2).collect(), (0..n).map(|i| i % 3).collect()];
    let relations = build_condition_edges(
        &affinity,
        &["a".to_string(), "b".to_string()],
        &cats,
        4,
        EdgeMode::CrossCategory,
    )
    .unwrap();
    let adj: Vec<Arc<RowSparse>> = relations.iter().map(|r| normalized_adjacency(n, &r.edges)).collect();
    let mut store = ParamStore::new();
    let model = PopulationModel::new(
        PopulationModelConfig {
            in_dim: 4,
            hidden: 5,
            n_conditions: adj.len(),
            pheno_dim: 3,
            fusion,
            self_term: true,
        },
        &mut store,
        &mut rng,
    )
    .unwrap();
    let train = [0usize, 1, 2, 4, 6];
    let labels = [0usize, 1, 1, 0, 1];
    fd_check_params(&mut store, &|s: &ParamStore| {
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, s, &features, &adj, &pheno).unwrap();
        let lg = tape.gather_rows(pass.logits, &train).unwrap();
        let nd = tape.gather_rows(pass.node, &train).unwrap();
        let fu = pass.fused.map(|f| tape.gather_rows(f, &train).unwrap());
        let loss = stage2_loss(&mut tape, lg, nd, fu, &labels, LossWeights::default()).unwrap();
        (tape, loss.total)
    })
}

#[test]
fn c01_gradient_correctness() {
    let start = Instant::now();
    let mut cases = 0;
    let mut failures = Vec::new();
    let mut worst_plain: f64 = 0.0;
    let mut worst_ln: f64 = 0.0;
    for seed in 0..4 {
        let mut rng = SeededRng::new(1000 + seed);
        for (name, shapes, f) in op_cases(seed) {
            let inputs: Vec<Tensor> = shapes.iter().map(|&(r, c)| random_tensor(&mut rng, r, c)).collect();
            let err = fd_check_inputs(&inputs, f.as_ref());
            let tol = if name == "layer_norm_rows" { 1e-3 } else { 1e-4 };
            if name == "layer_norm_rows" {
                worst_ln = worst_ln.max(err);
            } else {
                worst_plain = worst_plain.max(err);
            }
            if !(err < tol) {
                failures.push(format!("{name}#{seed} ({err:.1e})"));
            }
            cases += 1;
        }
    }
    for seed in 0..3 {
        let err = stage1_composite(seed);
        worst_plain = worst_plain.max(err);
        if !(err < 1e-4) {
            failures.push(format!("stage1_loss#{seed} ({err:.1e})"));
        }
        cases += 1;
    }
    for (k, fusion) in [
        FusionMode::None,
        FusionMode::Add,
        FusionMode::Concat,
        FusionMode::Attention,
        FusionMode::Gated,
    ]
    .into_iter()
    .enumerate()
    {
        for seed in 0..2 {
            let err = stage2_composite(10 * k as u64 + seed, fusion);
            worst_ln = worst_ln.max(err);
            if !(err < 1e-3) {
                failures.push(format!("stage2_loss[{fusion:?}]#{seed} ({err:.1e})"));
            }
            cases += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient correctness",
        failures.is_empty() && cases >= 100 && secs < 120.0,
        format!(
            "{cases} cases, max rel err {worst_plain:.1e} (tol 1e-4), {worst_ln:.1e} through layernorm (tol 1e-3), {secs:.1}s{}",
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Closed-form similarity gradient

#[test]
fn c02_similarity_gradient_oracle() {
    let mut rng = SeededRng::new(2);
    let mut worst_full: f64 = 0.0;
    let mut worst_literal: f64 = 0.0;
    let mut literal_mismatches = 0;
    for _ in 0..50 {
        let n = 2 + rng.below(7);
        let d = 1 + rng.below(6);
        let h = random_tensor(&mut rng, n, d);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
        let mut tape = Tape::new();
        let hv = tape.leaf(&h);
        let l = similarity_loss(&mut tape, hv, &labels).unwrap();
        tape.backward(l).unwrap();
        let auto = tape.grad(hv).unwrap();

        let literal = reference::similarity_loss_grad_oracle(&h, &labels);
        let key_side = reference::similarity_grad_key_side(&h, &labels);
        let full = zip(&literal, &key_side, |a, b| a + b);
        let scale = max_abs(&auto).max(1e-12);
        let e_full = max_abs(&zip(&auto, &full, |a, b| a - b)) / scale;
        let e_lit = max_abs(&zip(&auto, &literal, |a, b| a - b)) / scale;
        worst_full = worst_full.max(e_full);
        worst_literal = worst_literal.max(e_lit);
        if e_lit > 1e-6 {
            literal_mismatches += 1;
        }
    }
    // The printed closed form differentiates only through row i of S′;
    // the report states how far that alone is from the true gradient.
    println!(
        "REPORT 2: closed form as printed (query side only) disagrees with autodiff on {literal_mismatches}/50 instances, \
         max rel err {worst_literal:.2e}; adding the key-side term brings it to {worst_full:.2e}"
    );
    verdict(
        2,
        "similarity gradient oracle",
        worst_full < 1e-6,
        format!(
            "50 instances (N ≤ 8, d ≤ 6): closed form incl. key-side term max rel err {worst_full:.2e} (tol 1e-6); \
             printed query-side form alone max rel err {worst_literal:.2e} on {literal_mismatches}/50 (reported)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Kernel identity on unit vectors

#[test]
fn c03_kernel_identity() {
    let mut rng = SeededRng::new(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = 2 + rng.below(15);
        let sigma = rng.uniform_range(0.3, 3.0);
        let mut h = random_tensor(&mut rng, 2, d);
        for i in 0..2 {
            let norm = h.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            h.row_mut(i).iter_mut().for_each(|x| *x /= norm);
        }
        let a = gaussian_affinity(&h, sigma).unwrap();
        let dot: f64 = h.row(0).iter().zip(h.row(1)).map(|(x, y)| x * y).sum();
        let identity = (dot / (sigma * sigma)).exp() * (-1.0 / (sigma * sigma)).exp();
        worst = worst.max((a.get(0, 1) - identity).abs());
    }
    verdict(
        3,
        "kernel dot-product identity",
        worst <= 1e-12,
        format!("1000 unit-norm pairs, max abs diff {worst:.2e} (tol 1e-12)"),
    );
}

// ---------------------------------------------------------------------------
// 4. Structural invariants

fn random_graph(rng: &mut SeededRng, n: usize, p: f64) -> WeightedEdges {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.bernoulli(p) {
                edges.push((u, v, rng.uniform_range(0.6, 1.0)));
            }
        }
    }
    WeightedEdges::new(n, edges).unwrap()
}

fn worst_row_sum_error(t: &Tensor) -> f64 {
    (0..t.rows())
        .map(|i| (t.row(i).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

#[test]
fn c04_structural_invariants() {
    let mut problems = Vec::new();

    // Attention rows.
    let mut rng = SeededRng::new(4);
    let mut worst_alpha: f64 = 0.0;
    for trial in 0..20 {
        let n = 5 + rng.below(20);
        let graph = random_graph(&mut rng, n, 0.3);
        let mut store = ParamStore::new();
        let layer = WgatLayer::new(&mut store, "w", 6, 4, &mut rng);
        let x = random_tensor(&mut rng, n, 6);
        let mut tape = Tape::new();
        let p = layer.bind(&mut tape, &store).unwrap();
        let xv = tape.constant(&x);
        let out = layer.forward(&mut tape, &p, xv, &graph).unwrap();
        let err = worst_row_sum_error(&tape.value(out.alpha));
        worst_alpha = worst_alpha.max(err);
        if err > 1e-9 {
            problems.push(format!("attention rows off by {err:.1e} in trial {trial}"));
        }
    }

    // Group softmax rows and the group-count sweep on R = 110.
    let ds = generate_cohort(&SyntheticCohortSpec {
        n_subjects: 12,
        regions: 110,
        timepoints: 330,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let mut worst_m: f64 = 0.0;
    let mut ratios = Vec::new();
    for n_groups in [10, 60, 110, 200] {
        let mut store = ParamStore::new();
        let model = AnrGat::new(
            AnrGatConfig {
                in_dim: 110,
                hidden1: 16,
                hidden2: 16,
                n_groups,
                ..Default::default()
            },
            &mut store,
            &mut SeededRng::new(40),
        )
        .unwrap();
        let mut ratio_sum = 0.0;
        for b in &ds.brains {
            let mut tape = Tape::new();
            let p = model.bind(&mut tape, &store).unwrap();
            let pass = model.forward(&mut tape, &p, b).unwrap();
            worst_m = worst_m.max(worst_row_sum_error(&tape.value(pass.assignment_probs)));
            let g = pass.grouped.expect("regrouping enabled");
            let used = g.used_groups.len();
            if used > n_groups.min(110) {
                problems.push(format!("{used} groups used with N_g = {n_groups}"));
            }
            ratio_sum += group_assignment_ratio(&g.assignment, n_groups);
        }
        ratios.push((n_groups, ratio_sum / ds.len() as f64));
    }
    if worst_m > 1e-9 {
        problems.push(format!("group softmax rows off by {worst_m:.1e}"));
    }
    if ratios.windows(2).any(|w| w[1].1 > w[0].1) {
        problems.push(format!("assignment ratio increases: {ratios:?}"));
    }

    // Cross-category edges, checked edge by edge.
    let mut checked = 0usize;
    for trial in 0..200 {
        let n = 4 + rng.below(40);
        let h = random_tensor(&mut rng, n, 3);
        let affinity = gaussian_affinity(&h, 1.0).unwrap();
        let n_cond = 1 + rng.below(3);
        let cats: Vec<Vec<usize>> = (0..n_cond)
            .map(|_| {
                let k = 1 + rng.below(6);
                (0..n).map(|_| rng.below(k)).collect()
            })
            .collect();
        let names: Vec<String> = (0..n_cond).map(|c| format!("c{c}")).collect();
        let k = 1 + rng.below(8);
        let relations = build_condition_edges(&affinity, &names, &cats, k, EdgeMode::CrossCategory).unwrap();
        for (c, r) in relations.iter().enumerate() {
            for &(i, j, _) in &r.edges {
                checked += 1;
                if cats[c][i] == cats[c][j] {
                    problems.push(format!("trial {trial}: same-category edge {i}-{j} in {}", r.name));
                }
            }
        }
    }

    let ratio_text: Vec<String> = ratios.iter().map(|(g, r)| format!("N_g={g}: {r:.3}")).collect();
    verdict(
        4,
        "structural invariants",
        problems.is_empty(),
        format!(
            "attention row err {worst_alpha:.1e}, group row err {worst_m:.1e}, ratio sweep [{}], {checked} cross edges all cross-category{}",
            ratio_text.join(", "),
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Similarity-loss hand values

#[test]
fn c05_similarity_loss_hand_values() {
    let h = Tensor::from_rows(&[[0.3, -1.2, 0.5], [0.3, -1.2, 0.5]]).unwrap();
    let value = |labels: &[usize]| {
        let mut tape = Tape::new();
        let v = tape.constant(&h);
        let l = similarity_loss(&mut tape, v, labels).unwrap();
        tape.scalar_value(l)
    };
    let same = value(&[1, 1]);
    let diff = value(&[0, 1]);
    verdict(
        5,
        "similarity loss hand values",
        same == 0.25 && diff == 0.25,
        format!("identical pair, same labels {same}; different labels {diff} (expected 0.25 exactly)"),
    );
}

// ---------------------------------------------------------------------------
// Shared protocol for 6–8

fn protocol(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        repetitions: 1,
        folds: 5,
        refit_stage1_per_fold: true,
        stage1: Stage1Config {
            lr: 5e-3,
            epochs: 10,
            batch_size: 32,
            hidden: 16,
            n_groups: 8,
            ..Default::default()
        },
        stage2: Stage2Config {
            hidden: 32,
            ..Default::default()
        },
    }
}

fn variant(name: &str, base: &Stage2Config, edge_mode: EdgeMode, fusion: FusionMode) -> Stage2Variant {
    Stage2Variant {
        name: name.into(),
        config: Stage2Config {
            edge_mode,
            fusion,
            ..base.clone()
        },
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn c06_null_signal_control() {
    let start = Instant::now();
    let mut aucs = Vec::new();
    let mut stage1_aucs = Vec::new();
    for seed in 0..SEEDS {
        let ds = generate_cohort(&SyntheticCohortSpec {
            n_subjects: 200,
            regions: 32,
            disease_effect: 0.0,
            seed,
            ..Default::default()
        })
        .unwrap();
        let cfg = protocol(seed);
        let v = variant("full", &cfg.stage2, cfg.stage2.edge_mode, cfg.stage2.fusion);
        let out = cross_validate(&ds, &cfg, &[v]).unwrap();
        aucs.push(out.variants[0].1.auc.mean);
        stage1_aucs.push(out.stage1.auc.mean);
    }
    let auc = mean(&aucs);
    verdict(
        6,
        "null-signal control",
        (0.40..=0.60).contains(&auc),
        format!(
            "disease_effect 0, n 200, R 32: mean test AUC {auc:.3} over {SEEDS} seeds (stage 1 alone {:.3}), {:.0}s",
            mean(&stage1_aucs),
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn c07_confound_mitigation_direction() {
    let start = Instant::now();
    let (mut cross, mut same, mut s1) = (Vec::new(), Vec::new(), Vec::new());
    let (mut cd_s1, mut cd_cross, mut cd_same) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let ds = generate_cohort(&SyntheticCohortSpec {
            n_subjects: 300,
            regions: 32,
            n_sites: 3,
            disease_effect: 0.25,
            site_effect: 1.5,
            seed,
            ..Default::default()
        })
        .unwrap();
        let cfg = protocol(seed);
        let variants = [
            variant("cross", &cfg.stage2, EdgeMode::CrossCategory, FusionMode::None),
            variant("same", &cfg.stage2, EdgeMode::SameCategory, FusionMode::None),
        ];
        let out = cross_validate(&ds, &cfg, &variants).unwrap();
        s1.push(out.stage1.acc.mean);
        cross.push(out.variants[0].1.acc.mean);
        same.push(out.variants[1].1.acc.mean);
        for f in &out.folds {
            cd_s1.push(f.stage1_class_distance);
            cd_cross.push(f.variants[0].class_distance);
            cd_same.push(f.variants[1].class_distance);
        }
    }
    let (c, s, b) = (mean(&cross), mean(&same), mean(&s1));
    let (d1, dc, ds_) = (mean(&cd_s1), mean(&cd_cross), mean(&cd_same));
    let secs = start.elapsed().as_secs_f64();
    let pass = c - s >= 0.02 && c > b && s > b && dc > d1 && ds_ > d1 && secs < 900.0;
    verdict(
        7,
        "confound-mitigation direction",
        pass,
        format!(
            "n 300, 3 sites, site 1.5, disease 0.25, {SEEDS} seeds: ACC cross {:.1}% vs same {:.1}% (diff {:+.1} pts, need ≥ +2), \
             stage 1 {:.1}%; class distance stage 1 {d1:.2}, cross {dc:.2}, same {ds_:.2}; {secs:.0}s",
            100.0 * c,
            100.0 * s,
            100.0 * (c - s),
            100.0 * b
        ),
    );
}

#[test]
fn c08_phenotype_fusion_direction() {
    let start = Instant::now();
    let (mut gated, mut none, mut add) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let ds = generate_cohort(&SyntheticCohortSpec {
            n_subjects: 200,
            regions: 32,
            disease_effect: 0.25,
            iq_label_shift: 1.0,
            seed,
            ..Default::default()
        })
        .unwrap();
        let cfg = protocol(seed);
        let mode = cfg.stage2.edge_mode;
        let variants = [
            variant("gated", &cfg.stage2, mode, FusionMode::Gated),
            variant("none", &cfg.stage2, mode, FusionMode::None),
            variant("add", &cfg.stage2, mode, FusionMode::Add),
        ];
        let out = cross_validate(&ds, &cfg, &variants).unwrap();
        gated.push(out.variants[0].1.acc.mean);
        none.push(out.variants[1].1.acc.mean);
        add.push(out.variants[2].1.acc.mean);
    }
    let (g, n, a) = (mean(&gated), mean(&none), mean(&add));
    verdict(
        8,
        "phenotype fusion direction",
        g - n >= 0.02 && g >= a,
        format!(
            "IQ shifted by 1 SD in class 1, {SEEDS} seeds: ACC gated {:.1}%, none {:.1}% (diff {:+.1} pts, need ≥ +2), add {:.1}%; {:.0}s",
            100.0 * g,
            100.0 * n,
            100.0 * (g - n),
            100.0 * a,
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. Determinism

#[test]
fn c09_run_all_determinism() {
    let config = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let cfg = load_config(Some(&config), &["seed=9".into()]).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = RunDir::create(a.path(), cfg.clone()).unwrap();
    let rb = RunDir::create(b.path(), cfg).unwrap();
    ra.run_all().unwrap();
    rb.run_all().unwrap();
    let ja = std::fs::read(ra.metrics_json()).unwrap();
    let jb = std::fs::read(rb.metrics_json()).unwrap();
    verdict(
        9,
        "run-all determinism",
        ja == jb && !ja.is_empty(),
        format!(
            "two run-all executions of configs/smoke.toml (seed 9): metrics JSON {} bytes, byte-identical: {}",
            ja.len(),
            ja == jb
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. Protocol fidelity

#[test]
fn c10_protocol_fidelity() {
    let mut problems = Vec::new();
    let ds = generate_cohort(&SyntheticCohortSpec {
        n_subjects: 100,
        regions: 16,
        timepoints: 64,
        seed: 10,
        ..Default::default()
    })
    .unwrap();
    let labels = ds.labels();
    let cfg = RunConfig {
        seed: 10,
        repetitions: 5,
        folds: 10,
        refit_stage1_per_fold: true,
        stage1: Stage1Config {
            epochs: 1,
            hidden: 4,
            n_groups: 4,
            ..Default::default()
        },
        stage2: Stage2Config {
            epochs: 2,
            hidden: 8,
            ..Default::default()
        },
    };
    let v = variant("full", &cfg.stage2, cfg.stage2.edge_mode, cfg.stage2.fusion);
    let out = cross_validate(&ds, &cfg, &[v]).unwrap();
    let records = out.variants[0].1.folds.len();
    if records != 50 || out.folds.len() != 50 || out.stage1.folds.len() != 50 {
        problems.push(format!("{records} fold records"));
    }

    // Stratification, brute force: every subject tested once per
    // repetition, train/test disjoint, class counts within one of even.
    let class_total = [labels.iter().filter(|&&y| y == 0).count(), labels.iter().filter(|&&y| y == 1).count()];
    for rep in 0..5 {
        let folds: Vec<_> = out.folds.iter().filter(|f| f.repetition == rep).collect();
        let mut tested = vec![0; labels.len()];
        for f in &folds {
            let mut seen = vec![false; labels.len()];
            for &i in f.train.iter().chain(&f.test) {
                if seen[i] {
                    problems.push(format!("rep {rep} fold {}: index {i} repeated", f.fold));
                }
                seen[i] = true;
            }
            if seen.iter().any(|s| !s) {
                problems.push(format!("rep {rep} fold {}: train ∪ test incomplete", f.fold));
            }
            f.test.iter().for_each(|&i| tested[i] += 1);
            for class in 0..2 {
                let c = f.test.iter().filter(|&&i| labels[i] == class).count();
                let lo = class_total[class] / 10;
                if c < lo || c > lo + 1 {
                    problems.push(format!("rep {rep} fold {}: {c} of class {class} in test", f.fold));
                }
            }
        }
        if tested.iter().any(|&t| t != 1) {
            problems.push(format!("rep {rep}: subjects not tested exactly once"));
        }
        let expected = stratified_kfold(&labels, 10, split_seed(10, rep)).unwrap();
        for (f, (train, test)) in folds.iter().zip(&expected) {
            if &f.train != train || &f.test != test {
                problems.push(format!("rep {rep} fold {}: split differs from the seeded splitter", f.fold));
            }
        }
    }

    // Instrumented leakage check on the first folds: rebuild each fold from
    // its seed, confirm it matches the harness, then corrupt everything the
    // held-out subjects carry and confirm nothing fitted on training changes.
    let mut instrumented = 0;
    for f in out.folds.iter().take(3) {
        let seed = fold_seed(cfg.seed, f.repetition, f.fold);
        let s1 = train_stage1(&ds.brains, &f.train, &cfg.stage1, derive_seed(seed, 1)).unwrap();
        let stats = FoldStats::fit(&s1.embeddings, &ds.phenotypes, &f.train, &cfg.stage2).unwrap();
        if stats != f.variants[0].stats {
            problems.push(format!("fold {}: harness statistics not reproducible", f.fold));
        }

        let mut emb = s1.embeddings.clone();
        let mut pheno = ds.phenotypes.clone();
        let mut brains = ds.brains.clone();
        let mut flipped = labels.clone();
        for &i in &f.test {
            emb.row_mut(i).iter_mut().for_each(|v| *v = 1e3 - *v);
            pheno[i].age = 99.0;
            pheno[i].fiq = Some(10.0);
            pheno[i].site = "unseen".into();
            pheno[i].gender = "X".into();
            brains[i].label = 1 - brains[i].label;
            flipped[i] = 1 - flipped[i];
        }
        if FoldStats::fit(&emb, &pheno, &f.train, &cfg.stage2).unwrap() != stats {
            problems.push(format!("fold {}: statistics depend on held-out subjects", f.fold));
        }
        let s1_flipped = train_stage1(&brains, &f.train, &cfg.stage1, derive_seed(seed, 1)).unwrap();
        if s1_flipped.store != s1.store {
            problems.push(format!("fold {}: stage one saw held-out labels", f.fold));
        }
        let a = train_stage2(&s1.embeddings, &ds.phenotypes, &labels, &f.train, &cfg.stage2, derive_seed(seed, 2)).unwrap();
        let b = train_stage2(&s1.embeddings, &ds.phenotypes, &flipped, &f.train, &cfg.stage2, derive_seed(seed, 2)).unwrap();
        if a.store != b.store {
            problems.push(format!("fold {}: stage two saw held-out labels", f.fold));
        }
        instrumented += 1;
    }

    verdict(
        10,
        "protocol fidelity",
        problems.is_empty(),
        format!(
            "5×10-fold on 100 subjects: {records} fold records, stratification brute-forced over 50 folds, \
             {instrumented} folds rebuilt with held-out data corrupted{}",
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    );
}
