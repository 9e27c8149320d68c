//! Property suites over random inputs, runnable from any test binary.
#![allow(dead_code)]

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};

use t2g_core::eval::{auc, mae};
use t2g_core::hgnn::HgnnParams;
use t2g_core::kmeans::{inertia, kmeans};
use t2g_core::numcore::{quantile, spd_solve};
use t2g_core::pretrain::target_pseudo_labels;
use t2g_core::rdb::{CategoricalColumn, Labels, TableData};
use t2g_core::reg::{Direction, ForwardEdges, NodeId, Reg};
use t2g_core::sbm::{generate_structure, BitMatrix, BlockDensity, SbmModel};
use t2g_core::tokenizer::{encode_on_tape, TableTokenizer, TableVars};
use t2g_core::{Mat, Rng64, Tape};

pub const CASES: u32 = 100;

pub type Suite = (&'static str, fn(u32) -> Result<(), String>);

pub fn suites() -> Vec<Suite> {
    vec![
        ("kmeans inertia never increases", kmeans_inertia),
        ("quantile is a monotone member", quantile_rule),
        ("threshold keeps exactly entries above tau", threshold_rule),
        ("threshold is monotone in rho", threshold_monotone),
        ("inverse relations are transposes", transpose_invariant),
        ("bit matrix transpose", bitmatrix_transpose),
        ("encoder is permutation equivariant", encoder_equivariance),
        ("isolated node changes nothing", isolated_node),
        ("tokenizer is permutation equivariant", tokenizer_equivariance),
        ("auc invariant under increasing maps", auc_transform),
        ("mae zero iff equal", mae_zero),
        ("class pseudo-labels refine classes", pseudo_refines_classes),
        ("spd solve recovers x", spd_recovery),
    ]
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    TestRunner::new_with_rng(config, rng)
}

fn check<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn points() -> impl Strategy<Value = (Mat, usize, u64)> {
    (1usize..40, 1usize..4).prop_flat_map(|(n, d)| {
        (vec(-10.0..10.0f64, n * d), 1..=n, any::<u64>())
            .prop_map(move |(v, k, seed)| (Mat::from_vec(n, d, v).unwrap(), k, seed))
    })
}

fn kmeans_inertia(cases: u32) -> Result<(), String> {
    check(cases, points(), |(pts, k, seed)| {
        let c = kmeans(&pts, k, seed).unwrap();
        for w in c.trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", c.trace);
        }
        let direct = inertia(&pts, &c.centroids, &c.assignments);
        prop_assert!((direct - c.inertia).abs() <= 1e-9 * direct.max(1.0));
        prop_assert!(c.counts().iter().all(|&n| n > 0));
        Ok(())
    })
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    vec(prop_oneof![(-4i32..4).prop_map(f64::from), -5.0..5.0f64], 1..50)
}

fn quantile_rule(cases: u32) -> Result<(), String> {
    check(cases, (values(), 0.0..=1.0f64, 0.0..=1.0f64), |(v, a, b)| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let ql = quantile(&v, lo).unwrap();
        let qh = quantile(&v, hi).unwrap();
        prop_assert!(ql <= qh);
        prop_assert!(v.contains(&ql) && v.contains(&qh));
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((hi * v.len() as f64 - 1e-9).ceil() as usize).clamp(1, v.len());
        prop_assert_eq!(qh, sorted[rank - 1]);
        Ok(())
    })
}

fn density() -> impl Strategy<Value = Mat> {
    (1usize..7, 1usize..7).prop_flat_map(|(r, c)| {
        vec(prop_oneof![Just(0.0), (0u8..5).prop_map(|q| f64::from(q) / 4.0), 0.0..1.0f64], r * c)
            .prop_map(move |v| Mat::from_vec(r, c, v).unwrap())
    })
}

fn model(p: Mat) -> SbmModel {
    SbmModel {
        counts: vec![p.rows(), p.cols()],
        relations: vec![BlockDensity {
            src: 0,
            dst: 1,
            column: "fk".into(),
            p,
        }],
    }
}

fn threshold_rule(cases: u32) -> Result<(), String> {
    check(cases, (density(), 0.01..0.99f64), |(p, rho)| {
        let s = generate_structure(&model(p.clone()), rho).unwrap();
        let rel = &s.relations[0];
        let k = p.data().len() as f64;
        prop_assert!(rel.adjacency.count_ones() >= 1);
        prop_assert!(rel.density() <= rho + 1.0 / k + 1e-12);
        let above = p.data().iter().filter(|&&x| x > rel.tau).count();
        prop_assert_eq!(rel.fallback, above == 0);
        if rel.fallback {
            let max = p.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let first = p.data().iter().position(|&x| x == max).unwrap();
            prop_assert!(rel.adjacency.get(first / p.cols(), first % p.cols()));
            prop_assert_eq!(rel.adjacency.count_ones(), 1);
        } else {
            for a in 0..p.rows() {
                for b in 0..p.cols() {
                    prop_assert_eq!(rel.adjacency.get(a, b), p.get(a, b) > rel.tau);
                }
            }
        }
        Ok(())
    })
}

fn threshold_monotone(cases: u32) -> Result<(), String> {
    check(cases, (density(), 0.01..0.99f64, 0.01..0.99f64), |(p, a, b)| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let m = model(p);
        let small = generate_structure(&m, lo).unwrap().relations.remove(0).adjacency;
        let large = generate_structure(&m, hi).unwrap().relations.remove(0).adjacency;
        for (r, c) in small.ones() {
            prop_assert!(large.get(r, c), "({r}, {c}) lost going from rho {lo} to {hi}");
        }
        Ok(())
    })
}

fn forward_graph() -> impl Strategy<Value = (usize, usize, Vec<usize>)> {
    (1usize..6, 1usize..9).prop_flat_map(|(np, nc)| (Just(np), Just(nc), vec(0..np, nc)))
}

fn child_graph(np: usize, parents: &[usize]) -> Reg {
    Reg::from_forward_edges(
        vec!["p".into(), "c".into()],
        vec![np, parents.len()],
        vec![ForwardEdges {
            src: 1,
            dst: 0,
            column: "p_id".into(),
            edges: parents.iter().enumerate().map(|(c, &p)| (c, p)).collect(),
        }],
    )
    .unwrap()
}

fn transpose_invariant(cases: u32) -> Result<(), String> {
    check(cases, forward_graph(), |(np, nc, parents)| {
        let g = child_graph(np, &parents);
        let fwd = &g.relations[0];
        let inv = &g.relations[1];
        prop_assert_eq!(inv.ty.direction, Direction::Inverse);
        prop_assert_eq!(fwd.edge_count(), nc);
        let mut a: Vec<(usize, usize)> = fwd.edges().map(|(s, d)| (d, s)).collect();
        let mut b: Vec<(usize, usize)> = inv.edges().collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        for p in 0..np {
            let brute: Vec<usize> = (0..nc).filter(|&c| parents[c] == p).collect();
            prop_assert_eq!(g.neighbors(0, NodeId { table: 0, index: p }).unwrap(), &brute[..]);
        }
        Ok(())
    })
}

fn bitmatrix_transpose(cases: u32) -> Result<(), String> {
    let strategy = (1usize..12, 1usize..12).prop_flat_map(|(r, c)| (Just(r), Just(c), vec(any::<bool>(), r * c)));
    check(cases, strategy, |(r, c, bits)| {
        let mut m = BitMatrix::new(r, c);
        for (i, &b) in bits.iter().enumerate() {
            m.set(i / c, i % c, b);
        }
        let t = m.transpose();
        for i in 0..r {
            for j in 0..c {
                prop_assert_eq!(m.get(i, j), t.get(j, i));
            }
        }
        prop_assert_eq!(t.transpose(), m.clone());
        prop_assert_eq!(BitMatrix::from_bytes(r, c, &m.to_bytes()).unwrap(), m);
        Ok(())
    })
}

fn permuted_graph() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>, Vec<usize>, u64)> {
    forward_graph().prop_flat_map(|(np, nc, parents)| {
        (
            Just(np),
            Just(parents),
            Just((0..np).collect::<Vec<_>>()).prop_shuffle(),
            Just((0..nc).collect::<Vec<_>>()).prop_shuffle(),
            any::<u64>(),
        )
    })
}

fn close(a: &Mat, b: &Mat) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
}

fn encoder_equivariance(cases: u32) -> Result<(), String> {
    check(cases, permuted_graph(), |(np, parents, pp, pc, seed)| {
        let nc = parents.len();
        let mut rng = Rng64::new(seed);
        let xp = Mat::from_fn(np, 3, |_, _| rng.normal());
        let xc = Mat::from_fn(nc, 3, |_, _| rng.normal());
        let g = child_graph(np, &parents);
        // new row i holds old row perm[i]
        let mut inv_pp = vec![0; np];
        for (new, &old) in pp.iter().enumerate() {
            inv_pp[old] = new;
        }
        let parents2: Vec<usize> = pc.iter().map(|&old| inv_pp[parents[old]]).collect();
        let g2 = child_graph(np, &parents2);
        let theta = HgnnParams::for_graph(seed, &g, 2, 3, 5).unwrap();
        let out = theta.forward(&g, &[xp.clone(), xc.clone()]).unwrap();
        let out2 = theta.forward(&g2, &[xp.select_rows(&pp), xc.select_rows(&pc)]).unwrap();
        prop_assert!(close(&out[0].select_rows(&pp), &out2[0]));
        prop_assert!(close(&out[1].select_rows(&pc), &out2[1]));
        Ok(())
    })
}

fn isolated_node(cases: u32) -> Result<(), String> {
    check(cases, (forward_graph(), any::<u64>()), |((np, nc, parents), seed)| {
        let mut rng = Rng64::new(seed);
        let xp = Mat::from_fn(np + 1, 2, |_, _| rng.normal());
        let xc = Mat::from_fn(nc, 2, |_, _| rng.normal());
        let g = child_graph(np, &parents);
        let g_plus = child_graph(np + 1, &parents);
        let theta = HgnnParams::for_graph(seed, &g, 2, 2, 4).unwrap();
        let keep: Vec<usize> = (0..np).collect();
        let out = theta.forward(&g, &[xp.select_rows(&keep), xc.clone()]).unwrap();
        let out_plus = theta.forward(&g_plus, &[xp, xc]).unwrap();
        prop_assert!(close(&out_plus[0].select_rows(&keep), &out[0]));
        prop_assert!(close(&out_plus[1], &out[1]));
        Ok(())
    })
}

fn table(numeric: Mat, categories: Vec<usize>, cards: &[usize]) -> TableData {
    TableData {
        name: "t".into(),
        keys: (0..numeric.rows()).map(|i| i.to_string()).collect(),
        foreign_keys: vec![],
        numeric_columns: (0..numeric.cols()).map(|i| format!("x{i}")).collect(),
        temporal: vec![false; numeric.cols()],
        numeric,
        categorical_columns: cards
            .iter()
            .enumerate()
            .map(|(i, &c)| CategoricalColumn {
                name: format!("c{i}"),
                levels: (0..c).map(|l| l.to_string()).collect(),
                has_missing: false,
            })
            .collect(),
        categories,
        dropped_rows: 0,
    }
}

fn encode(tok: &TableTokenizer, data: &TableData) -> Mat {
    let mut tape = Tape::new();
    let vars = TableVars {
        w_num: tape.constant(tok.w_num.clone()).unwrap(),
        e_cat: tape.constant(tok.e_cat.clone()).unwrap(),
        bias: tok.bias.as_ref().map(|b| tape.constant(b.clone()).unwrap()),
    };
    let out = encode_on_tape(&mut tape, &vars, tok, data).unwrap();
    tape.value(out).clone()
}

fn tokenizer_equivariance(cases: u32) -> Result<(), String> {
    let strategy = (1usize..10, 0usize..3, vec(1usize..4, 0..3)).prop_flat_map(|(n, d, cards)| {
        (
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            Just(d),
            Just(cards),
            any::<u64>(),
        )
    });
    check(cases, strategy, |(perm, d, cards, seed)| {
        let n = perm.len();
        let mut rng = Rng64::new(seed);
        let numeric = Mat::from_fn(n, d, |_, _| rng.normal());
        let cats: Vec<usize> = (0..n).flat_map(|_| cards.iter().map(|&c| rng.below(c)).collect::<Vec<_>>()).collect();
        let tok = TableTokenizer::new(4, d, cards.clone(), vec![], &mut rng);
        let base = encode(&tok, &table(numeric.clone(), cats.clone(), &cards));
        let width = cards.len();
        let cats2: Vec<usize> = perm.iter().flat_map(|&r| cats[r * width..(r + 1) * width].to_vec()).collect();
        let moved = encode(&tok, &table(numeric.select_rows(&perm), cats2, &cards));
        prop_assert!(close(&base.select_rows(&perm), &moved));
        Ok(())
    })
}

fn auc_transform(cases: u32) -> Result<(), String> {
    let strategy = vec(((-200i32..200).prop_map(|s| f64::from(s) / 8.0), any::<bool>()), 2..80)
        .prop_filter("both classes", |v| v.iter().any(|p| p.1) && v.iter().any(|p| !p.1));
    check(cases, strategy, |pairs| {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let moved: Vec<f64> = scores.iter().map(|s| 2.0 * s + 1.0).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        let base = auc(&scores, &labels).unwrap();
        prop_assert_eq!(base, auc(&moved, &labels).unwrap());
        prop_assert_eq!(base, auc(&cubed, &labels).unwrap());
        Ok(())
    })
}

fn mae_zero(cases: u32) -> Result<(), String> {
    let shift = prop_oneof![Just(-1.0), Just(-1e-6), Just(1e-3), Just(2.5)];
    check(cases, (vec(-1e3..1e3f64, 1..30), 0usize..30, shift), |(truth, at, shift)| {
        prop_assert_eq!(mae(&truth, &truth).unwrap(), 0.0);
        let mut pred = truth.clone();
        pred[at % truth.len()] += shift;
        prop_assert!(mae(&pred, &truth).unwrap() > 1e-12);
        Ok(())
    })
}

fn pseudo_refines_classes(cases: u32) -> Result<(), String> {
    let strategy = (4usize..40, 2usize..4).prop_flat_map(|(n, c)| (vec(0..c, n), Just(c), 0usize..40, any::<u64>()));
    check(cases, strategy, |(classes, c, extra, seed)| {
        let present = (0..c).filter(|k| classes.contains(k)).count();
        let k = present + extra % (classes.len() - present + 1);
        let mut rng = Rng64::new(seed);
        let emb = Mat::from_fn(classes.len(), 3, |_, _| rng.normal());
        let a = target_pseudo_labels(&emb, &Labels::Classification(classes.clone()), c, k, seed).unwrap();
        let mut owner = vec![None; k];
        for (&cluster, &class) in a.iter().zip(&classes) {
            prop_assert!(cluster < k);
            match owner[cluster] {
                None => owner[cluster] = Some(class),
                Some(o) => prop_assert_eq!(o, class),
            }
        }
        prop_assert!(owner.iter().all(|o| o.is_some()), "uncovered cluster: {owner:?}");
        Ok(())
    })
}

fn spd_recovery(cases: u32) -> Result<(), String> {
    check(cases, (1usize..12, any::<u64>()), |(n, seed)| {
        let mut rng = Rng64::new(seed);
        let m = Mat::from_fn(n, n, |_, _| rng.normal());
        let mut a = m.matmul_t(&m).unwrap();
        for i in 0..n {
            a.set(i, i, a.get(i, i) + n as f64);
        }
        let x = Mat::from_fn(n, 2, |_, _| rng.normal());
        let (solved, _) = spd_solve(&a, &a.matmul(&x).unwrap()).unwrap();
        prop_assert!(solved.sub(&x).unwrap().max_abs() < 1e-8);
        Ok(())
    })
}
