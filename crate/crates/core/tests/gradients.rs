mod common;

use std::sync::Arc;

use common::{distill_fd_errors, grad_error};
use t2g_core::hgnn::{forward_on_tape, HgnnParams};
use t2g_core::numcore::Segments;
use t2g_core::reg::{ForwardEdges, Reg};
use t2g_core::{Mat, Rng64, Tape, Var};

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

/// Worst central-difference error of `‖build(inputs)·R‖²` over every input entry.
fn fd_check(inputs: &[Mat], build: &Build) -> f64 {
    let loss_on = |tape: &mut Tape, vars: &[Var]| {
        let out = build(tape, vars);
        let cols = tape.value(out).cols();
        let mut rng = Rng64::new(99);
        let r = tape.constant(Mat::from_fn(cols, 2, |_, _| rng.normal())).unwrap();
        let proj = tape.matmul(out, r).unwrap();
        tape.frob_sq(proj).unwrap()
    };
    let value = |ms: &[Mat]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ms.iter().map(|m| tape.constant(m.clone()).unwrap()).collect();
        let l = loss_on(&mut tape, &vars);
        tape.scalar(l)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone()).unwrap()).collect();
    let l = loss_on(&mut tape, &vars);
    let grads = tape.backward(l).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, m) in inputs.iter().enumerate() {
        let g = grads.get_or_zeros(vars[k], m.shape());
        for e in 0..m.data().len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].data_mut()[e] += h;
            minus[k].data_mut()[e] -= h;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * h);
            worst = worst.max(grad_error(g.data()[e], numeric, 1e-8));
        }
    }
    worst
}

fn random(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = Rng64::new(seed);
    Mat::from_fn(rows, cols, |_, _| rng.normal())
}

fn segments() -> Arc<Segments> {
    Arc::new(Segments::from_pairs(4, [(0, 1), (0, 3), (1, 0), (3, 2), (3, 4), (3, 1)]))
}

#[test]
fn elementwise_and_products() {
    let a = random(3, 4, 1);
    let b = random(4, 2, 2);
    let c = random(3, 4, 3);
    let row = random(1, 4, 4);
    let cases: Vec<(&str, Vec<Mat>, Box<Build<'static>>)> = vec![
        ("matmul", vec![a.clone(), b.clone()], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap())),
        ("add", vec![a.clone(), c.clone()], Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
        ("sub", vec![a.clone(), c.clone()], Box::new(|t, v| t.sub(v[0], v[1]).unwrap())),
        ("add_row", vec![a.clone(), row], Box::new(|t, v| t.add_row(v[0], v[1]).unwrap())),
        ("scale", vec![a.clone()], Box::new(|t, v| t.scale(v[0], -1.7))),
        ("relu", vec![a.clone()], Box::new(|t, v| t.relu(v[0]))),
        ("transpose", vec![a.clone()], Box::new(|t, v| t.transpose(v[0]))),
        (
            "add_diag",
            vec![random(3, 3, 5)],
            Box::new(|t, v| t.add_diag(v[0], 0.3).unwrap()),
        ),
        ("vstack", vec![a.clone(), c], Box::new(|t, v| t.vstack(&[v[0], v[1]]).unwrap())),
    ];
    for (name, inputs, build) in cases {
        let err = fd_check(&inputs, build.as_ref());
        assert!(err < 1e-4, "{name}: {err:e}");
    }
}

#[test]
fn gathers() {
    let src = random(5, 3, 6);
    let err = fd_check(std::slice::from_ref(&src), &|t, v| t.gather(v[0], segments(), false).unwrap());
    assert!(err < 1e-4, "gather sum: {err:e}");
    let err = fd_check(std::slice::from_ref(&src), &|t, v| t.scatter_mean(v[0], segments()).unwrap());
    assert!(err < 1e-4, "scatter_mean: {err:e}");
    let err = fd_check(&[src], &|t, v| t.row_gather(v[0], &[4, 0, 4, 2]).unwrap());
    assert!(err < 1e-4, "row_gather: {err:e}");
}

#[test]
fn spd_solve_both_arguments() {
    let m = random(4, 4, 7);
    let b = random(4, 2, 8);
    let err = fd_check(&[m, b], &|t, v| {
        let mt = t.transpose(v[0]);
        let a = t.matmul(v[0], mt).unwrap();
        let a = t.add_diag(a, 1.0).unwrap();
        t.spd_solve(a, v[1]).unwrap()
    });
    assert!(err < 1e-4, "spd_solve: {err:e}");
}

#[test]
fn softmax_cross_entropy() {
    let logits = random(4, 3, 9);
    let targets = Mat::from_rows(&[&[1.0, 0.0, 0.0], &[0.2, 0.5, 0.3], &[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]);
    let worst = {
        let mut tape = Tape::new();
        let x = tape.leaf(logits.clone()).unwrap();
        let l = tape.softmax_xent(x, targets.clone()).unwrap();
        let g = tape.backward(l).unwrap().get(x).unwrap().clone();
        let value = |m: &Mat| {
            let mut tape = Tape::new();
            let x = tape.constant(m.clone()).unwrap();
            let l = tape.softmax_xent(x, targets.clone()).unwrap();
            tape.scalar(l)
        };
        let mut worst: f64 = 0.0;
        for e in 0..logits.data().len() {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p.data_mut()[e] += 1e-6;
            m.data_mut()[e] -= 1e-6;
            worst = worst.max(grad_error(g.data()[e], (value(&p) - value(&m)) / 2e-6, 1e-8));
        }
        worst
    };
    assert!(worst < 1e-4, "softmax_xent: {worst:e}");
}

#[test]
fn encoder_input_gradient() {
    let reg = Reg::from_forward_edges(
        vec!["p".into(), "c".into()],
        vec![3, 5],
        vec![ForwardEdges {
            src: 1,
            dst: 0,
            column: "p".into(),
            edges: vec![(0, 0), (1, 0), (2, 1), (3, 1), (4, 2)],
        }],
    )
    .unwrap();
    let params = HgnnParams::for_graph(11, &reg, 2, 3, 6).unwrap();
    let inputs = [random(3, 3, 12), random(5, 3, 13)];
    let err = fd_check(&inputs, &|t, v| {
        let vars = params.on_tape(t, false).unwrap();
        let out = forward_on_tape(t, &params, &vars, &reg, v).unwrap();
        t.vstack(&out).unwrap()
    });
    assert!(err < 1e-4, "hgnn: {err:e}");
}

#[test]
fn distillation_loss_gradient() {
    let errors = distill_fd_errors(20, 5);
    let worst = errors.iter().copied().fold(0.0, f64::max);
    assert!(worst < 1e-3, "worst {worst:e} in {errors:?}");
}
