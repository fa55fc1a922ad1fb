//! Finite-difference gradient checking shared by unit tests.

use crate::autodiff::{Tape, Var};
use crate::{SeededRng, Tensor};

pub fn random_tensor(rng: &mut SeededRng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Central differences with step 1e-4 against `backward`, relative error
/// `|a − n| / max(1, |a|, |n|)` per entry.
pub fn check_gradient(inputs: &[Tensor], tol: f64, f: impl Fn(&mut Tape, &[Var]) -> Var) {
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
    let h = 1e-4;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()));
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            assert!(rel < tol, "input {k} entry {i}: analytic {a} vs numeric {numeric}");
        }
    }
}
