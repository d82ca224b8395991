//! Finite-difference check of the autodiff tape: the built-in operation
//! sweep, then a hand-written composite function.
//!
//! `cargo run --release --example gradient_check -- [trials]`

use biqa::autodiff::{finite_diff_check, gradient_suite, Tape, Var, SUITE_EPS};
use biqa::{Result, Tensor};

fn main() -> Result<()> {
    let trials = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    println!("{:<20} {:>12}", "op", "max rel err");
    for c in gradient_suite(&[], trials, 0)? {
        println!("{:<20} {:>12.3e}", c.name, c.max_rel_error);
    }

    // mean(sigmoid(x) * relu(x) + x)
    let f = |t: &mut Tape<f64>, x: Var| -> Result<Var> {
        let s = t.sigmoid(x);
        let r = t.relu(x);
        let p = t.mul(s, r)?;
        let q = t.add(p, x)?;
        Ok(t.mean(q))
    };
    let x = Tensor::new(vec![2, 3], vec![-0.7, -0.2, 0.3, 0.9, 1.4, -1.1])?;
    println!("\ncomposite: {:.3e}", finite_diff_check(f, &x, SUITE_EPS)?);
    Ok(())
}
