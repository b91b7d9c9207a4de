//! Build a small expression graph, differentiate it in reverse mode and
//! check the result against central differences.

use scoreguide::diffcalc::{grad_check, Array, DiffGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // f(x, w) = sum(softplus(x·w + b))
    let mut g = DiffGraph::<f64>::new();
    let x = g.input("x");
    let w = g.param(Array::matrix(2, 1, vec![0.5, -1.5])?);
    let b = g.param(Array::scalar(0.1));
    let h = g.affine(x, w, Some(b));
    let y = g.softplus(h);
    let f = g.sum(y);

    let xs = Array::matrix(3, 2, vec![1.0, 2.0, -0.5, 0.25, 3.0, -1.0])?;
    let mut s = g.session();
    let value = s.forward(f, &[("x", &xs)])?.data()[0];
    let grads = s.backward(&Array::scalar(1.0))?;
    println!("f = {value:.6}");
    println!("df/dw = {:?}", grads.get(w).unwrap().data());
    println!("df/db = {:?}", grads.get(b).unwrap().data());
    println!("df/dx = {:?}", grads.get(x).unwrap().data());

    let report = grad_check(&g, f, &[("x", &xs)], 1e-5, 1e-6)?;
    println!(
        "gradient check: {} entries, max relative error {:.2e}, {}",
        report.checked,
        report.max_rel_error,
        if report.passed { "ok" } else { "FAILED" }
    );
    Ok(())
}
