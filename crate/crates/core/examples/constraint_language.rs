//! Parse a constraint, look at its negation normal form and evaluate the
//! compiled soft constraint, its gradient and the crisp truth value.

use scoreguide::data::{Column, ColumnKind, Normalization, TableSchema};
use scoreguide::diffcalc::Array;
use scoreguide::logic::{compile, eval_hard, parse, to_nnf, Binding, CompileOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = TableSchema::new(vec![
        Column::real("x"),
        Column::real("y"),
        Column::series("s", ColumnKind::Real, 3),
    ])?;
    let text = "not (x <= 1 and y >= 2) and (x > 0 -> y < 5) and forall t in 0..3: s[t] >= -1";
    let formula = parse(text, &Binding::new(&schema))?;
    let nnf = to_nnf(&formula)?;
    println!("input: {text}");
    println!("nnf:   {nnf}");

    let options = CompileOptions { k: 5.0, lambda: 1.0, one_sided: false };
    let c = compile(&nnf, &Normalization::identity(schema.width()), 1, options)?;
    println!("static upper bound of c: {:.4}", c.upper_bound());

    let rows = Array::matrix(3, 5, vec![
        2.0, 1.0, 0.0, 0.0, 0.0, // satisfied
        0.5, 3.0, 0.0, 0.0, 0.0, // x <= 1 and y >= 2
        2.0, 1.0, 0.0, -3.0, 0.0, // s[1] below -1
    ])?;
    let (values, grad) = c.eval_grad(&rows)?;
    for (i, v) in values.iter().enumerate() {
        println!(
            "row {i}: c = {v:>9.4}  hard = {:<5}  grad = {:?}",
            eval_hard(&nnf, rows.row_slice(i)),
            grad.row_slice(i).iter().map(|g| (g * 1e3).round() / 1e3).collect::<Vec<_>>()
        );
    }

    // harder atoms push satisfied rows closer to 0 and violated ones lower
    for k in [1.0, 5.0, 50.0] {
        let c = compile(&nnf, &Normalization::identity(5), 1, CompileOptions { k, ..options })?;
        println!("k = {k:>4}: {:?}", c.eval(&rows)?.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }
    Ok(())
}
