use super::{Cmp, Expr, Formula};

/// Classical Boolean semantics on a flat row in original units (decoded,
/// so integer and one-hot components are exact). Strict comparisons stay
/// strict. A reference outside `x` makes the atom false.
pub fn eval_hard(f: &Formula, x: &[f64]) -> bool {
    let mut env = Vec::new();
    holds(f, x, &mut env)
}

fn holds(f: &Formula, x: &[f64], env: &mut Vec<(String, i64)>) -> bool {
    match f {
        Formula::Atom(a) => match (value(&a.lhs, x, env), value(&a.rhs, x, env)) {
            (Some(l), Some(r)) => match a.cmp {
                Cmp::Ge => l >= r,
                Cmp::Gt => l > r,
                Cmp::Le => l <= r,
                Cmp::Lt => l < r,
                Cmp::Eq => l == r,
            },
            _ => false,
        },
        Formula::Not(g) => !holds(g, x, env),
        Formula::And(fs) => fs.iter().all(|g| holds(g, x, env)),
        Formula::Or(fs) => fs.iter().any(|g| holds(g, x, env)),
        Formula::Implies(a, b) => !holds(a, x, env) || holds(b, x, env),
        Formula::Forall { var, lo, hi, body } | Formula::Exists { var, lo, hi, body } => {
            let universal = matches!(f, Formula::Forall { .. });
            for v in *lo..*hi {
                env.push((var.clone(), v));
                let r = holds(body, x, env);
                env.pop();
                if r != universal {
                    return !universal;
                }
            }
            universal
        }
    }
}

fn value(e: &Expr, x: &[f64], env: &[(String, i64)]) -> Option<f64> {
    Some(match e {
        Expr::Const(v) => *v,
        Expr::Component { index, .. } => *x.get(*index)?,
        Expr::Series { base, len, index, .. } => {
            let t = index.eval(env).ok()?;
            if t < 0 || t as usize >= *len {
                return None;
            }
            *x.get(base + t as usize)?
        }
        Expr::Add(a, b) => value(a, x, env)? + value(b, x, env)?,
        Expr::Sub(a, b) => value(a, x, env)? - value(b, x, env)?,
        Expr::Mul(a, b) => value(a, x, env)? * value(b, x, env)?,
        Expr::Neg(a) => -value(a, x, env)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{esirs_schema, wine_schema, Column, TableSchema};
    use crate::logic::{parse, to_nnf, Binding};

    #[test]
    fn boundary_and_strictness() {
        let s = wine_schema();
        let b = Binding::new(&s);
        let mut x = vec![0.0; 11];
        x[10] = 11.0;
        assert!(eval_hard(&parse("alcohol >= 11.0", &b).unwrap(), &x));
        assert!(!eval_hard(&parse("alcohol > 11.0", &b).unwrap(), &x));
        let t = TableSchema::new(vec![Column::real("x")]).unwrap();
        assert!(!eval_hard(&parse("x >= 0", &Binding::new(&t)).unwrap(), &[-0.001]));
    }

    #[test]
    fn inequality_on_trajectory_with_peak_at_bound() {
        let s = esirs_schema(30);
        let f = parse("forall t in 0..30: I[t] <= 20", &Binding::new(&s)).unwrap();
        let mut row = vec![50.0; 60];
        for t in 0..30 {
            row[30 + t] = (t as f64).min(20.0);
        }
        assert!(eval_hard(&f, &row));
        row[45] = 21.0;
        assert!(!eval_hard(&f, &row));
        assert_eq!(eval_hard(&to_nnf(&f).unwrap(), &row), eval_hard(&f, &row));
    }

    #[test]
    fn connectives() {
        let t = TableSchema::new(vec![Column::real("x"), Column::real("y")]).unwrap();
        let b = Binding::new(&t);
        let f = parse("x <= 5 -> y >= 0.5", &b).unwrap();
        assert!(eval_hard(&f, &[6.0, 0.0]));
        assert!(!eval_hard(&f, &[4.0, 0.0]));
        assert!(eval_hard(&f, &[4.0, 1.0]));
        let g = parse("exists t in 0..2: x >= 1", &b).unwrap();
        assert!(!eval_hard(&g, &[0.0, 0.0]));
        assert!(!eval_hard(&parse("x >= 1 and x <= 0", &b).unwrap(), &[0.5, 0.0]));
    }
}
