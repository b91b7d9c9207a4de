use super::{Atom, Cmp, Expr, Formula, LogicError};

/// Rewrite into negation normal form: implications become disjunctions,
/// negations are pushed onto atoms (flipping the comparison), quantifiers
/// are expanded over their ranges and series indices are resolved. The
/// result contains only atoms, `And` and `Or`.
pub fn to_nnf(f: &Formula) -> Result<Formula, LogicError> {
    let mut env = Vec::new();
    go(f, false, &mut env)
}

fn junction(conjunctive: bool, parts: Vec<Formula>) -> Formula {
    let mut flat = Vec::with_capacity(parts.len());
    for p in parts {
        match (conjunctive, p) {
            (true, Formula::And(inner)) | (false, Formula::Or(inner)) => flat.extend(inner),
            (_, other) => flat.push(other),
        }
    }
    if flat.len() == 1 {
        return flat.pop().expect("one part");
    }
    if conjunctive {
        Formula::And(flat)
    } else {
        Formula::Or(flat)
    }
}

fn go(f: &Formula, negated: bool, env: &mut Vec<(String, i64)>) -> Result<Formula, LogicError> {
    Ok(match f {
        Formula::Atom(a) => Formula::Atom(atom(a, negated, env)?),
        Formula::Not(g) => go(g, !negated, env)?,
        Formula::And(fs) | Formula::Or(fs) => {
            let parts = fs.iter().map(|g| go(g, negated, env)).collect::<Result<_, _>>()?;
            junction(matches!(f, Formula::And(_)) != negated, parts)
        }
        Formula::Implies(a, b) => {
            let lhs = go(a, !negated, env)?;
            let rhs = go(b, negated, env)?;
            junction(negated, vec![lhs, rhs])
        }
        Formula::Forall { var, lo, hi, body } | Formula::Exists { var, lo, hi, body } => {
            let mut parts = Vec::with_capacity((hi - lo).max(0) as usize);
            for v in *lo..*hi {
                env.push((var.clone(), v));
                let part = go(body, negated, env);
                env.pop();
                parts.push(part?);
            }
            junction(matches!(f, Formula::Forall { .. }) != negated, parts)
        }
    })
}

fn atom(a: &Atom, negated: bool, env: &[(String, i64)]) -> Result<Atom, LogicError> {
    let lhs = resolve(&a.lhs, env)?;
    let rhs = resolve(&a.rhs, env)?;
    if !negated {
        return Ok(Atom { cmp: a.cmp, lhs, rhs, k: a.k });
    }
    if let Some(cmp) = a.cmp.negate() {
        return Ok(Atom { cmp, lhs, rhs, k: a.k });
    }
    // only indicator equalities have a negation: x = 1 <-> x = 0
    let flip = |v: f64| (v == 0.0 || v == 1.0).then_some(1.0 - v);
    let (lhs, rhs) = match (&lhs, &rhs) {
        (Expr::Component { onehot: true, .. }, Expr::Const(v)) => match flip(*v) {
            Some(w) => (lhs.clone(), Expr::Const(w)),
            None => return Err(LogicError::NegatedEquality(format!("{lhs} = {rhs}"))),
        },
        (Expr::Const(v), Expr::Component { onehot: true, .. }) => match flip(*v) {
            Some(w) => (Expr::Const(w), rhs.clone()),
            None => return Err(LogicError::NegatedEquality(format!("{lhs} = {rhs}"))),
        },
        _ => return Err(LogicError::NegatedEquality(format!("{lhs} = {rhs}"))),
    };
    Ok(Atom {
        cmp: Cmp::Eq,
        lhs,
        rhs,
        k: a.k,
    })
}

fn resolve(e: &Expr, env: &[(String, i64)]) -> Result<Expr, LogicError> {
    Ok(match e {
        Expr::Const(_) | Expr::Component { .. } => e.clone(),
        Expr::Series { name, base, len, index } => {
            let t = index.eval(env)?;
            if t < 0 || t as usize >= *len {
                return Err(LogicError::IndexOutOfBounds {
                    name: name.clone(),
                    index: t,
                    len: *len,
                    line: 0,
                    col: 0,
                });
            }
            Expr::Component {
                index: base + t as usize,
                name: format!("{name}[{t}]"),
                onehot: false,
            }
        }
        Expr::Add(a, b) => Expr::Add(Box::new(resolve(a, env)?), Box::new(resolve(b, env)?)),
        Expr::Sub(a, b) => Expr::Sub(Box::new(resolve(a, env)?), Box::new(resolve(b, env)?)),
        Expr::Mul(a, b) => Expr::Mul(Box::new(resolve(a, env)?), Box::new(resolve(b, env)?)),
        Expr::Neg(a) => Expr::Neg(Box::new(resolve(a, env)?)),
    })
}
