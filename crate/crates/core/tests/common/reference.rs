//! Direct recursive evaluation of a parsed (not normalized) formula in
//! original units, with `and` as a product of probabilities, `or` as
//! their probabilistic sum and `not` as the complement.

use scoreguide::logic::{Atom, Cmp, Expr, Formula, IndexExpr};

pub fn log_sigmoid(z: f64) -> f64 {
    if z < 0.0 {
        z - z.exp().ln_1p()
    } else {
        -(-z).exp().ln_1p()
    }
}

/// `ln(e^a + e^b − e^{a+b})` written out literally.
pub fn naive_or(a: f64, b: f64) -> f64 {
    (a.exp() + b.exp() - (a + b).exp()).ln()
}

/// `ln(1 − e^s)` for `s ≤ 0`.
fn complement(s: f64) -> f64 {
    if s < -std::f64::consts::LN_2 {
        (-s.exp()).ln_1p()
    } else {
        (-s.exp_m1()).ln()
    }
}

/// A formula's value as the pair `(ln p, ln(1 − p))`, so negation is a
/// swap and neither side loses precision near certainty.
#[derive(Clone, Copy)]
struct Value {
    lp: f64,
    lq: f64,
}

impl Value {
    fn not(self) -> Self {
        Value { lp: self.lq, lq: self.lp }
    }

    fn and(parts: impl Iterator<Item = Value>) -> Self {
        let lp: f64 = parts.map(|v| v.lp).sum();
        Value { lp, lq: complement(lp) }
    }

    fn or(parts: impl Iterator<Item = Value>) -> Self {
        Value::and(parts.map(Value::not)).not()
    }
}

fn index(e: &IndexExpr, env: &[(String, i64)]) -> i64 {
    match e {
        IndexExpr::Int(v) => *v,
        IndexExpr::Var(n) => env.iter().rev().find(|(m, _)| m == n).expect("bound variable").1,
        IndexExpr::Add(a, b) => index(a, env) + index(b, env),
        IndexExpr::Sub(a, b) => index(a, env) - index(b, env),
        IndexExpr::Mul(a, b) => index(a, env) * index(b, env),
        IndexExpr::Neg(a) => -index(a, env),
    }
}

fn expr(e: &Expr, x: &[f64], env: &[(String, i64)]) -> f64 {
    match e {
        Expr::Const(v) => *v,
        Expr::Component { index, .. } => x[*index],
        Expr::Series { base, len, index: i, .. } => {
            let t = index(i, env);
            assert!(t >= 0 && (t as usize) < *len, "series index {t} out of range");
            x[base + t as usize]
        }
        Expr::Add(a, b) => expr(a, x, env) + expr(b, x, env),
        Expr::Sub(a, b) => expr(a, x, env) - expr(b, x, env),
        Expr::Mul(a, b) => expr(a, x, env) * expr(b, x, env),
        Expr::Neg(a) => -expr(a, x, env),
    }
}

fn atom(a: &Atom, x: &[f64], env: &[(String, i64)], k: f64) -> Value {
    let k = a.k.unwrap_or(k);
    let z = k * (expr(&a.lhs, x, env) - expr(&a.rhs, x, env));
    let ge = Value {
        lp: log_sigmoid(z),
        lq: log_sigmoid(-z),
    };
    match a.cmp {
        Cmp::Ge | Cmp::Gt => ge,
        Cmp::Le | Cmp::Lt => ge.not(),
        Cmp::Eq => Value::and([ge, ge.not()].into_iter()),
    }
}

fn eval(f: &Formula, x: &[f64], env: &mut Vec<(String, i64)>, k: f64) -> Value {
    match f {
        Formula::Atom(a) => atom(a, x, env, k),
        Formula::Not(g) => eval(g, x, env, k).not(),
        Formula::And(fs) => Value::and(fs.iter().map(|g| eval(g, x, env, k)).collect::<Vec<_>>().into_iter()),
        Formula::Or(fs) => Value::or(fs.iter().map(|g| eval(g, x, env, k)).collect::<Vec<_>>().into_iter()),
        Formula::Implies(a, b) => Value::or([eval(a, x, env, k).not(), eval(b, x, env, k)].into_iter()),
        Formula::Forall { var, lo, hi, body } | Formula::Exists { var, lo, hi, body } => {
            let mut parts = Vec::new();
            for t in *lo..*hi {
                env.push((var.clone(), t));
                parts.push(eval(body, x, env, k));
                env.pop();
            }
            assert!(!parts.is_empty(), "empty quantifier range");
            if matches!(f, Formula::Forall { .. }) {
                Value::and(parts.into_iter())
            } else {
                Value::or(parts.into_iter())
            }
        }
    }
}

/// `λ · c(x)` with global hardness `k`, `x` in original units.
pub fn soft(f: &Formula, x: &[f64], k: f64, lambda: f64) -> f64 {
    lambda * eval(f, x, &mut Vec::new(), k).lp
}

/// Crisp truth in original units.
pub fn hard(f: &Formula, x: &[f64]) -> bool {
    fn go(f: &Formula, x: &[f64], env: &mut Vec<(String, i64)>) -> bool {
        match f {
            Formula::Atom(a) => {
                let (l, r) = (expr(&a.lhs, x, env), expr(&a.rhs, x, env));
                match a.cmp {
                    Cmp::Ge => l >= r,
                    Cmp::Gt => l > r,
                    Cmp::Le => l <= r,
                    Cmp::Lt => l < r,
                    Cmp::Eq => l == r,
                }
            }
            Formula::Not(g) => !go(g, x, env),
            Formula::And(fs) => fs.iter().all(|g| go(g, x, env)),
            Formula::Or(fs) => fs.iter().any(|g| go(g, x, env)),
            Formula::Implies(a, b) => !go(a, x, env) || go(b, x, env),
            Formula::Forall { var, lo, hi, body } => (*lo..*hi).all(|t| {
                env.push((var.clone(), t));
                let v = go(body, x, env);
                env.pop();
                v
            }),
            Formula::Exists { var, lo, hi, body } => (*lo..*hi).any(|t| {
                env.push((var.clone(), t));
                let v = go(body, x, env);
                env.pop();
                v
            }),
        }
    }
    go(f, x, &mut Vec::new())
}
