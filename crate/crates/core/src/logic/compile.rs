use std::collections::HashMap;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use super::{Atom, Cmp, Expr, Formula, LogicError};
use crate::data::Normalization;
use crate::diffcalc::{Array, DiffGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompileOptions {
    /// Hardness of atoms without an `@k` override.
    pub k: f64,
    /// Global multiplier on the log-weight.
    pub lambda: f64,
    /// Use `min(0, k(a − b))` for inequalities, which has zero value and
    /// gradient once satisfied. Not consistent with negation.
    #[serde(default)]
    pub one_sided: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            k: 1.0,
            lambda: 1.0,
            one_sided: false,
        }
    }
}

impl CompileOptions {
    pub fn validate(&self) -> Result<(), LogicError> {
        for (what, value) in [("k", self.k), ("lambda", self.lambda)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(LogicError::NonPositive { what, value });
            }
        }
        Ok(())
    }
}

/// `ln(e^x + e^y − e^{x+y})` for log-weights `x, y ≤ 0`, computed as
/// `ln(1 + e^{min−max} − e^{min}) + max` and clamped at zero.
pub fn stable_or(x: f64, y: f64) -> Result<f64, LogicError> {
    for v in [x, y] {
        if v > 0.0 {
            return Err(LogicError::PositiveLogWeight(v));
        }
    }
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    // rounding can push the sum a few ulps above zero
    Ok((((lo - hi).exp() - lo.exp()).ln_1p() + hi).min(0.0))
}

/// A formula lowered to a batched graph `c: B×W → B×1` in model space.
#[derive(Debug, Clone)]
pub struct CompiledConstraint {
    pub formula: Formula,
    pub options: CompileOptions,
    width: usize,
    graph: DiffGraph<f64>,
    x: NodeId,
    root: NodeId,
    upper_bound: f64,
}

enum Lowered {
    Const(f64),
    Node(NodeId),
}

struct Lowering<'a> {
    g: DiffGraph<f64>,
    x: NodeId,
    norm: &'a Normalization,
    components: HashMap<usize, NodeId>,
    like: Option<NodeId>,
    options: CompileOptions,
}

impl Lowering<'_> {
    /// A B×1 node used as the broadcast target for constants.
    fn like(&mut self) -> NodeId {
        if let Some(l) = self.like {
            return l;
        }
        let l = self.g.column(self.x, 0);
        self.like = Some(l);
        l
    }

    fn constant(&mut self, v: f64) -> NodeId {
        let c = self.g.scalar(v);
        let l = self.like();
        self.g.broadcast(c, l)
    }

    fn node(&mut self, v: Lowered) -> NodeId {
        match v {
            Lowered::Const(c) => self.constant(c),
            Lowered::Node(n) => n,
        }
    }

    /// Original-units value `mean + std·y` of model-space component `j`.
    fn component(&mut self, j: usize) -> NodeId {
        if let Some(&n) = self.components.get(&j) {
            return n;
        }
        let (mean, std) = (self.norm.mean[j % self.norm.width()], self.norm.std[j % self.norm.width()]);
        let mut n = self.g.column(self.x, j);
        if std != 1.0 {
            n = self.g.scale(n, std);
        }
        if mean != 0.0 {
            n = self.g.offset(n, mean);
        }
        self.components.insert(j, n);
        n
    }

    fn expr(&mut self, e: &Expr) -> Result<Lowered, LogicError> {
        use Lowered::{Const, Node};
        Ok(match e {
            Expr::Const(v) => Const(*v),
            Expr::Component { index, .. } => Node(self.component(*index)),
            Expr::Series { .. } => return Err(LogicError::NotNnf),
            Expr::Neg(a) => match self.expr(a)? {
                Const(v) => Const(-v),
                Node(n) => Node(self.g.neg(n)),
            },
            Expr::Add(a, b) => match (self.expr(a)?, self.expr(b)?) {
                (Const(u), Const(v)) => Const(u + v),
                (Node(n), Const(v)) | (Const(v), Node(n)) => Node(if v == 0.0 { n } else { self.g.offset(n, v) }),
                (Node(m), Node(n)) => Node(self.g.add(m, n)),
            },
            Expr::Sub(a, b) => match (self.expr(a)?, self.expr(b)?) {
                (Const(u), Const(v)) => Const(u - v),
                (Node(n), Const(v)) => Node(if v == 0.0 { n } else { self.g.offset(n, -v) }),
                (Const(v), Node(n)) => {
                    let m = self.g.neg(n);
                    Node(if v == 0.0 { m } else { self.g.offset(m, v) })
                }
                (Node(m), Node(n)) => Node(self.g.sub(m, n)),
            },
            Expr::Mul(a, b) => match (self.expr(a)?, self.expr(b)?) {
                (Const(u), Const(v)) => Const(u * v),
                (Node(n), Const(v)) | (Const(v), Node(n)) => Node(self.g.scale(n, v)),
                (Node(m), Node(n)) => Node(self.g.mul(m, n)),
            },
        })
    }

    /// `−softplus(k·d)` i.e. `ln σ(−k·d)`; with `one_sided`, `min(0, −k·d)`.
    fn log_sigmoid_neg(&mut self, d: &Lowered, k: f64) -> Lowered {
        match d {
            Lowered::Const(v) => Lowered::Const(if self.options.one_sided {
                (-k * v).min(0.0)
            } else {
                -softplus(k * v)
            }),
            Lowered::Node(n) => {
                let s = self.g.scale(*n, k);
                if self.options.one_sided {
                    let ms = self.g.neg(s);
                    let zero = self.constant(0.0);
                    Lowered::Node(self.g.min(zero, ms))
                } else {
                    let sp = self.g.softplus(s);
                    Lowered::Node(self.g.neg(sp))
                }
            }
        }
    }

    fn atom(&mut self, a: &Atom) -> Result<(Lowered, f64), LogicError> {
        let k = a.k.unwrap_or(self.options.k);
        if !(k > 0.0 && k.is_finite()) {
            return Err(LogicError::NonPositive { what: "k", value: k });
        }
        let lhs = self.expr(&a.lhs)?;
        let rhs = self.expr(&a.rhs)?;
        // d = b − a, so a ≥ b has value −softplus(k·d)
        let d = match (lhs, rhs) {
            (Lowered::Const(u), Lowered::Const(v)) => Lowered::Const(v - u),
            (l, r) => {
                let (l, r) = (self.node(l), self.node(r));
                Lowered::Node(self.g.sub(r, l))
            }
        };
        let neg_d = match &d {
            Lowered::Const(v) => Lowered::Const(-v),
            Lowered::Node(n) => Lowered::Node(self.g.neg(*n)),
        };
        let is_const = matches!(d, Lowered::Const(_));
        let out = match a.cmp {
            Cmp::Ge | Cmp::Gt => {
                let v = self.log_sigmoid_neg(&d, k);
                let sup = if is_const { const_of(&v) } else { 0.0 };
                (v, sup)
            }
            Cmp::Le | Cmp::Lt => {
                let v = self.log_sigmoid_neg(&neg_d, k);
                let sup = if is_const { const_of(&v) } else { 0.0 };
                (v, sup)
            }
            Cmp::Eq => {
                let ge = self.log_sigmoid_neg(&d, k);
                let le = self.log_sigmoid_neg(&neg_d, k);
                let v = self.and(vec![ge, le]);
                let sup = if is_const {
                    const_of(&v)
                } else if self.options.one_sided {
                    0.0
                } else {
                    -2.0 * LN_2
                };
                (v, sup)
            }
        };
        Ok(out)
    }

    fn and(&mut self, parts: Vec<Lowered>) -> Lowered {
        let mut acc_const = 0.0;
        let mut acc: Option<NodeId> = None;
        for p in parts {
            match p {
                Lowered::Const(v) => acc_const += v,
                Lowered::Node(n) => acc = Some(acc.map_or(n, |a| self.g.add(a, n))),
            }
        }
        match acc {
            None => Lowered::Const(acc_const),
            Some(n) if acc_const == 0.0 => Lowered::Node(n),
            Some(n) => Lowered::Node(self.g.offset(n, acc_const)),
        }
    }

    fn or2(&mut self, x: Lowered, y: Lowered) -> Lowered {
        match (x, y) {
            (Lowered::Const(u), Lowered::Const(v)) => {
                Lowered::Const(stable_or(u.min(0.0), v.min(0.0)).expect("non-positive"))
            }
            (x, y) => {
                let (x, y) = (self.node(x), self.node(y));
                let hi = self.g.max(x, y);
                // arguments swapped so a tie splits the gradient between x and y
                let lo = self.g.min(y, x);
                let diff = self.g.sub(lo, hi);
                let e1 = self.g.exp(diff);
                let e2 = self.g.exp(lo);
                let inner = self.g.sub(e1, e2);
                let arg = self.g.offset(inner, 1.0);
                let l = self.g.ln(arg);
                let v = self.g.add(l, hi);
                let zero = self.constant(0.0);
                Lowered::Node(self.g.min(v, zero))
            }
        }
    }

    fn formula(&mut self, f: &Formula) -> Result<(Lowered, f64), LogicError> {
        match f {
            Formula::Atom(a) => self.atom(a),
            Formula::And(fs) => {
                let mut parts = Vec::with_capacity(fs.len());
                let mut sup = 0.0;
                for g in fs {
                    let (v, s) = self.formula(g)?;
                    parts.push(v);
                    sup += s;
                }
                Ok((self.and(parts), sup))
            }
            Formula::Or(fs) => {
                let mut it = fs.iter();
                let first = it.next().ok_or(LogicError::NotNnf)?;
                let (mut acc, mut sup) = self.formula(first)?;
                for g in it {
                    let (v, s) = self.formula(g)?;
                    acc = self.or2(acc, v);
                    sup = stable_or(sup.min(0.0), s.min(0.0))?;
                }
                Ok((acc, sup))
            }
            _ => Err(LogicError::NotNnf),
        }
    }
}

fn const_of(v: &Lowered) -> f64 {
    match v {
        Lowered::Const(c) => *c,
        Lowered::Node(_) => 0.0,
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn max_component(e: &Expr) -> Option<usize> {
    match e {
        Expr::Const(_) => None,
        Expr::Component { index, .. } => Some(*index),
        Expr::Series { base, len, .. } => Some(base + len - 1),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => max_component(a).max(max_component(b)),
        Expr::Neg(a) => max_component(a),
    }
}

fn formula_max_component(f: &Formula) -> Option<usize> {
    match f {
        Formula::Atom(a) => max_component(&a.lhs).max(max_component(&a.rhs)),
        Formula::And(fs) | Formula::Or(fs) => fs.iter().filter_map(formula_max_component).max(),
        _ => None,
    }
}

/// Lower an NNF formula (see [`super::to_nnf`]) over a model vector of
/// `instances` concatenated rows. Feature references are composed with the
/// inverse of `norm`, so the formula keeps speaking in original units.
pub fn compile(
    nnf: &Formula,
    norm: &Normalization,
    instances: usize,
    options: CompileOptions,
) -> Result<CompiledConstraint, LogicError> {
    options.validate()?;
    if instances == 0 {
        return Err(LogicError::NonPositive {
            what: "instance count",
            value: 0.0,
        });
    }
    if !nnf.is_nnf() {
        return Err(LogicError::NotNnf);
    }
    let width = norm.width() * instances;
    if let Some(m) = formula_max_component(nnf) {
        if m >= width {
            return Err(LogicError::ComponentOutOfRange { index: m, width });
        }
    }
    let mut g = DiffGraph::new();
    let x = g.input("x");
    let mut low = Lowering {
        g,
        x,
        norm,
        components: HashMap::new(),
        like: None,
        options,
    };
    let (value, sup) = low.formula(nnf)?;
    let value = low.node(value);
    let root = if options.lambda == 1.0 {
        value
    } else {
        low.g.scale(value, options.lambda)
    };
    Ok(CompiledConstraint {
        formula: nnf.clone(),
        options,
        width,
        graph: low.g,
        x,
        root,
        upper_bound: options.lambda * sup,
    })
}

impl CompiledConstraint {
    pub fn width(&self) -> usize {
        self.width
    }

    /// A static upper bound on `c(x)` (≤ 0) from the formula structure.
    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    pub fn graph(&self) -> (&DiffGraph<f64>, NodeId) {
        (&self.graph, self.root)
    }

    fn check(&self, x: &Array<f64>) -> Result<(), LogicError> {
        if x.cols() != self.width {
            return Err(LogicError::Width {
                expected: self.width,
                got: x.cols(),
            });
        }
        if !x.all_finite() {
            return Err(LogicError::NonFiniteInput);
        }
        Ok(())
    }

    /// `c(x)` for every row of a model-space batch.
    pub fn eval(&self, x: &Array<f64>) -> Result<Vec<f64>, LogicError> {
        self.check(x)?;
        let v = self
            .graph
            .forward(self.root, &[("x", x)])
            .expect("compiled graphs are well-formed");
        Ok(v.into_data())
    }

    /// `c(x)` and `∇_x c(x)` for every row.
    pub fn eval_grad(&self, x: &Array<f64>) -> Result<(Vec<f64>, Array<f64>), LogicError> {
        self.check(x)?;
        let mut s = self.graph.session();
        let v = s
            .forward(self.root, &[("x", x)])
            .expect("compiled graphs are well-formed")
            .clone();
        let seed = Array::full(v.rows(), v.cols(), 1.0);
        let mut grads = s.backward(&seed).expect("forward ran");
        let grad = grads
            .take(self.x)
            .unwrap_or_else(|| Array::zeros(x.rows(), x.cols()));
        Ok((v.into_data(), grad))
    }

    pub fn grad(&self, x: &Array<f64>) -> Result<Array<f64>, LogicError> {
        Ok(self.eval_grad(x)?.1)
    }

    /// `c` at a single model-space point.
    pub fn eval_one(&self, x: &[f64]) -> Result<f64, LogicError> {
        Ok(self.eval(&Array::row(x.to_vec()))?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, TableSchema};
    use crate::logic::{parse, to_nnf, Binding};

    fn schema2() -> TableSchema {
        TableSchema::new(vec![Column::real("a"), Column::real("b")]).unwrap()
    }

    fn cc(text: &str, k: f64) -> CompiledConstraint {
        let s = schema2();
        let f = to_nnf(&parse(text, &Binding::new(&s)).unwrap()).unwrap();
        compile(
            &f,
            &Normalization::identity(2),
            1,
            CompileOptions {
                k,
                ..CompileOptions::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn atom_values() {
        let ge = cc("a >= b", 7.0);
        assert!((ge.eval_one(&[1.0, 1.0]).unwrap() + LN_2).abs() < 1e-15);
        let ge30 = cc("a >= b", 30.0);
        let v = ge30.eval_one(&[0.1, 0.0]).unwrap();
        assert!((v - (-(-3.0f64).exp().ln_1p())).abs() < 1e-15);
        assert!((v + 0.048587).abs() < 1e-6);
        let eq = cc("a = b", 3.0);
        assert!((eq.eval_one(&[2.0, 2.0]).unwrap() + 1.386294).abs() < 1e-6);
    }

    #[test]
    fn stable_or_examples() {
        for y in [0.0, -1.0, -50.0, -1e6] {
            assert_eq!(stable_or(0.0, y).unwrap(), 0.0);
        }
        assert!((stable_or(0.5f64.ln(), 0.5f64.ln()).unwrap() - 0.75f64.ln()).abs() < 1e-15);
        let v = stable_or(-1000.0, -1000.0).unwrap();
        assert!((v + 999.306853).abs() < 1e-6, "{v}");
        assert!(stable_or(0.1, -1.0).is_err());
    }

    #[test]
    fn graph_or_matches_scalar() {
        let f = cc("a >= 0 or b >= 0", 2.0);
        for &(a, b) in &[(0.3, -0.2), (-1.0, -1.0), (-400.0, -380.0), (2.0, 2.0)] {
            let ca = -softplus(-2.0 * a);
            let cb = -softplus(-2.0 * b);
            let expect = stable_or(ca, cb).unwrap();
            assert!((f.eval_one(&[a, b]).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn tautology_and_margins() {
        let t = cc("a >= a", 50.0);
        assert!((t.eval_one(&[3.0, 0.0]).unwrap() + LN_2).abs() < 1e-15);
        let two = cc("a >= 0 and b >= 0", 50.0);
        let m = 10.0 / 50.0;
        let v = two.eval_one(&[m, m]).unwrap();
        assert!((v - 2.0 * -(-10.0f64).exp().ln_1p()).abs() < 1e-15);
        assert!((v + 9.08e-5).abs() < 1e-7);
        let single = cc("a >= 0", 50.0);
        let mut prev = 0.0;
        for i in 0..20 {
            let cur = single.eval_one(&[1.0 - i as f64 * 0.05, 0.0]).unwrap();
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn gradients() {
        let g = cc("a >= 0", 50.0);
        let far = g.grad(&Array::row(vec![1.0, 0.0])).unwrap();
        assert!(far.data()[0].abs() <= 50.0 * (-50.0f64).exp());
        let at = g.grad(&Array::row(vec![0.0, 0.0])).unwrap();
        assert!((at.data()[0] - 25.0).abs() < 1e-12);
        assert_eq!(at.data()[1], 0.0);
        let s = schema2();
        let f = to_nnf(&parse("a >= 0", &Binding::new(&s)).unwrap()).unwrap();
        let lam = compile(
            &f,
            &Normalization::identity(2),
            1,
            CompileOptions {
                k: 50.0,
                lambda: 3.0,
                one_sided: false,
            },
        )
        .unwrap();
        assert!((lam.grad(&Array::row(vec![0.0, 0.0])).unwrap().data()[0] - 75.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_composed() {
        let s = schema2();
        let f = to_nnf(&parse("a >= 10", &Binding::new(&s)).unwrap()).unwrap();
        let norm = Normalization {
            mean: vec![10.0, 0.0],
            std: vec![2.0, 1.0],
        };
        let c = compile(&f, &norm, 1, CompileOptions { k: 4.0, ..Default::default() }).unwrap();
        // y = 0 is a = 10, on the boundary
        assert!((c.eval_one(&[0.0, 0.0]).unwrap() + LN_2).abs() < 1e-15);
        // chain rule: dc/dy = std · k/2
        let g = c.grad(&Array::row(vec![0.0, 0.0])).unwrap();
        assert!((g.data()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn options_are_validated() {
        let s = schema2();
        let f = to_nnf(&parse("a >= 0", &Binding::new(&s)).unwrap()).unwrap();
        let n = Normalization::identity(2);
        for (k, lambda) in [(0.0, 1.0), (1.0, -1.0), (f64::NAN, 1.0)] {
            assert!(compile(&f, &n, 1, CompileOptions { k, lambda, one_sided: false }).is_err());
        }
        let raw = parse("a >= 0 -> b >= 0", &Binding::new(&s)).unwrap();
        assert!(matches!(compile(&raw, &n, 1, CompileOptions::default()), Err(LogicError::NotNnf)));
        assert!(matches!(
            cc("a >= 0", 1.0).eval(&Array::row(vec![f64::NAN, 0.0])),
            Err(LogicError::NonFiniteInput)
        ));
    }

    #[test]
    fn one_sided_variant() {
        let s = schema2();
        let f = to_nnf(&parse("a >= 0", &Binding::new(&s)).unwrap()).unwrap();
        let c = compile(
            &f,
            &Normalization::identity(2),
            1,
            CompileOptions {
                k: 5.0,
                lambda: 1.0,
                one_sided: true,
            },
        )
        .unwrap();
        assert_eq!(c.eval_one(&[0.5, 0.0]).unwrap(), 0.0);
        assert_eq!(c.grad(&Array::row(vec![0.5, 0.0])).unwrap().data()[0], 0.0);
        assert!((c.eval_one(&[-0.5, 0.0]).unwrap() + 2.5).abs() < 1e-15);
    }

    #[test]
    fn upper_bound_dominates() {
        let c = cc("(a = 1 or b >= 2) and a <= 3", 2.0);
        let ub = c.upper_bound();
        assert!(ub <= 0.0);
        for i in 0..200 {
            let a = -5.0 + i as f64 * 0.05;
            for j in 0..20 {
                let b = -5.0 + j as f64 * 0.5;
                assert!(c.eval_one(&[a, b]).unwrap() <= ub + 1e-12);
            }
        }
    }
}
