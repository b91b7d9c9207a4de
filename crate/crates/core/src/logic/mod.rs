//! Constraint language and its log-probabilistic soft semantics.
//!
//! A constraint is written in original data units, for example
//!
//! ```text
//! (fixed_acidity in [5.0, 6.0] or fixed_acidity in [8.0, 9.0])
//!     and alcohol >= 11.0
//!     and (residual_sugar <= 5.0 -> citric_acid >= 0.5)
//! ```
//!
//! [`parse`] resolves names against a schema, [`to_nnf`] removes negation
//! and implication and expands quantifiers, and [`compile`] lowers the
//! result to a [`DiffGraph`](crate::diffcalc::DiffGraph) computing a
//! log-weight `c(x) ≤ 0` in model space, together with its gradient.
//!
//! Syntax summary:
//!
//! * comparisons `>= <= = > < !=` between arithmetic expressions over
//!   features, literals, `+ - *` and parentheses; `e in [l, u]`
//! * connectives `not`, `and`, `or`, `->` (right associative), in that
//!   order of precedence
//! * `forall t in 0..30: body` and `exists`, half-open integer ranges, with
//!   series references `S[t]`, `S[t + 1]`
//! * one-hot components `education:Masters`, `race:"White"`, and the sugar
//!   `race = "White"`, `race != "White"`
//! * a postfix `@k=7` sets the hardness of all atoms inside its operand
//! * with several instances, features carry a suffix: `alcohol_1`

mod compile;
mod hard;
mod lexer;
mod nnf;
mod parser;

use std::fmt;

pub use compile::{compile, stable_or, CompileOptions, CompiledConstraint};
pub use hard::eval_hard;
pub use nnf::to_nnf;
pub use parser::{parse, Binding};

use crate::data::{DataError, TableSchema};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LogicError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown feature `{name}` at {line}:{col}")]
    UnknownFeature { name: String, line: usize, col: usize },
    #[error("index {index} of `{name}` outside 0..{len} at {line}:{col}")]
    IndexOutOfBounds {
        name: String,
        index: i64,
        len: usize,
        line: usize,
        col: usize,
    },
    #[error("unbound index variable `{0}`")]
    UnboundVariable(String),
    #[error("negation of a real-valued equality has no soft semantics: {0}")]
    NegatedEquality(String),
    #[error("`!=` is only defined for one-hot components: {0}")]
    InvalidInequality(String),
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("formula is not in negation normal form")]
    NotNnf,
    #[error("component {index} outside a model vector of width {width}")]
    ComponentOutOfRange { index: usize, width: usize },
    #[error("input has width {got}, constraint expects {expected}")]
    Width { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("log-weight inputs must be <= 0, got {0}")]
    PositiveLogWeight(f64),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Ge,
    Gt,
    Le,
    Lt,
    Eq,
}

impl Cmp {
    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Ge => ">=",
            Cmp::Gt => ">",
            Cmp::Le => "<=",
            Cmp::Lt => "<",
            Cmp::Eq => "=",
        }
    }

    /// Comparison of the negated atom; `None` for equality.
    pub fn negate(self) -> Option<Cmp> {
        match self {
            Cmp::Ge => Some(Cmp::Lt),
            Cmp::Gt => Some(Cmp::Le),
            Cmp::Le => Some(Cmp::Gt),
            Cmp::Lt => Some(Cmp::Ge),
            Cmp::Eq => None,
        }
    }
}

/// Integer arithmetic over quantifier variables, used inside `S[...]`.
#[derive(Debug, Clone, PartialEq)]
pub enum IndexExpr {
    Int(i64),
    Var(String),
    Add(Box<IndexExpr>, Box<IndexExpr>),
    Sub(Box<IndexExpr>, Box<IndexExpr>),
    Mul(Box<IndexExpr>, Box<IndexExpr>),
    Neg(Box<IndexExpr>),
}

impl IndexExpr {
    pub fn eval(&self, env: &[(String, i64)]) -> Result<i64, LogicError> {
        Ok(match self {
            IndexExpr::Int(v) => *v,
            IndexExpr::Var(name) => env
                .iter()
                .rev()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| LogicError::UnboundVariable(name.clone()))?,
            IndexExpr::Add(a, b) => a.eval(env)? + b.eval(env)?,
            IndexExpr::Sub(a, b) => a.eval(env)? - b.eval(env)?,
            IndexExpr::Mul(a, b) => a.eval(env)? * b.eval(env)?,
            IndexExpr::Neg(a) => -a.eval(env)?,
        })
    }
}

/// Real-valued arithmetic over components of the (multi-instance) flat
/// vector in original units.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// A resolved flat component; `onehot` marks categorical indicators.
    Component { index: usize, name: String, onehot: bool },
    /// `name[index]`, resolved to `base + index` once the index is known.
    Series {
        name: String,
        base: usize,
        len: usize,
        index: IndexExpr,
    },
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub cmp: Cmp,
    pub lhs: Expr,
    pub rhs: Expr,
    /// Per-atom hardness overriding the global `k`.
    pub k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Atom(Atom),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Forall {
        var: String,
        lo: i64,
        hi: i64,
        body: Box<Formula>,
    },
    Exists {
        var: String,
        lo: i64,
        hi: i64,
        body: Box<Formula>,
    },
}

impl Formula {
    pub fn atom(cmp: Cmp, lhs: Expr, rhs: Expr) -> Self {
        Formula::Atom(Atom { cmp, lhs, rhs, k: None })
    }

    /// Number of atoms, counting quantified bodies once.
    pub fn atom_count(&self) -> usize {
        match self {
            Formula::Atom(_) => 1,
            Formula::Not(f) => f.atom_count(),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().map(Formula::atom_count).sum(),
            Formula::Implies(a, b) => a.atom_count() + b.atom_count(),
            Formula::Forall { body, .. } | Formula::Exists { body, .. } => body.atom_count(),
        }
    }

    /// True when the formula contains only atoms, `And` and `Or`.
    pub fn is_nnf(&self) -> bool {
        match self {
            Formula::Atom(a) => !a.lhs.has_series() && !a.rhs.has_series(),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().all(Formula::is_nnf),
            _ => false,
        }
    }

    /// Set the hardness of every atom that has none yet.
    pub(crate) fn set_default_k(&mut self, k: f64) {
        match self {
            Formula::Atom(a) => {
                a.k.get_or_insert(k);
            }
            Formula::Not(f) => f.set_default_k(k),
            Formula::And(fs) | Formula::Or(fs) => fs.iter_mut().for_each(|f| f.set_default_k(k)),
            Formula::Implies(a, b) => {
                a.set_default_k(k);
                b.set_default_k(k);
            }
            Formula::Forall { body, .. } | Formula::Exists { body, .. } => body.set_default_k(k),
        }
    }
}

impl Expr {
    fn has_series(&self) -> bool {
        match self {
            Expr::Series { .. } => true,
            Expr::Const(_) | Expr::Component { .. } => false,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.has_series() || b.has_series(),
            Expr::Neg(a) => a.has_series(),
        }
    }
}

/// `column = category` (`polarity = true`) or `column != category`, as an
/// equality of the one-hot indicator with 1 or 0.
pub fn onehot_atom(schema: &TableSchema, column: &str, category: &str, polarity: bool) -> Result<Formula, LogicError> {
    let index = schema.onehot_component(column, category)?;
    Ok(Formula::atom(
        Cmp::Eq,
        Expr::Component {
            index,
            name: format!("{column}:{}", quote_if_needed(category)),
            onehot: true,
        },
        Expr::Const(if polarity { 1.0 } else { 0.0 }),
    ))
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !lexer::is_keyword(s)
}

pub(crate) fn quote_if_needed(s: &str) -> String {
    if is_ident(s) {
        s.to_string()
    } else {
        format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

impl fmt::Display for IndexExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexExpr::Int(v) => write!(f, "{v}"),
            IndexExpr::Var(n) => write!(f, "{n}"),
            IndexExpr::Add(a, b) => write!(f, "({a} + {b})"),
            IndexExpr::Sub(a, b) => write!(f, "({a} - {b})"),
            IndexExpr::Mul(a, b) => write!(f, "({a} * {b})"),
            IndexExpr::Neg(a) => write!(f, "(-{a})"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => {
                if *v < 0.0 {
                    write!(f, "({v:?})")
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Component { name, .. } => write!(f, "{name}"),
            Expr::Series { name, index, .. } => write!(f, "{name}[{index}]"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.cmp.symbol(), self.rhs)?;
        if let Some(k) = self.k {
            write!(f, " @k={k:?}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, fs: &[Formula], op: &str| -> fmt::Result {
            write!(f, "(")?;
            for (i, g) in fs.iter().enumerate() {
                if i > 0 {
                    write!(f, " {op} ")?;
                }
                write!(f, "{g}")?;
            }
            write!(f, ")")
        };
        match self {
            Formula::Atom(a) => write!(f, "({a})"),
            Formula::Not(g) => write!(f, "(not {g})"),
            Formula::And(fs) => join(f, fs, "and"),
            Formula::Or(fs) => join(f, fs, "or"),
            Formula::Implies(a, b) => write!(f, "({a} -> {b})"),
            Formula::Forall { var, lo, hi, body } => write!(f, "(forall {var} in {lo}..{hi}: {body})"),
            Formula::Exists { var, lo, hi, body } => write!(f, "(exists {var} in {lo}..{hi}: {body})"),
        }
    }
}
