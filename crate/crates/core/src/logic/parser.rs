use super::lexer::{lex, Tok, Token};
use super::{Cmp, Expr, Formula, IndexExpr, LogicError};
use crate::data::{ColumnKind, TableSchema};

/// The name space a formula is resolved against: a schema, possibly
/// repeated for multi-instance constraints.
#[derive(Debug, Clone, Copy)]
pub struct Binding<'a> {
    pub schema: &'a TableSchema,
    pub instances: usize,
}

impl<'a> Binding<'a> {
    pub fn new(schema: &'a TableSchema) -> Self {
        Self { schema, instances: 1 }
    }

    pub fn multi(schema: &'a TableSchema, instances: usize) -> Self {
        Self { schema, instances }
    }

    /// Width of the concatenated vector the formula speaks about.
    pub fn width(&self) -> usize {
        self.schema.width() * self.instances
    }

    /// Column index and flat offset of the instance that `name` refers to.
    fn resolve(&self, name: &str) -> Option<(usize, usize)> {
        if self.instances == 1 {
            if let Some((i, _)) = self.schema.column(name) {
                return Some((i, 0));
            }
        }
        let (prefix, suffix) = name.rsplit_once('_')?;
        let k: usize = suffix.parse().ok()?;
        if k == 0 || k > self.instances {
            return None;
        }
        let (i, _) = self.schema.column(prefix)?;
        Some((i, (k - 1) * self.schema.width()))
    }
}

/// Parse constraint text, resolving feature names against `binding`.
pub fn parse(text: &str, binding: &Binding<'_>) -> Result<Formula, LogicError> {
    if binding.instances == 0 {
        return Err(LogicError::NonPositive {
            what: "instance count",
            value: 0.0,
        });
    }
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        binding: *binding,
        scopes: Vec::new(),
    };
    if p.peek() == &Tok::Eof {
        return Err(p.error("empty constraint"));
    }
    let f = p.formula()?;
    if p.peek() != &Tok::Eof {
        return Err(p.error(&format!("unexpected {:?}", p.peek())));
    }
    Ok(f)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    binding: Binding<'a>,
    scopes: Vec<(String, i64, i64)>,
}

fn position(e: &LogicError) -> (usize, usize) {
    match e {
        LogicError::Syntax { line, col, .. }
        | LogicError::UnknownFeature { line, col, .. }
        | LogicError::IndexOutOfBounds { line, col, .. } => (*line, *col),
        _ => (usize::MAX, usize::MAX),
    }
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, ahead: usize) -> &Tok {
        let i = (self.pos + ahead).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.tokens[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: &str) -> LogicError {
        let (line, col) = self.here();
        LogicError::Syntax {
            line,
            col,
            msg: msg.to_string(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), LogicError> {
        if self.peek() == &tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&format!("expected {what}, found {}", self.peek())))
        }
    }

    fn formula(&mut self) -> Result<Formula, LogicError> {
        let lhs = self.disjunction()?;
        if self.peek() == &Tok::Arrow {
            self.bump();
            let rhs = self.formula()?;
            return Ok(Formula::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Formula, LogicError> {
        let mut parts = vec![self.conjunction()?];
        while self.peek() == &Tok::Or {
            self.bump();
            parts.push(self.conjunction()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().expect("one part")
        } else {
            Formula::Or(parts)
        })
    }

    fn conjunction(&mut self) -> Result<Formula, LogicError> {
        let mut parts = vec![self.unary()?];
        while self.peek() == &Tok::And {
            self.bump();
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().expect("one part")
        } else {
            Formula::And(parts)
        })
    }

    fn unary(&mut self) -> Result<Formula, LogicError> {
        let mut f = match self.peek() {
            Tok::Not => {
                self.bump();
                Formula::Not(Box::new(self.unary()?))
            }
            Tok::Forall | Tok::Exists => return self.quantified(),
            Tok::LParen => self.group_or_atom()?,
            _ => self.atom()?,
        };
        while self.peek() == &Tok::At {
            self.bump();
            match self.bump() {
                Tok::Ident(name) if name == "k" => {}
                _ => return Err(self.error("expected `k` after `@`")),
            }
            self.expect(Tok::Eq, "`=`")?;
            let k = self.number()?;
            if !(k > 0.0 && k.is_finite()) {
                return Err(LogicError::NonPositive { what: "k", value: k });
            }
            f.set_default_k(k);
        }
        Ok(f)
    }

    fn group_or_atom(&mut self) -> Result<Formula, LogicError> {
        let start = self.pos;
        let scopes = self.scopes.len();
        self.bump();
        let grouped = self.formula().and_then(|f| {
            self.expect(Tok::RParen, "`)`")?;
            Ok(f)
        });
        let continues_expr = matches!(
            self.peek(),
            Tok::Ge | Tok::Gt | Tok::Le | Tok::Lt | Tok::Eq | Tok::Ne | Tok::Plus | Tok::Minus | Tok::Star | Tok::In
        );
        match grouped {
            Ok(f) if !continues_expr => Ok(f),
            first => {
                self.pos = start;
                self.scopes.truncate(scopes);
                match self.atom() {
                    Ok(a) => Ok(a),
                    Err(e) => match first {
                        Err(g) if position(&g) > position(&e) => Err(g),
                        _ => Err(e),
                    },
                }
            }
        }
    }

    fn quantified(&mut self) -> Result<Formula, LogicError> {
        let universal = self.bump() == Tok::Forall;
        let var = match self.bump() {
            Tok::Ident(v) => v,
            _ => return Err(self.error("expected a variable name")),
        };
        self.expect(Tok::In, "`in`")?;
        let lo = self.int()?;
        self.expect(Tok::DotDot, "`..`")?;
        let hi = self.int()?;
        if lo >= hi {
            return Err(self.error(&format!("empty range {lo}..{hi}")));
        }
        self.expect(Tok::Colon, "`:`")?;
        self.scopes.push((var.clone(), lo, hi));
        let body = self.formula();
        self.scopes.pop();
        let body = Box::new(body?);
        Ok(if universal {
            Formula::Forall { var, lo, hi, body }
        } else {
            Formula::Exists { var, lo, hi, body }
        })
    }

    fn int(&mut self) -> Result<i64, LogicError> {
        let neg = if self.peek() == &Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match self.bump() {
            Tok::Int(v) => Ok(if neg { -v } else { v }),
            _ => Err(self.error("expected an integer")),
        }
    }

    fn number(&mut self) -> Result<f64, LogicError> {
        let neg = if self.peek() == &Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let v = match self.peek() {
            Tok::Int(v) => *v as f64,
            Tok::Num(v) => *v,
            _ => return Err(self.error("expected a number")),
        };
        self.bump();
        Ok(if neg { -v } else { v })
    }

    fn atom(&mut self) -> Result<Formula, LogicError> {
        // categorical sugar: column = "category" / column != "category"
        if let (Tok::Ident(name), Tok::Eq | Tok::Ne, Tok::Str(cat)) =
            (self.peek().clone(), self.peek_at(1).clone(), self.peek_at(2).clone())
        {
            let polarity = self.peek_at(1) == &Tok::Eq;
            let component = self.onehot(&name, &cat)?;
            self.bump();
            self.bump();
            self.bump();
            return Ok(Formula::atom(
                Cmp::Eq,
                component,
                Expr::Const(if polarity { 1.0 } else { 0.0 }),
            ));
        }
        let lhs = self.expr()?;
        let cmp_tok = self.peek().clone();
        if cmp_tok == Tok::In {
            self.bump();
            self.expect(Tok::LBracket, "`[`")?;
            let lo = self.number()?;
            self.expect(Tok::Comma, "`,`")?;
            let hi = self.number()?;
            self.expect(Tok::RBracket, "`]`")?;
            return Ok(Formula::And(vec![
                Formula::atom(Cmp::Ge, lhs.clone(), Expr::Const(lo)),
                Formula::atom(Cmp::Le, lhs, Expr::Const(hi)),
            ]));
        }
        let cmp = match cmp_tok {
            Tok::Ge => Some(Cmp::Ge),
            Tok::Gt => Some(Cmp::Gt),
            Tok::Le => Some(Cmp::Le),
            Tok::Lt => Some(Cmp::Lt),
            Tok::Eq => Some(Cmp::Eq),
            Tok::Ne => None,
            _ => return Err(self.error(&format!("expected a comparison, found {}", self.peek()))),
        };
        self.bump();
        let rhs = self.expr()?;
        match cmp {
            Some(cmp) => Ok(Formula::atom(cmp, lhs, rhs)),
            None => {
                // `!=` only between a one-hot indicator and 0 or 1
                let text = format!("{lhs} != {rhs}");
                let flipped = match (&lhs, &rhs) {
                    (Expr::Component { onehot: true, .. }, Expr::Const(v))
                    | (Expr::Const(v), Expr::Component { onehot: true, .. })
                        if *v == 0.0 || *v == 1.0 =>
                    {
                        1.0 - v
                    }
                    _ => return Err(LogicError::InvalidInequality(text)),
                };
                let comp = if matches!(lhs, Expr::Const(_)) { rhs } else { lhs };
                Ok(Formula::atom(Cmp::Eq, comp, Expr::Const(flipped)))
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, LogicError> {
        let mut e = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    e = Expr::Add(Box::new(e), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    e = Expr::Sub(Box::new(e), Box::new(self.term()?));
                }
                _ => return Ok(e),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, LogicError> {
        let mut e = self.factor()?;
        while self.peek() == &Tok::Star {
            self.bump();
            e = Expr::Mul(Box::new(e), Box::new(self.factor()?));
        }
        Ok(e)
    }

    fn factor(&mut self) -> Result<Expr, LogicError> {
        match self.peek().clone() {
            Tok::Minus => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Const(v as f64))
            }
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => self.feature(name),
            other => Err(self.error(&format!("expected an expression, found {other}"))),
        }
    }

    fn unknown(&self, name: &str) -> LogicError {
        let (line, col) = self.here();
        LogicError::UnknownFeature {
            name: name.to_string(),
            line,
            col,
        }
    }

    fn onehot(&self, name: &str, category: &str) -> Result<Expr, LogicError> {
        let (ci, offset) = self.binding.resolve(name).ok_or_else(|| self.unknown(name))?;
        let column = &self.binding.schema.columns[ci];
        if column.vocabulary().is_none() {
            return Err(self.error(&format!("`{name}` is not categorical")));
        }
        let index = self.binding.schema.onehot_component(&column.name, category)? + offset;
        Ok(Expr::Component {
            index,
            name: format!("{name}:{}", super::quote_if_needed(category)),
            onehot: true,
        })
    }

    fn feature(&mut self, name: String) -> Result<Expr, LogicError> {
        let (line, col) = self.here();
        let (ci, offset) = self.binding.resolve(&name).ok_or_else(|| self.unknown(&name))?;
        self.bump();
        let schema = self.binding.schema;
        let column = &schema.columns[ci];
        match self.peek() {
            Tok::Colon => {
                self.bump();
                let cat = match self.bump() {
                    Tok::Ident(s) | Tok::Str(s) => s,
                    Tok::Int(v) => v.to_string(),
                    _ => return Err(self.error("expected a category after `:`")),
                };
                self.onehot(&name, &cat)
            }
            Tok::LBracket => {
                let Some(len) = column.series_len else {
                    return Err(LogicError::Syntax {
                        line,
                        col,
                        msg: format!("`{name}` is not a series"),
                    });
                };
                self.bump();
                let index = self.index()?;
                self.expect(Tok::RBracket, "`]`")?;
                let base = schema.offset_of(ci) + offset;
                self.check_bounds(&name, &index, len, line, col)?;
                if let IndexExpr::Int(t) = index {
                    return Ok(Expr::Component {
                        index: base + t as usize,
                        name: format!("{name}[{t}]"),
                        onehot: false,
                    });
                }
                Ok(Expr::Series { name, base, len, index })
            }
            _ => {
                if matches!(column.kind, ColumnKind::Categorical { .. }) {
                    return Err(LogicError::Syntax {
                        line,
                        col,
                        msg: format!("categorical `{name}` needs `:category`"),
                    });
                }
                if column.series_len.is_some() {
                    return Err(LogicError::Syntax {
                        line,
                        col,
                        msg: format!("series `{name}` needs an index"),
                    });
                }
                Ok(Expr::Component {
                    index: schema.offset_of(ci) + offset,
                    name,
                    onehot: false,
                })
            }
        }
    }

    fn index(&mut self) -> Result<IndexExpr, LogicError> {
        let mut e = self.index_term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    e = IndexExpr::Add(Box::new(e), Box::new(self.index_term()?));
                }
                Tok::Minus => {
                    self.bump();
                    e = IndexExpr::Sub(Box::new(e), Box::new(self.index_term()?));
                }
                _ => return Ok(simplify(e)),
            }
        }
    }

    fn index_term(&mut self) -> Result<IndexExpr, LogicError> {
        let mut e = self.index_factor()?;
        while self.peek() == &Tok::Star {
            self.bump();
            e = IndexExpr::Mul(Box::new(e), Box::new(self.index_factor()?));
        }
        Ok(e)
    }

    fn index_factor(&mut self) -> Result<IndexExpr, LogicError> {
        match self.bump() {
            Tok::Int(v) => Ok(IndexExpr::Int(v)),
            Tok::Minus => Ok(IndexExpr::Neg(Box::new(self.index_factor()?))),
            Tok::LParen => {
                let e = self.index()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(v) => {
                if !self.scopes.iter().any(|(n, _, _)| *n == v) {
                    return Err(LogicError::UnboundVariable(v));
                }
                Ok(IndexExpr::Var(v))
            }
            _ => Err(self.error("expected an index expression")),
        }
    }

    /// Every value the index takes over the enclosing quantifier ranges
    /// must address the series.
    fn check_bounds(&self, name: &str, index: &IndexExpr, len: usize, line: usize, col: usize) -> Result<(), LogicError> {
        let mut vars = Vec::new();
        collect_vars(index, &mut vars);
        let ranges: Vec<(String, i64, i64)> = vars
            .iter()
            .map(|v| {
                self.scopes
                    .iter()
                    .rev()
                    .find(|(n, _, _)| n == v)
                    .cloned()
                    .ok_or_else(|| LogicError::UnboundVariable(v.clone()))
            })
            .collect::<Result<_, _>>()?;
        let mut env: Vec<(String, i64)> = ranges.iter().map(|(n, lo, _)| (n.clone(), *lo)).collect();
        loop {
            let t = index.eval(&env)?;
            if t < 0 || t as usize >= len {
                return Err(LogicError::IndexOutOfBounds {
                    name: name.to_string(),
                    index: t,
                    len,
                    line,
                    col,
                });
            }
            // odometer over the cartesian product of ranges
            let mut d = 0;
            loop {
                if d == env.len() {
                    return Ok(());
                }
                env[d].1 += 1;
                if env[d].1 < ranges[d].2 {
                    break;
                }
                env[d].1 = ranges[d].1;
                d += 1;
            }
        }
    }
}

fn collect_vars(e: &IndexExpr, out: &mut Vec<String>) {
    match e {
        IndexExpr::Int(_) => {}
        IndexExpr::Var(v) => {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
        IndexExpr::Add(a, b) | IndexExpr::Sub(a, b) | IndexExpr::Mul(a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
        IndexExpr::Neg(a) => collect_vars(a, out),
    }
}

/// Fold an index without variables to a literal.
fn simplify(e: IndexExpr) -> IndexExpr {
    let mut vars = Vec::new();
    collect_vars(&e, &mut vars);
    if vars.is_empty() {
        if let Ok(v) = e.eval(&[]) {
            return IndexExpr::Int(v);
        }
    }
    e
}
