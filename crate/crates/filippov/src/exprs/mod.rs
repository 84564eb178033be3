//! Scalar expressions in `x`, `y` and parameters `a1..am`.
//!
//! Expressions are parsed from text, evaluated in double precision and
//! differentiated symbolically. The only rewriting ever applied is constant
//! folding (including the trivial identities with 0 and 1), so derivatives
//! stay exact at the cost of some growth.
//!
//! For the hot loops of the integrator an [`Expr`] set can be compiled into a
//! [`Tape`], a flat postfix program evaluated without recursion.

mod compile;
mod diff;
mod parse;

use std::fmt;

pub use compile::Tape;

/// A variable of an expression. `Param(0)` is `a1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X,
    Y,
    Param(usize),
}

impl Var {
    /// Slot in the input vector `[x, y, a1, .., am]`.
    pub fn slot(self) -> usize {
        match self {
            Var::X => 0,
            Var::Y => 1,
            Var::Param(i) => i + 2,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X => write!(f, "x"),
            Var::Y => write!(f, "y"),
            Var::Param(i) => write!(f, "a{}", i + 1),
        }
    }
}

/// Elementary functions allowed by the grammar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> Result<f64, EvalError> {
        match self {
            Func::Exp => Ok(v.exp()),
            Func::Ln if v <= 0.0 || v.is_nan() => Err(EvalError::Domain { func: "ln", arg: v }),
            Func::Ln => Ok(v.ln()),
            Func::Sin => Ok(v.sin()),
            Func::Cos => Ok(v.cos()),
            Func::Sqrt if v < 0.0 || v.is_nan() => Err(EvalError::Domain { func: "sqrt", arg: v }),
            Func::Sqrt => Ok(v.sqrt()),
        }
    }
}

/// Expression tree node.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Node>),
    Func(Func, Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, u32),
}

/// An expression together with its parameter arity `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    node: Node,
    m: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("parameter a{index} exceeds arity m={m}")]
    Arity { index: usize, m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("{func} called outside its domain (argument {arg})")]
    Domain { func: &'static str, arg: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("expected {expected} parameter values, got {got}")]
    ParamCount { expected: usize, got: usize },
}

/// Parses `text` as an expression with `m` parameters.
pub fn parse_expr(text: &str, m: usize) -> Result<Expr, ExprError> {
    let node = parse::parse(text, m)?;
    Ok(Expr { node, m })
}

/// Exact partial derivative of `e` with respect to `var`.
pub fn diff_expr(e: &Expr, var: Var) -> Result<Expr, ExprError> {
    e.diff(var)
}

/// Evaluates `e` at `(x, y; alpha)`.
pub fn eval_expr(e: &Expr, x: f64, y: f64, alpha: &[f64]) -> Result<f64, EvalError> {
    e.eval(x, y, alpha)
}

impl Expr {
    /// Wraps a node, checking that no parameter beyond `a{m}` is referenced.
    pub fn from_node(node: Node, m: usize) -> Result<Expr, ExprError> {
        if let Some(i) = max_param(&node) {
            if i >= m {
                return Err(ExprError::Arity { index: i + 1, m });
            }
        }
        Ok(Expr { node, m })
    }

    pub fn constant(c: f64, m: usize) -> Expr {
        Expr { node: Node::Const(c), m }
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn arity(&self) -> usize {
        self.m
    }

    /// Same tree seen with a larger arity.
    pub fn with_arity(&self, m: usize) -> Result<Expr, ExprError> {
        Expr::from_node(self.node.clone(), m)
    }

    pub fn diff(&self, var: Var) -> Result<Expr, ExprError> {
        if let Var::Param(i) = var {
            if i >= self.m {
                return Err(ExprError::Arity { index: i + 1, m: self.m });
            }
        }
        Ok(Expr { node: diff::diff(&self.node, var), m: self.m })
    }

    /// Repeated differentiation, e.g. `&[Var::X, Var::X]` for the second x-partial.
    pub fn diff_many(&self, vars: &[Var]) -> Result<Expr, ExprError> {
        let mut e = self.clone();
        for &v in vars {
            e = e.diff(v)?;
        }
        Ok(e)
    }

    pub fn eval(&self, x: f64, y: f64, alpha: &[f64]) -> Result<f64, EvalError> {
        if alpha.len() != self.m {
            return Err(EvalError::ParamCount { expected: self.m, got: alpha.len() });
        }
        eval_node(&self.node, x, y, alpha)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.node, Node::Const(c) if c == 0.0)
    }

    /// Combines two expressions of equal arity with a folding constructor.
    pub fn combine(&self, other: &Expr, op: fn(Node, Node) -> Node) -> Expr {
        debug_assert_eq!(self.m, other.m);
        Expr { node: op(self.node.clone(), other.node.clone()), m: self.m }
    }
}

fn max_param(n: &Node) -> Option<usize> {
    match n {
        Node::Const(_) => None,
        Node::Var(Var::Param(i)) => Some(*i),
        Node::Var(_) => None,
        Node::Neg(a) | Node::Func(_, a) | Node::Pow(a, _) => max_param(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            match (max_param(a), max_param(b)) {
                (Some(p), Some(q)) => Some(p.max(q)),
                (p, q) => p.or(q),
            }
        }
    }
}

fn eval_node(n: &Node, x: f64, y: f64, alpha: &[f64]) -> Result<f64, EvalError> {
    Ok(match n {
        Node::Const(c) => *c,
        Node::Var(Var::X) => x,
        Node::Var(Var::Y) => y,
        Node::Var(Var::Param(i)) => alpha[*i],
        Node::Neg(a) => -eval_node(a, x, y, alpha)?,
        Node::Func(f, a) => f.apply(eval_node(a, x, y, alpha)?)?,
        Node::Add(a, b) => eval_node(a, x, y, alpha)? + eval_node(b, x, y, alpha)?,
        Node::Sub(a, b) => eval_node(a, x, y, alpha)? - eval_node(b, x, y, alpha)?,
        Node::Mul(a, b) => eval_node(a, x, y, alpha)? * eval_node(b, x, y, alpha)?,
        Node::Div(a, b) => {
            let d = eval_node(b, x, y, alpha)?;
            if d == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            eval_node(a, x, y, alpha)? / d
        }
        Node::Pow(a, k) => powi(eval_node(a, x, y, alpha)?, *k),
    })
}

pub(crate) fn powi(v: f64, k: u32) -> f64 {
    match k {
        0 => 1.0,
        1 => v,
        2 => v * v,
        3 => v * v * v,
        _ => v.powi(k as i32),
    }
}

// Folding constructors. These are the only place where trees are rewritten.

fn is_const(n: &Node, v: f64) -> bool {
    matches!(n, Node::Const(c) if *c == v)
}

fn folded(v: f64) -> Option<Node> {
    v.is_finite().then_some(Node::Const(v))
}

pub fn add(a: Node, b: Node) -> Node {
    if let (Node::Const(p), Node::Const(q)) = (&a, &b) {
        if let Some(n) = folded(p + q) {
            return n;
        }
    }
    if is_const(&a, 0.0) {
        return b;
    }
    if is_const(&b, 0.0) {
        return a;
    }
    Node::Add(Box::new(a), Box::new(b))
}

pub fn sub(a: Node, b: Node) -> Node {
    if let (Node::Const(p), Node::Const(q)) = (&a, &b) {
        if let Some(n) = folded(p - q) {
            return n;
        }
    }
    if is_const(&b, 0.0) {
        return a;
    }
    if is_const(&a, 0.0) {
        return neg(b);
    }
    Node::Sub(Box::new(a), Box::new(b))
}

pub fn mul(a: Node, b: Node) -> Node {
    if let (Node::Const(p), Node::Const(q)) = (&a, &b) {
        if let Some(n) = folded(p * q) {
            return n;
        }
    }
    if is_const(&a, 0.0) || is_const(&b, 0.0) {
        return Node::Const(0.0);
    }
    if is_const(&a, 1.0) {
        return b;
    }
    if is_const(&b, 1.0) {
        return a;
    }
    Node::Mul(Box::new(a), Box::new(b))
}

pub fn div(a: Node, b: Node) -> Node {
    if let (Node::Const(p), Node::Const(q)) = (&a, &b) {
        if *q != 0.0 {
            if let Some(n) = folded(p / q) {
                return n;
            }
        }
    }
    if is_const(&b, 1.0) {
        return a;
    }
    if is_const(&a, 0.0) && !is_const(&b, 0.0) {
        return Node::Const(0.0);
    }
    Node::Div(Box::new(a), Box::new(b))
}

pub fn neg(a: Node) -> Node {
    match a {
        Node::Const(c) => Node::Const(-c),
        other => Node::Neg(Box::new(other)),
    }
}

pub fn pow(a: Node, k: u32) -> Node {
    if k == 0 {
        return Node::Const(1.0);
    }
    if k == 1 {
        return a;
    }
    if let Node::Const(c) = a {
        if let Some(n) = folded(powi(c, k)) {
            return n;
        }
    }
    Node::Pow(Box::new(a), k)
}

pub fn func(f: Func, a: Node) -> Node {
    if let Node::Const(c) = a {
        if let Ok(v) = f.apply(c) {
            if let Some(n) = folded(v) {
                return n;
            }
        }
    }
    Node::Func(f, Box::new(a))
}

// Printing. Output re-parses to the same tree.

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;

fn prec(n: &Node) -> u8 {
    match n {
        Node::Add(..) | Node::Sub(..) => PREC_SUM,
        Node::Mul(..) | Node::Div(..) => PREC_PRODUCT,
        _ => 3,
    }
}

fn fmt_number(c: f64) -> String {
    format!("{:?}", c)
}

fn write_node(n: &Node, out: &mut String) {
    match n {
        Node::Const(c) => {
            if c.is_sign_negative() {
                out.push_str("(-");
                out.push_str(&fmt_number(-c));
                out.push(')');
            } else {
                out.push_str(&fmt_number(*c));
            }
        }
        Node::Var(v) => out.push_str(&v.to_string()),
        Node::Neg(a) => {
            out.push_str("(-");
            match a.as_ref() {
                Node::Var(_) | Node::Func(..) | Node::Pow(..) => write_node(a, out),
                Node::Const(c) if !c.is_sign_negative() => write_node(a, out),
                _ => {
                    out.push('(');
                    write_node(a, out);
                    out.push(')');
                }
            }
            out.push(')');
        }
        Node::Func(f, a) => {
            out.push_str(f.name());
            out.push('(');
            write_node(a, out);
            out.push(')');
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            let (p, sym) = match n {
                Node::Add(..) => (PREC_SUM, " + "),
                Node::Sub(..) => (PREC_SUM, " - "),
                Node::Mul(..) => (PREC_PRODUCT, " * "),
                _ => (PREC_PRODUCT, " / "),
            };
            write_operand(a, prec(a) < p, out);
            out.push_str(sym);
            write_operand(b, prec(b) <= p, out);
        }
        Node::Pow(a, k) => {
            let bare = matches!(a.as_ref(), Node::Var(_) | Node::Func(..))
                || matches!(a.as_ref(), Node::Const(c) if !c.is_sign_negative());
            write_operand(a, !bare, out);
            out.push('^');
            out.push_str(&k.to_string());
        }
    }
}

fn write_operand(n: &Node, paren: bool, out: &mut String) {
    if paren {
        out.push('(');
        write_node(n, out);
        out.push(')');
    } else {
        write_node(n, out);
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_node(self, &mut s);
        f.write_str(&s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.node.fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, m: usize, x: f64, y: f64, a: &[f64]) -> f64 {
        parse_expr(s, m).unwrap().eval(x, y, a).unwrap()
    }

    #[test]
    fn basic_values() {
        assert_eq!(ev("x^2 - 1", 0, 2.0, 0.0, &[]), 3.0);
        assert_eq!(ev("a1*(x+1)", 1, -1.0, 0.0, &[7.5]), 0.0);
        assert_eq!(ev("2.5", 0, 9.0, 9.0, &[]), 2.5);
        let v = ev("-(x+1)*(x-1/3)", 0, 1.0, 0.0, &[]);
        assert!((v + 4.0 / 3.0).abs() < 1e-15);
        assert!((ev("exp(x)", 0, 2.0, 0.0, &[]) - 7.389_056_098_930_65).abs() < 1e-12);
        let q = ev("x^3 - x + 0.1945280494*(x^2-1) + y", 0, 1.0, 0.0, &[]);
        assert_eq!(q, 0.0);
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        assert_eq!(ev("-x^2", 0, 3.0, 0.0, &[]), -9.0);
        assert_eq!(ev("2*-x", 0, 3.0, 0.0, &[]), -6.0);
        assert_eq!(ev("1 - 2 - 3", 0, 0.0, 0.0, &[]), -4.0);
        assert_eq!(ev("8 / 2 / 2", 0, 0.0, 0.0, &[]), 2.0);
    }

    #[test]
    fn domain_errors_are_reported() {
        let e = parse_expr("ln(x)", 0).unwrap();
        assert!(matches!(e.eval(-1.0, 0.0, &[]), Err(EvalError::Domain { func: "ln", .. })));
        let e = parse_expr("sqrt(x)", 0).unwrap();
        assert!(matches!(e.eval(-1.0, 0.0, &[]), Err(EvalError::Domain { func: "sqrt", .. })));
        let e = parse_expr("1/x", 0).unwrap();
        assert_eq!(e.eval(0.0, 0.0, &[]), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_expr("x + z", 0), Err(ExprError::UnknownIdentifier { offset: 4, .. })));
        assert!(matches!(parse_expr("a3", 2), Err(ExprError::Arity { index: 3, m: 2 })));
        assert!(matches!(parse_expr("(x + 1", 0), Err(ExprError::Syntax { offset: 6, .. })));
        assert!(matches!(parse_expr("x^1.5", 0), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("x y", 0), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_expr("", 0), Err(ExprError::Syntax { offset: 0, .. })));
        assert!(matches!(parse_expr("a0", 2), Err(ExprError::UnknownIdentifier { .. })));
    }

    #[test]
    fn derivatives() {
        let e = parse_expr("a1*(x+1)", 1).unwrap();
        let d = e.diff(Var::X).unwrap();
        for &(x, a) in &[(0.3, 2.0), (-4.0, -1.5)] {
            assert_eq!(d.eval(x, 0.0, &[a]).unwrap(), a);
        }
        let p = parse_expr("(x+1)^2*(0.5-x)", 0).unwrap();
        let pxx = p.diff_many(&[Var::X, Var::X]).unwrap();
        assert!((pxx.eval(-1.0, 0.0, &[]).unwrap() - 3.0).abs() < 1e-14);
        assert!(matches!(p.diff(Var::Param(0)), Err(ExprError::Arity { .. })));
    }

    #[test]
    fn folding_keeps_constants_exact() {
        let e = parse_expr("(exp(2)-7)/2", 0).unwrap();
        assert_eq!(e.node(), &Node::Const((2f64.exp() - 7.0) / 2.0));
        let d = parse_expr("3*x + y", 0).unwrap().diff(Var::X).unwrap();
        assert_eq!(d.node(), &Node::Const(3.0));
    }

    #[test]
    fn printing_round_trips() {
        for s in [
            "-(x+1)*(x-1/3) + a1 + a2*(x+1)",
            "x - (y - 1)",
            "x / (y / 2)",
            "-x^2 + (-x)^3",
            "exp(-(x*y))*sin(x)^2 - -y",
            "1e-7*x + 2.5e12",
            "-(-x)",
        ] {
            let e = parse_expr(s, 2).unwrap();
            let printed = e.to_string();
            let again = parse_expr(&printed, 2).unwrap();
            assert_eq!(e, again, "{s} -> {printed}");
        }
    }
}
