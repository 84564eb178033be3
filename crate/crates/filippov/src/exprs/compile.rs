//! Flat postfix programs for repeated evaluation of several expressions.

use super::{powi, EvalError, Expr, Func, Node};

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(f64),
    Load(u32),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow(u32),
    Func(Func),
    Store(u32),
}

/// Several expressions compiled into one program over `[x, y, a1, .., am]`.
///
/// Results are bit-identical to tree evaluation: the same operations run in
/// the same order.
#[derive(Clone, Debug)]
pub struct Tape {
    ops: Vec<Op>,
    n_in: usize,
    n_out: usize,
    depth: usize,
}

const INLINE_STACK: usize = 64;

impl Tape {
    /// Compiles `exprs`; all must share the same arity.
    pub fn new(exprs: &[&Expr]) -> Tape {
        let m = exprs.first().map_or(0, |e| e.arity());
        let mut ops = Vec::new();
        let mut depth = 0;
        for (k, e) in exprs.iter().enumerate() {
            assert_eq!(e.arity(), m, "tape outputs must share the parameter arity");
            depth = depth.max(emit(e.node(), &mut ops));
            ops.push(Op::Store(k as u32));
        }
        Tape { ops, n_in: m + 2, n_out: exprs.len(), depth }
    }

    pub fn n_outputs(&self) -> usize {
        self.n_out
    }

    pub fn n_inputs(&self) -> usize {
        self.n_in
    }

    /// Evaluates every output; `input` is `[x, y, a1, .., am]`.
    pub fn eval(&self, input: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        debug_assert!(input.len() >= self.n_in && out.len() >= self.n_out);
        if self.depth <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            self.run(input, out, &mut stack)
        } else {
            let mut stack = vec![0.0f64; self.depth];
            self.run(input, out, &mut stack)
        }
    }

    #[inline]
    fn run(&self, input: &[f64], out: &mut [f64], st: &mut [f64]) -> Result<(), EvalError> {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    st[sp] = c;
                    sp += 1;
                }
                Op::Load(i) => {
                    st[sp] = input[i as usize];
                    sp += 1;
                }
                Op::Neg => st[sp - 1] = -st[sp - 1],
                Op::Add => {
                    sp -= 1;
                    st[sp - 1] += st[sp];
                }
                Op::Sub => {
                    sp -= 1;
                    st[sp - 1] -= st[sp];
                }
                Op::Mul => {
                    sp -= 1;
                    st[sp - 1] *= st[sp];
                }
                Op::Div => {
                    sp -= 1;
                    if st[sp] == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    st[sp - 1] /= st[sp];
                }
                Op::Pow(k) => st[sp - 1] = powi(st[sp - 1], k),
                Op::Func(f) => st[sp - 1] = f.apply(st[sp - 1])?,
                Op::Store(k) => {
                    sp -= 1;
                    out[k as usize] = st[sp];
                }
            }
        }
        Ok(())
    }
}

/// Appends postfix code for `n`; returns the stack depth it needs.
fn emit(n: &Node, ops: &mut Vec<Op>) -> usize {
    match n {
        Node::Const(c) => {
            ops.push(Op::Const(*c));
            1
        }
        Node::Var(v) => {
            ops.push(Op::Load(v.slot() as u32));
            1
        }
        Node::Neg(a) => {
            let d = emit(a, ops);
            ops.push(Op::Neg);
            d
        }
        Node::Func(f, a) => {
            let d = emit(a, ops);
            ops.push(Op::Func(*f));
            d
        }
        Node::Pow(a, k) => {
            let d = emit(a, ops);
            ops.push(Op::Pow(*k));
            d
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            let da = emit(a, ops);
            let db = emit(b, ops);
            ops.push(match n {
                Node::Add(..) => Op::Add,
                Node::Sub(..) => Op::Sub,
                Node::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
            da.max(db + 1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprs::parse_expr;

    #[test]
    fn tape_matches_tree_evaluation_bitwise() {
        let srcs = [
            "x^3 - x + (exp(2)-7)/2*(x^2-1) + y + a1 + a2*x",
            "-(x+1)*(x-1/3) + a1 + a2*(x+1)",
            "sin(x*y)/(1+x^2) - sqrt(exp(y))*a2",
        ];
        let exprs: Vec<_> = srcs.iter().map(|s| parse_expr(s, 2).unwrap()).collect();
        let refs: Vec<&Expr> = exprs.iter().collect();
        let tape = Tape::new(&refs);
        let mut out = [0.0; 3];
        for &(x, y) in &[(0.3, -0.2), (-1.7, 2.5), (1.0, 0.0)] {
            let alpha = [0.01, -0.3];
            tape.eval(&[x, y, alpha[0], alpha[1]], &mut out).unwrap();
            for (e, v) in exprs.iter().zip(out) {
                assert_eq!(e.eval(x, y, &alpha).unwrap().to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn tape_reports_domain_errors() {
        let e = parse_expr("ln(x)", 0).unwrap();
        let t = Tape::new(&[&e]);
        let mut out = [0.0];
        assert!(t.eval(&[-1.0, 0.0], &mut out).is_err());
    }
}
