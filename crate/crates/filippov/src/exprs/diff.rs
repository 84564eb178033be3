//! Symbolic differentiation.

use super::{add, div, func, mul, neg, pow, sub, Func, Node, Var};

pub(super) fn diff(n: &Node, v: Var) -> Node {
    match n {
        Node::Const(_) => Node::Const(0.0),
        Node::Var(w) => Node::Const(if *w == v { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(diff(a, v)),
        Node::Add(a, b) => add(diff(a, v), diff(b, v)),
        Node::Sub(a, b) => sub(diff(a, v), diff(b, v)),
        Node::Mul(a, b) => {
            let da = diff(a, v);
            let db = diff(b, v);
            add(mul(da, (**b).clone()), mul((**a).clone(), db))
        }
        Node::Div(a, b) => {
            let da = diff(a, v);
            let db = diff(b, v);
            if matches!(db, Node::Const(c) if c == 0.0) {
                return div(da, (**b).clone());
            }
            div(
                sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                pow((**b).clone(), 2),
            )
        }
        Node::Pow(a, k) => {
            let da = diff(a, v);
            if *k == 0 {
                return Node::Const(0.0);
            }
            mul(mul(Node::Const(*k as f64), pow((**a).clone(), k - 1)), da)
        }
        Node::Func(f, a) => {
            let da = diff(a, v);
            let u = (**a).clone();
            match f {
                Func::Exp => mul(func(Func::Exp, u), da),
                Func::Ln => div(da, u),
                Func::Sin => mul(func(Func::Cos, u), da),
                Func::Cos => neg(mul(func(Func::Sin, u), da)),
                Func::Sqrt => div(da, mul(Node::Const(2.0), func(Func::Sqrt, u))),
            }
        }
    }
}
