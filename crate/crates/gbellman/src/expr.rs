//! Coefficient expression DSL.
//!
//! Problem coefficients (drift, diffusion, costs, terminal payoff) are given
//! as small formulas over the variables `s` (time), `x1..xn` (state), `y`
//! (the backward value) and `u1..um` (control), with the operators
//! `+ - * / ^`, unary minus and the functions `sin cos exp tanh abs sqrt
//! min max`.
//!
//! Precedence is `^` above unary minus above `* /` above `+ -`, all binary
//! tiers left-associative, so `-2^2 == -4` and `2^3^2 == 64`. Parsing,
//! printing and re-parsing is a fixed point on the AST.

use crate::error::{Error, Result};
use std::fmt;

/// Dimensions an expression is allowed to reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub state: usize,
    pub control: usize,
}

impl Dims {
    pub fn new(state: usize, control: usize) -> Self {
        Dims { state, control }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    Abs,
    Sqrt,
    Min,
    Max,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }
}

/// Parsed coefficient formula.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// The time variable `s`.
    Time,
    /// State component `x{i+1}`.
    State(usize),
    /// The backward value variable `y`.
    Value,
    /// Control component `u{i+1}`.
    Control(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Evaluation point for an expression.
#[derive(Debug, Clone, Copy)]
pub struct EvalPoint<'a> {
    pub time: f64,
    pub state: &'a [f64],
    pub value: f64,
    pub control: &'a [f64],
}

impl<'a> EvalPoint<'a> {
    pub fn new(time: f64, state: &'a [f64], value: f64, control: &'a [f64]) -> Self {
        EvalPoint {
            time,
            state,
            value,
            control,
        }
    }
}

const MAX_SOURCE_BYTES: usize = 64 * 1024;

impl Expr {
    /// Parses `text` against the declared dimensions.
    pub fn parse(text: &str, dims: Dims) -> Result<Expr> {
        if text.trim().is_empty() {
            return Err(Error::Parse {
                offset: 0,
                message: "empty expression".into(),
            });
        }
        if text.len() > MAX_SOURCE_BYTES {
            return Err(Error::ExpressionTooLarge {
                size: text.len(),
                limit: MAX_SOURCE_BYTES,
            });
        }
        let tokens = lex(text)?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            dims,
            src_len: text.len(),
        };
        let expr = parser.parse_sum()?;
        if parser.pos < parser.tokens.len() {
            let tok = &parser.tokens[parser.pos];
            return Err(Error::Parse {
                offset: tok.offset,
                message: format!("unexpected `{}`", tok.kind.describe()),
            });
        }
        Ok(expr)
    }

    /// Evaluates at a point. Division by zero, square roots of negative
    /// numbers and non-finite intermediate results are evaluation errors.
    pub fn eval(&self, p: &EvalPoint) -> Result<f64> {
        let v = self.eval_inner(p)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                context: "expression".into(),
                message: format!("non-finite result {v}"),
            })
        }
    }

    fn eval_inner(&self, p: &EvalPoint) -> Result<f64> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Time => p.time,
            Expr::State(i) => p.state[*i],
            Expr::Value => p.value,
            Expr::Control(i) => p.control[*i],
            Expr::Neg(inner) => -inner.eval_inner(p)?,
            Expr::Bin(op, l, r) => {
                let a = l.eval_inner(p)?;
                let b = r.eval_inner(p)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(Error::Evaluation {
                                context: "expression".into(),
                                message: "division by zero".into(),
                            });
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval_inner(p)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Tanh => a.tanh(),
                    Func::Abs => a.abs(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(Error::Evaluation {
                                context: "expression".into(),
                                message: format!("sqrt of negative number {a}"),
                            });
                        }
                        a.sqrt()
                    }
                    Func::Min => a.min(args[1].eval_inner(p)?),
                    Func::Max => a.max(args[1].eval_inner(p)?),
                }
            }
        })
    }

    /// True if the expression references the backward value variable `y`.
    pub fn references_value(&self) -> bool {
        match self {
            Expr::Value => true,
            Expr::Const(_) | Expr::Time | Expr::State(_) | Expr::Control(_) => false,
            Expr::Neg(e) => e.references_value(),
            Expr::Bin(_, l, r) => l.references_value() || r.references_value(),
            Expr::Call(_, args) => args.iter().any(Expr::references_value),
        }
    }

    /// Variable to differentiate against.
    ///
    /// Symbolic derivatives cover the operations a smooth test function may
    /// use; `a^b` needs a constant exponent and `min`/`max`/`abs`
    /// differentiate branch-wise (almost everywhere).
    pub fn differentiate(&self, var: DiffVar) -> Result<Expr> {
        let d = match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Time => Expr::Const(if var == DiffVar::Time { 1.0 } else { 0.0 }),
            Expr::State(i) => Expr::Const(if var == DiffVar::State(*i) { 1.0 } else { 0.0 }),
            Expr::Value | Expr::Control(_) => Expr::Const(0.0),
            Expr::Neg(e) => neg(e.differentiate(var)?),
            Expr::Bin(op, l, r) => {
                let dl = l.differentiate(var)?;
                let dr = r.differentiate(var)?;
                match op {
                    BinOp::Add => add(dl, dr),
                    BinOp::Sub => sub(dl, dr),
                    BinOp::Mul => add(mul(dl, (**r).clone()), mul((**l).clone(), dr)),
                    BinOp::Div => {
                        // (l/r)' = l'/r - l r'/r^2
                        sub(
                            div(dl, (**r).clone()),
                            div(
                                mul((**l).clone(), dr),
                                Expr::Bin(
                                    BinOp::Pow,
                                    Box::new((**r).clone()),
                                    Box::new(Expr::Const(2.0)),
                                ),
                            ),
                        )
                    }
                    BinOp::Pow => match **r {
                        Expr::Const(k) => {
                            // (l^k)' = k l^(k-1) l'
                            mul(
                                mul(
                                    Expr::Const(k),
                                    Expr::Bin(
                                        BinOp::Pow,
                                        Box::new((**l).clone()),
                                        Box::new(Expr::Const(k - 1.0)),
                                    ),
                                ),
                                dl,
                            )
                        }
                        _ => {
                            return Err(Error::NotDifferentiable {
                                what: format!("{self} (non-constant exponent)"),
                            })
                        }
                    },
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].clone();
                let da = args[0].differentiate(var)?;
                match f {
                    Func::Sin => mul(Expr::Call(Func::Cos, vec![a]), da),
                    Func::Cos => neg(mul(Expr::Call(Func::Sin, vec![a]), da)),
                    Func::Exp => mul(Expr::Call(Func::Exp, vec![a]), da),
                    Func::Tanh => {
                        // 1 - tanh^2
                        let t = Expr::Call(Func::Tanh, vec![a]);
                        mul(
                            sub(
                                Expr::Const(1.0),
                                Expr::Bin(BinOp::Pow, Box::new(t), Box::new(Expr::Const(2.0))),
                            ),
                            da,
                        )
                    }
                    Func::Abs => {
                        // x / |x|, valid away from the kink
                        mul(div(a.clone(), Expr::Call(Func::Abs, vec![a])), da)
                    }
                    Func::Sqrt => div(da, mul(Expr::Const(2.0), Expr::Call(Func::Sqrt, vec![a]))),
                    Func::Min | Func::Max => {
                        return Err(Error::NotDifferentiable {
                            what: format!("{self} (min/max is not smooth)"),
                        })
                    }
                }
            }
        };
        Ok(simplify(d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffVar {
    Time,
    State(usize),
}

fn add(l: Expr, r: Expr) -> Expr {
    Expr::Bin(BinOp::Add, Box::new(l), Box::new(r))
}
fn sub(l: Expr, r: Expr) -> Expr {
    Expr::Bin(BinOp::Sub, Box::new(l), Box::new(r))
}
fn mul(l: Expr, r: Expr) -> Expr {
    Expr::Bin(BinOp::Mul, Box::new(l), Box::new(r))
}
fn div(l: Expr, r: Expr) -> Expr {
    Expr::Bin(BinOp::Div, Box::new(l), Box::new(r))
}
fn neg(e: Expr) -> Expr {
    Expr::Neg(Box::new(e))
}

/// Constant folding and unit/zero elimination, enough to keep derivative
/// trees readable and evaluation cheap.
fn simplify(e: Expr) -> Expr {
    match e {
        Expr::Neg(inner) => {
            let i = simplify(*inner);
            match i {
                Expr::Const(c) => Expr::Const(-c),
                other => neg(other),
            }
        }
        Expr::Bin(op, l, r) => {
            let l = simplify(*l);
            let r = simplify(*r);
            match (op, &l, &r) {
                (_, Expr::Const(a), Expr::Const(b)) => {
                    let v = match op {
                        BinOp::Add => a + b,
                        BinOp::Sub => a - b,
                        BinOp::Mul => a * b,
                        BinOp::Div if *b != 0.0 => a / b,
                        BinOp::Pow => a.powf(*b),
                        _ => return Expr::Bin(op, Box::new(l), Box::new(r)),
                    };
                    Expr::Const(v)
                }
                (BinOp::Add, Expr::Const(c), _) if *c == 0.0 => r,
                (BinOp::Add, _, Expr::Const(c)) if *c == 0.0 => l,
                (BinOp::Sub, _, Expr::Const(c)) if *c == 0.0 => l,
                (BinOp::Mul, Expr::Const(c), _) if *c == 0.0 => Expr::Const(0.0),
                (BinOp::Mul, _, Expr::Const(c)) if *c == 0.0 => Expr::Const(0.0),
                (BinOp::Mul, Expr::Const(c), _) if *c == 1.0 => r,
                (BinOp::Mul, _, Expr::Const(c)) if *c == 1.0 => l,
                (BinOp::Div, Expr::Const(c), _) if *c == 0.0 => Expr::Const(0.0),
                (BinOp::Div, _, Expr::Const(c)) if *c == 1.0 => l,
                (BinOp::Pow, _, Expr::Const(c)) if *c == 1.0 => l,
                _ => Expr::Bin(op, Box::new(l), Box::new(r)),
            }
        }
        Expr::Call(f, args) => Expr::Call(f, args.into_iter().map(simplify).collect()),
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.precedence(),
            Expr::Neg(_) => 3,
            _ => 5,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{})", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Time => write!(f, "s"),
            Expr::State(i) => write!(f, "x{}", i + 1),
            Expr::Value => write!(f, "y"),
            Expr::Control(i) => write!(f, "u{}", i + 1),
            Expr::Neg(inner) => {
                // unary minus binds looser than ^, tighter than * /
                if inner.precedence() <= 3 {
                    write!(f, "-({inner})")
                } else {
                    write!(f, "-{inner}")
                }
            }
            Expr::Bin(op, l, r) => {
                let p = op.precedence();
                if l.precedence() < p {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                write!(f, " {} ", op.symbol())?;
                // left-associative: parenthesize right operands of equal tier
                if r.precedence() <= p {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer / parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("number {v}"),
            TokenKind::Ident(s) => s.clone(),
            TokenKind::Plus => "+".into(),
            TokenKind::Minus => "-".into(),
            TokenKind::Star => "*".into(),
            TokenKind::Slash => "/".into(),
            TokenKind::Caret => "^".into(),
            TokenKind::LParen => "(".into(),
            TokenKind::RParen => ")".into(),
            TokenKind::Comma => ",".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let kind = match b {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokenKind::Plus,
            b'-' => TokenKind::Minus,
            b'*' => TokenKind::Star,
            b'/' => TokenKind::Slash,
            b'^' => TokenKind::Caret,
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            b',' => TokenKind::Comma,
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // exponent part
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| Error::Parse {
                    offset: start,
                    message: format!("bad number literal `{s}`"),
                })?;
                tokens.push(Token {
                    kind: TokenKind::Num(v),
                    offset: start,
                });
                continue;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident(text[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            _ => {
                return Err(Error::Parse {
                    offset: i,
                    message: format!(
                        "unexpected character `{}`",
                        text[i..].chars().next().unwrap()
                    ),
                })
            }
        };
        tokens.push(Token { kind, offset: i });
        i += 1;
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    dims: Dims,
    src_len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, expected: &str) -> Error {
        match self.peek() {
            Some(t) => Error::Parse {
                offset: t.offset,
                message: format!("expected {expected}, found `{}`", t.kind.describe()),
            },
            None => Error::Parse {
                offset: self.src_len,
                message: format!("expected {expected}, found end of input"),
            },
        }
    }

    fn parse_sum(&mut self) -> Result<Expr> {
        let mut left = self.parse_product()?;
        while let Some(t) = self.peek() {
            let op = match t.kind {
                TokenKind::Plus => BinOp::Add,
                TokenKind::Minus => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let right = self.parse_product()?;
            left = Expr::Bin(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn parse_product(&mut self) -> Result<Expr> {
        let mut left = self.parse_unary()?;
        while let Some(t) = self.peek() {
            let op = match t.kind {
                TokenKind::Star => BinOp::Mul,
                TokenKind::Slash => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let right = self.parse_unary()?;
            left = Expr::Bin(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn parse_unary(&mut self) -> Result<Expr> {
        if let Some(t) = self.peek() {
            if t.kind == TokenKind::Minus {
                self.pos += 1;
                let inner = self.parse_unary()?;
                return Ok(Expr::Neg(Box::new(inner)));
            }
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr> {
        let mut left = self.parse_atom()?;
        while let Some(t) = self.peek() {
            if t.kind != TokenKind::Caret {
                break;
            }
            self.pos += 1;
            let right = self.parse_atom()?;
            left = Expr::Bin(BinOp::Pow, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn parse_atom(&mut self) -> Result<Expr> {
        let token = match self.bump() {
            Some(t) => t.clone(),
            None => return Err(self.err_here("a value")),
        };
        match token.kind {
            TokenKind::Num(v) => Ok(Expr::Const(v)),
            TokenKind::LParen => {
                let inner = self.parse_sum()?;
                match self.bump() {
                    Some(t) if t.kind == TokenKind::RParen => Ok(inner),
                    _ => {
                        self.pos = self.pos.saturating_sub(1);
                        Err(self.err_here("`)`"))
                    }
                }
            }
            TokenKind::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    // function call
                    match self.bump() {
                        Some(t) if t.kind == TokenKind::LParen => {}
                        _ => {
                            self.pos = self.pos.saturating_sub(1);
                            return Err(self.err_here("`(` after function name"));
                        }
                    }
                    let mut args = vec![self.parse_sum()?];
                    while let Some(t) = self.peek() {
                        if t.kind == TokenKind::Comma {
                            self.pos += 1;
                            args.push(self.parse_sum()?);
                        } else {
                            break;
                        }
                    }
                    match self.bump() {
                        Some(t) if t.kind == TokenKind::RParen => {}
                        _ => {
                            self.pos = self.pos.saturating_sub(1);
                            return Err(self.err_here("`)`"));
                        }
                    }
                    if args.len() != func.arity() {
                        return Err(Error::ArityMismatch {
                            name: func.name(),
                            expected: func.arity(),
                            got: args.len(),
                        });
                    }
                    Ok(Expr::Call(func, args))
                } else {
                    self.resolve_variable(&name, token.offset)
                }
            }
            other => Err(Error::Parse {
                offset: token.offset,
                message: format!("expected a value, found `{}`", other.describe()),
            }),
        }
    }

    fn resolve_variable(&self, name: &str, offset: usize) -> Result<Expr> {
        if name == "s" {
            return Ok(Expr::Time);
        }
        if name == "y" {
            return Ok(Expr::Value);
        }
        let unknown = || Error::UnknownIdentifier {
            name: name.to_string(),
            offset,
        };
        if let Some(rest) = name.strip_prefix('x') {
            let idx: usize = rest.parse().map_err(|_| unknown())?;
            if idx >= 1 && idx <= self.dims.state {
                return Ok(Expr::State(idx - 1));
            }
            return Err(unknown());
        }
        if let Some(rest) = name.strip_prefix('u') {
            let idx: usize = rest.parse().map_err(|_| unknown())?;
            if idx >= 1 && idx <= self.dims.control {
                return Ok(Expr::Control(idx - 1));
            }
            return Err(unknown());
        }
        Err(unknown())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims11() -> Dims {
        Dims::new(1, 1)
    }

    fn eval_str(text: &str, time: f64, x: f64, y: f64, u: f64) -> f64 {
        let e = Expr::parse(text, dims11()).unwrap();
        e.eval(&EvalPoint::new(time, &[x], y, &[u])).unwrap()
    }

    #[test]
    fn precedence_examples() {
        assert_eq!(eval_str("1+2*3", 0.0, 0.0, 0.0, 0.0), 7.0);
        assert_eq!(eval_str("sin(x1)+2*u1", 0.0, 0.0, 0.0, 1.0), 2.0);
        // unary minus binds looser than ^
        assert_eq!(eval_str("-2^2", 0.0, 0.0, 0.0, 0.0), -4.0);
        // left-associative power
        assert_eq!(eval_str("2^3^2", 0.0, 0.0, 0.0, 0.0), 64.0);
        assert_eq!(eval_str("2-3-4", 0.0, 0.0, 0.0, 0.0), -5.0);
        assert_eq!(eval_str("2*3+1", 0.0, 0.0, 0.0, 0.0), 7.0);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(
            eval_str("s + x1*y - u1", 2.0, 3.0, 4.0, 5.0),
            2.0 + 12.0 - 5.0
        );
        assert_eq!(eval_str("max(x1, u1)", 0.0, 2.0, 0.0, 5.0), 5.0);
        assert_eq!(eval_str("min(x1, u1)", 0.0, 2.0, 0.0, 5.0), 2.0);
        assert!((eval_str("tanh(x1)", 0.0, 0.5, 0.0, 0.0) - 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_offsets() {
        match Expr::parse("1 + foo", dims11()) {
            Err(Error::UnknownIdentifier { name, offset }) => {
                assert_eq!(name, "foo");
                assert_eq!(offset, 4);
            }
            other => panic!("expected unknown identifier, got {other:?}"),
        }
        match Expr::parse("x2", dims11()) {
            Err(Error::UnknownIdentifier { name, .. }) => assert_eq!(name, "x2"),
            other => panic!("expected unknown identifier, got {other:?}"),
        }
        assert!(Expr::parse("1 + ", dims11()).is_err());
        assert!(Expr::parse("min(x1)", dims11()).is_err());
        assert!(Expr::parse("", dims11()).is_err());
    }

    #[test]
    fn eval_failures() {
        let e = Expr::parse("1/x1", dims11()).unwrap();
        assert!(e.eval(&EvalPoint::new(0.0, &[0.0], 0.0, &[0.0])).is_err());
        let e = Expr::parse("sqrt(x1)", dims11()).unwrap();
        assert!(e.eval(&EvalPoint::new(0.0, &[-1.0], 0.0, &[0.0])).is_err());
    }

    #[test]
    fn derivative_basic() {
        let e = Expr::parse("x1^2 + s", dims11()).unwrap();
        let dx = e.differentiate(DiffVar::State(0)).unwrap();
        let dt = e.differentiate(DiffVar::Time).unwrap();
        let p = EvalPoint::new(3.0, &[2.0], 0.0, &[0.0]);
        assert!((dx.eval(&p).unwrap() - 4.0).abs() < 1e-14);
        assert!((dt.eval(&p).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn derivative_chain() {
        let e = Expr::parse("exp(sin(x1))", dims11()).unwrap();
        let dx = e.differentiate(DiffVar::State(0)).unwrap();
        let x = 0.7;
        let state = [x];
        let p = EvalPoint::new(0.0, &state, 0.0, &[0.0]);
        let expected = (x.sin()).exp() * x.cos();
        assert!((dx.eval(&p).unwrap() - expected).abs() < 1e-13);
    }

    fn arb_expr(dims: Dims) -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0u32..1000).prop_map(|n| Expr::Const(n as f64 / 8.0)),
            Just(Expr::Time),
            Just(Expr::Value),
            (0..dims.state).prop_map(Expr::State),
            (0..dims.control).prop_map(Expr::Control),
        ];
        leaf.prop_recursive(5, 48, 4, |inner| {
            prop_oneof![
                (
                    inner.clone(),
                    inner.clone(),
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ]
                )
                    .prop_map(|(l, r, op)| Expr::Bin(op, Box::new(l), Box::new(r))),
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (
                    inner.clone(),
                    prop_oneof![
                        Just(Func::Sin),
                        Just(Func::Cos),
                        Just(Func::Exp),
                        Just(Func::Tanh),
                        Just(Func::Abs),
                        Just(Func::Sqrt)
                    ]
                )
                    .prop_map(|(a, f)| Expr::Call(f, vec![a])),
                (
                    inner.clone(),
                    inner,
                    prop_oneof![Just(Func::Min), Just(Func::Max)]
                )
                    .prop_map(|(a, b, f)| Expr::Call(f, vec![a, b])),
            ]
        })
    }

    proptest! {
        // parse -> print -> parse is the identity on ASTs
        #[test]
        fn print_parse_roundtrip(e in arb_expr(Dims::new(2, 2))) {
            let printed = e.to_string();
            let reparsed = Expr::parse(&printed, Dims::new(2, 2)).unwrap();
            prop_assert_eq!(&reparsed, &e);
            // and printing is a fixed point
            prop_assert_eq!(reparsed.to_string(), printed);
        }
    }
}
