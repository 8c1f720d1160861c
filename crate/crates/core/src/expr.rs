//! Scalar expression language used to describe vector fields, jump maps,
//! guards and Lyapunov functions in system definition files.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! sum     := product (("+" | "-") product)*
//! product := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := atom ("^" unary)?          // right associative
//! atom    := number | xK | func "(" args ")" | "(" sum ")"
//! func    := sign | abs | min | max
//! ```
//!
//! Variables are `x1 … xn` (1-based in source, 0-based in the tree).
//! There is no implicit multiplication and whitespace is ignored.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sign,
    Abs,
    Min,
    Max,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sign => "sign",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Sign | Func::Abs => 1,
            Func::Min | Func::Max => 2,
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        match name {
            "sign" => Some(Func::Sign),
            "abs" => Some(Func::Abs),
            "min" => Some(Func::Min),
            "max" => Some(Func::Max),
            _ => None,
        }
    }
}

/// Parsed expression tree. `Var` holds a zero-based state index.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("variable x{index} at byte {offset} is out of range for state dimension {dim}")]
    VariableOutOfRange {
        offset: usize,
        index: usize,
        dim: usize,
    },
    #[error("function `{name}` at byte {offset} takes {expected} argument(s), got {found}")]
    Arity {
        offset: usize,
        name: &'static str,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalErrorKind {
    DivisionByZero,
    ZeroToNegativePower,
    NegativeBaseFractionalPower,
    NonFinite,
    StateDimension,
}

impl fmt::Display for EvalErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EvalErrorKind::DivisionByZero => "division by zero",
            EvalErrorKind::ZeroToNegativePower => "zero raised to a negative power",
            EvalErrorKind::NegativeBaseFractionalPower => {
                "negative base raised to a non-integer power (use sign(x)*abs(x)^p)"
            }
            EvalErrorKind::NonFinite => "non-finite result",
            EvalErrorKind::StateDimension => "state vector too short",
        };
        f.write_str(s)
    }
}

/// Evaluation failure, naming the offending subexpression in canonical form.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} in `{subexpr}`")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub subexpr: String,
}

impl EvalError {
    fn at(kind: EvalErrorKind, e: &Expr) -> Self {
        EvalError {
            kind,
            subexpr: e.to_string(),
        }
    }
}

/// Parse `src` as an expression over a state of dimension `dim`.
pub fn parse(src: &str, dim: usize) -> Result<Expr, ParseError> {
    let tokens = lex(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        dim,
        end: src.len(),
    };
    let e = p.sum()?;
    match p.peek() {
        None => Ok(e),
        Some(t) => Err(ParseError::Syntax {
            offset: t.offset,
            message: format!("unexpected {}", t.kind.describe()),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
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

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(v) => format!("number {v}"),
            TokKind::Ident(s) => format!("identifier `{s}`"),
            TokKind::Plus => "`+`".into(),
            TokKind::Minus => "`-`".into(),
            TokKind::Star => "`*`".into(),
            TokKind::Slash => "`/`".into(),
            TokKind::Caret => "`^`".into(),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
            TokKind::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Some(TokKind::Plus),
            b'-' => Some(TokKind::Minus),
            b'*' => Some(TokKind::Star),
            b'/' => Some(TokKind::Slash),
            b'^' => Some(TokKind::Caret),
            b'(' => Some(TokKind::LParen),
            b')' => Some(TokKind::RParen),
            b',' => Some(TokKind::Comma),
            _ => None,
        };
        if let Some(kind) = single {
            out.push(Token {
                kind,
                offset: start,
            });
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // exponent part: e, E followed by optional sign and digits
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token {
                kind: TokKind::Num(value),
                offset: start,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(src[start..i].to_string()),
                offset: start,
            });
            continue;
        }
        let ch = src[start..].chars().next().unwrap_or('?');
        return Err(ParseError::Syntax {
            offset: start,
            message: format!("unexpected character `{ch}`"),
        });
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dim: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_kind(&self) -> Option<&TokKind> {
        self.peek().map(|t| &t.kind)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, kind: TokKind) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if t.kind == kind => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(ParseError::Syntax {
                offset: t.offset,
                message: format!("expected {}, found {}", kind.describe(), t.kind.describe()),
            }),
            None => Err(ParseError::Syntax {
                offset: self.end,
                message: format!("expected {}, found end of input", kind.describe()),
            }),
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek_kind() {
                Some(TokKind::Plus) => BinOp::Add,
                Some(TokKind::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek_kind() {
                Some(TokKind::Star) => BinOp::Mul,
                Some(TokKind::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(TokKind::Minus) = self.peek_kind() {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Some(TokKind::Caret) = self.peek_kind() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        let Some(tok) = self.bump() else {
            return Err(ParseError::Syntax {
                offset,
                message: "unexpected end of input".into(),
            });
        };
        match tok.kind {
            TokKind::Num(v) => Ok(Expr::Num(v)),
            TokKind::LParen => {
                let e = self.sum()?;
                self.expect(TokKind::RParen)?;
                Ok(e)
            }
            TokKind::Ident(name) => self.identifier(name, tok.offset),
            other => Err(ParseError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn identifier(&mut self, name: String, offset: usize) -> Result<Expr, ParseError> {
        if let Some(func) = Func::lookup(&name) {
            self.expect(TokKind::LParen)?;
            let mut args = vec![self.sum()?];
            while let Some(TokKind::Comma) = self.peek_kind() {
                self.pos += 1;
                args.push(self.sum()?);
            }
            self.expect(TokKind::RParen)?;
            if args.len() != func.arity() {
                return Err(ParseError::Arity {
                    offset,
                    name: func.name(),
                    expected: func.arity(),
                    found: args.len(),
                });
            }
            return Ok(Expr::Call(func, args));
        }
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = digits.parse().unwrap_or(usize::MAX);
                if index == 0 || index > self.dim {
                    return Err(ParseError::VariableOutOfRange {
                        offset,
                        index,
                        dim: self.dim,
                    });
                }
                return Ok(Expr::Var(index - 1));
            }
        }
        Err(ParseError::UnknownIdentifier { offset, name })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Real power with the conventions of the expression language:
/// `0^p = 0` for `p > 0`, `0^0 = 1`, negative bases only with integer
/// exponents.
pub fn real_pow(base: f64, p: f64) -> Result<f64, EvalErrorKind> {
    if base == 0.0 {
        if p > 0.0 {
            Ok(0.0)
        } else if p == 0.0 {
            Ok(1.0)
        } else {
            Err(EvalErrorKind::ZeroToNegativePower)
        }
    } else if base < 0.0 && p.fract() != 0.0 {
        Err(EvalErrorKind::NegativeBaseFractionalPower)
    } else {
        Ok(base.powf(p))
    }
}

fn finite(v: f64, e: &Expr) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::at(EvalErrorKind::NonFinite, e))
    }
}

impl Expr {
    /// Evaluate at state `x`.
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => *x
                .get(*i)
                .ok_or_else(|| EvalError::at(EvalErrorKind::StateDimension, self))?,
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Bin(op, a, b) => {
                let a = a.eval(x)?;
                let b = b.eval(x)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::at(EvalErrorKind::DivisionByZero, self));
                        }
                        a / b
                    }
                    BinOp::Pow => real_pow(a, b).map_err(|k| EvalError::at(k, self))?,
                }
            }
            Expr::Call(func, args) => match func {
                Func::Sign => sign(args[0].eval(x)?),
                Func::Abs => args[0].eval(x)?.abs(),
                Func::Min => args[0].eval(x)?.min(args[1].eval(x)?),
                Func::Max => args[0].eval(x)?.max(args[1].eval(x)?),
            },
        };
        finite(v, self)
    }

    /// Value and one-sided directional derivative along `dir` at `x`
    /// (forward-mode dual numbers). At kinks of `abs` the right derivative
    /// is returned, which is what an upper-right Dini derivative along a
    /// trajectory needs.
    pub fn eval_directional(&self, x: &[f64], dir: &[f64]) -> Result<(f64, f64), EvalError> {
        let (v, d) = match self {
            Expr::Num(v) => (*v, 0.0),
            Expr::Var(i) => {
                let v = *x
                    .get(*i)
                    .ok_or_else(|| EvalError::at(EvalErrorKind::StateDimension, self))?;
                let d = *dir
                    .get(*i)
                    .ok_or_else(|| EvalError::at(EvalErrorKind::StateDimension, self))?;
                (v, d)
            }
            Expr::Neg(a) => {
                let (v, d) = a.eval_directional(x, dir)?;
                (-v, -d)
            }
            Expr::Bin(op, a, b) => {
                let (av, ad) = a.eval_directional(x, dir)?;
                let (bv, bd) = b.eval_directional(x, dir)?;
                match op {
                    BinOp::Add => (av + bv, ad + bd),
                    BinOp::Sub => (av - bv, ad - bd),
                    BinOp::Mul => (av * bv, ad * bv + av * bd),
                    BinOp::Div => {
                        if bv == 0.0 {
                            return Err(EvalError::at(EvalErrorKind::DivisionByZero, self));
                        }
                        (av / bv, (ad * bv - av * bd) / (bv * bv))
                    }
                    BinOp::Pow => {
                        let v = real_pow(av, bv).map_err(|k| EvalError::at(k, self))?;
                        let d = if bd == 0.0 {
                            if ad == 0.0 {
                                0.0
                            } else if av == 0.0 {
                                if bv > 1.0 {
                                    0.0
                                } else if bv == 1.0 {
                                    ad
                                } else {
                                    return Err(EvalError::at(EvalErrorKind::NonFinite, self));
                                }
                            } else {
                                let lower = real_pow(av, bv - 1.0).map_err(|k| EvalError::at(k, self))?;
                                bv * lower * ad
                            }
                        } else {
                            if av <= 0.0 {
                                return Err(EvalError::at(EvalErrorKind::NonFinite, self));
                            }
                            v * (bd * av.ln() + bv * ad / av)
                        };
                        (v, d)
                    }
                }
            }
            Expr::Call(func, args) => match func {
                Func::Sign => (sign(args[0].eval(x)?), 0.0),
                Func::Abs => {
                    let (v, d) = args[0].eval_directional(x, dir)?;
                    let dd = if v > 0.0 {
                        d
                    } else if v < 0.0 {
                        -d
                    } else {
                        d.abs()
                    };
                    (v.abs(), dd)
                }
                Func::Min | Func::Max => {
                    let (av, ad) = args[0].eval_directional(x, dir)?;
                    let (bv, bd) = args[1].eval_directional(x, dir)?;
                    let take_a = match func {
                        Func::Min => av < bv || (av == bv && ad <= bd),
                        _ => av > bv || (av == bv && ad >= bd),
                    };
                    if take_a {
                        (av, ad)
                    } else {
                        (bv, bd)
                    }
                }
            },
        };
        Ok((finite(v, self)?, finite(d, self)?))
    }

    /// Central-difference gradient with step `h`.
    pub fn grad_numeric(&self, x: &[f64], h: f64) -> Result<Vec<f64>, EvalError> {
        let mut probe = x.to_vec();
        let mut grad = Vec::with_capacity(x.len());
        for k in 0..x.len() {
            probe[k] = x[k] + h;
            let up = self.eval(&probe)?;
            probe[k] = x[k] - h;
            let down = self.eval(&probe)?;
            probe[k] = x[k];
            let g = (up - down) / (2.0 * h);
            grad.push(finite(g, self)?);
        }
        Ok(grad)
    }

    /// Largest zero-based variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) => a.max_var(),
            Expr::Bin(_, a, b) => a.max_var().max(b.max_var()),
            Expr::Call(_, args) => args.iter().filter_map(Expr::max_var).max(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.precedence(),
            Expr::Neg(_) => 3,
            Expr::Num(_) | Expr::Var(_) | Expr::Call(_, _) => 5,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Canonical form with minimal parentheses; re-parses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, a.precedence() < 3)
            }
            Expr::Bin(op, a, b) => {
                let p = op.precedence();
                let (left_parens, right_parens) = if *op == BinOp::Pow {
                    (a.precedence() <= p, b.precedence() < 3)
                } else {
                    (a.precedence() < p, b.precedence() <= p)
                };
                write_child(f, a, left_parens)?;
                if *op == BinOp::Pow {
                    f.write_str("^")?;
                } else {
                    write!(f, " {} ", op.symbol())?;
                }
                write_child(f, b, right_parens)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
