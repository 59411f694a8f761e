//! A small arithmetic expression language for user-defined fiber maps.
//!
//! Grammar (`^` is right-associative and binds tighter than unary minus):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | '+' unary | power
//! power   := primary ('^' unary)?
//! primary := number | 'pi' | 'e' | 'x' | 'b' digits
//!          | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | ln | sqrt
//! ```
//!
//! Expressions are parsed into an [`Expr`] tree that can be evaluated and
//! differentiated symbolically with respect to `x`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Ln => v.ln(),
            Func::Sqrt => v.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// The fiber coordinate.
    X,
    /// Base coordinate `b_{i+1}` (zero-based index).
    B(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if let Some(t) = p.peek() {
            return Err(Error::Parse {
                pos: t.pos,
                msg: format!("unexpected trailing {:?}", t.kind),
            });
        }
        Ok(e)
    }

    /// Evaluates at base point `b` and fiber coordinate `x`.
    pub fn eval(&self, b: &[f64], x: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::X => x,
            Expr::B(i) => b[*i],
            Expr::Neg(a) => -a.eval(b, x),
            Expr::Add(l, r) => l.eval(b, x) + r.eval(b, x),
            Expr::Sub(l, r) => l.eval(b, x) - r.eval(b, x),
            Expr::Mul(l, r) => l.eval(b, x) * r.eval(b, x),
            Expr::Div(l, r) => l.eval(b, x) / r.eval(b, x),
            Expr::Pow(l, r) => {
                let base = l.eval(b, x);
                match **r {
                    Expr::Const(c) if c == c.trunc() && c.abs() <= 64.0 => base.powi(c as i32),
                    _ => base.powf(r.eval(b, x)),
                }
            }
            Expr::Call(f, a) => f.apply(a.eval(b, x)),
        }
    }

    /// Largest base-coordinate index referenced plus one.
    pub fn base_arity(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::X => 0,
            Expr::B(i) => i + 1,
            Expr::Neg(a) | Expr::Call(_, a) => a.base_arity(),
            Expr::Add(l, r)
            | Expr::Sub(l, r)
            | Expr::Mul(l, r)
            | Expr::Div(l, r)
            | Expr::Pow(l, r) => l.base_arity().max(r.base_arity()),
        }
    }

    fn depends_on_x(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::B(_) => false,
            Expr::X => true,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on_x(),
            Expr::Add(l, r)
            | Expr::Sub(l, r)
            | Expr::Mul(l, r)
            | Expr::Div(l, r)
            | Expr::Pow(l, r) => l.depends_on_x() || r.depends_on_x(),
        }
    }

    /// Symbolic derivative with respect to `x`.
    pub fn diff_x(&self) -> Expr {
        use Expr::*;
        if !self.depends_on_x() {
            return Const(0.0);
        }
        match self {
            Const(_) | B(_) => Const(0.0),
            X => Const(1.0),
            Neg(a) => neg(a.diff_x()),
            Add(l, r) => add(l.diff_x(), r.diff_x()),
            Sub(l, r) => sub(l.diff_x(), r.diff_x()),
            Mul(l, r) => add(
                mul(l.diff_x(), (**r).clone()),
                mul((**l).clone(), r.diff_x()),
            ),
            Div(l, r) => div(
                sub(
                    mul(l.diff_x(), (**r).clone()),
                    mul((**l).clone(), r.diff_x()),
                ),
                pow((**r).clone(), Const(2.0)),
            ),
            Pow(l, r) if !r.depends_on_x() => mul(
                mul(
                    (**r).clone(),
                    pow((**l).clone(), sub((**r).clone(), Const(1.0))),
                ),
                l.diff_x(),
            ),
            Pow(l, r) => {
                // d(u^v) = u^v (v' ln u + v u' / u)
                let inner = add(
                    mul(r.diff_x(), Call(Func::Ln, l.clone())),
                    div(mul((**r).clone(), l.diff_x()), (**l).clone()),
                );
                mul(self.clone(), inner)
            }
            Call(f, a) => {
                let outer = match f {
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => neg(Call(Func::Sin, a.clone())),
                    Func::Exp => Call(Func::Exp, a.clone()),
                    Func::Ln => div(Const(1.0), (**a).clone()),
                    Func::Sqrt => div(Const(0.5), Call(Func::Sqrt, a.clone())),
                };
                mul(outer, a.diff_x())
            }
        }
    }
}

// Constructors with constant folding, so repeated differentiation stays small.

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

fn add(l: Expr, r: Expr) -> Expr {
    match (l, r) {
        (Expr::Const(a), Expr::Const(b)) => Expr::Const(a + b),
        (Expr::Const(0.0), e) | (e, Expr::Const(0.0)) => e,
        (l, r) => Expr::Add(Box::new(l), Box::new(r)),
    }
}

fn sub(l: Expr, r: Expr) -> Expr {
    match (l, r) {
        (Expr::Const(a), Expr::Const(b)) => Expr::Const(a - b),
        (e, Expr::Const(0.0)) => e,
        (Expr::Const(0.0), e) => neg(e),
        (l, r) => Expr::Sub(Box::new(l), Box::new(r)),
    }
}

fn mul(l: Expr, r: Expr) -> Expr {
    match (l, r) {
        (Expr::Const(a), Expr::Const(b)) => Expr::Const(a * b),
        (Expr::Const(0.0), _) | (_, Expr::Const(0.0)) => Expr::Const(0.0),
        (Expr::Const(1.0), e) | (e, Expr::Const(1.0)) => e,
        (l, r) => Expr::Mul(Box::new(l), Box::new(r)),
    }
}

fn div(l: Expr, r: Expr) -> Expr {
    match (l, r) {
        (Expr::Const(0.0), _) => Expr::Const(0.0),
        (e, Expr::Const(1.0)) => e,
        (l, r) => Expr::Div(Box::new(l), Box::new(r)),
    }
}

fn pow(l: Expr, r: Expr) -> Expr {
    match (l, r) {
        (_, Expr::Const(0.0)) => Expr::Const(1.0),
        (e, Expr::Const(1.0)) => e,
        (l, r) => Expr::Pow(Box::new(l), Box::new(r)),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::X => write!(f, "x"),
            Expr::B(i) => write!(f, "b{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(l, r) => write!(f, "({l} + {r})"),
            Expr::Sub(l, r) => write!(f, "({l} - {r})"),
            Expr::Mul(l, r) => write!(f, "({l} * {r})"),
            Expr::Div(l, r) => write!(f, "({l} / {r})"),
            Expr::Pow(l, r) => write!(f, "({l} ^ {r})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let kind = if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part, e.g. 1e-3; 'e' alone is Euler's constant
            if i + 1 < chars.len()
                && (chars[i] == 'e' || chars[i] == 'E')
                && (chars[i + 1].is_ascii_digit()
                    || ((chars[i + 1] == '-' || chars[i + 1] == '+')
                        && i + 2 < chars.len()
                        && chars[i + 2].is_ascii_digit()))
            {
                i += 2;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| Error::Parse {
                pos: start,
                msg: format!("malformed number '{text}'"),
            })?;
            TokenKind::Num(v)
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            TokenKind::Ident(chars[start..i].iter().collect())
        } else {
            i += 1;
            match c {
                '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
                '(' => TokenKind::LParen,
                ')' => TokenKind::RParen,
                other => {
                    return Err(Error::Parse {
                        pos: start,
                        msg: format!("unexpected character '{other}'"),
                    })
                }
            }
        };
        out.push(Token { kind, pos: start });
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn end_pos(&self) -> usize {
        self.tokens.last().map_or(0, |t| t.pos + 1)
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::RParen,
                ..
            }) => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(Error::Parse {
                pos: t.pos,
                msg: "expected ')'".into(),
            }),
            None => Err(Error::Parse {
                pos: self.end_pos(),
                msg: "expected ')' before end of input".into(),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(op) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.eat_op(&['-', '+']) {
            Some('-') => Ok(Expr::Neg(Box::new(self.unary()?))),
            Some(_) => self.unary(),
            None => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat_op(&['^']).is_some() {
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let Some(tok) = self.tokens.get(self.pos).cloned() else {
            return Err(Error::Parse {
                pos: self.end_pos(),
                msg: "unexpected end of input".into(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Num(v) => Ok(Expr::Const(v)),
            TokenKind::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            TokenKind::Ident(name) => self.identifier(&name, tok.pos),
            other => Err(Error::Parse {
                pos: tok.pos,
                msg: format!("unexpected {other:?}"),
            }),
        }
    }

    fn identifier(&mut self, name: &str, pos: usize) -> Result<Expr> {
        let func = match name {
            "x" => return Ok(Expr::X),
            "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
            "e" => return Ok(Expr::Const(std::f64::consts::E)),
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            _ => {
                if let Some(digits) = name.strip_prefix('b') {
                    if let Ok(i) = digits.parse::<usize>() {
                        if i >= 1 {
                            return Ok(Expr::B(i - 1));
                        }
                    }
                }
                return Err(Error::Parse {
                    pos,
                    msg: format!("unknown identifier '{name}'"),
                });
            }
        };
        match self.peek() {
            Some(Token {
                kind: TokenKind::LParen,
                ..
            }) => self.pos += 1,
            _ => {
                return Err(Error::Parse {
                    pos,
                    msg: format!("expected '(' after {name}"),
                })
            }
        }
        let arg = self.expr()?;
        self.expect_rparen()?;
        Ok(Expr::Call(func, Box::new(arg)))
    }
}
