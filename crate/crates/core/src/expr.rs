//! Infix expression language for model nonlinearities.
//!
//! The grammar is the usual one: `+ -` bind loosest, then `* /`, then unary
//! minus, then `^` (right associative). Literals accept scientific notation.
//! Identifiers resolve, in order, to declared variables, named parameters,
//! the constant `pi`, or one of the functions `exp log ln sin cos sqrt`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::dual::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

/// Raised when an evaluation guard trips (division by zero, log of a
/// non-positive number, ...).
#[derive(Debug, Clone, PartialEq, Error)]
#[error("evaluation guard: {0}")]
pub struct EvalError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Variable in evaluation slot `slot`.
    Var { slot: usize, name: String },
    Param { name: String, value: f64 },
    Neg(Box<Expr>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call { func: Func, arg: Box<Expr> },
}

impl Expr {
    pub fn parse(
        source: &str,
        variables: &[&str],
        params: &BTreeMap<String, f64>,
    ) -> Result<Expr, ParseError> {
        let tokens = lex(source)?;
        if tokens.is_empty() {
            return Err(ParseError::Empty);
        }
        let mut parser = Parser {
            tokens,
            pos: 0,
            end: source.len(),
            variables,
            params,
        };
        let expr = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ParseError::Syntax {
                offset: tok.offset,
                message: format!("expected operator or end of input, found {}", tok.kind),
            });
        }
        Ok(expr)
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// Replace every occurrence of variable `slot` by `with`.
    pub fn substitute(&self, slot: usize, with: &Expr) -> Expr {
        match self {
            Expr::Var { slot: s, .. } if *s == slot => with.clone(),
            Expr::Const(_) | Expr::Var { .. } | Expr::Param { .. } => self.clone(),
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute(slot, with))),
            Expr::Binary { op, lhs, rhs } => {
                Expr::binary(*op, lhs.substitute(slot, with), rhs.substitute(slot, with))
            }
            Expr::Call { func, arg } => Expr::Call {
                func: *func,
                arg: Box::new(arg.substitute(slot, with)),
            },
        }
    }

    pub fn eval<T: Scalar>(&self, vars: &[T]) -> Result<T, EvalError> {
        let out = self.eval_inner(vars)?;
        if out.value().is_finite() {
            Ok(out)
        } else {
            Err(EvalError(format!("non-finite result {}", out.value())))
        }
    }

    fn eval_inner<T: Scalar>(&self, vars: &[T]) -> Result<T, EvalError> {
        Ok(match self {
            Expr::Const(c) => T::constant(*c),
            Expr::Var { slot, .. } => vars[*slot],
            Expr::Param { value, .. } => T::constant(*value),
            Expr::Neg(e) => -e.eval_inner(vars)?,
            Expr::Binary { op, lhs, rhs } => {
                if let (BinOp::Pow, Some(n)) = (op, rhs.integer_exponent()) {
                    return Ok(lhs.eval_inner(vars)?.powi(n));
                }
                let a = lhs.eval_inner(vars)?;
                let b = rhs.eval_inner(vars)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b.value() == 0.0 {
                            return Err(EvalError("division by zero".into()));
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        if a.value() <= 0.0 {
                            return Err(EvalError(format!(
                                "non-integer power of non-positive base {}",
                                a.value()
                            )));
                        }
                        (b * a.ln()).exp()
                    }
                }
            }
            Expr::Call { func, arg } => {
                let a = arg.eval_inner(vars)?;
                match func {
                    Func::Exp => a.exp(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Log => {
                        if a.value() <= 0.0 {
                            return Err(EvalError(format!("log of {}", a.value())));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a.value() <= 0.0 {
                            return Err(EvalError(format!("sqrt of {}", a.value())));
                        }
                        a.sqrt()
                    }
                }
            }
        })
    }

    fn integer_exponent(&self) -> Option<i32> {
        if !self.is_constant() {
            return None;
        }
        let c: f64 = self.eval_inner(&[]).ok()?;
        (c.fract() == 0.0 && c.abs() <= 64.0).then_some(c as i32)
    }

    fn is_constant(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Param { .. } => true,
            Expr::Var { .. } => false,
            Expr::Neg(e) => e.is_constant(),
            Expr::Binary { lhs, rhs, .. } => lhs.is_constant() && rhs.is_constant(),
            Expr::Call { arg, .. } => arg.is_constant(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => match op {
                BinOp::Add | BinOp::Sub => 1,
                BinOp::Mul | BinOp::Div => 2,
                BinOp::Pow => 4,
            },
            Expr::Neg(_) => 3,
            Expr::Const(c) if *c < 0.0 => 3,
            _ => 5,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn wrap(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
            if parens {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Const(c) if *c < 0.0 => write!(f, "-{:?}", -c),
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var { name, .. } | Expr::Param { name, .. } => write!(f, "{name}"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                wrap(f, e, e.precedence() < 3)
            }
            Expr::Call { func, arg } => write!(f, "{}({arg})", func.name()),
            Expr::Binary { op, lhs, rhs } => {
                let p = self.precedence();
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                if *op == BinOp::Pow {
                    wrap(f, lhs, lhs.precedence() <= p)?;
                    write!(f, "^")?;
                    wrap(f, rhs, rhs.precedence() < p)
                } else {
                    wrap(f, lhs, lhs.precedence() < p)?;
                    write!(f, " {sym} ")?;
                    wrap(f, rhs, rhs.precedence() <= p)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Sym(char),
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Number(n) => write!(f, "number {n}"),
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Sym(c) => write!(f, "`{c}`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
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
            let value = text.parse::<f64>().map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token {
                kind: TokenKind::Number(value),
                offset: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Ident(src[start..i].to_string()),
                offset: start,
            });
        } else if "+-*/^()".contains(c) {
            out.push(Token {
                kind: TokenKind::Sym(c),
                offset: i,
            });
            i += 1;
        } else {
            return Err(ParseError::Syntax {
                offset: i,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
    variables: &'a [&'a str],
    params: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_sym(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Sym(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek_sym() {
            let at = self.peek().map(|t| t.offset).unwrap_or(self.end);
            self.pos += 1;
            let rhs = self.operand(at, c, Self::term)?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek_sym() {
            let at = self.peek().map(|t| t.offset).unwrap_or(self.end);
            self.pos += 1;
            let rhs = self.operand(at, c, Self::unary)?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek_sym() {
            Some(c @ ('-' | '+')) => {
                let at = self.peek().map(|t| t.offset).unwrap_or(self.end);
                self.pos += 1;
                let inner = self.operand(at, c, Self::unary)?;
                Ok(if c == '-' { Expr::Neg(Box::new(inner)) } else { inner })
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek_sym() == Some('^') {
            let at = self.peek().map(|t| t.offset).unwrap_or(self.end);
            self.pos += 1;
            let exponent = self.operand(at, '^', Self::unary)?;
            return Ok(Expr::binary(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    /// Parse the operand of the operator `op` found at `op_offset`. A missing
    /// operand is reported at the operator.
    fn operand(
        &mut self,
        op_offset: usize,
        op: char,
        rule: fn(&mut Self) -> Result<Expr, ParseError>,
    ) -> Result<Expr, ParseError> {
        let starts_operand = match self.peek() {
            None => false,
            Some(Token {
                kind: TokenKind::Sym(c),
                ..
            }) => matches!(c, '(' | '-' | '+'),
            Some(_) => true,
        };
        if !starts_operand {
            let found = self
                .peek()
                .map(|t| t.kind.to_string())
                .unwrap_or_else(|| "end of input".to_string());
            return Err(ParseError::Syntax {
                offset: op_offset,
                message: format!("expected operand after `{op}`, found {found}"),
            });
        }
        rule(self)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(ParseError::Syntax {
                offset: self.end,
                message: "expected operand, found end of input".into(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Number(v) => Ok(Expr::Const(v)),
            TokenKind::Sym('(') => {
                let inner = self.expr()?;
                match self.peek_sym() {
                    Some(')') => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(ParseError::Syntax {
                        offset: self.peek().map(|t| t.offset).unwrap_or(self.end),
                        message: format!("expected `)` closing `(` at offset {}", tok.offset),
                    }),
                }
            }
            TokenKind::Sym(c) => Err(ParseError::Syntax {
                offset: tok.offset,
                message: format!("expected operand, found `{c}`"),
            }),
            TokenKind::Ident(name) => {
                if let Some(slot) = self.variables.iter().position(|v| *v == name) {
                    return Ok(Expr::Var { slot, name });
                }
                if let Some(value) = self.params.get(&name) {
                    return Ok(Expr::Param {
                        name,
                        value: *value,
                    });
                }
                if name == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                if let Some(func) = Func::lookup(&name) {
                    if self.peek_sym() != Some('(') {
                        return Err(ParseError::Syntax {
                            offset: tok.offset,
                            message: format!("expected `(` after function `{name}`"),
                        });
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek_sym() != Some(')') {
                        return Err(ParseError::Syntax {
                            offset: self.peek().map(|t| t.offset).unwrap_or(self.end),
                            message: format!("expected `)` closing call to `{name}`"),
                        });
                    }
                    self.pos += 1;
                    return Ok(Expr::Call {
                        func,
                        arg: Box::new(arg),
                    });
                }
                Err(ParseError::UnknownIdentifier {
                    name,
                    offset: tok.offset,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::Dual2;

    fn uv(src: &str) -> Result<Expr, ParseError> {
        Expr::parse(src, &["u", "v"], &BTreeMap::new())
    }

    #[test]
    fn precedence_and_associativity() {
        let e = uv("2^3^2").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]).unwrap(), 512.0);
        let e = uv("-u^2").unwrap();
        assert_eq!(e.eval(&[3.0, 0.0]).unwrap(), -9.0);
        let e = uv("u - v - 1").unwrap();
        assert_eq!(e.eval(&[5.0, 2.0]).unwrap(), 2.0);
        let e = uv("u / v / 2").unwrap();
        assert_eq!(e.eval(&[8.0, 2.0]).unwrap(), 2.0);
        let e = uv("1.5e-1 * 2E1 + .5").unwrap();
        assert!((e.eval(&[0.0, 0.0]).unwrap() - 3.5).abs() < 1e-15);
    }

    #[test]
    fn malformed_operator_reports_operator_offset() {
        match uv("1 +* v") {
            Err(ParseError::Syntax { offset, message }) => {
                assert_eq!(offset, 2);
                assert!(message.contains("expected operand"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn errors() {
        assert_eq!(uv("   "), Err(ParseError::Empty));
        assert!(matches!(
            uv("u * w"),
            Err(ParseError::UnknownIdentifier { ref name, offset: 4 }) if name == "w"
        ));
        assert!(matches!(uv("(u + v"), Err(ParseError::Syntax { .. })));
        assert!(matches!(uv("u v"), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(uv("exp u"), Err(ParseError::Syntax { .. })));
        assert!(matches!(uv("u # v"), Err(ParseError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn guards() {
        let e = uv("log(u)").unwrap();
        assert!(e.eval(&[0.0, 1.0]).is_err());
        let e = uv("1 / (u - v)").unwrap();
        assert!(e.eval(&[1.0, 1.0]).is_err());
        let e = uv("sqrt(u)").unwrap();
        assert!(e.eval(&[-1.0, 0.0]).is_err());
        let e = uv("u ^ 0.5").unwrap();
        assert!(e.eval(&[-1.0, 0.0]).is_err());
        // integer powers of negative bases are fine
        let e = uv("u ^ 3").unwrap();
        assert_eq!(e.eval(&[-2.0, 0.0]).unwrap(), -8.0);
    }

    #[test]
    fn parameters_and_display() {
        let mut params = BTreeMap::new();
        params.insert("k".to_string(), 2.5);
        let e = Expr::parse("k * u^2 - (v - 1) / -k", &["u", "v"], &params).unwrap();
        let printed = e.to_string();
        let again = Expr::parse(&printed, &["u", "v"], &params).unwrap();
        assert_eq!(e, again, "{printed}");
    }

    #[test]
    fn dual_gradient_of_parsed_tree() {
        let e = uv("u*(1-v) + sin(u*v)").unwrap();
        let g = e
            .eval(&[Dual2::variable(0.3, 0), Dual2::variable(-0.7, 1)])
            .unwrap();
        let (u, v) = (0.3f64, -0.7f64);
        assert!((g.d[0] - ((1.0 - v) + v * (u * v).cos())).abs() < 1e-15);
        assert!((g.d[1] - (-u + u * (u * v).cos())).abs() < 1e-15);
    }
}
