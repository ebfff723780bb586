//! Scalar arithmetic expressions in the variables `x1`, `x2`.
//!
//! Coefficients and data of a problem (`a`, `b`, `c`, `f`, `g`) are written as
//! short formulas in configuration files. The grammar is deliberately small:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' exponent)*
//! exponent:= '-' exponent | primary
//! primary := number | x1 | x2 | name '(' sum [',' sum] ')' | '(' sum ')'
//! ```
//!
//! Functions: `exp`, `sin`, `cos`, `sqrt`, `abs` (one argument) and `min`,
//! `max` (two arguments). All binary operators are left-associative.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("function `{name}` at byte {offset} expects {expected} argument(s), got {got}")]
    Arity {
        offset: usize,
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("variable x{index} is not supplied by a point of dimension {dim}")]
    MissingVariable { index: usize, dim: usize },
    #[error("evaluation produced a non-finite value ({context})")]
    NonFinite { context: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Exp,
    Sin,
    Cos,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

/// Syntax tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// Zero-based variable index: `x1` is 0, `x2` is 1.
    Var(usize),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
}

/// A parsed, immutable expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    source: String,
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        let root = Parser::new(source).parse_all()?;
        Ok(Self {
            root,
            source: source.to_string(),
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            root: Node::Const(value),
            source: format!("{value:?}"),
        }
    }

    pub fn from_node(root: Node) -> Self {
        let source = root.to_string();
        Self { root, source }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// The text this expression was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Number of variables referenced (0, 1 or 2): one more than the highest index used.
    pub fn arity(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Const(_) => 0,
                Node::Var(i) => i + 1,
                Node::Unary(_, a) => walk(a),
                Node::Binary(_, a, b) => walk(a).max(walk(b)),
            }
        }
        walk(&self.root)
    }

    /// Value of a variable-free expression.
    pub fn constant_value(&self) -> Option<f64> {
        if self.arity() == 0 {
            self.eval(&[]).ok()
        } else {
            None
        }
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        eval_node(&self.root, point)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl fmt::Display for Node {
    /// Fully parenthesized rendering that parses back to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) if c.is_sign_negative() => write!(f, "(-{:?})", -c),
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Unary(UnaryOp::Neg, a) if matches!(**a, Node::Const(_)) => write!(f, "(-({a}))"),
            Node::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Node::Unary(op, a) => {
                let name = match op {
                    UnaryOp::Abs => "abs",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}({a})")
            }
            Node::Binary(BinaryOp::Min, a, b) => write!(f, "min({a}, {b})"),
            Node::Binary(BinaryOp::Max, a, b) => write!(f, "max({a}, {b})"),
            Node::Binary(op, a, b) => {
                let sym = match op {
                    BinaryOp::Add => "+",
                    BinaryOp::Sub => "-",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                    BinaryOp::Pow => "^",
                    _ => unreachable!(),
                };
                write!(f, "({a} {sym} {b})")
            }
        }
    }
}

fn finite(v: f64, context: &'static str) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::NonFinite { context })
    }
}

fn eval_node(node: &Node, point: &[f64]) -> Result<f64, ExprError> {
    match node {
        Node::Const(c) => finite(*c, "constant"),
        Node::Var(i) => point
            .get(*i)
            .copied()
            .ok_or(ExprError::MissingVariable {
                index: i + 1,
                dim: point.len(),
            }),
        Node::Unary(op, a) => {
            let x = eval_node(a, point)?;
            match op {
                UnaryOp::Neg => Ok(-x),
                UnaryOp::Abs => Ok(x.abs()),
                UnaryOp::Exp => finite(x.exp(), "exp overflow"),
                UnaryOp::Sin => Ok(x.sin()),
                UnaryOp::Cos => Ok(x.cos()),
                UnaryOp::Sqrt if x < 0.0 => Err(ExprError::NonFinite {
                    context: "sqrt of a negative number",
                }),
                UnaryOp::Sqrt => Ok(x.sqrt()),
            }
        }
        Node::Binary(op, a, b) => {
            let x = eval_node(a, point)?;
            let y = eval_node(b, point)?;
            match op {
                BinaryOp::Add => finite(x + y, "addition overflow"),
                BinaryOp::Sub => finite(x - y, "subtraction overflow"),
                BinaryOp::Mul => finite(x * y, "multiplication overflow"),
                BinaryOp::Div if y == 0.0 => Err(ExprError::NonFinite {
                    context: "division by zero",
                }),
                BinaryOp::Div => finite(x / y, "division overflow"),
                BinaryOp::Pow => {
                    if x < 0.0 && y.fract() != 0.0 {
                        return Err(ExprError::NonFinite {
                            context: "non-integer power of a negative base",
                        });
                    }
                    if x == 0.0 && y < 0.0 {
                        return Err(ExprError::NonFinite {
                            context: "negative power of zero",
                        });
                    }
                    finite(x.powf(y), "power overflow")
                }
                BinaryOp::Min => Ok(x.min(y)),
                BinaryOp::Max => Ok(x.max(y)),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    tok: Tok,
    tok_start: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            pos: 0,
            tok: Tok::End,
            tok_start: 0,
        }
    }

    fn syntax<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            offset,
            message: message.into(),
        })
    }

    fn advance(&mut self) -> Result<(), ExprError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.tok_start = self.pos;
        if self.pos >= bytes.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let c = bytes[self.pos];
        if c.is_ascii_digit() || c == b'.' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
                self.pos += 1;
            }
            if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
                let save = self.pos;
                self.pos += 1;
                if self.pos < bytes.len() && (bytes[self.pos] == b'+' || bytes[self.pos] == b'-') {
                    self.pos += 1;
                }
                if self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                    while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                } else {
                    self.pos = save;
                }
            }
            let text = &self.src[start..self.pos];
            match text.parse::<f64>() {
                Ok(v) => self.tok = Tok::Num(v),
                Err(_) => return self.syntax(start, format!("malformed number `{text}`")),
            }
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                self.pos += 1;
            }
            self.tok = Tok::Ident(self.src[start..self.pos].to_string());
        } else if b"+-*/^(),".contains(&c) {
            self.pos += 1;
            self.tok = Tok::Sym(c as char);
        } else {
            let ch = self.src[self.pos..].chars().next().unwrap_or('?');
            return self.syntax(self.pos, format!("unexpected character `{ch}`"));
        }
        Ok(())
    }

    fn expect(&mut self, sym: char) -> Result<(), ExprError> {
        if self.tok == Tok::Sym(sym) {
            self.advance()
        } else {
            self.syntax(self.tok_start, format!("expected `{sym}`"))
        }
    }

    fn parse_all(mut self) -> Result<Node, ExprError> {
        self.advance()?;
        if self.tok == Tok::End {
            return self.syntax(0, "empty expression");
        }
        let node = self.sum()?;
        if self.tok != Tok::End {
            return self.syntax(self.tok_start, "unexpected trailing input");
        }
        Ok(node)
    }

    fn sum(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.tok {
                Tok::Sym('+') => BinaryOp::Add,
                Tok::Sym('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.product()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Sym('*') => BinaryOp::Mul,
                Tok::Sym('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.tok == Tok::Sym('-') {
            self.advance()?;
            let literal = matches!(self.tok, Tok::Num(_));
            let operand = self.unary()?;
            return Ok(negate(operand, literal));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.primary()?;
        while self.tok == Tok::Sym('^') {
            self.advance()?;
            let rhs = self.exponent()?;
            lhs = Node::Binary(BinaryOp::Pow, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn exponent(&mut self) -> Result<Node, ExprError> {
        if self.tok == Tok::Sym('-') {
            self.advance()?;
            let literal = matches!(self.tok, Tok::Num(_));
            let operand = self.exponent()?;
            return Ok(negate(operand, literal));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let start = self.tok_start;
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Node::Const(v))
            }
            Tok::Sym('(') => {
                self.advance()?;
                let inner = self.sum()?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.advance()?;
                match name.as_str() {
                    "x1" => return Ok(Node::Var(0)),
                    "x2" => return Ok(Node::Var(1)),
                    _ => {}
                }
                let (expected, unary, binary) = match name.as_str() {
                    "exp" => (1, Some(UnaryOp::Exp), None),
                    "sin" => (1, Some(UnaryOp::Sin), None),
                    "cos" => (1, Some(UnaryOp::Cos), None),
                    "sqrt" => (1, Some(UnaryOp::Sqrt), None),
                    "abs" => (1, Some(UnaryOp::Abs), None),
                    "min" => (2, None, Some(BinaryOp::Min)),
                    "max" => (2, None, Some(BinaryOp::Max)),
                    _ => return Err(ExprError::UnknownIdentifier { offset: start, name }),
                };
                if self.tok != Tok::Sym('(') {
                    return self.syntax(self.tok_start, format!("expected `(` after `{name}`"));
                }
                self.advance()?;
                let mut args = vec![self.sum()?];
                while self.tok == Tok::Sym(',') {
                    self.advance()?;
                    args.push(self.sum()?);
                }
                self.expect(')')?;
                if args.len() != expected {
                    return Err(ExprError::Arity {
                        offset: start,
                        name,
                        expected,
                        got: args.len(),
                    });
                }
                let mut args = args.into_iter();
                let first = Box::new(args.next().unwrap());
                Ok(match (unary, binary) {
                    (Some(op), _) => Node::Unary(op, first),
                    (_, Some(op)) => Node::Binary(op, first, Box::new(args.next().unwrap())),
                    _ => unreachable!(),
                })
            }
            Tok::End => self.syntax(start, "unexpected end of input"),
            Tok::Sym(c) => self.syntax(start, format!("unexpected `{c}`")),
        }
    }
}

/// Unary minus written directly before a numeric literal folds into a negative constant.
fn negate(node: Node, literal: bool) -> Node {
    match node {
        Node::Const(c) if literal => Node::Const(-c),
        other => Node::Unary(UnaryOp::Neg, Box::new(other)),
    }
}
