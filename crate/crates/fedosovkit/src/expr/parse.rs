//! Parenthesized prefix syntax for expressions.
//!
//! This is the wire format used by the CLI and the connection JSON files.
//! Grammar (whitespace separates tokens, `#` starts a line comment):
//!
//! ```text
//! expr     ::= rational | symbol | call
//! call     ::= "(" head expr* ")"
//! head     ::= "+" | "-" | "*" | "/" | "^"
//!            | "sin" | "cos" | "exp" | "sqrt" | "ln"
//! rational ::= ["-"] digits ["/" digits]
//! symbol   ::= "hbar" | "pi" | coordinate-name | "x" digits
//! ```
//!
//! Operator arities: `(+ ...)` and `(* ...)` take any number of operands
//! (empty sum is `0`, empty product is `1`); `(- a)` negates and
//! `(- a b ...)` subtracts the rest from `a`; `(/ a b)` takes exactly two;
//! `(^ a k)` takes an expression and an integer literal.  Unary functions
//! take exactly one operand.
//!
//! Coordinates may be referred to by chart name (`q`, `p`, `T`, `H`, ...)
//! when a name table is supplied, or positionally as `x1`, `x2`, ...
//! (1-based).  Example: the harmonic Hamiltonian on a flat chart is
//! `(* 1/2 (+ (^ q 2) (^ p 2)))`.
//!
//! Printing is the inverse of parsing except for opaque symbols, which
//! render as their display label (`V'`, `W^(0,1)`); they carry registered
//! derivative tables that a textual form cannot reconstruct, so such output
//! is for reading, not for feeding back in.

use super::{Node, ScalarExpr};
use crate::error::{Error, Result};
use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::Signed;

/// Coordinate-name table for a chart, mapping names to variable indices.
#[derive(Clone, Debug, Default)]
pub struct CoordNames {
    names: Vec<String>,
}

impl CoordNames {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Self {
        CoordNames {
            names: names.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name_of(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

struct Token<'a> {
    text: &'a str,
    offset: usize,
}

fn tokenize(input: &str) -> Result<Vec<Token<'_>>> {
    let mut out = Vec::new();
    let bytes = input.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if c == '(' || c == ')' {
            out.push(Token {
                text: &input[i..i + 1],
                offset: i,
            });
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() {
                let c = bytes[i] as char;
                if c.is_whitespace() || c == '(' || c == ')' || c == '#' {
                    break;
                }
                i += 1;
            }
            out.push(Token {
                text: &input[start..i],
                offset: start,
            });
        }
    }
    Ok(out)
}

/// Parse a prefix-syntax expression.  Coordinate names resolve through
/// `names`; `x<k>` always resolves to variable `k-1`.
pub fn parse_expr(input: &str, names: &CoordNames) -> Result<ScalarExpr> {
    let tokens = tokenize(input)?;
    let mut pos = 0;
    let expr = parse_one(&tokens, &mut pos, names, input.len())?;
    if pos != tokens.len() {
        return Err(Error::Parse {
            offset: tokens[pos].offset,
            message: "unexpected trailing input".into(),
        });
    }
    Ok(expr)
}

fn parse_one(
    tokens: &[Token<'_>],
    pos: &mut usize,
    names: &CoordNames,
    input_len: usize,
) -> Result<ScalarExpr> {
    let tok = tokens.get(*pos).ok_or(Error::Parse {
        offset: input_len,
        message: "unexpected end of input".into(),
    })?;
    *pos += 1;
    match tok.text {
        "(" => parse_call(tokens, pos, names, input_len),
        ")" => Err(Error::Parse {
            offset: tok.offset,
            message: "unexpected `)`".into(),
        }),
        text => parse_atom(text, tok.offset, names),
    }
}

fn parse_call(
    tokens: &[Token<'_>],
    pos: &mut usize,
    names: &CoordNames,
    input_len: usize,
) -> Result<ScalarExpr> {
    let head = tokens.get(*pos).ok_or(Error::Parse {
        offset: input_len,
        message: "expected operator after `(`".into(),
    })?;
    *pos += 1;
    let head_offset = head.offset;
    let head_text = head.text;

    let mut args: Vec<ScalarExpr> = Vec::new();
    // `^` takes a literal integer exponent as its second operand.
    if head_text == "^" {
        let base = parse_one(tokens, pos, names, input_len)?;
        let etok = tokens.get(*pos).ok_or(Error::Parse {
            offset: input_len,
            message: "expected integer exponent".into(),
        })?;
        *pos += 1;
        let exp: i32 = etok.text.parse().map_err(|_| Error::Parse {
            offset: etok.offset,
            message: format!("exponent must be an integer, got `{}`", etok.text),
        })?;
        expect_close(tokens, pos, input_len)?;
        return Ok(base.powi(exp));
    }

    loop {
        let tok = tokens.get(*pos).ok_or(Error::Parse {
            offset: input_len,
            message: "missing `)`".into(),
        })?;
        if tok.text == ")" {
            *pos += 1;
            break;
        }
        args.push(parse_one(tokens, pos, names, input_len)?);
    }

    match head_text {
        "+" => Ok(ScalarExpr::sum(args)),
        "*" => Ok(ScalarExpr::product(args)),
        "-" => match args.len() {
            0 => Err(Error::Parse {
                offset: head_offset,
                message: "`-` needs at least one operand".into(),
            }),
            1 => Ok(-args.pop_first()),
            _ => {
                let mut it = args.into_iter();
                let first = it.next().unwrap();
                Ok(first - ScalarExpr::sum(it.collect()))
            }
        },
        "/" => {
            if args.len() != 2 {
                return Err(Error::Parse {
                    offset: head_offset,
                    message: format!("`/` needs exactly two operands, got {}", args.len()),
                });
            }
            let den = args.pop().unwrap();
            let num = args.pop().unwrap();
            Ok(ScalarExpr::quotient(num, den))
        }
        "sin" | "cos" | "exp" | "sqrt" | "ln" => {
            if args.len() != 1 {
                return Err(Error::Parse {
                    offset: head_offset,
                    message: format!(
                        "`{head_text}` needs exactly one operand, got {}",
                        args.len()
                    ),
                });
            }
            let a = args.pop().unwrap();
            Ok(match head_text {
                "sin" => a.sin(),
                "cos" => a.cos(),
                "exp" => a.exp(),
                "sqrt" => a.sqrt(),
                _ => a.ln(),
            })
        }
        other => Err(Error::Parse {
            offset: head_offset,
            message: format!("unknown operator `{other}`"),
        }),
    }
}

trait PopFirst {
    fn pop_first(self) -> ScalarExpr;
}
impl PopFirst for Vec<ScalarExpr> {
    fn pop_first(mut self) -> ScalarExpr {
        self.remove(0)
    }
}

fn expect_close(tokens: &[Token<'_>], pos: &mut usize, input_len: usize) -> Result<()> {
    let tok = tokens.get(*pos).ok_or(Error::Parse {
        offset: input_len,
        message: "missing `)`".into(),
    })?;
    if tok.text != ")" {
        return Err(Error::Parse {
            offset: tok.offset,
            message: format!("expected `)`, got `{}`", tok.text),
        });
    }
    *pos += 1;
    Ok(())
}

fn parse_atom(text: &str, offset: usize, names: &CoordNames) -> Result<ScalarExpr> {
    let first = text.chars().next().unwrap();
    if first.is_ascii_digit() || (first == '-' && text.len() > 1) {
        return parse_rational(text, offset);
    }
    match text {
        "hbar" => return Ok(ScalarExpr::hbar()),
        "pi" => return Ok(ScalarExpr::pi()),
        _ => {}
    }
    if let Some(i) = names.index_of(text) {
        return Ok(ScalarExpr::var(i));
    }
    if let Some(rest) = text.strip_prefix('x') {
        if let Ok(k) = rest.parse::<usize>() {
            if k >= 1 {
                return Ok(ScalarExpr::var(k - 1));
            }
        }
    }
    Err(Error::Parse {
        offset,
        message: if names.is_empty() {
            format!("unknown symbol `{text}` (coordinates are x1, x2, ...)")
        } else {
            format!(
                "unknown symbol `{text}` (chart coordinates: {})",
                names.names().join(", ")
            )
        },
    })
}

fn parse_rational(text: &str, offset: usize) -> Result<ScalarExpr> {
    let err = |message: String| Error::Parse { offset, message };
    if let Some((n, d)) = text.split_once('/') {
        let num: BigInt = n
            .parse()
            .map_err(|_| err(format!("bad integer `{n}`")))?;
        let den: BigInt = d
            .parse()
            .map_err(|_| err(format!("bad integer `{d}`")))?;
        if den == BigInt::from(0) {
            return Err(err("zero denominator in rational literal".into()));
        }
        Ok(ScalarExpr::big_rational(BigRational::new(num, den)))
    } else {
        let n: BigInt = text
            .parse()
            .map_err(|_| err(format!("bad number `{text}`")))?;
        Ok(ScalarExpr::big_rational(BigRational::from_integer(n)))
    }
}

/// Render in the prefix syntax.  With `names` supplied, variables print by
/// chart name; otherwise as `x1`, `x2`, ...
pub(crate) fn to_prefix(e: &ScalarExpr, names: Option<&CoordNames>) -> String {
    let mut out = String::new();
    write_prefix(e, names, &mut out);
    out
}

fn write_prefix(e: &ScalarExpr, names: Option<&CoordNames>, out: &mut String) {
    match &*e.0 {
        Node::Rational(r) => {
            if r.is_integer() {
                out.push_str(&r.numer().to_string());
            } else if r.is_negative() {
                // keep the sign on the numerator token
                out.push_str(&format!("{}/{}", r.numer(), r.denom()));
            } else {
                out.push_str(&format!("{}/{}", r.numer(), r.denom()));
            }
        }
        Node::Var(i) => match names.and_then(|n| n.name_of(*i)) {
            Some(name) => out.push_str(name),
            None => out.push_str(&format!("x{}", i + 1)),
        },
        Node::Hbar => out.push_str("hbar"),
        Node::Pi => out.push_str("pi"),
        Node::Sum(v) => {
            out.push_str("(+");
            for x in v {
                out.push(' ');
                write_prefix(x, names, out);
            }
            out.push(')');
        }
        Node::Product(v) => {
            out.push_str("(*");
            for x in v {
                out.push(' ');
                write_prefix(x, names, out);
            }
            out.push(')');
        }
        Node::Quotient(a, b) => {
            out.push_str("(/ ");
            write_prefix(a, names, out);
            out.push(' ');
            write_prefix(b, names, out);
            out.push(')');
        }
        Node::IntPow(a, k) => {
            out.push_str("(^ ");
            write_prefix(a, names, out);
            out.push_str(&format!(" {k})"));
        }
        Node::Sin(a) | Node::Cos(a) | Node::Exp(a) | Node::Sqrt(a) | Node::Ln(a) => {
            let name = match &*e.0 {
                Node::Sin(_) => "sin",
                Node::Cos(_) => "cos",
                Node::Exp(_) => "exp",
                Node::Sqrt(_) => "sqrt",
                _ => "ln",
            };
            out.push('(');
            out.push_str(name);
            out.push(' ');
            write_prefix(a, names, out);
            out.push(')');
        }
        Node::Opaque(r) => out.push_str(&r.label()),
    }
}
