//! Constant-expression evaluation for ranges and parameter values.

use super::lexer::{tokenize, Token, TokenKind};
use std::collections::BTreeMap;
use std::path::Path;

const MAX_DEPTH: usize = 16;

/// Evaluates `text` with parameter defaults from `params`.
/// Returns `None` for anything non-constant or containing x/z bits.
pub fn eval_const(text: &str, params: &BTreeMap<String, String>) -> Option<i64> {
    eval_depth(text, params, 0)
}

fn eval_depth(text: &str, params: &BTreeMap<String, String>, depth: usize) -> Option<i64> {
    if depth > MAX_DEPTH {
        return None;
    }
    let toks = tokenize(text, Path::new("<expr>")).ok()?;
    let mut p = Eval {
        toks: &toks,
        pos: 0,
        params,
        depth,
    };
    let v = p.ternary()?;
    (p.pos == toks.len()).then_some(v)
}

/// Width of a packed range such as `[WIDTH-1:0]`.
pub fn range_width(range: &str, params: &BTreeMap<String, String>) -> Option<u32> {
    let inner = range.trim().strip_prefix('[')?.strip_suffix(']')?;
    let (msb, lsb) = split_range(inner)?;
    let msb = eval_const(msb, params)?;
    let lsb = eval_const(lsb, params)?;
    u32::try_from((msb - lsb).abs() + 1).ok()
}

/// Splits `a:b` at the top-level colon, ignoring colons inside `?:`.
fn split_range(inner: &str) -> Option<(&str, &str)> {
    let mut depth = 0i32;
    let mut pending_q = 0;
    for (i, c) in inner.char_indices() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            '?' if depth == 0 => pending_q += 1,
            ':' if depth == 0 => {
                if pending_q > 0 {
                    pending_q -= 1;
                } else {
                    return Some((&inner[..i], &inner[i + 1..]));
                }
            }
            _ => {}
        }
    }
    None
}

/// Value of a literal such as `12`, `8'hFF`, `'b101`.
pub fn parse_number(text: &str) -> Option<i64> {
    let t: String = text
        .chars()
        .filter(|&c| c != '_' && !c.is_whitespace())
        .collect();
    match t.split_once('\'') {
        None => t.parse().ok(),
        Some((_, based)) => {
            let based = based.trim_start_matches(['s', 'S']);
            let mut chars = based.chars();
            let radix = match chars.next()?.to_ascii_lowercase() {
                'b' => 2,
                'o' => 8,
                'd' => 10,
                'h' => 16,
                _ => return None,
            };
            i64::from_str_radix(chars.as_str(), radix).ok()
        }
    }
}

struct Eval<'a, 't> {
    toks: &'t [Token<'a>],
    pos: usize,
    params: &'t BTreeMap<String, String>,
    depth: usize,
}

impl Eval<'_, '_> {
    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).map(|t| t.text)
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.peek() == Some(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ternary(&mut self) -> Option<i64> {
        let c = self.binary(0)?;
        if self.eat("?") {
            let a = self.ternary()?;
            if !self.eat(":") {
                return None;
            }
            let b = self.ternary()?;
            Some(if c != 0 { a } else { b })
        } else {
            Some(c)
        }
    }

    fn binary(&mut self, min_prec: u8) -> Option<i64> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek() {
            let Some(prec) = precedence(op) else { break };
            if prec < min_prec {
                break;
            }
            let op = op.to_string();
            self.pos += 1;
            // `**` is right associative.
            let next = if op == "**" { prec } else { prec + 1 };
            let rhs = self.binary(next)?;
            lhs = apply(&op, lhs, rhs)?;
        }
        Some(lhs)
    }

    fn unary(&mut self) -> Option<i64> {
        match self.peek()? {
            "-" => {
                self.pos += 1;
                self.unary().map(|v| -v)
            }
            "+" => {
                self.pos += 1;
                self.unary()
            }
            "~" => {
                self.pos += 1;
                self.unary().map(|v| !v)
            }
            "!" => {
                self.pos += 1;
                self.unary().map(|v| i64::from(v == 0))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Option<i64> {
        let tok = *self.toks.get(self.pos)?;
        self.pos += 1;
        match tok.kind {
            TokenKind::Number => parse_number(tok.text),
            TokenKind::Ident => {
                let value = self.params.get(tok.text)?;
                eval_depth(value, self.params, self.depth + 1)
            }
            TokenKind::SystemIdent if tok.text == "$clog2" => {
                if !self.eat("(") {
                    return None;
                }
                let v = self.ternary()?;
                if !self.eat(")") {
                    return None;
                }
                Some(clog2(v))
            }
            TokenKind::Op if tok.text == "(" => {
                let v = self.ternary()?;
                self.eat(")").then_some(v)
            }
            _ => None,
        }
    }
}

fn clog2(v: i64) -> i64 {
    let mut r = 0;
    while (1i64 << r) < v {
        r += 1;
    }
    r
}

fn precedence(op: &str) -> Option<u8> {
    Some(match op {
        "||" => 1,
        "&&" => 2,
        "|" => 3,
        "^" | "^~" | "~^" => 4,
        "&" => 5,
        "==" | "!=" => 6,
        "<" | "<=" | ">" | ">=" => 7,
        "<<" | ">>" | "<<<" | ">>>" => 8,
        "+" | "-" => 9,
        "*" | "/" | "%" => 10,
        "**" => 11,
        _ => return None,
    })
}

fn apply(op: &str, a: i64, b: i64) -> Option<i64> {
    Some(match op {
        "||" => i64::from(a != 0 || b != 0),
        "&&" => i64::from(a != 0 && b != 0),
        "|" => a | b,
        "^" => a ^ b,
        "^~" | "~^" => !(a ^ b),
        "&" => a & b,
        "==" => i64::from(a == b),
        "!=" => i64::from(a != b),
        "<" => i64::from(a < b),
        "<=" => i64::from(a <= b),
        ">" => i64::from(a > b),
        ">=" => i64::from(a >= b),
        "<<" | "<<<" => a.checked_shl(u32::try_from(b).ok()?)?,
        ">>" | ">>>" => a.checked_shr(u32::try_from(b).ok()?)?,
        "+" => a.checked_add(b)?,
        "-" => a.checked_sub(b)?,
        "*" => a.checked_mul(b)?,
        "/" => a.checked_div(b)?,
        "%" => a.checked_rem(b)?,
        "**" => a.checked_pow(u32::try_from(b).ok()?)?,
        _ => return None,
    })
}
