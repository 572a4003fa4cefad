//! Tokenizer for the supported Verilog-2001 subset.
//!
//! Comments and compiler directives are dropped. Every token keeps its byte
//! range and line number so statements can be sliced verbatim out of the
//! original text.

use super::SyntaxError;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    /// `$display`, `$clog2`, ...
    SystemIdent,
    /// `` `FOO `` macro usage.
    Macro,
    Number,
    Str,
    Op,
}

#[derive(Debug, Clone, Copy)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
    pub line: usize,
}

impl Token<'_> {
    pub fn is(&self, s: &str) -> bool {
        self.text == s && self.kind != TokenKind::Str
    }

    pub fn is_ident(&self) -> bool {
        self.kind == TokenKind::Ident && !is_keyword(self.text)
    }
}

const KEYWORDS: &[&str] = &[
    "always",
    "and",
    "assign",
    "automatic",
    "begin",
    "buf",
    "bufif0",
    "bufif1",
    "case",
    "casex",
    "casez",
    "cmos",
    "deassign",
    "default",
    "defparam",
    "disable",
    "edge",
    "else",
    "end",
    "endcase",
    "endfunction",
    "endgenerate",
    "endmodule",
    "endprimitive",
    "endspecify",
    "endtable",
    "endtask",
    "event",
    "for",
    "force",
    "forever",
    "fork",
    "function",
    "generate",
    "genvar",
    "highz0",
    "highz1",
    "if",
    "ifnone",
    "initial",
    "inout",
    "input",
    "integer",
    "join",
    "localparam",
    "macromodule",
    "module",
    "nand",
    "negedge",
    "nmos",
    "nor",
    "not",
    "notif0",
    "notif1",
    "or",
    "output",
    "parameter",
    "pmos",
    "posedge",
    "primitive",
    "pull0",
    "pull1",
    "pulldown",
    "pullup",
    "rcmos",
    "real",
    "realtime",
    "reg",
    "release",
    "repeat",
    "rnmos",
    "rpmos",
    "rtran",
    "rtranif0",
    "rtranif1",
    "scalared",
    "signed",
    "specify",
    "specparam",
    "strong0",
    "strong1",
    "supply0",
    "supply1",
    "table",
    "task",
    "time",
    "tran",
    "tranif0",
    "tranif1",
    "tri",
    "tri0",
    "tri1",
    "triand",
    "trior",
    "trireg",
    "unsigned",
    "vectored",
    "wait",
    "wand",
    "weak0",
    "weak1",
    "while",
    "wire",
    "wor",
    "xnor",
    "xor",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.binary_search(&s).is_ok()
}

/// Operators, longest first so greedy matching works.
const OPERATORS: &[&str] = &[
    "<<<=", ">>>=", "===", "!==", "<<<", ">>>", "<<=", ">>=", "==", "!=", "<=", ">=", "&&", "||",
    "<<", ">>", "**", "~&", "~|", "~^", "^~", "->", "+:", "-:", "(*", "*)",
];

pub fn tokenize<'a>(src: &'a str, file: &Path) -> Result<Vec<Token<'a>>, SyntaxError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let err = |line: usize, message: String| SyntaxError {
        file: file.to_path_buf(),
        line,
        message,
    };

    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\n' => {
                line += 1;
                i += 1;
            }
            b' ' | b'\t' | b'\r' | 0x0c => i += 1,
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let open_line = line;
                i += 2;
                loop {
                    if i + 1 >= bytes.len() {
                        return Err(err(open_line, "unterminated block comment".into()));
                    }
                    if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                        i += 2;
                        break;
                    }
                    if bytes[i] == b'\n' {
                        line += 1;
                    }
                    i += 1;
                }
            }
            b'`' => {
                let start = i;
                i += 1;
                while i < bytes.len() && is_ident_char(bytes[i]) {
                    i += 1;
                }
                let name = &src[start + 1..i];
                if is_directive(name) {
                    // Directives run to end of line, honouring `\` continuations.
                    while i < bytes.len() && bytes[i] != b'\n' {
                        if bytes[i] == b'\\' && bytes.get(i + 1) == Some(&b'\n') {
                            line += 1;
                            i += 1;
                        }
                        i += 1;
                    }
                } else {
                    tokens.push(Token {
                        kind: TokenKind::Macro,
                        text: &src[start..i],
                        start,
                        end: i,
                        line,
                    });
                }
            }
            b'"' => {
                let start = i;
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    if i < bytes.len() && bytes[i] == b'\n' {
                        return Err(err(line, "newline in string literal".into()));
                    }
                    i += 1;
                }
                if i >= bytes.len() {
                    return Err(err(line, "unterminated string literal".into()));
                }
                i += 1;
                tokens.push(Token {
                    kind: TokenKind::Str,
                    text: &src[start..i],
                    start,
                    end: i,
                    line,
                });
            }
            b'\\' => {
                // Escaped identifier: runs to the next whitespace.
                let start = i;
                i += 1;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident,
                    text: &src[start..i],
                    start,
                    end: i,
                    line,
                });
            }
            b'$' => {
                let start = i;
                i += 1;
                while i < bytes.len() && is_ident_char(bytes[i]) {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::SystemIdent,
                    text: &src[start..i],
                    start,
                    end: i,
                    line,
                });
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && is_ident_char(bytes[i]) {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident,
                    text: &src[start..i],
                    start,
                    end: i,
                    line,
                });
            }
            c if c.is_ascii_digit() || (c == b'\'' && is_base_char(bytes.get(i + 1))) => {
                let start = i;
                i = lex_number(bytes, i);
                tokens.push(Token {
                    kind: TokenKind::Number,
                    text: &src[start..i],
                    start,
                    end: i,
                    line,
                });
            }
            _ => {
                let start = i;
                let rest = &src[i..];
                let len = OPERATORS
                    .iter()
                    .find(|op| rest.starts_with(*op))
                    .map(|op| op.len())
                    .unwrap_or_else(|| rest.chars().next().map_or(1, char::len_utf8));
                let text = &src[start..start + len];
                if !text.is_ascii() {
                    return Err(err(line, format!("unexpected character {text:?}")));
                }
                i += len;
                tokens.push(Token {
                    kind: TokenKind::Op,
                    text,
                    start,
                    end: i,
                    line,
                });
            }
        }
    }
    Ok(tokens)
}

fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'$'
}

fn is_base_char(c: Option<&u8>) -> bool {
    matches!(
        c,
        Some(
            b's' | b'S'
                | b'b'
                | b'B'
                | b'o'
                | b'O'
                | b'd'
                | b'D'
                | b'h'
                | b'H'
                | b'0'
                | b'1'
                | b'x'
                | b'X'
                | b'z'
                | b'Z'
        )
    )
}

fn is_directive(name: &str) -> bool {
    matches!(
        name,
        "timescale"
            | "define"
            | "undef"
            | "include"
            | "ifdef"
            | "ifndef"
            | "else"
            | "elsif"
            | "endif"
            | "default_nettype"
            | "resetall"
            | "celldefine"
            | "endcelldefine"
            | "line"
    )
}

/// Consumes a decimal, real or based literal (`8'hFF`, `'b0`, `1.5e3`).
fn lex_number(bytes: &[u8], mut i: usize) -> usize {
    let digits = |i: &mut usize, pred: fn(u8) -> bool| {
        while *i < bytes.len() && (pred(bytes[*i]) || bytes[*i] == b'_') {
            *i += 1;
        }
    };
    if bytes[i] != b'\'' {
        digits(&mut i, |c| c.is_ascii_digit());
        if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
            i += 1;
            digits(&mut i, |c| c.is_ascii_digit());
        }
        if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
            let mut j = i + 1;
            if j < bytes.len() && matches!(bytes[j], b'+' | b'-') {
                j += 1;
            }
            if bytes.get(j).is_some_and(u8::is_ascii_digit) {
                i = j;
                digits(&mut i, |c| c.is_ascii_digit());
            }
        }
        // Allow whitespace between size and base: `8 'hFF`.
        let mut j = i;
        while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'\t') {
            j += 1;
        }
        if j < bytes.len() && bytes[j] == b'\'' && is_base_char(bytes.get(j + 1)) {
            i = j;
        } else {
            return i;
        }
    }
    // Based part.
    i += 1;
    if i < bytes.len() && matches!(bytes[i], b's' | b'S') {
        i += 1;
    }
    if i < bytes.len()
        && matches!(
            bytes[i],
            b'b' | b'B' | b'o' | b'O' | b'd' | b'D' | b'h' | b'H'
        )
    {
        i += 1;
        while i < bytes.len() && (bytes[i] == b' ' || bytes[i] == b'\t') {
            i += 1;
        }
        digits(&mut i, |c| {
            c.is_ascii_hexdigit() || matches!(c, b'x' | b'X' | b'z' | b'Z' | b'?')
        });
    } else {
        // Unbased unsized literal such as '0 or 'x.
        i += 1;
    }
    i
}
