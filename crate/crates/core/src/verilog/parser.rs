//! Recursive-descent parser producing statements with read/write sets.

use super::eval::range_width;
use super::lexer::{tokenize, Token, TokenKind};
use super::{
    Arm, Construct, DeclClass, DesignModel, Direction, Instance, ModuleDef, PortBinding,
    SignalDecl, Span, Statement, StatementKind, StmtId, SyntaxError,
};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

type PResult<T> = Result<T, SyntaxError>;

const NET_TYPES: &[&str] = &[
    "wire", "reg", "tri", "tri0", "tri1", "triand", "trior", "trireg", "wand", "wor", "supply0",
    "supply1", "integer", "real", "realtime", "time",
];

const GATES: &[&str] = &[
    "and", "nand", "or", "nor", "xor", "xnor", "buf", "not", "bufif0", "bufif1", "notif0",
    "notif1", "pullup", "pulldown", "tran", "tranif0", "tranif1", "rtran", "rtranif0", "rtranif1",
    "nmos", "pmos", "rnmos", "rpmos", "cmos", "rcmos",
];

const OPAQUE_PROCEDURAL: &[&str] = &[
    "@", "#", "for", "while", "repeat", "forever", "wait", "fork", "disable", "force", "release",
    "assign", "deassign", "->",
];

fn is_variable_type(net: &str) -> bool {
    matches!(net, "reg" | "integer" | "real" | "realtime" | "time")
}

pub(super) fn parse_file(
    path: &Path,
    src: &str,
    id_base: usize,
) -> PResult<Vec<(ModuleDef, Vec<Statement>)>> {
    let toks = tokenize(src, path)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        src,
        file: path,
        m: ModState::default(),
    };
    let mut out = Vec::new();
    let mut next_id = id_base;
    while p.pos < toks.len() {
        if p.at("module") || p.at("macromodule") {
            let (module, stmts) = p.module(next_id)?;
            next_id += stmts.len();
            out.push((module, stmts));
        } else if p.at("primitive") {
            p.skip_until("endprimitive")?;
        } else if p.at("(*") {
            p.skip_attribute()?;
        } else {
            return Err(p.err(format!("expected `module`, found `{}`", toks[p.pos].text)));
        }
    }
    Ok(out)
}

#[derive(Default)]
struct ModState {
    base: usize,
    name: String,
    stmts: Vec<Statement>,
    header_params: Option<String>,
    params: BTreeMap<String, String>,
    ansi: bool,
    port_order: Vec<String>,
    signals: BTreeMap<String, SignalDecl>,
    instances: Vec<Instance>,
    functions: BTreeSet<String>,
    genvars: BTreeSet<String>,
}

struct Parser<'a, 't> {
    toks: &'t [Token<'a>],
    pos: usize,
    src: &'a str,
    file: &'t Path,
    m: ModState,
}

impl<'a> Parser<'a, '_> {
    // ---- token helpers ----

    fn at(&self, s: &str) -> bool {
        self.toks.get(self.pos).is_some_and(|t| t.is(s))
    }

    fn at_any(&self, set: &[&str]) -> bool {
        self.toks
            .get(self.pos)
            .is_some_and(|t| t.kind != TokenKind::Str && set.contains(&t.text))
    }

    fn peek_text(&self) -> Option<&'a str> {
        self.toks.get(self.pos).map(|t| t.text)
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.at(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or(self.toks.last())
            .map_or(1, |t| t.line)
    }

    fn err(&self, message: impl Into<String>) -> SyntaxError {
        SyntaxError {
            file: self.file.to_path_buf(),
            line: self.line(),
            message: message.into(),
        }
    }

    fn eof_err(&self) -> SyntaxError {
        self.err("unexpected end of file")
    }

    fn expect(&mut self, s: &str) -> PResult<usize> {
        match self.toks.get(self.pos) {
            Some(t) if t.is(s) => {
                self.pos += 1;
                Ok(self.pos - 1)
            }
            Some(t) => Err(self.err(format!("expected `{s}`, found `{}`", t.text))),
            None => Err(self.eof_err()),
        }
    }

    fn expect_ident(&mut self) -> PResult<&'a str> {
        match self.toks.get(self.pos) {
            Some(t) if t.is_ident() => {
                self.pos += 1;
                Ok(t.text)
            }
            Some(t) => Err(self.err(format!("expected identifier, found `{}`", t.text))),
            None => Err(self.eof_err()),
        }
    }

    /// Source text from token `a` through token `b` inclusive.
    fn text(&self, a: usize, b: usize) -> &'a str {
        &self.src[self.toks[a].start..self.toks[b].end]
    }

    /// At an opening bracket, moves past its partner and returns the
    /// partner's index.
    fn skip_group(&mut self) -> PResult<usize> {
        let open = self.toks.get(self.pos).ok_or_else(|| self.eof_err())?.text;
        if !matches!(open, "(" | "[" | "{") {
            return Err(self.err(format!("expected bracket, found `{open}`")));
        }
        let mut depth = 0i32;
        while let Some(t) = self.toks.get(self.pos) {
            if t.kind == TokenKind::Op {
                match t.text {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => depth -= 1,
                    _ => {}
                }
            }
            self.pos += 1;
            if depth == 0 {
                return Ok(self.pos - 1);
            }
        }
        Err(self.eof_err())
    }

    /// Index of the first token in `stops` at bracket depth zero, starting at
    /// the current position. Does not move.
    fn find_top(&self, stops: &[&str]) -> PResult<usize> {
        let mut depth = 0i32;
        let mut i = self.pos;
        while let Some(t) = self.toks.get(i) {
            if t.kind == TokenKind::Op {
                if depth == 0 && stops.contains(&t.text) {
                    return Ok(i);
                }
                match t.text {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => {
                        depth -= 1;
                        if depth < 0 {
                            let line = t.line;
                            return Err(SyntaxError {
                                file: self.file.to_path_buf(),
                                line,
                                message: format!("unbalanced `{}`", t.text),
                            });
                        }
                    }
                    _ => {}
                }
            }
            i += 1;
        }
        Err(self.eof_err())
    }

    fn skip_until(&mut self, end_kw: &str) -> PResult<usize> {
        while let Some(t) = self.toks.get(self.pos) {
            self.pos += 1;
            if t.is(end_kw) {
                return Ok(self.pos - 1);
            }
        }
        Err(self.err(format!("missing `{end_kw}`")))
    }

    fn skip_attribute(&mut self) -> PResult<()> {
        self.skip_until("*)").map(|_| ())
    }

    /// Moves past one procedural statement without interpreting it.
    fn skip_stmt(&mut self) -> PResult<()> {
        let Some(t) = self.peek_text() else {
            return Err(self.eof_err());
        };
        match t {
            "begin" => self.skip_nested("begin", &["end"]),
            "fork" => self.skip_nested("fork", &["join", "join_any", "join_none"]),
            "case" | "casez" | "casex" => {
                self.skip_nested_any(&["case", "casez", "casex"], "endcase")
            }
            "if" => {
                self.pos += 1;
                self.skip_group()?;
                self.skip_stmt()?;
                if self.eat("else") {
                    self.skip_stmt()?;
                }
                Ok(())
            }
            "for" | "while" | "repeat" | "wait" => {
                self.pos += 1;
                self.skip_group()?;
                self.skip_stmt()
            }
            "forever" => {
                self.pos += 1;
                self.skip_stmt()
            }
            "@" => {
                self.pos += 1;
                self.skip_event_control()?;
                self.skip_stmt()
            }
            "#" => {
                self.pos += 1;
                self.skip_delay_value()?;
                self.skip_stmt()
            }
            ";" => {
                self.pos += 1;
                Ok(())
            }
            _ => {
                let semi = self.find_top(&[";"])?;
                self.pos = semi + 1;
                Ok(())
            }
        }
    }

    fn skip_nested(&mut self, open: &str, close: &[&str]) -> PResult<()> {
        let mut depth = 0;
        while let Some(t) = self.toks.get(self.pos) {
            self.pos += 1;
            if t.is(open) {
                depth += 1;
            } else if close.iter().any(|c| t.is(c)) {
                depth -= 1;
                if depth == 0 {
                    return Ok(());
                }
            }
        }
        Err(self.err(format!("missing `{}`", close[0])))
    }

    fn skip_nested_any(&mut self, open: &[&str], close: &str) -> PResult<()> {
        let mut depth = 0;
        while let Some(t) = self.toks.get(self.pos) {
            self.pos += 1;
            if open.iter().any(|o| t.is(o)) {
                depth += 1;
            } else if t.is(close) {
                depth -= 1;
                if depth == 0 {
                    return Ok(());
                }
            }
        }
        Err(self.err(format!("missing `{close}`")))
    }

    /// After `@`: `*`, `(*)`, `( ... )` or a single identifier.
    fn skip_event_control(&mut self) -> PResult<usize> {
        if self.at("(*") && self.toks.get(self.pos + 1).is_some_and(|t| t.is(")")) {
            self.pos += 2;
            return Ok(self.pos - 1);
        }
        if self.at("(") {
            return self.skip_group();
        }
        if self.pos >= self.toks.len() {
            return Err(self.eof_err());
        }
        self.pos += 1;
        Ok(self.pos - 1)
    }

    fn skip_delay_value(&mut self) -> PResult<()> {
        if self.at("(") {
            self.skip_group()?;
        } else if self.pos < self.toks.len() {
            self.pos += 1;
        } else {
            return Err(self.eof_err());
        }
        Ok(())
    }

    /// Identifiers in tokens `a..b` that can name signals.
    fn ids(&self, a: usize, b: usize) -> BTreeSet<String> {
        (a..b)
            .filter(|&i| self.is_signal_ident(i))
            .map(|i| self.toks[i].text.to_string())
            .collect()
    }

    fn is_signal_ident(&self, i: usize) -> bool {
        let t = &self.toks[i];
        if !t.is_ident() {
            return false;
        }
        if i > 0 && self.toks[i - 1].is(".") {
            return false;
        }
        // Block labels: `begin : name` / `end : name`.
        if i > 1
            && self.toks[i - 1].is(":")
            && (self.toks[i - 2].is("begin") || self.toks[i - 2].is("end"))
        {
            return false;
        }
        true
    }

    /// Splits an assignment target into written names (outside brackets) and
    /// read names (index expressions).
    fn lhs_ids(&self, a: usize, b: usize) -> (BTreeSet<String>, BTreeSet<String>) {
        let mut writes = BTreeSet::new();
        let mut reads = BTreeSet::new();
        let mut depth = 0;
        for i in a..b {
            let t = &self.toks[i];
            match t.text {
                "[" => depth += 1,
                "]" => depth -= 1,
                _ if self.is_signal_ident(i) => {
                    if depth == 0 {
                        writes.insert(t.text.to_string());
                    } else {
                        reads.insert(t.text.to_string());
                    }
                }
                _ => {}
            }
        }
        (writes, reads)
    }

    // ---- statements ----

    fn span(&self, a: usize, b: usize) -> Span {
        Span {
            file: self.file.to_path_buf(),
            line_start: self.toks[a].line,
            line_end: self.toks[b].line,
            byte_start: self.toks[a].start,
            byte_end: self.toks[b].end,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        kind: StatementKind,
        construct: Construct,
        a: usize,
        b: usize,
        parent: Option<StmtId>,
        arm: Option<Arm>,
        reads: BTreeSet<String>,
        writes: BTreeSet<String>,
    ) -> StmtId {
        let id = self.m.base + self.m.stmts.len();
        self.m.stmts.push(Statement {
            id,
            kind,
            module: self.m.name.clone(),
            span: self.span(a, b),
            reads,
            writes,
            parent,
            arm,
            children: Vec::new(),
            raw_text: self.text(a, b).to_string(),
            declares: Vec::new(),
            construct,
        });
        if let Some(p) = parent {
            self.m.stmts[p - self.m.base].children.push(id);
        }
        id
    }

    fn stmt_mut(&mut self, id: StmtId) -> &mut Statement {
        let base = self.m.base;
        &mut self.m.stmts[id - base]
    }

    /// Closes a container at token `b` and, unless it is an `always`, folds
    /// the children's writes into it.
    fn close(&mut self, id: StmtId, b: usize) {
        let end = self.toks[b];
        let aggregate = self.m.stmts[id - self.m.base].kind != StatementKind::AlwaysBlock;
        let mut writes = BTreeSet::new();
        if aggregate {
            for &c in &self.m.stmts[id - self.m.base].children {
                writes.extend(self.m.stmts[c - self.m.base].writes.iter().cloned());
            }
        }
        let src = self.src;
        let s = self.stmt_mut(id);
        s.span.line_end = end.line;
        s.span.byte_end = end.end;
        s.raw_text = src[s.span.byte_start..s.span.byte_end].to_string();
        s.writes.extend(writes);
    }

    fn opaque(
        &mut self,
        what: &str,
        a: usize,
        b: usize,
        parent: Option<StmtId>,
        arm: Option<Arm>,
        exclude: &BTreeSet<String>,
    ) -> StmtId {
        let mut ids = self.ids(a, b + 1);
        ids.retain(|s| !exclude.contains(s));
        self.push(
            StatementKind::Declaration,
            Construct::Opaque {
                what: what.to_string(),
            },
            a,
            b,
            parent,
            arm,
            ids.clone(),
            ids,
        )
    }

    // ---- modules ----

    fn module(&mut self, base: usize) -> PResult<(ModuleDef, Vec<Statement>)> {
        let start_line = self.toks[self.pos].line;
        self.pos += 1;
        let name = self.expect_ident()?;
        self.m = ModState {
            base,
            name: name.to_string(),
            ..ModState::default()
        };
        if self.at("#") {
            let s = self.pos;
            self.pos += 1;
            if !self.at("(") {
                return Err(self.err("expected `(` after `#`"));
            }
            let close = self.skip_group()?;
            self.m.header_params = Some(self.text(s, close).to_string());
            self.param_assignments(s + 2, close)?;
        }
        if self.at("(") {
            self.port_list()?;
        }
        self.expect(";")?;
        loop {
            if self.pos >= self.toks.len() {
                return Err(SyntaxError {
                    file: self.file.to_path_buf(),
                    line: start_line,
                    message: format!("module `{name}` has no `endmodule`"),
                });
            }
            if self.at("endmodule") {
                break;
            }
            self.module_item()?;
        }
        let end_line = self.toks[self.pos].line;
        self.pos += 1;
        self.finish(start_line, end_line)
    }

    /// `parameter A = 1, B = 2` style lists between tokens `a..b`.
    fn param_assignments(&mut self, a: usize, b: usize) -> PResult<()> {
        let mut i = a;
        while i < b {
            // Find `NAME =` at depth zero, then the value up to `,` at depth zero.
            let t = &self.toks[i];
            if t.is_ident() && self.toks.get(i + 1).is_some_and(|n| n.is("=")) {
                let name = t.text.to_string();
                let vstart = i + 2;
                let mut j = vstart;
                let mut depth = 0i32;
                while j < b {
                    let tj = &self.toks[j];
                    match tj.text {
                        "(" | "[" | "{" => depth += 1,
                        ")" | "]" | "}" => depth -= 1,
                        "," if depth == 0 => break,
                        _ => {}
                    }
                    j += 1;
                }
                if j == vstart {
                    return Err(SyntaxError {
                        file: self.file.to_path_buf(),
                        line: t.line,
                        message: format!("parameter `{name}` has no value"),
                    });
                }
                let value = self.text(vstart, j - 1).to_string();
                self.m.params.insert(name, value);
                i = j;
            }
            i += 1;
        }
        Ok(())
    }

    fn port_list(&mut self) -> PResult<()> {
        self.pos += 1;
        if self.eat(")") {
            return Ok(());
        }
        if self.at_any(&["input", "output", "inout"]) {
            self.m.ansi = true;
            loop {
                self.port_group(true)?;
                if self.eat(",") {
                    continue;
                }
                self.expect(")")?;
                return Ok(());
            }
        }
        loop {
            let name = self.expect_ident()?;
            self.m.port_order.push(name.to_string());
            if self.eat(",") {
                continue;
            }
            self.expect(")")?;
            return Ok(());
        }
    }

    /// `dir [net] [signed] [range] name {, name}`; in ANSI headers the group
    /// ends at a comma followed by another direction keyword.
    fn port_group(&mut self, ansi: bool) -> PResult<()> {
        let s = self.pos;
        let Some(dir) = self
            .toks
            .get(self.pos)
            .and_then(|t| Direction::parse(t.text))
        else {
            return Err(self.err("expected a port direction"));
        };
        self.pos += 1;
        let net = if self.at_any(NET_TYPES) {
            self.pos += 1;
            Some(self.toks[self.pos - 1].text.to_string())
        } else {
            None
        };
        let signed = self.eat("signed");
        let range = self.opt_range()?;
        let mut names = Vec::new();
        let mut last;
        loop {
            let name = self.expect_ident()?;
            last = self.pos - 1;
            names.push(name.to_string());
            if !ansi && self.at("=") {
                // `output reg q = 0;`
                let semi = self.find_top(&[",", ";"])?;
                self.pos = semi;
                last = semi - 1;
            }
            if self.at(",") && self.toks.get(self.pos + 1).is_some_and(|t| t.is_ident()) {
                self.pos += 1;
                continue;
            }
            break;
        }
        if !ansi {
            last = self.expect(";")?;
        }
        let id = self.push(
            StatementKind::Declaration,
            Construct::Decl {
                class: DeclClass::Port,
            },
            s,
            last,
            None,
            None,
            BTreeSet::new(),
            BTreeSet::new(),
        );
        self.stmt_mut(id).declares = names.clone();
        for name in names {
            if ansi {
                if self.m.port_order.contains(&name) {
                    return Err(self.err(format!("duplicate port `{name}`")));
                }
                self.m.port_order.push(name.clone());
            } else if !self.m.port_order.contains(&name) {
                return Err(self.err(format!("`{name}` is not in the port list")));
            }
            let entry = self.m.signals.entry(name).or_insert_with(|| SignalDecl {
                net: "wire".into(),
                signed: false,
                range: None,
                width: 1,
                array: None,
                direction: None,
                implicit: false,
                decl_stmt: Some(id),
            });
            if entry.direction.is_some() {
                return Err(SyntaxError {
                    file: self.file.to_path_buf(),
                    line: self.toks[s].line,
                    message: "port direction declared twice".into(),
                });
            }
            entry.direction = Some(dir);
            if let Some(n) = &net {
                entry.net = n.clone();
            }
            entry.signed |= signed;
            if range.is_some() {
                entry.range = range.clone();
            }
        }
        Ok(())
    }

    fn opt_range(&mut self) -> PResult<Option<String>> {
        if self.at("[") {
            let s = self.pos;
            let e = self.skip_group()?;
            Ok(Some(self.text(s, e).to_string()))
        } else {
            Ok(None)
        }
    }

    fn module_item(&mut self) -> PResult<()> {
        let t = self.toks[self.pos];
        if t.kind == TokenKind::Str {
            return Err(self.err("unexpected string literal"));
        }
        match t.text {
            ";" => {
                self.pos += 1;
                Ok(())
            }
            "(*" => self.skip_attribute(),
            "input" | "output" | "inout" => self.port_group(false),
            "parameter" | "localparam" => self.param_decl(),
            "genvar" => self.genvar_decl(),
            "assign" => self.continuous_assign(),
            "always" => self.always(),
            "initial" => {
                let s = self.pos;
                self.pos += 1;
                self.skip_stmt()?;
                self.opaque("initial", s, self.pos - 1, None, None, &BTreeSet::new());
                Ok(())
            }
            "function" | "task" => self.subroutine(),
            "generate" => self.block_until("generate", "endgenerate"),
            "specify" => self.block_until("specify", "endspecify"),
            "defparam" => {
                let s = self.pos;
                let semi = self.find_top(&[";"])?;
                self.pos = semi + 1;
                self.opaque("defparam", s, semi, None, None, &BTreeSet::new());
                Ok(())
            }
            "if" | "for" | "case" | "begin" => {
                let s = self.pos;
                self.skip_stmt()?;
                self.opaque("generate", s, self.pos - 1, None, None, &BTreeSet::new());
                Ok(())
            }
            g if GATES.contains(&g) => {
                let s = self.pos;
                let semi = self.find_top(&[";"])?;
                self.pos = semi + 1;
                // Skip the optional instance name.
                let mut scan = s + 1;
                if self.toks[scan].is_ident() && self.toks.get(scan + 1).is_some_and(|t| t.is("("))
                {
                    scan += 1;
                }
                let ids = self.ids(scan, semi);
                self.push(
                    StatementKind::Declaration,
                    Construct::Opaque {
                        what: g.to_string(),
                    },
                    s,
                    semi,
                    None,
                    None,
                    ids.clone(),
                    ids,
                );
                Ok(())
            }
            n if NET_TYPES.contains(&n) => self.net_decl(),
            _ if t.is_ident() => self.instance(),
            other => Err(self.err(format!("unexpected `{other}` in module body"))),
        }
    }

    fn block_until(&mut self, what: &str, end_kw: &str) -> PResult<()> {
        let s = self.pos;
        let e = self.skip_until(end_kw)?;
        self.opaque(what, s, e, None, None, &BTreeSet::new());
        Ok(())
    }

    fn subroutine(&mut self) -> PResult<()> {
        let s = self.pos;
        let kw = self.toks[s].text;
        let end_kw = if kw == "function" {
            "endfunction"
        } else {
            "endtask"
        };
        let e = self.skip_until(end_kw)?;
        // Name: last identifier before the first `;` or `(`.
        let mut name = None;
        for t in &self.toks[s + 1..e] {
            if t.is(";") || t.is("(") {
                break;
            }
            if t.is_ident() {
                name = Some(t.text.to_string());
            }
        }
        let name = name.ok_or_else(|| SyntaxError {
            file: self.file.to_path_buf(),
            line: self.toks[s].line,
            message: format!("{kw} without a name"),
        })?;
        // Locals: names declared inside the subroutine.
        let mut locals = BTreeSet::from([name.clone()]);
        let mut i = s + 1;
        while i < e {
            let t = &self.toks[i];
            if t.kind == TokenKind::Ident
                && matches!(
                    t.text,
                    "input" | "output" | "inout" | "reg" | "integer" | "real" | "time"
                )
            {
                let mut depth = 0;
                i += 1;
                while i < e && !self.toks[i].is(";") && !(depth == 0 && self.toks[i].is(")")) {
                    match self.toks[i].text {
                        "[" => depth += 1,
                        "]" => depth -= 1,
                        _ if depth == 0 && self.toks[i].is_ident() => {
                            locals.insert(self.toks[i].text.to_string());
                        }
                        _ => {}
                    }
                    i += 1;
                }
            }
            i += 1;
        }
        self.opaque(kw, s, e, None, None, &locals);
        self.m.functions.insert(name);
        Ok(())
    }

    fn param_decl(&mut self) -> PResult<()> {
        let s = self.pos;
        let semi = self.find_top(&[";"])?;
        self.param_assignments(s + 1, semi)?;
        self.pos = semi + 1;
        let names: Vec<String> = (s + 1..semi)
            .filter(|&i| self.toks[i].is_ident() && self.toks[i + 1].is("="))
            .map(|i| self.toks[i].text.to_string())
            .collect();
        if names.is_empty() {
            return Err(self.err("parameter declaration without assignment"));
        }
        let id = self.push(
            StatementKind::Declaration,
            Construct::Decl {
                class: DeclClass::Parameter,
            },
            s,
            semi,
            None,
            None,
            BTreeSet::new(),
            BTreeSet::new(),
        );
        self.stmt_mut(id).declares = names;
        Ok(())
    }

    fn genvar_decl(&mut self) -> PResult<()> {
        let s = self.pos;
        let semi = self.find_top(&[";"])?;
        self.pos = semi + 1;
        let names: Vec<String> = self.ids(s + 1, semi).into_iter().collect();
        self.m.genvars.extend(names.iter().cloned());
        let id = self.push(
            StatementKind::Declaration,
            Construct::Decl {
                class: DeclClass::Genvar,
            },
            s,
            semi,
            None,
            None,
            BTreeSet::new(),
            BTreeSet::new(),
        );
        self.stmt_mut(id).declares = names;
        Ok(())
    }

    fn net_decl(&mut self) -> PResult<()> {
        let s = self.pos;
        let net = self.toks[s].text.to_string();
        self.pos += 1;
        if self.at("(") {
            // Drive strength.
            self.skip_group()?;
        }
        let signed = self.eat("signed");
        let range = self.opt_range()?;
        if self.at("#") {
            self.pos += 1;
            self.skip_delay_value()?;
        }
        let mut names = Vec::new();
        let mut arrays = Vec::new();
        let mut init_writes = BTreeSet::new();
        let mut init_reads = BTreeSet::new();
        loop {
            let name = self.expect_ident()?.to_string();
            let mut array = String::new();
            while self.at("[") {
                let a = self.pos;
                let b = self.skip_group()?;
                array.push_str(self.text(a, b));
            }
            if self.eat("=") {
                let end = self.find_top(&[",", ";"])?;
                init_reads.extend(self.ids(self.pos, end));
                init_writes.insert(name.clone());
                self.pos = end;
            }
            names.push(name);
            arrays.push((!array.is_empty()).then_some(array));
            if self.eat(",") {
                continue;
            }
            break;
        }
        let semi = self.expect(";")?;
        let is_assign = !init_writes.is_empty() && !is_variable_type(&net);
        let id = if is_assign {
            self.push(
                StatementKind::ContinuousAssign,
                Construct::Assign { nonblocking: false },
                s,
                semi,
                None,
                None,
                init_reads,
                init_writes,
            )
        } else {
            let class = if is_variable_type(&net) {
                DeclClass::Variable
            } else {
                DeclClass::Net
            };
            self.push(
                StatementKind::Declaration,
                Construct::Decl { class },
                s,
                semi,
                None,
                None,
                BTreeSet::new(),
                BTreeSet::new(),
            )
        };
        self.stmt_mut(id).declares = names.clone();
        for (name, array) in names.into_iter().zip(arrays) {
            match self.m.signals.get_mut(&name) {
                // `output q; reg q;`
                Some(existing) if existing.direction.is_some() && existing.net == "wire" => {
                    existing.net = net.clone();
                    existing.signed |= signed;
                    if range.is_some() {
                        existing.range = range.clone();
                    }
                }
                Some(_) => {
                    return Err(SyntaxError {
                        file: self.file.to_path_buf(),
                        line: self.toks[s].line,
                        message: format!("`{name}` declared twice"),
                    })
                }
                None => {
                    self.m.signals.insert(
                        name,
                        SignalDecl {
                            net: net.clone(),
                            signed,
                            range: range.clone(),
                            width: 1,
                            array,
                            direction: None,
                            implicit: false,
                            decl_stmt: Some(id),
                        },
                    );
                }
            }
        }
        Ok(())
    }

    fn continuous_assign(&mut self) -> PResult<()> {
        let s = self.pos;
        self.pos += 1;
        if self.at("(") {
            self.skip_group()?;
        }
        if self.at("#") {
            self.pos += 1;
            self.skip_delay_value()?;
        }
        let mut reads = BTreeSet::new();
        let mut writes = BTreeSet::new();
        loop {
            let eq = self.find_top(&["="])?;
            if eq == self.pos {
                return Err(self.err("assignment without a target"));
            }
            let (w, r) = self.lhs_ids(self.pos, eq);
            writes.extend(w);
            reads.extend(r);
            self.pos = eq + 1;
            let end = self.find_top(&[",", ";"])?;
            if end == self.pos {
                return Err(self.err("assignment without a value"));
            }
            reads.extend(self.ids(self.pos, end));
            self.pos = end + 1;
            if self.toks[end].is(";") {
                self.push(
                    StatementKind::ContinuousAssign,
                    Construct::Assign { nonblocking: false },
                    s,
                    end,
                    None,
                    None,
                    reads,
                    writes,
                );
                return Ok(());
            }
        }
    }

    fn always(&mut self) -> PResult<()> {
        let s = self.pos;
        self.pos += 1;
        if !self.at("@") {
            self.skip_stmt()?;
            self.opaque("always", s, self.pos - 1, None, None, &BTreeSet::new());
            return Ok(());
        }
        let ev = self.pos;
        self.pos += 1;
        let ev_end = self.skip_event_control()?;
        let sensitivity = self.text(ev, ev_end).to_string();
        let reads = self.ids(ev + 1, ev_end + 1);
        let edges: Vec<String> = (ev + 1..ev_end)
            .filter(|&i| {
                (self.toks[i].is("posedge") || self.toks[i].is("negedge"))
                    && self.is_signal_ident(i + 1)
            })
            .map(|i| self.toks[i + 1].text.to_string())
            .collect();
        let id = self.push(
            StatementKind::AlwaysBlock,
            Construct::Always { sensitivity, edges },
            s,
            ev_end,
            None,
            None,
            reads,
            BTreeSet::new(),
        );
        self.stmt(id, None)?;
        self.close(id, self.pos - 1);
        Ok(())
    }

    // ---- procedural statements ----

    fn stmt(&mut self, parent: StmtId, arm: Option<Arm>) -> PResult<()> {
        let Some(t) = self.toks.get(self.pos).copied() else {
            return Err(self.eof_err());
        };
        if t.kind == TokenKind::Str || t.kind == TokenKind::Number {
            return Err(self.err(format!("unexpected `{}` in procedural code", t.text)));
        }
        match t.text {
            "begin" => {
                self.pos += 1;
                if self.eat(":") {
                    self.expect_ident()?;
                }
                while !self.at("end") {
                    if self.pos >= self.toks.len() {
                        return Err(self.err("missing `end`"));
                    }
                    self.stmt(parent, arm)?;
                }
                self.pos += 1;
                Ok(())
            }
            "if" => self.if_stmt(parent, arm),
            "case" | "casez" | "casex" => self.case_stmt(parent, arm),
            ";" => {
                self.pos += 1;
                Ok(())
            }
            "(*" => {
                self.skip_attribute()?;
                self.stmt(parent, arm)
            }
            "reg" | "integer" | "real" | "time" | "realtime" | "parameter" | "localparam" => {
                let s = self.pos;
                let semi = self.find_top(&[";"])?;
                self.pos = semi + 1;
                self.opaque(
                    "local declaration",
                    s,
                    semi,
                    Some(parent),
                    arm,
                    &BTreeSet::new(),
                );
                Ok(())
            }
            w if OPAQUE_PROCEDURAL.contains(&w) => {
                let s = self.pos;
                self.skip_stmt()?;
                self.opaque(w, s, self.pos - 1, Some(parent), arm, &BTreeSet::new());
                Ok(())
            }
            _ if t.kind == TokenKind::SystemIdent => {
                let s = self.pos;
                self.skip_stmt()?;
                self.opaque(t.text, s, self.pos - 1, Some(parent), arm, &BTreeSet::new());
                Ok(())
            }
            "{" => self.proc_assign(parent, arm),
            _ if t.is_ident() => self.proc_assign(parent, arm),
            other => Err(self.err(format!("unexpected `{other}` in procedural code"))),
        }
    }

    fn proc_assign(&mut self, parent: StmtId, arm: Option<Arm>) -> PResult<()> {
        let s = self.pos;
        let stop = self.find_top(&["=", "<=", "(", ";"])?;
        let tok = self.toks[stop];
        if tok.is("(") || tok.is(";") {
            // Task enable.
            self.skip_stmt()?;
            self.opaque(
                "task call",
                s,
                self.pos - 1,
                Some(parent),
                arm,
                &BTreeSet::new(),
            );
            return Ok(());
        }
        if stop == s {
            return Err(self.err("assignment without a target"));
        }
        let (writes, mut reads) = self.lhs_ids(s, stop);
        self.pos = stop + 1;
        if self.at("#") {
            self.pos += 1;
            self.skip_delay_value()?;
        } else if self.at("@") {
            self.pos += 1;
            self.skip_event_control()?;
        }
        let semi = self.find_top(&[";"])?;
        if semi == self.pos {
            return Err(self.err("assignment without a value"));
        }
        reads.extend(self.ids(stop + 1, semi));
        self.pos = semi + 1;
        self.push(
            StatementKind::ProceduralAssign,
            Construct::Assign {
                nonblocking: tok.is("<="),
            },
            s,
            semi,
            Some(parent),
            arm,
            reads,
            writes,
        );
        Ok(())
    }

    fn if_stmt(&mut self, parent: StmtId, arm: Option<Arm>) -> PResult<()> {
        let s = self.pos;
        self.pos += 1;
        if !self.at("(") {
            return Err(self.err("expected `(` after `if`"));
        }
        let open = self.pos;
        let close = self.skip_group()?;
        let condition = self.text(open, close).to_string();
        let reads = self.ids(open, close);
        let id = self.push(
            StatementKind::IfBlock,
            Construct::If {
                condition: condition.clone(),
                has_else: false,
            },
            s,
            close,
            Some(parent),
            arm,
            reads,
            BTreeSet::new(),
        );
        self.stmt(id, Some(Arm::Then))?;
        let has_else = self.eat("else");
        if has_else {
            self.stmt(id, Some(Arm::Else))?;
        }
        self.stmt_mut(id).construct = Construct::If {
            condition,
            has_else,
        };
        self.close(id, self.pos - 1);
        Ok(())
    }

    fn case_stmt(&mut self, parent: StmtId, arm: Option<Arm>) -> PResult<()> {
        let s = self.pos;
        let keyword = self.toks[s].text.to_string();
        self.pos += 1;
        if !self.at("(") {
            return Err(self.err(format!("expected `(` after `{keyword}`")));
        }
        let open = self.pos;
        let close = self.skip_group()?;
        let selector = self.text(open, close).to_string();
        let reads = self.ids(open, close);
        let id = self.push(
            StatementKind::CaseBlock,
            Construct::Case {
                keyword: keyword.clone(),
                selector: selector.clone(),
                has_default: false,
            },
            s,
            close,
            Some(parent),
            arm,
            reads,
            BTreeSet::new(),
        );
        let mut has_default = false;
        while !self.at("endcase") {
            if self.pos >= self.toks.len() {
                return Err(self.err("missing `endcase`"));
            }
            let bs = self.pos;
            let (labels, is_default, reads) = if self.at("default") {
                if has_default {
                    return Err(self.err("more than one `default` branch"));
                }
                has_default = true;
                self.pos += 1;
                self.eat(":");
                ("default".to_string(), true, BTreeSet::new())
            } else {
                let colon = self.label_colon()?;
                if colon == bs {
                    return Err(self.err("case item without a label"));
                }
                let labels = self.text(bs, colon - 1).to_string();
                let reads = self.ids(bs, colon);
                self.pos = colon + 1;
                (labels, false, reads)
            };
            let bid = self.push(
                StatementKind::CaseBranch,
                Construct::Branch { labels, is_default },
                bs,
                self.pos - 1,
                Some(id),
                None,
                reads,
                BTreeSet::new(),
            );
            self.stmt(bid, None)?;
            self.close(bid, self.pos - 1);
        }
        self.pos += 1;
        self.stmt_mut(id).construct = Construct::Case {
            keyword,
            selector,
            has_default,
        };
        self.close(id, self.pos - 1);
        Ok(())
    }

    /// The `:` ending a case label list, skipping ternaries and ranges.
    fn label_colon(&self) -> PResult<usize> {
        let mut depth = 0i32;
        let mut ternary = 0;
        let mut i = self.pos;
        while let Some(t) = self.toks.get(i) {
            match t.text {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                "?" if depth == 0 => ternary += 1,
                ":" if depth == 0 => {
                    if ternary == 0 {
                        return Ok(i);
                    }
                    ternary -= 1;
                }
                ";" | "endcase" => break,
                _ => {}
            }
            i += 1;
        }
        Err(self.err("case item without `:`"))
    }

    // ---- instances ----

    fn instance(&mut self) -> PResult<()> {
        let module = self.toks[self.pos].text.to_string();
        self.pos += 1;
        let params = if self.at("#") {
            let ps = self.pos;
            self.pos += 1;
            let pe = if self.at("(") {
                self.skip_group()?
            } else {
                self.pos += 1;
                self.pos - 1
            };
            Some(self.text(ps, pe).to_string())
        } else {
            None
        };
        loop {
            let line = self.toks.get(self.pos).map_or(1, |t| t.line);
            let name = self.expect_ident()?.to_string();
            if self.at("[") {
                self.skip_group()?;
            }
            self.expect("(")?;
            let mut bindings = Vec::new();
            let mut positional = false;
            if self.at(".") {
                loop {
                    let bs = self.expect(".")?;
                    let formal = self.expect_ident()?.to_string();
                    if !self.at("(") {
                        return Err(self.err(format!("expected `(` after `.{formal}`")));
                    }
                    let open = self.pos;
                    let close = self.skip_group()?;
                    let actual = if close > open + 1 {
                        self.text(open + 1, close - 1).to_string()
                    } else {
                        String::new()
                    };
                    let reads = self.ids(open + 1, close);
                    let sid = self.push(
                        StatementKind::InstanceConnection,
                        Construct::Binding {
                            instance: name.clone(),
                            child: module.clone(),
                            formal: formal.clone(),
                            actual: actual.clone(),
                            position: None,
                        },
                        bs,
                        close,
                        None,
                        None,
                        reads,
                        BTreeSet::new(),
                    );
                    bindings.push(PortBinding {
                        formal,
                        actual,
                        actual_signals: Vec::new(),
                        statement: sid,
                    });
                    if self.eat(",") {
                        continue;
                    }
                    self.expect(")")?;
                    break;
                }
            } else if !self.eat(")") {
                positional = true;
                let mut index = 0;
                loop {
                    let es = self.pos;
                    let end = self.find_top(&[",", ")"])?;
                    if end > es {
                        let actual = self.text(es, end - 1).to_string();
                        let reads = self.ids(es, end);
                        let sid = self.push(
                            StatementKind::InstanceConnection,
                            Construct::Binding {
                                instance: name.clone(),
                                child: module.clone(),
                                formal: String::new(),
                                actual: actual.clone(),
                                position: Some(index),
                            },
                            es,
                            end - 1,
                            None,
                            None,
                            reads,
                            BTreeSet::new(),
                        );
                        bindings.push(PortBinding {
                            formal: String::new(),
                            actual,
                            actual_signals: Vec::new(),
                            statement: sid,
                        });
                    }
                    index += 1;
                    self.pos = end + 1;
                    if self.toks[end].is(")") {
                        break;
                    }
                }
            }
            if self.m.instances.iter().any(|i| i.name == name) {
                return Err(self.err(format!("duplicate instance `{name}`")));
            }
            self.m.instances.push(Instance {
                name,
                module: module.clone(),
                params: params.clone(),
                positional,
                bindings,
                line,
            });
            if self.eat(",") {
                continue;
            }
            self.expect(";")?;
            return Ok(());
        }
    }

    // ---- finalize ----

    fn finish(
        &mut self,
        line_start: usize,
        line_end: usize,
    ) -> PResult<(ModuleDef, Vec<Statement>)> {
        let mut m = std::mem::take(&mut self.m);
        let filtered: BTreeSet<String> = m
            .params
            .keys()
            .cloned()
            .chain(m.genvars.iter().cloned())
            .chain(m.functions.iter().cloned())
            .collect();
        let mut event_signals = BTreeSet::new();
        for s in &mut m.stmts {
            s.reads.retain(|x| !filtered.contains(x));
            s.writes.retain(|x| !filtered.contains(x));
            if let Construct::Always { edges, .. } = &mut s.construct {
                edges.retain(|x| !filtered.contains(x));
                event_signals.extend(edges.iter().cloned());
            }
        }
        // Ports.
        let mut ports = Vec::new();
        for name in &m.port_order {
            let Some(sig) = m.signals.get(name) else {
                return Err(SyntaxError {
                    file: self.file.to_path_buf(),
                    line: line_start,
                    message: format!("port `{name}` has no direction declaration"),
                });
            };
            let Some(direction) = sig.direction else {
                return Err(SyntaxError {
                    file: self.file.to_path_buf(),
                    line: line_start,
                    message: format!("port `{name}` has no direction declaration"),
                });
            };
            ports.push((name.clone(), direction));
        }
        // Declared signals that are not ports must not carry a direction.
        if let Some((name, _)) = m
            .signals
            .iter()
            .find(|(n, s)| s.direction.is_some() && !m.port_order.contains(n))
        {
            return Err(SyntaxError {
                file: self.file.to_path_buf(),
                line: line_start,
                message: format!("`{name}` has a direction but is not a port"),
            });
        }
        // Implicit nets.
        for s in &m.stmts {
            for sig in s.reads.iter().chain(&s.writes) {
                if !m.signals.contains_key(sig) {
                    m.signals.insert(
                        sig.clone(),
                        SignalDecl {
                            net: "wire".into(),
                            signed: false,
                            range: None,
                            width: 1,
                            array: None,
                            direction: None,
                            implicit: true,
                            decl_stmt: None,
                        },
                    );
                }
            }
        }
        for (name, sig) in &mut m.signals {
            sig.width = match &sig.range {
                Some(r) => range_width(r, &m.params).unwrap_or_else(|| {
                    log::warn!(
                        "{}: cannot evaluate width of `{name}` {r}; assuming 1",
                        m.name
                    );
                    1
                }),
                None if matches!(sig.net.as_str(), "integer") => 32,
                None if matches!(sig.net.as_str(), "time" | "real" | "realtime") => 64,
                None => 1,
            };
        }
        let ports = ports
            .into_iter()
            .map(|(name, direction)| super::Port {
                width: m.signals[&name].width,
                name,
                direction,
            })
            .collect();
        for inst in &mut m.instances {
            for b in &mut inst.bindings {
                let s = &m.stmts[b.statement - m.base];
                b.actual_signals = s.reads.iter().cloned().collect();
            }
        }
        let statements: Vec<StmtId> = m.stmts.iter().map(|s| s.id).collect();
        let items = m
            .stmts
            .iter()
            .filter(|s| s.parent.is_none())
            .map(|s| s.id)
            .collect();
        let def = ModuleDef {
            name: m.name,
            file: self.file.to_path_buf(),
            header_params: m.header_params,
            params: m.params,
            ports,
            signals: m.signals,
            statements,
            items,
            instances: m.instances,
            event_signals,
            functions: m.functions,
            line_start,
            line_end,
            refs: HashMap::new(),
        };
        Ok((def, m.stmts))
    }
}

/// Fills in positional formals and binding directions once every module is
/// known. Instances of undefined modules are recorded as black boxes.
pub(super) fn resolve_instances(design: &mut DesignModel) -> Result<(), super::ModelError> {
    let mut updates: Vec<(usize, usize, usize, String, Option<Direction>)> = Vec::new();
    for (mi, module) in design.modules.iter().enumerate() {
        for (ii, inst) in module.instances.iter().enumerate() {
            let Some(child) = design.module(&inst.module) else {
                design.black_boxes.insert(inst.module.clone());
                continue;
            };
            for (bi, b) in inst.bindings.iter().enumerate() {
                let formal = match design.statements[b.statement].construct {
                    Construct::Binding {
                        position: Some(p), ..
                    } => child
                        .ports
                        .get(p)
                        .map_or_else(|| format!("#{p}"), |port| port.name.clone()),
                    _ => b.formal.clone(),
                };
                let dir = child.port(&formal).map(|p| p.direction);
                if dir.is_none() {
                    log::warn!(
                        "{}: instance `{}` binds unknown port `{formal}` of `{}`",
                        module.name,
                        inst.name,
                        child.name
                    );
                }
                updates.push((mi, ii, bi, formal, dir));
            }
        }
    }
    for (mi, ii, bi, formal, dir) in updates {
        let binding = &mut design.modules[mi].instances[ii].bindings[bi];
        binding.formal = formal.clone();
        let stmt = &mut design.statements[binding.statement];
        if let Construct::Binding { formal: f, .. } = &mut stmt.construct {
            *f = formal;
        }
        match dir {
            Some(Direction::Output) => {
                stmt.writes = std::mem::take(&mut stmt.reads);
            }
            Some(Direction::Inout) => {
                stmt.writes = stmt.reads.clone();
            }
            _ => {}
        }
    }
    Ok(())
}
