//! Verification-oriented intermediate representation.
//!
//! The text form has five bracketed sections in any order:
//!
//! ```text
//! [MODULE]
//! name: pwrctrl
//!
//! [INTERFACES]
//! interface apb0
//!   protocol: APB
//!   role: subordinate
//!   signal psel in 1 select
//!   range 0x000 0x100
//!
//! [REGISTERS]
//! register CTRL
//!   offset: 0x000
//!   width: 32
//!   reset: 0x0
//!   access: RW
//!
//! [TIMING]
//! clock pclk 10ns
//! reset presetn low
//! constraint: pready may stay low for up to 4 cycles
//!
//! [FUNCTIONAL]
//! point FP1 (apb, reset): CTRL reads back zero after reset
//! ```
//!
//! Lines starting with `#` are comments. Unrecognized `key: value` lines are
//! kept as annotations on the enclosing entry or section.

use crate::verilog::{DesignModel, Direction};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

pub type Annotations = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "APB")]
    Apb,
    #[serde(rename = "AHB")]
    Ahb,
    #[serde(rename = "AXI")]
    Axi,
    PChannel,
    QChannel,
    Custom,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Self::Apb,
        Self::Ahb,
        Self::Axi,
        Self::PChannel,
        Self::QChannel,
        Self::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Apb => "APB",
            Self::Ahb => "AHB",
            Self::Axi => "AXI",
            Self::PChannel => "PChannel",
            Self::QChannel => "QChannel",
            Self::Custom => "Custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Manager,
    Subordinate,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Self::Manager => "manager",
            Self::Subordinate => "subordinate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "manager" => Some(Self::Manager),
            "subordinate" => Some(Self::Subordinate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalDir {
    In,
    Out,
    Inout,
}

impl SignalDir {
    pub fn name(self) -> &'static str {
        match self {
            Self::In => "in",
            Self::Out => "out",
            Self::Inout => "inout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "in" => Some(Self::In),
            "out" => Some(Self::Out),
            "inout" => Some(Self::Inout),
            _ => None,
        }
    }

    pub fn matches(self, d: Direction) -> bool {
        matches!(
            (self, d),
            (Self::In, Direction::Input)
                | (Self::Out, Direction::Output)
                | (Self::Inout, Direction::Inout)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrSignal {
    pub name: String,
    pub direction: SignalDir,
    pub width: u32,
    pub role_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressRange {
    pub base: u64,
    pub size: u64,
}

impl AddressRange {
    /// Exclusive end, saturating.
    pub fn end(&self) -> u64 {
        self.base.saturating_add(self.size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceDesc {
    pub name: String,
    pub protocol: Protocol,
    pub role: Role,
    pub signals: Vec<IrSignal>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub address_ranges: Vec<AddressRange>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: Annotations,
}

impl InterfaceDesc {
    pub fn signal(&self, name: &str) -> Option<&IrSignal> {
        self.signals.iter().find(|s| s.name == name)
    }

    /// Signal carrying a protocol role tag such as `select` or `rdata`.
    pub fn signal_by_role(&self, tag: &str) -> Option<&IrSignal> {
        self.signals.iter().find(|s| s.role_tag == tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Access {
    RW,
    RO,
    WO,
    W1C,
    LOCKED,
}

impl Access {
    pub fn name(self) -> &'static str {
        match self {
            Self::RW => "RW",
            Self::RO => "RO",
            Self::WO => "WO",
            Self::W1C => "W1C",
            Self::LOCKED => "LOCKED",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::RW, Self::RO, Self::WO, Self::W1C, Self::LOCKED]
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
    }

    pub fn writable(self) -> bool {
        !matches!(self, Self::RO)
    }

    pub fn readable(self) -> bool {
        !matches!(self, Self::WO)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterDesc {
    pub name: String,
    pub offset: u64,
    pub width: u32,
    pub reset_value: u64,
    pub access: Access,
    /// Address map the register lives in; the first interface when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interface: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: Annotations,
}

impl RegisterDesc {
    /// Bytes occupied in the address map.
    pub fn byte_span(&self) -> u64 {
        u64::from(self.width.max(1)).div_ceil(8)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockDesc {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActiveLevel {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResetDesc {
    pub name: String,
    pub active: ActiveLevel,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingDesc {
    pub clocks: Vec<ClockDesc>,
    pub resets: Vec<ResetDesc>,
    pub constraints: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: Annotations,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalPoint {
    pub id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrDocument {
    pub module_name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub module_annotations: Annotations,
    pub interfaces: Vec<InterfaceDesc>,
    pub registers: Vec<RegisterDesc>,
    pub timing: TimingDesc,
    pub functional_points: Vec<FunctionalPoint>,
}

#[derive(Debug, thiserror::Error)]
pub enum IrError {
    #[error("missing section [{0}]")]
    MissingSection(String),
    #[error("section [{0}] appears twice")]
    DuplicateSection(String),
    #[error("unknown section [{name}] at line {line}")]
    UnknownSection { name: String, line: usize },
    #[error("[{section}] line {line}: {message}")]
    FieldError {
        section: String,
        line: usize,
        message: String,
    },
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub const SECTIONS: [&str; 5] = ["MODULE", "INTERFACES", "REGISTERS", "TIMING", "FUNCTIONAL"];

fn parse_uint(s: &str) -> Option<u64> {
    let s = s.trim().replace('_', "");
    if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()
    } else if let Some(b) = s.strip_prefix("0b") {
        u64::from_str_radix(b, 2).ok()
    } else {
        s.parse().ok()
    }
}

fn key_value(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once(':')?;
    let k = k.trim();
    (!k.is_empty() && !k.contains(char::is_whitespace)).then_some((k, v.trim()))
}

struct Ctx<'a> {
    section: &'a str,
    line: usize,
}

impl Ctx<'_> {
    fn err(&self, message: impl Into<String>) -> IrError {
        IrError::FieldError {
            section: self.section.to_string(),
            line: self.line,
            message: message.into(),
        }
    }
}

pub fn read_ir(path: &Path) -> Result<IrDocument, IrError> {
    let text = std::fs::read_to_string(path).map_err(|source| IrError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ir(&text)
}

pub fn parse_ir(text: &str) -> Result<IrDocument, IrError> {
    // Split into sections first.
    let mut sections: BTreeMap<&str, Vec<(usize, &str)>> = BTreeMap::new();
    let mut current: Option<&str> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        let t = line.trim_start();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            let known = SECTIONS
                .iter()
                .find(|s| s.eq_ignore_ascii_case(name))
                .ok_or_else(|| IrError::UnknownSection {
                    name: name.to_string(),
                    line: n + 1,
                })?;
            if sections.insert(known, Vec::new()).is_some() {
                return Err(IrError::DuplicateSection(known.to_string()));
            }
            current = Some(known);
            continue;
        }
        match current {
            Some(sec) => sections.get_mut(sec).expect("opened").push((n + 1, line)),
            None => {
                return Err(IrError::FieldError {
                    section: String::new(),
                    line: n + 1,
                    message: "content before the first section".into(),
                })
            }
        }
    }
    for s in SECTIONS {
        if !sections.contains_key(s) {
            return Err(IrError::MissingSection(s.to_string()));
        }
    }

    let mut module_name = None;
    let mut module_annotations = Annotations::new();
    for &(line, text) in &sections["MODULE"] {
        let ctx = Ctx {
            section: "MODULE",
            line,
        };
        let (k, v) = key_value(text).ok_or_else(|| ctx.err("expected `key: value`"))?;
        if k == "name" {
            module_name = Some(v.to_string());
        } else {
            module_annotations.insert(k.to_string(), v.to_string());
        }
    }
    let module_name = module_name
        .filter(|n| !n.is_empty())
        .ok_or_else(|| IrError::FieldError {
            section: "MODULE".into(),
            line: 0,
            message: "missing `name`".into(),
        })?;

    Ok(IrDocument {
        module_name,
        module_annotations,
        interfaces: parse_interfaces(&sections["INTERFACES"])?,
        registers: parse_registers(&sections["REGISTERS"])?,
        timing: parse_timing(&sections["TIMING"])?,
        functional_points: parse_functional(&sections["FUNCTIONAL"])?,
    })
}

/// Groups `head <name>` blocks with their body lines.
fn blocks<'a>(
    lines: &[(usize, &'a str)],
    head: &str,
    section: &str,
) -> Result<Vec<(usize, &'a str, Vec<(usize, &'a str)>)>, IrError> {
    let mut out: Vec<(usize, &str, Vec<(usize, &str)>)> = Vec::new();
    for &(line, text) in lines {
        let t = text.trim();
        if let Some(rest) = t.strip_prefix(head).filter(|r| r.starts_with(' ')) {
            out.push((line, rest.trim(), Vec::new()));
        } else if let Some(last) = out.last_mut() {
            last.2.push((line, t));
        } else {
            return Err(IrError::FieldError {
                section: section.to_string(),
                line,
                message: format!("expected `{head} <name>`"),
            });
        }
    }
    Ok(out)
}

fn parse_interfaces(lines: &[(usize, &str)]) -> Result<Vec<InterfaceDesc>, IrError> {
    let mut out = Vec::new();
    for (line, name, body) in blocks(lines, "interface", "INTERFACES")? {
        let head = Ctx {
            section: "INTERFACES",
            line,
        };
        let mut protocol = None;
        let mut role = None;
        let mut signals = Vec::new();
        let mut address_ranges = Vec::new();
        let mut annotations = Annotations::new();
        for (line, t) in body {
            let ctx = Ctx {
                section: "INTERFACES",
                line,
            };
            let words: Vec<&str> = t.split_whitespace().collect();
            match words.first().copied() {
                Some("signal") => {
                    if words.len() != 5 {
                        return Err(
                            ctx.err("expected `signal <name> <in|out|inout> <width> <role>`")
                        );
                    }
                    signals.push(IrSignal {
                        name: words[1].to_string(),
                        direction: SignalDir::parse(words[2])
                            .ok_or_else(|| ctx.err(format!("bad direction `{}`", words[2])))?,
                        width: words[3]
                            .parse()
                            .map_err(|_| ctx.err(format!("bad width `{}`", words[3])))?,
                        role_tag: words[4].to_string(),
                    });
                }
                Some("range") => {
                    if words.len() != 3 {
                        return Err(ctx.err("expected `range <base> <size>`"));
                    }
                    let base = parse_uint(words[1]).ok_or_else(|| ctx.err("bad range base"))?;
                    let size = parse_uint(words[2]).ok_or_else(|| ctx.err("bad range size"))?;
                    address_ranges.push(AddressRange { base, size });
                }
                _ => {
                    let (k, v) = key_value(t).ok_or_else(|| ctx.err("expected `key: value`"))?;
                    match k {
                        "protocol" => {
                            protocol = Some(
                                Protocol::parse(v)
                                    .ok_or_else(|| ctx.err(format!("unknown protocol `{v}`")))?,
                            )
                        }
                        "role" => {
                            role = Some(
                                Role::parse(v)
                                    .ok_or_else(|| ctx.err(format!("unknown role `{v}`")))?,
                            )
                        }
                        _ => {
                            annotations.insert(k.to_string(), v.to_string());
                        }
                    }
                }
            }
        }
        out.push(InterfaceDesc {
            name: name.to_string(),
            protocol: protocol
                .ok_or_else(|| head.err(format!("interface {name} has no protocol")))?,
            role: role.ok_or_else(|| head.err(format!("interface {name} has no role")))?,
            signals,
            address_ranges,
            annotations,
        });
    }
    Ok(out)
}

fn parse_registers(lines: &[(usize, &str)]) -> Result<Vec<RegisterDesc>, IrError> {
    let mut out = Vec::new();
    for (line, name, body) in blocks(lines, "register", "REGISTERS")? {
        let head = Ctx {
            section: "REGISTERS",
            line,
        };
        let mut fields: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let mut annotations = Annotations::new();
        for (line, t) in body {
            let ctx = Ctx {
                section: "REGISTERS",
                line,
            };
            let (k, v) = key_value(t).ok_or_else(|| ctx.err("expected `key: value`"))?;
            match k {
                "offset" | "width" | "reset" | "access" | "interface" => {
                    fields.insert(k, (line, v));
                }
                _ => {
                    annotations.insert(k.to_string(), v.to_string());
                }
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| head.err(format!("register {name} has no `{k}`")))
        };
        let num = |k: &str| -> Result<u64, IrError> {
            let (line, v) = get(k)?;
            parse_uint(v).ok_or_else(|| {
                Ctx {
                    section: "REGISTERS",
                    line,
                }
                .err(format!("bad number `{v}` for {k}"))
            })
        };
        let (aline, access) = get("access")?;
        out.push(RegisterDesc {
            name: name.to_string(),
            offset: num("offset")?,
            width: u32::try_from(num("width")?).map_err(|_| head.err("width out of range"))?,
            reset_value: num("reset")?,
            access: Access::parse(access).ok_or_else(|| {
                Ctx {
                    section: "REGISTERS",
                    line: aline,
                }
                .err(format!("unknown access `{access}`"))
            })?,
            interface: fields.get("interface").map(|(_, v)| v.to_string()),
            annotations,
        });
    }
    Ok(out)
}

fn parse_timing(lines: &[(usize, &str)]) -> Result<TimingDesc, IrError> {
    let mut t = TimingDesc::default();
    for &(line, text) in lines {
        let ctx = Ctx {
            section: "TIMING",
            line,
        };
        let text = text.trim();
        let words: Vec<&str> = text.split_whitespace().collect();
        match words.first().copied() {
            Some("clock") if words.len() == 2 || words.len() == 3 => t.clocks.push(ClockDesc {
                name: words[1].to_string(),
                period: words.get(2).map(|s| s.to_string()),
            }),
            Some("reset") if words.len() == 3 => t.resets.push(ResetDesc {
                name: words[1].to_string(),
                active: match words[2] {
                    "low" => ActiveLevel::Low,
                    "high" => ActiveLevel::High,
                    other => return Err(ctx.err(format!("bad reset level `{other}`"))),
                },
            }),
            Some("clock") | Some("reset") => {
                return Err(ctx.err("expected `clock <name> [period]` or `reset <name> <low|high>`"))
            }
            _ => {
                let (k, v) = key_value(text).ok_or_else(|| ctx.err("expected `key: value`"))?;
                if k == "constraint" {
                    t.constraints.push(v.to_string());
                } else {
                    t.annotations.insert(k.to_string(), v.to_string());
                }
            }
        }
    }
    Ok(t)
}

fn parse_functional(lines: &[(usize, &str)]) -> Result<Vec<FunctionalPoint>, IrError> {
    let mut out = Vec::new();
    for &(line, text) in lines {
        let ctx = Ctx {
            section: "FUNCTIONAL",
            line,
        };
        let rest = text
            .trim()
            .strip_prefix("point ")
            .ok_or_else(|| ctx.err("expected `point <id> [(tags)]: description`"))?;
        let (head, description) = rest
            .split_once(':')
            .ok_or_else(|| ctx.err("missing `:` before the description"))?;
        let head = head.trim();
        let (id, tags) = match head.split_once('(') {
            Some((id, tags)) => {
                let tags = tags
                    .strip_suffix(')')
                    .ok_or_else(|| ctx.err("unclosed tag list"))?;
                (
                    id.trim(),
                    tags.split(',')
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(String::from)
                        .collect(),
                )
            }
            None => (head, Vec::new()),
        };
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(ctx.err(format!("bad point id `{id}`")));
        }
        out.push(FunctionalPoint {
            id: id.to_string(),
            description: description.trim().to_string(),
            tags,
        });
    }
    Ok(out)
}

impl IrDocument {
    pub fn interface(&self, name: &str) -> Option<&InterfaceDesc> {
        self.interfaces.iter().find(|i| i.name == name)
    }

    /// Interface whose address map holds `reg`.
    pub fn register_map(&self, reg: &RegisterDesc) -> Option<&InterfaceDesc> {
        match &reg.interface {
            Some(n) => self.interface(n),
            None => self.interfaces.first(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("[MODULE]\n");
        s.push_str(&format!("name: {}\n", self.module_name));
        for (k, v) in &self.module_annotations {
            s.push_str(&format!("{k}: {v}\n"));
        }
        s.push_str("\n[INTERFACES]\n");
        for i in &self.interfaces {
            s.push_str(&format!("interface {}\n", i.name));
            s.push_str(&format!(
                "  protocol: {}\n  role: {}\n",
                i.protocol,
                i.role.name()
            ));
            for (k, v) in &i.annotations {
                s.push_str(&format!("  {k}: {v}\n"));
            }
            for sig in &i.signals {
                s.push_str(&format!(
                    "  signal {} {} {} {}\n",
                    sig.name,
                    sig.direction.name(),
                    sig.width,
                    sig.role_tag
                ));
            }
            for r in &i.address_ranges {
                s.push_str(&format!("  range {:#x} {:#x}\n", r.base, r.size));
            }
        }
        s.push_str("\n[REGISTERS]\n");
        for r in &self.registers {
            s.push_str(&format!(
                "register {}\n  offset: {:#05x}\n  width: {}\n  reset: {:#x}\n  access: {}\n",
                r.name,
                r.offset,
                r.width,
                r.reset_value,
                r.access.name()
            ));
            if let Some(i) = &r.interface {
                s.push_str(&format!("  interface: {i}\n"));
            }
            for (k, v) in &r.annotations {
                s.push_str(&format!("  {k}: {v}\n"));
            }
        }
        s.push_str("\n[TIMING]\n");
        for c in &self.timing.clocks {
            match &c.period {
                Some(p) => s.push_str(&format!("clock {} {p}\n", c.name)),
                None => s.push_str(&format!("clock {}\n", c.name)),
            }
        }
        for r in &self.timing.resets {
            let level = match r.active {
                ActiveLevel::Low => "low",
                ActiveLevel::High => "high",
            };
            s.push_str(&format!("reset {} {level}\n", r.name));
        }
        for c in &self.timing.constraints {
            s.push_str(&format!("constraint: {c}\n"));
        }
        for (k, v) in &self.timing.annotations {
            s.push_str(&format!("{k}: {v}\n"));
        }
        s.push_str("\n[FUNCTIONAL]\n");
        for p in &self.functional_points {
            if p.tags.is_empty() {
                s.push_str(&format!("point {}: {}\n", p.id, p.description));
            } else {
                s.push_str(&format!(
                    "point {} ({}): {}\n",
                    p.id,
                    p.tags.join(", "),
                    p.description
                ));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}]: {}", self.code, self.message)
    }
}

fn finding(out: &mut Vec<Finding>, severity: Severity, code: &str, message: String) {
    out.push(Finding {
        severity,
        code: code.to_string(),
        message,
    });
}

/// Consistency checks, optionally against a parsed design.
pub fn validate_ir(doc: &IrDocument, model: Option<&DesignModel>) -> Vec<Finding> {
    use Severity::*;
    let mut out = Vec::new();
    let f = &mut out;
    if !crate::verilog::is_identifier(&doc.module_name) {
        finding(
            f,
            Error,
            "module-name",
            format!("`{}` is not an identifier", doc.module_name),
        );
    }
    let mut ids = BTreeSet::new();
    for p in &doc.functional_points {
        if !ids.insert(p.id.as_str()) {
            finding(
                f,
                Error,
                "duplicate-point",
                format!("functional point {} repeated", p.id),
            );
        }
    }
    let mut names = BTreeSet::new();
    for i in &doc.interfaces {
        if !names.insert(i.name.as_str()) {
            finding(
                f,
                Error,
                "duplicate-interface",
                format!("interface {} repeated", i.name),
            );
        }
        let mut sigs = BTreeSet::new();
        for s in &i.signals {
            if s.width < 1 {
                finding(
                    f,
                    Error,
                    "signal-width",
                    format!("{}.{} has width 0", i.name, s.name),
                );
            }
            if !sigs.insert(s.name.as_str()) {
                finding(
                    f,
                    Error,
                    "duplicate-signal",
                    format!("{}.{} repeated", i.name, s.name),
                );
            }
        }
        for (k, a) in i.address_ranges.iter().enumerate() {
            if a.size == 0 {
                finding(
                    f,
                    Error,
                    "range-size",
                    format!("{} range {k} is empty", i.name),
                );
            }
            for b in &i.address_ranges[k + 1..] {
                if a.base < b.end() && b.base < a.end() {
                    finding(
                        f,
                        Error,
                        "range-overlap",
                        format!(
                            "{} ranges {:#x}+{:#x} and {:#x}+{:#x} overlap",
                            i.name, a.base, a.size, b.base, b.size
                        ),
                    );
                }
            }
        }
    }
    let mut reg_names = BTreeSet::new();
    let mut maps: BTreeMap<Option<&str>, Vec<&RegisterDesc>> = BTreeMap::new();
    for r in &doc.registers {
        if !reg_names.insert(r.name.as_str()) {
            finding(
                f,
                Error,
                "duplicate-register",
                format!("register {} repeated", r.name),
            );
        }
        if r.width < 1 || r.width > 64 {
            finding(
                f,
                Error,
                "register-width",
                format!("register {} width {} outside 1..=64", r.name, r.width),
            );
        } else if r.width < 64 && r.reset_value >> r.width != 0 {
            finding(
                f,
                Error,
                "reset-width",
                format!(
                    "register {} reset {:#x} does not fit {} bits",
                    r.name, r.reset_value, r.width
                ),
            );
        }
        if let Some(i) = &r.interface {
            if doc.interface(i).is_none() {
                finding(
                    f,
                    Error,
                    "register-interface",
                    format!("register {} names unknown interface {i}", r.name),
                );
            }
        }
        let map = doc.register_map(r);
        if let Some(i) = map {
            let end = r.offset.saturating_add(r.byte_span());
            if !i.address_ranges.is_empty()
                && !i
                    .address_ranges
                    .iter()
                    .any(|a| a.base <= r.offset && end <= a.end())
            {
                finding(
                    f,
                    Warning,
                    "register-range",
                    format!(
                        "register {} at {:#x} lies outside {}'s address ranges",
                        r.name, r.offset, i.name
                    ),
                );
            }
        }
        maps.entry(map.map(|i| i.name.as_str()))
            .or_default()
            .push(r);
    }
    for regs in maps.values() {
        for (k, a) in regs.iter().enumerate() {
            for b in &regs[k + 1..] {
                let (ae, be) = (
                    a.offset.saturating_add(a.byte_span()),
                    b.offset.saturating_add(b.byte_span()),
                );
                if a.offset < be && b.offset < ae {
                    finding(
                        f,
                        Error,
                        "register-overlap",
                        format!(
                            "registers {} ({:#x}) and {} ({:#x}) overlap",
                            a.name, a.offset, b.name, b.offset
                        ),
                    );
                }
            }
        }
    }
    if doc.timing.clocks.is_empty()
        && doc
            .interfaces
            .iter()
            .any(|i| i.protocol != Protocol::Custom)
    {
        finding(
            f,
            Error,
            "no-clock",
            "bus interfaces need at least one clock".into(),
        );
    }
    if let Some(model) = model {
        cross_check(doc, model, f);
    }
    out
}

fn cross_check(doc: &IrDocument, model: &DesignModel, f: &mut Vec<Finding>) {
    use Severity::*;
    let Some(top) = model.top() else {
        finding(f, Error, "design-top", "design has no top module".into());
        return;
    };
    if top.name != doc.module_name {
        finding(
            f,
            Warning,
            "module-name",
            format!(
                "IR module {} differs from design top {}",
                doc.module_name, top.name
            ),
        );
    }
    for i in &doc.interfaces {
        for s in &i.signals {
            let Some(port) = top.port(&s.name) else {
                finding(
                    f,
                    Error,
                    "missing-port",
                    format!("{}.{} is not a port of {}", i.name, s.name, top.name),
                );
                continue;
            };
            if !s.direction.matches(port.direction) {
                finding(
                    f,
                    Error,
                    "port-direction",
                    format!(
                        "{}.{} is {} in the IR but {} in the design",
                        i.name,
                        s.name,
                        s.direction.name(),
                        port.direction
                    ),
                );
            }
            if port.width != s.width {
                finding(
                    f,
                    Error,
                    "port-width",
                    format!(
                        "{}.{} has width {} in the IR but {} in the design",
                        i.name, s.name, s.width, port.width
                    ),
                );
            }
        }
    }
    for c in &doc.timing.clocks {
        if !top.is_port(&c.name) {
            finding(
                f,
                Warning,
                "clock-port",
                format!("clock {} is not a port of {}", c.name, top.name),
            );
        }
    }
    for r in &doc.timing.resets {
        if !top.is_port(&r.name) {
            finding(
                f,
                Warning,
                "reset-port",
                format!("reset {} is not a port of {}", r.name, top.name),
            );
        }
    }
}

pub fn has_errors(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[MODULE]\nname: m\n[INTERFACES]\ninterface bus\n  protocol: APB\n  role: subordinate\n  signal psel in 1 select\n[REGISTERS]\n[TIMING]\nclock clk\n[FUNCTIONAL]\n";

    #[test]
    fn minimal_document() {
        let d = parse_ir(MINIMAL).unwrap();
        assert_eq!(d.module_name, "m");
        assert_eq!(d.interfaces[0].protocol, Protocol::Apb);
        assert!(d.registers.is_empty());
        assert!(validate_ir(&d, None).is_empty());
    }

    #[test]
    fn missing_and_duplicate_sections() {
        let no_regs = MINIMAL.replace("[REGISTERS]\n", "");
        assert!(matches!(parse_ir(&no_regs), Err(IrError::MissingSection(s)) if s == "REGISTERS"));
        let dup = format!("{MINIMAL}[TIMING]\n");
        assert!(matches!(parse_ir(&dup), Err(IrError::DuplicateSection(s)) if s == "TIMING"));
        let unknown = format!("{MINIMAL}[EXTRA]\n");
        assert!(matches!(
            parse_ir(&unknown),
            Err(IrError::UnknownSection { .. })
        ));
    }

    #[test]
    fn field_errors_carry_line() {
        let bad = MINIMAL.replace("signal psel in 1 select", "signal psel sideways 1 select");
        match parse_ir(&bad) {
            Err(IrError::FieldError { section, line, .. }) => {
                assert_eq!(section, "INTERFACES");
                assert_eq!(line, 7);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_become_annotations() {
        let d = parse_ir(&MINIMAL.replace("name: m\n", "name: m\nowner: soc-team\n")).unwrap();
        assert_eq!(d.module_annotations["owner"], "soc-team");
    }

    #[test]
    fn overlapping_registers_are_flagged() {
        let text = MINIMAL.replace(
            "[REGISTERS]\n",
            "[REGISTERS]\nregister A\n  offset: 0x0\n  width: 32\n  reset: 0\n  access: RW\nregister B\n  offset: 0x2\n  width: 16\n  reset: 0\n  access: RO\n",
        );
        let f = validate_ir(&parse_ir(&text).unwrap(), None);
        assert_eq!(f.iter().filter(|x| x.code == "register-overlap").count(), 1);
    }

    #[test]
    fn reset_must_fit() {
        let text = MINIMAL.replace(
            "[REGISTERS]\n",
            "[REGISTERS]\nregister A\n  offset: 0x0\n  width: 4\n  reset: 0x10\n  access: LOCKED\n",
        );
        let f = validate_ir(&parse_ir(&text).unwrap(), None);
        assert!(f.iter().any(|x| x.code == "reset-width"));
    }
}
