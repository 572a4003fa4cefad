//! Bus protocol skeletons and their specialization.
//!
//! A skeleton is SystemVerilog text split into regions. Editable regions are
//! delimited by `//<<EDIT id hint>>` and `//<<END id>>` comment lines and
//! everything else is frozen. Frozen regions get ids `F0`, `F1`, ... in
//! order. Specialization asks a language model for editable fills and checks
//! that the frozen text survived.

use crate::ir::{Finding, InterfaceDesc, IrDocument, Protocol, Severity};
use crate::llm::{LlmClient, LlmError, LlmParams};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Interface,
    Driver,
    Monitor,
    Agent,
    /// Experimental glue composing agents; not tied to one protocol.
    Env,
}

impl ComponentKind {
    /// The kinds every protocol directory must provide.
    pub const PER_PROTOCOL: [ComponentKind; 4] =
        [Self::Interface, Self::Driver, Self::Monitor, Self::Agent];

    pub fn name(self) -> &'static str {
        match self {
            Self::Interface => "interface",
            Self::Driver => "driver",
            Self::Monitor => "monitor",
            Self::Agent => "agent",
            Self::Env => "env",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Self::Interface,
            Self::Driver,
            Self::Monitor,
            Self::Agent,
            Self::Env,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Frozen,
    Editable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub kind: RegionKind,
    /// For editable regions this includes both marker lines.
    pub text: String,
    pub hint: Option<String>,
}

impl Region {
    /// Text between the markers of an editable region.
    pub fn default_fill(&self) -> &str {
        if self.kind == RegionKind::Frozen {
            return &self.text;
        }
        let after_open = self.text.find('\n').map_or(self.text.len(), |i| i + 1);
        let body = &self.text[after_open..];
        let close = body.trim_end_matches('\n').rfind('\n').map_or(0, |i| i + 1);
        &body[..close]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    /// `<protocol>/<kind>`, or `env`.
    pub id: String,
    pub protocol: Option<Protocol>,
    pub kind: ComponentKind,
    pub regions: Vec<Region>,
}

#[derive(Debug, thiserror::Error)]
pub enum LibraryError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} does not name a supported protocol", path.display())]
    UnknownProtocol { path: PathBuf },
    #[error("{protocol} skeletons lack the {kind} component")]
    MissingComponent {
        protocol: Protocol,
        kind: ComponentKind,
    },
    #[error("{protocol} skeletons contain unexpected file {file}")]
    UnexpectedComponent { protocol: Protocol, file: String },
    #[error("{skeleton}:{line}: {message}")]
    Marker {
        skeleton: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("no skeletons for protocol {0}")]
    ProtocolUnsupported(String),
    #[error("{skeleton}: frozen regions changed after {attempts} attempts: {}", regions.join(", "))]
    FrozenRegionViolation {
        skeleton: String,
        regions: Vec<String>,
        attempts: u32,
    },
    #[error("language model unavailable: {0}")]
    LlmUnavailable(String),
    #[error("no interface named {0} in the IR")]
    UnknownInterface(String),
    #[error(transparent)]
    Library(#[from] LibraryError),
}

fn parse_marker<'a>(line: &'a str, prefix: &str) -> Option<&'a str> {
    line.trim()
        .strip_prefix(prefix)?
        .strip_suffix(">>")
        .map(str::trim)
}

impl Skeleton {
    pub fn parse(
        id: &str,
        protocol: Option<Protocol>,
        kind: ComponentKind,
        text: &str,
    ) -> Result<Self, LibraryError> {
        let err = |line: usize, message: String| LibraryError::Marker {
            skeleton: id.to_string(),
            line,
            message,
        };
        let mut regions = Vec::new();
        let mut frozen = String::new();
        let mut open: Option<(String, Option<String>, String, usize)> = None;
        let mut editable_ids = BTreeSet::new();
        let mut next_frozen = 0;
        for (n, line) in text.split_inclusive('\n').enumerate() {
            let lineno = n + 1;
            if let Some(rest) = parse_marker(line, "//<<EDIT") {
                if let Some((prev, ..)) = &open {
                    return Err(err(lineno, format!("region `{prev}` is still open")));
                }
                let (rid, hint) = match rest.split_once(char::is_whitespace) {
                    Some((a, b)) => (a, Some(b.trim().to_string())),
                    None => (rest, None),
                };
                if rid.is_empty() {
                    return Err(err(lineno, "editable region without an id".into()));
                }
                if is_frozen_id(rid) {
                    return Err(err(
                        lineno,
                        format!("`{rid}` is reserved for frozen regions"),
                    ));
                }
                if !editable_ids.insert(rid.to_string()) {
                    return Err(err(lineno, format!("duplicate region id `{rid}`")));
                }
                if frozen.is_empty() && !regions.is_empty() {
                    return Err(err(
                        lineno,
                        "editable regions must be separated by frozen text".into(),
                    ));
                }
                if !frozen.is_empty() {
                    regions.push(Region {
                        id: format!("F{next_frozen}"),
                        kind: RegionKind::Frozen,
                        text: std::mem::take(&mut frozen),
                        hint: None,
                    });
                    next_frozen += 1;
                }
                open = Some((rid.to_string(), hint, line.to_string(), lineno));
            } else if let Some(rid) = parse_marker(line, "//<<END") {
                match open.take() {
                    Some((oid, hint, mut body, _)) if oid == rid => {
                        body.push_str(line);
                        regions.push(Region {
                            id: oid,
                            kind: RegionKind::Editable,
                            text: body,
                            hint,
                        });
                    }
                    Some((oid, ..)) => {
                        return Err(err(lineno, format!("`END {rid}` closes region `{oid}`")))
                    }
                    None => {
                        return Err(err(lineno, format!("`END {rid}` without a matching EDIT")))
                    }
                }
            } else if let Some((_, _, body, _)) = &mut open {
                body.push_str(line);
            } else {
                frozen.push_str(line);
            }
        }
        if let Some((oid, _, _, lineno)) = open {
            return Err(err(lineno, format!("region `{oid}` is never closed")));
        }
        if !frozen.is_empty() {
            regions.push(Region {
                id: format!("F{next_frozen}"),
                kind: RegionKind::Frozen,
                text: frozen,
                hint: None,
            });
        }
        Ok(Self {
            id: id.to_string(),
            protocol,
            kind,
            regions,
        })
    }

    /// Concatenation of all regions, markers included.
    pub fn body(&self) -> String {
        self.regions.iter().map(|r| r.text.as_str()).collect()
    }

    pub fn region(&self, id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    pub fn frozen(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(|r| r.kind == RegionKind::Frozen)
    }

    pub fn editable(&self) -> impl Iterator<Item = &Region> {
        self.regions
            .iter()
            .filter(|r| r.kind == RegionKind::Editable)
    }

    /// Frozen text interleaved with fills. Missing fills fall back to the
    /// region's default content.
    pub fn assemble(&self, fills: &BTreeMap<String, String>) -> String {
        let mut out = String::new();
        for r in &self.regions {
            match r.kind {
                RegionKind::Frozen => out.push_str(&r.text),
                RegionKind::Editable => match fills.get(&r.id) {
                    Some(f) => out.push_str(f),
                    None => out.push_str(r.default_fill()),
                },
            }
        }
        out
    }

    /// Output with every editable region at its default content.
    pub fn defaults(&self) -> String {
        self.assemble(&BTreeMap::new())
    }
}

fn is_frozen_id(id: &str) -> bool {
    id.strip_prefix('F')
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Matched byte span of each frozen region, in region order.
type Anchors = Vec<Option<(usize, usize)>>;

fn anchor_forward(skel: &Skeleton, out: &str) -> Anchors {
    let last = skel.regions.len().saturating_sub(1);
    let mut pos = 0;
    let mut spans = Vec::new();
    for (i, r) in skel.regions.iter().enumerate() {
        if r.kind != RegionKind::Frozen {
            continue;
        }
        let t = r.text.as_str();
        let found = if i == 0 {
            out.starts_with(t).then_some(0)
        } else if i == last {
            (out.ends_with(t) && out.len() - t.len() >= pos).then(|| out.len() - t.len())
        } else {
            out[pos..].find(t).map(|p| p + pos)
        };
        if let Some(start) = found {
            pos = start + t.len();
            spans.push(Some((start, pos)));
        } else {
            spans.push(None);
        }
    }
    spans
}

fn anchor_backward(skel: &Skeleton, out: &str) -> Anchors {
    let last = skel.regions.len().saturating_sub(1);
    let mut end = out.len();
    let mut spans = Vec::new();
    for (i, r) in skel.regions.iter().enumerate().rev() {
        if r.kind != RegionKind::Frozen {
            continue;
        }
        let t = r.text.as_str();
        let found = if i == last {
            out.ends_with(t).then(|| out.len() - t.len())
        } else if i == 0 {
            (t.len() <= end && out.starts_with(t)).then_some(0)
        } else {
            out[..end].rfind(t)
        };
        if let Some(start) = found {
            spans.push(Some((start, start + t.len())));
            end = start;
        } else {
            spans.push(None);
        }
    }
    spans.reverse();
    spans
}

/// Ids of frozen regions that do not survive in `output`, in region order.
///
/// The output is anchored on the frozen texts once front to back and once
/// back to front. A region missed by either pass is reported, so two frozen
/// blocks that swapped places are both named.
pub fn verify_frozen_regions(skel: &Skeleton, output: &str) -> Vec<String> {
    let fwd = anchor_forward(skel, output);
    let bwd = anchor_backward(skel, output);
    skel.frozen()
        .zip(fwd.iter().zip(&bwd))
        .filter(|(_, (f, b))| f.is_none() || b.is_none())
        .map(|(r, _)| r.id.clone())
        .collect()
}

/// Splits an accepted output back into editable fills.
pub fn extract_fills(skel: &Skeleton, output: &str) -> Option<BTreeMap<String, String>> {
    let spans = anchor_forward(skel, output);
    if spans.iter().any(Option::is_none) {
        return None;
    }
    let mut spans = spans.into_iter().flatten();
    let mut fills = BTreeMap::new();
    let mut cursor = 0;
    let mut pending: Option<&str> = None;
    for r in &skel.regions {
        match r.kind {
            RegionKind::Editable => pending = Some(&r.id),
            RegionKind::Frozen => {
                let (start, end) = spans.next()?;
                if let Some(id) = pending.take() {
                    fills.insert(id.to_string(), output[cursor..start].to_string());
                }
                cursor = end;
            }
        }
    }
    if let Some(id) = pending {
        fills.insert(id.to_string(), output[cursor..].to_string());
    }
    Some(fills)
}

/// Skeletons for every supported protocol, plus the optional env skeleton.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProtocolLibrary {
    skeletons: BTreeMap<(Protocol, ComponentKind), Skeleton>,
    env: Option<Skeleton>,
}

macro_rules! builtin_files {
    ($($dir:literal => $proto:expr),* $(,)?) => {
        [$(
            ($proto, [
                include_str!(concat!("../protocols/", $dir, "/interface.svt")),
                include_str!(concat!("../protocols/", $dir, "/driver.svt")),
                include_str!(concat!("../protocols/", $dir, "/monitor.svt")),
                include_str!(concat!("../protocols/", $dir, "/agent.svt")),
            ]),
        )*]
    };
}

const BUILTIN_ENV: &str = include_str!("../protocols/env.svt");

fn skeleton_id(p: Protocol, k: ComponentKind) -> String {
    format!("{}/{}", p.name(), k.name())
}

impl ProtocolLibrary {
    /// The skeletons shipped with the crate.
    pub fn builtin() -> Self {
        let files = builtin_files!(
            "apb" => Protocol::Apb,
            "ahb" => Protocol::Ahb,
            "axi" => Protocol::Axi,
            "pchannel" => Protocol::PChannel,
            "qchannel" => Protocol::QChannel,
        );
        let mut lib = Self::default();
        for (p, texts) in files {
            for (k, text) in ComponentKind::PER_PROTOCOL.into_iter().zip(texts) {
                let s = Skeleton::parse(&skeleton_id(p, k), Some(p), k, text)
                    .expect("builtin skeletons are well formed");
                lib.skeletons.insert((p, k), s);
            }
        }
        lib.env = Some(
            Skeleton::parse("env", None, ComponentKind::Env, BUILTIN_ENV)
                .expect("builtin env skeleton is well formed"),
        );
        lib
    }

    /// Loads `<dir>/<protocol>/{interface,driver,monitor,agent}.svt` and an
    /// optional `<dir>/env.svt`.
    pub fn load(dir: &Path) -> Result<Self, LibraryError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| LibraryError::Io { path, source }
        };
        let mut lib = Self::default();
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(io(dir))?
            .collect::<Result<_, _>>()
            .map_err(io(dir))?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            if path.is_file() {
                if name == "env.svt" {
                    let text = std::fs::read_to_string(&path).map_err(io(&path))?;
                    lib.env = Some(Skeleton::parse("env", None, ComponentKind::Env, &text)?);
                }
                continue;
            }
            let protocol = Protocol::parse(&name)
                .filter(|p| *p != Protocol::Custom)
                .ok_or_else(|| LibraryError::UnknownProtocol { path: path.clone() })?;
            let mut found = BTreeSet::new();
            let mut files: Vec<_> = std::fs::read_dir(&path)
                .map_err(io(&path))?
                .collect::<Result<_, _>>()
                .map_err(io(&path))?;
            files.sort_by_key(|e| e.file_name());
            for f in files {
                let fpath = f.path();
                if fpath.extension().is_none_or(|e| e != "svt") {
                    continue;
                }
                let stem = fpath
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let kind = ComponentKind::parse(&stem)
                    .filter(|k| *k != ComponentKind::Env)
                    .ok_or_else(|| LibraryError::UnexpectedComponent {
                        protocol,
                        file: f.file_name().to_string_lossy().into_owned(),
                    })?;
                let text = std::fs::read_to_string(&fpath).map_err(io(&fpath))?;
                let s = Skeleton::parse(&skeleton_id(protocol, kind), Some(protocol), kind, &text)?;
                lib.skeletons.insert((protocol, kind), s);
                found.insert(kind);
            }
            if let Some(kind) = ComponentKind::PER_PROTOCOL
                .into_iter()
                .find(|k| !found.contains(k))
            {
                return Err(LibraryError::MissingComponent { protocol, kind });
            }
        }
        Ok(lib)
    }

    pub fn protocols(&self) -> Vec<Protocol> {
        let set: BTreeSet<Protocol> = self.skeletons.keys().map(|(p, _)| *p).collect();
        set.into_iter().collect()
    }

    pub fn get(&self, protocol: Protocol, kind: ComponentKind) -> Option<&Skeleton> {
        self.skeletons.get(&(protocol, kind))
    }

    pub fn env(&self) -> Option<&Skeleton> {
        self.env.as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Skeleton> {
        self.skeletons.values().chain(self.env.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedSkeleton {
    pub interface: String,
    pub skeleton: Skeleton,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub skeletons: Vec<SelectedSkeleton>,
    pub findings: Vec<Finding>,
}

/// Four skeletons per non-Custom interface, in interface order.
pub fn select_skeletons(
    ir: &IrDocument,
    lib: &ProtocolLibrary,
) -> Result<Selection, ProtocolError> {
    let mut sel = Selection::default();
    for iface in &ir.interfaces {
        if iface.protocol == Protocol::Custom {
            sel.findings.push(Finding {
                severity: Severity::Warning,
                code: "custom-protocol".into(),
                message: format!(
                    "interface {} uses a custom protocol; no skeletons selected",
                    iface.name
                ),
            });
            continue;
        }
        for kind in ComponentKind::PER_PROTOCOL {
            let skeleton = lib
                .get(iface.protocol, kind)
                .ok_or_else(|| ProtocolError::ProtocolUnsupported(iface.protocol.name().into()))?;
            sel.skeletons.push(SelectedSkeleton {
                interface: iface.name.clone(),
                skeleton: skeleton.clone(),
            });
        }
    }
    Ok(sel)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecializedComponent {
    pub skeleton_id: String,
    /// Interface the component was specialized for; `None` for env glue.
    pub interface: Option<String>,
    pub output_text: String,
    pub region_fills: BTreeMap<String, String>,
    pub attempts: u32,
    /// Editable regions the model left out; they keep their default content.
    pub defaulted: Vec<String>,
}

impl SpecializedComponent {
    /// `<interface>_<kind>.sv`, or `env.sv`.
    pub fn file_name(&self) -> String {
        let kind = self
            .skeleton_id
            .rsplit('/')
            .next()
            .unwrap_or(&self.skeleton_id);
        match &self.interface {
            Some(i) => format!("{i}_{kind}.sv"),
            None => format!("{kind}.sv"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpecializeOptions {
    pub max_attempts: u32,
    pub params: LlmParams,
}

impl Default for SpecializeOptions {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            params: LlmParams::default(),
        }
    }
}

fn render_interface(out: &mut String, i: &InterfaceDesc) {
    out.push_str(&format!(
        "interface {} protocol {} role {}\n",
        i.name,
        i.protocol.name(),
        i.role.name()
    ));
    for s in &i.signals {
        out.push_str(&format!(
            "  signal {} {} {} {}\n",
            s.name,
            s.direction.name(),
            s.width,
            s.role_tag
        ));
    }
    for r in &i.address_ranges {
        out.push_str(&format!("  range {:#x} {:#x}\n", r.base, r.size));
    }
}

/// Prompt for one attempt. `violation` carries the region ids broken by the
/// previous attempt.
pub fn build_prompt(
    skel: &Skeleton,
    ir: &IrDocument,
    iface: Option<&InterfaceDesc>,
    violation: Option<&[String]>,
) -> String {
    let mut p = String::new();
    match iface {
        Some(i) => p.push_str(&format!(
            "Specialize the {} skeleton below for interface `{}` of module `{}`.\n",
            skel.id, i.name, ir.module_name
        )),
        None => p.push_str(&format!(
            "Specialize the {} skeleton below for module `{}`.\n",
            skel.id, ir.module_name
        )),
    }
    p.push_str(
        "Fill only the regions between //<<EDIT id hint>> and //<<END id>>. \
         Text outside those regions is frozen and must stay byte-for-byte identical.\n\
         Answer with one block per editable region and nothing else:\n\
         //<<FILL id>>\n<code>\n//<<END id>>\n\n",
    );
    p.push_str("Interfaces:\n");
    match iface {
        Some(i) => render_interface(&mut p, i),
        None => ir
            .interfaces
            .iter()
            .for_each(|i| render_interface(&mut p, i)),
    }
    let regs: Vec<_> = ir
        .registers
        .iter()
        .filter(|r| iface.is_none_or(|i| ir.register_map(r).is_some_and(|m| m.name == i.name)))
        .collect();
    if !regs.is_empty() {
        p.push_str("Registers:\n");
        for r in regs {
            p.push_str(&format!(
                "  {} offset {:#x} width {} reset {:#x} {}\n",
                r.name,
                r.offset,
                r.width,
                r.reset_value,
                r.access.name()
            ));
        }
    }
    if !ir.timing.clocks.is_empty() || !ir.timing.resets.is_empty() {
        p.push_str("Timing:\n");
        for c in &ir.timing.clocks {
            match &c.period {
                Some(period) => p.push_str(&format!("  clock {} {period}\n", c.name)),
                None => p.push_str(&format!("  clock {}\n", c.name)),
            }
        }
        for r in &ir.timing.resets {
            let level = match r.active {
                crate::ir::ActiveLevel::Low => "low",
                crate::ir::ActiveLevel::High => "high",
            };
            p.push_str(&format!("  reset {} active {level}\n", r.name));
        }
    }
    p.push_str("Editable regions:\n");
    for r in skel.editable() {
        p.push_str(&format!(
            "  {}: {}\n",
            r.id,
            r.hint.as_deref().unwrap_or("")
        ));
    }
    p.push_str("\nSkeleton:\n");
    p.push_str(&skel.body());
    if let Some(ids) = violation {
        p.push_str(&format!(
            "\nThe previous answer altered frozen regions {}. Return fills only and leave frozen text untouched.\n",
            ids.join(", ")
        ));
    }
    p
}

/// `//<<FILL id>>` blocks from a response, or `None` when there are none.
pub fn parse_fills(response: &str) -> Option<BTreeMap<String, String>> {
    let mut fills = BTreeMap::new();
    let mut open: Option<(String, String)> = None;
    for line in response.split_inclusive('\n') {
        if let Some(id) = parse_marker(line, "//<<FILL") {
            open = Some((id.to_string(), String::new()));
        } else if let Some(id) = parse_marker(line, "//<<END") {
            if let Some((oid, body)) = open.take_if(|(oid, _)| oid == id) {
                fills.insert(oid, body);
            }
        } else if let Some((_, body)) = &mut open {
            body.push_str(line);
        }
    }
    (!fills.is_empty()).then_some(fills)
}

fn strip_code_fence(s: &str) -> &str {
    let t = s.trim_start();
    let Some(rest) = t.strip_prefix("```") else {
        return s;
    };
    let Some(nl) = rest.find('\n') else {
        return s;
    };
    let body = &rest[nl + 1..];
    match body.trim_end().strip_suffix("```") {
        Some(b) => b,
        None => s,
    }
}

fn normalize_fill(mut f: String) -> String {
    if !f.is_empty() && !f.ends_with('\n') {
        f.push('\n');
    }
    f
}

/// Fills the editable regions of `skel` through `llm`.
///
/// `interface` names the IR interface to specialize for; when absent the
/// first interface of the skeleton's protocol is used, and env skeletons see
/// every interface.
pub fn specialize(
    skel: &Skeleton,
    ir: &IrDocument,
    interface: Option<&str>,
    llm: &dyn LlmClient,
    opts: &SpecializeOptions,
) -> Result<SpecializedComponent, ProtocolError> {
    let iface = match (interface, skel.protocol) {
        (Some(name), _) => Some(
            ir.interface(name)
                .ok_or_else(|| ProtocolError::UnknownInterface(name.into()))?,
        ),
        (None, Some(p)) => ir.interfaces.iter().find(|i| i.protocol == p),
        (None, None) => None,
    };
    let scope = iface.map_or("env", |i| i.name.as_str());
    let editable: BTreeSet<&str> = skel.editable().map(|r| r.id.as_str()).collect();
    let mut violation: Option<Vec<String>> = None;
    let attempts = opts.max_attempts.max(1);
    for attempt in 1..=attempts {
        let prompt = build_prompt(skel, ir, iface, violation.as_deref());
        let mut params = opts.params.clone();
        params.key = Some(format!("specialize/{scope}/{}/{attempt}", skel.kind.name()));
        let response = llm.complete(&prompt, &params).map_err(|e| match e {
            LlmError::Unavailable(m) => ProtocolError::LlmUnavailable(m),
            other => ProtocolError::LlmUnavailable(other.to_string()),
        })?;
        let given = parse_fills(&response);
        let output = match &given {
            Some(raw) => {
                let fills: BTreeMap<String, String> = raw
                    .iter()
                    .filter(|(k, _)| editable.contains(k.as_str()))
                    .map(|(k, v)| (k.clone(), normalize_fill(v.clone())))
                    .collect();
                skel.assemble(&fills)
            }
            None => strip_code_fence(&response).to_string(),
        };
        let broken = verify_frozen_regions(skel, &output);
        if !broken.is_empty() {
            log::warn!(
                "{} attempt {attempt}: frozen regions changed: {broken:?}",
                skel.id
            );
            violation = Some(broken);
            continue;
        }
        let region_fills = extract_fills(skel, &output).expect("verified output anchors");
        let defaulted = match &given {
            Some(g) => editable
                .iter()
                .filter(|id| !g.contains_key(**id))
                .map(|id| id.to_string())
                .collect(),
            None => Vec::new(),
        };
        return Ok(SpecializedComponent {
            skeleton_id: skel.id.clone(),
            interface: iface.map(|i| i.name.clone()),
            output_text: output,
            region_fills,
            attempts: attempt,
            defaulted,
        });
    }
    Err(ProtocolError::FrozenRegionViolation {
        skeleton: skel.id.clone(),
        regions: violation.unwrap_or_default(),
        attempts,
    })
}
