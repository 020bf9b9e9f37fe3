// SPDX-License-Identifier: Apache-2.0

//! Compiler-directive resolution and source merging.
//!
//! Handles `` `define `` (object- and function-like), `` `undef ``,
//! `` `include ``, the `` `ifdef `` family and strips `` `timescale `` and a
//! few bookkeeping directives. Directives must start their line. Directive
//! lines are dropped from the output together with their newline, and every
//! output byte is attributed to an original (file, line) through the origin
//! map.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::span::Span;

const MAX_EXPANSION_DEPTH: usize = 64;
const MAX_INCLUDE_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Origin {
    pub file: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginRange {
    pub span: Span,
    pub origin: Origin,
}

/// Merged, directive-free source text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SourceUnit {
    pub text: String,
    /// Ranges partition `[0, text.len())` in ascending order.
    pub origin_map: Vec<OriginRange>,
    pub defines_used: BTreeSet<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("offset {offset} is outside the {len}-byte unit")]
pub struct OutOfRange {
    pub offset: usize,
    pub len: usize,
}

impl SourceUnit {
    pub fn locate(&self, offset: usize) -> Result<Origin, OutOfRange> {
        if offset >= self.text.len() {
            return Err(OutOfRange { offset, len: self.text.len() });
        }
        let idx = self.origin_map.partition_point(|r| r.span.end <= offset);
        self.origin_map
            .get(idx)
            .filter(|r| r.span.start <= offset)
            .map(|r| r.origin.clone())
            .ok_or(OutOfRange { offset, len: self.text.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PreprocessError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{file}:{line}: include file {path:?} not found")]
    MissingInclude { path: String, file: String, line: usize },
    #[error("{file}:{line}: unbalanced conditional directive")]
    UnbalancedConditional { file: String, line: usize },
    #[error("recursive include: {}", cycle.join(" -> "))]
    RecursiveInclude { cycle: Vec<String> },
    #[error("{file}:{line}: expansion of `{name} nests deeper than {MAX_EXPANSION_DEPTH}")]
    RecursiveExpansion { name: String, file: String, line: usize },
    #[error("{file}:{line}: macro `{name} takes {expected} argument(s), got {found}")]
    MacroArityMismatch { name: String, expected: usize, found: usize, file: String, line: usize },
    #[error("{file}:{line}: undefined macro `{name}")]
    UndefinedMacro { name: String, file: String, line: usize },
    #[error("{file}:{line}: {message}")]
    Malformed { file: String, line: usize, message: String },
}

/// Where source and include files come from.
pub trait SourceLoader {
    fn load(&self, path: &Path) -> io::Result<String>;
    fn exists(&self, path: &Path) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FsLoader;

impl SourceLoader for FsLoader {
    fn load(&self, path: &Path) -> io::Result<String> {
        fs::read_to_string(path)
    }

    fn exists(&self, path: &Path) -> bool {
        path.is_file()
    }
}

/// In-memory file system, keyed by path.
#[derive(Debug, Clone, Default)]
pub struct MemoryLoader {
    pub files: BTreeMap<PathBuf, String>,
}

impl MemoryLoader {
    pub fn with(mut self, path: impl Into<PathBuf>, text: impl Into<String>) -> Self {
        self.files.insert(path.into(), text.into());
        self
    }
}

impl SourceLoader for MemoryLoader {
    fn load(&self, path: &Path) -> io::Result<String> {
        self.files.get(path).cloned().ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "no such file"))
    }

    fn exists(&self, path: &Path) -> bool {
        self.files.contains_key(path)
    }
}

#[derive(Debug, Clone, Default)]
pub struct PreprocessOptions {
    pub defines: BTreeMap<String, String>,
    pub include_dirs: Vec<PathBuf>,
}

pub fn preprocess(
    files: &[PathBuf],
    defines: &BTreeMap<String, String>,
    include_dirs: &[PathBuf],
) -> Result<SourceUnit, PreprocessError> {
    let opts = PreprocessOptions { defines: defines.clone(), include_dirs: include_dirs.to_vec() };
    preprocess_with(&FsLoader, files, &opts)
}

pub fn preprocess_with(
    loader: &dyn SourceLoader,
    files: &[PathBuf],
    opts: &PreprocessOptions,
) -> Result<SourceUnit, PreprocessError> {
    let mut pp = Preprocessor::new(loader, opts);
    for f in files {
        let text = loader.load(f).map_err(|e| PreprocessError::Io { path: display(f), message: e.to_string() })?;
        if !pp.out.text.is_empty() && !pp.out.text.ends_with('\n') {
            pp.out.push_separator();
        }
        pp.unit.files.push(display(f));
        pp.process_file(f, &text)?;
    }
    pp.unit.text = pp.out.text;
    pp.unit.origin_map = pp.out.ranges;
    Ok(pp.unit)
}

/// Preprocesses a single in-memory text, as if it were the file `name`.
pub fn preprocess_text(name: &str, text: &str, opts: &PreprocessOptions) -> Result<SourceUnit, PreprocessError> {
    let loader = MemoryLoader::default().with(name, text);
    preprocess_with(&loader, &[PathBuf::from(name)], opts)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

#[derive(Debug, Clone)]
struct Macro {
    params: Option<Vec<String>>,
    body: String,
}

#[derive(Debug)]
struct CondFrame {
    /// Whether the enclosing region is emitted.
    parent_active: bool,
    /// Some branch of this conditional was already taken.
    taken: bool,
    active: bool,
    seen_else: bool,
    line: usize,
}

#[derive(Default)]
struct Output {
    text: String,
    ranges: Vec<OriginRange>,
}

impl Output {
    fn push(&mut self, s: &str, origin: &Origin) {
        if s.is_empty() {
            return;
        }
        let start = self.text.len();
        self.text.push_str(s);
        match self.ranges.last_mut() {
            Some(last) if last.origin == *origin && last.span.end == start => last.span.end = self.text.len(),
            _ => self.ranges.push(OriginRange { span: Span::new(start, self.text.len()), origin: origin.clone() }),
        }
    }

    /// Newline attributed to whatever produced the previous byte.
    fn push_separator(&mut self) {
        let origin = self.ranges.last().map(|r| r.origin.clone()).unwrap_or(Origin { file: String::new(), line: 0 });
        self.push("\n", &origin);
    }
}

struct Preprocessor<'a> {
    loader: &'a dyn SourceLoader,
    include_dirs: &'a [PathBuf],
    macros: HashMap<String, Macro>,
    conds: Vec<CondFrame>,
    include_stack: Vec<PathBuf>,
    out: Output,
    unit: SourceUnit,
}

const DIRECTIVES: &[&str] = &[
    "celldefine",
    "default_nettype",
    "define",
    "else",
    "elsif",
    "endcelldefine",
    "endif",
    "ifdef",
    "ifndef",
    "include",
    "nounconnected_drive",
    "resetall",
    "timescale",
    "undef",
    "unconnected_drive",
];

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

fn take_ident(s: &str) -> (&str, &str) {
    if !s.starts_with(is_ident_start) {
        return ("", s);
    }
    let end = s.find(|c| !is_ident_char(c)).unwrap_or(s.len());
    s.split_at(end)
}

/// True when the remainder of a directive line is only whitespace or a
/// line comment.
fn is_blank_tail(s: &str) -> bool {
    let t = s.trim_start();
    t.is_empty() || t.starts_with("//")
}

/// Removes a trailing `//` comment that is not inside a string literal.
fn strip_line_comment(s: &str) -> &str {
    let mut in_str = false;
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if in_str => i += 1,
            b'"' => in_str = !in_str,
            b'/' if !in_str && bytes.get(i + 1) == Some(&b'/') => return &s[..i],
            _ => {}
        }
        i += 1;
    }
    s
}

impl<'a> Preprocessor<'a> {
    fn new(loader: &'a dyn SourceLoader, opts: &'a PreprocessOptions) -> Self {
        let macros = opts
            .defines
            .iter()
            .map(|(k, v)| (k.clone(), Macro { params: None, body: v.clone() }))
            .collect();
        Preprocessor {
            loader,
            include_dirs: &opts.include_dirs,
            macros,
            conds: Vec::new(),
            include_stack: Vec::new(),
            out: Output::default(),
            unit: SourceUnit::default(),
        }
    }

    fn active(&self) -> bool {
        self.conds.last().is_none_or(|c| c.active)
    }

    fn process_file(&mut self, path: &Path, text: &str) -> Result<(), PreprocessError> {
        if self.include_stack.iter().any(|p| p == path) {
            let mut cycle: Vec<String> = self.include_stack.iter().map(|p| display(p)).collect();
            cycle.push(display(path));
            return Err(PreprocessError::RecursiveInclude { cycle });
        }
        if self.include_stack.len() >= MAX_INCLUDE_DEPTH {
            return Err(PreprocessError::RecursiveInclude { cycle: vec![display(path)] });
        }
        self.include_stack.push(path.to_path_buf());
        let file = display(path);
        let cond_depth = self.conds.len();
        let mut in_block_comment = false;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        let mut i = 0;
        while i < lines.len() {
            let line_no = i + 1;
            let mut line = lines[i].to_string();
            i += 1;
            let trimmed = line.trim_start();
            let directive = !in_block_comment
                && trimmed.starts_with('`')
                && DIRECTIVES.contains(&take_ident(&trimmed[1..]).0);
            if !directive {
                if self.active() {
                    let expanded = self.expand_line(&line, &file, line_no, &mut in_block_comment, 0)?;
                    self.out.push(&expanded, &Origin { file: file.clone(), line: line_no });
                } else {
                    track_block_comments(&line, &mut in_block_comment);
                }
                continue;
            }
            // `define bodies continue across lines ending in a backslash
            if take_ident(&trimmed[1..]).0 == "define" {
                while line.trim_end_matches(['\n', '\r']).ends_with('\\') && i < lines.len() {
                    let keep = line.trim_end_matches(['\n', '\r']);
                    line = format!("{}\n{}", &keep[..keep.len() - 1], lines[i]);
                    i += 1;
                }
            }
            self.directive(&line, path, &file, line_no)?;
        }
        if self.conds.len() != cond_depth {
            let line = self.conds.last().map_or(lines.len(), |c| c.line);
            return Err(PreprocessError::UnbalancedConditional { file, line });
        }
        self.include_stack.pop();
        Ok(())
    }

    fn directive(&mut self, line: &str, path: &Path, file: &str, line_no: usize) -> Result<(), PreprocessError> {
        let body = line.trim_start();
        let (name, rest) = take_ident(&body[1..]);
        let malformed = |message: &str| PreprocessError::Malformed {
            file: file.to_string(),
            line: line_no,
            message: message.to_string(),
        };
        let unbalanced = || PreprocessError::UnbalancedConditional { file: file.to_string(), line: line_no };
        let mut tail = rest;
        match name {
            "ifdef" | "ifndef" => {
                let (m, r) = take_ident(rest.trim_start());
                if m.is_empty() {
                    return Err(malformed("conditional directive needs a macro name"));
                }
                self.unit.defines_used.insert(m.to_string());
                let defined = self.macros.contains_key(m);
                let cond = if name == "ifdef" { defined } else { !defined };
                let parent_active = self.active();
                self.conds.push(CondFrame {
                    parent_active,
                    taken: cond,
                    active: parent_active && cond,
                    seen_else: false,
                    line: line_no,
                });
                tail = r;
            }
            "elsif" => {
                let (m, r) = take_ident(rest.trim_start());
                if m.is_empty() {
                    return Err(malformed("`elsif needs a macro name"));
                }
                self.unit.defines_used.insert(m.to_string());
                let defined = self.macros.contains_key(m);
                let frame = self.conds.last_mut().ok_or_else(unbalanced)?;
                if frame.seen_else {
                    return Err(unbalanced());
                }
                frame.active = frame.parent_active && !frame.taken && defined;
                frame.taken |= defined;
                tail = r;
            }
            "else" => {
                let frame = self.conds.last_mut().ok_or_else(unbalanced)?;
                if frame.seen_else {
                    return Err(unbalanced());
                }
                frame.seen_else = true;
                frame.active = frame.parent_active && !frame.taken;
                frame.taken = true;
            }
            "endif" => {
                self.conds.pop().ok_or_else(unbalanced)?;
            }
            _ if !self.active() => return Ok(()),
            "define" => {
                let rest = rest.trim_start_matches([' ', '\t']);
                let (m, after) = take_ident(rest);
                if m.is_empty() {
                    return Err(malformed("`define needs a macro name"));
                }
                let (params, body) = if let Some(plist) = after.strip_prefix('(') {
                    let close = plist.find(')').ok_or_else(|| malformed("unterminated macro parameter list"))?;
                    let params: Vec<String> = plist[..close]
                        .split(',')
                        .map(|p| p.trim().to_string())
                        .filter(|p| !p.is_empty())
                        .collect();
                    if params.iter().any(|p| take_ident(p).0 != p) {
                        return Err(malformed("macro parameters must be identifiers"));
                    }
                    (Some(params), &plist[close + 1..])
                } else {
                    (None, after)
                };
                let body = body
                    .split('\n')
                    .map(strip_line_comment)
                    .collect::<Vec<_>>()
                    .join("\n")
                    .trim()
                    .to_string();
                self.macros.insert(m.to_string(), Macro { params, body });
                return Ok(());
            }
            "undef" => {
                let (m, r) = take_ident(rest.trim_start());
                self.macros.remove(m);
                tail = r;
            }
            "include" => {
                let arg = rest.trim_start();
                let (target, r) = match arg.chars().next() {
                    Some('"') => arg[1..].split_once('"').ok_or_else(|| malformed("unterminated include path"))?,
                    Some('<') => arg[1..].split_once('>').ok_or_else(|| malformed("unterminated include path"))?,
                    _ => return Err(malformed("`include expects a quoted path")),
                };
                let resolved = self.resolve_include(path, target).ok_or_else(|| PreprocessError::MissingInclude {
                    path: target.to_string(),
                    file: file.to_string(),
                    line: line_no,
                })?;
                let text = self
                    .loader
                    .load(&resolved)
                    .map_err(|e| PreprocessError::Io { path: display(&resolved), message: e.to_string() })?;
                self.process_file(&resolved, &text)?;
                if !self.out.text.is_empty() && !self.out.text.ends_with('\n') {
                    self.out.push_separator();
                }
                tail = r;
            }
            "timescale" => {
                self.unit.defines_used.insert("`timescale".to_string());
                tail = "";
            }
            "default_nettype" | "unconnected_drive" => {
                tail = take_ident(rest.trim_start()).1;
            }
            _ => {}
        }
        if is_blank_tail(tail) {
            return Ok(());
        }
        // code after a directive on the same line is processed as a line of its own
        let mut in_comment = false;
        let trailing = tail.trim_start();
        if trailing.starts_with('`') && DIRECTIVES.contains(&take_ident(&trailing[1..]).0) {
            return self.directive(trailing, path, file, line_no);
        }
        if self.active() {
            let expanded = self.expand_line(trailing, file, line_no, &mut in_comment, 0)?;
            self.out.push(&expanded, &Origin { file: file.to_string(), line: line_no });
        }
        Ok(())
    }

    fn resolve_include(&self, including: &Path, target: &str) -> Option<PathBuf> {
        let local = including.parent().map(|d| d.join(target)).unwrap_or_else(|| PathBuf::from(target));
        std::iter::once(local)
            .chain(self.include_dirs.iter().map(|d| d.join(target)))
            .find(|p| self.loader.exists(p))
    }

    /// Expands macro uses in `text`, skipping comments and string literals.
    fn expand_line(
        &mut self,
        text: &str,
        file: &str,
        line: usize,
        in_block_comment: &mut bool,
        depth: usize,
    ) -> Result<String, PreprocessError> {
        let mut out = String::with_capacity(text.len());
        let mut rest = text;
        while !rest.is_empty() {
            if *in_block_comment {
                match rest.find("*/") {
                    Some(i) => {
                        out.push_str(&rest[..i + 2]);
                        rest = &rest[i + 2..];
                        *in_block_comment = false;
                    }
                    None => {
                        out.push_str(rest);
                        rest = "";
                    }
                }
                continue;
            }
            let Some(i) = rest.find(['/', '"', '`']) else {
                out.push_str(rest);
                break;
            };
            out.push_str(&rest[..i]);
            rest = &rest[i..];
            if rest.starts_with("//") {
                out.push_str(rest);
                break;
            } else if rest.starts_with("/*") {
                out.push_str("/*");
                rest = &rest[2..];
                *in_block_comment = true;
            } else if rest.starts_with('"') {
                let end = string_end(rest);
                out.push_str(&rest[..end]);
                rest = &rest[end..];
            } else if rest.starts_with('`') {
                let (name, after) = take_ident(&rest[1..]);
                if name.is_empty() {
                    return Err(PreprocessError::Malformed {
                        file: file.to_string(),
                        line,
                        message: "stray backtick".into(),
                    });
                }
                if DIRECTIVES.contains(&name) {
                    return Err(PreprocessError::Malformed {
                        file: file.to_string(),
                        line,
                        message: format!("directive `{name} must start its line"),
                    });
                }
                let (expansion, after) = self.expand_macro(name, after, file, line)?;
                if depth + 1 > MAX_EXPANSION_DEPTH {
                    return Err(PreprocessError::RecursiveExpansion { name: name.to_string(), file: file.to_string(), line });
                }
                let mut nested_comment = false;
                out.push_str(&self.expand_line(&expansion, file, line, &mut nested_comment, depth + 1)?);
                rest = after;
            } else {
                out.push('/');
                rest = &rest[1..];
            }
        }
        Ok(out)
    }

    fn expand_macro<'t>(
        &mut self,
        name: &str,
        after: &'t str,
        file: &str,
        line: usize,
    ) -> Result<(String, &'t str), PreprocessError> {
        match name {
            "__LINE__" => return Ok((line.to_string(), after)),
            "__FILE__" => return Ok((format!("{file:?}"), after)),
            _ => {}
        }
        let Some(mac) = self.macros.get(name).cloned() else {
            return Err(PreprocessError::UndefinedMacro { name: name.to_string(), file: file.to_string(), line });
        };
        self.unit.defines_used.insert(name.to_string());
        let Some(params) = mac.params else {
            return Ok((mac.body, after));
        };
        let arity = |found| PreprocessError::MacroArityMismatch {
            name: name.to_string(),
            expected: params.len(),
            found,
            file: file.to_string(),
            line,
        };
        let trimmed = after.trim_start_matches([' ', '\t']);
        let Some(args_text) = trimmed.strip_prefix('(') else {
            return Err(arity(0));
        };
        let (args, consumed) = split_args(args_text).ok_or_else(|| PreprocessError::Malformed {
            file: file.to_string(),
            line,
            message: format!("unterminated argument list for `{name}"),
        })?;
        let args: Vec<&str> = if args.len() == 1 && args[0].trim().is_empty() && params.is_empty() { Vec::new() } else { args };
        if args.len() != params.len() {
            return Err(arity(args.len()));
        }
        let body = substitute(&mac.body, &params, &args);
        Ok((body, &args_text[consumed..]))
    }
}

fn track_block_comments(line: &str, in_block: &mut bool) {
    let mut rest = line;
    loop {
        if *in_block {
            match rest.find("*/") {
                Some(i) => {
                    rest = &rest[i + 2..];
                    *in_block = false;
                }
                None => return,
            }
        } else {
            let line_c = rest.find("//");
            match rest.find("/*") {
                Some(i) if line_c.is_none_or(|c| i < c) => {
                    rest = &rest[i + 2..];
                    *in_block = true;
                }
                _ => return,
            }
        }
    }
}

/// Byte length of the string literal at the start of `s` (including quotes).
fn string_end(s: &str) -> usize {
    let bytes = s.as_bytes();
    let mut i = 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'"' => return i + 1,
            b'\n' => return i,
            _ => i += 1,
        }
    }
    bytes.len()
}

/// Splits a macro argument list at top-level commas. Returns the arguments
/// and the number of bytes consumed including the closing parenthesis.
fn split_args(s: &str) -> Option<(Vec<&str>, usize)> {
    let mut depth = 0usize;
    let mut args = Vec::new();
    let mut start = 0;
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => {
                i += string_end(&s[i..]);
                continue;
            }
            b'(' | b'[' | b'{' => depth += 1,
            b')' if depth == 0 => {
                args.push(&s[start..i]);
                return Some((args, i + 1));
            }
            b')' | b']' | b'}' => depth = depth.saturating_sub(1),
            b',' if depth == 0 => {
                args.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    None
}

fn substitute(body: &str, params: &[String], args: &[&str]) -> String {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(i) = rest.find(|c: char| is_ident_start(c) || c == '"') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        if rest.starts_with('"') {
            let end = string_end(rest);
            out.push_str(&rest[..end]);
            rest = &rest[end..];
            continue;
        }
        let (word, after) = take_ident(rest);
        // identifiers glued to a preceding backtick are macro names, not parameters
        let is_macro_name = out.ends_with('`');
        match params.iter().position(|p| p == word) {
            Some(k) if !is_macro_name => out.push_str(args[k].trim()),
            _ => out.push_str(word),
        }
        rest = after;
    }
    out.push_str(rest);
    out
}
