// SPDX-License-Identifier: Apache-2.0

//! Tokenizer for the MiniHDL subset.
//!
//! Whitespace and comments never become tokens. They are kept as the
//! leading trivia of the token that follows them, and whatever trails the
//! last token is returned separately, so `Lexed::reconstruct` gives back the
//! input byte for byte.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::span::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Keyword,
    Ident,
    Number,
    Str,
    Op,
    Punct,
}

impl TokenKind {
    pub const ALL: [TokenKind; 6] = [
        TokenKind::Keyword,
        TokenKind::Ident,
        TokenKind::Number,
        TokenKind::Str,
        TokenKind::Op,
        TokenKind::Punct,
    ];

    /// Terminal kind name used for parse tree leaves.
    pub fn name(self) -> &'static str {
        match self {
            TokenKind::Keyword => "kw",
            TokenKind::Ident => "ident",
            TokenKind::Number => "number",
            TokenKind::Str => "string",
            TokenKind::Op => "op",
            TokenKind::Punct => "punct",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub span: Span,
    /// Whitespace and comments immediately before the token.
    pub leading_trivia: String,
}

impl Token {
    pub fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}:{}]", self.kind.name(), self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LexError {
    #[error("unrecognized character {found:?} at byte {offset}")]
    UnexpectedChar { offset: usize, found: char },
    #[error("unterminated block comment starting at byte {offset}")]
    UnterminatedComment { offset: usize },
    #[error("unterminated string literal starting at byte {offset}")]
    UnterminatedString { offset: usize },
    #[error("malformed number literal at byte {offset}")]
    MalformedNumber { offset: usize },
}

impl LexError {
    pub fn offset(&self) -> usize {
        match *self {
            LexError::UnexpectedChar { offset, .. }
            | LexError::UnterminatedComment { offset }
            | LexError::UnterminatedString { offset }
            | LexError::MalformedNumber { offset } => offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexed {
    pub tokens: Vec<Token>,
    pub trailing_trivia: String,
}

impl Lexed {
    pub fn reconstruct(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(&t.leading_trivia);
            out.push_str(&t.text);
        }
        out.push_str(&self.trailing_trivia);
        out
    }
}

pub const KEYWORDS: &[&str] = &[
    "always",
    "always_comb",
    "always_ff",
    "always_latch",
    "assign",
    "begin",
    "case",
    "casex",
    "casez",
    "default",
    "else",
    "end",
    "endcase",
    "endfunction",
    "endgenerate",
    "endmodule",
    "endpackage",
    "for",
    "function",
    "generate",
    "genvar",
    "if",
    "import",
    "initial",
    "inout",
    "input",
    "int",
    "integer",
    "localparam",
    "logic",
    "module",
    "negedge",
    "or",
    "output",
    "package",
    "parameter",
    "posedge",
    "reg",
    "signed",
    "typedef",
    "unsigned",
    "wire",
];

// Longest operators first; the scanner takes the first prefix match.
const OPERATORS: &[(&str, TokenKind)] = &[
    ("<<<", TokenKind::Op),
    (">>>", TokenKind::Op),
    ("===", TokenKind::Op),
    ("!==", TokenKind::Op),
    ("::", TokenKind::Punct),
    ("<<", TokenKind::Op),
    (">>", TokenKind::Op),
    ("<=", TokenKind::Op),
    (">=", TokenKind::Op),
    ("==", TokenKind::Op),
    ("!=", TokenKind::Op),
    ("&&", TokenKind::Op),
    ("||", TokenKind::Op),
    ("~&", TokenKind::Op),
    ("~|", TokenKind::Op),
    ("~^", TokenKind::Op),
    ("^~", TokenKind::Op),
    ("+:", TokenKind::Op),
    ("-:", TokenKind::Op),
    ("**", TokenKind::Op),
    ("+", TokenKind::Op),
    ("-", TokenKind::Op),
    ("*", TokenKind::Op),
    ("/", TokenKind::Op),
    ("%", TokenKind::Op),
    ("&", TokenKind::Op),
    ("|", TokenKind::Op),
    ("^", TokenKind::Op),
    ("~", TokenKind::Op),
    ("!", TokenKind::Op),
    ("<", TokenKind::Op),
    (">", TokenKind::Op),
    ("=", TokenKind::Op),
    ("?", TokenKind::Op),
    (":", TokenKind::Punct),
    (";", TokenKind::Punct),
    (",", TokenKind::Punct),
    (".", TokenKind::Punct),
    ("#", TokenKind::Punct),
    ("@", TokenKind::Punct),
    ("(", TokenKind::Punct),
    (")", TokenKind::Punct),
    ("[", TokenKind::Punct),
    ("]", TokenKind::Punct),
    ("{", TokenKind::Punct),
    ("}", TokenKind::Punct),
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.binary_search(&word).is_ok()
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

struct Scanner<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn peek_at(&self, n: usize) -> Option<u8> {
        self.bytes.get(self.pos + n).copied()
    }

    fn skip_trivia(&mut self) -> Result<(), LexError> {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'/') if self.peek_at(1) == Some(b'/') => {
                    while let Some(b) = self.peek() {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(b'/') if self.peek_at(1) == Some(b'*') => {
                    let start = self.pos;
                    match self.src[self.pos + 2..].find("*/") {
                        Some(rel) => self.pos += 2 + rel + 2,
                        None => return Err(LexError::UnterminatedComment { offset: start }),
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn number(&mut self) -> Result<(), LexError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b) if b.is_ascii_digit() || b == b'_') {
            self.pos += 1;
        }
        if self.peek() == Some(b'\'') {
            self.based_tail(start)?;
        }
        Ok(())
    }

    /// Consumes `'[s]<base><digits>` or the unsized fills `'0 '1 'x 'z`.
    fn based_tail(&mut self, start: usize) -> Result<(), LexError> {
        debug_assert_eq!(self.peek(), Some(b'\''));
        self.pos += 1;
        if matches!(self.peek(), Some(b's' | b'S')) {
            self.pos += 1;
        }
        match self.peek() {
            Some(b'b' | b'B' | b'o' | b'O' | b'd' | b'D' | b'h' | b'H') => {
                self.pos += 1;
                let digits = self.pos;
                while matches!(self.peek(), Some(b) if b.is_ascii_hexdigit() || matches!(b, b'_' | b'x' | b'X' | b'z' | b'Z' | b'?'))
                {
                    self.pos += 1;
                }
                if self.pos == digits {
                    return Err(LexError::MalformedNumber { offset: start });
                }
                Ok(())
            }
            Some(b'0' | b'1' | b'x' | b'X' | b'z' | b'Z') if start + 1 == self.pos => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(LexError::MalformedNumber { offset: start }),
        }
    }
}

pub fn tokenize(source: &str) -> Result<Lexed, LexError> {
    let mut sc = Scanner { src: source, bytes: source.as_bytes(), pos: 0 };
    let mut tokens = Vec::new();
    loop {
        let trivia_start = sc.pos;
        sc.skip_trivia()?;
        let start = sc.pos;
        let Some(b) = sc.peek() else {
            return Ok(Lexed { tokens, trailing_trivia: source[trivia_start..].to_string() });
        };
        let kind = if is_ident_start(b) || (b == b'$' && sc.peek_at(1).is_some_and(is_ident_start)) {
            sc.pos += 1;
            while sc.peek().is_some_and(is_ident_continue) {
                sc.pos += 1;
            }
            if is_keyword(&source[start..sc.pos]) {
                TokenKind::Keyword
            } else {
                TokenKind::Ident
            }
        } else if b.is_ascii_digit() {
            sc.number()?;
            TokenKind::Number
        } else if b == b'\'' {
            sc.based_tail(start)?;
            TokenKind::Number
        } else if b == b'"' {
            sc.pos += 1;
            loop {
                match sc.peek() {
                    None | Some(b'\n') => return Err(LexError::UnterminatedString { offset: start }),
                    Some(b'\\') => sc.pos += 2.min(source.len() - sc.pos),
                    Some(b'"') => {
                        sc.pos += 1;
                        break;
                    }
                    Some(_) => sc.pos += 1,
                }
            }
            TokenKind::Str
        } else if let Some(&(op, kind)) = OPERATORS.iter().find(|(op, _)| source[start..].starts_with(op)) {
            sc.pos += op.len();
            kind
        } else {
            let found = source[start..].chars().next().unwrap_or('\0');
            return Err(LexError::UnexpectedChar { offset: start, found });
        };
        tokens.push(Token {
            kind,
            text: source[start..sc.pos].to_string(),
            span: Span::new(start, sc.pos),
            leading_trivia: source[trivia_start..start].to_string(),
        });
    }
}

/// Token count that never fails: characters the lexer rejects count as one
/// token each. Used for budgeting arbitrary text.
pub fn count_tokens_lenient(text: &str) -> usize {
    let mut count = 0;
    let mut rest = text;
    let mut guard = 0usize;
    loop {
        match tokenize(rest) {
            Ok(lexed) => return count + lexed.tokens.len(),
            Err(err) => {
                let offset = err.offset().min(rest.len());
                if let Ok(prefix) = tokenize(&rest[..offset]) {
                    count += prefix.tokens.len();
                }
                let skip = match err {
                    LexError::UnterminatedComment { .. } => rest.len() - offset,
                    _ => rest[offset..].chars().next().map_or(1, char::len_utf8),
                };
                count += 1;
                rest = &rest[offset + skip..];
                guard += 1;
                if rest.is_empty() || guard > text.len() {
                    return count;
                }
            }
        }
    }
}
