use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Keyword,
    Identifier,
    Number,
    String,
    /// `0x` followed by exactly 40 hex digits.
    Address,
    Punct,
    DocComment,
    LineComment,
    BlockComment,
}

impl TokenKind {
    pub fn is_comment(self) -> bool {
        matches!(
            self,
            TokenKind::DocComment | TokenKind::LineComment | TokenKind::BlockComment
        )
    }
}

/// Byte range `[start, end)` into the source text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    pub span: Span,
}

impl Token {
    pub fn is(&self, kind: TokenKind, lexeme: &str) -> bool {
        self.kind == kind && self.lexeme == lexeme
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.is(TokenKind::Punct, p)
    }

    pub fn is_kw(&self, k: &str) -> bool {
        self.is(TokenKind::Keyword, k)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexError {
    #[error("unterminated string literal starting at byte {0}")]
    UnterminatedString(usize),
    #[error("unterminated block comment starting at byte {0}")]
    UnterminatedComment(usize),
    #[error("unexpected character {ch:?} at byte {offset}")]
    UnexpectedChar { ch: char, offset: usize },
}

impl LexError {
    pub fn offset(&self) -> usize {
        match *self {
            LexError::UnterminatedString(o) | LexError::UnterminatedComment(o) => o,
            LexError::UnexpectedChar { offset, .. } => offset,
        }
    }
}

pub const KEYWORDS: &[&str] = &[
    "abstract", "address", "anonymous", "as", "assembly", "bool", "break", "byte", "bytes",
    "calldata", "catch", "constant", "constructor", "continue", "contract", "days", "delete",
    "do", "else", "emit", "enum", "error", "ether", "event", "external", "fallback", "false",
    "finney", "fixed", "for", "function", "gwei", "hours", "if", "immutable", "import",
    "indexed", "int", "interface", "internal", "is", "library", "mapping", "memory", "minutes",
    "modifier", "new", "override", "payable", "pragma", "private", "public", "pure", "receive",
    "return", "returns", "seconds", "storage", "string", "struct", "szabo", "throw", "true",
    "try", "ufixed", "uint", "unchecked", "using", "var", "view", "virtual", "weeks", "wei",
    "while", "years",
];

/// `intN`, `uintN`, `bytesN` are keywords as well.
fn is_sized_type(word: &str) -> bool {
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    ["uint", "int", "bytes"]
        .iter()
        .any(|p| word.strip_prefix(p).is_some_and(digits))
}

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.binary_search(&word).is_ok() || is_sized_type(word)
}

const PUNCT: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "**", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=",
    "-=", "*=", "/=", "%=", "|=", "&=", "^=", "=>", "->", ":=", "<<", ">>", "(", ")", "{", "}",
    "[", "]", ";", ",", ".", "?", ":", "=", "+", "-", "*", "/", "%", "&", "|", "^", "~", "!",
    "<", ">", "@",
];

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

/// Splits Solidity source into tokens. Whitespace is skipped (it is exactly
/// the text between consecutive spans); comments are kept.
pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    let bytes = source.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let push = |out: &mut Vec<Token>, kind, start: usize, end: usize| {
        out.push(Token {
            kind,
            lexeme: source[start..end].to_string(),
            span: Span { start, end },
        });
    };
    while i < bytes.len() {
        let c = source[i..].chars().next().unwrap();
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        let start = i;
        let rest = &source[i..];
        if rest.starts_with("//") {
            let end = rest.find('\n').map_or(bytes.len(), |p| i + p);
            // Drop a trailing carriage return from the lexeme; it is whitespace.
            let end = if end > i && bytes[end - 1] == b'\r' { end - 1 } else { end };
            let kind = if rest.starts_with("///") && !rest.starts_with("////") {
                TokenKind::DocComment
            } else {
                TokenKind::LineComment
            };
            push(&mut out, kind, start, end);
            i = end;
            continue;
        }
        if rest.starts_with("/*") {
            let close = rest[2..]
                .find("*/")
                .ok_or(LexError::UnterminatedComment(start))?;
            let end = i + 2 + close + 2;
            let kind = if rest.starts_with("/**") && !rest.starts_with("/**/") {
                TokenKind::DocComment
            } else {
                TokenKind::BlockComment
            };
            push(&mut out, kind, start, end);
            i = end;
            continue;
        }
        if c == '"' || c == '\'' {
            i = scan_string(source, i)?;
            push(&mut out, TokenKind::String, start, i);
            continue;
        }
        if is_ident_start(c) {
            let mut j = i;
            while j < bytes.len() && is_ident_char(bytes[j] as char) {
                j += 1;
            }
            let word = &source[i..j];
            if (word == "hex" || word == "unicode") && matches!(bytes.get(j), Some(b'"' | b'\'')) {
                i = scan_string(source, j)?;
                push(&mut out, TokenKind::String, start, i);
                continue;
            }
            let kind = if is_keyword(word) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            push(&mut out, kind, start, j);
            i = j;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            if rest.starts_with("0x") || rest.starts_with("0X") {
                let mut j = i + 2;
                while j < bytes.len() && (bytes[j].is_ascii_hexdigit() || bytes[j] == b'_') {
                    j += 1;
                }
                let digits = &source[i + 2..j];
                let kind = if digits.len() == 40 && digits.bytes().all(|b| b.is_ascii_hexdigit()) {
                    TokenKind::Address
                } else {
                    TokenKind::Number
                };
                push(&mut out, kind, start, j);
                i = j;
                continue;
            }
            let mut j = i;
            while j < bytes.len() {
                let b = bytes[j];
                let exp_sign = (b == b'-' || b == b'+') && j > i && matches!(bytes[j - 1], b'e' | b'E');
                if b.is_ascii_digit() || b == b'_' || b == b'.' || b == b'e' || b == b'E' || exp_sign {
                    // A '.' not followed by a digit ends the number (member access).
                    if b == b'.' && !bytes.get(j + 1).is_some_and(u8::is_ascii_digit) {
                        break;
                    }
                    j += 1;
                } else {
                    break;
                }
            }
            push(&mut out, TokenKind::Number, start, j);
            i = j;
            continue;
        }
        if let Some(p) = PUNCT.iter().find(|p| rest.starts_with(**p)) {
            push(&mut out, TokenKind::Punct, start, start + p.len());
            i += p.len();
            continue;
        }
        return Err(LexError::UnexpectedChar { ch: c, offset: i });
    }
    Ok(out)
}

fn scan_string(source: &str, start: usize) -> Result<usize, LexError> {
    let bytes = source.as_bytes();
    let quote = bytes[start];
    let mut j = start + 1;
    while j < bytes.len() {
        match bytes[j] {
            b'\\' => j += 2,
            b'\n' => break,
            b if b == quote => return Ok(j + 1),
            _ => j += 1,
        }
    }
    Err(LexError::UnterminatedString(start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use TokenKind::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn keyword_table_is_sorted() {
        assert!(KEYWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").unwrap().is_empty());
    }

    #[test]
    fn function_header_kinds() {
        assert_eq!(
            kinds("function f() public {}"),
            vec![Keyword, Identifier, Punct, Punct, Keyword, Punct, Punct]
        );
    }

    #[test]
    fn address_needs_exactly_forty_digits() {
        let addr = format!("0x{}", "aB".repeat(20));
        assert_eq!(kinds(&addr), vec![Address]);
        assert_eq!(kinds(&format!("0x{}", "a".repeat(39))), vec![Number]);
        assert_eq!(kinds(&format!("0x{}", "a".repeat(41))), vec![Number]);
    }

    #[test]
    fn comments_are_tokens() {
        assert_eq!(
            kinds("/// doc\n// line\n/* block */ /** nat */ x"),
            vec![DocComment, LineComment, BlockComment, DocComment, Identifier]
        );
        assert_eq!(kinds("/**/"), vec![BlockComment]);
    }

    #[test]
    fn numbers_and_members() {
        assert_eq!(kinds("1e18 2.5 x.y 3 .5"), vec![Number, Number, Identifier, Punct, Identifier, Number, Number]);
        assert_eq!(kinds("a >>>= b"), vec![Identifier, Punct, Identifier]);
        assert_eq!(kinds("uint256 bytes32 uint"), vec![Keyword, Keyword, Keyword]);
        assert_eq!(kinds("hex\"00ff\""), vec![String]);
    }

    #[test]
    fn errors_carry_offsets() {
        assert_eq!(tokenize("x = \"abc"), Err(LexError::UnterminatedString(4)));
        assert_eq!(tokenize("a /* b"), Err(LexError::UnterminatedComment(2)));
        assert_eq!(tokenize("a # b").unwrap_err().offset(), 2);
    }

    #[test]
    fn gaps_are_whitespace() {
        let src = "contract C {\n  // hi\r\n  function f() {}\n}\n";
        let toks = tokenize(src).unwrap();
        let mut pos = 0;
        let mut rebuilt = std::string::String::new();
        for t in &toks {
            let gap = &src[pos..t.span.start];
            assert!(gap.chars().all(char::is_whitespace));
            rebuilt.push_str(gap);
            rebuilt.push_str(&t.lexeme);
            pos = t.span.end;
        }
        rebuilt.push_str(&src[pos..]);
        assert_eq!(rebuilt, src);
    }
}
