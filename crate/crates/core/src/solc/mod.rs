//! Solidity front end: lexer, tolerant parser and method extraction.

pub mod ast;
pub mod extract;
pub mod lexer;
pub mod parser;

use thiserror::Error;

pub use ast::{AstNode, TreeViolation};
pub use extract::{extract_methods, MethodKind, MethodRecord};
pub use lexer::{tokenize, LexError, Span, Token, TokenKind};
pub use parser::{parse, ParseError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrontError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Tokenizes and parses a whole file.
pub fn parse_source(source: &str) -> Result<AstNode, FrontError> {
    Ok(parse(&tokenize(source)?)?)
}
