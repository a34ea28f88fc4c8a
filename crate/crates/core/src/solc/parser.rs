//! Tolerant recursive-descent parser for a Solidity subset.
//!
//! Contract, function and modifier headers must be well formed and braces
//! must balance; anything unparseable inside a method body degrades to a
//! `Statement` leaf holding the raw token text.

use thiserror::Error;

use super::ast::AstNode;
use super::lexer::{Span, Token, TokenKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at bytes {}..{}: {message}", span.start, span.end)]
pub struct ParseError {
    pub message: String,
    pub span: Span,
}

/// Failure inside a statement; triggers raw-text recovery.
struct Soft;

type SoftResult<T> = Result<T, Soft>;

const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "|=", "&=", "^=", "<<=", ">>=", ">>>="];
const BINARY_LEVELS: &[&[&str]] = &[
    &["||"],
    &["&&"],
    &["==", "!="],
    &["<", ">", "<=", ">="],
    &["|"],
    &["^"],
    &["&"],
    &["<<", ">>", ">>>"],
    &["+", "-"],
    &["*", "/", "%"],
];
const UNITS: &[&str] = &[
    "wei", "gwei", "szabo", "finney", "ether", "seconds", "minutes", "hours", "days", "weeks", "years",
];
const VISIBILITY: &[&str] = &["public", "private", "internal", "external"];
const MUTABILITY: &[&str] = &["pure", "view", "payable", "constant"];
const LOCATIONS: &[&str] = &["memory", "storage", "calldata"];

fn is_elementary(t: &Token) -> bool {
    t.kind == TokenKind::Keyword
        && (matches!(
            t.lexeme.as_str(),
            "address" | "bool" | "string" | "bytes" | "byte" | "int" | "uint" | "fixed" | "ufixed" | "var"
        ) || super::lexer::is_keyword(&t.lexeme) && t.lexeme.chars().last().is_some_and(|c| c.is_ascii_digit()))
}

struct Parser<'a> {
    toks: Vec<&'a Token>,
    pos: usize,
    /// Exclusive bound while parsing inside a block.
    end: usize,
}

/// Parses a token stream (comments are ignored) into a `SourceUnit` tree.
pub fn parse(tokens: &[Token]) -> Result<AstNode, ParseError> {
    let toks: Vec<&Token> = tokens.iter().filter(|t| !t.kind.is_comment()).collect();
    if toks.is_empty() {
        return Err(ParseError {
            message: "empty token stream".into(),
            span: Span { start: 0, end: 0 },
        });
    }
    let end = toks.len();
    let mut p = Parser { toks, pos: 0, end };
    let mut unit = p.source_unit()?;
    unit.renumber();
    Ok(unit)
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        (self.pos < self.end).then(|| self.toks[self.pos])
    }

    fn peek_at(&self, k: usize) -> Option<&'a Token> {
        (self.pos + k < self.end).then(|| self.toks[self.pos + k])
    }

    fn bump(&mut self) -> Option<&'a Token> {
        let t = self.peek()?;
        self.pos += 1;
        Some(t)
    }

    fn at_punct(&self, p: &str) -> bool {
        self.peek().is_some_and(|t| t.is_punct(p))
    }

    fn at_kw(&self, k: &str) -> bool {
        self.peek().is_some_and(|t| t.is_kw(k))
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.at_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn here(&self) -> Span {
        match self.peek() {
            Some(t) => t.span,
            None => {
                let last = self.toks[self.pos.min(self.toks.len()) .saturating_sub(1)].span;
                Span { start: last.end, end: last.end }
            }
        }
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            message: message.into(),
            span: self.here(),
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{p}`")))
        }
    }

    fn span_from(&self, start: usize) -> Span {
        Span {
            start: self.toks[start].span.start,
            end: self.toks[self.pos.max(start + 1) - 1].span.end,
        }
    }

    fn raw(&self, from: usize, to: usize) -> String {
        self.toks[from..to]
            .iter()
            .map(|t| t.lexeme.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Consumes one item up to a depth-0 `;` (inclusive) or a depth-0 brace
    /// group (inclusive). Stops before an unmatched closer.
    fn skip_item(&mut self) -> Result<usize, ParseError> {
        let start = self.pos;
        let mut depth = 0usize;
        while let Some(t) = self.peek() {
            if t.kind == TokenKind::Punct {
                match t.lexeme.as_str() {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => {
                        if depth == 0 {
                            break;
                        }
                        depth -= 1;
                        // `x.call{value: v}(...)` continues past the braces.
                        let call_options = self.peek_at(1).is_some_and(|n| n.is_punct("("));
                        if depth == 0 && t.lexeme == "}" && !call_options {
                            self.pos += 1;
                            return Ok(start);
                        }
                    }
                    ";" if depth == 0 => {
                        self.pos += 1;
                        return Ok(start);
                    }
                    _ => {}
                }
            }
            self.pos += 1;
        }
        if depth != 0 {
            return Err(self.error("unbalanced brackets"));
        }
        if self.pos == start {
            return Err(self.error("unexpected closing bracket"));
        }
        Ok(start)
    }

    fn source_unit(&mut self) -> Result<AstNode, ParseError> {
        let mut children = Vec::new();
        while let Some(t) = self.peek() {
            let start = self.pos;
            if t.is_kw("pragma") || t.is_kw("import") {
                let label = if t.is_kw("pragma") { "PragmaDirective" } else { "ImportDirective" };
                self.pos += 1;
                self.skip_item()?;
                let text = self.raw(start + 1, self.pos - 1);
                children.push(AstNode::leaf(label, text).with_span(self.span_from(start)));
            } else if t.is_kw("contract") || t.is_kw("interface") || t.is_kw("library") || t.is_kw("abstract") {
                children.push(self.contract()?);
            } else if t.is_kw("function") {
                children.push(self.function()?);
            } else {
                self.skip_item()?;
                let text = self.raw(start, self.pos);
                children.push(AstNode::leaf("SourceUnitPart", text).with_span(self.span_from(start)));
            }
        }
        Ok(AstNode::node("SourceUnit", children))
    }

    fn ident(&mut self, what: &str) -> Result<&'a Token, ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                self.pos += 1;
                Ok(t)
            }
            _ => Err(self.error(format!("expected {what}"))),
        }
    }

    fn contract(&mut self) -> Result<AstNode, ParseError> {
        let start = self.pos;
        let mut kind = String::new();
        if self.at_kw("abstract") {
            self.pos += 1;
            kind.push_str("abstract ");
        }
        kind.push_str(&self.bump().unwrap().lexeme);
        let name = self.ident("contract name")?;
        let mut children = vec![
            AstNode::leaf("ContractKind", kind),
            AstNode::leaf("SimpleName", name.lexeme.clone()),
        ];
        if self.at_kw("is") {
            self.pos += 1;
            loop {
                let base = self.dotted_name().ok_or_else(|| self.error("expected base contract"))?;
                if self.at_punct("(") {
                    self.balanced("(", ")")?;
                }
                children.push(AstNode::leaf("InheritanceSpecifier", base));
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct("{")?;
        loop {
            let Some(t) = self.peek() else {
                return Err(self.error("unterminated contract body"));
            };
            if t.is_punct("}") {
                self.pos += 1;
                break;
            }
            let next_is_paren = self.peek_at(1).is_some_and(|n| n.is_punct("("));
            if t.is_kw("function")
                || ((t.is_kw("constructor") || t.is_kw("fallback") || t.is_kw("receive")) && next_is_paren)
            {
                children.push(self.function()?);
            } else if t.is_kw("modifier") {
                children.push(self.modifier()?);
            } else {
                let s = self.pos;
                self.skip_item()?;
                children.push(AstNode::leaf("ContractPart", self.raw(s, self.pos)).with_span(self.span_from(s)));
            }
        }
        Ok(AstNode::node("ContractDefinition", children).with_span(self.span_from(start)))
    }

    fn dotted_name(&mut self) -> Option<String> {
        let first = self.peek().filter(|t| t.kind == TokenKind::Identifier)?;
        self.pos += 1;
        let mut name = first.lexeme.clone();
        while self.at_punct(".") && self.peek_at(1).is_some_and(|t| t.kind == TokenKind::Identifier) {
            name.push('.');
            name.push_str(&self.toks[self.pos + 1].lexeme);
            self.pos += 2;
        }
        Some(name)
    }

    /// Skips a bracketed group starting at the current opener.
    fn balanced(&mut self, open: &str, close: &str) -> Result<(), ParseError> {
        self.expect_punct(open)?;
        let mut depth = 1;
        while depth > 0 {
            let t = self.bump().ok_or_else(|| self.error(format!("missing `{close}`")))?;
            if t.is_punct(open) {
                depth += 1;
            } else if t.is_punct(close) {
                depth -= 1;
            }
        }
        Ok(())
    }

    fn function(&mut self) -> Result<AstNode, ParseError> {
        let start = self.pos;
        let head = self.bump().unwrap();
        let mut children = Vec::new();
        if head.is_kw("function") {
            if let Some(t) = self.peek() {
                if t.kind == TokenKind::Identifier || t.is_kw("receive") || t.is_kw("fallback") {
                    self.pos += 1;
                    children.push(AstNode::leaf("SimpleName", t.lexeme.clone()));
                }
            }
        } else {
            children.push(AstNode::leaf("SimpleName", head.lexeme.clone()));
        }
        let params = self.parameter_list()?;
        if !params.is_empty() {
            children.push(AstNode::node("ParameterList", params));
        }
        self.header_specifiers(&mut children, true)?;
        self.body(&mut children)?;
        Ok(AstNode::node("FunctionDefinition", children).with_span(self.span_from(start)))
    }

    fn modifier(&mut self) -> Result<AstNode, ParseError> {
        let start = self.pos;
        self.pos += 1;
        let name = self.ident("modifier name")?;
        let mut children = vec![AstNode::leaf("SimpleName", name.lexeme.clone())];
        if self.at_punct("(") {
            let params = self.parameter_list()?;
            if !params.is_empty() {
                children.push(AstNode::node("ParameterList", params));
            }
        }
        self.header_specifiers(&mut children, false)?;
        self.body(&mut children)?;
        Ok(AstNode::node("ModifierDefinition", children).with_span(self.span_from(start)))
    }

    fn body(&mut self, children: &mut Vec<AstNode>) -> Result<(), ParseError> {
        if self.eat_punct(";") {
            return Ok(());
        }
        if !self.at_punct("{") {
            return Err(self.error("expected method body"));
        }
        children.push(self.block()?);
        Ok(())
    }

    fn header_specifiers(&mut self, out: &mut Vec<AstNode>, allow_returns: bool) -> Result<(), ParseError> {
        loop {
            let Some(t) = self.peek() else {
                return Err(self.error("unterminated method header"));
            };
            if t.is_punct("{") || t.is_punct(";") {
                return Ok(());
            }
            let lex = t.lexeme.as_str();
            if t.kind == TokenKind::Keyword && VISIBILITY.contains(&lex) {
                self.pos += 1;
                out.push(AstNode::leaf("Visibility", lex));
            } else if t.kind == TokenKind::Keyword && MUTABILITY.contains(&lex) {
                self.pos += 1;
                out.push(AstNode::leaf("StateMutability", lex));
            } else if t.is_kw("virtual") {
                self.pos += 1;
                out.push(AstNode::leaf("Virtual", lex));
            } else if t.is_kw("override") {
                self.pos += 1;
                if self.at_punct("(") {
                    self.balanced("(", ")")?;
                }
                out.push(AstNode::leaf("OverrideSpecifier", lex));
            } else if t.is_kw("returns") && allow_returns {
                self.pos += 1;
                out.push(AstNode::node("ReturnParameters", self.parameter_list()?));
            } else if t.kind == TokenKind::Identifier {
                let name = self.dotted_name().unwrap();
                let mut children = vec![AstNode::leaf("SimpleName", name)];
                if self.at_punct("(") {
                    let args = self.arguments().map_err(|_| self.error("malformed modifier arguments"))?;
                    children.extend(args);
                }
                out.push(AstNode::node("ModifierInvocation", children));
            } else {
                return Err(self.error(format!("unexpected `{lex}` in method header")));
            }
        }
    }

    fn parameter_list(&mut self) -> Result<Vec<AstNode>, ParseError> {
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if self.eat_punct(")") {
            return Ok(params);
        }
        loop {
            let ty = self.type_name().map_err(|_| self.error("expected parameter type"))?;
            let mut children = vec![ty];
            if let Some(t) = self.peek() {
                if t.kind == TokenKind::Keyword && LOCATIONS.contains(&t.lexeme.as_str()) {
                    self.pos += 1;
                    children.push(AstNode::leaf("StorageLocation", t.lexeme.clone()));
                }
            }
            if self.at_kw("indexed") {
                self.pos += 1;
            }
            if let Some(t) = self.peek().filter(|t| t.kind == TokenKind::Identifier) {
                self.pos += 1;
                children.push(AstNode::leaf("SimpleName", t.lexeme.clone()));
            }
            params.push(AstNode::node("Parameter", children));
            if self.eat_punct(")") {
                return Ok(params);
            }
            self.expect_punct(",")?;
        }
    }

    fn type_name(&mut self) -> SoftResult<AstNode> {
        let t = self.peek().ok_or(Soft)?;
        let mut ty = if t.is_kw("mapping") {
            self.pos += 1;
            if !self.eat_punct("(") {
                return Err(Soft);
            }
            let key = self.type_name()?;
            // Solidity 0.8.18 allows a name after the key/value types.
            if self.peek().is_some_and(|t| t.kind == TokenKind::Identifier) {
                self.pos += 1;
            }
            if !self.eat_punct("=>") {
                return Err(Soft);
            }
            let value = self.type_name()?;
            if self.peek().is_some_and(|t| t.kind == TokenKind::Identifier) {
                self.pos += 1;
            }
            if !self.eat_punct(")") {
                return Err(Soft);
            }
            AstNode::node("Mapping", vec![key, value])
        } else if is_elementary(t) {
            self.pos += 1;
            let mut v = t.lexeme.clone();
            if t.lexeme == "address" && self.at_kw("payable") {
                self.pos += 1;
                v.push_str(" payable");
            }
            AstNode::leaf("ElementaryTypeName", v)
        } else if t.kind == TokenKind::Identifier {
            AstNode::leaf("UserDefinedTypeName", self.dotted_name().unwrap())
        } else {
            return Err(Soft);
        };
        while self.at_punct("[") {
            self.pos += 1;
            let mut children = vec![ty];
            if !self.at_punct("]") {
                children.push(self.expression()?);
            }
            if !self.eat_punct("]") {
                return Err(Soft);
            }
            ty = AstNode::node("ArrayTypeName", children);
        }
        Ok(ty)
    }

    /// Index of the `}` matching the `{` at the current position.
    fn matching_brace(&self) -> Result<usize, ParseError> {
        let mut depth = 0usize;
        for i in self.pos..self.end {
            let t = self.toks[i];
            if t.is_punct("{") {
                depth += 1;
            } else if t.is_punct("}") {
                depth -= 1;
                if depth == 0 {
                    return Ok(i);
                }
            }
        }
        Err(self.error("unbalanced braces"))
    }

    fn block(&mut self) -> Result<AstNode, ParseError> {
        let start = self.pos;
        let close = self.matching_brace()?;
        self.pos += 1;
        let outer_end = self.end;
        self.end = close;
        let mut stmts = Vec::new();
        while self.pos < self.end {
            stmts.push(self.statement_or_raw()?);
        }
        self.end = outer_end;
        self.pos = close + 1;
        Ok(AstNode::node("Block", stmts).with_span(self.span_from(start)))
    }

    fn statement_or_raw(&mut self) -> Result<AstNode, ParseError> {
        let start = self.pos;
        match self.statement() {
            Ok(Some(s)) => Ok(s),
            Ok(None) | Err(Soft) => {
                self.pos = start;
                self.skip_item()?;
                Ok(AstNode::leaf("Statement", self.raw(start, self.pos)))
            }
        }
    }

    /// `Ok(None)` and `Err(Soft)` both mean "fall back to raw text"; a
    /// `ParseError` from a nested block propagates as `Ok(None)` as well,
    /// and the raw scan re-detects real brace imbalance.
    fn statement(&mut self) -> SoftResult<Option<AstNode>> {
        let t = self.peek().ok_or(Soft)?;
        let stmt = if t.is_punct("{") {
            self.block().map_err(|_| Soft)?
        } else if t.is_kw("if") {
            self.pos += 1;
            let cond = self.paren_expr()?;
            let then = self.sub_statement()?;
            let mut children = vec![cond, then];
            if self.at_kw("else") {
                self.pos += 1;
                children.push(self.sub_statement()?);
            }
            AstNode::node("IfStatement", children)
        } else if t.is_kw("for") {
            self.pos += 1;
            self.soft_punct("(")?;
            let mut children = Vec::new();
            if !self.eat_punct(";") {
                children.push(self.simple_statement()?);
            }
            if !self.at_punct(";") {
                children.push(self.expression()?);
            }
            self.soft_punct(";")?;
            if !self.at_punct(")") {
                children.push(AstNode::node("ExpressionStatement", vec![self.expression()?]));
            }
            self.soft_punct(")")?;
            children.push(self.sub_statement()?);
            AstNode::node("ForStatement", children)
        } else if t.is_kw("while") {
            self.pos += 1;
            let cond = self.paren_expr()?;
            AstNode::node("WhileStatement", vec![cond, self.sub_statement()?])
        } else if t.is_kw("do") {
            self.pos += 1;
            let body = self.sub_statement()?;
            if !self.at_kw("while") {
                return Err(Soft);
            }
            self.pos += 1;
            let cond = self.paren_expr()?;
            self.soft_punct(";")?;
            AstNode::node("DoWhileStatement", vec![body, cond])
        } else if t.is_kw("return") {
            self.pos += 1;
            let mut children = Vec::new();
            if !self.at_punct(";") {
                children.push(self.expression()?);
            }
            self.soft_punct(";")?;
            AstNode::node("ReturnStatement", children)
        } else if t.is_kw("emit") {
            self.pos += 1;
            let e = self.expression()?;
            self.soft_punct(";")?;
            AstNode::node("EmitStatement", vec![e])
        } else if t.is_kw("throw") || t.is_kw("break") || t.is_kw("continue") {
            self.pos += 1;
            self.soft_punct(";")?;
            let label = match t.lexeme.as_str() {
                "throw" => "ThrowStatement",
                "break" => "BreakStatement",
                _ => "ContinueStatement",
            };
            AstNode::node(label, Vec::new())
        } else if t.kind == TokenKind::Identifier
            && t.lexeme == "_"
            && self.peek_at(1).is_some_and(|n| n.is_punct(";"))
        {
            self.pos += 2;
            AstNode::node("PlaceholderStatement", Vec::new())
        } else if t.is_kw("unchecked") && self.peek_at(1).is_some_and(|n| n.is_punct("{")) {
            self.pos += 1;
            let block = self.block().map_err(|_| Soft)?;
            AstNode::node("UncheckedBlock", block.children)
        } else if t.is_kw("assembly") {
            let start = self.pos;
            self.pos += 1;
            if self.peek().is_some_and(|t| t.kind == TokenKind::String) {
                self.pos += 1;
            }
            if !self.at_punct("{") {
                return Err(Soft);
            }
            let close = self.matching_brace().map_err(|_| Soft)?;
            self.pos = close + 1;
            AstNode::leaf("InlineAssemblyStatement", self.raw(start + 1, self.pos))
        } else if t.kind == TokenKind::Identifier
            && t.lexeme == "revert"
            && self.peek_at(1).is_some_and(|n| n.kind == TokenKind::Identifier)
        {
            self.pos += 1;
            let e = self.expression()?;
            self.soft_punct(";")?;
            AstNode::node("RevertStatement", vec![e])
        } else {
            let s = self.simple_statement()?;
            return Ok(Some(s));
        };
        Ok(Some(stmt))
    }

    fn sub_statement(&mut self) -> SoftResult<AstNode> {
        self.statement()?.ok_or(Soft)
    }

    fn soft_punct(&mut self, p: &str) -> SoftResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(Soft)
        }
    }

    fn paren_expr(&mut self) -> SoftResult<AstNode> {
        self.soft_punct("(")?;
        let e = self.expression()?;
        self.soft_punct(")")?;
        Ok(e)
    }

    /// Variable declaration or expression statement, with its `;`.
    fn simple_statement(&mut self) -> SoftResult<AstNode> {
        let start = self.pos;
        if let Ok(decl) = self.variable_declaration() {
            return Ok(decl);
        }
        self.pos = start;
        let e = self.expression()?;
        self.soft_punct(";")?;
        Ok(AstNode::node("ExpressionStatement", vec![e]))
    }

    fn variable_declaration(&mut self) -> SoftResult<AstNode> {
        let ty = self.type_name()?;
        let mut decl = vec![ty];
        if let Some(t) = self.peek() {
            if t.kind == TokenKind::Keyword && LOCATIONS.contains(&t.lexeme.as_str()) {
                self.pos += 1;
                decl.push(AstNode::leaf("StorageLocation", t.lexeme.clone()));
            }
        }
        let name = self.peek().filter(|t| t.kind == TokenKind::Identifier).ok_or(Soft)?;
        self.pos += 1;
        decl.push(AstNode::leaf("SimpleName", name.lexeme.clone()));
        let mut children = vec![AstNode::node("VariableDeclaration", decl)];
        if self.eat_punct("=") {
            children.push(self.expression()?);
        }
        self.soft_punct(";")?;
        Ok(AstNode::node("VariableDeclarationStatement", children))
    }

    fn expression(&mut self) -> SoftResult<AstNode> {
        let lhs = self.conditional()?;
        if let Some(t) = self.peek() {
            if t.kind == TokenKind::Punct && ASSIGN_OPS.contains(&t.lexeme.as_str()) {
                self.pos += 1;
                let rhs = self.expression()?;
                return Ok(AstNode::node(
                    "Assignment",
                    vec![lhs, AstNode::leaf("Operator", t.lexeme.clone()), rhs],
                ));
            }
        }
        Ok(lhs)
    }

    fn conditional(&mut self) -> SoftResult<AstNode> {
        let cond = self.binary(0)?;
        if self.eat_punct("?") {
            let a = self.expression()?;
            self.soft_punct(":")?;
            let b = self.expression()?;
            return Ok(AstNode::node("Conditional", vec![cond, a, b]));
        }
        Ok(cond)
    }

    fn binary(&mut self, level: usize) -> SoftResult<AstNode> {
        if level == BINARY_LEVELS.len() {
            return self.power();
        }
        let mut lhs = self.binary(level + 1)?;
        while let Some(t) = self.peek() {
            if t.kind != TokenKind::Punct || !BINARY_LEVELS[level].contains(&t.lexeme.as_str()) {
                break;
            }
            self.pos += 1;
            let rhs = self.binary(level + 1)?;
            lhs = AstNode::node(
                "BinaryOperation",
                vec![lhs, AstNode::leaf("Operator", t.lexeme.clone()), rhs],
            );
        }
        Ok(lhs)
    }

    fn power(&mut self) -> SoftResult<AstNode> {
        let base = self.unary()?;
        if self.eat_punct("**") {
            let exp = self.power()?;
            return Ok(AstNode::node(
                "BinaryOperation",
                vec![base, AstNode::leaf("Operator", "**"), exp],
            ));
        }
        Ok(base)
    }

    fn unary(&mut self) -> SoftResult<AstNode> {
        let t = self.peek().ok_or(Soft)?;
        let prefix = t.kind == TokenKind::Punct && matches!(t.lexeme.as_str(), "!" | "~" | "-" | "+" | "++" | "--");
        if prefix || t.is_kw("delete") {
            self.pos += 1;
            let e = self.unary()?;
            return Ok(AstNode::node(
                "UnaryOperation",
                vec![AstNode::leaf("Operator", t.lexeme.clone()), e],
            ));
        }
        let e = if t.is_kw("new") {
            self.pos += 1;
            AstNode::node("NewExpression", vec![self.type_name()?])
        } else {
            self.primary()?
        };
        self.postfix(e)
    }

    fn postfix(&mut self, mut e: AstNode) -> SoftResult<AstNode> {
        loop {
            let Some(t) = self.peek() else {
                return Ok(e);
            };
            if t.is_punct("(") {
                let mut children = vec![e];
                children.extend(self.arguments()?);
                e = AstNode::node("FunctionCall", children);
            } else if t.is_punct("[") {
                self.pos += 1;
                let mut children = vec![e];
                if !self.at_punct("]") {
                    children.push(self.expression()?);
                }
                // Slices `a[i:j]`
                if self.eat_punct(":") && !self.at_punct("]") {
                    children.push(self.expression()?);
                }
                self.soft_punct("]")?;
                e = AstNode::node("IndexAccess", children);
            } else if t.is_punct(".") {
                self.pos += 1;
                let m = self
                    .peek()
                    .filter(|m| matches!(m.kind, TokenKind::Identifier | TokenKind::Keyword))
                    .ok_or(Soft)?;
                self.pos += 1;
                e = AstNode::node("MemberAccess", vec![e, AstNode::leaf("MemberName", m.lexeme.clone())]);
            } else if t.is_punct("++") || t.is_punct("--") {
                self.pos += 1;
                e = AstNode::node("UnaryOperation", vec![e, AstNode::leaf("Operator", t.lexeme.clone())]);
            } else if t.is_punct("{")
                && self.peek_at(1).is_some_and(|n| n.kind == TokenKind::Identifier)
                && self.peek_at(2).is_some_and(|n| n.is_punct(":"))
            {
                let mut children = vec![e];
                children.extend(self.name_values()?);
                e = AstNode::node("FunctionCallOptions", children);
            } else {
                return Ok(e);
            }
        }
    }

    /// `{ name: expr, ... }`
    fn name_values(&mut self) -> SoftResult<Vec<AstNode>> {
        self.soft_punct("{")?;
        let mut out = Vec::new();
        if self.eat_punct("}") {
            return Ok(out);
        }
        loop {
            let name = self.peek().filter(|t| t.kind == TokenKind::Identifier).ok_or(Soft)?;
            self.pos += 1;
            self.soft_punct(":")?;
            out.push(AstNode::node(
                "NameValue",
                vec![AstNode::leaf("SimpleName", name.lexeme.clone()), self.expression()?],
            ));
            if self.eat_punct("}") {
                return Ok(out);
            }
            self.soft_punct(",")?;
        }
    }

    fn arguments(&mut self) -> SoftResult<Vec<AstNode>> {
        self.soft_punct("(")?;
        if self.at_punct("{") {
            let named = self.name_values()?;
            self.soft_punct(")")?;
            return Ok(vec![AstNode::node("NamedArguments", named)]);
        }
        let mut args = Vec::new();
        if self.eat_punct(")") {
            return Ok(args);
        }
        loop {
            args.push(self.expression()?);
            if self.eat_punct(")") {
                return Ok(args);
            }
            self.soft_punct(",")?;
        }
    }

    fn primary(&mut self) -> SoftResult<AstNode> {
        let t = self.peek().ok_or(Soft)?;
        let node = match t.kind {
            TokenKind::Identifier => {
                self.pos += 1;
                AstNode::leaf("Identifier", t.lexeme.clone())
            }
            TokenKind::Number => {
                self.pos += 1;
                let mut v = t.lexeme.clone();
                if let Some(u) = self.peek().filter(|u| u.kind == TokenKind::Keyword && UNITS.contains(&u.lexeme.as_str())) {
                    self.pos += 1;
                    v.push(' ');
                    v.push_str(&u.lexeme);
                }
                AstNode::leaf("NumberLiteral", v)
            }
            TokenKind::String => {
                self.pos += 1;
                let mut v = t.lexeme.clone();
                while let Some(s) = self.peek().filter(|s| s.kind == TokenKind::String) {
                    self.pos += 1;
                    v.push(' ');
                    v.push_str(&s.lexeme);
                }
                AstNode::leaf("StringLiteral", v)
            }
            TokenKind::Address => {
                self.pos += 1;
                AstNode::leaf("AddressLiteral", t.lexeme.clone())
            }
            TokenKind::Keyword if t.lexeme == "true" || t.lexeme == "false" => {
                self.pos += 1;
                AstNode::leaf("BooleanLiteral", t.lexeme.clone())
            }
            TokenKind::Keyword if is_elementary(t) || t.lexeme == "payable" => {
                self.pos += 1;
                let mut ty = AstNode::leaf("ElementaryTypeName", t.lexeme.clone());
                // `uint[] memory` style casts/new are handled by type_name; here only `T[](...)`.
                while self.at_punct("[") && self.peek_at(1).is_some_and(|n| n.is_punct("]")) {
                    self.pos += 2;
                    ty = AstNode::node("ArrayTypeName", vec![ty]);
                }
                ty
            }
            TokenKind::Punct if t.lexeme == "(" => {
                self.pos += 1;
                let mut items = Vec::new();
                let mut tuple = false;
                loop {
                    if self.at_punct(",") {
                        tuple = true;
                        self.pos += 1;
                        continue;
                    }
                    if self.eat_punct(")") {
                        break;
                    }
                    items.push(self.expression()?);
                    if self.at_punct(",") {
                        tuple = true;
                    } else {
                        self.soft_punct(")")?;
                        break;
                    }
                }
                if !tuple && items.len() == 1 {
                    items.pop().unwrap()
                } else {
                    AstNode::node("TupleExpression", items)
                }
            }
            TokenKind::Punct if t.lexeme == "[" => {
                self.pos += 1;
                let mut items = Vec::new();
                if !self.eat_punct("]") {
                    loop {
                        items.push(self.expression()?);
                        if self.eat_punct("]") {
                            break;
                        }
                        self.soft_punct(",")?;
                    }
                }
                AstNode::node("InlineArray", items)
            }
            _ => return Err(Soft),
        };
        Ok(node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solc::lexer::tokenize;

    fn parse_src(src: &str) -> AstNode {
        parse(&tokenize(src).unwrap()).unwrap()
    }

    fn labels(n: &AstNode) -> Vec<&str> {
        n.children.iter().map(|c| c.type_label.as_str()).collect()
    }

    #[test]
    fn modifier_definition() {
        let ast = parse_src("modifier m { _; }");
        assert_eq!(ast.type_label, "SourceUnit");
        // Free-standing modifiers are not contract members, so wrap one.
        let ast2 = parse_src("contract C { modifier m { _; } }");
        let c = &ast2.children[0];
        let m = c.child("ModifierDefinition").unwrap();
        assert_eq!(labels(m), vec!["SimpleName", "Block"]);
        assert_eq!(m.children[1].children[0].type_label, "PlaceholderStatement");
        assert!(ast.validate().is_ok());
    }

    #[test]
    fn figure_style_method() {
        let ast = parse_src(
            "contract T { function _tokensToSell() private view returns (uint256) { return balance / 2; } }",
        );
        let f = ast.children[0].child("FunctionDefinition").unwrap();
        assert_eq!(
            labels(f),
            vec!["SimpleName", "Visibility", "StateMutability", "ReturnParameters", "Block"]
        );
        assert_eq!(f.children[0].value.as_deref(), Some("_tokensToSell"));
        assert_eq!(f.children[1].value.as_deref(), Some("private"));
    }

    #[test]
    fn empty_stream_is_error() {
        assert!(parse(&[]).is_err());
        assert!(parse(&tokenize("// only a comment").unwrap()).is_err());
    }

    #[test]
    fn malformed_header_is_error() {
        let toks = tokenize("contract C { function f( public {} }").unwrap();
        assert!(parse(&toks).is_err());
        let toks = tokenize("contract C { function f() public { if (x) { }").unwrap();
        assert!(parse(&toks).is_err());
    }

    #[test]
    fn bad_statement_degrades() {
        let ast = parse_src("contract C { function f() public { x = = 3; y = 4; } }");
        let block = ast.children[0].child("FunctionDefinition").unwrap().child("Block").unwrap();
        assert_eq!(labels(block), vec!["Statement", "ExpressionStatement"]);
        assert_eq!(block.children[0].value.as_deref(), Some("x = = 3 ;"));
    }

    #[test]
    fn statements_and_expressions() {
        let ast = parse_src(
            r#"contract C is Ownable, ERC20("a", "b") {
                mapping(address => uint256) balances;
                event Transfer(address indexed from, address indexed to, uint value);
                function transfer(address to, uint256 amount) public onlyOwner returns (bool ok) {
                    require(balances[msg.sender] >= amount, "low");
                    uint256 fee = amount * 3 / 100;
                    for (uint i = 0; i < 3; i++) { fee += 1 ether; }
                    if (to == address(0)) revert(); else { balances[to] += amount - fee; }
                    emit Transfer(msg.sender, to, amount);
                    (bool s, ) = to.call{value: 1}("");
                    return true;
                }
            }"#,
        );
        let c = &ast.children[0];
        assert_eq!(
            labels(c),
            vec![
                "ContractKind",
                "SimpleName",
                "InheritanceSpecifier",
                "InheritanceSpecifier",
                "ContractPart",
                "ContractPart",
                "FunctionDefinition"
            ]
        );
        let f = c.child("FunctionDefinition").unwrap();
        assert_eq!(
            labels(f),
            vec!["SimpleName", "ParameterList", "Visibility", "ModifierInvocation", "ReturnParameters", "Block"]
        );
        assert_eq!(
            labels(f.child("Block").unwrap()),
            vec![
                "ExpressionStatement",
                "VariableDeclarationStatement",
                "ForStatement",
                "IfStatement",
                "EmitStatement",
                "Statement",
                "ReturnStatement"
            ]
        );
        assert!(ast.validate().is_ok());
    }
}
