use serde::{Deserialize, Serialize};

use super::ast::AstNode;
use super::lexer::{tokenize, LexError, Span, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    Function,
    Modifier,
    Constructor,
    Fallback,
    Receive,
}

impl MethodKind {
    /// Only functions and modifiers become training pairs.
    pub fn is_summarizable(self) -> bool {
        matches!(self, MethodKind::Function | MethodKind::Modifier)
    }
}

/// One function or modifier definition with its context.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodRecord {
    pub kind: MethodKind,
    pub name: String,
    /// Enclosing contract; empty for free functions.
    pub contract: String,
    pub ast: AstNode,
    /// Raw text of the attached comment block, one comment per line.
    pub doc: Option<String>,
    pub span: Span,
    /// Non-comment source tokens of the method.
    pub tokens: Vec<Token>,
}

/// Collects every method of a parsed source unit in source order.
pub fn extract_methods(unit: &AstNode, source: &str) -> Result<Vec<MethodRecord>, LexError> {
    let tokens = tokenize(source)?;
    let mut out = Vec::new();
    for top in &unit.children {
        match top.type_label.as_str() {
            "ContractDefinition" => {
                let contract = top
                    .child("SimpleName")
                    .and_then(|n| n.value.clone())
                    .unwrap_or_default();
                for m in &top.children {
                    if is_method(m) {
                        out.push(record(m, &contract, &tokens, source));
                    }
                }
            }
            _ if is_method(top) => out.push(record(top, "", &tokens, source)),
            _ => {}
        }
    }
    Ok(out)
}

fn is_method(n: &AstNode) -> bool {
    n.type_label == "FunctionDefinition" || n.type_label == "ModifierDefinition"
}

fn record(node: &AstNode, contract: &str, tokens: &[Token], source: &str) -> MethodRecord {
    let span = node.span.expect("parser attaches spans to methods");
    let name = node.child("SimpleName").and_then(|n| n.value.clone());
    let kind = if node.type_label == "ModifierDefinition" {
        MethodKind::Modifier
    } else {
        match name.as_deref() {
            None | Some("fallback") => MethodKind::Fallback,
            Some("receive") => MethodKind::Receive,
            Some("constructor") => MethodKind::Constructor,
            Some(n) if n == contract => MethodKind::Constructor,
            Some(_) => MethodKind::Function,
        }
    };
    let first = tokens.partition_point(|t| t.span.start < span.start);
    let mut ast = node.clone();
    ast.renumber();
    MethodRecord {
        kind,
        name: name.unwrap_or_default(),
        contract: contract.to_string(),
        ast,
        doc: attached_doc(tokens, first, source),
        span,
        tokens: tokens[first..]
            .iter()
            .take_while(|t| t.span.end <= span.end)
            .filter(|t| !t.kind.is_comment())
            .cloned()
            .collect(),
    }
}

/// The contiguous comment block right before token `first`. Comments in the
/// block may not be separated by blank lines, and a comment trailing code on
/// its own line is not part of it.
fn attached_doc(tokens: &[Token], first: usize, source: &str) -> Option<String> {
    let mut i = first;
    let mut block: Vec<&Token> = Vec::new();
    while i > 0 && tokens[i - 1].kind.is_comment() {
        let t = &tokens[i - 1];
        if let Some(next) = block.last() {
            let gap = &source[t.span.end..next.span.start];
            if gap.matches('\n').count() > 1 {
                break;
            }
        }
        let line_start = source[..t.span.start].rfind('\n').map_or(0, |p| p + 1);
        if !source[line_start..t.span.start].trim().is_empty() {
            break;
        }
        block.push(t);
        i -= 1;
    }
    if block.is_empty() {
        return None;
    }
    block.reverse();
    Some(block.iter().map(|t| t.lexeme.as_str()).collect::<Vec<_>>().join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solc::parse_source;

    const SRC: &str = r#"
// SPDX-License-Identifier: MIT
pragma solidity ^0.8.0;

contract Vault {
    uint x; // trailing note

    /// @notice Deposit funds into the vault.
    function deposit() public payable { x += msg.value; }

    constructor() { x = 1; }

    // unrelated

    /**
     * @dev Restricts to the owner.
     */
    modifier onlyOwner() { _; }

    fallback() external {}
    receive() external payable {}
}

function helper(uint a) pure returns (uint) { return a; }
"#;

    #[test]
    fn kinds_names_and_docs() {
        let unit = parse_source(SRC).unwrap();
        let ms = extract_methods(&unit, SRC).unwrap();
        let summary: Vec<_> = ms.iter().map(|m| (m.kind, m.name.as_str(), m.contract.as_str())).collect();
        assert_eq!(
            summary,
            vec![
                (MethodKind::Function, "deposit", "Vault"),
                (MethodKind::Constructor, "constructor", "Vault"),
                (MethodKind::Modifier, "onlyOwner", "Vault"),
                (MethodKind::Fallback, "fallback", "Vault"),
                (MethodKind::Receive, "receive", "Vault"),
                (MethodKind::Function, "helper", ""),
            ]
        );
        assert_eq!(ms[0].doc.as_deref(), Some("/// @notice Deposit funds into the vault."));
        assert_eq!(ms[1].doc, None);
        assert!(ms[2].doc.as_deref().unwrap().starts_with("/**"));
        assert_eq!(ms[0].tokens.first().unwrap().lexeme, "function");
        assert_eq!(ms[0].tokens.last().unwrap().lexeme, "}");
        assert_eq!(ms[0].ast.id, 0);
    }

    #[test]
    fn old_style_constructor_and_fallback() {
        let src = "contract Old { function Old() public {} function() payable {} }";
        let ms = extract_methods(&parse_source(src).unwrap(), src).unwrap();
        assert_eq!(ms[0].kind, MethodKind::Constructor);
        assert_eq!(ms[1].kind, MethodKind::Fallback);
    }

    #[test]
    fn trailing_comment_not_attached() {
        let src = "contract C { uint x; // note\n function f() public {} }";
        let ms = extract_methods(&parse_source(src).unwrap(), src).unwrap();
        assert_eq!(ms[0].doc, None);
    }
}
