//! Derived views of a method: the structure-based traversal (SBT) sequence,
//! the AST graph, and the plain code-token stream.

use thiserror::Error;

use crate::solc::{AstNode, Token, TokenKind};

pub const START: &str = "<START>";
pub const END: &str = "<END>";
pub const NUM: &str = "<NUM>";
pub const STR: &str = "<STR>";
pub const ADDR: &str = "<ADDR>";
pub const MAX_SBT: usize = 600;
pub const MAX_NODES: usize = 200;
pub const MAX_CODE: usize = 600;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SbtFormatError {
    #[error("empty sequence")]
    Empty,
    #[error("missing {0} sentinel")]
    Sentinel(&'static str),
    #[error("unbalanced brackets at token {0}")]
    Unbalanced(usize),
    #[error("closing label {found:?} does not match {expected:?} at token {at}")]
    LabelMismatch { expected: String, found: String, at: usize },
    #[error("unexpected token {token:?} at {at}")]
    Unexpected { token: String, at: usize },
}

fn camel_split(part: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = part.chars().collect();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if i > 0 && c.is_uppercase() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase() || prev.is_ascii_digit() || (prev.is_uppercase() && next_lower) {
                out.push(std::mem::take(&mut cur));
            }
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
}

fn split_word(word: &str, out: &mut Vec<String>) {
    if word.len() > 2 && word.starts_with('<') && word.ends_with('>') {
        out.push(word.to_string());
        return;
    }
    let core = word.trim_matches('_');
    if core.is_empty() {
        out.push(word.to_string());
        return;
    }
    let lead = &word[..word.len() - word.trim_start_matches('_').len()];
    let trail = &word[word.trim_end_matches('_').len()..];
    let first = out.len();
    for part in core.split('_').filter(|p| !p.is_empty()) {
        camel_split(part, out);
    }
    out[first].insert_str(0, lead);
    out.last_mut().unwrap().push_str(trail);
}

/// Splits an identifier at camelCase boundaries and interior underscores.
/// Leading and trailing underscores stay attached; whitespace separates
/// independent words; `<...>` placeholders are kept whole.
pub fn subtokenize(identifier: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in identifier.split_whitespace() {
        split_word(word, &mut out);
    }
    out
}

/// Inverse of `subtokenize` for values it can represent: subtokens are
/// concatenated directly when that re-splits at the same place, otherwise
/// joined with `_`.
pub fn rejoin(subtokens: &[String]) -> String {
    let mut out = String::new();
    for (i, s) in subtokens.iter().enumerate() {
        if i > 0 {
            let prev = &subtokens[i - 1];
            let glued = format!("{prev}{s}");
            if subtokenize(&glued) != [prev.clone(), s.clone()] {
                out.push('_');
            }
        }
        out.push_str(s);
    }
    out
}

/// Value tokens of a leaf: subtokens when they rejoin to the exact value,
/// otherwise the raw value as a single token.
pub fn value_tokens(value: &str) -> Vec<String> {
    let subs = subtokenize(value);
    let representable = !subs.is_empty() && subs.iter().all(|s| s != "(" && s != ")") && rejoin(&subs) == value;
    if representable {
        subs
    } else {
        vec![value.to_string()]
    }
}

/// Replaces numeric, string and address literal values with placeholders.
pub fn normalize_literals(ast: &AstNode) -> AstNode {
    let mut out = ast.clone();
    out.map_values(&mut |label, _| match label {
        "NumberLiteral" => Some(NUM.to_string()),
        "StringLiteral" => Some(STR.to_string()),
        "AddressLiteral" => Some(ADDR.to_string()),
        _ => None,
    });
    out
}

/// Keeps a `cap - 1` prefix plus `<END>` when `seq` is longer than `cap`.
pub fn truncate(mut seq: Vec<String>, cap: usize) -> Vec<String> {
    if seq.len() > cap.max(2) {
        let cap = cap.max(2);
        seq.truncate(cap - 1);
        seq.push(END.to_string());
    }
    seq
}

/// `( label value... children... ) label`, wrapped in sentinels and capped
/// at `MAX_SBT` tokens (a truncated sequence keeps its prefix and `<END>`).
pub fn sbt_serialize(ast: &AstNode) -> Vec<String> {
    sbt_serialize_capped(ast, MAX_SBT)
}

pub fn sbt_serialize_capped(ast: &AstNode, cap: usize) -> Vec<String> {
    fn go(n: &AstNode, out: &mut Vec<String>) {
        out.push("(".into());
        out.push(n.type_label.clone());
        if let Some(v) = &n.value {
            out.extend(value_tokens(v));
        }
        for c in &n.children {
            go(c, out);
        }
        out.push(")".into());
        out.push(n.type_label.clone());
    }
    let mut out = vec![START.to_string()];
    go(ast, &mut out);
    out.push(END.to_string());
    truncate(out, cap)
}

/// Rebuilds the tree from an untruncated SBT sequence. Node ids are
/// assigned in pre-order.
pub fn sbt_parse(seq: &[String]) -> Result<AstNode, SbtFormatError> {
    if seq.is_empty() {
        return Err(SbtFormatError::Empty);
    }
    if seq[0] != START {
        return Err(SbtFormatError::Sentinel(START));
    }
    if seq.last().map(String::as_str) != Some(END) {
        return Err(SbtFormatError::Sentinel(END));
    }
    let body = &seq[1..seq.len() - 1];
    let mut pos = 0;
    let mut root = parse_node(body, &mut pos)?;
    if pos != body.len() {
        return Err(SbtFormatError::Unexpected { token: body[pos].clone(), at: pos + 1 });
    }
    root.renumber();
    Ok(root)
}

fn parse_node(body: &[String], pos: &mut usize) -> Result<AstNode, SbtFormatError> {
    let at = *pos + 1;
    if body.get(*pos).map(String::as_str) != Some("(") {
        return Err(match body.get(*pos) {
            Some(t) => SbtFormatError::Unexpected { token: t.clone(), at },
            None => SbtFormatError::Unbalanced(at),
        });
    }
    *pos += 1;
    let label = match body.get(*pos) {
        Some(l) if l != "(" && l != ")" => l.clone(),
        _ => return Err(SbtFormatError::Unbalanced(*pos + 1)),
    };
    *pos += 1;
    let mut values = Vec::new();
    while let Some(t) = body.get(*pos) {
        if t == "(" || t == ")" {
            break;
        }
        values.push(t.clone());
        *pos += 1;
    }
    let mut children = Vec::new();
    while body.get(*pos).map(String::as_str) == Some("(") {
        children.push(parse_node(body, pos)?);
    }
    if body.get(*pos).map(String::as_str) != Some(")") {
        return Err(SbtFormatError::Unbalanced(*pos + 1));
    }
    *pos += 1;
    match body.get(*pos) {
        Some(l) if *l == label => *pos += 1,
        Some(l) => {
            return Err(SbtFormatError::LabelMismatch {
                expected: label,
                found: l.clone(),
                at: *pos + 1,
            })
        }
        None => return Err(SbtFormatError::Unbalanced(*pos + 1)),
    }
    if !values.is_empty() && !children.is_empty() {
        return Err(SbtFormatError::Unexpected { token: values[0].clone(), at });
    }
    let mut node = AstNode::node(label, children);
    if !values.is_empty() {
        node.value = Some(rejoin(&values));
    }
    Ok(node)
}

/// Node sequence and Ã = A + I of a method AST.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphRep {
    pub node_labels: Vec<String>,
    /// Row-major `n × n` 0/1 matrix with unit diagonal.
    pub adjacency: Vec<u8>,
}

impl GraphRep {
    pub fn len(&self) -> usize {
        self.node_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_labels.is_empty()
    }

    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.adjacency[i * self.len() + j]
    }

    /// Off-diagonal edges as `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.at(i, j) == 1 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Symmetric adjacency with self-loops from stored edges.
    pub fn from_edges(node_labels: Vec<String>, edges: &[(usize, usize)]) -> Option<Self> {
        let n = node_labels.len();
        let mut adjacency = vec![0u8; n * n];
        for i in 0..n {
            adjacency[i * n + i] = 1;
        }
        for &(i, j) in edges {
            if i >= n || j >= n {
                return None;
            }
            adjacency[i * n + j] = 1;
            adjacency[j * n + i] = 1;
        }
        Some(Self { node_labels, adjacency })
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.len()).filter(|&j| j != i && self.at(i, j) == 1).collect()
    }
}

/// Pre-order graph: a node per type label plus a node per leaf value
/// subtoken, each linked to its type node; capped at `MAX_NODES`.
pub fn graph_extract(ast: &AstNode) -> GraphRep {
    graph_extract_capped(ast, MAX_NODES)
}

pub fn graph_extract_capped(ast: &AstNode, cap: usize) -> GraphRep {
    fn go(n: &AstNode, parent: Option<usize>, cap: usize, labels: &mut Vec<String>, edges: &mut Vec<(usize, usize)>) {
        if labels.len() >= cap {
            return;
        }
        let me = labels.len();
        labels.push(n.type_label.clone());
        if let Some(p) = parent {
            edges.push((p, me));
        }
        if let Some(v) = &n.value {
            for s in value_tokens(v) {
                if labels.len() >= cap {
                    return;
                }
                edges.push((me, labels.len()));
                labels.push(s);
            }
        }
        for c in &n.children {
            go(c, Some(me), cap, labels, edges);
        }
    }
    let mut labels = Vec::new();
    let mut edges = Vec::new();
    go(ast, None, cap, &mut labels, &mut edges);
    GraphRep::from_edges(labels, &edges).expect("edges index retained nodes")
}

/// Plain code tokens of a method's source: comments dropped, literals
/// replaced by placeholders, identifiers subtokenized, other tokens kept.
pub fn code_tokens(tokens: &[Token]) -> Vec<String> {
    let mut out = vec![START.to_string()];
    for t in tokens {
        match t.kind {
            TokenKind::DocComment | TokenKind::LineComment | TokenKind::BlockComment => {}
            TokenKind::Number => out.push(NUM.into()),
            TokenKind::String => out.push(STR.into()),
            TokenKind::Address => out.push(ADDR.into()),
            TokenKind::Identifier => out.extend(subtokenize(&t.lexeme)),
            TokenKind::Keyword | TokenKind::Punct => out.push(t.lexeme.clone()),
        }
    }
    out.push(END.to_string());
    truncate(out, MAX_CODE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solc::tokenize;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn subtokenize_examples() {
        assert_eq!(subtokenize("_tokensToSell"), s(&["_tokens", "To", "Sell"]));
        assert_eq!(subtokenize("abc"), s(&["abc"]));
        assert_eq!(subtokenize("snake_case_name"), s(&["snake", "case", "name"]));
        assert_eq!(subtokenize("ERC20Token"), s(&["ERC20", "Token"]));
        assert_eq!(subtokenize("parseHTTPResponse"), s(&["parse", "HTTP", "Response"]));
        assert_eq!(subtokenize("tokens_"), s(&["tokens_"]));
        assert_eq!(subtokenize("_"), s(&["_"]));
        assert_eq!(subtokenize("<NUM>"), s(&["<NUM>"]));
    }

    #[test]
    fn rejoin_examples() {
        for v in ["_tokensToSell", "snake_case_name", "ERC20Token", "a_b", "x"] {
            assert_eq!(rejoin(&subtokenize(v)), v);
        }
        assert_eq!(value_tokens("a__b"), s(&["a__b"]));
        assert_eq!(value_tokens("address payable"), s(&["address payable"]));
    }

    #[test]
    fn literals_become_placeholders() {
        let t = AstNode::node(
            "X",
            vec![
                AstNode::leaf("NumberLiteral", "42"),
                AstNode::leaf("AddressLiteral", format!("0x{}", "ab".repeat(20))),
                AstNode::leaf("StringLiteral", "\"hi\""),
                AstNode::leaf("Identifier", "x"),
            ],
        );
        let n = normalize_literals(&t);
        let vals: Vec<_> = n.children.iter().map(|c| c.value.clone().unwrap()).collect();
        assert_eq!(vals, s(&["<NUM>", "<ADDR>", "<STR>", "x"]));
        let plain = AstNode::node("Y", vec![AstNode::leaf("Identifier", "y")]);
        assert_eq!(normalize_literals(&plain), plain);
    }

    #[test]
    fn sbt_examples() {
        let block = AstNode::node("Block", vec![]);
        assert_eq!(sbt_serialize(&block), s(&["<START>", "(", "Block", ")", "Block", "<END>"]));
        let vis = AstNode::leaf("Visibility", "private");
        assert_eq!(
            sbt_serialize(&vis),
            s(&["<START>", "(", "Visibility", "private", ")", "Visibility", "<END>"])
        );
        assert!(matches!(
            sbt_parse(&s(&["<START>", "(", "A", ")", "B", "<END>"])),
            Err(SbtFormatError::LabelMismatch { .. })
        ));
        assert_eq!(sbt_parse(&[]), Err(SbtFormatError::Empty));
        assert!(sbt_parse(&s(&["<START>", "(", "A", "<END>"])).is_err());
    }

    #[test]
    fn sbt_truncates_to_cap() {
        let wide = AstNode::node("R", (0..400).map(|i| AstNode::leaf("L", format!("v{i}"))).collect());
        let seq = sbt_serialize(&wide);
        assert_eq!(seq.len(), MAX_SBT);
        assert_eq!(seq.last().unwrap(), END);
        assert_eq!(seq[..10], sbt_serialize(&wide)[..10]);
    }

    #[test]
    fn graph_examples() {
        let one = graph_extract(&AstNode::node("A", vec![]));
        assert_eq!(one.adjacency, vec![1]);
        let three = graph_extract(&AstNode::node("A", vec![AstNode::node("B", vec![]), AstNode::node("C", vec![])]));
        assert_eq!(three.adjacency, vec![1, 1, 1, 1, 1, 0, 1, 0, 1]);
        assert_eq!(three.edges(), vec![(0, 1), (0, 2)]);
        let leaf = graph_extract(&AstNode::leaf("SimpleName", "_tokensToSell"));
        assert_eq!(leaf.node_labels, s(&["SimpleName", "_tokens", "To", "Sell"]));
        assert_eq!(leaf.neighbors(0), vec![1, 2, 3]);
        assert_eq!(leaf.neighbors(2), vec![0]);
    }

    #[test]
    fn graph_cap() {
        let wide = AstNode::node("R", (0..300).map(|_| AstNode::node("L", vec![])).collect());
        let g = graph_extract(&wide);
        assert_eq!(g.len(), MAX_NODES);
        assert_eq!(g.neighbors(0).len(), MAX_NODES - 1);
    }

    #[test]
    fn code_token_stream() {
        let toks = tokenize("function _tokensToSell() private { x = 5; // c\n s = \"a\"; }").unwrap();
        let code = code_tokens(&toks);
        let joined = code.join(" ");
        assert!(joined.starts_with("<START> function _tokens To Sell ( ) private {"));
        assert!(joined.contains("x = <NUM> ;"));
        assert!(joined.ends_with("s = <STR> ; } <END>"));
        assert_eq!(code, code_tokens(&toks));
    }
}
