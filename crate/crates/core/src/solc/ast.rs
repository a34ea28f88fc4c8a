use std::fmt;

use serde::{Deserialize, Serialize};

use super::lexer::Span;

/// Typed/valued ordered tree node.
///
/// Leaves carry a `value`; inner nodes carry only a `type_label`. Equality
/// compares ids, labels, values and children, never source spans.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AstNode {
    pub id: usize,
    pub type_label: String,
    pub value: Option<String>,
    pub children: Vec<AstNode>,
    #[serde(skip)]
    pub span: Option<Span>,
}

impl PartialEq for AstNode {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.type_label == other.type_label
            && self.value == other.value
            && self.children == other.children
    }
}

impl Eq for AstNode {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeViolation {
    ValuedInnerNode { id: usize },
    EmptyValue { id: usize },
    DuplicateId { id: usize },
    EmptyLabel { id: usize },
}

impl AstNode {
    pub fn leaf(label: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            id: 0,
            type_label: label.into(),
            value: Some(value.into()),
            children: Vec::new(),
            span: None,
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<AstNode>) -> Self {
        Self {
            id: 0,
            type_label: label.into(),
            value: None,
            children,
            span: None,
        }
    }

    pub fn with_span(mut self, span: Span) -> Self {
        self.span = Some(span);
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Reassigns ids in pre-order starting at zero.
    pub fn renumber(&mut self) {
        fn go(n: &mut AstNode, next: &mut usize) {
            n.id = *next;
            *next += 1;
            for c in &mut n.children {
                go(c, next);
            }
        }
        go(self, &mut 0);
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(AstNode::size).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(AstNode::depth).max().unwrap_or(0)
    }

    /// Pre-order iterator over the subtree.
    pub fn preorder(&self) -> impl Iterator<Item = &AstNode> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let n = stack.pop()?;
            stack.extend(n.children.iter().rev());
            Some(n)
        })
    }

    pub fn child(&self, label: &str) -> Option<&AstNode> {
        self.children.iter().find(|c| c.type_label == label)
    }

    pub fn map_values(&mut self, f: &mut impl FnMut(&str, &str) -> Option<String>) {
        if let Some(v) = &self.value {
            if let Some(nv) = f(&self.type_label, v) {
                self.value = Some(nv);
            }
        }
        for c in &mut self.children {
            c.map_values(f);
        }
    }

    /// Checks the tree invariants: valued nodes are leaves, values and labels
    /// are non-empty, ids are unique.
    pub fn validate(&self) -> Result<(), TreeViolation> {
        let mut seen = std::collections::HashSet::new();
        for n in self.preorder() {
            if !seen.insert(n.id) {
                return Err(TreeViolation::DuplicateId { id: n.id });
            }
            if n.type_label.is_empty() {
                return Err(TreeViolation::EmptyLabel { id: n.id });
            }
            match &n.value {
                Some(_) if !n.children.is_empty() => {
                    return Err(TreeViolation::ValuedInnerNode { id: n.id })
                }
                Some(v) if v.is_empty() => return Err(TreeViolation::EmptyValue { id: n.id }),
                _ => {}
            }
        }
        Ok(())
    }
}

impl fmt::Display for AstNode {
    /// Indented outline, one node per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(n: &AstNode, depth: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            write!(f, "{:indent$}{}", "", n.type_label, indent = depth * 2)?;
            if let Some(v) = &n.value {
                write!(f, " = {v}")?;
            }
            writeln!(f)?;
            n.children.iter().try_for_each(|c| go(c, depth + 1, f))
        }
        go(self, 0, f)
    }
}
