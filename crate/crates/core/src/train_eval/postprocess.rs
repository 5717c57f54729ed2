//! Repair of decoded logical forms: bracket balancing and removal of
//! duplicate sibling units.

const OPEN: &str = "(";
const CLOSE: &str = ")";

/// Drops unmatched closers and appends the missing ones.
pub fn balance_brackets(tokens: &[String]) -> Vec<String> {
    let mut depth = 0usize;
    let mut out = Vec::with_capacity(tokens.len());
    for t in tokens {
        if t == CLOSE {
            if depth == 0 {
                continue;
            }
            depth -= 1;
        } else if t == OPEN {
            depth += 1;
        }
        out.push(t.clone());
    }
    out.extend(std::iter::repeat_n(CLOSE.to_string(), depth));
    out
}

enum Node {
    Token(String),
    Group(Vec<Node>),
}

fn parse(tokens: &[String], pos: &mut usize) -> Vec<Node> {
    let mut nodes = Vec::new();
    while *pos < tokens.len() {
        let t = &tokens[*pos];
        *pos += 1;
        if t == OPEN {
            nodes.push(Node::Group(parse(tokens, pos)));
        } else if t == CLOSE {
            return nodes;
        } else {
            nodes.push(Node::Token(t.clone()));
        }
    }
    nodes
}

fn flatten(nodes: &[Node], out: &mut Vec<String>) {
    for n in nodes {
        match n {
            Node::Token(t) => out.push(t.clone()),
            Node::Group(children) => {
                out.push(OPEN.to_string());
                flatten(children, out);
                out.push(CLOSE.to_string());
            }
        }
    }
}

/// Children first, so that duplicates exposed by inner removals are caught.
fn dedupe(nodes: Vec<Node>) -> Vec<Node> {
    let mut seen: Vec<Vec<String>> = Vec::new();
    let mut out = Vec::with_capacity(nodes.len());
    for n in nodes {
        match n {
            Node::Token(_) => out.push(n),
            Node::Group(children) => {
                let g = Node::Group(dedupe(children));
                let mut span = Vec::new();
                flatten(std::slice::from_ref(&g), &mut span);
                if !seen.contains(&span) {
                    seen.push(span);
                    out.push(g);
                }
            }
        }
    }
    out
}

/// Balances brackets, then keeps only the first of identical bracketed
/// siblings at every depth. Idempotent.
pub fn postprocess(tokens: &[String]) -> Vec<String> {
    let balanced = balance_brackets(tokens);
    let mut pos = 0;
    let tree = dedupe(parse(&balanced, &mut pos));
    let mut out = Vec::with_capacity(balanced.len());
    flatten(&tree, &mut out);
    out
}

pub fn is_balanced(tokens: &[String]) -> bool {
    let mut depth = 0i64;
    for t in tokens {
        if t == OPEN {
            depth += 1;
        } else if t == CLOSE {
            depth -= 1;
            if depth < 0 {
                return false;
            }
        }
    }
    depth == 0
}
