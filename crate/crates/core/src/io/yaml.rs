//! A small YAML subset: block maps, block or inline flat lists, scalars and
//! `#` comments. Anchors, multi-line strings, flow maps and maps nested in
//! lists are rejected.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    /// Raw scalar text; `quoted` scalars are always strings.
    Scalar {
        text: String,
        quoted: bool,
    },
    List(Vec<Node>),
    Map(Vec<(String, Node)>),
    /// `key:` with nothing after it.
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub value: Value,
    /// 1-based source line.
    pub line: usize,
}

struct Line {
    number: usize,
    indent: usize,
    text: String,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Drops a trailing comment, honoring quotes.
fn strip_comment(s: &str) -> &str {
    let mut quote: Option<char> = None;
    let mut prev_space = true;
    for (i, c) in s.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '"' || c == '\'' => quote = Some(c),
            None if c == '#' && prev_space => return &s[..i],
            None => {}
        }
        prev_space = c.is_whitespace();
    }
    s
}

fn lex(text: &str) -> Result<Vec<Line>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let number = i + 1;
        let body = strip_comment(raw).trim_end();
        if body.trim().is_empty() {
            continue;
        }
        let indent = body.len() - body.trim_start().len();
        if body[..indent].contains('\t') {
            return Err(parse_err(number, "tabs are not allowed in indentation"));
        }
        if body.trim_start() == "---" && out.is_empty() {
            continue;
        }
        out.push(Line {
            number,
            indent,
            text: body.trim_start().to_string(),
        });
    }
    Ok(out)
}

fn is_list_item(text: &str) -> bool {
    text == "-" || text.starts_with("- ")
}

fn unquote(s: &str, line: usize) -> Result<Value> {
    let s = s.trim();
    for q in ['"', '\''] {
        if s.starts_with(q) {
            if s.len() < 2 || !s.ends_with(q) {
                return Err(parse_err(line, format!("unterminated string {s}")));
            }
            return Ok(Value::Scalar {
                text: s[1..s.len() - 1].to_string(),
                quoted: true,
            });
        }
    }
    Ok(Value::Scalar {
        text: s.to_string(),
        quoted: false,
    })
}

fn split_inline_list(inner: &str, line: usize) -> Result<Vec<String>> {
    let mut items = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    for c in inner.chars() {
        match quote {
            Some(q) if c == q => {
                quote = None;
                cur.push(c);
            }
            Some(_) => cur.push(c),
            None if c == '"' || c == '\'' => {
                quote = Some(c);
                cur.push(c);
            }
            None if c == ',' => items.push(std::mem::take(&mut cur)),
            None if c == '[' || c == ']' || c == '{' || c == '}' => {
                return Err(parse_err(line, "nested collections are not supported"));
            }
            None => cur.push(c),
        }
    }
    if quote.is_some() {
        return Err(parse_err(line, "unterminated string in list"));
    }
    items.push(cur);
    if items.len() == 1 && items[0].trim().is_empty() {
        return Ok(Vec::new());
    }
    if items.iter().any(|s| s.trim().is_empty()) {
        return Err(parse_err(line, "empty list element"));
    }
    Ok(items)
}

fn parse_inline(s: &str, line: usize) -> Result<Value> {
    let s = s.trim();
    if s.starts_with('[') {
        if !s.ends_with(']') {
            return Err(parse_err(line, "unterminated inline list"));
        }
        let items = split_inline_list(&s[1..s.len() - 1], line)?
            .iter()
            .map(|item| {
                Ok(Node {
                    value: unquote(item, line)?,
                    line,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(Value::List(items));
    }
    if s.starts_with('{') {
        return Err(parse_err(line, "inline maps are not supported"));
    }
    if s.starts_with('&') || s.starts_with('*') || s.starts_with('|') || s.starts_with('>') {
        return Err(parse_err(line, format!("unsupported YAML construct `{s}`")));
    }
    unquote(s, line)
}

/// Splits `key: rest` at the first colon outside quotes that ends the key.
fn split_key(text: &str, line: usize) -> Result<(String, String)> {
    let bytes = text.as_bytes();
    let mut quote: Option<u8> = None;
    for (i, &b) in bytes.iter().enumerate() {
        match quote {
            Some(q) if b == q => quote = None,
            Some(_) => {}
            None if b == b'"' || b == b'\'' => quote = Some(b),
            None if b == b':' && (i + 1 == bytes.len() || bytes[i + 1] == b' ') => {
                let key = text[..i].trim();
                let key = match unquote(key, line)? {
                    Value::Scalar { text, .. } => text,
                    _ => unreachable!(),
                };
                if key.is_empty() {
                    return Err(parse_err(line, "empty key"));
                }
                return Ok((key, text[i + 1..].trim().to_string()));
            }
            None => {}
        }
    }
    Err(parse_err(
        line,
        format!("expected `key: value`, found `{text}`"),
    ))
}

struct Parser {
    lines: Vec<Line>,
    pos: usize,
}

impl Parser {
    fn block(&mut self, indent: usize) -> Result<Node> {
        let first = &self.lines[self.pos];
        if is_list_item(&first.text) {
            self.list(indent)
        } else {
            self.map(indent)
        }
    }

    fn list(&mut self, indent: usize) -> Result<Node> {
        let line = self.lines[self.pos].number;
        let mut items = Vec::new();
        while self.pos < self.lines.len() {
            let l = &self.lines[self.pos];
            if l.indent < indent {
                break;
            }
            if l.indent > indent {
                return Err(parse_err(l.number, "unexpected indentation"));
            }
            if !is_list_item(&l.text) {
                break;
            }
            let (number, item) = (l.number, l.text[1..].trim().to_string());
            self.pos += 1;
            if item.is_empty() {
                return Err(parse_err(
                    number,
                    "nested collections inside lists are not supported",
                ));
            }
            if item.starts_with('[') || split_key(&item, number).is_ok() {
                return Err(parse_err(
                    number,
                    "nested collections inside lists are not supported",
                ));
            }
            items.push(Node {
                value: parse_inline(&item, number)?,
                line: number,
            });
        }
        Ok(Node {
            value: Value::List(items),
            line,
        })
    }

    fn map(&mut self, indent: usize) -> Result<Node> {
        let line = self.lines[self.pos].number;
        let mut entries: Vec<(String, Node)> = Vec::new();
        while self.pos < self.lines.len() {
            let l = &self.lines[self.pos];
            if l.indent < indent {
                break;
            }
            if l.indent > indent {
                return Err(parse_err(l.number, "unexpected indentation"));
            }
            if is_list_item(&l.text) {
                return Err(parse_err(l.number, "list item where a key was expected"));
            }
            let number = l.number;
            let (key, rest) = split_key(&l.text, number)?;
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(parse_err(number, format!("duplicate key `{key}`")));
            }
            self.pos += 1;
            let value = if !rest.is_empty() {
                Node {
                    value: parse_inline(&rest, number)?,
                    line: number,
                }
            } else {
                match self.lines.get(self.pos) {
                    Some(next) if next.indent > indent => {
                        let child = next.indent;
                        self.block(child)?
                    }
                    Some(next) if next.indent == indent && is_list_item(&next.text) => {
                        self.list(indent)?
                    }
                    _ => Node {
                        value: Value::Empty,
                        line: number,
                    },
                }
            };
            entries.push((key, value));
        }
        Ok(Node {
            value: Value::Map(entries),
            line,
        })
    }
}

/// Parses a document whose top level is a map (possibly empty).
pub fn parse(text: &str) -> Result<Node> {
    let lines = lex(text)?;
    if lines.is_empty() {
        return Ok(Node {
            value: Value::Map(Vec::new()),
            line: 1,
        });
    }
    if lines[0].indent != 0 {
        return Err(parse_err(
            lines[0].number,
            "document must start at column 0",
        ));
    }
    let mut p = Parser { lines, pos: 0 };
    let root = p.map(0)?;
    if let Some(l) = p.lines.get(p.pos) {
        return Err(parse_err(l.number, "unexpected content"));
    }
    Ok(root)
}

/// Renders a scalar so that [`parse`] reads back the same text and kind.
pub fn quote_if_needed(s: &str) -> String {
    let plain = !s.is_empty()
        && !s.starts_with(|c: char| c.is_whitespace() || "\"'[]{}&*|>#-!%@`".contains(c))
        && !s.ends_with(char::is_whitespace)
        && !s.contains(": ")
        && !s.contains(" #")
        && !s.ends_with(':')
        && !s.contains(',');
    if plain {
        s.to_string()
    } else {
        format!("\"{s}\"")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(n: &Node) -> &str {
        match &n.value {
            Value::Scalar { text, .. } => text,
            other => panic!("not a scalar: {other:?}"),
        }
    }

    fn get<'a>(n: &'a Node, key: &str) -> &'a Node {
        match &n.value {
            Value::Map(m) => &m.iter().find(|(k, _)| k == key).unwrap().1,
            _ => panic!("not a map"),
        }
    }

    #[test]
    fn nested_maps_lists_and_comments() {
        let doc = "\
# top comment
model:
  vocab_size: 64   # trailing
  name: \"a # not a comment\"
dataflex:
  init_mixture_proportions: [0.5, 0.25, 0.25]
  domains:
    - web
    - 'code'
  component_params:
    ratio: 0.1
";
        let root = parse(doc).unwrap();
        assert_eq!(scalar(get(get(&root, "model"), "vocab_size")), "64");
        assert_eq!(
            scalar(get(get(&root, "model"), "name")),
            "a # not a comment"
        );
        let df = get(&root, "dataflex");
        match &get(df, "init_mixture_proportions").value {
            Value::List(v) => assert_eq!(
                v.iter().map(scalar).collect::<Vec<_>>(),
                ["0.5", "0.25", "0.25"]
            ),
            _ => panic!(),
        }
        match &get(df, "domains").value {
            Value::List(v) => {
                assert_eq!(v.len(), 2);
                assert_eq!(v[1].line, 9);
            }
            _ => panic!(),
        }
        assert_eq!(scalar(get(get(df, "component_params"), "ratio")), "0.1");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("a: 1\n  b: 2\n", 2),
            ("a: 1\na: 2\n", 2),
            ("a:\n\tb: 1\n", 2),
            ("a: 1\njust text\n", 2),
            ("a: [1, 2\n", 1),
            ("a:\n  - x: 1\n", 2),
            ("a: {b: 1}\n", 1),
        ];
        for (doc, line) in cases {
            match parse(doc) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{doc:?}"),
                other => panic!("{doc:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn empty_values_and_documents() {
        assert_eq!(parse("").unwrap().value, Value::Map(Vec::new()));
        let root = parse("a:\nb: []\n").unwrap();
        assert_eq!(get(&root, "a").value, Value::Empty);
        assert_eq!(get(&root, "b").value, Value::List(Vec::new()));
    }

    #[test]
    fn list_at_key_indent() {
        let root = parse("xs:\n- 1\n- 2\ny: 3\n").unwrap();
        match &get(&root, "xs").value {
            Value::List(v) => assert_eq!(v.len(), 2),
            _ => panic!(),
        }
        assert_eq!(scalar(get(&root, "y")), "3");
    }

    #[test]
    fn quoting_round_trips() {
        for s in ["plain", "a: b", "", "- x", "#tag", "x, y", "true", "3.5"] {
            let doc = format!("k: {}\n", quote_if_needed(s));
            assert_eq!(scalar(get(&parse(&doc).unwrap(), "k")), s);
        }
    }
}
