use std::collections::BTreeSet;

use indexmap::IndexMap;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use super::{Branch, EventSpec, InteractionCall, ParamSpec, State, TaskModel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    /// Well-formed XML that does not describe a task model.
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("line {line}: malformed XML: {reason}")]
    WellFormedness { line: usize, reason: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::Invalid { line, .. } | ParseError::WellFormedness { line, .. } => *line,
        }
    }
}

const VOCABULARY: &[&str] = &[
    "task_model",
    "starting_state",
    "state",
    "events",
    "event",
    "in_param",
    "interaction_call",
    "method",
    "next_states",
    "positive",
    "negative",
    "out_param",
    "next_state",
];

/// Decodes raw file bytes according to the XML declaration. UTF-8 (the
/// default) and ISO-8859-1 are supported.
pub fn decode_xml(bytes: &[u8]) -> Result<String, ParseError> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let encoding = declared_encoding(bytes).unwrap_or_else(|| "utf-8".into());
    match encoding.to_ascii_lowercase().as_str() {
        "utf-8" | "utf8" => String::from_utf8(bytes.to_vec()).map_err(|e| {
            let line = 1 + bytes[..e.utf8_error().valid_up_to()]
                .iter()
                .filter(|&&b| b == b'\n')
                .count();
            ParseError::WellFormedness {
                line,
                reason: "invalid UTF-8".into(),
            }
        }),
        // Latin-1 code points coincide with the first 256 Unicode scalars.
        "iso-8859-1" | "iso8859-1" | "latin1" | "latin-1" => {
            Ok(bytes.iter().map(|&b| char::from(b)).collect())
        }
        other => Err(ParseError::WellFormedness {
            line: 1,
            reason: format!("unsupported encoding {other}"),
        }),
    }
}

fn declared_encoding(bytes: &[u8]) -> Option<String> {
    if !bytes.starts_with(b"<?xml") {
        return None;
    }
    let end = bytes.windows(2).position(|w| w == b"?>")?;
    let decl = std::str::from_utf8(&bytes[..end]).ok()?;
    let at = decl.find("encoding")?;
    let rest = decl[at + "encoding".len()..].trim_start().strip_prefix('=')?.trim_start();
    let quote = rest.chars().next().filter(|c| *c == '"' || *c == '\'')?;
    let rest = &rest[1..];
    Some(rest[..rest.find(quote)?].to_owned())
}

pub fn parse_task_model_bytes(bytes: &[u8]) -> Result<TaskModel, ParseError> {
    parse_task_model(&decode_xml(bytes)?)
}

/// Parses a task-model document. Only the task-model element vocabulary is
/// accepted; `type` attributes are kept verbatim.
pub fn parse_task_model(xml: &str) -> Result<TaskModel, ParseError> {
    let root = build_tree(xml)?;
    interpret_model(&root)
}

struct Node {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<Node>,
    line: usize,
}

impl Node {
    fn attr(&self, key: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn required(&self, key: &str) -> Result<String, ParseError> {
        self.attr(key).map(str::to_owned).ok_or_else(|| {
            invalid(self.line, format!("<{}> is missing attribute {key}", self.name))
        })
    }
}

fn invalid(line: usize, reason: impl Into<String>) -> ParseError {
    ParseError::Invalid {
        line,
        reason: reason.into(),
    }
}

struct LineIndex(Vec<usize>);

impl LineIndex {
    fn new(text: &str) -> Self {
        Self(
            text.bytes()
                .enumerate()
                .filter(|(_, b)| *b == b'\n')
                .map(|(i, _)| i)
                .collect(),
        )
    }

    fn line_of(&self, offset: usize) -> usize {
        self.0.partition_point(|&nl| nl < offset) + 1
    }
}

fn build_tree(xml: &str) -> Result<Node, ParseError> {
    let lines = LineIndex::new(xml);
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);
    let malformed = |pos: u64, reason: String| ParseError::WellFormedness {
        line: lines.line_of(pos as usize),
        reason,
    };

    let mut stack: Vec<Node> = Vec::new();
    let mut root: Option<Node> = None;
    loop {
        let before = reader.buffer_position();
        let event = reader
            .read_event()
            .map_err(|e| malformed(reader.error_position(), e.to_string()))?;
        let line = lines.line_of(before as usize + leading_ws(xml, before as usize));
        match event {
            Event::Start(start) => {
                stack.push(open_node(&start, line).map_err(|r| malformed(before, r))?);
            }
            Event::Empty(start) => {
                let node = open_node(&start, line).map_err(|r| malformed(before, r))?;
                attach(&mut stack, &mut root, node, line)?;
            }
            Event::End(_) => {
                let node = stack
                    .pop()
                    .ok_or_else(|| malformed(before, "unexpected closing tag".into()))?;
                attach(&mut stack, &mut root, node, line)?;
            }
            Event::Text(text) => {
                let content = text
                    .unescape()
                    .map_err(|e| malformed(before, e.to_string()))?;
                if !content.trim().is_empty() {
                    return Err(invalid(line, format!("unexpected text {:?}", content.trim())));
                }
            }
            Event::CData(_) => return Err(invalid(line, "unexpected CDATA section")),
            Event::Comment(_) | Event::Decl(_) | Event::PI(_) | Event::DocType(_) => {}
            Event::Eof => break,
        }
    }
    if let Some(open) = stack.last() {
        return Err(ParseError::WellFormedness {
            line: lines.line_of(xml.len()),
            reason: format!("<{}> opened on line {} is never closed", open.name, open.line),
        });
    }
    root.ok_or_else(|| ParseError::WellFormedness {
        line: 1,
        reason: "no root element".into(),
    })
}

fn leading_ws(xml: &str, from: usize) -> usize {
    xml.get(from..)
        .map(|s| s.len() - s.trim_start().len())
        .unwrap_or(0)
}

fn open_node(start: &BytesStart<'_>, line: usize) -> Result<Node, String> {
    let name = String::from_utf8_lossy(start.name().as_ref()).into_owned();
    let mut attrs = Vec::new();
    for attr in start.attributes() {
        let attr = attr.map_err(|e| e.to_string())?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
        let value = attr.unescape_value().map_err(|e| e.to_string())?.into_owned();
        attrs.push((key, value));
    }
    Ok(Node {
        name,
        attrs,
        children: Vec::new(),
        line,
    })
}

fn attach(
    stack: &mut [Node],
    root: &mut Option<Node>,
    node: Node,
    line: usize,
) -> Result<(), ParseError> {
    match stack.last_mut() {
        Some(parent) => parent.children.push(node),
        None if root.is_none() => *root = Some(node),
        None => {
            return Err(ParseError::WellFormedness {
                line,
                reason: "more than one root element".into(),
            })
        }
    }
    Ok(())
}

/// Checks that every child of `node` is one of `allowed`.
fn expect_children(node: &Node, allowed: &[&str]) -> Result<(), ParseError> {
    for child in &node.children {
        if !VOCABULARY.contains(&child.name.as_str()) {
            return Err(invalid(child.line, format!("unknown element <{}>", child.name)));
        }
        if !allowed.contains(&child.name.as_str()) {
            return Err(invalid(
                child.line,
                format!("<{}> is not allowed inside <{}>", child.name, node.name),
            ));
        }
    }
    Ok(())
}

fn exactly_one<'a>(node: &'a Node, name: &str) -> Result<&'a Node, ParseError> {
    let mut found = node.children.iter().filter(|c| c.name == name);
    match (found.next(), found.next()) {
        (Some(one), None) => Ok(one),
        (None, _) => Err(invalid(
            node.line,
            format!("<{}> needs a <{name}> element", node.name),
        )),
        (Some(_), Some(second)) => Err(invalid(
            second.line,
            format!("<{}> has more than one <{name}>", node.name),
        )),
    }
}

fn children<'a>(node: &'a Node, name: &'a str) -> impl Iterator<Item = &'a Node> {
    node.children.iter().filter(move |c| c.name == name)
}

fn interpret_model(root: &Node) -> Result<TaskModel, ParseError> {
    if root.name != "task_model" {
        let reason = if VOCABULARY.contains(&root.name.as_str()) {
            format!("root element must be <task_model>, found <{}>", root.name)
        } else {
            format!("unknown element <{}>", root.name)
        };
        return Err(invalid(root.line, reason));
    }
    expect_children(root, &["starting_state", "state"])?;
    let start = exactly_one(root, "starting_state")?;
    expect_children(start, &[])?;
    let starting_state = start.required("id")?;

    let mut states = IndexMap::new();
    for node in children(root, "state") {
        let state = interpret_state(node)?;
        if states.contains_key(&state.id) {
            return Err(invalid(node.line, format!("state {} defined twice", state.id)));
        }
        states.insert(state.id.clone(), state);
    }
    Ok(TaskModel {
        model_id: root.attr("id").unwrap_or_default().to_owned(),
        starting_state,
        states,
    })
}

fn interpret_state(node: &Node) -> Result<State, ParseError> {
    expect_children(node, &["events"])?;
    let id = node.required("id")?;
    let mut events = IndexMap::new();
    let mut lists = children(node, "events");
    if let Some(list) = lists.next() {
        if let Some(extra) = lists.next() {
            return Err(invalid(extra.line, format!("state {id} has more than one <events>")));
        }
        expect_children(list, &["event"])?;
        for ev in children(list, "event") {
            let spec = interpret_event(ev)?;
            if events.contains_key(&spec.id) {
                return Err(invalid(
                    ev.line,
                    format!("event {} appears twice in state {id}", spec.id),
                ));
            }
            events.insert(spec.id.clone(), spec);
        }
    }
    Ok(State { id, events })
}

fn interpret_event(node: &Node) -> Result<EventSpec, ParseError> {
    expect_children(node, &["in_param", "interaction_call"])?;
    let id = node.required("id")?;
    let in_params = params(node, "in_param")?;
    let call = exactly_one(node, "interaction_call")?;
    expect_children(call, &["method", "next_states"])?;
    let method = exactly_one(call, "method")?;
    expect_children(method, &[])?;
    let next = exactly_one(call, "next_states")?;
    expect_children(next, &["positive", "negative"])?;
    Ok(EventSpec {
        id,
        in_params,
        call: InteractionCall {
            id: call.required("id")?,
            bip_method: method.required("id")?,
            positive: interpret_branch(exactly_one(next, "positive")?)?,
            negative: interpret_branch(exactly_one(next, "negative")?)?,
        },
    })
}

fn interpret_branch(node: &Node) -> Result<Branch, ParseError> {
    expect_children(node, &["out_param", "next_state"])?;
    let target = exactly_one(node, "next_state")?;
    expect_children(target, &[])?;
    Ok(Branch {
        out_params: params(node, "out_param")?,
        next_state: target.required("id")?,
    })
}

fn params(node: &Node, name: &str) -> Result<Vec<ParamSpec>, ParseError> {
    let mut seen = BTreeSet::new();
    children(node, name)
        .map(|p| {
            expect_children(p, &[])?;
            let id = p.required("id")?;
            if !seen.insert(id.clone()) {
                return Err(invalid(p.line, format!("parameter {id} declared twice")));
            }
            Ok(ParamSpec::new(id, p.required("type")?))
        })
        .collect()
}
