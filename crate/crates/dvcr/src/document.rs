//! Domain types for webpages, tasks, and actions, plus JSONL corpus
//! ingestion and validation.
//!
//! The corpus format is JSONL: one task per line. Each step carries the full
//! element list of its page in document order, the ground-truth element id,
//! and the ground-truth operation. Step histories are not stored; they are
//! reconstructed from the preceding steps' ground-truth actions at load time.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel-space bounding box: left, top, width, height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w < 0.0 || self.h < 0.0 {
            return Err(Error::invariant(
                "",
                format!(
                    "bbox [{}, {}, {}, {}] must be finite with non-negative size",
                    self.x, self.y, self.w, self.h
                ),
            ));
        }
        Ok(())
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = String;
    fn try_from(v: [f64; 4]) -> std::result::Result<Self, String> {
        BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
    }
}

/// One HTML element: the "triplet" of id, renderable text, and bounding box,
/// plus the flags and DOM link the pipeline needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub id: String,
    pub tag: String,
    pub text: String,
    /// Attributes in stored order; order is part of the canonical rendering.
    pub attrs: IndexMap<String, String>,
    pub bbox: BBox,
    pub visible: bool,
    pub actionable: bool,
    /// DOM parent, when the corpus carries tree structure.
    pub parent: Option<String>,
}

/// One webpage state: elements in document order plus an optional screenshot
/// reference (kept verbatim; callers resolve it against the corpus directory).
#[derive(Debug, Clone, PartialEq)]
pub struct HtmlDocument {
    elements: Vec<Element>,
    index: IndexMap<String, usize>,
    pub screenshot: Option<String>,
}

impl HtmlDocument {
    pub fn new(elements: Vec<Element>, screenshot: Option<String>) -> Result<Self> {
        Self::build("", elements, screenshot)
    }

    fn build(task_id: &str, elements: Vec<Element>, screenshot: Option<String>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::invariant(task_id, "document must have at least one element"));
        }
        let mut index = IndexMap::with_capacity(elements.len());
        for (i, e) in elements.iter().enumerate() {
            e.bbox.validate().map_err(|_| {
                Error::invariant(
                    task_id,
                    format!("element {}: bbox must be finite with non-negative size", e.id),
                )
            })?;
            if index.insert(e.id.clone(), i).is_some() {
                return Err(Error::invariant(
                    task_id,
                    format!("element id {} is not unique within the document", e.id),
                ));
            }
        }
        let doc = HtmlDocument { elements, index, screenshot };
        // Parent links must resolve and form a forest (no cycles).
        for e in &doc.elements {
            if let Some(p) = &e.parent {
                if !doc.index.contains_key(p) {
                    return Err(Error::invariant(
                        task_id,
                        format!("element {}: parent {} does not exist", e.id, p),
                    ));
                }
            }
            let mut hops = 0usize;
            let mut cur = e;
            while let Some(p) = &cur.parent {
                cur = &doc.elements[doc.index[p]];
                hops += 1;
                if hops > doc.elements.len() {
                    return Err(Error::invariant(
                        task_id,
                        format!("parent chain starting at element {} contains a cycle", e.id),
                    ));
                }
            }
        }
        Ok(doc)
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Element> {
        self.index_of(id).map(|i| &self.elements[i])
    }

    pub fn require(&self, id: &str) -> Result<&Element> {
        self.get(id).ok_or_else(|| Error::UnknownElement { id: id.to_string() })
    }

    /// True when every element carries a parent link or is a root referenced
    /// by some chain — i.e. the corpus recorded DOM structure at all.
    pub fn has_parent_links(&self) -> bool {
        self.elements.len() == 1 || self.elements.iter().any(|e| e.parent.is_some())
    }
}

/// Operation kind. `Type` and `Select` carry a textual argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "CLICK")]
    Click,
    #[serde(rename = "TYPE")]
    Type,
    #[serde(rename = "SELECT")]
    Select,
}

impl OpKind {
    pub const ALL: [OpKind; 3] = [OpKind::Click, OpKind::Type, OpKind::Select];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Click => "CLICK",
            OpKind::Type => "TYPE",
            OpKind::Select => "SELECT",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    pub op: OpKind,
    pub arg: Option<String>,
}

impl Operation {
    pub fn click() -> Self {
        Operation { op: OpKind::Click, arg: None }
    }

    pub fn new(op: OpKind, arg: Option<String>) -> Result<Self> {
        let o = Operation { op, arg };
        o.validate("")?;
        Ok(o)
    }

    fn validate(&self, context: &str) -> Result<()> {
        match (self.op, &self.arg) {
            (OpKind::Click, Some(_)) => Err(Error::invariant(
                context,
                "CLICK must not carry an argument",
            )),
            (OpKind::Type | OpKind::Select, None) => Err(Error::invariant(
                context,
                format!("{} requires a non-empty argument", self.op),
            )),
            (OpKind::Type | OpKind::Select, Some(a)) if a.is_empty() => Err(Error::invariant(
                context,
                format!("{} requires a non-empty argument", self.op),
            )),
            _ => Ok(()),
        }
    }

    /// "TYPE Toronto", "CLICK" — the textual form metrics tokenize.
    pub fn render(&self) -> String {
        match &self.arg {
            Some(a) => format!("{} {}", self.op, a),
            None => self.op.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub element_id: String,
    pub operation: Operation,
}

/// One task step: the page, the ground-truth action, and all prior
/// ground-truth actions (the ground-truth-history evaluation convention).
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub step_id: usize,
    pub document: HtmlDocument,
    pub gt_action: Action,
    pub history: Vec<Action>,
    /// Prior actions rendered against their own steps' documents, in order.
    pub history_text: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub task_id: String,
    pub instruction: String,
    pub website: String,
    pub domain: String,
    pub steps: Vec<Step>,
}

/// Canonical textual rendering of an element: `[tag] text key=value ...`.
/// Empty text collapses to `[tag]`; attributes follow in stored order.
pub fn element_html_text(e: &Element) -> String {
    let mut s = format!("[{}]", e.tag);
    if !e.text.is_empty() {
        s.push(' ');
        s.push_str(&e.text);
    }
    for (k, v) in &e.attrs {
        s.push(' ');
        s.push_str(k);
        s.push('=');
        s.push_str(v);
    }
    s
}

/// Textual rendering of an action, used verbatim when encoding history:
/// `[textbox] From -> TYPE New York`.
pub fn render_action(a: &Action, doc: &HtmlDocument) -> Result<String> {
    let e = doc.require(&a.element_id)?;
    Ok(format!("{} -> {}", element_html_text(e), a.operation.render()))
}

// ---------------------------------------------------------------------------
// JSONL schema (wire format)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TaskRecord {
    task_id: String,
    instruction: String,
    website: String,
    domain: String,
    steps: Vec<StepRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StepRecord {
    step_id: usize,
    screenshot: Option<String>,
    elements: Vec<Element>,
    gt_element: String,
    gt_operation: Operation,
}

fn task_from_record(rec: TaskRecord) -> Result<Task> {
    let task_id = rec.task_id;
    if rec.instruction.is_empty() {
        return Err(Error::invariant(&task_id, "instruction must be non-empty"));
    }
    if rec.steps.is_empty() {
        return Err(Error::invariant(&task_id, "task must have at least one step"));
    }
    let mut steps = Vec::with_capacity(rec.steps.len());
    let mut history: Vec<Action> = Vec::new();
    let mut history_text: Vec<String> = Vec::new();
    for (i, s) in rec.steps.into_iter().enumerate() {
        if s.step_id != i {
            return Err(Error::invariant(
                &task_id,
                format!("step {} has step_id {}, expected {}", i, s.step_id, i),
            ));
        }
        let document = HtmlDocument::build(&task_id, s.elements, s.screenshot)?;
        s.gt_operation
            .validate(&task_id)
            .map_err(|_| match (s.gt_operation.op, &s.gt_operation.arg) {
                (OpKind::Click, _) => Error::invariant(
                    &task_id,
                    format!("step {i}: CLICK must not carry an argument"),
                ),
                (op, _) => Error::invariant(
                    &task_id,
                    format!("step {i}: {op} requires a non-empty argument"),
                ),
            })?;
        let gt = doc_action(&task_id, i, &document, &s.gt_element, s.gt_operation)?;
        let rendered = render_action(&gt, &document)?;
        steps.push(Step {
            step_id: i,
            document,
            gt_action: gt.clone(),
            history: history.clone(),
            history_text: history_text.clone(),
        });
        history.push(gt);
        history_text.push(rendered);
    }
    Ok(Task {
        task_id,
        instruction: rec.instruction,
        website: rec.website,
        domain: rec.domain,
        steps,
    })
}

fn doc_action(
    task_id: &str,
    step: usize,
    doc: &HtmlDocument,
    element_id: &str,
    operation: Operation,
) -> Result<Action> {
    let e = doc.get(element_id).ok_or_else(|| {
        Error::invariant(
            task_id,
            format!("step {step}: gt element {element_id} does not exist"),
        )
    })?;
    if !e.actionable {
        return Err(Error::invariant(
            task_id,
            format!("step {step}: gt element {element_id} is not actionable"),
        ));
    }
    Ok(Action { element_id: element_id.to_string(), operation })
}

fn task_to_record(t: &Task) -> TaskRecord {
    TaskRecord {
        task_id: t.task_id.clone(),
        instruction: t.instruction.clone(),
        website: t.website.clone(),
        domain: t.domain.clone(),
        steps: t
            .steps
            .iter()
            .map(|s| StepRecord {
                step_id: s.step_id,
                screenshot: s.document.screenshot.clone(),
                elements: s.document.elements.to_vec(),
                gt_element: s.gt_action.element_id.clone(),
                gt_operation: s.gt_action.operation.clone(),
            })
            .collect(),
    }
}

/// Parse a JSONL corpus file: one task per line, file order preserved.
pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Vec<Task>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_corpus_reader(BufReader::new(file), &path.display().to_string())
}

pub fn parse_corpus_reader(reader: impl BufRead, path: &str) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskRecord = serde_json::from_str(&line).map_err(|e| Error::Json {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        tasks.push(task_from_record(rec)?);
    }
    Ok(tasks)
}

/// Serialize tasks to JSONL, the exact inverse of `parse_corpus`.
pub fn write_corpus(tasks: &[Task], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    write_corpus_to(tasks, &mut out)?;
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_corpus_to(tasks: &[Task], mut w: impl Write) -> Result<()> {
    for t in tasks {
        let rec = task_to_record(t);
        let line = serde_json::to_string(&rec).expect("corpus records always serialize");
        w.write_all(line.as_bytes()).map_err(|e| Error::io("<writer>", e))?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn elem(id: &str, tag: &str, text: &str, bbox: (f64, f64, f64, f64)) -> Element {
        Element {
            id: id.to_string(),
            tag: tag.to_string(),
            text: text.to_string(),
            attrs: IndexMap::new(),
            bbox: BBox::new(bbox.0, bbox.1, bbox.2, bbox.3).unwrap(),
            visible: true,
            actionable: true,
            parent: None,
        }
    }

    fn one_task_json() -> String {
        let step0 = r#"{"step_id": 0, "screenshot": null, "elements": [{"id": "e0", "tag": "textbox", "text": "From", "attrs": {}, "bbox": [0, 0, 10, 10], "visible": true, "actionable": true, "parent": null}], "gt_element": "e0", "gt_operation": {"op": "TYPE", "arg": "new york"}}"#;
        let step1 = r#"{"step_id": 1, "screenshot": null, "elements": [{"id": "e0", "tag": "textbox", "text": "To", "attrs": {}, "bbox": [0, 20, 10, 10], "visible": true, "actionable": true, "parent": null}], "gt_element": "e0", "gt_operation": {"op": "TYPE", "arg": "toronto"}}"#;
        format!(
            r#"{{"task_id": "t1", "instruction": "find flights", "website": "air", "domain": "travel", "steps": [{step0}, {step1}]}}"#
        )
    }

    #[test]
    fn parses_valid_single_task_file() {
        let tasks = parse_corpus_reader(one_task_json().as_bytes(), "<mem>").unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].steps.len(), 2);
        // History is rebuilt from prior gt actions.
        assert_eq!(tasks[0].steps[0].history.len(), 0);
        assert_eq!(tasks[0].steps[1].history.len(), 1);
        assert_eq!(tasks[0].steps[1].history_text[0], "[textbox] From -> TYPE new york");
    }

    #[test]
    fn type_without_arg_is_an_invariant_error_naming_the_step() {
        let line = one_task_json().replace(r#"{"op": "TYPE", "arg": "toronto"}"#, r#"{"op": "TYPE", "arg": null}"#);
        let err = parse_corpus_reader(line.as_bytes(), "<mem>").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("t1"), "error should name the task: {msg}");
        assert!(msg.contains("step 1"), "error should name the step: {msg}");
        assert!(msg.contains("TYPE"), "error should name the rule: {msg}");
    }

    #[test]
    fn malformed_json_reports_line_number() {
        let data = format!("{}\n{{not json", one_task_json());
        let err = parse_corpus_reader(data.as_bytes(), "<mem>").unwrap_err();
        assert!(matches!(err, Error::Json { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_element_ids_rejected() {
        let line = one_task_json().replace(
            r#""elements": [{"id": "e0", "tag": "textbox", "text": "From""#,
            r#""elements": [{"id": "e0", "tag": "a", "text": "", "attrs": {}, "bbox": [0,0,1,1], "visible": true, "actionable": false, "parent": null}, {"id": "e0", "tag": "textbox", "text": "From""#,
        );
        let err = parse_corpus_reader(line.as_bytes(), "<mem>").unwrap_err();
        assert!(err.to_string().contains("not unique"), "{err}");
    }

    #[test]
    fn parent_cycle_rejected() {
        let a = Element { parent: Some("b".into()), ..elem("a", "div", "", (0.0, 0.0, 1.0, 1.0)) };
        let b = Element { parent: Some("a".into()), ..elem("b", "div", "", (0.0, 0.0, 1.0, 1.0)) };
        let err = HtmlDocument::new(vec![a, b], None).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn unknown_parent_rejected() {
        let a = Element { parent: Some("zz".into()), ..elem("a", "div", "", (0.0, 0.0, 1.0, 1.0)) };
        let err = HtmlDocument::new(vec![a], None).unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
    }

    #[test]
    fn gt_element_must_be_actionable() {
        let line = one_task_json().replace(
            r#""text": "To", "attrs": {}, "bbox": [0, 20, 10, 10], "visible": true, "actionable": true"#,
            r#""text": "To", "attrs": {}, "bbox": [0, 20, 10, 10], "visible": true, "actionable": false"#,
        );
        let err = parse_corpus_reader(line.as_bytes(), "<mem>").unwrap_err();
        assert!(err.to_string().contains("not actionable"), "{err}");
    }

    #[test]
    fn element_html_text_cases() {
        let e = elem("e", "button", "Pick-up Mar22", (0.0, 0.0, 1.0, 1.0));
        assert_eq!(element_html_text(&e), "[button] Pick-up Mar22");

        let e = elem("e", "combobox", "", (0.0, 0.0, 1.0, 1.0));
        assert_eq!(element_html_text(&e), "[combobox]");

        let mut e = elem("e", "textbox", "To", (0.0, 0.0, 1.0, 1.0));
        e.attrs.insert("name".into(), "dest".into());
        assert_eq!(element_html_text(&e), "[textbox] To name=dest");
    }

    #[test]
    fn attrs_follow_even_when_text_is_empty() {
        let mut e = elem("e", "combobox", "", (0.0, 0.0, 1.0, 1.0));
        e.attrs.insert("role".into(), "listbox".into());
        e.attrs.insert("name".into(), "time".into());
        assert_eq!(element_html_text(&e), "[combobox] role=listbox name=time");
    }

    #[test]
    fn render_action_cases() {
        let doc = HtmlDocument::new(
            vec![
                elem("c", "checkbox", "One way", (0.0, 0.0, 1.0, 1.0)),
                elem("t", "textbox", "To", (2.0, 0.0, 1.0, 1.0)),
                elem("b", "combobox", "", (4.0, 0.0, 1.0, 1.0)),
            ],
            None,
        )
        .unwrap();

        let click = Action { element_id: "c".into(), operation: Operation::click() };
        assert_eq!(render_action(&click, &doc).unwrap(), "[checkbox] One way -> CLICK");

        let type_ = Action {
            element_id: "t".into(),
            operation: Operation::new(OpKind::Type, Some("Toronto".into())).unwrap(),
        };
        assert_eq!(render_action(&type_, &doc).unwrap(), "[textbox] To -> TYPE Toronto");

        let select = Action {
            element_id: "b".into(),
            operation: Operation::new(OpKind::Select, Some("11:30 am".into())).unwrap(),
        };
        assert_eq!(render_action(&select, &doc).unwrap(), "[combobox] -> SELECT 11:30 am");

        let missing = Action { element_id: "zz".into(), operation: Operation::click() };
        assert!(render_action(&missing, &doc).is_err());
    }

    #[test]
    fn corpus_roundtrip_identity() {
        let tasks = parse_corpus_reader(one_task_json().as_bytes(), "<mem>").unwrap();
        let mut buf = Vec::new();
        write_corpus_to(&tasks, &mut buf).unwrap();
        let again = parse_corpus_reader(buf.as_slice(), "<mem>").unwrap();
        assert_eq!(tasks, again);
    }

    #[test]
    fn repeated_parses_are_identical() {
        let tasks1 = parse_corpus_reader(one_task_json().as_bytes(), "<mem>").unwrap();
        let tasks2 = parse_corpus_reader(one_task_json().as_bytes(), "<mem>").unwrap();
        assert_eq!(tasks1, tasks2);
    }
}
