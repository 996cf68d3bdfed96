//! Implementation histories (invocations, responses and low-level steps) and
//! their JSONL serialization.
//!
//! One JSON object per line, keys in the order
//! `seq, kind, pid, op, args, resp, step, object, outcome`:
//!
//! ```text
//! {"seq":1,"kind":"invoke","pid":1,"op":"inc","args":[],"resp":null,"step":null,"object":null,"outcome":null}
//! {"seq":2,"kind":"step","pid":1,"op":"inc","args":[],"resp":null,"step":"L2","object":"C","outcome":1}
//! ```

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::construction::{Access, Pid, SharedObjects, StepLabel, StepReport};
use crate::memory::{CellHandle, FieldValue, ObjectHandle, Record, Sentinel};
use crate::types::{OperationDescriptor, Value};

/// Shared object touched by a step, named by role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectName {
    Clock,
    Announce,
    State,
    /// Response cell of a process; pid 0 is the NOOP cell.
    Cell(u32),
}

impl fmt::Display for ObjectName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectName::Clock => f.write_str("C"),
            ObjectName::Announce => f.write_str("A"),
            ObjectName::State => f.write_str("S"),
            ObjectName::Cell(pid) => write!(f, "cell:{pid}"),
        }
    }
}

impl ObjectName {
    fn parse(s: &str) -> Option<ObjectName> {
        match s {
            "C" => Some(ObjectName::Clock),
            "A" => Some(ObjectName::Announce),
            "S" => Some(ObjectName::State),
            _ => s.strip_prefix("cell:")?.parse().ok().map(ObjectName::Cell),
        }
    }
}

/// Result of a low-level step.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    None,
    /// GCAS result or L10 branch.
    Bool(bool),
    /// Fetch-and-increment result.
    Time(u64),
    /// Record read or written.
    Record(Record),
    /// Response computed at L11.
    Value(Value),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum EventBody {
    Invoke {
        op: OperationDescriptor,
    },
    Response {
        op: OperationDescriptor,
        resp: Value,
    },
    Step {
        op: OperationDescriptor,
        label: StepLabel,
        object: Option<ObjectName>,
        outcome: Outcome,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub seq: u64,
    pub pid: Pid,
    pub body: EventBody,
}

impl Event {
    pub fn is_step(&self) -> bool {
        matches!(self.body, EventBody::Step { .. })
    }

    pub fn op(&self) -> &OperationDescriptor {
        match &self.body {
            EventBody::Invoke { op } | EventBody::Response { op, .. } | EventBody::Step { op, .. } => op,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.body {
            EventBody::Invoke { .. } => "invoke",
            EventBody::Response { .. } => "response",
            EventBody::Step { .. } => "step",
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.body {
            EventBody::Invoke { op } => write!(f, "#{} {} invoke {op}", self.seq, self.pid),
            EventBody::Response { op, resp } => write!(f, "#{} {} {op} -> {resp}", self.seq, self.pid),
            EventBody::Step {
                label,
                object,
                outcome,
                ..
            } => {
                write!(f, "#{} {} {label}", self.seq, self.pid)?;
                if let Some(obj) = object {
                    write!(f, " {obj}")?;
                }
                match outcome {
                    Outcome::None => Ok(()),
                    Outcome::Bool(b) => write!(f, " = {b}"),
                    Outcome::Time(t) => write!(f, " = {t}"),
                    Outcome::Record(r) => write!(f, " = {r}"),
                    Outcome::Value(v) => write!(f, " = {v}"),
                }
            }
        }
    }
}

/// Maps object handles back to role names for event logging.
#[derive(Clone, Debug)]
pub struct Layout {
    shared: SharedObjects,
    cells: Vec<(CellHandle, Pid)>,
}

impl Layout {
    pub fn new(shared: SharedObjects) -> Self {
        Layout {
            shared,
            cells: Vec::new(),
        }
    }

    pub fn shared(&self) -> &SharedObjects {
        &self.shared
    }

    pub fn add_cell(&mut self, cell: CellHandle, owner: Pid) {
        self.cells.push((cell, owner));
    }

    pub fn owner_of(&self, cell: CellHandle) -> Option<Pid> {
        if cell == self.shared.noop_cell {
            return Some(Pid(0));
        }
        self.cells.iter().find(|(c, _)| *c == cell).map(|(_, p)| *p)
    }

    pub fn name_of(&self, obj: ObjectHandle) -> Option<ObjectName> {
        if obj == self.shared.announce {
            Some(ObjectName::Announce)
        } else if obj == self.shared.state {
            Some(ObjectName::State)
        } else {
            obj.as_cell()
                .and_then(|c| self.owner_of(c))
                .map(|p| ObjectName::Cell(p.0))
        }
    }

    /// The step event body for `report`, executed while `op` was pending.
    pub fn step_body(&self, op: &OperationDescriptor, report: &StepReport) -> EventBody {
        let (object, outcome) = match &report.access {
            Access::FetchAndIncrement { value, .. } => (Some(ObjectName::Clock), Outcome::Time(*value)),
            Access::Read { obj, record } | Access::Write { obj, record } => {
                (self.name_of(*obj), Outcome::Record(record.clone()))
            }
            Access::Gcas { obj, success, .. } => (self.name_of(*obj), Outcome::Bool(*success)),
            Access::Branch(b) => (None, Outcome::Bool(*b)),
            Access::Apply(v) => (None, Outcome::Value(v.clone())),
        };
        EventBody::Step {
            op: op.clone(),
            label: report.label,
            object,
            outcome,
        }
    }
}

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed history at seq {seq}: {message}")]
    Malformed { seq: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistoryLine {
    seq: u64,
    kind: String,
    pid: u32,
    op: Option<String>,
    args: Json,
    resp: Json,
    step: Option<String>,
    object: Option<String>,
    outcome: Json,
}

pub fn value_to_json(v: &Value) -> Json {
    match v {
        Value::Int(i) => json!(i),
        Value::Bool(b) => json!(b),
        Value::Ack => json!("ack"),
        Value::Empty => json!("empty"),
        Value::List(xs) => json!(xs),
    }
}

pub fn value_from_json(j: &Json) -> Result<Value, String> {
    match j {
        Json::Number(n) => n.as_i64().map(Value::Int).ok_or_else(|| format!("not an i64: {n}")),
        Json::Bool(b) => Ok(Value::Bool(*b)),
        Json::String(s) if s == "ack" => Ok(Value::Ack),
        Json::String(s) if s == "empty" => Ok(Value::Empty),
        Json::Array(xs) => xs
            .iter()
            .map(|x| x.as_i64().ok_or_else(|| format!("list element {x} is not an i64")))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::List),
        other => Err(format!("not a value: {other}")),
    }
}

fn op_to_json(op: &OperationDescriptor) -> Json {
    json!({"name": op.name, "args": op.args.iter().map(value_to_json).collect::<Vec<_>>()})
}

fn op_from_json(j: &Json) -> Result<OperationDescriptor, String> {
    let name = j
        .get("name")
        .and_then(Json::as_str)
        .ok_or("operation without a name")?;
    let args = args_from_json(j.get("args").unwrap_or(&Json::Null))?;
    Ok(OperationDescriptor::new(name, args))
}

fn args_from_json(j: &Json) -> Result<Vec<Value>, String> {
    match j {
        Json::Array(xs) => xs.iter().map(value_from_json).collect(),
        Json::Null => Ok(Vec::new()),
        other => Err(format!("args must be an array, got {other}")),
    }
}

fn field_to_json(f: &FieldValue) -> Json {
    match f {
        FieldValue::Time(t) => json!({"time": t}),
        FieldValue::Op(op) => json!({"op": op_to_json(op)}),
        FieldValue::Resp(v) => json!({"resp": value_to_json(v)}),
        FieldValue::State(v) => json!({"state": value_to_json(v)}),
        FieldValue::Cell(c) => json!({"cell": c.id()}),
        FieldValue::Sentinel(s) => json!(s.to_string()),
    }
}

fn field_from_json(j: &Json) -> Result<FieldValue, String> {
    if let Some(s) = j.as_str() {
        return match s {
            "NULL" => Ok(FieldValue::Sentinel(Sentinel::Null)),
            "BOTTOM" => Ok(FieldValue::Sentinel(Sentinel::Bottom)),
            "NOOP" => Ok(FieldValue::Sentinel(Sentinel::Noop)),
            other => Err(format!("unknown sentinel {other}")),
        };
    }
    let obj = j.as_object().filter(|o| o.len() == 1).ok_or_else(|| format!("bad field {j}"))?;
    let (k, v) = obj.iter().next().expect("one entry");
    match k.as_str() {
        "time" => v.as_u64().map(FieldValue::Time).ok_or_else(|| format!("bad time {v}")),
        "op" => op_from_json(v).map(|op| FieldValue::Op(Arc::new(op))),
        "resp" => value_from_json(v).map(FieldValue::Resp),
        "state" => value_from_json(v).map(FieldValue::State),
        "cell" => v
            .as_u64()
            .map(|id| FieldValue::Cell(CellHandle::from_raw(id as u32)))
            .ok_or_else(|| format!("bad cell {v}")),
        other => Err(format!("unknown field tag {other}")),
    }
}

fn outcome_to_json(o: &Outcome) -> Json {
    match o {
        Outcome::None => Json::Null,
        Outcome::Bool(b) => json!(b),
        Outcome::Time(t) => json!(t),
        Outcome::Record(r) => json!({"record": r.fields().iter().map(field_to_json).collect::<Vec<_>>()}),
        Outcome::Value(v) => json!({"value": value_to_json(v)}),
    }
}

fn outcome_from_json(j: &Json) -> Result<Outcome, String> {
    match j {
        Json::Null => Ok(Outcome::None),
        Json::Bool(b) => Ok(Outcome::Bool(*b)),
        Json::Number(n) => n.as_u64().map(Outcome::Time).ok_or_else(|| format!("bad time {n}")),
        Json::Object(o) if o.len() == 1 && o.contains_key("record") => {
            let fields = o["record"]
                .as_array()
                .ok_or("record must be an array")?
                .iter()
                .map(field_from_json)
                .collect::<Result<Vec<_>, _>>()?;
            Record::new(fields).map(Outcome::Record).map_err(|e| e.to_string())
        }
        Json::Object(o) if o.len() == 1 && o.contains_key("value") => value_from_json(&o["value"]).map(Outcome::Value),
        other => Err(format!("bad outcome {other}")),
    }
}

fn to_line(e: &Event) -> HistoryLine {
    let op = e.op();
    let mut line = HistoryLine {
        seq: e.seq,
        kind: e.kind().to_string(),
        pid: e.pid.0,
        op: Some(op.name.clone()),
        args: Json::Array(op.args.iter().map(value_to_json).collect()),
        resp: Json::Null,
        step: None,
        object: None,
        outcome: Json::Null,
    };
    match &e.body {
        EventBody::Invoke { .. } => {}
        EventBody::Response { resp, .. } => line.resp = value_to_json(resp),
        EventBody::Step {
            label,
            object,
            outcome,
            ..
        } => {
            line.step = Some(label.as_str().to_string());
            line.object = object.map(|o| o.to_string());
            line.outcome = outcome_to_json(outcome);
        }
    }
    line
}

fn from_line(line: HistoryLine) -> Result<Event, String> {
    let name = line.op.ok_or("missing op")?;
    let op = OperationDescriptor::new(name, args_from_json(&line.args)?);
    let body = match line.kind.as_str() {
        "invoke" => EventBody::Invoke { op },
        "response" => EventBody::Response {
            op,
            resp: value_from_json(&line.resp)?,
        },
        "step" => {
            let step = line.step.ok_or("step event without a step label")?;
            let label = StepLabel::parse(&step).ok_or_else(|| format!("unknown step label {step}"))?;
            let object = match line.object {
                None => None,
                Some(o) => Some(ObjectName::parse(&o).ok_or_else(|| format!("unknown object {o}"))?),
            };
            EventBody::Step {
                op,
                label,
                object,
                outcome: outcome_from_json(&line.outcome)?,
            }
        }
        other => return Err(format!("invalid kind `{other}`")),
    };
    Ok(Event {
        seq: line.seq,
        pid: Pid(line.pid),
        body,
    })
}

pub fn event_to_json_line(e: &Event) -> String {
    serde_json::to_string(&to_line(e)).expect("history lines always serialize")
}

pub fn write_events<W: Write>(mut out: W, events: &[Event]) -> io::Result<()> {
    for e in events {
        writeln!(out, "{}", event_to_json_line(e))?;
    }
    out.flush()
}

pub fn read_events<R: BufRead>(input: R) -> Result<Vec<Event>, HistoryError> {
    let mut events: Vec<Event> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| HistoryError::Parse {
            line: line_no,
            message,
        };
        let raw: HistoryLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let event = from_line(raw).map_err(parse_err)?;
        if let Some(prev) = events.last() {
            if event.seq <= prev.seq {
                return Err(parse_err(format!(
                    "seq {} does not increase past {}",
                    event.seq, prev.seq
                )));
            }
        }
        events.push(event);
    }
    Ok(events)
}

pub fn write_history(path: &Path, events: &[Event]) -> Result<(), HistoryError> {
    write_events(BufWriter::new(File::create(path)?), events)?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<Event>, HistoryError> {
    read_events(BufReader::new(File::open(path)?))
}

/// Renumbers `seq` from 1.
pub fn renumber(events: &mut [Event]) {
    for (i, e) in events.iter_mut().enumerate() {
        e.seq = i as u64 + 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inc() -> OperationDescriptor {
        OperationDescriptor::nullary("inc")
    }

    fn one_op_trace() -> Vec<Event> {
        let cell = CellHandle::from_raw(4);
        let rec = Record::new(vec![FieldValue::Time(1), FieldValue::NULL]).unwrap();
        let bodies = vec![
            EventBody::Invoke { op: inc() },
            EventBody::Step {
                op: inc(),
                label: StepLabel::L2,
                object: Some(ObjectName::Clock),
                outcome: Outcome::Time(1),
            },
            EventBody::Step {
                op: inc(),
                label: StepLabel::L3,
                object: Some(ObjectName::Cell(1)),
                outcome: Outcome::Record(rec),
            },
            EventBody::Step {
                op: inc(),
                label: StepLabel::L8,
                object: Some(ObjectName::Announce),
                outcome: Outcome::Record(
                    Record::new(vec![FieldValue::Time(1), FieldValue::Op(Arc::new(inc())), FieldValue::Cell(cell)])
                        .unwrap(),
                ),
            },
            EventBody::Step {
                op: inc(),
                label: StepLabel::L10,
                object: None,
                outcome: Outcome::Bool(true),
            },
            EventBody::Step {
                op: inc(),
                label: StepLabel::L11,
                object: None,
                outcome: Outcome::Value(Value::Int(0)),
            },
            EventBody::Response {
                op: inc(),
                resp: Value::Int(0),
            },
        ];
        bodies
            .into_iter()
            .enumerate()
            .map(|(i, body)| Event {
                seq: i as u64 + 1,
                pid: Pid(1),
                body,
            })
            .collect()
    }

    fn round_trip(events: &[Event]) -> Vec<Event> {
        let mut buf = Vec::new();
        write_events(&mut buf, events).unwrap();
        read_events(buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_history_is_empty_file() {
        let mut buf = Vec::new();
        write_events(&mut buf, &[]).unwrap();
        assert!(buf.is_empty());
        assert!(read_events(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn one_op_trace_round_trips() {
        let events = one_op_trace();
        assert_eq!(round_trip(&events), events);
    }

    #[test]
    fn key_order_is_fixed() {
        let line = event_to_json_line(&one_op_trace()[1]);
        assert_eq!(
            line,
            r#"{"seq":2,"kind":"step","pid":1,"op":"inc","args":[],"resp":null,"step":"L2","object":"C","outcome":1}"#
        );
    }

    #[test]
    fn invalid_kind_reports_line() {
        let mut buf = Vec::new();
        write_events(&mut buf, &one_op_trace()[..2]).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("\"step\",\"pid\"", "\"teleport\",\"pid\"", 1);
        match read_events(text.as_bytes()) {
            Err(HistoryError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("teleport"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_increasing_seq_rejected() {
        let mut events = one_op_trace();
        events[2].seq = 2;
        let mut buf = Vec::new();
        write_events(&mut buf, &events).unwrap();
        assert!(matches!(read_events(buf.as_slice()), Err(HistoryError::Parse { line: 3, .. })));
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            any::<i64>().prop_map(Value::Int),
            any::<bool>().prop_map(Value::Bool),
            Just(Value::Ack),
            Just(Value::Empty),
            prop::collection::vec(any::<i64>(), 0..4).prop_map(Value::List),
        ]
    }

    fn arb_op() -> impl Strategy<Value = OperationDescriptor> {
        ("[a-z]{1,6}", prop::collection::vec(arb_value(), 0..3)).prop_map(|(n, a)| OperationDescriptor::new(n, a))
    }

    fn arb_field() -> impl Strategy<Value = FieldValue> {
        prop_oneof![
            any::<u64>().prop_map(FieldValue::Time),
            arb_op().prop_map(|o| FieldValue::Op(Arc::new(o))),
            arb_value().prop_map(FieldValue::Resp),
            arb_value().prop_map(FieldValue::State),
            any::<u32>().prop_map(|c| FieldValue::Cell(CellHandle::from_raw(c))),
            Just(FieldValue::NULL),
            Just(FieldValue::BOTTOM),
            Just(FieldValue::NOOP),
        ]
    }

    fn arb_outcome() -> impl Strategy<Value = Outcome> {
        prop_oneof![
            Just(Outcome::None),
            any::<bool>().prop_map(Outcome::Bool),
            any::<u64>().prop_map(Outcome::Time),
            prop::collection::vec(arb_field(), 1..=4).prop_map(|f| Outcome::Record(Record::new(f).unwrap())),
            arb_value().prop_map(Outcome::Value),
        ]
    }

    fn arb_body() -> impl Strategy<Value = EventBody> {
        let object = prop_oneof![
            Just(None),
            Just(Some(ObjectName::Clock)),
            Just(Some(ObjectName::Announce)),
            Just(Some(ObjectName::State)),
            (0u32..9).prop_map(|p| Some(ObjectName::Cell(p))),
        ];
        prop_oneof![
            arb_op().prop_map(|op| EventBody::Invoke { op }),
            (arb_op(), arb_value()).prop_map(|(op, resp)| EventBody::Response { op, resp }),
            (arb_op(), prop::sample::select(StepLabel::ALL.to_vec()), object, arb_outcome())
                .prop_map(|(op, label, object, outcome)| EventBody::Step { op, label, object, outcome }),
        ]
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(bodies in prop::collection::vec((0u32..5, arb_body()), 0..20)) {
            let events: Vec<Event> = bodies
                .into_iter()
                .enumerate()
                .map(|(i, (pid, body))| Event { seq: i as u64 * 3 + 1, pid: Pid(pid), body })
                .collect();
            prop_assert_eq!(round_trip(&events), events);
        }
    }
}
