//! Sequential type specifications: an initial state and a deterministic
//! transition function from `(operation, state)` to `(state, response)`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// States, responses and operation arguments of the built-in types.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(i64),
    Bool(bool),
    /// Response of operations that only change state.
    Ack,
    /// Response of `pop` on an empty stack.
    Empty,
    List(Vec<i64>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Ack => f.write_str("ack"),
            Value::Empty => f.write_str("empty"),
            Value::List(xs) => write!(f, "{xs:?}"),
        }
    }
}

/// Name reserved for the fictitious initial operation.
pub const NOOP_NAME: &str = "NOOP";

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OperationDescriptor {
    pub name: String,
    pub args: Vec<Value>,
}

impl OperationDescriptor {
    pub fn new(name: impl Into<String>, args: Vec<Value>) -> Self {
        OperationDescriptor {
            name: name.into(),
            args,
        }
    }

    pub fn nullary(name: impl Into<String>) -> Self {
        Self::new(name, Vec::new())
    }

    pub fn unary(name: impl Into<String>, arg: i64) -> Self {
        Self::new(name, vec![Value::Int(arg)])
    }
}

impl fmt::Display for OperationDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypeError {
    #[error("type `{ty}` has no operation `{op}`")]
    UnknownOperation { ty: String, op: String },
    #[error("bad arguments for `{op}`: {reason}")]
    BadArguments { op: String, reason: String },
    #[error("state {state} is not a valid `{ty}` state")]
    BadState { ty: String, state: Value },
    #[error("unknown type `{0}` (expected counter, register or stack)")]
    UnknownType(String),
}

/// A deterministic sequential type.
pub trait SequentialType: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn initial_state(&self) -> Value;

    fn operations(&self) -> &[&'static str];

    /// One transition. Never yields a sentinel as a response.
    fn apply(&self, op: &OperationDescriptor, state: &Value) -> Result<(Value, Value), TypeError>;

    /// Deterministic workload used by the explorer and stress harness: the
    /// `index`-th operation issued by process `pid`.
    fn workload_op(&self, pid: u32, index: usize) -> OperationDescriptor;
}

pub type TypeSpec = Arc<dyn SequentialType>;

pub const BUILTIN_TYPES: [&str; 3] = ["counter", "register", "stack"];

pub fn builtin(name: &str) -> Result<TypeSpec, TypeError> {
    match name {
        "counter" => Ok(Arc::new(Counter)),
        "register" => Ok(Arc::new(Register)),
        "stack" => Ok(Arc::new(Stack)),
        other => Err(TypeError::UnknownType(other.to_string())),
    }
}

pub fn apply_type(
    spec: &dyn SequentialType,
    op: &OperationDescriptor,
    state: &Value,
) -> Result<(Value, Value), TypeError> {
    spec.apply(op, state)
}

/// Folds `apply` over `ops` starting from `state`; returns the final state and
/// the responses in order.
pub fn run_from<'a>(
    spec: &dyn SequentialType,
    state: Value,
    ops: impl IntoIterator<Item = &'a OperationDescriptor>,
) -> Result<(Value, Vec<Value>), TypeError> {
    let mut state = state;
    let mut responses = Vec::new();
    for op in ops {
        let (next, resp) = spec.apply(op, &state)?;
        state = next;
        responses.push(resp);
    }
    Ok((state, responses))
}

pub fn run_sequential(
    spec: &dyn SequentialType,
    ops: &[OperationDescriptor],
) -> Result<Vec<Value>, TypeError> {
    run_from(spec, spec.initial_state(), ops).map(|(_, r)| r)
}

fn unknown(ty: &str, op: &OperationDescriptor) -> TypeError {
    TypeError::UnknownOperation {
        ty: ty.to_string(),
        op: op.name.clone(),
    }
}

fn int_arg(op: &OperationDescriptor) -> Result<i64, TypeError> {
    match op.args.as_slice() {
        [Value::Int(v)] => Ok(*v),
        _ => Err(TypeError::BadArguments {
            op: op.name.clone(),
            reason: format!("expected one integer, got {:?}", op.args),
        }),
    }
}

fn no_args(op: &OperationDescriptor) -> Result<(), TypeError> {
    if op.args.is_empty() {
        Ok(())
    } else {
        Err(TypeError::BadArguments {
            op: op.name.clone(),
            reason: format!("expected no arguments, got {:?}", op.args),
        })
    }
}

fn int_state(ty: &str, state: &Value) -> Result<i64, TypeError> {
    match state {
        Value::Int(v) => Ok(*v),
        other => Err(TypeError::BadState {
            ty: ty.to_string(),
            state: other.clone(),
        }),
    }
}

/// Fetch-and-add counter: `inc` returns the prior value.
#[derive(Debug, Clone, Copy, Default)]
pub struct Counter;

impl SequentialType for Counter {
    fn name(&self) -> &str {
        "counter"
    }

    fn initial_state(&self) -> Value {
        Value::Int(0)
    }

    fn operations(&self) -> &[&'static str] {
        &["inc"]
    }

    fn apply(&self, op: &OperationDescriptor, state: &Value) -> Result<(Value, Value), TypeError> {
        let k = int_state(self.name(), state)?;
        match op.name.as_str() {
            "inc" => {
                no_args(op)?;
                Ok((Value::Int(k + 1), Value::Int(k)))
            }
            _ => Err(unknown(self.name(), op)),
        }
    }

    fn workload_op(&self, _pid: u32, _index: usize) -> OperationDescriptor {
        OperationDescriptor::nullary("inc")
    }
}

/// Read/write register over integers, initially 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct Register;

impl SequentialType for Register {
    fn name(&self) -> &str {
        "register"
    }

    fn initial_state(&self) -> Value {
        Value::Int(0)
    }

    fn operations(&self) -> &[&'static str] {
        &["write", "read"]
    }

    fn apply(&self, op: &OperationDescriptor, state: &Value) -> Result<(Value, Value), TypeError> {
        let cur = int_state(self.name(), state)?;
        match op.name.as_str() {
            "write" => Ok((Value::Int(int_arg(op)?), Value::Ack)),
            "read" => {
                no_args(op)?;
                Ok((Value::Int(cur), Value::Int(cur)))
            }
            _ => Err(unknown(self.name(), op)),
        }
    }

    // Even slots write the pid, odd slots read.
    fn workload_op(&self, pid: u32, index: usize) -> OperationDescriptor {
        if index % 2 == 0 {
            OperationDescriptor::unary("write", pid as i64)
        } else {
            OperationDescriptor::nullary("read")
        }
    }
}

/// LIFO stack of integers; `pop` on an empty stack returns [`Value::Empty`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Stack;

impl SequentialType for Stack {
    fn name(&self) -> &str {
        "stack"
    }

    fn initial_state(&self) -> Value {
        Value::List(Vec::new())
    }

    fn operations(&self) -> &[&'static str] {
        &["push", "pop"]
    }

    fn apply(&self, op: &OperationDescriptor, state: &Value) -> Result<(Value, Value), TypeError> {
        let Value::List(items) = state else {
            return Err(TypeError::BadState {
                ty: self.name().to_string(),
                state: state.clone(),
            });
        };
        match op.name.as_str() {
            "push" => {
                let v = int_arg(op)?;
                let mut next = items.clone();
                next.push(v);
                Ok((Value::List(next), Value::Ack))
            }
            "pop" => {
                no_args(op)?;
                let mut next = items.clone();
                match next.pop() {
                    Some(top) => Ok((Value::List(next), Value::Int(top))),
                    None => Ok((Value::List(next), Value::Empty)),
                }
            }
            _ => Err(unknown(self.name(), op)),
        }
    }

    fn workload_op(&self, pid: u32, index: usize) -> OperationDescriptor {
        if index % 2 == 0 {
            OperationDescriptor::unary("push", pid as i64 * 100 + index as i64)
        } else {
            OperationDescriptor::nullary("pop")
        }
    }
}

/// Parses `name`, `name(1)` or `name(1,2)` with integer arguments.
pub fn parse_operation(text: &str) -> Result<OperationDescriptor, TypeError> {
    let text = text.trim();
    let bad = |reason: &str| TypeError::BadArguments {
        op: text.to_string(),
        reason: reason.to_string(),
    };
    let Some(open) = text.find('(') else {
        return Ok(OperationDescriptor::nullary(text));
    };
    let inner = text[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| bad("missing closing parenthesis"))?;
    let args = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<i64>().map(Value::Int).map_err(|_| bad("arguments must be integers")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OperationDescriptor::new(&text[..open], args))
}
