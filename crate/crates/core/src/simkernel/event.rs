use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::memory::{Pid, Word, WordId};

/// Identifier of a simulated object (lock, broadcast object, program, ...).
/// Markers name the lock they belong to by this id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjId(pub u16);

pub type LockId = ObjId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MarkerKind {
    NcsBegin,
    RecoverBegin,
    RecoverEnd,
    EnterBegin,
    DoorwayEnd,
    CsBegin,
    CsEnd,
    ExitBegin,
    ExitEnd,
    SetBegin(Word),
    SetEnd(Word),
    WaitBegin(Word),
    WaitEnd(Word),
    /// An arbitrator port was found occupied by a different process.
    PortViolation,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Read,
    Write,
    Cas { success: bool },
    Fas,
    LocalStep,
    /// `unsafe_for` lists the locks whose sensitive window held at the crash.
    Crash { unsafe_for: Vec<LockId> },
    Restart,
    Marker { marker: MarkerKind, lock: LockId },
}

impl EventKind {
    /// Whether the event is an own step of the process (instruction or local step).
    pub fn is_step(&self) -> bool {
        matches!(
            self,
            EventKind::Read | EventKind::Write | EventKind::Cas { .. } | EventKind::Fas | EventKind::LocalStep
        )
    }

    pub fn marker(&self) -> Option<(MarkerKind, LockId)> {
        match self {
            EventKind::Marker { marker, lock } => Some((*marker, *lock)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub pid: Pid,
    pub kind: EventKind,
    pub word: Option<WordId>,
    pub rmr: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub events: Vec<Event>,
}

#[derive(Debug, thiserror::Error)]
pub enum HistoryIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: expected seq {expected}, found {found}")]
    Gap { line: usize, expected: u64, found: u64 },
}

impl History {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<History, HistoryIoError> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Event =
                serde_json::from_str(&line).map_err(|source| HistoryIoError::Parse { line: i + 1, source })?;
            let expected = events.len() as u64;
            if e.seq != expected {
                return Err(HistoryIoError::Gap { line: i + 1, expected, found: e.seq });
            }
            events.push(e);
        }
        Ok(History { events })
    }

    pub fn from_jsonl(s: &str) -> Result<History, HistoryIoError> {
        Self::read_jsonl(s.as_bytes())
    }

    /// Builds a history from (pid, kind) pairs, numbering events consecutively.
    /// Handy for hand-built marker histories in tests.
    pub fn from_kinds(items: impl IntoIterator<Item = (Pid, EventKind)>) -> History {
        let events = items
            .into_iter()
            .enumerate()
            .map(|(i, (pid, kind))| Event { seq: i as u64, pid, kind, word: None, rmr: false })
            .collect();
        History { events }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_preserves_events() {
        let h = History::from_kinds([
            (1, EventKind::Marker { marker: MarkerKind::NcsBegin, lock: ObjId(3) }),
            (1, EventKind::LocalStep),
            (2, EventKind::Crash { unsafe_for: vec![ObjId(4)] }),
            (2, EventKind::Restart),
            (1, EventKind::Cas { success: true }),
            (1, EventKind::Marker { marker: MarkerKind::SetBegin(7), lock: ObjId(1) }),
        ]);
        let text = h.to_jsonl();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().next().unwrap().contains("\"seq\":0"));
        let back = History::from_jsonl(&text).unwrap();
        assert_eq!(back, h);
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn gaps_are_rejected() {
        let h = History::from_kinds([(1, EventKind::LocalStep), (1, EventKind::LocalStep)]);
        let text = h.to_jsonl().replace("\"seq\":1", "\"seq\":2");
        assert!(matches!(History::from_jsonl(&text), Err(HistoryIoError::Gap { .. })));
    }

    #[test]
    fn record_fields_are_flat() {
        let e = Event { seq: 4, pid: 2, kind: EventKind::Read, word: Some(WordId(9)), rmr: true };
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 5);
        for k in ["seq", "pid", "kind", "word", "rmr"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
    }
}
