use serde::{Deserialize, Serialize};

use super::SimError;

/// Process index, 1-based.
pub type Pid = usize;
/// Machine word stored in a shared cell.
pub type Word = u64;

/// The null reference. Word ids start at 1, so no live address encodes to 0.
pub const NIL: Word = 0;
/// Reserved sentinel stored in a queue node's `next` field once the node is relieved.
pub const LOCKED: Word = u64::MAX;
/// Reserved sentinel for "value not yet known" (e.g. an unpersisted predecessor).
pub const UNKNOWN: Word = u64::MAX - 1;

/// Maximum number of simulated processes (cached-by sets are bitmasks).
pub const MAX_PROCS: usize = 63;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WordId(pub u32);

/// A word-sized reference: cell id in the low 32 bits, allocation generation above.
///
/// Static words live at generation 0. Reusable node cells bump their generation
/// each time they are handed out again, so a stale reference can be told apart
/// from a fresh one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Addr {
    pub id: WordId,
    pub gen: u32,
}

impl Addr {
    pub fn plain(id: WordId) -> Self {
        Addr { id, gen: 0 }
    }

    pub fn encode(self) -> Word {
        ((self.gen as u64) << 32) | self.id.0 as u64
    }

    pub fn decode(w: Word) -> Self {
        Addr { id: WordId(w as u32), gen: (w >> 32) as u32 }
    }

    /// Address of the `k`-th word of a multi-word block.
    pub fn field(self, k: u32) -> Self {
        Addr { id: WordId(self.id.0 + k), gen: self.gen }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RmrKind {
    Cc,
    Dsm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RmrModel {
    pub kind: RmrKind,
    /// CC only: whether a failed CAS invalidates other cached copies.
    pub failed_cas_invalidates: bool,
}

impl RmrModel {
    pub fn cc() -> Self {
        RmrModel { kind: RmrKind::Cc, failed_cas_invalidates: true }
    }

    pub fn dsm() -> Self {
        RmrModel { kind: RmrKind::Dsm, failed_cas_invalidates: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Instr {
    Read,
    Write(Word),
    Cas { old: Word, new: Word },
    Fas(Word),
}

/// Result of one shared-memory instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    /// Read: the value. Write: 0. Cas: 1 on success, 0 on failure. Fas: the prior value.
    pub result: Word,
    pub rmr: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SharedWord {
    pub home: Pid,
    pub value: Word,
    /// Bit `p` set iff process `p` holds a valid cached copy (CC only).
    pub cached_by: u64,
    pub freed: bool,
    pub gen: u32,
}

impl SharedWord {
    pub fn cached_by_set(&self) -> Vec<Pid> {
        (1..=MAX_PROCS).filter(|p| self.cached_by & (1u64 << p) != 0).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Memory {
    n: usize,
    model: RmrModel,
    cells: Vec<SharedWord>,
}

impl Memory {
    pub fn new(n: usize, model: RmrModel) -> Self {
        assert!((1..=MAX_PROCS).contains(&n), "n must be in 1..={MAX_PROCS}");
        // Cell 0 is a permanently freed placeholder so that NIL never names a live word.
        let cells = vec![SharedWord { home: 1, value: 0, cached_by: 0, freed: true, gen: 0 }];
        Memory { n, model, cells }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn model(&self) -> RmrModel {
        self.model
    }

    pub fn len(&self) -> usize {
        self.cells.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn alloc_word(&mut self, home: Pid, init: Word) -> Result<WordId, SimError> {
        self.alloc_block(home, &[init])
    }

    /// Allocates consecutive words homed at `home` and returns the first id.
    pub fn alloc_block(&mut self, home: Pid, init: &[Word]) -> Result<WordId, SimError> {
        if home == 0 || home > self.n {
            return Err(SimError::InvalidHome { home });
        }
        let id = WordId(self.cells.len() as u32);
        for &v in init {
            self.cells.push(SharedWord { home, value: v, cached_by: 0, freed: false, gen: 0 });
        }
        Ok(id)
    }

    pub fn word(&self, id: WordId) -> Result<&SharedWord, SimError> {
        match self.cells.get(id.0 as usize) {
            Some(c) if id.0 != 0 => Ok(c),
            _ => Err(SimError::UnknownWord { word: id }),
        }
    }

    fn word_mut(&mut self, id: WordId) -> Result<&mut SharedWord, SimError> {
        match self.cells.get_mut(id.0 as usize) {
            Some(c) if id.0 != 0 => Ok(c),
            _ => Err(SimError::UnknownWord { word: id }),
        }
    }

    /// Reads a value without any accounting (for invariant checks and tests).
    pub fn peek(&self, id: WordId) -> Word {
        self.cells.get(id.0 as usize).map(|c| c.value).unwrap_or(0)
    }

    pub fn access(&mut self, pid: Pid, instr: Instr, addr: Addr) -> Result<Outcome, SimError> {
        let model = self.model;
        let cell = self.word_mut(addr.id)?;
        if cell.freed || cell.gen != addr.gen {
            return Err(SimError::PoisonAccess { pid, word: addr.id });
        }
        let me = 1u64 << pid;
        let (result, rmr) = match model.kind {
            RmrKind::Dsm => {
                let rmr = cell.home != pid;
                (apply(cell, instr).0, rmr)
            }
            RmrKind::Cc => {
                let (result, wrote) = apply(cell, instr);
                match instr {
                    Instr::Read => {
                        let miss = cell.cached_by & me == 0;
                        cell.cached_by |= me;
                        (result, miss)
                    }
                    _ => {
                        if wrote || model.failed_cas_invalidates {
                            cell.cached_by = me;
                        }
                        (result, true)
                    }
                }
            }
        };
        Ok(Outcome { result, rmr })
    }

    /// Hands out a reusable block again: bumps the generation, clears the poison
    /// flag and cached copies, and reinitializes the values.
    pub fn renew_block(&mut self, base: WordId, init: &[Word]) -> Result<Addr, SimError> {
        let mut gen = 0;
        for (k, &v) in init.iter().enumerate() {
            let c = self.word_mut(WordId(base.0 + k as u32))?;
            c.gen += 1;
            c.freed = false;
            c.cached_by = 0;
            c.value = v;
            gen = c.gen;
        }
        Ok(Addr { id: base, gen })
    }

    pub fn free_block(&mut self, base: WordId, len: u32) -> Result<(), SimError> {
        for k in 0..len {
            self.word_mut(WordId(base.0 + k))?.freed = true;
        }
        Ok(())
    }

    /// Allocates a fresh block at generation 1, distinct from any static word.
    pub fn alloc_node(&mut self, home: Pid, init: &[Word]) -> Result<Addr, SimError> {
        let base = self.alloc_block(home, init)?;
        for k in 0..init.len() as u32 {
            self.word_mut(WordId(base.0 + k))?.gen = 1;
        }
        Ok(Addr { id: base, gen: 1 })
    }

    /// Feeds the persistent part of memory (values, poison, generation) to a hasher.
    /// Cache state is excluded: it affects only accounting, never behavior.
    pub fn hash_behavior<H: std::hash::Hasher>(&self, h: &mut H) {
        use std::hash::Hash;
        self.cells.len().hash(h);
        for c in &self.cells {
            c.value.hash(h);
            c.freed.hash(h);
            c.gen.hash(h);
        }
    }
}

/// Applies the instruction semantics; returns (result, whether the cell was modified).
fn apply(cell: &mut SharedWord, instr: Instr) -> (Word, bool) {
    match instr {
        Instr::Read => (cell.value, false),
        Instr::Write(v) => {
            cell.value = v;
            (0, true)
        }
        Instr::Cas { old, new } => {
            if cell.value == old {
                cell.value = new;
                (1, true)
            } else {
                (0, false)
            }
        }
        Instr::Fas(v) => {
            let prior = cell.value;
            cell.value = v;
            (prior, true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alloc_gives_fresh_ids_with_initial_value() {
        let mut m = Memory::new(2, RmrModel::dsm());
        let a = m.alloc_word(1, 0).unwrap();
        let b = m.alloc_word(1, 0).unwrap();
        assert_ne!(a, b);
        assert_eq!(m.word(a).unwrap().value, 0);
        assert!(!m.word(a).unwrap().freed);
        assert_eq!(m.word(a).unwrap().cached_by, 0);
    }

    #[test]
    fn bad_home_rejected() {
        let mut m = Memory::new(2, RmrModel::dsm());
        assert!(matches!(m.alloc_word(3, 0), Err(SimError::InvalidHome { home: 3 })));
        assert!(matches!(m.alloc_word(0, 0), Err(SimError::InvalidHome { .. })));
    }

    #[test]
    fn dsm_local_access_is_free() {
        let mut m = Memory::new(2, RmrModel::dsm());
        let w = m.alloc_word(1, 0).unwrap();
        let o = m.access(1, Instr::Read, Addr::plain(w)).unwrap();
        assert_eq!(o, Outcome { result: 0, rmr: false });
        let o = m.access(2, Instr::Read, Addr::plain(w)).unwrap();
        assert!(o.rmr);
    }

    #[test]
    fn cc_second_read_hits() {
        let mut m = Memory::new(2, RmrModel::cc());
        let w = Addr::plain(m.alloc_word(1, 0).unwrap());
        assert!(m.access(2, Instr::Read, w).unwrap().rmr);
        assert!(!m.access(2, Instr::Read, w).unwrap().rmr);
    }

    #[test]
    fn cc_write_invalidates_other_readers() {
        // p2 caches w, p1 writes w, p2 re-reads: miss again.
        let mut m = Memory::new(2, RmrModel::cc());
        let w = Addr::plain(m.alloc_word(1, 0).unwrap());
        let trace = [
            m.access(2, Instr::Read, w).unwrap().rmr,
            m.access(1, Instr::Write(5), w).unwrap().rmr,
            m.access(2, Instr::Read, w).unwrap().rmr,
        ];
        assert_eq!(trace, [true, true, true]);
        assert_eq!(m.word(w.id).unwrap().cached_by_set(), vec![1, 2]);
    }

    #[test]
    fn failed_cas_flag_controls_invalidation() {
        for flag in [true, false] {
            let mut m = Memory::new(2, RmrModel { kind: RmrKind::Cc, failed_cas_invalidates: flag });
            let w = Addr::plain(m.alloc_word(1, 7).unwrap());
            m.access(2, Instr::Read, w).unwrap();
            let o = m.access(1, Instr::Cas { old: 0, new: 1 }, w).unwrap();
            assert_eq!(o, Outcome { result: 0, rmr: true });
            let reread = m.access(2, Instr::Read, w).unwrap().rmr;
            assert_eq!(reread, flag);
        }
    }

    #[test]
    fn semantics_of_rmw() {
        let mut m = Memory::new(1, RmrModel::cc());
        let w = Addr::plain(m.alloc_word(1, 3).unwrap());
        assert_eq!(m.access(1, Instr::Fas(9), w).unwrap().result, 3);
        assert_eq!(m.access(1, Instr::Cas { old: 9, new: 4 }, w).unwrap().result, 1);
        assert_eq!(m.access(1, Instr::Cas { old: 9, new: 5 }, w).unwrap().result, 0);
        assert_eq!(m.access(1, Instr::Read, w).unwrap().result, 4);
    }

    #[test]
    fn freed_and_stale_accesses_are_faults() {
        let mut m = Memory::new(1, RmrModel::dsm());
        let node = m.alloc_node(1, &[1, 0]).unwrap();
        m.free_block(node.id, 2).unwrap();
        assert!(matches!(m.access(1, Instr::Read, node), Err(SimError::PoisonAccess { .. })));
        let fresh = m.renew_block(node.id, &[1, 0]).unwrap();
        assert_eq!(fresh.gen, node.gen + 1);
        assert!(m.access(1, Instr::Read, fresh).is_ok());
        assert!(matches!(m.access(1, Instr::Read, node), Err(SimError::PoisonAccess { .. })));
        assert!(matches!(
            m.access(1, Instr::Read, Addr::plain(WordId(999))),
            Err(SimError::UnknownWord { .. })
        ));
    }

    #[test]
    fn addr_roundtrip() {
        let a = Addr { id: WordId(77), gen: 5 };
        assert_eq!(Addr::decode(a.encode()), a);
        assert_ne!(a.encode(), LOCKED);
        assert_ne!(a.encode(), UNKNOWN);
    }
}
