//! Pull-based recovery of missing ancestors.
//!
//! A missing block is first requested from the validator that sent the block
//! referencing it, then from the other validators round-robin, with
//! exponential backoff between attempts.

use std::collections::BTreeMap;

use crate::types::{BlockRef, ValidatorId};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Backoff {
    pub base: u64,
    pub cap: u64,
}

impl Backoff {
    pub fn delay(&self, attempts: u32) -> u64 {
        let shifted = if attempts >= 64 || self.base > u64::MAX >> attempts {
            u64::MAX
        } else {
            self.base << attempts
        };
        shifted.min(self.cap).max(1)
    }
}

#[derive(Clone, Debug)]
struct Request {
    hint: ValidatorId,
    attempts: u32,
    due: u64,
}

#[derive(Clone, Debug)]
pub struct Synchronizer {
    me: ValidatorId,
    n: usize,
    backoff: Backoff,
    requests: BTreeMap<BlockRef, Request>,
}

impl Synchronizer {
    pub fn new(me: ValidatorId, n: usize, backoff: Backoff) -> Self {
        Self {
            me,
            n,
            backoff,
            requests: BTreeMap::new(),
        }
    }

    /// Records the sender of a block whose parents are missing; it becomes the
    /// first peer asked.
    pub fn note_missing(&mut self, refs: &[BlockRef], sender: ValidatorId, now: u64) {
        for r in refs {
            self.requests.entry(*r).or_insert(Request {
                hint: sender,
                attempts: 0,
                due: now,
            });
        }
    }

    fn peer(&self, hint: ValidatorId, attempts: u32) -> ValidatorId {
        let n = self.n as u64;
        let mut step = u64::from(attempts);
        loop {
            let candidate = ValidatorId::from(((hint.index() as u64 + step) % n) as usize);
            if candidate != self.me || self.n == 1 {
                return candidate;
            }
            step += 1;
        }
    }

    /// Brings the request table in line with `missing` (the store's current
    /// missing ancestors) and returns the requests due at `now`, grouped by
    /// peer.
    pub fn poll(&mut self, missing: &[BlockRef], now: u64) -> Vec<(ValidatorId, Vec<BlockRef>)> {
        let wanted: std::collections::BTreeSet<&BlockRef> = missing.iter().collect();
        self.requests.retain(|r, _| wanted.contains(r));
        for r in missing {
            self.requests.entry(*r).or_insert(Request {
                hint: r.author,
                attempts: 0,
                due: now,
            });
        }
        let mut grouped: BTreeMap<ValidatorId, Vec<BlockRef>> = BTreeMap::new();
        let due: Vec<BlockRef> = self
            .requests
            .iter()
            .filter(|(_, req)| req.due <= now)
            .map(|(r, _)| *r)
            .collect();
        for r in due {
            let req = self.requests.get(&r).expect("request").clone();
            let peer = self.peer(req.hint, req.attempts);
            grouped.entry(peer).or_default().push(r);
            let entry = self.requests.get_mut(&r).expect("request");
            entry.attempts += 1;
            entry.due = now + self.backoff.delay(entry.attempts);
        }
        grouped.into_iter().filter(|(p, _)| *p != self.me).collect()
    }

    /// Earliest time a request becomes due, if any are outstanding.
    pub fn next_due(&self) -> Option<u64> {
        self.requests.values().map(|r| r.due).min()
    }

    pub fn outstanding(&self) -> usize {
        self.requests.len()
    }
}
