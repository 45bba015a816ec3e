//! Per-area access control.
//!
//! Private data lives in a [`PrivateStore`]; the only way to reach it is an
//! [`AreaView`], which hands out the owning area's data freely and routes
//! every other read (private data of a peer, or a live link to a peer's
//! consensus iterates) through an [`AccessMonitor`].

use std::collections::BTreeSet;
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use crate::topology::CommGraph;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrivacyError {
    #[error("area {reader} may not {kind} area {owner}: not a communication neighbour")]
    OutOfNeighborhood {
        reader: usize,
        owner: usize,
        kind: AccessKind,
    },
    #[error("area {0} does not exist")]
    UnknownArea(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    /// Reading another area's private parameters.
    PrivateRead,
    /// Opening a link to receive another area's consensus iterates.
    Channel,
}

impl std::fmt::Display for AccessKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AccessKind::PrivateRead => "read private data of",
            AccessKind::Channel => "open a channel to",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AccessEvent {
    pub reader: usize,
    pub owner: usize,
    pub kind: AccessKind,
    pub allowed: bool,
}

pub trait AccessMonitor: Send + Sync {
    /// Called for every cross-area access.
    fn check(&self, reader: usize, owner: usize, kind: AccessKind) -> Result<(), PrivacyError>;
}

fn neighbourhoods(graph: &CommGraph) -> Vec<BTreeSet<usize>> {
    (0..graph.n())
        .map(|i| graph.neighbors(i).iter().copied().collect())
        .collect()
}

/// Rejects any access outside the communication neighbourhood.
#[derive(Debug, Clone)]
pub struct NeighborhoodGuard {
    allowed: Vec<BTreeSet<usize>>,
}

impl NeighborhoodGuard {
    pub fn new(graph: &CommGraph) -> Self {
        Self {
            allowed: neighbourhoods(graph),
        }
    }
}

impl AccessMonitor for NeighborhoodGuard {
    fn check(&self, reader: usize, owner: usize, kind: AccessKind) -> Result<(), PrivacyError> {
        let allowed = self
            .allowed
            .get(reader)
            .ok_or(PrivacyError::UnknownArea(reader))?;
        if reader == owner || allowed.contains(&owner) {
            Ok(())
        } else {
            Err(PrivacyError::OutOfNeighborhood {
                reader,
                owner,
                kind,
            })
        }
    }
}

/// Records every cross-area access and never blocks; violations are
/// inspected afterwards.
#[derive(Debug)]
pub struct AccessRecorder {
    allowed: Vec<BTreeSet<usize>>,
    events: Mutex<Vec<AccessEvent>>,
}

impl AccessRecorder {
    pub fn new(graph: &CommGraph) -> Self {
        Self {
            allowed: neighbourhoods(graph),
            events: Mutex::new(Vec::new()),
        }
    }

    pub fn events(&self) -> Vec<AccessEvent> {
        self.events.lock().expect("recorder poisoned").clone()
    }

    pub fn violations(&self) -> Vec<AccessEvent> {
        self.events().into_iter().filter(|e| !e.allowed).collect()
    }
}

impl AccessMonitor for AccessRecorder {
    fn check(&self, reader: usize, owner: usize, kind: AccessKind) -> Result<(), PrivacyError> {
        let allowed =
            reader == owner || self.allowed.get(reader).is_some_and(|s| s.contains(&owner));
        self.events
            .lock()
            .expect("recorder poisoned")
            .push(AccessEvent {
                reader,
                owner,
                kind,
                allowed,
            });
        Ok(())
    }
}

/// Per-area private data.
#[derive(Debug, Clone)]
pub struct PrivateStore<T> {
    parts: Vec<T>,
}

impl<T> PrivateStore<T> {
    pub fn partition(parts: Vec<T>) -> Self {
        Self { parts }
    }

    pub fn n(&self) -> usize {
        self.parts.len()
    }

    pub fn view<'a>(&'a self, area: usize, monitor: &'a dyn AccessMonitor) -> AreaView<'a, T> {
        assert!(area < self.parts.len(), "area {area} out of range");
        AreaView {
            area,
            store: self,
            monitor,
        }
    }

    pub fn views<'a>(&'a self, monitor: &'a dyn AccessMonitor) -> Vec<AreaView<'a, T>> {
        (0..self.n()).map(|i| self.view(i, monitor)).collect()
    }
}

/// What area `area` is permitted to see.
pub struct AreaView<'a, T> {
    area: usize,
    store: &'a PrivateStore<T>,
    monitor: &'a dyn AccessMonitor,
}

impl<T> Clone for AreaView<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for AreaView<'_, T> {}

impl<'a, T> AreaView<'a, T> {
    pub fn area(&self) -> usize {
        self.area
    }

    pub fn own(&self) -> &'a T {
        &self.store.parts[self.area]
    }

    /// Another area's private data, subject to the monitor.
    pub fn peer(&self, j: usize) -> Result<&'a T, PrivacyError> {
        let part = self
            .store
            .parts
            .get(j)
            .ok_or(PrivacyError::UnknownArea(j))?;
        self.monitor.check(self.area, j, AccessKind::PrivateRead)?;
        Ok(part)
    }

    /// Permission to receive area `j`'s consensus iterates.
    pub fn open_channel(&self, j: usize) -> Result<(), PrivacyError> {
        if j >= self.store.n() {
            return Err(PrivacyError::UnknownArea(j));
        }
        self.monitor.check(self.area, j, AccessKind::Channel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_blocks_non_neighbours() {
        let g = CommGraph::ring(6);
        let guard = NeighborhoodGuard::new(&g);
        let store = PrivateStore::partition((0..6).collect::<Vec<_>>());
        let v = store.view(0, &guard);
        assert_eq!(*v.own(), 0);
        assert_eq!(*v.peer(1).unwrap(), 1);
        assert_eq!(*v.peer(5).unwrap(), 5);
        assert!(matches!(
            v.peer(3),
            Err(PrivacyError::OutOfNeighborhood {
                reader: 0,
                owner: 3,
                ..
            })
        ));
        assert!(v.open_channel(2).is_err());
        assert!(matches!(v.peer(9), Err(PrivacyError::UnknownArea(9))));
    }

    #[test]
    fn recorder_logs_and_flags() {
        let g = CommGraph::ring(4);
        let rec = AccessRecorder::new(&g);
        let store = PrivateStore::partition(vec![(); 4]);
        let v = store.view(1, &rec);
        v.open_channel(0).unwrap();
        v.peer(3).unwrap();
        assert_eq!(rec.events().len(), 2);
        let bad = rec.violations();
        assert_eq!(bad.len(), 1);
        assert_eq!((bad[0].reader, bad[0].owner), (1, 3));
        assert_eq!(bad[0].kind, AccessKind::PrivateRead);
    }
}
