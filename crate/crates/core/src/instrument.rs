//! Accounting of resident octree records and depth pyramids.
//!
//! Every buffer that materializes `CubeRecord`s (or cells derived from them)
//! registers its size here so the out-of-core memory contract can be
//! asserted in tests and reported per stage. Peaks are observed through
//! thread-local [`MemScope`]s: a scope sees exactly the residencies created
//! on its own thread while it is alive, so concurrent tests do not disturb
//! each other. All pipeline stages register their buffers from the
//! orchestrating thread.

use std::cell::RefCell;
use std::rc::Rc;
use std::thread::ThreadId;

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    records_current: i64,
    records_peak: i64,
    pyramids_current: i64,
    pyramids_peak: i64,
}

impl Counts {
    fn add_records(&mut self, delta: i64) {
        self.records_current += delta;
        self.records_peak = self.records_peak.max(self.records_current);
    }

    fn add_pyramids(&mut self, delta: i64) {
        self.pyramids_current += delta;
        self.pyramids_peak = self.pyramids_peak.max(self.pyramids_current);
    }
}

thread_local! {
    static SCOPES: RefCell<Vec<Rc<RefCell<Counts>>>> = const { RefCell::new(Vec::new()) };
}

fn with_scopes(f: impl Fn(&mut Counts)) {
    SCOPES.with(|scopes| {
        for s in scopes.borrow().iter() {
            f(&mut s.borrow_mut());
        }
    });
}

/// Observes residencies created on the current thread during its lifetime.
pub struct MemScope {
    counts: Rc<RefCell<Counts>>,
}

impl MemScope {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        let counts = Rc::new(RefCell::new(Counts::default()));
        SCOPES.with(|scopes| scopes.borrow_mut().push(counts.clone()));
        MemScope { counts }
    }

    pub fn records_peak(&self) -> i64 {
        self.counts.borrow().records_peak
    }

    pub fn pyramids_peak(&self) -> i64 {
        self.counts.borrow().pyramids_peak
    }
}

impl Drop for MemScope {
    fn drop(&mut self) {
        SCOPES.with(|scopes| {
            let mut v = scopes.borrow_mut();
            if let Some(pos) = v.iter().position(|s| Rc::ptr_eq(s, &self.counts)) {
                v.remove(pos);
            }
        });
    }
}

/// RAII registration of `n` resident records.
#[derive(Debug)]
pub struct RecordResidency {
    n: i64,
    owner: ThreadId,
}

impl RecordResidency {
    pub fn new(n: u64) -> Self {
        with_scopes(|c| c.add_records(n as i64));
        RecordResidency {
            n: n as i64,
            owner: std::thread::current().id(),
        }
    }

    /// Grow or shrink the registered count to `n`.
    pub fn resize(&mut self, n: u64) {
        let delta = n as i64 - self.n;
        if delta != 0 && self.owner == std::thread::current().id() {
            with_scopes(|c| c.add_records(delta));
            self.n = n as i64;
        }
    }
}

impl Drop for RecordResidency {
    fn drop(&mut self) {
        if self.owner == std::thread::current().id() {
            with_scopes(|c| c.add_records(-self.n));
        }
    }
}

/// RAII registration of one resident depth pyramid.
#[derive(Debug)]
pub struct PyramidResidency {
    owner: ThreadId,
}

impl PyramidResidency {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        with_scopes(|c| c.add_pyramids(1));
        PyramidResidency {
            owner: std::thread::current().id(),
        }
    }
}

impl Drop for PyramidResidency {
    fn drop(&mut self) {
        if self.owner == std::thread::current().id() {
            with_scopes(|c| c.add_pyramids(-1));
        }
    }
}
