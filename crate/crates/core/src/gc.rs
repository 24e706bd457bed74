//! Reclamation of clauses no view can see any more.
//!
//! A clause is garbage once it died at a global generation no older than
//! the oldest registered view, or when the transaction that created it
//! discarded it. Sweeping unlinks garbage from its chain; the memory is
//! released through the epoch collector after every traversal that might
//! still stand on the node has unpinned.

use std::sync::atomic::Ordering;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_epoch as epoch;

use crate::error::{Error, Result};
use crate::generation::Generation;
use crate::store::Store;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GcStats {
    /// Clauses unlinked by this sweep.
    pub clauses_unlinked: usize,
    /// Clauses whose memory has been released since the store was created.
    pub clauses_reclaimed: u64,
    pub oldest_active: Generation,
    pub sweep_duration: Duration,
}

/// Smallest generation any registered view can observe.
pub fn oldest_active_generation(store: &Store) -> Generation {
    store.inner.oldest_active()
}

/// Unlinks every clause that is garbage with respect to the oldest active
/// view. Concurrent sweeps are serialized.
pub fn gc_sweep(store: &Store) -> GcStats {
    let inner = &store.inner;
    let _one_at_a_time = inner.sweep_lock.lock();
    let started = Instant::now();
    let oldest = inner.oldest_active();
    let unlinked = inner.sweep_chains(oldest);
    // Push deferred destructors along; they run once no pinned reader can
    // reach the unlinked nodes.
    epoch::pin().flush();
    GcStats {
        clauses_unlinked: unlinked,
        clauses_reclaimed: inner.reclaimed.load(Ordering::Relaxed),
        oldest_active: oldest,
        sweep_duration: started.elapsed(),
    }
}

/// Total clauses unlinked by all sweeps so far.
pub fn total_unlinked(store: &Store) -> u64 {
    store.inner.unlinked_total.load(Ordering::Relaxed)
}

/// A running background collector. Stops when dropped.
pub struct GcHandle {
    store: Store,
    stop: Option<mpsc::Sender<()>>,
    thread: Option<JoinHandle<u64>>,
}

impl GcHandle {
    /// Stops the collector and returns how many sweeps it ran.
    pub fn stop(mut self) -> u64 {
        self.shutdown()
    }

    fn shutdown(&mut self) -> u64 {
        self.stop.take();
        let sweeps = self.thread.take().map_or(0, |t| t.join().expect("collector thread panicked"));
        self.store.inner.collector_running.store(false, Ordering::Release);
        sweeps
    }
}

impl Drop for GcHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Starts a collector thread that checks every `interval` and sweeps when
/// more than `threshold` dead clauses are estimated to be linked. At most
/// one collector may run per store.
pub fn gc_background(store: &Store, interval: Duration, threshold: usize) -> Result<GcHandle> {
    if store.inner.collector_running.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
        return Err(Error::Usage("a background collector is already running".into()));
    }
    let (tx, rx) = mpsc::channel::<()>();
    let bg = store.clone();
    let thread = std::thread::Builder::new()
        .name("genstore-gc".into())
        .spawn(move || {
            let mut sweeps = 0u64;
            loop {
                match rx.recv_timeout(interval) {
                    Err(RecvTimeoutError::Timeout) => {}
                    _ => return sweeps,
                }
                if bg.inner.dead_estimate.load(Ordering::Relaxed) > threshold {
                    gc_sweep(&bg);
                    sweeps += 1;
                }
            }
        })
        .map_err(|_| Error::Resource("cannot spawn collector thread"))?;
    Ok(GcHandle { store: store.clone(), stop: Some(tx), thread: Some(thread) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::{Pattern, Term};
    use crate::txn::TxnKind;

    fn f(i: i64) -> Term {
        Term::compound("f", vec![Term::Int(i)])
    }

    fn bump_to(store: &Store, gen: u64) {
        let s = store.session().unwrap();
        while store.current_generation().0 < gen {
            s.assertz(Term::atom("tick")).unwrap();
        }
    }

    #[test]
    fn oldest_active_follows_the_registry() {
        let store = Store::new();
        let s = store.session().unwrap();
        s.assertz(f(0)).unwrap();
        bump_to(&store, 10);
        let c10 = s.query(&Pattern::from(&f(0))).unwrap();
        bump_to(&store, 20);
        let c20 = s.query(&Pattern::from(&f(0))).unwrap();
        bump_to(&store, 42);
        assert_eq!(oldest_active_generation(&store), Generation(10));
        drop(c10);
        assert_eq!(oldest_active_generation(&store), Generation(20));
        drop(c20);
        assert_eq!(oldest_active_generation(&store), Generation(42));
    }

    #[test]
    fn sweep_respects_the_oldest_view() {
        let store = Store::new();
        let s = store.session().unwrap();
        s.assertz(f(5)).unwrap();
        s.assertz(f(15)).unwrap();
        bump_to(&store, 4);
        s.retract(&Pattern::from(&f(5))).unwrap();
        assert_eq!(store.current_generation(), Generation(5));
        bump_to(&store, 10);
        let view = s.query(&Pattern::from(&f(15))).unwrap();
        bump_to(&store, 14);
        s.retract(&Pattern::from(&f(15))).unwrap();
        assert_eq!(store.current_generation(), Generation(15));

        let stats = gc_sweep(&store);
        assert_eq!(stats.oldest_active, Generation(10));
        assert_eq!(stats.clauses_unlinked, 1);
        let got: Vec<Term> = view.map(|r| r.term).collect();
        assert_eq!(got, vec![f(15)]);
        assert_eq!(gc_sweep(&store).clauses_unlinked, 1);
        assert_eq!(store.dead_linked_clauses(), 0);
    }

    #[test]
    fn rolled_back_asserts_are_swept_despite_old_views() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        let reader = store.session().unwrap();
        reader.assertz(f(0)).unwrap();
        let _old = reader.query(&Pattern::from(&f(0))).unwrap();
        s.begin(TxnKind::Transaction, None).unwrap();
        s.assertz(f(1)).unwrap();
        s.rollback().unwrap();
        assert_eq!(gc_sweep(&store).clauses_unlinked, 1);
    }

    #[test]
    fn pending_retracts_are_never_swept() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        s.assertz(f(1)).unwrap();
        s.begin(TxnKind::Transaction, None).unwrap();
        s.retract(&Pattern::from(&f(1))).unwrap();
        assert_eq!(gc_sweep(&store).clauses_unlinked, 0);
        s.rollback().unwrap();
        assert_eq!(s.query_all(&Pattern::from(&f(1))).unwrap(), vec![f(1)]);
    }

    #[test]
    fn everything_dead_is_unlinked_after_quiescence() {
        let store = Store::new();
        let s = store.session().unwrap();
        for i in 0..600 {
            s.assertz(f(i)).unwrap();
        }
        for i in (0..600).step_by(2) {
            s.retract(&Pattern::from(&f(i))).unwrap();
        }
        let stats = gc_sweep(&store);
        assert_eq!(stats.clauses_unlinked, 300);
        assert_eq!(store.linked_clauses(), 300);
        assert_eq!(store.dead_linked_clauses(), 0);
        assert_eq!(total_unlinked(&store), 300);
        assert!(stats.clauses_reclaimed <= 300);
    }

    #[test]
    fn background_collector_lifecycle() {
        let store = Store::new();
        let h = gc_background(&store, Duration::from_millis(1), 1_000_000).unwrap();
        assert!(matches!(gc_background(&store, Duration::from_millis(1), 0), Err(Error::Usage(_))));
        std::thread::sleep(Duration::from_millis(10));
        assert_eq!(h.stop(), 0);

        let s = store.session().unwrap();
        for i in 0..10 {
            s.assertz(f(i)).unwrap();
            s.retract(&Pattern::from(&f(i))).unwrap();
        }
        let h = gc_background(&store, Duration::from_millis(1), 5).unwrap();
        let deadline = Instant::now() + Duration::from_secs(5);
        while store.dead_linked_clauses() > 0 && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(1));
        }
        assert!(h.stop() >= 1);
        assert_eq!(store.dead_linked_clauses(), 0);
    }
}
