//! Thread helpers for data-parallel loops over independent output ranges.
//!
//! Work is dispatched to a small persistent pool (OS thread spawns are far
//! too slow to pay per op). Splitting across threads never changes results:
//! each output element is produced by exactly one thread with the same
//! sequential arithmetic as the single-threaded path.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex, OnceLock};

static THREAD_OVERRIDE: AtomicUsize = AtomicUsize::new(0);

/// Set the worker thread count (0 = automatic). `1` is the documented
/// single-threaded mode; results are bit-identical either way.
pub fn set_threads(n: usize) {
    THREAD_OVERRIDE.store(n, Ordering::Relaxed);
}

pub(crate) fn thread_count() -> usize {
    let o = THREAD_OVERRIDE.load(Ordering::Relaxed);
    if o > 0 {
        return o;
    }
    static DEFAULT: OnceLock<usize> = OnceLock::new();
    *DEFAULT.get_or_init(|| {
        if let Ok(v) = std::env::var("GLAFF_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                if n > 0 {
                    return n;
                }
            }
        }
        std::thread::available_parallelism().map_or(1, usize::from)
    })
}

type Job = Box<dyn FnOnce() + Send>;

struct Pool {
    sender: Mutex<mpsc::Sender<Job>>,
    workers: usize,
}

fn pool() -> &'static Pool {
    static POOL: OnceLock<Pool> = OnceLock::new();
    POOL.get_or_init(|| {
        let workers = std::thread::available_parallelism()
            .map_or(1, usize::from)
            .saturating_sub(1)
            .max(1);
        let (tx, rx) = mpsc::channel::<Job>();
        let rx = std::sync::Arc::new(Mutex::new(rx));
        for _ in 0..workers {
            let rx = rx.clone();
            std::thread::Builder::new()
                .name("glaff-worker".into())
                .spawn(move || loop {
                    let job = { rx.lock().unwrap().recv() };
                    match job {
                        Ok(job) => {
                            IN_WORKER.with(|w| w.set(true));
                            job();
                            IN_WORKER.with(|w| w.set(false));
                        }
                        Err(_) => return,
                    }
                })
                .expect("spawn worker");
        }
        Pool {
            sender: Mutex::new(tx),
            workers,
        }
    })
}

thread_local! {
    static IN_WORKER: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Run `f(lo, hi)` over a partition of `0..total`, in parallel when the work
/// is large enough. Ranges are disjoint, so `f` may write to distinct parts
/// of shared output storage. Blocks until every chunk is done.
pub(crate) fn par_ranges<F>(total: usize, min_per_thread: usize, f: F)
where
    F: Fn(usize, usize) + Sync,
{
    let nested = IN_WORKER.with(std::cell::Cell::get);
    let threads = if nested {
        1
    } else {
        thread_count().min(total / min_per_thread.max(1)).max(1)
    };
    if threads <= 1 || total == 0 {
        f(0, total);
        return;
    }
    let threads = threads.min(pool().workers + 1);
    let chunk = total.div_ceil(threads);
    let pending = AtomicUsize::new(0);

    // Shipped jobs only borrow `f` and `pending`; the spin-join below keeps
    // both alive until every job has run, the same guarantee scoped threads
    // would give.
    let f_ref: &(dyn Fn(usize, usize) + Sync) = &f;
    let f_static: &'static (dyn Fn(usize, usize) + Sync) =
        unsafe { std::mem::transmute(f_ref) };
    let pending_static: &'static AtomicUsize = unsafe { std::mem::transmute(&pending) };

    let mut shipped = 0usize;
    {
        let sender = pool().sender.lock().unwrap();
        for t in 1..threads {
            let lo = t * chunk;
            let hi = ((t + 1) * chunk).min(total);
            if lo >= hi {
                break;
            }
            pending.fetch_add(1, Ordering::Release);
            shipped += 1;
            sender
                .send(Box::new(move || {
                    f_static(lo, hi);
                    pending_static.fetch_sub(1, Ordering::Release);
                }))
                .expect("worker pool is gone");
        }
    }
    f(0, chunk.min(total));
    let _ = shipped;
    while pending.load(Ordering::Acquire) != 0 {
        std::hint::spin_loop();
    }
}

/// Wrapper making a raw pointer range Send for disjoint-range writes.
///
/// Accessed through a method (not a field) so closures capture the wrapper
/// itself rather than the raw pointer.
#[derive(Clone, Copy)]
pub(crate) struct SendPtr(*mut f64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl SendPtr {
    pub(crate) fn new(p: *mut f64) -> Self {
        SendPtr(p)
    }

    pub(crate) fn get(&self) -> *mut f64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitions_cover_everything_once() {
        let n = 10_007;
        let mut out = vec![0u8; n];
        let ptr = SendPtr::new(out.as_mut_ptr() as *mut f64);
        // Use the pointer wrapper only to smuggle the buffer; ranges are
        // disjoint so each index is written exactly once.
        par_ranges(n, 16, |lo, hi| {
            let base = ptr.get() as *mut u8;
            for i in lo..hi {
                unsafe {
                    *base.add(i) += 1;
                }
            }
        });
        assert!(out.iter().all(|&v| v == 1));
    }

    #[test]
    fn repeated_dispatch_reuses_the_pool() {
        let mut acc = vec![0.0f64; 4096];
        for _ in 0..200 {
            let ptr = SendPtr::new(acc.as_mut_ptr());
            par_ranges(4096, 8, |lo, hi| {
                for i in lo..hi {
                    unsafe {
                        *ptr.get().add(i) += 1.0;
                    }
                }
            });
        }
        assert!(acc.iter().all(|&v| v == 200.0));
    }
}
