//! Per-thread CPU time, so concurrent runs in one process do not bill each other.

/// CPU seconds consumed by the calling thread.
pub fn thread_cpu_seconds() -> f64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advances_under_load() {
        let t0 = thread_cpu_seconds();
        let mut acc = 0.0f64;
        for i in 0..2_000_000 {
            acc += (i as f64).sqrt();
        }
        assert!(acc > 0.0);
        assert!(thread_cpu_seconds() > t0);
    }
}
