//! Allocator tuning for the training loops.
//!
//! Each iteration allocates and frees a few hundred batch-sized arrays. With
//! glibc's defaults, blocks above the dynamic mmap threshold go straight back
//! to the kernel and every iteration pays for fresh zeroed pages. Raising the
//! thresholds keeps that memory in the heap between iterations.

use std::sync::Once;

static TUNE: Once = Once::new();

/// Idempotent; a no-op outside glibc targets.
pub fn tune() {
    TUNE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        // SAFETY: mallopt only adjusts allocator parameters.
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 512 << 20);
            libc::mallopt(libc::M_TOP_PAD, 512 << 20);
        }
    });
}
