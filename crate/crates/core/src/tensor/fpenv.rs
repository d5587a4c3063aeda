/// Flushes subnormal floats to zero on the current thread until dropped.
pub struct FlushDenormals {
    #[cfg(any(target_arch = "x86", target_arch = "x86_64"))]
    saved: u32,
}

#[cfg(any(target_arch = "x86", target_arch = "x86_64"))]
#[allow(deprecated)]
mod imp {
    #[cfg(target_arch = "x86")]
    pub use std::arch::x86::{_mm_getcsr, _mm_setcsr};
    #[cfg(target_arch = "x86_64")]
    pub use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};

    /// Flush-to-zero and denormals-are-zero bits of MXCSR.
    pub const FTZ_DAZ: u32 = 0x8040;
}

impl FlushDenormals {
    #[allow(deprecated)]
    pub fn new() -> Self {
        #[cfg(any(target_arch = "x86", target_arch = "x86_64"))]
        {
            // SAFETY: only the FTZ and DAZ control bits change; SSE is part of
            // the baseline of every x86_64 target.
            let saved = unsafe { imp::_mm_getcsr() };
            unsafe { imp::_mm_setcsr(saved | imp::FTZ_DAZ) };
            FlushDenormals { saved }
        }
        #[cfg(not(any(target_arch = "x86", target_arch = "x86_64")))]
        FlushDenormals {}
    }
}

impl Default for FlushDenormals {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for FlushDenormals {
    #[allow(deprecated)]
    fn drop(&mut self) {
        #[cfg(any(target_arch = "x86", target_arch = "x86_64"))]
        // SAFETY: restores the value read in `new`.
        unsafe {
            imp::_mm_setcsr(self.saved)
        };
    }
}
