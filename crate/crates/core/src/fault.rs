//! Fault injection for mutation testing of the invariant suite.
//!
//! A test fixture can flip the sign of [`crate::copula::flip_log_det`] on the
//! current thread and confirm that the normalization checks notice. Nothing
//! else in the crate touches this state.

use std::cell::Cell;

thread_local! {
    static FLIP_LOG_DET_SIGN: Cell<bool> = const { Cell::new(false) };
}

pub(crate) fn flip_log_det_sign_flipped() -> bool {
    FLIP_LOG_DET_SIGN.with(Cell::get)
}

/// Runs `f` with the sign of the flip log-determinant inverted on this thread.
pub fn with_flipped_log_det_sign<T>(f: impl FnOnce() -> T) -> T {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            FLIP_LOG_DET_SIGN.with(|c| c.set(self.0));
        }
    }
    let _reset = Reset(FLIP_LOG_DET_SIGN.with(|c| c.replace(true)));
    f()
}
