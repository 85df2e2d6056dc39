//! Thread-local operation tally used by the FLOP accounting.
//!
//! Instrumented operations report multiply-accumulates (convolutions,
//! attention) and FFT real operations computed from their shapes. Counting is
//! off unless a [`Recorder`] is installed, and modules label their work with
//! [`scope`] so the totals can be broken down per module.

use std::cell::RefCell;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub macs: u64,
    /// Real floating-point operations spent in FFTs (5·N·log2 N per plane).
    pub fft_flops: u64,
}

impl Tally {
    /// FLOPs under the 2·MAC convention plus FFT real operations.
    pub fn flops(&self) -> u64 {
        2 * self.macs + self.fft_flops
    }
}

#[derive(Default)]
struct State {
    path: Vec<String>,
    tallies: BTreeMap<String, Tally>,
    order: Vec<String>,
}

thread_local! {
    static STATE: RefCell<Option<State>> = const { RefCell::new(None) };
}

/// Starts counting on this thread. Counting stops when the recorder drops.
pub struct Recorder {
    _private: (),
}

impl Recorder {
    pub fn start() -> Recorder {
        STATE.with(|s| *s.borrow_mut() = Some(State::default()));
        Recorder { _private: () }
    }

    /// Per-scope tallies in first-seen order.
    pub fn entries(&self) -> Vec<(String, Tally)> {
        STATE.with(|s| {
            let s = s.borrow();
            let st = s.as_ref().expect("recorder active");
            st.order.iter().map(|k| (k.clone(), st.tallies[k])).collect()
        })
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        STATE.with(|s| *s.borrow_mut() = None);
    }
}

/// Guard returned by [`scope`].
pub struct ScopeGuard {
    active: bool,
}

impl Drop for ScopeGuard {
    fn drop(&mut self) {
        if self.active {
            STATE.with(|s| {
                if let Some(st) = s.borrow_mut().as_mut() {
                    st.path.pop();
                }
            });
        }
    }
}

/// Labels all work recorded until the guard drops with `name`, nested
/// under any enclosing scope ("encoder.stage3.dfsp").
pub fn scope(name: &str) -> ScopeGuard {
    let active = STATE.with(|s| match s.borrow_mut().as_mut() {
        Some(st) => {
            st.path.push(name.to_string());
            true
        }
        None => false,
    });
    ScopeGuard { active }
}

fn record(f: impl FnOnce(&mut Tally)) {
    STATE.with(|s| {
        if let Some(st) = s.borrow_mut().as_mut() {
            let key = if st.path.is_empty() { "(root)".to_string() } else { st.path.join(".") };
            if !st.tallies.contains_key(&key) {
                st.order.push(key.clone());
            }
            f(st.tallies.entry(key).or_default());
        }
    });
}

pub fn record_macs(macs: u64) {
    record(|t| t.macs += macs);
}

pub fn record_fft(flops: u64) {
    record(|t| t.fft_flops += flops);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_scopes_join_names() {
        let rec = Recorder::start();
        record_macs(5);
        {
            let _a = scope("enc");
            let _b = scope("stage1");
            record_macs(7);
            record_fft(3);
        }
        let e = rec.entries();
        assert_eq!(e[0], ("(root)".to_string(), Tally { macs: 5, fft_flops: 0 }));
        assert_eq!(e[1], ("enc.stage1".to_string(), Tally { macs: 7, fft_flops: 3 }));
        assert_eq!(e[1].1.flops(), 17);
    }

    #[test]
    fn silent_without_recorder() {
        let _g = scope("x");
        record_macs(1);
        let rec = Recorder::start();
        assert!(rec.entries().is_empty());
    }
}
