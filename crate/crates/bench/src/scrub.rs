//! Cache scrubbing between timed iterations.

use std::hint::black_box;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrubMode {
    Off,
    Approx,
}

impl ScrubMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScrubMode::Off => "off",
            ScrubMode::Approx => "approx",
        }
    }
}

/// Default last-level cache size assumed when none is given, in MiB.
pub const DEFAULT_LLC_MIB: usize = 8;

/// The scrub buffer is this many times the LLC size.
pub const SCRUB_FACTOR: usize = 8;

const LINE: usize = 64;

pub struct CacheScrubber {
    mode: ScrubMode,
    buf: Vec<u8>,
}

impl CacheScrubber {
    pub fn new(mode: ScrubMode, llc_bytes: usize) -> Self {
        let buf = match mode {
            ScrubMode::Off => Vec::new(),
            ScrubMode::Approx => vec![0u8; SCRUB_FACTOR * llc_bytes],
        };
        CacheScrubber { mode, buf }
    }

    pub fn mode(&self) -> ScrubMode {
        self.mode
    }

    pub fn buffer_len(&self) -> usize {
        self.buf.len()
    }

    /// In approx mode, writes one byte per cache line of the scrub buffer
    /// (evicting filter, bias, output and indirection data) and then reads
    /// every operand slice back in. Off mode does nothing.
    pub fn scrub(&mut self, operands: &[&[f32]]) {
        if self.mode == ScrubMode::Off {
            return;
        }
        for line in self.buf.chunks_mut(LINE) {
            line[0] = line[0].wrapping_add(1);
        }
        black_box(&mut self.buf);
        let mut acc = 0u32;
        for op in operands {
            for chunk in op.chunks(LINE / 4) {
                acc ^= chunk[0].to_bits();
            }
        }
        black_box(acc);
    }
}

/// Scrubs once; convenience for one-off use.
pub fn scrub_caches(mode: ScrubMode, llc_bytes: usize, input: &[f32]) {
    CacheScrubber::new(mode, llc_bytes).scrub(&[input]);
}
