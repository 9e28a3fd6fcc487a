//! Static-table rANS over bytes, four interleaved lanes.
//!
//! Payload layout, all little-endian:
//!
//! ```text
//! table: 256 frequencies packed as 12-bit values (384 bytes)
//! 4 x u32 final lane states
//! 3 x u32 byte lengths of lanes 0..3 (lane 3 takes the rest)
//! lane 0 words | lane 1 words | lane 2 words | lane 3 words
//! ```
//!
//! Symbol `i` is coded by lane `i % 4`. Each lane is an independent rANS
//! coder with a 32-bit state kept in `[RANS_L, 2^32)` that renormalizes 16
//! bits at a time into its own word stream. Independent lanes let the
//! decoder overlap four dependency chains instead of waiting on one.
//! Symbols are encoded back to front so each lane decodes forward.

use crate::error::{Error, Result};
use crate::tensor::byte_histogram;

/// Table precision: frequencies sum to `1 << SCALE_BITS`.
pub const SCALE_BITS: u32 = 12;
pub const TABLE_TOTAL: u32 = 1 << SCALE_BITS;
/// Lower bound of every lane state.
pub const RANS_L: u32 = 1 << 16;
pub const LANES: usize = 4;
/// Packed table size in bytes.
pub const TABLE_BYTES: usize = 256 * 12 / 8;
/// Table, lane states and lane lengths.
pub const HEADER_BYTES: usize = TABLE_BYTES + 4 * LANES + 4 * (LANES - 1);

/// Normalized symbol frequencies, summing to 4096.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnsTable {
    freq: [u16; 256],
}

impl AnsTable {
    /// Validates raw frequencies.
    pub fn from_frequencies(freq: [u16; 256]) -> Result<Self> {
        let total: u32 = freq.iter().map(|&f| f as u32).sum();
        if total != TABLE_TOTAL || freq.iter().any(|&f| f as u32 >= TABLE_TOTAL) {
            return Err(Error::CorruptStream);
        }
        Ok(Self { freq })
    }

    /// Largest-remainder normalization of a byte histogram to a total of 4096.
    ///
    /// Every symbol that occurs gets at least 1. Ties are broken by symbol
    /// value so identical histograms always give identical tables. A stream
    /// with a single distinct symbol gives it 4095 and parks the remaining
    /// slot on the next symbol value, keeping every entry below 4096 so it
    /// packs into 12 bits.
    pub fn from_histogram(hist: &[u64; 256]) -> Result<Self> {
        let n: u64 = hist.iter().sum();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let present: Vec<usize> = (0..256).filter(|&s| hist[s] > 0).collect();
        let mut freq = [0u16; 256];

        if present.len() == 1 {
            let s = present[0];
            freq[s] = (TABLE_TOTAL - 1) as u16;
            freq[(s + 1) % 256] = 1;
            return Ok(Self { freq });
        }

        let total = TABLE_TOTAL as u64;
        let mut rem = [0u64; 256];
        let mut assigned: i64 = 0;
        for &s in &present {
            let scaled = hist[s] * total;
            let f = (scaled / n).max(1);
            rem[s] = if scaled / n == 0 { 0 } else { scaled % n };
            freq[s] = f as u16;
            assigned += f as i64;
        }

        let mut deficit = total as i64 - assigned;
        if deficit > 0 {
            let mut order = present.clone();
            order.sort_by(|&a, &b| rem[b].cmp(&rem[a]).then(a.cmp(&b)));
            for &s in order.iter().cycle().take(deficit as usize) {
                freq[s] += 1;
            }
            deficit = 0;
        }
        while deficit < 0 {
            // take from the most frequent symbol; costs the fewest bits
            let s = present
                .iter()
                .copied()
                .filter(|&s| freq[s] > 1)
                .max_by(|&a, &b| freq[a].cmp(&freq[b]).then(b.cmp(&a)))
                .ok_or_else(|| Error::Internal("cannot normalize frequency table".into()))?;
            freq[s] -= 1;
            deficit += 1;
        }
        Self::from_frequencies(freq)
    }

    pub fn frequencies(&self) -> &[u16; 256] {
        &self.freq
    }

    fn cumulative(&self) -> [u32; 257] {
        let mut cum = [0u32; 257];
        for s in 0..256 {
            cum[s + 1] = cum[s] + self.freq[s] as u32;
        }
        cum
    }

    /// Packs two 12-bit entries into every three bytes, little-endian.
    pub fn to_bytes(&self) -> [u8; TABLE_BYTES] {
        let mut out = [0u8; TABLE_BYTES];
        for (pair, dst) in self.freq.chunks(2).zip(out.chunks_mut(3)) {
            let v = pair[0] as u32 | (pair[1] as u32) << 12;
            dst.copy_from_slice(&v.to_le_bytes()[..3]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < TABLE_BYTES {
            return Err(Error::CorruptStream);
        }
        let mut freq = [0u16; 256];
        for (pair, src) in freq.chunks_mut(2).zip(bytes[..TABLE_BYTES].chunks(3)) {
            let v = u32::from_le_bytes([src[0], src[1], src[2], 0]);
            pair[0] = (v & 0xfff) as u16;
            pair[1] = (v >> 12) as u16;
        }
        Self::from_frequencies(freq)
    }
}

/// Compresses `data` into a self-describing payload.
pub fn ans_compress(data: &[u8]) -> Result<(AnsTable, Vec<u8>)> {
    let table = AnsTable::from_histogram(&byte_histogram(data))?;
    let cum = table.cumulative();
    // x_max for symbol s is freq[s] << X_MAX_SHIFT
    const X_MAX_SHIFT: u32 = 32 - SCALE_BITS;

    let mut states = [RANS_L; LANES];
    let mut lanes: [Vec<u16>; LANES] = Default::default();
    for (i, &b) in data.iter().enumerate().rev() {
        let lane = i % LANES;
        let f = table.freq[b as usize] as u32;
        let mut x = states[lane];
        if x as u64 >= (f as u64) << X_MAX_SHIFT {
            lanes[lane].push(x as u16);
            x >>= 16;
        }
        states[lane] = ((x / f) << SCALE_BITS) + (x % f) + cum[b as usize];
    }

    let words: usize = lanes.iter().map(Vec::len).sum();
    let mut payload = Vec::with_capacity(HEADER_BYTES + 2 * words);
    payload.extend_from_slice(&table.to_bytes());
    for s in states {
        payload.extend_from_slice(&s.to_le_bytes());
    }
    for lane in &lanes[..LANES - 1] {
        payload.extend_from_slice(&((2 * lane.len()) as u32).to_le_bytes());
    }
    for lane in &lanes {
        for w in lane.iter().rev() {
            payload.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok((table, payload))
}

/// Slot lookup: symbol in bits 0..8, frequency in 8..20 and the slot's
/// offset within its symbol range in 20..32.
fn build_slots(table: &AnsTable) -> Box<[u32; TABLE_TOTAL as usize]> {
    let mut slots = Box::new([0u32; TABLE_TOTAL as usize]);
    let mut start = 0usize;
    for s in 0..256 {
        let f = table.freq[s] as usize;
        for (k, slot) in slots[start..start + f].iter_mut().enumerate() {
            *slot = s as u32 | (f as u32) << 8 | (k as u32) << 20;
        }
        start += f;
    }
    slots
}

/// Decodes a full payload as produced by [`ans_compress`].
pub fn ans_decompress_payload(payload: &[u8], out_len: usize) -> Result<Vec<u8>> {
    let table = AnsTable::from_bytes(payload)?;
    ans_decompress(&table, &payload[TABLE_BYTES..], out_len)
}

struct Lane<'a> {
    state: u32,
    words: &'a [u8],
    pos: usize,
}

impl Lane<'_> {
    /// Decodes one symbol; a refill past the end reads zero and is caught
    /// by [`Lane::finished`].
    #[inline(always)]
    fn decode(&mut self, slots: &[u32; TABLE_TOTAL as usize]) -> u8 {
        let w = match self.words.get(self.pos..self.pos + 2) {
            Some(b) => u16::from_le_bytes([b[0], b[1]]),
            None => 0,
        };
        self.step(slots, w)
    }

    /// Decodes one symbol; the caller guarantees two readable bytes at `pos`.
    #[inline(always)]
    unsafe fn decode_unchecked(&mut self, slots: &[u32; TABLE_TOTAL as usize]) -> u8 {
        // SAFETY: guaranteed by the caller
        let w = unsafe { self.words.as_ptr().add(self.pos).cast::<[u8; 2]>().read() };
        self.step(slots, u16::from_le_bytes(w))
    }

    #[inline(always)]
    fn step(&mut self, slots: &[u32; TABLE_TOTAL as usize], w: u16) -> u8 {
        const MASK: u32 = TABLE_TOTAL - 1;
        let x = self.state;
        let e = slots[(x & MASK) as usize];
        let x = ((e >> 8) & 0xfff) * (x >> SCALE_BITS) + (e >> 20);
        let need = (x < RANS_L) as u32;
        self.state = (x << (16 * need)) | (w as u32 & need.wrapping_neg());
        self.pos += 2 * need as usize;
        e as u8
    }

    fn words_left(&self) -> usize {
        (self.words.len() - self.pos.min(self.words.len())) / 2
    }

    fn finished(&self) -> bool {
        self.state == RANS_L && self.pos == self.words.len()
    }
}

/// Decodes `out_len` symbols from `stream` (everything after the table).
///
/// Fails with [`Error::CorruptStream`] unless every lane consumes its words
/// exactly and returns to its initial state.
pub fn ans_decompress(table: &AnsTable, stream: &[u8], out_len: usize) -> Result<Vec<u8>> {
    let fixed = HEADER_BYTES - TABLE_BYTES;
    if stream.len() < fixed {
        return Err(Error::CorruptStream);
    }
    let word = |i: usize| u32::from_le_bytes(stream[4 * i..4 * i + 4].try_into().unwrap());
    let mut rest = &stream[fixed..];
    let mut lanes = Vec::with_capacity(LANES);
    for l in 0..LANES {
        let state = word(l);
        if state < RANS_L {
            return Err(Error::CorruptStream);
        }
        let len = if l + 1 < LANES { word(LANES + l) as usize } else { rest.len() };
        if len > rest.len() || len % 2 != 0 {
            return Err(Error::CorruptStream);
        }
        let (words, tail) = rest.split_at(len);
        rest = tail;
        lanes.push(Lane { state, words, pos: 0 });
    }
    let [mut l0, mut l1, mut l2, mut l3]: [Lane; LANES] =
        lanes.try_into().map_err(|_| Error::CorruptStream)?;
    let slots = build_slots(table);

    let mut out = vec![0u8; out_len];
    let mut groups = out.chunks_exact_mut(LANES);
    loop {
        // each group takes at most one word per lane
        let block = [&l0, &l1, &l2, &l3].iter().map(|l| l.words_left()).min().unwrap();
        if block < 64 {
            break;
        }
        let mut done = 0;
        for g in groups.by_ref().take(block) {
            // SAFETY: fewer than `block` groups have run, so every lane still
            // has at least one unread word
            unsafe {
                g[0] = l0.decode_unchecked(&slots);
                g[1] = l1.decode_unchecked(&slots);
                g[2] = l2.decode_unchecked(&slots);
                g[3] = l3.decode_unchecked(&slots);
            }
            done += 1;
        }
        if done < block {
            break;
        }
    }
    for g in &mut groups {
        g[0] = l0.decode(&slots);
        g[1] = l1.decode(&slots);
        g[2] = l2.decode(&slots);
        g[3] = l3.decode(&slots);
    }
    for (o, lane) in groups.into_remainder().iter_mut().zip([&mut l0, &mut l1, &mut l2]) {
        *o = lane.decode(&slots);
    }

    for lane in [&l0, &l1, &l2, &l3] {
        if !lane.finished() {
            return Err(Error::CorruptStream);
        }
    }
    Ok(out)
}
