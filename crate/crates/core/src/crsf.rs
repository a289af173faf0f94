//! CRSF RC link: frame codec, streaming decoder, channel normalization and
//! the failsafe watchdog.
//!
//! Frame layout: `[sync 0xC8][len][type][payload..][crc]` where `len` counts
//! type, payload and crc, and the crc is CRC-8/DVB-S2 over type and payload.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SYNC: u8 = 0xC8;
pub const FRAME_TYPE_RC_CHANNELS: u8 = 0x16;
pub const MAX_FRAME_LEN: usize = 64;
/// Largest legal value of the length byte.
pub const MAX_LEN_BYTE: u8 = (MAX_FRAME_LEN - 2) as u8;
pub const RC_PAYLOAD_LEN: usize = 22;
pub const NUM_CHANNELS: usize = 16;

pub const CHANNEL_MIN: u16 = 172;
pub const CHANNEL_MID: u16 = 992;
pub const CHANNEL_MAX: u16 = 1811;

pub const DEFAULT_DEADZONE: f64 = 0.03;
pub const DEFAULT_FAILSAFE_MS: u64 = 500;

const CRC8_POLY: u8 = 0xD5;

pub fn crc8_dvb_s2(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0u8, |mut crc, &b| {
        crc ^= b;
        for _ in 0..8 {
            crc = if crc & 0x80 != 0 { (crc << 1) ^ CRC8_POLY } else { crc << 1 };
        }
        crc
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrsfFrame {
    pub frame_type: u8,
    pub payload: Vec<u8>,
}

impl CrsfFrame {
    pub fn len_byte(&self) -> u8 {
        (self.payload.len() + 2) as u8
    }

    pub fn crc(&self) -> u8 {
        let mut crc_input = Vec::with_capacity(self.payload.len() + 1);
        crc_input.push(self.frame_type);
        crc_input.extend_from_slice(&self.payload);
        crc8_dvb_s2(&crc_input)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + 4);
        out.push(SYNC);
        out.push(self.len_byte());
        out.push(self.frame_type);
        out.extend_from_slice(&self.payload);
        out.push(self.crc());
        out
    }

    /// Unpacks an RC-channels frame.
    pub fn rc_channels(&self) -> Option<[u16; NUM_CHANNELS]> {
        if self.frame_type != FRAME_TYPE_RC_CHANNELS || self.payload.len() != RC_PAYLOAD_LEN {
            return None;
        }
        Some(unpack_channels(&self.payload))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CrsfError {
    #[error("crc mismatch: computed {computed:#04x}, frame carries {received:#04x}")]
    CrcMismatch { computed: u8, received: u8 },
    #[error("truncated frame: {needed} more byte(s) required")]
    Truncated { needed: usize },
    #[error("length byte {0} is outside 2..={MAX_LEN_BYTE}")]
    OversizeLength(u8),
    #[error("channel {index} value {value} outside {CHANNEL_MIN}..={CHANNEL_MAX}")]
    ChannelOutOfRange { index: usize, value: u16 },
}

/// Parses one frame from the front of `bytes`, skipping leading garbage up
/// to the first sync byte. On success returns the frame and the number of
/// bytes consumed (garbage included).
///
/// Errors leave it to the caller to decide how far to skip; [`FrameDecoder`]
/// drops a single byte and rescans.
pub fn parse_frame(bytes: &[u8]) -> Result<(CrsfFrame, usize), CrsfError> {
    let start = match bytes.iter().position(|&b| b == SYNC) {
        Some(i) => i,
        None => return Err(CrsfError::Truncated { needed: 2 }),
    };
    let rest = &bytes[start..];
    if rest.len() < 2 {
        return Err(CrsfError::Truncated { needed: 2 - rest.len() });
    }
    let len = rest[1];
    if !(2..=MAX_LEN_BYTE).contains(&len) {
        return Err(CrsfError::OversizeLength(len));
    }
    let total = len as usize + 2;
    if rest.len() < total {
        return Err(CrsfError::Truncated { needed: total - rest.len() });
    }
    let body = &rest[2..total - 1];
    let received = rest[total - 1];
    let computed = crc8_dvb_s2(body);
    if computed != received {
        return Err(CrsfError::CrcMismatch { computed, received });
    }
    let frame = CrsfFrame { frame_type: body[0], payload: body[1..].to_vec() };
    Ok((frame, start + total))
}

/// Packs 16 channels, 11 bits each, LSB first.
pub fn pack_channels(channels: &[u16; NUM_CHANNELS]) -> [u8; RC_PAYLOAD_LEN] {
    let mut out = [0u8; RC_PAYLOAD_LEN];
    let mut acc: u32 = 0;
    let mut bits = 0;
    let mut idx = 0;
    for &ch in channels {
        acc |= ((ch & 0x07FF) as u32) << bits;
        bits += 11;
        while bits >= 8 {
            out[idx] = acc as u8;
            idx += 1;
            acc >>= 8;
            bits -= 8;
        }
    }
    out
}

pub fn unpack_channels(payload: &[u8]) -> [u16; NUM_CHANNELS] {
    let mut out = [0u16; NUM_CHANNELS];
    let mut acc: u32 = 0;
    let mut bits = 0;
    let mut bytes = payload.iter();
    for ch in out.iter_mut() {
        while bits < 11 {
            acc |= (*bytes.next().unwrap_or(&0) as u32) << bits;
            bits += 8;
        }
        *ch = (acc & 0x07FF) as u16;
        acc >>= 11;
        bits -= 11;
    }
    out
}

pub fn rc_channels_frame(channels: &[u16; NUM_CHANNELS]) -> Result<CrsfFrame, CrsfError> {
    if let Some((index, &value)) = channels
        .iter()
        .enumerate()
        .find(|(_, &v)| !(CHANNEL_MIN..=CHANNEL_MAX).contains(&v))
    {
        return Err(CrsfError::ChannelOutOfRange { index, value });
    }
    Ok(CrsfFrame { frame_type: FRAME_TYPE_RC_CHANNELS, payload: pack_channels(channels).to_vec() })
}

/// Encodes an RC-channels-packed frame, crc included.
pub fn encode_rc_channels(channels: &[u16; NUM_CHANNELS]) -> Result<Vec<u8>, CrsfError> {
    Ok(rc_channels_frame(channels)?.to_bytes())
}

/// Maps a raw channel value to [-1, 1] with a deadzone around center.
///
/// 172 maps to -1, 992 to 0, 1811 to +1. Inside the deadzone the output is
/// zero; outside it the remaining range is stretched so the output is
/// continuous and still reaches ±1. Out-of-range input is clamped.
pub fn normalize_channel(raw: u16, deadzone: f64) -> f64 {
    let raw = raw.clamp(CHANNEL_MIN, CHANNEL_MAX);
    let x = if raw >= CHANNEL_MID {
        (raw - CHANNEL_MID) as f64 / (CHANNEL_MAX - CHANNEL_MID) as f64
    } else {
        -((CHANNEL_MID - raw) as f64) / (CHANNEL_MID - CHANNEL_MIN) as f64
    };
    let dz = deadzone.clamp(0.0, 0.5);
    let mag = x.abs();
    if mag < dz {
        0.0
    } else {
        x.signum() * (mag - dz) / (1.0 - dz)
    }
}

/// Inverse of the affine part of [`normalize_channel`] (no deadzone).
pub fn raw_from_command(value: f64) -> u16 {
    let v = value.clamp(-1.0, 1.0);
    let raw = if v >= 0.0 {
        CHANNEL_MID as f64 + v * (CHANNEL_MAX - CHANNEL_MID) as f64
    } else {
        CHANNEL_MID as f64 + v * (CHANNEL_MID - CHANNEL_MIN) as f64
    };
    crate::math::round(raw) as u16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelState {
    pub channels: [u16; NUM_CHANNELS],
    /// Receive time of the last valid frame, ms.
    pub timestamp: u64,
    pub link_ok: bool,
}

impl Default for ChannelState {
    fn default() -> Self {
        Self { channels: [CHANNEL_MID; NUM_CHANNELS], timestamp: 0, link_ok: false }
    }
}

impl ChannelState {
    /// Normalized command for a 0-based channel index; zero while the link is down.
    pub fn command(&self, index: usize, deadzone: f64) -> f64 {
        if !self.link_ok {
            return 0.0;
        }
        self.channels.get(index).map_or(0.0, |&raw| normalize_channel(raw, deadzone))
    }
}

/// Drops the link once no valid frame has arrived for longer than `window_ms`.
pub fn link_watchdog(state: ChannelState, now: u64, window_ms: u64) -> ChannelState {
    let stale = now.saturating_sub(state.timestamp) > window_ms;
    ChannelState { link_ok: state.link_ok && !stale, ..state }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub frames_ok: u64,
    pub crc_errors: u64,
    pub oversize: u64,
    /// Bytes skipped while hunting for sync.
    pub resync_bytes: u64,
    pub other_frames: u64,
    pub clamped_channels: u64,
    pub failsafes: u64,
}

/// Incremental decoder that tolerates garbage and split reads.
#[derive(Debug, Clone, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    stats: LinkStats,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn stats(&self) -> &LinkStats {
        &self.stats
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete, valid frame; `None` when more bytes are needed.
    pub fn next_frame(&mut self) -> Option<CrsfFrame> {
        self.next_inner(false)
    }

    /// Like [`next_frame`](Self::next_frame) but treats the input as ended:
    /// a candidate that can never complete is skipped so later frames in the
    /// buffer are still found.
    pub fn next_frame_at_end(&mut self) -> Option<CrsfFrame> {
        self.next_inner(true)
    }

    fn next_inner(&mut self, at_end: bool) -> Option<CrsfFrame> {
        loop {
            match self.buf.iter().position(|&b| b == SYNC) {
                Some(0) => {}
                Some(i) => {
                    self.stats.resync_bytes += i as u64;
                    self.buf.drain(..i);
                }
                None => {
                    self.stats.resync_bytes += self.buf.len() as u64;
                    self.buf.clear();
                    return None;
                }
            }
            match parse_frame(&self.buf) {
                Ok((frame, used)) => {
                    self.buf.drain(..used);
                    self.stats.frames_ok += 1;
                    return Some(frame);
                }
                Err(CrsfError::Truncated { .. }) if !at_end => return None,
                Err(e) => {
                    match e {
                        CrsfError::CrcMismatch { .. } => self.stats.crc_errors += 1,
                        CrsfError::OversizeLength(_) => self.stats.oversize += 1,
                        _ => {}
                    }
                    // false sync: drop just that byte, the real frame may start inside
                    self.buf.drain(..1);
                    self.stats.resync_bytes += 1;
                }
            }
        }
    }
}

/// Maps RC channels onto drive and relay functions (0-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub steering: usize,
    pub throttle: usize,
    pub switches: [usize; 4],
    pub deadzone: f64,
    /// Normalized value above which a switch reads as on.
    pub switch_threshold: f64,
}

impl Default for ChannelMap {
    fn default() -> Self {
        Self { steering: 0, throttle: 1, switches: [4, 5, 6, 7], deadzone: DEFAULT_DEADZONE, switch_threshold: 0.5 }
    }
}

/// Single-writer holder of the link state: bytes in, channel snapshots out.
#[derive(Debug, Clone)]
pub struct LinkState {
    decoder: FrameDecoder,
    state: ChannelState,
    failsafe_ms: u64,
    stats: LinkStats,
}

impl LinkState {
    pub fn new(failsafe_ms: u64) -> Self {
        Self { decoder: FrameDecoder::new(), state: ChannelState::default(), failsafe_ms, stats: LinkStats::default() }
    }

    /// Feeds received bytes; every valid RC frame refreshes the snapshot.
    /// Returns the number of RC frames accepted.
    pub fn ingest(&mut self, bytes: &[u8], now: u64) -> usize {
        self.decoder.push(bytes);
        let mut accepted = 0;
        while let Some(frame) = self.decoder.next_frame() {
            accepted += self.accept(&frame, now) as usize;
        }
        accepted
    }

    /// Applies an already-decoded frame.
    pub fn accept(&mut self, frame: &CrsfFrame, now: u64) -> bool {
        let Some(raw) = frame.rc_channels() else {
            self.stats.other_frames += 1;
            return false;
        };
        let mut channels = raw;
        for ch in channels.iter_mut() {
            if !(CHANNEL_MIN..=CHANNEL_MAX).contains(ch) {
                *ch = (*ch).clamp(CHANNEL_MIN, CHANNEL_MAX);
                self.stats.clamped_channels += 1;
            }
        }
        self.state = ChannelState { channels, timestamp: now, link_ok: true };
        true
    }

    /// Current snapshot with the watchdog applied at `now`.
    pub fn snapshot(&mut self, now: u64) -> ChannelState {
        let next = link_watchdog(self.state, now, self.failsafe_ms);
        if self.state.link_ok && !next.link_ok {
            self.stats.failsafes += 1;
        }
        self.state = next;
        next
    }

    pub fn stats(&self) -> LinkStats {
        let d = self.decoder.stats();
        LinkStats {
            frames_ok: d.frames_ok,
            crc_errors: d.crc_errors,
            oversize: d.oversize,
            resync_bytes: d.resync_bytes,
            ..self.stats
        }
    }
}
