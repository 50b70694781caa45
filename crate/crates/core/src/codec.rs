//! Encoder/decoder for the traceback IPv4 option.
//!
//! Wire layout (`option_length` octets, then 0x00 End-of-Option-List padding
//! up to a 32-bit boundary):
//!
//! ```text
//!  0      1        2          3..7        ...              len-4..len
//! +------+--------+----------+-----------+----------------+-------------+
//! | 0x56 | length | S R hops | sender IP | packed ID field| receiver IP |
//! +------+--------+----------+-----------+----------------+-------------+
//! ```
//!
//! * octet 0: copied flag 0, class 2 (measurement), number 22.
//! * octet 2: bit 7 sender slot present, bit 6 receiver slot present,
//!   bits 5..0 number of IDs written so far.
//! * IDs are packed MSB-first at `bit_width` bits each. The ID field always
//!   spans everything between the slots and is zero past the last ID, so a
//!   router can append in place without resizing the header.
//!
//! The layout (length and slot flags) is read from the option itself; the
//! [`CodecProfile`] supplies the deployment-wide bit width and decides what
//! a fresh option looks like.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::id_assignment::{TracemaxId, MAX_BIT_WIDTH};

/// Copied flag 0, option class 2, option number 22.
pub const OPTION_TYPE: u8 = 0b0101_0110;
pub const MAX_OPTION_LENGTH: u8 = 40;
pub const DEFAULT_OPTION_LENGTH: u8 = MAX_OPTION_LENGTH;
/// Type, length and control octet.
pub const HEADER_LEN: usize = 3;
/// The hop counter is 6 bits wide.
pub const MAX_HOPS: usize = 63;
pub const LOOSE_SOURCE_ROUTE: u8 = 0x83;
pub const STRICT_SOURCE_ROUTE: u8 = 0x89;
/// IPv4 header without options.
pub const IPV4_BASE_HEADER_LEN: usize = 20;

const SENDER_FLAG: u8 = 0x80;
const RECEIVER_FLAG: u8 = 0x40;
const HOP_MASK: u8 = 0x3f;
const ADDR_LEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("option truncated: need {needed} octets, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("source-route option type {0:#04x} refused (discouraged for security reasons)")]
    SourceRouteRefused(u8),
    #[error("unexpected option type {0:#04x}")]
    WrongOptionType(u8),
    #[error("option length {0} does not fit the layout")]
    BadOptionLength(u8),
    #[error("hop count {hop_count} exceeds ID-field capacity {capacity}")]
    HopCountInconsistent { hop_count: usize, capacity: usize },
    #[error("ID #{index} is zero")]
    ZeroId { index: usize },
    #[error("non-zero bits after the last written ID")]
    StaleBits,
    #[error("non-zero or excess octets after the option")]
    TrailingBytes,
    #[error("ID {id} does not fit in {bit_width} bits")]
    IdOutOfRange { id: u8, bit_width: u8 },
    #[error("option is full ({capacity} IDs)")]
    CapacityExceeded { capacity: usize },
    #[error("slot not present in this option")]
    MissingSlot,
    #[error("invalid codec profile: {0}")]
    InvalidProfile(String),
}

impl CodecError {
    pub fn is_source_route(&self) -> bool {
        matches!(self, CodecError::SourceRouteRefused(_))
    }
}

/// Deployment-wide codec parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecProfile {
    pub bit_width: u8,
    pub include_sender: bool,
    pub include_receiver: bool,
    pub option_length: u8,
}

impl Default for CodecProfile {
    /// Full layout: sender and receiver slots, 4-bit IDs, 40-octet option.
    fn default() -> Self {
        CodecProfile {
            bit_width: 4,
            include_sender: true,
            include_receiver: true,
            option_length: DEFAULT_OPTION_LENGTH,
        }
    }
}

impl CodecProfile {
    /// One full octet per ID and no address slots.
    pub fn byte_per_id() -> Self {
        CodecProfile {
            bit_width: 8,
            include_sender: false,
            include_receiver: false,
            option_length: DEFAULT_OPTION_LENGTH,
        }
    }

    pub fn new(
        bit_width: u8,
        include_sender: bool,
        include_receiver: bool,
        option_length: u8,
    ) -> Result<Self, CodecError> {
        let p = CodecProfile {
            bit_width,
            include_sender,
            include_receiver,
            option_length,
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), CodecError> {
        if !(1..=MAX_BIT_WIDTH).contains(&self.bit_width) {
            return Err(CodecError::InvalidProfile(format!(
                "bit width {} outside 1..=8",
                self.bit_width
            )));
        }
        let layout = Layout::new(self.option_length, self.include_sender, self.include_receiver)
            .ok_or_else(|| {
                CodecError::InvalidProfile(format!(
                    "option length {} cannot hold the header and address slots",
                    self.option_length
                ))
            })?;
        if layout.capacity(self.bit_width) == 0 {
            return Err(CodecError::InvalidProfile("capacity is zero".into()));
        }
        Ok(())
    }

    /// Maximum number of IDs a fresh option of this profile can hold.
    pub fn capacity(&self) -> usize {
        Layout::new(self.option_length, self.include_sender, self.include_receiver)
            .map_or(0, |l| l.capacity(self.bit_width))
    }

    /// Octets the option occupies in the IPv4 header, padding included.
    pub fn padded_len(&self) -> usize {
        padded(self.option_length as usize)
    }
}

fn padded(len: usize) -> usize {
    len.div_ceil(4) * 4
}

/// Byte offsets of one concrete option.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    len: usize,
    sender: bool,
    receiver: bool,
}

impl Layout {
    fn new(option_length: u8, sender: bool, receiver: bool) -> Option<Self> {
        let len = option_length as usize;
        if len > MAX_OPTION_LENGTH as usize || len < HEADER_LEN {
            return None;
        }
        let l = Layout { len, sender, receiver };
        (l.id_offset() <= l.id_end()).then_some(l)
    }

    fn id_offset(&self) -> usize {
        HEADER_LEN + if self.sender { ADDR_LEN } else { 0 }
    }

    fn id_end(&self) -> usize {
        // saturating: Layout::new rejects layouts where this would underflow
        self.len.saturating_sub(if self.receiver { ADDR_LEN } else { 0 })
    }

    fn receiver_offset(&self) -> usize {
        self.len - ADDR_LEN
    }

    fn capacity(&self, bit_width: u8) -> usize {
        let bits = self.id_end().saturating_sub(self.id_offset()) * 8;
        (bits / bit_width as usize).min(MAX_HOPS)
    }
}

/// Decoded content of the option.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceOption {
    pub option_length: u8,
    /// `Some` when the sender slot is present; 0.0.0.0 until written.
    pub sender: Option<Ipv4Addr>,
    pub ids: Vec<TracemaxId>,
    /// `Some` when the receiver slot is present; 0.0.0.0 until written.
    pub receiver: Option<Ipv4Addr>,
}

impl TraceOption {
    /// Fresh zero-filled option as installed by an ingress edge router.
    pub fn empty(profile: &CodecProfile) -> Self {
        TraceOption {
            option_length: profile.option_length,
            sender: profile.include_sender.then_some(Ipv4Addr::UNSPECIFIED),
            ids: Vec::new(),
            receiver: profile.include_receiver.then_some(Ipv4Addr::UNSPECIFIED),
        }
    }

    pub const fn option_type(&self) -> u8 {
        OPTION_TYPE
    }

    pub fn hop_count(&self) -> usize {
        self.ids.len()
    }

    /// IDs this option's layout can hold at `bit_width`.
    pub fn capacity(&self, bit_width: u8) -> usize {
        self.layout().map_or(0, |l| l.capacity(bit_width))
    }

    fn layout(&self) -> Option<Layout> {
        Layout::new(self.option_length, self.sender.is_some(), self.receiver.is_some())
    }
}

/// Serialize `option`, IDs packed at the profile's bit width.
pub fn encode(option: &TraceOption, profile: &CodecProfile) -> Result<Vec<u8>, CodecError> {
    profile.check()?;
    let layout = option
        .layout()
        .ok_or(CodecError::BadOptionLength(option.option_length))?;
    let capacity = layout.capacity(profile.bit_width);
    if option.ids.len() > capacity {
        return Err(CodecError::HopCountInconsistent {
            hop_count: option.ids.len(),
            capacity,
        });
    }

    let mut out = vec![0u8; padded(layout.len)];
    out[0] = OPTION_TYPE;
    out[1] = option.option_length;
    out[2] = control_octet(option.sender.is_some(), option.receiver.is_some(), option.ids.len());
    if let Some(sender) = option.sender {
        out[HEADER_LEN..HEADER_LEN + ADDR_LEN].copy_from_slice(&sender.octets());
    }
    for (i, id) in option.ids.iter().enumerate() {
        check_id_width(*id, profile.bit_width)?;
        write_bits(
            &mut out,
            layout.id_offset() * 8 + i * profile.bit_width as usize,
            profile.bit_width,
            id.get(),
        );
    }
    if let Some(receiver) = option.receiver {
        let at = layout.receiver_offset();
        out[at..at + ADDR_LEN].copy_from_slice(&receiver.octets());
    }
    Ok(out)
}

/// Parse option bytes. Total over arbitrary input: every byte sequence
/// yields either an option or an error, in time linear in its length.
pub fn decode(bytes: &[u8], profile: &CodecProfile) -> Result<TraceOption, CodecError> {
    profile.check()?;
    let (layout, hops) = parse_header(bytes, profile.bit_width)?;
    let bw = profile.bit_width as usize;

    let mut ids = Vec::with_capacity(hops);
    for index in 0..hops {
        let raw = read_bits(bytes, layout.id_offset() * 8 + index * bw, profile.bit_width);
        ids.push(TracemaxId::new(raw).ok_or(CodecError::ZeroId { index })?);
    }
    let used_end = layout.id_offset() * 8 + hops * bw;
    if (used_end..layout.id_end() * 8).any(|bit| bytes[bit / 8] & (0x80 >> (bit % 8)) != 0) {
        return Err(CodecError::StaleBits);
    }

    let sender = layout
        .sender
        .then(|| read_addr(bytes, HEADER_LEN));
    let receiver = layout
        .receiver
        .then(|| read_addr(bytes, layout.receiver_offset()));
    Ok(TraceOption {
        option_length: layout.len as u8,
        sender,
        ids,
        receiver,
    })
}

/// Write `id` into the next free slot of an encoded option. Only the
/// control octet and the `bit_width` bits of the new slot change.
pub fn append_id_in_place(bytes: &mut [u8], id: TracemaxId, profile: &CodecProfile) -> Result<(), CodecError> {
    check_id_width(id, profile.bit_width)?;
    // full decode so a corrupted buffer is never written into
    let option = decode(bytes, profile)?;
    let layout = option.layout().expect("decoded layout is valid");
    let capacity = layout.capacity(profile.bit_width);
    let hops = option.ids.len();
    if hops >= capacity {
        return Err(CodecError::CapacityExceeded { capacity });
    }
    write_bits(
        bytes,
        layout.id_offset() * 8 + hops * profile.bit_width as usize,
        profile.bit_width,
        id.get(),
    );
    bytes[2] = control_octet(layout.sender, layout.receiver, hops + 1);
    Ok(())
}

pub fn append_id(bytes: &[u8], id: TracemaxId, profile: &CodecProfile) -> Result<Vec<u8>, CodecError> {
    let mut out = bytes.to_vec();
    append_id_in_place(&mut out, id, profile)?;
    Ok(out)
}

pub fn set_sender(bytes: &mut [u8], sender: Ipv4Addr, profile: &CodecProfile) -> Result<(), CodecError> {
    let option = decode(bytes, profile)?;
    if option.sender.is_none() {
        return Err(CodecError::MissingSlot);
    }
    bytes[HEADER_LEN..HEADER_LEN + ADDR_LEN].copy_from_slice(&sender.octets());
    Ok(())
}

pub fn set_receiver(bytes: &mut [u8], receiver: Ipv4Addr, profile: &CodecProfile) -> Result<(), CodecError> {
    let option = decode(bytes, profile)?;
    let layout = option.layout().expect("decoded layout is valid");
    if !layout.receiver {
        return Err(CodecError::MissingSlot);
    }
    let at = layout.receiver_offset();
    bytes[at..at + ADDR_LEN].copy_from_slice(&receiver.octets());
    Ok(())
}

fn parse_header(bytes: &[u8], bit_width: u8) -> Result<(Layout, usize), CodecError> {
    let Some(&kind) = bytes.first() else {
        return Err(CodecError::Truncated { needed: 1, got: 0 });
    };
    match kind {
        OPTION_TYPE => {}
        LOOSE_SOURCE_ROUTE | STRICT_SOURCE_ROUTE => return Err(CodecError::SourceRouteRefused(kind)),
        other => return Err(CodecError::WrongOptionType(other)),
    }
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Truncated {
            needed: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let len = bytes[1];
    let control = bytes[2];
    let layout = Layout::new(len, control & SENDER_FLAG != 0, control & RECEIVER_FLAG != 0)
        .ok_or(CodecError::BadOptionLength(len))?;
    if bytes.len() < layout.len {
        return Err(CodecError::Truncated {
            needed: layout.len,
            got: bytes.len(),
        });
    }
    if bytes.len() > MAX_OPTION_LENGTH as usize || bytes[layout.len..].iter().any(|b| *b != 0) {
        return Err(CodecError::TrailingBytes);
    }
    let hops = (control & HOP_MASK) as usize;
    let capacity = layout.capacity(bit_width);
    if hops > capacity {
        return Err(CodecError::HopCountInconsistent {
            hop_count: hops,
            capacity,
        });
    }
    Ok((layout, hops))
}

fn control_octet(sender: bool, receiver: bool, hops: usize) -> u8 {
    debug_assert!(hops <= MAX_HOPS);
    (if sender { SENDER_FLAG } else { 0 }) | (if receiver { RECEIVER_FLAG } else { 0 }) | hops as u8
}

fn check_id_width(id: TracemaxId, bit_width: u8) -> Result<(), CodecError> {
    if id.bits() > bit_width {
        return Err(CodecError::IdOutOfRange { id: id.get(), bit_width });
    }
    Ok(())
}

fn read_addr(bytes: &[u8], at: usize) -> Ipv4Addr {
    Ipv4Addr::new(bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3])
}

/// Write the low `width` bits of `value` MSB-first starting at bit `offset`.
fn write_bits(buf: &mut [u8], offset: usize, width: u8, value: u8) {
    for i in 0..width as usize {
        let bit = (value >> (width as usize - 1 - i)) & 1;
        let pos = offset + i;
        let mask = 0x80 >> (pos % 8);
        if bit == 1 {
            buf[pos / 8] |= mask;
        } else {
            buf[pos / 8] &= !mask;
        }
    }
}

fn read_bits(buf: &[u8], offset: usize, width: u8) -> u8 {
    (0..width as usize).fold(0u8, |acc, i| {
        let pos = offset + i;
        (acc << 1) | ((buf[pos / 8] >> (7 - pos % 8)) & 1)
    })
}

/// Lowercase, space-separated octets.
pub fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 3);
    for (i, b) in bytes.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed hex input: {0}")]
pub struct HexError(String);

/// Parse hex octets; whitespace anywhere is ignored.
pub fn from_hex(text: &str) -> Result<Vec<u8>, HexError> {
    let digits: Vec<u8> = text.bytes().filter(|b| !b.is_ascii_whitespace()).collect();
    if !digits.len().is_multiple_of(2) {
        return Err(HexError("odd number of hex digits".into()));
    }
    digits
        .chunks(2)
        .map(|pair| {
            let s = std::str::from_utf8(pair).map_err(|_| HexError("non-ascii input".into()))?;
            u8::from_str_radix(s, 16).map_err(|_| HexError(format!("bad octet {s:?}")))
        })
        .collect()
}
