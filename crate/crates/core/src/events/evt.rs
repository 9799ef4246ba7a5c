//! EVT: a small little-endian container for one event stream.
//!
//! ```text
//! "EVT1" | u16 version | u8 modality | u8 reserved | u16 width | u16 height
//! | u16 raw_label | u16 reserved | u32 event_count
//! | event_count x { u32 t_us, u16 x, u16 y, u8 p, u8 pad }
//! | u32 CRC-32 over the event records
//! ```

use super::{EventStream, Geometry, Modality};
use crate::error::{Error, Result};

pub const EVT_MAGIC: &[u8; 4] = b"EVT1";
pub const EVT_VERSION: u16 = 1;

const HEADER_LEN: usize = 20;
const RECORD_LEN: usize = 10;

pub fn write_evt(stream: &EventStream) -> Vec<u8> {
    let g = stream.geometry();
    let n = stream.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * RECORD_LEN + 4);
    out.extend_from_slice(EVT_MAGIC);
    out.extend_from_slice(&EVT_VERSION.to_le_bytes());
    out.push(stream.modality().code());
    out.push(0);
    out.extend_from_slice(&g.width.to_le_bytes());
    out.extend_from_slice(&g.height.to_le_bytes());
    out.extend_from_slice(&stream.label().to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p);
        out.push(0);
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptContainer(msg.into())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn read_evt(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(corrupt(format!("{} bytes is shorter than a header", bytes.len())));
    }
    if &bytes[..4] != EVT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16_at(bytes, 4);
    if version != EVT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let modality = Modality::from_code(bytes[6])
        .ok_or_else(|| corrupt(format!("unknown modality code {}", bytes[6])))?;
    let width = u16_at(bytes, 8);
    let height = u16_at(bytes, 10);
    let label = u16_at(bytes, 12);
    let count = u32_at(bytes, 16) as usize;
    let payload_end = count
        .checked_mul(RECORD_LEN)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| corrupt("event count overflows"))?;
    if bytes.len() != payload_end + 4 {
        return Err(corrupt(format!(
            "expected {} bytes for {count} events, found {}",
            payload_end + 4,
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..payload_end];
    let stored = u32_at(bytes, payload_end);
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(corrupt(format!(
            "checksum mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }
    let events = payload
        .chunks_exact(RECORD_LEN)
        .map(|r| super::Event {
            t: u32_at(r, 0),
            x: u16_at(r, 4),
            y: u16_at(r, 6),
            p: r[8],
        })
        .collect();
    let geometry = Geometry::for_modality(modality, width, height);
    if geometry.height != height {
        return Err(corrupt(format!("audio container declares height {height}")));
    }
    EventStream::new(events, label, modality, geometry).map_err(|e| corrupt(format!("invalid payload: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;
    use proptest::prelude::*;

    fn sample() -> EventStream {
        EventStream::new(
            vec![
                Event::new(0, 1, 2, 0),
                Event::new(10, 33, 0, 1),
                Event::new(10, 3, 33, 1),
            ],
            7,
            Modality::Visual,
            Geometry::nmnist(),
        )
        .unwrap()
    }

    #[test]
    fn empty_stream_is_header_only() {
        let s = EventStream::new(vec![], 19, Modality::Audio, Geometry::shd()).unwrap();
        let bytes = write_evt(&s);
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(read_evt(&bytes).unwrap(), s);
    }

    #[test]
    fn three_events_round_trip() {
        let s = sample();
        let bytes = write_evt(&s);
        assert_eq!(read_evt(&bytes).unwrap(), s);
        assert_eq!(write_evt(&read_evt(&bytes).unwrap()), bytes);
    }

    #[test]
    fn flipped_payload_byte_is_rejected() {
        let mut bytes = write_evt(&sample());
        bytes[HEADER_LEN + 3] ^= 0x01;
        assert!(matches!(read_evt(&bytes), Err(Error::CorruptContainer(_))));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = write_evt(&sample());
        bytes[0] = b'X';
        assert!(matches!(read_evt(&bytes), Err(Error::CorruptContainer(_))));
        let bytes = write_evt(&sample());
        assert!(matches!(
            read_evt(&bytes[..bytes.len() - 5]),
            Err(Error::CorruptContainer(_))
        ));
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        (
            prop::bool::ANY,
            1u16..64,
            1u16..64,
            any::<u16>(),
            prop::collection::vec((any::<u32>(), any::<u16>(), any::<u16>(), 0u8..2), 0..40),
        )
            .prop_map(|(visual, w, h, label, raw)| {
                let (modality, geometry) = if visual {
                    (Modality::Visual, Geometry::visual(w, h))
                } else {
                    (Modality::Audio, Geometry::audio(w))
                };
                let mut events: Vec<Event> = raw
                    .into_iter()
                    .map(|(t, x, y, p)| Event::new(t, x % geometry.width, y % geometry.height, p))
                    .collect();
                events.sort_by_key(|e| e.t);
                EventStream::new(events, label, modality, geometry).unwrap()
            })
    }

    proptest! {
        #[test]
        fn container_round_trip(s in arb_stream()) {
            let bytes = write_evt(&s);
            prop_assert_eq!(read_evt(&bytes).unwrap(), s);
        }
    }
}
