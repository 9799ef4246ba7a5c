use super::{Event, EventStream, Geometry, Modality};
use crate::error::{Error, Result};

/// Side length of the N-MNIST sensor.
pub const NMNIST_SIZE: u16 = 34;

const RECORD: usize = 5;

/// Decodes the raw N-MNIST binary layout.
///
/// Each 5-byte record is `x`, `y`, then one bit of polarity followed by a
/// 23-bit big-endian timestamp in microseconds. Events are returned in file
/// order; the stream constructor rejects files that are not time-sorted.
pub fn parse_nmnist_bin(bytes: &[u8], geometry: Geometry, label: u16) -> Result<EventStream> {
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::Malformed(format!(
            "N-MNIST length {} is not a multiple of {RECORD}",
            bytes.len()
        )));
    }
    let mut events = Vec::with_capacity(bytes.len() / RECORD);
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let x = u16::from(rec[0]);
        let y = u16::from(rec[1]);
        if x >= geometry.width || y >= geometry.height {
            return Err(Error::Geometry(format!(
                "record {i}: ({x}, {y}) outside {}x{}",
                geometry.width, geometry.height
            )));
        }
        let p = rec[2] >> 7;
        let t = (u32::from(rec[2] & 0x7f) << 16) | (u32::from(rec[3]) << 8) | u32::from(rec[4]);
        events.push(Event { t, x, y, p });
    }
    EventStream::new(events, label, Modality::Visual, geometry)
}

/// Encodes a visual stream in the N-MNIST layout. Timestamps must fit 23 bits.
pub fn encode_nmnist_bin(stream: &EventStream) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(stream.len() * RECORD);
    for e in stream.events() {
        if e.t >= 1 << 23 || e.x > 255 || e.y > 255 {
            return Err(Error::Malformed(format!(
                "event {e:?} does not fit the N-MNIST layout"
            )));
        }
        out.push(e.x as u8);
        out.push(e.y as u8);
        out.push(((e.p & 1) << 7) | ((e.t >> 16) as u8 & 0x7f));
        out.push((e.t >> 8) as u8);
        out.push(e.t as u8);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(bytes: [u8; 5]) -> Event {
        parse_nmnist_bin(&bytes, Geometry::nmnist(), 0).unwrap().events()[0]
    }

    #[test]
    fn decodes_documented_records() {
        assert_eq!(one([0x05, 0x0A, 0x80, 0x00, 0x01]), Event::new(1, 5, 10, 1));
        assert_eq!(one([0, 0, 0, 0, 0]), Event::new(0, 0, 0, 0));
        assert_eq!(
            one([0x01, 0x02, 0xFF, 0xFF, 0xFF]),
            Event::new((1 << 23) - 1, 1, 2, 1)
        );
    }

    #[test]
    fn rejects_bad_length_and_geometry() {
        assert!(matches!(
            parse_nmnist_bin(&[0; 7], Geometry::nmnist(), 0),
            Err(Error::Malformed(_))
        ));
        assert!(matches!(
            parse_nmnist_bin(&[34, 0, 0, 0, 0], Geometry::nmnist(), 0),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            parse_nmnist_bin(&[0, 34, 0, 0, 0], Geometry::nmnist(), 0),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn encode_inverts_parse() {
        let bytes = [0x05, 0x0A, 0x80, 0x00, 0x01, 0x01, 0x02, 0xFF, 0xFF, 0xFF];
        let s = parse_nmnist_bin(&bytes, Geometry::nmnist(), 3).unwrap();
        assert_eq!(encode_nmnist_bin(&s).unwrap(), bytes);
    }
}
