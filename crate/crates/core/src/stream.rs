//! `.vmsh` frame-stream container.
//!
//! Little-endian layout: magic `VMSH`, version `u16 = 1`, then records of
//! `record_type: u8` (0 = depth, 1 = color), `frame_number: u32`,
//! `timestamp_us: u64`, `width: u16`, `height: u16` and the payload
//! (`width*height` u16 depth values or `3*width*height` RGB bytes).
//! The depth record for frame `n` immediately precedes its color record.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::frame::{ColorFrame, DepthFrame, FrameError, FramePair};

pub const MAGIC: &[u8; 4] = b"VMSH";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 6;
/// record_type + frame_number + timestamp_us + width + height
pub const RECORD_HEADER_LEN: u64 = 1 + 4 + 8 + 2 + 2;

const RECORD_DEPTH: u8 = 0;
const RECORD_COLOR: u8 = 1;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed stream header: {0}")]
    Format(String),
    #[error("stream truncated at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("unknown record type {record_type} at byte offset {offset}")]
    RecordType { record_type: u8, offset: u64 },
    #[error("frame {frame_number}: depth and color records are not paired")]
    Pairing { frame_number: u32 },
    #[error("frame numbers must strictly increase: {previous} followed by {next}")]
    Ordering { previous: u32, next: u32 },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

enum Record {
    Depth(DepthFrame),
    Color(ColorFrame),
}

/// Counts bytes consumed so truncation errors can report an offset.
struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.offset += n as u64;
        Ok(n)
    }
}

/// Incremental reader yielding [`FramePair`]s in file order.
pub struct StreamReader<R> {
    reader: CountingReader<R>,
    path: PathBuf,
    last_frame: Option<u32>,
    done: bool,
}

impl StreamReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StreamError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| StreamError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::with_path(BufReader::new(file), path.to_path_buf())
    }
}

impl<R: Read> StreamReader<R> {
    pub fn new(reader: R) -> Result<Self, StreamError> {
        Self::with_path(reader, PathBuf::from("<reader>"))
    }

    fn with_path(reader: R, path: PathBuf) -> Result<Self, StreamError> {
        let mut reader = CountingReader {
            inner: reader,
            offset: 0,
        };
        let mut magic = [0u8; 4];
        read_exact_or(&mut reader, &mut magic, &path, |_| {
            StreamError::Format("file shorter than the stream header".into())
        })?;
        if &magic != MAGIC {
            return Err(StreamError::Format(format!("bad magic {magic:?}")));
        }
        let mut version = [0u8; 2];
        read_exact_or(&mut reader, &mut version, &path, |_| {
            StreamError::Format("file shorter than the stream header".into())
        })?;
        let version = u16::from_le_bytes(version);
        if version != VERSION {
            return Err(StreamError::Format(format!("unsupported version {version}")));
        }
        Ok(Self {
            reader,
            path,
            last_frame: None,
            done: false,
        })
    }

    /// Reads one record; `Ok(None)` at a clean end of stream.
    fn read_record(&mut self) -> Result<Option<Record>, StreamError> {
        let start = self.reader.offset;
        let mut tag = [0u8; 1];
        loop {
            match self.reader.read(&mut tag) {
                Ok(0) => return Ok(None),
                Ok(_) => break,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(source) => {
                    return Err(StreamError::Io {
                        path: self.path.clone(),
                        source,
                    })
                }
            }
        }
        let record_type = tag[0];
        if record_type != RECORD_DEPTH && record_type != RECORD_COLOR {
            return Err(StreamError::RecordType {
                record_type,
                offset: start,
            });
        }
        let mut head = [0u8; (RECORD_HEADER_LEN - 1) as usize];
        let path = self.path.clone();
        read_exact_or(&mut self.reader, &mut head, &path, |off| StreamError::Truncated {
            offset: off,
        })?;
        let mut cursor = &head[..];
        let frame_number = cursor.read_u32::<LittleEndian>().unwrap();
        let timestamp_us = cursor.read_u64::<LittleEndian>().unwrap();
        let width = cursor.read_u16::<LittleEndian>().unwrap() as usize;
        let height = cursor.read_u16::<LittleEndian>().unwrap() as usize;

        let record = if record_type == RECORD_DEPTH {
            let mut bytes = vec![0u8; 2 * width * height];
            read_exact_or(&mut self.reader, &mut bytes, &path, |off| {
                StreamError::Truncated { offset: off }
            })?;
            let data = bytes
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect();
            Record::Depth(DepthFrame::new(frame_number, timestamp_us, width, height, data)?)
        } else {
            let mut data = vec![0u8; 3 * width * height];
            read_exact_or(&mut self.reader, &mut data, &path, |off| {
                StreamError::Truncated { offset: off }
            })?;
            Record::Color(ColorFrame::new(frame_number, timestamp_us, width, height, data)?)
        };
        Ok(Some(record))
    }

    fn next_pair(&mut self) -> Result<Option<FramePair>, StreamError> {
        let depth = match self.read_record()? {
            None => return Ok(None),
            Some(Record::Depth(d)) => d,
            Some(Record::Color(c)) => {
                return Err(StreamError::Pairing {
                    frame_number: c.frame_number(),
                })
            }
        };
        let n = depth.frame_number();
        let color = match self.read_record()? {
            Some(Record::Color(c)) if c.frame_number() == n => c,
            Some(_) | None => return Err(StreamError::Pairing { frame_number: n }),
        };
        if let Some(prev) = self.last_frame {
            if n <= prev {
                return Err(StreamError::Ordering {
                    previous: prev,
                    next: n,
                });
            }
        }
        self.last_frame = Some(n);
        Ok(Some(FramePair::new(depth, color)?))
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<FramePair, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_pair() {
            Ok(Some(pair)) => Some(Ok(pair)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn read_exact_or<R: Read>(
    reader: &mut CountingReader<R>,
    buf: &mut [u8],
    path: &Path,
    on_eof: impl FnOnce(u64) -> StreamError,
) -> Result<(), StreamError> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => return Err(on_eof(reader.offset)),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(source) => {
                return Err(StreamError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        }
    }
    Ok(())
}

/// Writes pairs one at a time, enforcing strictly increasing frame numbers.
pub struct StreamWriter<W: Write> {
    writer: W,
    path: PathBuf,
    last_frame: Option<u32>,
    written: usize,
}

impl StreamWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, StreamError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| StreamError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::with_path(BufWriter::new(file), path.to_path_buf())
    }
}

impl<W: Write> StreamWriter<W> {
    pub fn new(writer: W) -> Result<Self, StreamError> {
        Self::with_path(writer, PathBuf::from("<writer>"))
    }

    fn with_path(mut writer: W, path: PathBuf) -> Result<Self, StreamError> {
        let io_err = |source| StreamError::Io {
            path: path.clone(),
            source,
        };
        writer.write_all(MAGIC).map_err(io_err)?;
        writer
            .write_u16::<LittleEndian>(VERSION)
            .map_err(|source| StreamError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(Self {
            writer,
            path,
            last_frame: None,
            written: 0,
        })
    }

    pub fn write_pair(&mut self, pair: &FramePair) -> Result<(), StreamError> {
        let n = pair.frame_number();
        if let Some(prev) = self.last_frame {
            if n <= prev {
                return Err(StreamError::Ordering {
                    previous: prev,
                    next: n,
                });
            }
        }
        encode_depth(&mut self.writer, pair.depth()).map_err(|source| StreamError::Io {
            path: self.path.clone(),
            source,
        })?;
        encode_color(&mut self.writer, pair.color()).map_err(|source| StreamError::Io {
            path: self.path.clone(),
            source,
        })?;
        self.last_frame = Some(n);
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<W, StreamError> {
        self.writer.flush().map_err(|source| StreamError::Io {
            path: self.path.clone(),
            source,
        })?;
        Ok(self.writer)
    }
}

/// Serializes a single depth record (used to carry filtered depth across the
/// producer/consumer boundary of the pipeline).
pub fn encode_depth<W: Write>(w: &mut W, depth: &DepthFrame) -> io::Result<()> {
    w.write_u8(RECORD_DEPTH)?;
    w.write_u32::<LittleEndian>(depth.frame_number())?;
    w.write_u64::<LittleEndian>(depth.timestamp_us())?;
    w.write_u16::<LittleEndian>(depth.width() as u16)?;
    w.write_u16::<LittleEndian>(depth.height() as u16)?;
    let mut bytes = Vec::with_capacity(2 * depth.data().len());
    for v in depth.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

fn encode_color<W: Write>(w: &mut W, color: &ColorFrame) -> io::Result<()> {
    w.write_u8(RECORD_COLOR)?;
    w.write_u32::<LittleEndian>(color.frame_number())?;
    w.write_u64::<LittleEndian>(color.timestamp_us())?;
    w.write_u16::<LittleEndian>(color.width() as u16)?;
    w.write_u16::<LittleEndian>(color.height() as u16)?;
    w.write_all(color.data())
}

/// Inverse of [`encode_depth`].
pub fn decode_depth(bytes: &[u8]) -> Result<DepthFrame, StreamError> {
    let mut reader = CountingReader {
        inner: bytes,
        offset: 0,
    };
    let path = PathBuf::from("<depth record>");
    let mut head = [0u8; RECORD_HEADER_LEN as usize];
    read_exact_or(&mut reader, &mut head, &path, |off| StreamError::Truncated {
        offset: off,
    })?;
    if head[0] != RECORD_DEPTH {
        return Err(StreamError::RecordType {
            record_type: head[0],
            offset: 0,
        });
    }
    let mut cursor = &head[1..];
    let frame_number = cursor.read_u32::<LittleEndian>().unwrap();
    let timestamp_us = cursor.read_u64::<LittleEndian>().unwrap();
    let width = cursor.read_u16::<LittleEndian>().unwrap() as usize;
    let height = cursor.read_u16::<LittleEndian>().unwrap() as usize;
    let mut payload = vec![0u8; 2 * width * height];
    read_exact_or(&mut reader, &mut payload, &path, |off| StreamError::Truncated {
        offset: off,
    })?;
    let data = payload
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    Ok(DepthFrame::new(frame_number, timestamp_us, width, height, data)?)
}

/// Reads every pair of a stream file into memory.
pub fn read_stream(path: impl AsRef<Path>) -> Result<Vec<FramePair>, StreamError> {
    StreamReader::open(path)?.collect()
}

/// Writes `pairs` to `path`, returning the number of pairs written.
pub fn write_stream<'a, I>(pairs: I, path: impl AsRef<Path>) -> Result<usize, StreamError>
where
    I: IntoIterator<Item = &'a FramePair>,
{
    let mut writer = StreamWriter::create(path)?;
    for pair in pairs {
        writer.write_pair(pair)?;
    }
    let n = writer.written();
    writer.finish()?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(n: u32) -> FramePair {
        let depth = DepthFrame::new(n, n as u64 * 33_333, 3, 2, vec![0, 1, 2, 1000, 65535, n as u16])
            .unwrap();
        let color = ColorFrame::new(n, n as u64 * 33_333, 2, 1, vec![1, 2, 3, 4, 5, n as u8]).unwrap();
        FramePair::new(depth, color).unwrap()
    }

    fn to_bytes(pairs: &[FramePair]) -> Vec<u8> {
        let mut w = StreamWriter::new(Vec::new()).unwrap();
        for p in pairs {
            w.write_pair(p).unwrap();
        }
        w.finish().unwrap()
    }

    fn from_bytes(bytes: &[u8]) -> Result<Vec<FramePair>, StreamError> {
        StreamReader::new(bytes)?.collect()
    }

    #[test]
    fn header_only_is_empty() {
        let bytes = to_bytes(&[]);
        assert_eq!(bytes, b"VMSH\x01\x00");
        assert!(from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn single_pair_round_trip() {
        let p = pair(7);
        assert_eq!(from_bytes(&to_bytes(std::slice::from_ref(&p))).unwrap(), vec![p]);
    }

    #[test]
    fn record_layout_is_little_endian() {
        let bytes = to_bytes(&[pair(1)]);
        // depth record header right after the 6-byte file header
        assert_eq!(bytes[6], 0);
        assert_eq!(&bytes[7..11], &1u32.to_le_bytes());
        assert_eq!(&bytes[11..19], &33_333u64.to_le_bytes());
        assert_eq!(&bytes[19..21], &3u16.to_le_bytes());
        assert_eq!(&bytes[21..23], &2u16.to_le_bytes());
        assert_eq!(&bytes[23..25], &0u16.to_le_bytes());
        let color_at = 23 + 12;
        assert_eq!(bytes[color_at], 1);
        assert_eq!(bytes.len(), 6 + (17 + 12) + (17 + 6));
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(matches!(from_bytes(b"VMSX\x01\x00"), Err(StreamError::Format(_))));
        assert!(matches!(from_bytes(b"VMSH\x02\x00"), Err(StreamError::Format(_))));
        assert!(matches!(from_bytes(b"VM"), Err(StreamError::Format(_))));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = to_bytes(&[pair(1)]);
        let cut = &bytes[..bytes.len() - 2];
        match from_bytes(cut) {
            Err(StreamError::Truncated { offset }) => assert_eq!(offset, cut.len() as u64),
            other => panic!("expected truncation, got {other:?}"),
        }
        // cut inside a record header
        match from_bytes(&bytes[..10]) {
            Err(StreamError::Truncated { offset }) => assert_eq!(offset, 10),
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_depth_color_is_pairing_error() {
        let a = pair(3);
        let b = pair(4);
        let mut bytes = Vec::from(&b"VMSH\x01\x00"[..]);
        encode_depth(&mut bytes, a.depth()).unwrap();
        encode_color(&mut bytes, b.color()).unwrap();
        match from_bytes(&bytes) {
            Err(StreamError::Pairing { frame_number }) => assert_eq!(frame_number, 3),
            other => panic!("expected pairing error, got {other:?}"),
        }
        // color first
        let mut bytes = Vec::from(&b"VMSH\x01\x00"[..]);
        encode_color(&mut bytes, b.color()).unwrap();
        assert!(matches!(from_bytes(&bytes), Err(StreamError::Pairing { frame_number: 4 })));
    }

    #[test]
    fn write_rejects_non_monotonic() {
        let mut w = StreamWriter::new(Vec::new()).unwrap();
        w.write_pair(&pair(2)).unwrap();
        assert!(matches!(
            w.write_pair(&pair(1)),
            Err(StreamError::Ordering { previous: 2, next: 1 })
        ));
        assert!(w.write_pair(&pair(2)).is_err());
    }

    #[test]
    fn read_rejects_non_monotonic() {
        let a = pair(5);
        let b = pair(4);
        let mut bytes = Vec::from(&b"VMSH\x01\x00"[..]);
        for p in [&a, &b] {
            encode_depth(&mut bytes, p.depth()).unwrap();
            encode_color(&mut bytes, p.color()).unwrap();
        }
        let results: Vec<_> = StreamReader::new(&bytes[..]).unwrap().collect();
        assert!(results[0].is_ok());
        assert!(matches!(results[1], Err(StreamError::Ordering { previous: 5, next: 4 })));
    }

    #[test]
    fn depth_record_codec() {
        let p = pair(9);
        let mut buf = Vec::new();
        encode_depth(&mut buf, p.depth()).unwrap();
        assert_eq!(&decode_depth(&buf).unwrap(), p.depth());
        assert!(matches!(
            decode_depth(&buf[..buf.len() - 1]),
            Err(StreamError::Truncated { .. })
        ));
    }

    #[test]
    fn unknown_record_type() {
        let mut bytes = Vec::from(&b"VMSH\x01\x00"[..]);
        bytes.push(9);
        assert!(matches!(
            from_bytes(&bytes),
            Err(StreamError::RecordType { record_type: 9, offset: 6 })
        ));
    }
}
