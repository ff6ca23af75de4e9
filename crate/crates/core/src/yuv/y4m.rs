//! YUV4MPEG2 reading and writing for 8-bit 4:2:0 content.
//!
//! Header tokens are kept verbatim so that a read followed by a write
//! reproduces the input byte-for-byte.

use std::io::{BufRead, BufReader, Read, Write};

use super::frame::{Frame420, Plane};
use crate::error::{Error, Result};

const SIGNATURE: &str = "YUV4MPEG2";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Y4mHeader {
    pub width: usize,
    pub height: usize,
    pub framerate: (u32, u32),
    /// Every header token after the signature, in stream order.
    pub tokens: Vec<String>,
    /// Parameters attached to each `FRAME` marker, indexed by frame.
    pub frame_params: Vec<String>,
}

impl Y4mHeader {
    pub fn new(width: usize, height: usize, framerate: (u32, u32)) -> Self {
        Y4mHeader {
            width,
            height,
            framerate,
            tokens: vec![
                format!("W{width}"),
                format!("H{height}"),
                format!("F{}:{}", framerate.0, framerate.1),
                "Ip".into(),
                "A1:1".into(),
                "C420jpeg".into(),
            ],
            frame_params: Vec::new(),
        }
    }

    fn parse(line: &str) -> Result<Self> {
        let mut parts = line.split(' ');
        match parts.next() {
            Some(SIGNATURE) => {}
            other => {
                return Err(Error::Parse(format!(
                    "missing YUV4MPEG2 signature, found {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut width = None;
        let mut height = None;
        let mut framerate = (25, 1);
        let mut tokens = Vec::new();
        for tok in parts {
            if tok.is_empty() {
                return Err(Error::Parse("empty header token".into()));
            }
            let (tag, val) = tok.split_at(1);
            let bad = || Error::Parse(format!("malformed header token {tok:?}"));
            match tag {
                "W" => width = Some(val.parse::<usize>().map_err(|_| bad())?),
                "H" => height = Some(val.parse::<usize>().map_err(|_| bad())?),
                "F" => {
                    let (n, d) = val.split_once(':').ok_or_else(bad)?;
                    framerate = (
                        n.parse().map_err(|_| bad())?,
                        d.parse().map_err(|_| bad())?,
                    );
                }
                "C" => match val {
                    "420" | "420jpeg" | "420paldv" | "420mpeg2" => {}
                    other => {
                        return Err(Error::UnsupportedFormat(format!(
                            "chroma tag C{other}; only 8-bit 4:2:0 is supported"
                        )))
                    }
                },
                "I" | "A" | "X" => {}
                _ => return Err(bad()),
            }
            tokens.push(tok.to_string());
        }
        let width = width.ok_or_else(|| Error::Parse("header lacks W token".into()))?;
        let height = height.ok_or_else(|| Error::Parse("header lacks H token".into()))?;
        if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
            return Err(Error::Dimension(format!(
                "{width}x{height} is not a valid 4:2:0 size"
            )));
        }
        Ok(Y4mHeader {
            width,
            height,
            framerate,
            tokens,
            frame_params: Vec::new(),
        })
    }

    fn write_line(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(SIGNATURE.as_bytes())?;
        for t in &self.tokens {
            out.write_all(b" ")?;
            out.write_all(t.as_bytes())?;
        }
        out.write_all(b"\n")?;
        Ok(())
    }
}

/// Streaming reader yielding frames in display order.
pub struct Y4mReader<R: Read> {
    inner: BufReader<R>,
    header: Y4mHeader,
}

impl<R: Read> Y4mReader<R> {
    pub fn new(reader: R) -> Result<Self> {
        let mut inner = BufReader::new(reader);
        let line = read_line(&mut inner)?
            .ok_or_else(|| Error::Parse("empty stream".into()))?;
        let header = Y4mHeader::parse(&line)?;
        Ok(Y4mReader { inner, header })
    }

    pub fn header(&self) -> &Y4mHeader {
        &self.header
    }

    pub fn next_frame(&mut self) -> Result<Option<Frame420>> {
        let Some(line) = read_line(&mut self.inner)? else {
            return Ok(None);
        };
        let params = match line.strip_prefix("FRAME") {
            Some(rest) if rest.is_empty() || rest.starts_with(' ') => rest.to_string(),
            _ => {
                return Err(Error::Parse(format!(
                    "expected FRAME marker, found {:?}",
                    line.chars().take(16).collect::<String>()
                )))
            }
        };
        let (w, h) = (self.header.width, self.header.height);
        let mut buf = vec![0u8; w * h * 3 / 2];
        self.inner.read_exact(&mut buf).map_err(|_| {
            Error::Truncated(format!(
                "frame {} is shorter than {} bytes",
                self.header.frame_params.len(),
                buf.len()
            ))
        })?;
        self.header.frame_params.push(params);
        let (yb, rest) = buf.split_at(w * h);
        let (ub, vb) = rest.split_at(w * h / 4);
        let frame = Frame420::new(
            Plane::from_u8(w, h, yb)?,
            Plane::from_u8(w / 2, h / 2, ub)?,
            Plane::from_u8(w / 2, h / 2, vb)?,
        )?;
        Ok(Some(frame))
    }

    pub fn into_header(self) -> Y4mHeader {
        self.header
    }
}

fn read_line(r: &mut impl BufRead) -> Result<Option<String>> {
    let mut bytes = Vec::new();
    let n = r.read_until(b'\n', &mut bytes)?;
    if n == 0 {
        return Ok(None);
    }
    if bytes.last() != Some(&b'\n') {
        return Err(Error::Truncated("line without terminating newline".into()));
    }
    bytes.pop();
    String::from_utf8(bytes)
        .map(Some)
        .map_err(|_| Error::Parse("non-ASCII header line".into()))
}

pub fn read_y4m(reader: impl Read) -> Result<(Y4mHeader, Vec<Frame420>)> {
    let mut r = Y4mReader::new(reader)?;
    let mut frames = Vec::new();
    while let Some(f) = r.next_frame()? {
        frames.push(f);
    }
    Ok((r.into_header(), frames))
}

pub fn write_y4m(out: &mut impl Write, header: &Y4mHeader, frames: &[Frame420]) -> Result<()> {
    for (i, f) in frames.iter().enumerate() {
        if f.width() != header.width || f.height() != header.height {
            return Err(Error::Dimension(format!(
                "frame {i} is {}x{}, header says {}x{}",
                f.width(),
                f.height(),
                header.width,
                header.height
            )));
        }
    }
    header.write_line(out)?;
    for (i, f) in frames.iter().enumerate() {
        out.write_all(b"FRAME")?;
        if let Some(p) = header.frame_params.get(i) {
            out.write_all(p.as_bytes())?;
        }
        out.write_all(b"\n")?;
        out.write_all(&f.y.to_u8())?;
        out.write_all(&f.u.to_u8())?;
        out.write_all(&f.v.to_u8())?;
    }
    Ok(())
}

pub fn write_y4m_bytes(header: &Y4mHeader, frames: &[Frame420]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_y4m(&mut out, header, frames)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds a Y4M stream byte by byte, independent of the writer.
    fn fixture(w: usize, h: usize, frames: &[Vec<u8>]) -> Vec<u8> {
        let mut s = format!("YUV4MPEG2 W{w} H{h} F30:1 Ip A1:1 C420jpeg\n").into_bytes();
        for f in frames {
            s.extend_from_slice(b"FRAME\n");
            s.extend_from_slice(f);
        }
        s
    }

    #[test]
    fn reads_two_frame_fixture() {
        let f0: Vec<u8> = (0..24).collect();
        let f1: Vec<u8> = (100..124).collect();
        let bytes = fixture(4, 4, &[f0.clone(), f1.clone()]);
        let (hdr, frames) = read_y4m(&bytes[..]).unwrap();
        assert_eq!((hdr.width, hdr.height), (4, 4));
        assert_eq!(hdr.framerate, (30, 1));
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].y.to_u8(), f0[..16].to_vec());
        assert_eq!(frames[0].u.to_u8(), f0[16..20].to_vec());
        assert_eq!(frames[0].v.to_u8(), f0[20..24].to_vec());
        assert_eq!(frames[1].y.to_u8(), f1[..16].to_vec());
        assert_eq!(write_y4m_bytes(&hdr, &frames).unwrap(), bytes);
    }

    #[test]
    fn rejects_444() {
        let bytes = b"YUV4MPEG2 W4 H4 F30:1 C444\n".to_vec();
        assert!(matches!(
            read_y4m(&bytes[..]),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn malformed_token_is_named() {
        let bytes = b"YUV4MPEG2 W4 Hx4 F30:1\n".to_vec();
        match read_y4m(&bytes[..]) {
            Err(Error::Parse(msg)) => assert!(msg.contains("Hx4"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let bytes = b"YUV4MPEG W4 H4\n".to_vec();
        assert!(matches!(read_y4m(&bytes[..]), Err(Error::Parse(_))));
    }

    #[test]
    fn black_frame_and_empty_list() {
        let hdr = Y4mHeader::new(4, 4, (25, 1));
        let black = Frame420::constant(4, 4, 0.0, 0.5, 0.5).unwrap();
        let out = write_y4m_bytes(&hdr, &[black]).unwrap();
        let header_len = out.iter().position(|&b| b == b'\n').unwrap() + 1 + 6;
        assert_eq!(&out[header_len..header_len + 16], &[0u8; 16]);

        let empty = write_y4m_bytes(&hdr, &[]).unwrap();
        assert_eq!(
            empty,
            b"YUV4MPEG2 W4 H4 F25:1 Ip A1:1 C420jpeg\n".to_vec()
        );
        let (_, frames) = read_y4m(&empty[..]).unwrap();
        assert!(frames.is_empty());
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let hdr = Y4mHeader::new(4, 4, (25, 1));
        let a = Frame420::constant(4, 4, 0.0, 0.5, 0.5).unwrap();
        let b = Frame420::constant(6, 4, 0.0, 0.5, 0.5).unwrap();
        assert!(matches!(
            write_y4m_bytes(&hdr, &[a, b]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn truncated_frame() {
        let mut bytes = fixture(4, 4, &[(0..24).collect()]);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_y4m(&bytes[..]), Err(Error::Truncated(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn roundtrip_is_byte_identical(
                hw in (1usize..5, 1usize..5),
                nframes in 0usize..3,
                seed in any::<u64>(),
                params in prop::bool::ANY,
            ) {
                let (w, h) = (hw.0 * 2, hw.1 * 2);
                let mut state = seed;
                let frames: Vec<Vec<u8>> = (0..nframes)
                    .map(|_| (0..w * h * 3 / 2).map(|_| {
                        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        (state >> 56) as u8
                    }).collect())
                    .collect();
                let mut s = if params {
                    format!("YUV4MPEG2 W{w} H{h} F24000:1001 It A0:0 C420mpeg2 XYSCSS=420MPEG2\n").into_bytes()
                } else {
                    format!("YUV4MPEG2 W{w} H{h} F25:1\n").into_bytes()
                };
                for f in &frames {
                    s.extend_from_slice(if params { b"FRAME Ixyz\n" as &[u8] } else { b"FRAME\n" });
                    s.extend_from_slice(f);
                }
                let (hdr, decoded) = read_y4m(&s[..]).unwrap();
                prop_assert_eq!(decoded.len(), nframes);
                prop_assert_eq!(write_y4m_bytes(&hdr, &decoded).unwrap(), s);
            }
        }
    }
}
