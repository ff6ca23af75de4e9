//! Flat-buffer protocol for out-of-process symbol coders.
//!
//! A request is written to the coder's stdin and the reply read from its
//! stdout, one request per process. All integers are little endian.
//!
//! ```text
//! request  := "HBCR" version:u8 op:u8 reserved:u16 tables count:u32 index:u32*count payload
//! tables   := n:u32 { precision:u32 offset:i32 len:u32 cdf:u32*len }*n
//! payload  := symbols:i32*count                  (op = 1, encode)
//!           | nbytes:u32 bytes:u8*nbytes          (op = 2, decode)
//! reply    := "HBCA" status:u8 body
//! body     := nbytes:u32 bytes                    (encode ok)
//!           | count:u32 symbols:i32*count         (decode ok)
//!           | len:u32 utf8-message                (status != 0)
//! ```

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};

use super::cdf::CdfTable;
use super::{CoderId, SymbolCoder};
use crate::error::{Error, Result};

const REQUEST_MAGIC: &[u8; 4] = b"HBCR";
const REPLY_MAGIC: &[u8; 4] = b"HBCA";
const VERSION: u8 = 1;
const OP_ENCODE: u8 = 1;
const OP_DECODE: u8 = 2;

pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(data: &'a [u8], what: &'static str) -> Self {
        ByteReader { data, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{} ends at byte {} while reading {n} more",
                self.what,
                self.data.len()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
}

fn put_tables(out: &mut Vec<u8>, tables: &[CdfTable]) {
    out.extend((tables.len() as u32).to_le_bytes());
    for t in tables {
        out.extend(t.precision_bits.to_le_bytes());
        out.extend(t.offset.to_le_bytes());
        out.extend((t.cdf.len() as u32).to_le_bytes());
        for c in &t.cdf {
            out.extend(c.to_le_bytes());
        }
    }
}

fn get_tables(r: &mut ByteReader) -> Result<Vec<CdfTable>> {
    let n = r.u32()? as usize;
    let mut tables = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let precision_bits = r.u32()?;
        let offset = r.i32()?;
        let len = r.u32()? as usize;
        let cdf = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let t = CdfTable {
            precision_bits,
            offset,
            cdf,
        };
        t.validate()?;
        tables.push(t);
    }
    Ok(tables)
}

fn header(op: u8) -> Vec<u8> {
    let mut out = REQUEST_MAGIC.to_vec();
    out.extend([VERSION, op, 0, 0]);
    out
}

pub fn encode_request(tables: &[CdfTable], table_index: &[u32], symbols: &[i32]) -> Vec<u8> {
    let mut out = header(OP_ENCODE);
    put_tables(&mut out, tables);
    out.extend((table_index.len() as u32).to_le_bytes());
    table_index.iter().for_each(|t| out.extend(t.to_le_bytes()));
    symbols.iter().for_each(|s| out.extend(s.to_le_bytes()));
    out
}

pub fn decode_request(tables: &[CdfTable], table_index: &[u32], bytes: &[u8]) -> Vec<u8> {
    let mut out = header(OP_DECODE);
    put_tables(&mut out, tables);
    out.extend((table_index.len() as u32).to_le_bytes());
    table_index.iter().for_each(|t| out.extend(t.to_le_bytes()));
    out.extend((bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
    out
}

fn error_reply(msg: &str) -> Vec<u8> {
    let mut out = REPLY_MAGIC.to_vec();
    out.push(1);
    out.extend((msg.len() as u32).to_le_bytes());
    out.extend_from_slice(msg.as_bytes());
    out
}

/// Server side: answers one request with the given coder.
pub fn handle_request(coder: &dyn SymbolCoder, request: &[u8]) -> Vec<u8> {
    match try_handle(coder, request) {
        Ok(body) => {
            let mut out = REPLY_MAGIC.to_vec();
            out.push(0);
            out.extend(body);
            out
        }
        Err(e) => error_reply(&e.to_string()),
    }
}

fn try_handle(coder: &dyn SymbolCoder, request: &[u8]) -> Result<Vec<u8>> {
    let mut r = ByteReader::new(request, "coder request");
    if r.take(4)? != REQUEST_MAGIC {
        return Err(Error::External("bad request magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::External(format!("unsupported protocol version {version}")));
    }
    let op = r.u8()?;
    r.u16()?;
    let tables = get_tables(&mut r)?;
    let count = r.u32()? as usize;
    let index = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let mut body = Vec::new();
    match op {
        OP_ENCODE => {
            let symbols = (0..count).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
            let bytes = coder.encode(&tables, &index, &symbols)?;
            body.extend((bytes.len() as u32).to_le_bytes());
            body.extend(bytes);
        }
        OP_DECODE => {
            let n = r.u32()? as usize;
            let bytes = r.take(n)?;
            let symbols = coder.decode(&tables, &index, bytes)?;
            body.extend((symbols.len() as u32).to_le_bytes());
            symbols.iter().for_each(|s| body.extend(s.to_le_bytes()));
        }
        other => return Err(Error::External(format!("unknown op {other}"))),
    }
    Ok(body)
}

/// Reads one request from `input` and writes the reply to `output`.
pub fn serve(coder: &dyn SymbolCoder, mut input: impl Read, mut output: impl Write) -> Result<()> {
    let mut req = Vec::new();
    input.read_to_end(&mut req)?;
    output.write_all(&handle_request(coder, &req))?;
    output.flush()?;
    Ok(())
}

fn parse_reply(reply: &[u8]) -> Result<ByteReader<'_>> {
    let mut r = ByteReader::new(reply, "coder reply");
    if r.take(4)? != REPLY_MAGIC {
        return Err(Error::External("bad reply magic".into()));
    }
    if r.u8()? != 0 {
        let n = r.u32()? as usize;
        let msg = String::from_utf8_lossy(r.take(n)?).into_owned();
        return Err(Error::External(msg));
    }
    Ok(r)
}

pub fn parse_encode_reply(reply: &[u8]) -> Result<Vec<u8>> {
    let mut r = parse_reply(reply)?;
    let n = r.u32()? as usize;
    Ok(r.take(n)?.to_vec())
}

pub fn parse_decode_reply(reply: &[u8]) -> Result<Vec<i32>> {
    let mut r = parse_reply(reply)?;
    let n = r.u32()? as usize;
    (0..n).map(|_| r.i32()).collect()
}

/// A coder running in a child process that speaks the protocol above.
#[derive(Clone, Debug)]
pub struct ExternalCoder {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub id: CoderId,
}

impl ExternalCoder {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, id: CoderId) -> Self {
        ExternalCoder {
            program: program.into(),
            args,
            id,
        }
    }

    fn roundtrip(&self, request: &[u8]) -> Result<Vec<u8>> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::External(format!("spawning {}: {e}", self.program.display())))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let req = request.to_vec();
        let writer = std::thread::spawn(move || stdin.write_all(&req));
        let out = child.wait_with_output()?;
        writer
            .join()
            .map_err(|_| Error::External("request writer panicked".into()))??;
        if !out.status.success() {
            return Err(Error::External(format!("coder exited with {}", out.status)));
        }
        Ok(out.stdout)
    }
}

impl SymbolCoder for ExternalCoder {
    fn id(&self) -> CoderId {
        self.id
    }

    fn encode(&self, tables: &[CdfTable], table_index: &[u32], symbols: &[i32]) -> Result<Vec<u8>> {
        super::check_request(tables, table_index, symbols.len())?;
        parse_encode_reply(&self.roundtrip(&encode_request(tables, table_index, symbols))?)
    }

    fn decode(&self, tables: &[CdfTable], table_index: &[u32], bytes: &[u8]) -> Result<Vec<i32>> {
        super::check_request(tables, table_index, table_index.len())?;
        parse_decode_reply(&self.roundtrip(&decode_request(tables, table_index, bytes))?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{gaussian_table, ReferenceCoder};
    use super::*;

    #[test]
    fn in_process_protocol_roundtrip() {
        let tables = vec![gaussian_table(0.5, 2.0).unwrap(), gaussian_table(-1.0, 0.3).unwrap()];
        let idx = vec![0, 1, 1, 0, 0];
        let syms = vec![3, -1, -1, 0, 12];
        let reply = handle_request(&ReferenceCoder, &encode_request(&tables, &idx, &syms));
        let bytes = parse_encode_reply(&reply).unwrap();
        assert_eq!(bytes, ReferenceCoder.encode(&tables, &idx, &syms).unwrap());
        let reply = handle_request(&ReferenceCoder, &decode_request(&tables, &idx, &bytes));
        assert_eq!(parse_decode_reply(&reply).unwrap(), syms);
    }

    #[test]
    fn errors_travel_as_replies() {
        let reply = handle_request(&ReferenceCoder, b"nope");
        assert!(matches!(parse_encode_reply(&reply), Err(Error::External(_))));
        let tables = vec![gaussian_table(0.0, 1.0).unwrap()];
        let req = decode_request(&tables, &[0, 0, 0], &[0, 1]);
        let reply = handle_request(&ReferenceCoder, &req);
        match parse_decode_reply(&reply) {
            Err(Error::External(msg)) => assert!(msg.contains("truncated"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn serve_over_io() {
        let tables = vec![gaussian_table(0.0, 1.0).unwrap()];
        let req = encode_request(&tables, &[0, 0], &[1, -1]);
        let mut out = Vec::new();
        serve(&ReferenceCoder, &req[..], &mut out).unwrap();
        assert!(parse_encode_reply(&out).is_ok());
    }
}
