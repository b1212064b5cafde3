//! Binary parameter files.
//!
//! Layout (little endian): magic `SVAECKPT`, `u32` version, `u32` header
//! length followed by UTF-8 header text, `u32` tensor count, then a name
//! table of (`u32` name length, name, `u32` rank, `u32` extents...) and
//! finally every tensor's `f32` payload in table order.

use std::io::{self, Read, Write};

use super::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"SVAECKPT";
const VERSION: u32 = 1;

/// Named tensors plus a free-form text header.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(header: impl Into<String>, store: &ParamStore) -> Self {
        Self {
            header: header.into(),
            tensors: store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    /// Copies values into a store with the same names and shapes.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), String> {
        if self.tensors.len() != store.len() {
            return Err(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                store.len()
            ));
        }
        for (name, t) in &self.tensors {
            let id = store.find(name).ok_or_else(|| format!("unknown tensor `{name}`"))?;
            let dst = store.get_mut(id);
            if dst.shape() != t.shape() {
                return Err(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    dst.shape()
                ));
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}

fn put_u32(w: &mut impl Write, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> io::Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> io::Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION as usize)?;
    put_u32(w, ckpt.header.len())?;
    w.write_all(ckpt.header.as_bytes())?;
    put_u32(w, ckpt.tensors.len())?;
    for (name, t) in &ckpt.tensors {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(w, d)?;
        }
    }
    for (_, t) in &ckpt.tensors {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> io::Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not a checkpoint file"));
    }
    let version = get_u32(r)?;
    if version != VERSION as usize {
        return Err(invalid(format!("unsupported checkpoint version {version}")));
    }
    let hlen = get_u32(r)?;
    let mut header = vec![0u8; hlen];
    r.read_exact(&mut header)?;
    let header = String::from_utf8(header).map_err(|_| invalid("header is not UTF-8"))?;
    let count = get_u32(r)?;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = get_u32(r)?;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| invalid("tensor name is not UTF-8"))?;
        let rank = get_u32(r)?;
        let shape = (0..rank).map(|_| get_u32(r)).collect::<io::Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| invalid(e.to_string()))?;
        tensors.push((name, t));
    }
    Ok(Checkpoint { header, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut store = ParamStore::new();
        store.add("enc.w", Tensor::from_fn(&[2, 3], |i| i as f32 * 0.5 - 1.0));
        store.add_buffer("bn.mean", Tensor::full(&[4], 0.25));
        let ckpt = Checkpoint::from_store("kind = \"x\"\n", &store);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ckpt);

        let mut other = store.clone();
        other.get_mut(other.find("enc.w").unwrap()).data_mut().fill(9.0);
        back.load_into(&mut other).unwrap();
        assert_eq!(other, store);
    }

    #[test]
    fn rejects_bad_magic_and_shape() {
        assert!(read_checkpoint(&mut &b"NOTACKPT\x01\0\0\0"[..]).is_err());
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[2]));
        let mut ckpt = Checkpoint::from_store("", &store);
        ckpt.tensors[0].1 = Tensor::zeros(&[3]);
        assert!(ckpt.load_into(&mut store).is_err());
    }
}
