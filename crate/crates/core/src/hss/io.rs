//! Binary serialization of HSS matrices.
//!
//! Layout (all integers little-endian): a fixed header with magic and
//! version, the global shape, the node table (index ranges, levels, tree
//! links, ranks), then per node the seven optional generator payloads as
//! flagged dense column-major complex blocks. The format is self-describing
//! enough to validate on load: the node table must reproduce exactly the
//! partition tree implied by the stored shape and leaf size.

use super::{HssMatrix, HssTree};
use crate::dense::{CMat, C64};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"HSSB";
const VERSION: u32 = 1;
const NONE_IDX: u64 = u64::MAX;
/// Upper bound on a single payload's entry count, to fail fast on corrupt
/// headers instead of attempting an absurd allocation.
const MAX_ENTRIES: u64 = 1 << 34;

pub fn save_hss(a: &HssMatrix, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_hss(a, &mut w)?;
    w.flush()
}

pub fn load_hss(path: &Path) -> io::Result<HssMatrix> {
    read_hss(&mut BufReader::new(File::open(path)?))
}

pub fn write_hss<W: Write>(a: &HssMatrix, w: &mut W) -> io::Result<()> {
    let t = a.tree();
    w.write_all(&MAGIC)?;
    put_u32(w, VERSION)?;
    put_u64(w, t.num_rows() as u64)?;
    put_u64(w, t.num_cols() as u64)?;
    put_u64(w, t.leaf_size() as u64)?;
    put_u64(w, t.len() as u64)?;
    for i in 0..t.len() {
        let n = t.node(i);
        put_u64(w, n.row0 as u64)?;
        put_u64(w, n.row1 as u64)?;
        put_u64(w, n.col0 as u64)?;
        put_u64(w, n.col1 as u64)?;
        put_u64(w, n.level as u64)?;
        put_u64(w, n.parent.map_or(NONE_IDX, |p| p as u64))?;
        let (c1, c2) = n.children.map_or((NONE_IDX, NONE_IDX), |(a, b)| {
            (a as u64, b as u64)
        });
        put_u64(w, c1)?;
        put_u64(w, c2)?;
        put_u64(w, a.node(i).ku as u64)?;
        put_u64(w, a.node(i).kv as u64)?;
    }
    for i in 0..t.len() {
        let n = a.node(i);
        for m in [&n.d, &n.u, &n.v, &n.b12, &n.b21, &n.r, &n.w] {
            put_matrix(w, m.as_ref())?;
        }
    }
    Ok(())
}

pub fn read_hss<R: Read>(r: &mut R) -> io::Result<HssMatrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(bad("not an HSS matrix file (bad magic)"));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(bad(&format!(
            "unsupported format version {} (expected {})",
            version, VERSION
        )));
    }
    let num_rows = get_usize(r)?;
    let num_cols = get_usize(r)?;
    let leaf_size = get_usize(r)?;
    let num_nodes = get_usize(r)?;
    if num_rows == 0 || num_cols == 0 || leaf_size == 0 {
        return Err(bad("degenerate shape in header"));
    }
    let tree = HssTree::new(num_rows, num_cols, leaf_size);
    if tree.len() != num_nodes {
        return Err(bad(&format!(
            "node table length {} does not match the shape's tree ({})",
            num_nodes,
            tree.len()
        )));
    }
    let mut ranks = Vec::with_capacity(num_nodes);
    for i in 0..num_nodes {
        let row0 = get_usize(r)?;
        let row1 = get_usize(r)?;
        let col0 = get_usize(r)?;
        let col1 = get_usize(r)?;
        let level = get_usize(r)?;
        let parent = get_opt_idx(r)?;
        let c1 = get_opt_idx(r)?;
        let c2 = get_opt_idx(r)?;
        let ku = get_usize(r)?;
        let kv = get_usize(r)?;
        let n = tree.node(i);
        let children = match (c1, c2) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => return Err(bad("half-specified children in node table")),
        };
        if (n.row0, n.row1, n.col0, n.col1) != (row0, row1, col0, col1)
            || n.level != level
            || n.parent != parent
            || n.children != children
        {
            return Err(bad(&format!("node table entry {} is inconsistent", i)));
        }
        ranks.push((ku, kv));
    }
    let mut a = HssMatrix::empty(tree);
    for i in 0..num_nodes {
        let (ku, kv) = ranks[i];
        let node = a.node_mut(i);
        node.ku = ku;
        node.kv = kv;
        node.d = get_matrix(r)?;
        node.u = get_matrix(r)?;
        node.v = get_matrix(r)?;
        node.b12 = get_matrix(r)?;
        node.b21 = get_matrix(r)?;
        node.r = get_matrix(r)?;
        node.w = get_matrix(r)?;
    }
    Ok(a)
}

fn bad(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_matrix<W: Write>(w: &mut W, m: Option<&CMat>) -> io::Result<()> {
    match m {
        None => w.write_all(&[0u8]),
        Some(m) => {
            w.write_all(&[1u8])?;
            put_u64(w, m.nrows() as u64)?;
            put_u64(w, m.ncols() as u64)?;
            let mut buf = Vec::with_capacity(16 * 1024);
            for v in m.data() {
                buf.extend_from_slice(&v.re.to_le_bytes());
                buf.extend_from_slice(&v.im.to_le_bytes());
                if buf.len() >= 16 * 1024 {
                    w.write_all(&buf)?;
                    buf.clear();
                }
            }
            w.write_all(&buf)
        }
    }
}

fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_usize<R: Read>(r: &mut R) -> io::Result<usize> {
    let v = get_u64(r)?;
    usize::try_from(v).map_err(|_| bad("integer field exceeds platform size"))
}

fn get_opt_idx<R: Read>(r: &mut R) -> io::Result<Option<usize>> {
    let v = get_u64(r)?;
    if v == NONE_IDX {
        Ok(None)
    } else {
        usize::try_from(v)
            .map(Some)
            .map_err(|_| bad("index field exceeds platform size"))
    }
}

fn get_matrix<R: Read>(r: &mut R) -> io::Result<Option<CMat>> {
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    match flag[0] {
        0 => Ok(None),
        1 => {
            let nrows = get_u64(r)?;
            let ncols = get_u64(r)?;
            let entries = nrows
                .checked_mul(ncols)
                .filter(|&e| e <= MAX_ENTRIES)
                .ok_or_else(|| bad("matrix payload too large"))?;
            let mut data = Vec::with_capacity(entries as usize);
            let mut buf = [0u8; 16];
            for _ in 0..entries {
                r.read_exact(&mut buf)?;
                let re = f64::from_le_bytes(buf[0..8].try_into().unwrap());
                let im = f64::from_le_bytes(buf[8..16].try_into().unwrap());
                data.push(C64::new(re, im));
            }
            Ok(Some(CMat::from_parts(nrows as usize, ncols as usize, data)))
        }
        f => Err(bad(&format!("bad matrix presence flag {}", f))),
    }
}
