//! Binary container for network states.
//!
//! Layout (all integers u64 little-endian, all matrices row-major complex
//! pairs of f64): magic, sites/dimension/patch counts, patch site lists, the
//! optional covering path, the edge list, then per-patch wavefunctions and
//! named operator tables, then one connection block per listed edge. Patch
//! adjacency and bridge paths are recomputed on load, so a file only carries
//! what cannot be derived.

use super::{NetworkError, Qgn};
use crate::lattice::{LatticeError, PatchGraph};
use crate::linalg::{CMat, CVec};
use num_complex::Complex64 as C64;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const QGN_MAGIC: &[u8; 8] = b"QGNNET1\0";

/// Guard against absurd counts in corrupt headers.
const MAX_COUNT: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a network container (bad magic)")]
    BadMagic,
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64, ContainerError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_count<R: Read>(r: &mut R, what: &str) -> Result<usize, ContainerError> {
    let v = read_u64(r)?;
    if v > MAX_COUNT {
        return Err(ContainerError::Corrupt(format!("{what} count {v} is implausible")));
    }
    Ok(v as usize)
}

pub(crate) fn write_complex_slice<W: Write>(w: &mut W, data: &[C64]) -> std::io::Result<()> {
    for z in data {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_complex_vec<R: Read>(r: &mut R, len: usize) -> Result<Vec<C64>, ContainerError> {
    let mut bytes = vec![0u8; len * 16];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(16)
        .map(|ch| {
            C64::new(
                f64::from_le_bytes(ch[0..8].try_into().unwrap()),
                f64::from_le_bytes(ch[8..16].try_into().unwrap()),
            )
        })
        .collect())
}

pub fn write_qgn<W: Write>(qgn: &Qgn, w: &mut W) -> Result<(), ContainerError> {
    w.write_all(QGN_MAGIC)?;
    let graph = qgn.graph();
    write_u64(w, graph.n_sites() as u64)?;
    write_u64(w, graph.ndims() as u64)?;
    write_u64(w, graph.n_patches() as u64)?;
    for patch in graph.patches() {
        write_u64(w, patch.len() as u64)?;
        for &s in patch {
            write_u64(w, s as u64)?;
        }
    }
    match graph.covering_path() {
        None => write_u64(w, 0)?,
        Some(path) => {
            write_u64(w, 1)?;
            write_u64(w, path.len() as u64)?;
            for &p in path {
                write_u64(w, p as u64)?;
            }
        }
    }
    write_u64(w, graph.n_edges() as u64)?;
    for (i, j) in graph.edges() {
        write_u64(w, i as u64)?;
        write_u64(w, j as u64)?;
    }
    for p in 0..qgn.n_patches() {
        let psi = qgn.psi(p);
        write_u64(w, psi.len() as u64)?;
        write_complex_slice(w, psi.as_slice().expect("contiguous"))?;
        let table = qgn.op_table(p);
        write_u64(w, table.len() as u64)?;
        for (name, mat) in table {
            write_u64(w, name.len() as u64)?;
            w.write_all(name.as_bytes())?;
            write_complex_slice(w, mat.as_slice().expect("contiguous"))?;
        }
    }
    for v in qgn.edges().values() {
        write_complex_slice(w, v.as_slice().expect("contiguous"))?;
    }
    Ok(())
}

pub fn read_qgn<R: Read>(r: &mut R) -> Result<Qgn, ContainerError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != QGN_MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let n_sites = read_count(r, "site")?;
    let ndims = read_count(r, "dimension")?;
    let n_patches = read_count(r, "patch")?;
    let mut patches = Vec::with_capacity(n_patches);
    for _ in 0..n_patches {
        let len = read_count(r, "patch-site")?;
        let mut sites = Vec::with_capacity(len);
        for _ in 0..len {
            sites.push(read_count(r, "site index")?);
        }
        patches.push(sites);
    }
    let covering_path = match read_u64(r)? {
        0 => None,
        1 => {
            let len = read_count(r, "covering-path")?;
            let mut path = Vec::with_capacity(len);
            for _ in 0..len {
                path.push(read_count(r, "covering-path entry")?);
            }
            Some(path)
        }
        other => {
            return Err(ContainerError::Corrupt(format!(
                "covering-path flag must be 0 or 1, got {other}"
            )))
        }
    };
    let n_edges = read_count(r, "edge")?;
    let mut edge_list = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let i = read_count(r, "edge endpoint")?;
        let j = read_count(r, "edge endpoint")?;
        edge_list.push((i, j));
    }
    let graph = PatchGraph::from_parts(n_sites, ndims, patches, edge_list.clone(), covering_path)?;

    let mut psis = Vec::with_capacity(n_patches);
    let mut tables = Vec::with_capacity(n_patches);
    for p in 0..n_patches {
        let chi = read_count(r, "patch dimension")?;
        if chi == 0 {
            return Err(ContainerError::Corrupt(format!("patch {p} has dimension 0")));
        }
        let data = read_complex_vec(r, chi)?;
        psis.push(CVec::from(data));
        let n_ops = read_count(r, "operator")?;
        let mut table = BTreeMap::new();
        for _ in 0..n_ops {
            let name_len = read_count(r, "operator-name byte")?;
            if name_len > 4096 {
                return Err(ContainerError::Corrupt(format!(
                    "operator name of {name_len} bytes is implausible"
                )));
            }
            let mut raw = vec![0u8; name_len];
            r.read_exact(&mut raw)?;
            let name = String::from_utf8(raw)
                .map_err(|_| ContainerError::Corrupt("operator name is not UTF-8".into()))?;
            let data = read_complex_vec(r, chi * chi)?;
            let mat = CMat::from_shape_vec((chi, chi), data)
                .map_err(|e| ContainerError::Corrupt(e.to_string()))?;
            table.insert(name, mat);
        }
        tables.push(table);
    }
    let mut edges = BTreeMap::new();
    for (i, j) in edge_list {
        if i >= n_patches || j >= n_patches {
            return Err(ContainerError::Corrupt(format!("edge ({i}, {j}) out of range")));
        }
        let (ci, cj) = (psis[i].len(), psis[j].len());
        let data = read_complex_vec(r, ci * cj)?;
        let mat = CMat::from_shape_vec((ci, cj), data)
            .map_err(|e| ContainerError::Corrupt(e.to_string()))?;
        edges.insert((i, j), mat);
    }
    Ok(Qgn::new(graph, psis, tables, edges)?)
}

pub fn save_qgn(qgn: &Qgn, path: impl AsRef<Path>) -> Result<(), ContainerError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_qgn(qgn, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_qgn(path: impl AsRef<Path>) -> Result<Qgn, ContainerError> {
    let mut r = BufReader::new(File::open(path)?);
    read_qgn(&mut r)
}
