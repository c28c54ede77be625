//! Matrix-product states and the exact network they induce.
//!
//! A state comes in as one rank-3 tensor per site with index order
//! (left bond, physical, right bond) and unit bonds at both chain ends.
//! Two sweeps put it in simultaneous canonical form: a left-to-right SVD
//! sweep produces left-orthonormal tensors A_i plus a trailing scalar, and a
//! right-to-left sweep over T_n = A_n * scalar produces right-orthonormal
//! tensors B_i together with carries G_i = U S, so that the center tensors
//! C_i (= T_i recorded during the second sweep) satisfy
//! C_i = A_i G_{i+1} = G_i B_i exactly.
//!
//! Patch i of the network takes psi_i = vec(C_i) (row-major over
//! (left, physical, right)) and the connection
//! V_{i,i+1} = X_i kron conj(Y_{i+1}) with X_i the matricized A_i and
//! Y_{i+1} the matricized B_{i+1}. B B^dagger = 1 then gives
//! V psi_{i+1} = psi_i at floating-point accuracy, and single-site operators
//! act as 1 kron op kron 1.
//!
//! Containers use magic `QGNMPS1\0`, little-endian u64 dimensions, and
//! row-major complex f64 tensor data.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64 as C64;

use crate::fock::site_op_name;
use crate::lattice::{build_single_site_patch_graph, LatticeSpec, PathStyle};
use crate::linalg::{kron, svd_thin, CMat, CVec};
use crate::network::io::{
    read_complex_vec, read_count, write_complex_slice, write_u64, ContainerError,
};
use crate::network::Qgn;

use super::ConstructionError;

pub(crate) const MPS_MAGIC: &[u8; 8] = b"QGNMPS1\0";

#[derive(Debug, Clone)]
pub struct MpsState {
    tensors: Vec<Array3<C64>>,
}

impl MpsState {
    /// Validates the chain: at least one site, unit boundary bonds, matching
    /// interior bonds, and no zero dimension anywhere.
    pub fn new(tensors: Vec<Array3<C64>>) -> Result<Self, ConstructionError> {
        if tensors.is_empty() {
            return Err(ConstructionError::Dimension("empty tensor chain".into()));
        }
        let n = tensors.len();
        for (i, t) in tensors.iter().enumerate() {
            let (l, d, r) = t.dim();
            if l == 0 || d == 0 || r == 0 {
                return Err(ConstructionError::Dimension(format!(
                    "site {i} tensor has a zero dimension: ({l}, {d}, {r})"
                )));
            }
        }
        if tensors[0].dim().0 != 1 || tensors[n - 1].dim().2 != 1 {
            return Err(ConstructionError::Dimension(
                "boundary bonds must have dimension 1".into(),
            ));
        }
        for i in 0..n - 1 {
            if tensors[i].dim().2 != tensors[i + 1].dim().0 {
                return Err(ConstructionError::Dimension(format!(
                    "bond between sites {i} and {} has mismatched dimensions {} and {}",
                    i + 1,
                    tensors[i].dim().2,
                    tensors[i + 1].dim().0
                )));
            }
        }
        Ok(MpsState { tensors })
    }

    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensor(&self, i: usize) -> &Array3<C64> {
        &self.tensors[i]
    }

    pub fn phys_dim(&self, i: usize) -> usize {
        self.tensors[i].dim().1
    }

    /// Full-state dimension: the product of all physical dimensions.
    pub fn full_dim(&self) -> usize {
        self.tensors.iter().map(|t| t.dim().1).product()
    }

    /// Contracts the chain into a dense state vector. Site 0 is the least
    /// significant digit of the index, matching the bit convention of the
    /// ambient-space bases.
    pub fn to_full_state(&self) -> CVec {
        let mut acc = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
        for t in &self.tensors {
            let (l, d, r) = t.dim();
            let rows = acc.nrows();
            let mut next = Array2::zeros((rows * d, r));
            for x in 0..rows {
                for s in 0..d {
                    for rr in 0..r {
                        let mut acc_val = C64::new(0.0, 0.0);
                        for ll in 0..l {
                            acc_val += acc[(x, ll)] * t[(ll, s, rr)];
                        }
                        next[(x + s * rows, rr)] = acc_val;
                    }
                }
            }
            acc = next;
        }
        Array1::from_iter(acc.column(0).iter().copied())
    }
}

fn matricize_left(t: &Array3<C64>) -> CMat {
    let (l, d, r) = t.dim();
    let mut m = Array2::zeros((l * d, r));
    for a in 0..l {
        for s in 0..d {
            for b in 0..r {
                m[(a * d + s, b)] = t[(a, s, b)];
            }
        }
    }
    m
}

fn matricize_right(t: &Array3<C64>) -> CMat {
    let (l, d, r) = t.dim();
    let mut m = Array2::zeros((l, d * r));
    for a in 0..l {
        for s in 0..d {
            for b in 0..r {
                m[(a, s * r + b)] = t[(a, s, b)];
            }
        }
    }
    m
}

fn tensorize_left(m: &CMat, l: usize, d: usize) -> Array3<C64> {
    let r = m.ncols();
    Array3::from_shape_fn((l, d, r), |(a, s, b)| m[(a * d + s, b)])
}

fn tensorize_right(m: &CMat, d: usize, r: usize) -> Array3<C64> {
    let l = m.nrows();
    Array3::from_shape_fn((l, d, r), |(a, s, b)| m[(a, s * r + b)])
}

fn contract_right(t: &Array3<C64>, g: &CMat) -> Array3<C64> {
    let (l, d, _) = t.dim();
    let k = g.ncols();
    let prod = matricize_left(t).dot(g);
    Array3::from_shape_fn((l, d, k), |(a, s, b)| prod[(a * d + s, b)])
}

struct CanonicalForm {
    a: Vec<Array3<C64>>,
    b: Vec<Option<Array3<C64>>>,
    c: Vec<Array3<C64>>,
}

fn canonicalize(mps: &MpsState) -> Result<CanonicalForm, ConstructionError> {
    let n = mps.n_sites();
    let mut a: Vec<Array3<C64>> = Vec::with_capacity(n);
    let mut carry = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
    for i in 0..n {
        let t = mps.tensor(i);
        let (_, d, r) = t.dim();
        let merged = tensorize_right(&carry.dot(&matricize_right(t)), d, r);
        let (lm, dm, _) = merged.dim();
        let (u, s, vt) = svd_thin(&matricize_left(&merged))?;
        a.push(tensorize_left(&u, lm, dm));
        let mut sv = vt;
        for (r, &sval) in s.iter().enumerate() {
            for c in 0..sv.ncols() {
                sv[(r, c)] *= C64::new(sval, 0.0);
            }
        }
        carry = sv;
    }
    let nu = carry[(0, 0)];
    let scale = nu.norm();
    if scale < 1e-14 {
        return Err(ConstructionError::Dimension("state has zero norm".into()));
    }
    let phase = nu / scale;

    let mut b: Vec<Option<Array3<C64>>> = vec![None; n];
    let mut c: Vec<Array3<C64>> = Vec::with_capacity(n);
    let mut t = a[n - 1].mapv(|x| x * phase);
    for i in (1..n).rev() {
        c.push(t.clone());
        let (_, d, r) = t.dim();
        let (u, s, vt) = svd_thin(&matricize_right(&t))?;
        b[i] = Some(tensorize_right(&vt, d, r));
        let mut g = u;
        for col in 0..s.len() {
            for row in 0..g.nrows() {
                g[(row, col)] *= C64::new(s[col], 0.0);
            }
        }
        t = contract_right(&a[i - 1], &g);
    }
    c.push(t);
    c.reverse();
    Ok(CanonicalForm { a, b, c })
}

/// The exact network of a matrix-product state. Patch i holds
/// psi_i = vec(C_i) and each named d x d matrix in `site_ops` as
/// 1 kron op kron 1; the chain connections come from the canonical-form
/// tensors. The input state is normalized internally (its phase is kept).
pub fn mps_to_qgn(
    mps: &MpsState,
    site_ops: &[(String, CMat)],
) -> Result<Qgn, ConstructionError> {
    let n = mps.n_sites();
    for (name, op) in site_ops {
        if op.nrows() != op.ncols() {
            return Err(ConstructionError::Dimension(format!(
                "site operator {name:?} is not square"
            )));
        }
    }
    let chain = LatticeSpec::uniform(vec![n], false)?;
    let graph = build_single_site_patch_graph(&chain, PathStyle::Snake)?;

    let form = canonicalize(mps)?;
    let mut psis = Vec::with_capacity(n);
    let mut tables: Vec<BTreeMap<String, CMat>> = Vec::with_capacity(n);
    for i in 0..n {
        let ci = &form.c[i];
        let (l, d, r) = ci.dim();
        let mut psi = CVec::zeros(l * d * r);
        for a in 0..l {
            for s in 0..d {
                for bcol in 0..r {
                    psi[(a * d + s) * r + bcol] = ci[(a, s, bcol)];
                }
            }
        }
        psis.push(psi);
        let mut table = BTreeMap::new();
        let eye_l: CMat = Array2::eye(l);
        let eye_r: CMat = Array2::eye(r);
        for (base, op) in site_ops {
            if op.nrows() != d {
                return Err(ConstructionError::Dimension(format!(
                    "site operator {base:?} is {}x{}, site {i} has physical dimension {d}",
                    op.nrows(),
                    op.ncols()
                )));
            }
            table.insert(site_op_name(base, i), kron(&kron(&eye_l, op), &eye_r));
        }
        tables.push(table);
    }

    let mut edges = BTreeMap::new();
    for i in 0..n.saturating_sub(1) {
        let x = matricize_left(&form.a[i]);
        let bnext = form.b[i + 1]
            .as_ref()
            .expect("right sweep defines B for every site past the first");
        let y = matricize_right(bnext).mapv(|v| v.conj());
        edges.insert((i, i + 1), kron(&x, &y));
    }
    Ok(Qgn::new(graph, psis, tables, edges)?)
}

/// Writes an MPS container: magic, site count, then per site the three
/// dimensions and the row-major tensor data.
pub fn write_mps<W: Write>(mps: &MpsState, w: &mut W) -> Result<(), ContainerError> {
    w.write_all(MPS_MAGIC)?;
    write_u64(w, mps.n_sites() as u64)?;
    for i in 0..mps.n_sites() {
        let t = mps.tensor(i);
        let (l, d, r) = t.dim();
        write_u64(w, l as u64)?;
        write_u64(w, d as u64)?;
        write_u64(w, r as u64)?;
        let data: Vec<C64> = t.iter().copied().collect();
        write_complex_slice(w, &data)?;
    }
    Ok(())
}

pub fn read_mps<R: Read>(r: &mut R) -> Result<MpsState, ContainerError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MPS_MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let n = read_count(r, "site count")?;
    if n == 0 {
        return Err(ContainerError::Corrupt("container holds zero sites".into()));
    }
    let mut tensors = Vec::with_capacity(n);
    for i in 0..n {
        let l = read_count(r, "left bond")?;
        let d = read_count(r, "physical dimension")?;
        let rr = read_count(r, "right bond")?;
        let len = l
            .checked_mul(d)
            .and_then(|v| v.checked_mul(rr))
            .ok_or_else(|| ContainerError::Corrupt(format!("site {i} dimensions overflow")))?;
        let data = read_complex_vec(r, len)?;
        let tensor = Array3::from_shape_vec((l, d, rr), data)
            .map_err(|e| ContainerError::Corrupt(format!("site {i} tensor: {e}")))?;
        tensors.push(tensor);
    }
    MpsState::new(tensors).map_err(|e| ContainerError::Corrupt(e.to_string()))
}

pub fn save_mps(mps: &MpsState, path: impl AsRef<Path>) -> Result<(), ContainerError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mps(mps, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_mps(path: impl AsRef<Path>) -> Result<MpsState, ContainerError> {
    let mut r = BufReader::new(File::open(path)?);
    read_mps(&mut r)
}
