//! Block-sparse application of the Lindblad generator.
//!
//! The basis is split into sectors: connected components of the coupling
//! graph of every Hamiltonian term. Collapse operators must map each sector
//! into a single sector (sectors are merged until they do). A density matrix
//! that starts block-structured stays block-structured, so only the active
//! `(row sector, column sector)` blocks are stored and propagated.
//!
//! With `Hm = -i (H(t) - (i/2) sum c'c)` the generator is
//! `drho = Hm rho + (Hm rho)' + sum c rho c'`, evaluated blockwise.
//!
//! Each block is stored row-major as a real plane followed by an imaginary
//! plane, which keeps the inner loops contiguous and vectorizable.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use super::dopri::OdeSystem;
use crate::error::{Error, Result};
use crate::fock::{DensityState, Operator};
use crate::model::TimeDependentHamiltonian;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.0[hi] = lo;
        true
    }
}

/// Partition of the basis into dynamically closed sectors.
#[derive(Clone, Debug)]
pub struct Sectors {
    pub of: Vec<usize>,
    pub local: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

impl Sectors {
    pub fn find(n: usize, couplings: &[&Operator], collapse: &[Operator]) -> Self {
        let mut uf = UnionFind((0..n).collect());
        for op in couplings {
            for (r, c, _) in op.nonzeros() {
                uf.union(r, c);
            }
        }
        let jump_nz: Vec<Vec<(usize, usize, C64)>> = collapse.iter().map(|c| c.nonzeros()).collect();
        // Merge targets until each collapse operator maps a sector into one sector.
        loop {
            let mut changed = false;
            for nz in &jump_nz {
                let mut target_of: Vec<Option<usize>> = vec![None; n];
                for &(r, c, _) in nz {
                    let src = uf.find(c);
                    let dst = uf.find(r);
                    match target_of[src] {
                        None => target_of[src] = Some(dst),
                        Some(d) if uf.find(d) != dst => {
                            changed |= uf.union(d, dst);
                        }
                        _ => {}
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut id_of_root = vec![usize::MAX; n];
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut of = vec![0; n];
        let mut local = vec![0; n];
        for i in 0..n {
            let root = uf.find(i);
            if id_of_root[root] == usize::MAX {
                id_of_root[root] = members.len();
                members.push(Vec::new());
            }
            let s = id_of_root[root];
            of[i] = s;
            local[i] = members[s].len();
            members[s].push(i);
        }
        Self { of, local, members }
    }

    pub fn count(&self) -> usize {
        self.members.len()
    }
}

/// CSR rows with local indices.
#[derive(Clone, Debug, Default)]
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl Csr {
    fn from_triplets(rows: usize, mut t: Vec<(usize, usize, C64)>) -> Self {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; rows + 1];
        for &(r, _, _) in &t {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            row_ptr,
            cols: t.iter().map(|x| x.1).collect(),
            vals: t.iter().map(|x| x.2).collect(),
        }
    }
}

/// Hamiltonian restricted to one sector: `Hm = base + sum_j (c_j fwd_j + conj(c_j) back_j)`.
struct HamBlock {
    pattern: Csr,
    base: Vec<C64>,
    /// Per oscillating term: `(slot, -i X[r,c], -i X'[r,c])`.
    terms: Vec<Vec<(usize, C64, C64)>>,
    vals: Vec<C64>,
}

/// `c` restricted to source sector `src`, mapping into sector `dst`.
struct JumpBlock {
    dst: usize,
    op: Csr,
}

struct Pair {
    s: usize,
    t: usize,
    offset: usize,
    rows: usize,
    cols: usize,
    partner: usize,
}

/// `block[dst] += L block[src] R'`.
struct JumpTerm {
    dst: usize,
    src: usize,
    left: usize,
    right: usize,
}

/// Where each stored block lives in the full density matrix.
#[derive(Clone, Debug)]
pub struct BlockLayout {
    dim: usize,
    members: Vec<Vec<usize>>,
    /// `(row sector, column sector, offset)`; offsets count reals.
    blocks: Vec<(usize, usize, usize)>,
    len: usize,
}

impl BlockLayout {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn pack(&self, rho: &DensityState) -> Vec<f64> {
        let m = rho.matrix();
        let mut y = vec![0.0; self.len];
        for &(s, t, offset) in &self.blocks {
            let (ms, mt) = (&self.members[s], &self.members[t]);
            let rc = ms.len() * mt.len();
            for (i, &gi) in ms.iter().enumerate() {
                for (j, &gj) in mt.iter().enumerate() {
                    let z = m[(gi, gj)];
                    y[offset + i * mt.len() + j] = z.re;
                    y[offset + rc + i * mt.len() + j] = z.im;
                }
            }
        }
        y
    }

    pub fn unpack(&self, y: &[f64]) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(s, t, offset) in &self.blocks {
            let (ms, mt) = (&self.members[s], &self.members[t]);
            let rc = ms.len() * mt.len();
            for (i, &gi) in ms.iter().enumerate() {
                for (j, &gj) in mt.iter().enumerate() {
                    let k = offset + i * mt.len() + j;
                    m[(gi, gj)] = C64::new(y[k], y[k + rc]);
                }
            }
        }
        m
    }

    /// Trace of the packed state.
    pub fn trace(&self, y: &[f64]) -> C64 {
        let mut tr = ZERO;
        for &(s, t, offset) in &self.blocks {
            if s == t {
                let d = self.members[s].len();
                for i in 0..d {
                    tr += C64::new(y[offset + i * d + i], y[offset + d * d + i * d + i]);
                }
            }
        }
        tr
    }
}

pub struct BlockLiouvillian {
    layout: BlockLayout,
    sectors: Sectors,
    hams: Vec<HamBlock>,
    jump_blocks: Vec<JumpBlock>,
    pairs: Vec<Pair>,
    jumps: Vec<JumpTerm>,
    omegas: Vec<(f64, f64)>,
    len: usize,
    scratch_a: Vec<f64>,
    scratch_t: Vec<f64>,
    scratch_x: Vec<f64>,
}

impl BlockLiouvillian {
    pub fn new(h: &TimeDependentHamiltonian, collapse: &[Operator], initial: &DensityState) -> Result<Self> {
        let dims = h.dims();
        let n = dims.total();
        for c in collapse {
            if c.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims.to_string(),
                    got: c.dims().to_string(),
                });
            }
        }
        if initial.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims.to_string(),
                got: initial.dims().to_string(),
            });
        }

        // Effective non-Hermitian part -(i/2) sum c'c.
        let mut damp = DMatrix::<C64>::zeros(n, n);
        for c in collapse {
            damp += c.matrix().adjoint() * c.matrix();
        }
        let damp = Operator::from_matrix(dims, damp)?;
        let mut couplings: Vec<&Operator> = vec![&h.constant, &damp];
        for term in &h.terms {
            couplings.push(&term.op);
        }
        let sectors = Sectors::find(n, &couplings, collapse);
        let ns = sectors.count();

        let minus_i = C64::new(0.0, -1.0);
        let mut hams = Vec::with_capacity(ns);
        for s in 0..ns {
            let mem = &sectors.members[s];
            let d = mem.len();
            let mut dense_base = vec![ZERO; d * d];
            let mut used = vec![false; d * d];
            for (li, &gi) in mem.iter().enumerate() {
                for (lj, &gj) in mem.iter().enumerate() {
                    let v = h.constant.get(gi, gj) - C64::new(0.0, 0.5) * damp.get(gi, gj);
                    dense_base[li * d + lj] = minus_i * v;
                    if v != ZERO {
                        used[li * d + lj] = true;
                    }
                    for term in &h.terms {
                        if term.op.get(gi, gj) != ZERO || term.op.get(gj, gi) != ZERO {
                            used[li * d + lj] = true;
                        }
                    }
                }
            }
            let trip: Vec<_> = (0..d * d)
                .filter(|&k| used[k])
                .map(|k| (k / d, k % d, dense_base[k]))
                .collect();
            let pattern = Csr::from_triplets(d, trip);
            let base = pattern.vals.clone();
            let mut terms = Vec::with_capacity(h.terms.len());
            for term in &h.terms {
                let mut list = Vec::new();
                for r in 0..d {
                    for slot in pattern.row_ptr[r]..pattern.row_ptr[r + 1] {
                        let c = pattern.cols[slot];
                        let (gr, gc) = (mem[r], mem[c]);
                        let fwd = term.op.get(gr, gc);
                        let back = term.op.get(gc, gr).conj();
                        if fwd != ZERO || back != ZERO {
                            list.push((slot, minus_i * fwd, minus_i * back));
                        }
                    }
                }
                terms.push(list);
            }
            let vals = base.clone();
            hams.push(HamBlock {
                pattern,
                base,
                terms,
                vals,
            });
        }

        // Collapse operators split by source sector.
        let mut jump_blocks = Vec::new();
        let mut jump_index: Vec<Vec<Option<usize>>> = Vec::new();
        for c in collapse {
            let mut per_src: Vec<Vec<(usize, usize, C64)>> = vec![Vec::new(); ns];
            let mut dst_of = vec![usize::MAX; ns];
            for (r, col, v) in c.nonzeros() {
                let src = sectors.of[col];
                dst_of[src] = sectors.of[r];
                per_src[src].push((sectors.local[r], sectors.local[col], v));
            }
            let mut idx = vec![None; ns];
            for src in 0..ns {
                if per_src[src].is_empty() {
                    continue;
                }
                let dst = dst_of[src];
                idx[src] = Some(jump_blocks.len());
                jump_blocks.push(JumpBlock {
                    dst,
                    op: Csr::from_triplets(sectors.members[dst].len(), std::mem::take(&mut per_src[src])),
                });
            }
            jump_index.push(idx);
        }

        // Active block pairs: nonzero initial blocks, closed under jumps.
        let mut active = vec![false; ns * ns];
        let rho = initial.matrix();
        for i in 0..n {
            for j in 0..n {
                if rho[(i, j)] != ZERO {
                    active[sectors.of[i] * ns + sectors.of[j]] = true;
                }
            }
        }
        loop {
            let mut changed = false;
            for idx in &jump_index {
                for s in 0..ns {
                    for t in 0..ns {
                        if !active[s * ns + t] {
                            continue;
                        }
                        if let (Some(l), Some(r)) = (idx[s], idx[t]) {
                            let k = jump_blocks[l].dst * ns + jump_blocks[r].dst;
                            if !active[k] {
                                active[k] = true;
                                changed = true;
                            }
                        }
                    }
                }
            }
            // Hermiticity: keep the set symmetric.
            for s in 0..ns {
                for t in 0..ns {
                    if active[s * ns + t] && !active[t * ns + s] {
                        active[t * ns + s] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let mut pair_of = vec![usize::MAX; ns * ns];
        let mut pairs = Vec::new();
        let mut offset = 0;
        for s in 0..ns {
            for t in 0..ns {
                if active[s * ns + t] {
                    let (rows, cols) = (sectors.members[s].len(), sectors.members[t].len());
                    pair_of[s * ns + t] = pairs.len();
                    pairs.push(Pair {
                        s,
                        t,
                        offset,
                        rows,
                        cols,
                        partner: 0,
                    });
                    offset += 2 * rows * cols;
                }
            }
        }
        for p in pairs.iter_mut() {
            p.partner = pair_of[p.t * ns + p.s];
        }
        let mut jumps = Vec::new();
        for idx in &jump_index {
            for (pi, p) in pairs.iter().enumerate() {
                if let (Some(l), Some(r)) = (idx[p.s], idx[p.t]) {
                    let dst = pair_of[jump_blocks[l].dst * ns + jump_blocks[r].dst];
                    jumps.push(JumpTerm {
                        dst,
                        src: pi,
                        left: l,
                        right: r,
                    });
                }
            }
        }
        let max_sector = sectors.members.iter().map(Vec::len).max().unwrap_or(0);
        let omegas = h.terms.iter().map(|t| (t.amplitude, t.omega)).collect();
        let layout = BlockLayout {
            dim: n,
            members: sectors.members.clone(),
            blocks: pairs.iter().map(|p| (p.s, p.t, p.offset)).collect(),
            len: offset,
        };
        Ok(Self {
            layout,
            sectors,
            hams,
            jump_blocks,
            pairs,
            jumps,
            omegas,
            len: offset,
            scratch_a: vec![0.0; offset],
            scratch_t: vec![0.0; 2 * max_sector * max_sector],
            scratch_x: vec![0.0; 2 * max_sector * max_sector],
        })
    }

    pub fn sector_count(&self) -> usize {
        self.sectors.count()
    }

    pub fn block_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn full_dim(&self) -> usize {
        self.layout.dim
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn pack(&self, rho: &DensityState) -> Vec<f64> {
        self.layout.pack(rho)
    }

    pub fn unpack(&self, y: &[f64]) -> DMatrix<C64> {
        self.layout.unpack(y)
    }

    fn update_hamiltonian(&mut self, t: f64) {
        let coeffs: Vec<C64> = self
            .omegas
            .iter()
            .map(|&(amp, w)| C64::from_polar(amp, -w * t))
            .collect();
        for hb in &mut self.hams {
            hb.vals.copy_from_slice(&hb.base);
            for (c, list) in coeffs.iter().zip(&hb.terms) {
                let cc = c.conj();
                for &(slot, f, b) in list {
                    hb.vals[slot] += c * f + cc * b;
                }
            }
        }
    }
}

/// `out += a x` on split real and imaginary parts.
#[inline(always)]
fn caxpy(out_re: &mut [f64], out_im: &mut [f64], a: C64, x_re: &[f64], x_im: &[f64]) {
    let n = out_re.len();
    let (out_im, x_re, x_im) = (&mut out_im[..n], &x_re[..n], &x_im[..n]);
    for k in 0..n {
        out_re[k] += a.re * x_re[k] - a.im * x_im[k];
        out_im[k] += a.re * x_im[k] + a.im * x_re[k];
    }
}

/// `out = M x` for CSR `M` (`rows` rows) and a planar `x` with `cols` columns.
fn spmm(m: &Csr, vals: &[C64], rows: usize, cols: usize, x: &[f64], xrows: usize, out: &mut [f64]) {
    let (x_re, x_im) = x[..2 * xrows * cols].split_at(xrows * cols);
    let (o_re, o_im) = out[..2 * rows * cols].split_at_mut(rows * cols);
    o_re.fill(0.0);
    o_im.fill(0.0);
    for r in 0..rows {
        let (ore, oim) = (&mut o_re[r * cols..(r + 1) * cols], &mut o_im[r * cols..(r + 1) * cols]);
        for slot in m.row_ptr[r]..m.row_ptr[r + 1] {
            let k = m.cols[slot];
            caxpy(
                ore,
                oim,
                vals[slot],
                &x_re[k * cols..(k + 1) * cols],
                &x_im[k * cols..(k + 1) * cols],
            );
        }
    }
}

impl OdeSystem for BlockLiouvillian {
    fn len(&self) -> usize {
        self.len
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        self.update_hamiltonian(t);
        let a = &mut self.scratch_a;
        for p in &self.pairs {
            let hb = &self.hams[p.s];
            let n = 2 * p.rows * p.cols;
            spmm(
                &hb.pattern,
                &hb.vals,
                p.rows,
                p.cols,
                &y[p.offset..p.offset + n],
                p.rows,
                &mut a[p.offset..p.offset + n],
            );
        }
        // drho_st = A_st + (A_ts)'.
        for p in &self.pairs {
            let q = &self.pairs[p.partner];
            let rc = p.rows * p.cols;
            let (ap_re, ap_im) = a[p.offset..p.offset + 2 * rc].split_at(rc);
            let (aq_re, aq_im) = a[q.offset..q.offset + 2 * rc].split_at(rc);
            let (d_re, d_im) = dy[p.offset..p.offset + 2 * rc].split_at_mut(rc);
            for i in 0..p.rows {
                for j in 0..p.cols {
                    let k = i * p.cols + j;
                    let kt = j * q.cols + i;
                    d_re[k] = ap_re[k] + aq_re[kt];
                    d_im[k] = ap_im[k] - aq_im[kt];
                }
            }
        }
        // Jumps: J_dst += L rho_src R' = (R (L rho_src)')', collected in `a`.
        a.fill(0.0);
        for jt in &self.jumps {
            let src = &self.pairs[jt.src];
            let dst = &self.pairs[jt.dst];
            let left = &self.jump_blocks[jt.left].op;
            let right = &self.jump_blocks[jt.right].op;
            let tm = &mut self.scratch_t;
            spmm(
                left,
                &left.vals,
                dst.rows,
                src.cols,
                &y[src.offset..src.offset + 2 * src.rows * src.cols],
                src.rows,
                tm,
            );
            // X = T': src.cols x dst.rows.
            let x = &mut self.scratch_x;
            let trc = dst.rows * src.cols;
            for i in 0..dst.rows {
                for l in 0..src.cols {
                    x[l * dst.rows + i] = tm[i * src.cols + l];
                    x[trc + l * dst.rows + i] = -tm[trc + i * src.cols + l];
                }
            }
            // Q = R X: dst.cols x dst.rows, reusing the T buffer.
            spmm(right, &right.vals, dst.cols, dst.rows, x, src.cols, tm);
            let rc = dst.rows * dst.cols;
            let (j_re, j_im) = a[dst.offset..dst.offset + 2 * rc].split_at_mut(rc);
            for i in 0..dst.rows {
                for j in 0..dst.cols {
                    j_re[i * dst.cols + j] += tm[j * dst.rows + i];
                    j_im[i * dst.cols + j] -= tm[rc + j * dst.rows + i];
                }
            }
        }
        // drho_st += (J_st + J_ts')/2, so drho is Hermitian for any y.
        for p in &self.pairs {
            let q = &self.pairs[p.partner];
            let rc = p.rows * p.cols;
            let (jp_re, jp_im) = a[p.offset..p.offset + 2 * rc].split_at(rc);
            let (jq_re, jq_im) = a[q.offset..q.offset + 2 * rc].split_at(rc);
            let (d_re, d_im) = dy[p.offset..p.offset + 2 * rc].split_at_mut(rc);
            for i in 0..p.rows {
                for j in 0..p.cols {
                    let k = i * p.cols + j;
                    let kt = j * q.cols + i;
                    d_re[k] += 0.5 * (jp_re[k] + jq_re[kt]);
                    d_im[k] += 0.5 * (jp_im[k] - jq_im[kt]);
                }
            }
        }
    }
}

/// Dense reference generator, used to cross-check the block form.
pub fn dense_rhs(h: &TimeDependentHamiltonian, collapse: &[Operator], t: f64, rho: &DMatrix<C64>) -> DMatrix<C64> {
    let hm = h.at(t);
    let hm = hm.matrix();
    let i = C64::new(0.0, 1.0);
    let mut out = (hm * rho - rho * hm) * (-i);
    for c in collapse {
        let c = c.matrix();
        let cd = c.adjoint();
        let cdc = &cd * c;
        out += c * rho * &cd - (&cdc * rho + rho * &cdc) * C64::new(0.5, 0.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{Dims, StateVector};
    use crate::model::{self, FrameChoice, FullSystem, NoiseParams, SystemParams, ToneParams};
    use nalgebra::DVector;

    fn small_system() -> (FullSystem, Vec<Operator>) {
        let mut p = SystemParams::reference();
        p.delta_an = model::mhz(40.0);
        let sys = FullSystem::new(&p, 10, 3).unwrap();
        let mut noise = NoiseParams::reference();
        noise.n_th = 0.1;
        noise.gamma_phi = 1e4;
        let c = model::collapse_operators(&noise, sys.dims).unwrap();
        (sys, c)
    }

    fn generic_state(dims: Dims, parity_only: bool) -> DensityState {
        let n = dims.total();
        let amps = DVector::from_fn(n, |i, _| {
            let (na, nb) = dims.split(i);
            if parity_only && (na + nb) % 2 == 0 {
                C64::new(0.0, 0.0)
            } else {
                C64::new(1.0 / (1.0 + i as f64), 0.3 * (i as f64).sin())
            }
        });
        StateVector::from_amplitudes(dims, amps)
            .unwrap()
            .normalized()
            .to_density()
    }

    #[test]
    fn block_rhs_matches_dense_generator() {
        let (sys, c) = small_system();
        let tone = ToneParams::correction(model::mhz(0.5), sys.params.delta_an + model::mhz(0.3));
        for frame in [FrameChoice::FullCosine, FrameChoice::AncillaRwa] {
            let h = sys.time_dependent(&[tone], frame);
            for parity_only in [true, false] {
                let rho = generic_state(sys.dims, parity_only);
                let mut l = BlockLiouvillian::new(&h, &c, &rho).unwrap();
                let y = l.pack(&rho);
                let mut dy = vec![0.0; y.len()];
                let t = 3.3e-8;
                l.rhs(t, &y, &mut dy);
                let got = l.unpack(&dy);
                let want = dense_rhs(&h, &c, t, rho.matrix());
                let scale = want.norm();
                assert!((got - want).norm() < 1e-12 * scale, "{frame:?} {parity_only}");
            }
        }
    }

    #[test]
    fn parity_sectors_are_detected() {
        let (sys, c) = small_system();
        let tone = ToneParams::correction(model::mhz(0.5), sys.params.delta_an);
        let h = sys.time_dependent(&[tone], FrameChoice::AncillaRwa);
        let rho = generic_state(sys.dims, true);
        let l = BlockLiouvillian::new(&h, &c, &rho).unwrap();
        assert_eq!(l.sector_count(), 2);
        // Odd-odd populated, even-even reached by jumps; no coherences between them.
        assert_eq!(l.block_count(), 2);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let (sys, c) = small_system();
        let h = sys.time_dependent(&[], FrameChoice::AncillaRwa);
        let rho = generic_state(sys.dims, false);
        let l = BlockLiouvillian::new(&h, &c, &rho).unwrap();
        assert!((l.unpack(&l.pack(&rho)) - rho.matrix()).norm() < 1e-15);
    }

    #[test]
    fn derivative_is_hermitian_for_any_input() {
        let (sys, c) = small_system();
        let h = sys.time_dependent(&[], FrameChoice::AncillaRwa);
        let rho = generic_state(sys.dims, false);
        let mut l = BlockLiouvillian::new(&h, &c, &rho).unwrap();
        let y: Vec<f64> = (0..l.len()).map(|k| (k as f64 * 0.7).sin()).collect();
        let mut dy = vec![0.0; y.len()];
        l.rhs(0.0, &y, &mut dy);
        let d = l.unpack(&dy);
        assert!(d.norm() > 1.0);
        assert!((&d - d.adjoint()).norm() < 1e-12 * d.norm());
    }
}
