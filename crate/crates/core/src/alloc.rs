//! PuD-aware memory allocation: a region pool spread over subarrays,
//! worst-fit first allocation, label-aligned allocation, and the mat label
//! translation table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::isa::{MatLabel, MatRange};

/// A region is one mat's row-set of `region_rows` rows in one subarray.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionId {
    pub subarray: usize,
    pub mat: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolShape {
    pub subarrays: usize,
    pub mats: usize,
    pub slots_per_mat: usize,
}

impl PoolShape {
    pub fn capacity(&self) -> usize {
        self.subarrays * self.mats * self.slots_per_mat
    }
}

/// Maps the `r`-th pre-allocated region to a physical region: round-robin
/// over subarrays, then across mats, then down the slots of a mat.
pub fn interleave(shape: &PoolShape, r: usize) -> Option<RegionId> {
    let subarray = r % shape.subarrays;
    let k = r / shape.subarrays;
    let (mat, slot) = (k % shape.mats, k / shape.mats);
    (slot < shape.slots_per_mat).then_some(RegionId { subarray, mat, slot })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPool {
    shape: PoolShape,
    /// `free[s][m][slot]` is true for a pre-allocated region not in use.
    free: Vec<Vec<Vec<bool>>>,
    counts: Vec<usize>,
    total: usize,
}

impl RegionPool {
    pub fn preallocate(shape: PoolShape, n_pages: usize, regions_per_page: usize) -> Self {
        let mut pool = Self {
            shape,
            free: vec![vec![vec![false; shape.slots_per_mat]; shape.mats]; shape.subarrays],
            counts: vec![0; shape.subarrays],
            total: 0,
        };
        for r in 0..n_pages * regions_per_page {
            let Some(id) = interleave(&shape, r) else { break };
            pool.free[id.subarray][id.mat][id.slot] = true;
            pool.counts[id.subarray] += 1;
            pool.total += 1;
        }
        pool
    }

    pub fn shape(&self) -> &PoolShape {
        &self.shape
    }

    pub fn free_counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn free_total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn total_regions(&self) -> usize {
        self.total
    }

    pub fn is_free(&self, id: RegionId) -> bool {
        self.free[id.subarray][id.mat][id.slot]
    }

    fn take(&mut self, id: RegionId) {
        debug_assert!(self.is_free(id));
        self.free[id.subarray][id.mat][id.slot] = false;
        self.counts[id.subarray] -= 1;
    }

    fn give(&mut self, id: RegionId) {
        self.free[id.subarray][id.mat][id.slot] = true;
        self.counts[id.subarray] += 1;
    }

    fn free_slots(&self, subarray: usize, mat: usize) -> usize {
        self.free[subarray][mat].iter().filter(|&&f| f).count()
    }

    fn common_slot(&self, subarray: usize, mats: std::ops::Range<usize>) -> Option<usize> {
        (0..self.shape.slots_per_mat).find(|&s| mats.clone().all(|m| self.free[subarray][m][s]))
    }

    /// Best contiguous run of `len` mats (start a multiple of `align`) with a
    /// common free slot: the run whose least-free mat has the most free
    /// slots, lowest start on ties, lowest common slot.
    fn best_run(&self, subarray: usize, len: usize, align: usize) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, usize)> = None;
        let mut start = 0;
        while start + len <= self.shape.mats {
            if let Some(slot) = self.common_slot(subarray, start..start + len) {
                let score = (start..start + len).map(|m| self.free_slots(subarray, m)).min().unwrap_or(0);
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, start, slot));
                }
            }
            start += align;
        }
        best.map(|(_, start, slot)| (start, slot))
    }

    /// Picks `k` free regions of one subarray, contiguous and slot-aligned
    /// when possible.
    fn pick(&self, subarray: usize, k: usize, align: usize) -> Vec<RegionId> {
        if let Some((start, slot)) = self.best_run(subarray, k, align) {
            return (start..start + k).map(|mat| RegionId { subarray, mat, slot }).collect();
        }
        let mut out = Vec::with_capacity(k);
        'outer: for slot in 0..self.shape.slots_per_mat {
            for mat in 0..self.shape.mats {
                if out.len() == k {
                    break 'outer;
                }
                if self.free[subarray][mat][slot] {
                    out.push(RegionId { subarray, mat, slot });
                }
            }
        }
        out
    }

    /// Subarrays ordered by free count, most first, lowest index on ties.
    fn worst_fit_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.shape.subarrays).collect();
        order.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]).then(a.cmp(&b)));
        order
    }

    fn worst_fit(&self, k: usize, align: usize) -> Option<Vec<RegionId>> {
        if self.free_total() < k {
            return None;
        }
        let mut picked = Vec::with_capacity(k);
        for s in self.worst_fit_order() {
            let want = (k - picked.len()).min(self.counts[s]);
            if want == 0 {
                continue;
            }
            picked.extend(self.pick(s, want, align));
            if picked.len() == k {
                break;
            }
        }
        (picked.len() == k).then_some(picked)
    }
}

/// Translation from (mat label, process) to where the label's operands live.
/// Open addressing with linear probing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatTranslationTable {
    slots: Vec<Option<((MatLabel, u32), (usize, MatRange))>>,
    len: usize,
}

impl Default for MatTranslationTable {
    fn default() -> Self {
        Self { slots: vec![None; 16], len: 0 }
    }
}

impl MatTranslationTable {
    fn hash(label: MatLabel, pid: u32) -> u64 {
        let key = ((pid as u64) << 32) | label.0 as u64;
        key.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(29)
    }

    fn probe(&self, key: (MatLabel, u32)) -> usize {
        let mask = self.slots.len() - 1;
        let mut i = Self::hash(key.0, key.1) as usize & mask;
        loop {
            match &self.slots[i] {
                Some((k, _)) if *k != key => i = (i + 1) & mask,
                _ => return i,
            }
        }
    }

    pub fn insert(&mut self, label: MatLabel, pid: u32, subarray: usize, range: MatRange) {
        if (self.len + 1) * 2 > self.slots.len() {
            let grown = vec![None; self.slots.len() * 2];
            let old = std::mem::replace(&mut self.slots, grown);
            self.len = 0;
            for ((l, p), (s, r)) in old.into_iter().flatten() {
                self.insert(l, p, s, r);
            }
        }
        let i = self.probe((label, pid));
        if self.slots[i].is_none() {
            self.len += 1;
        }
        self.slots[i] = Some(((label, pid), (subarray, range)));
    }

    /// Subarray and mat range of a label.
    pub fn lookup(&self, label: MatLabel, pid: u32) -> Result<(usize, MatRange)> {
        self.slots[self.probe((label, pid))]
            .map(|(_, v)| v)
            .ok_or(Error::UnresolvedLabel { label: label.to_string(), pid })
    }

    pub fn translate(&self, label: MatLabel, pid: u32) -> Result<MatRange> {
        self.lookup(label, pid).map(|(_, r)| r)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Handle(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub handle: Handle,
    pub label: MatLabel,
    pub pid: u32,
    pub size: usize,
    pub regions: Vec<RegionId>,
    /// False when an aligned request had to fall back to worst-fit.
    pub aligned: bool,
}

impl Allocation {
    /// (subarray, mats, slot) when the regions form one contiguous run in a
    /// single slot of a single subarray.
    pub fn placement(&self) -> Option<(usize, MatRange, usize)> {
        let first = self.regions.first()?;
        let contiguous = self
            .regions
            .iter()
            .enumerate()
            .all(|(i, r)| r.subarray == first.subarray && r.slot == first.slot && r.mat == first.mat + i);
        if !contiguous {
            return None;
        }
        let range = MatRange::new(first.mat, first.mat + self.regions.len() - 1).ok()?;
        Some((first.subarray, range, first.slot))
    }
}

#[derive(Debug, Clone)]
pub struct Allocator {
    pool: RegionPool,
    map: BTreeMap<Handle, Allocation>,
    table: MatTranslationTable,
    next: u64,
    columns_per_mat: usize,
    /// Allocation granularity in mats; runs start at multiples of it.
    mat_align: usize,
    trace: Option<String>,
}

impl Allocator {
    pub fn new(pool: RegionPool, columns_per_mat: usize, mat_align: usize) -> Self {
        Self {
            pool,
            map: BTreeMap::new(),
            table: MatTranslationTable::default(),
            next: 0,
            columns_per_mat,
            mat_align: mat_align.max(1),
            trace: None,
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(String::new());
    }

    pub fn trace(&self) -> Option<&str> {
        self.trace.as_deref()
    }

    pub fn pool(&self) -> &RegionPool {
        &self.pool
    }

    pub fn table(&self) -> &MatTranslationTable {
        &self.table
    }

    pub fn get(&self, h: Handle) -> Option<&Allocation> {
        self.map.get(&h)
    }

    pub fn allocations(&self) -> impl Iterator<Item = &Allocation> {
        self.map.values()
    }

    pub fn allocated_regions(&self) -> usize {
        self.map.values().map(|a| a.regions.len()).sum()
    }

    fn regions_for(&self, size: usize) -> usize {
        size.max(1).div_ceil(self.columns_per_mat).div_ceil(self.mat_align) * self.mat_align
    }

    fn commit(
        &mut self,
        label: MatLabel,
        pid: u32,
        size: usize,
        regions: Vec<RegionId>,
        aligned: bool,
        op: &str,
    ) -> Handle {
        for &r in &regions {
            self.pool.take(r);
        }
        let handle = Handle(self.next);
        self.next += 1;
        let a = Allocation { handle, label, pid, size, regions, aligned };
        if let Some((sub, range, _)) = a.placement() {
            match self.table.lookup(label, pid) {
                Ok((s, r)) if s == sub => self.table.insert(label, pid, sub, r.hull(&range)),
                Ok(_) => {}
                Err(_) => self.table.insert(label, pid, sub, range),
            }
        }
        if let Some(t) = self.trace.as_mut() {
            let at = match a.placement() {
                Some((s, r, slot)) => format!("sub={s} mats={r} slot={slot}"),
                None => format!("fragmented regions={}", a.regions.len()),
            };
            let _ = writeln!(
                t,
                "{op} h{} size={size} label={label} pid={pid} {at} aligned={aligned} free={:?}",
                handle.0,
                self.pool.free_counts()
            );
        }
        self.map.insert(handle, a);
        handle
    }

    /// Worst-fit allocation of `size` elements.
    pub fn pim_alloc(&mut self, size: usize, label: MatLabel, pid: u32) -> Result<Handle> {
        let k = self.regions_for(size);
        let regions = self
            .pool
            .worst_fit(k, self.mat_align)
            .ok_or_else(|| Error::Alloc(format!("need {k} regions, {} free", self.pool.free_total())))?;
        Ok(self.commit(label, pid, size, regions, true, "alloc"))
    }

    /// Allocates next to the first live allocation carrying `label`, falling
    /// back to worst-fit when those mats have no common free slot.
    pub fn pim_alloc_align(&mut self, size: usize, label: MatLabel, pid: u32) -> Result<Handle> {
        let anchor = self
            .map
            .values()
            .find(|a| a.label == label && a.pid == pid)
            .ok_or_else(|| Error::Alloc(format!("no allocation with label {label} to align to")))?;
        let first = anchor.regions[0];
        let begin = anchor.placement().map(|(_, r, _)| r.begin()).unwrap_or(first.mat);
        let k = self.regions_for(size);
        if begin + k <= self.pool.shape.mats {
            if let Some(slot) = self.pool.common_slot(first.subarray, begin..begin + k) {
                let regions = (begin..begin + k).map(|mat| RegionId { subarray: first.subarray, mat, slot }).collect();
                return Ok(self.commit(label, pid, size, regions, true, "align"));
            }
        }
        let regions = self
            .pool
            .worst_fit(k, self.mat_align)
            .ok_or_else(|| Error::Alloc(format!("need {k} regions, {} free", self.pool.free_total())))?;
        Ok(self.commit(label, pid, size, regions, false, "align"))
    }

    pub fn pim_free(&mut self, h: Handle) -> Result<()> {
        let a = self.map.remove(&h).ok_or_else(|| Error::Alloc(format!("unknown handle {}", h.0)))?;
        for r in a.regions {
            self.pool.give(r);
        }
        Ok(())
    }

    pub fn translate(&self, label: MatLabel, pid: u32) -> Result<MatRange> {
        self.table.translate(label, pid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool_with_counts(counts: &[usize]) -> RegionPool {
        let shape = PoolShape { subarrays: counts.len(), mats: 8, slots_per_mat: 1 };
        let mut p = RegionPool::preallocate(shape, 1, shape.capacity());
        for (s, &c) in counts.iter().enumerate() {
            for m in c..8 {
                p.take(RegionId { subarray: s, mat: m, slot: 0 });
            }
        }
        p
    }

    #[test]
    fn preallocation_spreads_evenly() {
        let shape = PoolShape { subarrays: 4, mats: 8, slots_per_mat: 4 };
        let p = RegionPool::preallocate(shape, 1, 16);
        assert_eq!(p.free_counts(), &[4, 4, 4, 4]);
        let p = RegionPool::preallocate(shape, 0, 16);
        assert_eq!(p.free_total(), 0);
        let mut a = Allocator::new(p, 512, 1);
        assert!(a.pim_alloc(1, MatLabel(0), 0).is_err());
    }

    #[test]
    fn worst_fit_examples() {
        let mut a = Allocator::new(pool_with_counts(&[4, 2, 7, 1]), 512, 1);
        a.pim_alloc(3 * 512, MatLabel(0), 0).unwrap();
        assert_eq!(a.pool().free_counts(), &[4, 2, 4, 1]);

        let mut a = Allocator::new(pool_with_counts(&[4, 2, 7, 1]), 512, 1);
        let h = a.pim_alloc(9 * 512, MatLabel(0), 0).unwrap();
        assert_eq!(a.pool().free_counts(), &[2, 2, 0, 1]);
        let subs: Vec<usize> = a.get(h).unwrap().regions.iter().map(|r| r.subarray).collect();
        assert_eq!(subs, [2, 2, 2, 2, 2, 2, 2, 0, 0]);

        let before = a.pool().clone();
        assert!(a.pim_alloc(6 * 512, MatLabel(1), 0).is_err());
        assert_eq!(a.pool(), &before);
    }

    #[test]
    fn aligned_allocation_colocates_or_falls_back() {
        let shape = PoolShape { subarrays: 3, mats: 8, slots_per_mat: 2 };
        let mut a = Allocator::new(RegionPool::preallocate(shape, 1, shape.capacity()), 512, 1);
        let ha = a.pim_alloc(1024, MatLabel(3), 0).unwrap();
        let (sub, range, _) = a.get(ha).unwrap().placement().unwrap();
        let hb = a.pim_alloc_align(1024, MatLabel(3), 0).unwrap();
        let b = a.get(hb).unwrap();
        assert!(b.aligned);
        assert_eq!(b.placement().map(|(s, r, _)| (s, r)), Some((sub, range)));
        // both slots of those mats are now used
        let hc = a.pim_alloc_align(1024, MatLabel(3), 0).unwrap();
        assert!(!a.get(hc).unwrap().aligned);
        assert!(a.pim_alloc_align(10, MatLabel(9), 0).is_err());
    }

    #[test]
    fn translation_follows_allocation() {
        let shape = PoolShape { subarrays: 1, mats: 8, slots_per_mat: 2 };
        let mut a = Allocator::new(RegionPool::preallocate(shape, 1, 16), 512, 1);
        assert!(matches!(a.translate(MatLabel(0), 1), Err(Error::UnresolvedLabel { .. })));
        a.pim_alloc(1000, MatLabel(0), 1).unwrap();
        a.pim_alloc(512, MatLabel(0), 2).unwrap();
        assert_eq!(a.translate(MatLabel(0), 1).unwrap().len(), 2);
        assert_eq!(a.translate(MatLabel(0), 2).unwrap().len(), 1);
    }

    #[test]
    fn table_grows_under_collisions() {
        let mut t = MatTranslationTable::default();
        let r = MatRange::new(1, 2).unwrap();
        for l in 0..200 {
            t.insert(MatLabel(l), l % 3, 0, r);
        }
        assert_eq!(t.len(), 200);
        assert!((0..200).all(|l| t.translate(MatLabel(l), l % 3).is_ok()));
        assert!(t.translate(MatLabel(0), 1).is_err());
    }

    #[test]
    fn mat_alignment_rounds_to_windows() {
        let shape = PoolShape { subarrays: 1, mats: 32, slots_per_mat: 1 };
        let mut a = Allocator::new(RegionPool::preallocate(shape, 1, 32), 512, 16);
        let h = a.pim_alloc(100, MatLabel(0), 0).unwrap();
        let (_, r, _) = a.get(h).unwrap().placement().unwrap();
        assert_eq!((r.begin(), r.len()), (0, 16));
        let h = a.pim_alloc(100, MatLabel(1), 0).unwrap();
        assert_eq!(a.get(h).unwrap().placement().unwrap().1.begin(), 16);
    }
}
