//! Bit-accurate model of one computation subarray: every logical mat keeps its
//! own cell array, local row buffer and open-row state, so commands addressed to
//! a mat range leave all other mats untouched.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::DramGeometry;
use crate::isa::MatRange;

/// Designated compute rows shared by every mat.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowGroups {
    pub c0: usize,
    pub c1: usize,
    pub t_rows: [usize; 4],
    pub dcc_rows: [usize; 2],
}

impl RowGroups {
    pub const STANDARD: RowGroups = RowGroups { c0: 0, c1: 1, t_rows: [2, 3, 4, 5], dcc_rows: [6, 7] };

    pub fn all(&self) -> [usize; 8] {
        let [t0, t1, t2, t3] = self.t_rows;
        let [d0, d1] = self.dcc_rows;
        [self.c0, self.c1, t0, t1, t2, t3, d0, d1]
    }

    pub fn is_dcc(&self, row: usize) -> bool {
        self.dcc_rows.contains(&row)
    }
}

/// One wordline of a row: DCC rows also expose a negated wordline that
/// connects the cell to the complementary bitline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Wordline {
    pub row: usize,
    pub negated: bool,
}

impl Wordline {
    pub fn plain(row: usize) -> Self {
        Self { row, negated: false }
    }

    pub fn negated(row: usize) -> Self {
        Self { row, negated: true }
    }
}

/// Placement of a vertically laid out operand: element `j`, bit `k` lives at
/// row `base_row + k`, column `j % columns_per_mat` of mat
/// `mat_span.begin() + j / columns_per_mat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerticalLayout {
    pub base_row: usize,
    pub bitwidth: u32,
    pub elements: usize,
    pub mat_span: MatRange,
}

impl VerticalLayout {
    pub fn row(&self, bit: u32) -> usize {
        self.base_row + bit as usize
    }

    pub fn mats_used(&self, columns_per_mat: usize) -> usize {
        self.elements.div_ceil(columns_per_mat)
    }

    fn check(&self, geometry: &DramGeometry) -> Result<()> {
        let capacity = geometry.columns_per_mat * self.mat_span.len();
        if self.elements > capacity {
            return Err(Error::LayoutOverflow { elements: self.elements, capacity });
        }
        if self.mat_span.end() >= geometry.total_mats() {
            return Err(Error::RangeOutsideModule(self.mat_span));
        }
        let top = self.base_row + self.bitwidth as usize;
        if top > geometry.rows_per_mat {
            return Err(Error::RowOutOfRange { row: top - 1, rows: geometry.rows_per_mat });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct OpenState {
    wordlines: Vec<Wordline>,
}

/// Cell array plus local row buffer of one mat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatArray {
    rows: usize,
    words: usize,
    columns: usize,
    bits: Vec<u64>,
    row_buffer: Vec<u64>,
    open: Option<OpenState>,
}

impl MatArray {
    pub fn new(rows: usize, columns: usize) -> Self {
        let words = columns.div_ceil(64);
        Self { rows, words, columns, bits: vec![0; rows * words], row_buffer: vec![0; words], open: None }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn row(&self, row: usize) -> &[u64] {
        &self.bits[row * self.words..(row + 1) * self.words]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [u64] {
        &mut self.bits[row * self.words..(row + 1) * self.words]
    }

    pub fn row_buffer(&self) -> &[u64] {
        &self.row_buffer
    }

    pub fn row_buffer_mut(&mut self) -> &mut [u64] {
        &mut self.row_buffer
    }

    /// First activated row, if the mat is open.
    pub fn open_row(&self) -> Option<usize> {
        self.open.as_ref().map(|o| o.wordlines[0].row)
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    pub fn get_bit(&self, row: usize, column: usize) -> bool {
        self.row(row)[column / 64] >> (column % 64) & 1 == 1
    }

    pub fn set_bit(&mut self, row: usize, column: usize, value: bool) {
        let w = &mut self.row_mut(row)[column / 64];
        let mask = 1u64 << (column % 64);
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    fn fill_row(&mut self, row: usize, ones: bool) {
        let columns = self.columns;
        let r = self.row_mut(row);
        for (i, w) in r.iter_mut().enumerate() {
            *w = if ones { tail_mask(columns, i) } else { 0 };
        }
    }

    fn sense(&self, wl: Wordline) -> Vec<u64> {
        let mut v = self.row(wl.row).to_vec();
        if wl.negated {
            for (i, w) in v.iter_mut().enumerate() {
                *w = !*w & tail_mask(self.columns, i);
            }
        }
        v
    }

    fn restore(&mut self) {
        if let Some(open) = self.open.take() {
            let columns = self.columns;
            for wl in open.wordlines {
                let buf = self.row_buffer.clone();
                let dst = self.row_mut(wl.row);
                for (i, (d, b)) in dst.iter_mut().zip(buf).enumerate() {
                    *d = if wl.negated { !b & tail_mask(columns, i) } else { b };
                }
            }
        }
    }
}

fn tail_mask(columns: usize, word: usize) -> u64 {
    let lo = word * 64;
    if lo + 64 <= columns {
        u64::MAX
    } else {
        (1u64 << (columns - lo)) - 1
    }
}

/// All mats of one computation subarray.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DramModule {
    geometry: DramGeometry,
    groups: RowGroups,
    mats: Vec<MatArray>,
}

impl DramModule {
    pub fn new(geometry: DramGeometry) -> Result<Self> {
        geometry.validate()?;
        let groups = RowGroups::STANDARD;
        let mut mats: Vec<MatArray> = (0..geometry.total_mats())
            .map(|_| MatArray::new(geometry.rows_per_mat, geometry.columns_per_mat))
            .collect();
        for m in &mut mats {
            m.fill_row(groups.c1, true);
        }
        Ok(Self { geometry, groups, mats })
    }

    pub fn geometry(&self) -> &DramGeometry {
        &self.geometry
    }

    pub fn groups(&self) -> &RowGroups {
        &self.groups
    }

    pub fn mat(&self, id: usize) -> &MatArray {
        &self.mats[id]
    }

    pub fn mat_mut(&mut self, id: usize) -> &mut MatArray {
        &mut self.mats[id]
    }

    pub fn mats(&self) -> &[MatArray] {
        &self.mats
    }

    fn check_range(&self, mats: MatRange) -> Result<()> {
        if mats.end() >= self.mats.len() {
            return Err(Error::MatOutOfRange { mat: mats.end(), mats: self.mats.len() });
        }
        Ok(())
    }

    fn check_row(&self, row: usize) -> Result<()> {
        if row >= self.geometry.rows_per_mat {
            return Err(Error::RowOutOfRange { row, rows: self.geometry.rows_per_mat });
        }
        Ok(())
    }

    fn check_wordline(&self, wl: Wordline) -> Result<()> {
        self.check_row(wl.row)?;
        if wl.negated && !self.groups.is_dcc(wl.row) {
            return Err(Error::Protocol(format!("row {} has no negated wordline", wl.row)));
        }
        Ok(())
    }

    /// Opens `row` in every mat of `mats`.
    pub fn activate(&mut self, mats: MatRange, row: usize) -> Result<()> {
        self.activate_wordlines(mats, &[Wordline::plain(row)])
    }

    /// First activation of a command. One wordline senses that row; three
    /// wordlines perform a triple-row activation whose sensed value is the
    /// column-wise majority.
    pub fn activate_wordlines(&mut self, mats: MatRange, wordlines: &[Wordline]) -> Result<()> {
        self.check_range(mats)?;
        for &wl in wordlines {
            self.check_wordline(wl)?;
        }
        if wordlines.len() != 1 && wordlines.len() != 3 {
            return Err(Error::Protocol(format!("cannot sense {} rows at once", wordlines.len())));
        }
        for m in mats.mats() {
            if self.mats[m].is_open() {
                return Err(Error::Protocol(format!("mat {m} already has an open row")));
            }
        }
        for m in mats.mats() {
            let mat = &mut self.mats[m];
            let sensed: Vec<Vec<u64>> = wordlines.iter().map(|&wl| mat.sense(wl)).collect();
            let buf = if sensed.len() == 1 {
                sensed.into_iter().next().unwrap_or_default()
            } else {
                (0..mat.words).map(|i| majority_word(sensed[0][i], sensed[1][i], sensed[2][i])).collect()
            };
            mat.row_buffer = buf;
            mat.open = Some(OpenState { wordlines: wordlines.to_vec() });
        }
        Ok(())
    }

    /// Second activation of a row copy: connects more rows to the already
    /// latched row buffer, which overwrites them at restore time.
    pub fn activate_copy(&mut self, mats: MatRange, wordlines: &[Wordline]) -> Result<()> {
        self.check_range(mats)?;
        for &wl in wordlines {
            self.check_wordline(wl)?;
        }
        for m in mats.mats() {
            if !self.mats[m].is_open() {
                return Err(Error::Protocol(format!("mat {m} has no open row to copy from")));
            }
        }
        for m in mats.mats() {
            if let Some(open) = self.mats[m].open.as_mut() {
                open.wordlines.extend_from_slice(wordlines);
            }
        }
        Ok(())
    }

    /// Closes the open row in each mat, restoring the row buffer into every
    /// connected row. Closed mats are left alone.
    pub fn precharge(&mut self, mats: MatRange) -> Result<()> {
        self.check_range(mats)?;
        for m in mats.mats() {
            self.mats[m].restore();
        }
        Ok(())
    }

    /// Writes `values` in vertical layout, touching only the layout's rows and
    /// the columns its elements occupy.
    pub fn transpose_h2v(&mut self, values: &[u64], layout: &VerticalLayout) -> Result<()> {
        layout.check(&self.geometry)?;
        if values.len() > layout.elements {
            return Err(Error::LayoutOverflow { elements: values.len(), capacity: layout.elements });
        }
        let cols = self.geometry.columns_per_mat;
        for (j, &v) in values.iter().enumerate() {
            let mat = &mut self.mats[layout.mat_span.begin() + j / cols];
            for k in 0..layout.bitwidth {
                mat.set_bit(layout.row(k), j % cols, v >> k & 1 == 1);
            }
        }
        Ok(())
    }

    /// Reads back `layout.elements` values; lanes beyond that are ignored.
    pub fn transpose_v2h(&self, layout: &VerticalLayout) -> Result<Vec<u64>> {
        layout.check(&self.geometry)?;
        let cols = self.geometry.columns_per_mat;
        Ok((0..layout.elements)
            .map(|j| {
                let mat = &self.mats[layout.mat_span.begin() + j / cols];
                (0..layout.bitwidth).fold(0u64, |acc, k| acc | (mat.get_bit(layout.row(k), j % cols) as u64) << k)
            })
            .collect())
    }

    /// True when C0 is all zeros and C1 all ones in every mat.
    pub fn constant_rows_intact(&self) -> bool {
        let cols = self.geometry.columns_per_mat;
        self.mats.iter().all(|m| {
            m.row(self.groups.c0).iter().all(|&w| w == 0)
                && m.row(self.groups.c1).iter().enumerate().all(|(i, &w)| w == tail_mask(cols, i))
        })
    }

    /// Hex dump of every non-zero row of the selected mats.
    pub fn dump_hex(&self, mats: MatRange) -> String {
        let mut out = String::new();
        for m in mats.mats().filter(|&m| m < self.mats.len()) {
            let mat = &self.mats[m];
            for r in 0..mat.rows {
                let row = mat.row(r);
                if row.iter().all(|&w| w == 0) {
                    continue;
                }
                let _ = write!(out, "mat{m} r{r}:");
                for w in row.iter().rev() {
                    let _ = write!(out, " {w:016x}");
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn majority_word(a: u64, b: u64, c: u64) -> u64 {
    (a & b) | (b & c) | (a & c)
}
