use crate::config::KvConfig;
use crate::error::{Error, Result};

/// Number of rows reserved for the control and bitwise row groups.
pub const COMPUTE_ROWS: usize = 8;

/// Shape of the simulated DRAM module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DramGeometry {
    pub chips: usize,
    pub banks_per_rank: usize,
    pub ranks: usize,
    pub subarrays_per_bank: usize,
    pub mats_per_subarray_per_chip: usize,
    pub rows_per_mat: usize,
    pub columns_per_mat: usize,
    /// Bits movable per column access (helper flip-flops per mat).
    pub hffs_per_mat: usize,
    /// Rows at the top of each mat kept free for microprogram temporaries.
    pub scratch_rows: usize,
}

impl Default for DramGeometry {
    fn default() -> Self {
        Self {
            chips: 8,
            banks_per_rank: 16,
            ranks: 1,
            subarrays_per_bank: 64,
            mats_per_subarray_per_chip: 16,
            rows_per_mat: 1024,
            columns_per_mat: 512,
            hffs_per_mat: 4,
            scratch_rows: 224,
        }
    }
}

impl DramGeometry {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("chips", self.chips),
            ("banks_per_rank", self.banks_per_rank),
            ("ranks", self.ranks),
            ("subarrays_per_bank", self.subarrays_per_bank),
            ("mats_per_subarray_per_chip", self.mats_per_subarray_per_chip),
            ("rows_per_mat", self.rows_per_mat),
            ("columns_per_mat", self.columns_per_mat),
            ("hffs_per_mat", self.hffs_per_mat),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Geometry(format!("{name} must be at least 1")));
            }
        }
        if !self.columns_per_mat.is_power_of_two() {
            return Err(Error::Geometry(format!(
                "columns_per_mat must be a power of two, got {}",
                self.columns_per_mat
            )));
        }
        if !self.columns_per_mat.is_multiple_of(self.hffs_per_mat) {
            return Err(Error::Geometry("columns_per_mat must be a multiple of hffs_per_mat".into()));
        }
        if self.total_mats() > 128 {
            return Err(Error::Geometry(format!("{} logical mats do not fit the 7-bit mat id", self.total_mats())));
        }
        if COMPUTE_ROWS + self.scratch_rows >= self.rows_per_mat {
            return Err(Error::Geometry("no data rows left after compute and scratch rows".into()));
        }
        Ok(())
    }

    /// Logical mats in one subarray row across all chips.
    pub fn total_mats(&self) -> usize {
        self.chips * self.mats_per_subarray_per_chip
    }

    /// SIMD lanes provided by the whole module-wide subarray.
    pub fn lane_capacity(&self) -> usize {
        self.total_mats() * self.columns_per_mat
    }

    /// Lanes of a single chip's subarray row; this is the unit that a
    /// coarse-grained activation opens and the unit energy is normalised to.
    pub fn row_window_lanes(&self) -> usize {
        self.mats_per_subarray_per_chip * self.columns_per_mat
    }

    pub fn words_per_row(&self) -> usize {
        self.columns_per_mat.div_ceil(64)
    }

    pub fn first_data_row(&self) -> usize {
        COMPUTE_ROWS
    }

    /// One past the last row usable for operands.
    pub fn data_row_end(&self) -> usize {
        self.rows_per_mat - self.scratch_rows
    }

    pub fn scratch_base(&self) -> usize {
        self.data_row_end()
    }

    /// Splits a logical mat id into (chip, in-chip mat).
    pub fn split_mat(&self, mat: usize) -> (usize, usize) {
        (mat / self.mats_per_subarray_per_chip, mat % self.mats_per_subarray_per_chip)
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let mut g = Self::default();
        let fields: [(&str, &mut usize); 9] = [
            ("chips", &mut g.chips),
            ("banks_per_rank", &mut g.banks_per_rank),
            ("ranks", &mut g.ranks),
            ("subarrays_per_bank", &mut g.subarrays_per_bank),
            ("mats_per_subarray_per_chip", &mut g.mats_per_subarray_per_chip),
            ("rows_per_mat", &mut g.rows_per_mat),
            ("columns_per_mat", &mut g.columns_per_mat),
            ("hffs_per_mat", &mut g.hffs_per_mat),
            ("scratch_rows", &mut g.scratch_rows),
        ];
        for (key, slot) in fields {
            if let Some(v) = cfg.count(key)? {
                *slot = v;
            }
        }
        g.validate()?;
        Ok(g)
    }
}
