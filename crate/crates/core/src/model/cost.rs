//! Analytic parameter, multiply-accumulate and memory-access accounting.
//!
//! For a convolution producing a `C_out × H × W` map from `C_in` channels
//! with a `K × K` kernel and `g` groups:
//!
//! ```text
//! T = C_in / g · C_out · K · K · H · W
//! M = C_in / g · C_out · K · K + C_in · H_in · W_in + C_out · H · W
//! ```
//!
//! Conventions for the remaining rows: normalizations and activations cost
//! `C·H·W` MACs; the squeeze-and-excitation linear maps are 1×1 convolutions
//! at 1×1 resolution; feature-decomposition reweighting costs `C·H·W` and the
//! wave modulation (amplitude·phase product plus the complex multiply) costs
//! `3·C·H·W`. Totals are MACs unless the report is switched to FLOPs (2·T).

use std::fmt::Write as _;

/// Channel count and spatial size of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl FeatureShape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn numel(&self) -> u64 {
        (self.c * self.h * self.w) as u64
    }

    pub fn with_channels(self, c: usize) -> Self {
        Self { c, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    pub mem_access: u64,
    /// Whether `macs` scales with the input resolution.
    pub spatial: bool,
    /// Learnable tensors owned by this row.
    pub tensors: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    /// Report `flops()` as 2·T instead of T.
    pub double_flops: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostTotals {
    pub params: u64,
    pub macs: u64,
    pub mem_access: u64,
}

/// MACs of a `K×K` convolution producing `out` from `cin` channels.
pub fn conv_macs(cin: usize, groups: usize, k: usize, out: FeatureShape) -> u64 {
    ((cin / groups) * out.c * k * k * out.h * out.w) as u64
}

impl CostReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: CostRow) {
        self.rows.push(row);
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        input: FeatureShape,
        out: FeatureShape,
        k: usize,
        groups: usize,
        params: u64,
        tensors: Vec<String>,
    ) {
        let weights = ((input.c / groups) * out.c * k * k) as u64;
        let spatial = !(input.h == 1 && input.w == 1 && out.h == 1 && out.w == 1);
        self.push(CostRow {
            name: name.to_string(),
            params,
            macs: conv_macs(input.c, groups, k, out),
            mem_access: weights + input.numel() + out.numel(),
            spatial,
            tensors,
        });
    }

    /// A row whose work is `per_element` MACs per element of `shape`.
    pub fn elementwise(
        &mut self,
        name: &str,
        shape: FeatureShape,
        per_element: u64,
        params: u64,
        tensors: Vec<String>,
    ) {
        self.push(CostRow {
            name: name.to_string(),
            params,
            macs: per_element * shape.numel(),
            mem_access: params + 2 * shape.numel(),
            spatial: true,
            tensors,
        });
    }

    pub fn totals(&self) -> CostTotals {
        self.rows.iter().fold(CostTotals { params: 0, macs: 0, mem_access: 0 }, |t, r| CostTotals {
            params: t.params + r.params,
            macs: t.macs + r.macs,
            mem_access: t.mem_access + r.mem_access,
        })
    }

    pub fn flops(&self) -> u64 {
        let macs = self.totals().macs;
        if self.double_flops {
            2 * macs
        } else {
            macs
        }
    }

    /// MACs of the rows that scale with input resolution.
    pub fn spatial_macs(&self) -> u64 {
        self.rows.iter().filter(|r| r.spatial).map(|r| r.macs).sum()
    }

    /// Learnable tensor names, in row order.
    pub fn learnable_tensors(&self) -> Vec<String> {
        self.rows.iter().flat_map(|r| r.tensors.iter().cloned()).collect()
    }

    /// `layer,params,macs,mem_access` with one line per row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,params,macs,mem_access\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.name, r.params, r.macs, r.mem_access);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<width$}  {:>10}  {:>14}  {:>14}\n", "layer", "params", "macs", "mem_access");
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:>10}  {:>14}  {:>14}", r.name, r.params, r.macs, r.mem_access);
        }
        let t = self.totals();
        let _ = writeln!(s, "{:<width$}  {:>10}  {:>14}  {:>14}", "TOTAL", t.params, t.macs, t.mem_access);
        s
    }
}
