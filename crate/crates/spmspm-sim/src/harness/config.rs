//! Accelerator configuration: every hardware parameter as a flat
//! `key = value` file with validated defaults.

use serde::Serialize;

use crate::{Error, Result};

/// Full machine description. Defaults are the reference 64-multiplier
/// configuration; everything is overridable from a config file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceleratorConfig {
    /// Multiplier (leaf) count; must be a power of two.
    pub multipliers: usize,
    /// Internal tree nodes; must equal `multipliers - 1`.
    pub adders: usize,
    /// Distribution network bandwidth, elements per cycle.
    pub dn_bandwidth: usize,
    /// Merger-reduction network root bandwidth, elements per cycle.
    pub mrn_bandwidth: usize,
    /// Accounting word size of one (coordinate, value) element.
    pub word_bytes: u64,
    /// Stationary FIFO capacity in bytes.
    pub sta_fifo_bytes: u64,
    /// Streaming cache geometry.
    pub str_cache_bytes: u64,
    pub str_line_bytes: u64,
    pub str_assoc: usize,
    pub str_banks: u64,
    /// Psum store total size; must equal sets * blocks * block bytes.
    pub psram_bytes: u64,
    pub psram_sets: usize,
    pub psram_blocks_per_set: usize,
    pub psram_block_bytes: usize,
    pub psram_banks: usize,
    /// DRAM timing.
    pub dram_latency_ns: u64,
    pub dram_bw_gbps: u64,
    pub clock_mhz: u64,
    /// Heuristic thresholds: streaming matrix deemed cache-resident below
    /// this fraction of the cache, stationary matrix deemed dense above
    /// this non-zero density.
    pub heuristic_cache_fit_fraction: f64,
    pub heuristic_density_cut: f64,
}

impl Default for AcceleratorConfig {
    fn default() -> AcceleratorConfig {
        AcceleratorConfig {
            multipliers: 64,
            adders: 63,
            dn_bandwidth: 16,
            mrn_bandwidth: 16,
            word_bytes: 4,
            sta_fifo_bytes: 256,
            str_cache_bytes: 1 << 20,
            str_line_bytes: 128,
            str_assoc: 16,
            str_banks: 16,
            psram_bytes: 256 << 10,
            psram_sets: 64,
            psram_blocks_per_set: 64,
            psram_block_bytes: 64,
            psram_banks: 16,
            dram_latency_ns: 100,
            dram_bw_gbps: 256,
            clock_mhz: 800,
            heuristic_cache_fit_fraction: 0.5,
            heuristic_density_cut: 0.5,
        }
    }
}

impl AcceleratorConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.multipliers == 0 || !self.multipliers.is_power_of_two() {
            return err(format!(
                "multipliers must be a power of two, got {}",
                self.multipliers
            ));
        }
        if self.adders != self.multipliers - 1 {
            return err(format!(
                "adders must be multipliers-1 ({}), got {}",
                self.multipliers - 1,
                self.adders
            ));
        }
        if self.dn_bandwidth == 0 || self.mrn_bandwidth == 0 {
            return err("network bandwidths must be positive".into());
        }
        if self.word_bytes == 0 {
            return err("word_bytes must be positive".into());
        }
        if self.sta_fifo_bytes < self.word_bytes {
            return err("sta_fifo_bytes must hold at least one element".into());
        }
        if self.str_line_bytes == 0
            || self.str_line_bytes % self.word_bytes != 0
            || self.str_assoc == 0
            || self.str_banks == 0
        {
            return err("bad streaming cache geometry".into());
        }
        if self.str_cache_bytes % (self.str_line_bytes * self.str_assoc as u64) != 0
            || self.str_cache_bytes == 0
        {
            return err(format!(
                "str_cache_bytes {} must be a positive multiple of line*assoc",
                self.str_cache_bytes
            ));
        }
        if self.psram_sets == 0
            || self.psram_blocks_per_set == 0
            || self.psram_block_bytes < self.word_bytes as usize
            || self.psram_banks == 0
        {
            return err("bad psum store geometry".into());
        }
        let psram = self.psram_sets as u64
            * self.psram_blocks_per_set as u64
            * self.psram_block_bytes as u64;
        if psram != self.psram_bytes {
            return err(format!(
                "psram_bytes {} does not match sets*blocks*block_bytes = {psram}",
                self.psram_bytes
            ));
        }
        if self.clock_mhz == 0 || self.dram_bw_gbps == 0 {
            return err("clock_mhz and dram_bw_gbps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.heuristic_cache_fit_fraction)
            || !(0.0..=1.0).contains(&self.heuristic_density_cut)
        {
            return err("heuristic thresholds must be in [0,1]".into());
        }
        Ok(())
    }

    /// MRN tree depth in levels (= element latency in cycles).
    pub fn tree_depth(&self) -> u64 {
        self.multipliers.ilog2() as u64
    }

    pub fn dram_latency_cycles(&self) -> u64 {
        crate::mem::DramModel::latency_from_ns(self.dram_latency_ns, self.clock_mhz)
    }

    pub fn dram_bytes_per_cycle(&self) -> u64 {
        crate::mem::DramModel::bandwidth_from_gbps(self.dram_bw_gbps, self.clock_mhz)
    }

    /// Parses the flat `key = value` format. `#` starts a comment; keys
    /// not listed keep their defaults; unknown keys are rejected. When the
    /// file sets `psram_bytes` without explicit geometry, blocks-per-set
    /// is derived from it.
    pub fn from_config_text(text: &str) -> Result<AcceleratorConfig> {
        let mut cfg = AcceleratorConfig::default();
        let mut saw_psram_bytes = false;
        let mut saw_psram_geom = false;
        let mut saw_adders = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let ctx = |_e: std::num::ParseIntError| {
                Error::Config(format!("line {}: bad value for {key}: {value:?}", lineno + 1))
            };
            let fctx = |_e: std::num::ParseFloatError| {
                Error::Config(format!("line {}: bad value for {key}: {value:?}", lineno + 1))
            };
            match key {
                "multipliers" => cfg.multipliers = value.parse().map_err(ctx)?,
                "adders" => {
                    cfg.adders = value.parse().map_err(ctx)?;
                    saw_adders = true;
                }
                "dn_bandwidth" => cfg.dn_bandwidth = value.parse().map_err(ctx)?,
                "mrn_bandwidth" => cfg.mrn_bandwidth = value.parse().map_err(ctx)?,
                "word_bytes" => cfg.word_bytes = value.parse().map_err(ctx)?,
                "sta_fifo_bytes" => cfg.sta_fifo_bytes = value.parse().map_err(ctx)?,
                "str_cache_bytes" => cfg.str_cache_bytes = value.parse().map_err(ctx)?,
                "str_line_bytes" => cfg.str_line_bytes = value.parse().map_err(ctx)?,
                "str_assoc" => cfg.str_assoc = value.parse().map_err(ctx)?,
                "str_banks" => cfg.str_banks = value.parse().map_err(ctx)?,
                "psram_bytes" => {
                    cfg.psram_bytes = value.parse().map_err(ctx)?;
                    saw_psram_bytes = true;
                }
                "psram_sets" => {
                    cfg.psram_sets = value.parse().map_err(ctx)?;
                    saw_psram_geom = true;
                }
                "psram_blocks_per_set" => {
                    cfg.psram_blocks_per_set = value.parse().map_err(ctx)?;
                    saw_psram_geom = true;
                }
                "psram_block_bytes" => {
                    cfg.psram_block_bytes = value.parse().map_err(ctx)?;
                    saw_psram_geom = true;
                }
                "psram_banks" => cfg.psram_banks = value.parse().map_err(ctx)?,
                "dram_latency_ns" => cfg.dram_latency_ns = value.parse().map_err(ctx)?,
                "dram_bw_gbps" => cfg.dram_bw_gbps = value.parse().map_err(ctx)?,
                "clock_mhz" => cfg.clock_mhz = value.parse().map_err(ctx)?,
                "heuristic_cache_fit_fraction" => {
                    cfg.heuristic_cache_fit_fraction = value.parse().map_err(fctx)?
                }
                "heuristic_density_cut" => {
                    cfg.heuristic_density_cut = value.parse().map_err(fctx)?
                }
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown config key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        if !saw_adders {
            cfg.adders = cfg.multipliers.saturating_sub(1);
        }
        if saw_psram_bytes && !saw_psram_geom {
            let per_set = cfg.psram_bytes / cfg.psram_sets.max(1) as u64;
            cfg.psram_blocks_per_set =
                (per_set / cfg.psram_block_bytes.max(1) as u64) as usize;
        } else if saw_psram_geom && !saw_psram_bytes {
            cfg.psram_bytes = cfg.psram_sets as u64
                * cfg.psram_blocks_per_set as u64
                * cfg.psram_block_bytes as u64;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        AcceleratorConfig::default().validate().unwrap();
        assert_eq!(AcceleratorConfig::default().tree_depth(), 6);
        assert_eq!(AcceleratorConfig::default().dram_latency_cycles(), 80);
        assert_eq!(AcceleratorConfig::default().dram_bytes_per_cycle(), 320);
    }

    #[test]
    fn parse_overrides_and_derives() {
        let cfg = AcceleratorConfig::from_config_text(
            "# a comment\nmultipliers = 16\nstr_cache_bytes = 16384\nstr_assoc = 8\npsram_sets = 16\npsram_blocks_per_set = 8\npsram_block_bytes = 32\n",
        )
        .unwrap();
        assert_eq!(cfg.multipliers, 16);
        assert_eq!(cfg.adders, 15, "adders follow multipliers unless set");
        assert_eq!(cfg.psram_bytes, 16 * 8 * 32);
    }

    #[test]
    fn psram_bytes_alone_derives_blocks() {
        let cfg =
            AcceleratorConfig::from_config_text("psram_bytes = 131072\n").unwrap();
        assert_eq!(cfg.psram_blocks_per_set, 32);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(AcceleratorConfig::from_config_text("no_such_key = 1\n").is_err());
        assert!(AcceleratorConfig::from_config_text("multipliers = hello\n").is_err());
        assert!(AcceleratorConfig::from_config_text("multipliers").is_err());
    }

    #[test]
    fn rejects_inconsistent_geometry() {
        assert!(AcceleratorConfig::from_config_text("multipliers = 48\nadders = 47\n").is_err());
        assert!(AcceleratorConfig::from_config_text("multipliers = 64\nadders = 10\n").is_err());
        assert!(AcceleratorConfig::from_config_text(
            "psram_bytes = 1000\npsram_sets = 3\npsram_blocks_per_set = 3\npsram_block_bytes = 64\n"
        )
        .is_err());
        assert!(AcceleratorConfig::from_config_text("str_cache_bytes = 1000\n").is_err());
    }
}
