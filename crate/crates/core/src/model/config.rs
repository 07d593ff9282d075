use serde::{Deserialize, Serialize};

use crate::blocks::AsppRates;
use crate::error::{Error, Result};

/// Which radar feature images feed the radar stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SarInput {
    /// 9-channel polarimetric features.
    #[default]
    Pfsar,
    /// 3-channel backscatter coefficients.
    Bcfsar,
    /// Both stacked, polarimetric first (12 channels).
    Both,
    /// No radar input: optical-only network.
    None,
}

impl SarInput {
    pub const ALL: [SarInput; 4] = [SarInput::Both, SarInput::Pfsar, SarInput::Bcfsar, SarInput::None];

    pub fn channels(self) -> usize {
        match self {
            SarInput::Pfsar => 9,
            SarInput::Bcfsar => 3,
            SarInput::Both => 12,
            SarInput::None => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SarInput::Pfsar => "pfsar",
            SarInput::Bcfsar => "bcfsar",
            SarInput::Both => "both",
            SarInput::None => "none",
        }
    }
}

/// Components that can be switched off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Radar residual blocks without dynamic filtering.
    pub no_scdf: bool,
    /// Plain convolutions in place of gated ones.
    pub no_gc: bool,
    /// No cross-stream projections inside the fusion blocks.
    pub no_mmcf: bool,
    /// Concatenation and 1x1 projection in place of attention refinement.
    pub no_mmrf: bool,
    /// Identity in place of the pyramid pooling block.
    pub no_aspp: bool,
    /// Optical-only network.
    pub no_polsar: bool,
}

impl Ablations {
    /// Named single-component variants, the full model first.
    pub fn variants() -> Vec<(&'static str, Ablations)> {
        let none = Ablations::default();
        vec![
            ("full", none),
            ("no_scdf", Ablations { no_scdf: true, ..none }),
            ("no_gc", Ablations { no_gc: true, ..none }),
            ("no_mmcf", Ablations { no_mmcf: true, ..none }),
            ("no_mmrf", Ablations { no_mmrf: true, ..none }),
            ("no_aspp", Ablations { no_aspp: true, ..none }),
            ("no_polsar", Ablations { no_polsar: true, ..none }),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width at full resolution; doubled at each of the two lower scales.
    pub base_channels: usize,
    pub opt_channels: usize,
    pub sar_input: SarInput,
    pub patch: usize,
    pub ablations: Ablations,
    /// Sum the two attention residuals unweighted.
    pub scru_literal: bool,
    /// Pyramid dilation rates; chosen from the bottleneck extent when unset.
    pub aspp_rates: Option<AsppRates>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            base_channels: 8,
            opt_channels: 4,
            sar_input: SarInput::Pfsar,
            patch: 32,
            ablations: Ablations::default(),
            scru_literal: false,
            aspp_rates: None,
        }
    }

    pub fn full_scale() -> Self {
        ModelConfig {
            base_channels: 64,
            patch: 256,
            ..Self::desk()
        }
    }

    /// Whether the radar stream exists.
    pub fn dual(&self) -> bool {
        !self.ablations.no_polsar && self.sar_input != SarInput::None
    }

    pub fn sar_channels(&self) -> usize {
        if self.dual() {
            self.sar_input.channels()
        } else {
            0
        }
    }

    pub fn bottleneck_extent(&self) -> usize {
        self.patch / 4
    }

    pub fn rates(&self) -> AsppRates {
        self.aspp_rates
            .unwrap_or_else(|| AsppRates::for_extent(self.bottleneck_extent()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.opt_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if !self.patch.is_multiple_of(4) || self.patch < 8 {
            return Err(Error::Config(format!(
                "patch {} must be a multiple of 4 and at least 8",
                self.patch
            )));
        }
        if self.rates().0.contains(&0) {
            return Err(Error::Config("dilation rates must be positive".into()));
        }
        Ok(())
    }
}
