//! Interchangeable compress-and-forward schemes behind a common trait.
//!
//! Every scheme runs over the same scenario, consumes the identical channel
//! trajectory for a given seed, and emits the same run-log schema, so the
//! harness can sweep and compare them fairly:
//!
//! - `thcf`: two-timescale hybrid filtering — slow analog phases learned
//!   online, per-slot digital/power/bit optimization on effective CSI.
//! - `scf`: fully digital spatial compression on full (delayed) CSI.
//! - `scf-no-delay`: the same with zero CSI delay, the performance ceiling.
//! - `ascf`: analog-only per-slot filtering (phase-projected eigenvectors),
//!   uniform bits, max power, MMSE receiver.
//! - `sscf`: the two-timescale loop with the per-slot optimization removed
//!   (initialization point plus an MMSE receiver pass).
//!
//! Schemes are registered by name and selected at runtime from config/CLI.

use crate::model::UtilitySpec;
use crate::scenario::Scenario;
use crate::ssca::{run_engine, EngineCfg, FrontKind, InnerKind, RunLog, ScheduleSpec, SlotDelay};
use crate::{Error, Result};
use std::collections::BTreeMap;

/// Closed enumeration of the selectable schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SchemeId {
    Thcf,
    Scf,
    ScfNoDelay,
    Ascf,
    Sscf,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] = [
        SchemeId::Thcf,
        SchemeId::Scf,
        SchemeId::ScfNoDelay,
        SchemeId::Ascf,
        SchemeId::Sscf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeId::Thcf => "thcf",
            SchemeId::Scf => "scf",
            SchemeId::ScfNoDelay => "scf-no-delay",
            SchemeId::Ascf => "ascf",
            SchemeId::Sscf => "sscf",
        }
    }
}

impl std::str::FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .iter()
            .find(|id| id.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown scheme '{s}'; expected one of: {}",
                    SchemeId::ALL.map(|i| i.name()).join(", ")
                ))
            })
    }
}

/// A runnable compress-and-forward strategy.
pub trait Scheme: Send + Sync {
    fn id(&self) -> SchemeId;

    fn name(&self) -> &'static str {
        self.id().name()
    }

    /// Engine knobs realizing this scheme.
    fn engine_cfg(&self) -> EngineCfg;

    fn run(
        &self,
        scenario: &Scenario,
        utility: &UtilitySpec,
        schedules: &ScheduleSpec,
        seed: u64,
    ) -> Result<RunLog> {
        run_engine(scenario, utility, schedules, &self.engine_cfg(), seed)
    }
}

/// Two-timescale hybrid compression and forward.
pub struct Thcf;

impl Scheme for Thcf {
    fn id(&self) -> SchemeId {
        SchemeId::Thcf
    }

    fn engine_cfg(&self) -> EngineCfg {
        EngineCfg {
            front: FrontKind::PhaseFilter,
            inner: InnerKind::BlockRounds,
            adapt_phases: true,
            adapt_weights: true,
            slot_delay: SlotDelay::Effective,
        }
    }
}

/// Fully digital spatial compression and forward; the filter spans the
/// column space of the (delayed or current) full channel per slot.
pub struct Scf {
    pub delayed: bool,
}

impl Scheme for Scf {
    fn id(&self) -> SchemeId {
        if self.delayed {
            SchemeId::Scf
        } else {
            SchemeId::ScfNoDelay
        }
    }

    fn engine_cfg(&self) -> EngineCfg {
        EngineCfg {
            front: FrontKind::ChannelBasis,
            inner: InnerKind::BlockRounds,
            adapt_phases: false,
            adapt_weights: true,
            slot_delay: if self.delayed {
                SlotDelay::Full
            } else {
                SlotDelay::Zero
            },
        }
    }
}

/// Analog-only spatial compression: per-slot phase-projected eigenvectors,
/// uniform bits, maximum power, MMSE receiver.
pub struct Ascf;

impl Scheme for Ascf {
    fn id(&self) -> SchemeId {
        SchemeId::Ascf
    }

    fn engine_cfg(&self) -> EngineCfg {
        EngineCfg {
            front: FrontKind::EigenPhases,
            inner: InnerKind::FixedPoint,
            adapt_phases: false,
            adapt_weights: false,
            slot_delay: SlotDelay::Full,
        }
    }
}

/// Slow-timescale-only variant: the outer loop still learns phases and
/// weights, but each slot uses the unoptimized initialization point.
pub struct Sscf;

impl Scheme for Sscf {
    fn id(&self) -> SchemeId {
        SchemeId::Sscf
    }

    fn engine_cfg(&self) -> EngineCfg {
        EngineCfg {
            front: FrontKind::PhaseFilter,
            inner: InnerKind::InitOnly,
            adapt_phases: true,
            adapt_weights: true,
            slot_delay: SlotDelay::Effective,
        }
    }
}

/// All schemes keyed by their runtime name, in deterministic order.
pub fn registry() -> BTreeMap<&'static str, Box<dyn Scheme>> {
    let mut map: BTreeMap<&'static str, Box<dyn Scheme>> = BTreeMap::new();
    map.insert(SchemeId::Thcf.name(), Box::new(Thcf));
    map.insert(SchemeId::Scf.name(), Box::new(Scf { delayed: true }));
    map.insert(
        SchemeId::ScfNoDelay.name(),
        Box::new(Scf { delayed: false }),
    );
    map.insert(SchemeId::Ascf.name(), Box::new(Ascf));
    map.insert(SchemeId::Sscf.name(), Box::new(Sscf));
    map
}

/// Looks a scheme up by its registry name.
pub fn by_name(name: &str) -> Result<Box<dyn Scheme>> {
    let id: SchemeId = name.parse()?;
    Ok(match id {
        SchemeId::Thcf => Box::new(Thcf),
        SchemeId::Scf => Box::new(Scf { delayed: true }),
        SchemeId::ScfNoDelay => Box::new(Scf { delayed: false }),
        SchemeId::Ascf => Box::new(Ascf),
        SchemeId::Sscf => Box::new(Sscf),
    })
}
