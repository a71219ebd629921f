//! Scenario files.
//!
//! A scenario is a TOML document with a few top-level keys and one parameter
//! section per module the experiment kind touches. Unknown keys, sections
//! that do not belong to the kind and out-of-range values are all rejected
//! before anything runs. Every default lives in `scenarios/defaults.toml`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::cpm::{CpmSpec, Precoding};
use crate::error::{Error, Result};
use crate::grantfree::build_ctu_pool;
use crate::scma::{build_codebooks, build_factor_graph, Construction, MpaMode};

/// Largest trial count per sweep point; trial ids must stay below the
/// `10^6` stride between points.
pub const MAX_TRIALS: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ScmaSer,
    ScmaBlind,
    CsmudGap,
    CraThroughput,
    GrantfreeCollision,
    CpmEnvelope,
    CpmBer,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::ScmaSer,
        ExperimentKind::ScmaBlind,
        ExperimentKind::CsmudGap,
        ExperimentKind::CraThroughput,
        ExperimentKind::GrantfreeCollision,
        ExperimentKind::CpmEnvelope,
        ExperimentKind::CpmBer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ScmaSer => "scma-ser",
            ExperimentKind::ScmaBlind => "scma-blind",
            ExperimentKind::CsmudGap => "csmud-gap",
            ExperimentKind::CraThroughput => "cra-throughput",
            ExperimentKind::GrantfreeCollision => "grantfree-collision",
            ExperimentKind::CpmEnvelope => "cpm-envelope",
            ExperimentKind::CpmBer => "cpm-ber",
        }
    }

    /// What the values in `sweep` mean.
    pub fn sweep_variable(self) -> &'static str {
        match self {
            ExperimentKind::ScmaSer | ExperimentKind::ScmaBlind | ExperimentKind::CsmudGap => "snr_db",
            ExperimentKind::CraThroughput => "beta",
            ExperimentKind::GrantfreeCollision => "active_users",
            ExperimentKind::CpmEnvelope => "subcarriers",
            ExperimentKind::CpmBer => "ebn0_db",
        }
    }

    /// Metric optimised by sweeps, and whether larger is better.
    pub fn primary_metric(self) -> (&'static str, bool) {
        match self {
            ExperimentKind::ScmaSer => ("ser", false),
            ExperimentKind::ScmaBlind => ("activity_error", false),
            ExperimentKind::CsmudGap => ("ser_omp", false),
            ExperimentKind::CraThroughput => ("throughput", true),
            ExperimentKind::GrantfreeCollision => ("delivered_users", true),
            ExperimentKind::CpmEnvelope => ("ifdma_papr_db", false),
            ExperimentKind::CpmBer => ("ber", false),
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::ScmaSer => "SCMA layer-symbol error rate of MPA detection versus Es/N0",
            ExperimentKind::ScmaBlind => "blind SCMA activity and data detection versus Es/N0",
            ExperimentKind::CsmudGap => "CS-MUD symbol error rate against the known-activity oracle",
            ExperimentKind::CraThroughput => "frameless coded random access throughput versus beta",
            ExperimentKind::GrantfreeCollision => "grant-free CTU pilot collisions and delivery versus load",
            ExperimentKind::CpmEnvelope => "CPM, I-FDMA CPM and multicarrier envelope metrics",
            ExperimentKind::CpmBer => "MSK MLSE bit error rate versus Eb/N0",
        }
    }

    fn sections(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::ScmaSer => &["scma"],
            ExperimentKind::ScmaBlind => &["scma", "blind"],
            ExperimentKind::CsmudGap => &["csmud"],
            ExperimentKind::CraThroughput => &["cra"],
            ExperimentKind::GrantfreeCollision => &["grantfree"],
            ExperimentKind::CpmEnvelope | ExperimentKind::CpmBer => &["cpm"],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown experiment kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorMode {
    #[default]
    SumProduct,
    MaxLog,
}

impl From<DetectorMode> for MpaMode {
    fn from(m: DetectorMode) -> MpaMode {
        match m {
            DetectorMode::SumProduct => MpaMode::SumProduct,
            DetectorMode::MaxLog => MpaMode::MaxLog,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScmaParams {
    pub tones: usize,
    pub layer_degree: usize,
    pub order: usize,
    pub iterations: usize,
    pub mode: DetectorMode,
    pub fading: bool,
    /// Randomised codebook construction; absent for the default one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub construction_seed: Option<u64>,
    /// Also run the exhaustive oracle and record disagreement.
    pub compare_ml: bool,
}

impl Default for ScmaParams {
    fn default() -> Self {
        ScmaParams {
            tones: 4,
            layer_degree: 2,
            order: 4,
            iterations: 6,
            mode: DetectorMode::SumProduct,
            fading: true,
            construction_seed: None,
            compare_ml: false,
        }
    }
}

impl ScmaParams {
    pub fn construction(&self) -> Construction {
        self.construction_seed.map_or(Construction::Default, Construction::Seeded)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlindParams {
    pub prior_active: f64,
    pub threshold: f64,
    /// Exact number of active layers per trial; when absent each layer is
    /// active with probability `prior_active`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_layers: Option<usize>,
}

impl Default for BlindParams {
    fn default() -> Self {
        BlindParams {
            prior_active: 0.3,
            threshold: 0.5,
            active_layers: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModulationName {
    #[default]
    Bpsk,
    Qpsk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopName {
    /// Genie sparsity: the true number of active users.
    KnownSparsity,
    /// `eps = residual_factor * sqrt(Ns L n0)`.
    #[default]
    Residual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsMudParams {
    pub users: usize,
    pub spreading_len: usize,
    pub p_active: f64,
    pub frame_len: usize,
    pub modulation: ModulationName,
    pub gains_known: bool,
    pub fading: bool,
    pub stop: StopName,
    pub residual_factor: f64,
}

impl Default for CsMudParams {
    fn default() -> Self {
        CsMudParams {
            users: 16,
            spreading_len: 16,
            p_active: 0.2,
            frame_len: 8,
            modulation: ModulationName::Bpsk,
            gains_known: true,
            fading: true,
            stop: StopName::Residual,
            residual_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CraParams {
    pub users: usize,
    pub mpr_threshold: usize,
    pub resolved_fraction: f64,
    pub max_slot_factor: f64,
}

impl Default for CraParams {
    fn default() -> Self {
        CraParams {
            users: 100,
            mpr_threshold: 1,
            resolved_fraction: 0.85,
            max_slot_factor: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrantFreePhyName {
    #[default]
    Abstract,
    BlindMpa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrantFreeParams {
    pub regions: usize,
    pub codebooks: usize,
    pub pilots: usize,
    pub phy: GrantFreePhyName,
    /// Blind-MPA mode only.
    pub snr_db: f64,
    pub fading: bool,
    pub interference_scale: f64,
    pub prior_active: f64,
    pub order: usize,
    pub tones: usize,
    pub layer_degree: usize,
}

impl Default for GrantFreeParams {
    fn default() -> Self {
        GrantFreeParams {
            regions: 1,
            codebooks: 6,
            pilots: 4,
            phy: GrantFreePhyName::Abstract,
            snr_db: 20.0,
            fading: true,
            interference_scale: 1.0,
            prior_active: 0.5,
            order: 4,
            tones: 4,
            layer_degree: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecodingName {
    None,
    #[default]
    Differential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpmParams {
    /// Rational `"k/p"`.
    pub modulation_index: String,
    pub samples_per_symbol: usize,
    pub symbols: usize,
    pub precoding: PrecodingName,
    pub ifdma_users: usize,
    pub ifdma_oversampling: usize,
    pub multicarrier_symbols: usize,
}

impl Default for CpmParams {
    fn default() -> Self {
        CpmParams {
            modulation_index: "1/2".into(),
            samples_per_symbol: 4,
            symbols: 16,
            precoding: PrecodingName::Differential,
            ifdma_users: 4,
            ifdma_oversampling: 4,
            multicarrier_symbols: 4,
        }
    }
}

impl CpmParams {
    pub fn spec(&self) -> Result<CpmSpec> {
        let h = Ratio::<u32>::from_str(&self.modulation_index)
            .map_err(|e| Error::Validation(format!("cpm.modulation_index `{}`: {e}", self.modulation_index)))?;
        let mut spec = CpmSpec::new(h, self.samples_per_symbol, self.symbols)?;
        spec.precoding = match self.precoding {
            PrecodingName::None => Precoding::None,
            PrecodingName::Differential => Precoding::Differential,
        };
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub trials: u64,
    /// Values of the kind's sweep variable.
    pub sweep: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scma: Option<ScmaParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blind: Option<BlindParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csmud: Option<CsMudParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cra: Option<CraParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grantfree: Option<GrantFreeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpm: Option<CpmParams>,
}

fn fail(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

fn check_probability(name: &str, p: f64, allow_one: bool) -> Result<()> {
    let ok = p > 0.0 && (p < 1.0 || allow_one && p == 1.0);
    if ok {
        Ok(())
    } else {
        Err(fail(format!("{name} must lie in (0, 1{}, got {p}", if allow_one { "]" } else { ")" })))
    }
}

impl Scenario {
    /// A scenario of `kind` with every section at its defaults.
    pub fn with_defaults(name: &str, kind: ExperimentKind, sweep: Vec<f64>) -> Result<Scenario> {
        let mut s = Scenario {
            name: name.into(),
            kind,
            seed: 1,
            trials: 100,
            sweep,
            scma: None,
            blind: None,
            csmud: None,
            cra: None,
            grantfree: None,
            cpm: None,
        };
        s.fill_defaults()?;
        s.validate()?;
        Ok(s)
    }

    fn present_sections(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.scma.is_some() {
            v.push("scma");
        }
        if self.blind.is_some() {
            v.push("blind");
        }
        if self.csmud.is_some() {
            v.push("csmud");
        }
        if self.cra.is_some() {
            v.push("cra");
        }
        if self.grantfree.is_some() {
            v.push("grantfree");
        }
        if self.cpm.is_some() {
            v.push("cpm");
        }
        v
    }

    fn fill_defaults(&mut self) -> Result<()> {
        let wanted = self.kind.sections();
        if let Some(extra) = self.present_sections().into_iter().find(|s| !wanted.contains(s)) {
            return Err(fail(format!("section [{extra}] is not used by kind {}", self.kind)));
        }
        for &s in wanted {
            match s {
                "scma" => {
                    self.scma.get_or_insert_with(Default::default);
                }
                "blind" => {
                    self.blind.get_or_insert_with(Default::default);
                }
                "csmud" => {
                    self.csmud.get_or_insert_with(Default::default);
                }
                "cra" => {
                    self.cra.get_or_insert_with(Default::default);
                }
                "grantfree" => {
                    self.grantfree.get_or_insert_with(Default::default);
                }
                _ => {
                    self.cpm.get_or_insert_with(Default::default);
                }
            }
        }
        Ok(())
    }

    pub fn scma(&self) -> &ScmaParams {
        self.scma.as_ref().expect("validated scenario carries its sections")
    }

    pub fn blind(&self) -> &BlindParams {
        self.blind.as_ref().expect("validated scenario carries its sections")
    }

    pub fn csmud(&self) -> &CsMudParams {
        self.csmud.as_ref().expect("validated scenario carries its sections")
    }

    pub fn cra(&self) -> &CraParams {
        self.cra.as_ref().expect("validated scenario carries its sections")
    }

    pub fn grantfree(&self) -> &GrantFreeParams {
        self.grantfree.as_ref().expect("validated scenario carries its sections")
    }

    pub fn cpm(&self) -> &CpmParams {
        self.cpm.as_ref().expect("validated scenario carries its sections")
    }

    /// Checks every invariant; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(fail("name must not be empty"));
        }
        if self.trials == 0 {
            return Err(fail("trials must be >= 1"));
        }
        if self.trials > MAX_TRIALS {
            return Err(fail(format!("trials must be <= {MAX_TRIALS}, got {}", self.trials)));
        }
        if self.sweep.is_empty() {
            return Err(fail(format!("sweep ({}) must list at least one point", self.kind.sweep_variable())));
        }
        if let Some(v) = self.sweep.iter().find(|v| !v.is_finite()) {
            return Err(fail(format!("sweep value {v} is not finite")));
        }
        let wanted = self.kind.sections();
        let present = self.present_sections();
        if let Some(extra) = present.iter().find(|s| !wanted.contains(s)) {
            return Err(fail(format!("section [{extra}] is not used by kind {}", self.kind)));
        }
        if let Some(missing) = wanted.iter().find(|s| !present.contains(s)) {
            return Err(fail(format!("section [{missing}] is missing")));
        }
        let in_context = |e: Error| match e {
            Error::Validation(_) => e,
            other => fail(other.to_string()),
        };
        match self.kind {
            ExperimentKind::ScmaSer | ExperimentKind::ScmaBlind => {
                let p = self.scma();
                if p.iterations == 0 {
                    return Err(fail("scma.iterations must be >= 1"));
                }
                let graph = build_factor_graph(p.tones, p.layer_degree).map_err(in_context)?;
                build_codebooks::<f64>(&graph, p.order, p.construction()).map_err(in_context)?;
                if self.kind == ExperimentKind::ScmaBlind {
                    let b = self.blind();
                    check_probability("blind.prior_active", b.prior_active, true)?;
                    check_probability("blind.threshold", b.threshold, false)?;
                    if let Some(k) = b.active_layers {
                        if k > graph.num_layers() {
                            return Err(fail(format!(
                                "blind.active_layers = {k} exceeds the {} layers",
                                graph.num_layers()
                            )));
                        }
                    }
                }
            }
            ExperimentKind::CsmudGap => {
                let p = self.csmud();
                if p.users == 0 || p.spreading_len == 0 || p.frame_len == 0 {
                    return Err(fail("csmud.users, csmud.spreading_len and csmud.frame_len must be >= 1"));
                }
                check_probability("csmud.p_active", p.p_active, true)?;
                if !(p.residual_factor > 0.0 && p.residual_factor.is_finite()) {
                    return Err(fail("csmud.residual_factor must be positive"));
                }
            }
            ExperimentKind::CraThroughput => {
                let p = self.cra();
                if p.users == 0 {
                    return Err(fail("cra.users must be >= 1"));
                }
                if p.mpr_threshold == 0 {
                    return Err(fail("cra.mpr_threshold must be >= 1"));
                }
                check_probability("cra.resolved_fraction", p.resolved_fraction, true)?;
                if !(p.max_slot_factor >= 1.0 && p.max_slot_factor.is_finite()) {
                    return Err(fail("cra.max_slot_factor must be >= 1"));
                }
                if let Some(b) = self.sweep.iter().find(|&&b| !(b > 0.0 && b <= p.users as f64)) {
                    return Err(fail(format!("beta = {b} must lie in (0, cra.users]")));
                }
            }
            ExperimentKind::GrantfreeCollision => {
                let p = self.grantfree();
                build_ctu_pool(p.regions, p.codebooks, p.pilots).map_err(in_context)?;
                if let Some(a) = self.sweep.iter().find(|&&a| a < 0.0 || a.fract() != 0.0) {
                    return Err(fail(format!("active_users = {a} must be a non-negative integer")));
                }
                if p.phy == GrantFreePhyName::BlindMpa {
                    check_probability("grantfree.prior_active", p.prior_active, true)?;
                    if !(p.interference_scale >= 0.0 && p.interference_scale.is_finite()) {
                        return Err(fail("grantfree.interference_scale must be >= 0"));
                    }
                    let graph = build_factor_graph(p.tones, p.layer_degree).map_err(in_context)?;
                    build_codebooks::<f64>(&graph, p.order, Construction::Default).map_err(in_context)?;
                    if p.codebooks > graph.num_layers() {
                        return Err(fail(format!(
                            "grantfree.codebooks = {} exceeds the {} SCMA layers",
                            p.codebooks,
                            graph.num_layers()
                        )));
                    }
                }
            }
            ExperimentKind::CpmEnvelope | ExperimentKind::CpmBer => {
                let p = self.cpm();
                p.spec().map_err(in_context)?;
                if p.symbols == 0 {
                    return Err(fail("cpm.symbols must be >= 1"));
                }
                if self.kind == ExperimentKind::CpmEnvelope {
                    if p.ifdma_users == 0 || p.ifdma_oversampling == 0 || p.multicarrier_symbols == 0 {
                        return Err(fail(
                            "cpm.ifdma_users, cpm.ifdma_oversampling and cpm.multicarrier_symbols must be >= 1",
                        ));
                    }
                    if let Some(n) = self.sweep.iter().find(|&&n| n < 2.0 || n.fract() != 0.0) {
                        return Err(fail(format!("subcarriers = {n} must be an integer >= 2")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Stream id of `trial` at sweep point `point`.
    pub fn stream_id(point: usize, trial: u64) -> u64 {
        point as u64 * MAX_TRIALS + trial
    }
}

/// Parses and validates scenario text, filling defaults for the kind's
/// sections.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut s: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    s.fill_defaults()?;
    s.validate()?;
    Ok(s)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn scenario_to_toml(scenario: &Scenario) -> Result<String> {
    toml::to_string(scenario).map_err(|e| Error::Parse(e.to_string()))
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    std::fs::write(path, scenario_to_toml(scenario)?)?;
    Ok(())
}

/// Sets a numeric parameter by dotted path (`cra.users`, `seed`) or by the
/// kind's sweep variable name, which replaces the sweep with one point.
pub fn set_parameter(scenario: &Scenario, name: &str, value: f64) -> Result<Scenario> {
    if name == scenario.kind.sweep_variable() {
        let mut s = scenario.clone();
        s.sweep = vec![value];
        s.validate()?;
        return Ok(s);
    }
    let mut doc = toml::Value::try_from(scenario).map_err(|e| Error::Parse(e.to_string()))?;
    let mut slot = &mut doc;
    for part in name.split('.') {
        slot = slot
            .get_mut(part)
            .ok_or_else(|| fail(format!("parameter `{name}` does not exist for kind {}", scenario.kind)))?;
    }
    *slot = match slot {
        toml::Value::Integer(_) => {
            if value.fract() != 0.0 || value < i64::MIN as f64 || value > i64::MAX as f64 {
                return Err(fail(format!("parameter `{name}` is an integer, got {value}")));
            }
            toml::Value::Integer(value as i64)
        }
        toml::Value::Float(_) => toml::Value::Float(value),
        _ => return Err(fail(format!("parameter `{name}` is not numeric"))),
    };
    let mut s: Scenario = doc.try_into().map_err(|e: toml::de::Error| fail(e.to_string()))?;
    s.fill_defaults()?;
    s.validate()?;
    Ok(s)
}
