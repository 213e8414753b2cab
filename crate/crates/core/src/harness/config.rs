//! Experiment configuration files.
//!
//! The format is TOML. Every section is optional and falls back to the
//! nominal setup; unknown keys are rejected with their line number. See the
//! book chapter on configuration for the full grammar.

use std::fmt;
use std::ops::Range;
use std::path::PathBuf;

use serde::Deserialize;
use toml::Spanned;

use crate::estimation::ClassRules;
use crate::netsim::{IfaceEvent, LinkConfig, ModePolicy, SimConfig, Topology, WorkloadSpec};
use crate::scheduling::SchedulerKind;
use crate::types::{AppPattern, IfaceId, PolicyRule, QualClass, DEFAULT_MTU};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line of the offending text, when known.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        ConfigError { line: None, message: message.into() }
    }

    fn at(text: &str, span: Range<usize>, message: impl Into<String>) -> Self {
        ConfigError { line: Some(line_of(text, span.start)), message: message.into() }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfaceParams {
    pub bandwidth_mbps: f64,
    pub loss_percent: f64,
}

/// The full parameter vector of one simulated setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub server_bandwidth_mbps: f64,
    pub server_loss_percent: f64,
    pub interfaces: Vec<IfaceParams>,
    pub prop_delay_ms: f64,
    pub queue_packets: u32,
    pub mtu: u32,
    pub beta_small: f64,
    pub beta_large: f64,
    pub lambda_small: f64,
    pub lambda_large: f64,
    pub long_lived: bool,
    pub dest_supports_striping: bool,
    pub duration: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            server_bandwidth_mbps: 6.0,
            server_loss_percent: 0.0,
            interfaces: vec![
                IfaceParams { bandwidth_mbps: 2.0, loss_percent: 0.0 },
                IfaceParams { bandwidth_mbps: 1.0, loss_percent: 0.0 },
            ],
            prop_delay_ms: 10.0,
            queue_packets: 64,
            mtu: DEFAULT_MTU,
            beta_small: 13.0,
            beta_large: 1.0,
            lambda_small: 22_380.0,
            lambda_large: 285_000.0,
            long_lived: false,
            dest_supports_striping: true,
            duration: 60.0,
        }
    }
}

impl Params {
    pub fn topology(&self) -> Topology {
        let link = |mbps: f64, loss: f64| LinkConfig {
            bandwidth_bps: mbps * 1e6,
            prop_delay: self.prop_delay_ms / 1e3,
            loss_ratio: loss / 100.0,
            queue_packets: self.queue_packets,
        };
        Topology {
            interfaces: self.interfaces.iter().map(|i| link(i.bandwidth_mbps, i.loss_percent)).collect(),
            server: link(self.server_bandwidth_mbps, self.server_loss_percent),
            mtu: self.mtu,
        }
    }

    pub fn workload(&self, seed: u64) -> WorkloadSpec {
        WorkloadSpec {
            beta_small: self.beta_small,
            beta_large: self.beta_large,
            lambda_small: self.lambda_small,
            lambda_large: self.lambda_large,
            duration: self.duration,
            seed,
            long_lived: self.long_lived,
            dest_supports_striping: self.dest_supports_striping,
        }
    }
}

/// The parameter an experiment varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    None,
    ServerBandwidthMbps,
    ServerLossPercent,
    If1BandwidthMbps,
    If1LossPercent,
    If2BandwidthMbps,
    If2LossPercent,
    BetaSmall,
    BetaLarge,
}

impl SweepVar {
    pub const ALL: [SweepVar; 9] = [
        SweepVar::None,
        SweepVar::ServerBandwidthMbps,
        SweepVar::ServerLossPercent,
        SweepVar::If1BandwidthMbps,
        SweepVar::If1LossPercent,
        SweepVar::If2BandwidthMbps,
        SweepVar::If2LossPercent,
        SweepVar::BetaSmall,
        SweepVar::BetaLarge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepVar::None => "none",
            SweepVar::ServerBandwidthMbps => "server_bandwidth_mbps",
            SweepVar::ServerLossPercent => "server_loss_percent",
            SweepVar::If1BandwidthMbps => "if1_bandwidth_mbps",
            SweepVar::If1LossPercent => "if1_loss_percent",
            SweepVar::If2BandwidthMbps => "if2_bandwidth_mbps",
            SweepVar::If2LossPercent => "if2_loss_percent",
            SweepVar::BetaSmall => "beta_small",
            SweepVar::BetaLarge => "beta_large",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Inclusive bounds of the evaluated parameter space.
    pub fn range(self) -> Option<(f64, f64)> {
        match self {
            SweepVar::None => None,
            SweepVar::ServerBandwidthMbps => Some((6.0, 6.0)),
            SweepVar::ServerLossPercent | SweepVar::If1LossPercent => Some((0.0, 0.0)),
            SweepVar::If1BandwidthMbps => Some((2.0, 2.0)),
            SweepVar::If2BandwidthMbps => Some((0.25, 2.0)),
            SweepVar::If2LossPercent => Some((0.0, 10.0)),
            SweepVar::BetaSmall => Some((13.0, 13.0)),
            SweepVar::BetaLarge => Some((0.0, 5.0)),
        }
    }

    pub fn apply(self, params: &mut Params, value: f64) {
        match self {
            SweepVar::None => {}
            SweepVar::ServerBandwidthMbps => params.server_bandwidth_mbps = value,
            SweepVar::ServerLossPercent => params.server_loss_percent = value,
            SweepVar::If1BandwidthMbps => iface_mut(params, 0).bandwidth_mbps = value,
            SweepVar::If1LossPercent => iface_mut(params, 0).loss_percent = value,
            SweepVar::If2BandwidthMbps => iface_mut(params, 1).bandwidth_mbps = value,
            SweepVar::If2LossPercent => iface_mut(params, 1).loss_percent = value,
            SweepVar::BetaSmall => params.beta_small = value,
            SweepVar::BetaLarge => params.beta_large = value,
        }
    }
}

fn iface_mut(params: &mut Params, i: usize) -> &mut IfaceParams {
    while params.interfaces.len() <= i {
        params.interfaces.push(IfaceParams { bandwidth_mbps: 1.0, loss_percent: 0.0 });
    }
    &mut params.interfaces[i]
}

/// Everything needed to run one experiment: a base setup, the parameter
/// swept, the schedulers compared and how often each point is repeated.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub params: Params,
    pub sweep_var: SweepVar,
    pub sweep_values: Vec<f64>,
    pub schedulers: Vec<SchedulerKind>,
    pub runs: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub mode_policy: ModePolicy,
    pub primary: IfaceId,
    pub policy: Vec<PolicyRule>,
    pub class_rules: ClassRules,
    pub events: Vec<IfaceEvent>,
    /// Allow sweep values outside the evaluated parameter space.
    pub force_range: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "custom".into(),
            params: Params::default(),
            sweep_var: SweepVar::None,
            sweep_values: vec![0.0],
            schedulers: SchedulerKind::ALL.to_vec(),
            runs: 15,
            seed: 1,
            out: None,
            mode_policy: ModePolicy::DetectAndWait,
            primary: IfaceId(0),
            policy: Vec::new(),
            class_rules: ClassRules::default(),
            events: Vec::new(),
            force_range: false,
        }
    }
}

impl ExperimentConfig {
    /// Parameters at one sweep point.
    pub fn point(&self, value: f64) -> Params {
        let mut p = self.params.clone();
        self.sweep_var.apply(&mut p, value);
        p
    }

    pub fn sim_config(&self, value: f64, kind: SchedulerKind, seed: u64) -> SimConfig {
        let p = self.point(value);
        let mut cfg = SimConfig::new(p.topology(), p.workload(seed), kind);
        cfg.mode_policy = self.mode_policy;
        cfg.primary = self.primary;
        cfg.policy = self.policy.clone();
        cfg.class_rules = self.class_rules.clone();
        cfg.events = self.events.clone();
        cfg
    }

    pub fn check_ranges(&self) -> Result<(), ConfigError> {
        if self.force_range {
            return Ok(());
        }
        if let Some((lo, hi)) = self.sweep_var.range() {
            if let Some(v) = self.sweep_values.iter().find(|v| !(lo..=hi).contains(*v)) {
                return Err(ConfigError::new(format!(
                    "{} = {v} is outside the supported range {lo}..={hi} (use --force-range to run it anyway)",
                    self.sweep_var.name()
                )));
            }
        }
        Ok(())
    }

    /// Checks everything that can be checked without simulating.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.runs == 0 {
            return Err(ConfigError::new("runs must be at least 1"));
        }
        if self.schedulers.is_empty() {
            return Err(ConfigError::new("no schedulers selected"));
        }
        if self.sweep_values.is_empty() {
            return Err(ConfigError::new("sweep has no values"));
        }
        self.check_ranges()?;
        for &v in &self.sweep_values {
            self.sim_config(v, self.schedulers[0], self.seed)
                .validate()
                .map_err(|e| ConfigError::new(format!("{} = {v}: {e}", self.sweep_var.name())))?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<RawExperiment>,
    topology: Option<RawTopology>,
    workload: Option<RawWorkload>,
    schedulers: Option<RawSchedulers>,
    sweep: Option<RawSweep>,
    #[serde(default)]
    policy: Vec<Spanned<RawPolicy>>,
    #[serde(default)]
    classify: Vec<Spanned<RawClassify>>,
    #[serde(default)]
    events: Vec<RawEvent>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    name: Option<String>,
    runs: Option<Spanned<u32>>,
    seed: Option<u64>,
    duration: Option<f64>,
    out: Option<String>,
    mode: Option<Spanned<String>>,
    primary: Option<Spanned<u16>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    server_bandwidth_mbps: Option<f64>,
    server_loss_percent: Option<f64>,
    prop_delay_ms: Option<f64>,
    queue_packets: Option<u32>,
    mtu: Option<u32>,
    interface: Option<Vec<RawIface>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIface {
    bandwidth_mbps: f64,
    #[serde(default)]
    loss_percent: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorkload {
    beta_small: Option<f64>,
    beta_large: Option<f64>,
    lambda_small_bytes: Option<f64>,
    lambda_large_bytes: Option<f64>,
    long_lived: Option<bool>,
    dest_supports_striping: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedulers {
    names: Vec<Spanned<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    var: Spanned<String>,
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    app: Option<String>,
    port: Option<u16>,
    class: Option<String>,
    iface: Spanned<u16>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClassify {
    app: Option<String>,
    port: Option<u16>,
    class: Spanned<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    at: f64,
    iface: Spanned<u16>,
    state: Spanned<String>,
}

/// Parses a configuration document. Omitted settings keep their nominal
/// values.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    let mut cfg = ExperimentConfig::default();
    let p = &mut cfg.params;

    if let Some(t) = raw.topology {
        set(&mut p.server_bandwidth_mbps, t.server_bandwidth_mbps);
        set(&mut p.server_loss_percent, t.server_loss_percent);
        set(&mut p.prop_delay_ms, t.prop_delay_ms);
        set(&mut p.queue_packets, t.queue_packets);
        set(&mut p.mtu, t.mtu);
        if let Some(ifs) = t.interface {
            p.interfaces = ifs
                .into_iter()
                .map(|i| IfaceParams { bandwidth_mbps: i.bandwidth_mbps, loss_percent: i.loss_percent })
                .collect();
        }
    }
    if let Some(w) = raw.workload {
        set(&mut p.beta_small, w.beta_small);
        set(&mut p.beta_large, w.beta_large);
        set(&mut p.lambda_small, w.lambda_small_bytes);
        set(&mut p.lambda_large, w.lambda_large_bytes);
        set(&mut p.long_lived, w.long_lived);
        set(&mut p.dest_supports_striping, w.dest_supports_striping);
    }
    let n_ifaces = p.interfaces.len();
    let check_iface = |id: &Spanned<u16>| {
        if (*id.get_ref() as usize) < n_ifaces {
            Ok(IfaceId(*id.get_ref()))
        } else {
            Err(ConfigError::at(
                text,
                id.span(),
                format!("interface {} does not exist (topology has {n_ifaces})", id.get_ref()),
            ))
        }
    };

    if let Some(e) = raw.experiment {
        set(&mut cfg.name, e.name);
        set(&mut cfg.seed, e.seed);
        set(&mut cfg.params.duration, e.duration);
        cfg.out = e.out.map(PathBuf::from);
        if let Some(runs) = e.runs {
            if *runs.get_ref() == 0 {
                return Err(ConfigError::at(text, runs.span(), "runs must be at least 1"));
            }
            cfg.runs = *runs.get_ref() as usize;
        }
        if let Some(mode) = e.mode {
            cfg.mode_policy = match mode.get_ref().as_str() {
                "detect" => ModePolicy::Detect,
                "detect-and-wait" => ModePolicy::DetectAndWait,
                "connection-only" => ModePolicy::ConnectionOnly,
                other => {
                    return Err(ConfigError::at(
                        text,
                        mode.span(),
                        format!("unknown mode `{other}` (expected detect, detect-and-wait or connection-only)"),
                    ))
                }
            };
        }
        if let Some(primary) = e.primary {
            cfg.primary = check_iface(&primary)?;
        }
    }
    if let Some(s) = raw.schedulers {
        cfg.schedulers = s
            .names
            .iter()
            .map(|n| n.get_ref().parse::<SchedulerKind>().map_err(|e| ConfigError::at(text, n.span(), e.to_string())))
            .collect::<Result<_, _>>()?;
    }
    if let Some(s) = raw.sweep {
        cfg.sweep_var = SweepVar::parse(s.var.get_ref()).ok_or_else(|| {
            let names: Vec<_> = SweepVar::ALL.iter().map(|v| v.name()).collect();
            ConfigError::at(
                text,
                s.var.span(),
                format!("unknown sweep variable `{}` (expected one of {})", s.var.get_ref(), names.join(", ")),
            )
        })?;
        cfg.sweep_values = s.values;
    }
    for rule in &raw.policy {
        let r = rule.get_ref();
        let pattern = match (&r.app, r.port, &r.class) {
            (Some(app), None, None) => AppPattern::Name(app.clone()),
            (None, Some(port), None) => AppPattern::Port(port),
            (None, None, Some(class)) => AppPattern::Class(
                QualClass::parse(class)
                    .ok_or_else(|| ConfigError::at(text, rule.span(), format!("unknown class `{class}`")))?,
            ),
            _ => {
                return Err(ConfigError::at(text, rule.span(), "a policy rule needs exactly one of app, port or class"))
            }
        };
        cfg.policy.push(PolicyRule { pattern, pinned_iface: check_iface(&r.iface)? });
    }
    let mut names = Vec::new();
    let mut ports = Vec::new();
    for rule in &raw.classify {
        let r = rule.get_ref();
        let class = QualClass::parse(r.class.get_ref())
            .ok_or_else(|| ConfigError::at(text, r.class.span(), format!("unknown class `{}`", r.class.get_ref())))?;
        match (&r.app, r.port) {
            (Some(app), None) => names.push((app.to_ascii_lowercase(), class)),
            (None, Some(port)) => ports.push((port, class)),
            _ => return Err(ConfigError::at(text, rule.span(), "a classify rule needs exactly one of app or port")),
        }
    }
    names.append(&mut cfg.class_rules.names);
    ports.append(&mut cfg.class_rules.ports);
    cfg.class_rules = ClassRules { names, ports };
    for e in &raw.events {
        let up = match e.state.get_ref().as_str() {
            "up" => true,
            "down" => false,
            other => {
                return Err(ConfigError::at(text, e.state.span(), format!("state must be `up` or `down`, not `{other}`")))
            }
        };
        cfg.events.push(IfaceEvent { at: e.at, iface: check_iface(&e.iface)?, up });
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_nominal() {
        assert_eq!(parse_config("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn explicit_nominal_values_round_trip() {
        let text = r#"
[experiment]
runs = 15
seed = 1

[topology]
server_bandwidth_mbps = 6
interface = [{ bandwidth_mbps = 2 }, { bandwidth_mbps = 1, loss_percent = 0 }]

[workload]
beta_small = 13
beta_large = 1
"#;
        assert_eq!(parse_config(text).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn misspelled_key_names_key_and_line() {
        let text = "[topology]\nserver_bandwidth_mbps = 6\n\n[[topology.interface]]\nbadnwidth = 2\n";
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.line, Some(5));
        assert!(err.message.contains("badnwidth"), "{err}");
    }

    #[test]
    fn policy_pin() {
        let text = "[[policy]]\napp = \"skype\"\niface = 0\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.policy, vec![PolicyRule { pattern: AppPattern::Name("skype".into()), pinned_iface: IfaceId(0) }]);
    }

    #[test]
    fn unknown_interface_and_scheduler_are_errors() {
        let err = parse_config("[[events]]\nat = 1.0\niface = 7\nstate = \"down\"\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        let err = parse_config("[schedulers]\nnames = [\"co-rr\",\n  \"fastest\"]\n").unwrap_err();
        assert_eq!(err.line, Some(3));
    }

    #[test]
    fn sweep_range_needs_force() {
        let mut cfg = parse_config("[sweep]\nvar = \"if2_bandwidth_mbps\"\nvalues = [0.25, 3.0]\n").unwrap();
        assert!(cfg.validate().is_err());
        cfg.force_range = true;
        cfg.validate().unwrap();
        assert_eq!(cfg.point(3.0).interfaces[1].bandwidth_mbps, 3.0);
    }

    #[test]
    fn classify_rules_take_priority() {
        let cfg = parse_config("[[classify]]\napp = \"zoom\"\nclass = \"bandwidth-intensive\"\n").unwrap();
        assert_eq!(cfg.class_rules.names[0], ("zoom".into(), QualClass::BandwidthIntensive));
    }
}
