//! Scenario ingestion: a line-oriented text format describing the topology,
//! the segment source, the compromised set, router check configuration,
//! attacker strategy, honest traffic, and the run parameters.
//!
//! ```text
//! [topology]
//! core A B            # core ASes
//! as D E              # non-core ASes
//! link A:1 B:1 core   # endpoints and type as seen from the first side
//! link A:3 D:1 provcust
//! [compromised]
//! E
//! [segments]
//! auto max_links=3
//! [routers]
//! set segment_switch_checks=off
//! as E set intra_segment_valley_check=off
//! split E = 2 | 1 3
//! [attacker]
//! strategy splice
//! [traffic]
//! flow up A-D down A-E-H count=2
//! [run]
//! seed 11
//! steps 400
//! ```
//!
//! The `[routers]` section describes the scenario's legacy configuration;
//! running in verified mode ignores it and enables every check. Peering
//! link types are not modeled and rejected with an explicit error.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::attacker::{ScriptedKind, Strategy};
use crate::authseg::SegmentKind;
use crate::router::CheckFlags;
use crate::topology::{AsId, IfId, LinkType, Topology};

/// Where the authorized segments come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SegmentSource {
    /// Authorize every rule-conforming segment up to the link bound.
    Auto { max_links: usize },
    /// Authorize exactly the listed construction-order routes.
    Explicit(Vec<(SegmentKind, Vec<AsId>)>),
}

/// One honest traffic flow: a combined path given as construction-order
/// segment routes, sent `count` times.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowSpec {
    pub legs: Vec<(SegmentKind, Vec<AsId>)>,
    pub count: u32,
}

/// A fully parsed scenario. Seeds determine the run completely.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub topology: Topology,
    pub segments: SegmentSource,
    pub base_flags: CheckFlags,
    pub per_as_flags: BTreeMap<AsId, CheckFlags>,
    pub splits: BTreeMap<AsId, Vec<Vec<IfId>>>,
    pub strategy: Strategy,
    pub flows: Vec<FlowSpec>,
    pub auto_flows: u32,
    pub seed: u64,
    pub steps: u64,
}

impl Scenario {
    /// Minimal scenario around a prebuilt topology; callers fill in the
    /// rest.
    pub fn bare(name: impl Into<String>, topology: Topology) -> Self {
        Scenario {
            name: name.into(),
            topology,
            segments: SegmentSource::Auto { max_links: 4 },
            base_flags: CheckFlags::verified(),
            per_as_flags: BTreeMap::new(),
            splits: BTreeMap::new(),
            strategy: Strategy::None,
            flows: Vec::new(),
            auto_flows: 0,
            seed: 0,
            steps: 1000,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("{0}")]
    Semantic(String),
}

fn perr(ln: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse(ln, msg.into())
}

fn parse_endpoint(s: &str, ln: usize) -> Result<(AsId, IfId), ScenarioError> {
    let (a, i) = s
        .split_once(':')
        .ok_or_else(|| perr(ln, format!("expected AS:IF, got '{s}'")))?;
    let i: u16 = i
        .parse()
        .map_err(|_| perr(ln, format!("bad interface in '{s}'")))?;
    Ok((AsId::new(a), IfId(i)))
}

fn parse_kv(s: &str, key: &str, ln: usize) -> Result<u64, ScenarioError> {
    let v = s
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| perr(ln, format!("expected {key}=<n>, got '{s}'")))?;
    v.parse()
        .map_err(|_| perr(ln, format!("bad number in '{s}'")))
}

fn parse_route(s: &str) -> Vec<AsId> {
    s.split('-').map(AsId::new).collect()
}

fn parse_role(s: &str, ln: usize) -> Result<SegmentKind, ScenarioError> {
    match s {
        "up" => Ok(SegmentKind::Up),
        "core" => Ok(SegmentKind::Core),
        "down" => Ok(SegmentKind::Down),
        other => Err(perr(ln, format!("unknown segment role '{other}'"))),
    }
}

fn set_flag(flags: &mut CheckFlags, name: &str, value: bool, ln: usize) -> Result<(), ScenarioError> {
    match name {
        "segment_switch_checks" => flags.segment_switch_checks = value,
        "enforce_max_segments" => flags.enforce_max_segments = value,
        "intra_segment_valley_check" => flags.intra_segment_valley_check = value,
        "verify_only_handling" => flags.verify_only_handling = value,
        "allow_internal_to_internal" => flags.allow_internal_to_internal = value,
        other => return Err(perr(ln, format!("unknown check flag '{other}'"))),
    }
    Ok(())
}

/// Parses and semantically validates a scenario file.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut sc = Scenario::bare("scenario", Topology::new());
    let mut section = String::new();
    let mut explicit_segments: Vec<(SegmentKind, Vec<AsId>)> = Vec::new();
    let mut saw_auto = false;
    let mut global_sets: Vec<(String, bool)> = Vec::new();
    let mut per_as_sets: Vec<(AsId, String, bool)> = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let ln = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(sec) = line.strip_prefix('[') {
            let sec = sec
                .strip_suffix(']')
                .ok_or_else(|| perr(ln, "unterminated section header"))?;
            section = sec.to_string();
            continue;
        }
        let mut words = line.split_whitespace();
        let head = words.next().unwrap();
        match (section.as_str(), head) {
            ("topology", "core") | ("topology", "as") => {
                for name in words {
                    sc.topology.add_as(AsId::new(name), head == "core");
                }
            }
            ("topology", "link") => {
                let a = words.next().ok_or_else(|| perr(ln, "link endpoint"))?;
                let b = words.next().ok_or_else(|| perr(ln, "link endpoint"))?;
                let ty = words.next().ok_or_else(|| perr(ln, "link type"))?;
                let (a, ai) = parse_endpoint(a, ln)?;
                let (b, bi) = parse_endpoint(b, ln)?;
                let lt = match ty {
                    "provcust" => LinkType::ProvCust,
                    "custprov" => LinkType::CustProv,
                    "core" => LinkType::Core,
                    "peer" => {
                        return Err(perr(
                            ln,
                            "peering links are not modeled; declare the relationship as provcust, custprov, or core",
                        ))
                    }
                    other => return Err(perr(ln, format!("unknown link type '{other}'"))),
                };
                sc.topology.add_link(a, ai, b, bi, lt);
            }
            ("compromised", _) => {
                sc.topology.compromised.insert(AsId::new(head));
                for name in words {
                    sc.topology.compromised.insert(AsId::new(name));
                }
            }
            ("segments", "auto") => {
                let arg = words.next().ok_or_else(|| perr(ln, "auto max_links=<n>"))?;
                let max = parse_kv(arg, "max_links", ln)? as usize;
                sc.segments = SegmentSource::Auto { max_links: max };
                saw_auto = true;
            }
            ("segments", "segment") => {
                let role = parse_role(words.next().ok_or_else(|| perr(ln, "segment kind"))?, ln)?;
                let route = parse_route(words.next().ok_or_else(|| perr(ln, "segment route"))?);
                explicit_segments.push((role, route));
            }
            ("routers", "set") => {
                let arg = words.next().ok_or_else(|| perr(ln, "set <flag>=<on|off>"))?;
                let (name, v) = arg
                    .split_once('=')
                    .ok_or_else(|| perr(ln, "set <flag>=<on|off>"))?;
                global_sets.push((name.to_string(), v == "on"));
            }
            ("routers", "as") => {
                let as_id = AsId::new(words.next().ok_or_else(|| perr(ln, "as <name> set"))?);
                if words.next() != Some("set") {
                    return Err(perr(ln, "expected 'as <name> set <flag>=<on|off>'"));
                }
                let arg = words.next().ok_or_else(|| perr(ln, "flag assignment"))?;
                let (name, v) = arg
                    .split_once('=')
                    .ok_or_else(|| perr(ln, "flag assignment"))?;
                per_as_sets.push((as_id, name.to_string(), v == "on"));
            }
            ("routers", "split") => {
                let as_id = AsId::new(words.next().ok_or_else(|| perr(ln, "split <as> ="))?);
                if words.next() != Some("=") {
                    return Err(perr(ln, "expected 'split <as> = i j | k'"));
                }
                let mut groups: Vec<Vec<IfId>> = vec![Vec::new()];
                for w in words {
                    if w == "|" {
                        groups.push(Vec::new());
                    } else {
                        let i: u16 =
                            w.parse().map_err(|_| perr(ln, format!("bad interface '{w}'")))?;
                        groups.last_mut().unwrap().push(IfId(i));
                    }
                }
                if groups.iter().any(|g| g.is_empty()) {
                    return Err(perr(ln, "empty router group"));
                }
                sc.splits.insert(as_id, groups);
            }
            ("attacker", "strategy") => {
                let what = words.next().ok_or_else(|| perr(ln, "strategy name"))?;
                sc.strategy = match what {
                    "none" => Strategy::None,
                    "splice" => Strategy::Scripted(ScriptedKind::Splice),
                    "loop" => Strategy::Scripted(ScriptedKind::Loop),
                    "source_route" => Strategy::Scripted(ScriptedKind::SourceRoute),
                    "verify_only" => Strategy::Scripted(ScriptedKind::VerifyOnly),
                    "random" => {
                        let arg = words.next().ok_or_else(|| perr(ln, "random budget=<n>"))?;
                        Strategy::Random {
                            budget: parse_kv(arg, "budget", ln)? as u32,
                        }
                    }
                    other => return Err(perr(ln, format!("unknown strategy '{other}'"))),
                };
            }
            ("traffic", "flow") => {
                let mut legs = Vec::new();
                let mut count = 1u32;
                let rest: Vec<&str> = words.collect();
                let mut k = 0;
                while k < rest.len() {
                    if let Some(c) = rest[k].strip_prefix("count=") {
                        count = c
                            .parse()
                            .map_err(|_| perr(ln, format!("bad count '{}'", rest[k])))?;
                        k += 1;
                    } else {
                        let role = parse_role(rest[k], ln)?;
                        let route = rest
                            .get(k + 1)
                            .ok_or_else(|| perr(ln, "flow leg needs a route"))?;
                        legs.push((role, parse_route(route)));
                        k += 2;
                    }
                }
                if legs.is_empty() {
                    return Err(perr(ln, "flow without segments"));
                }
                sc.flows.push(FlowSpec { legs, count });
            }
            ("run", "seed") => {
                sc.seed = words
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| perr(ln, "seed <n>"))?;
            }
            ("run", "steps") => {
                sc.steps = words
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| perr(ln, "steps <n>"))?;
            }
            ("", other) => return Err(perr(ln, format!("'{other}' before any section"))),
            (sec, other) => {
                return Err(perr(ln, format!("unknown directive '{other}' in [{sec}]")))
            }
        }
    }

    if !explicit_segments.is_empty() {
        if saw_auto {
            return Err(ScenarioError::Semantic(
                "segments section mixes auto and explicit entries".into(),
            ));
        }
        sc.segments = SegmentSource::Explicit(explicit_segments);
    }

    // resolve router flags: global sets form the base, per-AS lines override
    let mut base = CheckFlags::verified();
    for (name, v) in &global_sets {
        set_flag(&mut base, name, *v, 0)
            .map_err(|_| ScenarioError::Semantic(format!("unknown check flag '{name}'")))?;
    }
    sc.base_flags = base;
    for (as_id, name, v) in &per_as_sets {
        let entry = sc.per_as_flags.entry(as_id.clone()).or_insert(base);
        set_flag(entry, name, *v, 0)
            .map_err(|_| ScenarioError::Semantic(format!("unknown check flag '{name}'")))?;
    }

    // semantic validation
    let violations = sc.topology.validate();
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(ScenarioError::Semantic(format!(
            "topology invalid: {}",
            msgs.join("; ")
        )));
    }
    for a in &sc.topology.compromised {
        if !sc.topology.ases.contains_key(a) {
            return Err(ScenarioError::Semantic(format!(
                "compromised list names undefined AS {a}"
            )));
        }
    }
    for (a, _) in sc.per_as_flags.iter() {
        if !sc.topology.ases.contains_key(a) {
            return Err(ScenarioError::Semantic(format!(
                "router override names undefined AS {a}"
            )));
        }
    }
    for (a, groups) in &sc.splits {
        if !sc.topology.ases.contains_key(a) {
            return Err(ScenarioError::Semantic(format!(
                "split names undefined AS {a}"
            )));
        }
        let declared: Vec<IfId> = groups.iter().flatten().copied().collect();
        let actual = sc.topology.interfaces_of(a);
        for i in &declared {
            if !actual.contains(i) {
                return Err(ScenarioError::Semantic(format!(
                    "split of {a} names unknown interface {i}"
                )));
            }
        }
        for i in &actual {
            if !declared.contains(i) {
                return Err(ScenarioError::Semantic(format!(
                    "split of {a} leaves interface {i} unowned"
                )));
            }
        }
    }
    Ok(sc)
}

/// Built-in scenarios shipped with the binary; `(name, text)` pairs.
pub fn builtin_scenarios() -> Vec<(&'static str, &'static str)> {
    vec![
        ("fig3", include_str!("../fixtures/fig3.scn")),
        ("splice", include_str!("../fixtures/splice.scn")),
        ("loop", include_str!("../fixtures/loop.scn")),
        ("source_route", include_str!("../fixtures/source_route.scn")),
        ("verify_only", include_str!("../fixtures/verify_only.scn")),
        (
            "loop_compromised",
            include_str!("../fixtures/loop_compromised.scn"),
        ),
        ("split_as", include_str!("../fixtures/split_as.scn")),
    ]
}

pub fn builtin(name: &str) -> Option<Scenario> {
    builtin_scenarios().iter().find(|(n, _)| *n == name).map(|(n, text)| {
        let mut sc = load_scenario(text).expect("builtin scenarios parse");
        sc.name = n.to_string();
        sc
    })
}

/// The eight-AS reference topology used across tests: three core ASes, two
/// customers below A (one of them dual-homed to C), and a two-level customer
/// chain below B.
pub fn fig_topology() -> Topology {
    builtin("fig3").expect("fig3 fixture").topology
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_parses() {
        let text = "\
[topology]
core A
as B
link A:1 B:1 provcust
[segments]
auto max_links=2
[run]
seed 1
steps 10
";
        let sc = load_scenario(text).unwrap();
        assert_eq!(sc.topology.ases.len(), 2);
        assert_eq!(sc.seed, 1);
        assert_eq!(sc.segments, SegmentSource::Auto { max_links: 2 });
    }

    #[test]
    fn undefined_compromised_as_is_rejected() {
        let text = "\
[topology]
core A
as B
link A:1 B:1 provcust
[compromised]
Z
";
        let e = load_scenario(text).unwrap_err();
        assert!(matches!(e, ScenarioError::Semantic(_)), "{e}");
    }

    #[test]
    fn peering_links_fail_loudly() {
        let text = "\
[topology]
core A B
link A:1 B:1 peer
";
        let e = load_scenario(text).unwrap_err();
        assert!(e.to_string().contains("peering"), "{e}");
    }

    #[test]
    fn builtin_fixtures_all_load() {
        for (name, text) in builtin_scenarios() {
            let sc = load_scenario(text);
            assert!(sc.is_ok(), "{name}: {:?}", sc.err());
        }
    }

    #[test]
    fn fig3_scenario_shape() {
        let sc = builtin("fig3").unwrap();
        assert_eq!(sc.flows.len(), 1);
        assert_eq!(sc.flows[0].legs.len(), 2);
        assert!(sc.topology.is_core(&AsId::new("A")));
        assert!(!sc.topology.is_core(&AsId::new("H")));
    }

    #[test]
    fn router_flag_overrides_resolve() {
        let text = "\
[topology]
core A
as B
link A:1 B:1 provcust
[routers]
set segment_switch_checks=off
as B set intra_segment_valley_check=off
";
        let sc = load_scenario(text).unwrap();
        assert!(!sc.base_flags.segment_switch_checks);
        assert!(sc.base_flags.intra_segment_valley_check);
        let b = sc.per_as_flags.get(&AsId::new("B")).unwrap();
        assert!(!b.segment_switch_checks);
        assert!(!b.intra_segment_valley_check);
    }
}
