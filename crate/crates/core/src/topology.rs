//! AS-level network model: ASes, interface-labeled inter-AS links, link
//! types, core status, and the compromised set.
//!
//! Interfaces are small per-AS integers; the pair `(AsId, IfId)` is globally
//! unique. Links are bidirectional and stored as an involution on interface
//! endpoints, with a type recorded per endpoint side.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Opaque AS identifier. Ordered so that topology iteration is deterministic.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct AsId(pub String);

impl AsId {
    pub fn new(s: impl Into<String>) -> Self {
        AsId(s.into())
    }
}

impl fmt::Display for AsId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<&str> for AsId {
    fn from(s: &str) -> Self {
        AsId(s.to_string())
    }
}

/// Interface identifier, unique within one AS. The "empty" interface of hop
/// fields is represented as `Option<IfId>::None` and never appears in the
/// link table.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct IfId(pub u16);

impl fmt::Display for IfId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Renders an optional interface, `-` for the empty value.
pub fn fmt_ifid(i: Option<IfId>) -> String {
    match i {
        Some(i) => i.to_string(),
        None => "-".to_string(),
    }
}

/// Type of an inter-AS link as seen from one endpoint.
///
/// `ProvCust` means the local AS is the provider of the neighbor, `CustProv`
/// means the local AS is the customer. `Core` links connect core ASes and are
/// self-dual. Peering links are not modeled; scenario ingestion rejects them.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum LinkType {
    CustProv,
    ProvCust,
    Core,
}

impl LinkType {
    /// The type of the same link as seen from the other endpoint.
    pub fn dual(self) -> LinkType {
        match self {
            LinkType::CustProv => LinkType::ProvCust,
            LinkType::ProvCust => LinkType::CustProv,
            LinkType::Core => LinkType::Core,
        }
    }
}

impl fmt::Display for LinkType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkType::CustProv => write!(f, "CustProv"),
            LinkType::ProvCust => write!(f, "ProvCust"),
            LinkType::Core => write!(f, "Core"),
        }
    }
}

/// One endpoint of a link.
pub type Endpoint = (AsId, IfId);

/// Static multi-AS network: AS set with core flags, the link involution,
/// per-endpoint link types, and the set of compromised ASes.
///
/// Immutable after validation; a topology can be shared read-only across
/// concurrent scenario runs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Topology {
    pub ases: BTreeMap<AsId, bool>,
    pub links: BTreeMap<Endpoint, Endpoint>,
    pub link_types: BTreeMap<Endpoint, LinkType>,
    pub compromised: BTreeSet<AsId>,
}

/// A violated topology invariant, with the offending element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TopologyViolation {
    UnknownAs(AsId),
    DanglingLink(Endpoint),
    NotInvolution(Endpoint),
    SelfLink(Endpoint),
    MissingLinkType(Endpoint),
    DualityBroken(Endpoint, Endpoint),
    CoreLinkAtNonCore(Endpoint),
    CoreHasProvider(AsId),
    CompromisedUnknown(AsId),
}

impl fmt::Display for TopologyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TopologyViolation::*;
        match self {
            UnknownAs(a) => write!(f, "link references undeclared AS {a}"),
            DanglingLink((a, i)) => write!(f, "link at ({a},{i}) has no reverse entry"),
            NotInvolution((a, i)) => write!(f, "links({a},{i}) is not an involution"),
            SelfLink((a, i)) => write!(f, "({a},{i}) links the AS to itself"),
            MissingLinkType((a, i)) => write!(f, "no link type recorded at ({a},{i})"),
            DualityBroken((a, i), (b, j)) => {
                write!(f, "duality at ({a},{i})~({b},{j})")
            }
            CoreLinkAtNonCore((a, i)) => write!(f, "Core link at non-core AS ({a},{i})"),
            CoreHasProvider(a) => write!(f, "core AS {a} has a provider-facing link"),
            CompromisedUnknown(a) => write!(f, "compromised set names unknown AS {a}"),
        }
    }
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares an AS. Re-declaring overwrites the core flag.
    pub fn add_as(&mut self, id: AsId, core: bool) {
        self.ases.insert(id, core);
    }

    /// Adds a bidirectional link; `ltype` is the type as seen from `(a, i)`.
    /// The dual entry and type are recorded automatically.
    pub fn add_link(&mut self, a: AsId, i: IfId, b: AsId, j: IfId, ltype: LinkType) {
        self.links.insert((a.clone(), i), (b.clone(), j));
        self.links.insert((b.clone(), j), (a.clone(), i));
        self.link_types.insert((a, i), ltype);
        self.link_types.insert((b, j), ltype.dual());
    }

    pub fn is_core(&self, a: &AsId) -> bool {
        self.ases.get(a).copied().unwrap_or(false)
    }

    pub fn is_compromised(&self, a: &AsId) -> bool {
        self.compromised.contains(a)
    }

    /// The far endpoint of the link at `(a, i)`, if one exists. Routers treat
    /// an absent neighbor as a drop condition.
    pub fn neighbor(&self, a: &AsId, i: IfId) -> Option<Endpoint> {
        self.links.get(&(a.clone(), i)).cloned()
    }

    /// Link type at `(a, i)` as seen from `a`'s side.
    pub fn link_type(&self, a: &AsId, i: IfId) -> Option<LinkType> {
        self.link_types.get(&(a.clone(), i)).copied()
    }

    /// All interfaces of `a` that carry a link, in ascending order.
    pub fn interfaces_of(&self, a: &AsId) -> Vec<IfId> {
        self.links
            .range((a.clone(), IfId(0))..=(a.clone(), IfId(u16::MAX)))
            .map(|((_, i), _)| *i)
            .collect()
    }

    /// Checks every structural invariant and returns all violations found.
    /// Violations are data, not failures: an empty list means the topology is
    /// well formed.
    pub fn validate(&self) -> Vec<TopologyViolation> {
        use TopologyViolation::*;
        let mut out = Vec::new();
        for ((a, i), (b, j)) in &self.links {
            if !self.ases.contains_key(a) {
                out.push(UnknownAs(a.clone()));
            }
            if !self.ases.contains_key(b) {
                out.push(UnknownAs(b.clone()));
            }
            if a == b {
                out.push(SelfLink((a.clone(), *i)));
            }
            match self.links.get(&(b.clone(), *j)) {
                None => out.push(DanglingLink((a.clone(), *i))),
                Some(back) if back != &(a.clone(), *i) => {
                    out.push(NotInvolution((a.clone(), *i)))
                }
                _ => {}
            }
            let lt = self.link_types.get(&(a.clone(), *i));
            let lt_dual = self.link_types.get(&(b.clone(), *j));
            match (lt, lt_dual) {
                (None, _) => out.push(MissingLinkType((a.clone(), *i))),
                (Some(t), Some(td)) if td != &t.dual() => {
                    out.push(DualityBroken((a.clone(), *i), (b.clone(), *j)))
                }
                (Some(_), None) => {} // reported from the other side
                _ => {}
            }
            if let Some(t) = lt {
                let a_core = self.is_core(a);
                match t {
                    LinkType::Core => {
                        if !a_core {
                            out.push(CoreLinkAtNonCore((a.clone(), *i)));
                        }
                    }
                    LinkType::CustProv => {
                        // provider-facing link
                        if a_core {
                            out.push(CoreHasProvider(a.clone()));
                        }
                    }
                    LinkType::ProvCust => {}
                }
            }
        }
        // types recorded for endpoints with no link entry
        for ep in self.link_types.keys() {
            if !self.links.contains_key(ep) {
                out.push(DanglingLink(ep.clone()));
            }
        }
        for a in &self.compromised {
            if !self.ases.contains_key(a) {
                out.push(CompromisedUnknown(a.clone()));
            }
        }
        out.sort_by_key(|v| format!("{v:?}"));
        out.dedup();
        out
    }
}

/// Builds the two-AS provider/customer topology used throughout the unit
/// tests: `A` (core) is the provider of `B` over interfaces 1/1.
#[cfg(test)]
pub fn two_as() -> Topology {
    let mut t = Topology::new();
    t.add_as("A".into(), true);
    t.add_as("B".into(), false);
    t.add_link("A".into(), IfId(1), "B".into(), IfId(1), LinkType::ProvCust);
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_two_as_is_well_formed() {
        let t = two_as();
        assert!(t.validate().is_empty());
    }

    #[test]
    fn broken_duality_is_reported() {
        let mut t = two_as();
        // both sides claim to be the provider
        t.link_types
            .insert(("B".into(), IfId(1)), LinkType::ProvCust);
        let v = t.validate();
        assert!(
            v.iter()
                .any(|x| matches!(x, TopologyViolation::DualityBroken(..))),
            "expected duality violation, got {v:?}"
        );
    }

    #[test]
    fn neighbor_lookup() {
        let t = two_as();
        assert_eq!(
            t.neighbor(&"A".into(), IfId(1)),
            Some(("B".into(), IfId(1)))
        );
        assert_eq!(t.neighbor(&"A".into(), IfId(99)), None);
    }

    #[test]
    fn link_type_sides() {
        let t = two_as();
        assert_eq!(t.link_type(&"A".into(), IfId(1)), Some(LinkType::ProvCust));
        assert_eq!(t.link_type(&"B".into(), IfId(1)), Some(LinkType::CustProv));
    }

    #[test]
    fn fig_style_topology_is_well_formed() {
        let t = crate::scenario::fig_topology();
        assert!(t.validate().is_empty());
        // E reaches its provider A over interface 1
        let (n, _) = t.neighbor(&"E".into(), IfId(1)).unwrap();
        assert_eq!(n, AsId::new("A"));
        assert_eq!(t.link_type(&"E".into(), IfId(1)), Some(LinkType::CustProv));
        // core pair A~B
        assert_eq!(t.link_type(&"A".into(), IfId(1)), Some(LinkType::Core));
    }

    #[test]
    fn core_with_provider_is_reported() {
        let mut t = two_as();
        // give core AS A a provider-facing link
        t.add_as("C".into(), false);
        t.add_link("A".into(), IfId(2), "C".into(), IfId(1), LinkType::CustProv);
        let v = t.validate();
        assert!(v
            .iter()
            .any(|x| matches!(x, TopologyViolation::CoreHasProvider(_))));
    }

    /// Any single structural mutation of a valid topology is reported.
    #[test]
    fn single_mutations_are_detected() {
        let t = crate::scenario::fig_topology();
        assert!(t.validate().is_empty());
        // break the involution
        let mut t1 = t.clone();
        let (k, _) = t1.links.iter().next().map(|(k, v)| (k.clone(), v.clone())).unwrap();
        t1.links.insert(k, ("Z".into(), IfId(9)));
        assert!(!t1.validate().is_empty());
        // flip one link type
        let mut t2 = t.clone();
        let (k2, v2) = t2
            .link_types
            .iter()
            .find(|(_, v)| **v != LinkType::Core)
            .map(|(k, v)| (k.clone(), *v))
            .unwrap();
        t2.link_types.insert(k2, v2.dual());
        assert!(!t2.validate().is_empty());
        // drop one AS declaration
        let mut t3 = t.clone();
        t3.ases.remove(&AsId::new("E"));
        assert!(!t3.validate().is_empty());
    }

    proptest! {
        /// Duality holds across every linked endpoint of a valid topology.
        #[test]
        fn duality_on_valid(seed in 0u64..200) {
            let t = crate::generate::random_topology(seed, 4, 12);
            prop_assert!(t.validate().is_empty());
            for ((a, i), (b, j)) in &t.links {
                let lt = t.link_type(a, *i).unwrap();
                let lt_dual = t.link_type(b, *j).unwrap();
                prop_assert_eq!(lt.dual(), lt_dual);
            }
        }
    }
}
