//! Seeded random topologies and scenarios for fuzzing and the randomized
//! property suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::attacker::Strategy;
use crate::scenario::{Scenario, SegmentSource};
use crate::topology::{AsId, IfId, LinkType, Topology};

/// Builds a valid random topology of `min..=max` ASes: a connected core of
/// up to three ASes, every other AS multi-homed to one or two providers
/// introduced before it.
pub fn random_topology(seed: u64, min: usize, max: usize) -> Topology {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = rng.gen_range(min..=max);
    let n_core = rng.gen_range(1..=3.min(n));
    let names: Vec<AsId> = (0..n).map(|k| AsId::new(format!("N{k:02}"))).collect();

    let mut t = Topology::new();
    let mut next_if: Vec<u16> = vec![1; n];
    for (k, a) in names.iter().enumerate() {
        t.add_as(a.clone(), k < n_core);
    }
    let mut link = |t: &mut Topology, a: usize, b: usize, lt: LinkType| {
        let ia = IfId(next_if[a]);
        let ib = IfId(next_if[b]);
        next_if[a] += 1;
        next_if[b] += 1;
        t.add_link(names[a].clone(), ia, names[b].clone(), ib, lt);
    };

    // connected core
    for k in 1..n_core {
        let parent = rng.gen_range(0..k);
        link(&mut t, parent, k, LinkType::Core);
    }
    for a in 0..n_core {
        for b in a + 1..n_core {
            if rng.gen_bool(0.3) {
                link(&mut t, a, b, LinkType::Core);
            }
        }
    }
    // customer tree with occasional multi-homing
    for k in n_core..n {
        let p1 = rng.gen_range(0..k);
        link(&mut t, p1, k, LinkType::ProvCust);
        if k > 1 && rng.gen_bool(0.35) {
            let p2 = rng.gen_range(0..k);
            if p2 != p1 {
                link(&mut t, p2, k, LinkType::ProvCust);
            }
        }
    }
    debug_assert!(t.validate().is_empty());
    t
}

/// A randomized verified-mode scenario: random topology, up to three
/// compromised ASes, full beaconing, seeded honest traffic, and a random
/// attacker.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(seed));
    let mut topo = random_topology(seed, 4, 12);
    let names: Vec<AsId> = topo.ases.keys().cloned().collect();
    let n_compromised = rng.gen_range(0..=3.min(names.len()));
    while topo.compromised.len() < n_compromised {
        let pick = names[rng.gen_range(0..names.len())].clone();
        topo.compromised.insert(pick);
    }
    let mut sc = Scenario::bare(format!("random-{seed}"), topo);
    sc.segments = SegmentSource::Auto { max_links: 4 };
    sc.strategy = Strategy::Random {
        budget: rng.gen_range(20..=40),
    };
    sc.auto_flows = rng.gen_range(1..=3);
    sc.seed = seed;
    sc.steps = 2000;
    sc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_scenario, RunMode, RunOptions};

    #[test]
    fn generated_topologies_are_valid() {
        for seed in 0..50 {
            let t = random_topology(seed, 4, 12);
            assert!(t.validate().is_empty(), "seed {seed}");
        }
    }

    #[test]
    fn generated_scenarios_run_clean_in_verified_mode() {
        for seed in 0..10 {
            let sc = random_scenario(seed);
            let r = run_scenario(
                &sc,
                &RunOptions {
                    mode: RunMode::Verified,
                    seed: None,
                    concrete: false,
                },
            )
            .unwrap();
            assert!(
                r.violations.is_empty(),
                "seed {seed} produced violations:\n{}",
                r.summary()
            );
            assert!(r.conserved(), "seed {seed}");
        }
    }
}
