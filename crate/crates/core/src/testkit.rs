//! Test support: an independent brute-force oracle for Dolev-Yao
//! derivability and small random generators. Production code never calls
//! into this module; it exists so the test suites can cross-check the
//! Gaussian-elimination decision procedure against plain forward rule
//! application.

use std::collections::BTreeSet;

use rand::Rng;

use crate::terms::{mac, tup, xor, Knowledge, Term};
use crate::topology::IfId;

fn collect_shapes(t: &Term, out: &mut BTreeSet<Term>) {
    match t {
        Term::Mac(k, body) => {
            out.insert(t.clone());
            collect_shapes(k, out);
            for b in body {
                collect_shapes(b, out);
            }
        }
        Term::Tup(es) => {
            out.insert(t.clone());
            for e in es {
                collect_shapes(e, out);
            }
        }
        Term::Xor(es) => {
            for e in es {
                collect_shapes(e, out);
            }
        }
        _ => {}
    }
}

/// Brute-force forward closure of `k` under the attacker rules: XOR of any
/// known term with any generator, plus MAC/tuple construction once key and
/// components are known. Construction is restricted to MAC/tuple shapes that
/// occur as subterms of the knowledge or the target; any construction
/// outside that universe is a unit the target's support cannot contain, so
/// the restriction loses nothing. Answers membership of `target`.
pub fn dy_closure_oracle(k: &Knowledge, target: &Term) -> bool {
    let goal = target.normalize();
    let mut shapes: BTreeSet<Term> = BTreeSet::new();
    collect_shapes(&goal, &mut shapes);
    for m in k.iter() {
        collect_shapes(m, &mut shapes);
    }

    let mut known: BTreeSet<Term> = BTreeSet::new();
    known.insert(Term::Zero);
    let mut generators: Vec<Term> = Vec::new();
    for m in k.iter() {
        known.insert(m.clone());
        generators.push(m.clone());
    }

    loop {
        // close under XOR with the current generators
        loop {
            let mut fresh: Vec<Term> = Vec::new();
            for s in &known {
                for g in &generators {
                    let x = xor(s.clone(), g.clone());
                    if !known.contains(&x) {
                        fresh.push(x);
                    }
                }
            }
            if fresh.is_empty() {
                break;
            }
            known.extend(fresh);
            assert!(known.len() < 500_000, "oracle instance too large");
        }
        // one construction pass
        let mut changed = false;
        for shape in &shapes {
            if known.contains(shape) {
                continue;
            }
            let buildable = match shape {
                Term::Mac(key, body) => {
                    known.contains(key) && body.iter().all(|b| known.contains(b))
                }
                Term::Tup(es) => es.iter().all(|e| known.contains(e)),
                _ => false,
            };
            if buildable {
                known.insert(shape.clone());
                generators.push(shape.clone());
                changed = true;
            }
        }
        if !changed {
            return known.contains(&goal);
        }
    }
}

fn atom_pool() -> Vec<Term> {
    vec![
        Term::Key("A".into()),
        Term::Key("B".into()),
        Term::Nonce(0),
        Term::Nonce(1),
        Term::Nonce(2),
        Term::IfLit(Some(IfId(1))),
    ]
}

/// Arbitrary raw term tree of bounded depth, possibly non-canonical (raw
/// `Xor` nodes with duplicates and nesting), for normalization tests.
pub fn random_raw_term(rng: &mut impl Rng, depth: usize) -> Term {
    let pool = atom_pool();
    if depth == 0 || rng.gen_bool(0.4) {
        return pool[rng.gen_range(0..pool.len())].clone();
    }
    match rng.gen_range(0..4) {
        0 => {
            let n = rng.gen_range(0..4);
            let elems = (0..n).map(|_| random_raw_term(rng, depth - 1)).collect();
            Term::Xor(elems)
        }
        1 => {
            let key = random_raw_term(rng, depth - 1);
            let n = rng.gen_range(1..4);
            let body = (0..n).map(|_| random_raw_term(rng, depth - 1)).collect();
            Term::Mac(Box::new(key), body)
        }
        2 => {
            let n = rng.gen_range(1..4);
            Term::Tup((0..n).map(|_| random_raw_term(rng, depth - 1)).collect())
        }
        _ => Term::Zero,
    }
}

/// Small random derivability instance: a knowledge set over at most six
/// atoms and a target of depth at most three. Sized so the brute-force
/// oracle stays fast.
pub fn random_knowledge_instance(rng: &mut impl Rng) -> (Knowledge, Term) {
    let pool = atom_pool();
    let pick = |rng: &mut dyn rand::RngCore, pool: &[Term]| -> Term {
        pool[(rng.next_u32() as usize) % pool.len()].clone()
    };

    let mut k = Knowledge::new();
    let members = rng.gen_range(2..=6);
    for _ in 0..members {
        let m = match rng.gen_range(0..4) {
            0 => pick(rng, &pool),
            1 => {
                let n = rng.gen_range(1..=3);
                crate::terms::xor_all((0..n).map(|_| pick(rng, &pool)))
            }
            2 => {
                let body = (0..rng.gen_range(1..=2)).map(|_| pick(rng, &pool)).collect();
                mac(pick(rng, &pool), body)
            }
            _ => tup(vec![pick(rng, &pool), pick(rng, &pool)]),
        };
        k.learn(m);
    }

    // target: atom, xor mix, or a mac over pool material
    let target = match rng.gen_range(0..4) {
        0 => pick(rng, &pool),
        1 => {
            let n = rng.gen_range(1..=3);
            crate::terms::xor_all((0..n).map(|_| pick(rng, &pool)))
        }
        2 => {
            let inner = mac(pick(rng, &pool), vec![pick(rng, &pool)]);
            let deep = rng.gen_bool(0.5);
            if deep {
                mac(pick(rng, &pool), vec![inner, pick(rng, &pool)])
            } else {
                inner
            }
        }
        _ => {
            let m = mac(pick(rng, &pool), vec![pick(rng, &pool)]);
            xor(m, pick(rng, &pool))
        }
    };
    (k, target)
}
