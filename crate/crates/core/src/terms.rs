//! Symbolic message algebra for authenticators and attacker knowledge.
//!
//! Terms are kept in canonical form: XOR nodes are flattened, sorted,
//! duplicate-free (pairs cancel), never nested, and never contain the zero
//! element. Structural equality on canonical forms therefore decides
//! equality in the XOR theory. All other constructors (keys, nonces,
//! interface and AS literals, MACs, tuples) are free.
//!
//! Derivability of a term from a knowledge set is decided over the GF(2)
//! span of derivable non-XOR terms, closed under MAC and tuple construction
//! within the finite universe of subterms occurring in the knowledge and the
//! query. MACs are one-way: learning a MAC reveals neither its key nor its
//! body.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::topology::{AsId, IfId};

/// A symbolic message. Constructed via [`xor`], [`mac`], [`tup`] and the
/// plain variants; values built that way are always canonical.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Term {
    /// XOR identity (the empty XOR).
    Zero,
    /// Secret forwarding key of an AS.
    Key(AsId),
    /// Fresh random value, identified by an allocation counter.
    Nonce(u64),
    /// Interface literal; `None` is the empty interface.
    IfLit(Option<IfId>),
    /// AS name literal.
    AsLit(AsId),
    /// Message authentication code over a body, keyed by the first field.
    Mac(Box<Term>, Vec<Term>),
    /// Plain concatenation; transparent to the attacker.
    Tup(Vec<Term>),
    /// Canonical XOR set: sorted, deduplicated, no `Zero`, no nested `Xor`,
    /// always at least two elements.
    Xor(Vec<Term>),
}

/// XOR of two canonical terms, in canonical form.
pub fn xor(a: Term, b: Term) -> Term {
    xor_all([a, b])
}

/// XOR of arbitrarily many canonical terms.
pub fn xor_all(terms: impl IntoIterator<Item = Term>) -> Term {
    let mut elems: Vec<Term> = Vec::new();
    for t in terms {
        match t {
            Term::Zero => {}
            Term::Xor(es) => elems.extend(es),
            other => elems.push(other),
        }
    }
    elems.sort();
    // pairs cancel
    let mut out: Vec<Term> = Vec::new();
    for e in elems {
        if out.last() == Some(&e) {
            out.pop();
        } else {
            out.push(e);
        }
    }
    match out.len() {
        0 => Term::Zero,
        1 => out.pop().unwrap(),
        _ => Term::Xor(out),
    }
}

/// MAC constructor. Free: two MACs are equal iff key and body are equal.
pub fn mac(key: Term, body: Vec<Term>) -> Term {
    Term::Mac(Box::new(key), body)
}

/// Tuple constructor.
pub fn tup(elems: Vec<Term>) -> Term {
    Term::Tup(elems)
}

impl Term {
    /// Re-canonicalizes an arbitrary term tree. Values produced by the
    /// constructors are already canonical; this is the normal form used by
    /// the idempotence property tests.
    pub fn normalize(&self) -> Term {
        match self {
            Term::Xor(es) => xor_all(es.iter().map(|e| e.normalize())),
            Term::Mac(k, body) => mac(
                k.normalize(),
                body.iter().map(|b| b.normalize()).collect(),
            ),
            Term::Tup(es) => tup(es.iter().map(|e| e.normalize()).collect()),
            other => other.clone(),
        }
    }

    pub fn is_nonce(&self) -> bool {
        matches!(self, Term::Nonce(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Zero => write!(f, "0"),
            Term::Key(a) => write!(f, "K({a})"),
            Term::Nonce(n) => write!(f, "N({n})"),
            Term::IfLit(Some(i)) => write!(f, "I({i})"),
            Term::IfLit(None) => write!(f, "I(-)"),
            Term::AsLit(a) => write!(f, "L({a})"),
            Term::Mac(k, body) => {
                write!(f, "M({k};")?;
                for (n, b) in body.iter().enumerate() {
                    if n > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{b}")?;
                }
                write!(f, ")")
            }
            Term::Tup(es) => {
                write!(f, "T(")?;
                for (n, e) in es.iter().enumerate() {
                    if n > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
            Term::Xor(es) => {
                write!(f, "X(")?;
                for (n, e) in es.iter().enumerate() {
                    if n > 0 {
                        write!(f, "+")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Deterministic per-scenario nonce source, so runs reproduce under a fixed
/// seed.
#[derive(Clone, Debug, Default)]
pub struct NonceAlloc(u64);

impl NonceAlloc {
    pub fn new() -> Self {
        NonceAlloc(0)
    }

    pub fn fresh(&mut self) -> Term {
        let n = self.0;
        self.0 += 1;
        Term::Nonce(n)
    }
}

/// Attacker knowledge: a set of canonical terms, closed under tuple
/// decomposition at insertion time. MACs are added whole; they reveal
/// nothing. XOR members are kept as-is, the closure under XOR lives in the
/// derivability engine.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Knowledge {
    atoms: BTreeSet<Term>,
}

impl Knowledge {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a term, splitting tuples recursively into their components.
    pub fn learn(&mut self, t: Term) {
        match t {
            Term::Tup(es) => {
                for e in es {
                    self.learn(e);
                }
            }
            Term::Zero => {}
            other => {
                self.atoms.insert(other);
            }
        }
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.atoms.contains(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Term> {
        self.atoms.iter()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Derivability
// ---------------------------------------------------------------------------

type BitRow = Vec<u64>;

fn bit_set(v: &mut BitRow, i: usize) {
    let w = i / 64;
    if v.len() <= w {
        v.resize(w + 1, 0);
    }
    v[w] ^= 1 << (i % 64);
}

fn bit_xor(v: &mut BitRow, o: &BitRow) {
    if v.len() < o.len() {
        v.resize(o.len(), 0);
    }
    for (a, b) in v.iter_mut().zip(o.iter()) {
        *a ^= b;
    }
}

fn top_bit(v: &BitRow) -> Option<usize> {
    for (w, word) in v.iter().enumerate().rev() {
        if *word != 0 {
            return Some(w * 64 + 63 - word.leading_zeros() as usize);
        }
    }
    None
}

/// Incremental decision procedure for Dolev-Yao derivability in the
/// free-constructor + XOR theory.
///
/// Each distinct non-XOR term is a dimension of a GF(2) vector space; a term
/// is the sum of its XOR elements. Knowledge members enter as rows of a
/// row-echelon basis. MAC and tuple subterms of anything seen so far are
/// construction candidates: once key and body (components) lie in the span,
/// the candidate joins the basis as a unit vector. A term is derivable iff
/// its vector reduces to zero.
///
/// Construction candidates outside the subterm universe cannot help: a
/// constructed term is a unit vector, so in any derivation of a target it
/// either cancels with itself or survives into the target's support, which
/// consists of subterms of the knowledge and the target. The procedure is
/// therefore sound and complete for the closure under tuple composition, MAC
/// construction, and arbitrary XOR.
#[derive(Clone, Debug, Default)]
pub struct DyEngine {
    dims: BTreeMap<Term, usize>,
    rows: BTreeMap<usize, BitRow>,
    candidates: Vec<Term>,
    candidate_set: BTreeSet<Term>,
    constructed: BTreeSet<Term>,
}

impl DyEngine {
    pub fn new() -> Self {
        Self::default()
    }

    fn register(&mut self, t: &Term) {
        match t {
            Term::Zero => {}
            Term::Xor(es) => {
                for e in es {
                    self.register(e);
                }
            }
            other => {
                if !self.dims.contains_key(other) {
                    let d = self.dims.len();
                    self.dims.insert(other.clone(), d);
                }
                match other {
                    Term::Mac(k, body) => {
                        if self.candidate_set.insert(other.clone()) {
                            self.candidates.push(other.clone());
                        }
                        self.register(k);
                        for b in body {
                            self.register(b);
                        }
                    }
                    Term::Tup(es) => {
                        if self.candidate_set.insert(other.clone()) {
                            self.candidates.push(other.clone());
                        }
                        for e in es {
                            self.register(e);
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    fn vec_of(&self, t: &Term) -> BitRow {
        let mut v = BitRow::new();
        match t {
            Term::Zero => {}
            Term::Xor(es) => {
                for e in es {
                    bit_set(&mut v, self.dims[e]);
                }
            }
            other => bit_set(&mut v, self.dims[other]),
        }
        v
    }

    fn reduce(&self, mut v: BitRow) -> BitRow {
        while let Some(l) = top_bit(&v) {
            match self.rows.get(&l) {
                Some(r) => bit_xor(&mut v, r),
                None => break,
            }
        }
        v
    }

    fn insert_row(&mut self, v: BitRow) {
        let v = self.reduce(v);
        if let Some(l) = top_bit(&v) {
            self.rows.insert(l, v);
        }
    }

    fn in_span(&self, v: BitRow) -> bool {
        top_bit(&self.reduce(v)).is_none()
    }

    /// Adds a knowledge member.
    pub fn learn(&mut self, t: &Term) {
        self.register(t);
        let v = self.vec_of(t);
        self.insert_row(v);
    }

    fn settle(&mut self) {
        loop {
            let mut changed = false;
            for i in 0..self.candidates.len() {
                let c = self.candidates[i].clone();
                if self.constructed.contains(&c) {
                    continue;
                }
                let buildable = match &c {
                    Term::Mac(k, body) => {
                        self.in_span(self.vec_of(k))
                            && body.iter().all(|b| self.in_span(self.vec_of(b)))
                    }
                    Term::Tup(es) => es.iter().all(|e| self.in_span(self.vec_of(e))),
                    _ => false,
                };
                if buildable {
                    let v = self.vec_of(&c);
                    self.insert_row(v);
                    self.constructed.insert(c);
                    changed = true;
                }
            }
            if !changed {
                return;
            }
        }
    }

    /// Decides whether `t` is derivable from everything learned so far.
    pub fn query(&mut self, t: &Term) -> bool {
        self.register(t);
        self.settle();
        let v = self.vec_of(t);
        self.in_span(v)
    }
}

/// One-shot derivability check: is `t` in the Dolev-Yao closure of `k`?
pub fn derivable(k: &Knowledge, t: &Term) -> bool {
    let mut e = DyEngine::new();
    for m in k.iter() {
        e.learn(m);
    }
    e.query(t)
}

// ---------------------------------------------------------------------------
// Concrete backend
// ---------------------------------------------------------------------------

/// Fixed-width concrete authenticator, as carried on the wire.
pub type Auth6 = [u8; 6];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConcretizeError {
    #[error("no key material for AS {0}")]
    MissingKey(AsId),
}

/// Per-AS secret byte keys backing the concrete crypto mode.
#[derive(Clone, Debug, Default)]
pub struct KeyMaterial {
    keys: BTreeMap<AsId, [u8; 16]>,
}

impl KeyMaterial {
    /// Derives one 16-byte key per AS from its identifier. Deterministic, so
    /// symbolic and concrete runs of the same scenario agree.
    pub fn derive(ases: impl IntoIterator<Item = AsId>) -> Self {
        let mut keys = BTreeMap::new();
        for a in ases {
            let mut h = Sha256::new();
            h.update(b"pathlab/forwarding-key/");
            h.update(a.0.as_bytes());
            let d = h.finalize();
            let mut k = [0u8; 16];
            k.copy_from_slice(&d[..16]);
            keys.insert(a, k);
        }
        KeyMaterial { keys }
    }

    pub fn key_bytes(&self, a: &AsId) -> Result<[u8; 16], ConcretizeError> {
        self.keys
            .get(a)
            .copied()
            .ok_or_else(|| ConcretizeError::MissingKey(a.clone()))
    }
}

/// How routers validate authenticators: structurally over symbolic terms,
/// or over their concrete byte images the way a wire-level router would.
#[derive(Clone, Debug)]
pub enum CryptoBackend {
    Symbolic,
    Concrete(KeyMaterial),
}

fn h6(tag: u8, payload: &[u8]) -> Auth6 {
    let mut h = Sha256::new();
    h.update([tag]);
    h.update(payload);
    let d = h.finalize();
    let mut out = [0u8; 6];
    out.copy_from_slice(&d[..6]);
    out
}

/// Keyed hash truncated to the wire authenticator width, over the concrete
/// images of the body elements.
pub fn mac6(key: &[u8], parts: &[Auth6]) -> Auth6 {
    let mut h = Sha256::new();
    h.update([0x4d]);
    h.update((key.len() as u32).to_be_bytes());
    h.update(key);
    h.update((parts.len() as u32).to_be_bytes());
    for p in parts {
        h.update(p);
    }
    let d = h.finalize();
    let mut out = [0u8; 6];
    out.copy_from_slice(&d[..6]);
    out
}

pub fn xor6(a: Auth6, b: Auth6) -> Auth6 {
    let mut out = [0u8; 6];
    for (n, o) in out.iter_mut().enumerate() {
        *o = a[n] ^ b[n];
    }
    out
}

/// Maps a term to its 6-byte concrete image. Homomorphic over XOR:
/// `concretize(xor(a, b)) == xor6(concretize(a), concretize(b))`. MAC nodes
/// hash the images of their body elements under the creator's byte key, so a
/// concrete router can recompute them from wire data alone. `Zero` maps to
/// all-zero bytes.
pub fn concretize(t: &Term, km: &KeyMaterial) -> Result<Auth6, ConcretizeError> {
    Ok(match t {
        Term::Zero => [0u8; 6],
        Term::Key(a) => h6(0x4b, &km.key_bytes(a)?),
        Term::Nonce(n) => h6(0x4e, &n.to_be_bytes()),
        Term::IfLit(i) => {
            let raw = i.map(|x| x.0).unwrap_or(0xffff);
            h6(0x49, &raw.to_be_bytes())
        }
        Term::AsLit(a) => h6(0x41, a.0.as_bytes()),
        Term::Mac(k, body) => {
            let key_bytes: Vec<u8> = match k.as_ref() {
                Term::Key(a) => km.key_bytes(a)?.to_vec(),
                other => concretize(other, km)?.to_vec(),
            };
            let mut parts = Vec::with_capacity(body.len());
            for b in body {
                parts.push(concretize(b, km)?);
            }
            mac6(&key_bytes, &parts)
        }
        Term::Tup(es) => {
            let mut buf = Vec::with_capacity(6 * es.len());
            for e in es {
                buf.extend_from_slice(&concretize(e, km)?);
            }
            h6(0x54, &buf)
        }
        Term::Xor(es) => {
            let mut acc = [0u8; 6];
            for e in es {
                acc = xor6(acc, concretize(e, km)?);
            }
            acc
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{dy_closure_oracle, random_knowledge_instance, random_raw_term};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn nk(i: u64) -> Term {
        Term::Nonce(i)
    }

    fn key(a: &str) -> Term {
        Term::Key(a.into())
    }

    #[test]
    fn xor_self_cancels() {
        let t = mac(key("A"), vec![nk(1)]);
        assert_eq!(xor(t.clone(), t), Term::Zero);
    }

    #[test]
    fn xor_cancellation_peels() {
        let a = nk(1);
        let b = nk(2);
        assert_eq!(xor(xor(a.clone(), b.clone()), b), a);
    }

    #[test]
    fn xor_commutes() {
        let a = nk(1);
        let m = mac(key("A"), vec![nk(3)]);
        assert_eq!(xor(a.clone(), m.clone()), xor(m, a));
    }

    #[test]
    fn mac_is_free() {
        let m1 = mac(key("A"), vec![Term::IfLit(None), Term::IfLit(Some(IfId(2))), nk(7)]);
        let m2 = mac(key("A"), vec![Term::IfLit(None), Term::IfLit(Some(IfId(3))), nk(7)]);
        let m3 = mac(key("B"), vec![Term::IfLit(None), Term::IfLit(Some(IfId(2))), nk(7)]);
        assert_ne!(m1, m2);
        assert_ne!(m1, m3);
    }

    #[test]
    fn mac_body_keeps_canonical_xor() {
        let raw = Term::Mac(
            Box::new(key("A")),
            vec![Term::Xor(vec![nk(2), nk(1), nk(2)])],
        );
        let n = raw.normalize();
        assert_eq!(n, mac(key("A"), vec![nk(1)]));
    }

    #[test]
    fn learn_splits_tuples_and_keeps_macs_whole() {
        let mut k = Knowledge::new();
        k.learn(tup(vec![nk(1), nk(2)]));
        assert!(k.contains(&nk(1)) && k.contains(&nk(2)));
        let m = mac(key("A"), vec![nk(3)]);
        k.learn(m.clone());
        assert!(k.contains(&m));
        assert!(!k.contains(&key("A")));
        assert!(!k.contains(&nk(3)));
    }

    #[test]
    fn zero_is_always_derivable() {
        let k = Knowledge::new();
        assert!(derivable(&k, &Term::Zero));
    }

    #[test]
    fn compromised_key_builds_macs() {
        let mut k = Knowledge::new();
        for t in [key("A"), Term::IfLit(Some(IfId(1))), Term::IfLit(Some(IfId(2))), nk(5)] {
            k.learn(t);
        }
        let target = mac(
            key("A"),
            vec![Term::IfLit(Some(IfId(1))), Term::IfLit(Some(IfId(2))), nk(5)],
        );
        assert!(derivable(&k, &target));
        // without the key the MAC is not derivable
        let mut k2 = Knowledge::new();
        for t in [Term::IfLit(Some(IfId(1))), Term::IfLit(Some(IfId(2))), nk(5)] {
            k2.learn(t);
        }
        assert!(!derivable(&k2, &target));
    }

    #[test]
    fn no_mac_inversion() {
        let mut k = Knowledge::new();
        k.learn(mac(key("A"), vec![nk(1)]));
        assert!(!derivable(&k, &key("A")));
        assert!(!derivable(&k, &nk(1)));
    }

    #[test]
    fn xor_chain_recovery() {
        // knowing segid mid-chain and the later sigmas yields later segids
        let s1 = mac(key("A"), vec![nk(9)]);
        let s2 = mac(key("B"), vec![nk(8)]);
        let beta1 = xor(nk(0), s1.clone());
        let mut k = Knowledge::new();
        k.learn(beta1.clone());
        k.learn(s2.clone());
        let beta2 = xor(beta1, s2);
        assert!(derivable(&k, &beta2));
        // but the initial nonce stays hidden (s1 unknown)
        assert!(!derivable(&k, &nk(0)));
    }

    #[test]
    fn oracle_agrees_on_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(0x00d1ce);
        for _ in 0..300 {
            let (k, t) = random_knowledge_instance(&mut rng);
            let got = derivable(&k, &t);
            let want = dy_closure_oracle(&k, &t);
            assert_eq!(got, want, "disagreement on K={k:?} t={t}");
        }
    }

    #[test]
    fn engine_matches_one_shot_derivable_incrementally() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut engine = DyEngine::new();
        let mut k = Knowledge::new();
        for _ in 0..100 {
            let (extra, t) = random_knowledge_instance(&mut rng);
            for m in extra.iter() {
                k.learn(m.clone());
                engine.learn(m);
            }
            assert_eq!(engine.query(&t), derivable(&k, &t));
        }
    }

    #[test]
    fn concretize_zero_and_cancellation() {
        let km = KeyMaterial::derive([AsId::new("A")]);
        assert_eq!(concretize(&Term::Zero, &km).unwrap(), [0u8; 6]);
        let a = mac(key("A"), vec![nk(4)]);
        assert_eq!(concretize(&xor(a.clone(), a), &km).unwrap(), [0u8; 6]);
    }

    #[test]
    fn concretize_missing_key_errors() {
        let km = KeyMaterial::derive([AsId::new("A")]);
        assert_eq!(
            concretize(&key("Z"), &km),
            Err(ConcretizeError::MissingKey("Z".into()))
        );
    }

    #[test]
    fn concretize_xor_homomorphism() {
        let km = KeyMaterial::derive([AsId::new("A"), AsId::new("B")]);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = random_raw_term(&mut rng, 3).normalize();
            let b = random_raw_term(&mut rng, 3).normalize();
            let lhs = concretize(&xor(a.clone(), b.clone()), &km).unwrap();
            let rhs = xor6(
                concretize(&a, &km).unwrap(),
                concretize(&b, &km).unwrap(),
            );
            assert_eq!(lhs, rhs);
        }
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(seed in 0u64..5000) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let t = random_raw_term(&mut rng, 4);
            let once = t.normalize();
            prop_assert_eq!(once.normalize(), once);
        }

        #[test]
        fn xor_group_laws(seed in 0u64..5000) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let a = random_raw_term(&mut rng, 3).normalize();
            let b = random_raw_term(&mut rng, 3).normalize();
            let c = random_raw_term(&mut rng, 3).normalize();
            prop_assert_eq!(xor(a.clone(), b.clone()), xor(b.clone(), a.clone()));
            prop_assert_eq!(
                xor(xor(a.clone(), b.clone()), c.clone()),
                xor(a.clone(), xor(b.clone(), c.clone()))
            );
            prop_assert_eq!(xor(a.clone(), Term::Zero), a.clone());
            prop_assert_eq!(xor(a.clone(), a.clone()), Term::Zero);
        }

        #[test]
        fn derivable_is_monotone(seed in 0u64..400) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let (k, t) = random_knowledge_instance(&mut rng);
            if derivable(&k, &t) {
                let mut bigger = k.clone();
                let (extra, _) = random_knowledge_instance(&mut rng);
                for m in extra.iter() {
                    bigger.learn(m.clone());
                }
                prop_assert!(derivable(&bigger, &t));
            }
        }
    }
}
