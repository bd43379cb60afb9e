//! Symbolic Montague types and the combinatory calculus over them.
//!
//! Types are binary trees over a fixed set of primitives (by default `e`, `s`
//! and `t`). The only function-type constructor in the default signature is
//! the undirected arrow, written `<a,b>`.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a primitive type within its [`TypeSignature`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrimitiveType(pub u8);

impl PrimitiveType {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Index of a type constructor. Constructor 0 is the function arrow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConstructorId(pub u8);

impl ConstructorId {
    pub const ARROW: ConstructorId = ConstructorId(0);
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SemType {
    Primitive(PrimitiveType),
    Constructed {
        ctor: ConstructorId,
        left: Arc<SemType>,
        right: Arc<SemType>,
    },
}

impl SemType {
    pub fn prim(index: u8) -> SemType {
        SemType::Primitive(PrimitiveType(index))
    }

    /// Builds `<left,right>` with the arrow constructor.
    pub fn func(left: SemType, right: SemType) -> SemType {
        SemType::constructed(ConstructorId::ARROW, left, right)
    }

    pub fn constructed(ctor: ConstructorId, left: SemType, right: SemType) -> SemType {
        SemType::Constructed {
            ctor,
            left: Arc::new(left),
            right: Arc::new(right),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            SemType::Primitive(_) => 0,
            SemType::Constructed { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn is_primitive(&self) -> bool {
        matches!(self, SemType::Primitive(_))
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            SemType::Primitive(_) => 1,
            SemType::Constructed { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Domain and range if this is an arrow type.
    pub fn as_function(&self) -> Option<(&SemType, &SemType)> {
        match self {
            SemType::Constructed { ctor, left, right } if *ctor == ConstructorId::ARROW => {
                Some((left, right))
            }
            _ => None,
        }
    }

    /// All subterms, including `self`.
    pub fn subterms(&self, out: &mut BTreeSet<SemType>) {
        if out.insert(self.clone()) {
            if let SemType::Constructed { left, right, .. } = self {
                left.subterms(out);
                right.subterms(out);
            }
        }
    }
}

// Primitives first (by index), then constructed types by (left, constructor, right).
// This is exactly the order `enumerate_types` produces.
impl Ord for SemType {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (SemType::Primitive(a), SemType::Primitive(b)) => a.cmp(b),
            (SemType::Primitive(_), SemType::Constructed { .. }) => Ordering::Less,
            (SemType::Constructed { .. }, SemType::Primitive(_)) => Ordering::Greater,
            (
                SemType::Constructed { ctor: c0, left: l0, right: r0 },
                SemType::Constructed { ctor: c1, left: l1, right: r1 },
            ) => l0.cmp(l1).then(c0.cmp(c1)).then_with(|| r0.cmp(r1)),
        }
    }
}

impl PartialOrd for SemType {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&TypeSignature::default().format(self))
    }
}

/// The primitive names and constructor count of a type universe.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeSignature {
    primitives: Vec<String>,
    constructors: usize,
}

impl Default for TypeSignature {
    fn default() -> Self {
        TypeSignature {
            primitives: vec!["e".into(), "s".into(), "t".into()],
            constructors: 1,
        }
    }
}

impl TypeSignature {
    pub fn new(primitives: Vec<String>, constructors: usize) -> Result<Self> {
        if primitives.is_empty() || primitives.len() > u8::MAX as usize {
            return Err(Error::Config(format!(
                "primitive count must be in 1..=255, got {}",
                primitives.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for p in &primitives {
            let valid = !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid || !seen.insert(p.as_str()) {
                return Err(Error::Config(format!("bad primitive name {p:?}")));
            }
        }
        if constructors == 0 || constructors > u8::MAX as usize {
            return Err(Error::Config(format!("constructor count must be in 1..=255, got {constructors}")));
        }
        Ok(TypeSignature { primitives, constructors })
    }

    pub fn num_primitives(&self) -> usize {
        self.primitives.len()
    }

    pub fn num_constructors(&self) -> usize {
        self.constructors
    }

    pub fn primitive_names(&self) -> &[String] {
        &self.primitives
    }

    pub fn primitives(&self) -> impl Iterator<Item = PrimitiveType> + '_ {
        (0..self.primitives.len()).map(|i| PrimitiveType(i as u8))
    }

    pub fn primitive(&self, name: &str) -> Option<PrimitiveType> {
        self.primitives.iter().position(|p| p == name).map(|i| PrimitiveType(i as u8))
    }

    pub fn primitive_name(&self, p: PrimitiveType) -> &str {
        &self.primitives[p.index()]
    }

    /// Canonical text form: primitive names and `<left,right>`; constructors
    /// other than the arrow carry a `#k` suffix.
    pub fn format(&self, t: &SemType) -> String {
        let mut out = String::new();
        self.format_into(t, &mut out);
        out
    }

    fn format_into(&self, t: &SemType, out: &mut String) {
        match t {
            SemType::Primitive(p) => match self.primitives.get(p.index()) {
                Some(name) => out.push_str(name),
                None => out.push_str(&format!("?{}", p.0)),
            },
            SemType::Constructed { ctor, left, right } => {
                out.push('<');
                self.format_into(left, out);
                out.push(',');
                self.format_into(right, out);
                out.push('>');
                if ctor.0 != 0 {
                    out.push_str(&format!("#{}", ctor.0));
                }
            }
        }
    }

    pub fn parse(&self, text: &str) -> Result<SemType> {
        let mut parser = TypeParser { sig: self, src: text.as_bytes(), text, pos: 0 };
        parser.skip_ws();
        let t = parser.parse_type()?;
        parser.skip_ws();
        if parser.pos != parser.src.len() {
            return Err(parser.error("trailing input"));
        }
        Ok(t)
    }

    /// Every type of depth at most `max_depth`, in canonical order.
    ///
    /// The count obeys N(0) = |P|, N(d) = |P| + |D|·N(d−1)². Depths above 3
    /// are refused since N(4) exceeds 4·10⁸ for three primitives.
    pub fn enumerate_types(&self, max_depth: usize) -> Result<Vec<SemType>> {
        if max_depth > 3 {
            return Err(Error::EnumerationTooLarge { max_depth });
        }
        let mut level: Vec<SemType> = self.primitives().map(SemType::Primitive).collect();
        for _ in 0..max_depth {
            let prev = level;
            let mut next: Vec<SemType> = self.primitives().map(SemType::Primitive).collect();
            next.reserve(prev.len() * prev.len() * self.constructors);
            for l in &prev {
                for c in 0..self.constructors {
                    for r in &prev {
                        next.push(SemType::constructed(ConstructorId(c as u8), l.clone(), r.clone()));
                    }
                }
            }
            level = next;
        }
        Ok(level)
    }

    /// Draws a random type: at every node recurse with probability
    /// `recurse_prob` (zero at `max_depth`), otherwise pick a uniform primitive.
    pub fn sample_type<R: Rng + ?Sized>(&self, rng: &mut R, max_depth: usize, recurse_prob: f64) -> SemType {
        let recurse = max_depth > 0 && recurse_prob > 0.0 && rng.gen::<f64>() < recurse_prob;
        if recurse {
            let ctor = if self.constructors == 1 { 0 } else { rng.gen_range(0..self.constructors) };
            let left = self.sample_type(rng, max_depth - 1, recurse_prob);
            let right = self.sample_type(rng, max_depth - 1, recurse_prob);
            SemType::constructed(ConstructorId(ctor as u8), left, right)
        } else {
            SemType::prim(rng.gen_range(0..self.primitives.len()) as u8)
        }
    }
}

struct TypeParser<'a> {
    sig: &'a TypeSignature,
    src: &'a [u8],
    text: &'a str,
    pos: usize,
}

impl TypeParser<'_> {
    fn error(&self, message: &str) -> Error {
        Error::TypeParse {
            input: self.text.to_string(),
            position: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<()> {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", b as char)))
        }
    }

    fn parse_type(&mut self) -> Result<SemType> {
        self.skip_ws();
        match self.src.get(self.pos) {
            Some(b'<') => {
                self.pos += 1;
                let left = self.parse_type()?;
                self.expect(b',')?;
                let right = self.parse_type()?;
                self.expect(b'>')?;
                let mut ctor = 0usize;
                if self.src.get(self.pos) == Some(&b'#') {
                    self.pos += 1;
                    let start = self.pos;
                    while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                    ctor = self.text[start..self.pos]
                        .parse()
                        .map_err(|_| self.error("expected constructor index"))?;
                    if ctor >= self.sig.constructors {
                        return Err(self.error("constructor index out of range"));
                    }
                }
                Ok(SemType::constructed(ConstructorId(ctor as u8), left, right))
            }
            Some(c) if c.is_ascii_alphanumeric() || *c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = &self.text[start..self.pos];
                match self.sig.primitive(name) {
                    Some(p) => Ok(SemType::Primitive(p)),
                    None => {
                        self.pos = start;
                        Err(self.error(&format!("unknown primitive {name:?}")))
                    }
                }
            }
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }
}

/// Parses with the default `e`/`s`/`t` signature.
pub fn parse_type(text: &str) -> Result<SemType> {
    TypeSignature::default().parse(text)
}

pub fn format_type(t: &SemType) -> String {
    TypeSignature::default().format(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combinator {
    Identity,
    Apply,
    Compose,
}

impl Combinator {
    pub fn arity(self) -> usize {
        match self {
            Combinator::Identity => 1,
            Combinator::Apply | Combinator::Compose => 2,
        }
    }

    /// Results of the combinator on an (unordered) pair; empty when not combinable.
    pub fn combine(self, t0: &SemType, t1: &SemType) -> BTreeSet<SemType> {
        match self {
            Combinator::Identity => BTreeSet::new(),
            Combinator::Apply => apply_types(t0, t1),
            Combinator::Compose => compose_types(t0, t1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RaiseSide {
    None,
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CombinatoryAction {
    pub combinator: Combinator,
    pub raise: RaiseSide,
}

/// The default action set, in the index order used by the controller head.
pub const ACTIONS: [CombinatoryAction; 6] = [
    CombinatoryAction { combinator: Combinator::Apply, raise: RaiseSide::None },
    CombinatoryAction { combinator: Combinator::Apply, raise: RaiseSide::Left },
    CombinatoryAction { combinator: Combinator::Apply, raise: RaiseSide::Right },
    CombinatoryAction { combinator: Combinator::Compose, raise: RaiseSide::None },
    CombinatoryAction { combinator: Combinator::Compose, raise: RaiseSide::Left },
    CombinatoryAction { combinator: Combinator::Compose, raise: RaiseSide::Right },
];

impl CombinatoryAction {
    pub fn index(self) -> usize {
        ACTIONS.iter().position(|a| *a == self).expect("action in ACTIONS")
    }
}

impl fmt::Display for CombinatoryAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.combinator {
            Combinator::Identity => "identity",
            Combinator::Apply => "apply",
            Combinator::Compose => "compose",
        };
        let r = match self.raise {
            RaiseSide::None => "",
            RaiseSide::Left => "+raise-left",
            RaiseSide::Right => "+raise-right",
        };
        write!(f, "{c}{r}")
    }
}

/// Undirected application: `<a,b>` with `a`, in either order, yields `b`.
pub fn apply_types(t0: &SemType, t1: &SemType) -> BTreeSet<SemType> {
    let mut out = BTreeSet::new();
    if let Some((dom, ran)) = t0.as_function() {
        if dom == t1 {
            out.insert(ran.clone());
        }
    }
    if let Some((dom, ran)) = t1.as_function() {
        if dom == t0 {
            out.insert(ran.clone());
        }
    }
    out
}

/// First-order undirected composition: `<a,b>` with `<b,c>`, in either order,
/// yields `<a,c>`.
pub fn compose_types(t0: &SemType, t1: &SemType) -> BTreeSet<SemType> {
    let mut out = BTreeSet::new();
    if let (Some((a, b)), Some((b2, c))) = (t0.as_function(), t1.as_function()) {
        if b == b2 {
            out.insert(SemType::func(a.clone(), c.clone()));
        }
    }
    if let (Some((a, b)), Some((b2, c))) = (t1.as_function(), t0.as_function()) {
        if b == b2 {
            out.insert(SemType::func(a.clone(), c.clone()));
        }
    }
    out
}

/// `t` raised over `r`: `<<t,r>,r>`.
pub fn raise_type(t: &SemType, r: PrimitiveType) -> SemType {
    let r = SemType::Primitive(r);
    SemType::func(SemType::func(t.clone(), r.clone()), r)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ViableAction {
    pub action: CombinatoryAction,
    pub raise_with: Option<PrimitiveType>,
    pub result: SemType,
}

/// Every (action, raising primitive, result) that combines `t0` (left) with
/// `t1` (right), over all combinators and raising options.
pub fn viable_actions(sig: &TypeSignature, t0: &SemType, t1: &SemType) -> Vec<ViableAction> {
    let mut out = Vec::new();
    for action in ACTIONS {
        match action.raise {
            RaiseSide::None => {
                for result in action.combinator.combine(t0, t1) {
                    out.push(ViableAction { action, raise_with: None, result });
                }
            }
            RaiseSide::Left | RaiseSide::Right => {
                for r in sig.primitives() {
                    let results = if action.raise == RaiseSide::Left {
                        action.combinator.combine(&raise_type(t0, r), t1)
                    } else {
                        action.combinator.combine(t0, &raise_type(t1, r))
                    };
                    for result in results {
                        out.push(ViableAction { action, raise_with: Some(r), result });
                    }
                }
            }
        }
    }
    out
}
