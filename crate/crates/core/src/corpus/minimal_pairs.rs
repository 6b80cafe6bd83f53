use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::WorldSpec;
use crate::error::{Error, Result};
use crate::rng::{seeded, stream};

/// Agreement phenomena the synthetic grammar can realize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phenomenon {
    DeterminerNounAgreement,
    SubjectVerbAgreement,
    AnaphorAgreement,
}

impl Phenomenon {
    pub const ALL: [Phenomenon; 3] =
        [Phenomenon::DeterminerNounAgreement, Phenomenon::SubjectVerbAgreement, Phenomenon::AnaphorAgreement];

    pub fn as_str(self) -> &'static str {
        match self {
            Phenomenon::DeterminerNounAgreement => "determiner_noun_agreement",
            Phenomenon::SubjectVerbAgreement => "subject_verb_agreement",
            Phenomenon::AnaphorAgreement => "anaphor_agreement",
        }
    }
}

impl fmt::Display for Phenomenon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phenomenon {
    type Err = Error;

    /// Accepts `determiner_noun_agreement`, `determiner-noun agreement`, etc.
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        Phenomenon::ALL
            .into_iter()
            .find(|p| p.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unsupported phenomenon `{s}`")))
    }
}

/// A grammatical sentence and a one-token corruption of it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MinimalPair {
    pub grammatical: String,
    pub ungrammatical: String,
    /// Free-form label so external benchmark categories pass through.
    pub phenomenon: String,
}

/// Mixed-radix sizes of the derivation space of each frame.
fn radices(world: &WorldSpec, phenomenon: Phenomenon) -> Vec<usize> {
    let g = &world.grammar;
    let c = world.num_classes;
    let any_det = g.neutral_determiners.len() + g.determiners.len();
    match phenomenon {
        // number, det pair, noun, verb
        Phenomenon::DeterminerNounAgreement => vec![2, g.determiners.len(), c, g.intransitive.len()],
        // number, det, noun, preposition, attractor noun, attractor number, verb
        Phenomenon::SubjectVerbAgreement => vec![2, any_det, c, g.prepositions.len(), c, 2, g.intransitive.len()],
        // number, det, noun, transitive verb
        Phenomenon::AnaphorAgreement => vec![2, any_det, c, g.transitive.len()],
    }
}

/// Number of distinct grammatical sentences the frame of `phenomenon` yields.
pub fn count_derivations(world: &WorldSpec, phenomenon: Phenomenon) -> u128 {
    radices(world, phenomenon).iter().map(|&r| r as u128).product()
}

fn derive(world: &WorldSpec, phenomenon: Phenomenon, mut index: u128) -> MinimalPair {
    let mut digits = Vec::new();
    for r in radices(world, phenomenon) {
        digits.push((index % r as u128) as usize);
        index /= r as u128;
    }
    let g = &world.grammar;
    let noun = |class: usize, plural: bool| {
        let a = &world.attributes[class];
        if plural {
            a.plural.as_str()
        } else {
            a.name.as_str()
        }
    };
    let (good, bad) = match phenomenon {
        Phenomenon::DeterminerNounAgreement => {
            let pl = digits[0] == 1;
            let det = &g.determiners[digits[1]];
            let n = noun(digits[2], pl);
            let v = g.intransitive[digits[3]].forms.form(pl);
            (format!("{} {n} {v}.", det.form(pl)), format!("{} {n} {v}.", det.form(!pl)))
        }
        Phenomenon::SubjectVerbAgreement => {
            let pl = digits[0] == 1;
            let det = g.determiners_for(pl)[digits[1]];
            let n = noun(digits[2], pl);
            let prep = &g.prepositions[digits[3]];
            let attr_pl = digits[5] == 1;
            let attr_det = g.determiners_for(attr_pl)[0];
            let attractor = noun(digits[4], attr_pl);
            let v = &g.intransitive[digits[6]].forms;
            let head = format!("{det} {n} {prep} {attr_det} {attractor}");
            (format!("{head} {}.", v.form(pl)), format!("{head} {}.", v.form(!pl)))
        }
        Phenomenon::AnaphorAgreement => {
            let pl = digits[0] == 1;
            let det = g.determiners_for(pl)[digits[1]];
            let n = noun(digits[2], pl);
            let v = g.transitive[digits[3]].form(pl);
            (
                format!("{det} {n} {v} {}.", g.anaphor.form(pl)),
                format!("{det} {n} {v} {}.", g.anaphor.form(!pl)),
            )
        }
    };
    MinimalPair { grammatical: good, ungrammatical: bad, phenomenon: phenomenon.as_str().to_owned() }
}

/// Every minimal pair of a phenomenon, in derivation-index order.
pub fn enumerate_derivations(world: &WorldSpec, phenomenon: Phenomenon) -> Vec<MinimalPair> {
    let n = count_derivations(world, phenomenon);
    (0..n).map(|i| derive(world, phenomenon, i)).collect()
}

/// `n` minimal pairs for `phenomenon` (a label accepted by [`Phenomenon`]'s
/// parser). Pairs are distinct whenever the grammar has at least `n`
/// derivations.
pub fn generate_minimal_pairs(world: &WorldSpec, phenomenon: &str, n: usize) -> Result<Vec<MinimalPair>> {
    world.validate()?;
    let phenomenon: Phenomenon = phenomenon.parse()?;
    let total = count_derivations(world, phenomenon);
    if total == 0 {
        return Err(Error::Config(format!("grammar cannot realize {phenomenon}")));
    }
    let mut rng = seeded(world.seed, stream::MINIMAL_PAIRS ^ ((phenomenon as u64 + 1) << 8));
    let indices: Vec<u128> = if total >= n as u128 && total <= usize::MAX as u128 {
        rand::seq::index::sample(&mut rng, total as usize, n).into_iter().map(|i| i as u128).collect()
    } else if total >= n as u128 {
        // Astronomically large spaces: rejection sampling is collision-free in practice.
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let i = rng.random_range(0..total);
            if seen.insert(i) {
                out.push(i);
            }
        }
        out
    } else {
        (0..n).map(|_| rng.random_range(0..total)).collect()
    };
    Ok(indices.into_iter().map(|i| derive(world, phenomenon, i)).collect())
}
