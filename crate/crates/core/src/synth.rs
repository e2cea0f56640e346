//! Seeded synthetic electorates.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Instance;

/// Approval probability of an item whose latent trait the voter has.
const TRAIT_HIGH: f64 = 0.8;
const TRAIT_LOW: f64 = 0.2;

/// Boston's participatory budget in dollars.
pub const BOSTON_BUDGET: f64 = 1_000_000.0;
/// `(name, cost in dollars, approvals)` of the Boston ballot.
pub const BOSTON_ITEMS: [(&str, f64, usize); 10] = [
    ("Wifi", 119_000.0, 2054),
    ("Water", 260_000.0, 1794),
    ("Hubway", 101_600.0, 737),
    ("Bowdoin", 100_000.0, 611),
    ("Bike", 200_000.0, 771),
    ("Track", 240_000.0, 672),
    ("Dance", 286_000.0, 759),
    ("Gym", 475_000.0, 1044),
    ("Ringer", 280_000.0, 546),
    ("Pino", 250_000.0, 452),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case")]
pub enum Profile {
    /// Every voter approves exactly one item, drawn uniformly.
    DisjointGroups,
    /// Every cell is an independent Bernoulli(p) approval.
    IndependentBernoulli { p: f64 },
    /// Two independent voter traits, each raising approval of half the items.
    BlockCorrelated,
    /// Majority of one over a minority, two items.
    BareMajority,
    /// Two halves sharing a common third item.
    SharedItem,
    /// `n - 1` voters against one, two items.
    LoneDissenter,
    /// A free rider among single-minded voters.
    FreeRider,
    /// Two opinionated voters among indifferent ones.
    OpposedPair,
    /// Every voter approves `approvals` distinct items; items get costs.
    KApproval { approvals: usize },
    /// Boston's ballot with exact published approval counts.
    Boston,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::DisjointGroups => write!(f, "disjoint-groups"),
            Profile::IndependentBernoulli { p } => write!(f, "independent-bernoulli({p})"),
            Profile::BlockCorrelated => write!(f, "block-correlated"),
            Profile::BareMajority => write!(f, "bare-majority"),
            Profile::SharedItem => write!(f, "shared-item"),
            Profile::LoneDissenter => write!(f, "lone-dissenter"),
            Profile::FreeRider => write!(f, "free-rider"),
            Profile::OpposedPair => write!(f, "opposed-pair"),
            Profile::KApproval { approvals } => write!(f, "k-approval({approvals})"),
            Profile::Boston => write!(f, "boston"),
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    /// Accepts `name`, `name(arg)` and `name:arg`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.find(['(', ':']) {
            Some(i) => (&s[..i], Some(s[i + 1..].trim_end_matches(')'))),
            None => (s, None),
        };
        let bad = || Error::Config(format!("unknown profile {s:?}"));
        let missing = || Error::Config(format!("profile {name} needs a parameter"));
        match (name, arg) {
            ("disjoint-groups", None) => Ok(Profile::DisjointGroups),
            ("independent-bernoulli", a) => {
                let p = a
                    .ok_or_else(missing)?
                    .parse()
                    .map_err(|_| Error::Config(format!("bad probability in {s:?}")))?;
                Ok(Profile::IndependentBernoulli { p })
            }
            ("block-correlated", None) => Ok(Profile::BlockCorrelated),
            ("bare-majority", None) => Ok(Profile::BareMajority),
            ("shared-item", None) => Ok(Profile::SharedItem),
            ("lone-dissenter", None) => Ok(Profile::LoneDissenter),
            ("free-rider", None) => Ok(Profile::FreeRider),
            ("opposed-pair", None) => Ok(Profile::OpposedPair),
            ("k-approval", a) => {
                let approvals = a
                    .ok_or_else(missing)?
                    .parse()
                    .map_err(|_| Error::Config(format!("bad count in {s:?}")))?;
                Ok(Profile::KApproval { approvals })
            }
            ("boston", None) => Ok(Profile::Boston),
            _ => Err(bad()),
        }
    }
}

fn one_hot(k: usize, j: usize) -> Vec<f64> {
    let mut row = vec![0.0; k];
    row[j] = 1.0;
    row
}

fn repeat(parts: &[(usize, Vec<f64>)]) -> Vec<Vec<f64>> {
    parts
        .iter()
        .flat_map(|(count, row)| std::iter::repeat_n(row.clone(), *count))
        .collect()
}

/// Draws rows from `draw` until one approves something.
fn nonempty(rng: &mut ChaCha8Rng, mut draw: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>) -> Vec<f64> {
    loop {
        let row = draw(rng);
        if row.iter().any(|&v| v > 0.0) {
            return row;
        }
    }
}

/// Generates an electorate of `n` voters over `k` items with unit budget.
/// Fixed-shape profiles set their own number of items and ignore `k`; the
/// Boston profile fixes items, costs and budget and drops voters who
/// approve nothing. Random profiles redraw empty ballots.
pub fn gen_synthetic(profile: Profile, n: usize, k: usize, seed: u64) -> Result<Instance> {
    let fixed_shape = matches!(
        profile,
        Profile::BareMajority
            | Profile::SharedItem
            | Profile::LoneDissenter
            | Profile::FreeRider
            | Profile::OpposedPair
            | Profile::Boston
    );
    if n == 0 || (!fixed_shape && k == 0) {
        return Err(Error::Config("need at least one voter and one item".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n.div_ceil(2);
    let rows = match profile {
        Profile::DisjointGroups => (0..n).map(|_| one_hot(k, rng.random_range(0..k))).collect(),
        Profile::IndependentBernoulli { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!(
                    "approval probability must lie in (0, 1], got {p}"
                )));
            }
            (0..n)
                .map(|_| {
                    nonempty(&mut rng, |r| {
                        (0..k).map(|_| r.random_bool(p) as u8 as f64).collect()
                    })
                })
                .collect()
        }
        Profile::BlockCorrelated => (0..n)
            .map(|_| {
                nonempty(&mut rng, |r| {
                    let traits = [r.random_bool(0.5), r.random_bool(0.5)];
                    (0..k)
                        .map(|j| {
                            let p = if traits[(2 * j) / k] {
                                TRAIT_HIGH
                            } else {
                                TRAIT_LOW
                            };
                            r.random_bool(p) as u8 as f64
                        })
                        .collect()
                })
            })
            .collect(),
        Profile::BareMajority => {
            let major = (half + 1).min(n);
            repeat(&[(major, vec![1.0, 0.0]), (n - major, vec![0.0, 1.0])])
        }
        Profile::SharedItem => {
            repeat(&[(half, vec![0.6, 0.0, 0.4]), (n - half, vec![0.0, 0.6, 0.4])])
        }
        Profile::LoneDissenter => repeat(&[(n - 1, vec![1.0, 0.0]), (1, vec![0.0, 1.0])]),
        Profile::FreeRider => repeat(&[(1, vec![1.0 / 3.0, 2.0 / 3.0]), (n - 1, vec![1.0, 0.0])]),
        Profile::OpposedPair => {
            if n < 2 {
                return Err(Error::Config(
                    "opposed-pair needs at least two voters".into(),
                ));
            }
            repeat(&[
                (1, vec![1.0 / 3.0, 2.0 / 3.0]),
                (1, vec![2.0 / 3.0, 1.0 / 3.0]),
                (n - 2, vec![0.5, 0.5]),
            ])
        }
        Profile::KApproval { approvals } => {
            if approvals == 0 || approvals > k {
                return Err(Error::Config(format!(
                    "k-approval needs 1..={k} approvals, got {approvals}"
                )));
            }
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let mut row = vec![0.0; k];
                    for j in sample(&mut rng, k, approvals) {
                        row[j] = 1.0;
                    }
                    row
                })
                .collect();
            let sizes = (0..k).map(|_| rng.random_range(0.1..0.4)).collect();
            return Instance::new(rows, 1.0)?.with_sizes(sizes);
        }
        Profile::Boston => return boston(n, &mut rng),
    };
    Instance::new(rows, 1.0)
}

/// Voters approving each Boston item are drawn as a uniform subset of the
/// published size, so vote counts match exactly.
fn boston(n: usize, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let k = BOSTON_ITEMS.len();
    let most = BOSTON_ITEMS.iter().map(|it| it.2).max().unwrap_or(0);
    if n < most {
        return Err(Error::Config(format!(
            "the Boston profile needs at least {most} voters, got {n}"
        )));
    }
    let mut rows = vec![vec![0.0; k]; n];
    for (j, &(_, _, votes)) in BOSTON_ITEMS.iter().enumerate() {
        for i in sample(rng, n, votes) {
            rows[i][j] = 1.0;
        }
    }
    rows.retain(|r| r.iter().any(|&v| v > 0.0));
    Instance::new(rows, BOSTON_BUDGET)?
        .with_sizes(BOSTON_ITEMS.iter().map(|it| it.1).collect())?
        .with_item_names(BOSTON_ITEMS.iter().map(|it| it.0.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_shape_profiles() {
        let c = gen_synthetic(Profile::LoneDissenter, 5, 0, 0).unwrap();
        assert_eq!(
            c.rows(),
            vec![vec![1.0, 0.0]; 4]
                .into_iter()
                .chain([vec![0.0, 1.0]])
                .collect::<Vec<_>>()
        );
        let a = gen_synthetic(Profile::FreeRider, 10, 0, 0).unwrap();
        assert_eq!(a.row(0), &[1.0 / 3.0, 2.0 / 3.0]);
        assert!((1..10).all(|i| a.row(i) == [1.0, 0.0]));
        let maj = gen_synthetic(Profile::BareMajority, 9, 0, 0).unwrap();
        assert_eq!(maj.vote_counts(), vec![6, 3]);
        let b = gen_synthetic(Profile::SharedItem, 4, 0, 0).unwrap();
        assert_eq!(b.vote_counts(), vec![2, 2, 4]);
        let lm = gen_synthetic(Profile::OpposedPair, 6, 0, 0).unwrap();
        assert_eq!(lm.row(1), &[2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(lm.row(5), &[0.5, 0.5]);
    }

    #[test]
    fn bernoulli_is_reproducible() {
        let a = gen_synthetic(Profile::IndependentBernoulli { p: 0.5 }, 100, 5, 7).unwrap();
        let b = gen_synthetic(Profile::IndependentBernoulli { p: 0.5 }, 100, 5, 7).unwrap();
        assert_eq!(a, b);
        let ones: usize = a.vote_counts().iter().sum();
        assert!((200..=300).contains(&ones), "{ones}");
    }

    #[test]
    fn boston_counts_are_exact() {
        let inst = gen_synthetic(Profile::Boston, 2500, 0, 3).unwrap();
        let expected: Vec<usize> = BOSTON_ITEMS.iter().map(|it| it.2).collect();
        assert_eq!(inst.vote_counts(), expected);
        assert_eq!(inst.budget(), BOSTON_BUDGET);
    }

    #[test]
    fn k_approval_ballots() {
        let inst = gen_synthetic(Profile::KApproval { approvals: 4 }, 50, 10, 1).unwrap();
        assert!((0..50).all(|i| inst.row(i).iter().sum::<f64>() == 4.0));
        assert_eq!(inst.sizes().unwrap().len(), 10);
    }

    #[test]
    fn profile_names_round_trip() {
        for p in [
            Profile::DisjointGroups,
            Profile::IndependentBernoulli { p: 0.25 },
            Profile::BlockCorrelated,
            Profile::BareMajority,
            Profile::SharedItem,
            Profile::LoneDissenter,
            Profile::FreeRider,
            Profile::OpposedPair,
            Profile::KApproval { approvals: 3 },
            Profile::Boston,
        ] {
            assert_eq!(p.to_string().parse::<Profile>().unwrap(), p);
        }
        assert_eq!(
            "independent-bernoulli:0.5".parse::<Profile>().unwrap(),
            Profile::IndependentBernoulli { p: 0.5 }
        );
        assert!("unknown-profile".parse::<Profile>().is_err());
    }
}
