//! Election configuration files.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use pbcore::coreverify::DeviationMode;
use pbcore::lindahl::{SgdConfig, SolverConfig};
use pbcore::mechanism::MechanismConfig;
use pbcore::model::{Instance, UtilityModel};
use pbcore::saturating::HeuristicConfig;
use pbcore::{Error, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::io::Votes;

/// A nonnegative amount held in integer cents. Serialized as a decimal
/// string such as `"119000.00"`; numbers are accepted on input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money {
    cents: i64,
}

impl Money {
    pub fn from_cents(cents: i64) -> Self {
        Self { cents }
    }

    /// Rounds to the nearest cent.
    pub fn from_dollars(dollars: f64) -> Result<Self> {
        let cents = (dollars * 100.0).round();
        if !(cents.is_finite() && cents >= 0.0 && cents < i64::MAX as f64) {
            return Err(Error::Config(format!("invalid amount {dollars}")));
        }
        Ok(Self {
            cents: cents as i64,
        })
    }

    pub fn cents(&self) -> i64 {
        self.cents
    }

    pub fn dollars(&self) -> f64 {
        self.cents as f64 / 100.0
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.cents / 100, self.cents % 100)
    }
}

impl FromStr for Money {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid amount {s:?}"));
        let s = s.trim();
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        if whole.is_empty()
            || frac.len() > 2
            || !whole
                .bytes()
                .chain(frac.bytes())
                .all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let whole: i64 = whole.parse().map_err(|_| bad())?;
        let frac: i64 = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<2}").parse().map_err(|_| bad())?
        };
        whole
            .checked_mul(100)
            .and_then(|c| c.checked_add(frac))
            .map(Money::from_cents)
            .ok_or_else(bad)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
            Raw::Number(v) => Money::from_dollars(v).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<Money>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoreCheckConfig {
    /// Grid resolution of the continuous oracle.
    pub grid_steps: usize,
    pub mode: DeviationMode,
    /// Multiplicative slack of the integral oracle.
    pub integral_epsilon: f64,
}

impl Default for CoreCheckConfig {
    fn default() -> Self {
        Self {
            grid_steps: 100,
            mode: DeviationMode::Additive(1e-3),
            integral_epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Degrees of freedom of the χ² reference distribution.
    pub dof: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { dof: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectionConfig {
    pub budget: Money,
    #[serde(default)]
    pub items: Vec<ItemSpec>,
    #[serde(default = "linear")]
    pub model: UtilityModel,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sgd: SgdConfig,
    #[serde(default)]
    pub heuristic: HeuristicConfig,
    #[serde(default)]
    pub mechanism: MechanismConfig,
    #[serde(default)]
    pub core_check: CoreCheckConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub seed: u64,
}

fn linear() -> UtilityModel {
    UtilityModel::Linear
}

impl ElectionConfig {
    /// Unit budget, linear utilities, defaults everywhere.
    pub fn new(budget: Money) -> Self {
        Self {
            budget,
            items: Vec::new(),
            model: UtilityModel::Linear,
            solver: SolverConfig::default(),
            sgd: SgdConfig::default(),
            heuristic: HeuristicConfig::default(),
            mechanism: MechanismConfig::default(),
            core_check: CoreCheckConfig::default(),
            analysis: AnalysisConfig::default(),
            seed: 0,
        }
    }

    /// Configuration describing `inst`: its budget, item names and sizes,
    /// saturating utilities when sizes are known and linear otherwise.
    pub fn describing(inst: &Instance) -> Result<Self> {
        let mut cfg = Self::new(Money::from_dollars(inst.budget())?);
        let sizes = inst.sizes();
        cfg.items = inst
            .item_names()
            .iter()
            .enumerate()
            .map(|(j, name)| {
                Ok(ItemSpec {
                    name: name.clone(),
                    size: sizes.map(|s| Money::from_dollars(s[j])).transpose()?,
                })
            })
            .collect::<Result<_>>()?;
        if sizes.is_some() {
            cfg.model = UtilityModel::Saturating;
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<()> {
        if self.budget.cents() <= 0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            if !seen.insert(item.name.as_str()) {
                return Err(Error::Config(format!(
                    "item {:?} is listed twice",
                    item.name
                )));
            }
            if item.size.is_some_and(|s| s.cents() <= 0) {
                return Err(Error::Config(format!(
                    "item {:?} must have a positive size",
                    item.name
                )));
            }
        }
        Ok(())
    }

    /// Overrides every component seed with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.solver.seed = seed;
        self.sgd.seed = seed;
        self.heuristic.seed = seed;
        self.mechanism.seed = seed;
        self
    }

    /// Builds the instance for `votes`. Items are taken in ballot column
    /// order; when the configuration lists items, every column must be one
    /// of them and sizes are attached only if every item has one.
    pub fn instance(&self, votes: &Votes) -> Result<Instance> {
        let mut inst = Instance::new(votes.rows.clone(), self.budget.dollars())?
            .with_item_names(votes.item_names.clone())?;
        if !self.items.is_empty() {
            let mut sizes = Vec::with_capacity(votes.item_names.len());
            for (c, name) in votes.item_names.iter().enumerate() {
                let spec = self
                    .items
                    .iter()
                    .find(|it| &it.name == name)
                    .ok_or_else(|| Error::Parse {
                        line: 1,
                        column: c + 2,
                        message: format!("item column {name:?} is not in the configuration"),
                    })?;
                sizes.push(spec.size);
            }
            if let Some(sizes) = sizes.into_iter().collect::<Option<Vec<Money>>>() {
                inst = inst.with_sizes(sizes.iter().map(Money::dollars).collect())?;
            }
        }
        self.model.validate(&inst)?;
        Ok(inst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn money_parses_and_prints_exactly() {
        assert_eq!("119000".parse::<Money>().unwrap().cents(), 11_900_000);
        assert_eq!("0.5".parse::<Money>().unwrap().cents(), 50);
        assert_eq!(
            "101600.05".parse::<Money>().unwrap().to_string(),
            "101600.05"
        );
        assert!("1.234".parse::<Money>().is_err());
        assert!("-1".parse::<Money>().is_err());
        assert!("".parse::<Money>().is_err());
        let m: Money = serde_json::from_str("1000000").unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), "\"1000000.00\"");
    }

    #[test]
    fn config_round_trips() {
        let mut cfg = ElectionConfig::new(Money::from_cents(100));
        cfg.items = vec![ItemSpec {
            name: "a".into(),
            size: Some(Money::from_cents(40)),
        }];
        cfg.model = UtilityModel::Saturating;
        let back = ElectionConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let minimal = ElectionConfig::from_json(r#"{"budget": "1.00"}"#).unwrap();
        assert_eq!(minimal.model, UtilityModel::Linear);
    }

    #[test]
    fn duplicate_items_are_rejected() {
        let text = r#"{"budget": "1", "items": [{"name": "a"}, {"name": "a"}]}"#;
        assert!(matches!(
            ElectionConfig::from_json(text),
            Err(Error::Config(_))
        ));
    }
}
