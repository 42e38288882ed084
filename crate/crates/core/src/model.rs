//! Grid, user, scenario and market descriptions plus the JSON case file.
//!
//! Units: power in kW, prices in $/kW, `alpha1` in $/kW², `alpha2` in $/kW
//! and the market sensitivity `a` in kW/$.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub i64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub i64);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("cannot read case file: {0}")]
    Io(#[from] std::io::Error),
    #[error("case file does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("grid is disconnected: buses {unreached:?} cannot be reached from bus {from}")]
    Disconnected { from: BusId, unreached: Vec<BusId> },
    #[error("scenario has no renewable output for prosumer {0}")]
    MissingOutput(UserId),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LineSpec<T: Scalar> {
    #[serde(rename = "from")]
    pub from_bus: BusId,
    #[serde(rename = "to")]
    pub to_bus: BusId,
    pub susceptance: T,
    pub flow_limit: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GridSpec<T: Scalar> {
    pub buses: Vec<BusId>,
    pub slack_bus: BusId,
    pub lines: Vec<LineSpec<T>>,
}

impl<T: Scalar> GridSpec<T> {
    /// Position of each bus id in `buses`.
    pub fn bus_index(&self) -> HashMap<BusId, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (*b, i)).collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.buses.is_empty() {
            return Err(invalid("grid.buses", "at least one bus is required"));
        }
        let mut seen = BTreeSet::new();
        for (i, b) in self.buses.iter().enumerate() {
            if !seen.insert(*b) {
                return Err(invalid(format!("grid.buses[{i}]"), format!("duplicate bus id {b}")));
            }
        }
        if !seen.contains(&self.slack_bus) {
            return Err(invalid(
                "grid.slack_bus",
                format!("bus {} is not listed in grid.buses", self.slack_bus),
            ));
        }
        for (i, l) in self.lines.iter().enumerate() {
            let field = |name: &str| format!("grid.lines[{i}].{name}");
            for (name, b) in [("from", l.from_bus), ("to", l.to_bus)] {
                if !seen.contains(&b) {
                    return Err(invalid(field(name), format!("unknown bus {b}")));
                }
            }
            if l.from_bus == l.to_bus {
                return Err(invalid(field("to"), "line connects a bus to itself"));
            }
            if !(l.susceptance > T::zero()) || !l.susceptance.is_finite() {
                return Err(invalid(field("susceptance"), "must be positive and finite"));
            }
            if !(l.flow_limit > T::zero()) || !l.flow_limit.is_finite() {
                return Err(invalid(field("flow_limit"), "must be positive and finite"));
            }
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<(), ModelError> {
        let index = self.bus_index();
        let mut adj = vec![Vec::new(); self.buses.len()];
        for l in &self.lines {
            let (a, b) = (index[&l.from_bus], index[&l.to_bus]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let start = index[&self.slack_bus];
        let mut reached = vec![false; self.buses.len()];
        reached[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !reached[v] {
                    reached[v] = true;
                    queue.push_back(v);
                }
            }
        }
        let unreached: Vec<BusId> = self
            .buses
            .iter()
            .zip(&reached)
            .filter(|(_, r)| !**r)
            .map(|(b, _)| *b)
            .collect();
        if unreached.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Disconnected {
                from: self.slack_bus,
                unreached,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserKind {
    Consumer,
    Prosumer,
}

/// One consumer or prosumer with disutility `alpha1 d² + alpha2 d` over the
/// elastic range `[elastic_lo, elastic_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct UserSpec<T: Scalar> {
    pub id: UserId,
    pub bus: BusId,
    pub kind: UserKind,
    pub fixed_demand: T,
    pub elastic_lo: T,
    pub elastic_hi: T,
    pub alpha1: T,
    pub alpha2: T,
}

impl<T: Scalar> UserSpec<T> {
    pub fn is_prosumer(&self) -> bool {
        self.kind == UserKind::Prosumer
    }

    pub fn disutility(&self, d: T) -> T {
        self.alpha1 * d * d + self.alpha2 * d
    }

    pub fn marginal_disutility(&self, d: T) -> T {
        T::of(2.0) * self.alpha1 * d + self.alpha2
    }

    /// Second derivative of the disutility.
    pub fn curvature(&self) -> T {
        T::of(2.0) * self.alpha1
    }

    pub fn clamp(&self, d: T) -> T {
        d.max(self.elastic_lo).min(self.elastic_hi)
    }

    pub fn validate(&self, at: usize) -> Result<(), ModelError> {
        let field = |name: &str| format!("users[{at}].{name}");
        let values = [
            ("fixed_demand", self.fixed_demand),
            ("elastic_lo", self.elastic_lo),
            ("elastic_hi", self.elastic_hi),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ];
        if let Some((name, _)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(invalid(field(name), "must be finite"));
        }
        if !(self.alpha1 > T::zero()) {
            return Err(invalid(
                field("alpha1"),
                format!("must be > 0 for a strictly convex disutility, got {}", self.alpha1),
            ));
        }
        if self.elastic_lo > self.elastic_hi {
            return Err(invalid(
                field("elastic_lo"),
                format!("{} exceeds elastic_hi {}", self.elastic_lo, self.elastic_hi),
            ));
        }
        if self.fixed_demand < T::zero() {
            return Err(invalid(field("fixed_demand"), "must be >= 0"));
        }
        Ok(())
    }
}

/// Renewable output per prosumer, kW.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "", transparent)]
pub struct Scenario<T: Scalar> {
    pub w: BTreeMap<UserId, T>,
}

impl<T: Scalar> Scenario<T> {
    pub fn new(w: BTreeMap<UserId, T>) -> Self {
        Self { w }
    }

    pub fn output(&self, user: UserId) -> Option<T> {
        self.w.get(&user).copied()
    }

    /// Outputs in the order of the prosumers in `users`.
    pub fn vector(&self, users: &[UserSpec<T>]) -> Result<Vec<T>, ModelError> {
        users
            .iter()
            .filter(|u| u.is_prosumer())
            .map(|u| self.output(u.id).ok_or(ModelError::MissingOutput(u.id)))
            .collect()
    }

    /// Builds a scenario from outputs ordered like the prosumers in `users`.
    pub fn from_vector(users: &[UserSpec<T>], w: &[T]) -> Self {
        let ids = users.iter().filter(|u| u.is_prosumer()).map(|u| u.id);
        Self {
            w: ids.zip(w.iter().copied()).collect(),
        }
    }

    pub fn validate(&self, users: &[UserSpec<T>]) -> Result<(), ModelError> {
        let kinds: HashMap<UserId, UserKind> = users.iter().map(|u| (u.id, u.kind)).collect();
        for (id, w) in &self.w {
            let field = format!("scenario.{id}");
            match kinds.get(id) {
                None => return Err(invalid(field, "no user with this id")),
                Some(UserKind::Consumer) => {
                    return Err(invalid(field, "user is a consumer and has no renewable output"))
                }
                Some(UserKind::Prosumer) => {}
            }
            if !(*w >= T::zero()) || !w.is_finite() {
                return Err(invalid(field, format!("output must be finite and >= 0, got {w}")));
            }
        }
        for u in users.iter().filter(|u| u.is_prosumer()) {
            if !self.w.contains_key(&u.id) {
                return Err(ModelError::MissingOutput(u.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MarketParams<T: Scalar> {
    /// Market sensitivity, kW/$.
    pub a: T,
    /// Bid convergence tolerance, kW.
    pub eps: T,
    pub max_iters: usize,
}

impl<T: Scalar> MarketParams<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.a > T::zero()) || !self.a.is_finite() {
            return Err(invalid("market.a", "must be positive and finite"));
        }
        if !(self.eps > T::zero()) {
            return Err(invalid("market.eps", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(invalid("market.max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for MarketParams<T> {
    fn default() -> Self {
        Self {
            a: T::one(),
            eps: T::of(1e-9),
            max_iters: 10_000,
        }
    }
}

/// Everything a case file holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Case<T: Scalar> {
    pub grid: GridSpec<T>,
    pub users: Vec<UserSpec<T>>,
    pub scenario: Scenario<T>,
    pub market: MarketParams<T>,
}

impl<T: Scalar> Case<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.grid.validate()?;
        let buses: BTreeSet<BusId> = self.grid.buses.iter().copied().collect();
        let mut ids = BTreeSet::new();
        for (i, u) in self.users.iter().enumerate() {
            u.validate(i)?;
            if !ids.insert(u.id) {
                return Err(invalid(format!("users[{i}].id"), format!("duplicate user id {}", u.id)));
            }
            if !buses.contains(&u.bus) {
                return Err(invalid(format!("users[{i}].bus"), format!("unknown bus {}", u.bus)));
            }
        }
        self.scenario.validate(&self.users)?;
        self.market.validate()
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let case: Self = serde_json::from_str(text)?;
        case.validate()?;
        Ok(case)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    pub fn prosumers(&self) -> impl Iterator<Item = &UserSpec<T>> {
        self.users.iter().filter(|u| u.is_prosumer())
    }

    /// Same case with every line limit multiplied by `factor`.
    pub fn with_scaled_limits(&self, factor: T) -> Self {
        let mut c = self.clone();
        for l in &mut c.grid.lines {
            l.flow_limit *= factor;
        }
        c
    }
}

/// Reads and validates a case file.
pub fn load_case<T: Scalar>(path: impl AsRef<Path>) -> Result<Case<T>, ModelError> {
    let text = std::fs::read_to_string(path)?;
    Case::from_json(&text)
}

/// Net fixed demand `D_k`: the fixed demand, minus renewable output for a
/// prosumer. The user's net demand is then `d_k + D_k`.
pub fn aggregate_net_fixed<T: Scalar>(user: &UserSpec<T>, scenario: &Scenario<T>) -> Result<T, ModelError> {
    match user.kind {
        UserKind::Consumer => Ok(user.fixed_demand),
        UserKind::Prosumer => scenario
            .output(user.id)
            .map(|w| user.fixed_demand - w)
            .ok_or(ModelError::MissingOutput(user.id)),
    }
}

/// `D_k` for every user, in user order.
pub fn net_fixed_vector<T: Scalar>(users: &[UserSpec<T>], scenario: &Scenario<T>) -> Result<Vec<T>, ModelError> {
    users.iter().map(|u| aggregate_net_fixed(u, scenario)).collect()
}
