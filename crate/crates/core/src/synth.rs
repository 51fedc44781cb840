//! Synthetic multi-graph benchmark: a stochastic block model friendship
//! graph, community-correlated purchases, seller attributes and credit
//! labels, each with a tunable signal strength.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use thiserror::Error;

use crate::graph::{Graph, GraphBuilder, GraphKind, Side};
use crate::seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("labels file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub sellers: usize,
    /// Total attribute nodes: one segment per community, then regions and
    /// keyword buckets sharing the rest one to three.
    pub attributes: usize,
    pub communities: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Chance that a purchase goes to the buyer's community's preferred
    /// sellers rather than a uniformly random seller.
    pub purchase_homophily: f64,
    pub purchases_per_user: usize,
    /// Chance that a seller's segment and keywords follow its preferred
    /// community rather than being uniform.
    pub attribute_homophily: f64,
    /// Weight of the community rate against the global rate in each user's
    /// default probability.
    pub credit_homophily: f64,
    pub credit_positive_rate: f64,
    /// Per-community default rates. Drawn when absent.
    pub community_rates: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 2000,
            sellers: 200,
            attributes: 60,
            communities: 8,
            p_intra: 0.06,
            p_inter: 0.001,
            purchase_homophily: 0.9,
            purchases_per_user: 5,
            attribute_homophily: 0.9,
            credit_homophily: 0.9,
            credit_positive_rate: 0.16,
            community_rates: None,
            seed: 42,
        }
    }
}

pub fn user_label(i: usize) -> String {
    format!("u{i}")
}

pub fn seller_label(j: usize) -> String {
    format!("s{j}")
}

/// Index encoded in a `u{i}` or `s{j}` label.
pub fn label_index(label: &str) -> Option<usize> {
    label.get(1..)?.parse().ok()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        for (name, p) in [
            ("p_intra", self.p_intra),
            ("p_inter", self.p_inter),
            ("purchase_homophily", self.purchase_homophily),
            ("attribute_homophily", self.attribute_homophily),
            ("credit_homophily", self.credit_homophily),
            ("credit_positive_rate", self.credit_positive_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.communities < 2 {
            return bad("need at least 2 communities".into());
        }
        if self.users < self.communities || self.sellers < self.communities {
            return bad("every community needs at least one user and one seller".into());
        }
        if self.attributes < self.communities + 2 {
            return bad(format!(
                "need at least {} attribute nodes for {} communities",
                self.communities + 2,
                self.communities
            ));
        }
        if self.purchases_per_user == 0 || self.purchases_per_user > self.sellers / self.communities {
            return bad(format!(
                "purchases_per_user must be in 1..={}",
                self.sellers / self.communities
            ));
        }
        if let Some(rates) = &self.community_rates {
            if rates.len() != self.communities || rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return bad("community_rates needs one rate in [0, 1] per community".into());
            }
        }
        Ok(())
    }

    pub fn community(&self, index: usize) -> usize {
        index % self.communities
    }

    pub fn regions(&self) -> usize {
        ((self.attributes - self.communities) / 4).max(1)
    }

    pub fn keywords(&self) -> usize {
        self.attributes - self.communities - self.regions()
    }

    /// `key=value` lines recording every setting.
    pub fn write_manifest<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "users={}", self.users)?;
        writeln!(out, "sellers={}", self.sellers)?;
        writeln!(out, "attributes={}", self.attributes)?;
        writeln!(out, "communities={}", self.communities)?;
        writeln!(out, "p_intra={}", self.p_intra)?;
        writeln!(out, "p_inter={}", self.p_inter)?;
        writeln!(out, "purchase_homophily={}", self.purchase_homophily)?;
        writeln!(out, "purchases_per_user={}", self.purchases_per_user)?;
        writeln!(out, "attribute_homophily={}", self.attribute_homophily)?;
        writeln!(out, "credit_homophily={}", self.credit_homophily)?;
        writeln!(out, "credit_positive_rate={}", self.credit_positive_rate)?;
        if let Some(rates) = &self.community_rates {
            let joined: Vec<String> = rates.iter().map(f64::to_string).collect();
            writeln!(out, "community_rates={}", joined.join(","))?;
        }
        writeln!(out, "seed={}", self.seed)
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SynthError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, SynthError> {
            v.parse()
                .map_err(|_| SynthError::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "users" => self.users = num(key, value)?,
            "sellers" => self.sellers = num(key, value)?,
            "attributes" => self.attributes = num(key, value)?,
            "communities" => self.communities = num(key, value)?,
            "p_intra" => self.p_intra = num(key, value)?,
            "p_inter" => self.p_inter = num(key, value)?,
            "purchase_homophily" => self.purchase_homophily = num(key, value)?,
            "purchases_per_user" => self.purchases_per_user = num(key, value)?,
            "attribute_homophily" => self.attribute_homophily = num(key, value)?,
            "credit_homophily" => self.credit_homophily = num(key, value)?,
            "credit_positive_rate" => self.credit_positive_rate = num(key, value)?,
            "community_rates" => {
                self.community_rates = Some(
                    value
                        .split(',')
                        .map(|v| num(key, v.trim()))
                        .collect::<Result<_, _>>()?,
                )
            }
            "seed" => self.seed = num(key, value)?,
            _ => return Err(SynthError::Config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }
}

/// Users `u0..` with community `i % communities`; each pair is linked with
/// probability `p_intra` inside a community and `p_inter` across.
pub fn gen_friendship(cfg: &SynthConfig) -> Graph {
    let mut rng = seed::rng(seed::derive(cfg.seed, "friendship"));
    let mut b = GraphBuilder::new(GraphKind::Homogeneous);
    let labels: Vec<String> = (0..cfg.users).map(user_label).collect();
    for l in &labels {
        b.add_node(l, Side::Left);
    }
    for i in 0..cfg.users {
        for j in i + 1..cfg.users {
            let p = if cfg.community(i) == cfg.community(j) {
                cfg.p_intra
            } else {
                cfg.p_inter
            };
            if rng.random::<f64>() < p {
                b.add_edge(&labels[i], &labels[j]).expect("distinct users");
            }
        }
    }
    b.build()
}

/// Sellers whose preferred community is `community`.
pub fn preferred_sellers(cfg: &SynthConfig, community: usize) -> Vec<usize> {
    (0..cfg.sellers).filter(|&j| cfg.community(j) == community).collect()
}

/// Each user in `friendship` buys from `purchases_per_user` distinct
/// sellers. Every pick comes from the user's community's preferred sellers
/// with probability `purchase_homophily`, otherwise from all sellers.
pub fn gen_purchases(cfg: &SynthConfig, friendship: &Graph) -> Graph {
    let mut rng = seed::rng(seed::derive(cfg.seed, "purchases"));
    let mut b = GraphBuilder::new(GraphKind::Bipartite);
    let mut users: Vec<(usize, &str)> = friendship
        .labels()
        .iter()
        .filter_map(|l| Some((label_index(l)?, l.as_str())))
        .collect();
    users.sort_unstable();
    for &(_, l) in &users {
        b.add_node(l, Side::Left);
    }
    for j in 0..cfg.sellers {
        b.add_node(&seller_label(j), Side::Right);
    }
    let preferred: Vec<Vec<usize>> = (0..cfg.communities).map(|c| preferred_sellers(cfg, c)).collect();
    for &(i, label) in &users {
        let mut chosen = BTreeSet::new();
        while chosen.len() < cfg.purchases_per_user {
            let j = if rng.random::<f64>() < cfg.purchase_homophily {
                *preferred[cfg.community(i)].choose(&mut rng).expect("non-empty")
            } else {
                rng.random_range(0..cfg.sellers)
            };
            if chosen.insert(j) {
                b.add_edge(label, &seller_label(j)).expect("bipartite");
            }
        }
    }
    b.build()
}

/// Sellers link to one segment (`seg{c}`), one region (`reg{r}`) and one to
/// three keyword buckets (`kw{k}`). Segment and keywords follow the seller's
/// preferred community with probability `attribute_homophily`.
pub fn gen_seller_attributes(cfg: &SynthConfig) -> Graph {
    let mut rng = seed::rng(seed::derive(cfg.seed, "attributes"));
    let mut b = GraphBuilder::new(GraphKind::Bipartite);
    let (regions, keywords) = (cfg.regions(), cfg.keywords());
    for j in 0..cfg.sellers {
        b.add_node(&seller_label(j), Side::Left);
    }
    for c in 0..cfg.communities {
        b.add_node(&format!("seg{c}"), Side::Right);
    }
    for r in 0..regions {
        b.add_node(&format!("reg{r}"), Side::Right);
    }
    for k in 0..keywords {
        b.add_node(&format!("kw{k}"), Side::Right);
    }
    let own_keywords: Vec<Vec<usize>> = (0..cfg.communities)
        .map(|c| (0..keywords).filter(|k| k % cfg.communities == c).collect())
        .collect();
    for j in 0..cfg.sellers {
        let seller = seller_label(j);
        let c = cfg.community(j);
        let segment = if rng.random::<f64>() < cfg.attribute_homophily {
            c
        } else {
            rng.random_range(0..cfg.communities)
        };
        b.add_edge(&seller, &format!("seg{segment}")).expect("bipartite");
        b.add_edge(&seller, &format!("reg{}", rng.random_range(0..regions)))
            .expect("bipartite");
        let wanted = rng.random_range(1..=3usize).min(keywords);
        let mut chosen = BTreeSet::new();
        while chosen.len() < wanted {
            let k = match own_keywords[c].choose(&mut rng) {
                Some(&k) if rng.random::<f64>() < cfg.attribute_homophily => k,
                _ => rng.random_range(0..keywords),
            };
            if chosen.insert(k) {
                b.add_edge(&seller, &format!("kw{k}")).expect("bipartite");
            }
        }
    }
    b.build()
}

/// Splits `total` into integer parts proportional to `weights`, largest
/// remainders first, each capped at `caps`.
fn apportion(weights: &[f64], caps: &[usize], total: usize) -> Vec<usize> {
    let mut parts: Vec<usize> = weights
        .iter()
        .zip(caps)
        .map(|(&w, &cap)| (w.floor() as usize).min(cap))
        .collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = weights[a] - weights[a].floor();
        let rb = weights[b] - weights[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = parts.iter().sum();
    while assigned < total {
        let before = assigned;
        for &i in &order {
            if assigned < total && parts[i] < caps[i] {
                parts[i] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    while assigned > total {
        let before = assigned;
        for &i in order.iter().rev() {
            if assigned > total && parts[i] > 0 {
                parts[i] -= 1;
                assigned -= 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    parts
}

/// Highest community default rate in the drawn profile.
pub const TOP_COMMUNITY_RATE: f64 = 0.95;

/// Community default rates averaging `credit_positive_rate`: either the
/// configured rates or a geometric profile `top·t^k` (ratio `t` solved for
/// the target mean) assigned to communities in seeded random order.
pub fn community_rates(cfg: &SynthConfig) -> Vec<f64> {
    if let Some(rates) = &cfg.community_rates {
        return rates.clone();
    }
    let c = cfg.communities;
    let pi = cfg.credit_positive_rate;
    let top = TOP_COMMUNITY_RATE.min(pi * c as f64);
    if pi >= top {
        return vec![pi; c];
    }
    let mass = |t: f64| top * (0..c).map(|k| t.powi(k as i32)).sum::<f64>();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < pi * c as f64 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let mut rates: Vec<f64> = (0..c).map(|k| top * t.powi(k as i32)).collect();
    rates.shuffle(&mut seed::rng(seed::derive(cfg.seed, "community-rates")));
    rates
}

/// Binary default labels for every user of `friendship`, as `(label, y)`
/// sorted by user index. Community `c` receives exactly
/// `credit_homophily·rate_c + (1 − credit_homophily)·credit_positive_rate`
/// of its members as positives (rounded so the total matches the global
/// rate), placed uniformly at random within the community.
pub fn gen_credit_labels(cfg: &SynthConfig, friendship: &Graph) -> Vec<(String, u8)> {
    let mut users: Vec<(usize, String)> = friendship
        .labels()
        .iter()
        .filter_map(|l| Some((label_index(l)?, l.clone())))
        .collect();
    users.sort_unstable();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.communities];
    for (pos, (i, _)) in users.iter().enumerate() {
        members[cfg.community(*i)].push(pos);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let rates = community_rates(cfg);
    let h = cfg.credit_homophily;
    let expected: Vec<f64> = rates
        .iter()
        .zip(&sizes)
        .map(|(r, &s)| (h * r + (1.0 - h) * cfg.credit_positive_rate) * s as f64)
        .collect();
    let total = if cfg.community_rates.is_some() {
        expected.iter().sum::<f64>().round() as usize
    } else {
        (cfg.credit_positive_rate * users.len() as f64).round() as usize
    };
    let positives = apportion(&expected, &sizes, total);
    let mut rng = seed::rng(seed::derive(cfg.seed, "credit"));
    let mut y = vec![0u8; users.len()];
    for (group, &count) in members.iter_mut().zip(&positives) {
        group.shuffle(&mut rng);
        for &pos in &group[..count] {
            y[pos] = 1;
        }
    }
    users.into_iter().map(|(_, l)| l).zip(y).collect()
}

pub fn write_labels<W: Write>(mut out: W, labels: &[(String, u8)]) -> std::io::Result<()> {
    for (l, y) in labels {
        writeln!(out, "{l}\t{y}")?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(source: R) -> Result<Vec<(String, u8)>, SynthError> {
    let mut labels = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || SynthError::Parse {
            line: i + 1,
            msg: format!("expected `label<TAB>0|1`, got {line:?}"),
        };
        let mut fields = line.split_whitespace();
        let (Some(l), Some(y), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad());
        };
        let y = match y {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad()),
        };
        labels.push((l.to_string(), y));
    }
    Ok(labels)
}
