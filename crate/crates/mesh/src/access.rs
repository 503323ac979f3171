//! Read access rules, per-component access logs and request counters.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use mmw_core::Table;
use serde::{Deserialize, Serialize};

use crate::component::Stats;
use crate::protocol::{ComponentError, ErrorCode};

pub const WILDCARD: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AclRule {
    pub principal: String,
    pub domain: String,
    pub product: String,
    #[serde(alias = "allow_read")]
    pub allow: bool,
}

impl AclRule {
    pub fn new(principal: &str, domain: &str, product: &str, allow: bool) -> Self {
        AclRule {
            principal: principal.to_string(),
            domain: domain.to_string(),
            product: product.to_string(),
            allow,
        }
    }

    pub fn matches(&self, principal: &str, domain: &str, product: &str) -> bool {
        let m = |pattern: &str, v: &str| pattern == WILDCARD || pattern == v;
        m(&self.principal, principal) && m(&self.domain, domain) && m(&self.product, product)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Decision {
    pub allow: bool,
    /// Index of the first matching rule; `None` means the default deny.
    pub rule: Option<usize>,
}

/// Ordered rules, first match wins, default deny.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Acl {
    pub rules: Vec<AclRule>,
}

impl Acl {
    pub fn new(rules: Vec<AclRule>) -> Self {
        Acl { rules }
    }

    pub fn check(&self, principal: &str, domain: &str, product: &str) -> Decision {
        match self.rules.iter().position(|r| r.matches(principal, domain, product)) {
            Some(i) => Decision {
                allow: self.rules[i].allow,
                rule: Some(i),
            },
            None => Decision {
                allow: false,
                rule: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessLogEntry {
    pub timestamp: String,
    pub component: String,
    pub principal: String,
    pub query: String,
    pub rows: u64,
    pub cache_hit: bool,
    /// `ok`, `denied`, or `error:<code>`.
    pub outcome: String,
}

#[derive(Default)]
struct LogState {
    entries: Vec<AccessLogEntry>,
    last: Option<DateTime<Utc>>,
    file: Option<BufWriter<File>>,
}

/// Append-only; timestamps never go backwards.
#[derive(Default)]
pub struct AccessLog {
    state: Mutex<LogState>,
}

impl AccessLog {
    /// Also append every entry, one JSON object per line, to `path`.
    pub fn open_file(&self, path: &Path) -> std::io::Result<()> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.state.lock().unwrap().file = Some(BufWriter::new(file));
        Ok(())
    }

    pub fn append(&self, mut entry: AccessLogEntry) {
        let mut state = self.state.lock().unwrap();
        let now = Utc::now();
        let ts = state.last.map_or(now, |last| last.max(now));
        state.last = Some(ts);
        entry.timestamp = ts.to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        if let Some(f) = state.file.as_mut() {
            // logging must not fail a request
            let _ = writeln!(f, "{}", serde_json::to_string(&entry).expect("entries serialize"));
        }
        state.entries.push(entry);
    }

    pub fn entries(&self) -> Vec<AccessLogEntry> {
        self.state.lock().unwrap().entries.clone()
    }

    pub fn flush(&self) {
        if let Some(f) = self.state.lock().unwrap().file.as_mut() {
            let _ = f.flush();
        }
    }
}

#[derive(Default)]
pub struct Counters {
    queries_served: AtomicU64,
    rows_returned: AtomicU64,
    cache_hits: AtomicU64,
    cache_misses: AtomicU64,
    errors: AtomicU64,
}

impl Counters {
    pub fn snapshot(&self) -> Stats {
        Stats {
            queries_served: self.queries_served.load(Ordering::SeqCst),
            rows_returned: self.rows_returned.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            cache_misses: self.cache_misses.load(Ordering::SeqCst),
            errors: self.errors.load(Ordering::SeqCst),
        }
    }

    pub fn cache(&self, hit: bool) {
        let c = if hit { &self.cache_hits } else { &self.cache_misses };
        c.fetch_add(1, Ordering::SeqCst);
    }
}

/// Whose rules apply to a component: standalone components are
/// unrestricted, components in a mesh check the mesh ACL.
#[derive(Clone, Default)]
pub struct Governance {
    pub domain: String,
    pub acl: Option<Arc<Acl>>,
}

impl Governance {
    pub fn governed(domain: &str, acl: Arc<Acl>) -> Self {
        Governance {
            domain: domain.to_string(),
            acl: Some(acl),
        }
    }
}

/// Access check, logging and counting around each data request.
pub struct Gate {
    component: String,
    governance: Governance,
    pub log: AccessLog,
    pub counters: Counters,
}

impl Gate {
    pub fn new(component: &str, governance: Governance) -> Self {
        Gate {
            component: component.to_string(),
            governance,
            log: AccessLog::default(),
            counters: Counters::default(),
        }
    }

    pub fn domain(&self) -> &str {
        &self.governance.domain
    }

    fn entry(&self, principal: &str, query: &str, rows: u64, cache_hit: bool, outcome: String) -> AccessLogEntry {
        AccessLogEntry {
            timestamp: String::new(),
            component: self.component.clone(),
            principal: principal.to_string(),
            query: query.to_string(),
            rows,
            cache_hit,
            outcome,
        }
    }

    /// Checks `principal` may read `product`. A denial is logged and counted.
    pub fn admit(&self, principal: &str, product: &str, query: &str) -> Result<(), ComponentError> {
        let Some(acl) = &self.governance.acl else {
            return Ok(());
        };
        let d = acl.check(principal, &self.governance.domain, product);
        if d.allow {
            return Ok(());
        }
        self.counters.errors.fetch_add(1, Ordering::SeqCst);
        self.log
            .append(self.entry(principal, query, 0, false, "denied".to_string()));
        let why = match d.rule {
            Some(i) => format!("rule {i}"),
            None => "no matching rule".to_string(),
        };
        Err(ComponentError::new(
            ErrorCode::AccessDenied,
            &self.component,
            format!("{principal} may not read {}/{product} ({why})", self.governance.domain),
        ))
    }

    /// Logs and counts the outcome of an admitted request.
    pub fn finish(&self, principal: &str, query: &str, result: &Result<Table, ComponentError>, cache_hit: bool) {
        match result {
            Ok(t) => {
                self.counters.queries_served.fetch_add(1, Ordering::SeqCst);
                self.counters.rows_returned.fetch_add(t.len() as u64, Ordering::SeqCst);
                self.log
                    .append(self.entry(principal, query, t.len() as u64, cache_hit, "ok".to_string()));
            }
            Err(e) => {
                self.counters.errors.fetch_add(1, Ordering::SeqCst);
                self.log
                    .append(self.entry(principal, query, 0, cache_hit, format!("error:{}", e.code)));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(rules: &[AclRule], p: &str, d: &str, pr: &str) -> bool {
        for r in rules {
            let ok = |a: &str, b: &str| a == "*" || a == b;
            if ok(&r.principal, p) && ok(&r.domain, d) && ok(&r.product, pr) {
                return r.allow;
            }
        }
        false
    }

    #[test]
    fn empty_acl_denies() {
        assert!(!Acl::default().check("anyone", "x", "p").allow);
    }

    #[test]
    fn analyst_reads_only_domain_x() {
        let acl = Acl::new(vec![AclRule::new("analyst", "x", "*", true)]);
        assert!(acl.check("analyst", "x", "orders").allow);
        assert!(!acl.check("analyst", "y", "orders").allow);
        assert!(!acl.check("other", "x", "orders").allow);
    }

    #[test]
    fn exhaustive_small_acls() {
        // every list of up to two rules over a tiny alphabet
        let pats = ["*", "a", "b"];
        let mut rules = Vec::new();
        for p in pats {
            for d in pats {
                for pr in pats {
                    for allow in [true, false] {
                        rules.push(AclRule::new(p, d, pr, allow));
                    }
                }
            }
        }
        let vals = ["a", "b", "c"];
        let mut lists: Vec<Vec<AclRule>> = vec![vec![]];
        for r in &rules {
            lists.push(vec![r.clone()]);
        }
        for r1 in rules.iter().step_by(3) {
            for r2 in rules.iter().step_by(5) {
                lists.push(vec![r1.clone(), r2.clone()]);
            }
        }
        for list in lists {
            let acl = Acl::new(list.clone());
            for p in vals {
                for d in vals {
                    for pr in vals {
                        assert_eq!(acl.check(p, d, pr).allow, oracle(&list, p, d, pr));
                    }
                }
            }
        }
    }

    #[test]
    fn log_timestamps_monotone() {
        let log = AccessLog::default();
        for i in 0..50 {
            log.append(AccessLogEntry {
                timestamp: String::new(),
                component: "c".into(),
                principal: "p".into(),
                query: format!("q{i}"),
                rows: 0,
                cache_hit: false,
                outcome: "ok".into(),
            });
        }
        let e = log.entries();
        assert!(e.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }
}
