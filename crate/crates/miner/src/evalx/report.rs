use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EntityScores, ErrorCounts, ResourceReport};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QaScores {
    pub em: f64,
    pub f1: f64,
    pub instances: usize,
    /// `opening` / `closing` → (EM, token-F1).
    pub per_segment: BTreeMap<String, (f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub documents: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<EntityScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa: Option<QaScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<ErrorCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resources: Option<ResourceReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub models: Vec<ModelReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<EvalReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<CurvePoint>,
    /// Named scalar comparisons such as latency or carbon ratios.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ratios: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FoldFailure>,
}

impl EvalReport {
    pub fn new(protocol: impl Into<String>) -> Self {
        EvalReport {
            protocol: protocol.into(),
            ..EvalReport::default()
        }
    }

    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text rendering for terminals and logs.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        self.render(&mut s, 0);
        s
    }

    fn render(&self, s: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        let _ = writeln!(s, "{pad}== {} ==", self.protocol);
        for m in &self.models {
            let _ = writeln!(s, "{pad}[{}] documents={}", m.name, m.documents);
            if let Some(q) = &m.qa {
                let _ = writeln!(s, "{pad}  QA      EM={:.3} F1={:.3} (n={})", q.em, q.f1, q.instances);
                for (seg, (em, f1)) in &q.per_segment {
                    let _ = writeln!(s, "{pad}    {seg:<8} EM={em:.3} F1={f1:.3}");
                }
            }
            if let Some(e) = &m.entities {
                let _ = writeln!(
                    s,
                    "{pad}  micro   P={:.3} R={:.3} F1={:.3} (tp={} fp={} fn={})",
                    e.micro.precision, e.micro.recall, e.micro.f1, e.micro.tp, e.micro.fp, e.micro.fn_
                );
                for (cat, p) in &e.per_category {
                    let _ = writeln!(
                        s,
                        "{pad}    {cat:<22} P={:.3} R={:.3} F1={:.3}",
                        p.precision, p.recall, p.f1
                    );
                }
            }
            if let Some(t) = &m.taxonomy {
                let _ = writeln!(
                    s,
                    "{pad}  errors  boundary={} type={} spurious={} missed={}",
                    t.boundary, t.type_confusion, t.spurious, t.missed
                );
            }
            if let Some(r) = &m.resources {
                let _ = write!(s, "{pad}  cost    wall={:.4}s", r.wall_seconds);
                if let (Some(e), Some(c)) = (r.energy_kwh, r.kg_co2e) {
                    let _ = write!(s, " energy={e:.3e}kWh co2e={c:.3e}kg");
                }
                let _ = writeln!(s);
            }
        }
        for p in &self.curve {
            let _ = writeln!(s, "{pad}  k={} F1={:.3}", p.k, p.f1);
        }
        for (k, v) in &self.ratios {
            let _ = writeln!(s, "{pad}  {k} = {v:.4}");
        }
        for f in &self.failures {
            let _ = writeln!(s, "{pad}  FAILED {}: {}", f.fold, f.message);
        }
        for f in &self.folds {
            f.render(s, depth + 1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_table() {
        let mut r = EvalReport::new("global");
        r.models.push(ModelReport {
            name: "mer".into(),
            documents: 3,
            taxonomy: Some(ErrorCounts::default()),
            ..ModelReport::default()
        });
        r.ratios.insert("latency_ratio".into(), 2.0);
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_table().contains("latency_ratio = 2.0000"));
    }
}
