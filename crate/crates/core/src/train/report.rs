use super::eval::CodeDistribution;
use super::loop_::EpochStats;
use super::metrics::MetricsReport;
use std::fmt::Write;

pub const METRICS_HEADER: &str = "model,auc,accuracy,precision,recall,specificity,tp,fp,fn,tn";
const METRIC_NAMES: [&str; 5] = ["auc", "accuracy", "precision", "recall", "specificity"];

fn value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:.6}"))
}

fn row(name: &str, m: &MetricsReport) -> String {
    let vals: Vec<String> = m.values().iter().map(|&v| value(v)).collect();
    format!("{name},{},{},{},{},{}", vals.join(","), m.tp, m.fp, m.fn_, m.tn)
}

pub fn metrics_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for (name, m) in rows {
        out.push_str(&row(name, m));
        out.push('\n');
    }
    out
}

/// Metrics on the noisy set followed by their change from the clean set.
pub fn noise_metrics_csv(rows: &[(String, MetricsReport, MetricsReport)]) -> String {
    let deltas: Vec<String> = METRIC_NAMES.iter().map(|n| format!("delta_{n}")).collect();
    let mut out = format!("{METRICS_HEADER},{}\n", deltas.join(","));
    for (name, clean, noisy) in rows {
        let d: Vec<String> = noisy
            .values()
            .iter()
            .zip(clean.values())
            .map(|(n, c)| match (n, c) {
                (Some(n), Some(c)) => format!("{:+.6}", n - c),
                _ => "NA".into(),
            })
            .collect();
        let _ = writeln!(out, "{},{}", row(name, noisy), d.join(","));
    }
    out
}

pub fn codes_csv(dist: &CodeDistribution) -> String {
    let k = dist.benign.len();
    let cols: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
    let mut out = format!("class,{}\n", cols.join(","));
    for (label, r) in dist.rows() {
        let vals: Vec<String> = r.iter().map(|v| format!("{v:.8}")).collect();
        let _ = writeln!(out, "{},{}", label.as_str(), vals.join(","));
    }
    out
}

pub fn epoch_csv(stats: &[EpochStats]) -> String {
    let mut out = String::from("epoch,cls_loss,swav_loss,total_loss,batches,clips_per_s\n");
    for s in stats {
        let _ = writeln!(
            out,
            "{},{:.6},{},{:.6},{},{:.3}",
            s.epoch,
            s.cls_loss,
            value(s.swav_loss),
            s.total_loss,
            s.batches,
            s.clips_per_s
        );
    }
    out
}
