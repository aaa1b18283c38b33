//! CSV views of a run report.

use super::RunReport;

fn writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

/// One row per replication, period, subject and metric. The subject is a
/// mechanism name, `pool` for the marketplace itself, or `anarchy`.
pub fn periods_csv(report: &RunReport) -> String {
    let mut w = writer();
    w.write_record(["replication", "period", "subject", "metric", "value"])
        .expect("in-memory write");
    let mut row = |r: u32, p: u32, subject: &str, metric: &str, value: f64| {
        w.write_record([
            r.to_string(),
            p.to_string(),
            subject.to_string(),
            metric.to_string(),
            value.to_string(),
        ])
        .expect("in-memory write");
    };
    for rep in &report.replications {
        let r = rep.replication;
        for p in &rep.periods {
            let t = p.period.0;
            for (name, v) in [
                ("arrivals", p.arrivals as f64),
                ("carried_in", p.carried_in as f64),
                ("expired", p.expired as f64),
                ("pool_orders", p.pool_orders as f64),
                ("active_suppliers", p.active_suppliers as f64),
                ("contracts", p.contracts as f64),
                ("matched", p.matched as f64),
                ("hours_deducted", p.hours_deducted),
                ("carried_out", p.carried_out as f64),
            ] {
                row(r, t, "pool", name, v);
            }
            for m in &p.mechanisms {
                let s = m.mechanism.name();
                row(r, t, s, "utility", m.utility);
                row(r, t, s, "order_utility", m.order_utility);
                row(r, t, s, "supplier_utility", m.supplier_utility);
                row(r, t, s, "matched_orders", m.matched_orders as f64);
                row(r, t, s, "matched_suppliers", m.matched_suppliers as f64);
                if let Some(v) = m.impact {
                    row(r, t, s, "impact", v);
                }
                if let Some(lb) = m.lb {
                    row(r, t, s, "lb", lb as f64);
                }
                if let Some(st) = &m.stability {
                    row(r, t, s, "blocking_pairs", st.table.pairs.records as f64);
                    row(r, t, s, "blocking_groups", st.table.groups.records as f64);
                    row(r, t, s, "pair_orders", st.pair_orders as f64);
                    row(r, t, s, "group_orders", st.group_orders as f64);
                }
                for sw in &m.switching {
                    row(r, t, s, &format!("pairs_at_{}", sw.theta), sw.pairs as f64);
                    row(r, t, s, &format!("groups_at_{}", sw.theta), sw.groups as f64);
                }
            }
            if let Some(post) = &p.posterior {
                row(
                    r,
                    post.period.0,
                    "posterior",
                    "blocking_pairs",
                    post.table.pairs.records as f64,
                );
                row(
                    r,
                    post.period.0,
                    "posterior",
                    "blocking_groups",
                    post.table.groups.records as f64,
                );
            }
        }
        if let Some(a) = &rep.anarchy {
            for p in &a.periods {
                let t = p.period.0;
                row(r, t, "anarchy", "mw_utility", p.mw_utility);
                row(r, t, "anarchy", "post_utility", p.post_utility);
                row(r, t, "anarchy", "as_utility", p.as_utility);
                row(r, t, "anarchy", "defectors", p.defectors as f64);
                row(r, t, "anarchy", "displaced", p.displaced as f64);
                row(r, t, "anarchy", "defection_share", p.defection_share);
            }
        }
    }
    finish(w)
}

/// One row per mechanism and metric, with the 95% interval.
pub fn aggregate_csv(report: &RunReport) -> String {
    let mut w = writer();
    w.write_record([
        "mechanism",
        "metric",
        "n",
        "mean",
        "ci_half_width",
        "ci_low",
        "ci_high",
        "degenerate",
    ])
    .expect("in-memory write");
    for a in &report.aggregate {
        w.write_record([
            a.mechanism.name().to_string(),
            a.metric.clone(),
            a.n.to_string(),
            a.mean.to_string(),
            a.ci_half_width.to_string(),
            (a.mean - a.ci_half_width).to_string(),
            (a.mean + a.ci_half_width).to_string(),
            a.degenerate.to_string(),
        ])
        .expect("in-memory write");
    }
    finish(w)
}
