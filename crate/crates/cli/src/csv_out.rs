//! CSV emission for trajectory records and experiment summaries. Floats are
//! printed at 17 significant digits in exponent form, locale-independent,
//! so identical runs produce byte-identical files.

use qtraj_core::experiments::{ExperimentKind, MonteCarloSummary};
use qtraj_core::sde::PathRecord;

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

fn trajectory_header(n_enclosures: usize, n_jump: usize, combined: bool) -> Vec<String> {
    let mut cols = Vec::new();
    if combined {
        cols.push("trajectory".to_string());
    }
    cols.push("time".to_string());
    cols.push("fidelity".to_string());
    cols.push("fidelity_via_M".to_string());
    for i in 0..n_enclosures {
        cols.push(format!("q{i}_rho"));
    }
    for i in 0..n_enclosures {
        cols.push(format!("q{i}_rhohat"));
    }
    cols.push("cesaro_distance".to_string());
    for j in 0..n_jump {
        cols.push(format!("jumps_channel_{j}"));
    }
    cols
}

fn trajectory_rows(out: &mut String, index: Option<u64>, record: &PathRecord) {
    for (t, &time) in record.sample_times.iter().enumerate() {
        let mut fields = Vec::new();
        if let Some(idx) = index {
            fields.push(idx.to_string());
        }
        fields.push(format_float(time));
        fields.push(format_float(record.fidelity[t]));
        fields.push(format_float(record.fidelity_via_gram[t]));
        for &q in &record.q_rho[t] {
            fields.push(format_float(q));
        }
        for &q in &record.q_rho_hat[t] {
            fields.push(format_float(q));
        }
        fields.push(format_float(record.cesaro_distance[t]));
        for &n in &record.jump_counts[t] {
            fields.push(n.to_string());
        }
        push_row(out, &fields);
    }
}

/// One CSV per trajectory.
pub fn trajectory_csv(record: &PathRecord, n_jump: usize) -> String {
    let n_enc = record.q_rho.first().map_or(0, |q| q.len());
    let mut out = String::new();
    push_row(&mut out, &trajectory_header(n_enc, n_jump, false));
    trajectory_rows(&mut out, None, record);
    out
}

/// All trajectories in one long-format CSV with a leading index column.
pub fn combined_csv(records: &[PathRecord], n_jump: usize) -> String {
    let n_enc = records
        .first()
        .and_then(|r| r.q_rho.first())
        .map_or(0, |q| q.len());
    let mut out = String::new();
    push_row(&mut out, &trajectory_header(n_enc, n_jump, true));
    for (idx, record) in records.iter().enumerate() {
        trajectory_rows(&mut out, Some(idx as u64), record);
    }
    out
}

/// Per-sample-time aggregates; the column set depends on the experiment.
pub fn summary_csv(summary: &MonteCarloSummary) -> String {
    let mut header: Vec<String> = vec!["time".into()];
    match summary.kind {
        ExperimentKind::Fidelity => {
            header.extend(["fidelity_mean".into(), "fidelity_se".into(), "dual_gap_max".into()]);
        }
        ExperimentKind::Martingales | ExperimentKind::Gamma | ExperimentKind::Cesaro => {
            for i in 0..summary.q_rho.len() {
                header.push(format!("q{i}_rho_mean"));
                header.push(format!("q{i}_rho_se"));
            }
            for i in 0..summary.q_rho_hat.len() {
                header.push(format!("q{i}_rhohat_mean"));
                header.push(format!("q{i}_rhohat_se"));
            }
            if summary.q_product_mean.is_some() {
                header.push("q_product_mean".into());
            }
            if summary.cesaro.is_some() {
                header.push("cesaro_median".into());
                header.push("cesaro_p90".into());
                header.push("cesaro_median_to_mixture_rho".into());
                header.push("cesaro_median_to_mixture_rhohat".into());
            }
        }
        ExperimentKind::Reference => {
            for (i, _) in summary.z.iter().enumerate() {
                let label = if i == 0 { "rho" } else { "rhohat" };
                header.push(format!("z_{label}_mean"));
                header.push(format!("z_{label}_se"));
            }
        }
        ExperimentKind::MasterEq => {
            let stats = summary.master_eq.as_ref().expect("master_eq stats");
            let dim = stats.mean.first().map_or(0, |m| m.nrows());
            for i in 0..dim {
                for j in 0..dim {
                    header.push(format!("mean_re_{i}{j}"));
                    header.push(format!("mean_im_{i}{j}"));
                    header.push(format!("se_{i}{j}"));
                    header.push(format!("exact_re_{i}{j}"));
                    header.push(format!("exact_im_{i}{j}"));
                }
            }
            header.push("max_violation_ratio".into());
        }
    }

    let mut out = String::new();
    push_row(&mut out, &header);
    for (t, &time) in summary.sample_times.iter().enumerate() {
        let mut fields = vec![format_float(time)];
        match summary.kind {
            ExperimentKind::Fidelity => {
                let stat = summary.fidelity.as_ref().expect("fidelity stats");
                fields.push(format_float(stat.mean[t]));
                fields.push(format_float(stat.se[t]));
                fields.push(format_float(summary.fidelity_gap.as_ref().unwrap()[t]));
            }
            ExperimentKind::Martingales | ExperimentKind::Gamma | ExperimentKind::Cesaro => {
                for stat in &summary.q_rho {
                    fields.push(format_float(stat.mean[t]));
                    fields.push(format_float(stat.se[t]));
                }
                for stat in &summary.q_rho_hat {
                    fields.push(format_float(stat.mean[t]));
                    fields.push(format_float(stat.se[t]));
                }
                if let Some(qp) = &summary.q_product_mean {
                    fields.push(format_float(qp[t]));
                }
                if let Some(c) = &summary.cesaro {
                    fields.push(format_float(c.median_distance[t]));
                    fields.push(format_float(c.p90_distance[t]));
                    fields.push(format_float(c.median_dist_to_mixture_rho[t]));
                    fields.push(format_float(c.median_dist_to_mixture_rho_hat[t]));
                }
            }
            ExperimentKind::Reference => {
                for stat in &summary.z {
                    fields.push(format_float(stat.mean[t]));
                    fields.push(format_float(stat.se[t]));
                }
            }
            ExperimentKind::MasterEq => {
                let stats = summary.master_eq.as_ref().unwrap();
                let dim = stats.mean[t].nrows();
                for i in 0..dim {
                    for j in 0..dim {
                        fields.push(format_float(stats.mean[t][(i, j)].re));
                        fields.push(format_float(stats.mean[t][(i, j)].im));
                        fields.push(format_float(stats.se[t][(i, j)]));
                        fields.push(format_float(stats.exact[t][(i, j)].re));
                        fields.push(format_float(stats.exact[t][(i, j)].im));
                    }
                }
                fields.push(format_float(stats.max_violation_ratio[t]));
            }
        }
        push_row(&mut out, &fields);
    }
    out
}

/// Empirical selection law, one row per enclosure plus an unresolved row.
pub fn gamma_law_csv(summary: &MonteCarloSummary) -> Option<String> {
    let gamma = summary.gamma.as_ref()?;
    let total: usize = gamma.counts.iter().sum::<usize>() + gamma.unresolved;
    let mut out = String::new();
    push_row(
        &mut out,
        &[
            "enclosure".into(),
            "count".into(),
            "empirical".into(),
            "predicted".into(),
        ],
    );
    for (i, (&count, &q0)) in gamma
        .counts
        .iter()
        .zip(gamma.initial_weights.iter())
        .enumerate()
    {
        push_row(
            &mut out,
            &[
                i.to_string(),
                count.to_string(),
                format_float(count as f64 / total as f64),
                format_float(q0),
            ],
        );
    }
    push_row(
        &mut out,
        &[
            "unresolved".into(),
            gamma.unresolved.to_string(),
            format_float(gamma.unresolved as f64 / total as f64),
            format_float(0.0),
        ],
    );
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_has_17_significant_digits_and_roundtrips() {
        for x in [
            0.1,
            std::f64::consts::PI,
            1.0 / 3.0,
            -2.5e-13,
            6.02214076e23,
        ] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            let mantissa: String = s
                .chars()
                .take_while(|&ch| ch != 'e')
                .filter(|ch| ch.is_ascii_digit())
                .collect();
            assert_eq!(mantissa.len(), 17, "{s}");
        }
    }
}
