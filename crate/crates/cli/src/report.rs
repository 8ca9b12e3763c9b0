//! CSV tables and the deviation heatmap SVG.

use anyhow::Result;

use decoupler_core::audit::{DeviationMatrix, RateTable, SweepTable};
use decoupler_core::data::{ColumnKind, Dataset, Value};
use decoupler_core::decouple::ReferencePointMap;
use decoupler_core::sim::ThetaSlot;

pub fn sweep_csv(table: &SweepTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["threshold".to_owned()];
    for p in &table.policies {
        header.push(format!("approval[{p}]"));
    }
    header.push("always_rejected_count".into());
    for g in &table.groups {
        header.push(format!("rejected_share[{g}]"));
    }
    header.push("always_accepted_count".into());
    for g in &table.groups {
        header.push(format!("accepted_share[{g}]"));
    }
    w.write_record(&header)?;
    for row in &table.rows {
        let mut record = vec![format!("{}", row.threshold)];
        for rate in &row.approval_rates {
            record.push(format!("{rate}"));
        }
        record.push(row.always_rejected.count.to_string());
        for share in &row.always_rejected.shares {
            record.push(share.map(|s| format!("{s}")).unwrap_or_default());
        }
        record.push(row.always_accepted.count.to_string());
        for share in &row.always_accepted.shares {
            record.push(share.map(|s| format!("{s}")).unwrap_or_default());
        }
        w.write_record(&record)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn rates_csv(table: &RateTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["policy", "group", "stratum", "count", "approval_rate", "delta_vs_baseline"])?;
    for cell in &table.cells {
        w.write_record(&[
            cell.policy.clone(),
            cell.group.clone(),
            cell.stratum.clone().unwrap_or_default(),
            cell.count.to_string(),
            format!("{}", cell.rate),
            format!("{}", cell.delta_vs_baseline),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn deviation_csv(matrix: &DeviationMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["slot", "fitted", "truth", "relative_deviation", "absolute_deviation", "zero_truth"])?;
    for e in &matrix.entries {
        w.write_record(&[
            e.slot.name().to_owned(),
            format!("{}", e.fitted),
            format!("{}", e.truth),
            e.relative.map(|r| format!("{r}")).unwrap_or_default(),
            format!("{}", e.absolute),
            (e.relative.is_none()).to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn refmap_json(refmap: &ReferencePointMap, dataset: &Dataset) -> Result<String> {
    let schema = dataset.schema();
    let entries: Vec<serde_json::Value> = refmap
        .iter()
        .map(|e| {
            let var = schema.variable(&e.tail).expect("refmap validated");
            let value: Vec<String> = e
                .value
                .iter()
                .zip(&var.columns)
                .map(|(v, col)| v.render(&col.kind))
                .collect();
            serde_json::json!({
                "tail": e.tail.as_str(),
                "head": e.head.as_str(),
                "value": value,
            })
        })
        .collect();
    Ok(serde_json::to_string_pretty(&serde_json::json!({ "reference_points": entries }))?)
}

/// Parses the `{tail, head, value}` list back into a typed map against the
/// dataset's schema.
pub fn refmap_from_json(text: &str, dataset: &Dataset) -> Result<ReferencePointMap> {
    #[derive(serde::Deserialize)]
    struct File {
        reference_points: Vec<Entry>,
    }
    #[derive(serde::Deserialize)]
    struct Entry {
        tail: String,
        head: String,
        value: Vec<String>,
    }
    let file: File = serde_json::from_str(text)?;
    let schema = dataset.schema();
    let mut refmap = ReferencePointMap::new();
    for entry in file.reference_points {
        let tail = decoupler_core::graph::NodeId::from(entry.tail.as_str());
        let var = schema
            .variable(&tail)
            .ok_or_else(|| anyhow::anyhow!("unknown reference-point tail `{}`", entry.tail))?;
        if var.columns.len() != entry.value.len() {
            anyhow::bail!(
                "reference point for `{}` needs {} values, got {}",
                entry.tail,
                var.columns.len(),
                entry.value.len()
            );
        }
        let mut values = Vec::new();
        for (raw, col) in entry.value.iter().zip(&var.columns) {
            let value = match &col.kind {
                ColumnKind::Binary => match raw.as_str() {
                    "0" | "false" => Value::Bool(false),
                    "1" | "true" => Value::Bool(true),
                    _ => anyhow::bail!("`{raw}` is not a binary value for `{}`", col.name),
                },
                ColumnKind::Continuous => Value::Real(
                    raw.parse::<f64>()
                        .map_err(|_| anyhow::anyhow!("`{raw}` is not numeric for `{}`", col.name))?,
                ),
                ColumnKind::Categorical(levels) => {
                    let idx = levels
                        .iter()
                        .position(|l| l == raw)
                        .ok_or_else(|| anyhow::anyhow!("`{raw}` is not a level of `{}`", col.name))?;
                    Value::Level(idx as u32)
                }
            };
            values.push(value);
        }
        refmap.insert(
            decoupler_core::graph::Edge::new(entry.tail.as_str(), entry.head.as_str()),
            values,
        );
    }
    Ok(refmap)
}

const SLOT_GRID: [(ThetaSlot, usize, usize); 12] = [
    // (slot, row: equation index, col: regressor index A,C,M,L,intercept)
    (ThetaSlot::AM, 0, 0),
    (ThetaSlot::CM, 0, 1),
    (ThetaSlot::MIntercept, 0, 4),
    (ThetaSlot::AL, 1, 0),
    (ThetaSlot::CL, 1, 1),
    (ThetaSlot::ML, 1, 2),
    (ThetaSlot::LIntercept, 1, 4),
    (ThetaSlot::AY, 2, 0),
    (ThetaSlot::CY, 2, 1),
    (ThetaSlot::MY, 2, 2),
    (ThetaSlot::LY, 2, 3),
    (ThetaSlot::YIntercept, 2, 4),
];

/// Diverging-scale heatmap of signed relative deviations: blue negative,
/// light gray zero, red positive, saturating at |relative| = 1. Slots with
/// zero ground truth are drawn hollow with their absolute deviation.
pub fn deviation_svg(title: &str, matrix: &DeviationMatrix) -> String {
    const CELL: f64 = 96.0;
    const PAD: f64 = 56.0;
    let width = PAD + 5.0 * CELL + 16.0;
    let height = PAD + 3.0 * CELL + 16.0;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        title
    ));
    for (i, label) in ["A", "C", "M", "L", "1"].iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{label}</text>\n",
            PAD + (i as f64 + 0.5) * CELL,
            PAD - 10.0
        ));
    }
    for (i, label) in ["M", "L", "Y"].iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{label}</text>\n",
            PAD - 16.0,
            PAD + (i as f64 + 0.55) * CELL
        ));
    }

    for (slot, row, col) in SLOT_GRID {
        let entry = matrix.entry(slot);
        let x = PAD + col as f64 * CELL;
        let y = PAD + row as f64 * CELL;
        let (fill, text) = match entry.relative {
            Some(rel) => (diverging_color(rel), format!("{rel:+.3}")),
            None => ("#f5f5f5".to_owned(), format!("abs {:+.3}", entry.absolute)),
        };
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{fill}\" stroke=\"#333\" stroke-width=\"1\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            x + CELL / 2.0,
            y + CELL / 2.0 - 6.0,
            slot.name()
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            x + CELL / 2.0,
            y + CELL / 2.0 + 12.0,
            text
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Interpolates white -> blue for negatives and white -> red for positives,
/// clamped at |value| = 1.
fn diverging_color(value: f64) -> String {
    let t = value.clamp(-1.0, 1.0);
    let mix = |from: (u8, u8, u8), to: (u8, u8, u8), f: f64| {
        let channel = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * f).round() as u8;
        format!("#{:02x}{:02x}{:02x}", channel(from.0, to.0), channel(from.1, to.1), channel(from.2, to.2))
    };
    let near_zero = (0xf0, 0xf0, 0xf0);
    if t < 0.0 {
        mix(near_zero, (0x21, 0x66, 0xac), -t)
    } else {
        mix(near_zero, (0xb2, 0x18, 0x2b), t)
    }
}

pub fn predictions_csv(scores: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "score"])?;
    for (i, s) in scores.iter().enumerate() {
        w.write_record(&[i.to_string(), format!("{s}")])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diverging_colors_are_anchored() {
        assert_eq!(diverging_color(0.0), "#f0f0f0");
        assert_eq!(diverging_color(1.0), "#b2182b");
        assert_eq!(diverging_color(-1.0), "#2166ac");
        assert_eq!(diverging_color(5.0), "#b2182b"); // saturates
    }
}
