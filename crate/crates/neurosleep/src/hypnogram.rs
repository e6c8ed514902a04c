//! Per-subject hypnograms: a TSV of true and predicted stages, and an SVG
//! with both as step traces.

use std::fmt::Write as _;

use neurosleep_core::train::Prediction;
use neurosleep_core::Stage;

pub const TSV_HEADER: &str = "epoch_index\ttrue\tpredicted";

pub fn tsv(predictions: &[Prediction]) -> String {
    let mut s = String::from(TSV_HEADER);
    s.push('\n');
    for p in predictions {
        let _ = writeln!(s, "{}\t{}\t{}", p.epoch_index, p.truth, p.predicted);
    }
    s
}

/// Vertical slot, top to bottom: W, R, N1, N2, N3.
fn level(s: Stage) -> usize {
    match s {
        Stage::W => 0,
        Stage::R => 1,
        Stage::N1 => 2,
        Stage::N2 => 3,
        Stage::N3 => 4,
    }
}

const LEVELS: [Stage; 5] = [Stage::W, Stage::R, Stage::N1, Stage::N2, Stage::N3];
const LEFT: f64 = 48.0;
const TOP: f64 = 28.0;
const ROW: f64 = 36.0;
const PLOT_W: f64 = 900.0;

fn path(predictions: &[Prediction], stage: impl Fn(&Prediction) -> Stage, x0: u32, dx: f64) -> String {
    let mut d = String::new();
    for (i, p) in predictions.iter().enumerate() {
        let x = LEFT + f64::from(p.epoch_index - x0) * dx;
        let y = TOP + level(stage(p)) as f64 * ROW;
        if i == 0 {
            let _ = write!(d, "M{x:.2},{y:.2}");
        } else {
            // horizontal run, then the vertical step
            let _ = write!(d, " H{x:.2} V{y:.2}");
        }
    }
    if let Some(last) = predictions.last() {
        let _ = write!(d, " H{:.2}", LEFT + f64::from(last.epoch_index - x0 + 1) * dx);
    }
    d
}

/// Step plot of one subject's predictions, sorted by epoch index.
pub fn svg(subject: &str, predictions: &[Prediction]) -> String {
    let x0 = predictions.first().map_or(0, |p| p.epoch_index);
    let span = predictions.last().map_or(1, |p| p.epoch_index - x0 + 1).max(1);
    let dx = PLOT_W / f64::from(span);
    let height = TOP + ROW * 4.0 + 40.0;
    let width = LEFT + PLOT_W + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(subject));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for st in LEVELS {
        let y = TOP + level(st) as f64 * ROW;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
            LEFT + PLOT_W,
            LEFT - 8.0,
            y + 4.0,
            st.name()
        );
    }
    let _ = writeln!(
        s,
        r##"<path d="{}" fill="none" stroke="#222" stroke-width="1.5"><title>true</title></path>"##,
        path(predictions, |p| p.truth, x0, dx)
    );
    let _ = writeln!(
        s,
        r##"<path d="{}" fill="none" stroke="#d62728" stroke-width="1" stroke-dasharray="4 2"><title>predicted</title></path>"##,
        path(predictions, |p| p.predicted, x0, dx)
    );
    let _ = writeln!(
        s,
        r##"<text x="{LEFT}" y="{}">epoch index {x0} to {}  (black: true, red dashed: predicted)</text>"##,
        height - 12.0,
        x0 + span - 1
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// File-system safe form of a subject id.
pub fn file_stem(subject: &str) -> String {
    subject
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds() -> Vec<Prediction> {
        [(0, Stage::W, Stage::W), (1, Stage::N1, Stage::N2), (2, Stage::R, Stage::R)]
            .into_iter()
            .map(|(i, t, p)| Prediction {
                subject_id: "s<1>".into(),
                epoch_index: i,
                truth: t,
                predicted: p,
            })
            .collect()
    }

    #[test]
    fn tsv_has_one_row_per_epoch() {
        let t = tsv(&preds());
        assert_eq!(t.lines().count(), 1 + 3);
        assert_eq!(t.lines().nth(2), Some("1\tN1\tN2"));
    }

    #[test]
    fn stage_order_puts_rem_between_wake_and_n1() {
        assert!(level(Stage::W) < level(Stage::R) && level(Stage::R) < level(Stage::N1));
        assert_eq!(level(Stage::N3), 4);
    }

    #[test]
    fn svg_has_two_traces() {
        let s = svg("s<1>", &preds());
        assert_eq!(s.matches("<path").count(), 2);
        assert!(s.contains("s&lt;1&gt;"));
        assert_eq!(file_stem("SC4001 E0"), "SC4001_E0");
    }
}
