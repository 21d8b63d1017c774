use std::fmt::Write;

pub const CURVE_HEADER: &str =
    "episode,step,character,score,opportunity_fraction,loss_policy,loss_value,loss_entropy";

/// One learning-curve record. Evaluation rows carry no losses.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub episode: usize,
    pub step: usize,
    pub character: String,
    pub score: f32,
    pub opportunity_fraction: f32,
    pub losses: Option<super::LossParts>,
}

impl CurveRow {
    pub fn is_eval(&self) -> bool {
        self.losses.is_none()
    }

    pub fn to_csv_line(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{}",
            self.episode, self.step, self.character, self.score, self.opportunity_fraction
        );
        match self.losses {
            Some(l) => write!(s, ",{},{},{}", l.policy, l.value, l.entropy).unwrap(),
            None => s.push_str(",,,"),
        }
        s
    }
}

pub fn to_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

/// For each multiple of `every` up to `until`: mean score and opportunity of
/// the last `window` training episodes of `character` finished by then.
/// Grid points before the first finished episode read zero.
pub fn trailing_means(
    rows: &[CurveRow],
    character: &str,
    every: usize,
    until: usize,
    window: usize,
) -> Vec<(usize, f32, f32)> {
    let train: Vec<&CurveRow> = rows
        .iter()
        .filter(|r| !r.is_eval() && r.character == character)
        .collect();
    (1..=until / every)
        .map(|k| {
            let g = k * every;
            let done = train.partition_point(|r| r.step <= g);
            let recent = &train[done.saturating_sub(window)..done];
            if recent.is_empty() {
                return (g, 0.0, 0.0);
            }
            let n = recent.len() as f32;
            let score = recent.iter().map(|r| r.score).sum::<f32>() / n;
            let opp = recent.iter().map(|r| r.opportunity_fraction).sum::<f32>() / n;
            (g, score, opp)
        })
        .collect()
}

/// Pointwise mean of equally gridded series.
pub fn mean_series(series: &[Vec<(usize, f32, f32)>]) -> Vec<(usize, f32, f32)> {
    let Some(first) = series.first() else {
        return Vec::new();
    };
    let n = series.len() as f32;
    (0..first.len())
        .map(|i| {
            let (s, o) = series
                .iter()
                .fold((0.0, 0.0), |(s, o), x| (s + x[i].1, o + x[i].2));
            (first[i].0, s / n, o / n)
        })
        .collect()
}

/// First grid step whose score reaches `threshold`.
pub fn first_crossing(series: &[(usize, f32, f32)], threshold: f32) -> Option<usize> {
    series.iter().find(|p| p.1 >= threshold).map(|p| p.0)
}
