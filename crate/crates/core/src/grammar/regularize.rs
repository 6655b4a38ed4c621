use super::{Facade, GrammarError, Item, Level, Manifest, ProceduralCode, Span};

/// One level as flat token sequences, one per facade (1, 2 or 4 facades).
#[derive(Clone, Debug, PartialEq)]
pub struct RawLevel {
    pub facades: Vec<Vec<String>>,
}

impl RawLevel {
    pub fn new(facades: Vec<Vec<&str>>) -> Self {
        Self { facades: facades.into_iter().map(|f| f.into_iter().map(str::to_string).collect()).collect() }
    }
}

/// Best tandem repeat `(start, period, count)` by covered length; ties go to
/// the longer period, then the earlier start.
fn best_repeat(seq: &[String]) -> Option<(usize, usize, usize)> {
    let n = seq.len();
    let mut best: Option<(usize, usize, usize)> = None;
    for period in 1..=n / 2 {
        for start in 0..=n - 2 * period {
            let mut count = 1;
            while start + (count + 1) * period <= n
                && seq[start + count * period..start + (count + 1) * period] == seq[start..start + period]
            {
                count += 1;
            }
            if count < 2 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bs, bp, bc)) => {
                    let (cov, bcov) = (count * period, bc * bp);
                    cov > bcov || (cov == bcov && (period > bp || (period == bp && start < bs)))
                }
            };
            if better {
                best = Some((start, period, count));
            }
        }
    }
    best
}

fn tokens(seq: &[String]) -> Vec<Item> {
    seq.iter().map(|t| Item::token(t)).collect()
}

fn regularize_facade(seq: &[String]) -> Facade {
    let items = match best_repeat(seq) {
        Some((start, period, count)) => {
            let mut items = tokens(&seq[..start]);
            items.push(Item::Group {
                items: tokens(&seq[start..start + period]),
                repeatable: true,
                span: Span::default(),
            });
            items.extend(tokens(&seq[start + count * period..]));
            items
        }
        None => tokens(seq),
    };
    Facade { items, span: Span::default() }
}

fn collapse_facades(mut facades: Vec<Facade>) -> Vec<Facade> {
    if facades.len() == 4 && facades[0] == facades[2] && facades[1] == facades[3] {
        facades.truncate(2);
    }
    if facades.len() == 2 && facades[0] == facades[1] {
        facades.truncate(1);
    }
    facades
}

fn check(raw: &[RawLevel]) -> Result<(), GrammarError> {
    if raw.is_empty() {
        return Err(GrammarError::Invalid("no levels".into()));
    }
    for (k, level) in raw.iter().enumerate() {
        if ![1, 2, 4].contains(&level.facades.len()) || level.facades.iter().any(Vec::is_empty) {
            return Err(GrammarError::Invalid(format!("level {k} needs 1, 2 or 4 nonempty facades")));
        }
    }
    Ok(())
}

/// The unregularized code: every token fixed, one level per raw level.
pub fn raw_code(building_id: &str, raw: &[RawLevel]) -> Result<ProceduralCode, GrammarError> {
    check(raw)?;
    let levels = raw
        .iter()
        .enumerate()
        .map(|(k, l)| Level {
            id: format!("L{}", k + 1),
            repeat_count: 1,
            facades: l.facades.iter().map(|f| Facade { items: tokens(f), span: Span::default() }).collect(),
            span: Span::default(),
        })
        .collect();
    Ok(ProceduralCode { building_id: building_id.to_string(), dims: None, levels, span: Span::default() })
}

/// Converts raw per-level token sequences into regular code: the
/// maximal-coverage tandem repeat of each facade becomes a repeat group,
/// identical facades collapse and identical adjacent levels merge.
pub fn regularize(building_id: &str, raw: &[RawLevel]) -> Result<ProceduralCode, GrammarError> {
    check(raw)?;
    let mut levels: Vec<Level> = Vec::new();
    for (k, l) in raw.iter().enumerate() {
        let facades = collapse_facades(l.facades.iter().map(|f| regularize_facade(f)).collect());
        if let Some(last) = levels.last_mut() {
            if last.facades == facades {
                last.repeat_count += 1;
                continue;
            }
        }
        levels.push(Level { id: format!("L{}", k + 1), repeat_count: 1, facades, span: Span::default() });
    }
    Ok(ProceduralCode { building_id: building_id.to_string(), dims: None, levels, span: Span::default() })
}

/// Building size implied by raw sequences: front and right facade widths,
/// and the stacked level heights.
pub fn raw_dims(raw: &[RawLevel], manifest: &Manifest) -> Result<[f64; 3], GrammarError> {
    check(raw)?;
    let spec = |id: &str| manifest.get(id).ok_or_else(|| GrammarError::UnknownAssets(vec![id.to_string()]));
    let first = &raw[0].facades;
    let mut length = 0.0;
    for t in &first[0] {
        length += spec(t)?.extent[0];
    }
    let mut width = 0.0;
    for t in &first[1 % first.len()] {
        width += spec(t)?.extent[0];
    }
    let mut height = 0.0;
    for level in raw {
        let mut h: f64 = 0.0;
        for t in level.facades.iter().flatten() {
            h = h.max(spec(t)?.extent[2]);
        }
        height += h;
    }
    Ok([length, width, height])
}

#[cfg(test)]
mod tests {
    use super::super::{expand, serialize, AssetSpec};
    use super::*;

    fn seq(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn window_pillar_pattern() {
        let raw = [RawLevel { facades: vec![seq("C_E P1 W1 P1 W1 P1 W1 C_E")] }];
        let code = regularize("B", &raw).unwrap();
        assert_eq!(serialize(&code), "building B {\n  level L1 { C_E (P1 W1)* C_E }\n}\n");
    }

    #[test]
    fn identical_levels_merge() {
        let level = RawLevel { facades: vec![seq("C_E W1 C_E")] };
        let code = regularize("B", &[level.clone(), level.clone(), level]).unwrap();
        assert_eq!(code.levels.len(), 1);
        assert_eq!(code.levels[0].repeat_count, 3);
    }

    #[test]
    fn no_repeats_is_verbatim() {
        let raw = [RawLevel { facades: vec![seq("A B C D")] }];
        let code = regularize("B", &raw).unwrap();
        assert_eq!(code, raw_code("B", &raw).unwrap());
    }

    #[test]
    fn tie_breaks() {
        // A A B B: equal coverage, equal period -> earlier start
        assert_eq!(best_repeat(&seq("A A B B")), Some((0, 1, 2)));
        // equal coverage, different periods -> longer period
        assert_eq!(best_repeat(&seq("A A A A")), Some((0, 2, 2)));
        assert_eq!(best_repeat(&seq("X A B A B A B")), Some((1, 2, 3)));
        assert_eq!(best_repeat(&seq("A")), None);
    }

    #[test]
    fn faithful_expansion() {
        let manifest = Manifest::new(vec![
            AssetSpec::new("C_E", [1.0, 0.5, 3.0], [0.0, 0.0, 0.0]),
            AssetSpec::new("W1", [1.7, 0.3, 3.0], [0.1, 0.0, 0.2]),
            AssetSpec::new("P1", [0.3, 0.3, 3.0], [0.0, 0.0, 1.5]),
            AssetSpec::new("D1", [2.6, 0.3, 3.2], [0.0, 0.0, 1.6]),
        ])
        .unwrap();
        let ground = RawLevel {
            facades: vec![seq("C_E W1 D1 W1 C_E"), seq("C_E P1 P1 P1 C_E")],
        };
        let upper = RawLevel { facades: vec![seq("C_E P1 W1 P1 W1 P1 W1 C_E"), seq("C_E P1 P1 P1 C_E")] };
        let raw = [ground, upper.clone(), upper];
        let dims = raw_dims(&raw, &manifest).unwrap();
        let direct = expand(&raw_code("B", &raw).unwrap(), &manifest, dims).unwrap();
        let regular = expand(&regularize("B", &raw).unwrap(), &manifest, dims).unwrap();
        assert_eq!(direct, regular);
    }
}
