use super::{Cell, MazeSpec};
use crate::error::{Error, Result};

pub(super) fn parse(text: &str, horizon: usize) -> Result<MazeSpec> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let end = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
    let rows = &lines[..end];
    if rows.is_empty() {
        return Err(Error::Layout { line: 1, msg: "empty layout".into() });
    }
    let width = rows[0].chars().count();
    let height = rows.len();
    if width == 0 {
        return Err(Error::Layout { line: 1, msg: "empty row".into() });
    }

    let mut walls = vec![false; width * height];
    let mut start = None;
    let mut goals = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        let line = r + 1;
        if row.chars().count() != width {
            return Err(Error::Layout {
                line,
                msg: format!("ragged row: {} cells, expected {width}", row.chars().count()),
            });
        }
        let y = height - 1 - r;
        for (x, ch) in row.chars().enumerate() {
            let cell = Cell::new(x, y);
            match ch {
                '#' => walls[y * width + x] = true,
                '.' => {}
                'G' => goals.push(cell),
                'S' | '*' => {
                    if start.is_some() {
                        return Err(Error::Layout { line, msg: "multiple start cells".into() });
                    }
                    start = Some(cell);
                    if ch == '*' {
                        goals.push(cell);
                    }
                }
                other => {
                    return Err(Error::Layout { line, msg: format!("unknown cell character {other:?}") });
                }
            }
        }
    }
    let start = start.ok_or(Error::Layout { line: height, msg: "no start cell".into() })?;
    MazeSpec::new(width, height, walls, start, goals, horizon)
}

pub(super) fn render(spec: &MazeSpec) -> String {
    let mut out = String::with_capacity((spec.width + 1) * spec.height);
    for y in (0..spec.height).rev() {
        for x in 0..spec.width {
            let c = Cell::new(x, y);
            let is_goal = spec.goals.contains(&c);
            out.push(match (spec.is_wall(c), c == spec.start, is_goal) {
                (true, _, _) => '#',
                (false, true, true) => '*',
                (false, true, false) => 'S',
                (false, false, true) => 'G',
                (false, false, false) => '.',
            });
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::BUILTIN_NAMES;

    #[test]
    fn parses_goals_and_start() {
        let m = parse("G.#\n..G\nS..\n", 7).unwrap();
        assert_eq!(m.width(), 3);
        assert_eq!(m.height(), 3);
        assert_eq!(m.start(), Cell::new(0, 0));
        assert_eq!(m.goals(), &[Cell::new(0, 2), Cell::new(2, 1)]);
        assert!(m.is_wall(Cell::new(2, 2)));
        assert_eq!(m.horizon(), 7);
    }

    #[test]
    fn star_marks_a_start_goal() {
        let m = parse("..\n*.\n", 4).unwrap();
        assert_eq!(m.goals(), &[m.start()]);
    }

    #[test]
    fn rejects_malformed_layouts() {
        assert!(matches!(parse("...\n..\nS..", 5), Err(Error::Layout { line: 2, .. })));
        assert!(matches!(parse("S.S\n", 5), Err(Error::Layout { .. })));
        assert!(matches!(parse("...\n", 5), Err(Error::Layout { .. })));
        assert!(matches!(parse("S.x\n", 5), Err(Error::Layout { .. })));
        assert!(matches!(parse("\n\n", 5), Err(Error::Layout { .. })));
        assert!(parse("S.\n", 0).is_err());
    }

    #[test]
    fn tolerates_crlf_and_trailing_blank_lines() {
        let m = parse("..\r\nS.\r\n\r\n", 3).unwrap();
        assert_eq!((m.width(), m.height()), (2, 2));
    }

    #[test]
    fn render_roundtrips_corpus() {
        for name in BUILTIN_NAMES {
            let m = crate::env::builtin(name).unwrap();
            let again = parse(&render(&m), m.horizon()).unwrap();
            assert_eq!(again, m);
        }
    }
}
