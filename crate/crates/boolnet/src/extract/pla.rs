//! PLA-style text files for ISF dumps and minimized covers.
//!
//! Two flavors share one surface syntax:
//!
//! * `.type fr` — an ON/OFF listing. Each line is a complete input minterm
//!   followed by one character per output: `1` puts the minterm in that
//!   output's ON set, `0` in its OFF set, `-` in neither (don't-care).
//!   Unlisted minterms are don't-cares everywhere.
//! * `.type f` — a cover. Each line is a cube over the inputs (`0`, `1`,
//!   `-`) and `1` marks the covers that contain it.

use crate::bits::PatternSet;
use crate::extract::Isf;
use crate::twolevel::{Cover, Cube};
use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlaError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> PlaError {
    PlaError::Parse { line, message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlaKind {
    /// `.type f`: cube listing for completely specified covers.
    Cover,
    /// `.type fr`: explicit ON/OFF minterm listing, don't-care elsewhere.
    OnOff,
}

#[derive(Clone, Debug)]
pub struct PlaRow {
    pub line: usize,
    pub inputs: String,
    pub outputs: String,
}

#[derive(Clone, Debug)]
pub struct PlaFile {
    pub num_inputs: usize,
    pub num_outputs: usize,
    pub kind: PlaKind,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
    pub rows: Vec<PlaRow>,
}

impl PlaFile {
    pub fn read(r: impl BufRead) -> Result<PlaFile, PlaError> {
        let mut num_inputs: Option<usize> = None;
        let mut num_outputs: Option<usize> = None;
        let mut declared_rows: Option<usize> = None;
        let mut kind = PlaKind::Cover;
        let mut input_labels: Vec<String> = Vec::new();
        let mut output_labels: Vec<String> = Vec::new();
        let mut rows: Vec<PlaRow> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('.') {
                let mut parts = rest.split_whitespace();
                let key = parts.next().unwrap_or("");
                match key {
                    "i" => {
                        num_inputs = Some(
                            parts
                                .next()
                                .and_then(|t| t.parse().ok())
                                .ok_or_else(|| parse_err(lineno, "bad .i directive"))?,
                        )
                    }
                    "o" => {
                        num_outputs = Some(
                            parts
                                .next()
                                .and_then(|t| t.parse().ok())
                                .ok_or_else(|| parse_err(lineno, "bad .o directive"))?,
                        )
                    }
                    "p" => {
                        declared_rows = Some(
                            parts
                                .next()
                                .and_then(|t| t.parse().ok())
                                .ok_or_else(|| parse_err(lineno, "bad .p directive"))?,
                        )
                    }
                    "type" => {
                        kind = match parts.next() {
                            Some("f") => PlaKind::Cover,
                            Some("fr") => PlaKind::OnOff,
                            other => {
                                return Err(parse_err(
                                    lineno,
                                    format!("unsupported .type {other:?}"),
                                ))
                            }
                        }
                    }
                    "ilb" => input_labels = parts.map(str::to_string).collect(),
                    "ob" => output_labels = parts.map(str::to_string).collect(),
                    "e" | "end" => break,
                    other => return Err(parse_err(lineno, format!("unknown directive .{other}"))),
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            let inputs = parts.next().unwrap_or("").to_string();
            let outputs = parts.next().unwrap_or("").to_string();
            if parts.next().is_some() {
                return Err(parse_err(lineno, "expected '<inputs> <outputs>'"));
            }
            let ni = num_inputs.ok_or_else(|| parse_err(lineno, "data before .i"))?;
            let no = num_outputs.ok_or_else(|| parse_err(lineno, "data before .o"))?;
            if inputs.len() != ni {
                return Err(parse_err(
                    lineno,
                    format!("input field has {} characters, expected {ni}", inputs.len()),
                ));
            }
            if outputs.len() != no {
                return Err(parse_err(
                    lineno,
                    format!("output field has {} characters, expected {no}", outputs.len()),
                ));
            }
            if let Some(bad) = inputs.chars().find(|c| !matches!(c, '0' | '1' | '-')) {
                return Err(parse_err(lineno, format!("bad input character {bad:?}")));
            }
            if let Some(bad) = outputs.chars().find(|c| !matches!(c, '0' | '1' | '-' | '~')) {
                return Err(parse_err(lineno, format!("bad output character {bad:?}")));
            }
            rows.push(PlaRow { line: lineno, inputs, outputs });
        }
        let num_inputs = num_inputs.ok_or_else(|| parse_err(0, "missing .i directive"))?;
        let num_outputs = num_outputs.ok_or_else(|| parse_err(0, "missing .o directive"))?;
        if let Some(d) = declared_rows {
            if d != rows.len() {
                return Err(parse_err(0, format!(".p declares {d} rows, file has {}", rows.len())));
            }
        }
        if input_labels.is_empty() {
            input_labels = (0..num_inputs).map(|j| format!("x{j}")).collect();
        }
        if output_labels.is_empty() {
            output_labels = (0..num_outputs).map(|k| format!("y{k}")).collect();
        }
        if input_labels.len() != num_inputs {
            return Err(parse_err(0, ".ilb label count does not match .i"));
        }
        if output_labels.len() != num_outputs {
            return Err(parse_err(0, ".ob label count does not match .o"));
        }
        Ok(PlaFile { num_inputs, num_outputs, kind, input_labels, output_labels, rows })
    }

    /// One ISF per output from an ON/OFF listing.
    pub fn to_isfs(&self) -> Result<Vec<Isf>, PlaError> {
        if self.kind != PlaKind::OnOff {
            return Err(parse_err(0, "expected .type fr for an ISF listing"));
        }
        let mut row_bits = vec![0u64; crate::bits::words_for(self.num_inputs)];
        let mut sets: Vec<(PatternSet, PatternSet)> = (0..self.num_outputs)
            .map(|_| (PatternSet::new(self.num_inputs), PatternSet::new(self.num_inputs)))
            .collect();
        for row in &self.rows {
            row_bits.iter_mut().for_each(|w| *w = 0);
            for (j, ch) in row.inputs.chars().enumerate() {
                match ch {
                    '1' => crate::bits::set_bit(&mut row_bits, j, true),
                    '0' => {}
                    _ => {
                        return Err(parse_err(
                            row.line,
                            "don't-care input positions are not allowed in ON/OFF listings",
                        ))
                    }
                }
            }
            for (k, ch) in row.outputs.chars().enumerate() {
                match ch {
                    '1' => sets[k].0.push_row(&row_bits),
                    '0' => sets[k].1.push_row(&row_bits),
                    _ => {}
                }
            }
        }
        sets.into_iter()
            .map(|(on, off)| {
                Isf::from_sets(on, off).map_err(|e| parse_err(0, e.to_string()))
            })
            .collect()
    }

    /// One cover per output from a cube listing.
    pub fn to_covers(&self) -> Result<Vec<Cover>, PlaError> {
        if self.kind != PlaKind::Cover {
            return Err(parse_err(0, "expected .type f for a cover listing"));
        }
        let mut covers: Vec<Vec<Cube>> = vec![Vec::new(); self.num_outputs];
        for row in &self.rows {
            let cube = Cube::from_pattern(&row.inputs)
                .ok_or_else(|| parse_err(row.line, "bad cube pattern"))?;
            for (k, ch) in row.outputs.chars().enumerate() {
                if ch == '1' {
                    covers[k].push(cube.clone());
                }
            }
        }
        covers
            .into_iter()
            .map(|cubes| {
                Cover::from_cubes(self.num_inputs, cubes).map_err(|e| parse_err(0, e.to_string()))
            })
            .collect()
    }
}

/// Writes an ON/OFF listing (`.type fr`). `inputs` holds the distinct
/// patterns; `outputs` has one row per pattern with one bit per output unit.
/// `dont_care` (same layout, optional) masks entries out of both sets.
pub fn write_on_off(
    w: &mut impl Write,
    inputs: &PatternSet,
    outputs: &PatternSet,
    dont_care: Option<&PatternSet>,
    input_labels: Option<&[String]>,
    output_labels: Option<&[String]>,
) -> io::Result<()> {
    assert_eq!(inputs.len(), outputs.len(), "one output row per input pattern");
    writeln!(w, ".i {}", inputs.arity())?;
    writeln!(w, ".o {}", outputs.arity())?;
    if let Some(labels) = input_labels {
        writeln!(w, ".ilb {}", labels.join(" "))?;
    }
    if let Some(labels) = output_labels {
        writeln!(w, ".ob {}", labels.join(" "))?;
    }
    writeln!(w, ".type fr")?;
    writeln!(w, ".p {}", inputs.len())?;
    let mut line = String::new();
    for i in 0..inputs.len() {
        line.clear();
        for j in 0..inputs.arity() {
            line.push(if inputs.bit(i, j) { '1' } else { '0' });
        }
        line.push(' ');
        for k in 0..outputs.arity() {
            let ch = match dont_care {
                Some(dc) if dc.bit(i, k) => '-',
                _ => {
                    if outputs.bit(i, k) {
                        '1'
                    } else {
                        '0'
                    }
                }
            };
            line.push(ch);
        }
        writeln!(w, "{line}")?;
    }
    writeln!(w, ".e")
}

/// Writes covers as a `.type f` cube listing. Cubes shared between outputs
/// collapse to one line with several output bits set.
pub fn write_covers(
    w: &mut impl Write,
    covers: &[Cover],
    input_labels: Option<&[String]>,
    output_labels: Option<&[String]>,
) -> io::Result<()> {
    let arity = covers.first().map(|c| c.arity()).unwrap_or(0);
    let mut by_cube: BTreeMap<&Cube, Vec<usize>> = BTreeMap::new();
    for (k, cover) in covers.iter().enumerate() {
        assert_eq!(cover.arity(), arity, "covers must share an input space");
        for cube in cover.cubes() {
            by_cube.entry(cube).or_default().push(k);
        }
    }
    writeln!(w, ".i {arity}")?;
    writeln!(w, ".o {}", covers.len())?;
    if let Some(labels) = input_labels {
        writeln!(w, ".ilb {}", labels.join(" "))?;
    }
    if let Some(labels) = output_labels {
        writeln!(w, ".ob {}", labels.join(" "))?;
    }
    writeln!(w, ".type f")?;
    writeln!(w, ".p {}", by_cube.len())?;
    for (cube, outs) in &by_cube {
        let mut line = cube.pattern_string();
        line.push(' ');
        let mut mask = vec!['0'; covers.len()];
        for &k in outs {
            mask[k] = '1';
        }
        line.extend(mask);
        writeln!(w, "{line}")?;
    }
    writeln!(w, ".e")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_off_round_trip() {
        let mut inputs = PatternSet::new(3);
        let mut outputs = PatternSet::new(2);
        inputs.push_index(0b101);
        outputs.push_index(0b01);
        inputs.push_index(0b010);
        outputs.push_index(0b10);
        let mut text = Vec::new();
        write_on_off(&mut text, &inputs, &outputs, None, None, None).unwrap();
        let pla = PlaFile::read(text.as_slice()).unwrap();
        assert_eq!(pla.kind, PlaKind::OnOff);
        assert_eq!(pla.input_labels, vec!["x0", "x1", "x2"]);
        let isfs = pla.to_isfs().unwrap();
        assert_eq!(isfs.len(), 2);
        assert_eq!(isfs[0].classify(&[0b101]), Some(true));
        assert_eq!(isfs[0].classify(&[0b010]), Some(false));
        assert_eq!(isfs[0].classify(&[0b000]), None);
        assert_eq!(isfs[1].classify(&[0b101]), Some(false));
        assert_eq!(isfs[1].classify(&[0b010]), Some(true));
    }

    #[test]
    fn cover_round_trip_merges_shared_cubes() {
        let shared = Cube::from_pattern("1-0").unwrap();
        let only_a = Cube::from_pattern("01-").unwrap();
        let a = Cover::from_cubes(3, vec![shared.clone(), only_a.clone()]).unwrap();
        let b = Cover::from_cubes(3, vec![shared.clone()]).unwrap();
        let mut text = Vec::new();
        write_covers(&mut text, &[a.clone(), b.clone()], None, None).unwrap();
        let pla = PlaFile::read(text.as_slice()).unwrap();
        assert_eq!(pla.rows.len(), 2);
        let covers = pla.to_covers().unwrap();
        let mut got_a = covers[0].clone();
        got_a.normalize();
        let mut want_a = a;
        want_a.normalize();
        assert_eq!(got_a, want_a);
        assert_eq!(covers[1].cubes(), &[shared]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = ".i 3\n.o 1\n.type fr\n10 1\n.e\n";
        match PlaFile::read(text.as_bytes()) {
            Err(PlaError::Parse { line: 4, message }) => {
                assert!(message.contains("3"), "{message}");
            }
            other => panic!("expected line-4 parse error, got {other:?}"),
        }
        let dash = ".i 2\n.o 1\n.type fr\n1- 1\n.e\n";
        let pla = PlaFile::read(dash.as_bytes()).unwrap();
        match pla.to_isfs() {
            Err(PlaError::Parse { line: 4, .. }) => {}
            other => panic!("expected line-4 error, got {other:?}"),
        }
    }

    #[test]
    fn declared_row_count_is_checked() {
        let text = ".i 2\n.o 1\n.p 2\n11 1\n.e\n";
        assert!(matches!(PlaFile::read(text.as_bytes()), Err(PlaError::Parse { .. })));
    }
}
