//! BLIF netlist serialization for AIGs and covers.
//!
//! The subset covers `.model`, `.inputs`, `.outputs`, `.names` and `.end`,
//! with `#` comments and backslash line continuation. Every `.names` block
//! is a sum of cubes for one signal; a constant output column of `0` lists
//! the OFF cubes instead. Blocks may appear in any order; the reader
//! resolves them by dependency and rejects cycles, redefinitions and
//! undefined signals with the offending line number.

use std::collections::{HashMap, VecDeque};
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::multilevel::{Aig, Lit};
use crate::twolevel::Cover;

#[derive(Debug, Error)]
pub enum BlifError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> BlifError {
    BlifError::Parse { line, message: message.into() }
}

/// Write `aig` gate by gate. Inputs are named `x<i>`, AND nodes `n<id>`,
/// outputs `y<k>`, driven through a buffer or inverter block so
/// complemented edges stay representable.
pub fn write_blif(mut w: impl Write, aig: &Aig, model: &str) -> io::Result<()> {
    writeln!(w, ".model {model}")?;
    let name = |l: Lit| -> String {
        let n = l.node();
        if n == 0 {
            "n0".to_string()
        } else if n < aig.first_and() {
            format!("x{}", n - 1)
        } else {
            format!("n{n}")
        }
    };
    write_name_list(&mut w, ".inputs", (0..aig.num_inputs()).map(|i| format!("x{i}")))?;
    write_name_list(&mut w, ".outputs", (0..aig.outputs().len()).map(|k| format!("y{k}")))?;
    let seen = aig.reachable();
    if seen[0] {
        writeln!(w, ".names n0")?;
    }
    let polarity = |l: Lit| if l.is_complement() { '0' } else { '1' };
    for node in aig.first_and()..aig.total() {
        if !seen[node] {
            continue;
        }
        let (a, b) = aig.fanins(node);
        writeln!(w, ".names {} {} n{node}", name(a), name(b))?;
        writeln!(w, "{}{} 1", polarity(a), polarity(b))?;
    }
    for (k, &l) in aig.outputs().iter().enumerate() {
        if l == Lit::TRUE {
            writeln!(w, ".names y{k}\n1")?;
        } else if l == Lit::FALSE {
            writeln!(w, ".names y{k}")?;
        } else {
            writeln!(w, ".names {} y{k}", name(l))?;
            writeln!(w, "{} 1", polarity(l))?;
        }
    }
    writeln!(w, ".end")
}

/// Write a layer of covers in sum-of-products form: one `.names` block per
/// output, one row per cube.
pub fn write_cover_blif(
    mut w: impl Write,
    num_inputs: usize,
    covers: &[Cover],
    model: &str,
) -> io::Result<()> {
    writeln!(w, ".model {model}")?;
    write_name_list(&mut w, ".inputs", (0..num_inputs).map(|i| format!("x{i}")))?;
    write_name_list(&mut w, ".outputs", (0..covers.len()).map(|k| format!("y{k}")))?;
    for (k, cover) in covers.iter().enumerate() {
        assert_eq!(cover.arity(), num_inputs, "cover arity mismatch");
        write!(w, ".names")?;
        for i in 0..num_inputs {
            write!(w, " x{i}")?;
        }
        writeln!(w, " y{k}")?;
        for cube in cover.cubes() {
            writeln!(w, "{} 1", cube.pattern_string())?;
        }
    }
    writeln!(w, ".end")
}

fn write_name_list(
    w: &mut impl Write,
    directive: &str,
    names: impl Iterator<Item = String>,
) -> io::Result<()> {
    write!(w, "{directive}")?;
    let mut on_line = 0;
    for name in names {
        if on_line == 16 {
            write!(w, " \\\n ")?;
            on_line = 0;
        }
        write!(w, " {name}")?;
        on_line += 1;
    }
    writeln!(w)
}

struct Block {
    line: usize,
    inputs: Vec<String>,
    output: String,
    cubes: Vec<String>,
    /// Output column value shared by every row of the block.
    plane: char,
}

/// Parse a BLIF netlist into an AIG: cube rows become AND trees, the rows
/// of a block an OR, and a `0` output plane complements the block.
pub fn read_blif(r: impl BufRead) -> Result<Aig, BlifError> {
    // Fold physical lines into logical ones: strip comments, splice
    // backslash continuations, remember the starting line number.
    let mut logical: Vec<(usize, String)> = Vec::new();
    let mut carry: Option<(usize, String)> = None;
    for (idx, line) in r.lines().enumerate() {
        let mut line = line?;
        if let Some(hash) = line.find('#') {
            line.truncate(hash);
        }
        let (start, text) = match carry.take() {
            Some((s, mut t)) => {
                t.push(' ');
                t.push_str(&line);
                (s, t)
            }
            None => (idx + 1, line),
        };
        let trimmed = text.trim_end();
        if let Some(stem) = trimmed.strip_suffix('\\') {
            carry = Some((start, stem.to_string()));
        } else if !trimmed.trim_start().is_empty() {
            logical.push((start, text));
        }
    }
    if let Some((start, _)) = carry {
        return Err(parse_err(start, "dangling line continuation"));
    }

    let mut inputs: Vec<(usize, String)> = Vec::new();
    let mut output_names: Vec<(usize, String)> = Vec::new();
    let mut blocks: Vec<Block> = Vec::new();
    let mut open: Option<Block> = None;
    for (lineno, text) in logical {
        let t = text.trim();
        if let Some(rest) = t.strip_prefix('.') {
            if let Some(block) = open.take() {
                blocks.push(block);
            }
            let mut parts = rest.split_whitespace();
            let key = parts.next().unwrap_or("");
            let args: Vec<&str> = parts.collect();
            match key {
                "model" => {}
                "inputs" => inputs.extend(args.iter().map(|a| (lineno, a.to_string()))),
                "outputs" => output_names.extend(args.iter().map(|a| (lineno, a.to_string()))),
                "names" => match args.split_last() {
                    Some((out, ins)) => {
                        open = Some(Block {
                            line: lineno,
                            inputs: ins.iter().map(|s| s.to_string()).collect(),
                            output: out.to_string(),
                            cubes: Vec::new(),
                            plane: '1',
                        });
                    }
                    None => return Err(parse_err(lineno, ".names needs an output signal")),
                },
                "end" => break,
                other => return Err(parse_err(lineno, format!("unsupported directive .{other}"))),
            }
        } else {
            let Some(block) = open.as_mut() else {
                return Err(parse_err(lineno, "cube row outside a .names block"));
            };
            let tokens: Vec<&str> = t.split_whitespace().collect();
            let (cube, out_char) = if block.inputs.is_empty() {
                match tokens.as_slice() {
                    [o] => ("", *o),
                    _ => return Err(parse_err(lineno, "constant block row must be a single column")),
                }
            } else {
                match tokens.as_slice() {
                    [c, o] => (*c, *o),
                    _ => return Err(parse_err(lineno, "cube row must be <inputs> <output>")),
                }
            };
            if cube.len() != block.inputs.len() || cube.chars().any(|c| !matches!(c, '0' | '1' | '-')) {
                return Err(parse_err(
                    lineno,
                    format!("cube must be {} characters of 0/1/-", block.inputs.len()),
                ));
            }
            let plane = match out_char {
                "1" => '1',
                "0" => '0',
                other => return Err(parse_err(lineno, format!("output column must be 0 or 1, got {other}"))),
            };
            if block.cubes.is_empty() {
                block.plane = plane;
            } else if block.plane != plane {
                return Err(parse_err(lineno, "mixed output planes in one block"));
            }
            block.cubes.push(cube.to_string());
        }
    }
    if let Some(block) = open.take() {
        blocks.push(block);
    }

    // Resolve signals: primary inputs first, then blocks as their
    // dependencies complete.
    let mut aig = Aig::new(inputs.len());
    let mut resolved: HashMap<String, Lit> = HashMap::new();
    for (i, (lineno, name)) in inputs.iter().enumerate() {
        if resolved.insert(name.clone(), aig.input_lit(i)).is_some() {
            return Err(parse_err(*lineno, format!("duplicate input {name}")));
        }
    }
    let mut by_output: HashMap<&str, usize> = HashMap::new();
    for (b, block) in blocks.iter().enumerate() {
        if resolved.contains_key(&block.output) || by_output.insert(&block.output, b).is_some() {
            return Err(parse_err(block.line, format!("signal {} defined twice", block.output)));
        }
    }
    let mut deg = vec![0usize; blocks.len()];
    let mut users: HashMap<&str, Vec<usize>> = HashMap::new();
    for (b, block) in blocks.iter().enumerate() {
        let mut deps: Vec<&str> = block.inputs.iter().map(String::as_str).collect();
        deps.sort_unstable();
        deps.dedup();
        for dep in deps {
            if resolved.contains_key(dep) {
                continue;
            }
            if !by_output.contains_key(dep) {
                return Err(parse_err(block.line, format!("undefined signal {dep}")));
            }
            deg[b] += 1;
            users.entry(dep).or_default().push(b);
        }
    }
    let mut queue: VecDeque<usize> = (0..blocks.len()).filter(|&b| deg[b] == 0).collect();
    let mut built = 0;
    while let Some(b) = queue.pop_front() {
        let block = &blocks[b];
        let in_lits: Vec<Lit> = block.inputs.iter().map(|n| resolved[n]).collect();
        let mut cube_lits = Vec::with_capacity(block.cubes.len());
        for cube in &block.cubes {
            let lits: Vec<Lit> = cube
                .chars()
                .zip(&in_lits)
                .filter_map(|(c, &l)| match c {
                    '1' => Some(l),
                    '0' => Some(!l),
                    _ => None,
                })
                .collect();
            cube_lits.push(aig.and_many(&lits));
        }
        let f = aig.or_many(&cube_lits);
        let f = if block.plane == '0' { !f } else { f };
        resolved.insert(block.output.clone(), f);
        built += 1;
        for &u in users.get(block.output.as_str()).map_or(&[][..], Vec::as_slice) {
            deg[u] -= 1;
            if deg[u] == 0 {
                queue.push_back(u);
            }
        }
    }
    if built < blocks.len() {
        let stuck = blocks.iter().find(|b| !resolved.contains_key(&b.output)).unwrap();
        return Err(parse_err(stuck.line, format!("combinational cycle through {}", stuck.output)));
    }
    for (lineno, name) in &output_names {
        match resolved.get(name) {
            Some(&l) => aig.push_output(l),
            None => return Err(parse_err(*lineno, format!("undefined output {name}"))),
        }
    }
    Ok(aig)
}
