//! Straight-line Boolean programs.
//!
//! A portable rendering of a logic stage that any backend can transcribe
//! mechanically: single-assignment three-address ops over bit variables.
//! Text form, one op per line with `%` comments:
//!
//! ```text
//! % stage 0
//! .inputs 3
//! .outputs 1
//! t0 = NOT x0
//! t1 = AND t0 x2
//! t2 = XOR x1 t1
//! y0 = t2
//! ```
//!
//! Operands are `x<j>` (inputs) or `t<k>` (temporaries, defined before
//! use); `y<i> = <operand>` lines bind the outputs. `CONST 0|1` takes no
//! operand. The built-in evaluator is the executable reference for the
//! format.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::bits::{self, PatternSet};
use crate::multilevel::{Aig, Lit, SIM_BLOCK};

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("pattern width {found} does not match program input count {expected}")]
    WidthMismatch { expected: usize, found: usize },
}

fn parse_err(line: usize, message: impl Into<String>) -> ProgramError {
    ProgramError::Parse { line, message: message.into() }
}

/// One op. Variables are global slots: inputs occupy `0..num_inputs`,
/// each op defines the next slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProgOp {
    Const(bool),
    Not(u32),
    And(u32, u32),
    Or(u32, u32),
    Xor(u32, u32),
}

#[derive(Clone, Debug)]
pub struct BooleanProgram {
    num_inputs: usize,
    ops: Vec<ProgOp>,
    outputs: Vec<u32>,
}

impl BooleanProgram {
    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn ops(&self) -> &[ProgOp] {
        &self.ops
    }

    fn num_vars(&self) -> usize {
        self.num_inputs + self.ops.len()
    }

    /// Evaluate one input pattern.
    pub fn eval(&self, inputs: &[bool]) -> Vec<bool> {
        assert_eq!(inputs.len(), self.num_inputs, "input width mismatch");
        let mut val = vec![false; self.num_vars()];
        val[..self.num_inputs].copy_from_slice(inputs);
        for (k, op) in self.ops.iter().enumerate() {
            val[self.num_inputs + k] = match *op {
                ProgOp::Const(v) => v,
                ProgOp::Not(a) => !val[a as usize],
                ProgOp::And(a, b) => val[a as usize] && val[b as usize],
                ProgOp::Or(a, b) => val[a as usize] || val[b as usize],
                ProgOp::Xor(a, b) => val[a as usize] ^ val[b as usize],
            };
        }
        self.outputs.iter().map(|&v| val[v as usize]).collect()
    }

    /// Bit-parallel evaluation over packed rows, 64 patterns per word, in
    /// blocks like [`Aig::simulate`].
    pub fn eval_patterns(&self, patterns: &PatternSet) -> Result<PatternSet, ProgramError> {
        if patterns.arity() != self.num_inputs {
            return Err(ProgramError::WidthMismatch {
                expected: self.num_inputs,
                found: patterns.arity(),
            });
        }
        let mut out = PatternSet::zeros(self.outputs.len(), patterns.len());
        let mut vals: Vec<u64> = Vec::new();
        for start in (0..patterns.len()).step_by(SIM_BLOCK) {
            let count = SIM_BLOCK.min(patterns.len() - start);
            let bw = count.div_ceil(64);
            vals.clear();
            vals.resize(self.num_vars() * bw, 0);
            for r in 0..count {
                let row = patterns.row(start + r);
                for j in 0..self.num_inputs {
                    if bits::get_bit(row, j) {
                        vals[j * bw + r / 64] |= 1 << (r % 64);
                    }
                }
            }
            for (k, op) in self.ops.iter().enumerate() {
                let dst = (self.num_inputs + k) * bw;
                for w in 0..bw {
                    vals[dst + w] = match *op {
                        ProgOp::Const(v) => {
                            if v {
                                u64::MAX
                            } else {
                                0
                            }
                        }
                        ProgOp::Not(a) => !vals[a as usize * bw + w],
                        ProgOp::And(a, b) => vals[a as usize * bw + w] & vals[b as usize * bw + w],
                        ProgOp::Or(a, b) => vals[a as usize * bw + w] | vals[b as usize * bw + w],
                        ProgOp::Xor(a, b) => vals[a as usize * bw + w] ^ vals[b as usize * bw + w],
                    };
                }
            }
            for (k, &v) in self.outputs.iter().enumerate() {
                for r in 0..count {
                    let bit = vals[v as usize * bw + r / 64] >> (r % 64) & 1 == 1;
                    out.set_bit(start + r, k, bit);
                }
            }
        }
        Ok(out)
    }

    fn operand_name(&self, v: u32) -> String {
        let v = v as usize;
        if v < self.num_inputs {
            format!("x{v}")
        } else {
            format!("t{}", v - self.num_inputs)
        }
    }

    pub fn write(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, ".inputs {}", self.num_inputs)?;
        writeln!(w, ".outputs {}", self.outputs.len())?;
        for (k, op) in self.ops.iter().enumerate() {
            let dst = format!("t{k}");
            match *op {
                ProgOp::Const(v) => writeln!(w, "{dst} = CONST {}", v as u8)?,
                ProgOp::Not(a) => writeln!(w, "{dst} = NOT {}", self.operand_name(a))?,
                ProgOp::And(a, b) => {
                    writeln!(w, "{dst} = AND {} {}", self.operand_name(a), self.operand_name(b))?
                }
                ProgOp::Or(a, b) => {
                    writeln!(w, "{dst} = OR {} {}", self.operand_name(a), self.operand_name(b))?
                }
                ProgOp::Xor(a, b) => {
                    writeln!(w, "{dst} = XOR {} {}", self.operand_name(a), self.operand_name(b))?
                }
            }
        }
        for (i, &v) in self.outputs.iter().enumerate() {
            writeln!(w, "y{i} = {}", self.operand_name(v))?;
        }
        Ok(())
    }

    pub fn read(r: impl BufRead) -> Result<BooleanProgram, ProgramError> {
        let mut num_inputs: Option<usize> = None;
        let mut num_outputs: Option<usize> = None;
        let mut ops: Vec<ProgOp> = Vec::new();
        let mut outputs: Vec<Option<u32>> = Vec::new();
        let mut temps = 0usize;
        for (idx, line) in r.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let text = match line.find('%') {
                Some(cut) => &line[..cut],
                None => &line[..],
            };
            let tokens: Vec<&str> = text.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            match tokens.as_slice() {
                [".inputs", n] => {
                    num_inputs = Some(
                        n.parse().map_err(|_| parse_err(lineno, "bad .inputs count"))?,
                    );
                }
                [".outputs", n] => {
                    let n: usize =
                        n.parse().map_err(|_| parse_err(lineno, "bad .outputs count"))?;
                    num_outputs = Some(n);
                    outputs = vec![None; n];
                }
                [dst, "=", rest @ ..] => {
                    let inputs = num_inputs
                        .ok_or_else(|| parse_err(lineno, ".inputs must precede ops"))?;
                    let operand = |name: &str| -> Result<u32, ProgramError> {
                        let (kind, num) = name.split_at(1);
                        let k: usize = num
                            .parse()
                            .map_err(|_| parse_err(lineno, format!("bad operand {name}")))?;
                        let slot = match kind {
                            "x" if k < inputs => k,
                            "t" if k < temps => inputs + k,
                            "x" | "t" => {
                                return Err(parse_err(lineno, format!("{name} used before definition")))
                            }
                            _ => return Err(parse_err(lineno, format!("bad operand {name}"))),
                        };
                        Ok(slot as u32)
                    };
                    if let Some(i) = dst.strip_prefix('y') {
                        let i: usize =
                            i.parse().map_err(|_| parse_err(lineno, "bad output name"))?;
                        let n = num_outputs
                            .ok_or_else(|| parse_err(lineno, ".outputs must precede bindings"))?;
                        if i >= n {
                            return Err(parse_err(lineno, format!("output y{i} out of range")));
                        }
                        let [src] = rest else {
                            return Err(parse_err(lineno, "output binding takes one operand"));
                        };
                        if outputs[i].replace(operand(src)?).is_some() {
                            return Err(parse_err(lineno, format!("output y{i} bound twice")));
                        }
                        continue;
                    }
                    let expect = format!("t{temps}");
                    if *dst != expect {
                        return Err(parse_err(
                            lineno,
                            format!("expected destination {expect}, got {dst}"),
                        ));
                    }
                    let op = match rest {
                        ["CONST", v @ ("0" | "1")] => ProgOp::Const(*v == "1"),
                        ["NOT", a] => ProgOp::Not(operand(a)?),
                        ["AND", a, b] => ProgOp::And(operand(a)?, operand(b)?),
                        ["OR", a, b] => ProgOp::Or(operand(a)?, operand(b)?),
                        ["XOR", a, b] => ProgOp::Xor(operand(a)?, operand(b)?),
                        _ => return Err(parse_err(lineno, "unrecognized op")),
                    };
                    ops.push(op);
                    temps += 1;
                }
                _ => return Err(parse_err(lineno, "unrecognized line")),
            }
        }
        let num_inputs = num_inputs.ok_or_else(|| parse_err(0, "missing .inputs"))?;
        let outputs = outputs
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| parse_err(0, format!("output y{i} never bound"))))
            .collect::<Result<Vec<u32>, _>>()?;
        Ok(BooleanProgram { num_inputs, ops, outputs })
    }
}

/// Linearize an AIG into a program: one op per reachable AND node plus one
/// NOT per distinct complemented edge, in topological order.
pub fn emit_program(aig: &Aig) -> BooleanProgram {
    let seen = aig.reachable();
    let mut prog = BooleanProgram {
        num_inputs: aig.num_inputs(),
        ops: Vec::new(),
        outputs: Vec::new(),
    };
    // Slot for each node taken positively; complements memoized on demand.
    let mut pos = vec![u32::MAX; aig.total()];
    let mut neg = vec![u32::MAX; aig.total()];
    for i in 0..aig.num_inputs() {
        pos[1 + i] = i as u32;
    }
    fn slot(
        prog: &mut BooleanProgram,
        pos: &mut [u32],
        neg: &mut [u32],
        l: Lit,
    ) -> u32 {
        let n = l.node();
        if !l.is_complement() {
            debug_assert_ne!(pos[n], u32::MAX, "operand defined before use");
            return pos[n];
        }
        if neg[n] == u32::MAX {
            if n == 0 {
                prog.ops.push(ProgOp::Const(true));
            } else {
                let a = pos[n];
                debug_assert_ne!(a, u32::MAX, "operand defined before use");
                prog.ops.push(ProgOp::Not(a));
            }
            neg[n] = (prog.num_inputs + prog.ops.len() - 1) as u32;
        }
        neg[n]
    }
    // Constant false, only if some fanin or output reads it positively.
    let needs_false = aig.outputs().iter().any(|&l| l == Lit::FALSE)
        || (aig.first_and()..aig.total()).any(|n| {
            let (a, b) = aig.fanins(n);
            seen[n] && (a == Lit::FALSE || b == Lit::FALSE)
        });
    if needs_false {
        prog.ops.push(ProgOp::Const(false));
        pos[0] = (prog.num_inputs + prog.ops.len() - 1) as u32;
    }
    for n in aig.first_and()..aig.total() {
        if !seen[n] {
            continue;
        }
        let (a, b) = aig.fanins(n);
        let sa = slot(&mut prog, &mut pos, &mut neg, a);
        let sb = slot(&mut prog, &mut pos, &mut neg, b);
        prog.ops.push(ProgOp::And(sa, sb));
        pos[n] = (prog.num_inputs + prog.ops.len() - 1) as u32;
    }
    for k in 0..aig.outputs().len() {
        let l = aig.outputs()[k];
        let s = slot(&mut prog, &mut pos, &mut neg, l);
        prog.outputs.push(s);
    }
    prog
}
