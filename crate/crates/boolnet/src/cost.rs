//! Computation and memory-traffic accounting.
//!
//! Each multiply-accumulate against a full-precision activation touches
//! memory four times: it reads the activation, the weight and the previous
//! partial sum, and writes the updated partial sum. When the activation is
//! binary only one extra bit is read in place of the full activation word.
//! A layer realized as combinational logic touches memory only at its
//! boundary: the input and output bits of each invocation.
//!
//! ALM counts (adaptive logic modules, the FPGA area unit) are external
//! measurements fed in by the caller; the toolchain's native complexity
//! proxies are AND-node count and depth of the optimized graphs. Converting
//! a measured circuit to "MAC equivalents" divides its per-invocation ALM
//! count by the ALMs of one MAC unit and rounds down, then scales by the
//! invocation count; published hardware figures for reused circuits may
//! round in a different order, so memory totals are the exact comparison
//! point. Fractional byte counts stay exact rationals until display.

use num_rational::Rational64;
use num_traits::Zero;
use std::fmt::Write as _;

/// ALMs consumed by one 32-bit multiply-accumulate unit.
pub const ALM_PER_MAC_32: u64 = 541;
/// ALMs consumed by one 16-bit multiply-accumulate unit.
pub const ALM_PER_MAC_16: u64 = 195;

/// Dimensions that determine a layer's MAC count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CostLayer {
    Dense { in_units: u64, out_units: u64 },
    /// `positions` is the number of output pixels (H_out × W_out).
    Conv { in_channels: u64, out_channels: u64, kernel: u64, positions: u64 },
    /// Pooling and activations perform no multiplies.
    Free,
}

/// Multiply-accumulate operations needed by one arithmetic realization of
/// the layer.
pub fn mac_count(layer: &CostLayer) -> u64 {
    match *layer {
        CostLayer::Dense { in_units, out_units } => in_units * out_units,
        CostLayer::Conv { in_channels, out_channels, kernel, positions } => {
            kernel * kernel * in_channels * out_channels * positions
        }
        CostLayer::Free => 0,
    }
}

/// Bytes moved by `macs` multiply-accumulates with `weight_bytes`-wide
/// weights (2 or 4). Full-precision activations move four words per MAC;
/// binary activations move three words plus one bit.
pub fn mac_layer_memory(macs: u64, weight_bytes: u64, binary_activations: bool) -> Rational64 {
    assert!(weight_bytes == 2 || weight_bytes == 4, "weights are 16- or 32-bit");
    let macs = macs as i64;
    let wb = weight_bytes as i64;
    if binary_activations {
        Rational64::from_integer(macs * 3 * wb) + Rational64::new(macs, 8)
    } else {
        Rational64::from_integer(macs * 4 * wb)
    }
}

/// Bytes moved by a logic-realized layer: each invocation reads its input
/// bits and writes its output bits.
pub fn logic_layer_memory(in_bits: u64, out_bits: u64, invocations: u64) -> Rational64 {
    Rational64::new((invocations * (in_bits + out_bits)) as i64, 8)
}

/// MAC units whose area a circuit of `alm_count` ALMs matches, rounded
/// down.
pub fn mac_equivalent(alm_count: u64, alm_per_mac: u64) -> u64 {
    assert!(alm_per_mac > 0, "ALM-per-MAC divisor must be positive");
    alm_count / alm_per_mac
}

/// How a layer is realized, with what the realization needs for cost
/// accounting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Realization {
    /// Arithmetic on a MAC unit; `weight_bytes` 4 for float32, 2 for
    /// float16.
    Mac { weight_bytes: u64, binary_activations: bool },
    /// Combinational logic; `alm` is the measured ALM count of one
    /// invocation's circuit, when available.
    Logic { invocations: u64, in_bits: u64, out_bits: u64, alm: Option<u64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCost {
    pub name: String,
    pub layer: CostLayer,
    pub realization: Realization,
    /// AND-node count of the optimized graph, for logic rows built by the
    /// pipeline.
    pub and_nodes: Option<u64>,
    /// AND-level depth of the optimized graph.
    pub depth: Option<u64>,
}

impl LayerCost {
    pub fn mac_row(name: &str, layer: CostLayer, weight_bytes: u64, binary: bool) -> LayerCost {
        LayerCost {
            name: name.into(),
            layer,
            realization: Realization::Mac { weight_bytes, binary_activations: binary },
            and_nodes: None,
            depth: None,
        }
    }

    pub fn logic_row(
        name: &str,
        invocations: u64,
        in_bits: u64,
        out_bits: u64,
        alm: Option<u64>,
    ) -> LayerCost {
        LayerCost {
            name: name.into(),
            layer: CostLayer::Free,
            realization: Realization::Logic { invocations, in_bits, out_bits, alm },
            and_nodes: None,
            depth: None,
        }
    }

    /// MAC count (arithmetic rows) or MAC equivalent (logic rows with a
    /// measurement); `None` when no measurement is available.
    pub fn macs(&self, alm_per_mac: u64) -> Option<u64> {
        match &self.realization {
            Realization::Mac { .. } => Some(mac_count(&self.layer)),
            Realization::Logic { invocations, alm, .. } => {
                alm.map(|a| mac_equivalent(a, alm_per_mac) * invocations)
            }
        }
    }

    pub fn memory_bytes(&self) -> Rational64 {
        match &self.realization {
            Realization::Mac { weight_bytes, binary_activations } => {
                mac_layer_memory(mac_count(&self.layer), *weight_bytes, *binary_activations)
            }
            Realization::Logic { invocations, in_bits, out_bits, .. } => {
                logic_layer_memory(*in_bits, *out_bits, *invocations)
            }
        }
    }
}

/// A network's per-layer costs plus the ALM-per-MAC divisor used to convert
/// measured circuits.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkCost {
    pub net: String,
    pub alm_per_mac: u64,
    pub rows: Vec<LayerCost>,
}

impl NetworkCost {
    pub fn new(net: &str) -> NetworkCost {
        NetworkCost { net: net.into(), alm_per_mac: ALM_PER_MAC_32, rows: Vec::new() }
    }

    /// Records a measured per-invocation ALM count for the named logic row.
    /// Returns false if no logic row has that name.
    pub fn apply_alm(&mut self, name: &str, alm_count: u64) -> bool {
        for row in &mut self.rows {
            if row.name == name {
                if let Realization::Logic { alm, .. } = &mut row.realization {
                    *alm = Some(alm_count);
                    return true;
                }
            }
        }
        false
    }

    /// Total MACs (None if any logic row lacks a measurement) and total
    /// bytes moved.
    pub fn totals(&self) -> (Option<u64>, Rational64) {
        let mut macs = Some(0u64);
        let mut bytes = Rational64::zero();
        for row in &self.rows {
            macs = match (macs, row.macs(self.alm_per_mac)) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            };
            bytes += row.memory_bytes();
        }
        (macs, bytes)
    }

    /// Aligned text table with a totals line.
    pub fn render_table(&self) -> String {
        let mut lines: Vec<[String; 6]> = vec![[
            "layer".into(),
            "realization".into(),
            "MACs".into(),
            "memory (bytes)".into(),
            "AND nodes".into(),
            "depth".into(),
        ]];
        for row in &self.rows {
            lines.push([
                row.name.clone(),
                realization_label(&row.realization),
                row.macs(self.alm_per_mac).map_or_else(|| "n/a".into(), group_digits),
                format_bytes_grouped(row.memory_bytes()),
                row.and_nodes.map_or_else(|| "-".into(), group_digits),
                row.depth.map_or_else(|| "-".into(), group_digits),
            ]);
        }
        let (macs, bytes) = self.totals();
        lines.push([
            "total".into(),
            String::new(),
            macs.map_or_else(|| "n/a".into(), group_digits),
            format_bytes_grouped(bytes),
            String::new(),
            String::new(),
        ]);
        let mut width = [0usize; 6];
        for line in &lines {
            for (w, cell) in width.iter_mut().zip(line) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        for line in &lines {
            let mut text = String::new();
            for (w, cell) in width.iter().zip(line) {
                let _ = write!(text, "{cell:<w$}  ");
            }
            out.push_str(text.trim_end());
            out.push('\n');
        }
        out
    }

    /// CSV with one row per layer plus a totals row.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("layer,realization,macs,memory_bytes,and_nodes,depth\n");
        let blank = String::new;
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&row.name),
                realization_label(&row.realization),
                row.macs(self.alm_per_mac).map_or_else(blank, |m| m.to_string()),
                format_bytes(row.memory_bytes()),
                row.and_nodes.map_or_else(blank, |n| n.to_string()),
                row.depth.map_or_else(blank, |d| d.to_string()),
            );
        }
        let (macs, bytes) = self.totals();
        let _ = writeln!(
            out,
            "total,,{},{},,",
            macs.map_or_else(blank, |m| m.to_string()),
            format_bytes(bytes),
        );
        out
    }
}

fn realization_label(r: &Realization) -> String {
    match r {
        Realization::Mac { weight_bytes: 4, .. } => "float32 MAC".into(),
        Realization::Mac { .. } => "float16 MAC".into(),
        Realization::Logic { .. } => "logic".into(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.into()
    }
}

/// Thousands-grouped integer for table display.
fn group_digits(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Exact decimal rendering: byte counts are always multiples of 1/8, so
/// three fractional digits suffice.
pub fn format_bytes(b: Rational64) -> String {
    let trunc = b.trunc().to_integer();
    let frac = b.fract();
    if frac.is_zero() {
        return trunc.to_string();
    }
    let milli = (frac * Rational64::from_integer(1000)).to_integer();
    let text = format!("{trunc}.{:03}", milli.abs());
    text.trim_end_matches('0').to_string()
}

/// [`format_bytes`] with a thousands-grouped integer part, for tables.
fn format_bytes_grouped(b: Rational64) -> String {
    let plain = format_bytes(b);
    match plain.split_once('.') {
        Some((int, frac)) => format!("{}.{frac}", group_digits(int.parse().unwrap())),
        None => group_digits(plain.parse().unwrap()),
    }
}

/// Kilobytes (1 KB = 1024 bytes) as a float for display.
pub fn kilobytes(b: Rational64) -> f64 {
    *b.numer() as f64 / (*b.denom() as f64 * 1024.0)
}

/// Cost tables for the four reference networks, with measured ALM counts
/// baked in where a published measurement exists. Names: `net1.1b`,
/// `net1.2`, `net2.1b`, `net2.2`.
pub fn preset(name: &str) -> Option<NetworkCost> {
    let dense = |i, o| CostLayer::Dense { in_units: i, out_units: o };
    let conv = |ic, oc, pos| CostLayer::Conv {
        in_channels: ic,
        out_channels: oc,
        kernel: 3,
        positions: pos,
    };
    let mut cost = NetworkCost::new(name);
    match name {
        // 784-100-100-100-10 with binary activations; the two inner layers
        // are one fused logic block (wires: 100+100 in, 100+100 out),
        // measured at 112,173 ALMs.
        "net1.1b" => {
            cost.rows = vec![
                LayerCost::mac_row("FC1", dense(784, 100), 4, false),
                LayerCost::logic_row("FC2 + FC3", 1, 200, 200, Some(112_173)),
                LayerCost::mac_row("FC4", dense(100, 10), 4, true),
            ];
        }
        // The same stack with full-precision activations throughout.
        "net1.2" => {
            cost.rows = vec![
                LayerCost::mac_row("FC1", dense(784, 100), 4, false),
                LayerCost::mac_row("FC2", dense(100, 100), 4, false),
                LayerCost::mac_row("FC3", dense(100, 100), 4, false),
                LayerCost::mac_row("FC4", dense(100, 10), 4, false),
            ];
        }
        // Convolutional stack with the second convolution as logic: one
        // 90-bit-in/20-bit-out patch circuit (15,990 ALMs) swept over the
        // 11×11 output positions.
        "net2.1b" => {
            cost.rows = vec![
                LayerCost::mac_row("conv1", conv(1, 10, 26 * 26), 4, false),
                LayerCost::logic_row("conv2", 121, 90, 20, Some(15_990)),
                LayerCost::mac_row("FC", dense(500, 10), 4, true),
            ];
        }
        // Full-precision convolutional reference.
        "net2.2" => {
            cost.rows = vec![
                LayerCost::mac_row("conv1", conv(1, 10, 26 * 26), 4, false),
                LayerCost::mac_row("conv2", conv(10, 20, 11 * 11), 4, false),
                LayerCost::mac_row("FC", dense(500, 10), 4, false),
            ];
        }
        _ => return None,
    }
    Some(cost)
}
