//! Radial distribution feeder model and AC power flow.
//!
//! The solver is a polar Newton-Raphson. Because the feeder is a tree, the
//! Jacobian has the same 2x2 block pattern as the bus admittance matrix, and
//! eliminating buses leaves-first produces no fill-in. Each iteration is
//! therefore linear in the number of buses.

use std::collections::VecDeque;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// 1-based, contiguous.
    pub id: usize,
    /// kW
    pub base_load_p: f64,
    /// kvar
    pub base_load_q: f64,
    pub kind: BusKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    /// ohm
    pub resistance: f64,
    /// ohm
    pub reactance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    /// Largest allowed power mismatch, per unit.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    /// Per bus (index = id - 1), per unit.
    pub voltage_mag: Vec<f64>,
    /// Per bus, radians.
    pub voltage_ang: Vec<f64>,
    /// kW
    pub total_loss: f64,
    /// Active power drawn from the substation, kW.
    pub slack_injection: f64,
    /// kvar
    pub slack_injection_q: f64,
    pub iterations: usize,
    /// Largest mismatch at the accepted solution, per unit.
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn min_voltage(&self) -> (usize, f64) {
        extreme(&self.voltage_mag, |a, b| a < b)
    }

    pub fn max_voltage(&self) -> (usize, f64) {
        extreme(&self.voltage_mag, |a, b| a > b)
    }
}

/// Returns (bus id, value).
fn extreme(values: &[f64], better: impl Fn(f64, f64) -> bool) -> (usize, f64) {
    let mut best = (1, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if better(v, best.1) {
            best = (i + 1, v);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageViolation {
    pub bus: usize,
    pub interval: usize,
    pub value: f64,
}

/// A validated radial feeder with its per-unit series admittances.
#[derive(Debug, Clone)]
pub struct Feeder {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    base_kv: f64,
    base_mva: f64,
    slack: usize,
    /// Bus indices in breadth-first order from the slack.
    order: Vec<usize>,
    /// Parent bus index and connecting line index, `None` for the slack.
    parent: Vec<Option<(usize, usize)>>,
    /// Per-unit series admittance (g, b) per line.
    admittance: Vec<(f64, f64)>,
    /// Self admittance (G_ii, B_ii) per bus.
    diag: Vec<(f64, f64)>,
    /// (neighbour bus index, line index) per bus.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Feeder {
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>, base_kv: f64, base_mva: f64) -> Result<Self> {
        if !(base_kv > 0.0) || !(base_mva > 0.0) {
            return Err(Error::InvalidNetwork("base kV and MVA must be positive".into()));
        }
        let n = buses.len();
        if n == 0 {
            return Err(Error::InvalidNetwork("feeder has no buses".into()));
        }
        for (i, bus) in buses.iter().enumerate() {
            if bus.id != i + 1 {
                return Err(Error::InvalidNetwork(format!(
                    "bus ids must be contiguous from 1, found {} at position {}",
                    bus.id,
                    i + 1
                )));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        if slacks.len() != 1 {
            return Err(Error::InvalidNetwork(format!(
                "expected exactly one slack bus, found {}",
                slacks.len()
            )));
        }
        let slack = slacks[0];
        if lines.len() + 1 != n {
            return Err(Error::InvalidNetwork(format!(
                "radial feeder with {n} buses needs {} lines, found {}",
                n - 1,
                lines.len()
            )));
        }

        let z_base = base_kv * base_kv / base_mva;
        let mut adjacency = vec![Vec::new(); n];
        let mut admittance = Vec::with_capacity(lines.len());
        let mut diag = vec![(0.0, 0.0); n];
        for (l, line) in lines.iter().enumerate() {
            let (f, t) = (line.from_bus, line.to_bus);
            if f == 0 || t == 0 || f > n || t > n || f == t {
                return Err(Error::InvalidNetwork(format!("line {f}-{t} references unknown buses")));
            }
            if line.resistance < 0.0 {
                return Err(Error::InvalidNetwork(format!("line {f}-{t} has negative resistance")));
            }
            let r = line.resistance / z_base;
            let x = line.reactance / z_base;
            let denom = r * r + x * x;
            if !(denom > 0.0) || !denom.is_finite() {
                return Err(Error::InvalidNetwork(format!("line {f}-{t} has zero impedance")));
            }
            let y = (r / denom, -x / denom);
            admittance.push(y);
            adjacency[f - 1].push((t - 1, l));
            adjacency[t - 1].push((f - 1, l));
            diag[f - 1].0 += y.0;
            diag[f - 1].1 += y.1;
            diag[t - 1].0 += y.0;
            diag[t - 1].1 += y.1;
        }

        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([slack]);
        seen[slack] = true;
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &(j, l) in &adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    parent[j] = Some((i, l));
                    queue.push_back(j);
                }
            }
        }
        if order.len() != n {
            return Err(Error::InvalidNetwork("feeder is not connected".into()));
        }

        Ok(Self {
            buses,
            lines,
            base_kv,
            base_mva,
            slack,
            order,
            parent,
            admittance,
            diag,
            adjacency,
        })
    }

    /// Reads a feeder from CSV with header `from,to,r_ohm,x_ohm,p_kw,q_kvar`.
    /// Load columns attach to the `to` bus; the bus that is never a `to` is
    /// the slack.
    pub fn from_csv_path(path: impl AsRef<Path>, base_kv: f64, base_mva: f64) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("cannot open feeder file: {e}"),
        })?;
        Self::from_csv_reader(file, base_kv, base_mva).map_err(|e| match e {
            Error::Parse { line, reason, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                reason,
            },
            other => other,
        })
    }

    pub fn from_csv_reader(reader: impl Read, base_kv: f64, base_mva: f64) -> Result<Self> {
        const HEADER: [&str; 6] = ["from", "to", "r_ohm", "x_ohm", "p_kw", "q_kvar"];
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: "<feeder>".into(),
            line,
            reason,
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?;
        if header.iter().collect::<Vec<_>>() != HEADER {
            return Err(parse_err(1, format!("expected header `{}`", HEADER.join(","))));
        }

        let mut lines = Vec::new();
        let mut loads: Vec<(usize, f64, f64)> = Vec::new();
        for (k, record) in rdr.records().enumerate() {
            let line_no = k + 2;
            let record = record.map_err(|e| parse_err(line_no, e.to_string()))?;
            let field = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .ok_or_else(|| parse_err(line_no, format!("missing column `{}`", HEADER[i])))?
                    .parse::<f64>()
                    .map_err(|e| parse_err(line_no, format!("column `{}`: {e}", HEADER[i])))
            };
            let from = field(0)?;
            let to = field(1)?;
            if from.fract() != 0.0 || to.fract() != 0.0 || from < 1.0 || to < 1.0 {
                return Err(parse_err(line_no, "bus ids must be positive integers".into()));
            }
            let to = to as usize;
            lines.push(Line {
                from_bus: from as usize,
                to_bus: to,
                resistance: field(2)?,
                reactance: field(3)?,
            });
            loads.push((to, field(4)?, field(5)?));
        }

        let n = lines.len() + 1;
        let mut buses: Vec<Bus> = (1..=n)
            .map(|id| Bus {
                id,
                base_load_p: 0.0,
                base_load_q: 0.0,
                kind: BusKind::Slack,
            })
            .collect();
        for (idx, &(to, p, q)) in loads.iter().enumerate() {
            if to > n {
                return Err(parse_err(idx + 2, format!("bus {to} exceeds bus count {n}")));
            }
            let bus = &mut buses[to - 1];
            if bus.kind == BusKind::Load {
                return Err(parse_err(idx + 2, format!("bus {to} fed by more than one line")));
            }
            bus.kind = BusKind::Load;
            bus.base_load_p = p;
            bus.base_load_q = q;
        }
        Self::new(buses, lines, base_kv, base_mva)
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }

    pub fn base_kv(&self) -> f64 {
        self.base_kv
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    /// Bus id of the substation.
    pub fn slack_id(&self) -> usize {
        self.slack + 1
    }

    /// Parent bus id per bus id (slack maps to `None`).
    pub fn parent_id(&self, bus_id: usize) -> Option<usize> {
        self.parent[bus_id - 1].map(|(p, _)| p + 1)
    }

    /// Bus ids in breadth-first order from the slack.
    pub fn bfs_order(&self) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().map(|i| i + 1)
    }

    /// Nominal loads from the feeder data, kW and kvar per bus.
    pub fn nominal_loads(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.buses.iter().map(|b| b.base_load_p).collect(),
            self.buses.iter().map(|b| b.base_load_q).collect(),
        )
    }
}

type Block = [[f64; 2]; 2];

fn mat_vec(m: &Block, v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

fn mat_mul(a: &Block, b: &Block) -> Block {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn invert(m: &Block) -> Option<Block> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m.iter().flatten().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    if !(det.abs() > 1e-14 * scale * scale) {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// Solves the AC power flow for a set of net bus loads.
///
/// `net_load_kw` / `net_load_kvar` are per bus (index = id - 1): positive
/// values consume, negative values inject. The slack bus entry is ignored.
/// Starts flat (1.0 pu, 0 rad) and stops once max |mismatch| < `tol`.
pub fn solve_power_flow(
    feeder: &Feeder,
    net_load_kw: &[f64],
    net_load_kvar: &[f64],
    opts: PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    let n = feeder.len();
    if net_load_kw.len() != n || net_load_kvar.len() != n {
        return Err(Error::InvalidNetwork(format!(
            "expected {n} bus loads, got {} / {}",
            net_load_kw.len(),
            net_load_kvar.len()
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidNetwork("tolerance must be positive".into()));
    }
    let to_pu = 1.0 / (1000.0 * feeder.base_mva);
    let p_spec: Vec<f64> = net_load_kw.iter().map(|p| -p * to_pu).collect();
    let q_spec: Vec<f64> = net_load_kvar.iter().map(|q| -q * to_pu).collect();

    let slack = feeder.slack;
    let mut vm = vec![1.0_f64; n];
    let mut va = vec![0.0_f64; n];
    let mut p_calc = vec![0.0; n];
    let mut q_calc = vec![0.0; n];
    let mut diag_blocks = vec![[[0.0; 2]; 2]; n];
    // Coupling to the parent: upper = d(child eqs)/d(parent vars),
    // lower = d(parent eqs)/d(child vars).
    let mut upper = vec![[[0.0; 2]; 2]; n];
    let mut lower = vec![[[0.0; 2]; 2]; n];
    let mut rhs = vec![[0.0; 2]; n];
    let mut inv_diag = vec![[[0.0; 2]; 2]; n];
    let mut step = vec![[0.0; 2]; n];

    let mut iter = 0;
    loop {
        // Injected power at every bus.
        for i in 0..n {
            let (gii, bii) = feeder.diag[i];
            let vi = vm[i];
            let mut p = gii * vi * vi;
            let mut q = -bii * vi * vi;
            for &(j, l) in &feeder.adjacency[i] {
                let (g, b) = feeder.admittance[l];
                let (gij, bij) = (-g, -b);
                let (s, c) = (va[i] - va[j]).sin_cos();
                p += vi * vm[j] * (gij * c + bij * s);
                q += vi * vm[j] * (gij * s - bij * c);
            }
            p_calc[i] = p;
            q_calc[i] = q;
        }

        let mut max_mismatch = 0.0_f64;
        for i in 0..n {
            if i == slack {
                continue;
            }
            rhs[i] = [p_spec[i] - p_calc[i], q_spec[i] - q_calc[i]];
            max_mismatch = max_mismatch.max(rhs[i][0].abs()).max(rhs[i][1].abs());
        }
        if !max_mismatch.is_finite() {
            return Err(Error::NonConvergence {
                iterations: iter,
                residual: max_mismatch,
            });
        }
        if max_mismatch < opts.tol {
            let mut loss = 0.0;
            for (l, line) in feeder.lines.iter().enumerate() {
                let (i, j) = (line.from_bus - 1, line.to_bus - 1);
                let dre = vm[i] * va[i].cos() - vm[j] * va[j].cos();
                let dim = vm[i] * va[i].sin() - vm[j] * va[j].sin();
                loss += feeder.admittance[l].0 * (dre * dre + dim * dim);
            }
            let to_kw = 1000.0 * feeder.base_mva;
            return Ok(PowerFlowSolution {
                voltage_mag: vm,
                voltage_ang: va,
                total_loss: loss * to_kw,
                slack_injection: p_calc[slack] * to_kw,
                slack_injection_q: q_calc[slack] * to_kw,
                iterations: iter,
                max_mismatch,
            });
        }
        if iter >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations: iter,
                residual: max_mismatch,
            });
        }

        // Jacobian blocks, ordered (theta, |V|) for columns and (P, Q) for rows.
        for i in 0..n {
            if i == slack {
                continue;
            }
            let (gii, bii) = feeder.diag[i];
            let vi = vm[i];
            let (p, q) = (p_calc[i], q_calc[i]);
            diag_blocks[i] = [
                [-q - bii * vi * vi, p / vi + gii * vi],
                [p - gii * vi * vi, q / vi - bii * vi],
            ];
            let Some((par, l)) = feeder.parent[i] else {
                continue;
            };
            let (g, b) = feeder.admittance[l];
            let (gij, bij) = (-g, -b);
            let vp = vm[par];
            let (s, c) = (va[i] - va[par]).sin_cos();
            // d(P_i, Q_i)/d(theta_p, V_p)
            upper[i] = [
                [vi * vp * (gij * s - bij * c), vi * (gij * c + bij * s)],
                [-vi * vp * (gij * c + bij * s), vi * (gij * s - bij * c)],
            ];
            // d(P_p, Q_p)/d(theta_i, V_i); angle difference reverses sign.
            let (s, c) = (-s, c);
            lower[i] = [
                [vp * vi * (gij * s - bij * c), vp * (gij * c + bij * s)],
                [-vp * vi * (gij * c + bij * s), vp * (gij * s - bij * c)],
            ];
        }

        // Leaves-first elimination.
        for &k in feeder.order.iter().rev() {
            if k == slack {
                continue;
            }
            let inv = invert(&diag_blocks[k]).ok_or(Error::SingularJacobian { bus: k + 1 })?;
            inv_diag[k] = inv;
            let Some((par, _)) = feeder.parent[k] else {
                continue;
            };
            if par == slack {
                continue;
            }
            let m = mat_mul(&lower[k], &inv);
            let mu = mat_mul(&m, &upper[k]);
            let mr = mat_vec(&m, rhs[k]);
            let d = &mut diag_blocks[par];
            for r in 0..2 {
                for c in 0..2 {
                    d[r][c] -= mu[r][c];
                }
                rhs[par][r] -= mr[r];
            }
        }
        // Root-first back substitution.
        for &k in &feeder.order {
            if k == slack {
                continue;
            }
            let (par, _) = feeder.parent[k].expect("non-slack bus has a parent");
            let mut r = rhs[k];
            if par != slack {
                let coupled = mat_vec(&upper[k], step[par]);
                r[0] -= coupled[0];
                r[1] -= coupled[1];
            }
            step[k] = mat_vec(&inv_diag[k], r);
        }
        for k in 0..n {
            if k != slack {
                va[k] += step[k][0];
                vm[k] += step[k][1];
            }
        }
        iter += 1;
    }
}

/// Every bus/interval whose magnitude lies outside `[v_min, v_max]`.
pub fn check_voltage_limits(
    solutions: &[PowerFlowSolution],
    v_min: f64,
    v_max: f64,
) -> Vec<VoltageViolation> {
    let mut out = Vec::new();
    for (interval, sol) in solutions.iter().enumerate() {
        for (i, &v) in sol.voltage_mag.iter().enumerate() {
            if v < v_min || v > v_max {
                out.push(VoltageViolation {
                    bus: i + 1,
                    interval,
                    value: v,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus(r_pu: f64, x_pu: f64) -> Feeder {
        let z_base = 12.66 * 12.66;
        let buses = vec![
            Bus {
                id: 1,
                base_load_p: 0.0,
                base_load_q: 0.0,
                kind: BusKind::Slack,
            },
            Bus {
                id: 2,
                base_load_p: 100.0,
                base_load_q: 0.0,
                kind: BusKind::Load,
            },
        ];
        let lines = vec![Line {
            from_bus: 1,
            to_bus: 2,
            resistance: r_pu * z_base,
            reactance: x_pu * z_base,
        }];
        Feeder::new(buses, lines, 12.66, 1.0).unwrap()
    }

    #[test]
    fn no_load_is_flat() {
        let f = two_bus(0.1, 0.05);
        let sol = solve_power_flow(&f, &[0.0, 0.0], &[0.0, 0.0], Default::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.voltage_mag.iter().all(|&v| v == 1.0));
        assert_eq!(sol.total_loss, 0.0);
    }

    #[test]
    fn resistive_two_bus_matches_quadratic() {
        let f = two_bus(0.1, 0.0);
        let sol = solve_power_flow(&f, &[0.0, 100.0], &[0.0, 0.0], Default::default()).unwrap();
        let expected = (1.0 + (1.0_f64 - 4.0 * 0.01).sqrt()) / 2.0;
        assert!((sol.voltage_mag[1] - expected).abs() < 1e-9);
        assert!((expected - 0.989898).abs() < 1e-6);
        assert!(sol.voltage_ang[1].abs() < 1e-12);
        let balance = sol.slack_injection - 100.0 - sol.total_loss;
        assert!(balance.abs() < 1e-5);
    }

    #[test]
    fn voltage_limit_check() {
        let flat = PowerFlowSolution {
            voltage_mag: vec![1.0; 4],
            voltage_ang: vec![0.0; 4],
            total_loss: 0.0,
            slack_injection: 0.0,
            slack_injection_q: 0.0,
            iterations: 0,
            max_mismatch: 0.0,
        };
        assert!(check_voltage_limits(std::slice::from_ref(&flat), 0.95, 1.05).is_empty());
        let mut low = flat;
        low.voltage_mag[2] = 0.91;
        let v = check_voltage_limits(&[low], 0.95, 1.05);
        assert_eq!(
            v,
            vec![VoltageViolation {
                bus: 3,
                interval: 0,
                value: 0.91
            }]
        );
    }

    #[test]
    fn excessive_load_does_not_converge() {
        let f = two_bus(0.1, 0.0);
        // Beyond the nose of the PV curve (P*R > 1/4).
        let err = solve_power_flow(&f, &[0.0, 5000.0], &[0.0, 0.0], Default::default()).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. } | Error::SingularJacobian { .. }));
    }

    #[test]
    fn rejects_meshed_or_disconnected() {
        let bus = |id, kind| Bus {
            id,
            base_load_p: 0.0,
            base_load_q: 0.0,
            kind,
        };
        let line = |f, t| Line {
            from_bus: f,
            to_bus: t,
            resistance: 1.0,
            reactance: 1.0,
        };
        let buses = vec![bus(1, BusKind::Slack), bus(2, BusKind::Load), bus(3, BusKind::Load)];
        // Two lines but one is a duplicate, bus 3 unreachable.
        let err = Feeder::new(buses.clone(), vec![line(1, 2), line(2, 1)], 12.66, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidNetwork(_)));
        let err = Feeder::new(buses, vec![line(1, 2)], 12.66, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidNetwork(_)));
    }

    #[test]
    fn csv_header_is_checked() {
        let data = "from,to,r,x,p,q\n1,2,0.1,0.1,10,5\n";
        let err = Feeder::from_csv_reader(data.as_bytes(), 12.66, 1.0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let data = "from,to,r_ohm,x_ohm,p_kw,q_kvar\n1,2,0.1,0.1,10,5\n2,3,0.2,0.1,20,abc\n";
        let err = Feeder::from_csv_reader(data.as_bytes(), 12.66, 1.0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }
}
