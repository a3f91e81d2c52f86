//! Exact ground states by dynamic programming over the Chimera structure.
//!
//! Cell-columns are swept along the longer grid dimension. The DP state is
//! the sweep-crossing half of the current column (the spins carrying
//! inter-column couplers, `k·height` bits); the other half forms a chain
//! inside the column and is minimized out per state by a 2^k-alphabet
//! chain DP. Transitions are per-bit min-plus updates, so one column costs
//! `O(2^B·(B + height·4^k))`. Dead vertices shrink the work: dead state
//! bits are pinned and dead chain spins drop out of the chain alphabet.
//!
//! Optimal-configuration counts propagate alongside values with saturating
//! arithmetic (only for ±J instances at moderate state widths, where f64
//! energy ties are exact).

use std::collections::HashMap;

use crate::chimera::{energy, ChimeraGraph, Instance, SpinConfig};

use super::{Degeneracy, ExactError, ExactResult};

#[derive(Debug, Clone)]
pub struct DpLimits {
    /// Maximum interface width in state bits (`k · min(r, c)`).
    pub max_state_bits: u32,
    /// Cap on the memory kept for witness backtracking.
    pub max_table_bytes: usize,
    /// Count degeneracy when the state width allows it.
    pub count_degeneracy: bool,
}

impl Default for DpLimits {
    fn default() -> Self {
        DpLimits { max_state_bits: 24, max_table_bytes: 2 << 30, count_degeneracy: true }
    }
}

/// Degeneracy counting stops above this state width (table cost doubles).
const COUNT_BITS_LIMIT: u32 = 20;

struct Plan<'a> {
    g: &'a ChimeraGraph,
    k: usize,
    lines: usize,
    height: usize,
    transpose: bool,
    edge_j: HashMap<(u32, u32), f64>,
    fields: &'a [f64],
}

impl<'a> Plan<'a> {
    fn new(instance: &'a Instance) -> Plan<'a> {
        let g = &instance.graph;
        let transpose = g.rows > g.cols;
        let (lines, height) = if transpose {
            (g.rows as usize, g.cols as usize)
        } else {
            (g.cols as usize, g.rows as usize)
        };
        let mut edge_j = HashMap::with_capacity(g.n_edges());
        for (idx, &(a, b)) in g.edges.iter().enumerate() {
            edge_j.insert((a, b), instance.couplings[idx]);
        }
        Plan { g, k: g.half as usize, lines, height, transpose, edge_j, fields: &instance.fields }
    }

    /// Ideal id of the state spin (sweep-crossing half) at (line, cell, m).
    fn state_id(&self, line: usize, cell: usize, m: usize) -> u32 {
        if self.transpose {
            self.g.encode(line as u32, cell as u32, 0, m as u32)
        } else {
            self.g.encode(cell as u32, line as u32, 1, m as u32)
        }
    }

    /// Ideal id of the chain spin (in-column half) at (line, cell, m).
    fn chain_id(&self, line: usize, cell: usize, m: usize) -> u32 {
        if self.transpose {
            self.g.encode(line as u32, cell as u32, 1, m as u32)
        } else {
            self.g.encode(cell as u32, line as u32, 0, m as u32)
        }
    }

    fn alive(&self, id: u32) -> bool {
        self.g.active_index(id).is_some()
    }

    fn coupling(&self, a: u32, b: u32) -> f64 {
        let key = (a.min(b), a.max(b));
        self.edge_j.get(&key).copied().unwrap_or(0.0)
    }

    fn field(&self, id: u32) -> f64 {
        match self.g.active_index(id) {
            Some(i) => self.fields[i as usize],
            None => 0.0,
        }
    }

    /// Mask of alive state bits for a line (bit `cell·k + m`).
    fn valid_mask(&self, line: usize) -> usize {
        let mut mask = 0usize;
        for cell in 0..self.height {
            for m in 0..self.k {
                if self.alive(self.state_id(line, cell, m)) {
                    mask |= 1 << (cell * self.k + m);
                }
            }
        }
        mask
    }
}

fn spin(bits: usize, b: usize) -> f64 {
    if bits >> b & 1 == 1 {
        -1.0
    } else {
        1.0
    }
}

/// Per-line chain data: cell terms A[v][h] (intra-cell energy plus fields,
/// +inf for v patterns using dead chain spins) and chain transfers W[v][v'].
struct LineChain {
    a: Vec<Vec<f64>>,       // [cell][v * 2^k + h]
    w: Vec<Vec<f64>>,       // [cell][v * 2^k + v'] for cell -> cell+1
    valid_v: Vec<Vec<bool>>, // [cell][v]
}

fn line_chain(plan: &Plan, line: usize) -> LineChain {
    let k = plan.k;
    let vk = 1 << k;
    let mut a = Vec::with_capacity(plan.height);
    let mut valid_v = Vec::with_capacity(plan.height);
    for cell in 0..plan.height {
        let mut tab = vec![f64::INFINITY; vk * vk];
        let mut valid = vec![false; vk];
        let mut dead_v_mask = 0usize;
        for m in 0..k {
            if !plan.alive(plan.chain_id(line, cell, m)) {
                dead_v_mask |= 1 << m;
            }
        }
        for v in 0..vk {
            if v & dead_v_mask != 0 {
                continue;
            }
            valid[v] = true;
            for h in 0..vk {
                let mut e = 0.0;
                for mv in 0..k {
                    let vid = plan.chain_id(line, cell, mv);
                    if !plan.alive(vid) {
                        continue;
                    }
                    e += plan.field(vid) * spin(v, mv);
                    for mh in 0..k {
                        let hid = plan.state_id(line, cell, mh);
                        if plan.alive(hid) {
                            e += plan.coupling(vid, hid) * spin(v, mv) * spin(h, mh);
                        }
                    }
                }
                for mh in 0..k {
                    let hid = plan.state_id(line, cell, mh);
                    if plan.alive(hid) {
                        e += plan.field(hid) * spin(h, mh);
                    }
                }
                tab[v * vk + h] = e;
            }
        }
        a.push(tab);
        valid_v.push(valid);
    }
    let mut w = Vec::new();
    for cell in 0..plan.height.saturating_sub(1) {
        let mut tab = vec![0.0; vk * vk];
        for m in 0..k {
            let ida = plan.chain_id(line, cell, m);
            let idb = plan.chain_id(line, cell + 1, m);
            if plan.alive(ida) && plan.alive(idb) {
                let j = plan.coupling(ida, idb);
                if j != 0.0 {
                    for (v, row) in tab.chunks_mut(vk).enumerate() {
                        for (vp, val) in row.iter_mut().enumerate() {
                            *val += j * spin(v, m) * spin(vp, m);
                        }
                    }
                }
            }
        }
        w.push(tab);
    }
    LineChain { a, w, valid_v }
}

/// Minimum over chain spins for one state `h_state`, with optional optimal
/// count and optional argmin recording.
fn chain_solve(
    plan: &Plan,
    lc: &LineChain,
    h_state: usize,
    mut counts: Option<&mut u64>,
    mut argmin: Option<&mut Vec<usize>>,
) -> f64 {
    let k = plan.k;
    let vk = 1 << k;
    let hmask = vk - 1;
    let mut cur = vec![f64::INFINITY; vk];
    let mut cur_cnt = vec![0u64; vk];
    let mut back: Vec<Vec<usize>> = Vec::new();
    let h0 = h_state & hmask;
    for v in 0..vk {
        if lc.valid_v[0][v] {
            cur[v] = lc.a[0][v * vk + h0];
            cur_cnt[v] = 1;
        }
    }
    for cell in 1..plan.height {
        let h = (h_state >> (cell * k)) & hmask;
        let mut nxt = vec![f64::INFINITY; vk];
        let mut nxt_cnt = vec![0u64; vk];
        let mut bp = vec![0usize; vk];
        let wt = &lc.w[cell - 1];
        for vp in 0..vk {
            if !lc.valid_v[cell][vp] {
                continue;
            }
            let add = lc.a[cell][vp * vk + h];
            if add.is_infinite() {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut cnt = 0u64;
            let mut arg = 0usize;
            for v in 0..vk {
                let cand = cur[v] + wt[v * vk + vp];
                if cand < best {
                    best = cand;
                    cnt = cur_cnt[v];
                    arg = v;
                } else if cand == best && cand.is_finite() {
                    cnt = cnt.saturating_add(cur_cnt[v]);
                }
            }
            nxt[vp] = best + add;
            nxt_cnt[vp] = cnt;
            bp[vp] = arg;
        }
        cur = nxt;
        cur_cnt = nxt_cnt;
        back.push(bp);
    }
    let mut best = f64::INFINITY;
    let mut cnt = 0u64;
    let mut arg = 0usize;
    for v in 0..vk {
        if cur[v] < best {
            best = cur[v];
            cnt = cur_cnt[v];
            arg = v;
        } else if cur[v] == best && best.is_finite() {
            cnt = cnt.saturating_add(cur_cnt[v]);
        }
    }
    if let Some(c) = counts.as_deref_mut() {
        *c = cnt;
    }
    if let Some(vs) = argmin.as_deref_mut() {
        // Walk backpointers from the last cell. Note the recorded argmin
        // follows the first-minimum convention of the forward pass.
        vs.clear();
        vs.resize(plan.height, 0);
        let mut v = arg;
        for cell in (1..plan.height).rev() {
            vs[cell] = v;
            v = back[cell - 1][v];
        }
        vs[0] = v;
    }
    best
}

/// Exact ground state by the column-sweep DP. Errors when the interface
/// exceeds `limits.max_state_bits` or the backtrack tables would exceed
/// `limits.max_table_bytes`.
pub fn column_dp(instance: &Instance, limits: &DpLimits) -> Result<ExactResult, ExactError> {
    if instance.n() == 0 {
        return Err(ExactError::Empty);
    }
    let plan = Plan::new(instance);
    let bits = (plan.k * plan.height) as u32;
    if bits > limits.max_state_bits {
        return Err(ExactError::InterfaceTooLarge { bits, limit: limits.max_state_bits });
    }
    let size = 1usize << bits;
    let table_bytes = (plan.lines + 1) * size * 8;
    if table_bytes > limits.max_table_bytes {
        return Err(ExactError::InterfaceTooLarge { bits, limit: limits.max_state_bits });
    }
    let counting = limits.count_degeneracy && bits <= COUNT_BITS_LIMIT && instance.is_pm1();

    let mut val = vec![f64::INFINITY; size];
    let mut cnt = vec![0u64; if counting { size } else { 0 }];
    let mut stored: Vec<Vec<f64>> = Vec::with_capacity(plan.lines);
    let mut chains: Vec<LineChain> = Vec::with_capacity(plan.lines);

    for line in 0..plan.lines {
        let lc = line_chain(&plan, line);
        let valid = plan.valid_mask(line);
        if line == 0 {
            let mut s = 0usize;
            loop {
                let mut c = 0u64;
                let g = chain_solve(&plan, &lc, s, counting.then_some(&mut c), None);
                val[s] = g;
                if counting {
                    cnt[s] = c;
                }
                if s == valid {
                    break;
                }
                s = (s | !valid).wrapping_add(1) & valid;
            }
        } else {
            // Per-bit min-plus over the cross couplers into this line.
            for cell in 0..plan.height {
                for m in 0..plan.k {
                    let b = cell * plan.k + m;
                    let bit = 1usize << b;
                    let old_id = plan.state_id(line - 1, cell, m);
                    let new_id = plan.state_id(line, cell, m);
                    let j = if plan.alive(old_id) && plan.alive(new_id) {
                        plan.coupling(old_id, new_id)
                    } else {
                        0.0
                    };
                    let new_dead = !plan.alive(new_id);
                    for s in 0..size {
                        if s & bit != 0 {
                            continue;
                        }
                        let s1 = s | bit;
                        let a = val[s];
                        let b_ = val[s1];
                        let (na, nb);
                        let (mut ca, mut cb) = (0u64, 0u64);
                        {
                            let c0 = a + j;
                            let c1 = b_ - j;
                            na = c0.min(c1);
                            if counting && na.is_finite() {
                                if c0 == na {
                                    ca = cnt[s];
                                }
                                if c1 == na {
                                    ca = ca.saturating_add(cnt[s1]);
                                }
                            }
                            let d0 = a - j;
                            let d1 = b_ + j;
                            nb = if new_dead { f64::INFINITY } else { d0.min(d1) };
                            if counting && nb.is_finite() {
                                if d0 == nb {
                                    cb = cnt[s];
                                }
                                if d1 == nb {
                                    cb = cb.saturating_add(cnt[s1]);
                                }
                            }
                        }
                        val[s] = na;
                        val[s1] = nb;
                        if counting {
                            cnt[s] = ca;
                            cnt[s1] = cb;
                        }
                    }
                }
            }
            let mut s = 0usize;
            loop {
                if val[s].is_finite() {
                    let mut c = 0u64;
                    let g = chain_solve(&plan, &lc, s, counting.then_some(&mut c), None);
                    val[s] += g;
                    if counting {
                        cnt[s] = cnt[s].saturating_mul(c);
                    }
                }
                if s == valid {
                    break;
                }
                s = (s | !valid).wrapping_add(1) & valid;
            }
        }
        stored.push(val.clone());
        chains.push(lc);
    }

    // Optimum and degeneracy.
    let mut e0 = f64::INFINITY;
    let mut best_state = 0usize;
    for (s, &v) in val.iter().enumerate() {
        if v < e0 {
            e0 = v;
            best_state = s;
        }
    }
    let degeneracy = if counting {
        let mut total = 0u64;
        for (s, &v) in val.iter().enumerate() {
            if v == e0 {
                total = total.saturating_add(cnt[s]);
            }
        }
        Degeneracy::Counted(total)
    } else {
        Degeneracy::NotComputed
    };

    // Backtrack line states right to left.
    let mut h_states = vec![0usize; plan.lines];
    h_states[plan.lines - 1] = best_state;
    for line in (1..plan.lines).rev() {
        let h_next = h_states[line];
        let prev = &stored[line - 1];
        let mut best = f64::INFINITY;
        let mut arg = 0usize;
        for (s, &v) in prev.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let mut cross = 0.0;
            for cell in 0..plan.height {
                for m in 0..plan.k {
                    let b = cell * plan.k + m;
                    let old_id = plan.state_id(line - 1, cell, m);
                    let new_id = plan.state_id(line, cell, m);
                    if plan.alive(old_id) && plan.alive(new_id) {
                        cross += plan.coupling(old_id, new_id) * spin(s, b) * spin(h_next, b);
                    }
                }
            }
            if v + cross < best {
                best = v + cross;
                arg = s;
            }
        }
        h_states[line - 1] = arg;
    }

    // Recover chain spins per line and assemble the witness.
    let mut spins = vec![1i8; instance.n()];
    for line in 0..plan.lines {
        let mut vbits = Vec::new();
        chain_solve(&plan, &chains[line], h_states[line], None, Some(&mut vbits));
        for cell in 0..plan.height {
            for m in 0..plan.k {
                let sid = plan.state_id(line, cell, m);
                if let Some(ai) = plan.g.active_index(sid) {
                    spins[ai as usize] = if h_states[line] >> (cell * plan.k + m) & 1 == 1 {
                        -1
                    } else {
                        1
                    };
                }
                let cid = plan.chain_id(line, cell, m);
                if let Some(ai) = plan.g.active_index(cid) {
                    spins[ai as usize] = if vbits[cell] >> m & 1 == 1 { -1 } else { 1 };
                }
            }
        }
    }
    let witness = SpinConfig { spins };
    debug_assert_eq!(energy(instance, &witness).unwrap(), e0);
    Ok(ExactResult { e0, degeneracy, witness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chimera::{build_chimera, generate_instance};
    use crate::exact::brute_force;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;
    use std::sync::Arc;

    #[test]
    fn agrees_with_brute_force_small_shapes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let shapes = [(1, 1, 2), (1, 2, 2), (2, 1, 2), (2, 2, 2), (1, 3, 2), (3, 1, 2), (2, 2, 4)];
        for &(r, c, k) in &shapes {
            for _ in 0..8 {
                let seed: u64 = rng.gen();
                let g = Arc::new(build_chimera(r, c, k, &BTreeSet::new()).unwrap());
                let inst = generate_instance(g, seed);
                let b = brute_force(&inst).unwrap();
                let d = column_dp(&inst, &DpLimits::default()).unwrap();
                assert_eq!(b.e0, d.e0, "shape {r}x{c}x{k} seed {seed}");
                assert_eq!(energy(&inst, &d.witness).unwrap(), d.e0);
                if let (Degeneracy::Counted(cb), Degeneracy::Counted(cd)) =
                    (b.degeneracy, d.degeneracy)
                {
                    assert_eq!(cb, cd, "degeneracy {r}x{c}x{k} seed {seed}");
                }
            }
        }
    }

    #[test]
    fn agrees_with_brute_force_with_dead_vertices() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for trial in 0..10 {
            let mut dead = BTreeSet::new();
            while dead.len() < 3 {
                dead.insert(rng.gen_range(0..24u32));
            }
            let g = Arc::new(build_chimera(3, 1, 4, &dead).unwrap());
            let inst = generate_instance(g, trial);
            let b = brute_force(&inst).unwrap();
            let d = column_dp(&inst, &DpLimits::default()).unwrap();
            assert_eq!(b.e0, d.e0, "trial {trial} dead {dead:?}");
        }
    }

    #[test]
    fn agrees_with_fields() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = Arc::new(build_chimera(2, 2, 2, &BTreeSet::new()).unwrap());
        for trial in 0..6 {
            let mut inst = generate_instance(Arc::clone(&g), trial);
            for h in inst.fields.iter_mut() {
                *h = rng.gen_range(-1.0..1.0);
            }
            let b = brute_force(&inst).unwrap();
            let d = column_dp(&inst, &DpLimits::default()).unwrap();
            assert!((b.e0 - d.e0).abs() < 1e-9, "trial {trial}: {} vs {}", b.e0, d.e0);
        }
    }

    #[test]
    fn c4_ferromagnet_saturates_all_edges() {
        let g = Arc::new(build_chimera(4, 4, 4, &BTreeSet::new()).unwrap());
        let n_edges = g.n_edges();
        let mut inst = generate_instance(g, 0);
        inst.couplings = vec![-1.0; n_edges];
        let d = column_dp(&inst, &DpLimits::default()).unwrap();
        assert_eq!(d.e0, -(n_edges as f64));
        assert_eq!(d.degeneracy, Degeneracy::Counted(2));
    }

    #[test]
    fn interface_limit_enforced() {
        let g = Arc::new(build_chimera(8, 8, 4, &BTreeSet::new()).unwrap());
        let inst = generate_instance(g, 0);
        match column_dp(&inst, &DpLimits::default()) {
            Err(ExactError::InterfaceTooLarge { bits: 32, limit: 24 }) => {}
            other => panic!("expected interface error, got {other:?}"),
        }
    }
}

#[cfg(test)]
mod timing {
    use super::*;
    use crate::chimera::{build_chimera, generate_instance};
    use crate::exact::brute_force;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    #[test]
    #[ignore = "timing probe"]
    fn c2_oracle_pair_timing() {
        let g = Arc::new(build_chimera(2, 2, 4, &BTreeSet::new()).unwrap());
        let t0 = std::time::Instant::now();
        let n = 20;
        for seed in 0..n {
            let inst = generate_instance(Arc::clone(&g), seed);
            let b = brute_force(&inst).unwrap();
            let d = column_dp(&inst, &DpLimits::default()).unwrap();
            assert_eq!(b.e0, d.e0);
        }
        let dt = t0.elapsed().as_secs_f64();
        println!("c2 pair: {:.3}s each, {:.1}s per 500", dt / n as f64, dt / n as f64 * 500.0);
    }
}
