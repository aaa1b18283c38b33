//! Exact branch-and-bound for small 0/1 linear programs.
//!
//! `maximize | minimize c.x  s.t.  A x <= b,  x in {0,1}^n`
//!
//! The program is split into independent components (variables linked through
//! shared constraints). Each component is searched depth-first, one branch
//! before zero, with variables ordered by decreasing objective coefficient.
//! Nodes are bounded by a Lagrangian relaxation: disjoint "at most one" rows
//! stay in the subproblem, every other row is priced with multipliers obtained
//! by subgradient ascent at the root. Constraint propagation over the minimum
//! attainable row activity fixes variables that can no longer move.
//!
//! New incumbents are accepted only when strictly better (by [`TOLERANCE`]), so
//! among equal optima the first one met in search order is returned. The result
//! is deterministic for a given program.

use crate::error::{Error, Result};
use crate::model::TOLERANCE;

pub const DEFAULT_NODE_LIMIT: u64 = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

/// `Σ terms.1 · x[terms.0] <= bound`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub terms: Vec<(usize, f64)>,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryProgram {
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub sense: Sense,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimality {
    Proven,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Chosen variable indices, ascending.
    pub chosen: Vec<usize>,
    pub objective_value: f64,
    pub optimality: Optimality,
    pub nodes: u64,
}

impl Selection {
    pub fn contains(&self, var: usize) -> bool {
        self.chosen.binary_search(&var).is_ok()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub node_limit: u64,
    pub subgradient_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            node_limit: DEFAULT_NODE_LIMIT,
            subgradient_iterations: 200,
        }
    }
}

impl BinaryProgram {
    pub fn new(objective: Vec<f64>, sense: Sense) -> Self {
        BinaryProgram {
            n_vars: objective.len(),
            objective,
            sense,
            constraints: Vec::new(),
        }
    }

    pub fn maximize(objective: Vec<f64>) -> Self {
        Self::new(objective, Sense::Maximize)
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        Self::new(objective, Sense::Minimize)
    }

    /// Adds a sparse row. Zero coefficients are dropped and repeated indices merged.
    pub fn add_constraint(&mut self, terms: Vec<(usize, f64)>, bound: f64) {
        let mut terms = terms;
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (v, a) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += a,
                _ => merged.push((v, a)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        self.constraints.push(Constraint { terms: merged, bound });
    }

    pub fn add_dense_constraint(&mut self, coefficients: &[f64], bound: f64) {
        let terms = coefficients
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(i, a)| (i, *a))
            .collect();
        self.add_constraint(terms, bound);
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.n_vars {
            return Err(Error::InvalidProgram(format!(
                "objective has {} entries for {} variables",
                self.objective.len(),
                self.n_vars
            )));
        }
        if let Some(i) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidProgram(format!("objective entry {i} is not finite")));
        }
        for (k, row) in self.constraints.iter().enumerate() {
            if !row.bound.is_finite() {
                return Err(Error::InvalidProgram(format!("bound of row {k} is not finite")));
            }
            for &(v, a) in &row.terms {
                if v >= self.n_vars {
                    return Err(Error::InvalidProgram(format!(
                        "row {k} references variable {v} of {}",
                        self.n_vars
                    )));
                }
                if !a.is_finite() {
                    return Err(Error::InvalidProgram(format!("row {k} has a non-finite coefficient")));
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, chosen: &[usize]) -> f64 {
        chosen.iter().map(|&v| self.objective[v]).sum()
    }

    pub fn is_feasible(&self, chosen: &[usize]) -> bool {
        let mut x = vec![false; self.n_vars];
        for &v in chosen {
            x[v] = true;
        }
        self.constraints.iter().all(|row| {
            let lhs: f64 = row.terms.iter().filter(|t| x[t.0]).map(|t| t.1).sum();
            lhs <= row.bound + TOLERANCE
        })
    }
}

pub fn solve(program: &BinaryProgram) -> Result<Selection> {
    solve_with(program, &SolverOptions::default())
}

pub fn solve_with(program: &BinaryProgram, options: &SolverOptions) -> Result<Selection> {
    solve_from(program, options, None)
}

/// Like [`solve_with`], seeded with a known feasible selection. The start is
/// ignored when infeasible; it wins ties against solutions found later.
pub fn solve_from(program: &BinaryProgram, options: &SolverOptions, start: Option<&[usize]>) -> Result<Selection> {
    program.validate()?;
    let start: Option<std::collections::HashSet<usize>> = start
        .filter(|s| program.is_feasible(s))
        .map(|s| s.iter().copied().collect());
    let n = program.n_vars;
    let sign = match program.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    let c: Vec<f64> = program.objective.iter().map(|v| sign * v).collect();

    // Rows without variables only matter for feasibility.
    for row in &program.constraints {
        if row.terms.is_empty() && row.bound < -TOLERANCE {
            return Err(Error::Infeasible);
        }
    }

    let mut uf = UnionFind::new(n);
    for row in &program.constraints {
        if let Some(&(first, _)) = row.terms.first() {
            for &(v, _) in &row.terms[1..] {
                uf.union(first, v);
            }
        }
    }
    let mut component_of = vec![usize::MAX; n];
    let mut components: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for v in 0..n {
        let root = uf.find(v);
        if component_of[root] == usize::MAX {
            component_of[root] = components.len();
            components.push((Vec::new(), Vec::new()));
        }
        components[component_of[root]].0.push(v);
    }
    for (k, row) in program.constraints.iter().enumerate() {
        if let Some(&(first, _)) = row.terms.first() {
            components[component_of[uf.find(first)]].1.push(k);
        }
    }

    let mut chosen = Vec::new();
    let mut nodes = 0u64;
    for (vars, rows) in &components {
        if rows.is_empty() {
            let v = vars[0];
            if c[v] > TOLERANCE {
                chosen.push(v);
            }
            continue;
        }
        let mut search = Search::build(program, &c, vars, rows, options, nodes);
        if let Some(start) = &start {
            search.seed(vars.iter().copied().filter(|v| start.contains(v)).collect());
        }
        let best = search.run()?;
        nodes = search.nodes;
        chosen.extend(best);
    }
    chosen.sort_unstable();
    let objective_value = program.evaluate(&chosen);
    Ok(Selection {
        chosen,
        objective_value,
        optimality: Optimality::Proven,
        nodes,
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

const FREE: i8 = -1;

struct Row {
    terms: Vec<(usize, f64)>,
    bound: f64,
    max_abs: f64,
}

/// Search state for one component, with variables renumbered in branching order.
struct Search {
    global: Vec<usize>,
    c: Vec<f64>,
    rows: Vec<Row>,
    cols: Vec<Vec<(usize, f64)>>,
    /// Lagrangian reduced costs at the root multipliers.
    d: Vec<f64>,
    dual_const: f64,
    group_of: Vec<usize>,
    groups: Vec<Vec<usize>>,

    val: Vec<i8>,
    lhs_fixed: Vec<f64>,
    min_lhs: Vec<f64>,
    violated: usize,
    obj_fixed: f64,
    trail: Vec<usize>,
    queue: Vec<usize>,
    in_queue: Vec<bool>,

    best: f64,
    best_set: Option<Vec<usize>>,
    nodes: u64,
    node_limit: u64,
}

const NO_GROUP: usize = usize::MAX;

impl Search {
    fn build(
        program: &BinaryProgram,
        c_max: &[f64],
        vars: &[usize],
        row_ids: &[usize],
        options: &SolverOptions,
        nodes_so_far: u64,
    ) -> Search {
        // Ties go to the variables that do most to satisfy covering rows.
        let mut help = std::collections::HashMap::with_capacity(vars.len());
        for &k in row_ids {
            for &(v, a) in &program.constraints[k].terms {
                if a < 0.0 {
                    *help.entry(v).or_insert(0.0) -= a;
                }
            }
        }
        let help_of = |v: usize| help.get(&v).copied().unwrap_or(0.0);
        let mut order: Vec<usize> = vars.to_vec();
        order.sort_by(|&a, &b| {
            c_max[b]
                .total_cmp(&c_max[a])
                .then(help_of(b).total_cmp(&help_of(a)))
                .then(a.cmp(&b))
        });
        let mut local = std::collections::HashMap::with_capacity(order.len());
        for (i, &v) in order.iter().enumerate() {
            local.insert(v, i);
        }
        let m = order.len();
        let c: Vec<f64> = order.iter().map(|&v| c_max[v]).collect();
        let mut rows = Vec::with_capacity(row_ids.len());
        let mut cols = vec![Vec::new(); m];
        for &k in row_ids {
            let src = &program.constraints[k];
            let mut terms: Vec<(usize, f64)> = src.terms.iter().map(|&(v, a)| (local[&v], a)).collect();
            terms.sort_by_key(|t| t.0);
            let r = rows.len();
            for &(v, a) in &terms {
                cols[v].push((r, a));
            }
            let max_abs = terms.iter().map(|t| t.1.abs()).fold(0.0, f64::max);
            rows.push(Row {
                terms,
                bound: src.bound,
                max_abs,
            });
        }

        // Disjoint at-most-one rows stay inside the Lagrangian subproblem.
        let mut group_of = vec![NO_GROUP; m];
        let mut groups = Vec::new();
        let mut dualized = vec![true; rows.len()];
        for (r, row) in rows.iter().enumerate() {
            let is_gub = row.terms.len() > 1
                && (row.bound - 1.0).abs() < TOLERANCE
                && row.terms.iter().all(|t| (t.1 - 1.0).abs() < TOLERANCE)
                && row.terms.iter().all(|t| group_of[t.0] == NO_GROUP);
            if is_gub {
                let g = groups.len();
                for &(v, _) in &row.terms {
                    group_of[v] = g;
                }
                groups.push(row.terms.iter().map(|t| t.0).collect::<Vec<_>>());
                dualized[r] = false;
            }
        }

        let mut s = Search {
            global: order,
            c,
            rows,
            cols,
            d: Vec::new(),
            dual_const: 0.0,
            group_of,
            groups,
            val: vec![FREE; m],
            lhs_fixed: Vec::new(),
            min_lhs: Vec::new(),
            violated: 0,
            obj_fixed: 0.0,
            trail: Vec::new(),
            queue: Vec::new(),
            in_queue: Vec::new(),
            best: f64::NEG_INFINITY,
            best_set: None,
            nodes: nodes_so_far,
            node_limit: options.node_limit,
        };
        s.lhs_fixed = vec![0.0; s.rows.len()];
        s.min_lhs = s
            .rows
            .iter()
            .map(|r| r.terms.iter().filter(|t| t.1 < 0.0).map(|t| t.1).sum())
            .collect();
        s.violated = s.rows.iter().filter(|r| r.bound < -TOLERANCE).count();
        s.in_queue = vec![false; s.rows.len()];
        s.fit_multipliers(&dualized, options.subgradient_iterations);
        s
    }

    fn seed(&mut self, chosen: Vec<usize>) {
        let value = chosen
            .iter()
            .map(|v| {
                let local = self.global.iter().position(|g| g == v).expect("component variable");
                self.c[local]
            })
            .sum();
        self.best = value;
        self.best_set = Some(chosen);
    }

    /// Lagrangian subproblem value and maximizer for multipliers `lambda`.
    fn subproblem(&self, d: &[f64], x: &mut [bool]) -> f64 {
        x.iter_mut().for_each(|v| *v = false);
        let mut total = 0.0;
        for group in &self.groups {
            let mut best = (0.0, usize::MAX);
            for &v in group {
                if d[v] > best.0 {
                    best = (d[v], v);
                }
            }
            if best.1 != usize::MAX {
                x[best.1] = true;
                total += best.0;
            }
        }
        for v in 0..d.len() {
            if self.group_of[v] == NO_GROUP && d[v] > 0.0 {
                x[v] = true;
                total += d[v];
            }
        }
        total
    }

    fn reduced_costs(&self, lambda: &[f64], d: &mut [f64]) -> f64 {
        d.copy_from_slice(&self.c);
        let mut constant = 0.0;
        for (r, row) in self.rows.iter().enumerate() {
            if lambda[r] == 0.0 {
                continue;
            }
            constant += lambda[r] * row.bound;
            for &(v, a) in &row.terms {
                d[v] -= lambda[r] * a;
            }
        }
        constant
    }

    fn fit_multipliers(&mut self, dualized: &[bool], iterations: usize) {
        let m = self.c.len();
        let n_rows = self.rows.len();
        let mut lambda = vec![0.0; n_rows];
        let mut d = vec![0.0; m];
        let mut x = vec![false; m];
        let target = self.greedy_value();

        let mut best_lambda = lambda.clone();
        let mut best_bound = f64::INFINITY;
        let mut theta = 2.0;
        let mut stall = 0;
        if dualized.iter().any(|&b| b) {
            for _ in 0..iterations {
                let constant = self.reduced_costs(&lambda, &mut d);
                let bound = constant + self.subproblem(&d, &mut x);
                if bound < best_bound - 1e-12 {
                    best_bound = bound;
                    best_lambda.copy_from_slice(&lambda);
                    stall = 0;
                } else {
                    stall += 1;
                    if stall >= 20 {
                        theta /= 2.0;
                        stall = 0;
                    }
                }
                let mut g = vec![0.0; n_rows];
                let mut norm = 0.0;
                for (r, row) in self.rows.iter().enumerate() {
                    if !dualized[r] {
                        continue;
                    }
                    let lhs: f64 = row.terms.iter().filter(|t| x[t.0]).map(|t| t.1).sum();
                    let gr = row.bound - lhs;
                    // Projected subgradient: a slack row at zero multiplier cannot move.
                    if gr > 0.0 && lambda[r] == 0.0 {
                        continue;
                    }
                    g[r] = gr;
                    norm += gr * gr;
                }
                if norm < 1e-12 || theta < 1e-6 {
                    break;
                }
                let gap = (bound - target).max(1e-3 * bound.abs().max(1.0));
                let step = theta * gap / norm;
                for r in 0..n_rows {
                    if dualized[r] {
                        lambda[r] = (lambda[r] - step * g[r]).max(0.0);
                    }
                }
            }
        }
        self.dual_const = self.reduced_costs(&best_lambda, &mut d);
        self.d = d;
    }

    /// Value of a greedy feasible completion, used as the subgradient target.
    fn greedy_value(&self) -> f64 {
        let mut lhs = vec![0.0; self.rows.len()];
        let mut total = 0.0;
        for v in 0..self.c.len() {
            if self.c[v] <= 0.0 {
                continue;
            }
            let fits = self.cols[v]
                .iter()
                .all(|&(r, a)| lhs[r] + a <= self.rows[r].bound + TOLERANCE);
            if fits {
                for &(r, a) in &self.cols[v] {
                    lhs[r] += a;
                }
                total += self.c[v];
            }
        }
        total
    }

    fn run(&mut self) -> Result<Vec<usize>> {
        for r in 0..self.rows.len() {
            if !self.in_queue[r] {
                self.in_queue[r] = true;
                self.queue.push(r);
            }
        }
        if self.violated_minimum() || !self.presolve() || !self.propagate() {
            return Err(Error::Infeasible);
        }
        self.dfs(0)?;
        match self.best_set.take() {
            Some(set) => Ok(set),
            None => Err(Error::Infeasible),
        }
    }

    fn violated_minimum(&self) -> bool {
        self.rows
            .iter()
            .zip(&self.min_lhs)
            .any(|(row, &lhs)| lhs > row.bound + TOLERANCE)
    }

    /// Fixes variables that can never help: non-positive objective with only
    /// non-negative coefficients, and duplicate columns that cannot coexist.
    fn presolve(&mut self) -> bool {
        let m = self.c.len();
        let mut fix_zero = Vec::new();
        for v in 0..m {
            if self.c[v] <= 0.0 && self.cols[v].iter().all(|t| t.1 >= 0.0) {
                fix_zero.push(v);
            }
        }
        let mut by_column: std::collections::HashMap<Vec<(usize, u64)>, usize> = std::collections::HashMap::new();
        for v in 0..m {
            if self.cols[v].iter().any(|t| t.1 < 0.0) {
                continue;
            }
            let key: Vec<(usize, u64)> = self.cols[v].iter().map(|&(r, a)| (r, a.to_bits())).collect();
            match by_column.get(&key) {
                Some(&keeper) => {
                    // Variables are in branching order, so `keeper` has the larger objective.
                    let exclusive = self.cols[v].iter().any(|&(r, a)| {
                        let row = &self.rows[r];
                        row.terms.iter().all(|t| t.1 >= 0.0) && 2.0 * a > row.bound + TOLERANCE
                    });
                    if exclusive && self.c[keeper] >= self.c[v] {
                        fix_zero.push(v);
                    }
                }
                None => {
                    by_column.insert(key, v);
                }
            }
        }
        fix_zero.sort_unstable();
        fix_zero.dedup();
        for v in fix_zero {
            if self.val[v] == FREE {
                self.fix(v, 0);
            }
        }
        true
    }

    fn fix(&mut self, v: usize, value: i8) {
        debug_assert_eq!(self.val[v], FREE);
        self.val[v] = value;
        self.trail.push(v);
        if value == 1 {
            self.obj_fixed += self.c[v];
        }
        for i in 0..self.cols[v].len() {
            let (r, a) = self.cols[v][i];
            let bound = self.rows[r].bound;
            if value == 1 {
                let was = self.lhs_fixed[r] > bound + TOLERANCE;
                self.lhs_fixed[r] += a;
                let now = self.lhs_fixed[r] > bound + TOLERANCE;
                match (was, now) {
                    (false, true) => self.violated += 1,
                    (true, false) => self.violated -= 1,
                    _ => {}
                }
                if a > 0.0 {
                    self.min_lhs[r] += a;
                }
            } else if a < 0.0 {
                self.min_lhs[r] -= a;
            }
            if !self.in_queue[r] {
                self.in_queue[r] = true;
                self.queue.push(r);
            }
        }
    }

    fn unfix(&mut self, v: usize) {
        let value = self.val[v];
        self.val[v] = FREE;
        if value == 1 {
            self.obj_fixed -= self.c[v];
        }
        for i in 0..self.cols[v].len() {
            let (r, a) = self.cols[v][i];
            let bound = self.rows[r].bound;
            if value == 1 {
                let was = self.lhs_fixed[r] > bound + TOLERANCE;
                self.lhs_fixed[r] -= a;
                let now = self.lhs_fixed[r] > bound + TOLERANCE;
                match (was, now) {
                    (false, true) => self.violated += 1,
                    (true, false) => self.violated -= 1,
                    _ => {}
                }
                if a > 0.0 {
                    self.min_lhs[r] -= a;
                }
            } else if a < 0.0 {
                self.min_lhs[r] += a;
            }
        }
    }

    fn undo(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let v = self.trail.pop().expect("trail above mark");
            self.unfix(v);
        }
    }

    fn clear_queue(&mut self) {
        for r in self.queue.drain(..) {
            self.in_queue[r] = false;
        }
    }

    /// Drains the row queue, fixing implied variables. False on a conflict.
    fn propagate(&mut self) -> bool {
        while let Some(r) = self.queue.pop() {
            self.in_queue[r] = false;
            let bound = self.rows[r].bound;
            let slack = bound - self.min_lhs[r];
            if slack < -TOLERANCE {
                self.clear_queue();
                return false;
            }
            if slack + TOLERANCE >= self.rows[r].max_abs {
                continue;
            }
            for i in 0..self.rows[r].terms.len() {
                let (v, a) = self.rows[r].terms[i];
                if self.val[v] != FREE {
                    continue;
                }
                let slack = bound - self.min_lhs[r];
                if a.abs() > slack + TOLERANCE {
                    self.fix(v, if a > 0.0 { 0 } else { 1 });
                }
            }
        }
        true
    }

    fn bound(&self) -> f64 {
        let mut lagr = self.dual_const;
        let mut plain = 0.0;
        for group in &self.groups {
            let mut best_d = 0.0f64;
            let mut best_c = 0.0f64;
            let mut fixed = None;
            for &v in group {
                match self.val[v] {
                    1 => {
                        fixed = Some(v);
                        break;
                    }
                    FREE => {
                        best_d = best_d.max(self.d[v]);
                        best_c = best_c.max(self.c[v]);
                    }
                    _ => {}
                }
            }
            match fixed {
                Some(v) => {
                    lagr += self.d[v];
                    plain += self.c[v];
                }
                None => {
                    lagr += best_d;
                    plain += best_c;
                }
            }
        }
        for v in 0..self.c.len() {
            if self.group_of[v] != NO_GROUP {
                continue;
            }
            match self.val[v] {
                1 => {
                    lagr += self.d[v];
                    plain += self.c[v];
                }
                FREE => {
                    lagr += self.d[v].max(0.0);
                    plain += self.c[v].max(0.0);
                }
                _ => {}
            }
        }
        lagr.min(plain)
    }

    fn dfs(&mut self, mut pos: usize) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.node_limit {
            return Err(Error::NodeLimit { limit: self.node_limit });
        }
        if self.violated == 0 && self.obj_fixed > self.best + TOLERANCE {
            self.best = self.obj_fixed;
            self.best_set = Some(
                (0..self.c.len())
                    .filter(|&v| self.val[v] == 1)
                    .map(|v| self.global[v])
                    .collect(),
            );
        }
        if self.bound() <= self.best + TOLERANCE {
            return Ok(());
        }
        while pos < self.val.len() && self.val[pos] != FREE {
            pos += 1;
        }
        if pos == self.val.len() {
            return Ok(());
        }
        let mark = self.trail.len();
        for value in [1, 0] {
            self.fix(pos, value);
            if self.propagate() {
                self.dfs(pos + 1)?;
            }
            self.undo(mark);
        }
        Ok(())
    }
}
