//! Barrier grid-world: cells on a rectangular lattice, walls on edges.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use super::{ActionLabel, Env, EnvError};

/// A grid cell, column `x` and row `y` with `y = 0` at the top of the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Initial-state distribution of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartDistribution {
    /// Uniform over all cells.
    UniformFree,
    /// Every episode starts at the given cell.
    Fixed(Cell),
}

/// Barrier edge between two 4-adjacent cells, stored in normalized order.
pub type Barrier = (Cell, Cell);

fn normalize_edge(a: Cell, b: Cell) -> Barrier {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Parsed grid topology: dimensions, barrier edges, goal, start rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub barriers: BTreeSet<Barrier>,
    pub goal: Cell,
    pub start: StartDistribution,
}

impl GridSpec {
    pub fn barrier_between(&self, a: Cell, b: Cell) -> bool {
        self.barriers.contains(&normalize_edge(a, b))
    }
}

/// Parses the double-resolution ASCII map format.
///
/// Cell rows interleave with wall rows: `+` sits at every lattice corner,
/// `-` and `|` mark barrier edges, a space marks an open edge, `G` marks
/// the goal cell and an optional `S` a fixed start. The outer boundary must
/// be fully drawn. Ragged lines are rejected, as are maps where any cell
/// cannot reach the goal.
pub fn load_map(text: &str) -> Result<GridSpec, EnvError> {
    let lines: Vec<&str> = text.lines().collect();
    let parse = |line: usize, col: usize, msg: &str| EnvError::Parse {
        line,
        col,
        msg: msg.to_string(),
    };
    if lines.len() < 3 || lines.len() % 2 == 0 {
        return Err(parse(
            lines.len(),
            1,
            "map needs an odd number of lines (wall rows interleaved with cell rows)",
        ));
    }
    let height = (lines.len() - 1) / 2;
    let row0: Vec<char> = lines[0].chars().collect();
    if row0.len() < 3 || row0.len() % 2 == 0 {
        return Err(parse(1, row0.len(), "first line must have odd length >= 3"));
    }
    let width = (row0.len() - 1) / 2;

    let mut barriers = BTreeSet::new();
    let mut goal = None;
    let mut start = None;

    for (r, line) in lines.iter().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        if chars.len() != 2 * width + 1 {
            return Err(parse(r + 1, chars.len() + 1, "ragged line"));
        }
        for (c, &ch) in chars.iter().enumerate() {
            let (line_no, col_no) = (r + 1, c + 1);
            match (r % 2, c % 2) {
                (0, 0) => {
                    if ch != '+' {
                        return Err(parse(line_no, col_no, "expected '+' at lattice corner"));
                    }
                }
                (0, 1) => {
                    // Horizontal edge between cell (i, j-1) and (i, j).
                    let (i, j) = (c / 2, r / 2);
                    let boundary = j == 0 || j == height;
                    match ch {
                        '-' => {
                            if !boundary {
                                barriers.insert(normalize_edge(
                                    Cell::new(i, j - 1),
                                    Cell::new(i, j),
                                ));
                            }
                        }
                        ' ' => {
                            if boundary {
                                return Err(parse(line_no, col_no, "boundary must be closed"));
                            }
                        }
                        _ => return Err(parse(line_no, col_no, "expected '-' or ' '")),
                    }
                }
                (1, 0) => {
                    // Vertical edge between cell (i-1, j) and (i, j).
                    let (i, j) = (c / 2, (r - 1) / 2);
                    let boundary = i == 0 || i == width;
                    match ch {
                        '|' => {
                            if !boundary {
                                barriers.insert(normalize_edge(
                                    Cell::new(i - 1, j),
                                    Cell::new(i, j),
                                ));
                            }
                        }
                        ' ' => {
                            if boundary {
                                return Err(parse(line_no, col_no, "boundary must be closed"));
                            }
                        }
                        _ => return Err(parse(line_no, col_no, "expected '|' or ' '")),
                    }
                }
                (1, 1) => {
                    let cell = Cell::new(c / 2, (r - 1) / 2);
                    match ch {
                        ' ' => {}
                        'G' => {
                            if goal.replace(cell).is_some() {
                                return Err(parse(line_no, col_no, "more than one goal"));
                            }
                        }
                        'S' => {
                            if start.replace(cell).is_some() {
                                return Err(parse(line_no, col_no, "more than one start"));
                            }
                        }
                        _ => return Err(parse(line_no, col_no, "expected ' ', 'G' or 'S'")),
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    let goal = goal.ok_or_else(|| parse(lines.len(), 1, "map has no goal cell"))?;
    let spec = GridSpec {
        width,
        height,
        barriers,
        goal,
        start: match start {
            Some(cell) => StartDistribution::Fixed(cell),
            None => StartDistribution::UniformFree,
        },
    };

    // Flood fill from the goal over open edges; every cell must reach it.
    let mut seen = vec![false; width * height];
    let mut queue = VecDeque::new();
    seen[goal.y * width + goal.x] = true;
    queue.push_back(goal);
    while let Some(cell) = queue.pop_front() {
        for n in neighbors(&spec, cell) {
            let idx = n.y * width + n.x;
            if !seen[idx] && !spec.barrier_between(cell, n) {
                seen[idx] = true;
                queue.push_back(n);
            }
        }
    }
    for y in 0..height {
        for x in 0..width {
            if !seen[y * width + x] {
                return Err(EnvError::Disconnected { x, y });
            }
        }
    }
    Ok(spec)
}

fn neighbors(spec: &GridSpec, cell: Cell) -> Vec<Cell> {
    let mut out = Vec::with_capacity(4);
    if cell.y > 0 {
        out.push(Cell::new(cell.x, cell.y - 1));
    }
    if cell.y + 1 < spec.height {
        out.push(Cell::new(cell.x, cell.y + 1));
    }
    if cell.x > 0 {
        out.push(Cell::new(cell.x - 1, cell.y));
    }
    if cell.x + 1 < spec.width {
        out.push(Cell::new(cell.x + 1, cell.y));
    }
    out
}

/// Renders a spec back to the map format; `load_map(render_map(s)) == s`.
pub fn render_map(spec: &GridSpec) -> String {
    let (w, h) = (spec.width, spec.height);
    let mut out = String::new();
    for r in 0..2 * h + 1 {
        for c in 0..2 * w + 1 {
            let ch = match (r % 2, c % 2) {
                (0, 0) => '+',
                (0, 1) => {
                    let (i, j) = (c / 2, r / 2);
                    if j == 0
                        || j == h
                        || spec.barrier_between(Cell::new(i, j - 1), Cell::new(i, j))
                    {
                        '-'
                    } else {
                        ' '
                    }
                }
                (1, 0) => {
                    let (i, j) = (c / 2, (r - 1) / 2);
                    if i == 0
                        || i == w
                        || spec.barrier_between(Cell::new(i - 1, j), Cell::new(i, j))
                    {
                        '|'
                    } else {
                        ' '
                    }
                }
                (1, 1) => {
                    let cell = Cell::new(c / 2, (r - 1) / 2);
                    if cell == spec.goal {
                        'G'
                    } else if spec.start == StartDistribution::Fixed(cell) {
                        'S'
                    } else {
                        ' '
                    }
                }
                _ => unreachable!(),
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

/// The grid-world MDP: 4-connected moves, bump-stay on walls and boundary,
/// ground-truth reward 1 exactly when the goal is entered.
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: GridSpec,
    /// `next[s * 4 + a]` precomputed for all states and actions.
    next: Vec<usize>,
}

pub const GRID_ACTIONS: [ActionLabel; 4] = [
    ActionLabel::Up,
    ActionLabel::Down,
    ActionLabel::Left,
    ActionLabel::Right,
];

impl GridWorld {
    pub fn new(spec: GridSpec) -> Result<Self, EnvError> {
        let (w, h) = (spec.width, spec.height);
        let mut next = vec![0usize; w * h * 4];
        for y in 0..h {
            for x in 0..w {
                let cell = Cell::new(x, y);
                let id = y * w + x;
                for (a, label) in GRID_ACTIONS.iter().enumerate() {
                    let target = match label {
                        ActionLabel::Up if y > 0 => Some(Cell::new(x, y - 1)),
                        ActionLabel::Down if y + 1 < h => Some(Cell::new(x, y + 1)),
                        ActionLabel::Left if x > 0 => Some(Cell::new(x - 1, y)),
                        ActionLabel::Right if x + 1 < w => Some(Cell::new(x + 1, y)),
                        _ => None,
                    };
                    let landing = match target {
                        Some(t) if !spec.barrier_between(cell, t) => t,
                        _ => cell, // bump-stay
                    };
                    next[id * 4 + a] = landing.y * w + landing.x;
                }
            }
        }
        Ok(GridWorld { spec, next })
    }

    pub fn from_map(text: &str) -> Result<Self, EnvError> {
        GridWorld::new(load_map(text)?)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn cell_of(&self, id: usize) -> Cell {
        Cell::new(id % self.spec.width, id / self.spec.width)
    }

    pub fn id_of(&self, cell: Cell) -> usize {
        cell.y * self.spec.width + cell.x
    }

    pub fn goal_id(&self) -> usize {
        self.id_of(self.spec.goal)
    }

    /// Same topology with a fixed start cell (used by evaluation runs that
    /// pin the episode start).
    pub fn with_fixed_start(&self, cell: Cell) -> GridWorld {
        let mut spec = self.spec.clone();
        spec.start = StartDistribution::Fixed(cell);
        GridWorld {
            spec,
            next: self.next.clone(),
        }
    }

    /// BFS shortest-path steps from a cell to the goal over open edges.
    pub fn shortest_path_len(&self, from: usize) -> usize {
        let n = self.num_states();
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        dist[from] = 0;
        queue.push_back(from);
        while let Some(s) = queue.pop_front() {
            if s == self.goal_id() {
                return dist[s];
            }
            for a in 0..4 {
                let t = self.next[s * 4 + a];
                if dist[t] == usize::MAX {
                    dist[t] = dist[s] + 1;
                    queue.push_back(t);
                }
            }
        }
        usize::MAX
    }
}

impl Env for GridWorld {
    fn name(&self) -> String {
        "grid".to_string()
    }

    fn fingerprint(&self) -> String {
        render_map(&self.spec)
    }

    fn num_states(&self) -> usize {
        self.spec.width * self.spec.height
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn feature_dim(&self) -> usize {
        2
    }

    fn features_of(&self, id: usize) -> Vec<f64> {
        let cell = self.cell_of(id);
        let dx = (self.spec.width - 1).max(1) as f64;
        let dy = (self.spec.height - 1).max(1) as f64;
        vec![cell.x as f64 / dx, cell.y as f64 / dy]
    }

    fn action_labels(&self) -> Vec<ActionLabel> {
        GRID_ACTIONS.to_vec()
    }

    fn step_ids(&self, s: usize, a: usize) -> Result<(usize, bool, f64), EnvError> {
        if s >= self.num_states() {
            return Err(EnvError::InvalidState {
                id: s,
                num_states: self.num_states(),
            });
        }
        if a >= 4 {
            return Err(EnvError::InvalidAction {
                id: a,
                num_actions: 4,
            });
        }
        let next = self.next[s * 4 + a];
        let done = next == self.goal_id();
        Ok((next, done, if done { 1.0 } else { 0.0 }))
    }

    fn start_support(&self) -> Vec<usize> {
        match self.spec.start {
            StartDistribution::UniformFree => (0..self.num_states()).collect(),
            StartDistribution::Fixed(cell) => vec![self.id_of(cell)],
        }
    }
}
