//! A point mass rolling through an axis-aligned maze. Observation `(x, y, vx, vy)`,
//! action is a clipped 2D acceleration, reward 1 per step spent in the goal region.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mdp::{EnvAction, EnvState, Environment, Policy, SharedPolicy, StepOutcome};
use crate::{Error, Result};

/// Gap kept between a blocked point and the wall face it hit. Sweeps treat wall rectangles as
/// closed, so a point resting exactly on a face would otherwise be unable to slide along it.
const SKIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn contains_strict(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMaze {
    pub name: String,
    pub walls: Vec<Rect>,
    pub goal: Rect,
    pub start: [f64; 2],
    pub damping: f64,
    pub noise_std: f64,
    pub dt: f64,
    pub action_bound: f64,
    pub max_steps: usize,
}

const OPEN: &[&str] = &[
    "#######", //
    "#S....#", "#.....#", "#.....#", "#.....#", "#....G#", "#######",
];

const UMAZE: &[&str] = &[
    "#####", //
    "#S..#", "###.#", "#G..#", "#####",
];

const MEDIUM: &[&str] = &[
    "########", //
    "#S.##..#", "#..#...#", "##...###", "#..#...#", "#.#..#.#", "#...#.G#", "########",
];

impl PointMaze {
    /// Builds a maze from a character grid: `#` wall, `S` start, `G` goal, anything else open.
    /// Row `r`, column `c` occupies `[c, c+1] x [r, r+1]`. Wall runs within a row are merged.
    pub fn from_grid(name: &str, rows: &[&str], max_steps: usize) -> Self {
        let mut walls = Vec::new();
        let mut goal = None;
        let mut start = None;
        for (r, row) in rows.iter().enumerate() {
            let cells: Vec<char> = row.chars().collect();
            let mut c = 0;
            while c < cells.len() {
                match cells[c] {
                    '#' => {
                        let begin = c;
                        while c < cells.len() && cells[c] == '#' {
                            c += 1;
                        }
                        walls.push(Rect::new(begin as f64, r as f64, c as f64, (r + 1) as f64));
                        continue;
                    }
                    'G' => {
                        goal = Some(Rect::new(
                            c as f64,
                            r as f64,
                            (c + 1) as f64,
                            (r + 1) as f64,
                        ))
                    }
                    'S' => start = Some([c as f64 + 0.5, r as f64 + 0.5]),
                    _ => {}
                }
                c += 1;
            }
        }
        Self {
            name: name.into(),
            walls,
            goal: goal.expect("layout has a goal cell"),
            start: start.expect("layout has a start cell"),
            damping: 0.8,
            noise_std: 0.1,
            dt: 0.2,
            action_bound: 1.0,
            max_steps,
        }
    }

    pub fn open() -> Self {
        Self::from_grid("open", OPEN, 150)
    }

    pub fn umaze() -> Self {
        Self::from_grid("umaze", UMAZE, 150)
    }

    pub fn medium() -> Self {
        Self::from_grid("medium", MEDIUM, 250)
    }

    pub fn by_layout(layout: &str) -> Option<Self> {
        match layout {
            "open" => Some(Self::open()),
            "umaze" | "u-maze" => Some(Self::umaze()),
            "medium" => Some(Self::medium()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) || self.dt <= 0.0 || self.action_bound <= 0.0 {
            return Err(Error::Config("maze physics constants out of range".into()));
        }
        if self.noise_std < 0.0 || self.max_steps == 0 {
            return Err(Error::Config(
                "maze noise_std must be >= 0 and max_steps >= 1".into(),
            ));
        }
        if self.walls.iter().any(|w| w.intersects(&self.goal)) {
            return Err(Error::Config("goal region intersects a wall".into()));
        }
        if self.in_wall(self.start[0], self.start[1]) {
            return Err(Error::Config("start position lies inside a wall".into()));
        }
        Ok(())
    }

    pub fn in_wall(&self, x: f64, y: f64) -> bool {
        self.walls.iter().any(|w| w.contains_strict(x, y))
    }

    /// Bounding box of all walls.
    pub fn arena(&self) -> Rect {
        self.walls.iter().fold(
            Rect::new(
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ),
            |acc, w| {
                Rect::new(
                    acc.x0.min(w.x0),
                    acc.y0.min(w.y0),
                    acc.x1.max(w.x1),
                    acc.y1.max(w.y1),
                )
            },
        )
    }

    /// Moves along x by `dx`, stopping at the first wall face crossed.
    fn sweep_x(&self, x: f64, y: f64, dx: f64) -> (f64, bool) {
        let mut target = x + dx;
        let mut hit = false;
        for w in self.walls.iter().filter(|w| y >= w.y0 && y <= w.y1) {
            if dx > 0.0 && w.x0 >= x && w.x0 < target + SKIN {
                target = w.x0 - SKIN;
                hit = true;
            } else if dx < 0.0 && w.x1 <= x && w.x1 > target - SKIN {
                target = w.x1 + SKIN;
                hit = true;
            }
        }
        (target, hit)
    }

    fn sweep_y(&self, x: f64, y: f64, dy: f64) -> (f64, bool) {
        let mut target = y + dy;
        let mut hit = false;
        for w in self.walls.iter().filter(|w| x >= w.x0 && x <= w.x1) {
            if dy > 0.0 && w.y0 >= y && w.y0 < target + SKIN {
                target = w.y0 - SKIN;
                hit = true;
            } else if dy < 0.0 && w.y1 <= y && w.y1 > target - SKIN {
                target = w.y1 + SKIN;
                hit = true;
            }
        }
        (target, hit)
    }

    pub fn navigator(&self) -> Arc<NavGrid> {
        Arc::new(NavGrid::new(self))
    }
}

impl Environment for PointMaze {
    fn id(&self) -> String {
        format!("maze-{}", self.name)
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn initial_state(&self, _rng: &mut dyn RngCore) -> EnvState {
        EnvState(vec![self.start[0], self.start[1], 0.0, 0.0])
    }

    /// Velocity update `v' = damping * v + dt * a + noise`, then an axis-separated position
    /// update `p' = p + dt * v'`. A move that would cross a wall face stops at the face and
    /// zeroes that velocity component. Noise draws are skipped when `noise_std == 0`.
    fn step(
        &self,
        state: &EnvState,
        action: &EnvAction,
        rng: &mut dyn RngCore,
    ) -> Result<StepOutcome> {
        self.check_state(state)?;
        if action.dim() != 2 {
            return Err(Error::Dimension {
                what: "action",
                expected: 2,
                got: action.dim(),
            });
        }
        let bound = self.action_bound;
        let ax = action.0[0].clamp(-bound, bound);
        let ay = action.0[1].clamp(-bound, bound);
        let (x, y, vx, vy) = (state.0[0], state.0[1], state.0[2], state.0[3]);

        let (nx_noise, ny_noise) = if self.noise_std > 0.0 {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            (self.noise_std * a, self.noise_std * b)
        } else {
            (0.0, 0.0)
        };
        let mut vx = self.damping * vx + self.dt * ax + nx_noise;
        let mut vy = self.damping * vy + self.dt * ay + ny_noise;

        let (x, hit_x) = self.sweep_x(x, y, self.dt * vx);
        if hit_x {
            vx = 0.0;
        }
        let (y, hit_y) = self.sweep_y(x, y, self.dt * vy);
        if hit_y {
            vy = 0.0;
        }
        let reward = if self.goal.contains(x, y) { 1.0 } else { 0.0 };
        Ok(StepOutcome {
            next: EnvState(vec![x, y, vx, vy]),
            reward,
            terminal: false,
        })
    }

    fn is_terminal(&self, _state: &EnvState) -> bool {
        false
    }

    fn max_reward(&self) -> f64 {
        1.0
    }

    fn random_policy(&self) -> SharedPolicy {
        Arc::new(UniformMazePolicy {
            id: "maze-random".into(),
            bound: self.action_bound,
        })
    }
}

/// Unit-cell occupancy grid with breadth-first distances to the goal cell.
#[derive(Debug, Clone)]
pub struct NavGrid {
    origin: (f64, f64),
    width: usize,
    height: usize,
    dist: Vec<Option<u32>>,
    goal_center: (f64, f64),
}

impl NavGrid {
    fn new(maze: &PointMaze) -> Self {
        let arena = maze.arena();
        let origin = (arena.x0.floor(), arena.y0.floor());
        let width = (arena.x1 - origin.0).ceil() as usize;
        let height = (arena.y1 - origin.1).ceil() as usize;
        let free: Vec<bool> = (0..width * height)
            .map(|i| {
                let (cx, cy) = (
                    origin.0 + (i % width) as f64 + 0.5,
                    origin.1 + (i / width) as f64 + 0.5,
                );
                !maze.in_wall(cx, cy)
            })
            .collect();
        let goal_center = maze.goal.center();
        let mut dist = vec![None; width * height];
        let mut queue = VecDeque::new();
        let gx = (goal_center.0 - origin.0).floor() as usize;
        let gy = (goal_center.1 - origin.1).floor() as usize;
        if gx < width && gy < height && free[gy * width + gx] {
            dist[gy * width + gx] = Some(0);
            queue.push_back((gx, gy));
        }
        while let Some((cx, cy)) = queue.pop_front() {
            let d = dist[cy * width + cx].unwrap();
            for (nx, ny) in neighbours(cx, cy, width, height) {
                let k = ny * width + nx;
                if free[k] && dist[k].is_none() {
                    dist[k] = Some(d + 1);
                    queue.push_back((nx, ny));
                }
            }
        }
        Self {
            origin,
            width,
            height,
            dist,
            goal_center,
        }
    }

    fn cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cx = (x - self.origin.0).floor();
        let cy = (y - self.origin.1).floor();
        (cx >= 0.0 && cy >= 0.0 && (cx as usize) < self.width && (cy as usize) < self.height)
            .then_some((cx as usize, cy as usize))
    }

    /// Center of the next cell on a shortest path to the goal, or the goal center when already
    /// in the goal cell or off the reachable grid.
    pub fn waypoint(&self, x: f64, y: f64) -> (f64, f64) {
        let Some((cx, cy)) = self.cell(x, y) else {
            return self.goal_center;
        };
        let Some(d) = self.dist[cy * self.width + cx] else {
            return self.goal_center;
        };
        if d == 0 {
            return self.goal_center;
        }
        neighbours(cx, cy, self.width, self.height)
            .find(|&(nx, ny)| self.dist[ny * self.width + nx] == Some(d - 1))
            .map(|(nx, ny)| {
                (
                    self.origin.0 + nx as f64 + 0.5,
                    self.origin.1 + ny as f64 + 0.5,
                )
            })
            .unwrap_or(self.goal_center)
    }

    /// Shortest-path length in cells from the point's cell to the goal cell.
    pub fn distance(&self, x: f64, y: f64) -> Option<u32> {
        let (cx, cy) = self.cell(x, y)?;
        self.dist[cy * self.width + cx]
    }
}

fn neighbours(
    cx: usize,
    cy: usize,
    width: usize,
    height: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let candidates = [
        (cx.wrapping_sub(1), cy),
        (cx + 1, cy),
        (cx, cy.wrapping_sub(1)),
        (cx, cy + 1),
    ];
    candidates
        .into_iter()
        .filter(move |&(x, y)| x < width && y < height)
}

/// Uniform random accelerations.
#[derive(Debug, Clone)]
pub struct UniformMazePolicy {
    id: String,
    bound: f64,
}

impl Policy for UniformMazePolicy {
    fn id(&self) -> &str {
        &self.id
    }

    fn act(&self, _state: &EnvState, _t: usize, rng: &mut dyn RngCore) -> EnvAction {
        let b = self.bound;
        EnvAction(vec![rng.gen_range(-b..=b), rng.gen_range(-b..=b)])
    }
}

/// Proportional-derivative controller toward the next waypoint of a grid shortest path, with
/// additive Gaussian action noise.
#[derive(Debug, Clone)]
pub struct GoalSeekingController {
    id: String,
    nav: Arc<NavGrid>,
    pub gain: f64,
    pub damping_gain: f64,
    pub noise_std: f64,
    bound: f64,
}

impl GoalSeekingController {
    pub fn new(id: impl Into<String>, maze: &PointMaze, gain: f64, noise_std: f64) -> Self {
        Self {
            id: id.into(),
            nav: maze.navigator(),
            gain,
            damping_gain: 0.5,
            noise_std,
            bound: maze.action_bound,
        }
    }
}

impl Policy for GoalSeekingController {
    fn id(&self) -> &str {
        &self.id
    }

    fn act(&self, state: &EnvState, _t: usize, rng: &mut dyn RngCore) -> EnvAction {
        let s = state.as_slice();
        let (tx, ty) = self.nav.waypoint(s[0], s[1]);
        let n0: f64 = StandardNormal.sample(rng);
        let n1: f64 = StandardNormal.sample(rng);
        let ax = self.gain * (tx - s[0]) - self.damping_gain * s[2] + self.noise_std * n0;
        let ay = self.gain * (ty - s[1]) - self.damping_gain * s[3] + self.noise_std * n1;
        EnvAction(vec![
            ax.clamp(-self.bound, self.bound),
            ay.clamp(-self.bound, self.bound),
        ])
    }
}
