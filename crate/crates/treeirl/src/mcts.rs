//! Monte Carlo tree search as a trajectory generator: PUCTS selection over
//! the jerk actions, Monte Carlo leaf evaluation via policy rollouts, DFS
//! extraction of the top-k leaves, and padding to full-horizon trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{
    init_state, is_terminal, reward, transition, transition_accel, JerkAction, LongState,
    MdpConfig, MdpError, PredictionTable, SceneSnapshot,
};
use crate::policies::{rollout_return, AccelPolicy, PriorPolicy};

pub const NUM_ACTIONS: usize = 5;

/// Search parameters; defaults are the chosen generator configuration
/// (n = 400 iterations, k = 100 trajectories, uniform prior).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub iterations: u32,
    pub top_k: usize,
    pub c_puct: f64,
    pub q_max: f64,
    /// Upper end of the per-action tie-breaking noise, U(0, epsilon_max).
    pub epsilon_max: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iterations: 400,
            top_k: 100,
            c_puct: 1.0,
            q_max: 1.0,
            epsilon_max: 0.001,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("search from a terminal root state")]
    TerminalRoot,
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// One node of the search tree. Nodes are keyed by action path: identical
/// states reached via different paths are distinct nodes.
#[derive(Debug, Clone)]
pub struct Node {
    pub state: LongState,
    pub depth: u16,
    /// Per-action visit counts.
    pub visits: [u32; NUM_ACTIONS],
    /// Per-action running-mean action values; 0 until first visit.
    pub q: [f64; NUM_ACTIONS],
    pub children: [Option<usize>; NUM_ACTIONS],
}

impl Node {
    fn new(state: LongState, depth: u16) -> Self {
        Node {
            state,
            depth,
            visits: [0; NUM_ACTIONS],
            q: [0.0; NUM_ACTIONS],
            children: [None; NUM_ACTIONS],
        }
    }

    pub fn total_visits(&self) -> u32 {
        self.visits.iter().sum()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.iter().all(Option::is_none)
    }
}

/// Arena-backed search tree; index 0 is the root.
#[derive(Debug, Clone)]
pub struct SearchTree {
    pub nodes: Vec<Node>,
}

impl SearchTree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Most-visited root action, ties broken by ascending action index.
    pub fn best_root_action(&self) -> JerkAction {
        let root = self.root();
        let mut best = 0;
        for a in 1..NUM_ACTIONS {
            if root.visits[a] > root.visits[best] {
                best = a;
            }
        }
        JerkAction::from_index(best)
    }

    pub fn max_depth(&self) -> u16 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

/// PUCTS action selection with fresh per-action tie-breaking noise.
pub fn select_ucb(
    node: &Node,
    prior: &[f64; NUM_ACTIONS],
    cfg: &SearchConfig,
    rng: &mut impl Rng,
) -> usize {
    let total = node.total_visits() as f64;
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for a in 0..NUM_ACTIONS {
        let exploration =
            cfg.c_puct * prior[a] * ((total + 1.0) / (node.visits[a] as f64 + 1.0)).sqrt();
        let noise = if cfg.epsilon_max > 0.0 {
            rng.gen_range(0.0..cfg.epsilon_max)
        } else {
            0.0
        };
        let value = node.q[a] / cfg.q_max + exploration + noise;
        if value > best_value {
            best_value = value;
            best = a;
        }
    }
    best
}

struct SearchCtx<'a> {
    pred: &'a PredictionTable,
    mdp: &'a MdpConfig,
    cfg: &'a SearchConfig,
    prior: &'a dyn PriorPolicy,
    rollout: &'a dyn AccelPolicy,
}

fn search_node(
    tree: &mut SearchTree,
    node_id: usize,
    ctx: &SearchCtx<'_>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let state = tree.nodes[node_id].state;
    if is_terminal(&state, ctx.mdp) {
        return 0.0;
    }
    let prior = ctx.prior.prior(&state);
    let action = select_ucb(&tree.nodes[node_id], &prior, ctx.cfg, rng);
    let (next, effective_jerk) =
        transition(&state, JerkAction::from_index(action), ctx.pred, ctx.mdp)
            .expect("non-terminal state in search");
    let value = if tree.nodes[node_id].visits[action] == 0 {
        // First visit: expand the child and evaluate the leaf.
        let depth = tree.nodes[node_id].depth + 1;
        let child_id = tree.nodes.len();
        tree.nodes.push(Node::new(next, depth));
        tree.nodes[node_id].children[action] = Some(child_id);
        if is_terminal(&next, ctx.mdp) {
            0.0
        } else {
            rollout_return(&next, ctx.rollout, ctx.pred, ctx.mdp)
        }
    } else {
        let child_id = tree.nodes[node_id].children[action].expect("visited action has a child");
        search_node(tree, child_id, ctx, rng)
    };
    let r = reward(&next, effective_jerk, ctx.mdp);
    let q = r + ctx.mdp.gamma * value;
    let node = &mut tree.nodes[node_id];
    node.visits[action] += 1;
    node.q[action] += (q - node.q[action]) / node.visits[action] as f64;
    q
}

/// Run `iterations` passes of the recursive search from `root`.
pub fn search(
    root: LongState,
    pred: &PredictionTable,
    mdp: &MdpConfig,
    cfg: &SearchConfig,
    prior: &dyn PriorPolicy,
    rollout: &dyn AccelPolicy,
) -> Result<SearchTree, SearchError> {
    if is_terminal(&root, mdp) {
        return Err(SearchError::TerminalRoot);
    }
    let mut tree = SearchTree {
        nodes: vec![Node::new(root, 0)],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ctx = SearchCtx { pred, mdp, cfg, prior, rollout };
    for _ in 0..cfg.iterations {
        search_node(&mut tree, 0, &ctx, &mut rng);
    }
    Ok(tree)
}

/// DFS from the root, children in decreasing order of N(s, a) (ties by
/// ascending action index); returns the action paths of the first `k` leaves.
pub fn top_k_leaves(tree: &SearchTree, k: usize) -> Vec<Vec<JerkAction>> {
    let mut leaves = Vec::new();
    let mut path = Vec::new();
    dfs(tree, 0, k, &mut path, &mut leaves);
    leaves
}

fn dfs(
    tree: &SearchTree,
    node_id: usize,
    k: usize,
    path: &mut Vec<JerkAction>,
    leaves: &mut Vec<Vec<JerkAction>>,
) {
    if leaves.len() >= k {
        return;
    }
    let node = &tree.nodes[node_id];
    if node.is_leaf() {
        leaves.push(path.clone());
        return;
    }
    let mut order: Vec<usize> = (0..NUM_ACTIONS)
        .filter(|&a| node.children[a].is_some())
        .collect();
    order.sort_by(|&a, &b| node.visits[b].cmp(&node.visits[a]).then(a.cmp(&b)));
    for a in order {
        path.push(JerkAction::from_index(a));
        dfs(tree, node.children[a].unwrap(), k, path, leaves);
        path.pop();
        if leaves.len() >= k {
            return;
        }
    }
}

/// One sampled state of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub v: f64,
    pub a: f64,
}

/// The commands behind one trajectory step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// Jerk as commanded (for padded steps: the jerk implied by the
    /// acceleration command).
    pub commanded_jerk: f64,
    /// Jerk after the acceleration clamp; the actual slope of acceleration.
    pub effective_jerk: f64,
}

/// A full-horizon trajectory: `steps() + 1` states at `dt` spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub steps: Vec<TrajectoryStep>,
    /// Tree depth at which padding began.
    pub tree_depth: usize,
}

impl Trajectory {
    pub fn final_point(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory has points")
    }
}

fn push_point(points: &mut Vec<TrajectoryPoint>, s: &LongState) {
    points.push(TrajectoryPoint { t: s.t, x: s.x_ego, v: s.v_ego, a: s.a_ego });
}

/// Replay a leaf path from the root, then extend it with the padding policy
/// until the horizon.
pub fn pad_trajectory(
    root: &LongState,
    leaf_path: &[JerkAction],
    padding: &dyn AccelPolicy,
    pred: &PredictionTable,
    mdp: &MdpConfig,
) -> Trajectory {
    let mut points = Vec::with_capacity(mdp.steps() + 1);
    let mut steps = Vec::with_capacity(mdp.steps());
    let mut state = *root;
    push_point(&mut points, &state);
    for &action in leaf_path {
        let (next, effective_jerk) =
            transition(&state, action, pred, mdp).expect("leaf path within horizon");
        steps.push(TrajectoryStep { commanded_jerk: action.jerk(), effective_jerk });
        state = next;
        push_point(&mut points, &state);
    }
    while !is_terminal(&state, mdp) {
        let accel_cmd = padding.accel(&state, mdp);
        let (next, effective_jerk) =
            transition_accel(&state, accel_cmd, pred, mdp).expect("non-terminal state in padding");
        steps.push(TrajectoryStep { commanded_jerk: effective_jerk, effective_jerk });
        state = next;
        push_point(&mut points, &state);
    }
    Trajectory { points, steps, tree_depth: leaf_path.len() }
}

/// Policy bundle for the generator.
pub struct GeneratorPolicies<'a> {
    pub prior: &'a dyn PriorPolicy,
    pub rollout: &'a dyn AccelPolicy,
    pub padding: &'a dyn AccelPolicy,
}

/// Full trajectory generation: initial state, search, top-k leaves, padding.
/// Duplicates among the returned trajectories are allowed.
pub fn generate(
    snap: &SceneSnapshot,
    pred: &PredictionTable,
    mdp: &MdpConfig,
    cfg: &SearchConfig,
    policies: &GeneratorPolicies<'_>,
) -> Result<Vec<Trajectory>, SearchError> {
    let root = init_state(snap, mdp)?;
    let tree = search(root, pred, mdp, cfg, policies.prior, policies.rollout)?;
    let leaves = top_k_leaves(&tree, cfg.top_k);
    Ok(leaves
        .iter()
        .map(|path| pad_trajectory(&root, path, policies.padding, pred, mdp))
        .collect())
}
