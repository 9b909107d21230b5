//! Flat-UCT search over viewpoints with batch expansion.
//!
//! Nodes live in an arena. Expanding a node places `q` children at the batch
//! acquisition optimum under the node's model; children are scored against
//! that same model. A child only gets its own model when it is expanded
//! itself, by conditioning its parent's model on beams fantasized along the
//! connecting leg.

use std::sync::Arc;

use rand::Rng;

use super::acquisition::{optimize_q_candidates, rollout_value, ucb, CandidateSearch};
use super::region::Region;
use super::{Clock, PlanContext, PlannerConfig};
use crate::svgp::Snapshot;
use crate::vehicle::{dubins_shortest, Pose};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub viewpoint: [f64; 2],
    /// Arrival pose; heading is the bearing from the parent viewpoint.
    pub pose: Pose,
    pub reward: f64,
    pub rollout: f64,
    /// Best discounted return through this node.
    pub value: f64,
    pub visits: u32,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
    /// Model the node was scored with.
    pub model_ref: Arc<Snapshot>,
    /// Model conditioned on the leg into this node; set on expansion.
    pub own_model: Option<Arc<Snapshot>>,
    pub depth: usize,
    pub expanded: bool,
    /// No further expansion possible below this node.
    pub exhausted: bool,
}

#[derive(Debug, Clone)]
pub struct SearchTree {
    pub nodes: Vec<TreeNode>,
}

impl SearchTree {
    pub fn new(root_pose: Pose, root_model: Arc<Snapshot>) -> Self {
        Self {
            nodes: vec![TreeNode {
                viewpoint: [root_pose.x, root_pose.y],
                pose: root_pose,
                reward: 0.0,
                rollout: 0.0,
                value: f64::NEG_INFINITY,
                visits: 0,
                children: Vec::new(),
                parent: None,
                own_model: Some(root_model.clone()),
                model_ref: root_model,
                depth: 0,
                expanded: false,
                exhausted: false,
            }],
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Node ids from `id` up to the root.
    pub fn path_to_root(&self, mut id: usize) -> Vec<usize> {
        let mut out = vec![id];
        while let Some(p) = self.nodes[id].parent {
            out.push(p);
            id = p;
        }
        out
    }
}

/// Flat-UCT child choice: unvisited children first (in insertion order), then
/// `value + c * sqrt(ln(N) / n)`.
pub fn select_child(tree: &SearchTree, node: usize, uct_c: f64) -> usize {
    select_among(tree, node, &tree.nodes[node].children, uct_c)
}

fn select_among(tree: &SearchTree, node: usize, children: &[usize], uct_c: f64) -> usize {
    assert!(!children.is_empty(), "node has no children");
    if let Some(&c) = children.iter().find(|&&c| tree.nodes[c].visits == 0) {
        return c;
    }
    let ln_n = (tree.nodes[node].visits.max(1) as f64).ln();
    let mut best = children[0];
    let mut best_score = f64::NEG_INFINITY;
    for &c in children {
        let n = &tree.nodes[c];
        let score = n.value + uct_c * (ln_n / n.visits as f64).sqrt();
        if score > best_score {
            best_score = score;
            best = c;
        }
    }
    best
}

/// Max-backup along `path` (leaf first, root last): each node's value becomes
/// `max(value, reward + gamma * below)` and its visit count grows by one.
pub fn backprop_max(tree: &mut SearchTree, path: &[usize], leaf_return: f64, gamma: f64) {
    assert!(leaf_return.is_finite(), "leaf return must be finite");
    let mut below = leaf_return;
    for &id in path {
        let n = &mut tree.nodes[id];
        let ret = n.reward + gamma * below;
        if ret > n.value {
            n.value = ret;
        }
        n.visits += 1;
        below = n.value;
    }
}

/// Viewpoints along the leg into a node at which beams are fantasized: a
/// strip of `across` lanes over the swath.
pub fn fantasy_points(from: Pose, to: Pose, ctx: &PlanContext, spacing: f64, across: usize, cap: usize) -> Vec<[f64; 2]> {
    let path = dubins_shortest(from, to, ctx.turn_radius);
    if path.length <= 0.0 {
        return Vec::new();
    }
    let lanes = across.max(1);
    let mut n_along = ((path.length / spacing).ceil() as usize).max(1);
    if n_along * lanes > cap {
        n_along = (cap / lanes).max(1);
    }
    let mut out = Vec::with_capacity(n_along * lanes);
    for i in 0..n_along {
        let s = (i as f64 + 0.5) / n_along as f64 * path.length;
        let p = path.pose_at(s);
        for k in 0..lanes {
            let off = if lanes == 1 {
                0.0
            } else {
                (k as f64 / (lanes - 1) as f64 - 0.5) * ctx.swath_width * 2.0 / 3.0
            };
            let x = p.x - off * p.theta.sin();
            let y = p.y + off * p.theta.cos();
            if ctx.extent.contains(x, y) {
                out.push([x, y]);
            }
        }
    }
    out
}

/// Conditions `parent` on fantasized beams along the leg `from -> to`, with
/// posterior means as targets.
pub fn fantasize_leg(parent: &Snapshot, from: Pose, to: Pose, ctx: &PlanContext, cfg: &PlannerConfig) -> Result<Snapshot> {
    let pts = fantasy_points(from, to, ctx, cfg.fantasy_spacing, cfg.fantasy_lanes, cfg.fantasy_cap);
    let (means, _) = parent.predict(&pts);
    let noise = vec![parent.model().noise_variance(); pts.len()];
    parent.condition(&pts, &means, &noise)
}

#[derive(Debug, Clone)]
pub struct TreeOutcome {
    pub viewpoint: [f64; 2],
    pub value: f64,
    pub iterations: usize,
    pub expansions: usize,
    pub models_trained: usize,
    pub tree: SearchTree,
}

fn search_region(center: [f64; 2], ctx: &PlanContext, cfg: &PlannerConfig) -> Region {
    let rect = ctx.planning_rect();
    let c = [
        center[0].clamp(rect.min_x, rect.max_x),
        center[1].clamp(rect.min_y, rect.max_y),
    ];
    let r_min = cfg.min_viewpoint_distance.min(0.5 * cfg.horizon_radius);
    Region::disc(c, cfg.horizon_radius, r_min, rect)
}

/// Expands `node`: materializes its model if needed, places `q` children and
/// scores them. Returns the new child ids.
#[allow(clippy::too_many_arguments)]
pub fn expand<R: Rng + ?Sized>(
    tree: &mut SearchTree,
    node: usize,
    ctx: &PlanContext,
    cfg: &PlannerConfig,
    clock: &dyn Clock,
    deadline: f64,
    rng: &mut R,
    models_trained: &mut usize,
) -> Result<Vec<usize>> {
    let depth = tree.nodes[node].depth;
    if depth >= cfg.d_max {
        return Err(Error::InvalidConfig("cannot expand a node at maximum depth".into()));
    }
    if tree.nodes[node].expanded {
        return Err(Error::InvalidConfig("node already expanded".into()));
    }
    let needs_model = tree.nodes[node].own_model.is_none();
    if clock.now() + expansion_cost(tree, node, cfg) > deadline {
        return Err(Error::NonConvergence("planning deadline reached".into()));
    }
    if needs_model {
        let parent = tree.nodes[node].parent.expect("non-root node has a parent");
        let from = tree.nodes[parent].pose;
        let to = tree.nodes[node].pose;
        let model = fantasize_leg(&tree.nodes[node].model_ref, from, to, ctx, cfg)?;
        clock.charge(cfg.costs.train);
        *models_trained += 1;
        tree.nodes[node].own_model = Some(Arc::new(model));
    }
    let model = tree.nodes[node].own_model.clone().expect("model materialized");
    let center = tree.nodes[node].viewpoint;
    let region = search_region(center, ctx, cfg);
    let search = CandidateSearch {
        q: cfg.q,
        beta: cfg.beta,
        n_mc: cfg.n_mc_qucb,
        restarts: cfg.restarts,
        raw_samples: cfg.raw_samples,
        iters: cfg.opt_iters,
    };
    let result = optimize_q_candidates(&model, &region, &search, rng);
    clock.charge(cfg.costs.candidates);
    tree.nodes[node].expanded = true;
    let cands = match result {
        Ok(c) => c,
        Err(e) => {
            tree.nodes[node].exhausted = true;
            return Err(e);
        }
    };
    let mut ids = Vec::with_capacity(cfg.q);
    for p in cands.points {
        let (m, s) = model.latent(p);
        let reward = ucb(m, s, cfg.beta);
        let rollout = rollout_value(&model, p, cfg.rollout_radius(), &ctx.extent, cfg.rollout_samples, rng);
        let bearing = (p[1] - center[1]).atan2(p[0] - center[0]);
        let id = tree.nodes.len();
        tree.nodes.push(TreeNode {
            viewpoint: p,
            pose: Pose::new(p[0], p[1], bearing),
            reward,
            rollout,
            value: f64::NEG_INFINITY,
            visits: 0,
            children: Vec::new(),
            parent: Some(node),
            model_ref: model.clone(),
            own_model: None,
            depth: depth + 1,
            expanded: false,
            exhausted: depth + 1 >= cfg.d_max,
        });
        tree.nodes[node].children.push(id);
        ids.push(id);
    }
    Ok(ids)
}

/// Charged clock time of expanding `node`.
pub fn expansion_cost(tree: &SearchTree, node: usize, cfg: &PlannerConfig) -> f64 {
    cfg.costs.candidates
        + if tree.nodes[node].own_model.is_none() {
            cfg.costs.train
        } else {
            0.0
        }
}

fn refresh_exhausted(tree: &mut SearchTree, mut id: usize) {
    loop {
        let n = &tree.nodes[id];
        let done = n.expanded && n.children.iter().all(|&c| tree.nodes[c].exhausted);
        if !done {
            return;
        }
        tree.nodes[id].exhausted = true;
        match tree.nodes[id].parent {
            Some(p) => id = p,
            None => return,
        }
    }
}

/// Anytime search from `root_pose`. Stops at `deadline`, after
/// `cfg.max_tree_iters` iterations, or when the tree is complete.
pub fn tree_search<R: Rng + ?Sized>(
    root_model: Arc<Snapshot>,
    root_pose: Pose,
    ctx: &PlanContext,
    cfg: &PlannerConfig,
    clock: &dyn Clock,
    deadline: f64,
    rng: &mut R,
) -> Result<TreeOutcome> {
    let mut tree = SearchTree::new(root_pose, root_model);
    let mut iterations = 0;
    let mut expansions = 0;
    let mut models_trained = 0;
    let mut root_error: Option<Error> = None;
    while iterations < cfg.max_tree_iters && !tree.nodes[0].exhausted && clock.now() < deadline {
        iterations += 1;
        let mut node = 0;
        while tree.nodes[node].expanded {
            let open: Vec<usize> = tree.nodes[node]
                .children
                .iter()
                .copied()
                .filter(|&c| !tree.nodes[c].exhausted)
                .collect();
            if open.is_empty() {
                break;
            }
            node = select_among(&tree, node, &open, cfg.uct_c);
        }
        if tree.nodes[node].exhausted || tree.nodes[node].expanded {
            refresh_exhausted(&mut tree, node);
            continue;
        }
        if clock.now() + expansion_cost(&tree, node, cfg) > deadline {
            break;
        }
        match expand(&mut tree, node, ctx, cfg, clock, deadline, rng, &mut models_trained) {
            Ok(children) => {
                expansions += 1;
                for c in children {
                    let path = tree.path_to_root(c);
                    let ret = tree.nodes[c].rollout;
                    backprop_max(&mut tree, &path, ret, cfg.gamma);
                }
                refresh_exhausted(&mut tree, node);
            }
            Err(e) => {
                if node == 0 {
                    root_error = Some(e);
                    break;
                }
                refresh_exhausted(&mut tree, node);
            }
        }
    }
    let root = &tree.nodes[0];
    if root.children.is_empty() {
        return Err(root_error.unwrap_or_else(|| Error::NonConvergence("no expansion completed".into())));
    }
    let mut best = root.children[0];
    for &c in &root.children[1..] {
        let (a, b) = (&tree.nodes[c], &tree.nodes[best]);
        if a.value > b.value || (a.value == b.value && a.visits > b.visits) {
            best = c;
        }
    }
    Ok(TreeOutcome {
        viewpoint: tree.nodes[best].viewpoint,
        value: tree.nodes[best].value,
        iterations,
        expansions,
        models_trained,
        tree,
    })
}
