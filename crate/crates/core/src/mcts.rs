//! Tree-search re-ranking over a retrieved action space.
//!
//! Each rollout expands a fresh chain of actions down to depth K, simulates a
//! K-shot response for that branch, scores it, and propagates the reward back
//! up the tree. Selection balances node value against visit counts; action
//! sampling follows the normalized retrieval similarities. All randomness
//! flows from one seeded stream, so a search is fully replayable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::gateway::{
    assemble_prompt, canonicalize_answer, parse_answer, GenRequest, GeneratorBackend,
    ParsedResponse, Query, TemplateId,
};
use crate::kb::{KbEntry, KbStore};
use crate::retrieval::RetrievalHit;
use crate::rewards::{HeuristicEvaluator, RewardBreakdown, RewardConfig};
use crate::scalar::Scalar;

/// Default exploration constant. Pinned to this literal (not `SQRT_2`):
/// reference values are computed against exactly 1.41421.
#[allow(clippy::approx_constant)]
pub const DEFAULT_EXPLORATION: f64 = 1.41421;
/// Default division guard in the exploration term.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// A retrieved entry paired with its normalized similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub entry: KbEntry,
    pub sim: f64,
}

/// The sampleable action set: the Top-N retrieved entries, unique by id.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    actions: Vec<Action>,
}

impl ActionSpace {
    pub fn new(actions: Vec<Action>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for action in &actions {
            if !seen.insert(action.entry.id.clone()) {
                return Err(Error::DuplicateId {
                    id: action.entry.id.clone(),
                });
            }
            if !(action.sim > 0.0 && action.sim <= 1.0) {
                return Err(Error::Config(format!(
                    "action {} has similarity {} outside (0, 1]",
                    action.entry.id, action.sim
                )));
            }
        }
        Ok(Self { actions })
    }

    /// Resolve retrieval hits against the store they were retrieved from.
    pub fn from_hits<S: Scalar>(hits: &[RetrievalHit<S>], store: &KbStore) -> Result<Self> {
        let actions = hits
            .iter()
            .map(|hit| {
                store
                    .get(&hit.entry_id)
                    .cloned()
                    .map(|entry| Action {
                        entry,
                        sim: hit.norm_score.to_f64_lossy(),
                    })
                    .ok_or_else(|| Error::UnknownEntry {
                        id: hit.entry_id.clone(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(actions)
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Search parameters. `k` is the branch depth (examples per prompt), `n` the
/// action-space size used at retrieval time, `rollouts` the simulation budget.
#[derive(Debug, Clone, Serialize)]
pub struct SearchConfig {
    pub k: usize,
    pub n: usize,
    pub max_width: usize,
    pub rollouts: usize,
    pub c: f64,
    pub epsilon: f64,
    pub early_stop: bool,
    pub rng_seed: u64,
    pub reward: RewardConfig,
    pub template: TemplateId,
    pub with_reasoning: bool,
    pub gen_max_tokens: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: 3,
            n: 20,
            max_width: 3,
            rollouts: 10,
            c: DEFAULT_EXPLORATION,
            epsilon: DEFAULT_EPSILON,
            early_stop: true,
            rng_seed: 0,
            reward: RewardConfig::default(),
            template: TemplateId::ScienceQa,
            with_reasoning: false,
            gen_max_tokens: 512,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(Error::Config(format!("need 1 <= k <= n, got k={} n={}", self.k, self.n)));
        }
        if self.max_width == 0 {
            return Err(Error::Config("max_width must be >= 1".into()));
        }
        if self.rollouts == 0 {
            return Err(Error::Config("rollouts must be >= 1".into()));
        }
        self.reward.validate()
    }
}

/// Why the search stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EarlyStop,
    RolloutCap,
    Exhausted,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::EarlyStop => "early_stop",
            Termination::RolloutCap => "rollout_cap",
            Termination::Exhausted => "exhausted",
        })
    }
}

/// The winning branch with its response, reward, and search accounting.
#[derive(Debug, Clone)]
pub struct SearchResult {
    /// Root-to-leaf actions of the winning branch.
    pub branch: Vec<Action>,
    pub response: ParsedResponse,
    pub reward: RewardBreakdown,
    pub rollouts_used: usize,
    pub termination: Termination,
    pub tree_size: usize,
}

/// One tree node. `action` indexes into the action space; the root has none.
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub node_id: usize,
    pub parent: Option<usize>,
    pub action: Option<usize>,
    pub depth: usize,
    pub children: Vec<usize>,
    pub q: f64,
    pub visits: u64,
    pub response: Option<ParsedResponse>,
    pub reward: Option<RewardBreakdown>,
    pub fully_expanded: bool,
}

/// Arena-backed search tree; node ids are creation-ordered indices.
#[derive(Debug, Clone)]
pub struct SearchTree {
    nodes: Vec<TreeNode>,
    early_stop_disabled: bool,
}

impl SearchTree {
    fn new() -> Self {
        Self {
            nodes: vec![TreeNode {
                node_id: 0,
                parent: None,
                action: None,
                depth: 0,
                children: Vec::new(),
                q: 0.0,
                visits: 0,
                response: None,
                reward: None,
                fully_expanded: false,
            }],
            early_stop_disabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the root always exists
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Action indices along the path from the root to `id`, inclusive.
    pub fn path_actions(&self, id: usize) -> Vec<usize> {
        let mut actions = Vec::new();
        let mut cursor = Some(id);
        while let Some(i) = cursor {
            if let Some(a) = self.nodes[i].action {
                actions.push(a);
            }
            cursor = self.nodes[i].parent;
        }
        actions.reverse();
        actions
    }

    /// JSON dump of every node for offline inspection.
    pub fn to_json(&self, space: &ActionSpace) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .map(|n| {
                json!({
                    "node_id": n.node_id,
                    "parent": n.parent,
                    "action_entry_id": n.action.map(|a| space.actions()[a].entry.id.clone()),
                    "depth": n.depth,
                    "Q": n.q,
                    "N": n.visits,
                    "response_answer": n.response.as_ref().and_then(|r| r.answer.clone()),
                })
            })
            .collect();
        json!({ "nodes": nodes })
    }
}

/// Exploration-adjusted node value:
/// `q + c * sqrt((ln(max(parent_visits, 1)) + 1) / (visits + epsilon))`.
pub fn uct_value<S: Scalar>(q: S, visits: u64, parent_visits: u64, c: S, epsilon: S) -> S {
    let ln_parent = S::from_u64(parent_visits.max(1)).expect("u64 fits scalar").ln();
    let denom = S::from_u64(visits).expect("u64 fits scalar") + epsilon;
    q + c * ((ln_parent + S::one()) / denom).sqrt()
}

/// One backpropagation step: the parent's value becomes the mean of its
/// running average (extended by the changed child) and its best child.
/// Inputs in `[0, 1]` stay in `[0, 1]`; the clamp absorbs rounding drift.
pub fn backprop_update<S: Scalar>(parent_q: S, parent_visits: u64, child_q: S, max_child_q: S) -> S {
    let n = S::from_u64(parent_visits).expect("u64 fits scalar");
    let running = (parent_q * n + child_q) / (n + S::one());
    let updated = (running + max_child_q) / (S::one() + S::one());
    updated.min(S::one()).max(S::zero())
}

/// Sample an index into `valid` with probability proportional to each
/// action's similarity. Deterministic given the generator state.
pub fn sample_action<R: Rng>(valid: &[&Action], rng: &mut R) -> Result<usize> {
    if valid.is_empty() {
        return Err(Error::EmptyActionSpace);
    }
    let total: f64 = valid.iter().map(|a| a.sim).sum();
    let mut draw = rng.gen::<f64>() * total;
    for (i, action) in valid.iter().enumerate() {
        draw -= action.sim;
        if draw < 0.0 {
            return Ok(i);
        }
    }
    Ok(valid.len() - 1)
}

/// Scores one simulated branch. The default implementation is the heuristic
/// reward pair; tests may substitute a fixed oracle.
pub trait BranchEvaluator {
    fn evaluate(&mut self, query: &Query, branch: &[&Action], response: &ParsedResponse) -> RewardBreakdown;
}

/// Drives one search over one query.
pub struct Searcher<'a, E: BranchEvaluator> {
    query: &'a Query,
    space: &'a ActionSpace,
    backend: &'a dyn GeneratorBackend,
    cfg: &'a SearchConfig,
    evaluator: E,
    tree: SearchTree,
    rng: ChaCha8Rng,
    /// Leaves in simulation order.
    leaves: Vec<usize>,
}

/// Run a search with the heuristic reward evaluator.
pub fn run_search(
    query: &Query,
    space: &ActionSpace,
    backend: &dyn GeneratorBackend,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    let evaluator = HeuristicEvaluator::new(backend, space, cfg.reward.clone(), cfg.template)?;
    Searcher::new(query, space, backend, cfg, evaluator)?.run()
}

impl<'a, E: BranchEvaluator> Searcher<'a, E> {
    pub fn new(
        query: &'a Query,
        space: &'a ActionSpace,
        backend: &'a dyn GeneratorBackend,
        cfg: &'a SearchConfig,
        evaluator: E,
    ) -> Result<Self> {
        cfg.validate()?;
        if space.is_empty() {
            return Err(Error::EmptyActionSpace);
        }
        if cfg.k > space.len() {
            return Err(Error::Config(format!(
                "depth {} exceeds action space size {}",
                cfg.k,
                space.len()
            )));
        }
        Ok(Self {
            query,
            space,
            backend,
            cfg,
            evaluator,
            tree: SearchTree::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            leaves: Vec::new(),
        })
    }

    pub fn tree(&self) -> &SearchTree {
        &self.tree
    }

    fn generate(&self, bundle: crate::gateway::PromptBundle, seed: u64) -> Result<String> {
        self.backend.generate(&GenRequest {
            bundle,
            seed,
            temperature: 0.0,
            max_tokens: self.cfg.gen_max_tokens,
        })
    }

    /// Initialize the root with a zero-shot response; a generation failure
    /// disables early stopping for this query.
    fn init_root(&mut self) {
        let bundle = assemble_prompt(self.query, &[], self.cfg.template, self.cfg.with_reasoning);
        let response = match self.generate(bundle, 0) {
            Ok(raw) => parse_answer(&raw, self.cfg.template),
            Err(_) => {
                self.tree.early_stop_disabled = true;
                ParsedResponse::failed("")
            }
        };
        self.tree.nodes[0].response = Some(response);
    }

    /// Actions not on the node's path and not taken by its existing children.
    fn valid_actions(&self, node_id: usize) -> Vec<usize> {
        let node = &self.tree.nodes[node_id];
        let mut used: Vec<usize> = self.tree.path_actions(node_id);
        used.extend(node.children.iter().filter_map(|&c| self.tree.nodes[c].action));
        (0..self.space.len()).filter(|a| !used.contains(a)).collect()
    }

    fn refresh_fully_expanded(&mut self, node_id: usize) {
        let width = self.tree.nodes[node_id].children.len();
        let full = width >= self.cfg.max_width || self.valid_actions(node_id).is_empty();
        self.tree.nodes[node_id].fully_expanded = full;
    }

    fn add_child(&mut self, parent: usize, action: usize) -> usize {
        let node_id = self.tree.nodes.len();
        let depth = self.tree.nodes[parent].depth + 1;
        self.tree.nodes.push(TreeNode {
            node_id,
            parent: Some(parent),
            action: Some(action),
            depth,
            children: Vec::new(),
            q: 0.0,
            visits: 0,
            response: None,
            reward: None,
            fully_expanded: false,
        });
        self.tree.nodes[parent].children.push(node_id);
        self.refresh_fully_expanded(parent);
        node_id
    }

    /// The not-fully-expanded node of depth < K with the highest
    /// exploration-adjusted value; ties go to the lowest node id. The root
    /// uses its own visit count for the parent term.
    fn select_for_expansion(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for node in &self.tree.nodes {
            if node.depth >= self.cfg.k || node.fully_expanded {
                continue;
            }
            let parent_visits = match node.parent {
                Some(p) => self.tree.nodes[p].visits,
                None => node.visits,
            };
            let score = uct_value(node.q, node.visits, parent_visits, self.cfg.c, self.cfg.epsilon);
            let better = match best {
                None => true,
                Some((_, s)) => score > s,
            };
            if better {
                best = Some((node.node_id, score));
            }
        }
        best.map(|(id, _)| id)
    }

    /// Expand a fresh chain down to depth K. Greedy descent takes the
    /// highest-similarity valid action at each level; sampled descent draws
    /// from the similarity distribution. Returns the new leaf, or `None`
    /// once nothing is expandable.
    fn expand_to_leaf(&mut self, greedy: bool) -> Option<usize> {
        loop {
            let selected = self.select_for_expansion()?;
            let mut current = selected;
            let mut dead_end = false;
            while self.tree.nodes[current].depth < self.cfg.k {
                let valid = self.valid_actions(current);
                if valid.is_empty() {
                    // exhausted mid-descent: mark and restart within the same rollout
                    self.tree.nodes[current].fully_expanded = true;
                    dead_end = true;
                    break;
                }
                let actions = self.space.actions();
                let action = if greedy {
                    *valid
                        .iter()
                        .max_by(|&&a, &&b| {
                            actions[a]
                                .sim
                                .partial_cmp(&actions[b].sim)
                                .expect("finite similarity")
                                .then_with(|| actions[b].entry.id.cmp(&actions[a].entry.id))
                        })
                        .expect("nonempty valid set")
                } else {
                    let refs: Vec<&Action> = valid.iter().map(|&a| &actions[a]).collect();
                    let picked = sample_action(&refs, &mut self.rng).expect("nonempty valid set");
                    valid[picked]
                };
                current = self.add_child(current, action);
            }
            if !dead_end {
                return Some(current);
            }
        }
    }

    /// Simulate the branch ending at `leaf`: assemble the K-shot prompt in
    /// root-to-leaf order, generate, score, and backpropagate. An unparsable
    /// or failed response yields reward zero but is still propagated.
    fn simulate(&mut self, leaf: usize) {
        let path = self.tree.path_actions(leaf);
        let examples: Vec<KbEntry> = path
            .iter()
            .map(|&a| self.space.actions()[a].entry.clone())
            .collect();
        let bundle = assemble_prompt(self.query, &examples, self.cfg.template, self.cfg.with_reasoning);
        let response = match self.generate(bundle, 0) {
            Ok(raw) => parse_answer(&raw, self.cfg.template),
            Err(_) => ParsedResponse::failed(""),
        };
        let reward = if response.parse_ok {
            let actions = self.space.actions();
            let branch: Vec<&Action> = path.iter().map(|&a| &actions[a]).collect();
            self.evaluator.evaluate(self.query, &branch, &response)
        } else {
            RewardBreakdown::zero(&self.cfg.reward)
        };
        let q = reward.q_combined;
        self.tree.nodes[leaf].response = Some(response);
        self.tree.nodes[leaf].reward = Some(reward);
        self.backpropagate(leaf, q);
        self.leaves.push(leaf);
    }

    /// Set the leaf value, bump its visit count, then update ancestors
    /// bottom-up with [`backprop_update`].
    fn backpropagate(&mut self, leaf: usize, q: f64) {
        self.tree.nodes[leaf].q = q;
        self.tree.nodes[leaf].visits += 1;
        let mut child = leaf;
        while let Some(parent) = self.tree.nodes[child].parent {
            let child_q = self.tree.nodes[child].q;
            let max_child_q = self.tree.nodes[parent]
                .children
                .iter()
                .map(|&c| self.tree.nodes[c].q)
                .fold(f64::NEG_INFINITY, f64::max);
            let node = &self.tree.nodes[parent];
            let updated = backprop_update(node.q, node.visits, child_q, max_child_q);
            self.tree.nodes[parent].q = updated;
            self.tree.nodes[parent].visits += 1;
            child = parent;
        }
    }

    fn early_stop_fires(&self, greedy_leaf: usize) -> bool {
        if !self.cfg.early_stop || self.tree.early_stop_disabled {
            return false;
        }
        let root_answer = self.tree.nodes[0].response.as_ref().and_then(|r| r.answer.as_deref());
        let leaf_answer = self.tree.nodes[greedy_leaf]
            .response
            .as_ref()
            .and_then(|r| r.answer.as_deref());
        match (root_answer, leaf_answer) {
            (Some(a), Some(b)) => canonicalize_answer(a) == canonicalize_answer(b),
            _ => false,
        }
    }

    fn result(&self, rollouts_used: usize, termination: Termination) -> SearchResult {
        let &winner = self
            .leaves
            .iter()
            .reduce(|best, leaf| {
                if self.tree.nodes[*leaf].q > self.tree.nodes[*best].q {
                    leaf
                } else {
                    best
                }
            })
            .expect("at least one simulated leaf");
        let node = &self.tree.nodes[winner];
        SearchResult {
            branch: self
                .tree
                .path_actions(winner)
                .into_iter()
                .map(|a| self.space.actions()[a].clone())
                .collect(),
            response: node.response.clone().expect("simulated leaf has a response"),
            reward: node.reward.clone().expect("simulated leaf has a reward"),
            rollouts_used,
            termination,
            tree_size: self.tree.len(),
        }
    }

    /// Execute the full search: zero-shot root, the greedy first rollout,
    /// then similarity-sampled rollouts until a termination condition fires.
    pub fn run(&mut self) -> Result<SearchResult> {
        self.init_root();
        let greedy_leaf = self
            .expand_to_leaf(true)
            .ok_or(Error::EmptyActionSpace)?;
        self.simulate(greedy_leaf);
        let mut rollouts_used = 1;
        if self.early_stop_fires(greedy_leaf) {
            return Ok(self.result(rollouts_used, Termination::EarlyStop));
        }
        while rollouts_used < self.cfg.rollouts {
            let Some(leaf) = self.expand_to_leaf(false) else {
                return Ok(self.result(rollouts_used, Termination::Exhausted));
            };
            self.simulate(leaf);
            rollouts_used += 1;
        }
        Ok(self.result(rollouts_used, Termination::RolloutCap))
    }
}
