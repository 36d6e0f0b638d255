//! Scene ⇄ rule-sequence codec.
//!
//! A scene is encoded as a fixed-length sequence of rule indices plus one
//! 8-vector of attributes per rule: relative translation, sin/cos of the
//! relative yaw, and the emitted box sizes. Parsing is deterministic: object
//! categories follow grammar precedence, repeated instances are sorted by
//! the counter-clockwise angle around their parent, and every object is
//! owned by the candidate rule with the smallest grammar index. Decoding
//! walks the derivation and chains relative poses from the root.
//!
//! The same stack discipline drives [`valid_mask`] and
//! [`constrained_decode`], which turn arbitrary real logits into a valid
//! derivation; that totality is what lets a decoder guarantee well-formed
//! scenes.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
// Resolves f64 math when the crate is built without std.
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::geom::{wrap_angle, BoxShape, Pose, TAU};
use crate::grammar::{Grammar, NonTerminal, RuleKind, TerminalId};
use crate::scene::{ObjectInstance, Scene, Vocabulary};

/// Default sequence length: enough for the default 15-object scene budget
/// (one emitting rule per object, one `None` per opened non-terminal, the
/// root rule and the final `SCENE -> None`) with headroom.
pub const DEFAULT_T_MAX: usize = 40;

/// Number of attribute channels per rule.
pub const ATTR_DIM: usize = 8;

/// Fixed-length rule sequence with per-rule attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSequence {
    /// Rule indices, padded with the grammar's padding index.
    pub rule_ids: Vec<usize>,
    /// Rows of `[dx, dy, dz, sin yaw, cos yaw, w, d, h]`; all-zero for
    /// `None` and padding rules.
    pub attributes: Vec<[f64; ATTR_DIM]>,
}

impl RuleSequence {
    pub fn len(&self) -> usize {
        self.rule_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rule_ids.is_empty()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("categories not representable in the grammar: {0:?}")]
    Unrepresentable(Vec<String>),
    #[error("categories present but not derivable in this scene: {0:?}")]
    Underivable(Vec<String>),
    #[error("cyclic ownership among categories: {0:?}")]
    OwnershipCycle(Vec<String>),
    #[error("derivation needs {needed} steps but the sequence length is {t_max}")]
    Overflow { needed: usize, t_max: usize },
    #[error("invalid sequence at step {step}: {reason}")]
    InvalidSequence { step: usize, reason: String },
}

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

/// Derivation state: the pending non-terminal stack (top = leftmost) plus
/// the number of steps still available. The budget is what lets the mask
/// forbid rules that could not finish within the sequence length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskState {
    stack: Vec<NonTerminal>,
    remaining: usize,
}

impl MaskState {
    pub fn new(t_max: usize) -> Self {
        MaskState {
            stack: alloc::vec![NonTerminal::Start],
            remaining: t_max,
        }
    }

    pub fn top(&self) -> Option<NonTerminal> {
        self.stack.last().copied()
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    pub fn is_done(&self) -> bool {
        self.stack.is_empty()
    }

    /// Applies one symbol (a rule index or the padding index).
    pub fn apply(&mut self, grammar: &Grammar, idx: usize) -> Result<(), CodecError> {
        let step_err = |reason: String| CodecError::InvalidSequence { step: 0, reason };
        if self.remaining == 0 {
            return Err(step_err("no steps remaining".to_string()));
        }
        if idx == grammar.padding_index() {
            if !self.stack.is_empty() {
                return Err(step_err("padding with a non-empty stack".to_string()));
            }
        } else {
            let rule = grammar
                .rules()
                .get(idx)
                .ok_or_else(|| step_err(alloc::format!("rule index {idx} out of range")))?;
            let top = self
                .stack
                .last()
                .ok_or_else(|| step_err("rule applied to an empty stack".to_string()))?;
            if rule.lhs != *top {
                return Err(step_err(alloc::format!(
                    "rule {} does not expand the pending non-terminal {}",
                    grammar.rule_text(idx),
                    grammar.nonterminal_name(*top),
                )));
            }
            self.stack.pop();
            let pushed: Vec<NonTerminal> = rule.pushed().collect();
            for nt in pushed.into_iter().rev() {
                self.stack.push(nt);
            }
        }
        self.remaining -= 1;
        Ok(())
    }
}

/// One bit per one-hot symbol: whether the symbol may be produced in the
/// given state. A rule is allowed when its left-hand side matches the stack
/// top and the derivation can still terminate within the remaining budget;
/// with an empty stack only the padding index is allowed.
pub fn valid_mask(state: &MaskState, grammar: &Grammar) -> Vec<bool> {
    let mut mask = alloc::vec![false; grammar.n_symbols()];
    match state.top() {
        None => {
            if state.remaining > 0 {
                mask[grammar.padding_index()] = true;
            }
        }
        Some(top) => {
            if state.remaining == 0 {
                return mask;
            }
            let depth = state.depth();
            for (i, rule) in grammar.rules().iter().enumerate() {
                if rule.lhs != top {
                    continue;
                }
                // Finishing needs one step per pending non-terminal, so the
                // post-application depth must fit in the remaining budget.
                let new_depth = depth - 1 + rule.pushed().count();
                if new_depth <= state.remaining - 1 {
                    mask[i] = true;
                }
            }
        }
    }
    mask
}

/// Turns raw logit and attribute rows into a valid [`RuleSequence`] by
/// iteratively masking and taking the arg-max over unmasked entries. Total:
/// any real (even non-finite) input yields a complete valid derivation.
pub fn constrained_decode(
    logits: &[Vec<f64>],
    attrs: &[[f64; ATTR_DIM]],
    grammar: &Grammar,
) -> RuleSequence {
    assert_eq!(logits.len(), attrs.len());
    let t_max = logits.len();
    let mut state = MaskState::new(t_max);
    let mut rule_ids = Vec::with_capacity(t_max);
    let mut rows = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let mask = valid_mask(&state, grammar);
        let mut best: Option<(usize, f64)> = None;
        for (i, (&on, &v)) in mask.iter().zip(logits[t].iter()).enumerate() {
            if !on {
                continue;
            }
            let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
            let better = match best {
                None => true,
                Some((_, bv)) => v > bv,
            };
            if better {
                best = Some((i, v));
            }
        }
        let (idx, _) = best.expect("mask always leaves at least one symbol");
        let row = if idx != grammar.padding_index()
            && grammar.rule(idx).kind != RuleKind::Close
        {
            normalize_yaw_channels(attrs[t])
        } else {
            [0.0; ATTR_DIM]
        };
        state.apply(grammar, idx).expect("masked symbol applies");
        rule_ids.push(idx);
        rows.push(row);
    }
    RuleSequence {
        rule_ids,
        attributes: rows,
    }
}

/// Projects the (sin, cos) channels onto the unit circle so decoded rows
/// satisfy the sequence invariant; degenerate rows get yaw 0.
fn normalize_yaw_channels(mut row: [f64; ATTR_DIM]) -> [f64; ATTR_DIM] {
    let (s, c) = (row[3], row[4]);
    let (s, c) = (
        if s.is_finite() { s } else { 0.0 },
        if c.is_finite() { c } else { 0.0 },
    );
    let n = (s * s + c * c).sqrt();
    if n > 1e-12 {
        row[3] = s / n;
        row[4] = c / n;
    } else {
        row[3] = 0.0;
        row[4] = 1.0;
    }
    for v in row.iter_mut() {
        if !v.is_finite() {
            *v = 0.0;
        }
    }
    row
}

/// Checks the full sequence validity invariant: a leftmost derivation that
/// empties the stack before padding, zero rows on `None`/padding rules, and
/// unit-norm yaw channels on emitting rows.
pub fn validate_sequence(seq: &RuleSequence, grammar: &Grammar) -> Result<(), CodecError> {
    if seq.rule_ids.len() != seq.attributes.len() {
        return Err(CodecError::InvalidSequence {
            step: 0,
            reason: "rule and attribute lengths differ".to_string(),
        });
    }
    let mut state = MaskState::new(seq.len());
    for (step, (&idx, row)) in seq.rule_ids.iter().zip(seq.attributes.iter()).enumerate() {
        state.apply(grammar, idx).map_err(|e| match e {
            CodecError::InvalidSequence { reason, .. } => CodecError::InvalidSequence { step, reason },
            other => other,
        })?;
        let emitting =
            idx != grammar.padding_index() && grammar.rule(idx).kind != RuleKind::Close;
        if !emitting {
            if row.iter().any(|&v| v != 0.0) {
                return Err(CodecError::InvalidSequence {
                    step,
                    reason: "non-zero attributes on a None or padding rule".to_string(),
                });
            }
        } else {
            let unit = row[3] * row[3] + row[4] * row[4];
            if (unit - 1.0).abs() > 1e-6 {
                return Err(CodecError::InvalidSequence {
                    step,
                    reason: "yaw channels are not on the unit circle".to_string(),
                });
            }
        }
    }
    if !state.is_done() {
        return Err(CodecError::InvalidSequence {
            step: seq.len(),
            reason: "derivation is incomplete".to_string(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Scene -> derivation plan
// ---------------------------------------------------------------------------

/// Counter-clockwise angle of `child` around `parent`, measured from the
/// parent's yaw direction, in `[0, 2*pi)`.
fn sweep_angle(parent: &Pose, child: &Pose) -> f64 {
    let dx = child.center[0] - parent.center[0];
    let dy = child.center[1] - parent.center[1];
    if dx == 0.0 && dy == 0.0 {
        return 0.0;
    }
    let mut a = dy.atan2(dx) - parent.yaw;
    a %= TAU;
    if a < 0.0 {
        a += TAU;
    }
    a
}

fn horizontal_dist(a: &Pose, b: &Pose) -> f64 {
    let dx = a.center[0] - b.center[0];
    let dy = a.center[1] - b.center[1];
    (dx * dx + dy * dy).sqrt()
}

/// Sort key making instance order total and deterministic.
fn angle_key(parent: &Pose, child: &ObjectInstance) -> (f64, f64, [f64; 3]) {
    (
        sweep_angle(parent, &child.pose),
        horizontal_dist(parent, &child.pose),
        child.pose.center,
    )
}

fn sort_by_angle(parent: &Pose, objects: &[ObjectInstance], idxs: &mut [usize]) {
    idxs.sort_by(|&a, &b| {
        let ka = angle_key(parent, &objects[a]);
        let kb = angle_key(parent, &objects[b]);
        ka.partial_cmp(&kb).unwrap_or(core::cmp::Ordering::Equal)
    });
}

/// A child group under one parent instance: all same-category instances the
/// parent owns, introduced by `rule` and chained by the category's
/// self-repeat rule when one exists.
struct Group {
    rule: usize,
    terminal: TerminalId,
    instances: Vec<usize>,
}

struct Plan {
    /// Groups directly under the room, in intro-rule order.
    top: Vec<Group>,
    /// Child groups per object index, in owner-rule order.
    children: Vec<Vec<Group>>,
}

/// Resolves terminal ids, owner rules and instance-to-parent assignment for
/// one scene. Fails when a category has no rules at all, cannot be derived
/// with the anchors present in this scene, or ownership is cyclic.
fn build_plan(
    scene: &Scene,
    vocab: &Vocabulary,
    grammar: &Grammar,
) -> Result<Plan, CodecError> {
    let n = scene.objects.len();
    // Terminal id per object; collect categories the grammar cannot emit.
    let mut term_of = alloc::vec![0usize; n];
    let mut missing: Vec<String> = Vec::new();
    for (i, obj) in scene.objects.iter().enumerate() {
        let name = vocab.name(obj.category);
        match grammar.terminal_id(name) {
            Some(t) if !grammar.introducers(t).is_empty() => term_of[i] = t,
            _ => {
                if !missing.iter().any(|m| m == name) {
                    missing.push(name.to_string());
                }
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(CodecError::Unrepresentable(missing));
    }

    let mut present: Vec<TerminalId> = term_of.clone();
    present.sort_unstable();
    present.dedup();

    // Placeable fixpoint: a terminal can be derived in this scene when some
    // introducing rule (excluding its own self-repeat) hangs off SCENE or
    // off a placeable anchor that is present.
    let mut placeable: Vec<TerminalId> = Vec::new();
    loop {
        let mut changed = false;
        for &t in &present {
            if placeable.contains(&t) {
                continue;
            }
            let ok = grammar.introducers(t).iter().any(|&ri| {
                let rule = grammar.rule(ri);
                match rule.lhs {
                    NonTerminal::Scene => true,
                    NonTerminal::Anchor(a) => {
                        a != t && present.contains(&a) && placeable.contains(&a)
                    }
                    NonTerminal::Start => false,
                }
            });
            if ok {
                placeable.push(t);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let stranded: Vec<String> = present
        .iter()
        .filter(|t| !placeable.contains(t))
        .map(|&t| grammar.terminal_name(t).to_string())
        .collect();
    if !stranded.is_empty() {
        return Err(CodecError::Underivable(stranded));
    }

    // Owner rule per terminal: smallest-index introducer whose host exists
    // in this scene. The self-repeat rule never introduces a group.
    let mut owner_rule: Vec<(TerminalId, usize)> = Vec::new();
    for &t in &present {
        let ri = grammar
            .introducers(t)
            .into_iter()
            .find(|&ri| match grammar.rule(ri).lhs {
                NonTerminal::Scene => true,
                NonTerminal::Anchor(a) => a != t && present.contains(&a),
                NonTerminal::Start => false,
            })
            .expect("placeable terminal has an owner");
        owner_rule.push((t, ri));
    }
    let owner_of = |t: TerminalId| -> usize {
        owner_rule.iter().find(|(x, _)| *x == t).unwrap().1
    };

    // Topological order over the owner relation so parents are assigned
    // before their children.
    let mut order: Vec<TerminalId> = Vec::new();
    while order.len() < present.len() {
        let mut advanced = false;
        for &t in &present {
            if order.contains(&t) {
                continue;
            }
            let ready = match grammar.rule(owner_of(t)).lhs {
                NonTerminal::Scene => true,
                NonTerminal::Anchor(a) => order.contains(&a),
                NonTerminal::Start => false,
            };
            if ready {
                order.push(t);
                advanced = true;
            }
        }
        if !advanced {
            let cycle: Vec<String> = present
                .iter()
                .filter(|t| !order.contains(t))
                .map(|&t| grammar.terminal_name(t).to_string())
                .collect();
            return Err(CodecError::OwnershipCycle(cycle));
        }
    }

    // Assign instances: top-level terminals group under the room; nested
    // ones attach to the horizontally nearest parent instance.
    let mut top: Vec<Group> = Vec::new();
    let mut children: Vec<Vec<Group>> = alloc::vec![];
    children.resize_with(n, Vec::new);
    let mut placed: Vec<usize> = Vec::new(); // global placement order per terminal pass

    for &t in &order {
        let rule_idx = owner_of(t);
        let rule = grammar.rule(rule_idx);
        let mut insts: Vec<usize> =
            (0..n).filter(|&i| term_of[i] == t).collect();
        match rule.lhs {
            NonTerminal::Scene => {
                sort_by_angle(&scene.room.pose, &scene.objects, &mut insts);
                push_groups(&mut top, grammar, t, rule_idx, insts, &mut placed);
            }
            NonTerminal::Anchor(a) => {
                // Parents in their placement order; ties go to the earlier one.
                let parents: Vec<usize> = placed
                    .iter()
                    .copied()
                    .filter(|&i| term_of[i] == a)
                    .collect();
                let mut per_parent: Vec<Vec<usize>> = alloc::vec![Vec::new(); parents.len()];
                for i in insts {
                    let mut best = 0usize;
                    let mut best_d = f64::INFINITY;
                    for (k, &p) in parents.iter().enumerate() {
                        let d = horizontal_dist(&scene.objects[p].pose, &scene.objects[i].pose);
                        if d < best_d {
                            best_d = d;
                            best = k;
                        }
                    }
                    per_parent[best].push(i);
                }
                for (k, mut group_insts) in per_parent.into_iter().enumerate() {
                    if group_insts.is_empty() {
                        continue;
                    }
                    let parent = parents[k];
                    sort_by_angle(&scene.objects[parent].pose, &scene.objects, &mut group_insts);
                    push_groups(
                        &mut children[parent],
                        grammar,
                        t,
                        rule_idx,
                        group_insts,
                        &mut placed,
                    );
                }
            }
            NonTerminal::Start => unreachable!("start never owns objects"),
        }
    }
    top.sort_by_key(|g| g.rule);
    for ch in children.iter_mut() {
        ch.sort_by_key(|g| g.rule);
    }
    Ok(Plan { top, children })
}

/// Splits an instance list into groups. Anchors with a self-repeat rule
/// chain all instances in one group; otherwise each instance is introduced
/// separately.
fn push_groups(
    out: &mut Vec<Group>,
    grammar: &Grammar,
    t: TerminalId,
    rule_idx: usize,
    insts: Vec<usize>,
    placed: &mut Vec<usize>,
) {
    placed.extend(insts.iter().copied());
    let chains = self_repeat_rule(grammar, t).is_some();
    let opens_nt = grammar
        .rule(rule_idx)
        .pushed()
        .any(|nt| nt == NonTerminal::Anchor(t));
    if (chains && opens_nt) || insts.len() <= 1 {
        out.push(Group {
            rule: rule_idx,
            terminal: t,
            instances: insts,
        });
    } else {
        for i in insts {
            out.push(Group {
                rule: rule_idx,
                terminal: t,
                instances: alloc::vec![i],
            });
        }
    }
}

fn self_repeat_rule(grammar: &Grammar, t: TerminalId) -> Option<usize> {
    grammar
        .rules()
        .iter()
        .position(|r| r.lhs == NonTerminal::Anchor(t) && r.emitted() == Some(t) && r.rhs.len() == 2)
}

fn close_rule(grammar: &Grammar, nt: NonTerminal) -> usize {
    grammar
        .rules()
        .iter()
        .position(|r| r.kind == RuleKind::Close && r.lhs == nt)
        .expect("validated grammar has a close rule per non-terminal")
}

fn attr_row(rel: &Pose, shape: &BoxShape) -> [f64; ATTR_DIM] {
    [
        rel.center[0],
        rel.center[1],
        rel.center[2],
        rel.yaw.sin(),
        rel.yaw.cos(),
        shape.size[0],
        shape.size[1],
        shape.size[2],
    ]
}

// ---------------------------------------------------------------------------
// parse / canonical_order / unparse
// ---------------------------------------------------------------------------

struct Emitter<'a> {
    scene: &'a Scene,
    grammar: &'a Grammar,
    plan: &'a Plan,
    steps: Vec<(usize, [f64; ATTR_DIM])>,
    emitted: Vec<usize>,
}

impl<'a> Emitter<'a> {
    /// Emits one group: the introducing rule for the first instance,
    /// self-repeats for the rest, children interleaved per instance, and the
    /// close rule when the group opened a non-terminal.
    fn group(&mut self, group: &Group, parent_pose: &Pose) {
        let rule = self.grammar.rule(group.rule);
        let opens = rule
            .pushed()
            .any(|nt| nt == NonTerminal::Anchor(group.terminal));
        let mut prev_pose = *parent_pose;
        for (k, &inst) in group.instances.iter().enumerate() {
            let obj = &self.scene.objects[inst];
            let rule_idx = if k == 0 {
                group.rule
            } else {
                self_repeat_rule(self.grammar, group.terminal).expect("chained group")
            };
            let rel = prev_pose.relative_to(&obj.pose);
            self.steps.push((rule_idx, attr_row(&rel, &obj.shape)));
            self.emitted.push(inst);
            if opens {
                prev_pose = obj.pose;
                let child_groups: Vec<usize> = (0..self.plan.children[inst].len()).collect();
                for g in child_groups {
                    let child = &self.plan.children[inst][g];
                    let child_rule = self.grammar.rule(child.rule);
                    if child_rule.companion().is_some() {
                        self.group(child, &obj.pose);
                    } else {
                        // Plain children repeat the same rule, all relative
                        // to this instance.
                        for &ci in &child.instances {
                            let cobj = &self.scene.objects[ci];
                            let rel = obj.pose.relative_to(&cobj.pose);
                            self.steps.push((child.rule, attr_row(&rel, &cobj.shape)));
                            self.emitted.push(ci);
                        }
                    }
                }
            }
        }
        if opens {
            let close = close_rule(self.grammar, NonTerminal::Anchor(group.terminal));
            self.steps.push((close, [0.0; ATTR_DIM]));
        }
    }
}

fn derive(
    scene: &Scene,
    vocab: &Vocabulary,
    grammar: &Grammar,
) -> Result<(Vec<(usize, [f64; ATTR_DIM])>, Vec<usize>), CodecError> {
    let plan = build_plan(scene, vocab, grammar)?;
    let root = grammar
        .rules_with_lhs(NonTerminal::Start)
        .next()
        .expect("validated grammar has a root rule");
    let mut em = Emitter {
        scene,
        grammar,
        plan: &plan,
        steps: alloc::vec![(root, attr_row(&scene.room.pose, &scene.room.shape))],
        emitted: Vec::new(),
    };
    for g in &plan.top {
        em.group(g, &scene.room.pose);
    }
    em.steps
        .push((close_rule(grammar, NonTerminal::Scene), [0.0; ATTR_DIM]));
    Ok((em.steps, em.emitted))
}

/// Reorders a scene into its canonical parse order: grammar precedence
/// across categories, counter-clockwise sweep around the parent within a
/// category.
pub fn canonical_order(
    scene: &Scene,
    vocab: &Vocabulary,
    grammar: &Grammar,
) -> Result<Scene, CodecError> {
    let (_, emitted) = derive(scene, vocab, grammar)?;
    let objects = emitted
        .into_iter()
        .map(|i| scene.objects[i])
        .collect::<Vec<_>>();
    Ok(Scene {
        room: scene.room,
        objects,
    })
}

/// Parses a scene into its unique attributed rule sequence of length
/// `t_max`.
pub fn parse(
    scene: &Scene,
    vocab: &Vocabulary,
    grammar: &Grammar,
    t_max: usize,
) -> Result<RuleSequence, CodecError> {
    let (steps, _) = derive(scene, vocab, grammar)?;
    if steps.len() > t_max {
        return Err(CodecError::Overflow {
            needed: steps.len(),
            t_max,
        });
    }
    let mut rule_ids = Vec::with_capacity(t_max);
    let mut attributes = Vec::with_capacity(t_max);
    for (idx, row) in steps {
        rule_ids.push(idx);
        attributes.push(row);
    }
    while rule_ids.len() < t_max {
        rule_ids.push(grammar.padding_index());
        attributes.push([0.0; ATTR_DIM]);
    }
    Ok(RuleSequence {
        rule_ids,
        attributes,
    })
}

/// Rebuilds a scene from a rule sequence by chaining relative poses along
/// the derivation. Returns the room plus objects in derivation order. The
/// vocabulary is used to map grammar terminals back to category ids; any
/// terminal missing from it is an error.
pub fn unparse(
    seq: &RuleSequence,
    vocab: &Vocabulary,
    grammar: &Grammar,
) -> Result<Scene, CodecError> {
    struct Frame {
        nt: NonTerminal,
        cur: Pose,
    }
    let invalid = |step: usize, reason: &str| CodecError::InvalidSequence {
        step,
        reason: reason.to_string(),
    };
    if seq.rule_ids.len() != seq.attributes.len() {
        return Err(invalid(0, "rule and attribute lengths differ"));
    }
    let mut stack: Vec<Frame> = alloc::vec![Frame {
        nt: NonTerminal::Start,
        cur: Pose::identity(),
    }];
    let mut room: Option<ObjectInstance> = None;
    let mut objects: Vec<ObjectInstance> = Vec::new();

    for (step, (&idx, row)) in seq.rule_ids.iter().zip(seq.attributes.iter()).enumerate() {
        if idx == grammar.padding_index() {
            if !stack.is_empty() {
                return Err(invalid(step, "padding before the derivation finished"));
            }
            continue;
        }
        if idx >= grammar.n_rules() {
            return Err(invalid(step, "rule index out of range"));
        }
        let rule = grammar.rule(idx);
        let frame = stack
            .pop()
            .ok_or_else(|| invalid(step, "rule applied after the derivation finished"))?;
        if rule.lhs != frame.nt {
            return Err(invalid(
                step,
                "rule does not expand the pending non-terminal",
            ));
        }
        match rule.kind {
            RuleKind::Close => {
                // Nothing emitted; frame is simply dropped.
            }
            _ => {
                // atan2(sin, cos) recovers the relative yaw.
                let rel = Pose::new([row[0], row[1], row[2]], wrap_angle(row[3].atan2(row[4])));
                let shape = BoxShape::new([row[5], row[6], row[7]])
                    .map_err(|_| invalid(step, "non-positive box size"))?;
                let term = rule.emitted().expect("emitting rule has a terminal");
                let name = grammar.terminal_name(term);
                match rule.kind {
                    RuleKind::Root => {
                        let pose = rel;
                        room = Some(ObjectInstance {
                            category: 0,
                            pose,
                            shape,
                        });
                        stack.push(Frame {
                            nt: NonTerminal::Scene,
                            cur: pose,
                        });
                    }
                    RuleKind::Intro | RuleKind::Emit => {
                        let abs = frame.cur.compose(&rel);
                        let category = vocab
                            .id(name)
                            .ok_or_else(|| invalid(step, "terminal missing from vocabulary"))?;
                        objects.push(ObjectInstance {
                            category,
                            pose: abs,
                            shape,
                        });
                        // The non-terminal of the emitted terminal chains from
                        // the new instance (self-repeats move the chain
                        // forward); everything else keeps the current parent.
                        let tail: Vec<Frame> = rule
                            .pushed()
                            .map(|nt| Frame {
                                nt,
                                cur: if nt == NonTerminal::Anchor(term) {
                                    abs
                                } else {
                                    frame.cur
                                },
                            })
                            .collect();
                        // Push right-to-left so the leftmost symbol ends on top.
                        for f in tail.into_iter().rev() {
                            stack.push(f);
                        }
                    }
                    RuleKind::Close => unreachable!(),
                }
            }
        }
    }
    if !stack.is_empty() {
        return Err(invalid(seq.len(), "derivation is incomplete"));
    }
    let room = room.ok_or_else(|| invalid(0, "sequence never emitted a room"))?;
    Scene::new(room, objects).map_err(|_| invalid(0, "decoded scene is malformed"))
}

/// Drops objects the grammar cannot express in this scene (categories with
/// no rules, or instances whose owners are absent). Returns the clipped
/// scene and the dropped category names.
pub fn clip_to_language(
    scene: &Scene,
    vocab: &Vocabulary,
    grammar: &Grammar,
) -> (Scene, Vec<String>) {
    let mut dropped: Vec<String> = Vec::new();
    let mut keep = scene.clone();
    loop {
        match build_plan(&keep, vocab, grammar) {
            Ok(_) => break,
            Err(CodecError::Unrepresentable(names))
            | Err(CodecError::Underivable(names))
            | Err(CodecError::OwnershipCycle(names)) => {
                keep.objects.retain(|o| {
                    let name = vocab.name(o.category);
                    !names.iter().any(|n| n == name)
                });
                for n in names {
                    if !dropped.contains(&n) {
                        dropped.push(n);
                    }
                }
            }
            Err(_) => break,
        }
    }
    dropped.sort();
    (keep, dropped)
}
