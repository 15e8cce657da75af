//! Deterministic synthetic multi-modal action-planning environment.
//!
//! The world is an 8x8 grid. Every cell has two depth slots: a front slot
//! and a back slot. A back object may exist only behind a front object and
//! is hidden at the default viewpoint 0; viewpoints >= 1 reveal it. Tasks
//! come in three kinds: placing an object adjacent to a reference,
//! identifying all objects matching an attribute conjunction, and counting
//! objects matching a single attribute (including occluded ones).

mod generate;

pub use generate::generate_scenario;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::backends::{Response, ResponseBody};
use crate::engine::ContextState;
use crate::error::DomainError;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Grid side length.
pub const GRID: usize = 8;
/// Per-slot symbol vector: one-hot color(5) | shape(3) | material(2) | presence(1).
pub const CELL_DIM: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Gray,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Shape {
    Cube,
    Sphere,
    Cylinder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Material {
    Metallic,
    Rubber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Depth {
    Front,
    Back,
}

pub const COLORS: [Color; 5] = [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::Gray];
pub const SHAPES: [Shape; 3] = [Shape::Cube, Shape::Sphere, Shape::Cylinder];
pub const MATERIALS: [Material; 2] = [Material::Metallic, Material::Rubber];

impl Color {
    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Gray => "gray",
        }
    }

    fn index(self) -> usize {
        match self {
            Color::Red => 0,
            Color::Green => 1,
            Color::Blue => 2,
            Color::Yellow => 3,
            Color::Gray => 4,
        }
    }
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Sphere => "sphere",
            Shape::Cylinder => "cylinder",
        }
    }

    /// Adjective form used in instruction templates.
    pub fn adjective(self) -> &'static str {
        match self {
            Shape::Cube => "cubic",
            Shape::Sphere => "spherical",
            Shape::Cylinder => "cylindrical",
        }
    }

    fn index(self) -> usize {
        match self {
            Shape::Cube => 0,
            Shape::Sphere => 1,
            Shape::Cylinder => 2,
        }
    }
}

impl Material {
    pub fn name(self) -> &'static str {
        match self {
            Material::Metallic => "metallic",
            Material::Rubber => "rubber",
        }
    }

    fn index(self) -> usize {
        match self {
            Material::Metallic => 0,
            Material::Rubber => 1,
        }
    }
}

/// The visible attribute triple of an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Attributes {
    pub color: Color,
    pub shape: Shape,
    pub material: Material,
}

impl Attributes {
    pub fn satisfies(&self, predicate: &AttributePredicate) -> bool {
        match predicate {
            AttributePredicate::Color(c) => self.color == *c,
            AttributePredicate::Shape(s) => self.shape == *s,
            AttributePredicate::Material(m) => self.material == *m,
        }
    }

    /// True when the attribute triple matches every set constraint.
    pub fn matches_conjunction(
        &self,
        color: Option<Color>,
        shape: Option<Shape>,
        material: Option<Material>,
    ) -> bool {
        color.is_none_or(|c| self.color == c)
            && shape.is_none_or(|s| self.shape == s)
            && material.is_none_or(|m| self.material == m)
    }
}

/// A ground-truth object in the scene.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ObjectSpec {
    pub id: u32,
    pub color: Color,
    pub shape: Shape,
    pub material: Material,
    /// (row, col), both in 0..8.
    pub pos: (usize, usize),
    pub depth: Depth,
}

impl ObjectSpec {
    pub fn attributes(&self) -> Attributes {
        Attributes { color: self.color, shape: self.shape, material: self.material }
    }
}

/// Ground-truth world state. The grid size is fixed at 8x8 ([`GRID`]).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Scene {
    pub objects: Vec<ObjectSpec>,
}

impl Scene {
    pub fn object(&self, id: u32) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    fn slot_occupied(&self, pos: (usize, usize), depth: Depth, exclude_id: u32) -> bool {
        self.objects
            .iter()
            .any(|o| o.id != exclude_id && o.pos == pos && o.depth == depth)
    }

    /// Checks the structural invariants: positions in bounds, unique ids, at
    /// most one object per depth slot, and back objects only behind a front
    /// object.
    pub fn validate(&self) -> Result<(), String> {
        for o in &self.objects {
            if o.pos.0 >= GRID || o.pos.1 >= GRID {
                return Err(format!("object {} out of bounds at {:?}", o.id, o.pos));
            }
        }
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if a.id == b.id {
                    return Err(format!("duplicate id {}", a.id));
                }
                if a.pos == b.pos && a.depth == b.depth {
                    return Err(format!("two objects in slot {:?}/{:?}", a.pos, a.depth));
                }
            }
        }
        for o in &self.objects {
            if o.depth == Depth::Back && !self.slot_occupied(o.pos, Depth::Front, o.id) {
                return Err(format!("back object {} has no front occluder", o.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub fn name(self) -> &'static str {
        match self {
            Relation::LeftOf => "left_of",
            Relation::RightOf => "right_of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    pub fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "to the left of",
            Relation::RightOf => "to the right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    /// The unique cell satisfying the relation with respect to `reference`.
    /// Returns `None` when that cell falls outside the grid.
    pub fn target_cell(self, reference: (usize, usize)) -> Option<(usize, usize)> {
        let (r, c) = (reference.0 as i32, reference.1 as i32);
        let (tr, tc) = match self {
            Relation::LeftOf => (r, c - 1),
            Relation::RightOf => (r, c + 1),
            Relation::Above => (r - 1, c),
            Relation::Below => (r + 1, c),
        };
        in_bounds(tr, tc).then_some((tr as usize, tc as usize))
    }

    /// True iff `subject` sits exactly in the relation's target cell.
    pub fn satisfied(self, subject: (usize, usize), reference: (usize, usize)) -> bool {
        self.target_cell(reference) == Some(subject)
    }
}

fn in_bounds(row: i32, col: i32) -> bool {
    (0..GRID as i32).contains(&row) && (0..GRID as i32).contains(&col)
}

/// A single-attribute predicate, used for counting goals and as one leg of
/// an identification conjunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum AttributePredicate {
    Color(Color),
    Shape(Shape),
    Material(Material),
}

impl AttributePredicate {
    /// Adjective form used in instruction templates.
    pub fn adjective(&self) -> &'static str {
        match self {
            AttributePredicate::Color(c) => c.name(),
            AttributePredicate::Shape(s) => s.adjective(),
            AttributePredicate::Material(m) => m.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Goal {
    Place {
        subject_id: u32,
        relation: Relation,
        reference_id: u32,
    },
    IdentifyAll {
        #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
        color: Option<Color>,
        #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
        shape: Option<Shape>,
        #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
        material: Option<Material>,
    },
    Count {
        predicate: AttributePredicate,
    },
}

impl Goal {
    pub fn kind(&self) -> GoalKind {
        match self {
            Goal::Place { .. } => GoalKind::Place,
            Goal::IdentifyAll { .. } => GoalKind::IdentifyAll,
            Goal::Count { .. } => GoalKind::Count,
        }
    }

    /// The constraints of an identification goal, in a fixed order.
    pub fn identify_constraints(&self) -> Vec<AttributePredicate> {
        match self {
            Goal::IdentifyAll { color, shape, material } => {
                let mut out = Vec::new();
                if let Some(c) = color {
                    out.push(AttributePredicate::Color(*c));
                }
                if let Some(s) = shape {
                    out.push(AttributePredicate::Shape(*s));
                }
                if let Some(m) = material {
                    out.push(AttributePredicate::Material(*m));
                }
                out
            }
            _ => Vec::new(),
        }
    }
}

/// Goal-variant selector for scenario generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GoalKind {
    Place,
    IdentifyAll,
    Count,
}

impl GoalKind {
    pub fn name(self) -> &'static str {
        match self {
            GoalKind::Place => "place",
            GoalKind::IdentifyAll => "identify_all",
            GoalKind::Count => "count",
        }
    }
}

/// A generated task: ground truth plus the text the agent sees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub scene: Scene,
    pub instruction: String,
    pub goal: Goal,
    pub initial_context: ContextState,
}

/// A rendered, agent-visible view of a scene. Cells are row-major; per cell
/// the first slot holds the front object's symbol vector and the second the
/// back object's (all-zero while hidden).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Observation {
    pub viewpoint: u32,
    pub cells: Vec<[[f64; CELL_DIM]; 2]>,
}

impl Observation {
    pub fn cell(&self, row: usize, col: usize) -> &[[f64; CELL_DIM]; 2] {
        &self.cells[row * GRID + col]
    }
}

/// Relocation of one object to a destination cell.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MoveAction {
    pub object_id: u32,
    pub to: (i32, i32),
}

/// Evaluator verdict. `success` holds exactly when `violations` is empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskOutcome {
    pub success: bool,
    pub violations: Vec<(String, String)>,
}

impl TaskOutcome {
    pub fn pass() -> Self {
        TaskOutcome { success: true, violations: Vec::new() }
    }

    pub fn fail(violations: Vec<(String, String)>) -> Self {
        debug_assert!(!violations.is_empty());
        TaskOutcome { success: false, violations }
    }
}

fn slot_vector(attrs: Attributes) -> [f64; CELL_DIM] {
    let mut v = [0.0; CELL_DIM];
    v[attrs.color.index()] = 1.0;
    v[5 + attrs.shape.index()] = 1.0;
    v[8 + attrs.material.index()] = 1.0;
    v[10] = 1.0;
    v
}

/// Renders a scene from a viewpoint. Viewpoint 0 shows only front objects;
/// any viewpoint >= 1 reveals back objects as well. Pure function.
pub fn render(scene: &Scene, viewpoint: u32) -> Observation {
    let mut cells = vec![[[0.0; CELL_DIM]; 2]; GRID * GRID];
    for obj in &scene.objects {
        let idx = obj.pos.0 * GRID + obj.pos.1;
        match obj.depth {
            Depth::Front => cells[idx][0] = slot_vector(obj.attributes()),
            Depth::Back if viewpoint >= 1 => cells[idx][1] = slot_vector(obj.attributes()),
            Depth::Back => {}
        }
    }
    Observation { viewpoint, cells }
}

fn decode_block<T: Copy>(block: &[f64], values: &[T]) -> Option<T> {
    let mut found = None;
    for (i, &x) in block.iter().enumerate() {
        if x == 1.0 {
            if found.is_some() {
                return None;
            }
            found = Some(values[i]);
        } else if x != 0.0 {
            return None;
        }
    }
    found
}

fn decode_slot(
    slot: &[f64; CELL_DIM],
    row: usize,
    col: usize,
) -> Result<Option<Attributes>, DomainError> {
    let malformed = |reason| DomainError::MalformedObservation { row, col, reason };
    if slot[10] == 0.0 {
        if slot.iter().any(|&x| x != 0.0) {
            return Err(malformed("attributes set without presence bit"));
        }
        return Ok(None);
    }
    if slot[10] != 1.0 {
        return Err(malformed("presence bit is not binary"));
    }
    let color = decode_block(&slot[0..5], &COLORS).ok_or(malformed("color block not one-hot"))?;
    let shape = decode_block(&slot[5..8], &SHAPES).ok_or(malformed("shape block not one-hot"))?;
    let material =
        decode_block(&slot[8..10], &MATERIALS).ok_or(malformed("material block not one-hot"))?;
    Ok(Some(Attributes { color, shape, material }))
}

/// A decoded observation entry: visible attributes plus the cell position.
pub type ParsedObject = (Attributes, (usize, usize));

/// Decodes an observation back into the visible objects, row-major, front
/// slot before back slot within a cell.
pub fn parse_observation(obs: &Observation) -> Result<Vec<ParsedObject>, DomainError> {
    let mut out = Vec::new();
    for (idx, cell) in obs.cells.iter().enumerate() {
        let pos = (idx / GRID, idx % GRID);
        for slot in cell {
            if let Some(attrs) = decode_slot(slot, pos.0, pos.1)? {
                out.push((attrs, pos));
            }
        }
    }
    Ok(out)
}

/// Applies a move to a scene, returning the new scene. Placement rules: the
/// destination front slot is taken if free, else the back slot; a move
/// leaving a front slot promotes the back object behind it. Moving an object
/// onto its own cell is a no-op.
pub fn apply_action(scene: &Scene, action: &MoveAction) -> Result<Scene, DomainError> {
    let (row, col) = action.to;
    if !in_bounds(row, col) {
        return Err(DomainError::OutOfBounds { row, col });
    }
    let dest = (row as usize, col as usize);
    let mover = scene
        .object(action.object_id)
        .ok_or(DomainError::NoSuchObject { id: action.object_id })?;
    let new_depth = if !scene.slot_occupied(dest, Depth::Front, mover.id) {
        Depth::Front
    } else if !scene.slot_occupied(dest, Depth::Back, mover.id) {
        Depth::Back
    } else {
        return Err(DomainError::CellFull { row: dest.0, col: dest.1 });
    };
    let vacated = (mover.pos, mover.depth);
    let mut next = scene.clone();
    for obj in &mut next.objects {
        if obj.id == action.object_id {
            obj.pos = dest;
            obj.depth = new_depth;
        }
    }
    // Promote the back object the mover was occluding.
    if vacated.1 == Depth::Front && vacated.0 != dest {
        for obj in &mut next.objects {
            if obj.pos == vacated.0 && obj.depth == Depth::Back {
                obj.depth = Depth::Front;
            }
        }
    }
    Ok(next)
}

/// The exact set of object ids matching an identification conjunction.
pub fn identify_match_set(
    scene: &Scene,
    color: Option<Color>,
    shape: Option<Shape>,
    material: Option<Material>,
) -> alloc::collections::BTreeSet<u32> {
    scene
        .objects
        .iter()
        .filter(|o| o.attributes().matches_conjunction(color, shape, material))
        .map(|o| o.id)
        .collect()
}

/// Ground-truth count for a predicate, occluded objects included.
pub fn true_count(scene: &Scene, predicate: &AttributePredicate) -> u32 {
    scene.objects.iter().filter(|o| o.attributes().satisfies(predicate)).count() as u32
}

/// Judges an answer against the goal on the (post-action) scene.
///
/// Place plans must have been applied to `scene` beforehand; the verdict
/// reads positions, not the plan. Identification compares the answered id
/// set against the exact ground-truth match set. Counting compares against
/// the true count including occluded objects.
pub fn evaluate_goal(
    goal: &Goal,
    scene: &Scene,
    answer: &Response,
) -> Result<TaskOutcome, DomainError> {
    match (goal, &answer.body) {
        (Goal::Place { subject_id, relation, reference_id }, ResponseBody::Plan(_)) => {
            let subject = scene
                .object(*subject_id)
                .ok_or(DomainError::NoSuchObject { id: *subject_id })?;
            let reference = scene
                .object(*reference_id)
                .ok_or(DomainError::NoSuchObject { id: *reference_id })?;
            if relation.satisfied(subject.pos, reference.pos) {
                Ok(TaskOutcome::pass())
            } else {
                let horizontal = matches!(relation, Relation::LeftOf | Relation::RightOf);
                let detail = match (horizontal, subject.pos, reference.pos) {
                    (true, s, r) if s.0 != r.0 => "row mismatch",
                    (true, _, _) => "column mismatch",
                    (false, s, r) if s.1 != r.1 => "column mismatch",
                    (false, _, _) => "row mismatch",
                };
                Ok(TaskOutcome::fail(vec![(relation.name().into(), detail.into())]))
            }
        }
        (Goal::IdentifyAll { color, shape, material }, ResponseBody::Ids(answered)) => {
            let truth = identify_match_set(scene, *color, *shape, *material);
            if *answered == truth {
                return Ok(TaskOutcome::pass());
            }
            let mut violations = Vec::new();
            let extra: Vec<u32> = answered.difference(&truth).copied().collect();
            let missing: Vec<u32> = truth.difference(answered).copied().collect();
            if !extra.is_empty() {
                violations.push((
                    "identify_all".into(),
                    format!("answer includes non-matching ids {extra:?}"),
                ));
            }
            if !missing.is_empty() {
                violations.push((
                    "identify_all".into(),
                    format!("answer is missing matching ids {missing:?}"),
                ));
            }
            Ok(TaskOutcome::fail(violations))
        }
        (Goal::Count { predicate }, ResponseBody::Count(n)) => {
            let truth = true_count(scene, predicate);
            if *n == truth {
                Ok(TaskOutcome::pass())
            } else {
                Ok(TaskOutcome::fail(vec![(
                    "count".into(),
                    format!("expected {truth}, got {n}"),
                )]))
            }
        }
        _ => Err(DomainError::AnswerKindMismatch),
    }
}

#[cfg(test)]
mod tests;
