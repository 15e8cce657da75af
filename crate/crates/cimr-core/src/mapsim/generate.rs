//! Seeded scenario generation.
//!
//! Every scenario is solvable by construction and each goal kind guarantees
//! the structure its error archetype needs:
//!
//! - Place scenes start with the subject away from the (unique) satisfying
//!   cell, and both the correct destination and the off-by-one-row decoy
//!   destination are inside the grid and unobstructed.
//! - Identification scenes contain, for each of the two constraints, at
//!   least one decoy matching only the other constraint, so dropping either
//!   constraint yields a strictly larger match set.
//! - Counting scenes hide at least one matching object in a back slot, so
//!   the viewpoint-0 visible count undershoots the true count.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::engine::ContextState;
use crate::rng::SplitMix64;

use super::{
    AttributePredicate, Attributes, Color, Depth, Goal, GoalKind, Material, ObjectSpec, Relation,
    Scenario, Scene, Shape, GRID,
};

/// (subject color/shape/material, reference color/shape/material, relation).
/// Index 1 is the "red cube left of blue sphere" template; selection is
/// `seed % len`, so seed 1 lands on it.
type PlaceCombo = (Color, Shape, Material, Color, Shape, Material, Relation);

const PLACE_COMBOS: [PlaceCombo; 12] = [
    (Color::Green, Shape::Sphere, Material::Metallic, Color::Yellow, Shape::Cube, Material::Rubber, Relation::RightOf),
    (Color::Red, Shape::Cube, Material::Rubber, Color::Blue, Shape::Sphere, Material::Rubber, Relation::LeftOf),
    (Color::Blue, Shape::Cylinder, Material::Metallic, Color::Gray, Shape::Cube, Material::Metallic, Relation::Above),
    (Color::Yellow, Shape::Sphere, Material::Rubber, Color::Red, Shape::Cylinder, Material::Metallic, Relation::Below),
    (Color::Gray, Shape::Cube, Material::Metallic, Color::Green, Shape::Sphere, Material::Rubber, Relation::LeftOf),
    (Color::Blue, Shape::Cube, Material::Rubber, Color::Yellow, Shape::Cylinder, Material::Metallic, Relation::RightOf),
    (Color::Red, Shape::Sphere, Material::Metallic, Color::Gray, Shape::Cylinder, Material::Rubber, Relation::Above),
    (Color::Green, Shape::Cylinder, Material::Rubber, Color::Blue, Shape::Cube, Material::Metallic, Relation::Below),
    (Color::Yellow, Shape::Cube, Material::Metallic, Color::Red, Shape::Sphere, Material::Rubber, Relation::LeftOf),
    (Color::Gray, Shape::Sphere, Material::Rubber, Color::Green, Shape::Cube, Material::Metallic, Relation::RightOf),
    (Color::Blue, Shape::Sphere, Material::Metallic, Color::Yellow, Shape::Sphere, Material::Rubber, Relation::Above),
    (Color::Red, Shape::Cylinder, Material::Rubber, Color::Gray, Shape::Sphere, Material::Metallic, Relation::Below),
];

/// Constraint pairs for identification goals; the two constraints of a pair
/// always address different attribute dimensions. Index 0 is the
/// "metallic and cylindrical" template.
const IDENTIFY_COMBOS: [(AttributePredicate, AttributePredicate); 6] = [
    (AttributePredicate::Material(Material::Metallic), AttributePredicate::Shape(Shape::Cylinder)),
    (AttributePredicate::Color(Color::Green), AttributePredicate::Material(Material::Rubber)),
    (AttributePredicate::Color(Color::Red), AttributePredicate::Shape(Shape::Cube)),
    (AttributePredicate::Material(Material::Metallic), AttributePredicate::Shape(Shape::Cube)),
    (AttributePredicate::Color(Color::Blue), AttributePredicate::Shape(Shape::Sphere)),
    (AttributePredicate::Color(Color::Yellow), AttributePredicate::Material(Material::Rubber)),
];

/// Predicates for counting goals. Index 0 is the "green objects" template.
const COUNT_PREDICATES: [AttributePredicate; 6] = [
    AttributePredicate::Color(Color::Green),
    AttributePredicate::Color(Color::Red),
    AttributePredicate::Shape(Shape::Cube),
    AttributePredicate::Material(Material::Metallic),
    AttributePredicate::Shape(Shape::Sphere),
    AttributePredicate::Color(Color::Blue),
];

/// Pool of free cells for collision-free placement.
struct CellPool {
    free: Vec<(usize, usize)>,
}

impl CellPool {
    fn new(exclude: &[(usize, usize)]) -> Self {
        let mut free = Vec::with_capacity(GRID * GRID);
        for r in 0..GRID {
            for c in 0..GRID {
                if !exclude.contains(&(r, c)) {
                    free.push((r, c));
                }
            }
        }
        CellPool { free }
    }

    fn take(&mut self, rng: &mut SplitMix64) -> (usize, usize) {
        let i = rng.next_below(self.free.len());
        self.free.swap_remove(i)
    }
}

fn random_attrs(rng: &mut SplitMix64) -> Attributes {
    Attributes {
        color: super::COLORS[rng.next_below(5)],
        shape: super::SHAPES[rng.next_below(3)],
        material: super::MATERIALS[rng.next_below(2)],
    }
}

/// Draws attributes satisfying every predicate in `satisfy` and violating
/// every predicate in `violate`. The two lists must address disjoint
/// attribute dimensions.
fn constrained_attrs(
    rng: &mut SplitMix64,
    satisfy: &[AttributePredicate],
    violate: &[AttributePredicate],
) -> Attributes {
    let mut attrs = random_attrs(rng);
    for p in satisfy {
        match p {
            AttributePredicate::Color(c) => attrs.color = *c,
            AttributePredicate::Shape(s) => attrs.shape = *s,
            AttributePredicate::Material(m) => attrs.material = *m,
        }
    }
    for p in violate {
        match p {
            AttributePredicate::Color(c) => {
                while attrs.color == *c {
                    attrs.color = super::COLORS[rng.next_below(5)];
                }
            }
            AttributePredicate::Shape(s) => {
                while attrs.shape == *s {
                    attrs.shape = super::SHAPES[rng.next_below(3)];
                }
            }
            AttributePredicate::Material(m) => {
                attrs.material = match m {
                    Material::Metallic => Material::Rubber,
                    Material::Rubber => Material::Metallic,
                };
            }
        }
    }
    attrs
}

fn push_object(
    scene: &mut Scene,
    attrs: Attributes,
    pos: (usize, usize),
    depth: Depth,
) -> u32 {
    let id = scene.objects.len() as u32;
    scene.objects.push(ObjectSpec {
        id,
        color: attrs.color,
        shape: attrs.shape,
        material: attrs.material,
        pos,
        depth,
    });
    id
}

/// Generates a scenario deterministically from `(seed, kind)`.
pub fn generate_scenario(seed: u64, kind: GoalKind) -> Scenario {
    let mut rng = SplitMix64::fork(seed, kind as u64);
    let (scene, instruction, goal) = match kind {
        GoalKind::Place => generate_place(seed, &mut rng),
        GoalKind::IdentifyAll => generate_identify(seed, &mut rng),
        GoalKind::Count => generate_count(seed, &mut rng),
    };
    debug_assert!(scene.validate().is_ok());
    let initial_context = ContextState::initial(instruction.clone());
    Scenario { seed, scene, instruction, goal, initial_context }
}

fn generate_place(seed: u64, rng: &mut SplitMix64) -> (Scene, String, Goal) {
    let (sc, ss, sm, rc, rs, rm, relation) =
        PLACE_COMBOS[(seed % PLACE_COMBOS.len() as u64) as usize];

    // Keep the reference inside a margin so both the satisfying cell and the
    // one-row-up decoy cell stay on the grid for every relation.
    let ref_pos = (2 + rng.next_below(4), 2 + rng.next_below(4));
    let correct = relation.target_cell(ref_pos).expect("margin keeps target in bounds");
    let decoy = (correct.0.wrapping_sub(1), correct.1);

    let mut pool = CellPool::new(&[ref_pos, correct, decoy]);
    let subject_pos = pool.take(rng);

    let mut scene = Scene::default();
    let subject_attrs = Attributes { color: sc, shape: ss, material: sm };
    let reference_attrs = Attributes { color: rc, shape: rs, material: rm };
    let subject_id = push_object(&mut scene, subject_attrs, subject_pos, Depth::Front);
    let reference_id = push_object(&mut scene, reference_attrs, ref_pos, Depth::Front);

    // Distractors never share a (color, shape) pair with the subject or the
    // reference, so both stay uniquely identifiable from an observation.
    for _ in 0..2 + rng.next_below(3) {
        let attrs = loop {
            let a = random_attrs(rng);
            if (a.color, a.shape) != (sc, ss) && (a.color, a.shape) != (rc, rs) {
                break a;
            }
        };
        let pos = pool.take(rng);
        push_object(&mut scene, attrs, pos, Depth::Front);
    }

    let instruction = format!(
        "Place the {} {} exactly {} the {} {}.",
        sc.name(),
        ss.name(),
        relation.phrase(),
        rc.name(),
        rs.name()
    );
    (scene, instruction, Goal::Place { subject_id, relation, reference_id })
}

fn generate_identify(seed: u64, rng: &mut SplitMix64) -> (Scene, String, Goal) {
    let (c1, c2) = IDENTIFY_COMBOS[(seed % IDENTIFY_COMBOS.len() as u64) as usize];
    let mut pool = CellPool::new(&[]);
    let mut scene = Scene::default();

    for _ in 0..1 + rng.next_below(2) {
        let attrs = constrained_attrs(rng, &[c1, c2], &[]);
        let pos = pool.take(rng);
        push_object(&mut scene, attrs, pos, Depth::Front);
    }
    for _ in 0..1 + rng.next_below(2) {
        let attrs = constrained_attrs(rng, &[c1], &[c2]);
        let pos = pool.take(rng);
        push_object(&mut scene, attrs, pos, Depth::Front);
    }
    for _ in 0..1 + rng.next_below(2) {
        let attrs = constrained_attrs(rng, &[c2], &[c1]);
        let pos = pool.take(rng);
        push_object(&mut scene, attrs, pos, Depth::Front);
    }
    for _ in 0..rng.next_below(3) {
        let attrs = constrained_attrs(rng, &[], &[c1, c2]);
        let pos = pool.take(rng);
        push_object(&mut scene, attrs, pos, Depth::Front);
    }

    let (mut color, mut shape, mut material) = (None, None, None);
    for p in [c1, c2] {
        match p {
            AttributePredicate::Color(c) => color = Some(c),
            AttributePredicate::Shape(s) => shape = Some(s),
            AttributePredicate::Material(m) => material = Some(m),
        }
    }
    let instruction = format!(
        "Identify all objects that are both {} and {}.",
        c1.adjective(),
        c2.adjective()
    );
    (scene, instruction, Goal::IdentifyAll { color, shape, material })
}

fn generate_count(seed: u64, rng: &mut SplitMix64) -> (Scene, String, Goal) {
    let predicate = COUNT_PREDICATES[(seed % COUNT_PREDICATES.len() as u64) as usize];
    let mut pool = CellPool::new(&[]);
    let mut scene = Scene::default();

    // Openly visible matches.
    for _ in 0..2 + rng.next_below(3) {
        let attrs = constrained_attrs(rng, &[predicate], &[]);
        let pos = pool.take(rng);
        push_object(&mut scene, attrs, pos, Depth::Front);
    }
    // Occluded matches, each behind a non-matching front object.
    for _ in 0..1 + rng.next_below(2) {
        let pos = pool.take(rng);
        let occluder = constrained_attrs(rng, &[], &[predicate]);
        push_object(&mut scene, occluder, pos, Depth::Front);
        let hidden = constrained_attrs(rng, &[predicate], &[]);
        push_object(&mut scene, hidden, pos, Depth::Back);
    }
    // Non-matching filler.
    for _ in 0..rng.next_below(4) {
        let attrs = constrained_attrs(rng, &[], &[predicate]);
        let pos = pool.take(rng);
        push_object(&mut scene, attrs, pos, Depth::Front);
    }

    let instruction = format!(
        "Count the number of {} objects visible, then state their total.",
        predicate.adjective()
    );
    (scene, instruction, Goal::Count { predicate })
}
