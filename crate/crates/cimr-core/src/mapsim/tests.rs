use super::*;
use crate::backends::{Response, ResponseBody};
use crate::rng::SplitMix64;
use alloc::collections::BTreeSet;
use alloc::string::ToString;

fn obj(id: u32, color: Color, shape: Shape, pos: (usize, usize), depth: Depth) -> ObjectSpec {
    ObjectSpec { id, color, shape, material: Material::Rubber, pos, depth }
}

fn plan_answer() -> Response {
    Response { body: ResponseBody::Plan(alloc::vec![]), rationale: "".into() }
}

fn ids_answer(ids: &[u32]) -> Response {
    Response { body: ResponseBody::Ids(ids.iter().copied().collect()), rationale: "".into() }
}

fn count_answer(n: u32) -> Response {
    Response { body: ResponseBody::Count(n), rationale: "".into() }
}

/// Random valid scene: a few front objects, some with a back object behind.
fn random_scene(rng: &mut SplitMix64) -> Scene {
    let mut scene = Scene::default();
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for r in 0..GRID {
        for c in 0..GRID {
            cells.push((r, c));
        }
    }
    let n = 2 + rng.next_below(6);
    let mut id = 0;
    for _ in 0..n {
        let pos = cells.swap_remove(rng.next_below(cells.len()));
        let attrs = Attributes {
            color: COLORS[rng.next_below(5)],
            shape: SHAPES[rng.next_below(3)],
            material: MATERIALS[rng.next_below(2)],
        };
        scene.objects.push(ObjectSpec {
            id,
            color: attrs.color,
            shape: attrs.shape,
            material: attrs.material,
            pos,
            depth: Depth::Front,
        });
        id += 1;
        if rng.chance(0.3) {
            scene.objects.push(ObjectSpec {
                id,
                color: COLORS[rng.next_below(5)],
                shape: SHAPES[rng.next_below(3)],
                material: MATERIALS[rng.next_below(2)],
                pos,
                depth: Depth::Back,
            });
            id += 1;
        }
    }
    scene
}

// ---------------------------------------------------------------- render

#[test]
fn empty_scene_renders_all_zero() {
    let obs = render(&Scene::default(), 3);
    assert!(obs.cells.iter().flatten().flatten().all(|&x| x == 0.0));
}

#[test]
fn occlusion_hides_back_at_viewpoint_zero() {
    let scene = Scene {
        objects: alloc::vec![
            obj(0, Color::Gray, Shape::Cube, (2, 2), Depth::Front),
            obj(1, Color::Green, Shape::Sphere, (2, 2), Depth::Back),
        ],
    };
    let obs = render(&scene, 0);
    let visible = parse_observation(&obs).unwrap();
    assert_eq!(visible.len(), 1);
    assert_eq!(visible[0].0.color, Color::Gray);
    assert_eq!(visible[0].0.shape, Shape::Cube);

    let obs = render(&scene, 1);
    let visible = parse_observation(&obs).unwrap();
    assert_eq!(visible.len(), 2);
    assert!(visible
        .iter()
        .any(|(a, _)| a.color == Color::Green && a.shape == Shape::Sphere));
}

#[test]
fn render_is_pure() {
    let scene = Scene {
        objects: alloc::vec![obj(0, Color::Red, Shape::Cube, (1, 1), Depth::Front)],
    };
    assert_eq!(render(&scene, 0), render(&scene, 0));
}

// ------------------------------------------------------- parse_observation

#[test]
fn all_zero_grid_parses_to_empty_list() {
    let obs = render(&Scene::default(), 0);
    assert!(parse_observation(&obs).unwrap().is_empty());
}

#[test]
fn two_colors_with_presence_is_malformed() {
    let scene = Scene {
        objects: alloc::vec![obj(0, Color::Red, Shape::Cube, (0, 0), Depth::Front)],
    };
    let mut obs = render(&scene, 0);
    obs.cells[0][0][1] = 1.0; // second color bit
    assert!(matches!(
        parse_observation(&obs),
        Err(DomainError::MalformedObservation { row: 0, col: 0, .. })
    ));
}

#[test]
fn attributes_without_presence_are_malformed() {
    let scene = Scene::default();
    let mut obs = render(&scene, 0);
    obs.cells[5][0][2] = 1.0;
    assert!(matches!(parse_observation(&obs), Err(DomainError::MalformedObservation { .. })));
}

#[test]
fn roundtrip_matches_visibility_filter() {
    // Independent oracle: filter the ground truth by the visibility rule and
    // sort by the parser's emission order (row-major, front before back).
    for seed in 0..1000u64 {
        let mut rng = SplitMix64::new(seed);
        let scene = random_scene(&mut rng);
        let viewpoint = (seed % 3) as u32;
        let parsed = parse_observation(&render(&scene, viewpoint)).unwrap();

        let mut expected: Vec<(Attributes, (usize, usize), Depth)> = scene
            .objects
            .iter()
            .filter(|o| o.depth == Depth::Front || viewpoint >= 1)
            .map(|o| (o.attributes(), o.pos, o.depth))
            .collect();
        expected.sort_by_key(|(_, pos, depth)| (pos.0, pos.1, *depth == Depth::Back));
        let expected: Vec<(Attributes, (usize, usize))> =
            expected.into_iter().map(|(a, p, _)| (a, p)).collect();
        assert_eq!(parsed, expected, "seed {seed} viewpoint {viewpoint}");
    }
}

// ------------------------------------------------------------ apply_action

#[test]
fn move_to_empty_cell_lands_front() {
    let scene = Scene {
        objects: alloc::vec![obj(0, Color::Red, Shape::Cube, (1, 1), Depth::Front)],
    };
    let next = apply_action(&scene, &MoveAction { object_id: 0, to: (4, 4) }).unwrap();
    let moved = next.object(0).unwrap();
    assert_eq!(moved.pos, (4, 4));
    assert_eq!(moved.depth, Depth::Front);
}

#[test]
fn out_of_bounds_rejected() {
    let scene = Scene {
        objects: alloc::vec![obj(0, Color::Red, Shape::Cube, (1, 1), Depth::Front)],
    };
    assert_eq!(
        apply_action(&scene, &MoveAction { object_id: 0, to: (-1, 0) }).unwrap_err(),
        DomainError::OutOfBounds { row: -1, col: 0 }
    );
}

#[test]
fn move_onto_front_object_lands_back() {
    let scene = Scene {
        objects: alloc::vec![
            obj(0, Color::Red, Shape::Cube, (1, 1), Depth::Front),
            obj(1, Color::Blue, Shape::Sphere, (4, 4), Depth::Front),
        ],
    };
    let next = apply_action(&scene, &MoveAction { object_id: 0, to: (4, 4) }).unwrap();
    assert_eq!(next.object(0).unwrap().depth, Depth::Back);
    assert_eq!(next.object(1).unwrap().depth, Depth::Front);
    assert!(next.validate().is_ok());
}

#[test]
fn full_cell_rejected() {
    let scene = Scene {
        objects: alloc::vec![
            obj(0, Color::Red, Shape::Cube, (1, 1), Depth::Front),
            obj(1, Color::Blue, Shape::Sphere, (4, 4), Depth::Front),
            obj(2, Color::Green, Shape::Cylinder, (4, 4), Depth::Back),
        ],
    };
    assert_eq!(
        apply_action(&scene, &MoveAction { object_id: 0, to: (4, 4) }).unwrap_err(),
        DomainError::CellFull { row: 4, col: 4 }
    );
}

#[test]
fn unknown_object_rejected() {
    let scene = Scene::default();
    assert_eq!(
        apply_action(&scene, &MoveAction { object_id: 9, to: (0, 0) }).unwrap_err(),
        DomainError::NoSuchObject { id: 9 }
    );
}

#[test]
fn vacating_front_promotes_back_object() {
    let scene = Scene {
        objects: alloc::vec![
            obj(0, Color::Red, Shape::Cube, (2, 2), Depth::Front),
            obj(1, Color::Green, Shape::Sphere, (2, 2), Depth::Back),
        ],
    };
    let next = apply_action(&scene, &MoveAction { object_id: 0, to: (5, 5) }).unwrap();
    assert_eq!(next.object(1).unwrap().depth, Depth::Front);
    assert!(next.validate().is_ok());
}

#[test]
fn self_move_is_noop() {
    let scene = Scene {
        objects: alloc::vec![
            obj(0, Color::Red, Shape::Cube, (2, 2), Depth::Front),
            obj(1, Color::Green, Shape::Sphere, (2, 2), Depth::Back),
        ],
    };
    let next = apply_action(&scene, &MoveAction { object_id: 0, to: (2, 2) }).unwrap();
    assert_eq!(next, scene);
}

#[test]
fn moves_preserve_count_and_attributes() {
    for seed in 0..200u64 {
        let mut rng = SplitMix64::new(seed);
        let scene = random_scene(&mut rng);
        let id = scene.objects[rng.next_below(scene.objects.len())].id;
        let to = (rng.next_below(GRID) as i32, rng.next_below(GRID) as i32);
        if let Ok(next) = apply_action(&scene, &MoveAction { object_id: id, to }) {
            assert_eq!(next.objects.len(), scene.objects.len());
            for (a, b) in scene.objects.iter().zip(&next.objects) {
                assert_eq!(a.id, b.id);
                assert_eq!(a.attributes(), b.attributes());
            }
            assert!(next.validate().is_ok(), "seed {seed}");
        }
    }
}

// ------------------------------------------------------------ evaluate_goal

#[test]
fn left_of_adjacency_passes() {
    let scene = Scene {
        objects: alloc::vec![
            obj(0, Color::Red, Shape::Cube, (3, 4), Depth::Front),
            obj(1, Color::Blue, Shape::Sphere, (3, 5), Depth::Front),
        ],
    };
    let goal = Goal::Place { subject_id: 0, relation: Relation::LeftOf, reference_id: 1 };
    let outcome = evaluate_goal(&goal, &scene, &plan_answer()).unwrap();
    assert!(outcome.success);
    assert!(outcome.violations.is_empty());
}

#[test]
fn off_by_one_row_fails_with_row_mismatch() {
    let scene = Scene {
        objects: alloc::vec![
            obj(0, Color::Red, Shape::Cube, (2, 5), Depth::Front),
            obj(1, Color::Blue, Shape::Sphere, (3, 5), Depth::Front),
        ],
    };
    let goal = Goal::Place { subject_id: 0, relation: Relation::LeftOf, reference_id: 1 };
    let outcome = evaluate_goal(&goal, &scene, &plan_answer()).unwrap();
    assert!(!outcome.success);
    assert_eq!(outcome.violations, alloc::vec![("left_of".to_string(), "row mismatch".to_string())]);
}

#[test]
fn identify_with_wrong_shape_fails() {
    // Goal: metallic cylinders. Answer holds a metallic cube instead.
    let mut cube = obj(0, Color::Gray, Shape::Cube, (0, 0), Depth::Front);
    cube.material = Material::Metallic;
    let mut cyl = obj(1, Color::Blue, Shape::Cylinder, (1, 1), Depth::Front);
    cyl.material = Material::Metallic;
    let scene = Scene { objects: alloc::vec![cube, cyl] };
    let goal =
        Goal::IdentifyAll { color: None, shape: Some(Shape::Cylinder), material: Some(Material::Metallic) };
    let outcome = evaluate_goal(&goal, &scene, &ids_answer(&[0])).unwrap();
    assert!(!outcome.success);
    assert_eq!(outcome.violations.len(), 2); // extraneous cube, missing cylinder
    let outcome = evaluate_goal(&goal, &scene, &ids_answer(&[1])).unwrap();
    assert!(outcome.success);
}

#[test]
fn count_includes_occluded_objects() {
    let scene = Scene {
        objects: alloc::vec![
            obj(0, Color::Green, Shape::Cube, (0, 0), Depth::Front),
            obj(1, Color::Gray, Shape::Cube, (3, 3), Depth::Front),
            obj(2, Color::Green, Shape::Sphere, (3, 3), Depth::Back),
        ],
    };
    let goal = Goal::Count { predicate: AttributePredicate::Color(Color::Green) };
    assert!(!evaluate_goal(&goal, &scene, &count_answer(1)).unwrap().success);
    assert!(evaluate_goal(&goal, &scene, &count_answer(2)).unwrap().success);
}

#[test]
fn answer_kind_mismatch_is_an_error() {
    let scene = Scene {
        objects: alloc::vec![obj(0, Color::Red, Shape::Cube, (0, 0), Depth::Front)],
    };
    let goal = Goal::Count { predicate: AttributePredicate::Color(Color::Red) };
    assert_eq!(
        evaluate_goal(&goal, &scene, &plan_answer()).unwrap_err(),
        DomainError::AnswerKindMismatch
    );
}

#[test]
fn evaluator_agrees_with_brute_force() {
    // Independent route: enumerate objects and check the predicate directly,
    // with the relation semantics written out cell by cell.
    fn brute_force(goal: &Goal, scene: &Scene, answer: &Response) -> Option<bool> {
        match (goal, &answer.body) {
            (Goal::Place { subject_id, relation, reference_id }, ResponseBody::Plan(_)) => {
                let s = scene.objects.iter().find(|o| o.id == *subject_id)?;
                let r = scene.objects.iter().find(|o| o.id == *reference_id)?;
                let (sr, sc) = (s.pos.0 as i64, s.pos.1 as i64);
                let (rr, rc) = (r.pos.0 as i64, r.pos.1 as i64);
                Some(match relation {
                    Relation::LeftOf => sr == rr && sc == rc - 1,
                    Relation::RightOf => sr == rr && sc == rc + 1,
                    Relation::Above => sc == rc && sr == rr - 1,
                    Relation::Below => sc == rc && sr == rr + 1,
                })
            }
            (Goal::IdentifyAll { color, shape, material }, ResponseBody::Ids(ids)) => {
                let mut truth = BTreeSet::new();
                for o in &scene.objects {
                    let ok = color.map(|c| o.color == c).unwrap_or(true)
                        && shape.map(|s| o.shape == s).unwrap_or(true)
                        && material.map(|m| o.material == m).unwrap_or(true);
                    if ok {
                        truth.insert(o.id);
                    }
                }
                Some(truth == *ids)
            }
            (Goal::Count { predicate }, ResponseBody::Count(n)) => {
                let mut count = 0u32;
                for o in &scene.objects {
                    let hit = match predicate {
                        AttributePredicate::Color(c) => o.color == *c,
                        AttributePredicate::Shape(s) => o.shape == *s,
                        AttributePredicate::Material(m) => o.material == *m,
                    };
                    if hit {
                        count += 1;
                    }
                }
                Some(count == *n)
            }
            _ => None,
        }
    }

    let mut agreements = 0;
    for seed in 0..1000u64 {
        let mut rng = SplitMix64::fork(99, seed);
        let scene = random_scene(&mut rng);
        let ids: Vec<u32> = scene.objects.iter().map(|o| o.id).collect();
        let goal = match rng.next_below(3) {
            0 => {
                let subject = ids[rng.next_below(ids.len())];
                let reference = loop {
                    let r = ids[rng.next_below(ids.len())];
                    if r != subject {
                        break r;
                    }
                };
                Goal::Place {
                    subject_id: subject,
                    relation: [
                        Relation::LeftOf,
                        Relation::RightOf,
                        Relation::Above,
                        Relation::Below,
                    ][rng.next_below(4)],
                    reference_id: reference,
                }
            }
            1 => Goal::IdentifyAll {
                color: rng.chance(0.7).then(|| COLORS[rng.next_below(5)]),
                shape: rng.chance(0.5).then(|| SHAPES[rng.next_below(3)]),
                material: Some(MATERIALS[rng.next_below(2)]),
            },
            _ => Goal::Count {
                predicate: match rng.next_below(3) {
                    0 => AttributePredicate::Color(COLORS[rng.next_below(5)]),
                    1 => AttributePredicate::Shape(SHAPES[rng.next_below(3)]),
                    _ => AttributePredicate::Material(MATERIALS[rng.next_below(2)]),
                },
            },
        };
        let answer = match goal.kind() {
            GoalKind::Place => plan_answer(),
            GoalKind::IdentifyAll => {
                let chosen: Vec<u32> =
                    ids.iter().copied().filter(|_| rng.chance(0.4)).collect();
                ids_answer(&chosen)
            }
            GoalKind::Count => count_answer(rng.next_below(6) as u32),
        };
        let expected = brute_force(&goal, &scene, &answer).unwrap();
        let outcome = evaluate_goal(&goal, &scene, &answer).unwrap();
        assert_eq!(outcome.success, expected, "seed {seed}");
        assert_eq!(outcome.success, outcome.violations.is_empty());
        agreements += 1;
    }
    assert_eq!(agreements, 1000);
}

// ------------------------------------------------------- generate_scenario

#[test]
fn seed_one_place_uses_table_template() {
    let scenario = generate_scenario(1, GoalKind::Place);
    let Goal::Place { subject_id, relation, reference_id } = scenario.goal else {
        panic!("expected a place goal");
    };
    assert_eq!(relation, Relation::LeftOf);
    let subject = scenario.scene.object(subject_id).unwrap();
    let reference = scenario.scene.object(reference_id).unwrap();
    assert_eq!((subject.color, subject.shape), (Color::Red, Shape::Cube));
    assert_eq!((reference.color, reference.shape), (Color::Blue, Shape::Sphere));
    assert!(scenario.instruction.contains("red cube"));
    assert!(scenario.instruction.contains("to the left of the blue sphere"));
}

#[test]
fn generation_is_deterministic() {
    for kind in [GoalKind::Place, GoalKind::IdentifyAll, GoalKind::Count] {
        assert_eq!(generate_scenario(1, kind), generate_scenario(1, kind));
    }
    assert_ne!(generate_scenario(1, GoalKind::Place), generate_scenario(2, GoalKind::Place));
}

#[test]
fn count_scenarios_hide_a_matching_object() {
    for seed in [2u64, 0, 1, 3, 10, 77, 1234] {
        let scenario = generate_scenario(seed, GoalKind::Count);
        let Goal::Count { predicate } = &scenario.goal else { panic!() };
        let occluded_matches = scenario
            .scene
            .objects
            .iter()
            .filter(|o| o.depth == Depth::Back && o.attributes().satisfies(predicate))
            .count();
        assert!(occluded_matches >= 1, "seed {seed}");
    }
}

#[test]
fn place_scenarios_start_unsatisfied_and_are_solvable() {
    for seed in 0..100u64 {
        let scenario = generate_scenario(seed, GoalKind::Place);
        let Goal::Place { subject_id, relation, reference_id } = &scenario.goal else {
            panic!()
        };
        let subject = scenario.scene.object(*subject_id).unwrap();
        let reference = scenario.scene.object(*reference_id).unwrap();
        assert!(!relation.satisfied(subject.pos, reference.pos), "seed {seed}");

        // Solved configuration: subject moved to the satisfying cell.
        let target = relation.target_cell(reference.pos).unwrap();
        let solved = apply_action(
            &scenario.scene,
            &MoveAction { object_id: *subject_id, to: (target.0 as i32, target.1 as i32) },
        )
        .unwrap();
        let outcome = evaluate_goal(&scenario.goal, &solved, &plan_answer()).unwrap();
        assert!(outcome.success, "seed {seed}");
    }
}

#[test]
fn identify_scenarios_have_decoys_for_each_constraint() {
    for seed in 0..100u64 {
        let scenario = generate_scenario(seed, GoalKind::IdentifyAll);
        let constraints = scenario.goal.identify_constraints();
        assert_eq!(constraints.len(), 2, "seed {seed}");
        for dropped in 0..2 {
            let kept = constraints[1 - dropped];
            let decoys = scenario
                .scene
                .objects
                .iter()
                .filter(|o| {
                    o.attributes().satisfies(&kept)
                        && !o.attributes().satisfies(&constraints[dropped])
                })
                .count();
            assert!(decoys >= 1, "seed {seed} constraint {dropped}");
        }
        // At least one full match exists.
        let Goal::IdentifyAll { color, shape, material } = &scenario.goal else { panic!() };
        assert!(!identify_match_set(&scenario.scene, *color, *shape, *material).is_empty());
    }
}

#[test]
fn generated_scenes_are_valid_and_contexts_empty() {
    for seed in 0..60u64 {
        for kind in [GoalKind::Place, GoalKind::IdentifyAll, GoalKind::Count] {
            let scenario = generate_scenario(seed, kind);
            assert!(scenario.scene.validate().is_ok());
            assert!(scenario.initial_context.history.is_empty());
            assert_eq!(scenario.initial_context.iteration, 0);
            assert_eq!(scenario.initial_context.goal_text, scenario.instruction);
            assert_eq!(scenario.seed, seed);
            // Ids unique and sequential from zero.
            for (i, o) in scenario.scene.objects.iter().enumerate() {
                assert_eq!(o.id as usize, i);
            }
        }
    }
}
