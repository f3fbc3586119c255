use overseec_core::classes::{ClassSet, Provenance};
use overseec_core::dsl::CostTarget;
use overseec_core::mask::HierarchyEdge;
use overseec_core::raster::Geometry;
use overseec_engine::interpret::{
    compose_program, default_classes, derive_rank_map, identify_entities, InterpretError, PromptText,
};
use overseec_engine::llm::{LlmError, ScriptedBackend, StubBackend, Task};

const FIG3: &str = "Prefer the roads and trails, grass should be fine, try to avoid the baseball field as much as possible.";

fn fig3_classes() -> ClassSet {
    let backend = ScriptedBackend::new().push(
        Task::Entities,
        r#"{"classes": [{"name": "road", "geometry": "linear"}, {"name": "baseball field", "geometry": "areal"}]}"#,
    );
    identify_entities(&PromptText::new(FIG3).unwrap(), &backend, 0).unwrap()
}

#[test]
fn fig3_entities_include_prompt_classes_and_defaults() {
    let set = fig3_classes();
    assert_eq!(set.get("road").unwrap().geometry, Geometry::Linear);
    assert_eq!(set.get("road").unwrap().provenance, Provenance::Prompt);
    assert_eq!(set.get("baseball field").unwrap().geometry, Geometry::Areal);
    for d in default_classes() {
        assert!(set.contains(&d.name), "{} missing", d.name);
    }
    assert_eq!(set.len(), default_classes().len() + 1);
}

#[test]
fn empty_extraction_yields_exactly_the_defaults() {
    let backend = ScriptedBackend::new().push(Task::Entities, r#"{"classes": []}"#);
    let set = identify_entities(&PromptText::new("go").unwrap(), &backend, 0).unwrap();
    let names: Vec<&str> = set.names().collect();
    let expected: Vec<String> = default_classes().into_iter().map(|c| c.name).collect();
    assert_eq!(names, expected);
    assert!(set.iter().all(|c| c.provenance == Provenance::Default));
}

#[test]
fn case_variants_collapse() {
    let backend = ScriptedBackend::new().push(
        Task::Entities,
        r#"{"classes": [{"name": "Road", "geometry": "linear"}, {"name": "road", "geometry": "linear"}, {"name": "Pier", "geometry": "areal"}]}"#,
    );
    let set = identify_entities(&PromptText::new("go").unwrap(), &backend, 0).unwrap();
    assert_eq!(set.names().filter(|n| *n == "road").count(), 1);
    assert!(set.contains("pier"));
}

#[test]
fn malformed_entities_are_retried_with_feedback() {
    let backend = ScriptedBackend::new()
        .push(Task::Entities, "I think roads")
        .push(Task::Entities, r#"{"classes": [{"name": "pier", "geometry": "areal"}]}"#);
    let set = identify_entities(&PromptText::new("go").unwrap(), &backend, 1).unwrap();
    assert!(set.contains("pier"));
    let seen = backend.requests();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].attempt, 1);
    assert!(seen[1].rendered.contains("I think roads"));

    let bad = ScriptedBackend::new().push(Task::Entities, "nope").push(Task::Entities, "still nope");
    match identify_entities(&PromptText::new("go").unwrap(), &bad, 1) {
        Err(InterpretError::MalformedResponse { attempts: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
}

const FIG3_PROGRAM: &str = r#"Here is the program:
```dsl
class "road" linear;
class "baseball field" areal;
hierarchy "baseball field" subset_of "grass";
cost M("road"): 1;
cost M("trail"): 1;
cost M("grass"): 2;
cost M("baseball field"): 3;
cost M("tree"): 4;
cost M("building"): 5;
```"#;

#[test]
fn fig3_program_orders_weights_and_keeps_the_hierarchy() {
    let classes = fig3_classes();
    let backend = ScriptedBackend::new().push(Task::Compose, FIG3_PROGRAM);
    let c = compose_program(&PromptText::new(FIG3).unwrap(), &classes, &backend, 0).unwrap();
    let weight = |name: &str| {
        c.program
            .program()
            .cost_rules()
            .find_map(|(t, w)| matches!(t, CostTarget::Class(n) if n == name).then_some(w))
            .unwrap()
    };
    assert!(weight("road") <= weight("grass"));
    assert!(weight("grass") <= weight("baseball field"));
    assert_eq!(c.program.hierarchy(), &[HierarchyEdge::new("baseball field", "grass")]);
    assert_eq!(c.attempts, 1);
    // the rendered instruction lists the classes the program may use
    assert!(backend.requests()[0].rendered.contains("\"baseball field\""));
}

#[test]
fn compose_feeds_parse_errors_back() {
    let classes = fig3_classes();
    let backend = ScriptedBackend::new()
        .push(Task::Compose, "cost M(\"road\") 1;")
        .push(Task::Compose, "cost M(\"pier\"): 1;")
        .push(Task::Compose, "cost M(\"road\"): 1;");
    let c = compose_program(&PromptText::new("go").unwrap(), &classes, &backend, 2).unwrap();
    assert_eq!(c.attempts, 3);
    assert_eq!(c.source.trim(), "cost M(\"road\"): 1;");
    let seen = backend.requests();
    assert!(seen[1].rendered.contains("syntax error at 1:16"), "{}", seen[1].rendered);
    assert!(seen[2].rendered.contains("unknown class \"pier\""), "{}", seen[2].rendered);
}

#[test]
fn garbage_three_times_exhausts_two_retries() {
    let classes = fig3_classes();
    let backend = ScriptedBackend::new()
        .push(Task::Compose, "garbage")
        .push(Task::Compose, "garbage")
        .push(Task::Compose, "garbage");
    match compose_program(&PromptText::new("go").unwrap(), &classes, &backend, 2) {
        Err(InterpretError::UnparseableAfterRetries {
            attempts,
            last_error,
            last_response,
        }) => {
            assert_eq!(attempts, 3);
            assert!(last_error.contains("syntax error"));
            assert_eq!(last_response, "garbage");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(backend.requests().len(), 3);
}

#[test]
fn compose_rejects_an_empty_class_set() {
    let backend = ScriptedBackend::new();
    assert!(matches!(
        compose_program(&PromptText::new("go").unwrap(), &ClassSet::new(), &backend, 0),
        Err(InterpretError::EmptyClassSet)
    ));
}

fn ranks_json(pairs: &[(&str, u32)]) -> String {
    let items: Vec<String> = pairs.iter().map(|(n, r)| format!("{{\"name\": \"{n}\", \"rank\": {r}}}")).collect();
    format!("{{\"ranks\": [{}]}}", items.join(","))
}

#[test]
fn trail_grass_water_ranks() {
    let classes = ClassSet::from_specs(
        &[
            overseec_core::raster::ClassSpec::new("trail", Geometry::Linear),
            overseec_core::raster::ClassSpec::new("grass", Geometry::Areal),
            overseec_core::raster::ClassSpec::new("water", Geometry::Areal),
        ],
        Provenance::Prompt,
    );
    let backend = ScriptedBackend::new().push(Task::Ranks, ranks_json(&[("trail", 1), ("grass", 2), ("water", 3)]));
    let prompt = PromptText::new("trails are good, grass is okay, avoid water").unwrap();
    let ranks = derive_rank_map(&prompt, &classes, &backend, 0).unwrap();
    assert_eq!((ranks.get("trail"), ranks.get("grass"), ranks.get("water")), (Some(1), Some(2), Some(3)));
}

#[test]
fn single_class_gets_rank_one() {
    let classes = ClassSet::from_specs(&[overseec_core::raster::ClassSpec::new("road", Geometry::Linear)], Provenance::Prompt);
    let backend = ScriptedBackend::new().push(Task::Ranks, ranks_json(&[("road", 1)]));
    let ranks = derive_rank_map(&PromptText::new("go").unwrap(), &classes, &backend, 0).unwrap();
    assert_eq!(ranks.len(), 1);
    assert_eq!(ranks.get("road"), Some(1));
}

#[test]
fn fig3_ranks_allow_ties() {
    let classes = fig3_classes();
    let expected = [
        ("road", 1),
        ("trail", 1),
        ("grass", 2),
        ("baseball field", 3),
        ("tree", 4),
        ("building", 5),
        ("water", 5),
    ];
    let backend = ScriptedBackend::new().push(Task::Ranks, ranks_json(&expected));
    let ranks = derive_rank_map(&PromptText::new(FIG3).unwrap(), &classes, &backend, 0).unwrap();
    for (name, r) in expected {
        assert_eq!(ranks.get(name), Some(r), "{name}");
    }
}

#[test]
fn ranks_must_cover_every_class_within_range() {
    let classes = ClassSet::from_specs(
        &[
            overseec_core::raster::ClassSpec::new("road", Geometry::Linear),
            overseec_core::raster::ClassSpec::new("grass", Geometry::Areal),
        ],
        Provenance::Prompt,
    );
    let prompt = PromptText::new("go").unwrap();
    let missing = ScriptedBackend::new().push(Task::Ranks, ranks_json(&[("road", 1)]));
    assert!(matches!(
        derive_rank_map(&prompt, &classes, &missing, 0),
        Err(InterpretError::MalformedResponse { task: Task::Ranks, .. })
    ));
    let out_of_range = ScriptedBackend::new().push(Task::Ranks, ranks_json(&[("road", 1), ("grass", 3)]));
    assert!(derive_rank_map(&prompt, &classes, &out_of_range, 0).is_err());
    // unknown names are ignored rather than rejected
    let extra = ScriptedBackend::new().push(Task::Ranks, ranks_json(&[("road", 1), ("grass", 2), ("lava", 2)]));
    assert_eq!(derive_rank_map(&prompt, &classes, &extra, 0).unwrap().len(), 2);
}

#[test]
fn backend_errors_are_not_retried_as_content() {
    let dir = tempfile::tempdir().unwrap();
    let stub = StubBackend::new(dir.path());
    match identify_entities(&PromptText::new("unknown prompt").unwrap(), &stub, 3) {
        Err(InterpretError::Backend(LlmError::FixtureMiss { task: Task::Entities, .. })) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn stub_backend_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    StubBackend::record(dir.path(), FIG3, Task::Compose, None, FIG3_PROGRAM).unwrap();
    let stub = StubBackend::new(dir.path());
    let classes = fig3_classes();
    let prompt = PromptText::new(FIG3).unwrap();
    let a = compose_program(&prompt, &classes, &stub, 0).unwrap();
    let b = compose_program(&prompt, &classes, &stub, 0).unwrap();
    assert_eq!(a.source.as_bytes(), b.source.as_bytes());
}

#[test]
fn stub_serves_attempt_specific_corrections() {
    let dir = tempfile::tempdir().unwrap();
    StubBackend::record(dir.path(), "p", Task::Compose, None, "broken(").unwrap();
    StubBackend::record(dir.path(), "p", Task::Compose, Some(1), "cost M(\"road\"): 2;").unwrap();
    let stub = StubBackend::new(dir.path());
    let c = compose_program(&PromptText::new("p").unwrap(), &fig3_classes(), &stub, 1).unwrap();
    assert_eq!(c.attempts, 2);
}
