use std::collections::HashMap;

use citypulse_core::layout::{layout, BoxKind, CityLayout, LayoutBox, LayoutParams};
use citypulse_core::structure::{AppKey, Landscape};
use citypulse_core::trace::Window;
use citypulse_core::wire::{parse_fqn, ConstructorNames};
use citypulse_core::{ClassId, MetricScores};
use proptest::prelude::*;

const EPS: f64 = 1e-9;

fn overlaps(a: &LayoutBox, b: &LayoutBox) -> bool {
    a.x < b.x + b.width - EPS && b.x < a.x + a.width - EPS && a.z < b.z + b.depth - EPS && b.z < a.z + a.depth - EPS
}

fn check(city: &CityLayout, params: &LayoutParams) -> Result<(), String> {
    let by_id: HashMap<&str, &LayoutBox> = city.boxes.iter().map(|b| (b.node_id.as_str(), b)).collect();
    let mut siblings: HashMap<&str, Vec<&LayoutBox>> = HashMap::new();
    for b in &city.boxes {
        if b.kind == BoxKind::Class && b.height < params.min_height {
            return Err(format!("{} too short", b.node_id));
        }
        let Some(parent_id) = &b.parent else { continue };
        let parent = by_id[parent_id.as_str()];
        let p = params.padding;
        let inside = b.x >= parent.x + p - EPS
            && b.z >= parent.z + p - EPS
            && b.x + b.width <= parent.x + parent.width - p + EPS
            && b.z + b.depth <= parent.z + parent.depth - p + EPS;
        if !inside {
            return Err(format!("{} escapes {}", b.node_id, parent_id));
        }
        if b.y_base < parent.y_base + parent.height - EPS {
            return Err(format!("{} sinks into {}", b.node_id, parent_id));
        }
        siblings.entry(parent_id.as_str()).or_default().push(b);
    }
    for group in siblings.values() {
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                if overlaps(a, b) {
                    return Err(format!("{} overlaps {}", a.node_id, b.node_id));
                }
            }
        }
    }
    let foundation = city.foundation().ok_or("no foundation")?;
    for a in &city.anchors {
        let b = city.class_box(&a.class_id).ok_or("anchor without box")?;
        if (a.x, a.z) != b.center() {
            return Err("anchor is not the footprint center".into());
        }
        if !(a.x > foundation.x && a.x < foundation.x + foundation.width) {
            return Err("anchor outside foundation".into());
        }
    }
    Ok(())
}

fn fqns() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(
        (proptest::collection::vec(0u8..4, 0..4), 0u16..200),
        1..500,
    )
    .prop_map(|items| {
        items
            .into_iter()
            .map(|(path, class)| {
                let mut parts: Vec<String> = path.iter().map(|p| format!("p{p}")).collect();
                parts.push(format!("C{class}"));
                parts.push("op".into());
                parts.join(".")
            })
            .collect()
    })
}

fn build(fqns: &[String]) -> Landscape {
    let mut landscape = Landscape::new();
    for f in fqns {
        landscape.insert_structural(&parse_fqn(f, &ConstructorNames::default()).unwrap(), "h", "app");
    }
    landscape
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn layouts_are_well_formed(fqns in fqns(), seed in any::<u64>()) {
        let landscape = build(&fqns);
        let tree = landscape.app(&AppKey::new("h", "app")).unwrap();
        let mut counts = MetricScores::new("instance_count", Window::new(0, 1));
        for (i, c) in tree.class_ids().into_iter().enumerate() {
            counts.values.insert(c, ((seed >> (i % 48)) & 0xff) as f64);
        }
        let params = LayoutParams::default();
        let city = layout(tree, &counts, &params);
        prop_assert_eq!(city.anchors.len(), tree.class_count());
        if let Err(e) = check(&city, &params) {
            return Err(TestCaseError::fail(e));
        }
        let again = layout(tree, &counts, &params);
        prop_assert_eq!(city, again);
    }
}

#[test]
fn class_height_tracks_count() {
    let landscape = build(&["a.A.op".into(), "a.B.op".into(), "a.C.op".into()]);
    let tree = landscape.app(&AppKey::new("h", "app")).unwrap();
    let mut counts = MetricScores::new("instance_count", Window::new(0, 1));
    counts.values.insert(ClassId::from("h:app:a.B"), 5.0);
    counts.values.insert(ClassId::from("h:app:a.C"), 10.0);
    let city = layout(tree, &counts, &LayoutParams::default());
    let h = |c: &str| city.class_box(&ClassId::from(c)).unwrap().height;
    assert_eq!((h("h:app:a.A"), h("h:app:a.B"), h("h:app:a.C")), (1.0, 3.5, 6.0));
}
