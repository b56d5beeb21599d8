//! Software-city geometry.
//!
//! Every package becomes a tile and every class a box. Children of a node
//! are shelf-packed left to right in name order, wrapping into a new row
//! once a row reaches roughly the square root of the children's total
//! area. Class heights are min-max normalized instance counts of the
//! current window.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::MetricScores;
use crate::structure::{ClassId, ClassNode, PackageNode, StructureTree};
use crate::trace::CallEvent;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LayoutParams {
    pub min_height: f64,
    pub max_height: f64,
    /// Class box footprint edge length.
    pub footprint: f64,
    pub padding: f64,
    pub tile_thickness: f64,
    pub foundation_thickness: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams {
            min_height: 1.0,
            max_height: 6.0,
            footprint: 1.0,
            padding: 0.3,
            tile_thickness: 0.2,
            foundation_thickness: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxKind {
    Foundation,
    Package,
    Class,
}

/// Axis-aligned box; `(x, z)` is the minimum corner on the ground plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LayoutBox {
    pub node_id: String,
    pub kind: BoxKind,
    pub label: String,
    pub parent: Option<String>,
    pub x: f64,
    pub z: f64,
    pub width: f64,
    pub depth: f64,
    pub y_base: f64,
    pub height: f64,
}

impl LayoutBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.z + self.depth / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HeatSpotAnchor {
    pub class_id: ClassId,
    pub x: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CityLayout {
    /// Parents always precede their children.
    pub boxes: Vec<LayoutBox>,
    pub anchors: Vec<HeatSpotAnchor>,
}

impl CityLayout {
    pub fn foundation(&self) -> Option<&LayoutBox> {
        self.boxes.iter().find(|b| b.kind == BoxKind::Foundation)
    }

    pub fn class_box(&self, class: &ClassId) -> Option<&LayoutBox> {
        self.boxes
            .iter()
            .find(|b| b.kind == BoxKind::Class && b.node_id == class.as_str())
    }
}

enum Child<'a> {
    Package(&'a PackageNode),
    Class(&'a ClassNode),
}

impl Child<'_> {
    fn name(&self) -> &str {
        match self {
            Child::Package(p) => &p.name,
            Child::Class(c) => &c.name,
        }
    }
}

fn children<'a>(
    packages: &'a BTreeMap<String, PackageNode>,
    classes: &'a BTreeMap<String, ClassNode>,
) -> Vec<Child<'a>> {
    let mut out: Vec<Child<'a>> = packages
        .values()
        .map(Child::Package)
        .chain(classes.values().map(Child::Class))
        .collect();
    // stable sort keeps packages ahead of same-named classes
    out.sort_by(|a, b| a.name().cmp(b.name()));
    out
}

struct Packer<'a> {
    params: &'a LayoutParams,
    heights: &'a dyn Fn(&ClassId) -> f64,
}

impl Packer<'_> {
    /// Lays out a node's children relative to the node's own origin and
    /// returns the node footprint.
    fn pack(&self, kids: &[Child<'_>], parent_id: &str, top: f64, out: &mut Vec<LayoutBox>) -> (f64, f64) {
        let p = self.params.padding;
        let mut placed: Vec<(f64, f64, usize, usize)> = Vec::with_capacity(kids.len());
        let mut sizes = Vec::with_capacity(kids.len());
        for kid in kids {
            let first = out.len();
            let size = match kid {
                Child::Class(c) => {
                    out.push(LayoutBox {
                        node_id: c.id.to_string(),
                        kind: BoxKind::Class,
                        label: c.name.clone(),
                        parent: Some(parent_id.to_string()),
                        x: 0.0,
                        z: 0.0,
                        width: self.params.footprint,
                        depth: self.params.footprint,
                        y_base: top,
                        height: (self.heights)(&c.id),
                    });
                    (self.params.footprint, self.params.footprint)
                }
                Child::Package(pkg) => {
                    out.push(LayoutBox {
                        node_id: pkg.id.clone(),
                        kind: BoxKind::Package,
                        label: pkg.name.clone(),
                        parent: Some(parent_id.to_string()),
                        x: 0.0,
                        z: 0.0,
                        width: 0.0,
                        depth: 0.0,
                        y_base: top,
                        height: self.params.tile_thickness,
                    });
                    let inner = children(&pkg.packages, &pkg.classes);
                    let (w, d) = self.pack(&inner, &pkg.id, top + self.params.tile_thickness, out);
                    out[first].width = w;
                    out[first].depth = d;
                    (w, d)
                }
            };
            sizes.push(size);
            placed.push((0.0, 0.0, first, out.len()));
        }

        if kids.is_empty() {
            return (self.params.footprint + 2.0 * p, self.params.footprint + 2.0 * p);
        }

        let area: f64 = sizes.iter().map(|(w, d)| (w + p) * (d + p)).sum();
        let widest = sizes.iter().map(|s| s.0).fold(0.0, f64::max);
        let row_limit = widest.max(area.sqrt());

        let (mut x, mut z, mut row_depth, mut total_w) = (p, p, 0.0f64, 0.0f64);
        for (slot, (w, d)) in placed.iter_mut().zip(&sizes) {
            if x > p && x + w > p + row_limit {
                z += row_depth + p;
                x = p;
                row_depth = 0.0;
            }
            slot.0 = x;
            slot.1 = z;
            x += w + p;
            total_w = total_w.max(x);
            row_depth = row_depth.max(*d);
        }
        for (dx, dz, from, to) in placed {
            for b in &mut out[from..to] {
                b.x += dx;
                b.z += dz;
            }
        }
        (total_w, z + row_depth + p)
    }
}

/// Height of a class box for `count` given the window's count range.
pub fn class_height(count: f64, min_count: f64, max_count: f64, params: &LayoutParams) -> f64 {
    if max_count <= min_count {
        return params.min_height;
    }
    params.min_height + (params.max_height - params.min_height) * (count - min_count) / (max_count - min_count)
}

/// Lays out one application. Pure: identical inputs give bit-identical
/// geometry.
pub fn layout(tree: &StructureTree, instance_counts: &MetricScores, params: &LayoutParams) -> CityLayout {
    let classes = tree.class_ids();
    let counts: Vec<f64> = classes.iter().map(|c| instance_counts.get(c)).collect();
    let min_count = counts.iter().copied().fold(f64::INFINITY, f64::min);
    let max_count = counts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let heights = |c: &ClassId| class_height(instance_counts.get(c), min_count, max_count, params);

    let foundation_id = tree.key().to_string();
    let mut boxes = vec![LayoutBox {
        node_id: foundation_id.clone(),
        kind: BoxKind::Foundation,
        label: tree.app_name.clone(),
        parent: None,
        x: 0.0,
        z: 0.0,
        width: 0.0,
        depth: 0.0,
        y_base: 0.0,
        height: params.foundation_thickness,
    }];
    let packer = Packer {
        params,
        heights: &heights,
    };
    let kids = children(&tree.packages, &tree.classes);
    let (w, d) = packer.pack(&kids, &foundation_id, params.foundation_thickness, &mut boxes);
    boxes[0].width = w;
    boxes[0].depth = d;

    let anchors = boxes
        .iter()
        .filter(|b| b.kind == BoxKind::Class)
        .map(|b| {
            let (x, z) = b.center();
            HeatSpotAnchor {
                class_id: ClassId::from(b.node_id.as_str()),
                x,
                z,
            }
        })
        .collect();
    CityLayout { boxes, anchors }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Thickness {
    Small,
    Medium,
    Large,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommunicationEdge {
    pub caller_class_id: ClassId,
    pub callee_class_id: ClassId,
    pub call_count: u64,
    pub thickness_class: Thickness,
}

/// One edge per ordered (caller, callee) pair; root events have no caller
/// and produce no edge. Thickness is assigned by tercile of the call counts.
pub fn aggregate_edges(events: &[CallEvent]) -> Vec<CommunicationEdge> {
    let mut counts: BTreeMap<(&ClassId, &ClassId), u64> = BTreeMap::new();
    for e in events {
        if let Some(caller) = &e.caller {
            *counts.entry((caller, &e.callee)).or_insert(0) += 1;
        }
    }
    let mut sorted: Vec<u64> = counts.values().copied().collect();
    sorted.sort_unstable();
    let n = sorted.len();
    let (lower, upper) = if n == 0 {
        (0, 0)
    } else {
        (sorted[(n - 1) / 3], sorted[2 * (n - 1) / 3])
    };
    counts
        .into_iter()
        .map(|((caller, callee), call_count)| CommunicationEdge {
            caller_class_id: caller.clone(),
            callee_class_id: callee.clone(),
            call_count,
            thickness_class: if call_count <= lower {
                Thickness::Small
            } else if call_count <= upper {
                Thickness::Medium
            } else {
                Thickness::Large
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{AppKey, Landscape};
    use crate::trace::Window;
    use crate::wire::{parse_fqn, ConstructorNames};

    fn tree(fqns: &[&str]) -> StructureTree {
        let mut landscape = Landscape::new();
        for f in fqns {
            landscape.insert_structural(&parse_fqn(f, &ConstructorNames::default()).unwrap(), "h", "app");
        }
        landscape.app(&AppKey::new("h", "app")).unwrap().clone()
    }

    fn counts(pairs: &[(&str, f64)]) -> MetricScores {
        let mut s = MetricScores::new("instance_count", Window::new(0, 1));
        for (c, v) in pairs {
            s.values.insert(ClassId::from(*c), *v);
        }
        s
    }

    #[test]
    fn single_class_layout() {
        let params = LayoutParams::default();
        let city = layout(&tree(&["a.B.c"]), &counts(&[]), &params);
        let kinds: Vec<_> = city.boxes.iter().map(|b| b.kind).collect();
        assert_eq!(kinds, [BoxKind::Foundation, BoxKind::Package, BoxKind::Class]);
        let class = &city.boxes[2];
        assert_eq!((class.width, class.depth, class.height), (1.0, 1.0, 1.0));
        let pkg = &city.boxes[1];
        assert_eq!(pkg.y_base, 0.2);
        assert_eq!(class.y_base, 0.4);
        assert!((pkg.width - 1.6).abs() < 1e-12);
        assert_eq!(city.anchors.len(), 1);
        assert_eq!((city.anchors[0].x, city.anchors[0].z), class.center());
    }

    #[test]
    fn heights_span_min_to_max() {
        let city = layout(
            &tree(&["p.A.m", "p.B.m"]),
            &counts(&[("h:app:p.B", 10.0)]),
            &LayoutParams::default(),
        );
        let a = city.class_box(&ClassId::from("h:app:p.A")).unwrap();
        let b = city.class_box(&ClassId::from("h:app:p.B")).unwrap();
        assert_eq!((a.height, b.height), (1.0, 6.0));
    }

    #[test]
    fn parents_precede_children() {
        let city = layout(&tree(&["a.b.C.m", "a.D.m", "E.m"]), &counts(&[]), &LayoutParams::default());
        let mut seen = std::collections::HashSet::new();
        for b in &city.boxes {
            if let Some(p) = &b.parent {
                assert!(seen.contains(p), "{} before its parent", b.node_id);
            }
            seen.insert(b.node_id.clone());
        }
    }

    #[test]
    fn edges_aggregate_ordered_pairs() {
        let ev = |caller: Option<&str>, callee: &str| CallEvent {
            caller: caller.map(ClassId::from),
            callee: ClassId::from(callee),
            is_constructor_call: false,
            timestamp: 0,
        };
        let mut events: Vec<_> = (0..5).map(|_| ev(Some("A"), "B")).collect();
        events.push(ev(Some("B"), "A"));
        events.push(ev(None, "A"));
        let edges = aggregate_edges(&events);
        assert_eq!(edges.len(), 2);
        assert_eq!(edges[0].call_count, 5);
        assert_eq!(edges[0].caller_class_id.as_str(), "A");
        assert_eq!(edges[0].thickness_class, Thickness::Large);
        assert_eq!(edges[1].thickness_class, Thickness::Small);
        assert!(aggregate_edges(&[ev(None, "A"), ev(None, "B")]).is_empty());
    }

    #[test]
    fn tercile_thickness() {
        let ev = |caller: &'static str, n: usize| {
            (0..n).map(move |_| CallEvent {
                caller: Some(ClassId::from(caller)),
                callee: ClassId::from("Z"),
                is_constructor_call: false,
                timestamp: 0,
            })
        };
        let events: Vec<_> = ev("A", 1).chain(ev("B", 5)).chain(ev("C", 9)).collect();
        let t: Vec<_> = aggregate_edges(&events).iter().map(|e| e.thickness_class).collect();
        assert_eq!(t, [Thickness::Small, Thickness::Medium, Thickness::Large]);
    }
}
