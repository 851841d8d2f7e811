//! Property tests: the mixed-radix disaggregation search against a naive
//! brute-force oracle, and algebraic laws of meter selection queries.

mod common;

use common::{regular, write_dataset, MeterFixture};
use nilm_core::disagg::{disaggregate_sample, ApplianceModel, COModel, MODEL_VERSION};
use nilm_core::elec::{MeterGroup, SelectionQuery};
use nilm_core::TimeFrame;
use proptest::prelude::*;

fn model_from_states(states: Vec<Vec<f64>>) -> COModel {
    COModel {
        model_version: MODEL_VERSION,
        appliances: states
            .into_iter()
            .enumerate()
            .map(|(i, states_w)| ApplianceModel {
                meter_instance: i as u32 + 2,
                label: format!("appliance{i}"),
                states_w,
            })
            .collect(),
        trained_on: "fixture".into(),
        building: 1,
        train_timeframe: TimeFrame::new(0.0, 1.0),
        sample_period_s: 10.0,
    }
}

/// Naive oracle: enumerate every state combination recursively, keep the
/// first strictly better one by (residual, total power). Ties keep the
/// earlier combination in lexicographic order.
fn brute_force(y: f64, model: &COModel) -> Vec<usize> {
    fn recurse(
        y: f64,
        model: &COModel,
        depth: usize,
        current: &mut Vec<usize>,
        best: &mut (Vec<usize>, f64, f64),
    ) {
        if depth == model.appliances.len() {
            let total: f64 = current
                .iter()
                .zip(&model.appliances)
                .map(|(&i, a)| a.states_w[i])
                .sum();
            let residual = (y - total).abs();
            if residual < best.1 || (residual == best.1 && total < best.2) {
                *best = (current.clone(), residual, total);
            }
            return;
        }
        for i in 0..model.appliances[depth].states_w.len() {
            current.push(i);
            recurse(y, model, depth + 1, current, best);
            current.pop();
        }
    }
    let mut best = (Vec::new(), f64::INFINITY, f64::INFINITY);
    recurse(y.max(0.0), model, 0, &mut Vec::new(), &mut best);
    best.0
}

/// 1..=3 appliances, each with 0 W plus 1 or 2 ascending nonzero states.
fn arb_states() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::btree_set(1u32..2500, 1..=2).prop_map(|set| {
            let mut states = vec![0.0];
            states.extend(set.into_iter().map(f64::from));
            states
        }),
        1..=3,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn search_matches_brute_force(states in arb_states(), ys in prop::collection::vec(0u32..3000, 20)) {
        let model = model_from_states(states);
        for y in ys {
            let y = f64::from(y);
            prop_assert_eq!(disaggregate_sample(y, &model), brute_force(y, &model));
        }
    }

    #[test]
    fn assigned_states_never_exceed_demand_structure(states in arb_states(), y in 0.0f64..4000.0) {
        let model = model_from_states(states);
        let assignment = disaggregate_sample(y, &model);
        prop_assert_eq!(assignment.len(), model.appliances.len());
        for (i, a) in assignment.iter().zip(&model.appliances) {
            prop_assert!(*i < a.states_w.len());
        }
        // the chosen residual is minimal over a random probe of alternatives
        let chosen: f64 = assignment.iter().zip(&model.appliances).map(|(&i, a)| a.states_w[i]).sum();
        let zero_residual = y.max(0.0);
        prop_assert!((y.max(0.0) - chosen).abs() <= zero_residual + 1e-9);
    }
}

fn selection_fixture(dir: &tempfile::TempDir) -> nilm_core::DatasetHandle {
    let ts = regular(0.0, 10.0, &[1.0, 2.0, 3.0]);
    write_dataset(
        dir.path(),
        &[
            MeterFixture::site(1, ts.clone()),
            MeterFixture::appliance(2, "fridge", ts.clone()),
            MeterFixture::appliance(3, "light", ts.clone()),
            MeterFixture::appliance(4, "light", ts.clone()),
            MeterFixture::appliance(5, "kettle", ts),
        ],
    )
}

#[test]
fn select_is_idempotent_and_filters_correctly() {
    let dir = tempfile::tempdir().unwrap();
    let handle = selection_fixture(&dir);
    let group = MeterGroup::of_building(&handle, 1).unwrap();

    let q = SelectionQuery::parse("category=lighting").unwrap();
    let lights = group.select(&q).unwrap();
    let instances: Vec<u32> = lights.meters.iter().map(|m| m.meta.instance).collect();
    assert_eq!(instances, vec![3, 4]);
    let again = lights.select(&q).unwrap();
    assert_eq!(
        again
            .meters
            .iter()
            .map(|m| m.meta.instance)
            .collect::<Vec<_>>(),
        instances,
        "selection must be idempotent"
    );

    let q = SelectionQuery::parse("type=fridge").unwrap();
    assert_eq!(group.select(&q).unwrap().meters[0].meta.instance, 2);

    // conjunction of disjoint predicates selects nothing
    let q = SelectionQuery::parse("type=fridge,category=lighting").unwrap();
    assert!(group.select(&q).unwrap().is_empty());

    let q = SelectionQuery::parse("site_meter=true").unwrap();
    assert_eq!(group.select(&q).unwrap().meters[0].meta.instance, 1);
}

#[test]
fn selection_never_invents_meters() {
    let dir = tempfile::tempdir().unwrap();
    let handle = selection_fixture(&dir);
    let group = MeterGroup::of_building(&handle, 1).unwrap();
    for text in ["category=cold", "type=kettle", "type=light", "building=1"] {
        let q = SelectionQuery::parse(text).unwrap();
        let selected = group.select(&q).unwrap();
        let all: Vec<u32> = group.meters.iter().map(|m| m.meta.instance).collect();
        for m in &selected.meters {
            assert!(all.contains(&m.meta.instance), "query {text:?}");
        }
        assert!(selected.len() <= group.len());
    }
}

#[test]
fn submeters_are_the_depth_one_children_of_the_site_meter() {
    let dir = tempfile::tempdir().unwrap();
    let handle = selection_fixture(&dir);
    let group = MeterGroup::of_building(&handle, 1).unwrap();
    let subs: Vec<u32> = group
        .submeters()
        .unwrap()
        .meters
        .iter()
        .map(|m| m.meta.instance)
        .collect();
    assert_eq!(subs, vec![2, 3, 4, 5]);
    let mains: Vec<u32> = group
        .mains()
        .unwrap()
        .meters
        .iter()
        .map(|m| m.meta.instance)
        .collect();
    assert_eq!(mains, vec![1]);
}
