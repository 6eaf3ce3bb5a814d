use hetquery::extraction::validate_plan;
use hetquery::relexec::{execute, oracle_execute, parse_plan, QueryPlan, ResultTable};
use hetquery::TableSet;
use hetquery_testkit::{random_plan, random_tables};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> (TableSet, QueryPlan) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables = random_tables(&mut rng);
    let plan = random_plan(&mut rng, &tables.catalog());
    (tables, plan)
}

fn input_rows(plan: &QueryPlan, tables: &TableSet) -> ResultTable {
    let input = match plan {
        QueryPlan::Filter { input, .. }
        | QueryPlan::Project { input, .. }
        | QueryPlan::Sort { input, .. }
        | QueryPlan::Limit { input, .. }
        | QueryPlan::Aggregate { input, .. } => (**input).clone(),
        other => other.clone(),
    };
    let v = validate_plan(&input, &tables.catalog()).unwrap();
    execute(&v, tables).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn executor_matches_oracle(seed in any::<u64>()) {
        let (tables, plan) = instance(seed);
        let v = validate_plan(&plan, &tables.catalog()).map_err(|e| TestCaseError::fail(format!("{plan}: {e:?}")))?;
        let fast = execute(&v, &tables).unwrap();
        let slow = oracle_execute(&v, &tables).unwrap();
        prop_assert_eq!(&fast.schema, &slow.schema);
        prop_assert_eq!(fast.canonical_rows(), slow.canonical_rows(), "{}", plan);
        for p in &fast.provenance {
            prop_assert!(!p.is_empty());
        }
    }

    #[test]
    fn display_parse_round_trip(seed in any::<u64>()) {
        let (_, plan) = instance(seed);
        let text = plan.to_string();
        prop_assert_eq!(parse_plan(&text).unwrap(), plan);
    }

    #[test]
    fn operator_cardinalities(seed in any::<u64>()) {
        let (tables, plan) = instance(seed);
        let v = validate_plan(&plan, &tables.catalog()).unwrap();
        let out = execute(&v, &tables).unwrap();
        let again = execute(&v, &tables).unwrap();
        prop_assert_eq!(out.to_json().to_string(), again.to_json().to_string());
        match &plan {
            QueryPlan::Limit { n, .. } => prop_assert!(out.len() <= *n),
            QueryPlan::Sort { .. } | QueryPlan::Project { .. } => {
                let input = input_rows(&plan, &tables);
                prop_assert_eq!(out.len(), input.len());
                if matches!(plan, QueryPlan::Sort { .. }) {
                    prop_assert_eq!(out.canonical_rows(), input.canonical_rows());
                }
            }
            QueryPlan::Filter { .. } => {
                let input = input_rows(&plan, &tables).canonical_rows();
                for row in out.canonical_rows() {
                    prop_assert!(input.contains(&row));
                }
            }
            _ => {}
        }
    }
}

#[test]
fn join_is_bounded_by_the_product() {
    for seed in 0..300 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = random_tables(&mut rng);
        let names: Vec<&String> = tables.tables.keys().collect();
        if names.len() < 2 {
            continue;
        }
        let plan = QueryPlan::scan(names[0].clone()).join(QueryPlan::scan(names[1].clone()), "k");
        let v = validate_plan(&plan, &tables.catalog()).unwrap();
        let out = execute(&v, &tables).unwrap();
        let (l, r) = (tables.get(names[0]).unwrap().rows.len(), tables.get(names[1]).unwrap().rows.len());
        assert!(out.len() <= l * r);
        assert_eq!(out.canonical_rows(), oracle_execute(&v, &tables).unwrap().canonical_rows());
    }
}
