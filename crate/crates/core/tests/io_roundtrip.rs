use csmf::io::{self, Columnar, CsvTable};
use csmf::kernels::{InteractionKernel, RateDescriptor};
use csmf::meanfield::{self, InitialDensitySpec};
use csmf::transport::{wp_exact, DiscreteMeasure};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()), Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_is_lossless(rows in prop::collection::vec(prop::collection::vec(finite(), 3), 0..20), tag in "[a-z]{1,8}") {
        let mut t = CsvTable::new(&["a", "b", "c"]).meta("tag", &tag);
        for r in rows {
            t.push(r);
        }
        let back = CsvTable::parse(&t.to_string_lossless()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn columnar_is_lossless(a in prop::collection::vec(finite(), 0..50)) {
        let b: Vec<f64> = a.iter().map(|x| -x).collect();
        let col = Columnar { columns: vec![("a".into(), a), ("b".into(), b)], meta: serde_json::json!({"k": 1}) };
        prop_assert_eq!(Columnar::from_bytes(&col.to_bytes().unwrap()).unwrap(), col);
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mu = DiscreteMeasure::new(2, vec![0.1, 0.2, -1.0, 3.0, 0.5, 0.5], vec![0.2, 0.3, 0.5]).unwrap();
    let nu = DiscreteMeasure::uniform(2, vec![1.0, 1.0, 2.0, -0.25]).unwrap();
    io::write_measure_csv(&dir.path().join("mu.csv"), &mu).unwrap();
    assert_eq!(io::read_measure_csv(&dir.path().join("mu.csv")).unwrap(), mu);

    let (_, plan) = wp_exact(&mu, &nu, 2.0).unwrap();
    io::write_plan_csv(&dir.path().join("plan.csv"), &plan).unwrap();
    assert_eq!(io::read_plan_csv(&dir.path().join("plan.csv")).unwrap(), plan);

    let spec = InitialDensitySpec::uniform_cube(1, (0.0, 1.0), (-1.0, 1.0));
    let k = InteractionKernel::cucker_smale(RateDescriptor::Constant { c: 1.0 }, 1).unwrap();
    let set = meanfield::marginal_samples(&spec, &k, 4, 2, 0.1, 10, 0.05, 9).unwrap();
    let col = io::samples_to_columnar(&set);
    col.write(&dir.path().join("samples.col")).unwrap();
    let back = io::samples_from_columnar(&Columnar::read(&dir.path().join("samples.col")).unwrap()).unwrap();
    assert_eq!(back, set);
}
