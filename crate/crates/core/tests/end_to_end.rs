use std::fs;

use dsc_core::io::{read_instance, write_instance, MatrixStorage};
use dsc_core::lista::lista_cp_run;
use dsc_core::network::relative_deviation;
use dsc_core::pipeline::layer_class;
use dsc_core::suite::parse_suite_config;
use dsc_core::{
    compile, compute_schedule, generate_instance, run_suite, solve_layered, verify, ChainMode, DictionaryKind,
    EnvelopeRule, InstanceRecipe, Method, ScheduleOptions, SolveOptions, Tolerances,
};

fn recipe(shape: Vec<(usize, usize)>, lambda: Vec<usize>, seed: u64) -> InstanceRecipe {
    InstanceRecipe {
        shape,
        lambda,
        bound: 1.0,
        mode: ChainMode::ExactChain,
        noise0_norm: 0.0,
        dictionary: DictionaryKind::Incoherent,
        seed,
    }
}

#[test]
fn instance_survives_disk_round_trip_in_both_storages() {
    let inst = generate_instance(&recipe(vec![(16, 24), (24, 12)], vec![2, 1], 7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, storage) in [("inline.json", MatrixStorage::Inline), ("files.json", MatrixStorage::Files)] {
        let path = dir.path().join(name);
        write_instance(&inst, &path, storage).unwrap();
        assert_eq!(read_instance(&path).unwrap(), inst, "{name}");
    }
    assert!(dir.path().join("files.D2.mat.txt").is_file());
}

#[test]
fn schedule_network_and_iteration_agree_on_generated_signal() {
    let inst = generate_instance(&recipe(vec![(16, 32)], vec![2], 3)).unwrap();
    let dict = inst.dicts.layer(1);
    let class = layer_class(&inst, 1, 0.0).unwrap();
    let opts = ScheduleOptions {
        rule: EnvelopeRule::SupportAware,
        ..ScheduleOptions::default()
    };
    let schedule = compute_schedule(dict, class, 25, opts).unwrap();
    let iterates = lista_cp_run(&schedule, dict, &inst.y).unwrap();
    let net = compile(&schedule, dict, &class).unwrap();
    let out = net.forward(&inst.y).unwrap();
    assert_eq!(out.stage_readouts.len(), 25);
    for (k, readout) in out.stage_readouts.iter().enumerate() {
        assert!(relative_deviation(readout, &iterates[k + 1]) <= 1e-10, "stage {k}");
    }
    assert!(!out.carry_clipped);
}

#[test]
fn every_method_solves_a_two_layer_chain() {
    let inst = generate_instance(&recipe(vec![(16, 24), (24, 12)], vec![2, 1], 4)).unwrap();
    for (method, iters, tol) in [(Method::Lista, 60, 1e-6), (Method::Bp, 0, 1e-8), (Method::L0, 0, 1e-8)] {
        let opts = SolveOptions {
            method,
            iters,
            ..SolveOptions::default()
        };
        let run = solve_layered(&inst, &opts).unwrap();
        assert_eq!(run.layers.len(), 2);
        assert_eq!(run.envelope_violations(), 0, "{method}");
        for layer in &run.layers {
            let err = layer.final_error().unwrap();
            assert!(err < tol, "{method} layer {}: {err}", layer.layer);
        }
    }
}

#[test]
fn suite_artifacts_verify_and_are_reproducible() {
    let config = parse_suite_config(
        r#"{
            "recipes": [
                { "id": "a", "shape": [[8, 12]], "lambda": [1], "seed": 1 },
                { "id": "b", "shape": [[16, 24], [24, 12]], "lambda": [2, 1], "seed": 2 }
            ],
            "solvers": [{ "method": "lista", "iters": 30 }, { "method": "bp" }],
            "network_trials": 4
        }"#,
    )
    .unwrap();
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let report = run_suite(&config, first.path()).unwrap();
    assert!(report.success());
    assert_eq!(report.rows.len(), 4);
    run_suite(&config, second.path()).unwrap();
    assert_eq!(
        fs::read(first.path().join("summary.csv")).unwrap(),
        fs::read(second.path().join("summary.csv")).unwrap()
    );
    let check = verify(first.path(), &Tolerances::default()).unwrap();
    assert!(check.clean(), "{:?}", check.failures);
    assert_eq!(check.instances, 2);
}
