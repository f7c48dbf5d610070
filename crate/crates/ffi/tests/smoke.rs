//! Exercises the C ABI exactly as an embedding program would: through the
//! exported extern "C" functions, including the error paths.

use std::ffi::{CStr, CString};
use std::ptr;

use fedsim_ffi::*;

const CONFIG: &str = r#"
rounds = 2
seeds = [1]

[model]
kind = "logistic"

[data]
num_classes = 2
per_class = 20
dim = 2
separation = 2.0

[partition]
scheme = "iid"
clients = 4

[local]
epochs = 1

[[strategies]]
aggregator = "fedavg"

[[strategies]]
aggregator = "fedavg"
harmonize = true
"#;

fn config_cstring() -> CString {
    CString::new(CONFIG).unwrap()
}

fn last_error() -> String {
    let ptr = fedsim_last_error_message();
    assert!(!ptr.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_string()
}

#[test]
fn drive_a_simulation_through_the_c_api() {
    unsafe {
        let config = config_cstring();
        let mut handle: *mut FedsimSimulation = ptr::null_mut();
        let status = fedsim_simulation_new(config.as_ptr(), 1, 42, &mut handle);
        assert_eq!(status, FedsimStatus::Ok);
        assert!(!handle.is_null());
        assert!(
            fedsim_last_error_message().is_null(),
            "success clears the error"
        );

        assert_eq!(fedsim_simulation_run_round(handle), FedsimStatus::Ok);

        let mut rounds = usize::MAX;
        assert_eq!(
            fedsim_simulation_rounds_completed(handle, &mut rounds),
            FedsimStatus::Ok
        );
        assert_eq!(rounds, 1);

        assert_eq!(fedsim_simulation_run_all(handle), FedsimStatus::Ok);
        assert_eq!(
            fedsim_simulation_rounds_completed(handle, &mut rounds),
            FedsimStatus::Ok
        );
        assert_eq!(rounds, 2);

        let mut count = 0usize;
        assert_eq!(
            fedsim_simulation_param_count(handle, &mut count),
            FedsimStatus::Ok
        );
        // logistic on 2 features, 2 classes: 2*2 weights + 2 biases.
        assert_eq!(count, 6);

        let mut params = vec![0.0f64; count];
        assert_eq!(
            fedsim_simulation_global_params(handle, params.as_mut_ptr(), count),
            FedsimStatus::Ok
        );
        assert!(params.iter().all(|v| v.is_finite()));
        assert!(
            params.iter().any(|v| *v != 0.0),
            "trained params are nonzero"
        );

        let mut metrics = FedsimRoundMetrics {
            round: u64::MAX,
            test_loss: 0.0,
            test_accuracy: 0.0,
            conflict_ratio: 0.0,
            min_similarity: 0.0,
            projections_applied: 0,
        };
        assert_eq!(
            fedsim_simulation_last_round_metrics(handle, &mut metrics),
            FedsimStatus::Ok
        );
        assert_eq!(metrics.round, 1);
        assert!(metrics.test_loss.is_finite());
        assert!((0.0..=1.0).contains(&metrics.test_accuracy));
        assert!((0.0..=1.0).contains(&metrics.conflict_ratio));

        fedsim_simulation_free(handle);
    }
}

#[test]
fn invalid_config_reports_field_path() {
    unsafe {
        let config = CString::new(CONFIG.replace("scheme = \"iid\"", "scheme = \"nope\"")).unwrap();
        let mut handle: *mut FedsimSimulation = ptr::null_mut();
        let status = fedsim_simulation_new(config.as_ptr(), 0, 1, &mut handle);
        assert_eq!(status, FedsimStatus::InvalidConfig);
        assert!(handle.is_null(), "handle stays untouched on failure");
        assert!(last_error().contains("partition.scheme"));
    }
}

#[test]
fn out_of_range_strategy_index_is_rejected() {
    unsafe {
        let config = config_cstring();
        let mut handle: *mut FedsimSimulation = ptr::null_mut();
        let status = fedsim_simulation_new(config.as_ptr(), 2, 1, &mut handle);
        assert_eq!(status, FedsimStatus::InvalidConfig);
        assert!(last_error().contains("strategy index 2"));
    }
}

#[test]
fn null_arguments_are_reported_not_crashed() {
    unsafe {
        let mut handle: *mut FedsimSimulation = ptr::null_mut();
        assert_eq!(
            fedsim_simulation_new(ptr::null(), 0, 1, &mut handle),
            FedsimStatus::NullPointer
        );
        let config = config_cstring();
        assert_eq!(
            fedsim_simulation_new(config.as_ptr(), 0, 1, ptr::null_mut()),
            FedsimStatus::NullPointer
        );
        assert_eq!(
            fedsim_simulation_run_round(ptr::null_mut()),
            FedsimStatus::NullPointer
        );
        assert_eq!(
            fedsim_simulation_run_all(ptr::null_mut()),
            FedsimStatus::NullPointer
        );
        let mut rounds = 0usize;
        assert_eq!(
            fedsim_simulation_rounds_completed(ptr::null_mut(), &mut rounds),
            FedsimStatus::NullPointer
        );
        let mut out = 0.0f64;
        assert_eq!(
            fedsim_simulation_global_params(ptr::null_mut(), &mut out, 1),
            FedsimStatus::NullPointer
        );
        assert!(!fedsim_last_error_message().is_null());
        // Freeing null is a documented no-op.
        fedsim_simulation_free(ptr::null_mut());
    }
}

#[test]
fn wrong_buffer_length_is_a_size_mismatch() {
    unsafe {
        let config = config_cstring();
        let mut handle: *mut FedsimSimulation = ptr::null_mut();
        assert_eq!(
            fedsim_simulation_new(config.as_ptr(), 0, 7, &mut handle),
            FedsimStatus::Ok
        );
        let mut too_small = vec![0.0f64; 2];
        assert_eq!(
            fedsim_simulation_global_params(handle, too_small.as_mut_ptr(), 2),
            FedsimStatus::BufferSizeMismatch
        );
        assert!(last_error().contains("6"));
        fedsim_simulation_free(handle);
    }
}

#[test]
fn metrics_before_any_round_is_a_runtime_error() {
    unsafe {
        let config = config_cstring();
        let mut handle: *mut FedsimSimulation = ptr::null_mut();
        assert_eq!(
            fedsim_simulation_new(config.as_ptr(), 0, 7, &mut handle),
            FedsimStatus::Ok
        );
        let mut metrics = FedsimRoundMetrics {
            round: 0,
            test_loss: 0.0,
            test_accuracy: 0.0,
            conflict_ratio: 0.0,
            min_similarity: 0.0,
            projections_applied: 0,
        };
        assert_eq!(
            fedsim_simulation_last_round_metrics(handle, &mut metrics),
            FedsimStatus::RuntimeError
        );
        assert!(last_error().contains("no rounds"));
        fedsim_simulation_free(handle);
    }
}

#[test]
fn quadratic_accuracy_is_nan_through_the_abi() {
    let quadratic = r#"
rounds = 1
seeds = [1]

[model]
kind = "quadratic"
curvature = [1.0, 1.0]
target = [0.5, -0.5]

[data]
num_classes = 1
per_class = 20
dim = 2
separation = 1.0
standardize = false

[partition]
scheme = "iid"
clients = 2

[local]
epochs = 1
momentum = 0.0
"#;
    unsafe {
        let config = CString::new(quadratic).unwrap();
        let mut handle: *mut FedsimSimulation = ptr::null_mut();
        assert_eq!(
            fedsim_simulation_new(config.as_ptr(), 0, 3, &mut handle),
            FedsimStatus::Ok
        );
        assert_eq!(fedsim_simulation_run_all(handle), FedsimStatus::Ok);
        let mut metrics = FedsimRoundMetrics {
            round: 0,
            test_loss: 0.0,
            test_accuracy: 0.0,
            conflict_ratio: 0.0,
            min_similarity: 0.0,
            projections_applied: 0,
        };
        assert_eq!(
            fedsim_simulation_last_round_metrics(handle, &mut metrics),
            FedsimStatus::Ok
        );
        assert!(metrics.test_accuracy.is_nan());
        fedsim_simulation_free(handle);
    }
}

#[test]
fn run_experiment_writes_artifacts_and_reports_total_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = CString::new(tmp.path().join("runs").to_str().unwrap()).unwrap();
    unsafe {
        let config = config_cstring();
        assert_eq!(
            fedsim_run_experiment(config.as_ptr(), out.as_ptr()),
            FedsimStatus::Ok
        );
        assert!(tmp.path().join("runs/fedavg/run_1/metrics.csv").exists());
        assert!(tmp
            .path()
            .join("runs/fedavg+harmonize/run_1/metrics.csv")
            .exists());

        let diverging = CString::new(
            r#"
rounds = 1
seeds = [7]

[model]
kind = "quadratic"
curvature = [1e8, 1e8]
target = [1.0, 1.0]

[data]
num_classes = 1
per_class = 30
dim = 2
separation = 1.0
standardize = false

[partition]
scheme = "iid"
clients = 5

[local]
epochs = 30
batch_size = 6
momentum = 0.0
"#,
        )
        .unwrap();
        let out2 = CString::new(tmp.path().join("bad").to_str().unwrap()).unwrap();
        assert_eq!(
            fedsim_run_experiment(diverging.as_ptr(), out2.as_ptr()),
            FedsimStatus::RuntimeError
        );
        assert!(last_error().contains("diverged"));
    }
}
