use std::ffi::{c_char, CStr, CString};
use std::ptr;

use anomagent_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    ag_string_free(s);
    out
}

unsafe fn last_error() -> String {
    CStr::from_ptr(ag_last_error_message())
        .to_string_lossy()
        .into_owned()
}

const SPEC: &str = r#"{"anomaly_image": "ano.png", "item_name": "pcb", "anomaly_type": "bent lead", "n": 3, "seed": 4}"#;

unsafe fn built() -> String {
    let spec = c(SPEC);
    let mut out = ptr::null_mut();
    assert_eq!(
        ag_build_trajectory_json(spec.as_ptr(), ptr::null(), &mut out),
        AgStatus::Ok
    );
    take(out)
}

#[test]
fn trajectory_handle_lifecycle() {
    unsafe {
        let json = c(&built());
        let mut h = ptr::null_mut();
        assert_eq!(ag_trajectory_from_json(json.as_ptr(), &mut h), AgStatus::Ok);

        let mut valid = false;
        assert_eq!(
            ag_trajectory_check_format(h, &mut valid, ptr::null_mut()),
            AgStatus::Ok
        );
        assert!(valid);

        let mut n = 0usize;
        assert_eq!(ag_trajectory_segment_count(h, &mut n), AgStatus::Ok);
        // nine tool calls of three segments each, then thinking and answer
        assert_eq!(n, 9 * 3 + 2);

        let mut text = ptr::null_mut();
        assert_eq!(ag_trajectory_serialize(h, &mut text), AgStatus::Ok);
        let transcript = c(&take(text));

        let mut back = ptr::null_mut();
        assert_eq!(ag_trajectory_to_json(h, &mut back), AgStatus::Ok);
        let original: serde_json::Value = serde_json::from_str(&take(back)).unwrap();
        let task = c(&original["task"].to_string());

        let mut reparsed = ptr::null_mut();
        assert_eq!(
            ag_trajectory_parse_transcript(transcript.as_ptr(), task.as_ptr(), &mut reparsed),
            AgStatus::Ok
        );
        let mut again = ptr::null_mut();
        assert_eq!(ag_trajectory_to_json(reparsed, &mut again), AgStatus::Ok);
        let round: serde_json::Value = serde_json::from_str(&take(again)).unwrap();
        assert_eq!(round, original);

        ag_trajectory_free(reparsed);
        ag_trajectory_free(h);
        ag_trajectory_free(ptr::null_mut());
    }
}

#[test]
fn invalid_trajectory_reports_reason() {
    unsafe {
        let mut t: serde_json::Value = serde_json::from_str(&built()).unwrap();
        t["segments"].as_array_mut().unwrap().pop();
        let json = c(&t.to_string());
        let mut h = ptr::null_mut();
        assert_eq!(ag_trajectory_from_json(json.as_ptr(), &mut h), AgStatus::Ok);
        let mut valid = true;
        let mut reason = ptr::null_mut();
        assert_eq!(
            ag_trajectory_check_format(h, &mut valid, &mut reason),
            AgStatus::Ok
        );
        assert!(!valid);
        assert!(!take(reason).is_empty());
        ag_trajectory_free(h);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(
            ag_trajectory_from_json(ptr::null(), &mut h),
            AgStatus::NullPointer
        );
        assert!(last_error().contains("null"));

        let bad = c("{not json");
        assert_eq!(
            ag_trajectory_from_json(bad.as_ptr(), &mut h),
            AgStatus::InvalidJson
        );

        let task = c(r#"{"item_name": "a", "anomaly_type": "b", "normal_image": "n"}"#);
        let garbage = c("hello <thinking>");
        assert_eq!(
            ag_trajectory_parse_transcript(garbage.as_ptr(), task.as_ptr(), &mut h),
            AgStatus::Protocol
        );
        assert!(!last_error().is_empty());

        let mut out = [0.0; 1];
        assert_eq!(
            ag_group_advantages([1.0].as_ptr(), 1, 1e-8, out.as_mut_ptr()),
            AgStatus::InvalidArgument
        );
        assert!(last_error().contains("at least 2"));

        ag_clear_error();
        assert!(ag_last_error_message().is_null());
    }
}

#[test]
fn numeric_kernels() {
    unsafe {
        let mut adv = [0.0; 2];
        assert_eq!(
            ag_group_advantages([0.0, 2.0].as_ptr(), 2, 1e-8, adv.as_mut_ptr()),
            AgStatus::Ok
        );
        assert_eq!(adv, [-1.0, 1.0]);

        let (mut loss, mut tokens) = (0.0, 0usize);
        let lp = [0.5f64.ln(), -4.0];
        let mask = [true, false];
        assert_eq!(
            ag_sft_loss(lp.as_ptr(), mask.as_ptr(), 2, &mut loss, &mut tokens),
            AgStatus::Ok
        );
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(tokens, 1);

        let mut is = 0.0;
        let eye: Vec<f64> = (0..16)
            .map(|i| if i % 5 == 0 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(
            ag_inception_score(eye.as_ptr(), 4, 4, &mut is),
            AgStatus::Ok
        );
        assert_eq!(is, 4.0);
        let bad = [0.5, 0.4];
        assert_eq!(
            ag_inception_score(bad.as_ptr(), 1, 2, &mut is),
            AgStatus::InvalidArgument
        );

        let mut r = 0.0;
        assert_eq!(
            ag_reflection_reward([0.4, 0.7, 0.6].as_ptr(), 3, &mut r),
            AgStatus::Ok
        );
        assert!((r - 0.3).abs() < 1e-15);
        assert_eq!(ag_reflection_reward(ptr::null(), 0, &mut r), AgStatus::Ok);
        assert_eq!(r, 0.0);
    }
}

#[test]
fn json_entry_points() {
    unsafe {
        let group = c(r#"{"rewards": [1.0, 1.0], "tokens": [
            {"new": [-1.0], "old": [-1.0], "ref": [-1.0], "mask": [true]},
            {"new": [-2.0], "old": [-2.0], "ref": [-2.0], "mask": [true]}]}"#);
        let mut out = ptr::null_mut();
        assert_eq!(
            ag_grpo_loss_json(group.as_ptr(), ptr::null(), &mut out),
            AgStatus::Ok
        );
        let loss: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(loss["empty_after_filter"], true);
        assert_eq!(loss["loss"], 0.0);

        let traj: serde_json::Value = serde_json::from_str(&built()).unwrap();
        let episode = serde_json::json!({
            "trajectory": traj,
            "final_score": 0.9,
            "qe_scores": [0.4, 0.6, 0.9],
            "action_sequence": ["prompt_gen", "image_gen", "quality_eval", "knowledge_retrieval",
                "image_gen", "quality_eval", "image_gen", "quality_eval", "mask_gen"],
            "turns": 10,
            "terminated_by": "answer"
        });
        let ep = c(&episode.to_string());
        assert_eq!(
            ag_score_episode_json(ep.as_ptr(), ptr::null(), &mut out),
            AgStatus::Ok
        );
        let b: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(b["terms"]["transition_penalty"], 0.0);
        assert_eq!(b["terms"]["format_indicator"], 1.0);
        let total = b["total"].as_f64().unwrap();
        let expected = 0.9 + 0.5 * 0.5 + 0.3 * (0.2 + 1.0);
        assert!((total - expected).abs() < 1e-12, "{total}");

        let weights = c(r#"{"alpha": -1.0}"#);
        assert_eq!(
            ag_score_episode_json(ep.as_ptr(), weights.as_ptr(), &mut out),
            AgStatus::InvalidArgument
        );
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(ag_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
