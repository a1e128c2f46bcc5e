use std::sync::Arc;

use usp_core::gateway::{ChatBackend, ChatRequest, FnChat, GatewayError};
use usp_core::simulator::{run_batch, run_context_batch, SeedMode, SimBackends, SimError, SimulationConfig, StopReason};
use usp_core::{Dialogue, Gateway, Role, UserProfile};

fn base() -> SimulationConfig {
    SimulationConfig::new(SeedMode::ContextSeeded {
        dialogue_id: String::new(),
        first_turn: String::new(),
    })
}

#[test]
fn one_failing_profile_does_not_sink_the_batch() {
    let g = Gateway::mock(3);
    let mock = g.chat_backend().clone();
    let flaky: Arc<dyn ChatBackend> = Arc::new(FnChat(move |req: &ChatRequest| {
        if req.slot("profile").contains("unlucky") && req.slot("turn") == "2" {
            Err(GatewayError::Backend {
                status: 500,
                body: "boom".into(),
            })
        } else {
            mock.complete(req)
        }
    }));
    let backends = SimBackends::new(flaky, g.chat_backend().clone());
    let profiles = vec![
        UserProfile::from_narratives("a", "You are a baker.", "You are cheerful."),
        UserProfile::from_narratives("b", "You are an unlucky gambler.", "You are gloomy."),
        UserProfile::from_narratives("c", "You are a pilot.", "You are precise."),
    ];
    let out = run_batch(&profiles, &base(), &backends).unwrap();
    assert_eq!(out.len(), 3);
    let sims: Vec<_> = out.into_iter().map(Result::unwrap).collect();
    assert_eq!(sims[0].stop_reason, StopReason::TurnLimit);
    assert_eq!(sims[2].stop_reason, StopReason::TurnLimit);
    assert_eq!(sims[1].stop_reason, StopReason::BackendError);
    assert!(matches!(sims[1].error, Some(GatewayError::Backend { status: 500, .. })));
    assert_eq!(sims[1].dialogue.user_turn_count(), 2);
    assert_eq!(sims[1].dialogue.meta["stop_reason"], "backend_error");
    assert_eq!(sims[0].dialogue.id, "sim-a");
}

#[test]
fn invalid_items_are_reported_in_place() {
    let g = Gateway::mock(1);
    let profiles = vec![
        UserProfile::from_narratives("ok", "You are a chef.", "You are calm."),
        UserProfile::from_narratives("empty", "", ""),
    ];
    let out = run_batch(&profiles, &base(), &SimBackends::from_gateway(&g)).unwrap();
    assert!(out[0].is_ok());
    assert!(matches!(out[1], Err(SimError::InvalidConfig(_))));
    assert!(matches!(run_batch(&[], &base(), &SimBackends::from_gateway(&g)), Err(SimError::EmptyBatch)));
}

#[test]
fn context_batch_is_seed_deterministic() {
    let g = Gateway::mock(9);
    let golden: Vec<Dialogue> = (0..3)
        .map(|i| Dialogue::new(format!("g{i}"), [(Role::User, format!("help me plan trip number {i}")), (Role::Assistant, "Sure.".into())]).unwrap())
        .collect();
    let run = || {
        run_context_batch(&golden, &base(), &SimBackends::from_gateway(&g))
            .unwrap()
            .into_iter()
            .map(|r| r.unwrap().dialogue)
            .collect::<Vec<_>>()
    };
    let a = run();
    assert_eq!(a, run());
    for (d, g) in a.iter().zip(&golden) {
        assert_eq!(d.turns[0].text, g.turns[0].text);
        assert_eq!(d.meta["target_id"], g.id);
    }
}
