mod common;

use std::collections::BTreeSet;

use common::connected_session;
use rawblue_core::probe::{
    infer_arg_order, permutations, probe_once, Feedback, PermutedAclCall, ProbeError, ProbeOptions, Role,
    Sentinels,
};

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Every role list of length 1..=4 that includes the handle.
fn role_sets() -> Vec<Vec<Role>> {
    (1u8..16)
        .map(|mask| {
            Role::ALL
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &r)| r)
                .collect::<Vec<_>>()
        })
        .filter(|roles| roles.contains(&Role::Handle))
        .collect()
}

#[test]
fn every_hidden_order_is_found_within_arity_factorial() {
    let session = connected_session(3);
    let live: BTreeSet<u16> = session.live_handles().into_iter().collect();
    let sentinels = Sentinels::choose(0x000B, &live, 0);
    for roles in role_sets() {
        for hidden in permutations(&roles) {
            for adaptive in [false, true] {
                let mut call = PermutedAclCall::new(hidden.clone()).unwrap();
                let v = infer_arg_order(&mut call, &roles, &session, ProbeOptions { adaptive })
                    .unwrap_or_else(|e| panic!("{roles:?} hidden {hidden:?}: {e}"));
                assert_eq!(v.permutation, hidden);
                assert!(v.probes_used <= factorial(roles.len()));
                assert_eq!(v.probes_used, v.evidence.len());
                assert_eq!(v.evidence.last().unwrap().feedback, Feedback::Success);
                assert!(v.evidence[..v.evidence.len() - 1]
                    .iter()
                    .all(|e| e.feedback != Feedback::Success));

                // a misplaced handle sentinel names the role that took the handle slot
                let handle_pos = hidden.iter().position(|&r| r == Role::Handle).unwrap();
                for e in &v.evidence {
                    if let Feedback::NoDeviceHandle(h) = e.feedback {
                        let landed = e.candidate[handle_pos];
                        assert_eq!(sentinels.role_of(u32::from(h)), Some(landed));
                    }
                }

                // the verdict still works with a different payload
                let fresh = Sentinels::choose(0x000B, &live, 0x5A);
                assert_eq!(
                    probe_once(&mut call, &v.permutation, &fresh, &session),
                    Feedback::Success
                );
            }
        }
    }
}

#[test]
fn adaptive_search_never_costs_more() {
    let session = connected_session(4);
    for hidden in permutations(&Role::ALL) {
        let run = |adaptive| {
            let mut call = PermutedAclCall::new(hidden.clone()).unwrap();
            infer_arg_order(&mut call, &Role::ALL, &session, ProbeOptions { adaptive })
                .unwrap()
                .probes_used
        };
        assert!(run(true) <= run(false), "{hidden:?}");
    }
}

#[test]
fn probing_needs_exactly_one_live_handle() {
    let (session, _) = common::sim_session(Default::default(), 0);
    let mut call = PermutedAclCall::new(vec![Role::Handle, Role::Request]).unwrap();
    let err = infer_arg_order(&mut call, &[Role::Handle, Role::Request], &session, ProbeOptions::default());
    assert_eq!(err.unwrap_err(), ProbeError::LiveHandles(0));
}

#[test]
fn arity_must_match() {
    let session = connected_session(5);
    let mut call = PermutedAclCall::new(vec![Role::Handle, Role::Request]).unwrap();
    let err = infer_arg_order(&mut call, &Role::ALL, &session, ProbeOptions::default());
    assert_eq!(err.unwrap_err(), ProbeError::ArityMismatch { arity: 2, roles: 4 });
}

struct Broken;

impl rawblue_core::probe::BlackBoxCallable for Broken {
    fn arity(&self) -> usize {
        2
    }

    fn invoke(
        &mut self,
        session: &rawblue_core::dispatch::DispatchSession,
        _args: &[rawblue_core::probe::Arg],
    ) -> rawblue_core::dispatch::DispatchStatus {
        session.send_raw_acl(&[], 0x000B, 0)
    }
}

#[test]
fn a_callable_that_never_sends_is_undecidable() {
    let session = connected_session(6);
    let err = infer_arg_order(&mut Broken, &[Role::Handle, Role::Request], &session, ProbeOptions::default())
        .unwrap_err();
    let ProbeError::Undecidable { evidence } = err else {
        panic!("{err:?}")
    };
    assert_eq!(evidence.len(), 2);
    assert!(evidence.iter().all(|e| e.feedback == Feedback::Malformed));
}
