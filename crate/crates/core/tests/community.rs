//! Enrolment, signed posting and moderation across the identity and
//! messaging modules.

use offgrid_core::identity::{
    generate_identity, hex, Authority, KeyHandle, Lineage, MemoryStore, RoleFlags, SecureStore, Subject,
};
use offgrid_core::messaging::{
    compose_and_sign, validate, ActionKind, CommunityView, IngestOutcome, Message, ModerationAction, Principal, Scope,
    Target,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const T0: i64 = 1_760_000_000;

fn enrol(auth: &mut Authority, rng: &mut ChaCha8Rng, uid: &str, roles: RoleFlags, zip: Option<&str>) -> Principal {
    let mut store = MemoryStore::new();
    let h = KeyHandle::new(uid);
    let (_, req) = generate_identity(Subject::new(uid, uid), vec![], &mut store, &h, T0, rng).unwrap();
    let id = hex(&auth.submit(req).unwrap());
    let cert = auth
        .approve(&id, Lineage::Civil, roles, zip.map(String::from), T0)
        .unwrap();
    Principal::new(store.get(&h).unwrap(), auth.chain_for(cert.serial).unwrap())
}

#[test]
fn moderator_hides_a_post_in_their_own_community_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut auth = Authority::bootstrap("Graz", Box::new(MemoryStore::new()), T0 - 10, &mut rng).unwrap();
    let ana = enrol(&mut auth, &mut rng, "ana", RoleFlags::empty(), None);
    let mod_8050 = enrol(&mut auth, &mut rng, "max", RoleFlags::MODERATOR, Some("8050"));
    let trust = auth.trust();

    let m = compose_and_sign(
        "water at the school",
        Scope::community("8050"),
        &ana,
        &trust,
        T0 * 1000,
        &mut rng,
    )
    .unwrap();
    // Through the wire format, as a peer would receive it.
    let received = Message::decode(&m.encode()).unwrap();
    let verdict = validate(&received, &trust, T0);
    assert!(verdict.is_authentic());

    let mut view = CommunityView::new("8050");
    assert_eq!(view.ingest(received.clone(), &verdict), IngestOutcome::Visible);
    assert_eq!(view.ingest(received, &verdict), IngestOutcome::Duplicate);

    let hide = ModerationAction::sign(
        ActionKind::Hide,
        Target::Message { id: m.id },
        "8050",
        &mod_8050,
        &trust,
        T0 * 1000 + 5,
    )
    .unwrap();
    view.moderate(&hide, &trust, T0).unwrap();
    assert!(view.visible().is_empty());
    assert_eq!(view.hidden_messages().len(), 1);

    let elsewhere = ModerationAction::sign(
        ActionKind::Hide,
        Target::Message { id: m.id },
        "8010",
        &mod_8050,
        &trust,
        T0 * 1000 + 6,
    );
    let mut other = CommunityView::new("8010");
    assert!(elsewhere.is_err() || other.moderate(&elsewhere.unwrap(), &trust, T0).is_err());
}

#[test]
fn unknown_root_is_rejected_even_with_a_valid_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut graz = Authority::bootstrap("Graz", Box::new(MemoryStore::new()), T0 - 10, &mut rng).unwrap();
    let vienna = Authority::bootstrap("Vienna", Box::new(MemoryStore::new()), T0 - 10, &mut rng).unwrap();
    let ana = enrol(&mut graz, &mut rng, "ana", RoleFlags::empty(), None);
    let m = compose_and_sign(
        "hello",
        Scope::community("8050"),
        &ana,
        &graz.trust(),
        T0 * 1000,
        &mut rng,
    )
    .unwrap();
    assert!(validate(&m, &graz.trust(), T0).is_authentic());
    assert!(!validate(&m, &vienna.trust(), T0).is_authentic());
}
