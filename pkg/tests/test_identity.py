import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from phenocloud.identity import (
    Assertion,
    ConfigError,
    Decision,
    Denial,
    JsonPrincipalStore,
    MappingConfig,
    Principal,
    PrincipalStore,
    UserRule,
    VoRule,
    issue_token,
    map_assertion,
    map_username,
    verify_token,
)

NOW = 1_700_000_000.0


def pheno_config(auto_create=True):
    return MappingConfig(vo_rules=[VoRule("pheno", "pheno", auto_create=auto_create)])


def fresh_assertion(vo="pheno", dn="/DC=es/CN=alice"):
    return Assertion(subject_dn=dn, vo=vo, not_before=NOW - 10, not_after=NOW + 3600)


# --- VO mapping --------------------------------------------------------------


def test_map_assertion_auto_creates_principal():
    store = PrincipalStore()
    outcome = map_assertion(pheno_config(), store, fresh_assertion(), NOW)
    assert outcome == Decision(tenant="pheno", username="/DC=es/CN=alice", created=True)
    assert store.get("/DC=es/CN=alice", "pheno").created_by == "auto"


def test_map_assertion_unlisted_vo_denied():
    outcome = map_assertion(pheno_config(), PrincipalStore(), fresh_assertion(vo="atlas"), NOW)
    assert outcome == Denial("vo-not-allowed", outcome.detail)


def test_map_assertion_without_auto_create_requires_existing_principal():
    store = PrincipalStore()
    outcome = map_assertion(pheno_config(auto_create=False), store, fresh_assertion(), NOW)
    assert isinstance(outcome, Denial) and outcome.reason == "unknown-principal"
    store.add(Principal(username="/DC=es/CN=alice", tenant="pheno"))
    outcome = map_assertion(pheno_config(auto_create=False), store, fresh_assertion(), NOW)
    assert isinstance(outcome, Decision) and not outcome.created


def test_expired_assertion_denied():
    stale = Assertion(subject_dn="/CN=x", vo="pheno", not_before=0.0, not_after=NOW - 1)
    outcome = map_assertion(pheno_config(), PrincipalStore(), stale, NOW)
    assert isinstance(outcome, Denial) and outcome.reason == "expired"


def test_not_yet_valid_assertion_denied():
    early = Assertion(subject_dn="/CN=x", vo="pheno", not_before=NOW + 10, not_after=NOW + 20)
    outcome = map_assertion(pheno_config(), PrincipalStore(), early, NOW)
    assert isinstance(outcome, Denial) and outcome.reason == "expired"


def test_denials_do_not_mutate_store():
    store = PrincipalStore()
    map_assertion(pheno_config(auto_create=False), store, fresh_assertion(), NOW)
    map_assertion(pheno_config(), store, fresh_assertion(vo="atlas"), NOW)
    assert store.all() == []


def test_auto_create_is_idempotent():
    store = PrincipalStore()
    map_assertion(pheno_config(), store, fresh_assertion(), NOW)
    second = map_assertion(pheno_config(), store, fresh_assertion(), NOW)
    assert isinstance(second, Decision) and not second.created
    assert len(store.all()) == 1


# --- username mapping --------------------------------------------------------


def test_map_username_regex_match():
    config = MappingConfig(user_rules=[UserRule(r"^[a-z]+@ifca\.es$", "ifca", True)])
    outcome = map_username(config, PrincipalStore(), "alice@ifca.es")
    assert isinstance(outcome, Decision) and outcome.tenant == "ifca"


def test_map_username_no_match_denied():
    config = MappingConfig(user_rules=[UserRule(r"^[a-z]+@ifca\.es$", "ifca", True)])
    outcome = map_username(config, PrincipalStore(), "alice@cern.ch")
    assert isinstance(outcome, Denial) and outcome.reason == "user-not-allowed"


def test_first_matching_user_rule_wins():
    config = MappingConfig(
        user_rules=[UserRule(r".*", "first", True), UserRule(r".*", "second", True)]
    )
    outcome = map_username(config, PrincipalStore(), "anyone")
    assert outcome.tenant == "first"


def test_pattern_must_match_full_username():
    config = MappingConfig(user_rules=[UserRule(r"[a-z]+", "t", True)])
    outcome = map_username(config, PrincipalStore(), "alice2")
    assert isinstance(outcome, Denial)


def test_bad_regex_rejected_at_config_time():
    with pytest.raises(ConfigError):
        MappingConfig(user_rules=[UserRule(r"([unclosed", "t", True)])


def test_empty_tenant_rejected():
    with pytest.raises(ConfigError):
        MappingConfig(vo_rules=[VoRule("pheno", "", True)])


def test_config_from_json_roundtrip():
    text = json.dumps(
        {
            "vo_rules": [{"vo": "pheno", "tenant": "pheno", "auto_create": True}],
            "user_rules": [{"pattern": "^a.*$", "tenant": "t"}],
        }
    )
    config = MappingConfig.from_json(text)
    assert config.vo_rules == [VoRule("pheno", "pheno", True)]
    assert config.user_rules == [UserRule("^a.*$", "t", False)]


def test_permuting_rules_after_first_match_never_changes_decision():
    rng = random.Random(1234)
    tenants = ["t0", "t1", "t2", "t3"]
    vos = ["pheno", "atlas", "cms", "lhcb"]
    for _ in range(1000):
        rules = [
            VoRule(rng.choice(vos), rng.choice(tenants), rng.random() < 0.5)
            for _ in range(rng.randint(1, 6))
        ]
        assertion = fresh_assertion(vo=rng.choice(vos + ["nobody"]))
        baseline = map_assertion(MappingConfig(vo_rules=rules), PrincipalStore(), assertion, NOW)
        matching = [i for i, r in enumerate(rules) if r.vo == assertion.vo]
        cut = matching[0] + 1 if matching else 0
        tail = rules[cut:]
        rng.shuffle(tail)
        permuted = rules[:cut] + tail
        outcome = map_assertion(MappingConfig(vo_rules=permuted), PrincipalStore(), assertion, NOW)
        assert type(outcome) is type(baseline)
        if isinstance(outcome, Decision):
            assert outcome.tenant == baseline.tenant


# --- principal store ---------------------------------------------------------


def test_json_store_persists_and_reloads(tmp_path):
    path = str(tmp_path / "principals.json")
    store = JsonPrincipalStore(path)
    map_assertion(pheno_config(), store, fresh_assertion(), NOW)
    reloaded = JsonPrincipalStore(path)
    principal = reloaded.get("/DC=es/CN=alice", "pheno")
    assert principal is not None and principal.created_by == "auto"


def test_store_add_returns_existing_on_duplicate():
    store = PrincipalStore()
    first = store.add(Principal("u", "t"))
    second = store.add(Principal("u", "t", created_by="auto"))
    assert second is first
    assert len(store.all()) == 1


# --- tokens ------------------------------------------------------------------

KEY = b"unit-test-signing-key"


def test_token_roundtrip():
    token = issue_token(KEY, "/CN=alice", "pheno", 3600, now=NOW)
    verified, reason = verify_token(KEY, token.encode(), now=NOW)
    assert reason is None
    assert (verified.subject, verified.tenant) == ("/CN=alice", "pheno")


def test_token_expiry():
    token = issue_token(KEY, "s", "t", 3600, now=NOW)
    _, reason = verify_token(KEY, token.encode(), now=NOW + 3601)
    assert reason == "expired"
    _, reason = verify_token(KEY, token.encode(), now=NOW + 3600)
    assert reason == "expired"  # boundary: now >= expires_at


def test_token_wrong_key():
    token = issue_token(KEY, "s", "t", 60, now=NOW)
    _, reason = verify_token(b"other-key", token.encode(), now=NOW)
    assert reason == "signature"


def test_token_malformed():
    assert verify_token(KEY, "garbage", NOW)[1] == "malformed"
    assert verify_token(KEY, "PCT1.x.y.z", NOW)[1] == "malformed"
    assert verify_token(KEY, "WRONG.a.b", NOW)[1] == "malformed"


def test_token_nonpositive_lifetime():
    with pytest.raises(ValueError):
        issue_token(KEY, "s", "t", 0, now=NOW)


def test_every_single_byte_flip_is_rejected():
    token = issue_token(KEY, "/CN=a", "t", 60, now=NOW).encode()
    raw = bytearray(token.encode("ascii"))
    for i in range(len(raw)):
        for bit in (0x01, 0x20):
            tampered = bytearray(raw)
            tampered[i] ^= bit
            if bytes(tampered) == bytes(raw):
                continue
            text = tampered.decode("ascii", errors="replace")
            verified, reason = verify_token(KEY, text, now=NOW)
            assert verified is None, f"flip at {i} (bit {bit:#x}) accepted"
            assert reason in ("malformed", "signature", "expired")


@settings(max_examples=50, deadline=None)
@given(
    subject=st.text(min_size=1, max_size=30),
    tenant=st.text(min_size=1, max_size=15),
    lifetime=st.floats(min_value=1, max_value=1e6),
)
def test_token_roundtrip_property(subject, tenant, lifetime):
    token = issue_token(KEY, subject, tenant, lifetime, now=NOW)
    verified, reason = verify_token(KEY, token.encode(), now=NOW)
    assert reason is None
    assert verified.subject == subject and verified.tenant == tenant
