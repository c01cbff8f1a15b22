"""Exhaustive transition coverage for the consumer-side state machine."""

import itertools
import random

import pytest

from samforge.consumer import (
    COMMANDS,
    STATES,
    TABLE,
    ConsumerFsm,
    E_INPUT,
    E_STATE,
    S_AWAITING,
    S_CONFIGURED,
    S_ENDED,
    S_ERROR,
    S_HOLDING,
    S_START,
)

# Expected behaviour written out by hand, one row per (state, command):
# the action the machine must name and the state it must land in.  Kept
# independent of the production table so a bug there cannot hide here.
CASES = [
    (S_START, "CONFIGURE", "configure", S_START),
    (S_START, "GETFILE", "error", S_ERROR),
    (S_START, "RELEASE", "error", S_ERROR),
    (S_START, "BYE", "bye", S_START),
    (S_CONFIGURED, "CONFIGURE", "error", S_ERROR),
    (S_CONFIGURED, "GETFILE", "getfile", S_AWAITING),
    (S_CONFIGURED, "RELEASE", "error", S_ERROR),
    (S_CONFIGURED, "BYE", "bye", S_CONFIGURED),
    (S_AWAITING, "CONFIGURE", "error", S_ERROR),
    (S_AWAITING, "GETFILE", "error", S_ERROR),
    (S_AWAITING, "RELEASE", "error", S_ERROR),
    (S_AWAITING, "BYE", "error", S_ERROR),
    (S_HOLDING, "CONFIGURE", "error", S_ERROR),
    (S_HOLDING, "GETFILE", "error", S_ERROR),
    (S_HOLDING, "RELEASE", "release", S_HOLDING),
    (S_HOLDING, "BYE", "bye", S_HOLDING),
    (S_ENDED, "CONFIGURE", "error", S_ERROR),
    (S_ENDED, "GETFILE", "error", S_ERROR),
    (S_ENDED, "RELEASE", "error", S_ERROR),
    (S_ENDED, "BYE", "bye", S_ENDED),
    (S_ERROR, "CONFIGURE", "error", S_ERROR),
    (S_ERROR, "GETFILE", "error", S_ERROR),
    (S_ERROR, "RELEASE", "error", S_ERROR),
    (S_ERROR, "BYE", "error", S_ERROR),
]


def at_state(state):
    fsm = ConsumerFsm()
    fsm.state = state
    if state == S_HOLDING:
        fsm.current_file = 7
    return fsm


def test_case_table_is_total():
    assert {(s, c) for s, c, _, _ in CASES} == set(itertools.product(STATES, COMMANDS))
    assert len(CASES) == len(STATES) * len(COMMANDS) == 24
    assert set(TABLE) == set(itertools.product(STATES, COMMANDS))


@pytest.mark.parametrize("state,verb,expected,after", CASES)
def test_every_state_command_pair(state, verb, expected, after):
    fsm = at_state(state)
    action = fsm.command(verb, [])
    assert action[0] == expected
    assert fsm.state == after
    if expected == "error":
        assert action[1] == E_STATE
        assert fsm.diagnostic.startswith(E_STATE)


@pytest.mark.parametrize("state", STATES)
@pytest.mark.parametrize("verb", ["QUIT", "getfile", "FETCH", ""])
def test_unknown_verbs_fail_as_input_errors_everywhere(state, verb):
    fsm = at_state(state)
    action = fsm.command(verb, [])
    assert action == ("error", E_INPUT, f"unknown command {verb!r}")
    assert fsm.state == S_ERROR


def test_release_status_argument():
    assert at_state(S_HOLDING).command("RELEASE", []) == ("release", "consumed")
    assert at_state(S_HOLDING).command("RELEASE", ["consumed"]) == ("release", "consumed")
    assert at_state(S_HOLDING).command("RELEASE", ["skipped"]) == ("release", "skipped")
    fsm = at_state(S_HOLDING)
    action = fsm.command("RELEASE", ["banana"])
    assert action[0] == "error" and action[1] == E_INPUT
    assert fsm.state == S_ERROR


def test_outcome_callbacks_walk_the_happy_path():
    fsm = ConsumerFsm()
    assert fsm.command("CONFIGURE", ["p"]) == ("configure", ["p"])
    fsm.configured()
    assert fsm.state == S_CONFIGURED

    assert fsm.command("GETFILE", []) == ("getfile", [])
    assert fsm.state == S_AWAITING
    fsm.server_file(41)
    assert fsm.state == S_HOLDING and fsm.current_file == 41

    assert fsm.command("RELEASE", []) == ("release", "consumed")
    fsm.released()
    assert fsm.state == S_CONFIGURED and fsm.current_file is None

    fsm.command("GETFILE", [])
    fsm.server_end()
    assert fsm.state == S_ENDED and fsm.current_file is None


def test_server_error_reaches_error_state_with_diagnostic():
    fsm = at_state(S_AWAITING)
    fsm.server_error("E_PROJECT_ENDED", "project 'p' has ended")
    assert fsm.state == S_ERROR
    assert fsm.diagnostic == "E_PROJECT_ENDED project 'p' has ended"


def test_random_walks_never_escape_the_table():
    """Whatever garbage arrives, the machine stays in a defined state."""
    rng = random.Random(1138)
    verbs = list(COMMANDS) + ["NOPE", "", "getfile", "RELEASE"]
    for _ in range(500):
        fsm = ConsumerFsm()
        for _ in range(rng.randrange(1, 12)):
            verb = rng.choice(verbs)
            args = rng.choice(([], ["p"], ["banana"], ["consumed"]))
            action = fsm.command(verb, args)
            assert fsm.state in STATES
            assert action[0] in ("configure", "getfile", "release", "bye", "error")
            if action[0] == "getfile":
                fsm.server_file(rng.randrange(100))
            elif action[0] == "configure":
                fsm.configured()
