"""Contact-calling dialog task with a stochastic, goal-directed simulated user.

The system fills two slots (contact name, phone type), confirms them and
places the call.  The user sometimes wants a phone type the contact does not
have, ignores questions, volunteers or oversupplies information, uses
synonyms (which the recognizer sometimes resolves wrongly) and hangs up.

Observation (12 floats)::

    [0:7]   one-hot last user act: silence, gave-name, gave-type, gave-both, yes, no, bye
    [7:11]  tracker flags: name-heard, type-heard, confirmed, uncovered-signal
    [11]    turn / turn_cap

On a silence turn the tracker flags are not reported (all zero), so a policy
that must act after an ignored prompt has to remember the dialog so far.

Each state also exposes an action mask: PlaceCall is only offered after a
confirmation, ConfirmBoth only when both slots are filled, and GiveUp only
after two turns or once a confirmed slot pair turned out to be uncovered.  ``step`` still accepts any
action; a masked action simply fails the dialog.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .config import ConfigFileError, coerce, load_kv

ASK_NAME, ASK_TYPE, CONFIRM, PLACE_CALL, GIVE_UP = range(5)
ACTIONS = ("AskName", "AskPhoneType", "ConfirmBoth", "PlaceCall", "GiveUp")
USER_ACTS = ("silence", "gave-name", "gave-type", "gave-both", "yes", "no", "bye")
SILENCE, GAVE_NAME, GAVE_TYPE, GAVE_BOTH, YES, NO, BYE = range(7)
PHONE_TYPES = ("work", "mobile", "home")
TYPE_SYNONYMS = {"work": ("office",), "mobile": ("cell",), "home": ("house",)}

OBS_DIM = 12
N_ACTIONS = 5
TURN_CAP = 10
# Turns the user tolerates before the per-turn hang-up hazard applies.
USER_PATIENCE = 2
# GiveUp is offered from this turn on (earlier only for a confirmed uncovered goal).
GIVE_UP_AFTER = 2
# Chance that the recognizer resolves a name synonym to the wrong contact.
SYNONYM_CONFUSION = 0.5


class DialogUsageError(RuntimeError):
    pass


@dataclass(frozen=True)
class Contact:
    name: str
    synonyms: tuple[str, ...]
    phone_types: tuple[str, ...]


@dataclass(frozen=True)
class Directory:
    contacts: tuple[Contact, ...]

    def __post_init__(self):
        if not self.contacts:
            raise ValueError("directory needs at least one contact")
        seen: set[str] = set()
        for c in self.contacts:
            if not c.phone_types:
                raise ValueError(f"contact {c.name!r} has no phone types")
            if any(t not in PHONE_TYPES for t in c.phone_types):
                raise ValueError(f"contact {c.name!r} has an unknown phone type")
            forms = {c.name, *c.synonyms}
            if forms & seen:
                raise ValueError(f"name forms of {c.name!r} collide with another contact")
            seen |= forms

    def __len__(self) -> int:
        return len(self.contacts)


@dataclass(frozen=True)
class UserModel:
    p_answer: float = 0.8
    p_oversupply: float = 0.1
    p_ignore: float = 0.15
    p_giveup_turn: float = 0.02
    p_uncovered_goal: float = 0.1
    p_yes_correct: float = 0.95
    p_no_wrong: float = 0.9
    p_restate_on_no: float = 0.5
    p_early_info: float = 0.3
    p_synonym: float = 0.3

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{f.name} must lie in [0, 1], got {v}")
        if self.p_answer + self.p_ignore > 1.0 + 1e-12:
            raise ValueError("p_answer + p_ignore must not exceed 1")


@dataclass
class UserGoal:
    contact: int
    phone_type: str
    covered: bool


def default_user_model() -> UserModel:
    return UserModel()


_DEFAULT_CONTACTS = (
    ("michael chen", ("mike chen",), ("work", "mobile")),
    ("jennifer lopez", ("jen lopez", "jenny lopez"), ("mobile",)),
    ("robert brown", ("bob brown", "rob brown"), ("work", "home")),
    ("susan miller", (), ("work",)),
    ("william davis", ("bill davis", "will davis"), ("mobile", "home")),
    ("elizabeth wilson", ("liz wilson", "beth wilson"), ("work", "mobile", "home")),
    ("david moore", ("dave moore",), ("work",)),
    ("patricia taylor", ("pat taylor",), ("mobile",)),
    ("james anderson", ("jim anderson", "jimmy anderson"), ("work", "mobile")),
    ("linda thomas", (), ("home",)),
    ("richard jackson", ("rick jackson", "dick jackson"), ("work",)),
    ("barbara white", ("barb white",), ("mobile", "home")),
    ("joseph harris", ("joe harris",), ("work", "mobile")),
    ("margaret martin", ("maggie martin", "peggy martin"), ("work",)),
    ("thomas garcia", ("tom garcia",), ("mobile",)),
    ("karen martinez", (), ("work", "home")),
    ("christopher lee", ("chris lee",), ("work", "mobile", "home")),
    ("nancy walker", (), ("mobile",)),
    ("daniel hall", ("dan hall", "danny hall"), ("work",)),
    ("katherine young", ("kate young", "kathy young"), ("work", "mobile")),
)


@functools.lru_cache(maxsize=None)
def default_directory() -> Directory:
    return Directory(tuple(Contact(n, s, t) for n, s, t in _DEFAULT_CONTACTS))


def load_dialog_config(path: str | Path) -> tuple[Directory, UserModel]:
    """Read ``p_* = value`` lines and optional ``contact = name | syn, syn | type, type`` lines."""
    kv = load_kv(path)
    contact_lines = kv.pop("contact", None)
    defaults = UserModel()
    probs = {}
    for key, value in kv.items():
        if not hasattr(defaults, key):
            raise ConfigFileError(f"unknown dialog config key {key!r}")
        probs[key] = coerce(value, getattr(defaults, key), key)
    directory = default_directory()
    if contact_lines:
        contacts = []
        for line in contact_lines.split("\n"):
            parts = [p.strip() for p in line.split("|")]
            if len(parts) != 3:
                raise ConfigFileError(f"contact line needs 'name | synonyms | types': {line!r}")
            syn = tuple(s.strip() for s in parts[1].split(",") if s.strip())
            types = tuple(s.strip() for s in parts[2].split(",") if s.strip())
            contacts.append(Contact(parts[0], syn, types))
        directory = Directory(tuple(contacts))
    return directory, UserModel(**probs)


class DialogEnv:
    obs_dim = OBS_DIM
    n_actions = N_ACTIONS

    def __init__(self, directory: Directory | None = None, user: UserModel | None = None,
                 turn_cap: int = TURN_CAP):
        self.directory = directory or default_directory()
        self.user = user or default_user_model()
        self.turn_cap = turn_cap
        self._uncoverable = [i for i, c in enumerate(self.directory.contacts)
                             if len(c.phone_types) < len(PHONE_TYPES)]
        self.done = True
        self.goal: UserGoal | None = None

    # -- user-side helpers ----------------------------------------------
    def _utter_name(self, rng) -> int:
        c = self.directory.contacts[self.goal.contact]
        if c.synonyms and rng.random() < self.user.p_synonym and rng.random() < SYNONYM_CONFUSION:
            others = [i for i in range(len(self.directory)) if i != self.goal.contact]
            if others:
                return others[int(rng.integers(len(others)))]
        return self.goal.contact

    def _utter_type(self, rng) -> str:
        # Phone-type synonyms ("cell", "office", ...) are all in the grammar.
        return self.goal.phone_type

    def _hear(self, rng, name: bool, phone_type: bool) -> int:
        if name:
            self.heard_name = self._utter_name(rng)
        if phone_type:
            self.heard_type = self._utter_type(rng)
        self.confirmed = False
        if self.heard_name is not None and self.heard_type is not None:
            types = self.directory.contacts[self.heard_name].phone_types
            self.uncovered_signal = self.heard_type not in types
        return GAVE_BOTH if (name and phone_type) else (GAVE_NAME if name else GAVE_TYPE)

    def _observe(self, act: int) -> np.ndarray:
        o = np.zeros(OBS_DIM)
        o[act] = 1.0
        if act != SILENCE:
            o[7] = self.heard_name is not None
            o[8] = self.heard_type is not None
            o[9] = self.confirmed
            o[10] = self.uncovered_signal
        o[11] = self.turn / self.turn_cap
        return o

    # -- public API -------------------------------------------------------
    def reset(self, rng: np.random.Generator) -> np.ndarray:
        u = self.user
        if self._uncoverable and rng.random() < u.p_uncovered_goal:
            ci = self._uncoverable[int(rng.integers(len(self._uncoverable)))]
            missing = [t for t in PHONE_TYPES if t not in self.directory.contacts[ci].phone_types]
            self.goal = UserGoal(ci, missing[int(rng.integers(len(missing)))], False)
        else:
            ci = int(rng.integers(len(self.directory)))
            types = self.directory.contacts[ci].phone_types
            self.goal = UserGoal(ci, types[int(rng.integers(len(types)))], True)
        self.heard_name = None
        self.heard_type = None
        self.confirmed = False
        self.uncovered_signal = False
        self.turn = 0
        self.done = False
        act = SILENCE
        if rng.random() < u.p_early_info:
            act = self._hear(rng, True, rng.random() < u.p_oversupply)
        self.last_act = act
        return self._observe(act)

    def action_mask(self) -> np.ndarray:
        both = self.heard_name is not None and self.heard_type is not None
        give_up = self.turn >= GIVE_UP_AFTER or (self.confirmed and self.uncovered_signal)
        return np.array([True, True, both, self.confirmed, give_up])

    def step(self, action: int, rng: np.random.Generator) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise DialogUsageError("step() called on a finished dialog; call reset()")
        u = self.user
        mask = self.action_mask()
        self.turn += 1
        reward = 0.0
        if action in (PLACE_CALL, GIVE_UP) or not mask[action]:
            if action == PLACE_CALL and mask[action]:
                correct = (self.heard_name == self.goal.contact and self.heard_type == self.goal.phone_type)
                reward = 1.0 if (correct and self.goal.covered) else 0.0
            self.done = True
            return self._observe(BYE), reward, True
        if self.turn > USER_PATIENCE and rng.random() < u.p_giveup_turn:
            self.done = True
            return self._observe(BYE), 0.0, True

        if action in (ASK_NAME, ASK_TYPE):
            r = rng.random()
            asked_name = action == ASK_NAME
            if r < u.p_answer:
                extra = rng.random() < u.p_oversupply
                act = self._hear(rng, asked_name or extra, (not asked_name) or extra)
            elif r < u.p_answer + u.p_ignore:
                act = SILENCE
            else:
                act = self._hear(rng, not asked_name, asked_name)
        else:  # CONFIRM
            if rng.random() < u.p_ignore:
                act = SILENCE
            else:
                correct = (self.heard_name == self.goal.contact and self.heard_type == self.goal.phone_type)
                says_yes = rng.random() < (u.p_yes_correct if correct else 1.0 - u.p_no_wrong)
                if says_yes:
                    self.confirmed = True
                    act = YES
                else:
                    self.heard_name = self.heard_type = None
                    self.confirmed = self.uncovered_signal = False
                    if rng.random() < u.p_restate_on_no:
                        self._hear(rng, True, True)
                    act = NO
        self.last_act = act
        if self.turn >= self.turn_cap:
            self.done = True
            return self._observe(act), 0.0, True
        return self._observe(act), reward, False


def reset(env: DialogEnv, rng: np.random.Generator) -> np.ndarray:
    return env.reset(rng)


def step(env: DialogEnv, action: int, rng: np.random.Generator):
    return env.step(action, rng)


def tracker_policy(obs: np.ndarray, memory: dict) -> int:
    """Hand-coded slot-filling policy that keeps its own dialog state in ``memory``.

    Used as the reference controller; relies on ``memory`` to bridge
    silence turns, where the observation carries no tracker flags.
    """
    act = int(np.argmax(obs[:7]))
    if act != SILENCE:
        memory["name"], memory["type"] = bool(obs[7]), bool(obs[8])
        memory["confirmed"], memory["uncovered"] = bool(obs[9]), bool(obs[10])
    if memory.get("confirmed"):
        return GIVE_UP if memory.get("uncovered") else PLACE_CALL
    if not memory.get("name"):
        return ASK_NAME
    if not memory.get("type"):
        return ASK_TYPE
    return CONFIRM
