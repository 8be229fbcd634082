"""Simulated untrusted devices.

Four behavior variants: honest quantum strategies (shared state plus one
binary observable per component and input), noisy honest wrappers, a
partially trusted single-part device whose input-1 measurement is a mixture
of a trusted anticommuting measurement, an arbitrary one, and a fair coin,
and scripted adversaries with classical transcript memory.

Honest devices re-prepare their shared state every round (constant quantum
memory); only the partially trusted device carries quantum state across
rounds, and only adversaries carry classical memory.  Behaviors are
immutable and shareable; a DeviceState is owned by a single protocol run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .xorgames import XorGame

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=np.complex128)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)


def _check_involution(m, name, tol=1e-9):
    m = np.asarray(m, dtype=np.complex128)
    if np.max(np.abs(m - m.conj().T)) > tol:
        raise ValueError(f"{name} must be Hermitian")
    if np.max(np.abs(m @ m - np.eye(m.shape[0]))) > tol:
        raise ValueError(f"{name} must square to the identity")
    return m


@dataclass(frozen=True)
class HonestBehavior:
    """Shared pure state plus one +-1 observable per component and input."""

    n: int
    state: np.ndarray = field(repr=False)  # 2**n vector
    observables: tuple = field(repr=False)  # per component: (M_input0, M_input1)

    def __post_init__(self):
        psi = np.asarray(self.state, dtype=np.complex128).ravel()
        if psi.shape != (2**self.n,):
            raise ValueError(f"state must live on {self.n} qubits")
        if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
            raise ValueError("state must be normalized")
        if len(self.observables) != self.n:
            raise ValueError("need one observable pair per component")
        obs = []
        for j, pair in enumerate(self.observables):
            obs.append(tuple(
                _check_involution(m, f"component {j} observable") for m in pair))
        object.__setattr__(self, "state", psi)
        object.__setattr__(self, "observables", tuple(obs))

    def output_distribution(self, input_bits, transcript=None) -> np.ndarray:
        """Joint Born-rule distribution over the 2**n output strings."""
        return _honest_distribution(self, tuple(input_bits))


def _honest_distribution(behavior: HonestBehavior, input_bits) -> np.ndarray:
    # memoized on the instance so the cache lifetime matches the behavior
    cache = getattr(behavior, "_dist_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(behavior, "_dist_cache", cache)
    cached = cache.get(input_bits)
    if cached is not None:
        return cached
    n = behavior.n
    psi = behavior.state
    probs = np.empty(2**n)
    for out in range(2**n):
        proj = np.array([[1.0]], dtype=np.complex128)
        for j in range(n):
            m = behavior.observables[j][input_bits[j]]
            sign = 1.0 if (out >> (n - 1 - j)) & 1 == 0 else -1.0
            proj = np.kron(proj, 0.5 * (np.eye(2) + sign * m))
        probs[out] = max((psi.conj() @ proj @ psi).real, 0.0)
    probs = probs / probs.sum()
    cache[input_bits] = probs
    return probs


@dataclass(frozen=True)
class NoisyHonestBehavior:
    """Honest play corrupted per round with probability p.

    mode "uniform" replaces the output string by fresh uniform bits; mode
    "fixed" plays a fixed deterministic response table instead (a suboptimal
    strategy mixed in with constant probability).
    """

    base: HonestBehavior
    p: float
    mode: str = "uniform"
    fixed_outputs: tuple = ()

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("corruption probability must lie in [0, 1]")
        if self.mode not in ("uniform", "fixed"):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.mode == "fixed" and len(self.fixed_outputs) != 2**self.base.n:
            raise ValueError("fixed mode needs one output string per input string")

    @property
    def n(self) -> int:
        return self.base.n

    def output_distribution(self, input_bits, transcript=None) -> np.ndarray:
        honest = self.base.output_distribution(input_bits)
        if self.mode == "uniform":
            noise = np.full_like(honest, 1.0 / len(honest))
        else:
            idx = int("".join(map(str, input_bits)), 2)
            noise = np.zeros_like(honest)
            noise[self.fixed_outputs[idx]] = 1.0
        return (1.0 - self.p) * honest + self.p * noise


@dataclass(frozen=True)
class PartiallyTrustedBehavior:
    """Single-part device: trusted measurement on input 0; on input 1 a
    (v, 1-v-h, h) mixture of the anticommuting partner, an arbitrary
    bounded observable, and a fair coin.

    The quantum state lives on (device x environment); measurements act on
    the device factor only, so the environment purifies the device for the
    exact executor.
    """

    v: float
    h: float
    trusted_pair: tuple = field(repr=False)  # (T0, T1) on the device factor
    dishonest: np.ndarray = field(repr=False)
    state: np.ndarray = field(repr=False)  # vector on device x environment
    env_dim: int = 1

    def __post_init__(self):
        if not (0 <= self.v <= 1 and 0 <= self.h <= 1 and self.v + self.h <= 1 + 1e-12):
            raise ValueError("mixture weights must satisfy v, h >= 0 and v + h <= 1")
        t0 = _check_involution(self.trusted_pair[0], "trusted input-0 measurement")
        t1 = _check_involution(self.trusted_pair[1], "trusted input-1 measurement")
        if np.max(np.abs(t0 @ t1 + t1 @ t0)) > 1e-9:
            raise ValueError("trusted pair must anticommute")
        nop = np.asarray(self.dishonest, dtype=np.complex128)
        if np.max(np.abs(nop - nop.conj().T)) > 1e-9:
            raise ValueError("dishonest observable must be Hermitian")
        if np.linalg.norm(nop, 2) > 1.0 + 1e-9:
            raise ValueError("dishonest observable must have norm at most 1")
        psi = np.asarray(self.state, dtype=np.complex128).ravel()
        if psi.shape != (t0.shape[0] * self.env_dim,):
            raise ValueError("state dimension must equal device dim x env dim")
        if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
            raise ValueError("state must be normalized")
        object.__setattr__(self, "trusted_pair", (t0, t1))
        object.__setattr__(self, "dishonest", nop)
        object.__setattr__(self, "state", psi)

    @property
    def n(self) -> int:
        return 1

    @property
    def device_dim(self) -> int:
        return self.trusted_pair[0].shape[0]

    def kraus_for(self, input_bit: int):
        """(weight, K_out0, K_out1, kind) branches on the device factor.

        The coin branch carries identity-proportional Kraus operators
        (each outcome keeps the state and takes half the weight).
        """
        d = self.device_dim
        t0, t1 = self.trusted_pair
        if input_bit == 0:
            return [(1.0, 0.5 * (np.eye(d) + t0), 0.5 * (np.eye(d) - t0), "trusted")]
        branches = []
        if self.v > 0:
            branches.append(
                (self.v, 0.5 * (np.eye(d) + t1), 0.5 * (np.eye(d) - t1), "trusted"))
        w = 1.0 - self.v - self.h
        if w > 1e-15:
            sp = _op_sqrt(0.5 * (np.eye(d) + self.dishonest))
            sm = _op_sqrt(0.5 * (np.eye(d) - self.dishonest))
            branches.append((w, sp, sm, "dishonest"))
        if self.h > 0:
            s = np.sqrt(0.5) * np.eye(d)
            branches.append((self.h, s, s, "coin"))
        return branches


def _op_sqrt(m: np.ndarray) -> np.ndarray:
    w, u = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (u * np.sqrt(np.where(w > 0, w, 0.0))) @ u.conj().T


@dataclass(frozen=True)
class AdversarialBehavior:
    """Deterministic response program over classical transcripts.

    program(transcript, input_bits) -> output bits, where transcript is the
    tuple of (input_bits, output_bits) pairs from earlier rounds.
    """

    n: int
    program: object

    def output_distribution(self, input_bits, transcript=()) -> np.ndarray:
        out = np.zeros(2**self.n)
        bits = tuple(self.program(tuple(transcript or ()), tuple(input_bits)))
        out[int("".join(map(str, bits)), 2)] = 1.0
        return out


@dataclass
class DeviceState:
    """Per-run mutable device context: transcript memory and, for the
    partially trusted variant, the current joint state vector."""

    behavior: object
    transcript: list = field(default_factory=list)
    psi: np.ndarray | None = None

    def __post_init__(self):
        if isinstance(self.behavior, PartiallyTrustedBehavior) and self.psi is None:
            self.psi = self.behavior.state.copy()


def component_count(behavior) -> int:
    return behavior.n


def ghz_honest_device() -> HonestBehavior:
    """Three components sharing (|000> + |111>)/sqrt(2), measuring the x
    observable on input 0 and the y observable on input 1; wins the GHZ
    game with certainty."""
    psi = np.zeros(8, dtype=np.complex128)
    psi[0] = psi[7] = 1.0 / np.sqrt(2.0)
    return HonestBehavior(n=3, state=psi,
                          observables=((PAULI_X, PAULI_Y),) * 3)


def chsh_honest_device() -> HonestBehavior:
    """Two components sharing a Bell pair at the optimal CHSH angles."""
    psi = np.zeros(4, dtype=np.complex128)
    psi[0] = psi[3] = 1.0 / np.sqrt(2.0)
    bob0 = (PAULI_Z + PAULI_X) / np.sqrt(2.0)
    bob1 = (PAULI_Z - PAULI_X) / np.sqrt(2.0)
    return HonestBehavior(n=2, state=psi,
                          observables=((PAULI_Z, PAULI_X), (bob0, bob1)))


def respond(state: DeviceState, input_bits, rng: np.random.Generator):
    """One round of the device: outputs sampled from the Born rule (or the
    adversary's script), transcript extended, quantum state updated for the
    stateful variant."""
    behavior = state.behavior
    input_bits = tuple(int(b) for b in input_bits)
    if len(input_bits) != behavior.n:
        raise ValueError(f"expected {behavior.n} input bits, got {len(input_bits)}")
    if isinstance(behavior, PartiallyTrustedBehavior):
        out = (partially_trusted_respond(state, input_bits[0], rng),)
    elif isinstance(behavior, AdversarialBehavior):
        bits = tuple(behavior.program(tuple(state.transcript), input_bits))
        out = tuple(int(b) for b in bits)
    else:
        probs = behavior.output_distribution(input_bits, tuple(state.transcript))
        idx = int(rng.choice(len(probs), p=probs))
        out = tuple((idx >> (behavior.n - 1 - j)) & 1 for j in range(behavior.n))
    state.transcript.append((input_bits, out))
    return out


def partially_trusted_respond(state: DeviceState, input_bit: int,
                              rng: np.random.Generator) -> int:
    """Sample one output bit of the partially trusted device and collapse
    its joint state accordingly."""
    behavior: PartiallyTrustedBehavior = state.behavior
    if behavior.v + behavior.h > 1 + 1e-12:
        raise ValueError("mixture weights exceed 1")
    env = np.eye(behavior.state.size // behavior.device_dim)
    branches = behavior.kraus_for(input_bit)
    weights = np.array([w for w, _, _, _ in branches])
    pick = int(rng.choice(len(branches), p=weights / weights.sum()))
    _, k0, k1, kind = branches[pick]
    if kind == "coin":
        # state untouched, output an unbiased bit
        return int(rng.integers(0, 2))
    psi = state.psi
    amp0 = np.kron(k0, env) @ psi
    amp1 = np.kron(k1, env) @ psi
    p0 = float(np.vdot(amp0, amp0).real)
    p1 = float(np.vdot(amp1, amp1).real)
    total = p0 + p1
    out = 0 if rng.random() * total < p0 else 1
    post = amp0 if out == 0 else amp1
    state.psi = post / np.linalg.norm(post)
    return out


def random_partially_trusted(rng: np.random.Generator, v: float, h: float,
                             device_half_dim: int = 1,
                             env_dim: int = 2) -> PartiallyTrustedBehavior:
    """A random partially trusted device with a purifying environment.

    The trusted pair is a random unitary conjugation of (x, cos a * y +
    sin a * z) tensored with a random reflection, so the pair perfectly
    anticommutes by construction.
    """
    d = 2 * device_half_dim
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    u, _ = np.linalg.qr(a)
    angle = rng.uniform(0, 2 * np.pi)
    if device_half_dim == 1:
        base0, base1 = PAULI_X, np.cos(angle) * PAULI_Y + np.sin(angle) * PAULI_Z
    else:
        refl_basis = rng.normal(size=(device_half_dim, device_half_dim)) \
            + 1j * rng.normal(size=(device_half_dim, device_half_dim))
        q, _ = np.linalg.qr(refl_basis)
        refl = (q * np.where(rng.random(device_half_dim) < 0.5, 1.0, -1.0)) @ q.conj().T
        base0 = np.kron(PAULI_X, np.eye(device_half_dim))
        base1 = np.kron(np.cos(angle) * PAULI_Y + np.sin(angle) * PAULI_Z, refl)
    t0 = u @ base0 @ u.conj().T
    t1 = u @ base1 @ u.conj().T
    nop = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    nop = 0.5 * (nop + nop.conj().T)
    nop = nop / (np.linalg.norm(nop, 2) * rng.uniform(1.0, 2.0))
    psi = rng.normal(size=d * env_dim) + 1j * rng.normal(size=d * env_dim)
    psi = psi / np.linalg.norm(psi)
    return PartiallyTrustedBehavior(v=v, h=h, trusted_pair=(t0, t1),
                                    dishonest=nop, state=psi, env_dim=env_dim)


# ---------------------------------------------------------------------------
# Noise metric


def _conditional_tables(behavior, input_dist, transcript):
    """Joint conditional distribution over (input, output) given a transcript."""
    table = {}
    for bits, p in input_dist:
        if p <= 0:
            continue
        dist = behavior.output_distribution(bits, transcript)
        for idx, py in enumerate(dist):
            if py > 0:
                out = tuple((idx >> (behavior.n - 1 - j)) & 1
                            for j in range(behavior.n))
                table[(tuple(bits), out)] = p * py
    return table


def deviation(candidate, ideal, input_dist, horizon: int = 2,
              exhaustive: bool = True) -> float:
    """Worst-case history-conditioned average L1 deviation between two
    behaviors over a fixed per-round input distribution.

    Enumerates all histories of the candidate process up to the horizon and
    returns the maximum over histories of the average per-round L1 distance
    between the two (input, output) conditionals.  Only behaviors with
    computable conditional distributions are supported (honest, noisy
    honest, adversarial).
    """
    if horizon > 3 and exhaustive:
        raise ValueError("exhaustive enumeration supported for horizons <= 3")
    rounds = horizon + 1

    def l1(transcript):
        ta = _conditional_tables(candidate, input_dist, transcript)
        tb = _conditional_tables(ideal, input_dist, transcript)
        keys = set(ta) | set(tb)
        return sum(abs(ta.get(k, 0.0) - tb.get(k, 0.0)) for k in keys), ta

    def walk(transcript, depth):
        dist, table = l1(tuple(transcript))
        if depth == rounds - 1:
            return dist
        best = 0.0
        for (x, y), p in table.items():
            if p <= 0:
                continue
            best = max(best, walk(transcript + [(x, y)], depth + 1))
        return dist + best

    return walk([], 0) / rounds


def protocol_round_input_dist(game: XorGame, q: float):
    """The per-round input distribution of the game protocol: the all-zero
    generation input with weight 1-q plus the game's inputs with weight q."""
    dist = {tuple([0] * game.n): 1.0 - q}
    for bits, p, _ in game.entries:
        dist[bits] = dist.get(bits, 0.0) + q * float(p)
    return list(dist.items())


# ---------------------------------------------------------------------------
# Behavior specs (config-file loading)


def behavior_from_record(rec: dict):
    """Instantiate a behavior from a config record ({"variant": ..., ...})."""
    variant = rec["variant"]
    if variant == "honest":
        name = rec.get("device", "ghz")
        if name == "ghz":
            return ghz_honest_device()
        if name == "chsh":
            return chsh_honest_device()
        raise KeyError(f"unknown honest device {name!r}")
    if variant == "noisy_honest":
        base = behavior_from_record({"variant": "honest",
                                     "device": rec.get("device", "ghz")})
        return NoisyHonestBehavior(base=base, p=float(rec["p"]),
                                   mode=rec.get("mode", "uniform"),
                                   fixed_outputs=tuple(rec.get("fixed_outputs", ())))
    if variant == "adversarial":
        # keys are "i1,i2,..." (any round) or "round@i1,i2,..." (that round
        # of the transcript only); per-round entries take precedence
        table = {}
        for k, v in rec["table"].items():
            if "@" in k:
                rnd, bits = k.split("@", 1)
                key = (int(rnd), tuple(int(b) for b in bits.split(",")))
            else:
                key = (None, tuple(int(b) for b in k.split(",")))
            table[key] = tuple(v)
        n = int(rec["n"])

        def program(transcript, input_bits):
            hit = table.get((len(transcript), input_bits))
            if hit is None:
                hit = table.get((None, input_bits), tuple([0] * n))
            return hit

        return AdversarialBehavior(n=n, program=program)
    if variant == "partially_trusted":
        rng = np.random.default_rng(int(rec.get("instance_seed", 0)))
        return random_partially_trusted(rng, float(rec["v"]), float(rec["h"]),
                                        env_dim=int(rec.get("env_dim", 2)))
    raise KeyError(f"unknown behavior variant {variant!r}")
