"""Key distribution on top of the round protocol.

One party drives the first device component, the other drives the rest; on
generation rounds the second party records the unique bit that would make
the round a win, so the two bit strings agree exactly on every won round.
After the usual abort test, a one-way reconciliation pass corrects the
second party's string, and the certified key length is the expansion bound
minus the reconciliation leakage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .protocols import CategoricalSampler, Transcript, make_responder
from .rates import RateReport, certified_bound
from .recon import EirResult, LinearCode, eir_run
from .recon import syndrome as code_syndrome
from .seeding import BitStream
from .xorgames import GameConstants, XorGame


@dataclass(frozen=True)
class KdConfig:
    """Arguments of the key distribution protocol.

    lam is the disagreement parameter promised to reconciliation (key error
    fraction 1/2 - lam); lam_prime sits strictly between lam and w - 1/2
    for the agreement tail bound.  The reconciliation failure budget is
    exp(-qN) by convention.
    """

    game: XorGame
    constants: GameConstants
    N: int
    q: float
    eta: float
    lam: float
    lam_prime: float
    code: LinearCode
    kappa: float = 1.0
    epsilon_exp: float = 20.0
    f_constant: float = 1.0  # robustness constant in f(theta) = C sqrt(theta); unproven

    def __post_init__(self):
        w = self.constants.wG
        if not 0 < self.lam < w - 0.5:
            raise ValueError(f"key parameter must lie in (0, {w - 0.5})")
        if not self.lam < self.lam_prime < w - 0.5:
            raise ValueError("secondary parameter must lie in (lam, w - 1/2)")
        if not 0 < self.eta < 0.5:
            raise ValueError("error tolerance must lie in (0, 1/2)")
        if self.code.length != self.N:
            raise ValueError("reconciliation code length must equal the round count")

    @property
    def eir_epsilon(self) -> float:
        return float(np.exp(-self.q * self.N))

    @property
    def abort_threshold(self) -> float:
        return (1.0 - self.constants.wG + self.eta) * self.q * self.N


@dataclass(frozen=True)
class KdOutcome:
    success: bool
    abort_reason: str
    alice_key: str
    bob_key: str
    leaked_bits: int
    certified_bits: float
    disagreements: int
    wins: int
    seed_bits_used: int
    eir: EirResult | None
    report: RateReport | None
    transcript: Transcript
    public_transcript: dict = field(default_factory=dict)

    @property
    def keys_match(self) -> bool:
        return self.alice_key == self.bob_key


def run_rkd(config: KdConfig, behavior, seed_stream: BitStream,
            device_rng: np.random.Generator,
            shared_randomness: BitStream | None = None) -> KdOutcome:
    """Execute the key distribution protocol against an n-component device.

    The first component's outputs belong to the first party; the win-
    completing bit derived from the remaining components' outputs belongs
    to the second.  Game rounds are scored publicly.  After the abort test,
    the second party's generation bits are corrected through the one-way
    reconciliation protocol with failure budget exp(-qN).
    """
    game = config.game
    if behavior.n != game.n:
        raise ValueError(f"device has {behavior.n} components, game needs {game.n}")
    if behavior.n < 2:
        raise ValueError("key distribution needs at least two components")
    g_sampler = CategoricalSampler([1 - _frac(config.q), _frac(config.q)],
                                   seed_stream)
    input_sampler = CategoricalSampler([p for _, p, _ in game.entries], seed_stream)
    win_parity = {bits: game.win_parity(bits) for bits, _, _ in game.entries}
    zero = tuple([0] * game.n)
    zero_parity = win_parity.get(zero, 0)
    responder = make_responder(behavior)
    tr = Transcript()
    alice_bits = np.zeros(config.N, dtype=np.uint8)
    bob_bits = np.zeros(config.N, dtype=np.uint8)
    gen_mask = np.zeros(config.N, dtype=bool)
    wins = 0
    for i in range(config.N):
        before = seed_stream.consumed
        g = g_sampler.sample()
        tr.g_bits_used += seed_stream.consumed - before
        if g == 1:
            before = seed_stream.consumed
            inp = game.entries[input_sampler.sample()][0]
            tr.input_bits_used += seed_stream.consumed - before
            outs = responder(inp, device_rng)
            parity = 0
            for b in outs:
                parity ^= b
            won = parity == win_parity[inp]
            symbol = "P" if won else "F"
            if not won:
                tr.failures += 1
            else:
                wins += 1
            public_bit = 0 if won else 1
            alice_bits[i] = public_bit
            bob_bits[i] = public_bit
        else:
            inp = zero
            outs = responder(inp, device_rng)
            a = outs[0]
            rest = 0
            for b in outs[1:]:
                rest ^= b
            bbit = zero_parity ^ rest
            alice_bits[i] = a
            bob_bits[i] = bbit
            gen_mask[i] = True
            if a == bbit:
                wins += 1
            symbol = "H" if a == 0 else "T"
        tr.rounds.append((g, inp, outs, symbol))
    disagreements = int(np.sum(alice_bits[gen_mask] != bob_bits[gen_mask]))
    # everything the eavesdropper saw on the public channel, verbatim
    public = {
        "game_round_outputs": [
            (i, "".join(map(str, outs)))
            for i, (g, _, outs, _) in enumerate(tr.rounds) if g == 1],
    }
    if tr.failures > config.abort_threshold:
        return KdOutcome(
            success=False, abort_reason="failure threshold",
            alice_key="", bob_key="", leaked_bits=0, certified_bits=0.0,
            disagreements=disagreements, wins=wins,
            seed_bits_used=tr.seed_bits_used, eir=None, report=None,
            transcript=tr, public_transcript=public)
    eir = eir_run(alice_bits, bob_bits, config.code, config.lam,
                  config.eir_epsilon, shared=shared_randomness)
    public["syndrome"] = "".join(map(str, code_syndrome(config.code, alice_bits)))
    if eir.hash_value >= 0:
        public["hash_value"] = eir.hash_value
    if eir.aborted:
        return KdOutcome(
            success=False, abort_reason="reconciliation",
            alice_key="", bob_key="", leaked_bits=eir.leaked_bits,
            certified_bits=0.0, disagreements=disagreements, wins=wins,
            seed_bits_used=tr.seed_bits_used, eir=eir, report=None,
            transcript=tr, public_transcript=public)
    bob_corrected = eir.estimate
    alice_key = _key_symbols(tr, alice_bits)
    bob_key = _key_symbols(tr, bob_corrected)
    # the expansion bound needs the tolerance inside the certification
    # domain; the protocol itself runs for any eta in (0, 1/2)
    if 0 < config.eta < config.constants.vG_lower / 2:
        report = certified_bound(config.constants, config.N, config.q,
                                 config.eta, config.kappa,
                                 2.0 ** (-config.epsilon_exp))
        certified = max(report.bound - eir.leaked_bits, 0.0)
    else:
        report = None
        certified = 0.0
    return KdOutcome(
        success=True, abort_reason="",
        alice_key=alice_key, bob_key=bob_key,
        leaked_bits=eir.leaked_bits, certified_bits=float(certified),
        disagreements=disagreements, wins=wins,
        seed_bits_used=tr.seed_bits_used, eir=eir, report=report,
        transcript=tr, public_transcript=public)


def _frac(q):
    from fractions import Fraction

    return q if isinstance(q, Fraction) else Fraction(str(q))


def _key_symbols(tr: Transcript, bits: np.ndarray) -> str:
    out = []
    for i, (g, _, _, symbol) in enumerate(tr.rounds):
        if g == 1:
            out.append(symbol)
        else:
            out.append("H" if bits[i] == 0 else "T")
    return "".join(out)


def key_rate_report(outcome: KdOutcome, report: RateReport | None = None) -> dict:
    """Certified extractable bits after subtracting reconciliation leakage,
    with the seed/randomness accounting alongside."""
    if not outcome.success:
        raise ValueError("key rate is only defined for successful runs")
    report = report or outcome.report
    certified = max(report.bound - outcome.leaked_bits, 0.0)
    return {
        "expansion_bound": report.bound,
        "leaked_bits": outcome.leaked_bits,
        "certified_bits": float(certified),
        "leakage_exceeds_bound": bool(report.bound <= outcome.leaked_bits),
        "seed_bits_used": outcome.seed_bits_used,
        "eir_randomness": outcome.eir.randomness_used if outcome.eir else 0,
        "measured_code_rate": outcome.eir.measured_rate if outcome.eir else None,
    }


# ---------------------------------------------------------------------------
# Agreement-rate machinery


def eta_bar(lam_prime: float, constants: GameConstants, f=None,
            grid_step: float = 1e-4) -> float:
    """Supremum over the localization parameter of the agreement margin:
    w * theta * ((w - (1/2 + lam')) / w - f(theta)).

    f is the self-testing robustness profile (defaults to the square-root
    profile with unit constant); the supremum is positive whenever
    lam' < w - 1/2 because f vanishes at zero.
    """
    w = constants.wG
    if not 0 < lam_prime < w - 0.5:
        raise ValueError(f"parameter must lie in (0, {w - 0.5})")
    if f is None:
        f = lambda th: np.sqrt(th)  # noqa: E731
    # a log-spaced segment keeps suprema close to zero visible when the
    # margin is narrow
    thetas = np.concatenate([np.geomspace(1e-16, grid_step, 200),
                             np.arange(grid_step, 1.0, grid_step)])
    vals = w * thetas * ((w - (0.5 + lam_prime)) / w - np.asarray(f(thetas)))
    i = int(np.argmax(vals))
    lo = thetas[max(i - 1, 0)]
    hi = thetas[min(i + 1, len(thetas) - 1)]
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi

    def g(th):
        return -w * th * ((w - (0.5 + lam_prime)) / w - float(f(th)))

    c = b - golden * (b - a)
    d = a + golden * (b - a)
    fc, fd = g(c), g(d)
    for _ in range(60):
        if b - a < 1e-12:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - golden * (b - a)
            fc = g(c)
        else:
            a, c, fc = c, d, fd
            d = a + golden * (b - a)
            fd = g(d)
    return float(max(vals[i], -fc, -fd))


def refined_azuma_bound(epsilon: float, w: float, N: int) -> float:
    """Variance-weighted martingale tail: exp(-eps^2 w N / 3) for eps <= 1."""
    if not 0 < epsilon <= 1:
        raise ValueError("deviation must lie in (0, 1]")
    return float(np.exp(-epsilon**2 * w * N / 3.0))


def agreement_failure_bound(eta: float, eta_bar_val: float, lam: float,
                            lam_prime: float, q: float, N: int) -> float:
    """Probability bound for (no abort) AND (win count below (1/2 + lam) N):
    exp(-(eta_bar - eta)^2 q N / 3) + exp(-(lam' - lam)^2 N / 2)."""
    if not eta < eta_bar_val:
        raise ValueError("requires the tolerance below the agreement margin")
    return float(np.exp(-((eta_bar_val - eta) ** 2) * q * N / 3.0)
                 + np.exp(-((lam_prime - lam) ** 2) * N / 2.0))


@dataclass(frozen=True)
class AgreementCheck:
    bad_events: int
    trials: int
    frequency: float
    bound: float
    exceeded: bool


def agreement_bound_check(bad_events: int, trials: int, eta: float,
                          eta_bar_val: float, lam: float, lam_prime: float,
                          q: float, N: int) -> AgreementCheck:
    """Compare an empirical bad-event frequency against the agreement tail
    bound, flagging an excess beyond three binomial standard errors."""
    bound = agreement_failure_bound(eta, eta_bar_val, lam, lam_prime, q, N)
    freq = bad_events / trials
    p_smooth = (bad_events + 0.5) / (trials + 1)
    sigma = float(np.sqrt(p_smooth * (1 - p_smooth) / trials))
    return AgreementCheck(bad_events=bad_events, trials=trials, frequency=freq,
                          bound=bound, exceeded=bool(freq > bound + 3 * sigma))


def bad_event(outcome: KdOutcome, lam: float, N: int) -> bool:
    """The agreement bad event: the run did not abort at the failure
    threshold yet the win count fell to (1/2 + lam) N or below."""
    not_aborted = outcome.success or outcome.abort_reason == "reconciliation"
    return not_aborted and outcome.wins <= (0.5 + lam) * N
