"""Masked, encrypted ring accumulation of local regression statistics.

One session pools O = X'X and V = X'y (plus the contributed row count)
across a ring of members:

1. the initiator generates a session keypair and broadcasts the public
   key (n - 1 messages),
2. the initiator injects encrypted uniform random masks into the ring;
   every other member homomorphically adds its encrypted local
   statistics (members with nothing to contribute add encrypted zeros,
   so ring position does not reveal participation) and forwards;
   n ring messages return the accumulated ciphertexts to the initiator,
3. the initiator decrypts, subtracts its masks in the residue domain
   (so the pooled output is bit-identical across mask draws), adds its
   own statistics, and decodes the pooled O, V, and row count.

Every payload crossing a member boundary is a ciphertext; the
transcript records the exact bytes for the leakage audit.
"""

from __future__ import annotations

import random
import time
import uuid
from dataclasses import dataclass, field

import numpy as np

from curie import crypto
from curie.data import Dataset, DesignEncoding, NormalizationMap, apply_selections, \
    normalize_columns, to_design_matrix
from curie.engine import EMPTY, Agreement
from curie.errors import CurieError
from curie.transport import MessageLog


class EmptyRelease(CurieError):
    pass


class OverflowAbort(CurieError):
    pass


class ProtocolError(CurieError):
    pass


PHASE_PUBLIC_KEY = "public_key"
PHASE_RING = "ring_accumulate"
_PHASE_TAGS = {PHASE_PUBLIC_KEY: 1, PHASE_RING: 2}
_TAG_PHASES = {v: k for k, v in _PHASE_TAGS.items()}
ENVELOPE_VERSION = 1


# --------------------------------------------------------------------------
# local statistics

@dataclass(frozen=True)
class LocalStats:
    """O = X'X (m x m), V = X'y (m x 1), and the contributing row count,
    computed from the agreement-filtered dataset only."""

    O: np.ndarray
    V: np.ndarray
    n: int

    @property
    def m(self) -> int:
        return self.O.shape[0]


def local_stats(ds: Dataset, agreement: Agreement | None = None,
                bounds: NormalizationMap | None = None,
                encoding: DesignEncoding | None = None) -> LocalStats:
    """Apply the agreement's selections, optionally normalize numeric
    columns to [-1, 1] against *bounds*, and accumulate the sufficient
    statistics.  Raises :class:`EmptyRelease` when no rows survive."""
    if agreement is not None:
        if agreement.status == EMPTY:
            raise EmptyRelease(
                f"agreement {agreement.owner}->{agreement.requester} is empty")
        ds = apply_selections(ds, agreement.selections)
    if ds.n == 0:
        raise EmptyRelease("no rows released after selections")
    if bounds is not None:
        ds, _ = normalize_columns(ds, bounds)
    dm = to_design_matrix(ds, encoding)
    return LocalStats(dm.X.T @ dm.X, (dm.X.T @ dm.Y).reshape(-1, 1), dm.X.shape[0])


def zero_stats(m: int) -> LocalStats:
    return LocalStats(np.zeros((m, m)), np.zeros((m, 1)), 0)


# --------------------------------------------------------------------------
# protocol envelope

def pack_envelope(session_id: bytes, phase: str, sender: str, payload: bytes) -> bytes:
    sender_raw = sender.encode()
    return (bytes([ENVELOPE_VERSION]) + session_id + bytes([_PHASE_TAGS[phase]])
            + bytes([len(sender_raw)]) + sender_raw + payload)


def unpack_envelope(buf: bytes) -> tuple[bytes, str, str, bytes]:
    if buf[0] != ENVELOPE_VERSION:
        raise ProtocolError(f"unsupported envelope version {buf[0]}")
    session_id = buf[1:17]
    phase = _TAG_PHASES.get(buf[17])
    if phase is None:
        raise ProtocolError(f"unknown phase tag {buf[17]}")
    slen = buf[18]
    sender = buf[19:19 + slen].decode()
    return session_id, phase, sender, buf[19 + slen:]


def _pack_stats_payload(*matrices: crypto.CipherMatrix) -> bytes:
    return b"".join(crypto.serialize_cipher_matrix(C) for C in matrices)


def _unpack_stats_payload(buf: bytes, pk: crypto.PublicKey
                          ) -> tuple[crypto.CipherMatrix, ...]:
    out = []
    offset = 0
    while offset < len(buf):
        C, offset = crypto.parse_cipher_matrix(buf, pk, offset)
        out.append(C)
    return tuple(out)


# --------------------------------------------------------------------------
# session

@dataclass
class Transcript:
    session_id: bytes
    initiator: str
    ring: tuple[str, ...]
    log: MessageLog = field(default_factory=MessageLog)

    def __len__(self) -> int:
        return len(self.log)

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id.hex(),
            "initiator": self.initiator,
            "ring": list(self.ring),
            "messages": self.log.to_json(),
        }


@dataclass(frozen=True)
class RingResult:
    O_pool: np.ndarray
    V_pool: np.ndarray
    n_pool: int
    transcript: Transcript
    timings: dict[str, float]


class _RingMember:
    """Non-initiator state machine: waits for the session key, then adds
    its encrypted statistics to whatever arrives and forwards."""

    def __init__(self, member_id: str, stats: LocalStats | None, scale: int,
                 rng: random.Random, timings: dict[str, float]):
        self.member_id = member_id
        self.stats = stats
        self.scale = scale
        self.rng = rng
        self.timings = timings
        self.pk: crypto.PublicKey | None = None

    def on_public_key(self, payload: bytes) -> None:
        self.pk, _ = crypto.parse_public_key(payload)

    def on_accumulate(self, payload: bytes, m: int) -> bytes:
        if self.pk is None:
            raise ProtocolError(f"{self.member_id}: key not yet received")
        incoming = _unpack_stats_payload(payload, self.pk)
        if len(incoming) != 3:
            raise ProtocolError("expected O, V, count ciphertext matrices")
        stats = self.stats or zero_stats(m)
        t0 = time.perf_counter()
        try:
            enc_O = crypto.encrypt_matrix(self.pk, stats.O, self.scale, self.rng)
            enc_V = crypto.encrypt_matrix(self.pk, stats.V, self.scale, self.rng)
            enc_n = crypto.encrypt_matrix(self.pk, [[float(stats.n)]], self.scale, self.rng)
        except crypto.Overflow as exc:
            raise OverflowAbort(f"{self.member_id}: {exc}") from exc
        self.timings["encrypt"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        summed = tuple(crypto.add_cipher(a, b)
                       for a, b in zip(incoming, (enc_O, enc_V, enc_n)))
        self.timings["evaluate"] += time.perf_counter() - t0
        return _pack_stats_payload(*summed)


def run_ring_session(ring: list[str], initiator: str,
                     stats_provider, params: crypto.HEParams,
                     rng: random.Random,
                     log: MessageLog | None = None,
                     session_id: bytes | None = None,
                     keygen_rng: random.Random | None = None) -> RingResult:
    """Execute one pooled-statistics session.

    ``stats_provider(member_id)`` returns that member's
    :class:`LocalStats` or None for an empty contribution.  The ring is
    the declared order rotated to start at the initiator.  Message
    complexity is exactly (n - 1) key broadcasts + n ring hops.
    """
    if len(ring) < 2:
        raise ProtocolError("a ring session needs at least two members")
    if initiator not in ring:
        raise ProtocolError(f"initiator {initiator!r} not in ring")
    params.validate()

    start = ring.index(initiator)
    order = list(ring[start:]) + list(ring[:start])
    session_id = session_id or uuid.uuid4().bytes
    log = log if log is not None else MessageLog()
    timings = {"keygen": 0.0, "encrypt": 0.0, "evaluate": 0.0, "decrypt": 0.0}

    own_stats: LocalStats | None = stats_provider(initiator)
    m = None
    member_stats: dict[str, LocalStats | None] = {initiator: own_stats}
    for member in order[1:]:
        member_stats[member] = stats_provider(member)
    for s in member_stats.values():
        if s is not None:
            if m is not None and s.m != m:
                raise ProtocolError("members disagree on design width")
            m = s.m
    if m is None:
        raise EmptyRelease("no member has anything to contribute")
    if m > params.m_max:
        raise OverflowAbort(f"design width {m} exceeds validated m_max {params.m_max}")

    t0 = time.perf_counter()
    keys = crypto.keygen(params, keygen_rng or rng)
    timings["keygen"] = time.perf_counter() - t0
    pk, sk = keys.public, keys.secret

    members = {
        mid: _RingMember(mid, member_stats[mid], params.scale, rng, timings)
        for mid in order[1:]
    }

    key_payload = crypto.serialize_public_key(pk)
    for mid in order[1:]:
        log.send(initiator, mid, PHASE_PUBLIC_KEY,
                 pack_envelope(session_id, PHASE_PUBLIC_KEY, initiator, key_payload))
        members[mid].on_public_key(key_payload)

    # uniform residue masks; subtracted mod n at the end, so the pooled
    # output is independent of the draw
    mask_O = [[rng.randrange(pk.n) for _ in range(m)] for _ in range(m)]
    mask_V = [[rng.randrange(pk.n)] for _ in range(m)]
    mask_n = [[rng.randrange(pk.n)]]
    t0 = time.perf_counter()
    acc = (
        crypto.encrypt_residue_matrix(pk, mask_O, params.scale, rng),
        crypto.encrypt_residue_matrix(pk, mask_V, params.scale, rng),
        crypto.encrypt_residue_matrix(pk, mask_n, params.scale, rng),
    )
    timings["encrypt"] += time.perf_counter() - t0

    payload = _pack_stats_payload(*acc)
    hops = order[1:] + [initiator]
    sender = initiator
    for receiver in hops:
        log.send(sender, receiver, PHASE_RING,
                 pack_envelope(session_id, PHASE_RING, sender, payload))
        if receiver != initiator:
            payload = members[receiver].on_accumulate(payload, m)
        sender = receiver

    t0 = time.perf_counter()
    final = _unpack_stats_payload(payload, pk)
    residues = [crypto.decrypt_residue_matrix(sk, C) for C in final]
    timings["decrypt"] = time.perf_counter() - t0

    masks = (mask_O, mask_V, mask_n)
    own = own_stats or zero_stats(m)
    own_encoded = (
        crypto.encode_matrix(own.O, params.scale),
        crypto.encode_matrix(own.V, params.scale),
        crypto.encode_matrix([[float(own.n)]], params.scale),
    )
    pooled = []
    for res, mask, mine in zip(residues, masks, own_encoded):
        rows = []
        for r_row, m_row, o_row in zip(res, mask, mine):
            rows.append([
                crypto.decode_fixed(
                    pk.to_signed((r - mk) % pk.n) + o, params.scale)
                for r, mk, o in zip(r_row, m_row, o_row)
            ])
        pooled.append(np.array(rows))

    O_pool, V_pool, n_mat = pooled
    n_pool = int(round(n_mat[0][0]))
    transcript = Transcript(session_id, initiator, tuple(order), log)
    return RingResult(O_pool, V_pool, n_pool, transcript, timings)


# --------------------------------------------------------------------------
# leakage audit

@dataclass(frozen=True)
class LeakageFinding:
    kind: str
    member: str
    detail: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "member": self.member, "detail": self.detail}


@dataclass(frozen=True)
class LeakageReport:
    findings: tuple[LeakageFinding, ...]

    @property
    def ok(self) -> bool:
        return not self.findings

    def to_json(self) -> dict:
        return {"findings": [f.to_json() for f in self.findings]}


def audit_transcript(transcript: Transcript, corrupted: set[str],
                     reference_stats: dict[str, LocalStats] | None = None,
                     scale: int | None = None) -> LeakageReport:
    """Semi-honest leakage audit of a completed session.

    Corruption findings: with the session initiator corrupted (it holds
    the secret key), an honest member's input is recoverable exactly
    when both its ring predecessor and successor are corrupted: the
    coalition decrypts the ciphertexts entering and leaving it and
    differences them.  With two members, the initiator alone is both
    neighbors.  An honest initiator leaves nothing recoverable.

    Payload findings: no ring payload may carry a plaintext statistic
    entry; cells are scanned byte-wise against the reference encodings
    and, for suspiciously small (plaintext-range) cells, decoded and
    compared.
    """
    findings: list[LeakageFinding] = []
    ring = transcript.ring
    n = len(ring)
    if transcript.initiator in corrupted:
        for i, member in enumerate(ring):
            if member in corrupted:
                continue
            pred = ring[(i - 1) % n]
            succ = ring[(i + 1) % n]
            if pred in corrupted and succ in corrupted:
                findings.append(LeakageFinding(
                    "input_recoverable", member,
                    f"predecessor {pred} and successor {succ} corrupted with "
                    f"a corrupted initiator holding the session key"))

    if reference_stats and scale:
        pk = None
        for msg in transcript.log:
            _, phase, _, payload = unpack_envelope(msg.payload)
            if phase == PHASE_PUBLIC_KEY:
                pk, _ = crypto.parse_public_key(payload)
                break
        if pk is not None:
            targets: dict[int, str] = {}
            patterns: dict[bytes, str] = {}
            for member, stats in reference_stats.items():
                entries = list(np.asarray(stats.O).flat) + list(np.asarray(stats.V).flat)
                for e in entries:
                    enc = crypto.encode_fixed(float(e), scale)
                    if enc == 0:
                        continue
                    residue = pk.from_signed(enc)
                    targets[residue] = member
                    patterns[crypto.serialize_cipher_matrix(
                        crypto.CipherMatrix(pk, scale, (1, 1), (residue,)))[12:]] = member
            for msg in transcript.log:
                _, phase, sender, payload = unpack_envelope(msg.payload)
                if phase != PHASE_RING:
                    continue
                for pat, member in patterns.items():
                    if pat in payload:
                        findings.append(LeakageFinding(
                            "plaintext_leak", member,
                            f"encoded statistic bytes appear in a ring payload "
                            f"sent by {sender}"))
                for C in _unpack_stats_payload(payload, pk):
                    for cell in C.cells:
                        if cell < pk.n and cell in targets:
                            findings.append(LeakageFinding(
                                "plaintext_leak", targets[cell],
                                f"plaintext-range cell in payload from {sender}"))
    return LeakageReport(tuple(findings))
