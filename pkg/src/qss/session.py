"""In-process end-to-end sessions and the session report."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass

import numpy as np

from . import reference
from .config import SessionConfig
from .postprocess import (
    ABORT_NO_KEY,
    FinalKeys,
    bits_to_str,
    dealer_key,
    finalize_session,
    players_combine,
)
from .protocol import (
    ALL_COMBINATIONS,
    EstimationError,
    KeyRateReport,
    RoundTable,
    SiftResult,
    Status,
    combo_label,
    compute_stats,
    evaluate_session,
    run_quantum_stage,
    sift,
)
from .rng import SessionRngs

SCHEMA_VERSION = "1.0"
ESTIMATION_FAILED = "ESTIMATION_FAILED"


@dataclass
class SessionResult:
    config: SessionConfig
    table: RoundTable
    sift: SiftResult | None
    rates: KeyRateReport | None
    final: FinalKeys | None
    status: str
    detail: str = ""

    @property
    def report(self) -> dict:
        return build_report(self)


def simulate_session(config: SessionConfig) -> SessionResult:
    """Run every stage in one process with the per-party streams of ``config.seed``."""
    rngs = SessionRngs(config.seed)
    dealer = config.dealer_role
    adversary = config.adversary_spec
    table = run_quantum_stage(config.rounds, config.channel, adversary, rngs, basis_bias=config.basis_bias)
    try:
        rates, table = evaluate_session(
            table, dealer, config.estimation_fraction, rngs.dealer,
            adversary=adversary, adversary_rng=rngs.adversary,
        )
    except EstimationError as exc:
        return SessionResult(config, table, None, None, None, ESTIMATION_FAILED, str(exc))
    sifted = sift(table)
    table = sifted.table
    if rates.abort:
        return SessionResult(config, table, sifted, rates, None, ABORT_NO_KEY, "secure key rate is zero")
    final = finalize_session(
        dealer_key(table, dealer), players_combine(table, dealer), rates.qber, rngs.dealer,
        config.security_margin, config.reconciliation_passes,
    )
    return SessionResult(config, table, sifted, rates, final, final.status, final.detail)


def _round(x, nd: int = 12):
    return None if x is None else round(float(x), nd)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def table_rows(table: RoundTable) -> list[dict]:
    stats = compute_stats(table)
    rows = []
    for combo in ALL_COMBINATIONS:
        c = stats[combo]
        ref = reference.PUBLISHED.get(combo_label(combo))
        rows.append({
            "public_bits": combo_label(combo),
            "kept": c.kept,
            "ideal_eps": c.ideal,
            "eps": _round(c.eps),
            "abs_eps": _round(None if c.eps is None else abs(c.eps)),
            "eps_stderr": _round(c.eps_stderr),
            "eps_s_plus": _round(c.eps_plus),
            "eps_s_minus": _round(c.eps_minus),
            "qber": _round(c.qber),
            "qber_stderr": _round(c.qber_stderr),
            "counts": {"s=+": list(c.counts[0]), "s=-": list(c.counts[1])},
            "n": c.n,
            "empty": c.empty,
            "malformed": c.malformed,
            "published_eps": None if ref is None else ref["eps"],
            "published_qber": None if ref is None else ref["qber"],
        })
    return rows


def build_report(result: SessionResult) -> dict:
    """Report body; equal field-for-field for equal (config, seed)."""
    t = result.table
    detected = int(np.sum(t.detected_a & t.detected_b))
    body = {
        "schema_version": SCHEMA_VERSION,
        "config": result.config.protocol_dict(),
        "session_id": result.config.session_id,
        "status": result.status,
        "detail": result.detail,
        "asymptotic_rates": True,
        "rounds": {
            "total": len(t),
            "detected": detected,
            "estimation": int(np.sum(t.status == Status.ESTIMATION_SUBSET)),
            "sift_candidates": result.sift.n_candidates if result.sift else None,
            "kept": result.sift.n_kept if result.sift else None,
            "sift_fraction": _round(result.sift.kept_fraction) if result.sift else None,
        },
        "table": table_rows(t),
    }
    r = result.rates
    body["estimation"] = None if r is None else {
        "q1": _round(r.q1), "q2": _round(r.q2),
        "n1": r.n1, "n2": r.n2,
        "errors1": r.errors1, "errors2": r.errors2,
        "wilson1": [_round(x) for x in r.interval1],
        "wilson2": [_round(x) for x in r.interval2],
        "r1": _round(r.r1), "r2": _round(r.r2), "r": _round(r.r),
        "abort": r.abort,
        "malformed": r.malformed,
    }
    f = result.final
    pp = None
    if f is not None:
        pp = {
            "status": f.status,
            "sifted_key_length": f.sifted_length,
            "leak_bits": f.leak_bits,
            "corrections": f.transcript.corrections if f.transcript else 0,
            "qber_used": _round(f.qber_used),
            "final_key_length": f.length,
            "dealer_tag": f.dealer_tag,
            "players_tag": f.players_tag,
            "keys_match": f.keys_match,
        }
        if result.config.audit and f.transcript is not None:
            pp["transcript"] = f.transcript.to_dict()
            pp["toeplitz_seed"] = f.seed.to_dict() if f.seed else None
    body["post_processing"] = pp
    body["digests"] = {
        "rounds": _sha256(t.to_bytes()),
        "transcript": None if f is None or f.transcript is None else _sha256(canonical(f.transcript.to_dict())),
        "dealer_final_key": None if f is None or f.dealer_key is None else _sha256(bits_to_str(f.dealer_key).encode()),
    }
    return body


def canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def report_document(body: dict) -> dict:
    """Wrap a body with metadata that stays outside the digest."""
    return {
        "body": body,
        "meta": {"generated_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()), "body_sha256": _sha256(canonical(body))},
    }


def write_report(body: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report_document(body), fh, indent=2)
        fh.write("\n")


class ReportSchemaError(ValueError):
    pass


def load_report(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ReportSchemaError(f"{path}: not JSON ({exc.msg} at line {exc.lineno})") from None
    body = doc.get("body") if isinstance(doc, dict) else None
    if not isinstance(body, dict) or "schema_version" not in body:
        raise ReportSchemaError(f"{path}: missing report body or schema_version")
    major = str(body["schema_version"]).split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise ReportSchemaError(f"{path}: unsupported schema version {body['schema_version']}")
    rows = body.get("table")
    if not isinstance(rows, list) or len(rows) != 8:
        raise ReportSchemaError(f"{path}: report table must have 8 rows")
    return body
