"""Command-line front door: preprocess, train, calibrate, detect, evaluate,
profile, serve. Every verb is a thin shell over the library; anything it
prints can be recomputed from the artifacts it reads and writes."""

from __future__ import annotations

import argparse
import json
import math
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .calibration import CalibrationStore, Detector, calibrate, detect, statistic_for_text
from .corpus import (
    GENERAL,
    Domain,
    Origin,
    load_corpus,
    preprocess_corpus,
    save_corpus,
)
from .errors import StatguardError
from .evaluation import EvalReport, auc, profile_runtime, roc_curve, type1_power_table, write_report, write_tables_csv
from .service import ServiceState, run_service
from .training import TrainConfig, save_training_manifest, train
from .witness import WitnessFamily, save_witness


def _alphas(text: str) -> tuple[float, ...]:
    return tuple(float(a) for a in text.split(","))


def _load_state(root: str) -> ServiceState:
    return ServiceState(Path(root))


def _by_domain(samples):
    out: dict[Domain, list] = {}
    for s in samples:
        out.setdefault(s.domain, []).append(s)
    return out


# ── verbs ─────────────────────────────────────────────────────────────────

def cmd_preprocess(args) -> int:
    raw = load_corpus(args.input)
    kept, reports = preprocess_corpus(
        raw,
        min_words=args.min_words,
        trigram_max=args.trigram_max,
        rng=np.random.default_rng(args.seed),
    )
    save_corpus(args.out, kept)
    reasons = Counter(r.value for rep in reports.values() for r in rep.reasons)
    print(f"kept {len(kept)} of {len(raw)} -> {args.out}")
    for reason, count in sorted(reasons.items()):
        print(f"  dropped by {reason}: {count}")
    return 0


def cmd_train(args) -> int:
    state = _load_state(args.store)
    human = load_corpus(args.human)
    llm = load_corpus(args.llm)
    config = TrainConfig(
        family=WitnessFamily(args.family),
        step_size=args.step_size,
        max_iters=args.max_iters,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    trained = train(config, human, llm, state.provider)
    save_witness(Path(args.store) / "witness.json", trained.spec)
    manifest = args.manifest or str(Path(args.store) / "manifest.jsonl")
    save_training_manifest(manifest, config, trained)
    print(f"trained {args.family}: objective {trained.final_objective:.6f} "
          f"after {len(trained.objective_trace)} evaluations"
          + (" (stopped early)" if trained.stopped_early else ""))
    print(f"witness -> {Path(args.store) / 'witness.json'}")
    print(f"manifest -> {manifest}")
    print("note: existing nulls are stale for the new witness; rerun calibrate")
    return 0


def cmd_calibrate(args) -> int:
    state = _load_state(args.store)
    samples = [s for s in load_corpus(args.human) if s.origin == Origin.HUMAN]
    wanted = {Domain(d) for d in args.domain} if args.domain else None
    store = CalibrationStore(Path(args.store))
    for domain, group in sorted(_by_domain(samples).items(), key=lambda kv: kv[0].value):
        if wanted is not None and domain not in wanted:
            continue
        null = calibrate(group, state.detector, state.provider, domain)
        store.save(null)
        print(f"{domain.value}: m={null.m} p_floor={null.p_floor:.6g}")
    return 0


def cmd_detect(args) -> int:
    state = _load_state(args.store)
    text = args.text if args.text is not None else Path(args.file).read_text(encoding="utf-8")
    domain = GENERAL if args.domain == GENERAL else Domain(args.domain)
    decision = detect(text, domain, args.alpha, state.detector, state.provider, state.store)
    print(json.dumps({
        "statistic": decision.statistic,
        "p_value": decision.p_value,
        "per_domain_p": {d.value: p for d, p in decision.per_domain_p.items()},
        "alpha": decision.alpha,
        "reject": decision.reject,
        "domain_used": decision.domain_used.value if isinstance(decision.domain_used, Domain) else decision.domain_used,
        "threshold": None if math.isinf(decision.threshold) else decision.threshold,
    }))
    return 0


def cmd_evaluate(args) -> int:
    state = _load_state(args.store)
    human = load_corpus(args.human)
    llm = load_corpus(args.llm)

    def _scores(samples):
        return [
            statistic_for_text(state.detector, state.provider, s.text, s.tokens or None)
            for s in samples
        ]

    human_by, llm_by = _by_domain(human), _by_domain(llm)
    aucs = {}
    for domain in sorted(set(human_by) & set(llm_by), key=lambda d: d.value):
        aucs[("witness", domain)] = auc(_scores(human_by[domain]), _scores(llm_by[domain]))
    type1, power = type1_power_table(
        state.detector, state.provider, state.store, human, llm, alphas=args.alphas
    )
    report = EvalReport(
        auc_by_detector_domain=aucs,
        roc_points=roc_curve(_scores(human), _scores(llm)),
        type1_table=type1,
        power_table=power,
        tnr_bound={},
        variance_ratio={},
        runtime_points=[],
    )
    write_report(args.out, report)
    print(f"report -> {args.out}")
    if args.csv:
        write_tables_csv(args.csv, report)
        print(f"tables -> {args.csv}")
    for (label, domain), value in aucs.items():
        print(f"auc[{label}] {domain.value}: {value:.4f}")
    return 0


def cmd_profile(args) -> int:
    state = _load_state(args.store)
    model = getattr(state.provider, "model", None)
    if model is None:
        print("profile needs a store with a local toy provider", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    seqs = [list(rng.integers(0, model.vocab_size, size=n)) for n in args.lengths]
    points = profile_runtime(state.detector, state.provider, seqs)
    for count, seconds, peak in points:
        print(f"tokens={count} seconds={seconds:.6f} peak_bytes={peak}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for count, seconds, peak in points:
                fh.write(json.dumps({
                    "record": "runtime", "tokens": count,
                    "seconds": seconds, "peak_bytes": peak,
                }) + "\n")
        print(f"points -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    run_service(args.store, args.port)
    return 0


# ── parser ────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="statguard")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("preprocess", help="clean, filter, and dedupe a raw corpus file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-words", type=int, default=21)
    p.add_argument("--trigram-max", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="fit a witness on labeled corpora and install it in the store")
    p.add_argument("--human", required=True)
    p.add_argument("--llm", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--family", default=WitnessFamily.CONTEXT_LINEAR.value,
                   choices=[f.value for f in WitnessFamily if f != WitnessFamily.LOG_PROB_IDENTITY])
    p.add_argument("--step-size", type=float, default=0.05)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="build per-domain null distributions from human texts")
    p.add_argument("--human", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--domain", action="append", default=None,
                   help="restrict to this domain (repeatable)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="score one text against the calibrated store")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--file")
    p.add_argument("--domain", default=GENERAL)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="AUC, ROC, and error tables on held-out corpora")
    p.add_argument("--human", required=True)
    p.add_argument("--llm", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--alphas", type=_alphas, default=(0.01, 0.05, 0.1))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("profile", help="runtime and peak memory across graded token counts")
    p.add_argument("--store", required=True)
    p.add_argument("--lengths", type=lambda s: [int(x) for x in s.split(",")],
                   default=[16, 64, 256, 1600])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("serve", help="run the HTTP detection service over a store")
    p.add_argument("--store", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StatguardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
