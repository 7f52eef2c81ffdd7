"""Command-line front end: file-based, deterministic pipeline stages.

    threeclass-sasv synth     --out DIR
    threeclass-sasv trials    --manifest M --embeddings E --out trials.jsonl
    threeclass-sasv train     --trials T --manifest M --embeddings E --out model.json --loss-curve loss.csv
    threeclass-sasv score     --trials T --manifest M --embeddings E --model model.json --out scores.tsv --logits logits.tsv
    threeclass-sasv calibrate --logits logits.tsv --model model.json --out calib.json
    threeclass-sasv eval      --scores scores.tsv --out report.json
    threeclass-sasv hist      --scores scores.tsv --out hist.csv

Exit status: 0 success, 2 validation error, 3 runtime error. Failures print a
single ``error[CODE]: message`` line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import RunConfig, load_run_config
from .core import Priors, ScoreRecord, TrialClass, check_trial, index_manifest
from .encoder import init_params, params_from_json, params_to_json, score_logits
from .errors import SASVError, ValidationError
from .formats import (
    read_embeddings, read_json, read_logits, read_manifest, read_scores, read_trials, sha256_file,
    write_embeddings, write_histograms, write_json, write_logits, write_loss_curve, write_manifest,
    write_scores, write_trials,
)
from .metrics import eval_report, score_histograms
from .scoring import (
    CalibrationFitConfig, CalibrationParams, adjust_logits_array, calibrated_llr_array,
    check_train_priors, fit_calibration, llr_array, train_priors_from_trials,
)
from .synthgen import generate_population
from .training import train
from .trials import build_trials

log = logging.getLogger("threeclass_sasv")

TOOL = "threeclass-sasv"


def provenance(command: str, cfg: RunConfig, inputs: dict, seeds: dict) -> dict:
    """Input hashes, seeds, config hash and tool version for output documents."""
    return {
        "tool": TOOL,
        "version": __version__,
        "command": command,
        "config_sha256": cfg.sha256(),
        "inputs": {k: sha256_file(v) for k, v in sorted(inputs.items())},
        "seeds": seeds,
    }


def _config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if getattr(args, "pi_eval", None):
        cfg = cfg.replace("scoring", pi_eval=Priors.parse(args.pi_eval).as_tuple())
    return cfg


def _load_corpus(args):
    manifest = read_manifest(args.manifest)
    store = read_embeddings(args.embeddings)
    utts = index_manifest(manifest)
    for r in manifest:
        store.get(r.embedding_ref, r.utt_id)
    return manifest, store, utts


def _load_trials(path, utts):
    trials = read_trials(path)
    for t in trials:
        check_trial(t, utts)
    return trials


def cmd_synth(args) -> None:
    cfg = _config(args)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.utterance_seed is not None:
        changes["utterance_seed"] = args.utterance_seed
    if changes:
        cfg = cfg.replace("synth", **changes)
    manifest, store = generate_population(cfg.synth, speaker_prefix=args.speaker_prefix)
    out = Path(args.out)
    write_manifest(out / "manifest.jsonl", manifest)
    write_embeddings(out / "embeddings.bin", store)
    write_json(out / "synth.json", {
        "synth": cfg.to_dict()["synth"],
        "n_utterances": len(manifest),
        "provenance": provenance("synth", cfg, {}, {"seed": cfg.synth.seed, "utterance_seed": cfg.synth.utterance_seed}),
    })
    log.info("wrote %d utterances to %s", len(manifest), out)


def cmd_trials(args) -> None:
    cfg = _config(args)
    changes = {k: v for k, v in (("seed", args.seed), ("strategy", args.strategy), ("n_per_class", args.n_per_class)) if v is not None}
    if changes:
        cfg = cfg.replace("trials", **changes)
    manifest, store, utts = _load_corpus(args)
    trials = build_trials(manifest, cfg.trials, store)
    write_trials(args.out, trials)
    log.info("wrote %d trials to %s", len(trials), args.out)


def cmd_train(args) -> None:
    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.replace("train", seed=args.seed)
    manifest, store, utts = _load_corpus(args)
    trials = _load_trials(args.trials, utts)
    enc = cfg.encoder
    p0 = init_params(enc.aggregation, store.dim, enc.n_heads, enc.init_seed, enc.self_token)
    params, curve = train(trials, store, p0, cfg.train, utts)
    pi_train = train_priors_from_trials(trials)
    doc = params_to_json(params)
    doc["pi_train"] = list(pi_train.as_tuple())
    doc["train"] = cfg.to_dict()["train"]
    doc["loss_curve"] = curve
    doc["provenance"] = provenance(
        "train", cfg,
        {"trials": args.trials, "manifest": args.manifest, "embeddings": args.embeddings},
        {"train": cfg.train.seed, "init": enc.init_seed},
    )
    write_json(args.out, doc)
    write_loss_curve(args.loss_curve, curve)
    log.info("final epoch loss %.6f", curve[-1])


def _pi_train(args, model_doc: Optional[dict]) -> Priors:
    if args.pi_train:
        return check_train_priors(Priors.parse(args.pi_train))
    if model_doc is None or "pi_train" not in model_doc:
        raise ValidationError("training priors unknown: pass --pi-train or a model file that records them")
    return check_train_priors(Priors(*model_doc["pi_train"]))


def cmd_score(args) -> None:
    cfg = _config(args)
    manifest, store, utts = _load_corpus(args)
    trials = _load_trials(args.trials, utts)
    model_doc = read_json(args.model)
    params = params_from_json(model_doc)
    S = score_logits(trials, store, params, utts)
    labels = [t.label for t in trials]
    attacks = [utts[t.test_id].attack_label if t.label is TrialClass.SPOOF else None for t in trials]
    if args.calibration:
        c = read_json(args.calibration)
        llr = calibrated_llr_array(S, CalibrationParams(c["a"], c["b"], c["c"], c["d"]))
    else:
        llr = llr_array(adjust_logits_array(S, _pi_train(args, model_doc)), cfg.scoring.priors)
    scores = [ScoreRecord(t.trial_id, lab, att, float(x)) for t, lab, att, x in zip(trials, labels, attacks, llr)]
    write_scores(args.out, scores)
    if args.logits:
        write_logits(args.logits, [t.trial_id for t in trials], labels, attacks, S)


def cmd_calibrate(args) -> None:
    cfg = _config(args)
    model_doc = read_json(args.model) if args.model else None
    pi_train = _pi_train(args, model_doc)
    _, labels, _, S = read_logits(args.logits)
    m = cfg.metrics
    fit_cfg = CalibrationFitConfig(c_miss=m.c_miss, c_fa_non=m.c_fa_non, c_fa_spf=m.c_fa_spf)
    calib, info = fit_calibration(S, labels, cfg.scoring.priors, pi_train, fit_cfg)
    inputs = {"logits": args.logits}
    if args.model:
        inputs["model"] = args.model
    write_json(args.out, {
        "a": calib.a, "b": calib.b, "c": calib.c, "d": calib.d,
        "pi_eval": list(cfg.scoring.pi_eval),
        "pi_train": list(pi_train.as_tuple()),
        **info,
        "provenance": provenance("calibrate", cfg, inputs, {}),
    })


def cmd_eval(args) -> None:
    cfg = _config(args)
    scores = read_scores(args.scores)
    adcf = cfg.metrics.adcf(cfg.scoring.priors)
    report = eval_report(scores, adcf)
    report["priors"] = list(cfg.scoring.pi_eval)
    report["costs"] = {"c_miss": adcf.c_miss, "c_fa_non": adcf.c_fa_non, "c_fa_spf": adcf.c_fa_spf, "normalize": adcf.normalize}
    report["provenance"] = provenance("eval", cfg, {"scores": args.scores}, {})
    write_json(args.out, report)
    print(f"min a-DCF {report['min_a_dcf']:.6f} at threshold {report['tau_star']:.6g}")


def cmd_hist(args) -> None:
    cfg = _config(args)
    scores = read_scores(args.scores)
    n_bins = args.bins if args.bins is not None else cfg.metrics.n_bins
    by_attack = cfg.metrics.by_attack if args.by_attack is None else args.by_attack
    write_histograms(args.out, score_histograms(scores, n_bins, by_attack))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL, description="Three-class spoofing-robust speaker verification toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="run configuration JSON (default: bundled synthetic setup)")
        p.set_defaults(func=func)
        return p

    def corpus(p):
        p.add_argument("--manifest", required=True)
        p.add_argument("--embeddings", required=True)

    p = add("synth", cmd_synth, "generate a synthetic population")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--utterance-seed", type=int, help="redraw utterances of the same speakers")
    p.add_argument("--speaker-prefix", default="spk")

    p = add("trials", cmd_trials, "build a balanced trial list")
    corpus(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", choices=("random", "hard_pair"))
    p.add_argument("--n-per-class", type=int)

    p = add("train", cmd_train, "train the cross-encoder")
    corpus(p)
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--loss-curve", required=True, help="loss curve CSV")
    p.add_argument("--seed", type=int)

    p = add("score", cmd_score, "score trials into LLRs")
    corpus(p)
    p.add_argument("--trials", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="scores TSV")
    p.add_argument("--logits", help="raw logits TSV")
    p.add_argument("--pi-eval", help="evaluation priors pi_tar,pi_non,pi_spf")
    p.add_argument("--pi-train", help="override the training priors recorded in the model")
    p.add_argument("--calibration", help="calibration JSON; replaces the prior-based LLR")

    p = add("calibrate", cmd_calibrate, "fit calibration on development logits")
    p.add_argument("--logits", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="model JSON providing training priors")
    p.add_argument("--pi-train")
    p.add_argument("--pi-eval")

    p = add("eval", cmd_eval, "compute min a-DCF")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pi-eval")

    p = add("hist", cmd_hist, "export score histograms")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int)
    p.add_argument("--by-attack", action=argparse.BooleanOptionalAction, default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except SASVError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_status
    except Exception as exc:  # noqa: BLE001
        print(f"error[E_RUNTIME]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
