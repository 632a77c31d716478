"""``decipher`` command line: synth, train, predict, eval, closeness, gradcheck, inspect.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure,
5 gradient check failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from decipher import config as cfgmod
from decipher.corpus import (
    SynthSpec,
    check_alphabets,
    generate_synthetic,
    load_corpus,
    load_features,
    load_vocab,
    save_bundle,
)
from decipher.errors import ConfigError, DataError, DecipherError, GradcheckFailed
from decipher.evaluation import (
    closeness_auc,
    closeness_curve,
    load_gold,
    load_predictions,
    precision_at_k,
    save_curve,
    save_predictions,
)
from decipher.objective import Batch, ObjectiveConfig
from decipher.phonetics import FeatureTable, load_params, mapping_matrix, save_params
from decipher.training import (
    TrainConfig,
    Trainer,
    gradient_check,
    objective_value_and_grad,
    run_experiment,
    supervision_targets,
)

logger = logging.getLogger("decipher")

SNAPSHOT_NAME = "best.npz"
# the curve pools every stem in the per-span top-10 lists
CLOSENESS_TOP_K = 10


def _add_dotted_flags(parser, entries):
    for key, default in entries.items():
        if isinstance(default, tuple):
            kind = "comma-separated list"
        else:
            kind = type(default).__name__
        parser.add_argument(f"--{key}", dest=key, default=None, metavar="V",
                            help=f"{kind}, default {default!r}")


def _overrides(args, entries):
    out = {}
    for key, default in entries.items():
        val = getattr(args, key, None)
        if val is not None:
            out[key] = cfgmod.parse_value(key, val, default)
    return out


def _synth_entries():
    inst = SynthSpec()
    return {f.name: getattr(inst, f.name) for f in fields(SynthSpec)}


def _read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


class Data:
    """Corpus, vocabulary and feature table resolved from a config."""

    def __init__(self, dc):
        for name in ("corpus", "vocab"):
            if not getattr(dc, name):
                raise ConfigError(f"data.{name} is required")
        if dc.feature_mode == "ipa" and not dc.features:
            raise ConfigError("data.features is required when data.feature_mode is 'ipa'")
        self.corpus = load_corpus(dc.corpus)
        table = load_features(dc.features) if dc.features else None
        self.vocab = load_vocab(dc.vocab, dc.min_stem_len, table)
        if table is None:
            phones = sorted({p for s in self.vocab for p in s.phones})
            table = FeatureTable.unstructured(phones)
        lost = _read_lines(dc.lost_alphabet) if dc.lost_alphabet else None
        self.known, self.lost = check_alphabets(self.corpus, self.vocab, table, lost)
        if dc.feature_mode == "unstructured":
            table = FeatureTable.unstructured(self.known)
        self.table = table
        self.gold = load_gold(dc.gold) if dc.gold else []


def _truth_beside_corpus(dc):
    # full/partial supervision reads ground-truth values from truth_mapping.tsv beside the corpus
    path = os.path.join(os.path.dirname(os.path.abspath(dc.corpus)), "truth_mapping.tsv")
    if not os.path.exists(path):
        raise DataError(f"supervision needs ground-truth values in {path}")
    truth = {}
    with open(path, encoding="utf-8") as f:
        next(f, None)
        best = {}
        for line in f:
            k, c, p = line.rstrip("\n").split("\t")
            if float(p) > best.get(k, -1.0):
                best[k], truth[k] = float(p), c
    return truth


def _snapshot_extra(trainer, cfg, selection=None):
    return {
        "objective": cfgmod._plain(vars(cfg.objective)),
        "log_alpha": trainer.log_alpha(),
        "step": trainer.step_count,
        "seed": trainer.config.seed,
        "features_csv": trainer.table.dumps(),
        "selection": selection,
    }


def cmd_synth(args):
    raw = {}
    if args.spec:
        with open(args.spec, encoding="utf-8") as f:
            raw = json.load(f)
    raw.update(_overrides(args, _synth_entries()))
    spec = SynthSpec.from_dict(raw)
    bundle = generate_synthetic(spec)
    paths = save_bundle(bundle, args.out)
    print(f"wrote {len(bundle.corpus)} inscriptions, {len(bundle.vocab)} stems, "
          f"{len(bundle.gold)} gold spans to {args.out}")
    return paths


def _make_trainer_factory(cfg, data, targets):
    def make(seed, schedule):
        tc = TrainConfig(**{**vars(cfg.train), "seed": seed})
        if schedule is not None:
            tc.anneal_start, tc.anneal_end, tc.anneal_steps = schedule
        return Trainer(data.corpus.chunks, data.vocab.stems, data.table, data.known, data.lost,
                       cfg.objective, tc, targets)
    return make


def cmd_train(args):
    entries = cfgmod.schema()
    over = _overrides(args, entries)
    cfg = cfgmod.load(args.config, over) if args.config else cfgmod.build({}, over)
    out = cfg.run.out_dir
    os.makedirs(out, exist_ok=True)
    cfg.save(os.path.join(out, "effective_config.json"))
    data = Data(cfg.data)
    targets = {}
    if cfg.train.knowledge != "base":
        targets = supervision_targets(cfg.train.knowledge, _truth_beside_corpus(cfg.data),
                                      cfg.train.supervised_phones)
    make = _make_trainer_factory(cfg, data, targets)

    def make_logged(seed, schedule):
        trainer = make(seed, schedule)
        tag = f"seed{seed}_s{trainer.config.anneal_start:g}"
        log_path = os.path.join(out, f"metrics_{tag}.tsv")
        log = open(log_path, "w", encoding="utf-8", newline="\n")
        log.write("step\tobjective\tcoverage\tomega_loss\talpha\n")
        every = cfg.run.snapshot_every

        def on_step(t, m):
            log.write("\t".join([str(m.step)] + [repr(float(v)) for v in m.row()[1:]]) + "\n")
            if every and t.step_count % every == 0:
                save_params(os.path.join(out, f"snapshot_{tag}_{t.step_count:06d}.npz"), t.params,
                            _snapshot_extra(t, cfg))
            if t.step_count == t.config.steps:
                log.close()

        orig = trainer.train
        trainer.train = lambda steps=None: orig(steps, cfg.run.log_every, on_step)
        if trainer.config.steps == 0:
            log.close()
        return trainer

    schedules = cfg.schedules
    seeds = [cfg.train.seed + i for i in range(cfg.train.restarts)]
    best, reports = run_experiment(make_logged, seeds, schedules, data.gold or None, cfg.run.k,
                                   cfg.run.select_k)
    with open(os.path.join(out, "runs.tsv"), "w", encoding="utf-8", newline="\n") as f:
        ks = list(cfg.run.k) if data.gold else []
        f.write("\t".join(["seed", "anneal_start", "final_objective"] + [f"P@{k}" for k in ks]
                          + ["error"]) + "\n")
        for r in reports:
            row = [str(r.seed), f"{r.schedule[0]:g}", repr(float(r.final_objective))]
            row += [f"{r.p_at_k.get(k, float('nan')):.6f}" for k in ks]
            f.write("\t".join(row + [r.error]) + "\n")
    # rebuild the winning run's trainer state for prediction output
    trainer = make(best.seed, best.schedule)
    trainer.params = best.params
    trainer.step_count = trainer.config.steps
    snap = os.path.join(out, SNAPSHOT_NAME)
    save_params(snap, best.params, _snapshot_extra(trainer, cfg, best.selection_value))
    preds = trainer.predict(k=max(cfg.run.k))
    save_predictions(os.path.join(out, "predictions.tsv"), preds)
    msg = f"best run seed={best.seed} anneal_start={best.schedule[0]:g} objective={best.final_objective:.4f}"
    if best.p_at_k:
        msg += " " + ", ".join(f"P@{k} {v:.3f}" for k, v in sorted(best.p_at_k.items()))
    print(msg)
    return best


def _trainer_from_snapshot(snapshot, vocab_path, corpus=None):
    params, extra = load_params(snapshot)
    table = FeatureTable.parse(extra["features_csv"].splitlines(), snapshot)
    obj = ObjectiveConfig(**extra["objective"])
    vocab = load_vocab(vocab_path, table=table)
    known = params.known
    keep = [s for s in vocab.stems if all(p in known for p in s.phones)]
    if len(keep) < len(vocab.stems):
        logger.warning("dropping %d stems with phones unknown to the snapshot",
                       len(vocab.stems) - len(keep))
    chunks = corpus.chunks if corpus is not None else []
    if corpus is not None:
        check_alphabets(corpus, keep, table, params.lost)
    tc = TrainConfig(dropout=0.0, anneal_start=-extra["log_alpha"], anneal_end=-extra["log_alpha"],
                     anneal_steps=0, extra_steps=0)
    trainer = Trainer(chunks, keep, table, known, params.lost, obj, tc, params=params)
    return trainer, extra


def cmd_predict(args):
    corpus = load_corpus(args.corpus)
    trainer, _ = _trainer_from_snapshot(args.snapshot, args.vocab, corpus)
    preds = trainer.predict(k=args.k)
    save_predictions(args.out, preds)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return preds


def _parse_ks(text):
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise ConfigError(f"bad k list {text!r}") from None
    return ks


def cmd_eval(args):
    preds = load_predictions(args.predictions)
    gold = load_gold(args.gold)
    ks = _parse_ks(args.k)
    scores = {k: precision_at_k(preds, gold, k) for k in ks}
    line = ", ".join(f"P@{k} {v:.3f}" for k, v in scores.items())
    print(line)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write("k\tprecision\n")
            for k, v in scores.items():
                f.write(f"{k}\t{v:.6f}\n")
    return scores


def cmd_closeness(args):
    corpus = load_corpus(args.corpus)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for name, snapshot, vocab in args.candidate:
        trainer, _ = _trainer_from_snapshot(snapshot, vocab, corpus)
        preds = trainer.predict(k=CLOSENESS_TOP_K)
        curve = closeness_curve(preds, corpus)
        auc = closeness_auc(curve)
        save_curve(os.path.join(args.out, f"curve_{name}.tsv"), curve, auc, name)
        rows.append((name, auc))
    rows.sort(key=lambda r: (-r[1], r[0]))
    with open(os.path.join(args.out, "closeness.tsv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("candidate\tauc\n")
        for name, auc in rows:
            f.write(f"{name}\t{auc:.6f}\n")
    for name, auc in rows:
        print(f"{name}\t{auc:.4f}")
    return rows


def cmd_gradcheck(args):
    entries = cfgmod.schema()
    over = _overrides(args, entries)
    cfg = cfgmod.load(args.config, over) if args.config else cfgmod.build({}, over)
    data = Data(cfg.data)
    targets = {}
    if cfg.train.knowledge != "base":
        targets = supervision_targets(cfg.train.knowledge, _truth_beside_corpus(cfg.data),
                                      cfg.train.supervised_phones)
    trainer = _make_trainer_factory(cfg, data, targets)(cfg.train.seed, None)
    n = min(args.chunks, len(trainer.encoded))
    batch = Batch(trainer.encoded[:n], list(range(n)), n)
    fn, x0 = objective_value_and_grad(trainer, batch)
    rep = gradient_check(fn, x0, args.eps, args.coords, np.random.default_rng(cfg.train.seed))
    print(f"max relative error {rep.max_rel_error:.3e} over {rep.coords.size} coordinates")
    if rep.max_rel_error > args.threshold:
        raise GradcheckFailed(f"max relative error {rep.max_rel_error:.3e} > {args.threshold:g}")
    return rep


def cmd_inspect(args):
    params, extra = load_params(args.snapshot)
    table = FeatureTable.parse(extra["features_csv"].splitlines(), args.snapshot)
    obj = ObjectiveConfig(**extra["objective"])
    M = mapping_matrix(params, table, temperature=obj.temperature)
    print(f"known {len(params.known)}  lost {len(params.lost)}  dim {params.dim}  "
          f"step {extra.get('step')}  seed {extra.get('seed')}")
    cols = list(M.lost) + ["<eps>"]
    for i, k in enumerate(M.known):
        order = np.argsort(-M.probs[i], kind="stable")[:args.top]
        cells = "  ".join(f"{cols[j]}:{M.probs[i, j]:.3f}" for j in order)
        print(f"{k}\t{cells}")
    return M


def build_parser():
    p = argparse.ArgumentParser(prog="decipher", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic bundle")
    s.add_argument("--spec", help="JSON file of generator settings")
    s.add_argument("--out", required=True, help="output directory")
    _add_dotted_flags(s, _synth_entries())
    s.set_defaults(func=cmd_synth)

    entries = cfgmod.schema()
    t = sub.add_parser("train", help="train restarts and keep the best run")
    t.add_argument("--config", help="JSON run config")
    _add_dotted_flags(t, entries)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="top-k span predictions from a snapshot")
    pr.add_argument("--snapshot", required=True)
    pr.add_argument("--corpus", required=True)
    pr.add_argument("--vocab", required=True)
    pr.add_argument("--k", type=int, default=10)
    pr.add_argument("--out", required=True, help="prediction TSV")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="P@K of predictions against gold spans")
    e.add_argument("--predictions", required=True)
    e.add_argument("--gold", required=True)
    e.add_argument("--k", default="1,10", help="comma-separated k values")
    e.add_argument("--out", help="optional TSV of scores")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("closeness", help="coverage/confidence curves and AUC per candidate")
    c.add_argument("--corpus", required=True)
    c.add_argument("--candidate", nargs=3, action="append", required=True,
                   metavar=("NAME", "SNAPSHOT", "VOCAB"), help="repeat once per candidate language")
    c.add_argument("--out", required=True, help="output directory")
    c.set_defaults(func=cmd_closeness)

    g = sub.add_parser("gradcheck", help="finite-difference check of the objective gradient")
    g.add_argument("--config", help="JSON run config")
    g.add_argument("--eps", type=float, default=1e-4)
    g.add_argument("--coords", type=int, default=50)
    g.add_argument("--chunks", type=int, default=4, help="chunks in the checked batch")
    g.add_argument("--threshold", type=float, default=1e-3)
    _add_dotted_flags(g, entries)
    g.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("inspect", help="print the learned mapping of a snapshot")
    i.add_argument("--snapshot", required=True)
    i.add_argument("--top", type=int, default=3)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DecipherError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
