"""Command-line entry point: ``durhaz <command> [options]``.

Commands: ``synth-data``, ``train``, ``generate``, ``eval``, ``hist`` and
``inspect``. Settings come from a flat ``key = value`` config file with
``[corpus]``, ``[train]``, ``[generate]`` and ``[eval]`` sections; any key
can be overridden with an environment variable ``DURHAZ_<SECTION>_<KEY>``
(e.g. ``DURHAZ_TRAIN_MAX_EPOCHS=3``), and command-line flags override both.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    DEFAULT_CAP,
    DEFAULT_SILENCE_LABELS,
    DivergenceError,
    DurhazError,
    PhoneticClass,
)
from .datasets import (
    DEFAULT_COUNTER_SCALE,
    DEFAULT_FRAME_SHIFT_MS,
    CorpusSpec,
    expand_to_frames,
    load_corpus,
    parse_inventory,
    synth_corpus,
    write_corpus,
    write_ground_truth,
)
from .evaluate import (
    compare_systems,
    duration_metrics,
    histogram,
    write_comparison,
    write_histogram,
    write_report,
)
from .generate import generate
from .train import FRAME_KINDS, SystemKind, TrainConfig, load_model, make_model, save_model, \
    write_learning_curve

log = logging.getLogger("durhaz")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ENV_PREFIX = "DURHAZ_"
SECTIONS = ("corpus", "train", "generate", "eval")
MODEL_SUFFIX = ".dhz"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class Settings:
    """Config file values with environment overrides."""

    def __init__(self, path=None, environ=None):
        self.parser = configparser.ConfigParser(interpolation=None)
        for s in SECTIONS:
            self.parser.add_section(s)
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise DataError(f"config file not found: {path}")
            self.parser.read(path, encoding="utf-8")
        environ = os.environ if environ is None else environ
        for key, value in environ.items():
            if not key.startswith(ENV_PREFIX):
                continue
            rest = key[len(ENV_PREFIX):].lower()
            for s in SECTIONS:
                if rest.startswith(s + "_"):
                    self.parser.set(s, rest[len(s) + 1:], value)

    def get(self, section, key, default=None, cast=str):
        if not self.parser.has_option(section, key):
            return default
        raw = self.parser.get(section, key).strip()
        if raw == "" or raw.lower() == "none":
            return None
        try:
            return cast(raw)
        except ValueError:
            raise UsageError(f"[{section}] {key} = {raw!r} is not a valid {cast.__name__}") from None

    # ---- derived settings -------------------------------------------------

    def corpus_spec(self, seed=None) -> CorpusSpec:
        phones = self.get("corpus", "phones")
        if not phones:
            raise UsageError("[corpus] phones is required for synth-data")
        return CorpusSpec(
            parse_inventory(phones),
            n_utterances=self.get("corpus", "utterances", 100, int),
            phones_per_utterance=(self.get("corpus", "phones_min", 5, int),
                                  self.get("corpus", "phones_max", 15, int)),
            seed=self.get("corpus", "seed", 0, int) if seed is None else seed,
            cap=self.get("corpus", "cap", DEFAULT_CAP, int),
            id_prefix=self.get("corpus", "id_prefix", "utt"),
        )

    def frame_shift(self) -> float:
        return self.get("corpus", "frame_shift_ms", DEFAULT_FRAME_SHIFT_MS, float)

    def class_table(self):
        """(phone -> class table, silence labels) for ingestion."""
        silence = set(DEFAULT_SILENCE_LABELS)
        extra = self.get("corpus", "silence")
        if extra:
            silence |= {s.strip() for s in extra.split(",") if s.strip()}
        table = None
        table_path = self.get("corpus", "class_table")
        if table_path:
            table = {}
            for line in Path(table_path).read_text(encoding="utf-8").splitlines():
                if line.strip() and not line.startswith("#"):
                    label, cls = (x.strip() for x in line.split(","))
                    table[label] = PhoneticClass.parse(cls)
        phones = self.get("corpus", "phones")
        if phones:
            spec_phones = parse_inventory(phones)
            table = {**(table or {}), **{p.label: p.phonetic_class for p in spec_phones}}
            silence |= {p.label for p in spec_phones if p.phonetic_class is PhoneticClass.SILENCE}
        if table is not None:
            silence |= {k for k, v in table.items() if v is PhoneticClass.SILENCE}
            table = {k: v for k, v in table.items() if v is not PhoneticClass.SILENCE}
        return table, frozenset(silence)

    def train_params(self, kind: SystemKind, seed=None, max_epochs=None) -> dict:
        cfg = TrainConfig(
            learning_rate=self.get("train", "learning_rate", 0.01, float),
            max_epochs=max_epochs or self.get("train", "max_epochs", 25, int),
            patience=min(self.get("train", "patience", 5, int),
                         max_epochs or self.get("train", "max_epochs", 25, int)),
            seed=self.get("train", "seed", 0, int) if seed is None else seed,
            init_scale=self.get("train", "init_scale", 0.1, float),
            clip_norm=self.get("train", "clip_norm", None, float),
            dev_fraction=self.get("train", "dev_fraction", 0.05, float),
        )
        params = dict(learning_rate=cfg.learning_rate, max_epochs=cfg.max_epochs,
                      patience=cfg.patience, seed=cfg.seed, init_scale=cfg.init_scale,
                      clip_norm=cfg.clip_norm, dev_fraction=cfg.dev_fraction,
                      recurrent_width=self.get("train", "recurrent_width", 32, int))
        widths = self.get("train", "hidden_widths")
        if widths:
            params["hidden_widths"] = tuple(int(w) for w in widths.split(","))
        if kind in FRAME_KINDS:
            params["counter_scale"] = self.get("train", "counter_scale", DEFAULT_COUNTER_SCALE, float)
            # per-kind overrides, e.g. "frame_learning_rate"
            lr = self.get("train", "frame_learning_rate", None, float)
            if lr is not None:
                params["learning_rate"] = lr
            isc = self.get("train", "frame_init_scale", None, float)
            if isc is not None:
                params["init_scale"] = isc
        return params


def _load(settings: Settings, corpus_dir):
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise DataError(f"corpus directory not found: {corpus_dir}")
    table, silence = settings.class_table()
    return load_corpus(corpus_dir, settings.frame_shift(), table, silence)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---- commands ---------------------------------------------------------------

def cmd_synth_data(args, settings: Settings) -> int:
    spec = settings.corpus_spec(seed=args.seed)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory not writable: {out} ({exc})") from None
    utts, truth = synth_corpus(spec)
    files = write_corpus(utts, out, settings.frame_shift())
    gt = out / "ground_truth.csv"
    write_ground_truth(truth, gt)
    files.append(gt)
    manifest = "".join(f"{_sha256(f)}  {f.name}\n" for f in sorted(files))
    (out / "manifest.txt").write_text(manifest, encoding="utf-8")
    print(f"wrote {len(utts)} utterances to {out}")
    return EXIT_OK


def _train_one(kind_value, corpus_dir, config_path, model_path, seed, max_epochs):
    settings = Settings(config_path)
    kind = SystemKind(kind_value)
    utts = _load(settings, corpus_dir)
    model = make_model(kind, **settings.train_params(kind, seed, max_epochs)).fit(utts)
    model_path = Path(model_path)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, model_path)
    curve = model_path.with_suffix(".curve.csv")
    write_learning_curve(model, curve)
    best = model.history_[model.best_epoch_ - 1]
    return (f"{kind.value}: {len(model.history_)} epochs, best epoch {model.best_epoch_} "
            f"dev loss {best[2]:.6f} -> {model_path}")


def _parse_systems(text) -> list[SystemKind]:
    if text == "all":
        return list(SystemKind)
    try:
        return [SystemKind(s.strip()) for s in text.split(",")]
    except ValueError:
        raise UsageError(f"unknown system in {text!r}; choose from "
                         f"{', '.join(k.value for k in SystemKind)} or all") from None


def cmd_train(args, settings: Settings) -> int:
    kinds = _parse_systems(args.system)
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise DataError(f"corpus directory not found: {corpus}")
    if len(kinds) == 1:
        targets = [Path(args.model)]
    else:
        targets = [Path(args.model) / f"{k.value}{MODEL_SUFFIX}" for k in kinds]
    jobs = [(k.value, str(corpus), args.config, str(t), args.seed, args.max_epochs)
            for k, t in zip(kinds, targets)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            lines = list(pool.map(_train_one, *zip(*jobs)))
    else:
        lines = [_train_one(*j) for j in jobs]
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_generate(args, settings: Settings) -> int:
    model_path = Path(args.model)
    if not model_path.is_file():
        raise DataError(f"model file not found: {model_path}")
    model = load_model(model_path)
    q = args.quantile if args.quantile is not None else settings.get("generate", "quantile", 0.5, float)
    cap = args.cap if args.cap is not None else settings.get("generate", "cap", DEFAULT_CAP, int)
    if not 0 < q < 1:
        raise UsageError(f"--quantile must lie in (0, 1), got {q}")
    utts = _load(settings, args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump = args.dump_hazards and model.kind_ in FRAME_KINDS
    n_trunc = 0
    for u in utts:
        res = generate(model, u, q, cap, oracle_silence=True, dump_hazards=dump)
        n_trunc += sum(res.truncated)
        lines = ["label,duration,truncated"]
        lines += [f"{lab},{d},{int(t)}" for lab, d, t in zip(u.labels, res.durations, res.truncated)]
        (out / f"{u.id}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        if dump:
            rows = ["frame,phone,hazard,remaining_mass"]
            rows += [f"{f},{p},{h!r},{m!r}" for f, p, h, m in res.hazards]
            (out / f"{u.id}.hazards.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"{model.kind_.value}: generated {len(utts)} utterances (q={q}, "
          f"{n_trunc} truncated phones) -> {out}")
    return EXIT_OK


def _read_predictions(pred_dir: Path, ids):
    preds, missing = {}, []
    for uid in ids:
        f = pred_dir / f"{uid}.csv"
        if not f.is_file():
            missing.append(uid)
            continue
        rows = f.read_text(encoding="utf-8").splitlines()[1:]
        preds[uid] = [int(r.split(",")[1]) for r in rows if r.strip()]
    return preds, missing


def cmd_eval(args, settings: Settings) -> int:
    refs = _load(settings, args.corpus)
    reports = {}
    for spec in args.pred:
        name, _, path = spec.rpartition("=")
        path = Path(path)
        name = name or path.name
        if not path.is_dir():
            raise DataError(f"prediction directory not found: {path}")
        preds, missing = _read_predictions(path, [u.id for u in refs])
        if missing:
            raise DataError(f"{name}: predictions missing for ids: {', '.join(missing)}")
        pred, ref, cls = [], [], []
        for u in refs:
            if len(preds[u.id]) != len(u.phones):
                raise DataError(f"{name}: {u.id} has {len(preds[u.id])} predictions for "
                                f"{len(u.phones)} phones")
            pred += preds[u.id]
            ref += u.durations.tolist()
            cls += u.classes
        reports[name] = duration_metrics(pred, ref, cls)
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    write_report(reports, report)
    for name, rep in reports.items():
        m = rep.overall
        corr = "undefined" if m.corr is None else f"{m.corr:.3f}"
        print(f"{name}: n={m.n} rmse={m.rmse:.3f} mae={m.mae:.3f} corr={corr}")
    if len(reports) > 1:
        cmp = compare_systems(reports)
        write_comparison(cmp, report.with_suffix(".comparison.csv"))
        for a, b in cmp.tradeoffs:
            print(f"trade-off: {a} beats {b} on MAE but loses on RMSE")
    return EXIT_OK


def cmd_hist(args, settings: Settings) -> int:
    utts = _load(settings, args.corpus)
    durs = [p.ref_duration for u in utts for p in u.phones
            if not (args.exclude_silence and p.phonetic_class is PhoneticClass.SILENCE)]
    hist = histogram(durs)
    write_histogram(hist, args.out)
    print(f"n={len(durs)} median={hist.median} min={hist.min} max={hist.max}")
    return EXIT_OK


def cmd_inspect(args, settings: Settings) -> int:
    """Mean predicted hazard per within-phone frame count along the reference alignment."""
    model = load_model(args.model)
    if model.kind_ not in FRAME_KINDS:
        raise DataError(f"inspect needs a frame-level model, got {model.kind_.value}")
    utts = _load(settings, args.corpus)
    H = np.concatenate([model.predict_hazards(u) for u in utts])
    C = np.concatenate([expand_to_frames(u).counter for u in utts])
    print("counter,mean_hazard,frames")
    for c in range(1, min(int(C.max()), args.max_counter) + 1):
        sel = C == c
        if sel.any():
            print(f"{c},{H[sel].mean():.6f},{int(sel.sum())}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="durhaz", description="Frame-level hazard duration modelling toolkit.")
    p.add_argument("--version", action="version", version=f"durhaz {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=False):
        sp.add_argument("--config", help="key = value config file")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("synth-data", help="write a synthetic corpus with ground truth")
    common(sp, seed=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_synth_data)

    sp = sub.add_parser("train", help="train one or more systems")
    common(sp, seed=True)
    sp.add_argument("--system", required=True,
                    help="phone-dnn, phone-lstm, frame-lstm-i, frame-lstm-e, a comma list, or all")
    sp.add_argument("--corpus", required=True, help="training corpus directory")
    sp.add_argument("--model", required=True,
                    help="model file (one system) or output directory (several)")
    sp.add_argument("--max-epochs", type=int)
    sp.add_argument("--jobs", type=int, default=1, help="train systems in parallel processes")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("generate", help="generate durations for a corpus")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--corpus", required=True, help="test corpus directory")
    sp.add_argument("--out", required=True, help="directory for per-utterance CSVs")
    sp.add_argument("--quantile", type=float, help="generation quantile (default 0.5)")
    sp.add_argument("--cap", type=int, help=f"max frames per phone (default {DEFAULT_CAP})")
    sp.add_argument("--dump-hazards", action="store_true", help="also write per-frame hazards")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("eval", help="score predicted durations against references")
    common(sp)
    sp.add_argument("--pred", action="append", required=True, metavar="[NAME=]DIR",
                    help="prediction directory; repeat to compare systems")
    sp.add_argument("--corpus", required=True, help="reference corpus directory")
    sp.add_argument("--report", required=True, help="metric report CSV")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("hist", help="duration histogram of a corpus")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--exclude-silence", action="store_true")
    sp.set_defaults(func=cmd_hist)

    sp = sub.add_parser("inspect", help="mean hazard per frame count for a frame model")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--max-counter", type=int, default=30)
    sp.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = Settings(getattr(args, "config", None))
        return args.func(args, settings)
    except UsageError as exc:
        print(f"durhaz: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"durhaz: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DurhazError, FileNotFoundError, OSError) as exc:
        print(f"durhaz: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
