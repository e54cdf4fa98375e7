"""Experiment harness CLI.

    dialrec {train|eval|predict|ablate|truncate|stats|kappa|synth|baseline}
            --config FILE [--no-dialogue-graph] [--no-kg]
            [--discourse-percents 20,40,60,80,100] [--repeats N]
            [--seed N] [--out DIR]

Configuration is a flat key=value text file; CLI flags override file values.
Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence.
Every artifact embeds the effective config hash, the seed, and the package
version, so reruns are attributable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import statistics
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import torch

from . import __version__
from .baseline import predict_split as baseline_predict_split, train_tfidf_baseline
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (CorpusError, NormalizationMap, corpus_stats, load_corpus,
                     medication_set_labels, write_corpus, cohen_kappa)
from .kg import KgError, TransRConfig, load_kg, train_transr, write_kg
from .metrics import DdiGraph, evaluate_run, truncation_curve
from .model import (DdnConfig, DiseaseKnowledge, TrainingDivergedError, predict_split,
                    train_model)
from .synth import SynthConfig, SynthError, generate_synthetic


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    corpus: str = ""
    kg: str = ""
    aliases: str = ""
    ddi: str = ""
    checkpoint: str = ""
    med_map: str = ""
    disease_map: str = ""
    remap: str = ""
    out: str = "runs/out"
    department: str = ""
    eval_split: str = "test"
    seed: int = 0
    repeats: int = 1
    percents: str = "20,40,60,80,100"
    # model hyperparameters
    d: int = 64
    max_len: int = 48
    mixer: str = "attention"
    activation: str = "elu"
    gat_layers: int = 2
    kgat_layers: int = 2
    k_hops: int = 2
    fanout: int = 8
    threshold: float = 0.5
    lr: float = 2e-5
    batch_size: int = 8
    epochs: int = 20
    grad_clip: float = 1.0
    freeze_kg: bool = False
    no_dialogue_graph: bool = False
    no_kg: bool = False
    # TransR pretraining
    transr_d_e: int = 32
    transr_d_r: int = 32
    transr_epochs: int = 80
    transr_lr: float = 5e-2
    transr_margin: float = 1.0
    transr_negatives: int = 1
    # synthetic generator
    synth_dialogues: int = 500
    synth_diseases: int = 9
    synth_medications: int = 9
    synth_vocab: int = 40
    synth_kg_fanout: int = 2
    # kappa inputs
    kappa_a: str = ""
    kappa_b: str = ""

    def config_hash(self) -> str:
        blob = "\n".join(f"{f.name}={getattr(self, f.name)}"
                         for f in fields(self) if f.name != "out")
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def meta(self) -> dict:
        return {"config_hash": self.config_hash(), "seed": self.seed, "version": __version__}

    def ddn_config(self) -> DdnConfig:
        return DdnConfig(d=self.d, max_len=self.max_len, mixer=self.mixer,
                         activation=self.activation, gat_layers=self.gat_layers,
                         kgat_layers=self.kgat_layers, k_hops=self.k_hops,
                         fanout=self.fanout, threshold=self.threshold, lr=self.lr,
                         batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
                         grad_clip=self.grad_clip, freeze_kg=self.freeze_kg,
                         no_dialogue_graph=self.no_dialogue_graph, no_kg=self.no_kg)


def parse_config_file(path: str | Path) -> dict:
    values: dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def build_config(file_values: dict, overrides: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    by_name = {f.name: f for f in fields(ExperimentConfig)}
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    for key, value in merged.items():
        if key not in by_name:
            raise ConfigError(f"unknown config key {key!r}")
        kind = by_name[key].type
        try:
            if kind == "bool" or kind is bool:
                parsed = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
            elif kind == "int" or kind is int:
                parsed = int(value)
            elif kind == "float" or kind is float:
                parsed = float(value)
            else:
                parsed = str(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
        setattr(cfg, key, parsed)
    return cfg


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _load_inputs(cfg: ExperimentConfig, need_kg: bool = True):
    if not cfg.corpus:
        raise ConfigError("config key `corpus` is required")
    maps = None
    if cfg.med_map or cfg.disease_map:
        maps = NormalizationMap.from_tsv(cfg.med_map or None, cfg.disease_map or None)
    corpus = load_corpus(cfg.corpus, maps=maps, remap_path=cfg.remap or None)
    if cfg.department:
        kept = [d for d in corpus.dialogues if d.department == cfg.department]
        if not kept:
            raise CorpusError(f"no dialogues in department {cfg.department!r}")
        corpus = type(corpus).from_dialogues(kept)
    kg = None
    if need_kg and not cfg.no_kg:
        if not cfg.kg:
            raise ConfigError("config key `kg` is required unless no_kg is set")
        kg = load_kg(cfg.kg, cfg.aliases or None)
    ddi = DdiGraph.from_tsv(cfg.ddi) if cfg.ddi else None
    return corpus, kg, ddi


def _train_once(cfg: ExperimentConfig, corpus, kg):
    ddn_cfg = cfg.ddn_config()
    knowledge = None
    if not ddn_cfg.no_kg:
        transr = train_transr(kg, TransRConfig(
            d_e=cfg.transr_d_e, d_r=cfg.transr_d_r, margin=cfg.transr_margin,
            epochs=cfg.transr_epochs, negatives_per_positive=cfg.transr_negatives,
            lr=cfg.transr_lr, seed=cfg.seed))
        knowledge = DiseaseKnowledge.prepare(kg, transr, corpus.diseases,
                                             k=ddn_cfg.k_hops, fanout=ddn_cfg.fanout,
                                             seed=cfg.seed)
    return train_model(corpus, knowledge, ddn_cfg)


def cmd_synth(cfg: ExperimentConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus, kg, ddi = generate_synthetic(SynthConfig(
        n_dialogues=cfg.synth_dialogues, n_diseases=cfg.synth_diseases,
        n_medications=cfg.synth_medications, vocab_size=cfg.synth_vocab,
        kg_fanout=cfg.synth_kg_fanout, seed=cfg.seed))
    write_corpus(corpus, out / "corpus.jsonl")
    write_kg(kg, out / "kg.triples.tsv", out / "kg.aliases.tsv")
    with open(out / "ddi.tsv", "w", encoding="utf-8") as fh:
        for a, b in sorted(ddi.pairs):
            fh.write(f"{a}\t{b}\n")
    _write_json(out / "synth.meta.json", {
        "meta": cfg.meta(),
        "n_dialogues": len(corpus.dialogues),
        "n_diseases": len(corpus.diseases),
        "n_medications": len(corpus.medications),
        "n_triples": len(kg.triples),
        "n_ddi_pairs": len(ddi.pairs),
    })
    print(f"wrote synthetic corpus to {out}")


def cmd_stats(cfg: ExperimentConfig) -> None:
    corpus, _, _ = _load_inputs(cfg, need_kg=False)
    stats = corpus_stats(corpus)
    payload = {"meta": cfg.meta(), "stats": stats}
    _write_json(Path(cfg.out) / "stats.json", payload)
    print(json.dumps(stats, sort_keys=True, indent=2))


def cmd_kappa(cfg: ExperimentConfig) -> None:
    if not cfg.kappa_a or not cfg.kappa_b:
        raise ConfigError("kappa needs config keys `kappa_a` and `kappa_b`")
    corpus_a = load_corpus(cfg.kappa_a)
    corpus_b = load_corpus(cfg.kappa_b)
    ids_a = [d.id for d in corpus_a.dialogues]
    ids_b = {d.id: d for d in corpus_b.dialogues}
    if set(ids_a) != set(ids_b):
        raise CorpusError("kappa inputs label different dialogue sets")
    corpus_b.dialogues = [ids_b[i] for i in ids_a]
    kappa = cohen_kappa(medication_set_labels(corpus_a), medication_set_labels(corpus_b))
    _write_json(Path(cfg.out) / "kappa.json",
                {"meta": cfg.meta(), "kappa": kappa, "n": len(ids_a)})
    print(f"kappa = {kappa:.4f} over {len(ids_a)} dialogues")


def _evaluation_payload(cfg, model_result, corpus, ddi) -> dict:
    test = corpus.split(cfg.eval_split)
    report = evaluate_run(predict_split(model_result.model, test), test, ddi)
    return {
        "report": report.to_dict(),
        "best_epoch": model_result.best_epoch,
        "dev_jaccard": model_result.best_dev_jaccard,
    }


def cmd_train(cfg: ExperimentConfig) -> None:
    corpus, kg, ddi = _load_inputs(cfg)
    out = Path(cfg.out)
    runs = []
    for r in range(max(1, cfg.repeats)):
        run_cfg = replace(cfg, seed=cfg.seed + r)
        result = _train_once(run_cfg, corpus, kg)
        payload = _evaluation_payload(run_cfg, result, corpus, ddi)
        payload["log"] = result.log
        runs.append(payload)
        if r == 0:
            save_checkpoint(result.model, out / "checkpoint.npz", {
                "epoch": result.best_epoch,
                "dev_metrics": {"jaccard": result.best_dev_jaccard},
                "config_hash": cfg.config_hash(),
            })
            _write_json(out / "training_log.json", {"meta": run_cfg.meta(), "log": result.log})
    payload = {"meta": cfg.meta(), "runs": runs}
    if len(runs) > 1:
        for metric in ("jaccard", "f1", "ddi_rate"):
            values = [r["report"][metric] for r in runs]
            payload[metric] = {"mean": statistics.mean(values),
                              "std": statistics.stdev(values)}
    _write_json(out / "train_report.json", payload)
    print(f"trained {len(runs)} run(s); report at {out / 'train_report.json'}")


def cmd_eval(cfg: ExperimentConfig) -> None:
    if not cfg.checkpoint:
        raise ConfigError("eval needs config key `checkpoint`")
    corpus, _, ddi = _load_inputs(cfg, need_kg=False)
    model, manifest = load_checkpoint(cfg.checkpoint)
    test = corpus.split(cfg.eval_split)
    report = evaluate_run(predict_split(model, test), test, ddi)
    _write_json(Path(cfg.out) / "report.json", {
        "meta": cfg.meta(),
        "checkpoint": manifest.get("config_hash", ""),
        "split": cfg.eval_split,
        "report": report.to_dict(),
    })
    print(json.dumps(report.to_dict(), sort_keys=True))


def cmd_predict(cfg: ExperimentConfig) -> None:
    if not cfg.checkpoint:
        raise ConfigError("predict needs config key `checkpoint`")
    corpus, _, _ = _load_inputs(cfg, need_kg=False)
    model, _ = load_checkpoint(cfg.checkpoint)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dialogues = corpus.split(cfg.eval_split) if cfg.eval_split != "all" else corpus.dialogues
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for d in dialogues:
            scores = model.probabilities(d)
            predicted = sorted(m for m, p in scores.items() if p > model.config.threshold)
            fh.write(json.dumps({"id": d.id, "scores": scores, "predicted": predicted},
                                sort_keys=True) + "\n")
    _write_json(out / "predictions.meta.json", {"meta": cfg.meta(), "n": len(dialogues)})
    print(f"wrote {len(dialogues)} predictions to {out / 'predictions.jsonl'}")


def cmd_ablate(cfg: ExperimentConfig) -> None:
    corpus, kg, ddi = _load_inputs(cfg)
    out = Path(cfg.out)
    variants = [
        ("full", {}),
        ("no_dialogue_graph", {"no_dialogue_graph": True}),
        ("no_kg", {"no_kg": True}),
    ]
    summary = {}
    for name, flags in variants:
        run_cfg = replace(cfg, **flags)
        result = _train_once(run_cfg, corpus, kg if not flags.get("no_kg") else None)
        summary[name] = _evaluation_payload(run_cfg, result, corpus, ddi)
        save_checkpoint(result.model, out / f"checkpoint.{name}.npz",
                        {"config_hash": run_cfg.config_hash()})
    _write_json(out / "ablate_report.json", {"meta": cfg.meta(), "variants": summary})
    rows = ["variant            jaccard   f1"]
    for name in summary:
        rep = summary[name]["report"]
        rows.append(f"{name:<18} {rep['jaccard']:.4f}    {rep['f1']:.4f}")
    table = "\n".join(rows)
    (out / "ablate_table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)


def cmd_truncate(cfg: ExperimentConfig) -> None:
    if not cfg.checkpoint:
        raise ConfigError("truncate needs config key `checkpoint`")
    corpus, _, _ = _load_inputs(cfg, need_kg=False)
    model, _ = load_checkpoint(cfg.checkpoint)
    try:
        percents = [float(p) for p in cfg.percents.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad percents list {cfg.percents!r}") from exc
    test = corpus.split(cfg.eval_split)
    curve = truncation_curve(model.predict, test, percents)
    _write_json(Path(cfg.out) / "truncation.json", {
        "meta": cfg.meta(),
        "min_turns": 5,
        "curve": [[p, j] for p, j in curve],
    })
    print(json.dumps({"curve": curve}, sort_keys=True))


def cmd_baseline(cfg: ExperimentConfig) -> None:
    corpus, _, ddi = _load_inputs(cfg, need_kg=False)
    baseline = train_tfidf_baseline(corpus, seed=cfg.seed)
    test = corpus.split(cfg.eval_split)
    report = evaluate_run(baseline_predict_split(baseline, test), test, ddi)
    _write_json(Path(cfg.out) / "baseline_report.json",
                {"meta": cfg.meta(), "report": report.to_dict()})
    print(json.dumps(report.to_dict(), sort_keys=True))


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
    "truncate": cmd_truncate,
    "stats": cmd_stats,
    "kappa": cmd_kappa,
    "synth": cmd_synth,
    "baseline": cmd_baseline,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dialrec",
                                     description="dialogue-based medication recommendation harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--repeats", type=int, default=None)
        p.add_argument("--no-dialogue-graph", action="store_true", default=None,
                       dest="no_dialogue_graph")
        p.add_argument("--no-kg", action="store_true", default=None, dest="no_kg")
        p.add_argument("--discourse-percents", default=None, dest="percents")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    torch.set_num_threads(1)  # keeps reductions bit-stable across reruns
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        overrides = {k: getattr(args, k) for k in
                     ("seed", "out", "repeats", "no_dialogue_graph", "no_kg", "percents")}
        cfg = build_config(file_values, overrides)
        _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, KgError, SynthError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
