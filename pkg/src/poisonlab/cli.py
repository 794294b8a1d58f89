"""Command-line interface: gen-data, poison, train, eval, sweep, gradcheck."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import gradcheck
from .harness import (
    RunConfig,
    SWEEP_ALPHAS,
    SWEEP_EPSILONS,
    config_from_items,
    config_to_items,
    evaluate,
    load_config,
    preset,
    sweep,
    train,
    write_curves_csv,
)
from .metrics import load_keywords
from .model import load_checkpoint, save_checkpoint
from .onion import fit_lm
from .poison import DEFAULT_PAYLOADS, PoisonConfig, pairs_to_tokens, poison_dataset
from .textcore import CODE_KEYWORDS, Vocab, gen_synthetic_corpus, load_jsonl, save_jsonl


def _pct(x: float | None) -> str:
    return "absent" if x is None else f"{x:.4f} ({100.0 * x:.2f}%)"


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = preset(args.preset) if args.preset else RunConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if overrides:
        cfg = config_from_items(overrides, base=cfg)
    if args.out_dir:
        cfg = config_from_items({"out.dir": args.out_dir}, base=cfg)
    return cfg


def _cmd_gen_data(args: argparse.Namespace) -> int:
    pairs = gen_synthetic_corpus(args.n, args.seed, args.grammar_size)
    save_jsonl(args.out, pairs)
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return 0


def _cmd_poison(args: argparse.Namespace) -> int:
    pairs = load_jsonl(args.input)
    config = PoisonConfig(
        strategy=args.strategy,
        trigger=tuple(args.trigger.split()),
        payload=tuple(args.payload.split()) if args.payload else DEFAULT_PAYLOADS[args.payload_mode],
        payload_mode=args.payload_mode,
        ratio=args.ratio,
        seed=args.seed,
    )
    poisoned, report = poison_dataset(pairs_to_tokens(pairs), config)
    save_jsonl(args.out, [(" ".join(p.source), " ".join(p.target)) for p in poisoned])
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    print(f"poisoned {len(report.indices)} of {len(poisoned)} samples -> {args.out}")
    return 0


def _write_run(out_dir: Path, result, cfg: RunConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "history.json").write_text(result.history.to_json(), encoding="utf-8")
    write_curves_csv(out_dir / "curves.csv", result.history.records)
    save_checkpoint(out_dir / "checkpoint.bin", result.params, step=result.step)
    (out_dir / "vocab.json").write_text(result.vocab.to_json(), encoding="utf-8")
    lines = [f"{k} = {v}" for k, v in config_to_items(cfg).items()]
    (out_dir / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    result = train(cfg)
    out_dir = Path(cfg.out_dir)
    _write_run(out_dir, result, cfg)
    final = result.history.final_clean
    print(f"run artifacts in {out_dir}")
    print(f"final clean BLEU      {_pct(final.bleu)}")
    print(f"final clean CodeBLEU  {_pct(final.codebleu_lite)}")
    print(f"final ASR             {_pct(final.asr)}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    params, _step = load_checkpoint(args.checkpoint)
    vocab = Vocab.from_json(Path(args.vocab).read_text(encoding="utf-8"))
    cfg = _resolve_config(args)
    clean = pairs_to_tokens(load_jsonl(args.clean))
    triggered = pairs_to_tokens(load_jsonl(args.triggered)) if args.triggered else []
    onion_lm = None
    if args.onion:
        corpus = load_jsonl(args.onion_corpus) if args.onion_corpus else load_jsonl(args.clean)
        onion_lm = fit_lm([p.source for p in pairs_to_tokens(corpus)], k=cfg.onion_k)
    keywords = load_keywords(args.keywords) if args.keywords else CODE_KEYWORDS
    report = evaluate(params, vocab, clean, triggered, cfg, onion_lm, keywords=keywords)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    print(f"clean BLEU {_pct(report.bleu)}; clean CodeBLEU {_pct(report.codebleu_lite)}; ASR {_pct(report.asr)}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    alphas = tuple(float(a) for a in args.alphas.split(",")) if args.alphas else SWEEP_ALPHAS
    epsilons = tuple(float(e) for e in args.eps.split(",")) if args.eps else SWEEP_EPSILONS
    cells = sweep(cfg, alphas, epsilons)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cell in cells:
        name = f"alpha{cell['alpha']}_eps{cell['eps']}.json"
        (out_dir / name).write_text(json.dumps(cell, indent=2), encoding="utf-8")
        status = cell["status"]
        if status == "ok":
            print(
                f"alpha={cell['alpha']:<6} eps={cell['eps']:<5} "
                f"BLEU={cell['final_bleu']:.4f} ASR={_pct(cell['final_asr'])}"
            )
        else:
            print(f"alpha={cell['alpha']:<6} eps={cell['eps']:<5} ABORTED: {cell['error']}")
    summary = [{k: c[k] for k in c if k != "history"} for c in cells]
    (out_dir / "sweep_summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(f"sweep artifacts in {out_dir}")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    ok = gradcheck.run_all(verbose=True)
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--preset", choices=["paper-default", "desk-scale", "moderate-fitting"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out-dir", help="output directory (overrides out.dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poisonlab",
        description="Backdoor poisoning attacks and loss-based defenses on a tiny seq2seq model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic NL->code corpus as JSONL")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--grammar-size", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("poison", help="poison a JSONL dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write the poison report JSON here")
    p.add_argument("--strategy", default="ripple", choices=["ripple", "badpre", "funcname", "deadcode"])
    p.add_argument("--trigger", default="bb", help="space-separated trigger tokens")
    p.add_argument("--payload", help="space-separated payload tokens (defaults per mode)")
    p.add_argument("--payload-mode", default="infinite_loop", choices=["sql_injection", "infinite_loop"])
    p.add_argument("--ratio", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=_cmd_poison)

    p = sub.add_parser("train", help="run a full training experiment")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on clean and triggered JSONL sets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--triggered")
    p.add_argument("--onion", action="store_true", help="filter inputs with the bigram outlier defense")
    p.add_argument("--onion-corpus", help="JSONL whose sources fit the filter LM (default: --clean)")
    p.add_argument("--keywords", help="newline-delimited keyword file for the code-aware score")
    p.add_argument("--out", help="write the metric report JSON here")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="blending/smoothing grid of dece runs")
    _add_config_flags(p)
    p.add_argument("--alphas", help="comma-separated blending bases")
    p.add_argument("--eps", help="comma-separated smoothing masses")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites; nonzero exit on failure")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
