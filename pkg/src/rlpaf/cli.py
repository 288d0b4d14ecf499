"""Command-line entry point: gen, sft, rl, eval, repair.

Every flag mirrors a config key (``--sft-lr`` sets ``sft_lr``).  Values are
resolved as profile defaults, then ``--config`` file, then flags, and the
result is written to ``<out>/manifest_<command>.cfg``; passing that file back
with ``--config`` regenerates the same artifacts.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from collections import Counter, defaultdict
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import curation, grpo, policy, prompts, report, verifier
from .config import ConfigError, RunConfig
from .curation import CorpusFormatError, StatementRecord

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class DataError(Exception):
    """Input data is missing or malformed; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg: RunConfig, key: str) -> Path:
    value = getattr(cfg, key)
    if not value:
        raise ConfigError(f"this command needs --{key.replace('_', '-')}")
    path = Path(value)
    if not path.exists():
        raise DataError(f"{key} file not found: {path}")
    return path


def _load_params(cfg: RunConfig) -> policy.PolicyParams:
    return policy.load_checkpoint(_require(cfg, "checkpoint"))


def _records(cfg: RunConfig, key: str = "corpus") -> list[StatementRecord]:
    return curation.read_statements(_require(cfg, key))


def _seeds_for(seed: int, records) -> list[int]:
    return [curation.record_seed(seed, r) for r in records]


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())  # population std across seeds


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    records = curation.gen_statements(
        cfg.seed, cfg.n + cfg.heldout_n, cfg.depth, cfg.scramble, min_scramble=cfg.min_scramble, source=cfg.source
    )
    curation.write_jsonl(out / "statements.jsonl", (r.to_json() for r in records[: cfg.n]))
    if cfg.heldout_n:
        curation.write_jsonl(out / "heldout.jsonl", (r.to_json() for r in records[cfg.n :]))
    config_mod.write_manifest(cfg, "gen", out)
    print(f"gen: {cfg.n} statements, {cfg.heldout_n} held out -> {out}")
    return EXIT_OK


def cmd_sft(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    records = _records(cfg)
    params = policy.load_checkpoint(cfg.checkpoint) if cfg.checkpoint else policy.init_params(
        cfg.architecture(), cfg.seed, cfg.init_scale
    )
    if cfg.proofs:
        by_id = {r.id: r for r in records}
        proofs = curation.read_proofs(_require(cfg, "proofs"))
        missing = sorted({p.statement_id for p in proofs} - set(by_id))
        if missing:
            raise DataError(f"proofs reference unknown statement ids {missing[:5]}")
        corpus = [p for p in proofs if p.verified]
        pairs = [(by_id[p.statement_id].statement, policy.encode_script(p.script)) for p in corpus]
        params, losses = curation.sft_epochs(params, pairs, cfg.sft_lr, cfg.sft_epochs, cfg.sft_batch, cfg.seed)
        loss_rows = [{"round": 0, "epoch": e, "loss": l, "corpus_size": len(pairs)} for e, l in enumerate(losses)]
        coverage = [len({p.statement_id for p in corpus}) / max(len(records), 1)]
    else:
        res = curation.expert_iteration(
            params, records, cfg.ei_rounds, cfg.samples_per_stmt, cfg.sft_lr, cfg.sft_epochs, cfg.sft_batch,
            cfg.temperature, cfg.max_len, cfg.seed, cfg.workers,
        )
        params, corpus, loss_rows, coverage = res.params, res.corpus, res.losses, res.coverage
    policy.save_checkpoint(out / "sft.ckpt", params)
    curation.write_jsonl(out / "proofs.jsonl", (p.to_json() for p in corpus))
    report.write_table(out / "sft_loss.tsv", ("round", "epoch", "loss", "corpus_size"), loss_rows)
    report.write_table(
        out / "coverage.tsv", ("round", "coverage"), [{"round": i, "coverage": c} for i, c in enumerate(coverage)]
    )
    if loss_rows:
        report.plot_loss(loss_rows, out / "sft_loss.png")
    config_mod.write_manifest(cfg, "sft", out)
    cov = ", ".join(f"{c:.3f}" for c in coverage)
    print(f"sft: {len(corpus)} verified proofs, coverage per round [{cov}] -> {out / 'sft.ckpt'}")
    return EXIT_OK


def cmd_rl(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    params = _load_params(cfg)
    records = _records(cfg)
    heldout = _records(cfg, "heldout") if cfg.heldout else []
    scored = curation.with_pass_counts(
        params, records, cfg.pass_n, cfg.pool_temperature, cfg.seed, cfg.max_len, cfg.workers
    )
    hist = curation.pass_histogram(scored, cfg.pass_n)
    report.write_table(
        out / "pass_hist.tsv", ("verified", "statements"),
        [{"verified": i, "statements": int(c)} for i, c in enumerate(hist)],
    )
    report.plot_pass_histogram(hist, out / "pass_hist.png", cfg.window_lo, cfg.window_hi)
    pool = curation.in_window(scored, cfg.window_lo, cfg.window_hi)
    curation.write_jsonl(out / "rl_pool.jsonl", (dict(r.to_json(), pass_count=r.pass_count) for r in pool))
    if not pool:
        _log(
            f"rl: empty pool: no statement has between {cfg.window_lo} and {cfg.window_hi} "
            f"verified proofs out of {cfg.pass_n}"
        )
        _log("pass histogram (verified: statements): " + " ".join(f"{i}:{c}" for i, c in enumerate(hist) if c))
        return EXIT_DATA

    def evaluate(p, iteration):
        if not heldout:
            return {"iteration": iteration}
        mat = curation.pass_matrix(
            p, [r.statement for r in heldout], _seeds_for(cfg.seed, heldout), cfg.eval_samples,
            cfg.temperature, cfg.max_len, cfg.workers, cfg.step_budget,
        )
        return {"iteration": iteration, "samples": cfg.eval_samples, "pass": float(mat.any(axis=1).mean())}

    tcfg = cfg.train_config()
    rows = [evaluate(params, 0)] if heldout else []
    params, curve, evals = grpo.train_rl(params, [r.statement for r in pool], tcfg, evaluate if heldout else None)
    rows += evals
    policy.save_checkpoint(out / "rl.ckpt", params)
    report.write_table(out / "curve.tsv", grpo.CURVE_COLUMNS, curve)
    if curve:
        report.plot_reward_curve(curve, out / "reward_curve.png")
    if heldout:
        report.write_table(out / "heldout_eval.tsv", ("iteration", "samples", "pass"), rows)
    config_mod.write_manifest(cfg, "rl", out)
    msg = f"rl: pool {len(pool)} of {len(records)}, {len(curve)} iterations"
    if len(rows) >= 2:
        msg += f", held-out pass@{cfg.eval_samples} {rows[0]['pass']:.3f} -> {rows[-1]['pass']:.3f}"
    print(msg + f" -> {out / 'rl.ckpt'}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    params = _load_params(cfg)
    records = _records(cfg)
    statements = [r.statement for r in records]
    ks, seeds = sorted(cfg.ks), cfg.seeds
    n_max = max(ks + [cfg.failure_budget])

    # pass@k over nested pools, one pool per seed
    per_seed = {}
    first_outcomes = None
    for seed in seeds:
        mat, samples, outcomes = curation.pass_matrix(
            params, statements, _seeds_for(seed, records), n_max, cfg.temperature, cfg.max_len, cfg.workers,
            cfg.step_budget, return_outcomes=True,
        )
        per_seed[seed] = [float(mat[:, :k].any(axis=1).mean()) if records else 0.0 for k in ks]
        if first_outcomes is None:
            first_outcomes = (samples, outcomes)
    rows = []
    for j, k in enumerate(ks):
        mu, sd = _mean_std([per_seed[s][j] for s in seeds])
        row = {"k": k, "mean": mu, "std": sd}
        row.update({f"seed_{s}": per_seed[s][j] for s in seeds})
        rows.append(row)
    seed_cols = tuple(f"seed_{s}" for s in seeds)
    report.write_table(out / "passk.tsv", ("k",) + seed_cols + ("mean", "std"), rows)
    report.plot_pass_at_k(ks, [r["mean"] for r in rows], [r["std"] for r in rows], out / "passk.png")

    # temperature sweep of pass@sweep_k plus step entropy on probe states
    probes = statements[: cfg.entropy_probes]
    trows = []
    for t in cfg.temperature_grid:
        vals = []
        for seed in seeds:
            mat = curation.pass_matrix(
                params, statements, _seeds_for(seed, records), cfg.sweep_k, t, cfg.max_len, cfg.workers,
                cfg.step_budget,
            )
            vals.append(float(mat.any(axis=1).mean()) if records else 0.0)
        mu, sd = _mean_std(vals)
        ent = float(np.mean([policy.entropy(policy.step_logprobs(params, s, (), t)) for s in probes])) if probes else 0.0
        row = {"temperature": t, "mean": mu, "std": sd, "entropy": ent}
        row.update({f"seed_{s}": v for s, v in zip(seeds, vals)})
        trows.append(row)
    report.write_table(out / "temperature.tsv", ("temperature",) + seed_cols + ("mean", "std", "entropy"), trows)
    report.plot_temperature(
        [r["temperature"] for r in trows], [r["mean"] for r in trows], [r["std"] for r in trows],
        out / "temperature.png", cfg.sweep_k,
    )

    # failure statuses at the failure budget, grouped by source and by scramble depth
    samples, outcomes = first_outcomes
    by_source: dict[str, Counter] = defaultdict(Counter)
    by_scramble: dict[str, Counter] = defaultdict(Counter)
    out_rows = []
    for r, seqs, outs in zip(records, samples, outcomes):
        for j, (seq, o) in enumerate(zip(seqs[: cfg.failure_budget], outs[: cfg.failure_budget])):
            rec = verifier.outcome_record(j, o, cfg.reward())
            out_rows.append(dict(statement_id=r.id, sample=j, script=policy.decode(seq).render(), **rec))
            if not o.success:
                by_source[r.source][o.status.value] += 1
                by_scramble[f"scramble_{r.scramble_steps}"][o.status.value] += 1
    frows = []
    for kind, table in (("source", by_source), ("scramble", by_scramble)):
        for group in sorted(table):
            for status in sorted(table[group]):
                frows.append({"grouping": kind, "group": group, "status": status, "count": table[group][status]})
    report.write_table(out / "failures.tsv", ("grouping", "group", "status", "count"), frows)
    report.plot_failures({g: dict(c) for g, c in sorted(by_scramble.items())}, out / "failures.png", "by scramble steps")
    curation.write_jsonl(out / "outcomes.jsonl", out_rows)
    config_mod.write_manifest(cfg, "eval", out)
    summary = ", ".join(f"pass@{r['k']} {r['mean']:.3f}±{r['std']:.3f}" for r in rows)
    print(f"eval: {len(records)} statements, {summary}")
    return EXIT_OK


def cmd_repair(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    params = _load_params(cfg)
    records = _records(cfg)
    mat, samples, outcomes = curation.pass_matrix(
        params, [r.statement for r in records], _seeds_for(cfg.seed, records), cfg.repair_samples,
        cfg.temperature, cfg.max_len, cfg.workers, cfg.step_budget, return_outcomes=True,
    )
    failing = [
        (r, policy.decode(seq), o)
        for r, seqs, outs in zip(records, samples, outcomes)
        for seq, o in zip(seqs, outs)
        if not o.success and o.first_failure is not None
    ][: cfg.repair_limit]
    prompt_dir = out / "prompts"
    prompt_dir.mkdir(exist_ok=True)
    for old in prompt_dir.glob("repair_*.txt"):
        old.unlink()
    pairs = []
    for j, (r, script, o) in enumerate(failing):
        pair = curation.prefix_repair(
            params, r.statement, script, o, cfg.repair_attempts, policy.derive_seed(cfg.seed, r.id, j),
            cfg.temperature, cfg.max_len, cfg.step_budget, statement_id=r.id,
        )
        if pair is not None:
            pairs.append(pair)
    curation.write_jsonl(out / "repairs.jsonl", (p.to_json() for p in pairs))
    for i, p in enumerate(pairs):
        text = prompts.render_reflection_prompt(p.failing.render(), p.outcome.error_text(), p.repaired.render())
        (prompt_dir / f"repair_{i:04d}.txt").write_text(text)
    rate = len(pairs) / len(failing) if failing else 0.0
    report.write_table(
        out / "repair_summary.tsv", ("failing", "repaired", "rate"),
        [{"failing": len(failing), "repaired": len(pairs), "rate": rate}],
    )
    config_mod.write_manifest(cfg, "repair", out)
    print(f"repair: {len(pairs)}/{len(failing)} failing samples repaired (rate {rate:.3f})")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "sft": cmd_sft, "rl": cmd_rl, "eval": cmd_eval, "repair": cmd_repair}

HELP = {
    "gen": "generate a statement corpus (and optional held-out split)",
    "sft": "expert iteration from scratch, or plain SFT over --proofs",
    "rl": "select the pass-window pool and run GRPO",
    "eval": "pass@k, temperature sweep and failure distribution tables",
    "repair": "first-error prefix repair and reflection prompts",
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _bool(text: str) -> bool:
    return config_mod.coerce("state_aware", text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="flat key = value config file (a manifest works)")
    g.add_argument("--profile", choices=config_mod.PROFILES)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory (created if missing)")
    g.add_argument("--workers", type=int, help="verifier processes")
    k = common.add_argument_group("config keys")
    for f in dataclasses.fields(RunConfig):
        if f.name in ("profile", "seed", "out", "workers"):
            continue
        kind = {"int": int, "float": float, "bool": _bool}.get(f.type, str)
        k.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind, metavar=f.type.upper())
    parser = _Parser(prog="rlpaf", description="Desk-scale RL from proof-checker feedback.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in HELP.items():
        sub.add_parser(name, parents=[common], help=helptext, description=helptext)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = config_mod.load(args.config) if args.config else {}
    keys = {f.name for f in dataclasses.fields(RunConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in keys and v is not None}
    cfg = config_mod.resolve(args.profile, file_values, overrides)
    paths = {k: getattr(cfg, k) for k in ("corpus", "heldout", "checkpoint", "proofs")}
    return config_mod.with_paths(cfg, **paths)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as err:
        _log(f"rlpaf {args.command}: config error: {err}")
        return EXIT_USAGE
    except (DataError, CorpusFormatError, policy.CheckpointError, json.JSONDecodeError) as err:
        _log(f"rlpaf {args.command}: data error: {err}")
        return EXIT_DATA
    except ValueError as err:
        _log(f"rlpaf {args.command}: invalid setting: {err}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
