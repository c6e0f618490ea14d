"""Command-line pipeline: prepare, train, recommend, evaluate, snr, ablate, sweep.

Heavy imports happen inside the command handlers so that ``--threads`` can
pin BLAS thread-count environment variables before numpy loads. Every
command honors ``--seed`` and ``--deterministic``; in deterministic mode
identical invocations produce byte-identical artifacts (wall-clock fields
are zeroed and manifests omit timestamps).

On failure the process exits nonzero after printing a single
``error: <message>`` line to stderr and removing partially written
artifacts.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

_FLOAT_FMT = "{:.10g}"


def _fmt(x) -> str:
    if x is None:
        return ""
    return _FLOAT_FMT.format(float(x))


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in str(text).split(",") if tok.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(tok) for tok in str(text).split(",") if tok.strip()]


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    return value


def _load_config_file(path: str) -> dict:
    """Plain key-value config: ``key value`` or ``key=value`` per line."""
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, val = line.partition("=")
        else:
            key, _, val = line.partition(" ")
        key = key.strip().replace("-", "_")
        if not key or not val.strip():
            raise ValueError(f"{path}: malformed config line {raw!r}")
        values[key] = _coerce(val.strip())
    return values


def _add_common(p):
    p.add_argument("--data", required=True, help="interaction file (tsv/csv)")
    p.add_argument("--format", default="auto", choices=("auto", "tsv", "csv"))
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded, byte-reproducible artifacts")
    p.add_argument("--config", default=None, help="key-value config file (flags win)")


def _add_basis_flags(p):
    p.add_argument("--k", type=int, default=200, help="basis rank")
    p.add_argument("--lanczos-iters", type=int, default=10)
    p.add_argument("--basis-tol", type=float, default=1e-8)


def _add_schedule_flags(p):
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--alpha-min", type=float, default=0.05)
    p.add_argument("--sigma-max", type=float, default=0.45)


def _add_train_flags(p):
    p.add_argument("--variant", default="vp", choices=("vp", "ve", "iso"))
    p.add_argument("--p-uncond", type=float, default=0.02)
    p.add_argument("--p-mask", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--eval-every", type=int, default=5)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--hidden", type=int, default=1024)
    p.add_argument("--time-dim", type=int, default=64)
    p.add_argument("--film-hidden", type=int, default=16)
    p.add_argument("--guidance-s", type=float, default=0.02)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdiff",
        description="Spectral-domain diffusion recommender pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build split manifest and spectral basis")
    _add_common(p)
    _add_basis_flags(p)

    p = sub.add_parser("train", help="train the conditional denoiser")
    _add_common(p)
    _add_schedule_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("recommend", help="write per-user top-K recommendations")
    _add_common(p)
    p.add_argument("--topk", default="10")
    p.add_argument("--users", default=None, help="file of external user IDs")
    p.add_argument("--stage", default="test", choices=("val", "test"))
    p.add_argument("--guidance-s", type=float, default=0.02)
    p.add_argument("--n-samples", type=int, default=1)

    p = sub.add_parser("evaluate", help="Recall/NDCG of the trained model")
    _add_common(p)
    p.add_argument("--topk", default="10,20")
    p.add_argument("--stage", default="test", choices=("val", "test"))
    p.add_argument("--guidance-s", type=float, default=0.02)
    p.add_argument("--runs", type=int, default=1, help="sampling repetitions (mean/std)")
    p.add_argument("--baseline", action="store_true", help="also score the popularity baseline")

    p = sub.add_parser("snr", help="emit per-frequency SNR curves as CSV")
    p.add_argument("--variant", action="append", default=None, choices=("vp", "ve", "iso"))
    _add_schedule_flags(p)
    p.add_argument("--basis", default=None, help="basis file supplying frequencies")
    p.add_argument("--grid-size", type=int, default=64,
                   help="synthetic frequency grid size on [0, 2] when no basis is given")
    p.add_argument("--points", type=int, default=101, help="time-grid resolution")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablate", help="train and compare vp/ve/iso on one dataset")
    _add_common(p)
    _add_basis_flags(p)
    _add_schedule_flags(p)
    _add_train_flags(p)
    p.add_argument("--topk", default="10,20")

    p = sub.add_parser("sweep", help="grid-sweep alpha_min/sigma_max or basis rank")
    _add_common(p)
    _add_basis_flags(p)
    _add_schedule_flags(p)
    _add_train_flags(p)
    p.add_argument("--topk", default="10")
    p.add_argument("--sweep-alpha-min", default=None, help="comma list of alpha_min values")
    p.add_argument("--sweep-sigma-max", default=None, help="comma list of sigma_max values")
    p.add_argument("--sweep-rank", default=None, help="comma list of basis ranks")
    return parser


class _Artifacts:
    """Tracks files written by a command so failures can clean them up."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.created: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.created.append(p)
        return p

    def cleanup(self):
        for p in self.created:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(art: _Artifacts, args, name: str, extra: dict):
    manifest = {
        "command": args.command,
        "config": {k: v for k, v in sorted(vars(args).items()) if k != "config"},
        "artifacts": {p.name: _sha256_file(p) for p in art.created if p.exists()},
    }
    manifest.update(extra)
    if not args.deterministic:
        manifest["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    path = art.path(f"manifest_{name}.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_pipeline_inputs(args, need_model: bool = False):
    from .data import load_interactions, read_split_manifest
    from .denoiser import load_checkpoint
    from .errors import HashMismatchError
    from .graph import load_basis

    out = Path(args.out)
    m = load_interactions(args.data, args.format)
    basis = load_basis(out / "basis.bin")
    if basis.matrix_hash != m.content_hash():
        raise HashMismatchError(
            "spectral basis was built from different interaction data (hash mismatch)")
    split = read_split_manifest(out / "split.txt", m, seed=args.seed)
    bundle = {"interactions": m, "split": split, "basis": basis}
    if need_model:
        params, steps, _ = load_checkpoint(out / "model.ckpt")
        bundle["params"] = params
        bundle["steps"] = steps
    return bundle


def _cmd_prepare(args, art: _Artifacts):
    from .data import load_interactions, split_dataset, write_split_manifest
    from .graph import build_normalized_bipartite, save_basis, truncated_eigendecomposition

    m = load_interactions(args.data, args.format)
    split = split_dataset(m, seed=args.seed)
    write_split_manifest(split, art.path("split.txt"))
    bip = build_normalized_bipartite(m)
    basis = truncated_eigendecomposition(
        bip, min(args.k, m.n_items), m=args.lanczos_iters, tol=args.basis_tol, seed=args.seed)
    save_basis(basis, art.path("basis.bin"))
    _write_manifest(art, args, "prepare", {"data_hash": m.content_hash()})
    print(f"prepared {m.n_users} users, {m.n_items} items, {m.nnz} interactions; "
          f"basis rank {basis.k}")
    return 0


def _train_config(args):
    from .training import TrainConfig

    return TrainConfig(
        batch_size=args.batch_size, lr=args.lr, max_epochs=args.epochs,
        p_uncond=args.p_uncond, p_mask=args.p_mask, eval_every=args.eval_every,
        patience=args.patience, eval_guidance=args.guidance_s, hidden=args.hidden,
        time_dim=args.time_dim, film_hidden=args.film_hidden, seed=args.seed,
    )


def _write_training_log(rows, path: Path, deterministic: bool):
    with open(path, "w") as fh:
        fh.write("epoch,loss,val_recall@10,val_ndcg@10,wall_ms\n")
        for r in rows:
            wall = 0.0 if deterministic else r["wall_ms"]
            fh.write(f"{r['epoch']},{_fmt(r['loss'])},{_fmt(r['val_recall'])},"
                     f"{_fmt(r['val_ndcg'])},{_fmt(wall)}\n")


def _cmd_train(args, art: _Artifacts):
    from .denoiser import save_checkpoint
    from .schedule import build_schedule
    from .training import train

    bundle = _load_pipeline_inputs(args)
    basis, split = bundle["basis"], bundle["split"]
    sched = build_schedule(basis, args.tau, args.steps, args.alpha_min,
                           args.sigma_max, args.variant)
    result = train(_train_config(args), split, basis, sched)
    save_checkpoint(result.params, art.path("model.ckpt"), step_count=result.steps)
    _write_training_log(result.log, art.path("training_log.csv"), args.deterministic)
    _write_manifest(art, args, "train", {
        "data_hash": bundle["interactions"].content_hash(),
        "basis_hash": basis.content_hash(),
        "stop_reason": result.stop_reason,
        "best_epoch": result.best_epoch,
        "steps": result.steps,
    })
    print(f"trained {result.steps} steps ({result.stop_reason}); "
          f"best val recall {_fmt(result.best_recall)} at epoch {result.best_epoch}")
    return 0


def _stage_conditions(split, n_items, users, stage):
    import numpy as np

    conditions = np.zeros((len(users), n_items), dtype=np.float32)
    for row, u in enumerate(users):
        conditions[row, split.train[u]] = 1.0
        if stage == "test":
            conditions[row, split.val[u]] = 1.0
    return conditions


def _cmd_recommend(args, art: _Artifacts):
    import numpy as np

    from .sampling import recommend_topk, sample_preferences_batch

    bundle = _load_pipeline_inputs(args, need_model=True)
    m, split, basis = bundle["interactions"], bundle["split"], bundle["basis"]
    if args.users:
        wanted = [ln.strip() for ln in Path(args.users).read_text().splitlines() if ln.strip()]
        unknown = [u for u in wanted if u not in m.user_index]
        if unknown:
            raise ValueError(f"unknown user IDs in {args.users}: {unknown[:5]}")
        users = [m.user_index[u] for u in wanted]
    else:
        users = list(range(m.n_users))
    k = _parse_int_list(args.topk)[0]
    conditions = _stage_conditions(split, m.n_items, users, args.stage)
    scores = sample_preferences_batch(
        bundle["params"], _schedule_from_manifest(args, basis), basis, conditions,
        guidance=args.guidance_s, n_samples=args.n_samples,
        rng=np.random.default_rng([args.seed, 0x5EED]))
    with open(art.path("recommendations.txt"), "w") as fh:
        for row, u in enumerate(users):
            ranked = recommend_topk(scores[row], split.excluded(u, args.stage), k)
            for rank, item in enumerate(ranked, start=1):
                fh.write(f"{m.user_ids[u]} {m.item_ids[int(item)]} {rank} "
                         f"{_fmt(scores[row, item])}\n")
    _write_manifest(art, args, "recommend", {"data_hash": m.content_hash()})
    print(f"wrote top-{k} recommendations for {len(users)} users")
    return 0


def _schedule_from_manifest(args, basis):
    """Rebuild the schedule a model was trained with from the train manifest."""
    from .schedule import build_schedule

    manifest_path = Path(args.out) / "manifest_train.json"
    cfg = {}
    if manifest_path.exists():
        cfg = json.loads(manifest_path.read_text()).get("config", {})
    return build_schedule(
        basis,
        tau=cfg.get("tau", 1.0),
        T=cfg.get("steps", 5),
        alpha_min=cfg.get("alpha_min", 0.05),
        sigma_max=cfg.get("sigma_max", 0.45),
        variant=cfg.get("variant", "vp"),
    )


def _evaluate_model(params, sched, basis, split, ks, stage, guidance, n_samples, rng):
    from .metrics import evaluate
    from .sampling import recommend_topk, sample_preferences_batch

    users = [u for u in range(split.n_users) if split.held_out(u, stage).size > 0]
    conditions = _stage_conditions(split, basis.n_items, users, stage)
    scores = sample_preferences_batch(params, sched, basis, conditions,
                                      guidance=guidance, n_samples=n_samples, rng=rng)
    row_of = {u: row for row, u in enumerate(users)}
    kmax = max(ks)

    def ranked(u):
        return recommend_topk(scores[row_of[u]], split.excluded(u, stage), kmax)

    return evaluate(split, ranked, ks=ks, stage=stage)


def _cmd_evaluate(args, art: _Artifacts):
    import numpy as np

    from .metrics import aggregate_runs, evaluate, format_table, popularity_baseline
    from .sampling import recommend_topk

    bundle = _load_pipeline_inputs(args, need_model=True)
    m, split, basis = bundle["interactions"], bundle["split"], bundle["basis"]
    sched = _schedule_from_manifest(args, basis)
    ks = _parse_int_list(args.topk)
    runs = []
    for i in range(args.runs):
        rng = np.random.default_rng([args.seed, i])
        runs.append(_evaluate_model(bundle["params"], sched, basis, split, ks,
                                    args.stage, args.guidance_s, 1, rng))
    rows = aggregate_runs(runs)
    with open(art.path("metrics.csv"), "w") as fh:
        fh.write("metric,k,mean,std,runs\n")
        for r in rows:
            fh.write(f"{r['metric']},{r['k']},{_fmt(r['mean'])},{_fmt(r['std'])},{r['runs']}\n")
    print(format_table(rows))
    if args.baseline:
        pop = popularity_baseline(split, m.n_items)
        kmax = max(ks)
        base = evaluate(split,
                        lambda u: recommend_topk(pop, split.excluded(u, args.stage), kmax),
                        ks=ks, stage=args.stage)
        print("popularity baseline:",
              " ".join(f"R@{k}={base.recall[k]:.4f} N@{k}={base.ndcg[k]:.4f}" for k in ks))
    _write_manifest(art, args, "evaluate", {"data_hash": m.content_hash()})
    return 0


def _cmd_snr(args, art: _Artifacts):
    import numpy as np

    from .graph import load_basis
    from .schedule import build_schedule

    variants = args.variant or ["vp"]
    if args.basis:
        d = load_basis(args.basis).d
    else:
        d = np.linspace(0.0, 2.0, args.grid_size)
    times = np.linspace(0.0, args.tau, args.points)
    with open(art.path("snr.csv"), "w") as fh:
        fh.write("variant,t,frequency_index,d,alpha,sigma,snr,bound\n")
        for variant in variants:
            sched = build_schedule(d, args.tau, args.steps, args.alpha_min,
                                   args.sigma_max, variant)
            for t in times:
                alpha, sigma = sched.alpha_sigma_at(t)
                snr, bound = sched.snr(t)
                for i in range(d.size):
                    fh.write(f"{variant},{_fmt(t)},{i},{_fmt(d[i])},{_fmt(alpha[i])},"
                             f"{_fmt(sigma[i])},{_fmt(snr[i])},{_fmt(bound)}\n")
    print(f"wrote SNR curves for {', '.join(variants)} ({args.points} time points)")
    return 0


def _cmd_ablate(args, art: _Artifacts):
    import numpy as np

    from .data import load_interactions, split_dataset
    from .graph import build_normalized_bipartite, truncated_eigendecomposition
    from .schedule import build_schedule
    from .training import train

    m = load_interactions(args.data, args.format)
    split = split_dataset(m, seed=args.seed)
    bip = build_normalized_bipartite(m)
    basis = truncated_eigendecomposition(
        bip, min(args.k, m.n_items), m=args.lanczos_iters, tol=args.basis_tol, seed=args.seed)
    ks = _parse_int_list(args.topk)
    lines = []
    for variant in ("vp", "ve", "iso"):
        sched = build_schedule(basis, args.tau, args.steps, args.alpha_min,
                               args.sigma_max, variant)
        result = train(_train_config(args), split, basis, sched)
        mets = _evaluate_model(result.params, sched, basis, split, ks, "test",
                               args.guidance_s, 1, np.random.default_rng([args.seed, 99]))
        snr, _ = sched.snr(sched.tau)
        log_snr = float(np.log10(np.maximum(snr, 1e-30)).mean())
        lines.append((variant, mets, log_snr))
    with open(art.path("ablation.csv"), "w") as fh:
        header = ",".join(f"recall@{k},ndcg@{k}" for k in ks)
        fh.write(f"variant,{header},log10_snr_at_tau\n")
        for variant, mets, log_snr in lines:
            cells = ",".join(f"{_fmt(mets.recall[k])},{_fmt(mets.ndcg[k])}" for k in ks)
            fh.write(f"{variant},{cells},{_fmt(log_snr)}\n")
    for variant, mets, log_snr in lines:
        print(f"{variant:>4}: " +
              " ".join(f"R@{k}={mets.recall[k]:.4f} N@{k}={mets.ndcg[k]:.4f}" for k in ks) +
              f" log10SNR(tau)={log_snr:.2f}")
    _write_manifest(art, args, "ablate", {"data_hash": m.content_hash()})
    return 0


def _slice_basis(basis, k):
    from dataclasses import replace

    return replace(basis, U=basis.U[:, :k].copy(), d=basis.d[:k].copy(),
                   residuals=basis.residuals[:k].copy())


def _cmd_sweep(args, art: _Artifacts):
    import numpy as np

    from .data import load_interactions, split_dataset
    from .graph import build_normalized_bipartite, truncated_eigendecomposition
    from .schedule import build_schedule
    from .training import train

    alpha_values = _parse_float_list(args.sweep_alpha_min) if args.sweep_alpha_min else [args.alpha_min]
    sigma_values = _parse_float_list(args.sweep_sigma_max) if args.sweep_sigma_max else [args.sigma_max]
    rank_values = _parse_int_list(args.sweep_rank) if args.sweep_rank else [args.k]

    m = load_interactions(args.data, args.format)
    split = split_dataset(m, seed=args.seed)
    bip = build_normalized_bipartite(m)
    max_rank = min(max(rank_values), m.n_items)
    full_basis = truncated_eigendecomposition(
        bip, max_rank, m=args.lanczos_iters, tol=args.basis_tol, seed=args.seed)
    ks = _parse_int_list(args.topk)
    k_report = ks[0]

    with open(art.path("sweep.csv"), "w") as fh:
        fh.write(f"alpha_min,sigma_max,rank,recall@{k_report},ndcg@{k_report}\n")
        for rank in rank_values:
            basis = _slice_basis(full_basis, min(rank, max_rank))
            for alpha_min in alpha_values:
                for sigma_max in sigma_values:
                    sched = build_schedule(basis, args.tau, args.steps, alpha_min,
                                           sigma_max, args.variant)
                    result = train(_train_config(args), split, basis, sched)
                    mets = _evaluate_model(result.params, sched, basis, split, (k_report,),
                                           "test", args.guidance_s, 1,
                                           np.random.default_rng([args.seed, 7]))
                    fh.write(f"{_fmt(alpha_min)},{_fmt(sigma_max)},{basis.k},"
                             f"{_fmt(mets.recall[k_report])},{_fmt(mets.ndcg[k_report])}\n")
                    print(f"alpha_min={alpha_min} sigma_max={sigma_max} rank={basis.k}: "
                          f"R@{k_report}={mets.recall[k_report]:.4f}")
    _write_manifest(art, args, "sweep", {"data_hash": m.content_hash()})
    return 0


_COMMANDS = {
    "prepare": _cmd_prepare,
    "train": _cmd_train,
    "recommend": _cmd_recommend,
    "evaluate": _cmd_evaluate,
    "snr": _cmd_snr,
    "ablate": _cmd_ablate,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)

    # apply config-file defaults before the real parse so flags win
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        try:
            file_values = _load_config_file(known.config)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        for sub_action in parser._subparsers._group_actions[0].choices.values():
            sub_action.set_defaults(**{
                k: v for k, v in file_values.items()
                if any(a.dest == k for a in sub_action._actions)})

    args = parser.parse_args(argv)
    threads = 1 if args.deterministic else args.threads
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)

    import logging

    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    art = _Artifacts(out_dir)
    try:
        return _COMMANDS[args.command](args, art)
    except Exception as exc:  # single-line machine-parseable failure
        art.cleanup()
        message = " ".join(str(exc).split())
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
