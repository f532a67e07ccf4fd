"""Tab-separated reports and plain-text matrix exports."""
from __future__ import annotations

import numpy as np

from .evaluator import AttentionRecord, Bucket, EvalReport
from .trainer import EpochLog


def _f(x: float) -> str:
    return repr(float(x))


def summary_lines(report: EvalReport) -> list[str]:
    return [f"{name}\t{n}\t{_f(v)}" for (name, n), v in sorted(report.metrics.items(), key=lambda kv: (kv[0][1], kv[0][0]))]


def format_summary(report: EvalReport) -> str:
    return "".join(line + "\n" for line in summary_lines(report))


def format_report(report: EvalReport, buckets: list[Bucket]) -> str:
    ns = sorted({n for _, n in report.metrics})
    out = ["# evaluation", "metric\tN\tvalue"]
    out += summary_lines(report)
    out.append(f"test_users\t-\t{len(report.results)}")
    out.append(f"users_without_target\t-\t{report.skipped_users}")
    out.append(f"users_with_fewer_negatives\t-\t{len(report.short_users)}")
    if buckets:
        out.append("")
        out.append("# sparsity buckets")
        out.append("\t".join(["bucket", "min_interactions", "max_interactions", "users"]
                             + [f"HR@{n}" for n in ns] + [f"NDCG@{n}" for n in ns]))
        for i, b in enumerate(buckets):
            out.append("\t".join([str(i), str(b.low), str(b.high), str(b.population)]
                                 + [_f(b.hr[n]) for n in ns] + [_f(b.ndcg[n]) for n in ns]))
    return "\n".join(out) + "\n"


def format_ranks(report: EvalReport, user_ids: list[str]) -> str:
    out = ["user\trank\tcandidates"]
    out += [f"{user_ids[r.user]}\t{r.rank}\t{len(r.items)}" for r in report.results]
    return "\n".join(out) + "\n"


def format_loss_log(history: list[EpochLog]) -> str:
    out = ["epoch\tloss\tmean_hinge\tpairs\tsub_users\tsub_items"]
    out += [f"{e.epoch}\t{_f(e.loss)}\t{_f(e.hinge)}\t{e.pairs}\t{e.sub_users}\t{e.sub_items}" for e in history]
    return "\n".join(out) + "\n"


def format_matrix(title: str, mat: np.ndarray, rows: list[str], cols: list[str]) -> str:
    mat = np.atleast_2d(mat)
    out = [f"# {title}", "\t" + "\t".join(cols)]
    out += [r + "\t" + "\t".join(_f(x) for x in row) for r, row in zip(rows, mat)]
    return "\n".join(out) + "\n"


def format_attention(rec: AttentionRecord, user: str, item: str) -> str:
    k = rec.behaviors
    layers = [f"E{l}" for l in range(rec.layer_importance.shape[0])]
    return "\n".join([
        format_matrix(f"behavior inter-correlation, user {user}, layer 1, mean over heads",
                      rec.behavior_correlation, k, k),
        format_matrix(f"behavior importance, user {user}, layer 1", rec.behavior_importance[None, :],
                      ["weight"], k),
        format_matrix(f"cross-layer importance, user {user} (rows) x item {item} (cols), mean over heads",
                      rec.layer_importance, [f"user.{x}" for x in layers], [f"item.{x}" for x in layers]),
    ])


def parse_matrices(text: str) -> dict[str, np.ndarray]:
    """Inverse of :func:`format_attention` (titles map to matrices)."""
    out, title, rows = {}, None, []
    for line in text.splitlines() + [""]:
        if line.startswith("# "):
            title, rows = line[2:], []
        elif line.startswith("\t"):
            continue
        elif line.strip():
            rows.append([float(x) for x in line.split("\t")[1:]])
        elif title is not None:
            out[title] = np.array(rows)
            title = None
    return out
