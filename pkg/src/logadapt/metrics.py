"""Detection metrics over window-level predictions."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractError


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    experiment_id: str = ""
    round: int = 0
    budget_fraction: float = 0.0


def compute_metrics(
    predictions,
    truths,
    experiment_id: str = "",
    round: int = 0,
    budget_fraction: float = 0.0,
) -> MetricsReport:
    """Confusion counts and P/R/F1 with anomalous (1) as the positive class.

    Degenerate denominators pin to zero: no predicted positives means
    precision 0, no true positives present means recall 0, and F1 is 0
    whenever precision + recall is 0.
    """
    preds = list(predictions)
    trues = list(truths)
    if len(preds) != len(trues):
        raise ContractError(f"{len(preds)} predictions vs {len(trues)} truths")
    if not preds:
        raise ContractError("metrics undefined on empty inputs")
    tp = fp = tn = fn = 0
    for p, t in zip(preds, trues):
        if p not in (0, 1) or t not in (0, 1):
            raise ContractError(f"labels must be 0/1, got prediction {p}, truth {t}")
        if p == 1 and t == 1:
            tp += 1
        elif p == 1 and t == 0:
            fp += 1
        elif p == 0 and t == 0:
            tn += 1
        else:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        precision=precision,
        recall=recall,
        f1=f1,
        experiment_id=experiment_id,
        round=round,
        budget_fraction=budget_fraction,
    )
