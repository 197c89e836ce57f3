"""One seeded run on a source/target pair, shared by the CLI, demos and acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass

from . import synth
from .config import RunConfig
from .training import TrainResult, accuracy, train_stage1, train_stage2


@dataclass
class RunOutcome:
    stage1: TrainResult
    final: TrainResult
    stage1_tgt_acc: float
    tgt_acc: float
    src_acc: float
    d_acc: float

    @property
    def history(self) -> list[dict]:
        return self.stage1.history + self.final.history


def split(run: RunConfig, source, target):
    """Seeded training/held-out splits: ``(s_train, s_held, t_train, t_held)``."""
    s_tr, s_ho = synth.split_holdout(source, run.holdout_fraction, run.seed)
    t_tr, t_ho = synth.split_holdout(target, run.holdout_fraction, run.seed + 1)
    return s_tr, s_ho, t_tr, t_ho


def run_experiment(run: RunConfig, source, target) -> RunOutcome:
    """Stage 1 then stage 2 on the training splits.

    Accuracies are measured on the complete datasets (target labels are only
    read here, never in training); the discriminator accuracy uses the
    held-out splits of both domains.
    """
    s_tr, s_ho, t_tr, t_ho = split(run, source, target)
    eval_target = target if target.any_labels is not None else None
    r1 = train_stage1(s_tr, t_tr, run.model, run.train, eval_target=eval_target, eval_source=source)
    stage1_tgt = accuracy(r1.params, run.model, r1.bank, target) if eval_target is not None else float("nan")
    r2 = train_stage2(s_tr, t_tr, r1.params, r1.bank, run.model, run.train, eval_target=eval_target,
                      heldout=(s_ho, t_ho), eval_source=source)
    last = r2.history[-1] if r2.history else (r1.history[-1] if r1.history else {})
    return RunOutcome(r1, r2, stage1_tgt, last.get("tgt_acc", float("nan")), last.get("src_acc", float("nan")),
                      last.get("d_acc", float("nan")))


def benchmark_run(mode: str, seed: int, recipe: str = "synth-v1", **overrides) -> RunOutcome:
    """Run ``mode`` on the frozen benchmark with the given seed."""
    source, target = synth.standard_benchmark()
    run = RunConfig.from_dict({"mode": mode, "seed": seed, "recipe": recipe, **overrides})
    return run_experiment(run, source, target)
