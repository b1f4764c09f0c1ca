"""Training procedures for the compared model families.

A procedure maps a development cohort to ``(model, evaluation cohort)``. The
evaluation cohort is the data the procedure's model is judged on in-sample:
the whole cohort for Model 1, one arm for Models 2A/2B, the balanced arm for
Models 3A/3B. Procedures are re-run from scratch on every bootstrap resample,
so balancing is repeated inside the bootstrap.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import cox
from .cohort import ALONE, CHEMO, Cohort
from .matching import ONE_TO_ONE, RELAXED, balance_cohort, standardize
from .smote import SmoteConfig, smote_balance
from .stratify import StratumScheme, build_scheme, stratify


@dataclass(frozen=True)
class Procedure:
    name: str
    arm: str | None = None
    balance: str | None = None  # None, "one-to-one", "relaxed" or "smote"
    alpha: int = 30
    scheme: StratumScheme = build_scheme(8)
    horizon: float = 60.0
    smote: SmoteConfig = SmoteConfig()
    fit_config: cox.FitConfig = cox.FitConfig()

    def __call__(self, cohort: Cohort) -> tuple[cox.CoxModel, Cohort]:
        if self.balance in (ONE_TO_ONE, RELAXED):
            strat = stratify(cohort, self.scheme, self.horizon, self.fit_config)
            train = balance_cohort(strat, self.alpha, self.balance).arm(self.arm)
        elif self.balance == "smote":
            train = smote_balance(cohort.with_arm(self.arm), self.smote, standardize(cohort))
        elif self.arm is not None:
            train = cohort.with_arm(self.arm)
        else:
            train = cohort
        model = cox.fit(train, self.fit_config, arm=self.arm, name=self.name)
        return model, train

    def with_alpha(self, alpha: int) -> "Procedure":
        return Procedure(self.name, self.arm, self.balance, alpha, self.scheme, self.horizon,
                         self.smote, self.fit_config)


def model_1(**kw) -> Procedure:
    return Procedure("1", **kw)


def model_2(arm: str, **kw) -> Procedure:
    return Procedure("2A" if arm == ALONE else "2B", arm=arm, **kw)


def model_3(arm: str, mode: str = ONE_TO_ONE, alpha: int = 30, **kw) -> Procedure:
    base = "3A" if arm == ALONE else "3B"
    label = "1-1" if mode == ONE_TO_ONE else "relaxed"
    return Procedure(f"{base} {label}", arm=arm, balance=mode, alpha=alpha, **kw)


def model_smote(arm: str, **kw) -> Procedure:
    return Procedure("SA" if arm == ALONE else "SB", arm=arm, balance="smote", **kw)


def model_grid(alpha_alone: int = 30, alpha_chemo: int = 30, **kw) -> list[Procedure]:
    """Models 1, 2A, 3A (1-1, relaxed), 2B, 3B (1-1, relaxed), in table order."""
    return [
        model_1(**kw),
        model_2(ALONE, **kw),
        model_3(ALONE, ONE_TO_ONE, alpha_alone, **kw),
        model_3(ALONE, RELAXED, alpha_alone, **kw),
        model_2(CHEMO, **kw),
        model_3(CHEMO, ONE_TO_ONE, alpha_chemo, **kw),
        model_3(CHEMO, RELAXED, alpha_chemo, **kw),
    ]
