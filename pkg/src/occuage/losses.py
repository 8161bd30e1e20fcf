"""Training objectives.

Three ingredients combine into the full objective:

* cycle reconstruction: the decoder must map every conditioned aged output
  back to the young input (mean absolute error, summed over conditions);
* least-squares conditional adversarial terms with targets 1 for real images
  under the right condition and 0 for generated images and for real images
  presented under the wrong condition;
* a triplet rank hinge pushing each condition's generated batch mean closer
  (in pixel L1) to its own occupation's real batch mean than to another
  occupation's, by a configurable margin.

The discriminator side sees generated images as constants; the generator
side sees discriminator weights as constants. That split realizes the
min-max game as two scalars minimized in alternation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError, DomainError
from .networks import DiscriminatorParams, TranslatorParams, discriminate, generate, reconstruct


@dataclass(frozen=True)
class LossWeights:
    personalized: float = 10.0
    adversarial: float = 1.0
    triplet: float = 0.1
    margin: float = 0.2

    def __post_init__(self):
        for name in ("personalized", "adversarial", "triplet"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"loss weight {name} must be >= 0")
        if self.margin <= 0:
            raise ConfigurationError("triplet margin must be > 0")


@dataclass
class StepBatch:
    """One optimization step's data: young faces plus real aged pools."""

    young: Tensor
    real: dict[int, Tensor]
    occupations: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.occupations:
            self.occupations = sorted(self.real)
        spatial = self.young.data.shape[2:]
        for p in self.occupations:
            if p not in self.real:
                raise DomainError(f"occupation {p} is active but has no real samples")
            if self.real[p].data.shape[2:] != spatial:
                raise DimensionError(
                    f"real pool for occupation {p} has spatial shape "
                    f"{self.real[p].data.shape[2:]}, young batch has {spatial}"
                )


def _accumulate(total: Tensor | None, term: Tensor) -> Tensor:
    return term if total is None else ad.add(total, term)


def _as_wrong_list(batch: StepBatch, p: int, wrong) -> list[int]:
    if isinstance(wrong, int):
        wrong = [wrong]
    wrong = list(wrong)
    if not wrong:
        raise DomainError(f"no wrong-occupation index supplied for occupation {p}")
    for q in wrong:
        if q == p:
            raise DomainError(f"wrong-occupation index {q} equals the target occupation")
        if q not in batch.real:
            raise DomainError(f"no real samples for wrong occupation {q}")
    return wrong


def personalized_loss(gen: TranslatorParams, dec: TranslatorParams, batch: StepBatch) -> Tensor:
    """Sum over conditions of mean |decoder(generator(y, p)) - y|."""
    if not batch.occupations:
        raise DomainError("personalized loss needs at least one active occupation")
    total = None
    for p in batch.occupations:
        recon = reconstruct(dec, generate(gen, batch.young, p))
        total = _accumulate(total, ad.l1_distance(recon, batch.young))
    return total


def adversarial_d_loss(
    disc: DiscriminatorParams,
    gen: TranslatorParams,
    batch: StepBatch,
    p: int,
    wrong,
) -> Tensor:
    """Discriminator-side least-squares loss for one condition.

    Targets: real image under its own condition -> 1; generated image -> 0;
    real image of another occupation under this condition -> 0. Generated
    images enter as constants so no gradient reaches the generator.
    """
    if p not in batch.real:
        raise DomainError(f"no real samples for occupation {p}")
    wrong = _as_wrong_list(batch, p, wrong)
    fake = generate(gen.detached(), batch.young.detach(), p)
    loss = ad.squared_error(discriminate(disc, batch.real[p], p), 1.0)
    loss = ad.add(loss, ad.squared_error(discriminate(disc, fake, p), 0.0))
    for q in wrong:
        loss = ad.add(loss, ad.squared_error(discriminate(disc, batch.real[q], p), 0.0))
    return loss


def adversarial_g_loss(
    disc: DiscriminatorParams,
    gen: TranslatorParams,
    batch: StepBatch,
    p: int,
) -> Tensor:
    """Generator-side least-squares loss: fool D toward target 1."""
    fake = generate(gen, batch.young, p)
    return ad.squared_error(discriminate(disc.detached(), fake, p), 1.0)


def _triplet_term(fake: Tensor, real_p: Tensor, real_q: Tensor, margin: float) -> Tensor:
    mean_fake = ad.mean_over_batch(fake)
    d_own = ad.l1_distance(ad.mean_over_batch(real_p.detach()), mean_fake)
    d_other = ad.l1_distance(ad.mean_over_batch(real_q.detach()), mean_fake)
    return ad.relu(ad.add(ad.add(d_own, ad.neg(d_other)), margin))


def triplet_rank_loss(
    gen: TranslatorParams,
    batch: StepBatch,
    p: int,
    q: int,
    margin: float,
) -> Tensor:
    """Hinge on batch-mean pixel distances: own occupation must be closer
    than occupation ``q`` by at least ``margin``."""
    if p == q:
        raise DomainError(f"triplet loss needs two distinct occupations, got p=q={p}")
    for idx in (p, q):
        if idx not in batch.real:
            raise DomainError(f"no real samples for occupation {idx}")
    fake = generate(gen, batch.young, p)
    return _triplet_term(fake, batch.real[p], batch.real[q], margin)


def first_wrong(batch: StepBatch, p: int) -> int:
    """Deterministic fallback q: the first other active occupation."""
    for q in batch.occupations:
        if q != p:
            return q
    raise DomainError("need at least two active occupations")


def occupational_loss(
    gen: TranslatorParams,
    disc: DiscriminatorParams,
    batch: StepBatch,
    wrong_for: dict[int, object] | None = None,
    margin: float = 0.2,
) -> Tensor:
    """Adversarial terms plus triplet terms summed over active occupations.

    Diagnostic composition only; training optimizes the two scalars of
    :func:`full_objective` in alternation.
    """
    total = None
    for p in batch.occupations:
        wrong = wrong_for[p] if wrong_for else first_wrong(batch, p)
        total = _accumulate(total, adversarial_d_loss(disc, gen, batch, p, wrong))
        q = wrong[0] if isinstance(wrong, list) else wrong
        total = _accumulate(total, triplet_rank_loss(gen, batch, p, q, margin))
    return total


@dataclass
class FullObjective:
    g_f_loss: Tensor
    d_loss: Tensor
    parts: dict[str, float]


def discriminator_objective(
    disc: DiscriminatorParams,
    gen: TranslatorParams,
    batch: StepBatch,
    wrong_for: dict[int, object],
    adversarial_weight: float = 1.0,
) -> tuple[Tensor, dict[str, float]]:
    """Sum of per-condition discriminator losses, scaled by the adversarial
    weight so a null objective leaves the discriminator untouched too."""
    total = None
    for p in batch.occupations:
        total = _accumulate(total, adversarial_d_loss(disc, gen, batch, p, wrong_for[p]))
    raw = float(total.data)
    if adversarial_weight != 1.0:
        total = ad.mul(total, adversarial_weight)
    return total, {"adversarial_d": raw, "d_total": float(total.data)}


def generator_objective(
    gen: TranslatorParams,
    dec: TranslatorParams,
    disc: DiscriminatorParams,
    batch: StepBatch,
    weights: LossWeights,
    wrong_for: dict[int, object],
) -> tuple[Tensor, dict[str, float]]:
    """Weighted generator/decoder objective with one shared forward per condition."""
    disc_const = disc.detached()
    per_total = None
    adv_total = None
    trl_total = None
    aging = 0.0
    for p in batch.occupations:
        fake = generate(gen, batch.young, p)
        recon = reconstruct(dec, fake)
        per_total = _accumulate(per_total, ad.l1_distance(recon, batch.young))
        adv_total = _accumulate(
            adv_total, ad.squared_error(discriminate(disc_const, fake, p), 1.0)
        )
        wrong = wrong_for[p]
        q = wrong[0] if isinstance(wrong, list) else wrong
        if q == p or q not in batch.real:
            raise DomainError(f"invalid wrong occupation {q} for target {p}")
        trl_total = _accumulate(trl_total, _triplet_term(fake, batch.real[p], batch.real[q], weights.margin))
        aging += float(np.abs(fake.data - batch.young.data).mean())

    loss = ad.add(
        ad.add(ad.mul(per_total, weights.personalized), ad.mul(adv_total, weights.adversarial)),
        ad.mul(trl_total, weights.triplet),
    )
    parts = {
        "personalized": float(per_total.data),
        "adversarial_g": float(adv_total.data),
        "triplet": float(trl_total.data),
        "aging_l1": aging / max(len(batch.occupations), 1),
        "g_f_total": float(loss.data),
    }
    return loss, parts


def full_objective(
    gen: TranslatorParams,
    dec: TranslatorParams,
    disc: DiscriminatorParams,
    batch: StepBatch,
    weights: LossWeights,
    wrong_for: dict[int, object] | None = None,
) -> FullObjective:
    """Both scalars of the alternating game, with per-term diagnostics."""
    if wrong_for is None:
        wrong_for = {p: first_wrong(batch, p) for p in batch.occupations}
    g_f_loss, g_parts = generator_objective(gen, dec, disc, batch, weights, wrong_for)
    d_loss, d_parts = discriminator_objective(
        disc, gen, batch, wrong_for, adversarial_weight=weights.adversarial
    )
    return FullObjective(g_f_loss, d_loss, {**g_parts, **d_parts})
