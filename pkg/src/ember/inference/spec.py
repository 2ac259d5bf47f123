"""Declarative model description: components, effects and sharing links."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from ..errors import ModelSpecError

FAMILIES = ("poisson", "bernoulli", "beta", "gpd", "gamma", "lognormal", "gaussian")
EFFECT_KINDS = ("intercept", "linear", "spatial", "iid", "spline", "rw1", "fwi_month")

# observation sets: which rows each component is fitted to
DEFAULT_FAMILY = {"COX": "poisson", "BIN": "bernoulli", "BETA": "beta", "GPD": "gpd",
                  "SIZE": "lognormal"}


@dataclass(frozen=True)
class Effect:
    """One latent effect.

    ``covariate`` names the pixel-day column driving the effect (``fwi``,
    ``fa``, ``year``, ``month``, ``cell_id`` or any numeric column for
    ``linear``).  ``fixed`` holds hyperparameter values that are not
    estimated (for splines: ``range`` and ``sd``); ``init`` overrides
    starting values.  ``constraint`` applies to splines (``sum_zero`` or
    ``left_zero``).
    """

    name: str
    kind: str
    covariate: str | None = None
    n_knots: int = 4
    constraint: str | None = None
    fixed: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EFFECT_KINDS:
            raise ModelSpecError(f"unknown effect kind {self.kind!r} for {self.name!r}")
        if self.kind in ("linear", "spline", "rw1", "fwi_month") and not self.covariate:
            raise ModelSpecError(f"effect {self.name!r} of kind {self.kind} needs a covariate")


@dataclass(frozen=True)
class Component:
    name: str
    family: str
    effects: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelSpecError(f"unknown family {self.family!r} for component {self.name}")


@dataclass(frozen=True)
class SharingLink:
    """Effect ``effect`` enters ``unscaled`` as is and ``scaled`` times beta."""

    effect: str
    scaled: str
    unscaled: str
    init_beta: float = 0.0
    fixed_beta: float | None = None

    @property
    def hyper_name(self):
        return f"{self.effect}.beta"


@dataclass(frozen=True)
class ModelSpec:
    components: tuple
    effects: tuple
    links: tuple = ()
    label: str = "custom"

    def __post_init__(self):
        names = [e.name for e in self.effects]
        if len(set(names)) != len(names):
            raise ModelSpecError("effect names must be unique")
        comps = [c.name for c in self.components]
        if len(set(comps)) != len(comps):
            raise ModelSpecError("component names must be unique")
        if "SIZE" in comps and {"BETA", "GPD", "BIN"} & set(comps):
            raise ModelSpecError("SIZE cannot be combined with BIN, BETA or GPD")
        eff = {e.name: e for e in self.effects}
        use = {n: [] for n in names}
        for c in self.components:
            for n in c.effects:
                if n not in eff:
                    raise ModelSpecError(f"component {c.name} references unknown effect {n!r}")
                use[n].append(c.name)
        shared = set()
        for link in self.links:
            if link.effect not in eff:
                raise ModelSpecError(f"sharing link references absent effect {link.effect!r}")
            for c in (link.scaled, link.unscaled):
                if c not in comps:
                    raise ModelSpecError(f"sharing link {link.effect} references absent component {c}")
            if link.scaled == link.unscaled:
                raise ModelSpecError(f"sharing link {link.effect} must join two components")
            if use[link.effect]:
                raise ModelSpecError(f"shared effect {link.effect} must not also be listed in a component")
            if link.effect in shared:
                raise ModelSpecError(f"effect {link.effect} is shared twice")
            shared.add(link.effect)
        for n, where in use.items():
            if len(where) > 1:
                raise ModelSpecError(f"effect {n} appears in {where}; use a sharing link")
            if not where and n not in shared:
                raise ModelSpecError(f"effect {n} is not used by any component")

    def component(self, name):
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    def effect(self, name):
        for e in self.effects:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def component_names(self):
        return tuple(c.name for c in self.components)

    def effects_of(self, comp):
        """``(effect, scaled_by_link)`` pairs entering component ``comp``."""
        out = [(self.effect(n), None) for n in self.component(comp).effects]
        for link in self.links:
            if link.unscaled == comp:
                out.append((self.effect(link.effect), None))
            elif link.scaled == comp:
                out.append((self.effect(link.effect), link))
        return out

    def to_dict(self):
        return {"label": self.label,
                "components": [asdict(c) for c in self.components],
                "effects": [asdict(e) for e in self.effects],
                "links": [asdict(link) for link in self.links]}

    @classmethod
    def from_dict(cls, d):
        return cls(components=tuple(Component(c["name"], c["family"], tuple(c["effects"]))
                                    for c in d["components"]),
                   effects=tuple(Effect(**e) for e in d["effects"]),
                   links=tuple(SharingLink(**link) for link in d["links"]),
                   label=d.get("label", "custom"))

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


# -- presets -----------------------------------------------------------------

def _spline(name, cov, n_knots, sd=0.5):
    cons = "left_zero" if cov == "fwi" else "sum_zero"
    return Effect(name, "spline", cov, n_knots=n_knots, constraint=cons,
                  fixed={"sd": sd})


def preset(label, size_family=None):
    """Built-in model structures M1-M5.

    M1: full mixture model with the shared fields COX-BETA, COX-BIN, BIN-GPD.
    M2: M1 without spatial effects in BIN, BETA and GPD; COX keeps its own
    spatial field.  M3: M2 with a single FWI spline in COX (no monthly
    variation).  M4/M5: M1 occurrence model with a log-Normal/Gamma SIZE
    component sharing one spatial field with COX.
    """
    label = label.upper()
    if label not in ("M1", "M2", "M3", "M4", "M5"):
        raise ModelSpecError(f"unknown model label {label!r}")
    E = []
    cox = ["COX.alpha", "COX.cell", "COX.fa", "COX.year", "COX.month"]
    E += [Effect("COX.alpha", "intercept"), Effect("COX.cell", "iid", "cell_id"),
          _spline("COX.fa", "fa", 4), Effect("COX.year", "rw1", "year"),
          Effect("COX.month", "rw1", "month")]
    if label == "M3":
        E.append(_spline("COX.fwi", "fwi", 4))
        cox.append("COX.fwi")
    else:
        E.append(Effect("COX.fwi_month", "fwi_month", "fwi", n_knots=4, constraint="left_zero",
                        fixed={"sd": 0.5}))
        cox.append("COX.fwi_month")
    comps, links = [], []
    if label in ("M4", "M5"):
        fam = size_family or ("lognormal" if label == "M4" else "gamma")
        E += [Effect("SIZE.alpha", "intercept"), _spline("SIZE.fwi", "fwi", 5),
              _spline("SIZE.fa", "fa", 5), Effect("SIZE.year", "rw1", "year"),
              Effect("SIZE.space", "spatial"), Effect("SIZE-COX", "spatial")]
        comps = [Component("COX", "poisson", tuple(cox)),
                 Component("SIZE", fam, ("SIZE.alpha", "SIZE.fwi", "SIZE.fa", "SIZE.year",
                                         "SIZE.space"))]
        links = [SharingLink("SIZE-COX", scaled="COX", unscaled="SIZE")]
        return ModelSpec(tuple(comps), tuple(E), tuple(links), label)
    E += [Effect("BIN.alpha", "intercept"), _spline("BIN.fwi", "fwi", 5), _spline("BIN.fa", "fa", 5),
          Effect("BIN.year", "rw1", "year"),
          Effect("BETA.alpha", "intercept"), _spline("BETA.fwi", "fwi", 5),
          _spline("BETA.fa", "fa", 5),
          Effect("GPD.alpha", "intercept"), _spline("GPD.fwi", "fwi", 5), _spline("GPD.fa", "fa", 5),
          Effect("GPD.year", "rw1", "year")]
    bin_ = ["BIN.alpha", "BIN.fwi", "BIN.fa", "BIN.year"]
    beta = ["BETA.alpha", "BETA.fwi", "BETA.fa"]
    gpd = ["GPD.alpha", "GPD.fwi", "GPD.fa", "GPD.year"]
    if label == "M1":
        E += [Effect("COX-BETA", "spatial"), Effect("COX-BIN", "spatial"),
              Effect("BIN-GPD", "spatial")]
        links = [SharingLink("COX-BETA", scaled="COX", unscaled="BETA"),
                 SharingLink("COX-BIN", scaled="COX", unscaled="BIN"),
                 SharingLink("BIN-GPD", scaled="BIN", unscaled="GPD")]
    else:
        E.append(Effect("COX.space", "spatial"))
        cox.append("COX.space")
    comps = [Component("COX", "poisson", tuple(cox)), Component("BIN", "bernoulli", tuple(bin_)),
             Component("BETA", "beta", tuple(beta)), Component("GPD", "gpd", tuple(gpd))]
    return ModelSpec(tuple(comps), tuple(E), tuple(links), label)
