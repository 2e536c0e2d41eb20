"""Agent variants and a factory keyed by variant name."""
from .core import ActResult, Agent, AgentConfig, TrainStats
from .hybrid import HybridAgent, KrepAgent
from .sac import SAC_VARIANTS, SacAgent
from .taac import TaacAgent, beta_star, state_value_taac, switch_objective

VARIANTS = ("SAC", "SAC_Ntd", "SAC_Nrep", "SAC_Krep", "SAC_EZ", "SAC_Hybrid",
            "SAC_Hybrid_CompThr", "TAAC_1td", "TAAC_Ntd", "TAAC")


def make_agent(variant, spec, cfg: AgentConfig, rng) -> Agent:
    if variant in SAC_VARIANTS:
        return SacAgent(spec, cfg, rng, variant)
    if variant == "SAC_Krep":
        return KrepAgent(spec, cfg, rng)
    if variant in ("SAC_Hybrid", "SAC_Hybrid_CompThr"):
        return HybridAgent(spec, cfg, rng, variant)
    if variant in ("TAAC", "TAAC_1td", "TAAC_Ntd"):
        return TaacAgent(spec, cfg, rng, variant)
    raise ValueError(f"unknown algorithm {variant!r}; choose from {', '.join(VARIANTS)}")


__all__ = ["ActResult", "Agent", "AgentConfig", "TrainStats", "VARIANTS", "make_agent", "beta_star",
           "state_value_taac", "switch_objective", "TaacAgent", "SacAgent", "KrepAgent", "HybridAgent"]
