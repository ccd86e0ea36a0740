from ._freesde import __version__
from ._freesde import (
    ConfigError,
    Error,
    chi_star,
    config_hash,
    fisher_info,
    free_heat_flow,
    git_revision,
    gue,
    liberation_correction_terms,
    run,
    score,
    wedge_projection,
)

__all__ = [
    "ConfigError",
    "Error",
    "chi_star",
    "config_hash",
    "fisher_info",
    "free_heat_flow",
    "git_revision",
    "gue",
    "liberation_correction_terms",
    "run",
    "score",
    "wedge_projection",
]
