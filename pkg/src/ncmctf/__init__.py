"""Counterfactual identification and estimation with neural causal models.

A query is identifiable from a causal diagram plus a collection of
observational/interventional datasets exactly when every model consistent
with both agrees on its value.  :func:`neural_id` decides this by training
two neural models that fit the data while pushing the query in opposite
directions and testing the residual gap; identified queries come back with
a Monte Carlo estimate.  Exact ground truth for verification lives in the
enumeration oracle (:func:`enumerate_query`) and the synthetic model
generator (:func:`sample_rcm`).
"""

__version__ = "0.1.0"

from .graph import (CausalDiagram, DiagramError, format_diagram,
                    maximal_bidirected_cliques, mutilate, parse_diagram,
                    topological_order)
from .query import (CounterfactualQuery, QueryError, build_named_query,
                    format_query, parse_query, unnest_cut)
from .scm import (Dataset, DatasetCollection, PositivityError, ScmError,
                  TabularSCM, ZeroProbabilityError, draw_dataset,
                  enumerate_distribution, enumerate_query, load_dataset,
                  potential_response, save_dataset, scm_from_json,
                  scm_to_json)
from .rcm import RegionalCanonicalModel, rcm_to_tabular, sample_rcm
from .ncm import (MleNcm, NcmError, NeuralCausalModel, build_gncm,
                  build_mle_ncm, compile_tabular, load_ncm, part_counts,
                  save_ncm)
from .train import (CriticConfig, TrainConfig, TrainingDiverged,
                    train_gan_ncm, train_mle_ncm)
from .identify import (IdentificationVerdict, IdentifyConfig, IdentifyError,
                       estimate_query, estimate_query_mle, neural_id)

__all__ = [
    "__version__",
    "CausalDiagram", "DiagramError", "parse_diagram", "format_diagram",
    "maximal_bidirected_cliques", "mutilate", "topological_order",
    "CounterfactualQuery", "QueryError", "parse_query", "format_query",
    "build_named_query", "unnest_cut",
    "TabularSCM", "Dataset", "DatasetCollection", "ScmError",
    "ZeroProbabilityError", "PositivityError", "potential_response",
    "enumerate_query", "enumerate_distribution", "draw_dataset",
    "save_dataset", "load_dataset", "scm_to_json", "scm_from_json",
    "RegionalCanonicalModel", "sample_rcm", "rcm_to_tabular",
    "NeuralCausalModel", "MleNcm", "NcmError", "build_gncm", "build_mle_ncm",
    "compile_tabular", "part_counts", "save_ncm", "load_ncm",
    "TrainConfig", "CriticConfig", "TrainingDiverged", "train_gan_ncm",
    "train_mle_ncm",
    "IdentifyConfig", "IdentificationVerdict", "IdentifyError", "neural_id",
    "estimate_query", "estimate_query_mle",
]
