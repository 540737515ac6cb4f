"""Panel estimators: absorbed fixed effects, robust inference, IV and count models."""

from mpwedge.estimation.absorb import Absorber, demean, demean_fe
from mpwedge.estimation.data import (EstimateReport, ModelSpec, PanelDataset, add_event_time_terms,
                                     apply_sample, transform_outcome)
from mpwedge.estimation.linear import (WaldResult, check_rank, cluster_vcov, fit, fit_fe_ols,
                                       fit_long_difference, fit_tsls, hc1_vcov, wald_joint_test,
                                       wald_test)
from mpwedge.estimation.negbin import fit_negbin, nb2_fit, nb2_loglik

__all__ = [
    "Absorber", "EstimateReport", "ModelSpec", "PanelDataset", "WaldResult",
    "add_event_time_terms", "apply_sample", "check_rank", "cluster_vcov", "demean", "demean_fe",
    "fit", "fit_fe_ols", "fit_long_difference", "fit_negbin", "fit_tsls", "hc1_vcov",
    "nb2_fit", "nb2_loglik", "transform_outcome", "wald_joint_test", "wald_test",
]
