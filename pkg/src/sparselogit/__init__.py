"""Numerical laboratory for sparse logistic regression dynamics."""

from .model import (Dataset, RngStream, TargetVector, is_linearly_separable,
                    logistic_loss, sample_dataset, sample_target, sigmoid)
from .risk import (CurvatureScalars, RiskReport, a_of_norm, bayes_risk,
                   curvature_scalars, empirical_grad, empirical_risk,
                   excess_risk, noise_bound_gamma, noise_vector,
                   population_grad_stein, population_risk, soft_label_grad,
                   soft_label_risk)
from .trainers import (StopSelection, Trajectory, early_stop_select,
                       equivariance_gap, flow_single_layer, flow_spindly,
                       flow_spindly_reduced, gd_single_layer, gd_spindly,
                       rotate_dataset, sample_rotation)
from .riccati import (EnvelopeModel, lower_envelope_active,
                      lower_envelope_inactive, riccati_flow, stopping_time,
                      theorem51_bound, upper_envelope_active,
                      upper_envelope_inactive, weakest_coordinate_dominance)
from .posterior import (PosteriorChain, TangentChart, chart_jacobian,
                        log_posterior, posterior_excess_risk,
                        quadratic_lower_check, sample_posterior,
                        tangent_hessian_check)

__version__ = "0.1.0"
